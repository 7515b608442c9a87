//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fails.
//!
//! Run with `cargo test --release -p scsa-harness --test acceptance`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use common::{array, jitter, pcsa_params, random, rng, smsa_params};
use scsa_core::io::Checkpoint;
use scsa_core::{
    ablation_registry, flop_estimate, ops, preset, ConvSharing, Ordering, ParamStore, Pcsa, PcsaConfig, Scsa,
    ScsaConfig, Smsa, SmsaConfig, Tape, Tensor,
};
use scsa_harness::suite::{check_names, differentiable_ops, MODULE_SHAPE, SCSA_TOL};
use scsa_harness::*;
use scsa_oracle as oracle;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradient_correctness() -> Check {
    let names = check_names();
    for k in differentiable_ops() {
        ensure(names.contains(&format!("op/{k}")), || format!("no check for op {k}"))?;
    }
    let start = Instant::now();
    let report = run_gradcheck_suite(&SuiteOptions::default());
    let secs = start.elapsed().as_secs_f64();
    for module in ["smsa/default", "pcsa/default", "scsa/baseline"] {
        ensure(report.checks.iter().any(|c| c.name == module), || format!("{module} missing"))?;
    }
    let failed: Vec<String> = report.failures().iter().map(|c| format!("{} ({:.2e})", c.name, c.max_rel_error)).collect();
    ensure(failed.is_empty(), || format!("failing: {}", failed.join(", ")))?;
    ensure(secs < 60.0, || format!("suite took {secs:.1}s"))?;
    let worst = report.checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(format!("{} checks, worst relative error {worst:.2e}, {secs:.1}s", report.checks.len()))
}

fn fixed_points() -> Check {
    let a = 1.3;
    let x = Tensor::full(&MODULE_SHAPE, a).unwrap();

    let mut store = ParamStore::new();
    let m = Smsa::new(&mut store, "smsa", MODULE_SHAPE[1], &SmsaConfig::default(), &mut rng(0)).unwrap();
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let y = m.forward(&mut tape, &store, xv).unwrap();
    let smsa_dev = tape.value(y).max_abs_diff(&x.scale(0.25)).unwrap();

    let mut store = ParamStore::new();
    let p = Pcsa::new(&mut store, "pcsa", MODULE_SHAPE[1], &PcsaConfig::default()).unwrap();
    store.set_value(p.value_weight(), Tensor::zeros(&[MODULE_SHAPE[1]]).unwrap()).unwrap();
    let mut tape = Tape::new();
    let xv = tape.leaf(x);
    let t = p.trace(&mut tape, &store, xv).unwrap();
    let gate_dev = tape.value(t.gate).data().iter().map(|g| (g - 0.5).abs()).fold(0.0, f64::max);

    let detail = format!("smsa max|y - 0.25x| = {smsa_dev:.2e}, pcsa max|gate - 0.5| = {gate_dev:.2e}");
    ensure(gate_dev < 1e-10, || detail.clone())?;
    // zero padding feeds zeros into the border taps, so the pooled sequences
    // stop being constant after the convolution and GN no longer maps them
    // to zero
    ensure(smsa_dev < 1e-10, || format!("{detail} (zero-padded borders break the constant-sequence premise)"))?;
    Ok(detail)
}

const SHAPES: [[usize; 4]; 3] = [[2, 8, 6, 5], [1, 4, 9, 7], [3, 12, 5, 11]];

fn oracle_equivalence() -> Check {
    let mut worst: f64 = 0.0;
    for (i, shape) in SHAPES.iter().enumerate() {
        let seed = i as u64;
        let c = shape[1];
        let x = random(shape, 50 + seed);

        let mut store = ParamStore::new();
        let cfg = SmsaConfig::default();
        let m = Smsa::new(&mut store, "smsa", c, &cfg, &mut rng(seed)).unwrap();
        jitter(&mut store, 60 + seed);
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let y = m.forward(&mut tape, &store, xv).unwrap();
        let (want, _, _) = oracle::smsa(&array(&x), &smsa_params(&store, "smsa", &cfg));
        worst = worst.max(want.max_abs_diff(tape.value(y).data()));

        let mut store = ParamStore::new();
        let cfg = PcsaConfig::default();
        let m = Pcsa::new(&mut store, "pcsa", c, &cfg).unwrap();
        jitter(&mut store, 70 + seed);
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let y = m.forward(&mut tape, &store, xv).unwrap();
        let (want, _) = oracle::pcsa(&array(&x), &pcsa_params(&store, "pcsa", &cfg));
        worst = worst.max(want.max_abs_diff(tape.value(y).data()));

        let mut store = ParamStore::new();
        let cfg = ScsaConfig::default();
        let m = Scsa::new(&mut store, "scsa", c, &cfg, &mut rng(seed)).unwrap();
        jitter(&mut store, 80 + seed);
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let y = m.forward(&mut tape, &store, xv).unwrap();
        let sp = smsa_params(&store, "scsa.smsa", &cfg.smsa);
        let cp = pcsa_params(&store, "scsa.pcsa", &cfg.pcsa);
        let want = oracle::scsa(&array(&x), Some(&sp), Some(&cp), false);
        worst = worst.max(want.max_abs_diff(tape.value(y).data()));
    }
    ensure(worst < 1e-10, || format!("max deviation {worst:.2e}"))?;
    Ok(format!("smsa, pcsa, scsa on {} shapes, max deviation {worst:.2e}", SHAPES.len()))
}

fn structural_invariants() -> Check {
    for seed in 0..20 {
        let x = random(&[3, 4, 9], seed).scale(20.0);
        let s = ops::softmax_lastdim(&x).unwrap();
        for row in s.data().chunks(9) {
            let sum: f64 = row.iter().sum();
            ensure((sum - 1.0).abs() < 1e-12 && row.iter().all(|v| (0.0..=1.0).contains(v)), || {
                format!("softmax row sums to {sum}")
            })?;
        }
        let g = ops::sigmoid(&x);
        ensure(g.data().iter().all(|&v| v > 0.0 && v < 1.0), || "sigmoid left (0, 1)".into())?;

        let y = random(&[2, 12, 5], 100 + seed);
        let parts = ops::channel_split(&y, 4).unwrap();
        let refs: Vec<&Tensor> = parts.iter().collect();
        ensure(ops::concat_channels(&refs).unwrap() == y, || "split/concat is not the identity".into())?;
        for groups in [2, 3, 4, 6] {
            let sh = ops::channel_shuffle(&y, groups).unwrap();
            ensure(ops::channel_unshuffle(&sh, groups).unwrap() == y, || format!("shuffle by {groups} not undone"))?;
        }
    }

    let (groups, per, l) = (4, 3, 6);
    let c = groups * per;
    let x = random(&[2, c, l], 7);
    let (gamma, beta) = (Tensor::ones(&[c]).unwrap(), Tensor::zeros(&[c]).unwrap());
    let (y0, _) = ops::group_norm(&x, groups, &gamma, &beta, 1e-5).unwrap();
    let mut x1 = x.clone();
    for i in 0..per * l {
        x1.data_mut()[i] += 3.0 * (i % 4) as f64;
    }
    let (y1, _) = ops::group_norm(&x1, groups, &gamma, &beta, 1e-5).unwrap();
    let leak = (per * l..2 * c * l).map(|i| (y0.data()[i] - y1.data()[i]).abs()).fold(0.0, f64::max);
    ensure(leak < 1e-12, || format!("GN leaked {leak:.2e} across groups"))?;

    let tie = shared_kernel_tying();
    ensure(tie < 1e-10, || format!("shared-kernel gradient differs from branch sum by {tie:.2e}"))?;
    Ok(format!("GN leak {leak:.1e}, kernel tying {tie:.1e}"))
}

/// Max gap between the shared-kernel gradient and the sum of the two
/// unshared branch gradients when both start from the same kernels.
fn shared_kernel_tying() -> f64 {
    let shape = [2, 8, 7, 6];
    let (x, u) = (random(&shape, 1), random(&shape, 2));
    let unshared = SmsaConfig { conv_sharing: ConvSharing::Unshared, ..SmsaConfig::default() };
    let mut s_store = ParamStore::new();
    let s = Smsa::new(&mut s_store, "m", 8, &SmsaConfig::default(), &mut rng(5)).unwrap();
    let mut u_store = ParamStore::new();
    let un = Smsa::new(&mut u_store, "m", 8, &unshared, &mut rng(6)).unwrap();
    for i in 0..4 {
        let w = s_store.by_name(&format!("m.conv.{i}.weight")).unwrap().value.clone();
        for conv in ["conv", "conv_w"] {
            let id = u_store.id(&format!("m.{conv}.{i}.weight")).unwrap();
            u_store.set_value(id, w.clone()).unwrap();
        }
    }
    for (store, m) in [(&mut s_store, &s), (&mut u_store, &un)] {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let y = m.forward(&mut tape, store, xv).unwrap();
        let g = tape.backward(y, u.clone()).unwrap();
        store.zero_grads();
        g.accumulate_into(&tape, store);
    }
    let grad = |st: &ParamStore, n: &str| st.by_name(n).unwrap().grad.clone();
    (0..4)
        .map(|i| {
            let sum = grad(&u_store, &format!("m.conv.{i}.weight")).add(&grad(&u_store, &format!("m.conv_w.{i}.weight"))).unwrap();
            grad(&s_store, &format!("m.conv.{i}.weight")).max_abs_diff(&sum).unwrap()
        })
        .fold(0.0, f64::max)
}

fn ablation_surface() -> Check {
    let presets = ablation_registry();
    ensure(presets.len() == 13, || format!("{} presets", presets.len()))?;
    let mut worst: f64 = 0.0;
    for p in &presets {
        p.config.validate(Some(MODULE_SHAPE[1])).map_err(|e| format!("{}: {e}", p.name))?;
        let r = check_scsa_config(p.name, &p.config, 0, SCSA_TOL).map_err(|e| format!("{}: {e}", p.name))?;
        ensure(r.passed(), || format!("{}: gradcheck {:.2e}", p.name, r.max_rel_error))?;
        worst = worst.max(r.max_rel_error);
    }

    let x = random(&MODULE_SHAPE, 11);
    let run = |ordering: Ordering| {
        let cfg = ScsaConfig { ordering, ..ScsaConfig::default() };
        let mut store = ParamStore::new();
        let m = Scsa::new(&mut store, "scsa", MODULE_SHAPE[1], &cfg, &mut rng(3)).unwrap();
        jitter(&mut store, 4);
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let y = m.forward(&mut tape, &store, xv).unwrap();
        tape.value(y).clone()
    };
    let gap = run(Ordering::SmsaFirst).max_abs_diff(&run(Ordering::PcsaFirst)).unwrap();
    ensure(gap > 1e-6, || format!("orderings agree to {gap:.2e}"))?;
    Ok(format!("13 presets, worst gradcheck {worst:.2e}, ordering gap {gap:.2e}"))
}

fn complexity_model() -> Check {
    let (base, wo) = (preset("baseline").unwrap(), preset("wo-pcsa").unwrap());
    let flops = |hw: usize| flop_estimate(16, hw, hw, &base).total as f64;
    let model = flops(112) / flops(56);
    ensure((3.5..=4.0).contains(&model), || format!("FLOP ratio 56->112 = {model:.3}"))?;
    for hw in [28, 56, 112] {
        ensure(flop_estimate(16, hw, hw, &wo).total < flop_estimate(16, hw, hw, &base).total, || {
            format!("wo-pcsa not cheaper at {hw}")
        })?;
    }

    let points = sweep_points("baseline", &parse_sweep("C=16;HW=28,56,112").unwrap());
    let rows = bench(&points, &BenchOptions::default()).map_err(|e| e.to_string())?;
    let t: Vec<f64> = rows.iter().map(|r| r.median_ms).collect();
    let wall = [t[1] / t[0], t[2] / t[1]];
    ensure(wall.iter().all(|r| (2.5..=6.0).contains(r)), || format!("wall-clock ratios {:.2} and {:.2}", wall[0], wall[1]))?;
    Ok(format!(
        "FLOP ratio 56->112 {model:.3} (28->56 {:.3}); wall-clock ratios {:.2}, {:.2}",
        flops(56) / flops(28),
        wall[0],
        wall[1]
    ))
}

fn learning_signal() -> Check {
    let mut acc = [0.0; 2];
    let mut per_seed = Vec::new();
    let mut slow = Vec::new();
    for seed in 0..5u64 {
        let data = generate_dataset(&DatasetSpec { seed, ..DatasetSpec::default() }).map_err(|e| e.to_string())?;
        let specs = [BackboneSpec::default(), BackboneSpec::default().without_attention()];
        let mut pair = [0.0; 2];
        for (i, spec) in specs.iter().enumerate() {
            let out = train(spec, &data, &TrainSpec { seed, ..TrainSpec::default() }).map_err(|e| e.to_string())?;
            if out.decreasing_fraction() < 0.75 {
                slow.push(format!("seed {seed} {} {:.2}", ["scsa", "baseline"][i], out.decreasing_fraction()));
            }
            pair[i] = out.final_val_acc();
            acc[i] += out.final_val_acc() / 5.0;
        }
        per_seed.push(format!("{:.3}/{:.3}", pair[0], pair[1]));
    }
    let detail = format!("mean val acc scsa {:.3} vs baseline {:.3} (per seed {})", acc[0], acc[1], per_seed.join(" "));
    ensure(slow.is_empty(), || format!("loss decreased in < 75% of epochs: {}; {detail}", slow.join(", ")))?;
    ensure(acc[0] >= acc[1], || detail.clone())?;
    Ok(detail)
}

fn determinism() -> Check {
    let spec = DatasetSpec::default();
    let (a, b) = (generate_dataset(&spec).unwrap(), generate_dataset(&spec).unwrap());
    ensure(a == b && a.checksum() == b.checksum(), || "dataset differs between runs".into())?;

    let ts = TrainSpec { epochs: 3, ..TrainSpec::default() };
    let r1 = train(&BackboneSpec::default(), &a, &ts).map_err(|e| e.to_string())?;
    let r2 = train(&BackboneSpec::default(), &a, &ts).map_err(|e| e.to_string())?;
    ensure(r1.log == r2.log, || "training logs differ".into())?;
    ensure(Checkpoint::from_store(&r1.store) == Checkpoint::from_store(&r2.store), || "trained weights differ".into())?;

    let s1 = run_gradcheck_suite(&SuiteOptions::default());
    let s2 = run_gradcheck_suite(&SuiteOptions::default());
    ensure(s1.to_csv() == s2.to_csv(), || "gradcheck reports differ".into())?;
    let bits = |r: &SuiteReport| r.checks.iter().map(|c| c.max_rel_error.to_bits()).collect::<Vec<_>>();
    ensure(bits(&s1) == bits(&s2), || "gradcheck errors differ in the last bit".into())?;
    Ok(format!("dataset sha256 {}", &a.checksum()[..16]))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("gradient correctness", gradient_correctness),
        ("analytic fixed points", fixed_points),
        ("oracle equivalence", oracle_equivalence),
        ("structural invariants", structural_invariants),
        ("ablation surface", ablation_surface),
        ("complexity model", complexity_model),
        ("learning signal", learning_signal),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! The full gradient-check suite: one check per differentiable op kind and
//! one per module configuration.
//!
//! Op checks come from an exhaustive `match` over [`OpKind`], so adding an
//! op to the tape without a check here is a compile error. Each op check
//! runs three shapes and reports the worst of them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strum::IntoEnumIterator;

use scsa_core::ops::conv::Conv2dGeometry;
use scsa_core::tape::BatchNormSpec;
use scsa_core::{
    ablation_registry, gradcheck, ConvSharing, GradcheckConfig, NormKind, NormPosition, OpKind, ParamId, ParamStore,
    Pcsa, PcsaConfig, Result, Scsa, SmsaConfig, Smsa, Tape, Tensor, Var,
};

pub const OP_TOL: f64 = 1e-4;
pub const SCSA_TOL: f64 = 1e-3;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Overrides both default tolerances.
    pub tol: Option<f64>,
    /// Runs only checks whose name contains this substring.
    pub filter: Option<String>,
    /// Negative control: scale one op kind's backward by this factor.
    pub corrupt: Option<(OpKind, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub tol: f64,
    /// Set when the check could not be evaluated at all.
    pub error: Option<String>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.max_rel_error <= self.tol
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed()).collect()
    }

    /// `name,max_rel_error,tol,status` lines.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("check,max_rel_error,tol,status\n");
        for c in &self.checks {
            let status = match (&c.error, c.passed()) {
                (Some(e), _) => format!("error: {e}"),
                (None, true) => "pass".into(),
                (None, false) => "FAIL".into(),
            };
            s.push_str(&format!("{},{:.3e},{:.0e},{status}\n", c.name, c.max_rel_error, c.tol));
        }
        s
    }
}

/// Every op kind that has a backward pass.
pub fn differentiable_ops() -> Vec<OpKind> {
    OpKind::iter().filter(|k| k.has_backward()).collect()
}

type Build = Box<dyn Fn(&mut Tape, &ParamStore) -> Result<Var>>;

struct Case {
    store: ParamStore,
    f: Build,
}

struct Gen(ChaCha8Rng);

impl Gen {
    fn tensor(&mut self, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| self.0.random_range(-1.0..1.0)).unwrap()
    }

    /// Values bounded away from zero, for kinked ops.
    fn away_from_zero(&mut self, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| {
            let v: f64 = self.0.random_range(0.1..1.0);
            if self.0.random_bool(0.5) { v } else { -v }
        })
        .unwrap()
    }
}

fn add(store: &mut ParamStore, name: &str, t: Tensor) -> ParamId {
    store.add(name, t).expect("unique test parameter names")
}

/// Three cases exercising `kind`; `i` selects the shape.
fn op_case(kind: OpKind, i: usize, g: &mut Gen) -> Case {
    let mut s = ParamStore::new();
    let sh4 = [[2, 3, 5, 4], [1, 4, 3, 6], [2, 2, 7, 7]][i];
    let sh3 = [[2, 3, 5], [1, 4, 7], [3, 2, 4]][i];
    let f: Build = match kind {
        OpKind::Leaf | OpKind::Param => unreachable!("no backward"),
        OpKind::AvgPoolOverHeight | OpKind::AvgPoolOverWidth => {
            let x = add(&mut s, "x", g.tensor(&sh4));
            Box::new(move |t, st| {
                let xv = t.param(st, x);
                if kind == OpKind::AvgPoolOverHeight { t.avg_pool_over_height(xv) } else { t.avg_pool_over_width(xv) }
            })
        }
        OpKind::AdaptiveAvgPool2d => {
            let (shape, out) = [([2, 2, 9, 8], (7, 7)), ([1, 3, 5, 5], (3, 2)), ([2, 2, 14, 14], (7, 7))][i];
            let x = add(&mut s, "x", g.tensor(&shape));
            Box::new(move |t, st| {
                let xv = t.param(st, x);
                t.adaptive_avg_pool2d(xv, out.0, out.1)
            })
        }
        OpKind::AvgPool2d => {
            let (shape, k) = [([2, 2, 8, 8], 2), ([1, 3, 9, 7], 3), ([2, 2, 14, 15], 7)][i];
            let x = add(&mut s, "x", g.tensor(&shape));
            Box::new(move |t, st| {
                let xv = t.param(st, x);
                t.avg_pool2d(xv, (k, k), (k, k))
            })
        }
        OpKind::MeanLastDim => {
            let x = add(&mut s, "x", g.tensor(&sh3));
            Box::new(move |t, st| {
                let xv = t.param(st, x);
                t.mean_lastdim(xv)
            })
        }
        OpKind::SliceChannels => {
            let x = add(&mut s, "x", g.tensor(&[2, 6, 5]));
            let (a, b) = [(0, 2), (1, 4), (3, 6)][i];
            Box::new(move |t, st| {
                let xv = t.param(st, x);
                t.slice_channels(xv, a, b)
            })
        }
        OpKind::ConcatChannels => {
            let a = add(&mut s, "a", g.tensor(&[2, i + 1, 4]));
            let b = add(&mut s, "b", g.tensor(&[2, 2, 4]));
            Box::new(move |t, st| {
                let (av, bv) = (t.param(st, a), t.param(st, b));
                t.concat_channels(&[av, bv, av])
            })
        }
        OpKind::ChannelShuffle => {
            let groups = [2, 3, 4][i];
            let x = add(&mut s, "x", g.tensor(&[2, 12, 3]));
            Box::new(move |t, st| {
                let xv = t.param(st, x);
                t.channel_shuffle(xv, groups)
            })
        }
        OpKind::Reshape => {
            let x = add(&mut s, "x", g.tensor(&sh4));
            let n: usize = sh4.iter().product();
            Box::new(move |t, st| {
                let xv = t.param(st, x);
                let r = t.reshape(xv, &[sh4[0], n / sh4[0]])?;
                // keep the reshape from being a pure relabelling of the seed
                t.scale(r, 1.5)
            })
        }
        OpKind::TransposeLast2 => {
            let x = add(&mut s, "x", g.tensor(&sh3));
            Box::new(move |t, st| {
                let xv = t.param(st, x);
                t.transpose_last2(xv)
            })
        }
        OpKind::DwConv1d => {
            let k = [3, 5, 7][i];
            let x = add(&mut s, "x", g.tensor(&[2, 3, [6, 4, 9][i]]));
            let w = add(&mut s, "w", g.tensor(&[3, k]));
            let b = add(&mut s, "b", g.tensor(&[3]));
            Box::new(move |t, st| {
                let (xv, wv, bv) = (t.param(st, x), t.param(st, w), t.param(st, b));
                t.dwconv1d(xv, wv, Some(bv))
            })
        }
        OpKind::Conv2d => {
            let (xs, ws, stride, padding) = [
                ([2, 3, 6, 5], [4, 3, 3, 3], 1, 1),
                ([1, 2, 7, 7], [3, 2, 3, 3], 2, 1),
                ([2, 3, 5, 6], [2, 3, 1, 1], 2, 0),
            ][i];
            let x = add(&mut s, "x", g.tensor(&xs));
            let w = add(&mut s, "w", g.tensor(&ws));
            let b = add(&mut s, "b", g.tensor(&[ws[0]]));
            Box::new(move |t, st| {
                let (xv, wv, bv) = (t.param(st, x), t.param(st, w), t.param(st, b));
                t.conv2d(xv, wv, Some(bv), Conv2dGeometry { stride, padding })
            })
        }
        OpKind::GroupNorm => {
            let (shape, groups) = [([2, 4, 5], 2), ([1, 6, 7], 3), ([3, 4, 3], 4)][i];
            let x = add(&mut s, "x", g.tensor(&shape));
            let gamma = add(&mut s, "gamma", g.tensor(&[shape[1]]));
            let beta = add(&mut s, "beta", g.tensor(&[shape[1]]));
            Box::new(move |t, st| {
                let (xv, gv, bv) = (t.param(st, x), t.param(st, gamma), t.param(st, beta));
                t.group_norm(xv, groups, gv, bv, 1e-5)
            })
        }
        OpKind::BatchNorm1d => {
            let x = add(&mut s, "x", g.tensor(&sh3));
            let c = sh3[1];
            let gamma = add(&mut s, "gamma", g.tensor(&[c]));
            let beta = add(&mut s, "beta", g.tensor(&[c]));
            let running_mean = s.add_buffer("running_mean", Tensor::zeros(&[c]).unwrap()).unwrap();
            let running_var = s.add_buffer("running_var", Tensor::ones(&[c]).unwrap()).unwrap();
            let spec = BatchNormSpec { eps: 1e-5, momentum: 0.1, running_mean, running_var };
            Box::new(move |t, st| {
                let (xv, gv, bv) = (t.param(st, x), t.param(st, gamma), t.param(st, beta));
                t.batch_norm1d(st, xv, gv, bv, spec)
            })
        }
        OpKind::Sigmoid | OpKind::Relu | OpKind::SoftmaxLastDim => {
            let x = add(&mut s, "x", g.away_from_zero(&sh3).scale(2.0));
            Box::new(move |t, st| {
                let xv = t.param(st, x);
                match kind {
                    OpKind::Sigmoid => t.sigmoid(xv),
                    OpKind::Relu => t.relu(xv),
                    _ => t.softmax_lastdim(xv),
                }
            })
        }
        OpKind::PerChannelAffine => {
            let x = add(&mut s, "x", g.tensor(&sh3));
            let w = add(&mut s, "w", g.tensor(&[sh3[1]]));
            let b = add(&mut s, "b", g.tensor(&[sh3[1]]));
            Box::new(move |t, st| {
                let (xv, wv, bv) = (t.param(st, x), t.param(st, w), t.param(st, b));
                t.per_channel_affine(xv, wv, bv)
            })
        }
        OpKind::BatchedMatmul => {
            let (bt, m, p, n) = [(2, 3, 4, 5), (1, 5, 2, 3), (3, 2, 6, 2)][i];
            let a = add(&mut s, "a", g.tensor(&[bt, m, p]));
            let b = add(&mut s, "b", g.tensor(&[bt, p, n]));
            Box::new(move |t, st| {
                let (av, bv) = (t.param(st, a), t.param(st, b));
                t.batched_matmul(av, bv)
            })
        }
        OpKind::Linear => {
            let (bt, inp, out) = [(2, 3, 4), (1, 5, 2), (4, 2, 3)][i];
            let x = add(&mut s, "x", g.tensor(&[bt, inp]));
            let w = add(&mut s, "w", g.tensor(&[out, inp]));
            let b = add(&mut s, "b", g.tensor(&[out]));
            Box::new(move |t, st| {
                let (xv, wv, bv) = (t.param(st, x), t.param(st, w), t.param(st, b));
                t.linear(xv, wv, bv)
            })
        }
        OpKind::Scale => {
            let x = add(&mut s, "x", g.tensor(&sh3));
            let factor = [0.5, -2.0, 3.0][i];
            Box::new(move |t, st| {
                let xv = t.param(st, x);
                t.scale(xv, factor)
            })
        }
        OpKind::Add => {
            let a = add(&mut s, "a", g.tensor(&sh4));
            let b = add(&mut s, "b", g.tensor(&sh4));
            Box::new(move |t, st| {
                let (av, bv) = (t.param(st, a), t.param(st, b));
                let s = t.add(av, bv)?;
                t.add(s, av)
            })
        }
        OpKind::BroadcastMul3 => {
            let [b, c, h, w] = sh4;
            let x = add(&mut s, "x", g.tensor(&sh4));
            let aw = add(&mut s, "along_w", g.tensor(&[b, c, w]));
            let ah = add(&mut s, "along_h", g.tensor(&[b, c, h]));
            Box::new(move |t, st| {
                let (xv, wv, hv) = (t.param(st, x), t.param(st, aw), t.param(st, ah));
                t.broadcast_mul3(xv, wv, hv)
            })
        }
        OpKind::ChannelGate => {
            let x = add(&mut s, "x", g.tensor(&sh4));
            let gate = add(&mut s, "gate", g.tensor(&sh4[..2]));
            Box::new(move |t, st| {
                let (xv, gv) = (t.param(st, x), t.param(st, gate));
                t.channel_gate(xv, gv)
            })
        }
        OpKind::SoftmaxCrossEntropy => {
            let (bt, k) = [(2, 3), (4, 5), (1, 2)][i];
            let logits = add(&mut s, "logits", g.tensor(&[bt, k]).scale(3.0));
            let labels: Vec<usize> = (0..bt).map(|j| (j * 7 + i) % k).collect();
            Box::new(move |t, st| {
                let lv = t.param(st, logits);
                t.softmax_cross_entropy(lv, &labels)
            })
        }
    };
    Case { store: s, f }
}

fn run(name: String, tol: f64, cases: Vec<Case>, opts: &SuiteOptions, expect: Option<OpKind>) -> CheckResult {
    let cfg = GradcheckConfig { tol, seed: opts.seed, corrupt: opts.corrupt, ..GradcheckConfig::default() };
    let mut worst: f64 = 0.0;
    for mut case in cases {
        if let Some(kind) = expect {
            // the case must actually record the op it claims to cover
            let mut probe = Tape::new();
            match (case.f)(&mut probe, &case.store) {
                Ok(_) if probe.op_kinds().any(|k| k == kind) => {}
                Ok(_) => return CheckResult { name, max_rel_error: f64::NAN, tol, error: Some(format!("{kind} not recorded")) },
                Err(e) => return CheckResult { name, max_rel_error: f64::NAN, tol, error: Some(e.to_string()) },
            }
        }
        match gradcheck(&mut case.store, &cfg, &case.f) {
            Ok(r) => worst = worst.max(r.max_rel_error),
            Err(e) => return CheckResult { name, max_rel_error: f64::NAN, tol, error: Some(e.to_string()) },
        }
    }
    CheckResult { name, max_rel_error: worst, tol, error: None }
}

fn module_input(store: &mut ParamStore, g: &mut Gen, shape: &[usize]) -> ParamId {
    add(store, "x", g.tensor(shape))
}

/// Moves parameters off their symmetric initial values (unit projection
/// weights, zero biases) so every path carries a generic gradient.
fn perturb(store: &mut ParamStore, g: &mut Gen) {
    for id in store.trainable_ids() {
        let v = store.value(id).clone();
        let noise = g.tensor(v.shape()).scale(0.3);
        store.set_value(id, v.add(&noise).unwrap()).unwrap();
    }
}

fn smsa_case(cfg: SmsaConfig, g: &mut Gen) -> Case {
    let mut s = ParamStore::new();
    let x = module_input(&mut s, g, &MODULE_SHAPE);
    let m = Smsa::new(&mut s, "smsa", 8, &cfg, &mut g.0).unwrap();
    perturb(&mut s, g);
    Case { store: s, f: Box::new(move |t, st| {
        let xv = t.param(st, x);
        m.forward(t, st, xv)
    }) }
}

fn pcsa_case(cfg: PcsaConfig, g: &mut Gen) -> Case {
    let mut s = ParamStore::new();
    let x = module_input(&mut s, g, &MODULE_SHAPE);
    let m = Pcsa::new(&mut s, "pcsa", 8, &cfg).unwrap();
    perturb(&mut s, g);
    Case { store: s, f: Box::new(move |t, st| {
        let xv = t.param(st, x);
        m.forward(t, st, xv)
    }) }
}

/// Input shape for every module check.
pub const MODULE_SHAPE: [usize; 4] = [2, 8, 12, 12];

fn scsa_case(cfg: &scsa_core::ScsaConfig, g: &mut Gen) -> Case {
    let mut s = ParamStore::new();
    let x = module_input(&mut s, g, &MODULE_SHAPE);
    let m = Scsa::new(&mut s, "scsa", 8, cfg, &mut g.0).unwrap();
    perturb(&mut s, g);
    Case { store: s, f: Box::new(move |t, st| {
        let xv = t.param(st, x);
        m.forward(t, st, xv)
    }) }
}

/// Names of all checks, in execution order.
pub fn check_names() -> Vec<String> {
    let mut names: Vec<String> = differentiable_ops().iter().map(|k| format!("op/{k}")).collect();
    names.extend(smsa_variants().into_iter().map(|(n, _)| format!("smsa/{n}")));
    names.extend(pcsa_variants().into_iter().map(|(n, _)| format!("pcsa/{n}")));
    names.extend(ablation_registry().into_iter().map(|p| format!("scsa/{}", p.name)));
    names
}

fn smsa_variants() -> Vec<(&'static str, SmsaConfig)> {
    let d = SmsaConfig::default;
    vec![
        ("default", d()),
        ("bn", SmsaConfig { norm: NormKind::Bn, ..d() }),
        ("unshared", SmsaConfig { conv_sharing: ConvSharing::Unshared, ..d() }),
        ("pre_conv", SmsaConfig { gn_position: NormPosition::PreConv, ..d() }),
        ("g1-3", SmsaConfig::with_kernels(&[3])),
        ("g2-3-7", SmsaConfig::with_kernels(&[3, 7])),
    ]
}

fn pcsa_variants() -> Vec<(&'static str, PcsaConfig)> {
    let d = PcsaConfig::default;
    vec![
        ("default", d()),
        ("multihead-shuffle", PcsaConfig { heads: 2, shuffle: true, ..d() }),
        ("uncompressed", PcsaConfig { progressive_compression: false, ..d() }),
    ]
}

/// Gradient check of an arbitrary SCSA configuration on the suite's module
/// input shape, after confirming the output keeps that shape.
pub fn check_scsa_config(name: &str, cfg: &scsa_core::ScsaConfig, seed: u64, tol: f64) -> Result<CheckResult> {
    cfg.validate(Some(MODULE_SHAPE[1]))?;
    let mut g = Gen(ChaCha8Rng::seed_from_u64(seed));
    let mut case = scsa_case(cfg, &mut g);
    let mut probe = Tape::new();
    let y = (case.f)(&mut probe, &case.store)?;
    if probe.shape(y) != MODULE_SHAPE {
        return Err(scsa_core::Error::Shape(format!("{name}: output {:?} for input {MODULE_SHAPE:?}", probe.shape(y))));
    }
    let gc = GradcheckConfig { tol, seed, ..GradcheckConfig::default() };
    Ok(match gradcheck(&mut case.store, &gc, &case.f) {
        Ok(r) => CheckResult { name: name.into(), max_rel_error: r.max_rel_error, tol, error: None },
        Err(e) => CheckResult { name: name.into(), max_rel_error: f64::NAN, tol, error: Some(e.to_string()) },
    })
}

pub fn run_gradcheck_suite(opts: &SuiteOptions) -> SuiteReport {
    let selected = |name: &str| opts.filter.as_deref().is_none_or(|f| name.contains(f));
    let op_tol = opts.tol.unwrap_or(OP_TOL);
    let scsa_tol = opts.tol.unwrap_or(SCSA_TOL);
    let mut g = Gen(ChaCha8Rng::seed_from_u64(opts.seed));
    let mut checks = Vec::new();
    for kind in differentiable_ops() {
        let name = format!("op/{kind}");
        // cases are generated even when skipped so that filtering does not
        // shift the random stream of later checks
        let cases = (0..3).map(|i| op_case(kind, i, &mut g)).collect();
        if selected(&name) {
            checks.push(run(name, op_tol, cases, opts, Some(kind)));
        }
    }
    for (n, cfg) in smsa_variants() {
        let name = format!("smsa/{n}");
        let case = smsa_case(cfg, &mut g);
        if selected(&name) {
            checks.push(run(name, op_tol, vec![case], opts, None));
        }
    }
    for (n, cfg) in pcsa_variants() {
        let name = format!("pcsa/{n}");
        let case = pcsa_case(cfg, &mut g);
        if selected(&name) {
            checks.push(run(name, op_tol, vec![case], opts, None));
        }
    }
    for p in ablation_registry() {
        let name = format!("scsa/{}", p.name);
        let case = scsa_case(&p.config, &mut g);
        if selected(&name) {
            checks.push(run(name, scsa_tol, vec![case], opts, None));
        }
    }
    SuiteReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_cover_every_differentiable_op() {
        let names = check_names();
        for k in differentiable_ops() {
            assert!(names.contains(&format!("op/{k}")));
        }
        assert!(!names.iter().any(|n| n == "op/leaf" || n == "op/param"));
    }

    #[test]
    fn filtered_run() {
        let r = run_gradcheck_suite(&SuiteOptions { filter: Some("op/dw_conv1d".into()), ..Default::default() });
        assert_eq!(r.checks.len(), 1);
        assert!(r.passed(), "{}", r.to_csv());
    }
}

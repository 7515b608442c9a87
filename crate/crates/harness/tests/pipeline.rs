use proptest::prelude::*;

use scsa_core::io::Checkpoint;
use scsa_core::{flop_estimate, preset, DType, OpKind, ParamStore};
use scsa_harness::dataset::stamp_blob;
use scsa_harness::suite::check_names;
use scsa_harness::*;

fn small_data(seed: u64) -> DatasetSpec {
    DatasetSpec { seed, samples_per_class: 10, image_size: [3, 16, 16], blob_scales: vec![1.0, 2.0, 3.0, 4.0], ..DatasetSpec::default() }
}

fn quick(epochs: usize) -> TrainSpec {
    TrainSpec { epochs, batch_size: 16, ..TrainSpec::default() }
}

fn small_backbone() -> BackboneSpec {
    BackboneSpec { stem_channels: 8, stage_channels: vec![8, 16], blocks_per_stage: 1, ..BackboneSpec::default() }
}

/// Cosine similarity between the channel-summed image and a unit Gaussian
/// of each class scale, centred on the brightest pixel.
fn matched_filter(img: &[f64], size: [usize; 3], scales: &[f64]) -> usize {
    let [c, h, w] = size;
    let gray: Vec<f64> = (0..h * w).map(|p| (0..c).map(|ch| img[ch * h * w + p]).sum()).collect();
    let peak = (0..h * w).fold(0, |b, p| if gray[p] > gray[b] { p } else { b });
    let centre = (peak / w, peak % w);
    let cos = |s: f64| {
        let mut t = vec![0.0; h * w];
        stamp_blob(&mut t, [1, h, w], centre, s, &[1.0], 1.0);
        let dot: f64 = t.iter().zip(&gray).map(|(a, b)| a * b).sum();
        let nt: f64 = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        dot / nt
    };
    (0..scales.len()).fold(0, |b, k| if cos(scales[k]) > cos(scales[b]) { k } else { b })
}

#[test]
fn matched_filter_separates_clean_data() {
    let spec = DatasetSpec { noise_sigma: 0.0, distractor_amplitude: 0.05, ..DatasetSpec::default() };
    let data = generate_dataset(&spec).unwrap();
    let per: usize = spec.image_size.iter().product();
    let imgs = data.val.images.data();
    let hits = (0..data.val.len())
        .filter(|&i| matched_filter(&imgs[i * per..(i + 1) * per], spec.image_size, &spec.blob_scales) == data.val.labels[i])
        .count();
    assert_eq!(hits, data.val.len());
}

#[test]
fn zero_learning_rate_freezes_loss() {
    let data = generate_dataset(&small_data(0)).unwrap();
    let out = train(&small_backbone(), &data, &TrainSpec { lr: 0.0, ..quick(3) }).unwrap();
    let l0 = out.log[0].train_loss;
    for r in &out.log {
        // only the summation order of the batch losses changes between epochs
        assert!((r.train_loss - l0).abs() <= 1e-12 * l0.abs(), "{} vs {l0}", r.train_loss);
        assert_eq!(r.val_acc, out.log[0].val_acc);
    }
}

#[test]
fn training_is_bit_reproducible() {
    let data = generate_dataset(&small_data(3)).unwrap();
    let a = train(&small_backbone(), &data, &quick(2)).unwrap();
    let b = train(&small_backbone(), &data, &quick(2)).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(Checkpoint::from_store(&a.store), Checkpoint::from_store(&b.store));
}

#[test]
fn mismatched_backbone_rejected() {
    let data = generate_dataset(&small_data(0)).unwrap();
    let spec = BackboneSpec { num_classes: 3, ..small_backbone() };
    assert!(train(&spec, &data, &quick(1)).is_err());
}

#[test]
fn diverging_loss_names_epoch() {
    let data = generate_dataset(&small_data(0)).unwrap();
    let err = train(&small_backbone(), &data, &TrainSpec { lr: 1e100, momentum: 0.0, ..quick(8) }).unwrap_err();
    assert!(matches!(err, scsa_core::Error::NonFinite(_)), "{err}");
    assert!(err.to_string().contains("epoch"), "{err}");
}

#[test]
fn trained_checkpoint_restores() {
    let data = generate_dataset(&small_data(1)).unwrap();
    let out = train(&small_backbone(), &data, &quick(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.scst");
    Checkpoint::from_store(&out.store).save(&path, DType::F64).unwrap();

    let mut fresh = ParamStore::new();
    let model = Backbone::new(&mut fresh, &small_backbone(), 99).unwrap();
    Checkpoint::load(&path).unwrap().restore_into(&mut fresh).unwrap();
    let acc = evaluate(&model, &fresh, &data.val, 64).unwrap();
    assert_eq!(acc, out.final_val_acc());
    let names: Vec<_> = fresh.iter().map(|(_, p)| p.name.clone()).collect();
    assert!(names.iter().any(|n| n.starts_with("stage1.block0.scsa.pcsa.")));
}

#[test]
fn negative_control_fails_exactly_one_check() {
    let report = run_gradcheck_suite(&SuiteOptions { corrupt: Some((OpKind::Conv2d, 1.5)), ..SuiteOptions::default() });
    let failed: Vec<_> = report.failures().iter().map(|c| c.name.clone()).collect();
    assert_eq!(failed, vec!["op/conv2d".to_string()]);
    assert_eq!(report.checks.len(), check_names().len());
}

#[test]
fn suite_report_is_deterministic() {
    let opts = SuiteOptions { filter: Some("pcsa/".into()), ..SuiteOptions::default() };
    assert_eq!(run_gradcheck_suite(&opts).to_csv(), run_gradcheck_suite(&opts).to_csv());
}

#[test]
fn without_pcsa_is_cheaper_everywhere() {
    let (base, wo) = (preset("baseline").unwrap(), preset("wo-pcsa").unwrap());
    for hw in [7, 14, 28, 56, 112] {
        for c in [8, 16, 64, 256] {
            assert!(flop_estimate(c, hw, hw, &wo).total < flop_estimate(c, hw, hw, &base).total);
        }
    }
}

proptest! {
    #[test]
    fn sweep_size_is_product(cs in prop::collection::vec(1usize..64, 1..4), hws in prop::collection::vec(1usize..128, 1..5)) {
        let join = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        let spec = format!("C={};HW={}", join(&cs), join(&hws));
        prop_assert_eq!(parse_sweep(&spec).unwrap().len(), cs.len() * hws.len());
    }
}

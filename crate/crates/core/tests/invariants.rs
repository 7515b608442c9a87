mod common;

use common::{random, rng};
use proptest::prelude::*;
use scsa_core::ops::{self, layout};
use scsa_core::{ConvSharing, ParamStore, Smsa, SmsaConfig, Tape, Tensor};

fn tensor_strategy(max_b: usize, max_c: usize, max_l: usize) -> impl Strategy<Value = Tensor> {
    (1..=max_b, 1..=max_c, 1..=max_l).prop_flat_map(|(b, c, l)| {
        prop::collection::vec(-50.0..50.0f64, b * c * l).prop_map(move |d| Tensor::new(&[b, c, l], d).unwrap())
    })
}

proptest! {
    #[test]
    fn split_concat_round_trip(k in 1usize..5, per in 1usize..4, b in 1usize..3, l in 1usize..6, seed in 0u64..1000) {
        let x = random(&[b, k * per, l], seed);
        let parts = ops::channel_split(&x, k).unwrap();
        let refs: Vec<_> = parts.iter().collect();
        prop_assert_eq!(ops::concat_channels(&refs).unwrap(), x);
    }

    #[test]
    fn shuffle_round_trip(g in 1usize..5, per in 1usize..5, seed in 0u64..1000) {
        let x = random(&[2, g * per, 3], seed);
        let s = ops::channel_shuffle(&x, g).unwrap();
        prop_assert_eq!(ops::channel_unshuffle(&s, g).unwrap(), x.clone());
        // shuffling with the complementary group count undoes it as well
        prop_assert_eq!(ops::channel_shuffle(&s, per).unwrap(), x);
    }

    #[test]
    fn softmax_rows_are_stochastic(x in tensor_strategy(3, 4, 9)) {
        let y = ops::softmax_lastdim(&x).unwrap();
        let l = x.shape()[2];
        for row in y.data().chunks(l) {
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_range(x in tensor_strategy(2, 3, 5)) {
        let y = ops::sigmoid(&x.scale(0.2));
        prop_assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn group_norm_groups_are_independent(groups in 1usize..5, per in 1usize..4, l in 2usize..7, seed in 0u64..1000, bump in -5.0..5.0f64) {
        let c = groups * per;
        let x = random(&[2, c, l], seed);
        let (g, be) = (Tensor::ones(&[c]).unwrap(), Tensor::zeros(&[c]).unwrap());
        let (y0, _) = ops::group_norm(&x, groups, &g, &be, 1e-5).unwrap();
        // perturb only the last group of the first sample
        let mut x1 = x.clone();
        for ch in (groups - 1) * per..c {
            for t in 0..l {
                x1.data_mut()[ch * l + t] += bump * (t as f64 + 1.0);
            }
        }
        let (y1, _) = ops::group_norm(&x1, groups, &g, &be, 1e-5).unwrap();
        let untouched = (groups - 1) * per * l;
        for i in (0..untouched).chain(c * l..2 * c * l) {
            prop_assert!((y0.data()[i] - y1.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn shuffle_permutation_is_bijective(g in 1usize..6, per in 1usize..6) {
        let mut p = layout::shuffle_permutation(g * per, g).unwrap();
        p.sort_unstable();
        prop_assert_eq!(p, (0..g * per).collect::<Vec<_>>());
    }
}

#[test]
fn shuffle_hand_example() {
    assert_eq!(layout::shuffle_permutation(4, 2).unwrap(), vec![0, 2, 1, 3]);
}

/// Gradients of `<smsa(x), u>` with respect to every parameter.
fn param_grads(store: &mut ParamStore, m: &Smsa, x: &Tensor, u: &Tensor) {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let y = m.forward(&mut tape, store, xv).unwrap();
    let g = tape.backward(y, u.clone()).unwrap();
    store.zero_grads();
    g.accumulate_into(&tape, store);
}

#[test]
fn shared_kernel_gradient_is_sum_of_branches() {
    let shape = [2, 8, 7, 6];
    let (x, u) = (random(&shape, 1), random(&shape, 2));
    let shared = SmsaConfig::default();
    let unshared = SmsaConfig { conv_sharing: ConvSharing::Unshared, ..SmsaConfig::default() };
    let mut s_store = ParamStore::new();
    let s = Smsa::new(&mut s_store, "m", 8, &shared, &mut rng(5)).unwrap();
    let mut u_store = ParamStore::new();
    let un = Smsa::new(&mut u_store, "m", 8, &unshared, &mut rng(6)).unwrap();
    for i in 0..4 {
        let w = s_store.by_name(&format!("m.conv.{i}.weight")).unwrap().value.clone();
        for conv in ["conv", "conv_w"] {
            let id = u_store.id(&format!("m.{conv}.{i}.weight")).unwrap();
            u_store.set_value(id, w.clone()).unwrap();
        }
    }
    param_grads(&mut s_store, &s, &x, &u);
    param_grads(&mut u_store, &un, &x, &u);
    for i in 0..4 {
        let gs = &s_store.by_name(&format!("m.conv.{i}.weight")).unwrap().grad;
        let gh = &u_store.by_name(&format!("m.conv.{i}.weight")).unwrap().grad;
        let gw = &u_store.by_name(&format!("m.conv_w.{i}.weight")).unwrap().grad;
        let sum = gh.add(gw).unwrap();
        assert!(gs.max_abs_diff(&sum).unwrap() < 1e-10, "kernel {i}");
        assert!(gh.max_abs() > 0.0 && gw.max_abs() > 0.0);
    }
}

#[test]
fn sub_features_normalize_independently() {
    let (b, c, h, w) = (2, 8, 6, 7);
    let mut store = ParamStore::new();
    let m = Smsa::new(&mut store, "m", c, &SmsaConfig::default(), &mut rng(9)).unwrap();
    let x = random(&[b, c, h, w], 3);
    let per = c / 4;
    let normalized = |x: &Tensor| {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let t = m.trace(&mut tape, &store, xv).unwrap();
        (tape.group_norm_normalized(t.norm_h).unwrap().clone(), tape.group_norm_normalized(t.norm_w).unwrap().clone())
    };
    let (h0, w0) = normalized(&x);
    for j in 0..4 {
        let mut x1 = x.clone();
        let plane = h * w;
        for n in 0..b {
            for ch in j * per..(j + 1) * per {
                for p in 0..plane {
                    x1.data_mut()[(n * c + ch) * plane + p] += 0.7 * ((p % 5) as f64 - 2.0);
                }
            }
        }
        let (h1, w1) = normalized(&x1);
        for (a, bb, len) in [(&h0, &h1, w), (&w0, &w1, h)] {
            let mut changed = false;
            for n in 0..b {
                for ch in 0..c {
                    for t in 0..len {
                        let idx = (n * c + ch) * len + t;
                        let d = (a.data()[idx] - bb.data()[idx]).abs();
                        if ch / per == j {
                            changed |= d > 1e-6;
                        } else {
                            assert!(d < 1e-12, "sub-feature {} moved when {j} was perturbed", ch / per);
                        }
                    }
                }
            }
            assert!(changed);
        }
    }
}

#[test]
fn smsa_gating_never_amplifies() {
    let mut store = ParamStore::new();
    let m = Smsa::new(&mut store, "m", 12, &SmsaConfig::default(), &mut rng(1)).unwrap();
    let x = random(&[3, 12, 9, 5], 4).scale(10.0);
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let y = m.forward(&mut tape, &store, xv).unwrap();
    assert_eq!(tape.value(y).shape(), x.shape());
    for (a, b) in tape.value(y).data().iter().zip(x.data()) {
        assert!(a.abs() <= b.abs());
    }
}

//! Central-difference gradient checking.
//!
//! The function under test is reduced to a scalar by contracting its output
//! with a fixed random cotangent `u`: `L(theta) = <f(theta), u>`. Every
//! coordinate of every trainable parameter is perturbed by `+-h` and
//! `(L(theta+h) - L(theta-h)) / 2h` is compared with the analytic gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tape::{Mode, OpKind, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub step: f64,
    pub tol: f64,
    /// Seeds the cotangent.
    pub seed: u64,
    pub mode: Mode,
    /// Negative control: scale the backward of one op kind.
    pub corrupt: Option<(OpKind, f64)>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, tol: 1e-4, seed: 0, mode: Mode::Train, corrupt: None }
    }
}

impl GradcheckConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

/// Comparison for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub numel: usize,
    pub max_abs_diff: f64,
    /// `max|a - n| / max(max|a|, max|n|, 1e-8)` over the tensor.
    pub rel_error: f64,
    /// Flat index of the largest discrepancy.
    pub worst_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub tol: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> (f64, f64, usize) {
    let mut max_diff = 0.0;
    let mut worst = 0;
    let mut scale: f64 = 1e-8;
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let d = (a - n).abs();
        if d > max_diff {
            max_diff = d;
            worst = i;
        }
        scale = scale.max(a.abs()).max(n.abs());
    }
    (max_diff / scale, max_diff, worst)
}

fn cotangent(shape: &[usize], seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Checks analytic gradients of `f` with respect to every trainable
/// parameter in `store`. Parameter values are restored before returning.
pub fn gradcheck<F>(store: &mut ParamStore, cfg: &GradcheckConfig, f: F) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::with_mode(cfg.mode);
    if let Some((kind, factor)) = cfg.corrupt {
        tape.corrupt_backward(kind, factor);
    }
    let out = f(&mut tape, store)?;
    let u = cotangent(tape.shape(out), cfg.seed)?;
    let grads = tape.backward(out, u.clone())?;

    let objective = |store: &ParamStore| -> Result<f64> {
        let mut t = Tape::with_mode(cfg.mode);
        let o = f(&mut t, store)?;
        t.value(o).dot(&u)
    };

    let mut tensors = Vec::new();
    for id in store.trainable_ids() {
        let analytic = match tape.param_var(id).and_then(|v| grads.get(v)) {
            Some(g) => g.clone(),
            None => Tensor::zeros_like(store.value(id)),
        };
        let numeric = numeric_grad(store, id, cfg.step, &objective)?;
        let (rel, diff, worst) = relative_error(analytic.data(), &numeric);
        tensors.push(TensorCheck {
            name: store.get(id).name.clone(),
            numel: numeric.len(),
            max_abs_diff: diff,
            rel_error: rel,
            worst_index: worst,
        });
    }
    let max_rel_error = tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport { tensors, max_rel_error, tol: cfg.tol })
}

fn numeric_grad(
    store: &mut ParamStore,
    id: ParamId,
    step: f64,
    objective: &dyn Fn(&ParamStore) -> Result<f64>,
) -> Result<Vec<f64>> {
    let n = store.value(id).numel();
    let mut out = Vec::with_capacity(n);
    let mut bad = Vec::new();
    for i in 0..n {
        let orig = store.value(id).data()[i];
        store.get_mut(id).value.data_mut()[i] = orig + step;
        let plus = objective(store);
        store.get_mut(id).value.data_mut()[i] = orig - step;
        let minus = objective(store);
        store.get_mut(id).value.data_mut()[i] = orig;
        let (plus, minus) = (plus?, minus?);
        let d = (plus - minus) / (2.0 * step);
        if !d.is_finite() {
            bad.push(i);
        }
        out.push(d);
    }
    if !bad.is_empty() {
        return Err(Error::NonFinite(format!(
            "finite difference of {} not finite at coordinates {bad:?}",
            store.get(id).name
        )));
    }
    Ok(out)
}

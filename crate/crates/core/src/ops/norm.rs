use crate::error::{config_err, Error, Result};
use crate::tensor::Tensor;

/// Saved state of a group-norm forward pass.
#[derive(Clone, Debug)]
pub struct GroupNormCache {
    /// Pre-affine normalized input.
    pub normalized: Tensor,
    /// `1/sqrt(var + eps)` per (sample, group).
    pub inv_std: Vec<f64>,
    pub groups: usize,
}

fn check_affine(c: usize, gamma: &Tensor, beta: &Tensor, what: &str) -> Result<()> {
    gamma.expect_shape(&[c], &format!("{what} gamma"))?;
    beta.expect_shape(&[c], &format!("{what} beta"))
}

fn apply_affine(normalized: &Tensor, gamma: &Tensor, beta: &Tensor) -> Tensor {
    let (_, c, l) = (normalized.shape()[0], normalized.shape()[1], normalized.shape()[2]);
    let (gs, bs) = (gamma.data(), beta.data());
    let data = normalized
        .data()
        .chunks_exact(l)
        .enumerate()
        .flat_map(|(row, xs)| {
            let ci = row % c;
            xs.iter().map(move |&v| gs[ci] * v + bs[ci])
        })
        .collect();
    Tensor::from_parts(normalized.shape().to_vec(), data)
}

/// Group normalization over `[B, C, L]` with population variance and a
/// per-channel affine.
pub fn group_norm(x: &Tensor, groups: usize, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<(Tensor, GroupNormCache)> {
    let (b, c, l) = x.dims3()?;
    if groups == 0 || c % groups != 0 {
        return Err(config_err!("group_norm: {c} channels not divisible into {groups} groups"));
    }
    if eps <= 0.0 {
        return Err(config_err!("group_norm: eps must be positive, got {eps}"));
    }
    check_affine(c, gamma, beta, "group_norm")?;
    let span = (c / groups) * l;
    let mut normalized = Vec::with_capacity(x.numel());
    let mut inv_std = Vec::with_capacity(b * groups);
    for chunk in x.data().chunks_exact(span) {
        let mean = chunk.iter().sum::<f64>() / span as f64;
        let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / span as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(is);
        normalized.extend(chunk.iter().map(|v| (v - mean) * is));
    }
    let normalized = Tensor::from_parts(vec![b, c, l], normalized);
    let out = apply_affine(&normalized, gamma, beta);
    Ok((out, GroupNormCache { normalized, inv_std, groups }))
}

/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub fn group_norm_backward(grad: &Tensor, cache: &GroupNormCache, gamma: &Tensor) -> (Tensor, Tensor, Tensor) {
    let shape = cache.normalized.shape();
    let (c, l) = (shape[1], shape[2]);
    let cpg = c / cache.groups;
    let span = cpg * l;
    let (g, xhat, gs) = (grad.data(), cache.normalized.data(), gamma.data());
    let mut ggamma = vec![0.0; c];
    let mut gbeta = vec![0.0; c];
    for (i, (gv, xv)) in g.iter().zip(xhat).enumerate() {
        let ci = (i / l) % c;
        ggamma[ci] += gv * xv;
        gbeta[ci] += gv;
    }
    let mut gx = vec![0.0; g.len()];
    for (gi, &is) in cache.inv_std.iter().enumerate() {
        let range = gi * span..(gi + 1) * span;
        let first_channel = (gi % cache.groups) * cpg;
        let dxhat: Vec<f64> = range
            .clone()
            .enumerate()
            .map(|(j, idx)| g[idx] * gs[first_channel + j / l])
            .collect();
        let mean_d = dxhat.iter().sum::<f64>() / span as f64;
        let mean_dx = dxhat.iter().zip(&xhat[range.clone()]).map(|(d, x)| d * x).sum::<f64>() / span as f64;
        for (j, idx) in range.enumerate() {
            gx[idx] = is * (dxhat[j] - mean_d - xhat[idx] * mean_dx);
        }
    }
    (
        Tensor::from_parts(shape.to_vec(), gx),
        Tensor::from_parts(vec![c], ggamma),
        Tensor::from_parts(vec![c], gbeta),
    )
}

/// Per-channel running statistics for batch normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats {
    pub mean: Tensor,
    pub var: Tensor,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
    /// True when batch statistics were used (train mode).
    pub batch_stats: bool,
}

/// Output of a batch-norm forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormOutput {
    pub output: Tensor,
    pub cache: BatchNormCache,
    /// Updated running statistics; `None` in eval mode.
    pub updated: Option<BatchNormStats>,
}

/// Batch normalization over `[B, C, L]`: statistics per channel over `B*L`.
///
/// In train mode the batch statistics normalize the input and the running
/// statistics move by `momentum` toward the batch mean and the unbiased batch
/// variance. In eval mode the running statistics are used as-is.
pub fn batch_norm1d(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
    momentum: f64,
    train: bool,
    running: &BatchNormStats,
) -> Result<BatchNormOutput> {
    let (b, c, l) = x.dims3()?;
    check_affine(c, gamma, beta, "batch_norm1d")?;
    running.mean.expect_shape(&[c], "batch_norm1d running mean")?;
    running.var.expect_shape(&[c], "batch_norm1d running var")?;
    if eps <= 0.0 {
        return Err(config_err!("batch_norm1d: eps must be positive, got {eps}"));
    }
    let n = b * l;
    let xs = x.data();
    let (mean, var): (Vec<f64>, Vec<f64>) = if train {
        if n < 2 {
            return Err(Error::DegenerateStatistics(format!(
                "batch_norm1d in train mode needs B*L >= 2, got B={b}, L={l}"
            )));
        }
        (0..c)
            .map(|ci| {
                let vals = || (0..b).flat_map(move |bi| xs[(bi * c + ci) * l..(bi * c + ci + 1) * l].iter());
                let m = vals().sum::<f64>() / n as f64;
                let v = vals().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
                (m, v)
            })
            .unzip()
    } else {
        (running.mean.data().to_vec(), running.var.data().to_vec())
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let normalized: Vec<f64> = xs
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let ci = (i / l) % c;
            (v - mean[ci]) * inv_std[ci]
        })
        .collect();
    let normalized = Tensor::from_parts(vec![b, c, l], normalized);
    let output = apply_affine(&normalized, gamma, beta);
    let updated = train.then(|| {
        let unbias = n as f64 / (n - 1) as f64;
        BatchNormStats {
            mean: Tensor::from_parts(
                vec![c],
                running.mean.data().iter().zip(&mean).map(|(r, m)| (1.0 - momentum) * r + momentum * m).collect(),
            ),
            var: Tensor::from_parts(
                vec![c],
                running
                    .var
                    .data()
                    .iter()
                    .zip(&var)
                    .map(|(r, v)| (1.0 - momentum) * r + momentum * v * unbias)
                    .collect(),
            ),
        }
    });
    Ok(BatchNormOutput { output, cache: BatchNormCache { normalized, inv_std, batch_stats: train }, updated })
}

/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub fn batch_norm1d_backward(grad: &Tensor, cache: &BatchNormCache, gamma: &Tensor) -> (Tensor, Tensor, Tensor) {
    let shape = cache.normalized.shape();
    let (b, c, l) = (shape[0], shape[1], shape[2]);
    let n = (b * l) as f64;
    let (g, xhat, gs) = (grad.data(), cache.normalized.data(), gamma.data());
    let mut ggamma = vec![0.0; c];
    let mut gbeta = vec![0.0; c];
    for (i, (gv, xv)) in g.iter().zip(xhat).enumerate() {
        let ci = (i / l) % c;
        ggamma[ci] += gv * xv;
        gbeta[ci] += gv;
    }
    let gx = g
        .iter()
        .zip(xhat)
        .enumerate()
        .map(|(i, (gv, xv))| {
            let ci = (i / l) % c;
            let scale = gs[ci] * cache.inv_std[ci];
            if cache.batch_stats {
                // sum(dxhat) = gamma*gbeta, sum(dxhat*xhat) = gamma*ggamma
                scale * (gv - gbeta[ci] / n - xv * ggamma[ci] / n)
            } else {
                scale * gv
            }
        })
        .collect();
    (
        Tensor::from_parts(shape.to_vec(), gx),
        Tensor::from_parts(vec![c], ggamma),
        Tensor::from_parts(vec![c], gbeta),
    )
}

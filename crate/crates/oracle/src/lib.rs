//! Straight-line reference implementations used as test oracles.
//!
//! Everything here is written as explicit nested loops over flat row-major
//! buffers, with no shared code with `scsa-core`. Speed is irrelevant.

/// Flat row-major array with explicit extents.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        Self { shape: shape.to_vec(), data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(shape, vec![0.0; shape.iter().product()])
    }

    fn at3(&self, i: usize, j: usize, k: usize) -> f64 {
        let s = &self.shape;
        self.data[(i * s[1] + j) * s[2] + k]
    }

    fn at4(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let s = &self.shape;
        self.data[((i * s[1] + j) * s[2] + k) * s[3] + l]
    }

    fn set3(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let s = &self.shape;
        let idx = (i * s[1] + j) * s[2] + k;
        self.data[idx] = v;
    }

    fn set4(&mut self, i: usize, j: usize, k: usize, l: usize, v: f64) {
        let s = &self.shape;
        let idx = ((i * s[1] + j) * s[2] + k) * s[3] + l;
        self.data[idx] = v;
    }

    pub fn max_abs_diff(&self, other: &[f64]) -> f64 {
        assert_eq!(self.data.len(), other.len());
        self.data.iter().zip(other).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Mean over H: `[B,C,H,W] -> [B,C,W]`.
pub fn mean_over_h(x: &Array) -> Array {
    let (b, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let mut out = Array::zeros(&[b, c, w]);
    for n in 0..b {
        for ch in 0..c {
            for j in 0..w {
                let mut s = 0.0;
                for i in 0..h {
                    s += x.at4(n, ch, i, j);
                }
                out.set3(n, ch, j, s / h as f64);
            }
        }
    }
    out
}

/// Mean over W: `[B,C,H,W] -> [B,C,H]`.
pub fn mean_over_w(x: &Array) -> Array {
    let (b, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let mut out = Array::zeros(&[b, c, h]);
    for n in 0..b {
        for ch in 0..c {
            for i in 0..h {
                let mut s = 0.0;
                for j in 0..w {
                    s += x.at4(n, ch, i, j);
                }
                out.set3(n, ch, i, s / w as f64);
            }
        }
    }
    out
}

/// Depth-wise 1D convolution (cross-correlation) with zero padding `k/2`.
/// `weight` is `[c, k]` row-major.
pub fn dwconv1d(x: &Array, weight: &[f64], k: usize, bias: Option<&[f64]>) -> Array {
    let (b, c, l) = (x.shape[0], x.shape[1], x.shape[2]);
    assert_eq!(weight.len(), c * k);
    let pad = (k / 2) as isize;
    let mut out = Array::zeros(&[b, c, l]);
    for n in 0..b {
        for ch in 0..c {
            for t in 0..l {
                let mut s = bias.map_or(0.0, |bb| bb[ch]);
                for j in 0..k {
                    let src = t as isize + j as isize - pad;
                    if src >= 0 && (src as usize) < l {
                        s += weight[ch * k + j] * x.at3(n, ch, src as usize);
                    }
                }
                out.set3(n, ch, t, s);
            }
        }
    }
    out
}

/// Channels `[start, end)` of a `[B, C, ...]` array.
pub fn channel_slice(x: &Array, start: usize, end: usize) -> Array {
    let (b, c) = (x.shape[0], x.shape[1]);
    let inner: usize = x.shape[2..].iter().product();
    let mut shape = x.shape.clone();
    shape[1] = end - start;
    let mut data = Vec::new();
    for n in 0..b {
        for ch in start..end {
            let base = (n * c + ch) * inner;
            data.extend_from_slice(&x.data[base..base + inner]);
        }
    }
    Array::new(&shape, data)
}

pub fn channel_concat(parts: &[Array]) -> Array {
    let b = parts[0].shape[0];
    let inner: usize = parts[0].shape[2..].iter().product();
    let c: usize = parts.iter().map(|p| p.shape[1]).sum();
    let mut shape = parts[0].shape.clone();
    shape[1] = c;
    let mut data = Vec::new();
    for n in 0..b {
        for p in parts {
            let pc = p.shape[1];
            data.extend_from_slice(&p.data[n * pc * inner..(n + 1) * pc * inner]);
        }
    }
    Array::new(&shape, data)
}

/// Group normalization over `[B, C, ...]`, population variance.
pub fn group_norm(x: &Array, groups: usize, gamma: &[f64], beta: &[f64], eps: f64) -> Array {
    let (b, c) = (x.shape[0], x.shape[1]);
    let inner: usize = x.shape[2..].iter().product();
    let per = c / groups;
    let mut out = x.clone();
    for n in 0..b {
        for g in 0..groups {
            let mut vals = Vec::new();
            for ch in g * per..(g + 1) * per {
                for i in 0..inner {
                    vals.push(x.data[(n * c + ch) * inner + i]);
                }
            }
            let m = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / m;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
            let inv = 1.0 / (var + eps).sqrt();
            for ch in g * per..(g + 1) * per {
                for i in 0..inner {
                    let idx = (n * c + ch) * inner + i;
                    out.data[idx] = (x.data[idx] - mean) * inv * gamma[ch] + beta[ch];
                }
            }
        }
    }
    out
}

/// Batch normalization of `[B, C, L]` with statistics over `(B, L)`.
pub fn batch_norm_train(x: &Array, gamma: &[f64], beta: &[f64], eps: f64) -> Array {
    let (b, c, l) = (x.shape[0], x.shape[1], x.shape[2]);
    let mut out = x.clone();
    for ch in 0..c {
        let mut vals = Vec::new();
        for n in 0..b {
            for t in 0..l {
                vals.push(x.at3(n, ch, t));
            }
        }
        let m = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / m;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
        for n in 0..b {
            for t in 0..l {
                let v = (x.at3(n, ch, t) - mean) / (var + eps).sqrt() * gamma[ch] + beta[ch];
                out.set3(n, ch, t, v);
            }
        }
    }
    out
}

/// Batch normalization with fixed statistics.
pub fn batch_norm_eval(x: &Array, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64], eps: f64) -> Array {
    let (b, c, l) = (x.shape[0], x.shape[1], x.shape[2]);
    let mut out = x.clone();
    for n in 0..b {
        for ch in 0..c {
            for t in 0..l {
                let v = (x.at3(n, ch, t) - mean[ch]) / (var[ch] + eps).sqrt() * gamma[ch] + beta[ch];
                out.set3(n, ch, t, v);
            }
        }
    }
    out
}

/// Average pooling with explicit window bounds per output row and column.
fn pool_windows(x: &Array, rows: &[(usize, usize)], cols: &[(usize, usize)]) -> Array {
    let (b, c) = (x.shape[0], x.shape[1]);
    let mut out = Array::zeros(&[b, c, rows.len(), cols.len()]);
    for n in 0..b {
        for ch in 0..c {
            for (oi, &(r0, r1)) in rows.iter().enumerate() {
                for (oj, &(c0, c1)) in cols.iter().enumerate() {
                    let mut s = 0.0;
                    for i in r0..r1 {
                        for j in c0..c1 {
                            s += x.at4(n, ch, i, j);
                        }
                    }
                    out.set4(n, ch, oi, oj, s / ((r1 - r0) * (c1 - c0)) as f64);
                }
            }
        }
    }
    out
}

/// Adaptive average pooling: window `i` covers
/// `[floor(i*n/out), ceil((i+1)*n/out))`.
pub fn adaptive_avg_pool2d(x: &Array, oh: usize, ow: usize) -> Array {
    let bounds = |n: usize, out: usize| -> Vec<(usize, usize)> {
        (0..out)
            .map(|i| {
                let start = (i as f64 * n as f64 / out as f64).floor() as usize;
                let end = ((i + 1) as f64 * n as f64 / out as f64).ceil() as usize;
                (start, end)
            })
            .collect()
    };
    pool_windows(x, &bounds(x.shape[2], oh), &bounds(x.shape[3], ow))
}

/// Non-overlapping average pooling, kernel = stride, no padding.
pub fn window_avg_pool2d(x: &Array, kh: usize, kw: usize) -> Array {
    let rows: Vec<_> = (0..x.shape[2] / kh).map(|i| (i * kh, (i + 1) * kh)).collect();
    let cols: Vec<_> = (0..x.shape[3] / kw).map(|j| (j * kw, (j + 1) * kw)).collect();
    pool_windows(x, &rows, &cols)
}

/// Row-wise softmax of an `m x n` matrix stored row-major.
pub fn softmax_rows(m: &mut [f64], n: usize) {
    for row in m.chunks_mut(n) {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
}

/// Channel shuffle: view `C` as `(groups, C/groups)`, transpose, flatten.
pub fn channel_shuffle(x: &Array, groups: usize) -> Array {
    let (b, c) = (x.shape[0], x.shape[1]);
    let inner: usize = x.shape[2..].iter().product();
    let per = c / groups;
    let mut out = x.clone();
    for n in 0..b {
        for g in 0..groups {
            for i in 0..per {
                let src = g * per + i;
                let dst = i * groups + g;
                for t in 0..inner {
                    out.data[(n * c + dst) * inner + t] = x.data[(n * c + src) * inner + t];
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub enum OracleNorm {
    Group { gamma_h: Vec<f64>, beta_h: Vec<f64>, gamma_w: Vec<f64>, beta_w: Vec<f64> },
    BatchTrain { gamma_h: Vec<f64>, beta_h: Vec<f64>, gamma_w: Vec<f64>, beta_w: Vec<f64> },
}

#[derive(Clone, Debug)]
pub struct SmsaParams {
    pub kernel_sizes: Vec<usize>,
    /// One `[C/K, k_i]` kernel per sub-feature for the H-averaged sequence.
    pub kernels_h: Vec<Vec<f64>>,
    /// Same for the W-averaged sequence; equal to `kernels_h` when shared.
    pub kernels_w: Vec<Vec<f64>>,
    pub norm: OracleNorm,
    pub eps: f64,
    pub norm_first: bool,
}

fn smsa_branch(seq: &Array, p: &SmsaParams, kernels: &[Vec<f64>], gamma: &[f64], beta: &[f64], batch: bool) -> Array {
    let k = p.kernel_sizes.len();
    let norm = |a: &Array| {
        if batch {
            batch_norm_train(a, gamma, beta, p.eps)
        } else {
            group_norm(a, k, gamma, beta, p.eps)
        }
    };
    let conv = |a: &Array| {
        let per = a.shape[1] / k;
        let parts: Vec<_> = (0..k)
            .map(|i| dwconv1d(&channel_slice(a, i * per, (i + 1) * per), &kernels[i], p.kernel_sizes[i], None))
            .collect();
        channel_concat(&parts)
    };
    let mut y = if p.norm_first { conv(&norm(seq)) } else { norm(&conv(seq)) };
    for v in y.data.iter_mut() {
        *v = sigmoid(*v);
    }
    y
}

/// Spatial attention: returns `(output, map_from_h_mean [B,C,W], map_from_w_mean [B,C,H])`.
pub fn smsa(x: &Array, p: &SmsaParams) -> (Array, Array, Array) {
    let (gh, bh, gw, bw, batch) = match &p.norm {
        OracleNorm::Group { gamma_h, beta_h, gamma_w, beta_w } => (gamma_h, beta_h, gamma_w, beta_w, false),
        OracleNorm::BatchTrain { gamma_h, beta_h, gamma_w, beta_w } => (gamma_h, beta_h, gamma_w, beta_w, true),
    };
    let ah = smsa_branch(&mean_over_h(x), p, &p.kernels_h, gh, bh, batch);
    let aw = smsa_branch(&mean_over_w(x), p, &p.kernels_w, gw, bw, batch);
    let (b, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let mut out = x.clone();
    for n in 0..b {
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    out.set4(n, ch, i, j, x.at4(n, ch, i, j) * ah.at3(n, ch, j) * aw.at3(n, ch, i));
                }
            }
        }
    }
    (out, ah, aw)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OraclePooling {
    Adaptive(usize, usize),
    Window(usize, usize),
    None,
}

#[derive(Clone, Debug)]
pub struct PcsaParams {
    pub q: (Vec<f64>, Vec<f64>),
    pub k: (Vec<f64>, Vec<f64>),
    pub v: (Vec<f64>, Vec<f64>),
    pub pooling: OraclePooling,
    pub heads: usize,
    pub shuffle: bool,
    /// Divide logits by `sqrt(N)` instead of `sqrt(C)`.
    pub scale_by_tokens: bool,
}

/// Channel attention: returns `(output, gate [B*C])`.
pub fn pcsa(x: &Array, p: &PcsaParams) -> (Array, Vec<f64>) {
    let (b, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let pooled = match p.pooling {
        OraclePooling::Adaptive(ph, pw) => adaptive_avg_pool2d(x, ph.min(h), pw.min(w)),
        OraclePooling::Window(ph, pw) => window_avg_pool2d(x, ph.min(h), pw.min(w)),
        OraclePooling::None => x.clone(),
    };
    let n = pooled.shape[2] * pooled.shape[3];
    let d = c / p.heads;
    let scale = if p.scale_by_tokens { (n as f64).sqrt() } else { (c as f64).sqrt() };
    let tok = |bb: usize, ch: usize, t: usize| pooled.data[(bb * c + ch) * n + t];
    let mut mixed = Array::zeros(&[b, c, n]);
    for bb in 0..b {
        let proj = |wb: &(Vec<f64>, Vec<f64>), ch: usize, t: usize| wb.0[ch] * tok(bb, ch, t) + wb.1[ch];
        for head in 0..p.heads {
            let off = head * d;
            let mut logits = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    let mut s = 0.0;
                    for t in 0..n {
                        s += proj(&p.q, off + i, t) * proj(&p.k, off + j, t);
                    }
                    logits[i * d + j] = s / scale;
                }
            }
            softmax_rows(&mut logits, d);
            for i in 0..d {
                for t in 0..n {
                    let mut s = 0.0;
                    for j in 0..d {
                        s += logits[i * d + j] * proj(&p.v, off + j, t);
                    }
                    mixed.set3(bb, off + i, t, s);
                }
            }
        }
    }
    if p.shuffle {
        mixed = channel_shuffle(&mixed, p.heads);
    }
    let mut gate = vec![0.0; b * c];
    for bb in 0..b {
        for ch in 0..c {
            let mut s = 0.0;
            for t in 0..n {
                s += mixed.at3(bb, ch, t);
            }
            gate[bb * c + ch] = sigmoid(s / n as f64);
        }
    }
    let mut out = x.clone();
    for bb in 0..b {
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    out.set4(bb, ch, i, j, x.at4(bb, ch, i, j) * gate[bb * c + ch]);
                }
            }
        }
    }
    (out, gate)
}

/// Serial composition; `None` skips a stage.
pub fn scsa(x: &Array, s: Option<&SmsaParams>, c: Option<&PcsaParams>, channel_first: bool) -> Array {
    let spatial = |a: &Array| s.map_or_else(|| a.clone(), |p| smsa(a, p).0);
    let channel = |a: &Array| c.map_or_else(|| a.clone(), |p| pcsa(a, p).0);
    if channel_first {
        spatial(&channel(x))
    } else {
        channel(&spatial(x))
    }
}

/// Parameter lookup by dotted name, e.g. `"smsa.conv.0.weight"`.
pub trait Lookup {
    fn get(&self, name: &str) -> Vec<f64>;
}

impl<F: Fn(&str) -> Vec<f64>> Lookup for F {
    fn get(&self, name: &str) -> Vec<f64> {
        self(name)
    }
}

impl SmsaParams {
    /// Reads the spatial module's tensors registered under `prefix`.
    pub fn from_lookup(
        lookup: &impl Lookup,
        prefix: &str,
        kernel_sizes: &[usize],
        unshared: bool,
        batch_norm: bool,
        norm_first: bool,
        eps: f64,
    ) -> Self {
        let kernels = |conv: &str| -> Vec<Vec<f64>> {
            (0..kernel_sizes.len()).map(|i| lookup.get(&format!("{prefix}.{conv}.{i}.weight"))).collect()
        };
        let kernels_h = kernels("conv");
        let kernels_w = if unshared { kernels("conv_w") } else { kernels_h.clone() };
        let n = if batch_norm { "bn" } else { "gn" };
        let gamma_h = lookup.get(&format!("{prefix}.{n}_h.gamma"));
        let beta_h = lookup.get(&format!("{prefix}.{n}_h.beta"));
        let gamma_w = lookup.get(&format!("{prefix}.{n}_w.gamma"));
        let beta_w = lookup.get(&format!("{prefix}.{n}_w.beta"));
        let norm = if batch_norm {
            OracleNorm::BatchTrain { gamma_h, beta_h, gamma_w, beta_w }
        } else {
            OracleNorm::Group { gamma_h, beta_h, gamma_w, beta_w }
        };
        Self { kernel_sizes: kernel_sizes.to_vec(), kernels_h, kernels_w, norm, eps, norm_first }
    }
}

impl PcsaParams {
    /// Reads the `q`, `k`, `v` projections registered under `prefix`.
    pub fn from_lookup(
        lookup: &impl Lookup,
        prefix: &str,
        pooling: OraclePooling,
        heads: usize,
        shuffle: bool,
        scale_by_tokens: bool,
    ) -> Self {
        let pair = |n: &str| (lookup.get(&format!("{prefix}.{n}.weight")), lookup.get(&format!("{prefix}.{n}.bias")));
        Self { q: pair("q"), k: pair("k"), v: pair("v"), pooling, heads, shuffle, scale_by_tokens }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_hand_example() {
        let x = Array::new(&[1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        let y = dwconv1d(&x, &[1.0, 1.0, 1.0], 3, None);
        assert_eq!(y.data, vec![3.0, 6.0, 9.0, 7.0]);
    }

    #[test]
    fn shuffle_hand_example() {
        let x = Array::new(&[1, 4, 1], vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(channel_shuffle(&x, 2).data, vec![0.0, 2.0, 1.0, 3.0]);
    }

    #[test]
    fn adaptive_bounds_overlap() {
        // 5 -> 3 windows: [0,2) [1,4) [3,5)
        let x = Array::new(&[1, 1, 1, 5], vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        let y = adaptive_avg_pool2d(&x, 1, 3);
        assert_eq!(y.data, vec![0.5, 2.0, 3.5]);
    }
}

use crate::error::{config_err, shape_err, Result};
use crate::tensor::Tensor;

/// Mean over H: `[B, C, H, W] -> [B, C, W]`.
pub fn avg_pool_over_height(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let xs = x.data();
    let mut out = vec![0.0; b * c * w];
    for bc in 0..b * c {
        let plane = &xs[bc * h * w..(bc + 1) * h * w];
        let row = &mut out[bc * w..(bc + 1) * w];
        for hi in 0..h {
            for (o, v) in row.iter_mut().zip(&plane[hi * w..(hi + 1) * w]) {
                *o += v;
            }
        }
        for o in row.iter_mut() {
            *o /= h as f64;
        }
    }
    Ok(Tensor::from_parts(vec![b, c, w], out))
}

pub fn avg_pool_over_height_backward(grad: &Tensor, input_shape: &[usize]) -> Tensor {
    let (b, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let g = grad.data();
    let mut gx = vec![0.0; b * c * h * w];
    for bc in 0..b * c {
        for hi in 0..h {
            for wi in 0..w {
                gx[(bc * h + hi) * w + wi] = g[bc * w + wi] / h as f64;
            }
        }
    }
    Tensor::from_parts(input_shape.to_vec(), gx)
}

/// Mean over W: `[B, C, H, W] -> [B, C, H]`.
pub fn avg_pool_over_width(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let out = x
        .data()
        .chunks_exact(w)
        .map(|row| row.iter().sum::<f64>() / w as f64)
        .collect();
    Ok(Tensor::from_parts(vec![b, c, h], out))
}

pub fn avg_pool_over_width_backward(grad: &Tensor, input_shape: &[usize]) -> Tensor {
    let w = input_shape[3];
    let mut gx = Vec::with_capacity(grad.numel() * w);
    for &g in grad.data() {
        gx.extend(std::iter::repeat_n(g / w as f64, w));
    }
    Tensor::from_parts(input_shape.to_vec(), gx)
}

/// Half-open input ranges `[start, end)` feeding each output cell along one axis.
pub type AxisWindows = Vec<(usize, usize)>;

/// Pooling windows along both spatial axes.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolWindows {
    pub rows: AxisWindows,
    pub cols: AxisWindows,
}

impl PoolWindows {
    /// Adaptive windows `[floor(i*n/out), ceil((i+1)*n/out))`.
    pub fn adaptive(h: usize, w: usize, out_h: usize, out_w: usize) -> Result<Self> {
        if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
            return Err(config_err!(
                "adaptive pool output ({out_h}, {out_w}) must be within 1..=({h}, {w})"
            ));
        }
        Ok(Self { rows: adaptive_axis(h, out_h), cols: adaptive_axis(w, out_w) })
    }

    /// Fixed kernel/stride windows without padding (floor output size).
    pub fn strided(h: usize, w: usize, kernel: (usize, usize), stride: (usize, usize)) -> Result<Self> {
        let (kh, kw) = kernel;
        let (sh, sw) = stride;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 || kh > h || kw > w {
            return Err(config_err!(
                "pool kernel {kernel:?} / stride {stride:?} invalid for input ({h}, {w})"
            ));
        }
        let axis = |n: usize, k: usize, s: usize| -> AxisWindows {
            (0..=(n - k) / s).map(|i| (i * s, i * s + k)).collect()
        };
        Ok(Self { rows: axis(h, kh, sh), cols: axis(w, kw, sw) })
    }

    pub fn out_h(&self) -> usize {
        self.rows.len()
    }

    pub fn out_w(&self) -> usize {
        self.cols.len()
    }

    /// Total number of input reads summed over all output cells of one plane.
    pub fn total_area(&self) -> usize {
        let rh: usize = self.rows.iter().map(|(s, e)| e - s).sum();
        let rw: usize = self.cols.iter().map(|(s, e)| e - s).sum();
        rh * rw
    }
}

fn adaptive_axis(n: usize, out: usize) -> AxisWindows {
    (0..out).map(|i| ((i * n) / out, ((i + 1) * n).div_ceil(out))).collect()
}

pub fn pool2d(x: &Tensor, windows: &PoolWindows) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (oh, ow) = (windows.out_h(), windows.out_w());
    if windows.rows.last().is_some_and(|r| r.1 > h) || windows.cols.last().is_some_and(|r| r.1 > w) {
        return Err(shape_err!("pool windows exceed input ({h}, {w})"));
    }
    let xs = x.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    for bc in 0..b * c {
        let plane = &xs[bc * h * w..(bc + 1) * h * w];
        for &(r0, r1) in &windows.rows {
            for &(c0, c1) in &windows.cols {
                let mut acc = 0.0;
                for hi in r0..r1 {
                    acc += plane[hi * w + c0..hi * w + c1].iter().sum::<f64>();
                }
                out.push(acc / ((r1 - r0) * (c1 - c0)) as f64);
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, c, oh, ow], out))
}

pub fn pool2d_backward(grad: &Tensor, windows: &PoolWindows, input_shape: &[usize]) -> Tensor {
    let (b, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let (oh, ow) = (windows.out_h(), windows.out_w());
    let g = grad.data();
    let mut gx = vec![0.0; b * c * h * w];
    for bc in 0..b * c {
        let plane = &mut gx[bc * h * w..(bc + 1) * h * w];
        for (i, &(r0, r1)) in windows.rows.iter().enumerate() {
            for (j, &(c0, c1)) in windows.cols.iter().enumerate() {
                let share = g[(bc * oh + i) * ow + j] / ((r1 - r0) * (c1 - c0)) as f64;
                for hi in r0..r1 {
                    for v in &mut plane[hi * w + c0..hi * w + c1] {
                        *v += share;
                    }
                }
            }
        }
    }
    Tensor::from_parts(input_shape.to_vec(), gx)
}

pub fn adaptive_avg_pool2d(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    pool2d(x, &PoolWindows::adaptive(h, w, out_h, out_w)?)
}

pub fn avg_pool2d(x: &Tensor, kernel: (usize, usize), stride: (usize, usize)) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    pool2d(x, &PoolWindows::strided(h, w, kernel, stride)?)
}

/// Mean over the last extent, dropping it.
pub fn mean_lastdim(x: &Tensor) -> Result<Tensor> {
    if x.rank() < 2 {
        return Err(shape_err!("mean_lastdim needs rank >= 2, got {:?}", x.shape()));
    }
    let n = *x.shape().last().unwrap();
    let out = x.data().chunks_exact(n).map(|r| r.iter().sum::<f64>() / n as f64).collect();
    Ok(Tensor::from_parts(x.shape()[..x.rank() - 1].to_vec(), out))
}

pub fn mean_lastdim_backward(grad: &Tensor, input_shape: &[usize]) -> Tensor {
    let n = *input_shape.last().unwrap();
    let mut gx = Vec::with_capacity(grad.numel() * n);
    for &g in grad.data() {
        gx.extend(std::iter::repeat_n(g / n as f64, n));
    }
    Tensor::from_parts(input_shape.to_vec(), gx)
}

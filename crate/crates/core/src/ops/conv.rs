use crate::error::{config_err, shape_err, Result};
use crate::tensor::Tensor;

fn check_dwconv(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<(usize, usize, usize, usize)> {
    let (b, c, l) = x.dims3()?;
    let (wc, k) = match *w.shape() {
        [wc, k] => (wc, k),
        _ => return Err(shape_err!("dwconv1d kernel must be [C, k], got {:?}", w.shape())),
    };
    if wc != c {
        return Err(shape_err!("dwconv1d kernel has {wc} channels, input has {c}"));
    }
    if k % 2 == 0 {
        return Err(config_err!("dwconv1d kernel size must be odd, got {k}"));
    }
    if let Some(bias) = bias {
        bias.expect_shape(&[c], "dwconv1d bias")?;
    }
    Ok((b, c, l, k))
}

/// Depth-wise 1D convolution with symmetric zero padding `(k-1)/2`:
/// `out[b,c,l] = sum_j w[c,j] * x[b,c,l+j-(k-1)/2] (+ bias[c])`.
pub fn dwconv1d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (b, c, l, k) = check_dwconv(x, w, bias)?;
    let pad = (k - 1) / 2;
    let xs = x.data();
    let ws = w.data();
    let mut out = vec![0.0; b * c * l];
    for bi in 0..b {
        for ci in 0..c {
            let row = &xs[(bi * c + ci) * l..(bi * c + ci + 1) * l];
            let kern = &ws[ci * k..(ci + 1) * k];
            let base = bias.map_or(0.0, |t| t.data()[ci]);
            let o = &mut out[(bi * c + ci) * l..(bi * c + ci + 1) * l];
            for (li, ov) in o.iter_mut().enumerate() {
                let mut acc = base;
                for (j, &kv) in kern.iter().enumerate() {
                    let src = li + j;
                    if src >= pad && src - pad < l {
                        acc += kv * row[src - pad];
                    }
                }
                *ov = acc;
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, c, l], out))
}

/// Returns `(grad_x, grad_w, grad_bias)`.
pub fn dwconv1d_backward(grad: &Tensor, x: &Tensor, w: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (b, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let k = w.shape()[1];
    let pad = (k - 1) / 2;
    let (xs, ws, g) = (x.data(), w.data(), grad.data());
    let mut gx = vec![0.0; b * c * l];
    let mut gw = vec![0.0; c * k];
    let mut gb = vec![0.0; c];
    for bi in 0..b {
        for ci in 0..c {
            let off = (bi * c + ci) * l;
            for li in 0..l {
                let gv = g[off + li];
                gb[ci] += gv;
                for j in 0..k {
                    let src = li + j;
                    if src >= pad && src - pad < l {
                        gw[ci * k + j] += gv * xs[off + src - pad];
                        gx[off + src - pad] += gv * ws[ci * k + j];
                    }
                }
            }
        }
    }
    (
        Tensor::from_parts(vec![b, c, l], gx),
        Tensor::from_parts(vec![c, k], gw),
        Tensor::from_parts(vec![c], gb),
    )
}

/// Geometry of a 2D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub stride: usize,
    pub padding: usize,
}

struct Conv2dDims {
    b: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn conv2d_dims(x: &Tensor, w: &Tensor, geo: Conv2dGeometry) -> Result<Conv2dDims> {
    let (b, ci, h, wd) = x.dims4()?;
    let (co, wci, kh, kw) = w.dims4()?;
    if wci != ci {
        return Err(shape_err!("conv2d kernel expects {wci} input channels, input has {ci}"));
    }
    if geo.stride == 0 {
        return Err(config_err!("conv2d stride must be >= 1"));
    }
    let (ph, pw) = (h + 2 * geo.padding, wd + 2 * geo.padding);
    if kh > ph || kw > pw {
        return Err(shape_err!("conv2d kernel {kh}x{kw} larger than padded input {ph}x{pw}"));
    }
    let oh = (ph - kh) / geo.stride + 1;
    let ow = (pw - kw) / geo.stride + 1;
    Ok(Conv2dDims { b, ci, h, w: wd, co, kh, kw, oh, ow })
}

/// Unfolds one sample `[Ci, H, W]` into `[Ci*kh*kw, oh*ow]` columns.
fn im2col(x: &[f64], d: &Conv2dDims, geo: Conv2dGeometry, cols: &mut [f64]) {
    let p = d.oh * d.ow;
    for c in 0..d.ci {
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = ((c * d.kh + ki) * d.kw + kj) * p;
                for oi in 0..d.oh {
                    let hi = (oi * geo.stride + ki) as isize - geo.padding as isize;
                    for oj in 0..d.ow {
                        let wi = (oj * geo.stride + kj) as isize - geo.padding as isize;
                        cols[row + oi * d.ow + oj] =
                            if hi >= 0 && (hi as usize) < d.h && wi >= 0 && (wi as usize) < d.w {
                                x[(c * d.h + hi as usize) * d.w + wi as usize]
                            } else {
                                0.0
                            };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], d: &Conv2dDims, geo: Conv2dGeometry, gx: &mut [f64]) {
    let p = d.oh * d.ow;
    for c in 0..d.ci {
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = ((c * d.kh + ki) * d.kw + kj) * p;
                for oi in 0..d.oh {
                    let hi = (oi * geo.stride + ki) as isize - geo.padding as isize;
                    if hi < 0 || hi as usize >= d.h {
                        continue;
                    }
                    for oj in 0..d.ow {
                        let wi = (oj * geo.stride + kj) as isize - geo.padding as isize;
                        if wi >= 0 && (wi as usize) < d.w {
                            gx[(c * d.h + hi as usize) * d.w + wi as usize] += cols[row + oi * d.ow + oj];
                        }
                    }
                }
            }
        }
    }
}

/// Dense 2D convolution (cross-correlation), square stride and zero padding.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, geo: Conv2dGeometry) -> Result<Tensor> {
    let d = conv2d_dims(x, w, geo)?;
    if let Some(bias) = bias {
        bias.expect_shape(&[d.co], "conv2d bias")?;
    }
    let kk = d.ci * d.kh * d.kw;
    let p = d.oh * d.ow;
    let mut cols = vec![0.0; kk * p];
    let mut out = vec![0.0; d.b * d.co * p];
    let ws = w.data();
    for bi in 0..d.b {
        im2col(&x.data()[bi * d.ci * d.h * d.w..(bi + 1) * d.ci * d.h * d.w], &d, geo, &mut cols);
        let o = &mut out[bi * d.co * p..(bi + 1) * d.co * p];
        for co in 0..d.co {
            let orow = &mut o[co * p..(co + 1) * p];
            if let Some(bias) = bias {
                orow.fill(bias.data()[co]);
            }
            for k in 0..kk {
                let wv = ws[co * kk + k];
                for (ov, cv) in orow.iter_mut().zip(&cols[k * p..(k + 1) * p]) {
                    *ov += wv * cv;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![d.b, d.co, d.oh, d.ow], out))
}

/// Returns `(grad_x, grad_w, grad_bias)`.
pub fn conv2d_backward(grad: &Tensor, x: &Tensor, w: &Tensor, geo: Conv2dGeometry) -> Result<(Tensor, Tensor, Tensor)> {
    let d = conv2d_dims(x, w, geo)?;
    let kk = d.ci * d.kh * d.kw;
    let p = d.oh * d.ow;
    let ws = w.data();
    let g = grad.data();
    let mut cols = vec![0.0; kk * p];
    let mut gcols = vec![0.0; kk * p];
    let mut gx = vec![0.0; x.numel()];
    let mut gw = vec![0.0; w.numel()];
    let mut gb = vec![0.0; d.co];
    for bi in 0..d.b {
        im2col(&x.data()[bi * d.ci * d.h * d.w..(bi + 1) * d.ci * d.h * d.w], &d, geo, &mut cols);
        let gs = &g[bi * d.co * p..(bi + 1) * d.co * p];
        gcols.fill(0.0);
        for co in 0..d.co {
            let grow = &gs[co * p..(co + 1) * p];
            gb[co] += grow.iter().sum::<f64>();
            for k in 0..kk {
                let crow = &cols[k * p..(k + 1) * p];
                gw[co * kk + k] += grow.iter().zip(crow).map(|(a, b)| a * b).sum::<f64>();
                let wv = ws[co * kk + k];
                for (gc, gv) in gcols[k * p..(k + 1) * p].iter_mut().zip(grow) {
                    *gc += wv * gv;
                }
            }
        }
        col2im(&gcols, &d, geo, &mut gx[bi * d.ci * d.h * d.w..(bi + 1) * d.ci * d.h * d.w]);
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), gx),
        Tensor::from_parts(w.shape().to_vec(), gw),
        Tensor::from_parts(vec![d.co], gb),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_kernel_is_identity() {
        let x = Tensor::from_fn(&[2, 3, 6], |i| i as f64 * 0.5 - 3.0).unwrap();
        let w = Tensor::from_fn(&[3, 3], |i| if i % 3 == 1 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(dwconv1d(&x, &w, None).unwrap(), x);
    }

    #[test]
    fn box_kernel_sees_zero_border() {
        let x = Tensor::ones(&[1, 1, 4]).unwrap();
        let w = Tensor::ones(&[1, 3]).unwrap();
        assert_eq!(dwconv1d(&x, &w, None).unwrap().data(), &[2.0, 3.0, 3.0, 2.0]);
    }

    #[test]
    fn bias_is_added() {
        let x = Tensor::zeros(&[1, 2, 3]).unwrap();
        let w = Tensor::ones(&[2, 1]).unwrap();
        let b = Tensor::new(&[2], vec![1.5, -2.0]).unwrap();
        assert_eq!(dwconv1d(&x, &w, Some(&b)).unwrap().data(), &[1.5, 1.5, 1.5, -2.0, -2.0, -2.0]);
    }

    #[test]
    fn even_kernel_rejected() {
        let x = Tensor::ones(&[1, 1, 4]).unwrap();
        let w = Tensor::ones(&[1, 4]).unwrap();
        assert!(matches!(dwconv1d(&x, &w, None), Err(crate::Error::Config(_))));
    }

    #[test]
    fn conv2d_output_geometry() {
        let x = Tensor::ones(&[1, 3, 32, 32]).unwrap();
        let w = Tensor::ones(&[16, 3, 3, 3]).unwrap();
        let y = conv2d(&x, &w, None, Conv2dGeometry { stride: 2, padding: 1 }).unwrap();
        assert_eq!(y.shape(), &[1, 16, 16, 16]);
        // interior cell sees all 27 taps, the corner only 12
        assert_eq!(y.data()[16 + 1], 27.0);
        assert_eq!(y.data()[0], 12.0);
    }
}

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// `out[b,c,h,w] = x[b,c,h,w] * along_w[b,c,w] * along_h[b,c,h]`.
///
/// `along_w` varies along W and is broadcast over H; `along_h` varies along
/// H and is broadcast over W.
pub fn broadcast_mul3(x: &Tensor, along_w: &Tensor, along_h: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if along_w.shape() != [b, c, w] || along_h.shape() != [b, c, h] {
        return Err(shape_err!(
            "broadcast_mul3: factors {:?} / {:?} do not broadcast onto {:?} (need [B,C,W] and [B,C,H])",
            along_w.shape(),
            along_h.shape(),
            x.shape()
        ));
    }
    let (xs, aw, ah) = (x.data(), along_w.data(), along_h.data());
    let mut out = Vec::with_capacity(x.numel());
    for bc in 0..b * c {
        for hi in 0..h {
            let a = ah[bc * h + hi];
            let row = &xs[(bc * h + hi) * w..(bc * h + hi + 1) * w];
            out.extend(row.iter().zip(&aw[bc * w..(bc + 1) * w]).map(|(x, bw)| x * bw * a));
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Returns `(grad_x, grad_along_w, grad_along_h)`.
pub fn broadcast_mul3_backward(grad: &Tensor, x: &Tensor, along_w: &Tensor, along_h: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (g, xs, aw, ah) = (grad.data(), x.data(), along_w.data(), along_h.data());
    let mut gx = vec![0.0; x.numel()];
    let mut gw = vec![0.0; b * c * w];
    let mut gh = vec![0.0; b * c * h];
    for bc in 0..b * c {
        for hi in 0..h {
            let a = ah[bc * h + hi];
            for wi in 0..w {
                let idx = (bc * h + hi) * w + wi;
                let bw = aw[bc * w + wi];
                gx[idx] = g[idx] * bw * a;
                gw[bc * w + wi] += g[idx] * xs[idx] * a;
                gh[bc * h + hi] += g[idx] * xs[idx] * bw;
            }
        }
    }
    (
        Tensor::from_parts(x.shape().to_vec(), gx),
        Tensor::from_parts(vec![b, c, w], gw),
        Tensor::from_parts(vec![b, c, h], gh),
    )
}

/// Scales every channel plane of `x[B, C, ...]` by `gate[B, C]`.
pub fn channel_gate(x: &Tensor, gate: &Tensor) -> Result<Tensor> {
    if x.rank() < 3 || gate.shape() != &x.shape()[..2] {
        return Err(shape_err!("channel_gate: gate {:?} does not match {:?}", gate.shape(), x.shape()));
    }
    let inner: usize = x.shape()[2..].iter().product();
    let data = x
        .data()
        .chunks_exact(inner)
        .zip(gate.data())
        .flat_map(|(plane, &g)| plane.iter().map(move |v| v * g))
        .collect();
    Ok(Tensor::from_parts(x.shape().to_vec(), data))
}

/// Returns `(grad_x, grad_gate)`.
pub fn channel_gate_backward(grad: &Tensor, x: &Tensor, gate: &Tensor) -> (Tensor, Tensor) {
    let inner: usize = x.shape()[2..].iter().product();
    let mut gx = Vec::with_capacity(x.numel());
    let mut gg = Vec::with_capacity(gate.numel());
    for ((g, xs), &gv) in grad.data().chunks_exact(inner).zip(x.data().chunks_exact(inner)).zip(gate.data()) {
        gg.push(g.iter().zip(xs).map(|(a, b)| a * b).sum());
        gx.extend(g.iter().map(|g| g * gv));
    }
    (Tensor::from_parts(x.shape().to_vec(), gx), Tensor::from_parts(gate.shape().to_vec(), gg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_and_half_factors() {
        let x = Tensor::from_fn(&[2, 3, 4, 5], |i| i as f64 - 50.0).unwrap();
        let ones_w = Tensor::ones(&[2, 3, 5]).unwrap();
        let ones_h = Tensor::ones(&[2, 3, 4]).unwrap();
        assert_eq!(broadcast_mul3(&x, &ones_w, &ones_h).unwrap(), x);
        let half_w = Tensor::full(&[2, 3, 5], 0.5).unwrap();
        let half_h = Tensor::full(&[2, 3, 4], 0.5).unwrap();
        assert_eq!(broadcast_mul3(&x, &half_w, &half_h).unwrap(), x.scale(0.25));
    }

    #[test]
    fn swapped_factors_rejected() {
        let x = Tensor::ones(&[1, 2, 3, 4]).unwrap();
        let aw = Tensor::ones(&[1, 2, 4]).unwrap();
        let ah = Tensor::ones(&[1, 2, 3]).unwrap();
        assert!(broadcast_mul3(&x, &ah, &aw).is_err());
        assert!(broadcast_mul3(&x, &aw, &ah).is_ok());
    }
}

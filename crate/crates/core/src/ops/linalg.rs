use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// `[B, M, P] x [B, P, N] -> [B, M, N]`.
pub fn batched_matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ba, m, p) = a.dims3()?;
    let (bb, pb, n) = b.dims3()?;
    if ba != bb || p != pb {
        return Err(shape_err!("batched_matmul: {:?} x {:?} incompatible", a.shape(), b.shape()));
    }
    let (xs, ys) = (a.data(), b.data());
    let mut out = vec![0.0; ba * m * n];
    for bi in 0..ba {
        let ab = &xs[bi * m * p..(bi + 1) * m * p];
        let bbm = &ys[bi * p * n..(bi + 1) * p * n];
        let ob = &mut out[bi * m * n..(bi + 1) * m * n];
        for i in 0..m {
            let orow = &mut ob[i * n..(i + 1) * n];
            for k in 0..p {
                let av = ab[i * p + k];
                for (o, bv) in orow.iter_mut().zip(&bbm[k * n..(k + 1) * n]) {
                    *o += av * bv;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![ba, m, n], out))
}

/// Swaps the last two extents of a rank-3 tensor.
pub fn transpose_last2(x: &Tensor) -> Result<Tensor> {
    let (b, m, n) = x.dims3()?;
    let xs = x.data();
    let mut out = vec![0.0; x.numel()];
    for bi in 0..b {
        for i in 0..m {
            for j in 0..n {
                out[(bi * n + j) * m + i] = xs[(bi * m + i) * n + j];
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, n, m], out))
}

/// Returns `(grad_a, grad_b)`.
pub fn batched_matmul_backward(grad: &Tensor, a: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor)> {
    let ga = batched_matmul(grad, &transpose_last2(b)?)?;
    let gb = batched_matmul(&transpose_last2(a)?, grad)?;
    Ok((ga, gb))
}

/// `out[b,c,n] = w[c] * x[b,c,n] + bias[c]`.
pub fn per_channel_affine(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (_, c, n) = x.dims3()?;
    w.expect_shape(&[c], "per_channel_affine weight")?;
    bias.expect_shape(&[c], "per_channel_affine bias")?;
    let (ws, bs) = (w.data(), bias.data());
    let data = x
        .data()
        .chunks_exact(n)
        .enumerate()
        .flat_map(|(row, xs)| {
            let ci = row % c;
            xs.iter().map(move |v| ws[ci] * v + bs[ci])
        })
        .collect();
    Ok(Tensor::from_parts(x.shape().to_vec(), data))
}

/// Returns `(grad_x, grad_w, grad_bias)`.
pub fn per_channel_affine_backward(grad: &Tensor, x: &Tensor, w: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (c, n) = (x.shape()[1], x.shape()[2]);
    let mut gw = vec![0.0; c];
    let mut gb = vec![0.0; c];
    let mut gx = Vec::with_capacity(x.numel());
    for (row, (g, xs)) in grad.data().chunks_exact(n).zip(x.data().chunks_exact(n)).enumerate() {
        let ci = row % c;
        gw[ci] += g.iter().zip(xs).map(|(g, x)| g * x).sum::<f64>();
        gb[ci] += g.iter().sum::<f64>();
        gx.extend(g.iter().map(|g| g * w.data()[ci]));
    }
    (
        Tensor::from_parts(x.shape().to_vec(), gx),
        Tensor::from_parts(vec![c], gw),
        Tensor::from_parts(vec![c], gb),
    )
}

/// Fully connected layer: `x[B, I] . w[O, I]^T + bias[O] -> [B, O]`.
pub fn linear(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (b, i) = match *x.shape() {
        [b, i] => (b, i),
        _ => return Err(shape_err!("linear input must be [B, I], got {:?}", x.shape())),
    };
    let o = match *w.shape() {
        [o, wi] if wi == i => o,
        _ => return Err(shape_err!("linear weight must be [O, {i}], got {:?}", w.shape())),
    };
    bias.expect_shape(&[o], "linear bias")?;
    let mut out = Vec::with_capacity(b * o);
    for xr in x.data().chunks_exact(i) {
        for (wr, bv) in w.data().chunks_exact(i).zip(bias.data()) {
            out.push(bv + xr.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    Ok(Tensor::from_parts(vec![b, o], out))
}

/// Returns `(grad_x, grad_w, grad_bias)`.
pub fn linear_backward(grad: &Tensor, x: &Tensor, w: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (b, i) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[0];
    let (g, xs, ws) = (grad.data(), x.data(), w.data());
    let mut gx = vec![0.0; b * i];
    let mut gw = vec![0.0; o * i];
    let mut gb = vec![0.0; o];
    for bi in 0..b {
        for oi in 0..o {
            let gv = g[bi * o + oi];
            gb[oi] += gv;
            for k in 0..i {
                gw[oi * i + k] += gv * xs[bi * i + k];
                gx[bi * i + k] += gv * ws[oi * i + k];
            }
        }
    }
    (
        Tensor::from_parts(vec![b, i], gx),
        Tensor::from_parts(vec![o, i], gw),
        Tensor::from_parts(vec![o], gb),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_right_factor() {
        let a = Tensor::from_fn(&[2, 3, 3], |i| i as f64).unwrap();
        let eye = Tensor::from_fn(&[2, 3, 3], |i| if i % 9 % 4 == 0 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(batched_matmul(&a, &eye).unwrap(), a);
    }

    #[test]
    fn scalar_matrices() {
        let a = Tensor::new(&[1, 1, 1], vec![3.0]).unwrap();
        let b = Tensor::new(&[1, 1, 1], vec![-2.5]).unwrap();
        assert_eq!(batched_matmul(&a, &b).unwrap().data(), &[-7.5]);
    }

    #[test]
    fn inner_mismatch() {
        let a = Tensor::ones(&[1, 2, 3]).unwrap();
        let b = Tensor::ones(&[1, 2, 3]).unwrap();
        assert!(batched_matmul(&a, &b).is_err());
    }

    #[test]
    fn affine_identity_and_zero() {
        let x = Tensor::from_fn(&[2, 3, 4], |i| i as f64 - 7.0).unwrap();
        let one = Tensor::ones(&[3]).unwrap();
        let zero = Tensor::zeros(&[3]).unwrap();
        assert_eq!(per_channel_affine(&x, &one, &zero).unwrap(), x);
        assert!(per_channel_affine(&x, &zero, &zero).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transpose_round_trip() {
        let x = Tensor::from_fn(&[2, 3, 5], |i| i as f64).unwrap();
        let t = transpose_last2(&x).unwrap();
        assert_eq!(t.shape(), &[2, 5, 3]);
        assert_eq!(transpose_last2(&t).unwrap(), x);
    }
}

use crate::error::Result;
use crate::tensor::Tensor;

fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Backward from the saved output `y = sigmoid(x)`.
pub fn sigmoid_backward(grad: &Tensor, y: &Tensor) -> Tensor {
    let data = grad.data().iter().zip(y.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
    Tensor::from_parts(y.shape().to_vec(), data)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(grad: &Tensor, x: &Tensor) -> Tensor {
    let data = grad.data().iter().zip(x.data()).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

/// Softmax over the last extent with max subtraction.
pub fn softmax_lastdim(x: &Tensor) -> Result<Tensor> {
    let n = *x.shape().last().unwrap();
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks_exact(n) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|v| (v - m).exp()));
        let z: f64 = out[start..].iter().sum();
        for v in &mut out[start..] {
            *v /= z;
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Backward from the saved output `y = softmax(x)`.
pub fn softmax_lastdim_backward(grad: &Tensor, y: &Tensor) -> Tensor {
    let n = *y.shape().last().unwrap();
    let mut gx = Vec::with_capacity(y.numel());
    for (g, p) in grad.data().chunks_exact(n).zip(y.data().chunks_exact(n)) {
        let dot: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
        gx.extend(g.iter().zip(p).map(|(g, p)| p * (g - dot)));
    }
    Tensor::from_parts(y.shape().to_vec(), gx)
}

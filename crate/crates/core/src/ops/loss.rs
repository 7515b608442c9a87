use crate::error::{shape_err, Result};
use crate::ops::activation::softmax_lastdim;
use crate::tensor::Tensor;

/// Mean softmax cross-entropy of `logits[B, K]` against class indices.
/// Returns the scalar loss as a `[1]` tensor and the class probabilities.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(Tensor, Tensor)> {
    let (b, k) = match *logits.shape() {
        [b, k] => (b, k),
        _ => return Err(shape_err!("cross entropy logits must be [B, K], got {:?}", logits.shape())),
    };
    if labels.len() != b {
        return Err(shape_err!("{} labels for a batch of {b}", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(shape_err!("label {bad} out of range for {k} classes"));
    }
    let probs = softmax_lastdim(logits)?;
    let loss = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            // log-softmax directly for accuracy at saturated logits
            let row = &logits.data()[i * k..(i + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - row[l]
        })
        .sum::<f64>()
        / b as f64;
    Ok((Tensor::from_parts(vec![1], vec![loss]), probs))
}

pub fn softmax_cross_entropy_backward(grad: &Tensor, probs: &Tensor, labels: &[usize]) -> Tensor {
    let k = probs.shape()[1];
    let b = labels.len();
    let scale = grad.data()[0] / b as f64;
    let mut g = probs.data().to_vec();
    for (i, &l) in labels.iter().enumerate() {
        g[i * k + l] -= 1.0;
    }
    for v in &mut g {
        *v *= scale;
    }
    Tensor::from_parts(probs.shape().to_vec(), g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let logits = Tensor::zeros(&[3, 4]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 1, 3]).unwrap();
        assert!((loss.data()[0] - 4f64.ln()).abs() < 1e-14);
        assert!(softmax_cross_entropy(&logits, &[0, 1, 4]).is_err());
    }
}

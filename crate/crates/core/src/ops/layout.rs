use crate::error::{config_err, shape_err, Result};
use crate::tensor::Tensor;

/// `(outer, channels, inner)` view of a tensor with channels on axis 1.
fn channel_view(x: &Tensor) -> Result<(usize, usize, usize)> {
    if x.rank() < 2 {
        return Err(shape_err!("channel ops need rank >= 2, got {:?}", x.shape()));
    }
    Ok((x.shape()[0], x.shape()[1], x.shape()[2..].iter().product()))
}

/// Channels `[start, end)` of `x`.
pub fn slice_channels(x: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let (b, c, inner) = channel_view(x)?;
    if start >= end || end > c {
        return Err(shape_err!("channel slice {start}..{end} out of range for {c} channels"));
    }
    let mut out = Vec::with_capacity(b * (end - start) * inner);
    for bi in 0..b {
        out.extend_from_slice(&x.data()[(bi * c + start) * inner..(bi * c + end) * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[1] = end - start;
    Ok(Tensor::from_parts(shape, out))
}

/// Scatters a channel-slice gradient back into a zero tensor of `input_shape`.
pub fn slice_channels_backward(grad: &Tensor, start: usize, input_shape: &[usize]) -> Tensor {
    let (b, c) = (input_shape[0], input_shape[1]);
    let inner: usize = input_shape[2..].iter().product();
    let width = grad.shape()[1];
    let mut gx = vec![0.0; input_shape.iter().product()];
    for bi in 0..b {
        gx[(bi * c + start) * inner..(bi * c + start + width) * inner]
            .copy_from_slice(&grad.data()[bi * width * inner..(bi + 1) * width * inner]);
    }
    Tensor::from_parts(input_shape.to_vec(), gx)
}

/// Splits channels into `k` equal consecutive parts.
pub fn channel_split(x: &Tensor, k: usize) -> Result<Vec<Tensor>> {
    let (_, c, _) = channel_view(x)?;
    if k == 0 || c % k != 0 {
        return Err(config_err!("cannot split {c} channels into {k} equal parts"));
    }
    let width = c / k;
    (0..k).map(|i| slice_channels(x, i * width, (i + 1) * width)).collect()
}

pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| shape_err!("concat_channels of zero tensors"))?;
    let (b, _, inner) = channel_view(first)?;
    for p in parts {
        let (pb, _, pi) = channel_view(p)?;
        if pb != b || pi != inner || p.shape()[2..] != first.shape()[2..] {
            return Err(shape_err!("concat_channels: {:?} incompatible with {:?}", p.shape(), first.shape()));
        }
    }
    let total: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut out = Vec::with_capacity(b * total * inner);
    for bi in 0..b {
        for p in parts {
            let w = p.shape()[1];
            out.extend_from_slice(&p.data()[bi * w * inner..(bi + 1) * w * inner]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[1] = total;
    Ok(Tensor::from_parts(shape, out))
}

/// Source channel for each output channel of a `groups`-way shuffle:
/// reshape to `(groups, C/groups)`, transpose, flatten.
pub fn shuffle_permutation(c: usize, groups: usize) -> Result<Vec<usize>> {
    if groups == 0 || c % groups != 0 {
        return Err(config_err!("channel_shuffle: {c} channels not divisible by {groups} groups"));
    }
    let per = c / groups;
    Ok((0..c).map(|j| (j % groups) * per + j / groups).collect())
}

fn permute_channels(x: &Tensor, source: &[usize]) -> Result<Tensor> {
    let (b, c, inner) = channel_view(x)?;
    let mut out = Vec::with_capacity(x.numel());
    for bi in 0..b {
        for &s in source {
            out.extend_from_slice(&x.data()[(bi * c + s) * inner..(bi * c + s + 1) * inner]);
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (j, &s) in perm.iter().enumerate() {
        inv[s] = j;
    }
    inv
}

pub fn channel_shuffle(x: &Tensor, groups: usize) -> Result<Tensor> {
    let (_, c, _) = channel_view(x)?;
    permute_channels(x, &shuffle_permutation(c, groups)?)
}

/// Inverse of [`channel_shuffle`] with the same `groups`.
pub fn channel_unshuffle(x: &Tensor, groups: usize) -> Result<Tensor> {
    let (_, c, _) = channel_view(x)?;
    permute_channels(x, &invert(&shuffle_permutation(c, groups)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let x = Tensor::from_fn(&[2, 8, 3], |i| i as f64).unwrap();
        let parts = channel_split(&x, 4).unwrap();
        assert_eq!(parts.len(), 4);
        assert!(parts.iter().all(|p| p.shape() == [2, 2, 3]));
        assert_eq!(channel_split(&x, 1).unwrap()[0], x);
        assert!(matches!(channel_split(&x, 3), Err(crate::Error::Config(_))));
    }

    #[test]
    fn concat_rejects_mismatch() {
        let a = Tensor::ones(&[2, 2, 3]).unwrap();
        let b = Tensor::ones(&[2, 2, 4]).unwrap();
        let c = Tensor::ones(&[1, 2, 3]).unwrap();
        assert!(concat_channels(&[&a, &b]).is_err());
        assert!(concat_channels(&[&a, &c]).is_err());
    }

    #[test]
    fn shuffle_order() {
        assert_eq!(shuffle_permutation(4, 2).unwrap(), vec![0, 2, 1, 3]);
        assert_eq!(shuffle_permutation(6, 1).unwrap(), (0..6).collect::<Vec<_>>());
        assert!(shuffle_permutation(6, 4).is_err());
        let x = Tensor::from_fn(&[1, 4, 1], |i| i as f64).unwrap();
        assert_eq!(channel_shuffle(&x, 2).unwrap().data(), &[0.0, 2.0, 1.0, 3.0]);
    }
}

//! Dense row-major tensors of rank 1 to 4.
//!
//! Extents are positional: `[B, C, H, W]` for images, `[B, C, L]` for
//! sequences. Storage is always `f64`; [`DType`] only selects the on-disk
//! payload width.

use rand::Rng;

use crate::error::{shape_err, Error, Result};

pub const MAX_RANK: usize = 4;

/// On-disk element type of a tensor dump.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DType {
    #[default]
    F64,
    F32,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F64 => 0,
            DType::F32 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F64),
            1 => Ok(DType::F32),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(shape_err!("rank must be 1..={MAX_RANK}, got shape {shape:?}"));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(shape_err!("all extents must be >= 1, got {shape:?}"));
    }
    Ok(())
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_shape(shape)?;
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(shape_err!(
                "shape {shape:?} holds {numel} elements but {} were given",
                data.len()
            ));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    /// Panics on an invalid shape; for internal kernels whose shapes are
    /// already validated.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        check_shape(shape)?;
        let numel = shape.iter().product();
        Ok(Self { shape: shape.to_vec(), data: vec![value; numel] })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 1.0)
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::from_parts(other.shape.clone(), vec![0.0; other.data.len()])
    }

    /// Builds a tensor by evaluating `f` at every flat index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Result<Self> {
        check_shape(shape)?;
        let numel: usize = shape.iter().product();
        Ok(Self { shape: shape.to_vec(), data: (0..numel).map(f).collect() })
    }

    /// Uniform samples in `[low, high)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], low: f64, high: f64, rng: &mut R) -> Result<Self> {
        Self::from_fn(shape, |_| rng.random_range(low..high))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [b, c, l] => Ok((b, c, l)),
            _ => Err(shape_err!("expected rank-3 tensor, got shape {:?}", self.shape)),
        }
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(shape_err!("expected rank-4 tensor, got shape {:?}", self.shape)),
        }
    }

    /// Same data viewed under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Sum of elementwise products; shapes must agree.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.expect_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.expect_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.expect_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn expect_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err!("shape mismatch: {:?} vs {:?}", self.shape, other.shape));
        }
        Ok(())
    }

    pub fn expect_shape(&self, shape: &[usize], what: &str) -> Result<()> {
        if self.shape != shape {
            return Err(shape_err!("{what}: expected shape {shape:?}, got {:?}", self.shape));
        }
        Ok(())
    }
}

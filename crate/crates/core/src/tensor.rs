//! Dense row-major tensors, the carrier type for every numeric operation.
//!
//! Two element types are supported: `f32` for training and benchmarks, `f64`
//! for finite-difference gradient checks (central differences drown in
//! rounding noise at single precision).

use crate::error::{Error, Result};
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Scalar element of a [`Tensor`]. Implemented for `f32` and `f64`.
pub trait Element:
    Copy
    + PartialOrd
    + std::fmt::Debug
    + Default
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn maximum(self, other: Self) -> Self;
    fn minimum(self, other: Self) -> Self;
}

macro_rules! impl_element {
    ($t:ty) => {
        impl Element for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            fn maximum(self, other: Self) -> Self {
                <$t>::max(self, other)
            }
            fn minimum(self, other: Self) -> Self {
                <$t>::min(self, other)
            }
        }
    };
}

impl_element!(f32);
impl_element!(f64);

/// Dense n-dimensional array, row-major, rank 1 to 4.
///
/// Images are `(channels, height, width)`; convolution weights are
/// `(out_channels, in_channels, kh, kw)`; transposed-convolution weights are
/// `(in_channels, out_channels, kh, kw)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(dims: &[usize], data: Vec<T>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 4 {
            return Err(Error::shape(format!(
                "tensor rank must be 1..=4, got {}",
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::shape(format!("zero-sized dimension in {dims:?}")));
        }
        let len: usize = dims.iter().try_fold(1usize, |acc: usize, &d| {
            acc.checked_mul(d)
                .ok_or_else(|| Error::shape(format!("dimension overflow in {dims:?}")))
        })?;
        if len != data.len() {
            return Err(Error::shape(format!(
                "dims {dims:?} imply {len} elements, data has {}",
                data.len()
            )));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let len = dims.iter().product();
        Tensor::new(dims, vec![T::ZERO; len]).expect("valid dims")
    }

    pub fn filled(dims: &[usize], value: T) -> Self {
        let len = dims.iter().product();
        Tensor::new(dims, vec![value; len]).expect("valid dims")
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len = dims.iter().product();
        Tensor::new(dims, (0..len).map(&mut f).collect()).expect("valid dims")
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// (channels, height, width) of a rank-3 tensor.
    pub fn shape3(&self) -> Result<(usize, usize, usize)> {
        if self.rank() != 3 {
            return Err(Error::shape(format!(
                "expected rank-3 tensor, got dims {:?}",
                self.dims
            )));
        }
        Ok((self.dims[0], self.dims[1], self.dims[2]))
    }

    /// (out, in, kh, kw) of a rank-4 tensor.
    pub fn shape4(&self) -> Result<(usize, usize, usize, usize)> {
        if self.rank() != 4 {
            return Err(Error::shape(format!(
                "expected rank-4 tensor, got dims {:?}",
                self.dims
            )));
        }
        Ok((self.dims[0], self.dims[1], self.dims[2], self.dims[3]))
    }

    #[inline]
    pub fn at3(&self, c: usize, y: usize, x: usize) -> T {
        let (_, h, w) = (self.dims[0], self.dims[1], self.dims[2]);
        self.data[(c * h + y) * w + x]
    }

    #[inline]
    pub fn set3(&mut self, c: usize, y: usize, x: usize, v: T) {
        let (h, w) = (self.dims[1], self.dims[2]);
        self.data[(c * h + y) * w + x] = v;
    }

    /// Contiguous row `y` of channel `c` in a rank-3 tensor.
    #[inline]
    pub fn row3(&self, c: usize, y: usize) -> &[T] {
        let (h, w) = (self.dims[1], self.dims[2]);
        let base = (c * h + y) * w;
        &self.data[base..base + w]
    }

    #[inline]
    pub fn row3_mut(&mut self, c: usize, y: usize) -> &mut [T] {
        let (h, w) = (self.dims[1], self.dims[2]);
        let base = (c * h + y) * w;
        &mut self.data[base..base + w]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "elementwise op on {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(Tensor {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Accumulate `scale * other` into self.
    pub fn add_scaled(&mut self, other: &Self, scale: T) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "add_scaled on {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn clamp(&self, lo: T, hi: T) -> Self {
        self.map(|v| v.maximum(lo).minimum(hi))
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Sum of all elements, accumulated in f64.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64()).sum()
    }

    /// Inner product with another tensor of identical dims, in f64.
    pub fn dot_f64(&self, other: &Self) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "dot on {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.to_f64() * b.to_f64())
            .sum())
    }
}

//! Dense tensors and the layer set the grasp networks are built from.
//!
//! Tensors are row-major; image tensors use NCHW layout throughout. Layer
//! kernels live in [`conv`] and [`pool`] as plain functions so inference can
//! call them directly, while [`tape`] records the same calls for training.

mod conv;
mod float;
mod optim;
mod pool;
pub mod tape;

use std::fmt;

use rand::Rng;

pub use conv::{
    conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward, ConvGradients, ConvSpec,
};
pub use float::{DType, Float};
pub use optim::{Adam, AdamConfig};
pub use pool::{maxpool2d, maxpool2d_backward, MaxPoolOutput};
pub use tape::{Gradients, ParamSet, Tape, Var};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Float> Tensor<T> {
    /// Wraps `data` with `shape`; every dimension must be positive and their
    /// product must equal `data.len()`.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Config(format!("invalid tensor shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Config(format!(
                "shape {shape:?} holds {numel} values but {} were given",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "invalid tensor shape {shape:?}"
        );
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Values drawn uniformly from `[low, high)`.
    pub fn uniform<R: Rng + ?Sized>(
        shape: impl Into<Vec<usize>>,
        low: f64,
        high: f64,
        rng: &mut R,
    ) -> Self {
        let mut t = Self::zeros(shape);
        for v in &mut t.data {
            *v = T::of_f64(rng.random_range(low..high));
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The shape as `[n, c, h, w]`, or a configuration error for other ranks.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::Config(format!(
                "expected an NCHW tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of_f64(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Contract(format!(
                "elementwise operands differ in shape: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    /// Inner product accumulated in `f64`.
    pub fn dot(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "dot of mismatched shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.as_f64() * b.as_f64())
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .map(|v| v.as_f64().abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Batch item `index` of an NCHW tensor as a `[1, c, h, w]` tensor.
    pub fn batch_item(&self, index: usize) -> Result<Self> {
        let [n, c, h, w] = self.dims4()?;
        if index >= n {
            return Err(Error::Contract(format!(
                "batch index {index} out of range for batch of {n}"
            )));
        }
        let plane = c * h * w;
        Ok(Self {
            shape: vec![1, c, h, w],
            data: self.data[index * plane..(index + 1) * plane].to_vec(),
        })
    }

    /// Concatenates NCHW tensors along the batch dimension.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Contract("cannot stack an empty list".into()))?;
        let [_, c, h, w] = first.dims4()?;
        let mut n = 0;
        let mut data = Vec::new();
        for item in items {
            let [m, ci, hi, wi] = item.dims4()?;
            if (ci, hi, wi) != (c, h, w) {
                return Err(Error::Contract(format!(
                    "cannot stack {:?} with {:?}",
                    first.shape, item.shape
                )));
            }
            n += m;
            data.extend_from_slice(&item.data);
        }
        Self::new([n, c, h, w], data)
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:?}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

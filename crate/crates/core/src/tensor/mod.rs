//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Operations are recorded on a [`Graph`] in execution order; [`Graph::backward`]
//! replays that record in reverse to accumulate gradients. A graph may be
//! differentiated once; building a fresh graph per forward pass keeps the
//! iterative attack loop free of silent gradient accumulation.

mod graph;

pub use graph::{Graph, NodeId};

use crate::error::{Error, Result};

/// Scalar element type for tensors. `f32` for training runs, `f64` for
/// gradient verification.
pub trait Element:
    num_traits::Float + num_traits::FromPrimitive + num_traits::ToPrimitive + std::fmt::Debug + Send + Sync + 'static
{
    /// Lossy conversion from `f64`.
    fn elem(v: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(v).unwrap()
    }
    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap()
    }
}

impl Element for f32 {}
impl Element for f64 {}

/// Dense n-dimensional array. A scalar is represented by an empty shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dimension(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape, data: vec![T::zero(); numel] }
    }

    pub fn full(shape: Vec<usize>, v: T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape, data: vec![v; numel] }
    }

    pub fn scalar(v: T) -> Self {
        Tensor { shape: vec![], data: vec![v] }
    }

    pub fn from_f64_slice(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Tensor::new(shape, data.iter().map(|&v| T::elem(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::usage(format!("item() on tensor of shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
    }

    pub fn map<U: Element>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        self.map(|v| v.as_f64())
    }

    pub fn to_f32(&self) -> Tensor<f32> {
        self.map(|v| v.as_f64() as f32)
    }
}

pub(crate) fn check_same_shape<T: Element>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dimension(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Output spatial size for conv/pool: floor((extent + 2*padding - window) / stride) + 1.
pub fn out_extent(extent: usize, window: usize, padding: usize, stride: usize) -> Result<usize> {
    let padded = extent + 2 * padding;
    if window > padded {
        return Err(Error::dimension(format!(
            "window {window} exceeds padded extent {padded}"
        )));
    }
    Ok((padded - window) / stride + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn scalar_has_empty_shape() {
        let t = Tensor::scalar(3.0f64);
        assert!(t.shape().is_empty());
        assert_eq!(t.numel(), 1);
        assert_eq!(t.item().unwrap(), 3.0);
    }

    #[test]
    fn out_extent_formula() {
        // H' = (H + 2p - k)/s + 1, floor division
        assert_eq!(out_extent(5, 3, 0, 1).unwrap(), 3);
        assert_eq!(out_extent(5, 3, 1, 1).unwrap(), 5);
        assert_eq!(out_extent(6, 2, 0, 2).unwrap(), 3);
        assert_eq!(out_extent(5, 2, 0, 2).unwrap(), 2);
        assert!(out_extent(2, 5, 0, 1).is_err());
    }
}

//! Dense-tensor engine with reverse-mode automatic differentiation.
//!
//! Everything the two GANs need and nothing more: contiguous channel-last
//! tensors, a replayable tape of primitive ops, an Adam optimizer and a
//! finite-difference gradient checker. Training runs at `f32`; gradient
//! checks run the same graph code at `f64`.

pub mod adam;
pub mod gradcheck;
pub mod kernels;
pub mod nn;
pub mod tape;

use num_traits::{Float, NumCast};
use thiserror::Error;

pub use adam::AdamState;
pub use gradcheck::grad_check;
pub use tape::{NodeId, Tape};

/// Element type the engine is generic over. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float + NumCast + Send + Sync + std::fmt::Debug + std::fmt::Display + std::iter::Sum + 'static
{
    /// Lossy conversion from `f64`, used for op constants.
    fn from_f64(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("finite f64 converts to any float type")
    }
    fn as_f64(self) -> f64 {
        <f64 as NumCast>::from(self).expect("float widens to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("empty batch passed to {op}")]
    EmptyBatch { op: &'static str },
    #[error("invalid convolution geometry: {detail}")]
    InvalidConv { detail: String },
    #[error("backward target must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("no parameter named {0:?} in store")]
    UnknownParam(String),
    #[error("parameter {name:?} has shape {got:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        got: Vec<usize>,
        expected: Vec<usize>,
    },
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Contiguous n-dimensional array, channel-last layout `[B, spatial.., C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor, rejecting shape/length disagreement and non-finite
    /// values up front.
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "Tensor::new",
                detail: format!("shape {:?} implies {} values, got {}", shape, numel, data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "Tensor::new" });
        }
        Ok(Self { shape: shape.to_vec(), data, requires_grad: false })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![T::zero(); numel], requires_grad: false }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; numel], requires_grad: false }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![1], data: vec![value], requires_grad: false }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..numel).map(&mut f).collect(), requires_grad: false }
    }

    pub fn requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn needs_grad(&self) -> bool {
        self.requires_grad
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

    /// Element casting between float widths (f32 checkpoints vs f64 checks).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
        }
    }
}

/// Stable handle into a [`VarStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named parameter set for one model. Iteration order is insertion order,
/// which fixes the checkpoint layout and the Adam moment alignment.
#[derive(Debug, Clone, Default)]
pub struct VarStore<T> {
    entries: indexmap::IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> VarStore<T> {
    pub fn new() -> Self {
        Self { entries: indexmap::IndexMap::new() }
    }

    pub fn add(&mut self, name: &str, tensor: Tensor<T>) -> ParamId {
        let (idx, _) = self.entries.insert_full(name.to_string(), tensor);
        ParamId(idx)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0]
    }

    pub fn id_of(&self, name: &str) -> Result<ParamId> {
        self.entries
            .get_index_of(name)
            .map(ParamId)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Replaces every parameter with the same-named tensor from `named`,
    /// rejecting shape drift. Used when restoring checkpoints.
    pub fn load_named(&mut self, named: &[(String, Tensor<T>)]) -> Result<()> {
        for (name, tensor) in named {
            let id = self.id_of(name)?;
            let current = self.get(id);
            if current.shape() != tensor.shape() {
                return Err(TensorError::ParamShape {
                    name: name.clone(),
                    got: tensor.shape().to_vec(),
                    expected: current.shape().to_vec(),
                });
            }
            *self.get_mut(id) = tensor.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_new_checks_shape_product() {
        let err = Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { .. }));
        let ok = Tensor::<f32>::new(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(ok.len(), 6);
    }

    #[test]
    fn tensor_new_rejects_non_finite() {
        let err = Tensor::<f64>::new(&[2], vec![1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { .. }));
        let err = Tensor::<f32>::new(&[1], vec![f32::INFINITY]).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { .. }));
    }

    #[test]
    fn var_store_roundtrips_by_name() {
        let mut vs = VarStore::<f32>::new();
        let a = vs.add("layer.w", Tensor::filled(&[2, 2], 1.5));
        assert_eq!(vs.id_of("layer.w").unwrap(), a);
        assert!(vs.id_of("missing").is_err());
        let named: Vec<_> =
            vs.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        let mut vs2 = VarStore::<f32>::new();
        vs2.add("layer.w", Tensor::zeros(&[2, 2]));
        vs2.load_named(&named).unwrap();
        assert_eq!(vs2.get(a).data(), vs.get(a).data());
    }

    #[test]
    fn load_named_rejects_shape_drift() {
        let mut vs = VarStore::<f32>::new();
        vs.add("w", Tensor::zeros(&[2, 2]));
        let err = vs
            .load_named(&[("w".to_string(), Tensor::zeros(&[3]))])
            .unwrap_err();
        assert!(matches!(err, TensorError::ParamShape { .. }));
    }
}

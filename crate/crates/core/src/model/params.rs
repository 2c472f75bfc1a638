use alloc::string::String;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

/// Index of a tensor inside a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// A named, row-major, 32-bit tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// All trainable tensors of a model, in a fixed order set by the model layout.
/// Storage is `f32`; arithmetic runs on an `f64` [`Weights`] snapshot.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore {
    tensors: Vec<Tensor>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tensors(tensors: Vec<Tensor>) -> Self {
        Self { tensors }
    }

    pub(crate) fn push(&mut self, name: String, shape: Vec<usize>, data: Vec<f32>) -> ParamId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push(Tensor { name, shape, data });
        ParamId(self.tensors.len() - 1)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name).map(ParamId)
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    pub fn weights(&self) -> Weights {
        Weights(self.tensors.iter().map(|t| t.data.iter().map(|&x| f64::from(x)).collect()).collect())
    }

    /// Overwrites every tensor with `w`, rounded to `f32`.
    pub fn assign(&mut self, w: &Weights) {
        for (t, src) in self.tensors.iter_mut().zip(&w.0) {
            for (d, &s) in t.data.iter_mut().zip(src) {
                *d = s as f32;
            }
        }
    }

    /// True when names and shapes line up with `other`.
    pub fn same_layout(&self, other: &ParameterStore) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }
}

/// `f64` view of a parameter store, indexed like it.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights(pub Vec<Vec<f64>>);

impl Index<ParamId> for Weights {
    type Output = [f64];

    fn index(&self, id: ParamId) -> &[f64] {
        &self.0[id.0]
    }
}

impl IndexMut<ParamId> for Weights {
    fn index_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.0[id.0]
    }
}

/// Gradient buffers aligned with a [`ParameterStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn zeros_like(store: &ParameterStore) -> Self {
        Self(store.tensors().iter().map(|t| alloc::vec![0.0; t.data.len()]).collect())
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.0.iter_mut().flatten() {
            *g *= factor;
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().flatten().all(|g| g.is_finite())
    }
}

impl Index<ParamId> for Gradients {
    type Output = [f64];

    fn index(&self, id: ParamId) -> &[f64] {
        &self.0[id.0]
    }
}

impl IndexMut<ParamId> for Gradients {
    fn index_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.0[id.0]
    }
}

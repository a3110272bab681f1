use std::collections::HashMap;

use ndarray::Array2;

use crate::error::EngineError;

/// A named learnable matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub value: Array2<f64>,
}

impl ParamTensor {
    pub fn shape(&self) -> (usize, usize) {
        self.value.dim()
    }
}

/// Ordered collection of uniquely named parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: Vec<ParamTensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) -> Result<(), EngineError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(EngineError::Invalid {
                op: "param_store",
                reason: format!("duplicate parameter name `{name}`"),
            });
        }
        self.index.insert(name.clone(), self.tensors.len());
        self.tensors.push(ParamTensor { name, value });
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }
}

/// Gradients aligned with a [`ParamStore`]'s order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradMap(Vec<Array2<f64>>);

impl GradMap {
    pub fn zeros_like(store: &ParamStore) -> Self {
        GradMap(store.tensors().iter().map(|t| Array2::zeros(t.shape())).collect())
    }

    pub fn as_slice(&self) -> &[Array2<f64>] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [Array2<f64>] {
        &mut self.0
    }

    pub fn add_assign(&mut self, other: &GradMap) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|g| g.iter().all(|x| x.is_finite()))
    }
}

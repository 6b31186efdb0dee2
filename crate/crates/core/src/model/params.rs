use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f64>,
}

/// Ordered collection of named parameter tensors.
///
/// Modules address their tensors by position; names are only used for
/// checkpoints, error messages and checksums.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: ArrayD<f64>) -> usize {
        self.params.push(Param { name: name.into(), value });
        self.params.len() - 1
    }

    pub fn push_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        self.push(name, ArrayD::zeros(IxDyn(shape)))
    }

    pub fn push_normal<R: Rng + ?Sized>(&mut self, name: impl Into<String>, shape: &[usize], std: f64, rng: &mut R) -> usize {
        let normal = Normal::new(0.0, std).expect("finite std");
        let len: usize = shape.iter().product();
        let data: Vec<f64> = (0..len).map(|_| normal.sample(rng)).collect();
        self.push(name, ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches"))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, i: usize) -> &ArrayD<f64> {
        &self.params[i].value
    }

    pub fn get_mut(&mut self, i: usize) -> &mut ArrayD<f64> {
        &mut self.params[i].value
    }

    pub fn name(&self, i: usize) -> &str {
        &self.params[i].name
    }

    pub fn find(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: ArrayD::zeros(p.value.raw_dim()) })
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for p in &mut self.params {
            p.value.fill(0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for p in &mut self.params {
            p.value.mapv_inplace(|v| v * factor);
        }
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.params.iter().flat_map(|p| p.value.iter()).map(|v| v * v).sum()
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update((p.name.len() as u64).to_le_bytes());
            h.update(p.name.as_bytes());
            h.update((p.value.ndim() as u64).to_le_bytes());
            for d in p.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.value.iter() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Same names and shapes, in the same order.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape())
    }

    pub fn check_layout(&self, other: &ParamSet, what: &str) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::contract(format!("{what}: parameter layout mismatch")))
        }
    }
}

//! Flat, ordered parameter storage shared by every trainable component.
//!
//! Layers hold [`ParamId`]s into a [`ParamStore`]; a [`Graph`](crate::graph::Graph)
//! binds the whole store as gradient-tracked leaves before a forward pass.
//! Declaration order is the serialization order of checkpoints and the
//! iteration order of the optimizer.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    /// Weight matrix `[fan_in × fan_out]` drawn from U(−1/√fan_in, 1/√fan_in).
    pub fn add_weight<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.add(name, Tensor::uniform(&[fan_in, fan_out], bound, rng))
    }

    /// Learned lookup table `[rows × dim]`, initialized like a weight with fan-in `dim`.
    pub fn add_table<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        dim: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (dim as f64).sqrt();
        self.add(name, Tensor::uniform(&[rows, dim], bound, rng))
    }

    pub fn add_bias(&mut self, name: impl Into<String>, dim: usize) -> ParamId {
        self.add(name, Tensor::zeros(&[dim]))
    }

    pub fn add_const(&mut self, name: impl Into<String>, dim: usize, value: f64) -> ParamId {
        self.add(name, Tensor::full(&[dim], value))
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

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Total scalar count across all parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Copy values from `other` for every parameter whose name exists in
    /// both stores. Returns how many were copied.
    pub fn copy_matching(&mut self, other: &ParamStore) -> Result<usize> {
        let mut copied = 0;
        for (name, dst) in self.names.iter().zip(self.tensors.iter_mut()) {
            if let Some(pos) = other.names.iter().position(|n| n == name) {
                let src = &other.tensors[pos];
                if dst.shape() != src.shape() {
                    return Err(Error::Shape {
                        op: "copy_matching",
                        lhs: dst.shape().to_vec(),
                        rhs: src.shape().to_vec(),
                    });
                }
                dst.data_mut().copy_from_slice(src.data());
                copied += 1;
            }
        }
        Ok(copied)
    }

    /// Overwrite every value from another store with the same layout.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Config("parameter layouts differ".into()));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.shape() != src.shape() {
                return Err(Error::Shape {
                    op: "copy_from",
                    lhs: dst.shape().to_vec(),
                    rhs: src.shape().to_vec(),
                });
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

//! Minimal reverse-mode automatic differentiation over dense f64 tensors,
//! plus the dense networks, Adam-family optimizer and EMA tracking built on
//! top of it. Everything is 64-bit and deterministic under a fixed seed.

mod checkpoint;
mod nn;
mod optim;
mod tape;

pub use checkpoint::{
    load_checkpoint, restore_section, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use nn::{Activation, DenseNetworkConfig, Mlp};
pub use optim::{ema_update, OptimizerState};
pub use tape::{NodeId, Tape};

use crate::error::{ArsqError, Result};

/// A dense tensor: flat data plus shape, with an optional gradient of the
/// same length.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() || shape.contains(&0) {
            return Err(ArsqError::ShapeMismatch(format!(
                "shape {shape:?} does not fit {} elements",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// A named parameter owned by a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// Flat store of named parameters. Networks hold indices into one of these,
/// so the same network structure can be evaluated against its online set or
/// a target copy with identical layout.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.entries.push(Param {
            name: name.into(),
            tensor,
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Param {
        &self.entries[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.entries[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn data(&self, idx: usize) -> &[f64] {
        &self.entries[idx].tensor.data
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|p| p.name == name)
    }

    /// Accumulate `grad` into the parameter's gradient buffer.
    pub fn accumulate_grad(&mut self, idx: usize, grad: &[f64]) {
        let t = &mut self.entries[idx].tensor;
        match &mut t.grad {
            Some(g) => {
                for (gi, &d) in g.iter_mut().zip(grad) {
                    *gi += d;
                }
            }
            None => t.grad = Some(grad.to_vec()),
        }
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.entries {
            p.tensor.grad = None;
        }
    }

    /// Copy parameter values (not grads) from another set with the same
    /// layout.
    pub fn copy_values_from(&mut self, other: &ParamSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(ArsqError::ShapeMismatch(format!(
                "param sets differ in length: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for (dst, src) in self.entries.iter_mut().zip(other.entries.iter()) {
            if dst.tensor.shape != src.tensor.shape {
                return Err(ArsqError::ShapeMismatch(format!(
                    "parameter '{}' shape mismatch",
                    dst.name
                )));
            }
            dst.tensor.data.copy_from_slice(&src.tensor.data);
        }
        Ok(())
    }
}

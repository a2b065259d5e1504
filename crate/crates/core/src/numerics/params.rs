use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::rng::RngStream;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// A trainable tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub id: String,
    pub value: Tensor,
    pub grad: Tensor,
}

static NEXT_TAG: AtomicU64 = AtomicU64::new(1);

fn fresh_tag() -> u64 {
    NEXT_TAG.fetch_add(1, Ordering::Relaxed)
}

/// Ordered collection of named parameters.
///
/// Each store carries a process-unique tag so that a tape holding parameters
/// from several stores routes gradients back to the right one. Clones keep
/// the tag; equality ignores it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamStore {
    #[serde(skip, default = "fresh_tag")]
    tag: u64,
    params: Vec<Parameter>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self { tag: fresh_tag(), params: Vec::new() }
    }
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn tag(&self) -> u64 {
        self.tag
    }

    /// A copy with a fresh tag, independent of `self` on shared tapes.
    pub fn detached_copy(&self) -> Self {
        Self { tag: fresh_tag(), params: self.params.clone() }
    }

    pub fn add(&mut self, id: impl Into<String>, value: Tensor) -> ParamId {
        let id = id.into();
        assert!(self.find(&id).is_none(), "duplicate parameter id {id}");
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { id, value, grad });
        ParamId(self.params.len() - 1)
    }

    /// Glorot-uniform initialised matrix `[fan_in, fan_out]`.
    pub fn add_glorot(&mut self, id: &str, fan_in: usize, fan_out: usize, rng: &mut RngStream) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| (2.0 * rng.uniform() - 1.0) * limit).collect();
        self.add(id, Tensor::from_parts(vec![fan_in, fan_out], data))
    }

    pub fn add_zeros(&mut self, id: &str, shape: &[usize]) -> ParamId {
        self.add(id, Tensor::zeros(shape))
    }

    pub fn find(&self, id: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.id == id).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Copy values from `other`, which must hold the same ids and shapes.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if other.params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "parameter count {} vs {}",
                other.params.len(),
                self.params.len()
            )));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.id != src.id || dst.value.shape() != src.value.shape() {
                return Err(Error::Shape(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    dst.id,
                    dst.value.shape(),
                    src.id,
                    src.value.shape()
                )));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }

    pub fn clip_values(&mut self, bound: f64) {
        for p in &mut self.params {
            p.value.data_mut().iter_mut().for_each(|w| *w = w.clamp(-bound, bound));
        }
    }
}

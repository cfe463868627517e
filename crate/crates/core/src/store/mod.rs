//! Compressed model-state storage.
//!
//! Each parameter tensor keeps its half-precision copy dense, with explicit
//! zeros at pruned coordinates, so forward and backward can use dense
//! kernels. The single-precision parameters, both gradient precisions and
//! the two Adam moments hold values only for unpruned coordinates, in the
//! order of one shared [`PrunedIndexSet`].

mod checkpoint;
mod memory;

use std::sync::Arc;

use half::f16;

use crate::error::{dim_err, Result};
use crate::pruner::PrunedIndexSet;
use crate::tensor::{Buffer, DType, Tensor};

pub use crate::sparsity::Sparsity;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointLayer};
pub use memory::{memory_model, MemoryReport};

/// Gathers `dense[ind[k]]` for every `k`.
pub fn compress<T: Copy>(dense: &[T], ind: &PrunedIndexSet) -> Result<Vec<T>> {
    if dense.len() != ind.dense_len() {
        return dim_err(format!(
            "compress {}: dense length {} but index set covers {}",
            ind.layer_id(),
            dense.len(),
            ind.dense_len()
        ));
    }
    Ok(ind.indices().iter().map(|&i| dense[i as usize]).collect())
}

/// Scatters `values` into a zero-filled buffer of `ind.dense_len()`.
pub fn expand<T: Copy>(values: &[T], ind: &PrunedIndexSet, zero: T) -> Result<Vec<T>> {
    if values.len() != ind.len() {
        return dim_err(format!(
            "expand {}: {} values for {} indices",
            ind.layer_id(),
            values.len(),
            ind.len()
        ));
    }
    let mut out = vec![zero; ind.dense_len()];
    for (&i, &v) in ind.indices().iter().zip(values) {
        out[i as usize] = v;
    }
    Ok(out)
}

/// [`compress`] on a tensor of either precision.
pub fn compress_tensor(dense: &Tensor, ind: &PrunedIndexSet) -> Result<Buffer> {
    Ok(match dense.buffer() {
        Buffer::Half(v) => Buffer::Half(compress(v, ind)?),
        Buffer::Single(v) => Buffer::Single(compress(v, ind)?),
    })
}

/// [`expand`] into a tensor of `shape`.
pub fn expand_tensor(values: &Buffer, ind: &PrunedIndexSet, shape: &[usize]) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    if n != ind.dense_len() {
        return dim_err(format!(
            "expand {}: shape {shape:?} holds {n} elements, index set covers {}",
            ind.layer_id(),
            ind.dense_len()
        ));
    }
    match values {
        Buffer::Half(v) => Tensor::from_f16(shape, expand(v, ind, f16::ZERO)?),
        Buffer::Single(v) => Tensor::from_f32(shape, expand(v, ind, 0.0)?),
    }
}

/// Compressed per-tensor state. All five value buffers are indexed by the
/// single `ind` this struct holds.
#[derive(Clone, Debug)]
pub struct CompressedState {
    ind: Arc<PrunedIndexSet>,
    pub(crate) theta32: Vec<f32>,
    pub(crate) grad16: Vec<f16>,
    pub(crate) grad32: Vec<f32>,
    pub(crate) adam_m: Vec<f32>,
    pub(crate) adam_v: Vec<f32>,
}

impl CompressedState {
    fn new(ind: Arc<PrunedIndexSet>, theta32: Vec<f32>) -> Self {
        let n = ind.len();
        debug_assert_eq!(theta32.len(), n);
        Self {
            ind,
            theta32,
            grad16: vec![f16::ZERO; n],
            grad32: vec![0.0; n],
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
        }
    }

    pub fn ind(&self) -> &Arc<PrunedIndexSet> {
        &self.ind
    }

    pub fn len(&self) -> usize {
        self.ind.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ind.is_empty()
    }

    pub fn theta32(&self) -> &[f32] {
        &self.theta32
    }

    pub fn grad16(&self) -> &[f16] {
        &self.grad16
    }

    pub fn grad32(&self) -> &[f32] {
        &self.grad32
    }

    pub fn adam_m(&self) -> &[f32] {
        &self.adam_m
    }

    pub fn adam_v(&self) -> &[f32] {
        &self.adam_v
    }

    fn buffers_consistent(&self) -> bool {
        let n = self.ind.len();
        [
            self.theta32.len(),
            self.grad16.len(),
            self.grad32.len(),
            self.adam_m.len(),
            self.adam_v.len(),
        ]
        .iter()
        .all(|&l| l == n)
    }
}

#[derive(Clone, Debug)]
pub struct LayerState {
    shape: Vec<usize>,
    pub(crate) theta16: Tensor,
    pub(crate) compressed: CompressedState,
}

impl LayerState {
    pub fn layer_id(&self) -> &str {
        self.compressed.ind.layer_id()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn theta16(&self) -> &Tensor {
        &self.theta16
    }

    pub fn compressed(&self) -> &CompressedState {
        &self.compressed
    }

    /// Rebuilds the dense half copy from the compressed single parameters:
    /// a compressed half copy of `theta32`, expanded through `ind`.
    pub(crate) fn refresh_theta16(&mut self) -> Result<()> {
        let half_copy: Vec<f16> = self
            .compressed
            .theta32
            .iter()
            .map(|&v| f16::from_f32(v))
            .collect();
        self.theta16 = expand_tensor(&Buffer::Half(half_copy), &self.compressed.ind, &self.shape)?;
        Ok(())
    }
}

/// Which transient buffers [`ModelState::measured_bytes`] counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AccountingMode {
    /// Persistent buffers only.
    SteadyState,
    /// Also the compressed half copy of `theta32` the optimizer creates
    /// while down-casting.
    #[default]
    Peak,
}

#[derive(Clone, Debug, Default)]
pub struct ModelState {
    pub(crate) layers: Vec<LayerState>,
    pub(crate) adam_step: u32,
    pub(crate) skipped_steps: u64,
    pub(crate) grad_pending: bool,
    /// Bumped by every optimizer step, applied or skipped.
    pub(crate) generation: u64,
}

impl ModelState {
    /// Builds the state from dense single-precision parameters and their
    /// index sets. Pruned coordinates are dropped from every compressed
    /// buffer and zeroed in the half copy.
    pub fn from_dense(params: Vec<(Tensor, Arc<PrunedIndexSet>)>) -> Result<Self> {
        let mut layers = Vec::with_capacity(params.len());
        for (dense, ind) in params {
            if dense.dtype() != DType::Single {
                return dim_err(format!(
                    "layer {}: parameters must be single precision",
                    ind.layer_id()
                ));
            }
            let theta32 = compress(dense.as_f32().unwrap_or_default(), &ind)?;
            layers.push(Self::layer(dense.shape().to_vec(), ind, theta32)?);
        }
        Ok(Self {
            layers,
            ..Default::default()
        })
    }

    pub(crate) fn layer(
        shape: Vec<usize>,
        ind: Arc<PrunedIndexSet>,
        theta32: Vec<f32>,
    ) -> Result<LayerState> {
        let n: usize = shape.iter().product();
        if n != ind.dense_len() {
            return dim_err(format!(
                "layer {}: shape {shape:?} holds {n} elements, index set covers {}",
                ind.layer_id(),
                ind.dense_len()
            ));
        }
        if theta32.len() != ind.len() {
            return dim_err(format!(
                "layer {}: {} values for {} indices",
                ind.layer_id(),
                theta32.len(),
                ind.len()
            ));
        }
        let mut layer = LayerState {
            theta16: Tensor::zeros(&shape, DType::Half)?,
            shape,
            compressed: CompressedState::new(ind, theta32),
        };
        layer.refresh_theta16()?;
        Ok(layer)
    }

    pub fn layers(&self) -> &[LayerState] {
        &self.layers
    }

    pub fn adam_step(&self) -> u32 {
        self.adam_step
    }

    pub fn skipped_steps(&self) -> u64 {
        self.skipped_steps
    }

    pub fn grad_pending(&self) -> bool {
        self.grad_pending
    }

    /// Total parameter count before pruning.
    pub fn phi(&self) -> usize {
        self.layers.iter().map(|l| l.theta16.len()).sum()
    }

    /// Byte footprint of the actual buffers: 2 per dense half parameter;
    /// per unpruned coordinate 2 (half grad) + 4 (single params) + 4
    /// (single grad) + 8 (Adam moments) + 4 (index); plus 2 per unpruned
    /// coordinate for the optimizer's half copy in [`AccountingMode::Peak`].
    pub fn measured_bytes(&self, mode: AccountingMode) -> u64 {
        self.layers
            .iter()
            .map(|l| {
                let c = &l.compressed;
                let mut b = l.theta16.size_bytes()
                    + c.grad16.len() * 2
                    + c.theta32.len() * 4
                    + c.grad32.len() * 4
                    + (c.adam_m.len() + c.adam_v.len()) * 4
                    + c.ind.len() * 4;
                if mode == AccountingMode::Peak {
                    b += c.theta32.len() * 2;
                }
                b as u64
            })
            .sum()
    }

    /// Dense single-precision parameters (zeros at pruned coordinates).
    pub fn dense_theta32(&self) -> Result<Vec<Tensor>> {
        self.layers
            .iter()
            .map(|l| {
                expand_tensor(
                    &Buffer::Single(l.compressed.theta32.clone()),
                    &l.compressed.ind,
                    &l.shape,
                )
            })
            .collect()
    }

    /// Checks the structural invariants: buffer lengths match the index
    /// set, the half copy equals the expanded rounded single parameters.
    pub fn check_invariants(&self) -> Result<()> {
        for l in &self.layers {
            if !l.compressed.buffers_consistent() {
                return Err(crate::Error::State(format!(
                    "layer {}: buffer length drift",
                    l.layer_id()
                )));
            }
            let half_copy: Vec<f16> = l
                .compressed
                .theta32
                .iter()
                .map(|&v| f16::from_f32(v))
                .collect();
            let expected = expand_tensor(&Buffer::Half(half_copy), &l.compressed.ind, &l.shape)?;
            if !expected.bits_eq(&l.theta16) {
                return Err(crate::Error::State(format!(
                    "layer {}: theta16 out of sync",
                    l.layer_id()
                )));
            }
            if !self.grad_pending && l.compressed.grad16.iter().any(|g| g.to_bits() != 0) {
                return Err(crate::Error::State(format!(
                    "layer {}: stale half gradients",
                    l.layer_id()
                )));
            }
        }
        Ok(())
    }
}

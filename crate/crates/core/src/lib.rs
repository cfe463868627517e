//! Sparsity-aware model-state compression for mixed-precision training.
//!
//! Dense half-precision parameters stay uncompressed so the forward and
//! backward passes run on dense kernels. Every other piece of model state
//! (single-precision parameters, both gradient precisions, Adam moments) is
//! stored only for unpruned coordinates and shares one linearized index
//! tensor per layer.
//!
//! The crate also carries the analytical cost models used to reason about
//! what those memory savings buy in hybrid pipeline + data parallel training.

pub mod error;
pub mod pruner;
pub mod sim;
pub mod sparsity;
pub mod store;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use pruner::{PruneInput, PruneScope, PrunedIndexSet};
pub use store::{AccountingMode, CompressedState, LayerState, MemoryReport, ModelState, Sparsity};
pub use tensor::{DType, Tensor};

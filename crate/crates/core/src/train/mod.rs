//! Mixed-precision training on compressed model state, plus the dense
//! masked reference used to check it.

mod adam;
mod data;
mod model;
mod reference;
mod samo;

use std::sync::Arc;

use serde::Serialize;

pub use adam::OptimizerConfig;
pub use data::{Batch, Dataset};
pub use model::{
    backward_pass, forward_pass, loss_and_grad, loss_gradients, loss_only, Activations,
    DenseLayerGrad, GradResidency, LinearSpec, Loss, ModelSpec, ParamSlots,
};
pub use reference::{DenseParam, ReferenceState};
pub use samo::{backward, forward, optimizer_step, ForwardPass, StepOutcome};

use crate::error::Result;
use crate::pruner::{magnitude_prune, PruneInput, PruneScope, PrunedIndexSet};
use crate::sparsity::Sparsity;
use crate::store::{AccountingMode, ModelState};
use crate::tensor::{DType, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainSettings {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

/// One row of the per-step log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f32,
    pub grad_norm: f64,
    pub skipped: bool,
    pub peak_state_bytes: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    /// Step at which the loss went non-finite, if it did.
    pub diverged_at: Option<usize>,
}

impl Trajectory {
    pub fn losses(&self) -> Vec<f32> {
        self.records.iter().map(|r| r.loss).collect()
    }
}

/// Seeded initial parameters and their magnitude-pruned index sets.
pub fn prepare(
    spec: &ModelSpec,
    seed: u64,
    p: Sparsity,
    scope: PruneScope,
) -> Result<(Vec<Tensor>, Vec<Arc<PrunedIndexSet>>)> {
    let init = spec.init_params(seed)?;
    let layout = spec.params();
    let inputs: Vec<PruneInput<'_>> = layout
        .iter()
        .zip(&init)
        .map(|((id, _, prunable), t)| PruneInput {
            layer_id: id,
            values: t,
            prunable: *prunable,
        })
        .collect();
    let sets = magnitude_prune(&inputs, p, scope)?
        .into_iter()
        .map(Arc::new)
        .collect();
    Ok((init, sets))
}

/// Trains on the compressed state.
pub fn train(
    spec: &ModelSpec,
    data: &Dataset,
    settings: &TrainSettings,
    init: &[Tensor],
    ind: &[Arc<PrunedIndexSet>],
) -> Result<(ModelState, Trajectory)> {
    settings.optimizer.validate()?;
    let mut state =
        ModelState::from_dense(init.iter().cloned().zip(ind.iter().cloned()).collect())?;
    samo::check_layout(&state, spec)?;
    let mut traj = Trajectory::default();
    for step in 0..settings.steps {
        let batch = data.batch(step, settings.batch_size, DType::Half)?;
        let fwd = samo::forward(&state, spec, &batch)?;
        let loss = fwd.loss;
        if !loss.is_finite() {
            traj.records.push(StepRecord {
                step,
                loss,
                grad_norm: f64::NAN,
                skipped: true,
                peak_state_bytes: 0,
            });
            traj.diverged_at = Some(step);
            break;
        }
        let residency = samo::backward(&mut state, spec, fwd, settings.optimizer.loss_scale)?;
        let out = samo::optimizer_step(&mut state, &settings.optimizer)?;
        traj.records.push(StepRecord {
            step,
            loss,
            grad_norm: out.grad_norm,
            skipped: out.skipped,
            peak_state_bytes: state.measured_bytes(AccountingMode::Peak)
                + residency.peak_bytes as u64,
        });
    }
    Ok((state, traj))
}

/// Trains the dense reference. With `ind` the gradients and parameters are
/// masked; without it this is unpruned mixed-precision training.
pub fn train_reference_masked(
    spec: &ModelSpec,
    data: &Dataset,
    settings: &TrainSettings,
    init: &[Tensor],
    ind: Option<&[Arc<PrunedIndexSet>]>,
) -> Result<(ReferenceState, Trajectory)> {
    settings.optimizer.validate()?;
    let mut state = ReferenceState::new(spec, init, ind)?;
    let mut traj = Trajectory::default();
    for step in 0..settings.steps {
        let batch = data.batch(step, settings.batch_size, DType::Half)?;
        let (acts, loss) = state.forward(spec, &batch)?;
        if !loss.is_finite() {
            traj.records.push(StepRecord {
                step,
                loss,
                grad_norm: f64::NAN,
                skipped: true,
                peak_state_bytes: 0,
            });
            traj.diverged_at = Some(step);
            break;
        }
        let residency = state.backward(spec, &acts, &batch.y, settings.optimizer.loss_scale)?;
        let out = state.optimizer_step(&settings.optimizer)?;
        traj.records.push(StepRecord {
            step,
            loss,
            grad_norm: out.grad_norm,
            skipped: out.skipped,
            peak_state_bytes: state.state_bytes() + residency.peak_bytes as u64,
        });
    }
    Ok((state, traj))
}

/// `|a - b| / max(|a|, |b|)`, zero when the values are equal.
pub fn relative_difference(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Largest relative difference between the compressed trainer's
/// single-precision parameters and the reference's, over every coordinate.
pub fn max_parameter_deviation(samo: &ModelState, reference: &ReferenceState) -> Result<f64> {
    let dense = samo.dense_theta32()?;
    if dense.len() != reference.params.len() {
        return Ok(f64::INFINITY);
    }
    let mut worst = 0.0f64;
    for (t, p) in dense.iter().zip(&reference.params) {
        let a = t.as_f32().unwrap_or_default();
        if a.len() != p.theta32.len() {
            return Ok(f64::INFINITY);
        }
        for (&x, &y) in a.iter().zip(&p.theta32) {
            worst = worst.max(relative_difference(x as f64, y as f64));
        }
    }
    Ok(worst)
}

/// Largest per-step relative loss difference; infinite when the runs have
/// different lengths.
pub fn max_loss_deviation(a: &Trajectory, b: &Trajectory) -> f64 {
    if a.records.len() != b.records.len() {
        return f64::INFINITY;
    }
    a.records
        .iter()
        .zip(&b.records)
        .map(|(x, y)| relative_difference(x.loss as f64, y.loss as f64))
        .fold(0.0, f64::max)
}

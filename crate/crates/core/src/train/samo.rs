//! Forward, backward and optimizer phases on the compressed state.

use std::cell::RefCell;
use std::rc::Rc;

use half::f16;

use super::adam::{adam_update, OptimizerConfig};
use super::data::Batch;
use super::model::{
    backward_pass, forward_pass, loss_and_grad, Activations, GradResidency, ModelSpec,
};
use crate::error::{Error, Result};
use crate::store::{compress, ModelState};
use crate::tensor::{DType, Tensor};

/// Result of [`forward`]; consumed by [`backward`].
#[derive(Debug)]
pub struct ForwardPass {
    pub acts: Activations,
    pub loss: f32,
    targets: Vec<f32>,
    generation: u64,
}

/// What [`optimizer_step`] did.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub skipped: bool,
    /// L2 norm of the unscaled single-precision gradients (NaN/inf when the
    /// step was skipped on overflow).
    pub grad_norm: f64,
}

pub(crate) fn check_layout(state: &ModelState, spec: &ModelSpec) -> Result<()> {
    let params = spec.params();
    if params.len() != state.layers().len() {
        return Err(Error::Dimension(format!(
            "model has {} parameter tensors, state has {}",
            params.len(),
            state.layers().len()
        )));
    }
    for ((id, shape, _), layer) in params.iter().zip(state.layers()) {
        if shape.as_slice() != layer.shape() {
            return Err(Error::Dimension(format!(
                "{id}: expected shape {shape:?}, state holds {:?}",
                layer.shape()
            )));
        }
    }
    Ok(())
}

/// Dense half-precision forward pass; pruned weights are zeros in
/// `theta16`, so nothing differs from ordinary mixed precision.
pub fn forward(state: &ModelState, spec: &ModelSpec, batch: &Batch) -> Result<ForwardPass> {
    check_layout(state, spec)?;
    if batch.x.dtype() != DType::Half {
        return Err(Error::Dimension(
            "forward expects a half-precision batch".into(),
        ));
    }
    let params: Vec<&Tensor> = state.layers.iter().map(|l| &l.theta16).collect();
    let acts = forward_pass(spec, &params, &batch.x)?;
    let (loss, _) = loss_and_grad(spec.loss, &acts.output, &batch.y, 1.0)?;
    Ok(ForwardPass {
        acts,
        loss,
        targets: batch.y.clone(),
        generation: state.generation,
    })
}

/// Backward pass of `loss_scale · loss`. Each layer's dense half gradient
/// is compressed into `grad16` and dropped before the next layer down is
/// processed. Returns the dense-gradient residency observed.
pub fn backward(
    state: &mut ModelState,
    spec: &ModelSpec,
    fwd: ForwardPass,
    loss_scale: f32,
) -> Result<GradResidency> {
    if fwd.generation != state.generation {
        return Err(Error::State(
            "forward pass is stale; run forward again".into(),
        ));
    }
    if state.grad_pending {
        return Err(Error::State(
            "gradients already pending; run the optimizer step first".into(),
        ));
    }
    let slots = spec.slots();
    let (_, d_out) = loss_and_grad(spec.loss, &fwd.acts.output, &fwd.targets, loss_scale)?;
    let tracker = Rc::new(RefCell::new(GradResidency::default()));

    let mut compressed: Vec<Option<Vec<f16>>> = vec![None; state.layers.len()];
    {
        let params: Vec<&Tensor> = state.layers.iter().map(|l| &l.theta16).collect();
        let layers = &state.layers;
        backward_pass(spec, &params, &fwd.acts, d_out, &tracker, |g| {
            let s = slots[g.layer];
            let gather = |t: &Tensor, slot: usize| -> Result<Vec<f16>> {
                let ind = layers[slot].compressed.ind();
                compress(
                    t.as_f16()
                        .ok_or_else(|| Error::State("half gradients expected".into()))?,
                    ind,
                )
            };
            compressed[s.weight] = Some(gather(&g.weight, s.weight)?);
            if let (Some(b), Some(db)) = (s.bias, g.bias.as_ref()) {
                compressed[b] = Some(gather(db, b)?);
            }
            Ok(())
        })?;
    }
    for (layer, grad) in state.layers.iter_mut().zip(compressed) {
        layer.compressed.grad16 =
            grad.ok_or_else(|| Error::State(format!("no gradient for {}", layer.layer_id())))?;
    }
    state.grad_pending = true;
    let residency = tracker.borrow().clone();
    Ok(residency)
}

/// The three element-wise optimizer phases, all on compressed buffers:
/// up-cast and unscale the half gradients, Adam update, then down-cast
/// `theta32` to a compressed half copy and expand it into `theta16`.
/// Non-finite unscaled gradients skip the update.
pub fn optimizer_step(state: &mut ModelState, cfg: &OptimizerConfig) -> Result<StepOutcome> {
    if !state.grad_pending {
        return Err(Error::State(
            "optimizer step without pending gradients".into(),
        ));
    }
    let mut finite = true;
    let mut sq = 0.0f64;
    for layer in &mut state.layers {
        let c = &mut layer.compressed;
        for (g32, g16) in c.grad32.iter_mut().zip(&c.grad16) {
            *g32 = g16.to_f32() / cfg.loss_scale;
            finite &= g32.is_finite();
            sq += (*g32 as f64) * (*g32 as f64);
        }
    }
    state.grad_pending = false;
    state.generation += 1;
    let grad_norm = sq.sqrt();
    if !finite {
        state.skipped_steps += 1;
        for layer in &mut state.layers {
            layer.compressed.grad16.fill(f16::ZERO);
            layer.compressed.grad32.fill(0.0);
        }
        return Ok(StepOutcome {
            skipped: true,
            grad_norm: f64::INFINITY,
        });
    }

    state.adam_step += 1;
    let corr = cfg.bias_corrections(state.adam_step);
    for layer in &mut state.layers {
        let c = &mut layer.compressed;
        for k in 0..c.theta32.len() {
            adam_update(
                cfg,
                corr,
                &mut c.theta32[k],
                &mut c.adam_m[k],
                &mut c.adam_v[k],
                c.grad32[k],
            );
        }
        c.grad16.fill(f16::ZERO);
        layer.refresh_theta16()?;
    }
    Ok(StepOutcome {
        skipped: false,
        grad_norm,
    })
}

//! Dense masked reference trainer.
//!
//! Every state stays dense. Gradients are masked right after the backward
//! pass and single-precision parameters after each update; otherwise the
//! arithmetic, precisions and ordering match the compressed trainer. With
//! no mask this is plain dense mixed-precision training.

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;

use half::f16;

use super::adam::{adam_update, OptimizerConfig};
use super::data::Batch;
use super::model::{
    backward_pass, forward_pass, loss_and_grad, DenseLayerGrad, GradResidency, ModelSpec,
};
use super::samo::StepOutcome;
use crate::error::{Error, Result};
use crate::pruner::PrunedIndexSet;
use crate::tensor::{DType, Tensor};

#[derive(Clone, Debug)]
pub struct DenseParam {
    pub id: String,
    pub shape: Vec<usize>,
    pub mask: Option<Vec<bool>>,
    pub theta16: Tensor,
    pub theta32: Vec<f32>,
    pub grad16: Vec<f16>,
    pub grad32: Vec<f32>,
    pub adam_m: Vec<f32>,
    pub adam_v: Vec<f32>,
}

impl DenseParam {
    fn apply_mask<T: Copy>(mask: &Option<Vec<bool>>, values: &mut [T], zero: T) {
        if let Some(m) = mask {
            for (v, &keep) in values.iter_mut().zip(m) {
                if !keep {
                    *v = zero;
                }
            }
        }
    }

    fn refresh_theta16(&mut self) -> Result<()> {
        self.theta16 = Tensor::from_values(&self.shape, &self.theta32, DType::Half)?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ReferenceState {
    pub params: Vec<DenseParam>,
    pub adam_step: u32,
    pub skipped_steps: u64,
    grad_pending: bool,
}

impl ReferenceState {
    /// Dense state from single-precision parameters; `ind` (one set per
    /// parameter) turns on masking.
    pub fn new(
        spec: &ModelSpec,
        init: &[Tensor],
        ind: Option<&[Arc<PrunedIndexSet>]>,
    ) -> Result<Self> {
        let layout = spec.params();
        if init.len() != layout.len() || ind.is_some_and(|i| i.len() != layout.len()) {
            return Err(Error::Dimension(
                "parameter count does not match the model".into(),
            ));
        }
        let mut params = Vec::with_capacity(init.len());
        for (i, ((id, shape, _), t)) in layout.into_iter().zip(init).enumerate() {
            if t.shape() != shape.as_slice() || t.dtype() != DType::Single {
                return Err(Error::Dimension(format!(
                    "{id}: expected single-precision {shape:?}"
                )));
            }
            let n = t.len();
            let mask = ind.map(|sets| sets[i].mask());
            if mask.as_ref().is_some_and(|m| m.len() != n) {
                return Err(Error::Dimension(format!(
                    "{id}: index set covers a different length"
                )));
            }
            let mut theta32 = t.to_f32_vec();
            DenseParam::apply_mask(&mask, &mut theta32, 0.0);
            let mut p = DenseParam {
                id,
                shape,
                mask,
                theta16: Tensor::zeros(t.shape(), DType::Half)?,
                theta32,
                grad16: vec![f16::ZERO; n],
                grad32: vec![0.0; n],
                adam_m: vec![0.0; n],
                adam_v: vec![0.0; n],
            };
            p.refresh_theta16()?;
            params.push(p);
        }
        Ok(Self {
            params,
            adam_step: 0,
            skipped_steps: 0,
            grad_pending: false,
        })
    }

    pub fn phi(&self) -> usize {
        self.params.iter().map(|p| p.theta32.len()).sum()
    }

    /// Bytes of dense mixed-precision model state: 20 per parameter.
    pub fn state_bytes(&self) -> u64 {
        20 * self.phi() as u64
    }

    pub fn forward(
        &self,
        spec: &ModelSpec,
        batch: &Batch,
    ) -> Result<(super::model::Activations, f32)> {
        let params: Vec<&Tensor> = self.params.iter().map(|p| &p.theta16).collect();
        let acts = forward_pass(spec, &params, &batch.x)?;
        let (loss, _) = loss_and_grad(spec.loss, &acts.output, &batch.y, 1.0)?;
        Ok((acts, loss))
    }

    /// Dense backward; all layer gradients are held until masking, so the
    /// residency peak equals the layer count.
    pub fn backward(
        &mut self,
        spec: &ModelSpec,
        acts: &super::model::Activations,
        targets: &[f32],
        loss_scale: f32,
    ) -> Result<GradResidency> {
        if self.grad_pending {
            return Err(Error::State("gradients already pending".into()));
        }
        let (_, d_out) = loss_and_grad(spec.loss, &acts.output, targets, loss_scale)?;
        let tracker = Rc::new(RefCell::new(GradResidency::default()));
        let mut held: Vec<DenseLayerGrad> = Vec::new();
        {
            let params: Vec<&Tensor> = self.params.iter().map(|p| &p.theta16).collect();
            backward_pass(spec, &params, acts, d_out, &tracker, |g| {
                held.push(g);
                Ok(())
            })?;
        }
        let slots = spec.slots();
        for g in &held {
            let s = slots[g.layer];
            let mut targets = vec![(s.weight, &g.weight)];
            if let (Some(b), Some(db)) = (s.bias, g.bias.as_ref()) {
                targets.push((b, db));
            }
            for (slot, t) in targets {
                let p = &mut self.params[slot];
                p.grad16 = t
                    .as_f16()
                    .ok_or_else(|| Error::State("half gradients expected".into()))?
                    .to_vec();
                DenseParam::apply_mask(&p.mask, &mut p.grad16, f16::ZERO);
            }
        }
        drop(held);
        self.grad_pending = true;
        let residency = tracker.borrow().clone();
        Ok(residency)
    }

    pub fn optimizer_step(&mut self, cfg: &OptimizerConfig) -> Result<StepOutcome> {
        if !self.grad_pending {
            return Err(Error::State(
                "optimizer step without pending gradients".into(),
            ));
        }
        self.grad_pending = false;
        let mut finite = true;
        let mut sq = 0.0f64;
        for p in &mut self.params {
            for (g32, g16) in p.grad32.iter_mut().zip(&p.grad16) {
                *g32 = g16.to_f32() / cfg.loss_scale;
                finite &= g32.is_finite();
                sq += (*g32 as f64) * (*g32 as f64);
            }
        }
        if !finite {
            self.skipped_steps += 1;
            for p in &mut self.params {
                p.grad16.fill(f16::ZERO);
                p.grad32.fill(0.0);
            }
            return Ok(StepOutcome {
                skipped: true,
                grad_norm: f64::INFINITY,
            });
        }
        self.adam_step += 1;
        let corr = cfg.bias_corrections(self.adam_step);
        for p in &mut self.params {
            for k in 0..p.theta32.len() {
                adam_update(
                    cfg,
                    corr,
                    &mut p.theta32[k],
                    &mut p.adam_m[k],
                    &mut p.adam_v[k],
                    p.grad32[k],
                );
            }
            DenseParam::apply_mask(&p.mask, &mut p.theta32, 0.0);
            p.grad16.fill(f16::ZERO);
            p.refresh_theta16()?;
        }
        Ok(StepOutcome {
            skipped: false,
            grad_norm: sq.sqrt(),
        })
    }
}

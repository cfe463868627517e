//! Fully-connected networks with explicit per-layer gradient formulas.
//!
//! The forward and backward passes here are shared verbatim by the
//! compressed trainer and the dense masked reference, so both execute the
//! same floating-point operations in the same order.

use std::cell::RefCell;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSpec {
    pub in_features: usize,
    pub out_features: usize,
    #[serde(default = "default_true")]
    pub has_bias: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    #[default]
    MeanSquaredError,
    SoftmaxCrossEntropy,
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub layers: Vec<LinearSpec>,
    #[serde(default)]
    pub loss: Loss,
}

/// Where a linear layer's parameters live in the flat parameter list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamSlots {
    pub weight: usize,
    pub bias: Option<usize>,
}

impl ModelSpec {
    /// Builds an MLP from layer widths, e.g. `[16, 32, 16, 4]`.
    pub fn mlp(widths: &[usize], loss: Loss) -> Result<Self> {
        let layers = widths
            .windows(2)
            .map(|w| LinearSpec {
                in_features: w[0],
                out_features: w[1],
                has_bias: true,
            })
            .collect();
        let spec = Self { layers, loss };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.in_features == 0 || l.out_features == 0 {
                return Err(Error::Config(format!("layer {i} has a zero dimension")));
            }
        }
        for (i, w) in self.layers.windows(2).enumerate() {
            if w[0].out_features != w[1].in_features {
                return Err(Error::Config(format!(
                    "layer {i} outputs {} features but layer {} expects {}",
                    w[0].out_features,
                    i + 1,
                    w[1].in_features
                )));
            }
        }
        Ok(())
    }

    pub fn in_features(&self) -> usize {
        self.layers[0].in_features
    }

    pub fn out_features(&self) -> usize {
        self.layers[self.layers.len() - 1].out_features
    }

    pub fn slots(&self) -> Vec<ParamSlots> {
        let mut next = 0;
        self.layers
            .iter()
            .map(|l| {
                let weight = next;
                next += 1;
                let bias = l.has_bias.then(|| {
                    next += 1;
                    next - 1
                });
                ParamSlots { weight, bias }
            })
            .collect()
    }

    /// `(id, shape, prunable)` for every parameter tensor, in slot order.
    /// Weights are stored `[in, out]` so the forward pass is `x · W`.
    pub fn params(&self) -> Vec<(String, Vec<usize>, bool)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((
                format!("fc{i}.weight"),
                vec![l.in_features, l.out_features],
                true,
            ));
            if l.has_bias {
                out.push((format!("fc{i}.bias"), vec![l.out_features], false));
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params()
            .iter()
            .map(|(_, s, _)| s.iter().product::<usize>())
            .sum()
    }

    /// Uniform `(-1/sqrt(in), 1/sqrt(in))` initialization, seeded.
    pub fn init_params(&self, seed: u64) -> Result<Vec<Tensor>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for l in &self.layers {
            let bound = 1.0 / (l.in_features as f32).sqrt();
            let w: Vec<f32> = (0..l.in_features * l.out_features)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            out.push(Tensor::from_f32(&[l.in_features, l.out_features], w)?);
            if l.has_bias {
                let b: Vec<f32> = (0..l.out_features)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect();
                out.push(Tensor::from_f32(&[l.out_features], b)?);
            }
        }
        Ok(out)
    }
}

/// Intermediate values the backward pass needs.
#[derive(Clone, Debug)]
pub struct Activations {
    /// Input to each linear layer.
    pub inputs: Vec<Tensor>,
    /// Output of each linear layer before the activation.
    pub pre: Vec<Tensor>,
    pub output: Tensor,
}

impl Activations {
    pub fn batch(&self) -> usize {
        self.output.shape()[0]
    }
}

pub fn forward_pass(spec: &ModelSpec, params: &[&Tensor], x: &Tensor) -> Result<Activations> {
    if x.shape().len() != 2 || x.shape()[1] != spec.in_features() {
        return Err(Error::Dimension(format!(
            "batch shape {:?} does not match {} input features",
            x.shape(),
            spec.in_features()
        )));
    }
    let slots = spec.slots();
    let last = slots.len() - 1;
    let mut inputs = Vec::with_capacity(slots.len());
    let mut pre = Vec::with_capacity(slots.len());
    let mut h = x.clone();
    for (i, s) in slots.iter().enumerate() {
        let mut z = tensor::matmul(&h, params[s.weight])?;
        if let Some(b) = s.bias {
            z = tensor::add_row_bias(&z, params[b])?;
        }
        let next = if i == last {
            z.clone()
        } else {
            tensor::relu(&z)
        };
        inputs.push(h);
        pre.push(z);
        h = next;
    }
    Ok(Activations {
        inputs,
        pre,
        output: h,
    })
}

/// Loss (single precision) and the gradient of `loss_scale · loss` with
/// respect to the network output, in the output's precision.
pub fn loss_and_grad(
    loss: Loss,
    output: &Tensor,
    targets: &[f32],
    loss_scale: f32,
) -> Result<(f32, Tensor)> {
    let (rows, cols) = (output.shape()[0], output.shape()[1]);
    if targets.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "{} targets for a {rows}x{cols} output",
            targets.len()
        )));
    }
    let y_hat = output.to_f32_vec();
    let mut grad = vec![0.0f32; rows * cols];
    let value = match loss {
        Loss::MeanSquaredError => {
            let n = (rows * cols) as f32;
            let coef = 2.0 * loss_scale / n;
            let mut acc = 0.0f32;
            for i in 0..rows * cols {
                let d = y_hat[i] - targets[i];
                acc += d * d;
                grad[i] = d * coef;
            }
            acc / n
        }
        Loss::SoftmaxCrossEntropy => {
            let coef = loss_scale / rows as f32;
            let mut acc = 0.0f32;
            for r in 0..rows {
                let z = &y_hat[r * cols..(r + 1) * cols];
                let max = z.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let mut sum = 0.0f32;
                for &v in z {
                    sum += (v - max).exp();
                }
                let log_sum = sum.ln();
                for c in 0..cols {
                    let y = targets[r * cols + c];
                    let log_p = z[c] - max - log_sum;
                    acc -= y * log_p;
                    grad[r * cols + c] = (log_p.exp() - y) * coef;
                }
            }
            acc / rows as f32
        }
    };
    Ok((
        value,
        Tensor::from_values(output.shape(), &grad, output.dtype())?,
    ))
}

/// Live dense gradient buffers during a backward pass.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GradResidency {
    pub live: usize,
    pub peak: usize,
    pub live_bytes: usize,
    pub peak_bytes: usize,
}

/// Dense gradients of one linear layer. Registered with a
/// [`GradResidency`] counter for as long as it lives.
#[derive(Debug)]
pub struct DenseLayerGrad {
    pub layer: usize,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    bytes: usize,
    tracker: Rc<RefCell<GradResidency>>,
}

impl DenseLayerGrad {
    fn new(
        layer: usize,
        weight: Tensor,
        bias: Option<Tensor>,
        tracker: Rc<RefCell<GradResidency>>,
    ) -> Self {
        let bytes = weight.size_bytes() + bias.as_ref().map_or(0, Tensor::size_bytes);
        {
            let mut t = tracker.borrow_mut();
            t.live += 1;
            t.live_bytes += bytes;
            t.peak = t.peak.max(t.live);
            t.peak_bytes = t.peak_bytes.max(t.live_bytes);
        }
        Self {
            layer,
            weight,
            bias,
            bytes,
            tracker,
        }
    }
}

impl Drop for DenseLayerGrad {
    fn drop(&mut self) {
        let mut t = self.tracker.borrow_mut();
        t.live -= 1;
        t.live_bytes -= self.bytes;
    }
}

/// Backpropagates `d_output` from the last layer to the first, handing each
/// layer's dense gradients to `sink` before moving on to the layer below.
pub fn backward_pass(
    spec: &ModelSpec,
    params: &[&Tensor],
    acts: &Activations,
    d_output: Tensor,
    tracker: &Rc<RefCell<GradResidency>>,
    mut sink: impl FnMut(DenseLayerGrad) -> Result<()>,
) -> Result<()> {
    let slots = spec.slots();
    let last = slots.len() - 1;
    let mut upstream = d_output;
    for i in (0..slots.len()).rev() {
        let dz = if i == last {
            upstream
        } else {
            tensor::relu_backward(&upstream, &acts.pre[i])?
        };
        let d_weight = tensor::matmul(&tensor::transpose(&acts.inputs[i])?, &dz)?;
        let d_bias = match slots[i].bias {
            Some(_) => Some(tensor::sum_rows(&dz)?),
            None => None,
        };
        upstream = if i > 0 {
            tensor::matmul(&dz, &tensor::transpose(params[slots[i].weight])?)?
        } else {
            dz
        };
        sink(DenseLayerGrad::new(i, d_weight, d_bias, Rc::clone(tracker)))?;
    }
    Ok(())
}

/// Loss and dense gradients in one go, in whatever precision `params` and
/// `x` carry. Used for gradient checking in single precision.
pub fn loss_gradients(
    spec: &ModelSpec,
    params: &[Tensor],
    x: &Tensor,
    targets: &[f32],
) -> Result<(f32, Vec<Tensor>)> {
    let refs: Vec<&Tensor> = params.iter().collect();
    let acts = forward_pass(spec, &refs, x)?;
    let (loss, d_out) = loss_and_grad(spec.loss, &acts.output, targets, 1.0)?;
    let slots = spec.slots();
    let mut grads: Vec<Option<Tensor>> = vec![None; params.len()];
    let tracker = Rc::new(RefCell::new(GradResidency::default()));
    backward_pass(spec, &refs, &acts, d_out, &tracker, |mut g| {
        let s = slots[g.layer];
        grads[s.weight] = Some(g.weight.clone());
        if let (Some(b), Some(db)) = (s.bias, g.bias.take()) {
            grads[b] = Some(db);
        }
        Ok(())
    })?;
    let grads = grads
        .into_iter()
        .map(|g| g.ok_or_else(|| Error::State("missing gradient".into())))
        .collect::<Result<_>>()?;
    Ok((loss, grads))
}

pub fn loss_only(spec: &ModelSpec, params: &[Tensor], x: &Tensor, targets: &[f32]) -> Result<f32> {
    let refs: Vec<&Tensor> = params.iter().collect();
    let acts = forward_pass(spec, &refs, x)?;
    Ok(loss_and_grad(spec.loss, &acts.output, targets, 1.0)?.0)
}

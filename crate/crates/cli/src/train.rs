use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use samo_core::pruner::{read_index_sets, write_index_sets};
use samo_core::store::save_checkpoint;
use samo_core::train::{
    max_loss_deviation, max_parameter_deviation, prepare, train, train_reference_masked, Dataset,
    Loss, ModelSpec, OptimizerConfig, TrainSettings, Trajectory,
};
use samo_core::{PruneScope, PrunedIndexSet, Sparsity};

use crate::output::{read_config, write_csv};
use crate::{status, Common};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    #[default]
    Regression,
    Classification,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Fraction of weights to prune, `0 <= p < 1`.
    #[arg(long)]
    sparsity: Option<Sparsity>,
    #[arg(long, value_enum)]
    scope: Option<PruneScopeArg>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f32>,
    /// Also train the dense masked reference and compare.
    #[arg(long)]
    verify: bool,
    /// Largest relative deviation accepted by `--verify`.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Write the final compressed state as JSON.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Use these index sets instead of magnitude pruning.
    #[arg(long)]
    indices: Option<PathBuf>,
    /// Write the index sets used.
    #[arg(long)]
    indices_out: Option<PathBuf>,
    /// Binary dataset file (`SAMD` header, little-endian f32).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic dataset size.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, value_enum)]
    task: Option<DataKind>,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PruneScopeArg {
    PerLayer,
    Global,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    path: Option<PathBuf>,
    samples: Option<usize>,
    kind: Option<DataKind>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    model: Option<ModelSpec>,
    optimizer: Option<OptimizerConfig>,
    sparsity: Option<f64>,
    scope: Option<PruneScope>,
    steps: Option<usize>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    verify: Option<bool>,
    tolerance: Option<f64>,
    data: Option<DataConfig>,
}

#[derive(Serialize)]
struct StepRow {
    step: usize,
    loss: String,
    grad_norm: String,
    skipped: u8,
    peak_state_bytes: u64,
}

fn rows(traj: &Trajectory) -> Vec<StepRow> {
    traj.records
        .iter()
        .map(|r| StepRow {
            step: r.step,
            loss: r.loss.to_string(),
            grad_norm: r.grad_norm.to_string(),
            skipped: r.skipped as u8,
            peak_state_bytes: r.peak_state_bytes,
        })
        .collect()
}

fn load_indices(path: &PathBuf, spec: &ModelSpec) -> Result<Vec<Arc<PrunedIndexSet>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let sets = read_index_sets(&text)?;
    let layout = spec.params();
    if sets.len() != layout.len() {
        bail!(
            "{} index sets for {} parameter tensors",
            sets.len(),
            layout.len()
        );
    }
    for (s, (id, shape, _)) in sets.iter().zip(&layout) {
        let n: usize = shape.iter().product();
        if s.layer_id() != id || s.dense_len() != n {
            bail!(
                "index set {} ({}) does not match parameter {id} ({n})",
                s.layer_id(),
                s.dense_len()
            );
        }
    }
    Ok(sets.into_iter().map(Arc::new).collect())
}

pub fn run(args: TrainArgs) -> Result<u8> {
    let cfg: TrainConfig = match &args.common.config {
        Some(p) => read_config(p)?,
        None => TrainConfig::default(),
    };
    let spec = match cfg.model {
        Some(m) => {
            m.validate()?;
            m
        }
        None => ModelSpec::mlp(&[16, 32, 16, 4], Loss::MeanSquaredError)?,
    };
    let sparsity = match (args.sparsity, cfg.sparsity) {
        (Some(p), _) => p,
        (None, Some(p)) => Sparsity::from_f64(p)?,
        (None, None) => Sparsity::ZERO,
    };
    if sparsity.to_f64() >= 1.0 {
        bail!("sparsity must be below 1");
    }
    let scope = match args.scope {
        Some(PruneScopeArg::PerLayer) => PruneScope::PerLayer,
        Some(PruneScopeArg::Global) => PruneScope::Global,
        None => cfg.scope.unwrap_or_default(),
    };
    let seed = args.common.seed.or(cfg.seed).unwrap_or(0);
    let mut optimizer = cfg.optimizer.unwrap_or_default();
    if let Some(lr) = args.learning_rate {
        optimizer.learning_rate = lr;
    }
    optimizer.validate()?;
    let settings = TrainSettings {
        steps: args.steps.or(cfg.steps).unwrap_or(200),
        batch_size: args.batch_size.or(cfg.batch_size).unwrap_or(16),
        optimizer,
    };
    if settings.batch_size == 0 {
        bail!("batch size must be positive");
    }
    let verify = args.verify || cfg.verify.unwrap_or(false);
    let tolerance = args.tolerance.or(cfg.tolerance).unwrap_or(1e-6);
    if tolerance.is_nan() || tolerance < 0.0 {
        bail!("tolerance must be non-negative");
    }

    let data_cfg = cfg.data.unwrap_or_default();
    let data = match args.data.or(data_cfg.path) {
        Some(path) => {
            let file =
                fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
            Dataset::read_binary(std::io::BufReader::new(file))?
        }
        None => {
            let n = args.samples.or(data_cfg.samples).unwrap_or(256);
            match args.task.or(data_cfg.kind).unwrap_or_default() {
                DataKind::Regression => {
                    Dataset::synthetic_regression(n, spec.in_features(), spec.out_features(), seed)?
                }
                DataKind::Classification => Dataset::synthetic_classification(
                    n,
                    spec.in_features(),
                    spec.out_features(),
                    seed,
                )?,
            }
        }
    };
    if data.n_features() != spec.in_features() || data.n_targets() != spec.out_features() {
        bail!(
            "dataset has {} features / {} targets, model expects {} / {}",
            data.n_features(),
            data.n_targets(),
            spec.in_features(),
            spec.out_features()
        );
    }

    let (init, ind) = prepare(&spec, seed, sparsity, scope)?;
    let ind = match &args.indices {
        Some(path) => load_indices(path, &spec)?,
        None => ind,
    };
    if let Some(path) = &args.indices_out {
        let sets: Vec<PrunedIndexSet> = ind.iter().map(|s| (**s).clone()).collect();
        fs::write(path, write_index_sets(&sets)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }

    let (state, traj) = train(&spec, &data, &settings, &init, &ind)?;
    write_csv(&rows(&traj), args.common.out.as_deref())?;
    if let Some(path) = &args.checkpoint {
        fs::write(path, save_checkpoint(&state)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(step) = traj.diverged_at {
        eprintln!("FAIL: loss became non-finite at step {step}");
        return Ok(status::VERIFY_FAILED);
    }
    if !verify {
        return Ok(status::OK);
    }

    let (reference, ref_traj) = train_reference_masked(&spec, &data, &settings, &init, Some(&ind))?;
    let param_dev = max_parameter_deviation(&state, &reference)?;
    let loss_dev = max_loss_deviation(&traj, &ref_traj);
    let pass = param_dev <= tolerance && loss_dev <= tolerance;
    eprintln!(
        "{}: max relative parameter deviation {param_dev}, max relative loss deviation {loss_dev}, tolerance {tolerance} (sparsity {sparsity}, {} steps, seed {seed})",
        if pass { "PASS" } else { "FAIL" },
        settings.steps,
    );
    Ok(if pass {
        status::OK
    } else {
        status::VERIFY_FAILED
    })
}

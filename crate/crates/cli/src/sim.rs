use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use samo_core::pruner::read_index_sets;
use samo_core::sim::{evaluate, timeline, timeline_rows, BreakdownRow, ModeResult, Scenario};

use crate::output::write_csv;
use crate::{status, Common};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TimelineMode {
    Dense,
    Samo,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Write the per-GPU pipeline timeline of one mode as CSV.
    #[arg(long)]
    timeline: Option<PathBuf>,
    /// Mode whose timeline is written; defaults to the last feasible one.
    #[arg(long, value_enum)]
    timeline_mode: Option<TimelineMode>,
    /// Take `phi` and `p` from these index sets instead of the scenario.
    #[arg(long)]
    indices: Option<PathBuf>,
    /// Override the scenario's GPU count.
    #[arg(long)]
    gpus: Option<u32>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Comma-separated GPU counts, e.g. `128,256,512`.
    #[arg(long, value_delimiter = ',', required = true)]
    gpus: Vec<u32>,
    #[arg(long)]
    indices: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

fn load_scenario(common: &Common, indices: Option<&Path>) -> Result<Scenario> {
    let Some(path) = &common.config else {
        bail!("--config <scenario.json> is required")
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut scenario =
        Scenario::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(p) = indices {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let sets = read_index_sets(&text)?;
        let phi: usize = sets.iter().map(|s| s.dense_len()).sum();
        let kept: usize = sets.iter().map(|s| s.len()).sum();
        if phi == 0 {
            bail!("index sets cover no parameters");
        }
        scenario.workload.phi = phi as f64;
        scenario.workload.p = 1.0 - kept as f64 / phi as f64;
        scenario.workload.validate()?;
    }
    Ok(scenario)
}

fn infeasible_status(results: &[ModeResult]) -> u8 {
    if results.iter().any(ModeResult::is_feasible) {
        status::OK
    } else {
        status::INFEASIBLE
    }
}

fn report_infeasible(results: &[ModeResult]) {
    for r in results {
        if let Err(msg) = &r.outcome {
            eprintln!("G={} {}: infeasible: {msg}", r.gpus, r.mode);
        }
    }
}

pub fn run_simulate(args: SimulateArgs) -> Result<u8> {
    let mut scenario = load_scenario(&args.common, args.indices.as_deref())?;
    if let Some(g) = args.gpus {
        scenario = scenario.with_gpus(g);
        scenario.cluster.validate()?;
    }
    let results = evaluate(&scenario)?;
    report_infeasible(&results);
    let rows: Vec<BreakdownRow> = results.iter().map(ModeResult::row).collect();
    write_csv(&rows, args.common.out.as_deref())?;

    if let Some(path) = &args.timeline {
        let wanted = args.timeline_mode.map(|m| match m {
            TimelineMode::Dense => "dense",
            TimelineMode::Samo => "samo",
        });
        let chosen = match wanted {
            Some(w) => results
                .iter()
                .find(|r| r.mode == w)
                .with_context(|| format!("scenario has no {w} mode"))?,
            None => results
                .iter()
                .rev()
                .find(|r| r.is_feasible())
                .unwrap_or(&results[results.len() - 1]),
        };
        match &chosen.outcome {
            Ok((cfg, _)) => {
                let t = timeline(&scenario.workload, scenario.cluster.gpus, cfg)?;
                write_csv(&timeline_rows(&t), Some(path))?;
            }
            Err(msg) => eprintln!("no timeline for {}: infeasible: {msg}", chosen.mode),
        }
    }
    Ok(infeasible_status(&results))
}

/// Breakdown columns plus `speedup`, dense over compressed batch time.
#[derive(Serialize)]
struct SweepRow {
    #[serde(rename = "G")]
    gpus: u32,
    #[serde(rename = "G_inter")]
    g_inter: Option<u32>,
    #[serde(rename = "G_data")]
    g_data: Option<u32>,
    mode: String,
    compute: String,
    p2p: String,
    bubble: String,
    collective: String,
    overhead: String,
    total: String,
    speedup: String,
}

impl SweepRow {
    fn new(b: BreakdownRow, speedup: String) -> Self {
        Self {
            gpus: b.gpus,
            g_inter: b.g_inter,
            g_data: b.g_data,
            mode: b.mode,
            compute: b.compute,
            p2p: b.p2p,
            bubble: b.bubble,
            collective: b.collective,
            overhead: b.overhead,
            total: b.total,
            speedup,
        }
    }
}

fn threads() -> Result<Option<usize>> {
    match std::env::var("SAMO_THREADS") {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .with_context(|| format!("SAMO_THREADS={v:?} is not a count"))?;
            if n == 0 {
                bail!("SAMO_THREADS must be at least 1");
            }
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

pub fn run_sweep(args: SweepArgs) -> Result<u8> {
    let scenario = load_scenario(&args.common, args.indices.as_deref())?;
    if args.gpus.contains(&0) {
        bail!("GPU counts must be positive");
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads()? {
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    let per_g: Vec<Result<Vec<ModeResult>>> = pool.install(|| {
        args.gpus
            .par_iter()
            .map(|&g| Ok(evaluate(&scenario.with_gpus(g))?))
            .collect()
    });

    let mut all = Vec::new();
    let mut rows = Vec::new();
    for results in per_g {
        let results = results?;
        let total = |mode: &str| {
            results
                .iter()
                .find(|r| r.mode == mode)
                .and_then(|r| r.outcome.as_ref().ok())
                .map(|(_, b)| b.total)
        };
        let speedup = match (total("dense"), total("samo")) {
            (Some(d), Some(s)) => (d / s).to_string(),
            _ => String::new(),
        };
        for r in &results {
            let speedup = if r.mode == "samo" {
                speedup.clone()
            } else {
                String::new()
            };
            rows.push(SweepRow::new(r.row(), speedup));
        }
        all.extend(results);
    }
    report_infeasible(&all);
    write_csv(&rows, args.common.out.as_deref())?;
    Ok(infeasible_status(&all))
}

//! Scenario files and the rows the simulator reports.

use serde::{Deserialize, Serialize};

use super::pipeline::{simulate_pipeline, PipelineTimeline};
use super::plan::{batch_breakdown, BatchTimeBreakdown, ClusterSpec, ParallelConfig, WorkloadSpec};
use crate::error::{Error, Result};
use crate::sim::cost::microbatches;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Dense,
    Samo,
    #[default]
    Both,
}

impl Mode {
    /// `(label, compressed)` pairs to evaluate, dense first.
    pub fn variants(self) -> Vec<(&'static str, bool)> {
        match self {
            Mode::Dense => vec![("dense", false)],
            Mode::Samo => vec![("samo", true)],
            Mode::Both => vec![("dense", false), ("samo", true)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub cluster: ClusterSpec,
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub mode: Mode,
    /// Forces the pipeline depth instead of picking the smallest one that
    /// fits in memory.
    #[serde(default)]
    pub g_inter: Option<u32>,
}

impl Scenario {
    pub fn from_json(json: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(json)?;
        s.cluster.validate()?;
        s.workload.validate()?;
        Ok(s)
    }

    pub fn with_gpus(&self, gpus: u32) -> Self {
        let mut s = self.clone();
        s.cluster.gpus = gpus;
        s
    }
}

/// One evaluated mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeResult {
    pub gpus: u32,
    pub mode: &'static str,
    pub outcome: std::result::Result<(ParallelConfig, BatchTimeBreakdown), String>,
}

impl ModeResult {
    pub fn is_feasible(&self) -> bool {
        self.outcome.is_ok()
    }

    pub fn row(&self) -> BreakdownRow {
        match &self.outcome {
            Ok((cfg, b)) => BreakdownRow {
                gpus: self.gpus,
                g_inter: Some(cfg.g_inter),
                g_data: Some(cfg.g_data),
                mode: self.mode.to_string(),
                compute: b.compute.to_string(),
                p2p: b.p2p_send.to_string(),
                bubble: b.bubble.to_string(),
                collective: b.collective.to_string(),
                overhead: b.overhead.to_string(),
                total: b.total.to_string(),
            },
            Err(_) => BreakdownRow {
                gpus: self.gpus,
                g_inter: None,
                g_data: None,
                mode: self.mode.to_string(),
                compute: String::new(),
                p2p: String::new(),
                bubble: String::new(),
                collective: String::new(),
                overhead: String::new(),
                total: "infeasible".into(),
            },
        }
    }
}

/// CSV row `G,G_inter,G_data,mode,compute,p2p,bubble,collective,overhead,total`.
/// Infeasible configurations leave the numeric fields empty and report
/// `infeasible` as the total.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BreakdownRow {
    #[serde(rename = "G")]
    pub gpus: u32,
    #[serde(rename = "G_inter")]
    pub g_inter: Option<u32>,
    #[serde(rename = "G_data")]
    pub g_data: Option<u32>,
    pub mode: String,
    pub compute: String,
    pub p2p: String,
    pub bubble: String,
    pub collective: String,
    pub overhead: String,
    pub total: String,
}

/// Evaluates every mode of `scenario`. Infeasible memory configurations
/// become failed results; malformed configurations are errors.
pub fn evaluate(scenario: &Scenario) -> Result<Vec<ModeResult>> {
    let mut out = Vec::new();
    for (mode, compressed) in scenario.mode.variants() {
        let outcome = match batch_breakdown(
            &scenario.workload,
            &scenario.cluster,
            compressed,
            scenario.g_inter,
        ) {
            Ok(v) => Ok(v),
            Err(Error::Infeasible(msg)) => Err(msg),
            Err(e) => return Err(e),
        };
        out.push(ModeResult {
            gpus: scenario.cluster.gpus,
            mode,
            outcome,
        });
    }
    Ok(out)
}

/// Pipeline timeline for a chosen configuration, with uniform stages.
pub fn timeline(
    workload: &WorkloadSpec,
    gpus: u32,
    cfg: &ParallelConfig,
) -> Result<PipelineTimeline> {
    let n = microbatches(
        workload.batch_size,
        workload.microbatch_size,
        gpus,
        cfg.g_inter,
    )?;
    let n = u32::try_from(n)
        .map_err(|_| Error::Config(format!("{n} microbatches is too many to simulate")))?;
    let stages = cfg.g_inter as f64;
    Ok(simulate_pipeline(
        cfg.g_inter,
        n,
        workload.t_f / stages,
        workload.t_b / stages,
    ))
}

/// CSV row `gpu,event,kind,start,end`; `event` is the microbatch id, empty
/// for idle spans.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimelineRow {
    pub gpu: u32,
    pub event: Option<u32>,
    pub kind: super::pipeline::OpKind,
    pub start: f64,
    pub end: f64,
}

pub fn timeline_rows(t: &PipelineTimeline) -> Vec<TimelineRow> {
    t.events
        .iter()
        .flatten()
        .map(|e| TimelineRow {
            gpu: e.gpu,
            event: e.microbatch,
            kind: e.kind,
            start: e.start,
            end: e.end,
        })
        .collect()
}

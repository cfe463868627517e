//! Choosing the pipeline depth under a memory cap and breaking a batch's
//! time into compute, point-to-point, bubble, collective and compression
//! overhead.

use serde::{Deserialize, Serialize};

use super::cost::{allreduce_elements, allreduce_time, bubble_time, microbatches, send_time};
use crate::error::{Error, Result};
use crate::sparsity::Sparsity;
use crate::store::memory_model;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    /// Total GPU count `G`.
    pub gpus: u32,
    /// Bytes of device memory per GPU.
    pub mem_cap: f64,
    /// Point-to-point bandwidth, bytes/s.
    pub link_bw_p2p: f64,
    /// Collective bandwidth, bytes/s.
    pub link_bw_coll: f64,
    /// Per-message latency, seconds.
    pub link_latency: f64,
    #[serde(default)]
    pub flops_per_gpu: f64,
}

impl ClusterSpec {
    /// 16 GB V100s, 12.5 GB/s inter-node links, 125 Tflop/s half precision.
    pub fn summit(gpus: u32) -> Self {
        Self {
            gpus,
            mem_cap: 16e9,
            link_bw_p2p: 12.5e9,
            link_bw_coll: 12.5e9,
            link_latency: 5e-6,
            flops_per_gpu: 125e12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.mem_cap, self.link_bw_p2p, self.link_bw_coll];
        if self.gpus == 0 || positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(
                "cluster sizes and bandwidths must be positive".into(),
            ));
        }
        if !(self.link_latency.is_finite() && self.link_latency >= 0.0) || self.flops_per_gpu < 0.0
        {
            return Err(Error::Config(
                "latency and flop rate must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn divisors(&self) -> Vec<u32> {
        (1..=self.gpus)
            .filter(|d| self.gpus.is_multiple_of(*d))
            .collect()
    }
}

fn default_overhead() -> f64 {
    0.10
}

fn default_element_bytes() -> f64 {
    2.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    /// Parameters before pruning.
    pub phi: f64,
    /// Sparsity, `0 <= p < 1`.
    pub p: f64,
    pub batch_size: u64,
    pub microbatch_size: u64,
    /// Forward compute through the whole model for one microbatch, seconds.
    pub t_f: f64,
    /// Backward compute through the whole model for one microbatch, seconds.
    pub t_b: f64,
    /// Size of one point-to-point activation/gradient message.
    pub bytes_activation_msg: f64,
    /// Compression overhead as a fraction of backward compute.
    #[serde(default = "default_overhead")]
    pub overhead_frac: f64,
    /// Activation memory per GPU, added to its share of model state.
    #[serde(default)]
    pub activation_bytes: f64,
    /// Fraction of point-to-point time hidden behind compute, in `[0, 1]`.
    #[serde(default)]
    pub p2p_overlap: f64,
    /// Bytes per all-reduced gradient element.
    #[serde(default = "default_element_bytes")]
    pub grad_element_bytes: f64,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.phi.is_finite() && self.phi >= 0.0) {
            return bad("phi must be a non-negative number");
        }
        if !(0.0..1.0).contains(&self.p) {
            return bad("sparsity p must lie in [0, 1)");
        }
        if !(self.t_f > 0.0 && self.t_b > 0.0 && self.t_f.is_finite() && self.t_b.is_finite()) {
            return bad("t_f and t_b must be positive");
        }
        if self.batch_size == 0 || self.microbatch_size == 0 {
            return bad("batch and microbatch sizes must be positive");
        }
        if !(0.0..=1.0).contains(&self.p2p_overlap) {
            return bad("p2p_overlap must lie in [0, 1]");
        }
        if self.overhead_frac < 0.0
            || self.bytes_activation_msg < 0.0
            || self.activation_bytes < 0.0
        {
            return bad("overhead, message and activation sizes must be non-negative");
        }
        Ok(())
    }

    pub fn sparsity(&self) -> Result<Sparsity> {
        Sparsity::from_f64(self.p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelConfig {
    pub g_inter: u32,
    pub g_data: u32,
}

impl ParallelConfig {
    pub fn new(g_inter: u32, gpus: u32) -> Result<Self> {
        if g_inter == 0 || !gpus.is_multiple_of(g_inter) {
            return Err(Error::Config(format!(
                "G_inter={g_inter} does not divide G={gpus}"
            )));
        }
        Ok(Self {
            g_inter,
            g_data: gpus / g_inter,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct BatchTimeBreakdown {
    pub compute: f64,
    pub p2p_send: f64,
    pub bubble: f64,
    pub collective: f64,
    pub overhead: f64,
    pub total: f64,
}

impl BatchTimeBreakdown {
    /// Point-to-point + bubble + collective.
    pub fn communication(&self) -> f64 {
        self.p2p_send + self.bubble + self.collective
    }
}

/// Model-state bytes for the whole network: the compressed layout when
/// `compressed`, 20 bytes per parameter otherwise.
pub fn model_state_bytes(phi: f64, p: Sparsity, compressed: bool) -> f64 {
    if compressed {
        memory_model(phi.round() as u64, p).bytes_samo_f64()
    } else {
        20.0 * phi
    }
}

/// Smallest divisor `d` of `G` with `state_bytes / d + act_bytes <= mem_cap`.
pub fn min_feasible_g_inter(
    phi: f64,
    p: Sparsity,
    compressed: bool,
    cluster: &ClusterSpec,
    act_bytes: f64,
) -> Result<u32> {
    let bytes = model_state_bytes(phi, p, compressed);
    cluster
        .divisors()
        .into_iter()
        .find(|&d| bytes / d as f64 + act_bytes <= cluster.mem_cap)
        .ok_or_else(|| {
            Error::Infeasible(format!(
                "{bytes} bytes of model state do not fit {} GPUs of {} bytes",
                cluster.gpus, cluster.mem_cap
            ))
        })
}

/// Time breakdown of one batch. `g_inter` forces the pipeline depth;
/// otherwise the smallest depth that fits in memory is used.
pub fn batch_breakdown(
    workload: &WorkloadSpec,
    cluster: &ClusterSpec,
    compressed: bool,
    g_inter: Option<u32>,
) -> Result<(ParallelConfig, BatchTimeBreakdown)> {
    workload.validate()?;
    cluster.validate()?;
    let p = workload.sparsity()?;
    let g_inter = match g_inter {
        Some(g) => g,
        None => min_feasible_g_inter(
            workload.phi,
            p,
            compressed,
            cluster,
            workload.activation_bytes,
        )?,
    };
    let cfg = ParallelConfig::new(g_inter, cluster.gpus)?;
    let n_mb = microbatches(
        workload.batch_size,
        workload.microbatch_size,
        cluster.gpus,
        g_inter,
    )? as f64;
    let stage = g_inter as f64;

    let compute = n_mb * ((workload.t_f + workload.t_b) / stage);
    let bubble = bubble_time(g_inter, workload.t_f, workload.t_b);
    let p2p_send = (1.0 - workload.p2p_overlap)
        * send_time(
            workload.batch_size,
            workload.microbatch_size,
            cluster.gpus,
            g_inter,
            workload.bytes_activation_msg,
            cluster.link_bw_p2p,
            cluster.link_latency,
        )?;
    let elements = allreduce_elements(workload.phi, workload.p, g_inter, compressed);
    let collective = allreduce_time(
        elements,
        workload.grad_element_bytes,
        cfg.g_data,
        cluster.link_bw_coll,
        cluster.link_latency,
    );
    let overhead = if compressed {
        workload.overhead_frac * n_mb * (workload.t_b / stage)
    } else {
        0.0
    };
    let total = compute + p2p_send + bubble + collective + overhead;
    Ok((
        cfg,
        BatchTimeBreakdown {
            compute,
            p2p_send,
            bubble,
            collective,
            overhead,
            total,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cluster(gpus: u32, mem_cap: f64) -> ClusterSpec {
        ClusterSpec {
            mem_cap,
            ..ClusterSpec::summit(gpus)
        }
    }

    fn sp(s: &str) -> Sparsity {
        s.parse().unwrap()
    }

    #[test]
    fn fits_on_one_gpu() {
        let phi = 1e6;
        let c = cluster(8, 20.0 * phi + 1.0);
        assert_eq!(
            min_feasible_g_inter(phi, sp("0"), false, &c, 0.0).unwrap(),
            1
        );
    }

    #[test]
    fn compression_shrinks_pipeline() {
        let phi = 1e6;
        let act = 1e3;
        let c = cluster(8, 20.0 * phi / 4.0 + act);
        assert_eq!(
            min_feasible_g_inter(phi, sp("0.9"), false, &c, act).unwrap(),
            4
        );
        assert_eq!(
            min_feasible_g_inter(phi, sp("0.9"), true, &c, act).unwrap(),
            1
        );
    }

    #[test]
    fn infeasible_cap() {
        let phi = 1e6;
        let c = cluster(4, 20.0 * phi / 4.0 - 1.0);
        assert!(matches!(
            min_feasible_g_inter(phi, sp("0"), false, &c, 0.0),
            Err(Error::Infeasible(_))
        ));
    }

    fn workload(p: f64) -> WorkloadSpec {
        WorkloadSpec {
            phi: 1e8,
            p,
            batch_size: 64,
            microbatch_size: 2,
            t_f: 0.1,
            t_b: 0.2,
            bytes_activation_msg: 4e6,
            overhead_frac: 0.1,
            activation_bytes: 0.0,
            p2p_overlap: 0.0,
            grad_element_bytes: 2.0,
        }
    }

    #[test]
    fn degenerate_sparsity_only_adds_overhead() {
        let c = cluster(16, 16e9);
        let w = workload(0.0);
        let (_, dense) = batch_breakdown(&w, &c, false, Some(4)).unwrap();
        let (_, samo) = batch_breakdown(&w, &c, true, Some(4)).unwrap();
        assert_eq!(dense.compute, samo.compute);
        assert_eq!(dense.p2p_send, samo.p2p_send);
        assert_eq!(dense.bubble, samo.bubble);
        assert_eq!(dense.collective, samo.collective);
        assert_eq!(dense.overhead, 0.0);
        assert!(samo.overhead > 0.0);
    }

    #[test]
    fn components_sum_to_total() {
        let (_, b) = batch_breakdown(&workload(0.5), &cluster(16, 16e9), true, Some(2)).unwrap();
        assert_eq!(
            b.total,
            b.compute + b.p2p_send + b.bubble + b.collective + b.overhead
        );
        assert!([b.compute, b.p2p_send, b.bubble, b.collective, b.overhead]
            .iter()
            .all(|&v| v >= 0.0));
    }

    #[test]
    fn bad_workloads_rejected() {
        let c = cluster(16, 16e9);
        assert!(batch_breakdown(
            &WorkloadSpec {
                p: 1.0,
                ..workload(0.0)
            },
            &c,
            true,
            None
        )
        .is_err());
        assert!(batch_breakdown(
            &WorkloadSpec {
                batch_size: 10,
                ..workload(0.0)
            },
            &c,
            true,
            Some(2)
        )
        .is_err());
        assert!(batch_breakdown(&workload(0.0), &c, true, Some(3)).is_err());
    }
}

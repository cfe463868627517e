//! Closed-form timing terms for hybrid pipeline + data parallelism.

use crate::error::{Error, Result};

/// Idle time per GPU at the head and tail of a pipelined batch:
/// `G_inter - 1` microbatches' worth of per-stage forward+backward work,
/// `(G_inter - 1) · (t_f + t_b) / G_inter`.
pub fn bubble_time(g_inter: u32, t_f: f64, t_b: f64) -> f64 {
    if g_inter <= 1 {
        return 0.0;
    }
    (g_inter - 1) as f64 * ((t_f + t_b) / g_inter as f64)
}

/// Microbatches each GPU processes per batch, `B / (mbs · G_data)`.
pub fn microbatches(batch: u64, mbs: u64, g: u32, g_inter: u32) -> Result<u64> {
    if g_inter == 0 || g == 0 || !g.is_multiple_of(g_inter) {
        return Err(Error::Config(format!(
            "G_inter={g_inter} does not divide G={g}"
        )));
    }
    let g_data = (g / g_inter) as u64;
    let per_group = mbs * g_data;
    if mbs == 0 || batch == 0 || !batch.is_multiple_of(per_group) {
        return Err(Error::Config(format!(
            "batch {batch} is not a multiple of mbs {mbs} x G_data {g_data}"
        )));
    }
    Ok(batch / per_group)
}

/// Point-to-point messages per GPU per batch: four per microbatch (send and
/// receive, forward and backward).
pub fn message_count(batch: u64, mbs: u64, g: u32, g_inter: u32) -> Result<u64> {
    Ok(4 * microbatches(batch, mbs, g, g_inter)?)
}

/// Transmission time, each message costing `latency + bytes / bw`.
pub fn send_time(
    batch: u64,
    mbs: u64,
    g: u32,
    g_inter: u32,
    msg_bytes: f64,
    bw: f64,
    latency: f64,
) -> Result<f64> {
    Ok(message_count(batch, mbs, g, g_inter)? as f64 * (latency + msg_bytes / bw))
}

/// Ring all-reduce of `elements` values over `g_data` ranks:
/// `2 (n-1)/n · bytes / bw + 2 (n-1) · latency`.
pub fn allreduce_time(
    elements: f64,
    bytes_per_element: f64,
    g_data: u32,
    bw: f64,
    latency: f64,
) -> f64 {
    if g_data <= 1 {
        return 0.0;
    }
    let n = g_data as f64;
    let steps = 2.0 * (n - 1.0);
    steps / n * (elements * bytes_per_element) / bw + steps * latency
}

/// Gradient elements each data-parallel group all-reduces. Compressed
/// gradients only carry the unpruned fraction.
pub fn allreduce_elements(phi: f64, p: f64, g_inter: u32, compressed: bool) -> f64 {
    let kept = if compressed { 1.0 - p } else { 1.0 };
    kept * (phi / g_inter as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bubble_examples() {
        assert_eq!(bubble_time(3, 3.0, 6.0), 6.0);
        assert_eq!(bubble_time(1, 3.0, 6.0), 0.0);
        assert_eq!(bubble_time(4, 1.0, 2.0), 2.25);
    }

    #[test]
    fn message_examples() {
        // B=16, mbs=2, G_data=2
        assert_eq!(message_count(16, 2, 8, 4).unwrap(), 16);
        assert_eq!(message_count(2, 2, 4, 4).unwrap(), 4);
        assert!(matches!(message_count(10, 4, 4, 2), Err(Error::Config(_))));
        assert!(message_count(16, 2, 8, 3).is_err());
        let t2 = send_time(64, 1, 16, 2, 1e6, 1e9, 0.0).unwrap();
        let t4 = send_time(64, 1, 16, 4, 1e6, 1e9, 0.0).unwrap();
        assert_eq!(t4, 2.0 * t2);
    }

    #[test]
    fn allreduce_examples() {
        assert_eq!(allreduce_time(1e6, 2.0, 1, 1e9, 1e-5), 0.0);
        let t = allreduce_time(1e6, 2.0, 4, 1e9, 0.0);
        assert!((t - 3e-3).abs() < 1e-15, "{t}");
        let dense = allreduce_elements(1e6, 0.9, 2, false);
        let samo = allreduce_elements(1e6, 0.9, 2, true);
        assert!((samo / dense - 0.1).abs() < 1e-15);
    }
}

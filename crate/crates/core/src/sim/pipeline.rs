//! Event-driven simulation of a 1F1B pipeline schedule.
//!
//! Stage `s` of `G` runs `min(G - s - 1, n)` warm-up forwards, then
//! alternates one forward with one backward, then drains the remaining
//! backwards. A forward waits for the upstream stage's forward of the same
//! microbatch; a backward waits for the downstream stage's backward (the
//! last stage's backward follows its own forward). Events are processed
//! in `(time, stage)` order, so the timeline is fully deterministic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum OpKind {
    F,
    B,
    #[serde(rename = "idle")]
    Idle,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TimelineEvent {
    pub gpu: u32,
    /// Microbatch id; `None` for idle spans.
    pub microbatch: Option<u32>,
    pub kind: OpKind,
    pub start: f64,
    pub end: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineTimeline {
    pub g_inter: u32,
    pub microbatches: u32,
    /// Per GPU, busy spans and the idle spans between them, in time order.
    pub events: Vec<Vec<TimelineEvent>>,
    /// Idle time of each GPU within `[0, makespan]`.
    pub bubble: Vec<f64>,
    pub makespan: f64,
}

fn schedule(stage: u32, g: u32, n: u32) -> Vec<(OpKind, u32)> {
    let warmup = (g - stage - 1).min(n);
    let mut ops: Vec<(OpKind, u32)> = (0..warmup).map(|m| (OpKind::F, m)).collect();
    for i in 0..n - warmup {
        ops.push((OpKind::F, warmup + i));
        ops.push((OpKind::B, i));
    }
    ops.extend((n - warmup..n).map(|m| (OpKind::B, m)));
    ops
}

#[derive(PartialEq)]
struct Completion {
    time: f64,
    stage: u32,
}

impl Eq for Completion {}

impl Ord for Completion {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (time, stage)
        other
            .time
            .total_cmp(&self.time)
            .then(other.stage.cmp(&self.stage))
    }
}

impl PartialOrd for Completion {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Simulates one batch of `n_microbatches` through `g_inter` uniform stages
/// taking `t_f_stage` / `t_b_stage` per microbatch.
pub fn simulate_pipeline(
    g_inter: u32,
    n_microbatches: u32,
    t_f_stage: f64,
    t_b_stage: f64,
) -> PipelineTimeline {
    let g = g_inter.max(1);
    let n = n_microbatches;
    let ops: Vec<Vec<(OpKind, u32)>> = (0..g).map(|s| schedule(s, g, n)).collect();
    let mut next = vec![0usize; g as usize];
    let mut busy = vec![false; g as usize];
    let mut f_done: Vec<Vec<Option<f64>>> = vec![vec![None; n as usize]; g as usize];
    let mut b_done: Vec<Vec<Option<f64>>> = vec![vec![None; n as usize]; g as usize];
    let mut spans: Vec<Vec<TimelineEvent>> = vec![Vec::new(); g as usize];
    let mut running: Vec<Option<(OpKind, u32, f64)>> = vec![None; g as usize];
    let mut heap = BinaryHeap::new();

    let ready = |s: u32,
                 kind: OpKind,
                 m: u32,
                 f_done: &Vec<Vec<Option<f64>>>,
                 b_done: &Vec<Vec<Option<f64>>>| match kind {
        OpKind::F => s == 0 || f_done[(s - 1) as usize][m as usize].is_some(),
        OpKind::B if s + 1 == g => f_done[s as usize][m as usize].is_some(),
        OpKind::B => b_done[(s + 1) as usize][m as usize].is_some(),
        OpKind::Idle => unreachable!(),
    };

    let mut now = 0.0f64;
    loop {
        for s in 0..g {
            let si = s as usize;
            if busy[si] || next[si] >= ops[si].len() {
                continue;
            }
            let (kind, m) = ops[si][next[si]];
            if ready(s, kind, m, &f_done, &b_done) {
                let dur = if kind == OpKind::F {
                    t_f_stage
                } else {
                    t_b_stage
                };
                busy[si] = true;
                next[si] += 1;
                running[si] = Some((kind, m, now));
                heap.push(Completion {
                    time: now + dur,
                    stage: s,
                });
            }
        }
        let Some(first) = heap.pop() else { break };
        now = first.time;
        let mut finished = vec![first.stage];
        while heap.peek().is_some_and(|c| c.time == now) {
            finished.push(heap.pop().map(|c| c.stage).unwrap_or_default());
        }
        for s in finished {
            let si = s as usize;
            if let Some((kind, m, start)) = running[si].take() {
                match kind {
                    OpKind::F => f_done[si][m as usize] = Some(now),
                    _ => b_done[si][m as usize] = Some(now),
                }
                spans[si].push(TimelineEvent {
                    gpu: s,
                    microbatch: Some(m),
                    kind,
                    start,
                    end: now,
                });
            }
            busy[si] = false;
        }
    }

    let makespan = now;
    let mut events = Vec::with_capacity(g as usize);
    let mut bubble = Vec::with_capacity(g as usize);
    for (s, busy_spans) in spans.into_iter().enumerate() {
        let mut timeline = Vec::with_capacity(busy_spans.len() * 2 + 1);
        let mut cursor = 0.0f64;
        let mut idle = 0.0f64;
        for ev in busy_spans {
            if ev.start > cursor {
                idle += ev.start - cursor;
                timeline.push(TimelineEvent {
                    gpu: s as u32,
                    microbatch: None,
                    kind: OpKind::Idle,
                    start: cursor,
                    end: ev.start,
                });
            }
            cursor = ev.end;
            timeline.push(ev);
        }
        if makespan > cursor {
            idle += makespan - cursor;
            timeline.push(TimelineEvent {
                gpu: s as u32,
                microbatch: None,
                kind: OpKind::Idle,
                start: cursor,
                end: makespan,
            });
        }
        events.push(timeline);
        bubble.push(idle);
    }
    PipelineTimeline {
        g_inter: g,
        microbatches: n,
        events,
        bubble,
        makespan,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::cost::bubble_time;

    #[test]
    fn three_stage_five_microbatch_example() {
        let t = simulate_pipeline(3, 5, 1.0, 2.0);
        assert_eq!(t.bubble, vec![6.0, 6.0, 6.0]);
        assert_eq!(t.makespan, 21.0);
    }

    #[test]
    fn single_stage_has_no_bubble() {
        let t = simulate_pipeline(1, 7, 1.5, 2.5);
        assert_eq!(t.bubble, vec![0.0]);
        assert_eq!(t.makespan, 7.0 * 4.0);
    }

    #[test]
    fn matches_closed_form() {
        for g in 1..=8u32 {
            for n in g..=32 {
                let (f, b) = (1.0, 2.0);
                let t = simulate_pipeline(g, n, f, b);
                let analytic = bubble_time(g, f * g as f64, b * g as f64);
                assert!(
                    t.bubble.iter().all(|&x| x == analytic),
                    "g={g} n={n}: {:?} vs {analytic}",
                    t.bubble
                );
            }
        }
    }

    #[test]
    fn spans_tile_the_makespan() {
        let t = simulate_pipeline(4, 6, 0.5, 1.0);
        for gpu in &t.events {
            assert_eq!(gpu.first().unwrap().start, 0.0);
            assert_eq!(gpu.last().unwrap().end, t.makespan);
            assert!(gpu.windows(2).all(|w| w[0].end == w[1].start));
            assert_eq!(gpu.iter().filter(|e| e.kind == OpKind::F).count(), 6);
            assert_eq!(gpu.iter().filter(|e| e.kind == OpKind::B).count(), 6);
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            simulate_pipeline(5, 9, 0.3, 0.7),
            simulate_pipeline(5, 9, 0.3, 0.7)
        );
    }
}

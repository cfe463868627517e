//! Memory-constrained planning and timing of hybrid pipeline + data
//! parallel training.

pub mod cost;
pub mod pipeline;
pub mod plan;
pub mod scenario;

pub use cost::{
    allreduce_elements, allreduce_time, bubble_time, message_count, microbatches, send_time,
};
pub use pipeline::{simulate_pipeline, OpKind, PipelineTimeline, TimelineEvent};
pub use plan::{
    batch_breakdown, min_feasible_g_inter, model_state_bytes, BatchTimeBreakdown, ClusterSpec,
    ParallelConfig, WorkloadSpec,
};
pub use scenario::{
    evaluate, timeline, timeline_rows, BreakdownRow, Mode, ModeResult, Scenario, TimelineRow,
};

//! Per-frame stage traces, latency decomposition, summary statistics and
//! CSV artifacts.

mod io;
mod summary;
mod trace;

pub use io::{
    frames_header, read_frames, read_offsets, read_recovery, read_summary, write_frames,
    write_offsets, write_recovery, write_summary, Artifacts, OffsetRow, SummaryRow, FRAMES_CSV,
    OFFSETS_CSV, RECOVERY_CSV, SHARD_ROLES, SUMMARY_CSV,
};
pub use summary::{decompose, percentile, summarize, Decomposition, Summary};
pub use trace::{Accounting, FrameTrace, Outcome, Stage, TraceStore};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("stage {stage} already recorded for ssrc {ssrc:08x} frame {frame_id}")]
    DuplicateStage {
        ssrc: u32,
        frame_id: u64,
        stage: Stage,
    },
    #[error("outcome already recorded for ssrc {ssrc:08x} frame {frame_id}")]
    DuplicateOutcome { ssrc: u32, frame_id: u64 },
    #[error("trace for ssrc {ssrc:08x} frame {frame_id} is not a complete displayed frame")]
    IncompleteTrace { ssrc: u32, frame_id: u64 },
    #[error("cannot summarize an empty series")]
    EmptySeries,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

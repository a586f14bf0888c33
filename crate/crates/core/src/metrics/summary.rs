use super::trace::{FrameTrace, Outcome, Stage};
use super::MetricsError;
use crate::Nanos;

/// Per-frame latency split. `e2e == accum_proc + network` by construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decomposition {
    pub sender_proc: Nanos,
    pub server_proc: Nanos,
    pub receiver_proc: Nanos,
    pub accum_proc: Nanos,
    pub network: Nanos,
    pub e2e: Nanos,
}

impl Decomposition {
    pub const METRICS: [&'static str; 6] = [
        "e2e",
        "sender_proc",
        "server_proc",
        "receiver_proc",
        "accum_proc",
        "network",
    ];

    pub fn metric(&self, name: &str) -> Option<Nanos> {
        Some(match name {
            "e2e" => self.e2e,
            "sender_proc" => self.sender_proc,
            "server_proc" => self.server_proc,
            "receiver_proc" => self.receiver_proc,
            "accum_proc" => self.accum_proc,
            "network" => self.network,
            _ => return None,
        })
    }
}

pub fn decompose(trace: &FrameTrace) -> Result<Decomposition, MetricsError> {
    let incomplete = || MetricsError::IncompleteTrace {
        ssrc: trace.ssrc,
        frame_id: trace.frame_id,
    };
    if trace.outcome != Some(Outcome::Displayed) {
        return Err(incomplete());
    }
    let ts = |s: Stage| trace.get(s).ok_or_else(incomplete);
    let capture = ts(Stage::Capture)?;
    let sender_proc = ts(Stage::Sent)? - capture;
    let server_proc = ts(Stage::ServerOut)? - ts(Stage::ServerIn)?;
    let display = ts(Stage::Display)?;
    let receiver_proc = display - ts(Stage::Received)?;
    let accum_proc = sender_proc + server_proc + receiver_proc;
    let e2e = display - capture;
    Ok(Decomposition {
        sender_proc,
        server_proc,
        receiver_proc,
        accum_proc,
        network: e2e - accum_proc,
        e2e,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub min: Nanos,
    pub max: Nanos,
    pub p5: Nanos,
    pub p95: Nanos,
    pub stddev: f64,
}

/// Value at 1-indexed rank `ceil(p/100 * n)` of an ascending slice.
pub fn percentile(sorted: &[Nanos], p: u32) -> Result<Nanos, MetricsError> {
    if sorted.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    let n = sorted.len() as u64;
    let rank = (u64::from(p) * n).div_ceil(100).clamp(1, n);
    Ok(sorted[(rank - 1) as usize])
}

pub fn summarize(values: &[Nanos]) -> Result<Summary, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let mean = sorted.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    let stddev = if n > 1 {
        let ss: f64 = sorted.iter().map(|&v| (v as f64 - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(Summary {
        count: n,
        mean,
        min: sorted[0],
        max: sorted[n - 1],
        p5: percentile(&sorted, 5)?,
        p95: percentile(&sorted, 95)?,
        stddev,
    })
}

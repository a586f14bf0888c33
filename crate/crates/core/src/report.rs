//! Plain-text tables rendered from a run's CSV artifacts.

use std::fmt::Write;
use std::path::Path;

use crate::metrics::{
    decompose, summarize, Accounting, Artifacts, Decomposition, MetricsError, Summary, FRAMES_CSV,
};
use crate::Nanos;

fn ms(v: f64) -> String {
    format!("{:.2}", v / 1e6)
}

fn stat_line(out: &mut String, label: &str, s: &Summary) {
    let _ = writeln!(
        out,
        "  {label:<14}{:>7}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}",
        s.count,
        ms(s.mean),
        ms(s.stddev),
        ms(s.min as f64),
        ms(s.p5 as f64),
        ms(s.p95 as f64),
        ms(s.max as f64),
    );
}

/// Deterministic text report: latency decomposition and frame accounting
/// per stream, and recovery min/mean/max per run.
pub fn render(artifacts: &Artifacts) -> Result<String, MetricsError> {
    let mut out = String::new();
    for (run_id, store) in &artifacts.frames {
        let _ = writeln!(out, "run {run_id}");
        let ssrcs: std::collections::BTreeSet<u32> = store.iter().map(|t| t.ssrc).collect();
        for ssrc in ssrcs {
            let decs: Vec<Decomposition> = store
                .stream(ssrc)
                .filter_map(|t| decompose(t).ok())
                .collect();
            let _ = writeln!(out, "\nstream {ssrc:08x}: latency per displayed frame (ms)");
            let _ = writeln!(
                out,
                "  {:<14}{:>7}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}",
                "stage", "count", "mean", "stddev", "min", "p5", "p95", "max"
            );
            for name in Decomposition::METRICS {
                let values: Vec<Nanos> = decs.iter().filter_map(|d| d.metric(name)).collect();
                match summarize(&values) {
                    Ok(s) => stat_line(&mut out, name, &s),
                    Err(MetricsError::EmptySeries) => {
                        let _ = writeln!(out, "  {name:<14}{:>7}", 0);
                    }
                    Err(e) => return Err(e),
                }
            }
            let a = Accounting::of_stream(store, ssrc);
            let _ = writeln!(out, "\nstream {ssrc:08x}: frame accounting");
            let _ = writeln!(
                out,
                "  sent {}  displayed {}  drop_late {}  drop_loss {}  drop_need_idr {}  in_flight {}",
                a.sent, a.displayed, a.drop_late, a.drop_loss, a.drop_need_idr, a.in_flight
            );
        }
        let recoveries: Vec<Nanos> = artifacts
            .recovery
            .iter()
            .filter(|(id, _)| id == run_id)
            .map(|(_, r)| r.recovery())
            .collect();
        let _ = writeln!(out, "\nrecovery (ms)");
        match summarize(&recoveries) {
            Ok(s) => {
                let _ = writeln!(
                    out,
                    "  handovers {}  min {}  mean {}  max {}",
                    s.count,
                    ms(s.min as f64),
                    ms(s.mean),
                    ms(s.max as f64)
                );
            }
            Err(_) => {
                let _ = writeln!(out, "  handovers 0");
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// Renders a run directory, or the merged shards of standalone roles when
/// the directory has no frames.csv.
pub fn render_dir(dir: &Path) -> Result<String, MetricsError> {
    if dir.join(FRAMES_CSV).exists() {
        render(&Artifacts::load(dir)?)
    } else {
        render(&Artifacts::load_shards(dir)?)
    }
}

//! CSV persistence. Timestamps are integer nanoseconds; absent values are
//! empty fields.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::summary::Summary;
use super::trace::{FrameTrace, Outcome, Stage, TraceStore};
use super::MetricsError;
use crate::recovery::RecoveryRecord;
use crate::Nanos;

pub const FRAMES_CSV: &str = "frames.csv";
pub const RECOVERY_CSV: &str = "recovery.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const OFFSETS_CSV: &str = "offsets.csv";

pub const RECOVERY_HEADER: [&str; 7] = [
    "run_id",
    "handover_id",
    "outage_start",
    "detected",
    "session_established",
    "first_display",
    "recovery_ms",
];
pub const SUMMARY_HEADER: [&str; 9] = [
    "run_id", "metric", "count", "mean", "min", "max", "p5", "p95", "stddev",
];
pub const OFFSETS_HEADER: [&str; 6] = ["run_id", "entity", "round", "at", "estimate", "truth"];

pub fn frames_header() -> Vec<&'static str> {
    let mut h = vec!["run_id", "ssrc", "frame_id"];
    h.extend(Stage::ALL.iter().map(|s| s.column()));
    h.push("outcome");
    h
}

fn opt(v: Option<Nanos>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn bad(file: &str, why: impl std::fmt::Display) -> MetricsError {
    MetricsError::SchemaMismatch(format!("{file}: {why}"))
}

fn parse_opt(file: &str, field: &str) -> Result<Option<Nanos>, MetricsError> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .map_err(|_| bad(file, format!("bad integer {field:?}")))
}

fn parse_req<T: std::str::FromStr>(file: &str, field: &str) -> Result<T, MetricsError> {
    field
        .parse()
        .map_err(|_| bad(file, format!("bad value {field:?}")))
}

fn reader<R: Read>(file: &str, r: R, expected: &[&str]) -> Result<csv::Reader<R>, MetricsError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let headers = rdr.headers().map_err(|e| bad(file, e))?;
    if headers.iter().ne(expected.iter().copied()) {
        return Err(bad(
            file,
            format!("header {:?} does not match {:?}", headers, expected),
        ));
    }
    Ok(rdr)
}

fn open(dir: &Path, file: &str) -> Result<File, MetricsError> {
    File::open(dir.join(file)).map_err(|e| bad(file, e))
}

// ---- frames.csv ----

pub fn write_frames<W: Write>(w: W, run_id: &str, store: &TraceStore) -> Result<(), MetricsError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(frames_header())?;
    for t in store.iter() {
        let mut rec = vec![
            run_id.to_string(),
            t.ssrc.to_string(),
            t.frame_id.to_string(),
        ];
        rec.extend(Stage::ALL.iter().map(|&s| opt(t.get(s))));
        rec.push(
            t.outcome
                .map(|o| o.as_str().to_string())
                .unwrap_or_default(),
        );
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Rows grouped by run id, in file order.
pub fn read_frames<R: Read>(r: R) -> Result<Vec<(String, TraceStore)>, MetricsError> {
    let header = frames_header();
    let mut rdr = reader(FRAMES_CSV, r, &header)?;
    let mut runs: Vec<(String, Vec<FrameTrace>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(FRAMES_CSV, e))?;
        let run_id = &rec[0];
        let mut t = FrameTrace::new(
            parse_req(FRAMES_CSV, &rec[1])?,
            parse_req(FRAMES_CSV, &rec[2])?,
        );
        for (i, stage) in Stage::ALL.iter().enumerate() {
            if let Some(ts) = parse_opt(FRAMES_CSV, &rec[3 + i])? {
                t.record(*stage, ts)?;
            }
        }
        let outcome = &rec[13];
        if !outcome.is_empty() {
            let o = Outcome::parse(outcome)
                .ok_or_else(|| bad(FRAMES_CSV, format!("unknown outcome {outcome:?}")))?;
            t.set_outcome(o)?;
        }
        match runs.last_mut() {
            Some((id, traces)) if id == run_id => traces.push(t),
            _ => runs.push((run_id.to_string(), vec![t])),
        }
    }
    Ok(runs
        .into_iter()
        .map(|(id, traces)| (id, traces.into_iter().collect()))
        .collect())
}

// ---- recovery.csv ----

pub fn write_recovery<W: Write>(
    w: W,
    run_id: &str,
    records: &[RecoveryRecord],
) -> Result<(), MetricsError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(RECOVERY_HEADER)?;
    for r in records {
        wtr.write_record([
            run_id.to_string(),
            r.handover_id.to_string(),
            r.outage_start.to_string(),
            r.detected.to_string(),
            r.session_established.to_string(),
            opt(r.first_display),
            format!("{:.3}", r.recovery_ms()),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_recovery<R: Read>(r: R) -> Result<Vec<(String, RecoveryRecord)>, MetricsError> {
    let mut rdr = reader(RECOVERY_CSV, r, &RECOVERY_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(RECOVERY_CSV, e))?;
        let record = RecoveryRecord {
            handover_id: parse_req(RECOVERY_CSV, &rec[1])?,
            outage_start: parse_req(RECOVERY_CSV, &rec[2])?,
            detected: parse_req(RECOVERY_CSV, &rec[3])?,
            session_established: parse_req(RECOVERY_CSV, &rec[4])?,
            first_display: parse_opt(RECOVERY_CSV, &rec[5])?,
        };
        let _: f64 = parse_req(RECOVERY_CSV, &rec[6])?;
        out.push((rec[0].to_string(), record));
    }
    Ok(out)
}

// ---- summary.csv ----

/// One summary.csv row. Count-only metrics leave the statistics empty.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub metric: String,
    pub count: u64,
    pub stats: Option<Summary>,
}

pub fn write_summary<W: Write>(
    w: W,
    run_id: &str,
    rows: &[SummaryRow],
) -> Result<(), MetricsError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(SUMMARY_HEADER)?;
    for row in rows {
        let mut rec = vec![
            run_id.to_string(),
            row.metric.clone(),
            row.count.to_string(),
        ];
        match &row.stats {
            Some(s) => rec.extend([
                format!("{:.1}", s.mean),
                s.min.to_string(),
                s.max.to_string(),
                s.p5.to_string(),
                s.p95.to_string(),
                format!("{:.1}", s.stddev),
            ]),
            None => rec.extend(std::iter::repeat_n(String::new(), 6)),
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_summary<R: Read>(r: R) -> Result<Vec<(String, SummaryRow)>, MetricsError> {
    let mut rdr = reader(SUMMARY_CSV, r, &SUMMARY_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(SUMMARY_CSV, e))?;
        let count: u64 = parse_req(SUMMARY_CSV, &rec[2])?;
        let stats = if rec[3].is_empty() {
            None
        } else {
            Some(Summary {
                count: count as usize,
                mean: parse_req(SUMMARY_CSV, &rec[3])?,
                min: parse_req(SUMMARY_CSV, &rec[4])?,
                max: parse_req(SUMMARY_CSV, &rec[5])?,
                p5: parse_req(SUMMARY_CSV, &rec[6])?,
                p95: parse_req(SUMMARY_CSV, &rec[7])?,
                stddev: parse_req(SUMMARY_CSV, &rec[8])?,
            })
        };
        out.push((
            rec[0].to_string(),
            SummaryRow {
                metric: rec[1].to_string(),
                count,
                stats,
            },
        ));
    }
    Ok(out)
}

// ---- offsets.csv ----

/// One clock-sync round result for one entity. `truth` is known only under
/// emulation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OffsetRow {
    pub entity: String,
    pub round: u32,
    /// Server time at which the estimate took effect.
    pub at: Nanos,
    pub estimate: Nanos,
    pub truth: Option<Nanos>,
}

pub fn write_offsets<W: Write>(w: W, run_id: &str, rows: &[OffsetRow]) -> Result<(), MetricsError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(OFFSETS_HEADER)?;
    for r in rows {
        wtr.write_record([
            run_id.to_string(),
            r.entity.clone(),
            r.round.to_string(),
            r.at.to_string(),
            r.estimate.to_string(),
            opt(r.truth),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_offsets<R: Read>(r: R) -> Result<Vec<(String, OffsetRow)>, MetricsError> {
    let mut rdr = reader(OFFSETS_CSV, r, &OFFSETS_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(OFFSETS_CSV, e))?;
        out.push((
            rec[0].to_string(),
            OffsetRow {
                entity: rec[1].to_string(),
                round: parse_req(OFFSETS_CSV, &rec[2])?,
                at: parse_req(OFFSETS_CSV, &rec[3])?,
                estimate: parse_req(OFFSETS_CSV, &rec[4])?,
                truth: parse_opt(OFFSETS_CSV, &rec[5])?,
            },
        ));
    }
    Ok(out)
}

/// The artifact files of one run directory.
#[derive(Clone, Debug, Default)]
pub struct Artifacts {
    pub frames: Vec<(String, TraceStore)>,
    pub recovery: Vec<(String, RecoveryRecord)>,
    pub summary: Vec<(String, SummaryRow)>,
}

impl Artifacts {
    /// frames.csv, recovery.csv and summary.csv must all exist and match
    /// their schemas.
    pub fn load(dir: &Path) -> Result<Self, MetricsError> {
        Ok(Self {
            frames: read_frames(open(dir, FRAMES_CSV)?)?,
            recovery: read_recovery(open(dir, RECOVERY_CSV)?)?,
            summary: read_summary(open(dir, SUMMARY_CSV)?)?,
        })
    }

    /// Per-role `frames-<role>.csv` shards from standalone processes,
    /// merged by run id. recovery.csv is optional; there is no summary.
    pub fn load_shards(dir: &Path) -> Result<Self, MetricsError> {
        let mut merged: BTreeMap<String, TraceStore> = BTreeMap::new();
        let mut found = false;
        for role in SHARD_ROLES {
            let name = format!("frames-{role}.csv");
            if !dir.join(&name).exists() {
                continue;
            }
            found = true;
            for (run, store) in read_frames(open(dir, &name)?)? {
                merged.entry(run).or_default().merge(store)?;
            }
        }
        if !found {
            return Err(MetricsError::SchemaMismatch(format!(
                "no {FRAMES_CSV} or frames-<role>.csv in {}",
                dir.display()
            )));
        }
        let recovery = if dir.join(RECOVERY_CSV).exists() {
            read_recovery(open(dir, RECOVERY_CSV)?)?
        } else {
            Vec::new()
        };
        let frames = merged
            .into_iter()
            .map(|(run, mut store)| {
                store.finalize();
                (run, store)
            })
            .collect();
        Ok(Self {
            frames,
            recovery,
            summary: Vec::new(),
        })
    }
}

/// Roles that write frame shards in standalone mode.
pub const SHARD_ROLES: [&str; 3] = ["sender", "server", "receiver"];

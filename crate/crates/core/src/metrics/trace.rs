use std::collections::BTreeMap;
use std::fmt;

use super::MetricsError;
use crate::Nanos;

/// Pipeline stages in order. All timestamps are server-referenced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Capture,
    EncodeDone,
    PayloadDone,
    Sent,
    ServerIn,
    ServerOut,
    Received,
    DepayloadDone,
    DecodeDone,
    Display,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Capture,
        Stage::EncodeDone,
        Stage::PayloadDone,
        Stage::Sent,
        Stage::ServerIn,
        Stage::ServerOut,
        Stage::Received,
        Stage::DepayloadDone,
        Stage::DecodeDone,
        Stage::Display,
    ];

    pub fn column(self) -> &'static str {
        match self {
            Stage::Capture => "capture",
            Stage::EncodeDone => "encode_done",
            Stage::PayloadDone => "payload_done",
            Stage::Sent => "sent",
            Stage::ServerIn => "server_in",
            Stage::ServerOut => "server_out",
            Stage::Received => "received",
            Stage::DepayloadDone => "depayload_done",
            Stage::DecodeDone => "decode_done",
            Stage::Display => "display",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Outcome {
    Displayed,
    DropLate,
    DropLoss,
    DropNeedIdr,
    InFlight,
}

impl Outcome {
    pub const ALL: [Outcome; 5] = [
        Outcome::Displayed,
        Outcome::DropLate,
        Outcome::DropLoss,
        Outcome::DropNeedIdr,
        Outcome::InFlight,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Displayed => "displayed",
            Outcome::DropLate => "drop_late",
            Outcome::DropLoss => "drop_loss",
            Outcome::DropNeedIdr => "drop_need_idr",
            Outcome::InFlight => "in_flight",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Outcome::ALL.into_iter().find(|o| o.as_str() == s)
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FrameTrace {
    pub ssrc: u32,
    pub frame_id: u64,
    stages: [Option<Nanos>; 10],
    pub outcome: Option<Outcome>,
}

impl FrameTrace {
    pub fn new(ssrc: u32, frame_id: u64) -> Self {
        Self {
            ssrc,
            frame_id,
            ..Self::default()
        }
    }

    pub fn get(&self, stage: Stage) -> Option<Nanos> {
        self.stages[stage.index()]
    }

    pub fn record(&mut self, stage: Stage, ts: Nanos) -> Result<(), MetricsError> {
        let slot = &mut self.stages[stage.index()];
        if slot.is_some() {
            return Err(MetricsError::DuplicateStage {
                ssrc: self.ssrc,
                frame_id: self.frame_id,
                stage,
            });
        }
        *slot = Some(ts);
        Ok(())
    }

    pub fn set_outcome(&mut self, outcome: Outcome) -> Result<(), MetricsError> {
        if self.outcome.is_some() {
            return Err(MetricsError::DuplicateOutcome {
                ssrc: self.ssrc,
                frame_id: self.frame_id,
            });
        }
        self.outcome = Some(outcome);
        Ok(())
    }

    /// Present timestamps never decrease in pipeline order.
    pub fn is_monotone(&self) -> bool {
        self.stages
            .iter()
            .flatten()
            .zip(self.stages.iter().flatten().skip(1))
            .all(|(a, b)| a <= b)
    }

    /// Outcome is Displayed exactly when a display timestamp exists.
    pub fn display_consistent(&self) -> bool {
        (self.outcome == Some(Outcome::Displayed)) == self.get(Stage::Display).is_some()
    }

    fn merge(&mut self, other: FrameTrace) -> Result<(), MetricsError> {
        for stage in Stage::ALL {
            if let Some(ts) = other.get(stage) {
                self.record(stage, ts)?;
            }
        }
        if let Some(o) = other.outcome {
            self.set_outcome(o)?;
        }
        Ok(())
    }
}

/// Append-only store of frame traces keyed by (ssrc, frame_id). Each
/// entity owns one store; shards are merged after the run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TraceStore {
    traces: BTreeMap<(u32, u64), FrameTrace>,
}

impl TraceStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_stage(
        &mut self,
        ssrc: u32,
        frame_id: u64,
        stage: Stage,
        ts: Nanos,
    ) -> Result<(), MetricsError> {
        self.entry(ssrc, frame_id).record(stage, ts)
    }

    pub fn set_outcome(
        &mut self,
        ssrc: u32,
        frame_id: u64,
        outcome: Outcome,
    ) -> Result<(), MetricsError> {
        self.entry(ssrc, frame_id).set_outcome(outcome)
    }

    pub fn get(&self, ssrc: u32, frame_id: u64) -> Option<&FrameTrace> {
        self.traces.get(&(ssrc, frame_id))
    }

    pub fn contains_stage(&self, ssrc: u32, frame_id: u64, stage: Stage) -> bool {
        self.get(ssrc, frame_id)
            .is_some_and(|t| t.get(stage).is_some())
    }

    pub fn merge(&mut self, other: TraceStore) -> Result<(), MetricsError> {
        for ((ssrc, id), trace) in other.traces {
            self.entry(ssrc, id).merge(trace)?;
        }
        Ok(())
    }

    /// Marks every trace without an outcome as InFlight.
    pub fn finalize(&mut self) {
        for t in self.traces.values_mut() {
            t.outcome.get_or_insert(Outcome::InFlight);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &FrameTrace> {
        self.traces.values()
    }

    pub fn stream(&self, ssrc: u32) -> impl Iterator<Item = &FrameTrace> {
        self.traces
            .range((ssrc, 0)..=(ssrc, u64::MAX))
            .map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    fn entry(&mut self, ssrc: u32, frame_id: u64) -> &mut FrameTrace {
        self.traces
            .entry((ssrc, frame_id))
            .or_insert_with(|| FrameTrace::new(ssrc, frame_id))
    }
}

impl FromIterator<FrameTrace> for TraceStore {
    fn from_iter<I: IntoIterator<Item = FrameTrace>>(iter: I) -> Self {
        Self {
            traces: iter
                .into_iter()
                .map(|t| ((t.ssrc, t.frame_id), t))
                .collect(),
        }
    }
}

/// Counts of outcomes for one stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Accounting {
    pub sent: u64,
    pub displayed: u64,
    pub drop_late: u64,
    pub drop_loss: u64,
    pub drop_need_idr: u64,
    pub in_flight: u64,
}

impl Accounting {
    /// Tallies every trace of `ssrc` that has a sent timestamp.
    pub fn of_stream(store: &TraceStore, ssrc: u32) -> Self {
        let mut a = Accounting::default();
        for t in store.stream(ssrc).filter(|t| t.get(Stage::Sent).is_some()) {
            a.sent += 1;
            match t.outcome.unwrap_or(Outcome::InFlight) {
                Outcome::Displayed => a.displayed += 1,
                Outcome::DropLate => a.drop_late += 1,
                Outcome::DropLoss => a.drop_loss += 1,
                Outcome::DropNeedIdr => a.drop_need_idr += 1,
                Outcome::InFlight => a.in_flight += 1,
            }
        }
        a
    }

    pub fn outcomes(&self) -> u64 {
        self.displayed + self.drop_late + self.drop_loss + self.drop_need_idr + self.in_flight
    }

    pub fn dropped(&self) -> u64 {
        self.drop_late + self.drop_loss + self.drop_need_idr
    }

    pub fn is_conserved(&self) -> bool {
        self.outcomes() == self.sent
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stages_recorded_once() {
        let mut s = TraceStore::new();
        s.record_stage(1, 0, Stage::Capture, 10).unwrap();
        s.record_stage(1, 0, Stage::EncodeDone, 20).unwrap();
        assert!(s.get(1, 0).unwrap().is_monotone());
        assert!(matches!(
            s.record_stage(1, 0, Stage::EncodeDone, 30),
            Err(MetricsError::DuplicateStage {
                stage: Stage::EncodeDone,
                ..
            })
        ));
    }

    #[test]
    fn streams_are_keyed_by_ssrc() {
        let mut s = TraceStore::new();
        s.record_stage(1, 5, Stage::Capture, 10).unwrap();
        s.record_stage(2, 5, Stage::Capture, 10).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.stream(1).count(), 1);
    }

    #[test]
    fn merge_rejects_conflicts() {
        let mut a = TraceStore::new();
        a.record_stage(1, 0, Stage::Capture, 1).unwrap();
        let mut b = TraceStore::new();
        b.record_stage(1, 0, Stage::Received, 9).unwrap();
        a.merge(b.clone()).unwrap();
        assert_eq!(a.get(1, 0).unwrap().get(Stage::Received), Some(9));
        assert!(a.merge(b).is_err());
    }

    #[test]
    fn non_monotone_detected() {
        let mut t = FrameTrace::new(1, 0);
        t.record(Stage::Capture, 10).unwrap();
        t.record(Stage::Display, 5).unwrap();
        assert!(!t.is_monotone());
    }

    #[test]
    fn finalize_fills_in_flight() {
        let mut s = TraceStore::new();
        s.record_stage(1, 0, Stage::Sent, 1).unwrap();
        s.record_stage(1, 1, Stage::Sent, 2).unwrap();
        s.set_outcome(1, 0, Outcome::Displayed).unwrap();
        s.finalize();
        let a = Accounting::of_stream(&s, 1);
        assert_eq!((a.sent, a.displayed, a.in_flight), (2, 1, 1));
        assert!(a.is_conserved());
    }
}

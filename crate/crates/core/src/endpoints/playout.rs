use crate::media::{EncodedFrame, FrameKind};
use crate::rtp::FrameAssembly;
use crate::{Nanos, MS};

pub const DEFAULT_TARGET_LATENCY: Nanos = 150 * MS;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlayoutMode {
    /// Hold every frame until its deadline.
    Deadline,
    /// Show frames as soon as they are decoded; the deadline only decides
    /// lateness.
    LowLatency,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlayoutPolicy {
    target_latency: Nanos,
    pub mode: PlayoutMode,
}

impl PlayoutPolicy {
    pub fn new(target_latency: Nanos, mode: PlayoutMode) -> Result<Self, String> {
        if target_latency <= 0 {
            return Err(format!(
                "target latency must be positive, got {target_latency} ns"
            ));
        }
        Ok(Self {
            target_latency,
            mode,
        })
    }

    /// Never late. Used for pre-roll replay.
    pub fn unbounded() -> Self {
        Self {
            target_latency: Nanos::MAX / 4,
            mode: PlayoutMode::LowLatency,
        }
    }

    pub fn target_latency(&self) -> Nanos {
        self.target_latency
    }
}

impl Default for PlayoutPolicy {
    fn default() -> Self {
        Self {
            target_latency: DEFAULT_TARGET_LATENCY,
            mode: PlayoutMode::Deadline,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlayoutDecision {
    Display { at: Nanos },
    DropLate,
    DropLoss,
    DropNeedIdr,
}

/// Reference-chain bookkeeping of the stub decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderStub {
    pub last_decoded: Option<u64>,
    pub need_idr: bool,
}

impl Default for DecoderStub {
    fn default() -> Self {
        Self {
            last_decoded: None,
            need_idr: true,
        }
    }
}

impl DecoderStub {
    pub fn require_idr(&mut self) {
        self.need_idr = true;
    }
}

/// Decides one emitted frame. `capture_ts` is on the reference clock,
/// `clock_offset` is reference minus local, and `now` is local time when
/// the frame is ready to show.
pub fn playout_decide(
    asm: &FrameAssembly,
    capture_ts: Nanos,
    clock_offset: Nanos,
    now: Nanos,
    policy: &PlayoutPolicy,
    dec: &mut DecoderStub,
) -> PlayoutDecision {
    let frame = match asm
        .complete
        .then(|| EncodedFrame::from_nal_units(asm.nal_units.clone()))
    {
        Some(Ok(f)) if !asm.loss_detected => f,
        _ => {
            dec.need_idr = true;
            return PlayoutDecision::DropLoss;
        }
    };
    if frame.kind == FrameKind::P {
        let breaks_chain = dec
            .last_decoded
            .is_none_or(|last| frame.frame_id != last + 1);
        if dec.need_idr || breaks_chain {
            dec.need_idr = true;
            return PlayoutDecision::DropNeedIdr;
        }
    }
    let deadline = capture_ts - clock_offset + policy.target_latency;
    if now > deadline {
        dec.need_idr = true;
        return PlayoutDecision::DropLate;
    }
    dec.last_decoded = Some(frame.frame_id);
    if frame.kind == FrameKind::Idr {
        dec.need_idr = false;
    }
    let at = match policy.mode {
        PlayoutMode::Deadline => now.max(deadline),
        PlayoutMode::LowLatency => now,
    };
    PlayoutDecision::Display { at }
}

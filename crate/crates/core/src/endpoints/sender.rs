use std::net::SocketAddr;

use bytes::Bytes;

use super::node::{Node, Outgoing, SyncClient, SyncConfig};
use super::EndpointError;
use crate::control::ControlMessage;
use crate::media::{
    EncoderConfig, FrameRingBuffer, FrameSource, SyntheticEncoder, DEFAULT_PREROLL,
};
use crate::metrics::{OffsetRow, Stage, TraceStore};
use crate::rtp::{Packetizer, RtpPacket, DEFAULT_MAX_PAYLOAD};
use crate::{Nanos, MS};

pub const DEFAULT_LIVE_SSRC: u32 = 0x5EED_0001;
pub const DEFAULT_PREROLL_SSRC: u32 = 0x5EED_0002;

#[derive(Clone, Debug, PartialEq)]
pub struct SenderConfig {
    pub encoder: EncoderConfig,
    pub live_ssrc: u32,
    pub preroll_ssrc: u32,
    pub initial_seq: u16,
    pub ts_base: u32,
    pub preroll_initial_seq: u16,
    pub preroll_ts_base: u32,
    pub max_payload: usize,
    /// Synthetic encode latency after capture.
    pub encode_delay: Nanos,
    /// Synthetic payloading latency after encode.
    pub payload_delay: Nanos,
    pub preroll_capacity: Nanos,
    /// Gap between consecutive pre-roll frames on the wire.
    pub preroll_pacing: Nanos,
}

impl Default for SenderConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            live_ssrc: DEFAULT_LIVE_SSRC,
            preroll_ssrc: DEFAULT_PREROLL_SSRC,
            initial_seq: 0,
            ts_base: 0,
            preroll_initial_seq: 0,
            preroll_ts_base: 0,
            max_payload: DEFAULT_MAX_PAYLOAD,
            encode_delay: 0,
            payload_delay: 0,
            preroll_capacity: DEFAULT_PREROLL,
            preroll_pacing: 5 * MS,
        }
    }
}

/// Packets of one live frame, to be sent at `sent_at` (reference clock).
#[derive(Clone, Debug)]
pub struct TickOutput {
    pub frame_id: u64,
    pub sent_at: Nanos,
    pub packets: Vec<RtpPacket>,
}

/// Packets of one replayed frame, sent `delay` after the request.
#[derive(Clone, Debug)]
pub struct PrerollFrame {
    pub frame_id: u64,
    pub delay: Nanos,
    pub packets: Vec<RtpPacket>,
}

/// Capture, encode stub, ring buffer and packetizers. Timestamps passed in
/// and recorded are on the reference clock.
pub struct SenderPipeline {
    cfg: SenderConfig,
    source: Box<dyn FrameSource + Send>,
    live: Packetizer,
    preroll: Packetizer,
    ring: FrameRingBuffer,
    traces: TraceStore,
    frames_sent: u64,
}

impl SenderPipeline {
    pub fn new(cfg: SenderConfig) -> Result<Self, EndpointError> {
        let encoder = SyntheticEncoder::new(cfg.encoder.clone())?;
        Self::with_source(cfg, Box::new(encoder))
    }

    pub fn with_source(
        cfg: SenderConfig,
        source: Box<dyn FrameSource + Send>,
    ) -> Result<Self, EndpointError> {
        cfg.encoder.validate()?;
        if cfg.live_ssrc == cfg.preroll_ssrc {
            return Err(EndpointError::InvalidConfig(
                "live and pre-roll ssrc must differ".into(),
            ));
        }
        Ok(Self {
            live: Packetizer::new(cfg.live_ssrc, cfg.initial_seq, cfg.ts_base, cfg.max_payload)?,
            preroll: Packetizer::new(
                cfg.preroll_ssrc,
                cfg.preroll_initial_seq,
                cfg.preroll_ts_base,
                cfg.max_payload,
            )?,
            ring: FrameRingBuffer::new(cfg.preroll_capacity),
            traces: TraceStore::new(),
            frames_sent: 0,
            source,
            cfg,
        })
    }

    pub fn config(&self) -> &SenderConfig {
        &self.cfg
    }

    pub fn ring(&self) -> &FrameRingBuffer {
        &self.ring
    }

    pub fn frames_sent(&self) -> u64 {
        self.frames_sent
    }

    pub fn next_live_seq(&self) -> u16 {
        self.live.next_seq()
    }

    pub fn traces(&self) -> &TraceStore {
        &self.traces
    }

    pub fn into_traces(self) -> TraceStore {
        self.traces
    }

    /// One frame period: capture, encode, buffer, packetize.
    pub fn tick(&mut self, capture_ts: Nanos) -> Result<TickOutput, EndpointError> {
        let frame = self.source.next_frame(capture_ts);
        let id = frame.frame_id;
        let encode_done = capture_ts + self.cfg.encode_delay;
        let payload_done = encode_done + self.cfg.payload_delay;
        let packets = self.live.packetize_frame(&frame, self.cfg.encoder.fps);
        self.ring.push(frame)?;
        let ssrc = self.cfg.live_ssrc;
        self.traces
            .record_stage(ssrc, id, Stage::Capture, capture_ts)?;
        self.traces
            .record_stage(ssrc, id, Stage::EncodeDone, encode_done)?;
        self.traces
            .record_stage(ssrc, id, Stage::PayloadDone, payload_done)?;
        self.traces
            .record_stage(ssrc, id, Stage::Sent, payload_done)?;
        self.frames_sent += 1;
        Ok(TickOutput {
            frame_id: id,
            sent_at: payload_done,
            packets,
        })
    }

    /// Replays the buffered pre-roll on its own ssrc, paced one frame per
    /// `preroll_pacing` from `now`.
    pub fn send_preroll(&mut self, now: Nanos) -> Result<Vec<PrerollFrame>, EndpointError> {
        let frames = self.ring.snapshot()?;
        let ssrc = self.cfg.preroll_ssrc;
        let mut out = Vec::with_capacity(frames.len());
        for (i, frame) in frames.iter().enumerate() {
            let delay = i as Nanos * self.cfg.preroll_pacing;
            self.traces
                .record_stage(ssrc, frame.frame_id, Stage::Capture, frame.capture_ts)?;
            self.traces
                .record_stage(ssrc, frame.frame_id, Stage::Sent, now + delay)?;
            out.push(PrerollFrame {
                frame_id: frame.frame_id,
                delay,
                packets: self.preroll.packetize_frame(frame, self.cfg.encoder.fps),
            });
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct SenderNodeConfig {
    pub pipeline: SenderConfig,
    pub stream: String,
    pub control_addr: SocketAddr,
    pub rtp_addr: SocketAddr,
    pub server_control: SocketAddr,
    pub server_rtp: SocketAddr,
    /// Local time before which no frame is captured.
    pub start_at: Nanos,
    /// Stop after this many live frames.
    pub frame_limit: Option<u64>,
    /// Local time of the pre-roll request.
    pub preroll_at: Option<Nanos>,
    pub sync: SyncConfig,
}

/// Sender entity: clock sync against the server, then one frame per tick.
pub struct SenderNode {
    cfg: SenderNodeConfig,
    pipeline: SenderPipeline,
    sync: SyncClient,
    cseq: u32,
    stream_start: Option<Nanos>,
    next_frame: u64,
    preroll_done: bool,
}

impl SenderNode {
    pub fn new(cfg: SenderNodeConfig, pipeline: SenderPipeline, now: Nanos) -> Self {
        Self {
            sync: SyncClient::new("sender", cfg.sync, now),
            cfg,
            pipeline,
            cseq: 0,
            stream_start: None,
            next_frame: 0,
            preroll_done: false,
        }
    }

    pub fn sync_client_mut(&mut self) -> &mut SyncClient {
        &mut self.sync
    }

    pub fn offset_rows(&self) -> &[OffsetRow] {
        self.sync.rows()
    }

    pub fn pipeline(&self) -> &SenderPipeline {
        &self.pipeline
    }

    pub fn frames_sent(&self) -> u64 {
        self.pipeline.frames_sent()
    }

    pub fn is_finished(&self) -> bool {
        self.cfg.frame_limit.is_some_and(|n| self.next_frame >= n)
    }

    pub fn into_parts(self) -> (TraceStore, Vec<OffsetRow>) {
        let rows = self.sync.rows().to_vec();
        (self.pipeline.into_traces(), rows)
    }

    fn next_tick(&self) -> Option<Nanos> {
        let start = self.stream_start?;
        if self.is_finished() {
            return None;
        }
        Some(start + self.cfg.pipeline.encoder.frame_offset(self.next_frame))
    }

    fn rtp_out(&self, pkt: &RtpPacket, at: Nanos) -> Outgoing {
        Outgoing {
            from: self.cfg.rtp_addr,
            to: self.cfg.server_rtp,
            at,
            bytes: pkt.encode(),
        }
    }
}

impl Node for SenderNode {
    type Error = EndpointError;

    fn on_datagram(
        &mut self,
        _local: SocketAddr,
        from: SocketAddr,
        bytes: Bytes,
        now: Nanos,
    ) -> Result<Vec<Outgoing>, EndpointError> {
        if from != self.cfg.server_control {
            return Ok(Vec::new());
        }
        match ControlMessage::parse(&bytes) {
            Ok(resp) if !resp.is_request() => {
                self.sync.on_response(&resp, now);
            }
            Ok(_) => {}
            Err(e) => log::debug!("sender ignoring bad control datagram: {e}"),
        }
        Ok(Vec::new())
    }

    fn on_timer(&mut self, now: Nanos) -> Result<Vec<Outgoing>, EndpointError> {
        let mut out = Vec::new();
        self.cseq += 1;
        if let Some(ping) = self.sync.poll(now, &self.cfg.stream, self.cseq) {
            out.push(Outgoing {
                from: self.cfg.control_addr,
                to: self.cfg.server_control,
                at: now,
                bytes: ping.render().into(),
            });
        }
        if self.stream_start.is_none() && now >= self.cfg.start_at && self.sync.is_synced() {
            log::info!("sender streaming from local {now}");
            self.stream_start = Some(now);
        }
        let offset = self.sync.offset().unwrap_or(0);
        while let Some(tick) = self.next_tick().filter(|&t| t <= now) {
            let frame = self.pipeline.tick(tick + offset)?;
            let send_at = frame.sent_at - offset;
            out.extend(frame.packets.iter().map(|p| self.rtp_out(p, send_at)));
            self.next_frame += 1;
        }
        if let Some(at) = self
            .cfg
            .preroll_at
            .filter(|&t| t <= now && !self.preroll_done)
        {
            if self.stream_start.is_some() {
                self.preroll_done = true;
                let frames = self.pipeline.send_preroll(now + offset)?;
                log::info!(
                    "sender replaying {} pre-roll frames requested at {at}",
                    frames.len()
                );
                for f in frames {
                    out.extend(f.packets.iter().map(|p| self.rtp_out(p, now + f.delay)));
                }
            }
        }
        Ok(out)
    }

    fn next_timer(&self) -> Option<Nanos> {
        let mut t = self.sync.next_timer();
        if self.stream_start.is_none() && self.sync.is_synced() {
            t = t.min(self.cfg.start_at);
        }
        if let Some(tick) = self.next_tick() {
            t = t.min(tick);
        }
        if let Some(p) = self
            .cfg
            .preroll_at
            .filter(|_| !self.preroll_done && self.stream_start.is_some())
        {
            t = t.min(p);
        }
        Some(t)
    }

    fn sockets(&self) -> Vec<SocketAddr> {
        vec![self.cfg.control_addr, self.cfg.rtp_addr]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pipeline() -> SenderPipeline {
        SenderPipeline::new(SenderConfig {
            encode_delay: 25 * MS,
            payload_delay: 2 * MS,
            ..SenderConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn ticks_produce_consecutive_frames() {
        let mut p = pipeline();
        let mut last_seq = None;
        for (i, t) in [0, 33_333_333, 66_666_666].into_iter().enumerate() {
            let out = p.tick(t).unwrap();
            assert_eq!(out.frame_id, i as u64);
            let tr = p.traces().get(DEFAULT_LIVE_SSRC, i as u64).unwrap();
            assert_eq!(tr.get(Stage::Capture), Some(t));
            assert!(tr.is_monotone());
            assert_eq!(out.sent_at, t + 27 * MS);
            for pkt in &out.packets {
                if let Some(prev) = last_seq {
                    assert_eq!(pkt.seq, u16::wrapping_add(prev, 1));
                }
                last_seq = Some(pkt.seq);
            }
        }
    }

    #[test]
    fn preroll_of_empty_ring_fails() {
        let mut p = pipeline();
        assert!(matches!(
            p.send_preroll(0),
            Err(EndpointError::Media(crate::media::MediaError::EmptyBuffer))
        ));
    }

    #[test]
    fn preroll_after_twenty_seconds() {
        let mut p = pipeline();
        let cfg = p.config().encoder.clone();
        for id in 0..600 {
            p.tick(cfg.frame_offset(id)).unwrap();
        }
        let live_seq = p.next_live_seq();
        let frames = p.send_preroll(20_000 * MS).unwrap();
        // Ring holds ~15 s = 451 frames; trimmed to the first IDR at frame 150.
        let span = frames.last().unwrap().frame_id - frames[0].frame_id;
        assert_eq!(frames[0].frame_id % 30, 0);
        assert_eq!(frames[0].frame_id, 150);
        assert_eq!(frames.len(), 450);
        assert!(cfg.frame_offset(span) <= 15_000 * MS);
        assert!(frames
            .iter()
            .all(|f| f.packets.iter().all(|p| p.ssrc == DEFAULT_PREROLL_SSRC)));
        assert_eq!(p.next_live_seq(), live_seq);
    }
}

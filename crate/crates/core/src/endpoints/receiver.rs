use std::collections::BTreeMap;
use std::net::{IpAddr, SocketAddr};

use bytes::Bytes;

use super::node::{Node, Outgoing, SyncClient, SyncConfig};
use super::playout::{playout_decide, DecoderStub, PlayoutDecision, PlayoutPolicy};
use super::sender::{DEFAULT_LIVE_SSRC, DEFAULT_PREROLL_SSRC};
use super::EndpointError;
use crate::control::{status, ControlMessage, Method, SessionId};
use crate::metrics::{MetricsError, OffsetRow, Outcome, Stage, TraceStore};
use crate::recovery::{
    ConnectivityMonitor, ConnectivityPhase, Handshake, HandshakeOutput, MonitorAction,
    MonitorConfig, ReconnectConfig, RecoveryRecord,
};
use crate::relay::FrameClock;
use crate::rtp::{Depacketizer, DepacketizerConfig, FrameAssembly, RtpPacket};
use crate::{Nanos, MS};

#[derive(Clone, Debug)]
pub struct ReceiverConfig {
    pub live_ssrc: u32,
    pub preroll_ssrc: u32,
    pub fps: u32,
    pub ts_base: u32,
    pub preroll_ts_base: u32,
    pub depay_delay: Nanos,
    pub decode_delay: Nanos,
    pub policy: PlayoutPolicy,
    pub depacketizer: DepacketizerConfig,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self {
            live_ssrc: DEFAULT_LIVE_SSRC,
            preroll_ssrc: DEFAULT_PREROLL_SSRC,
            fps: 30,
            ts_base: 0,
            preroll_ts_base: 0,
            depay_delay: 0,
            decode_delay: 0,
            policy: PlayoutPolicy::default(),
            depacketizer: DepacketizerConfig::default(),
        }
    }
}

/// Playout result of one frame. `at` fields are local time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameEvent {
    pub ssrc: u32,
    pub frame_id: u64,
    pub decision: PlayoutDecision,
}

struct StreamState {
    depay: Depacketizer,
    decoder: DecoderStub,
    clock: FrameClock,
    policy: PlayoutPolicy,
    /// Frames below this id are resolved.
    next_expected: Option<u64>,
    decoder_free_at: Nanos,
}

/// Depacketize, decode stub and playout for the live and pre-roll streams.
/// Traces are recorded on the reference clock: local time plus `offset`.
pub struct ReceiverPipeline {
    cfg: ReceiverConfig,
    streams: BTreeMap<u32, StreamState>,
    traces: TraceStore,
    stale_frames: u64,
}

impl ReceiverPipeline {
    pub fn new(cfg: ReceiverConfig) -> Result<Self, EndpointError> {
        if cfg.live_ssrc == cfg.preroll_ssrc {
            return Err(EndpointError::InvalidConfig(
                "live and pre-roll ssrc must differ".into(),
            ));
        }
        if cfg.fps == 0 || cfg.depay_delay < 0 || cfg.decode_delay < 0 {
            return Err(EndpointError::InvalidConfig(
                "fps must be positive and delays non-negative".into(),
            ));
        }
        let stream = |ts_base, policy, next_expected| StreamState {
            depay: Depacketizer::new(cfg.depacketizer.clone()),
            decoder: DecoderStub::default(),
            clock: FrameClock::new(ts_base, cfg.fps),
            policy,
            next_expected,
            decoder_free_at: Nanos::MIN,
        };
        let mut streams = BTreeMap::new();
        streams.insert(cfg.live_ssrc, stream(cfg.ts_base, cfg.policy, Some(0)));
        streams.insert(
            cfg.preroll_ssrc,
            stream(cfg.preroll_ts_base, PlayoutPolicy::unbounded(), None),
        );
        Ok(Self {
            cfg,
            streams,
            traces: TraceStore::new(),
            stale_frames: 0,
        })
    }

    pub fn config(&self) -> &ReceiverConfig {
        &self.cfg
    }

    pub fn traces(&self) -> &TraceStore {
        &self.traces
    }

    pub fn stale_frames(&self) -> u64 {
        self.stale_frames
    }

    /// Marks every unresolved frame in flight and hands back the traces.
    pub fn into_traces(mut self) -> TraceStore {
        self.traces.finalize();
        self.traces
    }

    /// Feeds one packet arriving at local `now`. Unknown ssrcs are ignored.
    pub fn on_packet(
        &mut self,
        pkt: RtpPacket,
        now: Nanos,
        offset: Nanos,
    ) -> Result<Vec<FrameEvent>, MetricsError> {
        let ssrc = pkt.ssrc;
        let Some(st) = self.streams.get_mut(&ssrc) else {
            return Ok(Vec::new());
        };
        let frames = st.depay.push(pkt, now);
        self.process(ssrc, frames, now, offset)
    }

    /// Drops partial state after a session change; the next frame shown on
    /// any stream must be an IDR.
    pub fn resync(&mut self, now: Nanos, offset: Nanos) -> Result<Vec<FrameEvent>, MetricsError> {
        let mut events = Vec::new();
        let ssrcs: Vec<u32> = self.streams.keys().copied().collect();
        for ssrc in ssrcs {
            let st = self.streams.get_mut(&ssrc).expect("known ssrc");
            let frames = st.depay.flush();
            st.depay = Depacketizer::new(self.cfg.depacketizer.clone());
            st.decoder.require_idr();
            events.extend(self.process(ssrc, frames, now, offset)?);
        }
        Ok(events)
    }

    fn process(
        &mut self,
        ssrc: u32,
        frames: Vec<FrameAssembly>,
        now: Nanos,
        offset: Nanos,
    ) -> Result<Vec<FrameEvent>, MetricsError> {
        let mut events = Vec::new();
        for asm in frames {
            let st = self.streams.get_mut(&ssrc).expect("known ssrc");
            let id = st.clock.frame_id(asm.rtp_timestamp);
            if st.next_expected.is_some_and(|n| id < n) {
                self.stale_frames += 1;
                continue;
            }
            for missing in st.next_expected.unwrap_or(id)..id {
                self.traces.set_outcome(ssrc, missing, Outcome::DropLoss)?;
                st.decoder.require_idr();
            }
            st.next_expected = Some(id + 1);

            let depay_done = now + self.cfg.depay_delay;
            self.traces
                .record_stage(ssrc, id, Stage::Received, asm.last_arrival_ts + offset)?;
            self.traces
                .record_stage(ssrc, id, Stage::DepayloadDone, depay_done + offset)?;
            let decode_done = depay_done.max(st.decoder_free_at) + self.cfg.decode_delay;
            let decision = match asm.picture {
                Some(pic) => playout_decide(
                    &asm,
                    pic.capture_ts,
                    offset,
                    decode_done,
                    &st.policy,
                    &mut st.decoder,
                ),
                None => {
                    st.decoder.require_idr();
                    PlayoutDecision::DropLoss
                }
            };
            let outcome = match decision {
                PlayoutDecision::DropLoss => Outcome::DropLoss,
                PlayoutDecision::DropNeedIdr => Outcome::DropNeedIdr,
                PlayoutDecision::DropLate => {
                    st.decoder_free_at = decode_done;
                    self.traces
                        .record_stage(ssrc, id, Stage::DecodeDone, decode_done + offset)?;
                    Outcome::DropLate
                }
                PlayoutDecision::Display { at } => {
                    st.decoder_free_at = decode_done;
                    self.traces
                        .record_stage(ssrc, id, Stage::DecodeDone, decode_done + offset)?;
                    self.traces
                        .record_stage(ssrc, id, Stage::Display, at + offset)?;
                    Outcome::Displayed
                }
            };
            self.traces.set_outcome(ssrc, id, outcome)?;
            events.push(FrameEvent {
                ssrc,
                frame_id: id,
                decision,
            });
        }
        Ok(events)
    }
}

#[derive(Clone, Debug)]
pub struct ReceiverNodeConfig {
    pub pipeline: ReceiverConfig,
    pub stream: String,
    pub control_addr: SocketAddr,
    pub rtp_addr: SocketAddr,
    pub server_control: SocketAddr,
    /// Local time of the first SETUP.
    pub start_at: Nanos,
    pub keepalive_interval: Nanos,
    pub sync: SyncConfig,
    pub monitor: MonitorConfig,
    pub reconnect: ReconnectConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Pending {
    Sync,
    Probe,
    Keepalive,
}

#[derive(Clone, Copy, Debug)]
struct Episode {
    handover_id: u32,
    outage_start: Nanos,
    detected: Nanos,
    established: Option<Nanos>,
}

/// Receiver entity: one session with the server, kept alive and rebuilt
/// after address changes or session loss.
pub struct ReceiverNode {
    cfg: ReceiverNodeConfig,
    pipeline: ReceiverPipeline,
    sync: SyncClient,
    monitor: ConnectivityMonitor,
    handshake: Option<Handshake>,
    session: Option<SessionId>,
    cseq: u32,
    pending: BTreeMap<u32, Pending>,
    next_keepalive: Option<Nanos>,
    started: bool,
    sessions_established: u32,
    episode: Option<Episode>,
    records: Vec<RecoveryRecord>,
}

/// Outstanding request ids kept before the oldest are forgotten.
const PENDING_LIMIT: usize = 256;

impl ReceiverNode {
    pub fn new(cfg: ReceiverNodeConfig, now: Nanos) -> Result<Self, EndpointError> {
        if cfg.keepalive_interval <= 0 {
            return Err(EndpointError::InvalidConfig(
                "keepalive interval must be positive".into(),
            ));
        }
        Ok(Self {
            pipeline: ReceiverPipeline::new(cfg.pipeline.clone())?,
            sync: SyncClient::new("receiver", cfg.sync, now),
            monitor: ConnectivityMonitor::new(cfg.monitor),
            cfg,
            handshake: None,
            session: None,
            cseq: 0,
            pending: BTreeMap::new(),
            next_keepalive: None,
            started: false,
            sessions_established: 0,
            episode: None,
            records: Vec::new(),
        })
    }

    pub fn sync_client_mut(&mut self) -> &mut SyncClient {
        &mut self.sync
    }

    pub fn offset_rows(&self) -> &[OffsetRow] {
        self.sync.rows()
    }

    pub fn pipeline(&self) -> &ReceiverPipeline {
        &self.pipeline
    }

    pub fn phase(&self) -> ConnectivityPhase {
        self.monitor.phase()
    }

    pub fn session(&self) -> Option<&SessionId> {
        self.session.as_ref()
    }

    pub fn sessions_established(&self) -> u32 {
        self.sessions_established
    }

    pub fn records(&self) -> &[RecoveryRecord] {
        &self.records
    }

    pub fn control_addr(&self) -> SocketAddr {
        self.cfg.control_addr
    }

    pub fn rtp_addr(&self) -> SocketAddr {
        self.cfg.rtp_addr
    }

    /// Finalized traces, recovery records and offset log.
    pub fn into_parts(mut self) -> (TraceStore, Vec<RecoveryRecord>, Vec<OffsetRow>) {
        self.close_episode(None);
        let rows = self.sync.rows().to_vec();
        (self.pipeline.into_traces(), self.records, rows)
    }

    fn offset(&self) -> Nanos {
        self.sync.offset().unwrap_or(0)
    }

    fn next_cseq(&mut self, purpose: Pending) -> u32 {
        self.cseq = self.cseq.wrapping_add(1);
        self.pending.insert(self.cseq, purpose);
        while self.pending.len() > PENDING_LIMIT {
            self.pending.pop_first();
        }
        self.cseq
    }

    fn control_out(&self, msg: &ControlMessage, now: Nanos) -> Outgoing {
        Outgoing {
            from: self.cfg.control_addr,
            to: self.cfg.server_control,
            at: now,
            bytes: msg.render().into(),
        }
    }

    fn close_episode(&mut self, first_display: Option<Nanos>) {
        if let Some(ep) = self.episode.take() {
            match ep.established {
                Some(established) => self.records.push(RecoveryRecord {
                    handover_id: ep.handover_id,
                    outage_start: ep.outage_start,
                    detected: ep.detected,
                    session_established: established,
                    first_display,
                }),
                None => log::warn!("handover {} never recovered", ep.handover_id),
            }
        }
    }

    /// The host moved to `new_ip` after an outage that began at
    /// `outage_start` on the reference clock.
    pub fn on_address_change(
        &mut self,
        handover_id: u32,
        outage_start: Nanos,
        new_ip: IpAddr,
        now: Nanos,
    ) -> Result<Vec<Outgoing>, EndpointError> {
        log::info!("receiver address changed to {new_ip} (handover {handover_id})");
        self.close_episode(None);
        self.cfg.control_addr.set_ip(new_ip);
        self.cfg.rtp_addr.set_ip(new_ip);
        let offset = self.offset();
        let detected = self
            .monitor
            .episode_start()
            .map(|t| t + offset)
            .filter(|&t| t >= outage_start)
            .unwrap_or(now + offset);
        self.episode = Some(Episode {
            handover_id,
            outage_start,
            detected,
            established: None,
        });
        let actions = self.monitor.on_address_change(now);
        self.run_actions(actions, now)
    }

    fn run_actions(
        &mut self,
        actions: Vec<MonitorAction>,
        now: Nanos,
    ) -> Result<Vec<Outgoing>, EndpointError> {
        let mut out = Vec::new();
        for a in actions {
            match a {
                MonitorAction::SendProbe => {
                    let cseq = self.next_cseq(Pending::Probe);
                    let mut ping =
                        ControlMessage::request(Method::Ping, self.cfg.stream.clone(), cseq);
                    ping.session = self.session.clone();
                    out.push(self.control_out(&ping, now));
                }
                MonitorAction::StartHandshake => out.extend(self.start_handshake(now)?),
            }
        }
        Ok(out)
    }

    fn start_handshake(&mut self, now: Nanos) -> Result<Vec<Outgoing>, EndpointError> {
        self.session = None;
        self.next_keepalive = None;
        let _ = self.pipeline.resync(now, self.offset())?;
        let (h, setup) = Handshake::start(
            self.cfg.reconnect,
            self.cfg.stream.clone(),
            self.cfg.rtp_addr.port(),
            now,
            &mut self.cseq,
        );
        self.handshake = Some(h);
        Ok(vec![self.control_out(&setup, now)])
    }

    fn on_handshake(&mut self, outputs: Vec<HandshakeOutput>, now: Nanos) -> Vec<Outgoing> {
        let mut out = Vec::new();
        for o in outputs {
            match o {
                HandshakeOutput::Send(msg) => out.push(self.control_out(&msg, now)),
                HandshakeOutput::Established { session, at, .. } => {
                    log::info!("receiver session {session} established");
                    self.session = Some(session);
                    self.handshake = None;
                    self.sessions_established += 1;
                    self.next_keepalive = Some(at + self.cfg.keepalive_interval);
                    self.monitor.on_session_established();
                    let offset = self.offset();
                    if let Some(ep) = self.episode.as_mut() {
                        ep.established.get_or_insert(at + offset);
                    }
                }
            }
        }
        out
    }

    fn on_control(
        &mut self,
        msg: ControlMessage,
        now: Nanos,
    ) -> Result<Vec<Outgoing>, EndpointError> {
        if msg.is_request() {
            return Ok(Vec::new());
        }
        if let Some(h) = self.handshake.as_mut() {
            let outputs = h.on_response(&msg, now, &mut self.cseq);
            if !outputs.is_empty() {
                return Ok(self.on_handshake(outputs, now));
            }
        }
        match self.pending.remove(&msg.cseq) {
            Some(Pending::Sync) => {
                self.sync.on_response(&msg, now);
                Ok(Vec::new())
            }
            Some(Pending::Probe) if msg.status() == Some(status::OK) => {
                let actions = self.monitor.on_probe_ok(now);
                self.run_actions(actions, now)
            }
            Some(Pending::Probe | Pending::Keepalive)
                if msg.status() == Some(status::SESSION_NOT_FOUND) =>
            {
                if self.session.is_some() && self.handshake.is_none() {
                    log::info!("receiver session lost");
                    let actions = self.monitor.on_session_lost(now);
                    return self.run_actions(actions, now);
                }
                Ok(Vec::new())
            }
            _ => Ok(Vec::new()),
        }
    }

    fn on_rtp(&mut self, bytes: Bytes, now: Nanos) -> Result<(), EndpointError> {
        let pkt = match RtpPacket::decode(bytes) {
            Ok(p) => p,
            Err(e) => {
                log::debug!("receiver ignoring bad RTP datagram: {e}");
                return Ok(());
            }
        };
        if self.session.is_some() {
            self.monitor.on_rtp(now);
        }
        let offset = self.offset();
        for ev in self.pipeline.on_packet(pkt, now, offset)? {
            if let PlayoutDecision::Display { at } = ev.decision {
                if ev.ssrc == self.cfg.pipeline.live_ssrc {
                    self.monitor.on_display(at);
                    if self.episode.is_some_and(|e| e.established.is_some()) {
                        self.close_episode(Some(at + offset));
                    }
                }
            }
        }
        Ok(())
    }
}

impl Node for ReceiverNode {
    type Error = EndpointError;

    fn on_datagram(
        &mut self,
        local: SocketAddr,
        from: SocketAddr,
        bytes: Bytes,
        now: Nanos,
    ) -> Result<Vec<Outgoing>, EndpointError> {
        if local.port() == self.cfg.rtp_addr.port() && local.port() != self.cfg.control_addr.port()
        {
            self.on_rtp(bytes, now)?;
            return Ok(Vec::new());
        }
        if from != self.cfg.server_control {
            return Ok(Vec::new());
        }
        match ControlMessage::parse(&bytes) {
            Ok(msg) => self.on_control(msg, now),
            Err(e) => {
                log::debug!("receiver ignoring bad control datagram: {e}");
                Ok(Vec::new())
            }
        }
    }

    fn on_timer(&mut self, now: Nanos) -> Result<Vec<Outgoing>, EndpointError> {
        let mut out = Vec::new();
        if now >= self.sync.next_timer() {
            let cseq = self.next_cseq(Pending::Sync);
            if let Some(ping) = self.sync.poll(now, &self.cfg.stream, cseq) {
                out.push(self.control_out(&ping, now));
            }
        }
        // Not gated on sync, so an unreachable server still surfaces as a
        // handshake timeout.
        if !self.started && now >= self.cfg.start_at {
            self.started = true;
            out.extend(self.start_handshake(now)?);
        }
        if let Some(h) = self.handshake.as_mut() {
            if h.next_timer().is_some_and(|t| t <= now) {
                let outputs = h.on_timer(now, &mut self.cseq)?;
                out.extend(self.on_handshake(outputs, now));
            }
        }
        if let Some(due) = self.next_keepalive.filter(|&t| t <= now) {
            if let Some(session) = self.session.clone() {
                let cseq = self.next_cseq(Pending::Keepalive);
                let ping = ControlMessage::request(Method::Ping, self.cfg.stream.clone(), cseq)
                    .with_session(session);
                out.push(self.control_out(&ping, now));
                self.next_keepalive =
                    Some(due.max(now - self.cfg.keepalive_interval) + self.cfg.keepalive_interval);
            }
        }
        if self.monitor.next_deadline().is_some_and(|t| t <= now) {
            let actions = self.monitor.step(now);
            out.extend(self.run_actions(actions, now)?);
        }
        Ok(out)
    }

    fn next_timer(&self) -> Option<Nanos> {
        let mut t = self.sync.next_timer();
        if !self.started {
            t = t.min(self.cfg.start_at);
        }
        for cand in [
            self.handshake.as_ref().and_then(Handshake::next_timer),
            self.next_keepalive.filter(|_| self.session.is_some()),
            self.monitor.next_deadline(),
        ]
        .into_iter()
        .flatten()
        {
            t = t.min(cand);
        }
        Some(t)
    }

    fn sockets(&self) -> Vec<SocketAddr> {
        vec![self.cfg.control_addr, self.cfg.rtp_addr]
    }
}

impl Default for ReceiverNodeConfig {
    fn default() -> Self {
        Self {
            pipeline: ReceiverConfig::default(),
            stream: "live".into(),
            control_addr: SocketAddr::from(([10, 0, 0, 3], 7000)),
            rtp_addr: SocketAddr::from(([10, 0, 0, 3], 6000)),
            server_control: SocketAddr::from(([10, 0, 0, 2], 8554)),
            start_at: 500 * MS,
            keepalive_interval: 500 * MS,
            sync: SyncConfig::default(),
            monitor: MonitorConfig::default(),
            reconnect: ReconnectConfig::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::{generate_frame, EncoderConfig};
    use crate::rtp::Packetizer;

    fn frames(n: u64) -> Vec<Vec<RtpPacket>> {
        let cfg = EncoderConfig::default();
        let mut p = Packetizer::new(DEFAULT_LIVE_SSRC, 0, 0, 1200).unwrap();
        (0..n)
            .map(|id| p.packetize_frame(&generate_frame(&cfg, id, cfg.frame_offset(id)), cfg.fps))
            .collect()
    }

    fn pipeline() -> ReceiverPipeline {
        ReceiverPipeline::new(ReceiverConfig {
            depay_delay: MS,
            decode_delay: 10 * MS,
            policy: PlayoutPolicy::new(150 * MS, super::super::PlayoutMode::LowLatency).unwrap(),
            ..ReceiverConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn in_order_stream_is_displayed() {
        let mut p = pipeline();
        let cfg = EncoderConfig::default();
        for (id, pkts) in frames(10).into_iter().enumerate() {
            let arrival = cfg.frame_offset(id as u64) + 40 * MS;
            for pkt in pkts {
                p.on_packet(pkt, arrival, 0).unwrap();
            }
        }
        let traces = p.into_traces();
        for tr in traces.stream(DEFAULT_LIVE_SSRC) {
            assert_eq!(
                tr.outcome,
                Some(Outcome::Displayed),
                "frame {}",
                tr.frame_id
            );
            assert_eq!(
                tr.get(Stage::Display).unwrap() - tr.get(Stage::Received).unwrap(),
                11 * MS
            );
        }
    }

    #[test]
    fn lost_frame_breaks_chain_until_next_idr() {
        let mut p = pipeline();
        let all = frames(35);
        for (id, pkts) in all.into_iter().enumerate() {
            if id == 3 {
                continue;
            }
            for pkt in pkts {
                p.on_packet(pkt, id as Nanos * 34 * MS, 0).unwrap();
            }
        }
        let traces = p.into_traces();
        let outcome = |id| traces.get(DEFAULT_LIVE_SSRC, id).unwrap().outcome;
        assert_eq!(outcome(2), Some(Outcome::Displayed));
        assert_eq!(outcome(3), Some(Outcome::DropLoss));
        // Frame 4 follows a seq gap, so its completeness cannot be proven.
        assert_eq!(outcome(4), Some(Outcome::DropLoss));
        assert_eq!(outcome(5), Some(Outcome::DropNeedIdr));
        assert_eq!(outcome(29), Some(Outcome::DropNeedIdr));
        assert_eq!(outcome(30), Some(Outcome::Displayed));
    }

    #[test]
    fn serial_decoder_queues_bursts() {
        let mut p = pipeline();
        let mut events = Vec::new();
        for pkts in frames(3) {
            for pkt in pkts {
                events.extend(p.on_packet(pkt, 0, 0).unwrap());
            }
        }
        let shown: Vec<Nanos> = events
            .iter()
            .map(|e| match e.decision {
                PlayoutDecision::Display { at } => at,
                d => panic!("{d:?}"),
            })
            .collect();
        assert_eq!(shown, vec![11 * MS, 21 * MS, 31 * MS]);
    }

    #[test]
    fn resync_requires_idr() {
        let mut p = pipeline();
        let all = frames(8);
        for pkts in &all[..5] {
            for pkt in pkts.clone() {
                p.on_packet(pkt, 0, 0).unwrap();
            }
        }
        p.resync(MS, 0).unwrap();
        let ev = all[5]
            .iter()
            .flat_map(|pkt| p.on_packet(pkt.clone(), 2 * MS, 0).unwrap())
            .collect::<Vec<_>>();
        assert_eq!(ev[0].decision, PlayoutDecision::DropNeedIdr);
    }
}

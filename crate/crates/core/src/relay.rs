//! Streaming server: session registry and IDR-gated RTP fan-out.

use std::collections::BTreeMap;
use std::net::SocketAddr;

use crate::control::{
    status, ControlError, ControlMessage, KeepalivePolicy, Method, SessionEvent, SessionId,
    SessionPhase, SessionState, StartLine,
};
use crate::metrics::{MetricsError, Stage, TraceStore};
use crate::rtp::{carries_idr, starts_idr, ticks_per_frame, RtpPacket};
use crate::Nanos;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RelayError {
    #[error("packet from foreign ssrc {0:08x}")]
    ForeignSsrc(u32),
}

#[derive(Clone, Debug)]
pub struct RelayConfig {
    pub stream: String,
    pub live_ssrc: u32,
    pub preroll_ssrc: Option<u32>,
    pub keepalive: KeepalivePolicy,
    /// Seed for session tokens.
    pub session_seed: u64,
}

impl RelayConfig {
    pub fn new(stream: impl Into<String>, live_ssrc: u32) -> Self {
        Self {
            stream: stream.into(),
            live_ssrc,
            preroll_ssrc: None,
            keepalive: KeepalivePolicy::default(),
            session_seed: 0,
        }
    }

    fn accepts(&self, ssrc: u32) -> bool {
        ssrc == self.live_ssrc || self.preroll_ssrc == Some(ssrc)
    }
}

/// Most IDR fragments held for replay per stream.
const IDR_HOLD_LIMIT: usize = 256;

#[derive(Clone, Debug)]
struct RelaySession {
    state: SessionState,
    /// Per-ssrc gate; absent means still waiting for an IDR start.
    open: BTreeMap<u32, bool>,
    forwarded: u64,
    /// CSeq of the SETUP that created this session.
    setup_cseq: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RelayStats {
    pub ingested: u64,
    pub forwarded: u64,
    pub foreign_ssrc: u64,
    pub sessions_created: u64,
    pub sessions_expired: u64,
    pub peer_changes: u64,
}

/// One forwarding decision: send the ingested datagram to `dest`, after
/// `replay`, which holds earlier-arrived fragments of the IDR picture that
/// just opened this session's gate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Forward {
    pub session: SessionId,
    pub dest: SocketAddr,
    pub replay: Vec<RtpPacket>,
}

/// Relay state machine. Control requests and RTP ingest are fed from the
/// caller's I/O loop; the relay itself performs no I/O.
#[derive(Clone, Debug)]
pub struct Relay {
    cfg: RelayConfig,
    sessions: BTreeMap<SessionId, RelaySession>,
    by_setup: BTreeMap<(SocketAddr, u32), SessionId>,
    next_session: u64,
    stats: RelayStats,
    /// Per ssrc: IDR fragments of the newest IDR timestamp seen so far.
    idr_hold: BTreeMap<u32, (u32, Vec<RtpPacket>)>,
}

impl Relay {
    pub fn new(cfg: RelayConfig) -> Self {
        Self {
            cfg,
            sessions: BTreeMap::new(),
            by_setup: BTreeMap::new(),
            next_session: 0,
            stats: RelayStats::default(),
            idr_hold: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &RelayConfig {
        &self.cfg
    }

    pub fn stats(&self) -> RelayStats {
        self.stats
    }

    pub fn session(&self, id: &SessionId) -> Option<&SessionState> {
        self.sessions.get(id).map(|s| &s.state)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &SessionState> {
        self.sessions.values().map(|s| &s.state)
    }

    pub fn awaiting_idr(&self, id: &SessionId, ssrc: u32) -> Option<bool> {
        self.sessions
            .get(id)
            .map(|s| !s.open.get(&ssrc).copied().unwrap_or(false))
    }

    pub fn forwarded_to(&self, id: &SessionId) -> u64 {
        self.sessions.get(id).map_or(0, |s| s.forwarded)
    }

    pub fn playing_count(&self) -> usize {
        self.sessions
            .values()
            .filter(|s| s.state.phase == SessionPhase::Playing)
            .count()
    }

    fn mint_session_id(&mut self) -> SessionId {
        // splitmix64 over (seed, counter): distinct, deterministic tokens.
        self.next_session += 1;
        let mut z = self
            .cfg
            .session_seed
            .wrapping_add(self.next_session.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        SessionId::new(format!("{z:016x}")).expect("hex token is valid")
    }

    fn expire_if_idle(
        s: &mut RelaySession,
        policy: &KeepalivePolicy,
        now: Nanos,
        stats: &mut RelayStats,
    ) -> bool {
        if s.state.is_live() && policy.expired(s.state.last_activity, now) {
            s.state.phase = SessionPhase::Dead;
            stats.sessions_expired += 1;
            return true;
        }
        false
    }

    /// Parses and answers one control datagram. Unparseable input gets 400.
    pub fn handle_control_bytes(&mut self, bytes: &[u8], peer: SocketAddr, now: Nanos) -> Vec<u8> {
        match ControlMessage::parse(bytes) {
            Ok(req) if req.is_request() => self.handle_control(&req, peer, now),
            Ok(resp) => ControlMessage::response(status::BAD_REQUEST, resp.cseq),
            Err(e) => {
                log::debug!("bad control datagram from {peer}: {e}");
                ControlMessage::response(status::BAD_REQUEST, 0)
            }
        }
        .render()
    }

    pub fn handle_control(
        &mut self,
        req: &ControlMessage,
        peer: SocketAddr,
        now: Nanos,
    ) -> ControlMessage {
        let StartLine::Request { method, stream } = &req.start else {
            return ControlMessage::response(status::BAD_REQUEST, req.cseq);
        };
        let reply = |code| ControlMessage::response(code, req.cseq);
        match method {
            Method::Options => {
                let mut r = reply(status::OK);
                r.body = Some("OPTIONS, SETUP, PLAY, TEARDOWN, PING".into());
                r
            }
            Method::Ping if req.session.is_none() => {
                let mut r = reply(status::OK);
                r.sync.t0 = req.sync.t0;
                r.sync.t1 = Some(now);
                r.sync.t2 = Some(now);
                r
            }
            Method::Setup => {
                if *stream != self.cfg.stream {
                    return reply(status::NOT_FOUND);
                }
                let Some(transport) = req.transport else {
                    return reply(status::UNSUPPORTED_TRANSPORT);
                };
                // A retransmitted SETUP maps to the session it created.
                if let Some(id) = self.by_setup.get(&(peer, req.cseq)).cloned() {
                    if let Some(s) = self
                        .sessions
                        .get(&id)
                        .filter(|s| s.state.is_live() && s.setup_cseq == req.cseq)
                    {
                        return self.setup_reply(req.cseq, &s.state.id);
                    }
                }
                let id = self.mint_session_id();
                let rtp_dest = SocketAddr::new(peer.ip(), transport.client_rtp_port);
                let mut state = SessionState::new(id.clone(), stream.clone(), peer, rtp_dest, now);
                state
                    .apply(SessionEvent::SetupOk)
                    .expect("Init accepts SetupOk");
                self.sessions.insert(
                    id.clone(),
                    RelaySession {
                        state,
                        open: BTreeMap::new(),
                        forwarded: 0,
                        setup_cseq: req.cseq,
                    },
                );
                self.by_setup.insert((peer, req.cseq), id.clone());
                self.stats.sessions_created += 1;
                log::info!("session {id} created for {peer}, rtp to {rtp_dest}");
                self.setup_reply(req.cseq, &id)
            }
            Method::Play | Method::Teardown | Method::Ping => {
                let Some(id) = &req.session else {
                    return reply(status::SESSION_NOT_FOUND);
                };
                let policy = self.cfg.keepalive;
                let Some(s) = self.sessions.get_mut(id) else {
                    return reply(status::SESSION_NOT_FOUND);
                };
                Self::expire_if_idle(s, &policy, now, &mut self.stats);
                if !s.state.is_live() {
                    return reply(status::SESSION_NOT_FOUND);
                }
                if s.state.peer != peer {
                    // Sessions never follow their client to a new address.
                    s.state
                        .apply(SessionEvent::PeerAddressChanged)
                        .expect("live sessions accept PeerAddressChanged");
                    self.stats.peer_changes += 1;
                    log::info!(
                        "session {id} seen from {peer}, bound to {}; killed",
                        s.state.peer
                    );
                    return reply(status::SESSION_NOT_FOUND);
                }
                s.state.touch(now);
                let result = match method {
                    Method::Play if s.state.phase == SessionPhase::Playing => Ok(()),
                    Method::Play => s.state.apply(SessionEvent::PlayOk).map(|_| ()),
                    Method::Teardown => s.state.apply(SessionEvent::Teardown).map(|_| ()),
                    _ => Ok(()),
                };
                match result {
                    Ok(()) => {
                        let mut r = reply(status::OK).with_session(id.clone());
                        if *method == Method::Ping {
                            r.sync.t0 = req.sync.t0;
                            r.sync.t1 = Some(now);
                            r.sync.t2 = Some(now);
                        }
                        r
                    }
                    Err(ControlError::IllegalTransition { .. }) => {
                        reply(status::METHOD_NOT_VALID_IN_STATE)
                    }
                    Err(_) => reply(status::BAD_REQUEST),
                }
            }
        }
    }

    fn setup_reply(&self, cseq: u32, id: &SessionId) -> ControlMessage {
        let mut r = ControlMessage::response(status::OK, cseq).with_session(id.clone());
        r.timeout_ms = Some((self.cfg.keepalive.timeout() / 1_000_000) as u64);
        r
    }

    /// Destinations for one ingested packet. Only the first payload bytes
    /// are inspected; the caller forwards the original datagram unchanged.
    ///
    /// A session's gate opens on the first fragment of an IDR picture.
    /// Fragments of that picture that overtook it are replayed, so jitter
    /// on the ingest path cannot cost the subscriber a whole GOP.
    pub fn ingest_and_fanout(
        &mut self,
        pkt: &RtpPacket,
        now: Nanos,
    ) -> Result<Vec<Forward>, RelayError> {
        if !self.cfg.accepts(pkt.ssrc) {
            self.stats.foreign_ssrc += 1;
            return Err(RelayError::ForeignSsrc(pkt.ssrc));
        }
        self.stats.ingested += 1;
        let idr_start = starts_idr(&pkt.payload);
        let held: Vec<RtpPacket> = match self.idr_hold.get(&pkt.ssrc) {
            Some((ts, held)) if idr_start && *ts == pkt.timestamp => held.clone(),
            _ => Vec::new(),
        };
        if carries_idr(&pkt.payload) {
            let hold = self
                .idr_hold
                .entry(pkt.ssrc)
                .or_insert((pkt.timestamp, Vec::new()));
            if hold.0 != pkt.timestamp {
                *hold = (pkt.timestamp, Vec::new());
            }
            if hold.1.len() < IDR_HOLD_LIMIT {
                hold.1.push(pkt.clone());
            }
        }
        let policy = self.cfg.keepalive;
        let mut out = Vec::new();
        for s in self.sessions.values_mut() {
            Self::expire_if_idle(s, &policy, now, &mut self.stats);
            if s.state.phase != SessionPhase::Playing {
                continue;
            }
            let open = s.open.entry(pkt.ssrc).or_insert(false);
            let opening = !*open;
            if opening && !idr_start {
                continue;
            }
            *open = true;
            let replay = if opening { held.clone() } else { Vec::new() };
            s.forwarded += 1 + replay.len() as u64;
            self.stats.forwarded += 1 + replay.len() as u64;
            out.push(Forward {
                session: s.state.id.clone(),
                dest: s.state.rtp_dest,
                replay,
            });
        }
        Ok(out)
    }

    /// Kills every live session idle longer than the timeout.
    pub fn expire_sessions(&mut self, now: Nanos) -> Vec<SessionId> {
        let policy = self.cfg.keepalive;
        let mut expired = Vec::new();
        for s in self.sessions.values_mut() {
            if Self::expire_if_idle(s, &policy, now, &mut self.stats) {
                expired.push(s.state.id.clone());
            }
        }
        expired
    }

    /// Drops dead sessions idle for more than `retain`.
    pub fn prune_dead(&mut self, now: Nanos, retain: Nanos) -> usize {
        let before = self.sessions.len();
        self.sessions
            .retain(|_, s| s.state.is_live() || now - s.state.last_activity <= retain);
        let sessions = &self.sessions;
        self.by_setup.retain(|_, id| sessions.contains_key(id));
        before - self.sessions.len()
    }
}

/// Maps RTP timestamps of a stream back to frame ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameClock {
    pub ts_base: u32,
    pub ticks_per_frame: u32,
}

impl FrameClock {
    pub fn new(ts_base: u32, fps: u32) -> Self {
        Self {
            ts_base,
            ticks_per_frame: ticks_per_frame(fps),
        }
    }

    pub fn frame_id(&self, rtp_timestamp: u32) -> u64 {
        u64::from(rtp_timestamp.wrapping_sub(self.ts_base) / self.ticks_per_frame)
    }
}

/// Server-side stage probe. A frame's server_in and server_out are the
/// latest ingest and latest forward over its packets.
#[derive(Clone, Debug, Default)]
pub struct ServerProbe {
    clocks: BTreeMap<u32, FrameClock>,
    stamps: BTreeMap<(u32, u64), (Nanos, Option<Nanos>)>,
}

impl ServerProbe {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_stream(&mut self, ssrc: u32, clock: FrameClock) {
        self.clocks.insert(ssrc, clock);
    }

    pub fn on_ingest(&mut self, ssrc: u32, rtp_timestamp: u32, now: Nanos) {
        if let Some(c) = self.clocks.get(&ssrc) {
            let e = self
                .stamps
                .entry((ssrc, c.frame_id(rtp_timestamp)))
                .or_insert((now, None));
            e.0 = e.0.max(now);
        }
    }

    pub fn on_forward(&mut self, ssrc: u32, rtp_timestamp: u32, now: Nanos) {
        if let Some(c) = self.clocks.get(&ssrc) {
            let e = self
                .stamps
                .entry((ssrc, c.frame_id(rtp_timestamp)))
                .or_insert((now, None));
            e.1 = Some(e.1.map_or(now, |t| t.max(now)));
        }
    }

    pub fn into_traces(self) -> Result<TraceStore, MetricsError> {
        let mut store = TraceStore::new();
        for ((ssrc, id), (server_in, server_out)) in self.stamps {
            store.record_stage(ssrc, id, Stage::ServerIn, server_in)?;
            if let Some(out) = server_out {
                store.record_stage(ssrc, id, Stage::ServerOut, out)?;
            }
        }
        Ok(store)
    }
}

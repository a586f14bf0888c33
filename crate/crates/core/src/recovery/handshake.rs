use crate::control::{status, ControlMessage, Method, SessionId};
use crate::{Nanos, MS, SECOND};

use super::RecoveryError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReconnectConfig {
    /// An unanswered request is resent after this long plus the backoff.
    pub request_timeout: Nanos,
    pub retry_backoff: Nanos,
    /// Total time allowed from the first SETUP to PLAY success.
    pub cap: Nanos,
}

impl Default for ReconnectConfig {
    fn default() -> Self {
        Self {
            request_timeout: 250 * MS,
            retry_backoff: 50 * MS,
            cap: 10 * SECOND,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HandshakeOutput {
    Send(ControlMessage),
    Established {
        session: SessionId,
        timeout_ms: Option<u64>,
        at: Nanos,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Phase {
    AwaitSetup,
    AwaitPlay(SessionId),
    /// Waiting to send `resend`; `None` restarts from SETUP.
    Backoff {
        until: Nanos,
        resend: Option<ControlMessage>,
    },
    Established(SessionId),
    Failed,
}

/// Client side of SETUP then PLAY. Retransmissions reuse the CSeq so the
/// server can answer duplicates with the same session.
#[derive(Clone, Debug)]
pub struct Handshake {
    cfg: ReconnectConfig,
    stream: String,
    client_rtp_port: u16,
    started_at: Nanos,
    phase: Phase,
    outstanding: Option<(ControlMessage, Nanos)>,
    attempts: u32,
}

impl Handshake {
    pub fn start(
        cfg: ReconnectConfig,
        stream: impl Into<String>,
        client_rtp_port: u16,
        now: Nanos,
        cseq: &mut u32,
    ) -> (Self, ControlMessage) {
        let mut h = Self {
            cfg,
            stream: stream.into(),
            client_rtp_port,
            started_at: now,
            phase: Phase::AwaitSetup,
            outstanding: None,
            attempts: 0,
        };
        let setup = h.setup(now, cseq);
        (h, setup)
    }

    pub fn started_at(&self) -> Nanos {
        self.started_at
    }

    pub fn attempts(&self) -> u32 {
        self.attempts
    }

    pub fn session(&self) -> Option<&SessionId> {
        match &self.phase {
            Phase::Established(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_established(&self) -> bool {
        matches!(self.phase, Phase::Established(_))
    }

    pub fn is_failed(&self) -> bool {
        self.phase == Phase::Failed
    }

    fn next_cseq(cseq: &mut u32) -> u32 {
        *cseq = cseq.wrapping_add(1);
        *cseq
    }

    fn send(&mut self, msg: ControlMessage, now: Nanos) -> ControlMessage {
        self.attempts += 1;
        self.outstanding = Some((msg.clone(), now));
        msg
    }

    fn setup(&mut self, now: Nanos, cseq: &mut u32) -> ControlMessage {
        self.phase = Phase::AwaitSetup;
        let msg =
            ControlMessage::request(Method::Setup, self.stream.clone(), Self::next_cseq(cseq))
                .with_transport(self.client_rtp_port);
        self.send(msg, now)
    }

    fn back_off(&mut self, now: Nanos, resend: Option<ControlMessage>) {
        self.outstanding = None;
        self.phase = Phase::Backoff {
            until: now + self.cfg.retry_backoff,
            resend,
        };
    }

    /// Feeds a control response. Responses to other requests are ignored.
    pub fn on_response(
        &mut self,
        msg: &ControlMessage,
        now: Nanos,
        cseq: &mut u32,
    ) -> Vec<HandshakeOutput> {
        let Some((req, _)) = &self.outstanding else {
            return Vec::new();
        };
        if msg.is_request() || msg.cseq != req.cseq {
            return Vec::new();
        }
        let ok = msg.status() == Some(status::OK);
        match (&self.phase, msg.session.clone()) {
            (Phase::AwaitSetup, Some(session)) if ok => {
                self.phase = Phase::AwaitPlay(session.clone());
                let play = ControlMessage::request(
                    Method::Play,
                    self.stream.clone(),
                    Self::next_cseq(cseq),
                )
                .with_session(session);
                vec![HandshakeOutput::Send(self.send(play, now))]
            }
            (Phase::AwaitPlay(session), _) if ok => {
                let session = session.clone();
                self.outstanding = None;
                self.phase = Phase::Established(session.clone());
                vec![HandshakeOutput::Established {
                    session,
                    timeout_ms: msg.timeout_ms,
                    at: now,
                }]
            }
            _ => {
                log::debug!("handshake rejected with {:?}; restarting", msg.status());
                self.back_off(now, None);
                Vec::new()
            }
        }
    }

    pub fn next_timer(&self) -> Option<Nanos> {
        let due = match &self.phase {
            Phase::Backoff { until, .. } => Some(*until),
            Phase::AwaitSetup | Phase::AwaitPlay(_) => self
                .outstanding
                .as_ref()
                .map(|(_, sent)| sent + self.cfg.request_timeout),
            Phase::Established(_) | Phase::Failed => None,
        };
        due.map(|t| t.min(self.started_at + self.cfg.cap))
    }

    pub fn on_timer(
        &mut self,
        now: Nanos,
        cseq: &mut u32,
    ) -> Result<Vec<HandshakeOutput>, RecoveryError> {
        if matches!(self.phase, Phase::Established(_)) {
            return Ok(Vec::new());
        }
        if self.phase == Phase::Failed || now - self.started_at >= self.cfg.cap {
            self.phase = Phase::Failed;
            self.outstanding = None;
            return Err(RecoveryError::RecoveryTimeout {
                elapsed: now - self.started_at,
                attempts: self.attempts,
            });
        }
        match self.phase.clone() {
            Phase::Backoff { until, resend } if until <= now => {
                let msg = match resend {
                    Some(msg) => {
                        self.phase = match msg.method() {
                            Some(Method::Play) => Phase::AwaitPlay(
                                msg.session.clone().expect("PLAY carries a session"),
                            ),
                            _ => Phase::AwaitSetup,
                        };
                        self.send(msg, now)
                    }
                    None => self.setup(now, cseq),
                };
                Ok(vec![HandshakeOutput::Send(msg)])
            }
            Phase::AwaitSetup | Phase::AwaitPlay(_) => {
                if let Some((req, sent)) = self.outstanding.clone() {
                    if now >= sent + self.cfg.request_timeout {
                        self.back_off(now, Some(req));
                    }
                }
                Ok(Vec::new())
            }
            _ => Ok(Vec::new()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ok_with_session(cseq: u32, id: &str) -> ControlMessage {
        let mut m =
            ControlMessage::response(status::OK, cseq).with_session(SessionId::new(id).unwrap());
        m.timeout_ms = Some(2000);
        m
    }

    #[test]
    fn setup_then_play() {
        let mut cseq = 0;
        let (mut h, setup) =
            Handshake::start(ReconnectConfig::default(), "cam", 5004, 0, &mut cseq);
        assert_eq!(setup.method(), Some(Method::Setup));
        assert_eq!(setup.transport.unwrap().client_rtp_port, 5004);
        let out = h.on_response(&ok_with_session(setup.cseq, "s1"), 6 * MS, &mut cseq);
        let HandshakeOutput::Send(play) = &out[0] else {
            panic!()
        };
        assert_eq!(play.method(), Some(Method::Play));
        assert_eq!(play.session.as_ref().unwrap().as_str(), "s1");
        let out = h.on_response(
            &ControlMessage::response(status::OK, play.cseq),
            12 * MS,
            &mut cseq,
        );
        assert!(matches!(out[0], HandshakeOutput::Established { at, .. } if at == 12 * MS));
        assert!(h.is_established());
    }

    #[test]
    fn timeout_resends_same_cseq_after_backoff() {
        let mut cseq = 10;
        let cfg = ReconnectConfig::default();
        let (mut h, setup) = Handshake::start(cfg, "cam", 5004, 0, &mut cseq);
        assert_eq!(h.next_timer(), Some(cfg.request_timeout));
        assert!(h
            .on_timer(cfg.request_timeout, &mut cseq)
            .unwrap()
            .is_empty());
        let resend_at = h.next_timer().unwrap();
        assert_eq!(resend_at, cfg.request_timeout + cfg.retry_backoff);
        let out = h.on_timer(resend_at, &mut cseq).unwrap();
        assert_eq!(out, vec![HandshakeOutput::Send(setup.clone())]);
        assert_eq!(h.attempts(), 2);
    }

    #[test]
    fn rejection_restarts_with_fresh_setup() {
        let mut cseq = 0;
        let (mut h, setup) =
            Handshake::start(ReconnectConfig::default(), "cam", 5004, 0, &mut cseq);
        h.on_response(
            &ControlMessage::response(status::NOT_FOUND, setup.cseq),
            MS,
            &mut cseq,
        );
        let out = h.on_timer(51 * MS, &mut cseq).unwrap();
        let HandshakeOutput::Send(again) = &out[0] else {
            panic!()
        };
        assert_eq!(again.method(), Some(Method::Setup));
        assert_ne!(again.cseq, setup.cseq);
    }

    #[test]
    fn unreachable_server_times_out() {
        let mut cseq = 0;
        let cfg = ReconnectConfig::default();
        let (mut h, _) = Handshake::start(cfg, "cam", 5004, 0, &mut cseq);
        let (now, err) = loop {
            let now = h.next_timer().unwrap();
            if let Err(e) = h.on_timer(now, &mut cseq) {
                break (now, e);
            }
        };
        assert!(matches!(err, RecoveryError::RecoveryTimeout { .. }));
        assert_eq!(now, cfg.cap);
    }

    #[test]
    fn stale_responses_ignored() {
        let mut cseq = 0;
        let (mut h, setup) =
            Handshake::start(ReconnectConfig::default(), "cam", 5004, 0, &mut cseq);
        assert!(h
            .on_response(&ok_with_session(setup.cseq + 7, "x"), MS, &mut cseq)
            .is_empty());
        assert!(!h.is_established());
    }
}

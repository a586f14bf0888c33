use std::net::SocketAddr;

use bytes::Bytes;

use crate::clock_sync::{
    ClockSync, SyncSample, DEFAULT_ROUND_SIZE, DEFAULT_SYNC_PERIOD, DEFAULT_WINDOW,
};
use crate::control::{ControlMessage, Method};
use crate::metrics::OffsetRow;
use crate::{Nanos, MS};

/// A datagram a node wants sent from its socket `from` at local time `at`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outgoing {
    pub from: SocketAddr,
    pub to: SocketAddr,
    pub at: Nanos,
    pub bytes: Bytes,
}

/// Sans-IO protocol entity. Times are on the node's own clock.
pub trait Node {
    type Error: std::error::Error + Send + Sync + 'static;

    fn on_datagram(
        &mut self,
        local: SocketAddr,
        from: SocketAddr,
        bytes: Bytes,
        now: Nanos,
    ) -> Result<Vec<Outgoing>, Self::Error>;
    fn on_timer(&mut self, now: Nanos) -> Result<Vec<Outgoing>, Self::Error>;
    fn next_timer(&self) -> Option<Nanos>;
    /// Local sockets this node listens on.
    fn sockets(&self) -> Vec<SocketAddr>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyncConfig {
    pub round_size: usize,
    pub spacing: Nanos,
    pub period: Nanos,
    pub window: usize,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            round_size: DEFAULT_ROUND_SIZE,
            spacing: 20 * MS,
            period: DEFAULT_SYNC_PERIOD,
            window: DEFAULT_WINDOW,
        }
    }
}

/// Periodic PING rounds against the server and the resulting offset.
#[derive(Clone, Debug)]
pub struct SyncClient {
    cfg: SyncConfig,
    entity: String,
    sync: ClockSync,
    round: u32,
    sent_in_round: usize,
    next_ping: Nanos,
    /// Estimate currently in use, reference minus local.
    current: Option<Nanos>,
    rows: Vec<OffsetRow>,
    true_offset: Option<Nanos>,
    /// The current round's last PING has gone out.
    round_sent: bool,
    logged_round: Option<u32>,
}

impl SyncClient {
    pub fn new(entity: impl Into<String>, cfg: SyncConfig, start: Nanos) -> Self {
        Self {
            cfg,
            entity: entity.into(),
            sync: ClockSync::new(cfg.window.max(1)).expect("window >= 1"),
            round: 0,
            sent_in_round: 0,
            next_ping: start,
            current: None,
            rows: Vec::new(),
            true_offset: None,
            round_sent: false,
            logged_round: None,
        }
    }

    /// Ground-truth offset recorded next to estimates under emulation.
    pub fn set_true_offset(&mut self, truth: Nanos) {
        self.true_offset = Some(truth);
    }

    pub fn offset(&self) -> Option<Nanos> {
        self.current
    }

    pub fn is_synced(&self) -> bool {
        self.current.is_some()
    }

    pub fn rows(&self) -> &[OffsetRow] {
        &self.rows
    }

    pub fn next_timer(&self) -> Nanos {
        self.next_ping
    }

    /// Builds a PING if one is due.
    pub fn poll(&mut self, now: Nanos, stream: &str, cseq: u32) -> Option<ControlMessage> {
        if now < self.next_ping {
            return None;
        }
        if self.sent_in_round == 0 && self.round_sent {
            self.round_sent = false;
            self.round += 1;
        }
        self.sent_in_round += 1;
        if self.sent_in_round >= self.cfg.round_size {
            self.sent_in_round = 0;
            self.round_sent = true;
            self.next_ping =
                now + self.cfg.period - self.cfg.spacing * (self.cfg.round_size as Nanos - 1);
            self.adopt(now);
        } else {
            self.next_ping = now + self.cfg.spacing;
        }
        let mut ping = ControlMessage::request(Method::Ping, stream, cseq);
        ping.sync.t0 = Some(now);
        Some(ping)
    }

    /// Feeds a PING response. Returns true if it carried usable stamps.
    pub fn on_response(&mut self, resp: &ControlMessage, now: Nanos) -> bool {
        let (Some(t0), Some(t1), Some(t2)) = (resp.sync.t0, resp.sync.t1, resp.sync.t2) else {
            return false;
        };
        let sample = SyncSample::new(t0, t1, t2, now);
        if sample.rtt() < 0 {
            return false;
        }
        self.sync.add(sample);
        // Estimates change only once a round is fully sent, so the samples
        // of a round are judged together.
        if self.round_sent {
            self.adopt(now);
        }
        true
    }

    fn adopt(&mut self, now: Nanos) {
        let Ok(est) = self.sync.offset() else {
            return;
        };
        let changed = self.current != Some(est);
        self.current = Some(est);
        if changed || self.logged_round != Some(self.round) {
            self.logged_round = Some(self.round);
            self.rows.push(OffsetRow {
                entity: self.entity.clone(),
                round: self.round,
                at: now + est,
                estimate: est,
                truth: self.true_offset,
            });
        }
    }
}

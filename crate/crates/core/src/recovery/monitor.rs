use std::fmt;

use crate::{Nanos, MS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConnectivityPhase {
    Healthy,
    SuspectedDown,
    Down,
    Reconnecting,
    Recovered,
}

impl fmt::Display for ConnectivityPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MonitorConfig {
    pub rtp_silence_timeout: Nanos,
    /// Probe cadence while suspected down.
    pub ping_interval: Nanos,
    /// A probe unanswered for this long has timed out. Must exceed the RTT.
    pub probe_timeout: Nanos,
    pub probe_timeouts_to_down: u32,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            rtp_silence_timeout: 100 * MS,
            ping_interval: 20 * MS,
            probe_timeout: 100 * MS,
            probe_timeouts_to_down: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MonitorAction {
    SendProbe,
    StartHandshake,
}

/// Receiver-side connectivity state. Silence detection is armed by the
/// first RTP packet and disarmed while a new session is being built.
#[derive(Clone, Debug)]
pub struct ConnectivityMonitor {
    cfg: MonitorConfig,
    phase: ConnectivityPhase,
    last_rtp_rx: Option<Nanos>,
    last_ping_ok: Option<Nanos>,
    next_probe_at: Option<Nanos>,
    /// Send times of unanswered probes. Any answer clears them all.
    outstanding: Vec<Nanos>,
    /// When the current episode left Healthy.
    episode_start: Option<Nanos>,
}

impl ConnectivityMonitor {
    pub fn new(cfg: MonitorConfig) -> Self {
        Self {
            cfg,
            phase: ConnectivityPhase::Healthy,
            last_rtp_rx: None,
            last_ping_ok: None,
            next_probe_at: None,
            outstanding: Vec::new(),
            episode_start: None,
        }
    }

    pub fn phase(&self) -> ConnectivityPhase {
        self.phase
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.cfg
    }

    pub fn last_rtp_rx(&self) -> Option<Nanos> {
        self.last_rtp_rx
    }

    pub fn last_ping_ok(&self) -> Option<Nanos> {
        self.last_ping_ok
    }

    pub fn episode_start(&self) -> Option<Nanos> {
        self.episode_start
    }

    pub fn on_rtp(&mut self, now: Nanos) {
        self.last_rtp_rx = Some(self.last_rtp_rx.map_or(now, |t| t.max(now)));
        if self.phase == ConnectivityPhase::SuspectedDown {
            self.phase = ConnectivityPhase::Healthy;
            self.episode_start = None;
            self.next_probe_at = None;
            self.outstanding.clear();
        }
    }

    /// A probe PING was answered.
    pub fn on_probe_ok(&mut self, now: Nanos) -> Vec<MonitorAction> {
        self.last_ping_ok = Some(now);
        self.outstanding.clear();
        match self.phase {
            // Control path and session are alive, the media source is quiet.
            ConnectivityPhase::SuspectedDown => {
                self.phase = ConnectivityPhase::Healthy;
                self.episode_start = None;
                self.next_probe_at = None;
                self.last_rtp_rx = Some(now);
                Vec::new()
            }
            ConnectivityPhase::Down => self.begin_reconnect(),
            _ => Vec::new(),
        }
    }

    /// The local address changed: the old session is unusable.
    pub fn on_address_change(&mut self, now: Nanos) -> Vec<MonitorAction> {
        self.episode_start.get_or_insert(now);
        self.phase = ConnectivityPhase::Down;
        self.begin_reconnect()
    }

    /// A 454 on keepalive: the server no longer knows the session.
    pub fn on_session_lost(&mut self, now: Nanos) -> Vec<MonitorAction> {
        match self.phase {
            ConnectivityPhase::Reconnecting => Vec::new(),
            _ => {
                self.episode_start.get_or_insert(now);
                self.phase = ConnectivityPhase::Down;
                self.begin_reconnect()
            }
        }
    }

    pub fn on_session_established(&mut self) {
        if self.phase == ConnectivityPhase::Reconnecting {
            self.phase = ConnectivityPhase::Recovered;
        }
    }

    pub fn on_display(&mut self, now: Nanos) {
        if self.phase == ConnectivityPhase::Recovered {
            self.phase = ConnectivityPhase::Healthy;
            self.episode_start = None;
            self.last_rtp_rx = Some(now);
        }
    }

    fn begin_reconnect(&mut self) -> Vec<MonitorAction> {
        self.phase = ConnectivityPhase::Reconnecting;
        self.next_probe_at = None;
        self.outstanding.clear();
        vec![MonitorAction::StartHandshake]
    }

    /// Next time `step` has work to do.
    pub fn next_deadline(&self) -> Option<Nanos> {
        match self.phase {
            ConnectivityPhase::Healthy => self
                .last_rtp_rx
                .map(|t| t + self.cfg.rtp_silence_timeout + 1),
            ConnectivityPhase::SuspectedDown | ConnectivityPhase::Down => self.next_probe_at,
            ConnectivityPhase::Reconnecting | ConnectivityPhase::Recovered => None,
        }
    }

    pub fn step(&mut self, now: Nanos) -> Vec<MonitorAction> {
        let mut actions = Vec::new();
        if self.phase == ConnectivityPhase::Healthy {
            if let Some(last) = self.last_rtp_rx {
                if now - last > self.cfg.rtp_silence_timeout {
                    self.phase = ConnectivityPhase::SuspectedDown;
                    self.episode_start = Some(now);
                    self.next_probe_at = Some(now);
                    self.outstanding.clear();
                }
            }
        }
        if matches!(
            self.phase,
            ConnectivityPhase::SuspectedDown | ConnectivityPhase::Down
        ) {
            while let Some(due) = self.next_probe_at.filter(|&d| d <= now) {
                let expired = self
                    .outstanding
                    .iter()
                    .filter(|&&s| s + self.cfg.probe_timeout <= due)
                    .count();
                if expired as u32 >= self.cfg.probe_timeouts_to_down {
                    self.phase = ConnectivityPhase::Down;
                }
                self.outstanding.push(due);
                self.next_probe_at = Some(due + self.cfg.ping_interval);
                if actions.last() != Some(&MonitorAction::SendProbe) {
                    actions.push(MonitorAction::SendProbe);
                }
            }
        }
        actions
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn monitor() -> ConnectivityMonitor {
        ConnectivityMonitor::new(MonitorConfig::default())
    }

    #[test]
    fn steady_stream_stays_healthy() {
        let mut m = monitor();
        for i in 0..100 {
            let t = i * 33 * MS;
            m.on_rtp(t);
            assert!(m.step(t + 10 * MS).is_empty());
            assert_eq!(m.phase(), ConnectivityPhase::Healthy);
        }
    }

    #[test]
    fn silence_triggers_suspicion() {
        let mut m = monitor();
        m.on_rtp(0);
        m.step(100 * MS);
        assert_eq!(m.phase(), ConnectivityPhase::Healthy);
        assert_eq!(m.step(100 * MS + 1), vec![MonitorAction::SendProbe]);
        assert_eq!(m.phase(), ConnectivityPhase::SuspectedDown);
    }

    #[test]
    fn two_probe_timeouts_mean_down() {
        let mut m = monitor();
        m.on_rtp(0);
        let mut t = 101 * MS;
        while t < 221 * MS {
            m.step(t);
            assert_eq!(m.phase(), ConnectivityPhase::SuspectedDown, "{t}");
            t += 20 * MS;
        }
        m.step(221 * MS);
        assert_eq!(m.phase(), ConnectivityPhase::Down);
        assert_eq!(m.on_probe_ok(230 * MS), vec![MonitorAction::StartHandshake]);
        assert_eq!(m.phase(), ConnectivityPhase::Reconnecting);
    }

    #[test]
    fn answered_probe_while_suspected_means_quiet_source() {
        let mut m = monitor();
        m.on_rtp(0);
        m.step(101 * MS);
        m.step(121 * MS);
        assert!(m.on_probe_ok(151 * MS).is_empty());
        assert_eq!(m.phase(), ConnectivityPhase::Healthy);
        assert!(m.step(200 * MS).is_empty());
        assert_eq!(m.next_deadline(), Some(251 * MS + 1));
    }

    #[test]
    fn resumed_rtp_clears_suspicion() {
        let mut m = monitor();
        m.on_rtp(0);
        m.step(101 * MS);
        m.on_rtp(110 * MS);
        assert_eq!(m.phase(), ConnectivityPhase::Healthy);
    }

    #[test]
    fn address_change_skips_to_reconnect() {
        let mut m = monitor();
        m.on_rtp(0);
        assert_eq!(
            m.on_address_change(5 * MS),
            vec![MonitorAction::StartHandshake]
        );
        assert_eq!(m.phase(), ConnectivityPhase::Reconnecting);
        m.on_session_established();
        assert_eq!(m.phase(), ConnectivityPhase::Recovered);
        assert_eq!(m.next_deadline(), None);
        m.on_display(400 * MS);
        assert_eq!(m.phase(), ConnectivityPhase::Healthy);
    }

    #[test]
    fn first_probe_after_restore_within_one_interval() {
        // Zero-RTT probes: outage [0, 200) ms, last packet at 0.
        let mut m = monitor();
        m.on_rtp(0);
        let mut success = None;
        let mut t = 0;
        while success.is_none() {
            t += MS / 10;
            if m.step(t).contains(&MonitorAction::SendProbe) && t >= 200 * MS {
                m.on_probe_ok(t);
                success = Some(t);
            }
        }
        assert!(success.unwrap() <= 220 * MS, "{:?}", success);
    }
}

use std::net::SocketAddr;

use bytes::Bytes;

use super::node::{Node, Outgoing};
use super::EndpointError;
use crate::metrics::{MetricsError, TraceStore};
use crate::relay::{FrameClock, Relay, RelayConfig, RelayStats, ServerProbe};
use crate::rtp::RtpPacket;
use crate::{Nanos, SECOND};

#[derive(Clone, Debug)]
pub struct ServerNodeConfig {
    pub relay: RelayConfig,
    pub control_addr: SocketAddr,
    pub ingest_addr: SocketAddr,
    /// Synthetic relay latency per packet.
    pub processing_delay: Nanos,
    pub fps: u32,
    pub ts_base: u32,
    pub preroll_ts_base: u32,
    /// Cadence of session expiry and dead-session pruning.
    pub housekeeping: Nanos,
}

/// Server entity: answers control requests and fans ingested RTP out to
/// playing sessions. The server clock is the reference clock.
pub struct ServerNode {
    cfg: ServerNodeConfig,
    relay: Relay,
    probe: ServerProbe,
    next_housekeeping: Nanos,
}

impl ServerNode {
    pub fn new(cfg: ServerNodeConfig, now: Nanos) -> Result<Self, EndpointError> {
        if cfg.processing_delay < 0 || cfg.housekeeping <= 0 || cfg.fps == 0 {
            return Err(EndpointError::InvalidConfig(
                "server delay must be non-negative, housekeeping and fps positive".into(),
            ));
        }
        let mut probe = ServerProbe::new();
        probe.add_stream(cfg.relay.live_ssrc, FrameClock::new(cfg.ts_base, cfg.fps));
        if let Some(ssrc) = cfg.relay.preroll_ssrc {
            probe.add_stream(ssrc, FrameClock::new(cfg.preroll_ts_base, cfg.fps));
        }
        Ok(Self {
            relay: Relay::new(cfg.relay.clone()),
            probe,
            next_housekeeping: now + cfg.housekeeping,
            cfg,
        })
    }

    pub fn relay(&self) -> &Relay {
        &self.relay
    }

    pub fn stats(&self) -> RelayStats {
        self.relay.stats()
    }

    pub fn into_traces(self) -> Result<TraceStore, MetricsError> {
        self.probe.into_traces()
    }
}

impl Node for ServerNode {
    type Error = EndpointError;

    fn on_datagram(
        &mut self,
        local: SocketAddr,
        from: SocketAddr,
        bytes: Bytes,
        now: Nanos,
    ) -> Result<Vec<Outgoing>, EndpointError> {
        if local == self.cfg.control_addr {
            let reply = self.relay.handle_control_bytes(&bytes, from, now);
            return Ok(vec![Outgoing {
                from: local,
                to: from,
                at: now,
                bytes: reply.into(),
            }]);
        }
        let pkt = match RtpPacket::decode(bytes.clone()) {
            Ok(p) => p,
            Err(e) => {
                log::debug!("server dropping bad RTP from {from}: {e}");
                return Ok(Vec::new());
            }
        };
        let forwards = match self.relay.ingest_and_fanout(&pkt, now) {
            Ok(f) => f,
            Err(e) => {
                log::debug!("server dropping packet from {from}: {e}");
                return Ok(Vec::new());
            }
        };
        self.probe.on_ingest(pkt.ssrc, pkt.timestamp, now);
        let at = now + self.cfg.processing_delay;
        if !forwards.is_empty() {
            self.probe.on_forward(pkt.ssrc, pkt.timestamp, at);
        }
        let mut out = Vec::new();
        for f in forwards {
            for held in &f.replay {
                self.probe.on_forward(held.ssrc, held.timestamp, at);
                out.push(Outgoing {
                    from: self.cfg.ingest_addr,
                    to: f.dest,
                    at,
                    bytes: held.encode(),
                });
            }
            out.push(Outgoing {
                from: self.cfg.ingest_addr,
                to: f.dest,
                at,
                bytes: bytes.clone(),
            });
        }
        Ok(out)
    }

    fn on_timer(&mut self, now: Nanos) -> Result<Vec<Outgoing>, EndpointError> {
        if now >= self.next_housekeeping {
            for id in self.relay.expire_sessions(now) {
                log::info!("session {id} expired");
            }
            self.relay.prune_dead(now, 10 * SECOND);
            self.next_housekeeping = now + self.cfg.housekeeping;
        }
        Ok(Vec::new())
    }

    fn next_timer(&self) -> Option<Nanos> {
        Some(self.next_housekeeping)
    }

    fn sockets(&self) -> Vec<SocketAddr> {
        vec![self.cfg.control_addr, self.cfg.ingest_addr]
    }
}

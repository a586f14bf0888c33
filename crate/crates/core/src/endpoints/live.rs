use std::collections::BTreeMap;
use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use bytes::Bytes;

use super::node::{Node, Outgoing};
use crate::netem::TimeSource;
use crate::{Nanos, MS};

const MAX_DATAGRAM: usize = 65_536;
/// Upper bound on one idle wait, so `stop` is noticed promptly.
const MAX_IDLE: Nanos = 5 * MS;

#[derive(Debug, thiserror::Error)]
pub enum LiveError<E: std::error::Error + 'static> {
    #[error("socket {addr}: {source}")]
    Io { addr: SocketAddr, source: io::Error },
    #[error(transparent)]
    Node(E),
    #[error("node sent from {0}, which it does not own")]
    UnknownSocket(SocketAddr),
}

/// Runs a node over real UDP sockets on the wall clock. The node's local
/// time is Unix time in ns.
pub struct LiveDriver {
    clock: TimeSource,
    sockets: BTreeMap<SocketAddr, UdpSocket>,
    /// Datagrams the node scheduled for later, keyed by (due, order).
    pending: BTreeMap<(Nanos, u64), Outgoing>,
    seq: u64,
}

impl LiveDriver {
    pub fn bind<N: Node>(node: &N, clock: TimeSource) -> Result<Self, LiveError<N::Error>> {
        let mut sockets = BTreeMap::new();
        for addr in node.sockets() {
            let sock = UdpSocket::bind(addr).map_err(|source| LiveError::Io { addr, source })?;
            sock.set_nonblocking(true)
                .map_err(|source| LiveError::Io { addr, source })?;
            sockets.insert(addr, sock);
        }
        Ok(Self {
            clock,
            sockets,
            pending: BTreeMap::new(),
            seq: 0,
        })
    }

    pub fn now(&self) -> Nanos {
        self.clock.now()
    }

    /// Runs until `stop` is set, `done` holds or the node fails. When `done`
    /// ends the run, datagrams already queued still go out on time.
    pub fn run<N: Node>(
        &mut self,
        node: &mut N,
        stop: &AtomicBool,
        mut done: impl FnMut(&N) -> bool,
    ) -> Result<(), LiveError<N::Error>> {
        let mut buf = vec![0u8; MAX_DATAGRAM];
        while !stop.load(Ordering::Relaxed) && !done(node) {
            let now = self.clock.now();
            self.flush(now)?;

            let mut idle = true;
            let addrs: Vec<SocketAddr> = self.sockets.keys().copied().collect();
            for local in addrs {
                loop {
                    let sock = &self.sockets[&local];
                    match sock.recv_from(&mut buf) {
                        Ok((n, from)) => {
                            idle = false;
                            let bytes = Bytes::copy_from_slice(&buf[..n]);
                            let out = node
                                .on_datagram(local, from, bytes, self.clock.now())
                                .map_err(LiveError::Node)?;
                            self.queue(out);
                        }
                        Err(e) if e.kind() == io::ErrorKind::WouldBlock => break,
                        // ICMP unreachable from an earlier send.
                        Err(e) if e.kind() == io::ErrorKind::ConnectionRefused => {}
                        Err(source) => {
                            return Err(LiveError::Io {
                                addr: local,
                                source,
                            })
                        }
                    }
                }
            }

            let now = self.clock.now();
            if node.next_timer().is_some_and(|t| t <= now) {
                let out = node.on_timer(now).map_err(LiveError::Node)?;
                self.queue(out);
                idle = false;
            }
            self.flush(self.clock.now())?;

            if idle {
                let now = self.clock.now();
                let next = [node.next_timer(), self.pending.keys().next().map(|k| k.0)]
                    .into_iter()
                    .flatten()
                    .min()
                    .unwrap_or(now + MAX_IDLE);
                let wait = (next - now).clamp(0, MAX_IDLE).min(MS);
                if wait > 0 {
                    std::thread::sleep(Duration::from_nanos(wait as u64));
                }
            }
        }
        while !stop.load(Ordering::Relaxed) {
            let Some(&(due, _)) = self.pending.keys().next() else {
                break;
            };
            let wait = due - self.clock.now();
            if wait > 0 {
                std::thread::sleep(Duration::from_nanos(wait.min(MAX_IDLE) as u64));
            }
            self.flush(self.clock.now())?;
        }
        Ok(())
    }

    fn queue(&mut self, out: Vec<Outgoing>) {
        for o in out {
            self.pending.insert((o.at, self.seq), o);
            self.seq += 1;
        }
    }

    fn flush<E: std::error::Error + 'static>(&mut self, now: Nanos) -> Result<(), LiveError<E>> {
        while let Some(entry) = self.pending.first_entry() {
            if entry.key().0 > now {
                break;
            }
            let o = entry.remove();
            let sock = self
                .sockets
                .get(&o.from)
                .ok_or(LiveError::UnknownSocket(o.from))?;
            match sock.send_to(&o.bytes, o.to) {
                Ok(_) => {}
                Err(e)
                    if matches!(
                        e.kind(),
                        io::ErrorKind::WouldBlock | io::ErrorKind::ConnectionRefused
                    ) =>
                {
                    log::debug!("dropped datagram to {}: {e}", o.to);
                }
                Err(source) => {
                    return Err(LiveError::Io {
                        addr: o.from,
                        source,
                    })
                }
            }
        }
        Ok(())
    }
}

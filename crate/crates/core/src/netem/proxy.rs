use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use super::emulator::PathSampler;
use super::profile::NetworkProfile;

const MAX_DATAGRAM: usize = 65_536;
const IDLE_POLL: Duration = Duration::from_millis(50);

/// Wall-clock UDP relay applying a profile in both directions. Datagrams
/// from `upstream` go back to the most recent downstream peer.
pub struct UdpProxy {
    socket: UdpSocket,
    upstream: SocketAddr,
    profile: NetworkProfile,
    sampler: PathSampler,
    downstream: Option<SocketAddr>,
    queue: BinaryHeap<Reverse<Pending>>,
    seq: u64,
}

/// (due, tie-break seq, destination, datagram).
type Pending = (Instant, u64, SocketAddr, Vec<u8>);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ProxyStats {
    pub received: u64,
    pub forwarded: u64,
    pub dropped: u64,
}

impl UdpProxy {
    pub fn bind(
        listen: SocketAddr,
        upstream: SocketAddr,
        profile: NetworkProfile,
        seed: u64,
    ) -> io::Result<Self> {
        profile
            .validate()
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
        Ok(Self {
            socket: UdpSocket::bind(listen)?,
            upstream,
            profile,
            sampler: PathSampler::new(seed),
            downstream: None,
            queue: BinaryHeap::new(),
            seq: 0,
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.socket.local_addr()
    }

    /// Runs until `stop` is set.
    pub fn run(&mut self, stop: &AtomicBool) -> io::Result<ProxyStats> {
        let mut stats = ProxyStats::default();
        let mut buf = vec![0u8; MAX_DATAGRAM];
        while !stop.load(Ordering::Relaxed) {
            let now = Instant::now();
            while let Some(Reverse((due, ..))) = self.queue.peek() {
                if *due > now {
                    break;
                }
                let Reverse((_, _, to, bytes)) = self.queue.pop().expect("peeked");
                self.socket.send_to(&bytes, to)?;
                stats.forwarded += 1;
            }
            let wait = self
                .queue
                .peek()
                .map(|Reverse((due, ..))| due.saturating_duration_since(now))
                .unwrap_or(IDLE_POLL)
                .clamp(Duration::from_micros(100), IDLE_POLL);
            self.socket.set_read_timeout(Some(wait))?;
            match self.socket.recv_from(&mut buf) {
                Ok((n, src)) => {
                    stats.received += 1;
                    let dest = if src == self.upstream {
                        match self.downstream {
                            Some(d) => d,
                            None => continue,
                        }
                    } else {
                        self.downstream = Some(src);
                        self.upstream
                    };
                    match self.sampler.sample(&self.profile) {
                        Some(delay) => {
                            let due = Instant::now() + Duration::from_nanos(delay as u64);
                            self.queue
                                .push(Reverse((due, self.seq, dest, buf[..n].to_vec())));
                            self.seq += 1;
                        }
                        None => stats.dropped += 1,
                    }
                }
                Err(e)
                    if matches!(
                        e.kind(),
                        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                    ) => {}
                Err(e) if e.kind() == io::ErrorKind::ConnectionRefused => {}
                Err(e) => return Err(e),
            }
        }
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn forwards_with_delay_both_ways() {
        let server = UdpSocket::bind("127.0.0.1:0").unwrap();
        let client = UdpSocket::bind("127.0.0.1:0").unwrap();
        let profile = NetworkProfile::new(20_000_000, 0, 0.0).unwrap();
        let mut proxy = UdpProxy::bind(
            "127.0.0.1:0".parse().unwrap(),
            server.local_addr().unwrap(),
            profile,
            1,
        )
        .unwrap();
        let proxy_addr = proxy.local_addr().unwrap();
        let stop = Arc::new(AtomicBool::new(false));
        let handle = {
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || proxy.run(&stop).unwrap())
        };
        server
            .set_read_timeout(Some(Duration::from_secs(2)))
            .unwrap();
        client
            .set_read_timeout(Some(Duration::from_secs(2)))
            .unwrap();

        let t0 = Instant::now();
        client.send_to(b"ping", proxy_addr).unwrap();
        let mut buf = [0u8; 16];
        let (n, from) = server.recv_from(&mut buf).unwrap();
        assert_eq!(&buf[..n], b"ping");
        assert!(t0.elapsed() >= Duration::from_millis(20));
        server.send_to(b"pong", from).unwrap();
        let (n, _) = client.recv_from(&mut buf).unwrap();
        assert_eq!(&buf[..n], b"pong");

        stop.store(true, Ordering::Relaxed);
        let stats = handle.join().unwrap();
        assert_eq!(stats.forwarded, 2);
    }
}

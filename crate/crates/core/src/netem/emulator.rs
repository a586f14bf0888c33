use std::collections::BTreeMap;
use std::net::{IpAddr, SocketAddr};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::profile::{validate_handovers, HandoverEvent, NetworkProfile};
use super::NetemError;
use crate::Nanos;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HostId(pub usize);

/// Loss and jitter draws from one seeded stream. Loss is drawn first for
/// every datagram, jitter only when the profile has any.
#[derive(Clone, Debug)]
pub struct PathSampler {
    rng: ChaCha8Rng,
}

impl PathSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Delivery delay, or None when the datagram is lost.
    pub fn sample(&mut self, profile: &NetworkProfile) -> Option<Nanos> {
        let u: f64 = self.rng.random();
        if u < profile.loss_rate {
            return None;
        }
        if profile.jitter_stddev == 0 {
            return Some(profile.one_way_delay);
        }
        let normal = Normal::new(0.0, profile.jitter_stddev as f64).expect("stddev is positive");
        let jitter = normal.sample(&mut self.rng).round() as Nanos;
        Some((profile.one_way_delay + jitter).max(0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Deliver {
        at: Nanos,
    },
    DropLoss,
    DropOutage,
    DropBlackHole,
    /// Accepted at send time, discarded at delivery time.
    DropAtDelivery,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub now: Nanos,
    pub from: SocketAddr,
    pub to: SocketAddr,
    pub len: usize,
    pub verdict: Verdict,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NetemStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped_loss: u64,
    pub dropped_outage: u64,
    pub dropped_black_hole: u64,
}

/// An applied handover: the host's address moved from `old` to `new` at
/// the end of its outage window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AddressChange {
    pub handover_id: u32,
    pub host: HostId,
    pub old: IpAddr,
    pub new: IpAddr,
    pub outage_start: Nanos,
    pub outage_end: Nanos,
}

#[derive(Clone, Debug)]
struct Host {
    name: String,
    address: IpAddr,
    retired: Vec<IpAddr>,
    handovers: Vec<HandoverEvent>,
    applied: usize,
}

/// Virtual-time network: per-path delay, jitter and loss plus scripted
/// handovers. Addresses are IP-level; ports survive an address change.
#[derive(Clone, Debug)]
pub struct Emulator {
    hosts: Vec<Host>,
    by_address: BTreeMap<IpAddr, HostId>,
    profiles: BTreeMap<(HostId, HostId), NetworkProfile>,
    default_profile: NetworkProfile,
    sampler: PathSampler,
    stats: NetemStats,
    trace: Option<Vec<TraceEntry>>,
    next_handover_id: u32,
}

impl Emulator {
    pub fn new(seed: u64, default_profile: NetworkProfile) -> Result<Self, NetemError> {
        default_profile.validate()?;
        Ok(Self {
            hosts: Vec::new(),
            by_address: BTreeMap::new(),
            profiles: BTreeMap::new(),
            default_profile,
            sampler: PathSampler::new(seed),
            stats: NetemStats::default(),
            trace: None,
            next_handover_id: 0,
        })
    }

    /// Keep every verdict for later inspection.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> &[TraceEntry] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn stats(&self) -> NetemStats {
        self.stats
    }

    pub fn register_host(
        &mut self,
        name: impl Into<String>,
        address: IpAddr,
    ) -> Result<HostId, NetemError> {
        if self.by_address.contains_key(&address) {
            return Err(NetemError::DuplicateAddress(address));
        }
        let id = HostId(self.hosts.len());
        self.hosts.push(Host {
            name: name.into(),
            address,
            retired: Vec::new(),
            handovers: Vec::new(),
            applied: 0,
        });
        self.by_address.insert(address, id);
        Ok(id)
    }

    pub fn host_name(&self, host: HostId) -> &str {
        &self.hosts[host.0].name
    }

    pub fn address_of(&self, host: HostId) -> IpAddr {
        self.hosts[host.0].address
    }

    pub fn host_at(&self, address: IpAddr) -> Option<HostId> {
        self.by_address.get(&address).copied()
    }

    pub fn is_retired(&self, address: IpAddr) -> bool {
        self.host_at(address)
            .is_some_and(|h| self.hosts[h.0].address != address)
    }

    pub fn set_profile(
        &mut self,
        from: HostId,
        to: HostId,
        profile: NetworkProfile,
    ) -> Result<(), NetemError> {
        profile.validate()?;
        self.profiles.insert((from, to), profile);
        Ok(())
    }

    /// Same profile in both directions.
    pub fn set_link(
        &mut self,
        a: HostId,
        b: HostId,
        profile: NetworkProfile,
    ) -> Result<(), NetemError> {
        self.set_profile(a, b, profile)?;
        self.set_profile(b, a, profile)
    }

    pub fn profile(&self, from: HostId, to: HostId) -> NetworkProfile {
        self.profiles
            .get(&(from, to))
            .copied()
            .unwrap_or(self.default_profile)
    }

    /// Installs a host's handover schedule. New addresses must be unused.
    pub fn schedule_handovers(
        &mut self,
        host: HostId,
        events: Vec<HandoverEvent>,
    ) -> Result<(), NetemError> {
        validate_handovers(&events)?;
        let h = &mut self.hosts[host.0];
        if h.applied != 0 {
            return Err(NetemError::InvalidHandover(
                "schedule already in progress".into(),
            ));
        }
        for e in &events {
            if self.by_address.contains_key(&e.new_address) {
                return Err(NetemError::DuplicateAddress(e.new_address));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        if !events.iter().all(|e| seen.insert(e.new_address)) {
            return Err(NetemError::InvalidHandover(
                "new addresses must be distinct".into(),
            ));
        }
        h.handovers = events;
        Ok(())
    }

    pub fn handovers(&self, host: HostId) -> &[HandoverEvent] {
        &self.hosts[host.0].handovers
    }

    pub fn in_outage(&self, host: HostId, t: Nanos) -> bool {
        let events = &self.hosts[host.0].handovers;
        let idx = events.partition_point(|e| e.at <= t);
        idx > 0 && events[idx - 1].covers(t)
    }

    /// Earliest pending address change across hosts.
    pub fn next_address_change(&self) -> Option<Nanos> {
        self.hosts
            .iter()
            .filter_map(|h| h.handovers.get(h.applied).map(HandoverEvent::end))
            .min()
    }

    /// Applies every address change with outage end at or before `now`.
    pub fn apply_handovers(&mut self, now: Nanos) -> Vec<AddressChange> {
        let mut changes = Vec::new();
        for (i, h) in self.hosts.iter_mut().enumerate() {
            while let Some(ev) = h.handovers.get(h.applied).copied() {
                if ev.end() > now {
                    break;
                }
                let old = h.address;
                h.retired.push(old);
                h.address = ev.new_address;
                h.applied += 1;
                self.by_address.insert(ev.new_address, HostId(i));
                changes.push(AddressChange {
                    handover_id: self.next_handover_id,
                    host: HostId(i),
                    old,
                    new: ev.new_address,
                    outage_start: ev.at,
                    outage_end: ev.end(),
                });
                self.next_handover_id += 1;
            }
        }
        changes
    }

    fn classify(
        &mut self,
        from: SocketAddr,
        to: SocketAddr,
        now: Nanos,
    ) -> Result<Verdict, NetemError> {
        let to_host = self
            .host_at(to.ip())
            .ok_or(NetemError::UnknownAddress(to))?;
        let from_host = self.host_at(from.ip());
        if self.is_retired(to.ip()) || self.is_retired(from.ip()) {
            return Ok(Verdict::DropBlackHole);
        }
        if self.in_outage(to_host, now) || from_host.is_some_and(|h| self.in_outage(h, now)) {
            return Ok(Verdict::DropOutage);
        }
        let profile = match from_host {
            Some(f) => self.profile(f, to_host),
            None => self.default_profile,
        };
        Ok(match self.sampler.sample(&profile) {
            Some(delay) => Verdict::Deliver { at: now + delay },
            None => Verdict::DropLoss,
        })
    }

    /// Send-time decision. Returns the scheduled delivery time, or None if
    /// the datagram is dropped.
    pub fn transmit(
        &mut self,
        from: SocketAddr,
        to: SocketAddr,
        len: usize,
        now: Nanos,
    ) -> Result<Option<Nanos>, NetemError> {
        let verdict = self.classify(from, to, now)?;
        self.stats.sent += 1;
        match verdict {
            Verdict::DropLoss => self.stats.dropped_loss += 1,
            Verdict::DropOutage => self.stats.dropped_outage += 1,
            Verdict::DropBlackHole => self.stats.dropped_black_hole += 1,
            Verdict::Deliver { .. } | Verdict::DropAtDelivery => {}
        }
        self.log(now, from, to, len, verdict);
        Ok(match verdict {
            Verdict::Deliver { at } => Some(at),
            _ => None,
        })
    }

    /// Delivery-time check: datagrams landing inside an outage window or on
    /// a retired address are discarded.
    pub fn deliver(&mut self, from: SocketAddr, to: SocketAddr, len: usize, at: Nanos) -> bool {
        let blocked = match self.host_at(to.ip()) {
            None => true,
            Some(h) => self.is_retired(to.ip()) || self.in_outage(h, at),
        };
        if blocked {
            self.stats.dropped_outage += 1;
            self.log(at, from, to, len, Verdict::DropAtDelivery);
        } else {
            self.stats.delivered += 1;
        }
        !blocked
    }

    fn log(&mut self, now: Nanos, from: SocketAddr, to: SocketAddr, len: usize, verdict: Verdict) {
        if let Some(t) = &mut self.trace {
            t.push(TraceEntry {
                now,
                from,
                to,
                len,
                verdict,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::MS;

    fn addr(s: &str) -> SocketAddr {
        s.parse().unwrap()
    }

    fn two_hosts(profile: NetworkProfile) -> (Emulator, HostId, HostId) {
        let mut e = Emulator::new(1, profile).unwrap();
        let a = e.register_host("a", "10.0.0.1".parse().unwrap()).unwrap();
        let b = e.register_host("b", "10.0.0.2".parse().unwrap()).unwrap();
        (e, a, b)
    }

    #[test]
    fn fixed_delay_is_exact() {
        let (mut e, _, _) = two_hosts(NetworkProfile::new(25 * MS, 0, 0.0).unwrap());
        let at = e
            .transmit(addr("10.0.0.1:1"), addr("10.0.0.2:2"), 10, 1000)
            .unwrap();
        assert_eq!(at, Some(1000 + 25 * MS));
    }

    #[test]
    fn total_loss_drops_everything() {
        let (mut e, _, _) = two_hosts(NetworkProfile::new(MS, 0, 1.0).unwrap());
        for t in 0..100 {
            assert_eq!(
                e.transmit(addr("10.0.0.1:1"), addr("10.0.0.2:2"), 10, t)
                    .unwrap(),
                None
            );
        }
    }

    #[test]
    fn unregistered_destination_is_error() {
        let (mut e, _, _) = two_hosts(NetworkProfile::ideal());
        assert!(matches!(
            e.transmit(addr("10.0.0.1:1"), addr("10.9.9.9:2"), 10, 0),
            Err(NetemError::UnknownAddress(_))
        ));
    }

    #[test]
    fn loss_pattern_is_seeded_and_calibrated() {
        let run = || {
            let (mut e, _, _) = two_hosts(NetworkProfile::new(MS, 0, 0.1).unwrap());
            (0..10_000)
                .map(|t| {
                    e.transmit(addr("10.0.0.1:1"), addr("10.0.0.2:2"), 10, t)
                        .unwrap()
                        .is_none()
                })
                .collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        let rate = a.iter().filter(|&&d| d).count() as f64 / a.len() as f64;
        assert!((rate - 0.1).abs() <= 0.01, "rate {rate}");
    }

    #[test]
    fn jitter_is_clamped_at_zero() {
        let (mut e, _, _) = two_hosts(NetworkProfile::new(0, 10 * MS, 0.0).unwrap());
        for t in 0..1000 {
            let at = e
                .transmit(addr("10.0.0.1:1"), addr("10.0.0.2:2"), 10, t)
                .unwrap()
                .unwrap();
            assert!(at >= t);
        }
    }

    #[test]
    fn handover_blacks_out_then_moves_address() {
        let (mut e, _, b) = two_hosts(NetworkProfile::new(MS, 0, 0.0).unwrap());
        let new_ip: IpAddr = "10.0.1.2".parse().unwrap();
        e.schedule_handovers(
            b,
            vec![HandoverEvent {
                at: 1000 * MS,
                outage_duration: 200 * MS,
                new_address: new_ip,
            }],
        )
        .unwrap();
        let src = addr("10.0.0.1:1");
        assert_eq!(
            e.transmit(src, addr("10.0.0.2:5"), 1, 1100 * MS).unwrap(),
            None
        );
        assert_eq!(e.next_address_change(), Some(1200 * MS));
        let changes = e.apply_handovers(1200 * MS);
        assert_eq!(changes.len(), 1);
        assert_eq!(changes[0].outage_start, 1000 * MS);
        assert_eq!(e.address_of(b), new_ip);
        assert!(e
            .transmit(src, SocketAddr::new(new_ip, 5), 1, 1250 * MS)
            .unwrap()
            .is_some());
        assert_eq!(
            e.transmit(src, addr("10.0.0.2:5"), 1, 1250 * MS).unwrap(),
            None
        );
        assert_eq!(e.stats().dropped_black_hole, 1);
    }

    #[test]
    fn in_flight_datagram_dropped_when_outage_starts() {
        let (mut e, _, b) = two_hosts(NetworkProfile::new(50 * MS, 0, 0.0).unwrap());
        e.schedule_handovers(
            b,
            vec![HandoverEvent {
                at: 100 * MS,
                outage_duration: 100 * MS,
                new_address: "10.0.1.2".parse().unwrap(),
            }],
        )
        .unwrap();
        let (src, dst) = (addr("10.0.0.1:1"), addr("10.0.0.2:5"));
        let at = e.transmit(src, dst, 1, 80 * MS).unwrap().unwrap();
        assert!(!e.deliver(src, dst, 1, at));
    }

    #[test]
    fn new_address_must_be_fresh() {
        let (mut e, _, b) = two_hosts(NetworkProfile::ideal());
        let clash = HandoverEvent {
            at: 0,
            outage_duration: 1,
            new_address: "10.0.0.1".parse().unwrap(),
        };
        assert!(matches!(
            e.schedule_handovers(b, vec![clash]),
            Err(NetemError::DuplicateAddress(_))
        ));
    }
}

//! Whole-system runs in virtual time: the three entities and the emulator
//! in one single-threaded event loop.

use std::collections::BTreeSet;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::Path;

use bytes::Bytes;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ConfigError, Settings};
use crate::control::KeepalivePolicy;
use crate::endpoints::{
    EndpointError, Node, Outgoing, PlayoutPolicy, ReceiverConfig, ReceiverNode, ReceiverNodeConfig,
    SenderConfig, SenderNode, SenderNodeConfig, SenderPipeline, ServerNode, ServerNodeConfig,
    SyncConfig, DEFAULT_LIVE_SSRC, DEFAULT_PREROLL_SSRC,
};
use crate::media::{AnnexBFileSource, EncoderConfig, FrameSource, MediaError, SyntheticEncoder};
use crate::metrics::{
    decompose, summarize, write_frames, write_offsets, write_recovery, write_summary, Accounting,
    Decomposition, MetricsError, OffsetRow, SummaryRow, TraceStore, FRAMES_CSV, OFFSETS_CSV,
    RECOVERY_CSV, SUMMARY_CSV,
};
use crate::netem::{
    Emulator, HandoverEvent, HostId, NetemError, NetemStats, NetworkProfile, Scheduler, TraceEntry,
};
use crate::recovery::{MonitorConfig, ReconnectConfig, RecoveryRecord};
use crate::relay::{FrameClock, RelayConfig, RelayStats};
use crate::report;
use crate::rtp::RtpPacket;
use crate::{Nanos, MS, SECOND};

/// Largest clock offset drawn for the sender and receiver hosts.
pub const MAX_CLOCK_OFFSET: Nanos = 50 * MS;

pub const REPORT_TXT: &str = "report.txt";

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
    #[error(transparent)]
    Netem(#[from] NetemError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("cannot write artifacts to {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Knobs that only tests and diagnostics need.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Keep every netem verdict.
    pub trace_netem: bool,
    /// Live frames whose first packet is dropped on the uplink.
    pub force_drop_frames: BTreeSet<u64>,
}

/// Everything a run produced.
#[derive(Debug)]
pub struct Run {
    pub run_id: String,
    pub seed: u64,
    pub settings: Settings,
    pub traces: TraceStore,
    pub recovery: Vec<RecoveryRecord>,
    pub offsets: Vec<OffsetRow>,
    /// Counted by the sender itself, independent of the traces.
    pub frames_sent: u64,
    pub relay: RelayStats,
    pub netem: NetemStats,
    pub netem_trace: Vec<TraceEntry>,
    pub handovers: Vec<HandoverEvent>,
    /// True offsets (server minus local) of sender and receiver.
    pub clock_offsets: (Nanos, Nanos),
    pub sessions_established: u32,
}

impl Run {
    pub fn live_accounting(&self) -> Accounting {
        Accounting::of_stream(&self.traces, DEFAULT_LIVE_SSRC)
    }

    pub fn preroll_accounting(&self) -> Accounting {
        Accounting::of_stream(&self.traces, DEFAULT_PREROLL_SSRC)
    }

    /// Decompositions of every displayed live frame, in frame order.
    pub fn decompositions(&self) -> Vec<Decomposition> {
        self.traces
            .stream(DEFAULT_LIVE_SSRC)
            .filter_map(|t| decompose(t).ok())
            .collect()
    }

    pub fn mean_e2e(&self) -> Option<f64> {
        let d = self.decompositions();
        (!d.is_empty()).then(|| d.iter().map(|d| d.e2e as f64).sum::<f64>() / d.len() as f64)
    }

    pub fn summary_rows(&self) -> Result<Vec<SummaryRow>, MetricsError> {
        let decs = self.decompositions();
        let mut rows = Vec::new();
        for name in Decomposition::METRICS {
            let values: Vec<Nanos> = decs.iter().filter_map(|d| d.metric(name)).collect();
            rows.push(stat_row(name, &values)?);
        }
        let recoveries: Vec<Nanos> = self.recovery.iter().map(RecoveryRecord::recovery).collect();
        rows.push(stat_row("recovery", &recoveries)?);
        let a = self.live_accounting();
        for (name, count) in [
            ("sent", a.sent),
            ("displayed", a.displayed),
            ("drop_late", a.drop_late),
            ("drop_loss", a.drop_loss),
            ("drop_need_idr", a.drop_need_idr),
            ("in_flight", a.in_flight),
        ] {
            rows.push(SummaryRow {
                metric: name.into(),
                count,
                stats: None,
            });
        }
        let p = self.preroll_accounting();
        if p.sent > 0 {
            rows.push(SummaryRow {
                metric: "preroll_sent".into(),
                count: p.sent,
                stats: None,
            });
            rows.push(SummaryRow {
                metric: "preroll_displayed".into(),
                count: p.displayed,
                stats: None,
            });
        }
        Ok(rows)
    }

    /// Writes the CSVs, then renders report.txt from what was written.
    pub fn write_artifacts(&self, dir: &Path) -> Result<(), ExperimentError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| ExperimentError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let create = |name: &str| {
            let p = dir.join(name);
            std::fs::File::create(&p)
                .map(std::io::BufWriter::new)
                .map_err(io(&p))
        };
        write_frames(create(FRAMES_CSV)?, &self.run_id, &self.traces)?;
        write_recovery(create(RECOVERY_CSV)?, &self.run_id, &self.recovery)?;
        write_summary(create(SUMMARY_CSV)?, &self.run_id, &self.summary_rows()?)?;
        write_offsets(create(OFFSETS_CSV)?, &self.run_id, &self.offsets)?;
        let text = report::render_dir(dir)?;
        let p = dir.join(REPORT_TXT);
        std::fs::write(&p, text).map_err(io(&p))?;
        Ok(())
    }
}

fn stat_row(name: &str, values: &[Nanos]) -> Result<SummaryRow, MetricsError> {
    Ok(SummaryRow {
        metric: name.into(),
        count: values.len() as u64,
        stats: if values.is_empty() {
            None
        } else {
            Some(summarize(values)?)
        },
    })
}

pub fn run_id(settings: &Settings, seed: u64) -> String {
    format!("{}-seed{seed}", settings.name)
}

/// Handover schedule for the receiver: outages drawn uniformly from the
/// configured range, new addresses 10.1.i.3.
pub fn handover_schedule(settings: &Settings, rng: &mut ChaCha8Rng) -> Vec<HandoverEvent> {
    let Some(h) = settings.handover else {
        return Vec::new();
    };
    (0..h.count)
        .map(|i| HandoverEvent {
            at: h.first_at + h.spacing * Nanos::from(i),
            outage_duration: rng.random_range(h.outage_min..=h.outage_max),
            new_address: IpAddr::V4(Ipv4Addr::new(
                10,
                1 + (i / 250) as u8,
                (i % 250) as u8 + 1,
                3,
            )),
        })
        .collect()
}

const SENDER: usize = 0;
const SERVER: usize = 1;
const RECEIVER: usize = 2;

enum Event {
    Timer {
        node: usize,
        generation: u64,
    },
    Send {
        out: Outgoing,
    },
    Deliver {
        from: SocketAddr,
        to: SocketAddr,
        bytes: Bytes,
    },
    AddressChange,
}

struct Sim {
    sched: Scheduler<Event>,
    emu: Emulator,
    sender: SenderNode,
    server: ServerNode,
    receiver: ReceiverNode,
    hosts: [HostId; 3],
    /// Server minus local, per node.
    offsets: [Nanos; 3],
    timers: [Option<Nanos>; 3],
    generations: [u64; 3],
    force_drop: BTreeSet<u64>,
    live_clock: FrameClock,
    sender_rtp: SocketAddr,
    forced_drops: u64,
}

/// Events allowed at a single instant before the run is declared stuck.
const MAX_EVENTS_PER_INSTANT: u32 = 100_000;

impl Sim {
    fn node(&mut self, i: usize) -> &mut dyn Node<Error = EndpointError> {
        match i {
            SENDER => &mut self.sender,
            SERVER => &mut self.server,
            _ => &mut self.receiver,
        }
    }

    fn local(&self, i: usize, t: Nanos) -> Nanos {
        t - self.offsets[i]
    }

    fn reschedule(&mut self, i: usize, now: Nanos) {
        let next = self
            .node(i)
            .next_timer()
            .map(|l| (l + self.offsets[i]).max(now));
        if next != self.timers[i] {
            self.timers[i] = next;
            self.generations[i] += 1;
            if let Some(at) = next {
                self.sched.schedule(
                    at,
                    Event::Timer {
                        node: i,
                        generation: self.generations[i],
                    },
                );
            }
        }
    }

    fn dispatch(
        &mut self,
        node: usize,
        out: Vec<Outgoing>,
        now: Nanos,
    ) -> Result<(), ExperimentError> {
        for o in out {
            let at = (o.at + self.offsets[node]).max(now);
            if at > now {
                self.sched.schedule(at, Event::Send { out: o });
            } else {
                self.transmit(o, now)?;
            }
        }
        self.reschedule(node, now);
        Ok(())
    }

    fn forced(&mut self, o: &Outgoing) -> bool {
        if self.force_drop.is_empty() || o.from != self.sender_rtp {
            return false;
        }
        let Ok(pkt) = RtpPacket::decode(o.bytes.clone()) else {
            return false;
        };
        if pkt.ssrc != DEFAULT_LIVE_SSRC {
            return false;
        }
        let removed = self
            .force_drop
            .remove(&self.live_clock.frame_id(pkt.timestamp));
        self.forced_drops += u64::from(removed);
        removed
    }

    fn transmit(&mut self, o: Outgoing, now: Nanos) -> Result<(), ExperimentError> {
        if self.forced(&o) {
            return Ok(());
        }
        if let Some(at) = self.emu.transmit(o.from, o.to, o.bytes.len(), now)? {
            self.sched.schedule(
                at,
                Event::Deliver {
                    from: o.from,
                    to: o.to,
                    bytes: o.bytes,
                },
            );
        }
        Ok(())
    }

    fn deliver(
        &mut self,
        from: SocketAddr,
        to: SocketAddr,
        bytes: Bytes,
        now: Nanos,
    ) -> Result<(), ExperimentError> {
        if !self.emu.deliver(from, to, bytes.len(), now) {
            return Ok(());
        }
        let Some(host) = self.emu.host_at(to.ip()) else {
            return Ok(());
        };
        let i = self
            .hosts
            .iter()
            .position(|&h| h == host)
            .expect("registered host");
        if !self.node(i).sockets().contains(&to) {
            log::debug!("no socket bound at {to}");
            return Ok(());
        }
        let local = self.local(i, now);
        let out = self.node(i).on_datagram(to, from, bytes, local)?;
        self.dispatch(i, out, now)
    }

    fn address_change(&mut self, now: Nanos) -> Result<(), ExperimentError> {
        for c in self.emu.apply_handovers(now) {
            if c.host != self.hosts[RECEIVER] {
                continue;
            }
            let local = self.local(RECEIVER, now);
            let out =
                self.receiver
                    .on_address_change(c.handover_id, c.outage_start, c.new, local)?;
            self.dispatch(RECEIVER, out, now)?;
        }
        if let Some(at) = self.emu.next_address_change() {
            self.sched.schedule(at.max(now), Event::AddressChange);
        }
        Ok(())
    }

    fn run_until(&mut self, end: Nanos) -> Result<(), ExperimentError> {
        let mut instant = (Nanos::MIN, 0u32);
        while let Some((t, ev)) = self.sched.pop_until(end) {
            if t == instant.0 {
                instant.1 += 1;
                if instant.1 > MAX_EVENTS_PER_INSTANT {
                    return Err(ExperimentError::Invariant(format!(
                        "event storm at t={t} ns"
                    )));
                }
            } else {
                instant = (t, 0);
            }
            match ev {
                Event::Timer { node, generation } => {
                    if generation != self.generations[node] {
                        continue;
                    }
                    self.timers[node] = None;
                    let local = self.local(node, t);
                    let out = self.node(node).on_timer(local)?;
                    self.dispatch(node, out, t)?;
                }
                Event::Send { out } => self.transmit(out, t)?,
                Event::Deliver { from, to, bytes } => self.deliver(from, to, bytes, t)?,
                Event::AddressChange => self.address_change(t)?,
            }
        }
        Ok(())
    }
}

pub fn frame_source(
    settings: &Settings,
    enc: &EncoderConfig,
) -> Result<Box<dyn FrameSource + Send>, ExperimentError> {
    Ok(match &settings.sender.source_file {
        Some(p) => Box::new(AnnexBFileSource::open(p)?),
        None => Box::new(SyntheticEncoder::new(enc.clone())?),
    })
}

pub fn encoder_config(settings: &Settings) -> EncoderConfig {
    EncoderConfig {
        fps: settings.sender.fps,
        gop_length: settings.sender.gop,
        idr_size: settings.sender.idr_size,
        p_size: settings.sender.p_size,
        ..EncoderConfig::default()
    }
}

pub fn sender_config(settings: &Settings) -> SenderConfig {
    SenderConfig {
        encoder: encoder_config(settings),
        max_payload: settings.sender.max_payload,
        encode_delay: settings.sender.encode_delay,
        payload_delay: settings.sender.payload_delay,
        preroll_capacity: settings.sender.preroll,
        ..SenderConfig::default()
    }
}

pub fn sender_node_config(settings: &Settings) -> SenderNodeConfig {
    let s = &settings.sender;
    SenderNodeConfig {
        pipeline: sender_config(settings),
        stream: s.stream.clone(),
        control_addr: s.control,
        rtp_addr: s.rtp,
        server_control: settings.server.control,
        server_rtp: settings.server.ingest,
        start_at: s.start,
        frame_limit: Some(
            (settings.duration as i128 * i128::from(s.fps) / i128::from(SECOND)) as u64,
        ),
        preroll_at: s.preroll_at,
        sync: SyncConfig::default(),
    }
}

pub fn server_node_config(settings: &Settings) -> Result<ServerNodeConfig, ExperimentError> {
    let v = &settings.server;
    let keepalive = KeepalivePolicy::new(settings.receiver.keepalive, v.keepalive_timeout)
        .map_err(|e| ExperimentError::Invariant(e.to_string()))?;
    let mut relay = RelayConfig::new(settings.sender.stream.clone(), DEFAULT_LIVE_SSRC);
    relay.preroll_ssrc = Some(DEFAULT_PREROLL_SSRC);
    relay.keepalive = keepalive;
    relay.session_seed = v.session_seed;
    Ok(ServerNodeConfig {
        relay,
        control_addr: v.control,
        ingest_addr: v.ingest,
        processing_delay: v.processing_delay,
        fps: settings.sender.fps,
        ts_base: 0,
        preroll_ts_base: 0,
        housekeeping: 100 * MS,
    })
}

pub fn receiver_node_config(settings: &Settings) -> Result<ReceiverNodeConfig, ExperimentError> {
    let r = &settings.receiver;
    let policy =
        PlayoutPolicy::new(r.target_latency, r.playout).map_err(ExperimentError::Invariant)?;
    Ok(ReceiverNodeConfig {
        pipeline: ReceiverConfig {
            fps: settings.sender.fps,
            depay_delay: r.depay_delay,
            decode_delay: r.decode_delay,
            policy,
            ..ReceiverConfig::default()
        },
        stream: settings.sender.stream.clone(),
        control_addr: r.control,
        rtp_addr: r.rtp,
        server_control: settings.server.control,
        start_at: r.start,
        keepalive_interval: r.keepalive,
        sync: SyncConfig::default(),
        monitor: MonitorConfig {
            rtp_silence_timeout: r.silence_timeout,
            ping_interval: r.probe_interval,
            ..MonitorConfig::default()
        },
        reconnect: ReconnectConfig {
            cap: r.recovery_cap,
            ..ReconnectConfig::default()
        },
    })
}

pub fn run(settings: &Settings, seed: u64) -> Result<Run, ExperimentError> {
    run_with(settings, seed, &RunOptions::default())
}

pub fn run_with(settings: &Settings, seed: u64, opts: &RunOptions) -> Result<Run, ExperimentError> {
    // Separate streams so scenario randomness never shifts the packet draws.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5CE7_A810_0000_0000);
    let mut offset = |fixed: Option<Nanos>| {
        fixed.unwrap_or_else(|| rng.random_range(-MAX_CLOCK_OFFSET..=MAX_CLOCK_OFFSET))
    };
    let offsets = [
        offset(settings.sender.clock_offset),
        0,
        offset(settings.receiver.clock_offset),
    ];
    let handovers = handover_schedule(settings, &mut rng);

    let mut emu = Emulator::new(seed, NetworkProfile::ideal())?;
    if opts.trace_netem {
        emu.enable_trace();
    }
    let hs = emu.register_host("sender", settings.sender.control.ip())?;
    let hv = emu.register_host("server", settings.server.control.ip())?;
    let hr = emu.register_host("receiver", settings.receiver.control.ip())?;
    for (a, b) in [
        (settings.sender.rtp.ip(), settings.sender.control.ip()),
        (settings.server.ingest.ip(), settings.server.control.ip()),
        (settings.receiver.rtp.ip(), settings.receiver.control.ip()),
    ] {
        if a != b {
            return Err(ExperimentError::Invariant(format!(
                "control and RTP sockets of a host must share an address: {a} vs {b}"
            )));
        }
    }
    emu.set_link(hs, hv, settings.network.uplink)?;
    emu.set_link(hv, hr, settings.network.downlink)?;
    emu.schedule_handovers(hr, handovers.clone())?;

    let sender_local = |t: Nanos| t - offsets[SENDER];
    let enc = encoder_config(settings);
    let pipeline =
        SenderPipeline::with_source(sender_config(settings), frame_source(settings, &enc)?)?;
    let mut sender = SenderNode::new(sender_node_config(settings), pipeline, sender_local(0));
    sender.sync_client_mut().set_true_offset(offsets[SENDER]);
    let server = ServerNode::new(server_node_config(settings)?, 0)?;
    let mut receiver = ReceiverNode::new(receiver_node_config(settings)?, -offsets[RECEIVER])?;
    receiver
        .sync_client_mut()
        .set_true_offset(offsets[RECEIVER]);

    let mut sim = Sim {
        sched: Scheduler::virtual_at(0),
        emu,
        sender,
        server,
        receiver,
        hosts: [hs, hv, hr],
        offsets,
        timers: [None; 3],
        generations: [0; 3],
        force_drop: opts.force_drop_frames.clone(),
        live_clock: FrameClock::new(0, settings.sender.fps),
        sender_rtp: settings.sender.rtp,
        forced_drops: 0,
    };
    for i in [SENDER, SERVER, RECEIVER] {
        sim.reschedule(i, 0);
    }
    if let Some(at) = sim.emu.next_address_change() {
        sim.sched.schedule(at, Event::AddressChange);
    }
    let end =
        settings.sender.start + MAX_CLOCK_OFFSET + SECOND + settings.duration + settings.drain;
    sim.run_until(end)?;

    let Sim {
        emu,
        sender,
        server,
        receiver,
        forced_drops,
        ..
    } = sim;
    if !sender.is_finished() {
        return Err(ExperimentError::Invariant(format!(
            "sender stopped after {} frames",
            sender.frames_sent()
        )));
    }
    log::info!("forced {forced_drops} uplink drops");
    let frames_sent = sender.frames_sent();
    let sessions_established = receiver.sessions_established();
    let relay = server.stats();
    let (mut traces, mut offsets_log) = sender.into_parts();
    traces.merge(server.into_traces()?)?;
    let (rx_traces, recovery, rx_rows) = receiver.into_parts();
    traces.merge(rx_traces)?;
    traces.finalize();
    offsets_log.extend(rx_rows);
    offsets_log.sort_by(|a, b| (a.at, &a.entity, a.round).cmp(&(b.at, &b.entity, b.round)));

    Ok(Run {
        run_id: run_id(settings, seed),
        seed,
        settings: settings.clone(),
        traces,
        recovery,
        offsets: offsets_log,
        frames_sent,
        relay,
        netem: emu.stats(),
        netem_trace: emu.trace().to_vec(),
        handovers,
        clock_offsets: (offsets[SENDER], offsets[RECEIVER]),
        sessions_established,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(name: &str, secs: i64) -> Settings {
        let mut s = Settings::scenario(name).unwrap();
        s.duration = secs * SECOND;
        s
    }

    #[test]
    fn fog_run_displays_and_conserves() {
        let run = run(&short("fog", 3), 1).unwrap();
        let a = run.live_accounting();
        assert_eq!(a.sent, run.frames_sent);
        assert_eq!(a.sent, 90);
        assert!(a.is_conserved());
        assert!(a.displayed >= 85, "{a:?}");
        assert_eq!(run.relay.sessions_created, 1);
        for t in run.traces.iter() {
            assert!(t.is_monotone(), "{t:?}");
            assert!(t.display_consistent());
        }
    }

    #[test]
    fn same_seed_same_traces() {
        let s = short("fog", 2);
        let a = run(&s, 5).unwrap();
        let b = run(&s, 5).unwrap();
        assert_eq!(a.traces, b.traces);
        assert_eq!(a.offsets, b.offsets);
    }

    #[test]
    fn handover_schedule_shape() {
        let s = Settings::scenario("handover").unwrap();
        let ev = handover_schedule(&s, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(ev.len(), 30);
        assert!(ev
            .iter()
            .all(|e| (100 * MS..=250 * MS).contains(&e.outage_duration)));
        crate::netem::validate_handovers(&ev).unwrap();
    }
}

//! Standalone roles over real UDP on the wall clock.

use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{Context, Result};

use roamstream::config::{Config, Settings};
use roamstream::endpoints::{
    LiveDriver, Node, ReceiverNode, SenderNode, SenderPipeline, ServerNode,
};
use roamstream::experiment::{
    encoder_config, frame_source, receiver_node_config, run_id, sender_config, sender_node_config,
    server_node_config,
};
use roamstream::metrics::{
    write_frames, write_offsets, write_recovery, OffsetRow, TraceStore, RECOVERY_CSV,
};
use roamstream::netem::{NetworkProfile, TimeSource, UdpProxy};
use roamstream::Nanos;

/// Set by Ctrl-C. Installed once per process.
fn stop_flag() -> Result<Arc<AtomicBool>> {
    let stop = Arc::new(AtomicBool::new(false));
    let s = Arc::clone(&stop);
    ctrlc::set_handler(move || s.store(true, Ordering::Relaxed))
        .context("installing signal handler")?;
    Ok(stop)
}

/// Loads `path` and checks the keys `role` cannot run without.
fn load(path: &Path, required: &[(&str, &str)]) -> Result<Settings> {
    let cfg = Config::load(path)?;
    for (section, key) in required {
        cfg.require::<SocketAddr>(section, key)?;
    }
    let mut settings = Settings::scenario("custom")
        .expect("built in")
        .overlay(&cfg)?;
    if settings.name.is_empty() || settings.name == "custom" {
        settings.name = "live".into();
    }
    Ok(settings)
}

fn drive<N: Node>(
    node: &mut N,
    clock: TimeSource,
    deadline: Option<Nanos>,
    mut done: impl FnMut(&N) -> bool,
) -> Result<()>
where
    N::Error: Send + Sync,
{
    let stop = stop_flag()?;
    let mut driver = LiveDriver::bind(node, clock)?;
    let end = deadline.map(|d| driver.now() + d);
    let clock = TimeSource::wall();
    driver.run(node, &stop, |n| {
        done(n) || end.is_some_and(|e| clock.now() >= e)
    })?;
    Ok(())
}

fn write_shards(
    dir: &Path,
    role: &str,
    run: &str,
    traces: &TraceStore,
    offsets: &[OffsetRow],
) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let create = |name: String| -> Result<BufWriter<File>> {
        let p = dir.join(name);
        Ok(BufWriter::new(
            File::create(&p).with_context(|| format!("creating {}", p.display()))?,
        ))
    };
    write_frames(create(format!("frames-{role}.csv"))?, run, traces)?;
    if !offsets.is_empty() {
        write_offsets(create(format!("offsets-{role}.csv"))?, run, offsets)?;
    }
    log::info!("wrote {role} shards to {}", dir.display());
    Ok(())
}

pub fn sender(config: &Path, out_dir: &Path, duration: Option<Nanos>) -> Result<()> {
    let mut settings = load(
        config,
        &[
            ("sender", "control"),
            ("sender", "rtp"),
            ("server", "control"),
            ("server", "ingest"),
        ],
    )?;
    if let Some(d) = duration {
        settings.duration = d;
    }
    let clock = TimeSource::wall();
    let now = clock.now();
    let mut nc = sender_node_config(&settings);
    nc.start_at = now + settings.sender.start;
    nc.preroll_at = nc.preroll_at.map(|p| now + p);
    let enc = encoder_config(&settings);
    let pipeline =
        SenderPipeline::with_source(sender_config(&settings), frame_source(&settings, &enc)?)?;
    let mut node = SenderNode::new(nc, pipeline, now);
    log::info!(
        "sender streaming {:?} to {}",
        settings.sender.stream,
        settings.server.ingest
    );
    drive(&mut node, clock, None, |n| n.is_finished())?;
    log::info!("sender stopped after {} frames", node.frames_sent());
    let (traces, offsets) = node.into_parts();
    write_shards(out_dir, "sender", &run_id(&settings, 0), &traces, &offsets)
}

pub fn server(config: &Path, out_dir: &Path, duration: Option<Nanos>) -> Result<()> {
    let settings = load(config, &[("server", "control"), ("server", "ingest")])?;
    let clock = TimeSource::wall();
    let mut node = ServerNode::new(server_node_config(&settings)?, clock.now())?;
    log::info!(
        "server on {} (control) and {} (ingest)",
        settings.server.control,
        settings.server.ingest
    );
    drive(&mut node, clock, duration, |_| false)?;
    log::info!("server stopped: {:?}", node.stats());
    let traces = node.into_traces()?;
    write_shards(out_dir, "server", &run_id(&settings, 0), &traces, &[])
}

pub fn receiver(config: &Path, out_dir: &Path, duration: Option<Nanos>) -> Result<()> {
    let settings = load(
        config,
        &[
            ("receiver", "control"),
            ("receiver", "rtp"),
            ("server", "control"),
        ],
    )?;
    let clock = TimeSource::wall();
    let now = clock.now();
    let mut nc = receiver_node_config(&settings)?;
    nc.start_at = now + settings.receiver.start;
    let mut node = ReceiverNode::new(nc, now)?;
    log::info!(
        "receiver subscribing to {} via {}",
        settings.sender.stream,
        settings.server.control
    );
    let result = drive(&mut node, clock, duration, |_| false);
    let run = run_id(&settings, 0);
    let (traces, recovery, offsets) = node.into_parts();
    write_shards(out_dir, "receiver", &run, &traces, &offsets)?;
    let p = out_dir.join(RECOVERY_CSV);
    write_recovery(
        BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?),
        &run,
        &recovery,
    )?;
    result
}

pub fn netem(
    routes: &[(SocketAddr, SocketAddr)],
    profile: NetworkProfile,
    seed: u64,
) -> Result<()> {
    let stop = stop_flag()?;
    let mut handles = Vec::new();
    for (i, &(listen, upstream)) in routes.iter().enumerate() {
        let mut proxy = UdpProxy::bind(listen, upstream, profile, seed.wrapping_add(i as u64))
            .with_context(|| format!("binding {listen}"))?;
        log::info!("netem {listen} -> {upstream} with {profile:?}");
        let stop = Arc::clone(&stop);
        handles.push(std::thread::spawn(move || {
            proxy.run(&stop).map(|s| (listen, s))
        }));
    }
    for h in handles {
        let (listen, stats) = h
            .join()
            .map_err(|_| anyhow::anyhow!("proxy thread panicked"))??;
        log::info!("netem {listen}: {stats:?}");
    }
    Ok(())
}

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use roamstream::config::{named_profile, Config, Settings};
use roamstream::experiment;
use roamstream::{report, SECOND};

mod roles;

#[derive(Parser, Debug)]
#[command(
    name = "roamstream",
    version,
    about = "Low-latency live video relay with handover recovery"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stream synthetic video to a server over real UDP.
    Sender(RoleArgs),
    /// Relay a stream to subscribed receivers over real UDP.
    Server(RoleArgs),
    /// Subscribe to a stream, play it out and recover from outages.
    Receiver(RoleArgs),
    /// Run a whole scenario in virtual time and write its artifacts.
    Experiment {
        /// fog, cloud, handover or custom.
        scenario: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        duration_s: Option<f64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Config file applied on top of the scenario.
        #[arg(long)]
        scenario_file: Option<PathBuf>,
    },
    /// Print latency, accounting and recovery tables for an artifact directory.
    Report { dir: PathBuf },
    /// Wall-clock UDP proxy applying a network profile to each route.
    Netem {
        /// LISTEN=UPSTREAM, for example 127.0.0.9:8554=127.0.0.2:8554.
        #[arg(long = "route", required = true, value_parser = parse_route)]
        routes: Vec<(SocketAddr, SocketAddr)>,
        /// fog, lte or ideal.
        #[arg(long, default_value = "fog")]
        profile: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(clap::Args, Debug)]
struct RoleArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Stop after this long. Without it a role runs until interrupted.
    #[arg(long)]
    duration_s: Option<f64>,
}

fn parse_route(s: &str) -> Result<(SocketAddr, SocketAddr), String> {
    let (a, b) = s.split_once('=').ok_or("expected LISTEN=UPSTREAM")?;
    let parse = |x: &str| {
        x.trim()
            .parse::<SocketAddr>()
            .map_err(|e| format!("{x:?}: {e}"))
    };
    Ok((parse(a)?, parse(b)?))
}

fn duration_ns(secs: f64) -> Result<i64> {
    anyhow::ensure!(
        secs.is_finite() && secs > 0.0,
        "--duration-s must be positive"
    );
    Ok((secs * SECOND as f64).round() as i64)
}

fn run_experiment(
    scenario: &str,
    seed: u64,
    duration_s: Option<f64>,
    out_dir: &Path,
    scenario_file: Option<&Path>,
) -> Result<()> {
    let mut settings = Settings::scenario(scenario).with_context(|| {
        format!("unknown scenario {scenario:?}; expected fog, cloud, handover or custom")
    })?;
    if let Some(path) = scenario_file {
        settings = settings.overlay(&Config::load(path)?)?;
    }
    if let Some(d) = duration_s {
        settings.duration = duration_ns(d)?;
    }
    let run = experiment::run(&settings, seed)?;
    run.write_artifacts(out_dir)?;
    let a = run.live_accounting();
    log::info!(
        "{}: sent {} displayed {} dropped {} recoveries {}",
        run.run_id,
        a.sent,
        a.displayed,
        a.drop_late + a.drop_loss + a.drop_need_idr,
        run.recovery.len()
    );
    print!("{}", report::render_dir(out_dir)?);
    Ok(())
}

fn real_main(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sender(a) => roles::sender(
            &a.config,
            &a.out_dir,
            a.duration_s.map(duration_ns).transpose()?,
        ),
        Command::Server(a) => roles::server(
            &a.config,
            &a.out_dir,
            a.duration_s.map(duration_ns).transpose()?,
        ),
        Command::Receiver(a) => roles::receiver(
            &a.config,
            &a.out_dir,
            a.duration_s.map(duration_ns).transpose()?,
        ),
        Command::Experiment {
            scenario,
            seed,
            duration_s,
            out_dir,
            scenario_file,
        } => run_experiment(
            &scenario,
            seed,
            duration_s,
            &out_dir,
            scenario_file.as_deref(),
        ),
        Command::Report { dir } => {
            print!("{}", report::render_dir(&dir)?);
            Ok(())
        }
        Command::Netem {
            routes,
            profile,
            seed,
        } => {
            let p =
                named_profile(&profile).with_context(|| format!("unknown profile {profile:?}"))?;
            roles::netem(&routes, p, seed)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STREAM_LOG", "info")).init();
    match real_main(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

//! Role and scenario configuration.
//!
//! Files are TOML restricted to flat `key = value` pairs in the sections
//! `[sender] [server] [receiver] [network] [handover]`, plus a few top-level
//! keys. Unknown sections and keys are rejected so typos fail loudly.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::endpoints::PlayoutMode;
use crate::netem::NetworkProfile;
use crate::{Nanos, MS, SECOND};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config syntax error: {0}")]
    Syntax(String),
    #[error("unknown config section [{0}]")]
    UnknownSection(String),
    #[error("unknown config key `{key}` in {}", section_label(section))]
    UnknownKey { section: String, key: String },
    #[error("missing config key `{key}` in {}", section_label(section))]
    MissingKey { section: String, key: String },
    #[error("invalid value for `{key}` in {}: {reason}", section_label(section))]
    InvalidValue {
        section: String,
        key: String,
        reason: String,
    },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn section_label(section: &str) -> String {
    if section.is_empty() {
        "top level".into()
    } else {
        format!("[{section}]")
    }
}

const PATH_KEYS: [&str; 4] = ["profile", "delay_ms", "jitter_ms", "loss"];

fn known_keys(section: &str) -> Option<Vec<String>> {
    let fixed: &[&str] = match section {
        "" => &["name", "duration_s", "drain_s"],
        "sender" => &[
            "stream",
            "control",
            "rtp",
            "fps",
            "gop",
            "idr_size",
            "p_size",
            "max_payload",
            "encode_delay_ms",
            "payload_delay_ms",
            "preroll_s",
            "preroll_at_s",
            "start_s",
            "clock_offset_ms",
            "source_file",
        ],
        "server" => &[
            "control",
            "ingest",
            "processing_delay_ms",
            "keepalive_timeout_ms",
            "session_seed",
        ],
        "receiver" => &[
            "control",
            "rtp",
            "depay_delay_ms",
            "decode_delay_ms",
            "target_latency_ms",
            "playout",
            "keepalive_ms",
            "start_s",
            "clock_offset_ms",
            "silence_timeout_ms",
            "probe_interval_ms",
            "recovery_cap_ms",
        ],
        "network" => &[],
        "handover" => &[
            "count",
            "first_at_s",
            "spacing_s",
            "outage_min_ms",
            "outage_max_ms",
        ],
        _ => return None,
    };
    let mut keys: Vec<String> = fixed.iter().map(|s| s.to_string()).collect();
    if section == "network" {
        for prefix in ["", "uplink_", "downlink_"] {
            keys.extend(PATH_KEYS.iter().map(|k| format!("{prefix}{k}")));
        }
    }
    Some(keys)
}

/// A parsed, key-checked config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    top: Table,
    sections: Table,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        let mut cfg = Config::default();
        for (name, value) in table {
            match value {
                Value::Table(t) => {
                    let known = known_keys(&name)
                        .filter(|_| !name.is_empty())
                        .ok_or_else(|| ConfigError::UnknownSection(name.clone()))?;
                    for (k, v) in &t {
                        if !known.contains(k) {
                            return Err(ConfigError::UnknownKey {
                                section: name,
                                key: k.clone(),
                            });
                        }
                        if v.is_table() || v.is_array() {
                            return Err(invalid(&name, k, "expected a scalar value"));
                        }
                    }
                    cfg.sections.insert(name, Value::Table(t));
                }
                v => {
                    if !known_keys("").expect("top level").contains(&name) {
                        return Err(ConfigError::UnknownKey {
                            section: String::new(),
                            key: name,
                        });
                    }
                    cfg.top.insert(name, v);
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    fn raw(&self, section: &str, key: &str) -> Option<&Value> {
        if section.is_empty() {
            return self.top.get(key);
        }
        self.sections.get(section)?.as_table()?.get(key)
    }

    pub fn get<T: FromConfig>(&self, section: &str, key: &str) -> Result<Option<T>, ConfigError> {
        self.raw(section, key)
            .map(|v| T::from_config(v).map_err(|reason| invalid(section, key, &reason)))
            .transpose()
    }

    pub fn require<T: FromConfig>(&self, section: &str, key: &str) -> Result<T, ConfigError> {
        self.get(section, key)?
            .ok_or_else(|| ConfigError::MissingKey {
                section: section.into(),
                key: key.into(),
            })
    }

    pub fn get_or<T: FromConfig>(
        &self,
        section: &str,
        key: &str,
        default: T,
    ) -> Result<T, ConfigError> {
        Ok(self.get(section, key)?.unwrap_or(default))
    }

    /// A duration key given in `unit`-sized floats, as nanoseconds.
    pub fn duration(
        &self,
        section: &str,
        key: &str,
        unit: Nanos,
    ) -> Result<Option<Nanos>, ConfigError> {
        let Some(v) = self.get::<f64>(section, key)? else {
            return Ok(None);
        };
        if !v.is_finite() || v < 0.0 {
            return Err(invalid(section, key, "expected a non-negative duration"));
        }
        Ok(Some((v * unit as f64).round() as Nanos))
    }

    fn duration_or(
        &self,
        section: &str,
        key: &str,
        unit: Nanos,
        default: Nanos,
    ) -> Result<Nanos, ConfigError> {
        Ok(self.duration(section, key, unit)?.unwrap_or(default))
    }

    /// Signed millisecond key, as nanoseconds.
    fn signed_ms(&self, section: &str, key: &str) -> Result<Option<Nanos>, ConfigError> {
        Ok(self
            .get::<f64>(section, key)?
            .map(|v| (v * MS as f64).round() as Nanos))
    }
}

fn invalid(section: &str, key: &str, reason: &str) -> ConfigError {
    ConfigError::InvalidValue {
        section: section.into(),
        key: key.into(),
        reason: reason.into(),
    }
}

pub trait FromConfig: Sized {
    fn from_config(v: &Value) -> Result<Self, String>;
}

impl FromConfig for String {
    fn from_config(v: &Value) -> Result<Self, String> {
        v.as_str()
            .map(str::to_owned)
            .ok_or_else(|| "expected a string".into())
    }
}

impl FromConfig for f64 {
    fn from_config(v: &Value) -> Result<Self, String> {
        match v {
            Value::Float(f) => Ok(*f),
            Value::Integer(i) => Ok(*i as f64),
            _ => Err("expected a number".into()),
        }
    }
}

impl FromConfig for u64 {
    fn from_config(v: &Value) -> Result<Self, String> {
        let i = v.as_integer().ok_or("expected an integer")?;
        u64::try_from(i).map_err(|_| "expected a non-negative integer".into())
    }
}

impl FromConfig for u32 {
    fn from_config(v: &Value) -> Result<Self, String> {
        u32::try_from(u64::from_config(v)?).map_err(|_| "integer out of range".into())
    }
}

impl FromConfig for usize {
    fn from_config(v: &Value) -> Result<Self, String> {
        usize::try_from(u64::from_config(v)?).map_err(|_| "integer out of range".into())
    }
}

impl FromConfig for SocketAddr {
    fn from_config(v: &Value) -> Result<Self, String> {
        let s = v
            .as_str()
            .ok_or("expected an address string such as \"127.0.0.1:8554\"")?;
        s.parse().map_err(|e| format!("{s:?}: {e}"))
    }
}

impl FromConfig for PlayoutMode {
    fn from_config(v: &Value) -> Result<Self, String> {
        match v.as_str() {
            Some("deadline") => Ok(PlayoutMode::Deadline),
            Some("low_latency") => Ok(PlayoutMode::LowLatency),
            _ => Err("expected \"deadline\" or \"low_latency\"".into()),
        }
    }
}

pub fn named_profile(name: &str) -> Option<NetworkProfile> {
    match name {
        "fog" => Some(NetworkProfile::fog()),
        "lte" => Some(NetworkProfile::lte()),
        "ideal" => Some(NetworkProfile::ideal()),
        _ => None,
    }
}

pub const DEFAULT_STREAM: &str = "live";

#[derive(Clone, Debug, PartialEq)]
pub struct SenderSettings {
    pub stream: String,
    pub control: SocketAddr,
    pub rtp: SocketAddr,
    pub fps: u32,
    pub gop: u32,
    pub idr_size: usize,
    pub p_size: usize,
    pub max_payload: usize,
    pub encode_delay: Nanos,
    pub payload_delay: Nanos,
    pub preroll: Nanos,
    pub preroll_at: Option<Nanos>,
    pub start: Nanos,
    pub clock_offset: Option<Nanos>,
    pub source_file: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServerSettings {
    pub control: SocketAddr,
    pub ingest: SocketAddr,
    pub processing_delay: Nanos,
    pub keepalive_timeout: Nanos,
    pub session_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReceiverSettings {
    pub control: SocketAddr,
    pub rtp: SocketAddr,
    pub depay_delay: Nanos,
    pub decode_delay: Nanos,
    pub target_latency: Nanos,
    pub playout: PlayoutMode,
    pub keepalive: Nanos,
    pub start: Nanos,
    pub clock_offset: Option<Nanos>,
    pub silence_timeout: Nanos,
    pub probe_interval: Nanos,
    pub recovery_cap: Nanos,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetworkSettings {
    /// Sender to server, both directions.
    pub uplink: NetworkProfile,
    /// Server to receiver, both directions.
    pub downlink: NetworkProfile,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HandoverSettings {
    pub count: u32,
    pub first_at: Nanos,
    pub spacing: Nanos,
    pub outage_min: Nanos,
    pub outage_max: Nanos,
}

impl Default for HandoverSettings {
    fn default() -> Self {
        Self {
            count: 30,
            first_at: 3 * SECOND,
            spacing: 3 * SECOND,
            outage_min: 100 * MS,
            outage_max: 250 * MS,
        }
    }
}

/// Every tunable of a run, with defaults for whatever a file leaves out.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub name: String,
    pub duration: Nanos,
    /// Extra time after the last frame for in-flight traffic to land.
    pub drain: Nanos,
    pub sender: SenderSettings,
    pub server: ServerSettings,
    pub receiver: ReceiverSettings,
    pub network: NetworkSettings,
    pub handover: Option<HandoverSettings>,
}

fn addr(s: &str) -> SocketAddr {
    s.parse().expect("static address")
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            duration: 60 * SECOND,
            drain: 2 * SECOND,
            sender: SenderSettings {
                stream: DEFAULT_STREAM.into(),
                control: addr("10.0.0.1:7001"),
                rtp: addr("10.0.0.1:5006"),
                fps: 30,
                gop: 30,
                idr_size: 20_000,
                p_size: 4_000,
                max_payload: crate::rtp::DEFAULT_MAX_PAYLOAD,
                encode_delay: 0,
                payload_delay: 0,
                preroll: crate::media::DEFAULT_PREROLL,
                preroll_at: None,
                start: SECOND,
                clock_offset: None,
                source_file: None,
            },
            server: ServerSettings {
                control: addr("10.0.0.2:8554"),
                ingest: addr("10.0.0.2:5004"),
                processing_delay: 0,
                keepalive_timeout: crate::control::DEFAULT_SESSION_TIMEOUT,
                session_seed: 0,
            },
            receiver: ReceiverSettings {
                control: addr("10.0.0.3:7000"),
                rtp: addr("10.0.0.3:6000"),
                depay_delay: 0,
                decode_delay: 0,
                target_latency: crate::endpoints::DEFAULT_TARGET_LATENCY,
                playout: PlayoutMode::Deadline,
                keepalive: crate::control::DEFAULT_KEEPALIVE_INTERVAL,
                start: 500 * MS,
                clock_offset: None,
                silence_timeout: 100 * MS,
                probe_interval: 20 * MS,
                recovery_cap: 10 * SECOND,
            },
            network: NetworkSettings {
                uplink: NetworkProfile::ideal(),
                downlink: NetworkProfile::ideal(),
            },
            handover: None,
        }
    }
}

impl Settings {
    /// Built-in scenarios: `fog`, `cloud`, `handover` and the all-default
    /// `custom`.
    pub fn scenario(name: &str) -> Option<Self> {
        let mut s = Settings::default();
        match name {
            "custom" => return Some(s),
            "fog" | "cloud" | "handover" => {}
            _ => return None,
        }
        s.name = name.into();
        s.sender.encode_delay = 25 * MS;
        s.sender.payload_delay = 2 * MS;
        s.server.processing_delay = MS;
        s.receiver.depay_delay = MS;
        s.receiver.decode_delay = 10 * MS;
        s.receiver.playout = PlayoutMode::LowLatency;
        let profile = if name == "cloud" {
            NetworkProfile::lte()
        } else {
            NetworkProfile::fog()
        };
        s.network = NetworkSettings {
            uplink: profile,
            downlink: profile,
        };
        if name == "handover" {
            let h = HandoverSettings::default();
            s.handover = Some(h);
            s.duration = h.first_at + h.spacing * Nanos::from(h.count) + SECOND;
        }
        Some(s)
    }

    /// Applies every key present in `cfg` on top of `self`.
    pub fn overlay(mut self, cfg: &Config) -> Result<Self, ConfigError> {
        if let Some(n) = cfg.get::<String>("", "name")? {
            self.name = n;
        }
        self.duration = cfg.duration_or("", "duration_s", SECOND, self.duration)?;
        self.drain = cfg.duration_or("", "drain_s", SECOND, self.drain)?;

        let s = &mut self.sender;
        let sec = "sender";
        s.stream = cfg.get_or(sec, "stream", s.stream.clone())?;
        s.control = cfg.get_or(sec, "control", s.control)?;
        s.rtp = cfg.get_or(sec, "rtp", s.rtp)?;
        s.fps = cfg.get_or(sec, "fps", s.fps)?;
        s.gop = cfg.get_or(sec, "gop", s.gop)?;
        s.idr_size = cfg.get_or(sec, "idr_size", s.idr_size)?;
        s.p_size = cfg.get_or(sec, "p_size", s.p_size)?;
        s.max_payload = cfg.get_or(sec, "max_payload", s.max_payload)?;
        s.encode_delay = cfg.duration_or(sec, "encode_delay_ms", MS, s.encode_delay)?;
        s.payload_delay = cfg.duration_or(sec, "payload_delay_ms", MS, s.payload_delay)?;
        s.preroll = cfg.duration_or(sec, "preroll_s", SECOND, s.preroll)?;
        s.preroll_at = cfg.duration(sec, "preroll_at_s", SECOND)?.or(s.preroll_at);
        s.start = cfg.duration_or(sec, "start_s", SECOND, s.start)?;
        s.clock_offset = cfg.signed_ms(sec, "clock_offset_ms")?.or(s.clock_offset);
        s.source_file = cfg
            .get::<String>(sec, "source_file")?
            .map(PathBuf::from)
            .or(s.source_file.take());

        let v = &mut self.server;
        let sec = "server";
        v.control = cfg.get_or(sec, "control", v.control)?;
        v.ingest = cfg.get_or(sec, "ingest", v.ingest)?;
        v.processing_delay = cfg.duration_or(sec, "processing_delay_ms", MS, v.processing_delay)?;
        v.keepalive_timeout =
            cfg.duration_or(sec, "keepalive_timeout_ms", MS, v.keepalive_timeout)?;
        v.session_seed = cfg.get_or(sec, "session_seed", v.session_seed)?;

        let r = &mut self.receiver;
        let sec = "receiver";
        r.control = cfg.get_or(sec, "control", r.control)?;
        r.rtp = cfg.get_or(sec, "rtp", r.rtp)?;
        r.depay_delay = cfg.duration_or(sec, "depay_delay_ms", MS, r.depay_delay)?;
        r.decode_delay = cfg.duration_or(sec, "decode_delay_ms", MS, r.decode_delay)?;
        r.target_latency = cfg.duration_or(sec, "target_latency_ms", MS, r.target_latency)?;
        r.playout = cfg.get_or(sec, "playout", r.playout)?;
        r.keepalive = cfg.duration_or(sec, "keepalive_ms", MS, r.keepalive)?;
        r.start = cfg.duration_or(sec, "start_s", SECOND, r.start)?;
        r.clock_offset = cfg.signed_ms(sec, "clock_offset_ms")?.or(r.clock_offset);
        r.silence_timeout = cfg.duration_or(sec, "silence_timeout_ms", MS, r.silence_timeout)?;
        r.probe_interval = cfg.duration_or(sec, "probe_interval_ms", MS, r.probe_interval)?;
        r.recovery_cap = cfg.duration_or(sec, "recovery_cap_ms", MS, r.recovery_cap)?;

        let base = path_profile(cfg, "", None)?;
        self.network.uplink = path_profile(cfg, "uplink_", base)?.unwrap_or(self.network.uplink);
        self.network.downlink =
            path_profile(cfg, "downlink_", base)?.unwrap_or(self.network.downlink);

        if cfg.has_section("handover") {
            let mut h = self.handover.unwrap_or_default();
            let sec = "handover";
            h.count = cfg.get_or(sec, "count", h.count)?;
            h.first_at = cfg.duration_or(sec, "first_at_s", SECOND, h.first_at)?;
            h.spacing = cfg.duration_or(sec, "spacing_s", SECOND, h.spacing)?;
            h.outage_min = cfg.duration_or(sec, "outage_min_ms", MS, h.outage_min)?;
            h.outage_max = cfg.duration_or(sec, "outage_max_ms", MS, h.outage_max)?;
            if h.outage_min > h.outage_max {
                return Err(invalid(sec, "outage_min_ms", "exceeds outage_max_ms"));
            }
            if h.count > 0 && h.outage_max >= h.spacing {
                return Err(invalid(sec, "spacing_s", "must exceed the longest outage"));
            }
            self.handover = (h.count > 0).then_some(h);
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.sender.fps == 0 {
            return Err(invalid("sender", "fps", "must be positive"));
        }
        if self.sender.gop == 0 {
            return Err(invalid("sender", "gop", "must be positive"));
        }
        if self.receiver.target_latency == 0 {
            return Err(invalid("receiver", "target_latency_ms", "must be positive"));
        }
        if self.receiver.keepalive == 0 || self.receiver.keepalive >= self.server.keepalive_timeout
        {
            return Err(invalid(
                "receiver",
                "keepalive_ms",
                "must be positive and below the server keepalive timeout",
            ));
        }
        if self.duration == 0 {
            return Err(invalid("", "duration_s", "must be positive"));
        }
        Ok(())
    }
}

/// Reads `{prefix}profile` and its overrides, starting from `base`.
fn path_profile(
    cfg: &Config,
    prefix: &str,
    base: Option<NetworkProfile>,
) -> Result<Option<NetworkProfile>, ConfigError> {
    let sec = "network";
    let key = |k: &str| format!("{prefix}{k}");
    let mut p = match cfg.get::<String>(sec, &key("profile"))? {
        Some(name) => Some(
            named_profile(&name)
                .ok_or_else(|| invalid(sec, &key("profile"), "expected fog, lte or ideal"))?,
        ),
        None => base,
    };
    let delay = cfg.duration(sec, &key("delay_ms"), MS)?;
    let jitter = cfg.duration(sec, &key("jitter_ms"), MS)?;
    let loss = cfg.get::<f64>(sec, &key("loss"))?;
    if delay.is_some() || jitter.is_some() || loss.is_some() {
        let mut q = p.or(base).unwrap_or_else(NetworkProfile::ideal);
        if let Some(d) = delay {
            q = q.with_delay(d);
        }
        if let Some(j) = jitter {
            q = q.with_jitter(j);
        }
        if let Some(l) = loss {
            q = q.with_loss(l);
        }
        q.validate()
            .map_err(|e| invalid(sec, &key("loss"), &e.to_string()))?;
        p = Some(q);
    }
    Ok(p)
}

//! Text grammar of the control protocol.
//!
//! ```text
//! SETUP cam CTRL/1.0\r\n
//! CSeq: 1\r\n
//! Transport: client_port=5004\r\n
//! \r\n
//! ```
//!
//! Responses open with `CTRL/1.0 <code> <reason>`. Known headers are `CSeq`,
//! `Session`, `Transport`, `Timeout-Ms` and the clock-sync stamps `T0`..`T2`;
//! others are ignored. Anything after the blank line is the body.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use super::ControlError;
use crate::Nanos;

pub const PROTOCOL: &str = "CTRL/1.0";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Options,
    Setup,
    Play,
    Teardown,
    Ping,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Options,
        Method::Setup,
        Method::Play,
        Method::Teardown,
        Method::Ping,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Options => "OPTIONS",
            Method::Setup => "SETUP",
            Method::Play => "PLAY",
            Method::Teardown => "TEARDOWN",
            Method::Ping => "PING",
        }
    }
}

impl FromStr for Method {
    type Err = ControlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| ControlError::MalformedMessage(format!("unknown method {s:?}")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Opaque session token handed out by the server.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SessionId(String);

impl SessionId {
    pub fn new(token: impl Into<String>) -> Result<Self, ControlError> {
        let token = token.into();
        let valid = !token.is_empty()
            && token.len() <= 64
            && token
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b"-_.".contains(&b));
        if valid {
            Ok(Self(token))
        } else {
            Err(ControlError::MalformedMessage(format!(
                "bad session token {token:?}"
            )))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transport {
    pub client_rtp_port: u16,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StartLine {
    Request { method: Method, stream: String },
    Response { status: u16, reason: String },
}

/// Clock-sync stamps carried by PING exchanges.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SyncStamps {
    pub t0: Option<Nanos>,
    pub t1: Option<Nanos>,
    pub t2: Option<Nanos>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ControlMessage {
    pub start: StartLine,
    pub cseq: u32,
    pub session: Option<SessionId>,
    pub transport: Option<Transport>,
    pub timeout_ms: Option<u64>,
    pub sync: SyncStamps,
    pub body: Option<String>,
}

pub mod status {
    pub const OK: u16 = 200;
    pub const BAD_REQUEST: u16 = 400;
    pub const NOT_FOUND: u16 = 404;
    pub const SESSION_NOT_FOUND: u16 = 454;
    pub const METHOD_NOT_VALID_IN_STATE: u16 = 455;
    pub const UNSUPPORTED_TRANSPORT: u16 = 461;

    pub fn reason(code: u16) -> &'static str {
        match code {
            OK => "OK",
            BAD_REQUEST => "Bad Request",
            NOT_FOUND => "Not Found",
            SESSION_NOT_FOUND => "Session Not Found",
            METHOD_NOT_VALID_IN_STATE => "Method Not Valid In This State",
            UNSUPPORTED_TRANSPORT => "Unsupported Transport",
            _ => "Unknown",
        }
    }
}

impl ControlMessage {
    pub fn request(method: Method, stream: impl Into<String>, cseq: u32) -> Self {
        Self {
            start: StartLine::Request {
                method,
                stream: stream.into(),
            },
            cseq,
            session: None,
            transport: None,
            timeout_ms: None,
            sync: SyncStamps::default(),
            body: None,
        }
    }

    /// A response echoing `cseq`, with the standard reason phrase.
    pub fn response(status: u16, cseq: u32) -> Self {
        Self {
            start: StartLine::Response {
                status,
                reason: status::reason(status).to_string(),
            },
            cseq,
            session: None,
            transport: None,
            timeout_ms: None,
            sync: SyncStamps::default(),
            body: None,
        }
    }

    pub fn with_session(mut self, session: SessionId) -> Self {
        self.session = Some(session);
        self
    }

    pub fn with_transport(mut self, client_rtp_port: u16) -> Self {
        self.transport = Some(Transport { client_rtp_port });
        self
    }

    pub fn method(&self) -> Option<Method> {
        match self.start {
            StartLine::Request { method, .. } => Some(method),
            StartLine::Response { .. } => None,
        }
    }

    pub fn status(&self) -> Option<u16> {
        match self.start {
            StartLine::Response { status, .. } => Some(status),
            StartLine::Request { .. } => None,
        }
    }

    pub fn is_request(&self) -> bool {
        matches!(self.start, StartLine::Request { .. })
    }

    pub fn render(&self) -> Vec<u8> {
        let mut out = String::with_capacity(128);
        match &self.start {
            StartLine::Request { method, stream } => {
                let _ = write!(out, "{method} {stream} {PROTOCOL}\r\n");
            }
            StartLine::Response { status, reason } => {
                let _ = write!(out, "{PROTOCOL} {status} {reason}\r\n");
            }
        }
        let _ = write!(out, "CSeq: {}\r\n", self.cseq);
        if let Some(s) = &self.session {
            let _ = write!(out, "Session: {s}\r\n");
        }
        if let Some(t) = &self.transport {
            let _ = write!(out, "Transport: client_port={}\r\n", t.client_rtp_port);
        }
        if let Some(ms) = self.timeout_ms {
            let _ = write!(out, "Timeout-Ms: {ms}\r\n");
        }
        for (name, v) in [
            ("T0", self.sync.t0),
            ("T1", self.sync.t1),
            ("T2", self.sync.t2),
        ] {
            if let Some(v) = v {
                let _ = write!(out, "{name}: {v}\r\n");
            }
        }
        out.push_str("\r\n");
        if let Some(body) = &self.body {
            out.push_str(body);
        }
        out.into_bytes()
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, ControlError> {
        let text = std::str::from_utf8(bytes).map_err(|_| malformed("message is not UTF-8"))?;
        let (head, body) = text
            .split_once("\r\n\r\n")
            .ok_or_else(|| malformed("missing blank line after headers"))?;
        if head.split("\r\n").any(|l| l.contains(['\r', '\n'])) {
            return Err(malformed("bare CR or LF in header block"));
        }
        let mut lines = head.split("\r\n");
        let first = lines
            .next()
            .filter(|l| !l.is_empty())
            .ok_or_else(|| malformed("missing first line"))?;
        let start = parse_start_line(first)?;

        let mut cseq = None;
        let mut msg = ControlMessage {
            start,
            cseq: 0,
            session: None,
            transport: None,
            timeout_ms: None,
            sync: SyncStamps::default(),
            body: (!body.is_empty()).then(|| body.to_string()),
        };
        for line in lines {
            let (name, value) = line
                .split_once(':')
                .ok_or_else(|| malformed(format!("header line without colon: {line:?}")))?;
            let value = value.trim();
            match name.trim().to_ascii_lowercase().as_str() {
                "cseq" => set_once(&mut cseq, parse_num(name, value)?, name)?,
                "session" => set_once(&mut msg.session, SessionId::new(value)?, name)?,
                "transport" => set_once(&mut msg.transport, parse_transport(value)?, name)?,
                "timeout-ms" => set_once(&mut msg.timeout_ms, parse_num(name, value)?, name)?,
                "t0" => set_once(&mut msg.sync.t0, parse_num(name, value)?, name)?,
                "t1" => set_once(&mut msg.sync.t1, parse_num(name, value)?, name)?,
                "t2" => set_once(&mut msg.sync.t2, parse_num(name, value)?, name)?,
                _ => {}
            }
        }
        msg.cseq = cseq.ok_or_else(|| malformed("missing CSeq"))?;
        Ok(msg)
    }
}

fn malformed(why: impl Into<String>) -> ControlError {
    ControlError::MalformedMessage(why.into())
}

fn set_once<T>(slot: &mut Option<T>, value: T, name: &str) -> Result<(), ControlError> {
    if slot.replace(value).is_some() {
        return Err(malformed(format!("duplicate {name} header")));
    }
    Ok(())
}

fn parse_num<T: FromStr>(name: &str, value: &str) -> Result<T, ControlError> {
    value
        .parse()
        .map_err(|_| malformed(format!("bad {name} value {value:?}")))
}

fn parse_transport(value: &str) -> Result<Transport, ControlError> {
    value
        .split(';')
        .find_map(|p| p.trim().strip_prefix("client_port="))
        .ok_or_else(|| malformed(format!("transport without client_port: {value:?}")))
        .and_then(|port| parse_num("client_port", port))
        .map(|client_rtp_port| Transport { client_rtp_port })
}

fn is_token(s: &str) -> bool {
    !s.is_empty() && !s.contains(|c: char| c.is_whitespace() || c.is_control())
}

fn parse_start_line(line: &str) -> Result<StartLine, ControlError> {
    if let Some(rest) = line
        .strip_prefix(PROTOCOL)
        .and_then(|r| r.strip_prefix(' '))
    {
        let (code, reason) = rest.split_once(' ').unwrap_or((rest, ""));
        if code.len() != 3 || reason.is_empty() {
            return Err(malformed(format!("bad status line {line:?}")));
        }
        let status = parse_num("status", code)?;
        return Ok(StartLine::Response {
            status,
            reason: reason.to_string(),
        });
    }
    let parts: Vec<&str> = line.split(' ').collect();
    match parts.as_slice() {
        [method, stream, proto] if *proto == PROTOCOL && is_token(stream) => {
            Ok(StartLine::Request {
                method: method.parse()?,
                stream: stream.to_string(),
            })
        }
        _ => Err(malformed(format!("bad request line {line:?}"))),
    }
}

use std::net::IpAddr;

use super::NetemError;
use crate::{Nanos, MS};

/// Characteristics of one directed path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetworkProfile {
    pub one_way_delay: Nanos,
    pub jitter_stddev: Nanos,
    pub loss_rate: f64,
}

impl NetworkProfile {
    pub fn new(
        one_way_delay: Nanos,
        jitter_stddev: Nanos,
        loss_rate: f64,
    ) -> Result<Self, NetemError> {
        let p = Self {
            one_way_delay,
            jitter_stddev,
            loss_rate,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), NetemError> {
        if !(0.0..=1.0).contains(&self.loss_rate) {
            return Err(NetemError::InvalidProfile(format!(
                "loss_rate {} outside [0, 1]",
                self.loss_rate
            )));
        }
        if self.one_way_delay < 0 || self.jitter_stddev < 0 {
            return Err(NetemError::InvalidProfile(
                "delay and jitter must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Zero delay, jitter and loss.
    pub fn ideal() -> Self {
        Self {
            one_way_delay: 0,
            jitter_stddev: 0,
            loss_rate: 0.0,
        }
    }

    /// Edge deployment: about 50 ms across two hops.
    pub fn fog() -> Self {
        Self {
            one_way_delay: 25 * MS,
            jitter_stddev: MS,
            loss_rate: 0.0,
        }
    }

    /// Cellular path to a remote cloud server.
    pub fn lte() -> Self {
        Self {
            one_way_delay: LTE_ONE_WAY,
            jitter_stddev: 4 * MS,
            loss_rate: 0.001,
        }
    }

    pub fn with_jitter(mut self, jitter_stddev: Nanos) -> Self {
        self.jitter_stddev = jitter_stddev;
        self
    }

    pub fn with_loss(mut self, loss_rate: f64) -> Self {
        self.loss_rate = loss_rate;
        self
    }

    pub fn with_delay(mut self, one_way_delay: Nanos) -> Self {
        self.one_way_delay = one_way_delay;
        self
    }
}

/// One-way delay of the built-in LTE profile. A frame completes with its
/// slowest packet, so jitter adds a positive tail per hop. The base delay is
/// set below 37.5 ms so the mean end-to-end penalty over fog stays near 25 ms.
pub const LTE_ONE_WAY: Nanos = 35 * MS;

/// A scripted handover of one host: an outage window followed by an address
/// change.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HandoverEvent {
    pub at: Nanos,
    pub outage_duration: Nanos,
    pub new_address: IpAddr,
}

impl HandoverEvent {
    pub fn end(&self) -> Nanos {
        self.at + self.outage_duration
    }

    pub fn covers(&self, t: Nanos) -> bool {
        self.at <= t && t < self.end()
    }
}

/// Events must be time-ordered, non-overlapping and have non-negative
/// durations.
pub fn validate_handovers(events: &[HandoverEvent]) -> Result<(), NetemError> {
    for e in events {
        if e.outage_duration < 0 {
            return Err(NetemError::InvalidHandover(format!(
                "negative outage at {}",
                e.at
            )));
        }
    }
    for w in events.windows(2) {
        if w[1].at < w[0].end() {
            return Err(NetemError::InvalidHandover(format!(
                "handover at {} overlaps the one at {} (ends {})",
                w[1].at,
                w[0].at,
                w[0].end()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(at_ms: i64, dur_ms: i64) -> HandoverEvent {
        HandoverEvent {
            at: at_ms * MS,
            outage_duration: dur_ms * MS,
            new_address: "10.0.0.9".parse().unwrap(),
        }
    }

    #[test]
    fn profile_bounds() {
        assert!(NetworkProfile::new(0, 0, 1.0).is_ok());
        assert!(NetworkProfile::new(0, 0, 1.5).is_err());
        assert!(NetworkProfile::new(-1, 0, 0.0).is_err());
        assert!(NetworkProfile::fog().validate().is_ok());
        assert!(NetworkProfile::lte().validate().is_ok());
    }

    #[test]
    fn overlapping_handovers_rejected() {
        assert!(validate_handovers(&[ev(1000, 200), ev(1200, 100)]).is_ok());
        assert!(validate_handovers(&[ev(1000, 200), ev(1100, 100)]).is_err());
        assert!(validate_handovers(&[ev(2000, 100), ev(1000, 100)]).is_err());
    }
}

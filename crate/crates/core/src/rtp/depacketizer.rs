use std::collections::{BTreeMap, BTreeSet};

use super::packet::{starts_nal, ts_newer, RtpPacket};
use super::packetizer::FU_A_TYPE;
use crate::media::{NalUnit, PictureHeader};
use crate::Nanos;

/// A frame's worth of depayloaded NAL units.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameAssembly {
    pub ssrc: u32,
    pub rtp_timestamp: u32,
    /// Parsed from the first NAL when present.
    pub picture: Option<PictureHeader>,
    pub nal_units: Vec<NalUnit>,
    pub complete: bool,
    pub loss_detected: bool,
    pub first_seq: u16,
    pub last_seq: u16,
    pub packets: usize,
    pub first_arrival_ts: Nanos,
    pub last_arrival_ts: Nanos,
}

impl FrameAssembly {
    pub fn frame_id(&self) -> Option<u64> {
        self.picture.map(|p| p.frame_id)
    }
}

#[derive(Clone, Debug)]
pub struct DepacketizerConfig {
    /// An incomplete frame is given up once packets of this many distinct
    /// newer frames have arrived.
    pub abandon_after: usize,
    /// Hard cap on buffered packets; the oldest frame is abandoned beyond it.
    pub max_buffered: usize,
}

impl Default for DepacketizerConfig {
    fn default() -> Self {
        Self {
            abandon_after: 2,
            max_buffered: 4096,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DepacketizerStats {
    pub packets: u64,
    pub duplicates: u64,
    pub stale: u64,
    pub frames_complete: u64,
    pub frames_lost: u64,
}

#[derive(Clone, Debug)]
struct Buffered {
    pkt: RtpPacket,
    arrival: Nanos,
}

/// Reorders one stream's packets and emits frames strictly in sequence order.
///
/// Sequence numbers are unwrapped to 64 bits around the highest one seen. A
/// frame is emitted complete once its first packet (the one after the previous
/// frame's marker), its marker packet and everything in between are present.
#[derive(Debug)]
pub struct Depacketizer {
    cfg: DepacketizerConfig,
    packets: BTreeMap<u64, Buffered>,
    highest: Option<u64>,
    next_start: Option<u64>,
    /// Set when `next_start` is a guess rather than the successor of a marker.
    start_uncertain: bool,
    stats: DepacketizerStats,
}

impl Default for Depacketizer {
    fn default() -> Self {
        Self::new(DepacketizerConfig::default())
    }
}

const EXT_ORIGIN: u64 = 1 << 40;

impl Depacketizer {
    pub fn new(cfg: DepacketizerConfig) -> Self {
        Self {
            cfg,
            packets: BTreeMap::new(),
            highest: None,
            next_start: None,
            start_uncertain: true,
            stats: DepacketizerStats::default(),
        }
    }

    pub fn stats(&self) -> &DepacketizerStats {
        &self.stats
    }

    pub fn buffered(&self) -> usize {
        self.packets.len()
    }

    fn extend(&self, seq: u16) -> u64 {
        match self.highest {
            None => EXT_ORIGIN + u64::from(seq),
            Some(h) => {
                let delta = seq.wrapping_sub(h as u16) as i16;
                h.wrapping_add_signed(i64::from(delta))
            }
        }
    }

    /// Feeds one packet; returns every frame that became emittable, oldest
    /// first. Usually zero or one, more when a late packet unblocks a backlog.
    pub fn push(&mut self, pkt: RtpPacket, arrival: Nanos) -> Vec<FrameAssembly> {
        self.stats.packets += 1;
        let ext = self.extend(pkt.seq);
        if let Some(start) = self.next_start {
            if ext < start {
                let rejoin = self.start_uncertain
                    && self
                        .packets
                        .get(&start)
                        .is_some_and(|b| b.pkt.timestamp == pkt.timestamp);
                if !rejoin {
                    self.stats.stale += 1;
                    return Vec::new();
                }
                self.next_start = Some(ext);
            }
        }
        if self.packets.contains_key(&ext) {
            self.stats.duplicates += 1;
            return Vec::new();
        }
        self.highest = Some(self.highest.map_or(ext, |h| h.max(ext)));
        self.packets.insert(ext, Buffered { pkt, arrival });

        let mut out = Vec::new();
        while let Some(asm) = self.try_emit(false) {
            out.push(asm);
        }
        out
    }

    /// Emits everything still buffered as incomplete frames and forgets the
    /// stream position. Used on session changes and at shutdown.
    pub fn flush(&mut self) -> Vec<FrameAssembly> {
        let mut out = Vec::new();
        while let Some(asm) = self.try_emit(true) {
            out.push(asm);
        }
        self.packets.clear();
        self.highest = None;
        self.next_start = None;
        self.start_uncertain = true;
        out
    }

    fn try_emit(&mut self, force: bool) -> Option<FrameAssembly> {
        let (&first_key, _) = self.packets.iter().next()?;
        let start = match self.next_start {
            Some(s) if !self.start_uncertain => s,
            _ => first_key,
        };
        let pending_ts = self.packets[&first_key].pkt.timestamp;

        if let Some(end) = self.complete_range(start, pending_ts) {
            return Some(self.take_frame(start, Some(end), true));
        }

        let newer: BTreeSet<u32> = self
            .packets
            .values()
            .map(|b| b.pkt.timestamp)
            .filter(|&ts| ts_newer(ts, pending_ts))
            .collect();
        if force
            || newer.len() >= self.cfg.abandon_after
            || self.packets.len() > self.cfg.max_buffered
        {
            return Some(self.take_frame(start, None, false));
        }
        None
    }

    /// Returns the marker's extended seq when `[start, marker]` is all present.
    fn complete_range(&self, start: u64, ts: u32) -> Option<u64> {
        let head = self.packets.get(&start)?;
        if head.pkt.timestamp != ts || (self.start_uncertain && !starts_nal(&head.pkt.payload)) {
            return None;
        }
        let mut ext = start;
        loop {
            let b = self.packets.get(&ext)?;
            if b.pkt.timestamp != ts {
                return None;
            }
            if b.pkt.marker {
                return Some(ext);
            }
            ext += 1;
        }
    }

    fn take_frame(&mut self, start: u64, end: Option<u64>, complete: bool) -> FrameAssembly {
        let ts = self
            .packets
            .values()
            .next()
            .expect("non-empty")
            .pkt
            .timestamp;
        let keys: Vec<u64> = match end {
            Some(end) => (start..=end).collect(),
            None => self
                .packets
                .iter()
                .filter(|(_, b)| b.pkt.timestamp == ts)
                .map(|(&k, _)| k)
                .collect(),
        };
        let parts: Vec<Buffered> = keys
            .iter()
            .map(|k| self.packets.remove(k).expect("key present"))
            .collect();

        let marker_ext = keys
            .iter()
            .zip(&parts)
            .find(|(_, b)| b.pkt.marker)
            .map(|(&k, _)| k);
        match marker_ext {
            Some(m) => {
                self.next_start = Some(m + 1);
                self.start_uncertain = false;
            }
            None => {
                let after = keys.last().expect("non-empty") + 1;
                self.next_start = Some(self.packets.keys().next().copied().unwrap_or(after));
                self.start_uncertain = true;
            }
        }

        let (nal_units, malformed) = depayload(parts.iter().map(|b| &b.pkt.payload[..]));
        let complete = complete && !malformed;
        if complete {
            self.stats.frames_complete += 1;
        } else {
            self.stats.frames_lost += 1;
        }
        let picture = nal_units
            .first()
            .and_then(|n: &NalUnit| PictureHeader::decode(&n.payload));
        FrameAssembly {
            ssrc: parts[0].pkt.ssrc,
            rtp_timestamp: ts,
            picture,
            nal_units,
            complete,
            loss_detected: !complete,
            first_seq: parts[0].pkt.seq,
            last_seq: parts[parts.len() - 1].pkt.seq,
            packets: parts.len(),
            first_arrival_ts: parts.iter().map(|b| b.arrival).min().expect("non-empty"),
            last_arrival_ts: parts.iter().map(|b| b.arrival).max().expect("non-empty"),
        }
    }
}

/// Rebuilds NAL units from consecutive payloads. The flag reports any
/// structural problem: unsupported packet types, orphan or unterminated
/// FU-A fragments.
fn depayload<'a>(payloads: impl Iterator<Item = &'a [u8]>) -> (Vec<NalUnit>, bool) {
    let mut nals = Vec::new();
    let mut partial: Option<NalUnit> = None;
    let mut malformed = false;
    for p in payloads {
        let Some(&indicator) = p.first() else {
            malformed = true;
            continue;
        };
        match indicator & 0x1f {
            1..=23 => {
                if partial.take().is_some() {
                    malformed = true;
                }
                nals.push(NalUnit::new(indicator, p[1..].to_vec()));
            }
            FU_A_TYPE => {
                let Some(&fu) = p.get(1) else {
                    malformed = true;
                    continue;
                };
                let (start, end) = (fu & 0x80 != 0, fu & 0x40 != 0);
                if start {
                    if partial.is_some() {
                        malformed = true;
                    }
                    partial = Some(NalUnit::new((indicator & 0xe0) | (fu & 0x1f), Vec::new()));
                }
                match partial.as_mut() {
                    Some(nal) => nal.payload.extend_from_slice(&p[2..]),
                    None => {
                        malformed = true;
                        continue;
                    }
                }
                if end {
                    nals.push(partial.take().expect("just extended"));
                }
            }
            _ => malformed = true,
        }
    }
    if partial.is_some() {
        malformed = true;
    }
    (nals, malformed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use bytes::Bytes;

    fn pkt(seq: u16, ts: u32, marker: bool) -> RtpPacket {
        RtpPacket {
            marker,
            payload_type: 96,
            seq,
            timestamp: ts,
            ssrc: 7,
            payload: Bytes::from(vec![0x41, seq as u8]),
        }
    }

    #[test]
    fn contiguous_run_completes() {
        let mut d = Depacketizer::default();
        assert!(d.push(pkt(5, 100, false), 0).is_empty());
        assert!(d.push(pkt(6, 100, false), 1).is_empty());
        let out = d.push(pkt(7, 100, true), 2);
        assert_eq!(out.len(), 1);
        assert!(out[0].complete && !out[0].loss_detected);
        assert_eq!(out[0].nal_units.len(), 3);
        assert_eq!((out[0].first_arrival_ts, out[0].last_arrival_ts), (0, 2));
    }

    #[test]
    fn gap_then_newer_frame_reports_loss() {
        let mut d = Depacketizer::new(DepacketizerConfig {
            abandon_after: 1,
            ..Default::default()
        });
        d.push(pkt(5, 100, false), 0);
        d.push(pkt(7, 100, true), 0);
        let out = d.push(pkt(8, 200, false), 0);
        assert_eq!(out.len(), 1);
        assert!(out[0].loss_detected && !out[0].complete);
        assert_eq!(out[0].packets, 2);
    }

    #[test]
    fn default_waits_two_frames_before_abandoning() {
        let mut d = Depacketizer::default();
        d.push(pkt(5, 100, false), 0);
        d.push(pkt(7, 100, true), 0);
        assert!(d.push(pkt(8, 200, true), 0).is_empty());
        // The late packet still completes the frame, which releases frame 200.
        let out = d.push(pkt(6, 100, false), 0);
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|a| a.complete));

        // Seq 9 is missing: it may belong to ts 300 or to ts 400, so frame
        // 400 is only settled (as lost) once two newer frames show up.
        d.push(pkt(10, 400, true), 0);
        assert!(d.push(pkt(11, 500, true), 0).is_empty());
        let out = d.push(pkt(12, 600, true), 0);
        assert_eq!(out.len(), 3);
        assert!(out[0].loss_detected);
        assert_eq!(out[0].rtp_timestamp, 400);
        assert!(out[1].complete && out[2].complete);
    }

    #[test]
    fn seq_wraparound_is_consecutive() {
        let mut d = Depacketizer::default();
        d.push(pkt(65534, 1, true), 0);
        d.push(pkt(65535, 2, false), 0);
        let out = d.push(pkt(0, 2, true), 0);
        assert_eq!(out.len(), 1);
        assert!(out[0].complete);
        assert_eq!((out[0].first_seq, out[0].last_seq), (65535, 0));
    }

    #[test]
    fn duplicates_and_stale_are_ignored() {
        let mut d = Depacketizer::default();
        d.push(pkt(1, 10, false), 0);
        assert!(d.push(pkt(1, 10, false), 0).is_empty());
        assert_eq!(d.push(pkt(2, 10, true), 0).len(), 1);
        assert!(d.push(pkt(2, 10, true), 0).is_empty());
        assert_eq!(d.stats().duplicates, 1);
        assert_eq!(d.stats().stale, 1);
    }

    #[test]
    fn orphan_fragment_is_loss() {
        let mut d = Depacketizer::default();
        d.push(pkt(1, 10, true), 0);
        let mut frag = pkt(2, 20, true);
        frag.payload = Bytes::from_static(&[0x7c, 0x45, 1, 2]); // end without start
                                                                // Start is known from the previous marker, so the frame "completes"
                                                                // structurally but fails depayloading.
        let out = d.push(frag, 0);
        assert_eq!(out.len(), 1);
        assert!(out[0].loss_detected && !out[0].complete);
    }

    #[test]
    fn flush_drains_everything() {
        let mut d = Depacketizer::default();
        d.push(pkt(1, 10, false), 0);
        d.push(pkt(3, 20, false), 0);
        let out = d.flush();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|a| a.loss_detected));
        assert_eq!(d.buffered(), 0);
    }

    #[test]
    fn reordered_first_frame_rejoins() {
        let mut d = Depacketizer::default();
        let mut b = pkt(11, 10, true);
        b.payload = Bytes::from_static(&[0x7c, 0x45, 2]);
        let mut a = pkt(10, 10, false);
        a.payload = Bytes::from_static(&[0x7c, 0x85, 1]);
        assert!(d.push(b, 0).is_empty());
        let out = d.push(a, 1);
        assert_eq!(out.len(), 1);
        assert!(out[0].complete);
        assert_eq!(out[0].nal_units[0].payload, vec![1, 2]);
    }
}

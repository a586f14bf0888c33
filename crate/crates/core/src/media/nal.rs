//! NAL units and the Annex-B byte-stream framing.

use super::MediaError;

pub const NAL_TYPE_NON_IDR: u8 = 1;
pub const NAL_TYPE_IDR: u8 = 5;

const START_CODE: [u8; 4] = [0, 0, 0, 1];

/// One Network Abstraction Layer unit: a header byte followed by its payload.
///
/// The payload is carried in its escaped (emulation-prevented) form, the same
/// bytes that travel inside RTP. It must not contain `00 00 00`, `00 00 01`
/// or `00 00 02`, and must not end in `00`, or Annex-B framing would be
/// ambiguous. See [`NalUnit::is_framable`].
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NalUnit {
    pub header: u8,
    pub payload: Vec<u8>,
}

impl NalUnit {
    pub fn new(header: u8, payload: Vec<u8>) -> Self {
        Self { header, payload }
    }

    /// Builds a header byte from its three fields.
    pub fn header_byte(nal_ref_idc: u8, nal_unit_type: u8) -> u8 {
        ((nal_ref_idc & 0x03) << 5) | (nal_unit_type & 0x1f)
    }

    pub fn forbidden_zero_bit(&self) -> bool {
        self.header & 0x80 != 0
    }

    pub fn nal_ref_idc(&self) -> u8 {
        (self.header >> 5) & 0x03
    }

    pub fn nal_unit_type(&self) -> u8 {
        self.header & 0x1f
    }

    pub fn is_idr(&self) -> bool {
        self.nal_unit_type() == NAL_TYPE_IDR
    }

    /// Size on the wire inside RTP: header byte plus payload.
    pub fn len(&self) -> usize {
        1 + self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// True when the unit can be written into an Annex-B stream and read back
    /// unchanged.
    pub fn is_framable(&self) -> bool {
        if self.header == 0 || self.payload.last() == Some(&0) {
            return false;
        }
        // The header byte participates in the scan: a zero header is rejected
        // above, so a start-code emulation can only sit inside the payload.
        !self
            .payload
            .windows(3)
            .any(|w| w[0] == 0 && w[1] == 0 && w[2] <= 2)
    }
}

/// Inserts emulation-prevention bytes (`00 00 0x` → `00 00 03 0x` for x ≤ 3)
/// so that arbitrary bytes can be carried as a NAL payload.
pub fn escape_rbsp(raw: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(raw.len() + raw.len() / 64);
    let mut zeros = 0usize;
    for &b in raw {
        if zeros >= 2 && b <= 3 {
            out.push(3);
            zeros = 0;
        }
        out.push(b);
        zeros = if b == 0 { zeros + 1 } else { 0 };
    }
    if out.last() == Some(&0) {
        out.push(3);
    }
    out
}

/// Serializes NAL units with 4-byte start codes everywhere.
pub fn serialize_annex_b(nals: &[NalUnit]) -> Vec<u8> {
    let total: usize = nals.iter().map(|n| n.len() + START_CODE.len()).sum();
    let mut out = Vec::with_capacity(total);
    for nal in nals {
        out.extend_from_slice(&START_CODE);
        out.push(nal.header);
        out.extend_from_slice(&nal.payload);
    }
    out
}

/// Returns the length of a start code beginning at `pos`, if any.
fn start_code_at(data: &[u8], pos: usize) -> Option<usize> {
    let rest = &data[pos..];
    if rest.starts_with(&[0, 0, 0, 1]) {
        Some(4)
    } else if rest.starts_with(&[0, 0, 1]) {
        Some(3)
    } else {
        None
    }
}

/// Splits an Annex-B byte stream into NAL units.
///
/// The stream must open with a 3- or 4-byte start code. Zero bytes directly in
/// front of a start code belong to the start code, not to the preceding unit.
pub fn parse_annex_b(bitstream: &[u8]) -> Result<Vec<NalUnit>, MediaError> {
    let lead = match (bitstream.len() >= 3).then(|| start_code_at(bitstream, 0)) {
        Some(Some(n)) => n,
        _ => {
            return Err(MediaError::MalformedBitstream(
                "stream does not open with a start code".into(),
            ))
        }
    };

    let mut nals = Vec::new();
    let mut unit_start = lead;
    let mut i = lead;
    while i + 3 <= bitstream.len() {
        if bitstream[i] == 0 && bitstream[i + 1] == 0 && bitstream[i + 2] == 1 {
            let mut unit_end = i;
            while unit_end > unit_start && bitstream[unit_end - 1] == 0 {
                unit_end -= 1;
            }
            push_unit(&mut nals, &bitstream[unit_start..unit_end], unit_start)?;
            i += 3;
            unit_start = i;
        } else {
            i += 1;
        }
    }
    push_unit(&mut nals, &bitstream[unit_start..], unit_start)?;
    Ok(nals)
}

fn push_unit(nals: &mut Vec<NalUnit>, bytes: &[u8], offset: usize) -> Result<(), MediaError> {
    match bytes.split_first() {
        Some((&header, payload)) => {
            nals.push(NalUnit::new(header, payload.to_vec()));
            Ok(())
        }
        None => Err(MediaError::MalformedBitstream(format!(
            "zero-length NAL unit at byte {offset}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn splits_mixed_start_codes() {
        let data = [0, 0, 0, 1, 0x65, 0xAA, 0xBB, 0, 0, 1, 0x41, 0xCC];
        let nals = parse_annex_b(&data).unwrap();
        assert_eq!(
            nals,
            vec![
                NalUnit::new(0x65, vec![0xAA, 0xBB]),
                NalUnit::new(0x41, vec![0xCC]),
            ]
        );
    }

    #[test]
    fn rejects_empty_and_unframed_input() {
        assert!(parse_annex_b(&[]).is_err());
        assert!(parse_annex_b(&[0x65, 0x01, 0x02]).is_err());
        assert!(parse_annex_b(&[0, 0]).is_err());
    }

    #[test]
    fn rejects_zero_length_units() {
        // Two start codes back to back.
        assert!(parse_annex_b(&[0, 0, 1, 0, 0, 1, 0x41, 0x01]).is_err());
        // Trailing start code.
        assert!(parse_annex_b(&[0, 0, 1, 0x41, 0x01, 0, 0, 0, 1]).is_err());
        // Start code alone.
        assert!(parse_annex_b(&[0, 0, 0, 1]).is_err());
    }

    #[test]
    fn trailing_zeros_belong_to_next_start_code() {
        let data = [0, 0, 1, 0x41, 0x07, 0, 0, 0, 0, 1, 0x41, 0x08];
        let nals = parse_annex_b(&data).unwrap();
        assert_eq!(nals[0].payload, vec![0x07]);
        assert_eq!(nals[1].payload, vec![0x08]);
    }

    #[test]
    fn canonical_form_uses_four_byte_codes() {
        let data = [0, 0, 1, 0x65, 0xAA, 0, 0, 1, 0x41, 0xCC];
        let nals = parse_annex_b(&data).unwrap();
        assert_eq!(
            serialize_annex_b(&nals),
            vec![0, 0, 0, 1, 0x65, 0xAA, 0, 0, 0, 1, 0x41, 0xCC]
        );
    }

    #[test]
    fn header_fields() {
        let nal = NalUnit::new(0x65, vec![1]);
        assert!(!nal.forbidden_zero_bit());
        assert_eq!(nal.nal_ref_idc(), 3);
        assert_eq!(nal.nal_unit_type(), NAL_TYPE_IDR);
        assert_eq!(NalUnit::header_byte(2, 1), 0x41);
    }

    #[test]
    fn escaping_removes_start_code_emulation() {
        let raw = [0, 0, 1, 0, 0, 0, 0, 0, 2, 9, 0, 0];
        let nal = NalUnit::new(0x41, escape_rbsp(&raw));
        assert!(nal.is_framable());
        assert_eq!(
            parse_annex_b(&serialize_annex_b(std::slice::from_ref(&nal))).unwrap(),
            vec![nal]
        );
    }

    fn framable_nal() -> impl Strategy<Value = NalUnit> {
        (
            0u8..4,
            prop_oneof![Just(1u8), Just(5u8), 1u8..24],
            proptest::collection::vec(any::<u8>(), 1..300),
        )
            .prop_map(|(nri, ty, raw)| {
                NalUnit::new(NalUnit::header_byte(nri, ty), escape_rbsp(&raw))
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn serialize_then_parse_is_identity(nals in proptest::collection::vec(framable_nal(), 1..12)) {
            prop_assert!(nals.iter().all(NalUnit::is_framable));
            let bytes = serialize_annex_b(&nals);
            prop_assert_eq!(parse_annex_b(&bytes).unwrap(), nals);
        }

        #[test]
        fn parse_never_panics(data in proptest::collection::vec(any::<u8>(), 0..200)) {
            let _ = parse_annex_b(&data);
        }
    }
}

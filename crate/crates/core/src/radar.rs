//! Binary framing for the vital-sign radar's serial stream.
//!
//! Frame layout (17 bytes, little endian):
//!
//! ```text
//! AA 55 | 01 | 0C | device_ts u32 | hr u16 | rr u16 | distance u16 | flags | 00 | checksum
//! ```
//!
//! `hr` and `rr` are deci-units (72.0 bpm = 720). `flags` bit 0 is motion and
//! bit 1 is presence. The checksum is the sum of bytes from the version byte
//! through the reserved byte, mod 256.

use crate::error::{Error, Result};
use crate::model::RadarSample;

pub const SYNC: [u8; 2] = [0xAA, 0x55];
pub const VERSION: u8 = 0x01;
pub const PAYLOAD_LEN: u8 = 0x0C;
pub const FRAME_LEN: usize = 17;

const FLAG_MOTION: u8 = 0b01;
const FLAG_PRESENCE: u8 = 0b10;

pub type RadarFrame = RadarSample;

fn to_deci(name: &str, value: f64) -> Result<u16> {
    let deci = (value * 10.0).round();
    if !value.is_finite() || !(0.0..=f64::from(u16::MAX)).contains(&deci) {
        return Err(Error::Validation(format!("{name} = {value} not representable as u16 deci-units")));
    }
    Ok(deci as u16)
}

fn checksum(bytes: &[u8]) -> u8 {
    bytes.iter().fold(0u8, |acc, b| acc.wrapping_add(*b))
}

pub fn encode_frame(frame: &RadarFrame) -> Result<[u8; FRAME_LEN]> {
    let hr = to_deci("hr_bpm", frame.hr_bpm)?;
    let rr = to_deci("rr_bpm", frame.rr_bpm)?;
    let d = frame.distance_mm;
    if !d.is_finite() || d.fract() != 0.0 || !(0.0..=65535.0).contains(&d) {
        return Err(Error::Validation(format!("distance_mm = {d} must be an integer in [0, 65535]")));
    }
    let mut flags = 0;
    if frame.motion {
        flags |= FLAG_MOTION;
    }
    if frame.presence {
        flags |= FLAG_PRESENCE;
    }

    let mut out = [0u8; FRAME_LEN];
    out[0..2].copy_from_slice(&SYNC);
    out[2] = VERSION;
    out[3] = PAYLOAD_LEN;
    out[4..8].copy_from_slice(&frame.device_ts.to_le_bytes());
    out[8..10].copy_from_slice(&hr.to_le_bytes());
    out[10..12].copy_from_slice(&rr.to_le_bytes());
    out[12..14].copy_from_slice(&(d as u16).to_le_bytes());
    out[14] = flags;
    out[15] = 0;
    out[16] = checksum(&out[2..16]);
    Ok(out)
}

fn parse_body(frame: &[u8]) -> RadarFrame {
    let u16_at = |i: usize| u16::from_le_bytes([frame[i], frame[i + 1]]);
    RadarFrame {
        device_ts: u32::from_le_bytes([frame[4], frame[5], frame[6], frame[7]]),
        hr_bpm: f64::from(u16_at(8)) / 10.0,
        rr_bpm: f64::from(u16_at(10)) / 10.0,
        distance_mm: f64::from(u16_at(12)),
        motion: frame[14] & FLAG_MOTION != 0,
        presence: frame[14] & FLAG_PRESENCE != 0,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DecoderStats {
    pub frames_ok: u64,
    pub frames_bad_checksum: u64,
    /// Bytes discarded while hunting for a frame boundary.
    pub bytes_skipped: u64,
}

/// Abstraction over a byte-stream radar codec so a vendor format can replace
/// the reference one without touching the collector.
pub trait RadarCodec: Send {
    fn push(&mut self, chunk: &[u8]) -> Vec<RadarFrame>;
    fn stats(&self) -> DecoderStats;
}

/// Incremental decoder. Feed arbitrary chunks; every well-formed frame is
/// emitted exactly once no matter where the chunk boundaries fall.
#[derive(Debug, Default, Clone)]
pub struct DecoderState {
    carry: Vec<u8>,
    stats: DecoderStats,
}

impl DecoderState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> DecoderStats {
        self.stats
    }

    pub fn carry_len(&self) -> usize {
        self.carry.len()
    }

    pub fn decode(&mut self, chunk: &[u8]) -> Vec<RadarFrame> {
        self.carry.extend_from_slice(chunk);
        let mut frames = Vec::new();
        let mut pos = 0;
        let buf = &self.carry;
        loop {
            // Hunt for the sync pair. A trailing lone 0xAA may be the start of one.
            let Some(offset) = buf[pos..].windows(2).position(|w| w == SYNC) else {
                let keep = usize::from(buf.last() == Some(&SYNC[0]) && pos < buf.len());
                let end = buf.len() - keep;
                self.stats.bytes_skipped += (end - pos) as u64;
                pos = end;
                break;
            };
            self.stats.bytes_skipped += offset as u64;
            pos += offset;
            if buf.len() - pos < FRAME_LEN {
                break;
            }
            let frame = &buf[pos..pos + FRAME_LEN];
            if frame[2] != VERSION || frame[3] != PAYLOAD_LEN {
                self.stats.bytes_skipped += 1;
                pos += 1;
                continue;
            }
            if checksum(&frame[2..16]) != frame[16] {
                self.stats.frames_bad_checksum += 1;
                self.stats.bytes_skipped += 1;
                pos += 1;
                continue;
            }
            frames.push(parse_body(frame));
            self.stats.frames_ok += 1;
            pos += FRAME_LEN;
        }
        self.carry.drain(..pos);
        debug_assert!(self.carry.len() < FRAME_LEN);
        frames
    }
}

impl RadarCodec for DecoderState {
    fn push(&mut self, chunk: &[u8]) -> Vec<RadarFrame> {
        self.decode(chunk)
    }

    fn stats(&self) -> DecoderStats {
        self.stats
    }
}

/// Functional form of [`DecoderState::decode`].
pub fn decode_stream(mut state: DecoderState, chunk: &[u8]) -> (Vec<RadarFrame>, DecoderState) {
    let frames = state.decode(chunk);
    (frames, state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(device_ts: u32, hr: f64, rr: f64, dist: f64, motion: bool, presence: bool) -> RadarFrame {
        RadarFrame {
            device_ts,
            hr_bpm: hr,
            rr_bpm: rr,
            distance_mm: dist,
            motion,
            presence,
        }
    }

    // Independent oracle: the checksum over the listed bytes, summed by hand.
    fn sum_mod_256(bytes: &[u8]) -> u8 {
        (bytes.iter().map(|&b| u32::from(b)).sum::<u32>() % 256) as u8
    }

    #[test]
    fn reference_frame_bytes() {
        let bytes = encode_frame(&sample(1000, 72.0, 15.0, 800.0, false, true)).unwrap();
        let expected = [
            0xAA, 0x55, 0x01, 0x0C, 0xE8, 0x03, 0x00, 0x00, 0xD0, 0x02, 0x96, 0x00, 0x20, 0x03, 0x02, 0x00, 0x85,
        ];
        assert_eq!(bytes, expected);
        assert_eq!(sum_mod_256(&expected[2..16]), 0x85);
    }

    #[test]
    fn all_zero_frame_checksum() {
        let bytes = encode_frame(&sample(0, 0.0, 0.0, 0.0, false, false)).unwrap();
        assert!(bytes[4..16].iter().all(|&b| b == 0));
        assert_eq!(bytes[16], 0x0D);
        assert_eq!(sum_mod_256(&[0x01, 0x0C]), 0x0D);
    }

    #[test]
    fn rejects_unrepresentable_fields() {
        assert!(matches!(
            encode_frame(&sample(0, 6553.6, 0.0, 0.0, false, false)),
            Err(Error::Validation(_))
        ));
        assert!(encode_frame(&sample(0, 6553.5, 0.0, 0.0, false, false)).is_ok());
        assert!(encode_frame(&sample(0, -1.0, 0.0, 0.0, false, false)).is_err());
        assert!(encode_frame(&sample(0, 70.0, 15.0, 800.5, false, false)).is_err());
        assert!(encode_frame(&sample(0, 70.0, 15.0, 70000.0, false, false)).is_err());
    }

    #[test]
    fn split_frame_reassembles() {
        let f = sample(42, 61.3, 12.7, 640.0, true, true);
        let bytes = encode_frame(&f).unwrap();
        let mut st = DecoderState::new();
        assert!(st.decode(&bytes[..5]).is_empty());
        assert_eq!(st.decode(&bytes[5..]), vec![f]);
        assert_eq!(st.carry_len(), 0);
    }

    #[test]
    fn flipped_payload_byte_is_counted_and_next_frame_survives() {
        let good = sample(1, 70.0, 15.0, 800.0, false, true);
        let mut corrupt = encode_frame(&good).unwrap();
        corrupt[9] ^= 0x10;
        let next = sample(2, 71.0, 15.5, 801.0, false, true);
        let mut st = DecoderState::new();
        assert!(st.decode(&corrupt).is_empty());
        assert_eq!(st.stats().frames_bad_checksum, 1);
        assert_eq!(st.decode(&encode_frame(&next).unwrap()), vec![next]);
    }

    #[test]
    fn garbage_prefix_is_skipped() {
        let frames: Vec<_> = (0..3).map(|i| sample(i * 1000, 70.0 + i as f64, 15.0, 800.0, false, true)).collect();
        let mut stream = vec![0x00, 0x13, 0xFF, 0xAA, 0x01, 0x55, 0x7E];
        for f in &frames {
            stream.extend_from_slice(&encode_frame(f).unwrap());
        }
        let mut st = DecoderState::new();
        assert_eq!(st.decode(&stream), frames);
        assert_eq!(st.stats().bytes_skipped, 7);
        assert_eq!(st.stats().frames_ok, 3);
    }

    #[test]
    fn lone_trailing_sync_byte_is_kept() {
        let f = sample(9, 70.0, 15.0, 800.0, false, true);
        let bytes = encode_frame(&f).unwrap();
        let mut st = DecoderState::new();
        assert!(st.decode(&[0x11, 0xAA]).is_empty());
        assert_eq!(st.carry_len(), 1);
        assert_eq!(st.decode(&bytes[1..]), vec![f]);
        assert_eq!(st.stats().bytes_skipped, 1);
    }

    #[test]
    fn bad_header_resyncs() {
        let f = sample(9, 70.0, 15.0, 800.0, false, true);
        let mut stream = vec![0xAA, 0x55, 0x02, 0x0C];
        stream.extend_from_slice(&encode_frame(&f).unwrap());
        let (frames, st) = decode_stream(DecoderState::new(), &stream);
        assert_eq!(frames, vec![f]);
        assert_eq!(st.stats().bytes_skipped, 4);
    }
}

//! 16-bit mono PCM WAV input.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Audio> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes)
}

fn le16(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn le32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

pub fn parse_wav(bytes: &[u8]) -> Result<Audio> {
    if bytes.len() < 12 {
        return Err(Error::Corrupt(format!("wav header truncated ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(Error::UnsupportedFormat("riff id: not a RIFF file".into()));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(Error::UnsupportedFormat("wave id: RIFF form is not WAVE".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le32(&bytes[pos + 4..pos + 8]) as usize;
        let body = pos + 8;
        if id == b"fmt " {
            if size < 16 || body + 16 > bytes.len() {
                return Err(Error::Corrupt("fmt chunk truncated".into()));
            }
            let b = &bytes[body..];
            fmt = Some((le16(&b[0..2]), le16(&b[2..4]), le32(&b[4..8]), le16(&b[14..16])));
        } else if id == b"data" {
            let (format, channels, rate, bits) = fmt.ok_or_else(|| Error::Corrupt("data chunk before fmt chunk".into()))?;
            if format != 1 {
                return Err(Error::UnsupportedFormat(format!("audio_format = {format} (only PCM = 1 is supported)")));
            }
            if channels != 1 {
                return Err(Error::UnsupportedFormat(format!("num_channels = {channels} (only mono is supported)")));
            }
            if bits != 16 {
                return Err(Error::UnsupportedFormat(format!("bits_per_sample = {bits} (only 16 is supported)")));
            }
            let payload = bytes.len() - body;
            if payload != size {
                return Err(Error::Corrupt(format!("data chunk declares {size} bytes but {payload} are present")));
            }
            if !size.is_multiple_of(2) {
                return Err(Error::Corrupt(format!("odd data chunk size {size} for 16-bit samples")));
            }
            let samples = bytes[body..].chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0).collect();
            return Ok(Audio { samples, sample_rate: rate });
        }
        pos = body + size + (size & 1);
    }
    Err(Error::Corrupt("no data chunk".into()))
}

/// Encodes samples (clamped to [−1, 1)) as 16-bit mono PCM.
pub fn encode_wav(samples: &[f32], sample_rate: u32) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, samples: &[f32], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_wav(samples, sample_rate)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_round_trip() {
        let a = parse_wav(&encode_wav(&[0.0; 37], 16000)).unwrap();
        assert_eq!(a.samples, vec![0.0; 37]);
        assert_eq!(a.sample_rate, 16000);
    }

    #[test]
    fn most_negative_sample_is_minus_one() {
        let a = parse_wav(&encode_wav(&[-1.0, 0.5], 8000)).unwrap();
        assert_eq!(a.samples[0], -1.0);
        assert_eq!(a.samples[1], 0.5);
    }

    #[test]
    fn declared_length_mismatch_is_corrupt() {
        let mut b = encode_wav(&[0.1; 10], 16000);
        b.truncate(b.len() - 2);
        assert!(matches!(parse_wav(&b), Err(Error::Corrupt(_))));
        let mut b = encode_wav(&[0.1; 10], 16000);
        b.extend_from_slice(&[0, 0]);
        assert!(matches!(parse_wav(&b), Err(Error::Corrupt(_))));
    }

    #[test]
    fn stereo_and_float_rejected_naming_field() {
        let mut b = encode_wav(&[0.0; 4], 16000);
        b[22] = 2;
        let e = parse_wav(&b).unwrap_err().to_string();
        assert!(e.contains("num_channels"), "{e}");
        let mut b = encode_wav(&[0.0; 4], 16000);
        b[20] = 3;
        let e = parse_wav(&b).unwrap_err().to_string();
        assert!(e.contains("audio_format"), "{e}");
        let mut b = encode_wav(&[0.0; 4], 16000);
        b[34] = 24;
        let e = parse_wav(&b).unwrap_err().to_string();
        assert!(e.contains("bits_per_sample"), "{e}");
    }

    #[test]
    fn truncated_header() {
        assert!(matches!(parse_wav(b"RIFF"), Err(Error::Corrupt(_))));
    }
}

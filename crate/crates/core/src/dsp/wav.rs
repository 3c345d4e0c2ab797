//! RIFF/WAVE reading (PCM 8/16/24/32-bit, IEEE float 32/64) and writing
//! (16-bit PCM, 32-bit float). Multichannel input is averaged to mono.

use std::fs;
use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

fn format_err(path: &Path, offset: usize, msg: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), what: "WAV", offset: offset as u64, msg: msg.into() }
}

fn u16_at(b: &[u8], o: usize) -> u16 {
    u16::from_le_bytes([b[o], b[o + 1]])
}

fn u32_at(b: &[u8], o: usize) -> u32 {
    u32::from_le_bytes([b[o], b[o + 1], b[o + 2], b[o + 3]])
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes, path)
}

pub fn parse_wav(b: &[u8], path: &Path) -> Result<Waveform> {
    if b.len() < 12 || &b[0..4] != b"RIFF" || &b[8..12] != b"WAVE" {
        return Err(format_err(path, 0, "missing RIFF/WAVE header"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= b.len() {
        let id = &b[pos..pos + 4];
        let size = u32_at(b, pos + 4) as usize;
        let body = pos + 8;
        if body + size > b.len() && id != b"data" {
            return Err(format_err(path, pos, format!("chunk of {size} bytes overruns file")));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(format_err(path, pos, "fmt chunk too short"));
                }
                let mut tag = u16_at(b, body);
                let channels = u16_at(b, body + 2);
                let rate = u32_at(b, body + 4);
                let bits = u16_at(b, body + 14);
                if tag == 0xFFFE {
                    if size < 40 {
                        return Err(format_err(path, pos, "extensible fmt chunk too short"));
                    }
                    tag = u16_at(b, body + 24);
                }
                fmt = Some((tag, channels, rate, bits));
            }
            b"data" => {
                let (tag, channels, rate, bits) =
                    fmt.ok_or_else(|| format_err(path, pos, "data chunk before fmt chunk"))?;
                if channels == 0 {
                    return Err(format_err(path, pos, "zero channels"));
                }
                let end = (body + size).min(b.len());
                let data = &b[body..end];
                let width = (bits as usize).div_ceil(8);
                let frame = width * channels as usize;
                let decode: Box<dyn Fn(&[u8]) -> f32> = match (tag, bits) {
                    (1, 8) => Box::new(|s| (s[0] as f32 - 128.0) / 128.0),
                    (1, 16) => Box::new(|s| i16::from_le_bytes([s[0], s[1]]) as f32 / 32768.0),
                    (1, 24) => Box::new(|s| (i32::from_le_bytes([0, s[0], s[1], s[2]]) >> 8) as f32 / 8_388_608.0),
                    (1, 32) => Box::new(|s| i32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f32 / 2_147_483_648.0),
                    (3, 32) => Box::new(|s| f32::from_le_bytes([s[0], s[1], s[2], s[3]])),
                    (3, 64) => Box::new(|s| f64::from_le_bytes(s[..8].try_into().unwrap()) as f32),
                    _ => {
                        return Err(format_err(path, pos, format!("unsupported encoding tag {tag} with {bits} bits")))
                    }
                };
                let samples = data
                    .chunks_exact(frame)
                    .map(|fr| fr.chunks_exact(width).map(&decode).sum::<f32>() / channels as f32)
                    .collect();
                return Ok(Waveform::new(samples, rate));
            }
            _ => {}
        }
        pos = body + size + (size & 1);
    }
    Err(format_err(path, pos, "no data chunk"))
}

pub fn encode_wav(w: &Waveform, format: WavFormat) -> Vec<u8> {
    let (tag, bits): (u16, u16) = match format {
        WavFormat::Pcm16 => (1, 16),
        WavFormat::Float32 => (3, 32),
    };
    let block = bits / 8;
    let data_len = w.samples.len() * block as usize;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * block as u32).to_le_bytes());
    out.extend_from_slice(&block.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &w.samples {
        match format {
            WavFormat::Pcm16 => {
                let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&v.to_le_bytes());
            }
            WavFormat::Float32 => out.extend_from_slice(&s.to_le_bytes()),
        }
    }
    out
}

pub fn write_wav(path: &Path, w: &Waveform, format: WavFormat) -> Result<()> {
    fs::write(path, encode_wav(w, format)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_roundtrip_is_bit_exact() {
        let w = Waveform::new(vec![0.0, 0.25, -0.5, 1e-7, 0.999], 16_000);
        let back = parse_wav(&encode_wav(&w, WavFormat::Float32), Path::new("x.wav")).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn pcm16_roundtrip_within_quantization() {
        let w = Waveform::new(vec![0.0, 0.25, -0.5, 0.9], 22_050);
        let back = parse_wav(&encode_wav(&w, WavFormat::Pcm16), Path::new("x.wav")).unwrap();
        assert_eq!(back.sample_rate, 22_050);
        for (a, b) in w.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 0.5 / 32768.0);
        }
    }

    #[test]
    fn garbage_reports_offset() {
        let err = parse_wav(b"RIFX....", Path::new("bad.wav")).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));
        assert_eq!(err.exit_code(), 2);
    }
}

//! RIFF/WAVE PCM16 mono reader and writer.

use std::path::Path;

use super::resample::resample;
use crate::{Error, Result};

/// Mono PCM16 audio.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<i16>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn resampled(&self, to: u32) -> AudioClip {
        if to == self.sample_rate {
            return self.clone();
        }
        let x: Vec<f64> = self.samples.iter().map(|&s| s as f64).collect();
        let y = resample(&x, self.sample_rate, to);
        AudioClip {
            samples: y.iter().map(|v| v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16).collect(),
            sample_rate: to,
        }
    }
}

const WAVE_FORMAT_PCM: u16 = 1;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

pub fn parse_wav(bytes: &[u8]) -> Result<AudioClip> {
    let bad = |m: &str| Error::Format(format!("WAV: {m}"));
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("missing RIFF/WAVE header"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u32)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = body.checked_add(size).ok_or_else(|| bad("chunk size overflow"))?;
        if end > bytes.len() {
            return Err(bad("truncated chunk"));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(bad("fmt chunk too short"));
                }
                let mut tag = u16_at(bytes, body);
                let channels = u16_at(bytes, body + 2);
                let rate = u32_at(bytes, body + 4);
                let bits = u16_at(bytes, body + 14);
                if tag == WAVE_FORMAT_EXTENSIBLE {
                    if size < 40 {
                        return Err(bad("extensible fmt chunk too short"));
                    }
                    tag = u16_at(bytes, body + 24);
                }
                if tag != WAVE_FORMAT_PCM {
                    return Err(Error::UnsupportedEncoding(format!("WAV format tag {tag}, expected PCM")));
                }
                if bits != 16 {
                    return Err(Error::UnsupportedEncoding(format!("{bits}-bit samples, expected 16")));
                }
                if channels != 1 {
                    return Err(Error::UnsupportedEncoding(format!("{channels} channels, expected mono")));
                }
                if rate == 0 {
                    return Err(bad("zero sample rate"));
                }
                fmt = Some((channels, rate));
            }
            b"data" => {
                let (_, rate) = fmt.ok_or_else(|| bad("data chunk before fmt chunk"))?;
                if size % 2 != 0 {
                    return Err(bad("odd data length for 16-bit samples"));
                }
                let samples = bytes[body..end].chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
                return Ok(AudioClip { samples, sample_rate: rate });
            }
            _ => {}
        }
        pos = end + (size & 1);
    }
    Err(bad("no data chunk"))
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Read a WAV file and resample it to `target_rate`.
pub fn read_audio(path: impl AsRef<Path>, target_rate: u32) -> Result<AudioClip> {
    Ok(read_wav(path)?.resampled(target_rate))
}

pub fn wav_bytes(clip: &AudioClip) -> Vec<u8> {
    let data_len = (clip.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAVE_FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in &clip.samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, wav_bytes(clip)).map_err(|e| Error::io(path, e))
}

//! Frame timestamps, centered audio windows and frame-level labels.

use std::io::{Read, Write};
use std::path::Path;

use log::warn;

use crate::corpus::{parse_transcript, read_audio, read_video, Manifest, Rational, Transcript, Utterance};
use crate::phonology::{Assignment, Dimension, PhonemeMap};
use crate::{Error, Result};

/// Audio/video durations may disagree by this much before it is an error.
pub const MAX_LENGTH_MISMATCH_S: f64 = 0.5;

/// Frame start times `t_k = k / fps`.
pub fn frame_times(n_frames: usize, fps: f64) -> Vec<f64> {
    (0..n_frames).map(|k| k as f64 / fps).collect()
}

/// Samples per frame window, `round(sample_rate / fps)`.
pub fn window_len(sample_rate: u32, fps: Rational) -> usize {
    let num = sample_rate as u64 * fps.den as u64;
    let den = fps.num as u64;
    ((2 * num + den) / (2 * den)) as usize
}

/// A window of `hi - lo` samples around a timestamp. Indices may fall outside
/// the clip; those positions read as zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpan {
    pub lo: i64,
    pub hi: i64,
}

impl WindowSpan {
    pub fn len(&self) -> usize {
        (self.hi - self.lo) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.hi == self.lo
    }

    /// Zero samples needed before and after the clip of `n_samples`.
    pub fn padding(&self, n_samples: usize) -> (usize, usize) {
        let n = n_samples as i64;
        let left = (-self.lo).clamp(0, self.hi - self.lo);
        let right = (self.hi - n).clamp(0, self.hi - self.lo);
        (left as usize, right as usize)
    }

    pub fn extract(&self, samples: &[i16]) -> Vec<i16> {
        let n = samples.len() as i64;
        (self.lo..self.hi).map(|i| if (0..n).contains(&i) { samples[i as usize] } else { 0 }).collect()
    }
}

/// Window of `w` samples centered on `round(t * sample_rate)`.
pub fn audio_window(t: f64, sample_rate: u32, w: usize) -> WindowSpan {
    let c = (t * sample_rate as f64).round() as i64;
    let lo = c - (w / 2) as i64;
    WindowSpan { lo, hi: lo + w as i64 }
}

/// Label of one frame: a class index, or `None` when the phoneme is excluded
/// from the dimension.
pub type FrameLabel = Option<usize>;

/// Label each frame by the interval containing its midpoint `t_k + 1/(2 fps)`.
/// Frames outside every interval are Silence.
pub fn label_frames(
    transcript: &Transcript,
    frame_times: &[f64],
    fps: f64,
    dim: Dimension,
    map: &PhonemeMap,
) -> Result<Vec<FrameLabel>> {
    let half = 0.5 / fps;
    let iv = &transcript.intervals;
    frame_times
        .iter()
        .map(|&t| {
            let m = t + half;
            let i = iv.partition_point(|x| x.start_s <= m);
            match i.checked_sub(1).map(|j| &iv[j]).filter(|x| x.contains(m)) {
                None => Ok(Some(0)),
                Some(x) => Ok(match map.class_of(&x.phoneme, dim)? {
                    Assignment::Class(c) => Some(c.index),
                    Assignment::Excluded => None,
                }),
            }
        })
        .collect()
}

/// Inputs that control example construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignConfig {
    pub fps: Rational,
    pub sample_rate: u32,
    pub image_size: usize,
    /// Skip reading audio; examples then carry no window.
    pub load_audio: bool,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self { fps: Rational::integer(15), sample_rate: 16000, image_size: 64, load_audio: true }
    }
}

impl AlignConfig {
    pub fn window_len(&self) -> usize {
        window_len(self.sample_rate, self.fps)
    }
}

/// One video frame with its audio window and labels in all dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameExample {
    pub utterance_id: String,
    pub speaker_id: String,
    pub frame_index: usize,
    pub frame: Vec<u8>,
    pub audio_window: Option<Vec<i16>>,
    /// Indexed like [`Dimension::ALL`].
    pub labels: [FrameLabel; 3],
}

impl FrameExample {
    pub fn label(&self, dim: Dimension) -> FrameLabel {
        self.labels[dim_slot(dim)]
    }

    pub fn masked(&self, dim: Dimension) -> bool {
        self.label(dim).is_none()
    }
}

fn dim_slot(dim: Dimension) -> usize {
    Dimension::ALL.iter().position(|&d| d == dim).unwrap()
}

/// Decode one utterance into per-frame examples.
pub fn build_examples(manifest: &Manifest, utt: &Utterance, cfg: &AlignConfig, map: &PhonemeMap) -> Result<Vec<FrameExample>> {
    let video = read_video(manifest.resolve(&utt.video_path), utt.fps, cfg.fps, cfg.image_size)?;
    let transcript = parse_transcript(manifest.resolve(&utt.transcript_path))?;
    let period = 1.0 / cfg.fps.as_f64();
    let mut n_frames = video.n_frames();
    let audio = if cfg.load_audio {
        let clip = read_audio(manifest.resolve(&utt.audio_path), cfg.sample_rate)?;
        let (a, v) = (clip.duration(), video.duration());
        let gap = (a - v).abs();
        if gap > MAX_LENGTH_MISMATCH_S {
            return Err(Error::LengthMismatch { utterance: utt.id.clone(), audio_s: a, video_s: v });
        }
        if gap > period + 1e-9 {
            warn!("{}: audio {a:.3} s vs video {v:.3} s, truncating to the shorter", utt.id);
            if a < v {
                n_frames = ((a * cfg.fps.as_f64()).floor() as usize).min(n_frames);
            }
        }
        Some(clip)
    } else {
        None
    };
    let times = frame_times(n_frames, cfg.fps.as_f64());
    let mut per_dim = Vec::with_capacity(3);
    for dim in Dimension::ALL {
        per_dim.push(label_frames(&transcript, &times, cfg.fps.as_f64(), dim, map)?);
    }
    let w = cfg.window_len();
    Ok(times
        .iter()
        .enumerate()
        .map(|(k, &t)| FrameExample {
            utterance_id: utt.id.clone(),
            speaker_id: utt.speaker_id.clone(),
            frame_index: k,
            frame: video.frame(k).to_vec(),
            audio_window: audio.as_ref().map(|a| audio_window(t, cfg.sample_rate, w).extract(&a.samples)),
            labels: [per_dim[0][k], per_dim[1][k], per_dim[2][k]],
        })
        .collect())
}

/// Examples for every utterance, in manifest order.
pub fn build_all(manifest: &Manifest, cfg: &AlignConfig, map: &PhonemeMap) -> Result<Vec<FrameExample>> {
    use rayon::prelude::*;
    if cfg.load_audio {
        manifest.check_audio()?;
    }
    let parts: Vec<Result<Vec<FrameExample>>> =
        manifest.utterances.par_iter().map(|u| build_examples(manifest, u, cfg, map)).collect();
    let mut out = Vec::new();
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Binary example cache.
///
/// ```text
/// magic    "ACCX", u32 version 1
/// key      32 bytes (hash of manifest and alignment settings)
/// count    u64
/// record   u32 byte length, then:
///            utterance_id, speaker_id   (u32 len + UTF-8 each)
///            frame_index u64
///            frame       u32 len + bytes
///            window      u8 present flag; if 1, u32 count + i16 LE samples
///            labels      3 x i16 (-1 = excluded)
/// ```
pub mod cache {
    use super::*;

    const MAGIC: &[u8; 4] = b"ACCX";
    const VERSION: u32 = 1;

    pub fn key(manifest: &Manifest, cfg: &AlignConfig, map_text: &str) -> [u8; 32] {
        let mut b = manifest.content_hash().to_vec();
        b.extend(format!("{:?}", cfg).as_bytes());
        b.extend(map_text.as_bytes());
        acc_tensor::checkpoint::sha256(&b)
    }

    fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
        out.extend((b.len() as u32).to_le_bytes());
        out.extend(b);
    }

    fn encode(e: &FrameExample) -> Vec<u8> {
        let mut r = Vec::with_capacity(e.frame.len() + 64);
        put_bytes(&mut r, e.utterance_id.as_bytes());
        put_bytes(&mut r, e.speaker_id.as_bytes());
        r.extend((e.frame_index as u64).to_le_bytes());
        put_bytes(&mut r, &e.frame);
        match &e.audio_window {
            None => r.push(0),
            Some(w) => {
                r.push(1);
                r.extend((w.len() as u32).to_le_bytes());
                for s in w {
                    r.extend(s.to_le_bytes());
                }
            }
        }
        for l in e.labels {
            r.extend(l.map_or(-1i16, |v| v as i16).to_le_bytes());
        }
        r
    }

    pub fn write(path: &Path, key: [u8; 32], examples: &[FrameExample]) -> Result<()> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.extend(key);
        out.extend((examples.len() as u64).to_le_bytes());
        for e in examples {
            let r = encode(e);
            out.extend((r.len() as u32).to_le_bytes());
            out.extend(r);
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    struct Cur<'a>(&'a [u8], usize);

    impl<'a> Cur<'a> {
        fn take(&mut self, n: usize) -> Result<&'a [u8]> {
            let end = self.1.checked_add(n).filter(|&e| e <= self.0.len()).ok_or_else(|| Error::Format("cache truncated".into()))?;
            let s = &self.0[self.1..end];
            self.1 = end;
            Ok(s)
        }
        fn u32(&mut self) -> Result<u32> {
            Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
        }
        fn u64(&mut self) -> Result<u64> {
            Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
        }
        fn bytes(&mut self) -> Result<&'a [u8]> {
            let n = self.u32()? as usize;
            self.take(n)
        }
        fn string(&mut self) -> Result<String> {
            String::from_utf8(self.bytes()?.to_vec()).map_err(|_| Error::Format("cache string is not UTF-8".into()))
        }
    }

    /// Read a cache file. Returns `Ok(None)` when it is absent or was built for a different key.
    pub fn read(path: &Path, key: [u8; 32]) -> Result<Option<Vec<FrameExample>>> {
        let mut buf = Vec::new();
        match std::fs::File::open(path) {
            Ok(mut f) => f.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(path, e)),
        };
        let mut c = Cur(&buf, 0);
        if c.take(4)? != MAGIC || c.u32()? != VERSION {
            return Err(Error::Format(format!("{}: not an example cache", path.display())));
        }
        if c.take(32)? != key {
            return Ok(None);
        }
        let n = c.u64()? as usize;
        let mut out = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let len = c.u32()? as usize;
            let mut r = Cur(c.take(len)?, 0);
            let utterance_id = r.string()?;
            let speaker_id = r.string()?;
            let frame_index = r.u64()? as usize;
            let frame = r.bytes()?.to_vec();
            let audio_window = match r.take(1)?[0] {
                0 => None,
                _ => {
                    let k = r.u32()? as usize;
                    Some(r.take(2 * k)?.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]])).collect())
                }
            };
            let mut labels = [None; 3];
            for l in &mut labels {
                let v = i16::from_le_bytes(r.take(2)?.try_into().unwrap());
                *l = (v >= 0).then_some(v as usize);
            }
            out.push(FrameExample { utterance_id, speaker_id, frame_index, frame, audio_window, labels });
        }
        Ok(Some(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_transcript_str;

    #[test]
    fn frame_time_examples() {
        assert!(frame_times(0, 15.0).is_empty());
        assert_eq!(frame_times(16, 15.0)[15], 1.0);
        let t = frame_times(3, 15.0);
        let r: Vec<f64> = t.iter().map(|x| (x * 1e4).round() / 1e4).collect();
        assert_eq!(r, vec![0.0, 0.0667, 0.1333]);
    }

    #[test]
    fn window_examples() {
        assert_eq!(window_len(16000, Rational::integer(15)), 1067);
        let s = audio_window(0.2, 16000, 1067);
        assert_eq!((s.lo, s.hi), (2667, 3734));
        let z = audio_window(0.0, 16000, 1067);
        assert_eq!(z.padding(16000), (533, 0));
        let x = z.extract(&[7i16; 100]);
        assert_eq!(x.len(), 1067);
        assert!(x[..533].iter().all(|&v| v == 0));
        assert!(x[533..633].iter().all(|&v| v == 7));
    }

    #[test]
    fn label_examples() {
        let map = PhonemeMap::default();
        let tr = parse_transcript_str("0.10\t0.18\tP\n", "t").unwrap();
        let l = label_frames(&tr, &frame_times(4, 15.0), 15.0, Dimension::Manner, &map).unwrap();
        assert_eq!(l, vec![Some(0), Some(1), Some(1), Some(0)]);

        let empty = Transcript::default();
        let l = label_frames(&empty, &frame_times(10, 15.0), 15.0, Dimension::Place, &map).unwrap();
        assert!(l.iter().all(|&x| x == Some(0)));

        // boundary exactly at the midpoint of frame 0 (0.05 s at 10 fps)
        let tr = parse_transcript_str("0.0\t0.05\tM\n0.05\t0.2\tS\n", "t").unwrap();
        let l = label_frames(&tr, &frame_times(1, 10.0), 10.0, Dimension::Manner, &map).unwrap();
        assert_eq!(l, vec![Some(3)]);

        let tr = parse_transcript_str("0.0\t1.0\tAA1\n", "t").unwrap();
        let l = label_frames(&tr, &frame_times(2, 15.0), 15.0, Dimension::Place, &map).unwrap();
        assert_eq!(l, vec![None, None]);
    }
}

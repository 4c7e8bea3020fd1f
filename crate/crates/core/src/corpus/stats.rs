use std::fmt;

use serde::Serialize;

use super::manifest::{Manifest, Rational};
use super::transcript::parse_transcript;
use super::video::{read_video, rvf_frame_count};
use crate::alignment::{frame_times, label_frames};
use crate::phonology::{Dimension, PhonemeMap};
use crate::Result;

/// Frames per class of one dimension.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassHistogram {
    pub dimension: Dimension,
    pub counts: Vec<usize>,
    /// Frames whose phoneme is excluded from this dimension.
    pub masked: usize,
}

impl ClassHistogram {
    pub fn labeled(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn total(&self) -> usize {
        self.labeled() + self.masked
    }

    /// Share of labeled frames per class, in percent.
    pub fn percentages(&self) -> Vec<f64> {
        let n = self.labeled();
        self.counts.iter().map(|&c| if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 }).collect()
    }
}

impl fmt::Display for ClassHistogram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14}{:>8}{:>9}", self.dimension, "frames", "%")?;
        for ((name, c), p) in self.dimension.class_names().iter().zip(&self.counts).zip(self.percentages()) {
            writeln!(f, "{name:<14}{c:>8}{p:>8.2}%")?;
        }
        if self.masked > 0 {
            writeln!(f, "{:<14}{:>8}", "(excluded)", self.masked)?;
        }
        write!(f, "{:<14}{:>8}", "total", self.total())
    }
}

/// Frame-level class counts over the whole corpus, resampled to `fps`.
pub fn class_histogram(manifest: &Manifest, dim: Dimension, fps: Rational, map: &PhonemeMap) -> Result<ClassHistogram> {
    let mut counts = vec![0; dim.n_classes()];
    let mut masked = 0;
    for u in &manifest.utterances {
        let vpath = manifest.resolve(&u.video_path);
        let n = if vpath.is_dir() { read_video(&vpath, u.fps, fps, 1)?.n_frames() } else { rvf_frame_count(&vpath, fps)? };
        let transcript = parse_transcript(manifest.resolve(&u.transcript_path))?;
        for l in label_frames(&transcript, &frame_times(n, fps.as_f64()), fps.as_f64(), dim, map)? {
            match l {
                Some(c) => counts[c] += 1,
                None => masked += 1,
            }
        }
    }
    Ok(ClassHistogram { dimension: dim, counts, masked })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{write_rvf, write_transcript, Gender, Transcript, Utterance, VideoClip};

    #[test]
    fn all_silence_utterance() {
        let d = tempfile::tempdir().unwrap();
        let v = VideoClip::new(4, 4, Rational::integer(15), vec![0; 16 * 30]).unwrap();
        write_rvf(&v, d.path().join("a.rvf")).unwrap();
        write_transcript(&Transcript::default(), d.path().join("a.tsv")).unwrap();
        let u = Utterance {
            id: "a".into(),
            speaker_id: "s".into(),
            gender: Gender::F,
            video_path: "a.rvf".into(),
            audio_path: "a.wav".into(),
            transcript_path: "a.tsv".into(),
            fps: Rational::integer(15),
            sample_rate: 16000,
        };
        let m = Manifest::new(vec![u], d.path());
        let h = class_histogram(&m, Dimension::Manner, Rational::integer(15), &PhonemeMap::default()).unwrap();
        assert_eq!(h.counts, vec![30, 0, 0, 0, 0, 0]);
        assert_eq!(h.percentages()[0], 100.0);
    }
}

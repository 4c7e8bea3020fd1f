//! Deterministic synthetic corpus.
//!
//! Each phone renders a cartoon midsagittal frame: the constriction's
//! horizontal position follows place of articulation, the gap between tongue
//! and palate follows manner, a velum blob lights up for nasals and a glottis
//! marker is bright for voiced phones, dim for voiceless ones and absent in
//! silence. Audio is harmonic for voiced phones, noise for voiceless
//! fricatives, closure plus burst for stops and near-silence otherwise.

use std::f64::consts::TAU;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{Gender, Manifest, Rational, Utterance};
use super::transcript::{write_transcript, Interval, Transcript};
use super::video::{write_rvf, VideoClip};
use super::wav::{write_wav, AudioClip};
use crate::phonology::{Assignment, Dimension, Phoneme, PhonemeMap, INVENTORY};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_speakers: usize,
    /// Gender per speaker; empty means alternating M, F, M, ...
    pub genders: Vec<Gender>,
    pub sentences_per_speaker: usize,
    pub phones_per_sentence: usize,
    pub fps: Rational,
    pub sample_rate: u32,
    /// Native frame side length.
    pub image_size: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_speakers: 10,
            genders: Vec::new(),
            sentences_per_speaker: 14,
            phones_per_sentence: 12,
            fps: Rational::integer(15),
            sample_rate: 16000,
            image_size: 68,
            seed: 7,
        }
    }
}

impl SynthSpec {
    /// Read a TOML spec; missing keys take their defaults.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SynthSpec = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn gender_of(&self, speaker: usize) -> Gender {
        self.genders.get(speaker).copied().unwrap_or(if speaker % 2 == 0 { Gender::M } else { Gender::F })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.n_speakers == 0 || self.sentences_per_speaker == 0 || self.phones_per_sentence == 0 {
            return bad("speaker, sentence and phone counts must be positive");
        }
        if !self.genders.is_empty() && self.genders.len() != self.n_speakers {
            return bad("genders must list one entry per speaker");
        }
        if !self.fps.is_positive() || self.sample_rate == 0 {
            return bad("fps and sample_rate must be positive");
        }
        if self.image_size < 16 {
            return bad("image_size must be at least 16");
        }
        Ok(())
    }
}

/// Anatomy and voice differences between speakers.
#[derive(Clone, Copy, Debug)]
struct Speaker {
    dx: f64,
    dy: f64,
    gain: f64,
    f0: f64,
}

fn stream(seed: u64, tag: &str, index: usize) -> ChaCha8Rng {
    let h = acc_tensor::checkpoint::sha256(format!("{seed}:{tag}:{index}").as_bytes());
    ChaCha8Rng::from_seed(h)
}

fn speaker(spec: &SynthSpec, i: usize) -> Speaker {
    let mut rng = stream(spec.seed, "speaker", i);
    let base_f0 = match spec.gender_of(i) {
        Gender::M => 115.0,
        Gender::F => 205.0,
    };
    Speaker {
        dx: rng.gen_range(-2.5..2.5),
        dy: rng.gen_range(-2.0..2.0),
        gain: rng.gen_range(0.85..1.15),
        f0: base_f0 * rng.gen_range(0.9..1.1),
    }
}

#[derive(Clone, Copy, Debug)]
struct Articulation {
    manner: usize,
    place: Option<usize>,
    voicing: usize,
    /// Tongue position for vowels, spread over the tract.
    vowel_x: f64,
    nasal: bool,
}

fn articulation(map: &PhonemeMap, ph: &Phoneme) -> Result<Articulation> {
    let idx = |d| -> Result<Option<usize>> {
        Ok(match map.class_of(ph, d)? {
            Assignment::Class(c) => Some(c.index),
            Assignment::Excluded => None,
        })
    };
    let manner = idx(Dimension::Manner)?.unwrap_or(0);
    let h = ph.as_str().bytes().fold(0u32, |a, b| a.wrapping_mul(31).wrapping_add(b as u32));
    Ok(Articulation {
        manner,
        place: idx(Dimension::Place)?,
        voicing: idx(Dimension::Voicing)?.unwrap_or(0),
        vowel_x: 20.0 + (h % 7) as f64 * 4.5,
        nasal: manner == 2,
    })
}

/// Constriction centre by place class, in 68-pixel coordinates.
const PLACE_X: [f64; 8] = [34.0, 10.0, 17.0, 24.0, 31.0, 38.0, 45.0, 54.0];
/// Tongue-to-palate gap by manner class.
const APERTURE: [f64; 6] = [15.0, 0.0, 0.0, 2.0, 6.0, 11.0];

fn render(size: usize, a: &Articulation, spk: &Speaker, rng: &mut ChaCha8Rng, out: &mut Vec<u8>) {
    let s = size as f64 / 68.0;
    let noise = Normal::new(0.0, 4.0).unwrap();
    let palate_y = 22.0 + spk.dy;
    let floor_y = 50.0 + spk.dy;
    let cx = match (a.manner, a.place) {
        (5, _) => a.vowel_x,
        (_, Some(p)) => PLACE_X[p],
        _ => 34.0,
    } + spk.dx;
    let peak_y = palate_y + APERTURE[a.manner];
    let width = if a.manner == 5 { 9.0 } else { 5.0 };
    let glottis = match a.voicing {
        2 => Some(235.0),
        1 => Some(100.0),
        _ => None,
    };
    for py in 0..size {
        let y = (py as f64 + 0.5) / s;
        for px in 0..size {
            let x = (px as f64 + 0.5) / s;
            let mut v = 18.0;
            if (y - palate_y).abs() < 1.5 && (5.0..63.0).contains(&x) {
                v = 150.0;
            }
            let tongue_top = floor_y - (floor_y - peak_y) * (-((x - cx) / width).powi(2)).exp();
            if y >= tongue_top && y < floor_y + 8.0 && (5.0..60.0).contains(&x) {
                v = 140.0;
            }
            let (vx, vy) = (46.0 + spk.dx, 15.0 + spk.dy);
            if (x - vx).powi(2) + (y - vy).powi(2) < 9.0 {
                v = if a.nasal { 210.0 } else { 60.0 };
            }
            if let Some(g) = glottis {
                if (57.0..63.0).contains(&x) && (56.0 + spk.dy..62.0 + spk.dy).contains(&y) {
                    v = g;
                }
            }
            let p = v * spk.gain + noise.sample(rng);
            out.push(p.round().clamp(0.0, 255.0) as u8);
        }
    }
}

fn synth_audio(a: &Articulation, n: usize, sr: f64, spk: &Speaker, phase: &mut f64, rng: &mut ChaCha8Rng, out: &mut Vec<i16>) {
    let gauss = Normal::new(0.0, 1.0).unwrap();
    let harmonic = |amp: f64, k_max: usize, phase: &mut f64| -> f64 {
        let f0 = spk.f0;
        *phase = (*phase + TAU * f0 / sr) % TAU;
        amp * (1..=k_max).map(|k| (k as f64 * *phase).sin() / k as f64).sum::<f64>()
    };
    for i in 0..n {
        let frac = i as f64 / n.max(1) as f64;
        let voiced = a.voicing == 2;
        let v = match a.manner {
            0 => 0.0,
            1 => {
                if frac < 0.7 {
                    if voiced {
                        harmonic(800.0, 2, phase)
                    } else {
                        0.0
                    }
                } else {
                    3000.0 * (1.0 - (frac - 0.7) / 0.3) * gauss.sample(rng)
                }
            }
            2 => harmonic(3500.0, 3, phase),
            3 => {
                let hiss = if a.place == Some(7) { 800.0 } else { 2500.0 };
                if voiced {
                    0.5 * hiss * gauss.sample(rng) + harmonic(3000.0, 4, phase)
                } else {
                    hiss * gauss.sample(rng)
                }
            }
            4 => harmonic(5000.0, 5, phase),
            _ => harmonic(7000.0, 6, phase),
        };
        let x = v + 20.0 * gauss.sample(rng);
        out.push(x.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16);
    }
}

fn sentence(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Transcript> {
    let phones: Vec<&str> = INVENTORY.to_vec();
    let mut t_ms: u32 = 0;
    let mut intervals = Vec::new();
    let mut push = |start: u32, len: u32, sym: &str| -> Result<u32> {
        intervals.push(Interval { start_s: start as f64 / 1000.0, end_s: (start + len) as f64 / 1000.0, phoneme: Phoneme::normalize(sym)? });
        Ok(start + len)
    };
    t_ms = push(t_ms, rng.gen_range(100..300), "SIL")?;
    for _ in 0..spec.phones_per_sentence {
        let sym = *phones.choose(rng).unwrap();
        let is_vowel = sym.starts_with(['A', 'E', 'I', 'O', 'U']);
        let len = if is_vowel { rng.gen_range(90..220) } else { rng.gen_range(60..160) };
        // occasional pause between words
        if rng.gen_bool(0.1) {
            t_ms += rng.gen_range(40..120);
        }
        t_ms = push(t_ms, len, sym)?;
    }
    push(t_ms, rng.gen_range(100..300), "SIL")?;
    Ok(Transcript { intervals })
}

struct Rendered {
    transcript: Transcript,
    video: VideoClip,
    audio: AudioClip,
}

fn render_utterance(spec: &SynthSpec, map: &PhonemeMap, spk: &Speaker, index: usize) -> Result<Rendered> {
    let mut rng = stream(spec.seed, "utterance", index);
    let transcript = sentence(spec, &mut rng)?;
    let dur = transcript.duration();
    let fps = spec.fps.as_f64();
    let n_frames = (dur * fps).floor() as usize;
    let silence = articulation(map, &Phoneme::silence())?;

    let arts: Vec<Articulation> = transcript.intervals.iter().map(|iv| articulation(map, &iv.phoneme)).collect::<Result<_>>()?;
    let at = |t: f64| -> &Articulation {
        transcript.intervals.iter().position(|iv| iv.contains(t)).map_or(&silence, |j| &arts[j])
    };

    let mut pixels = Vec::with_capacity(n_frames * spec.image_size * spec.image_size);
    for k in 0..n_frames {
        let mid = (k as f64 + 0.5) / fps;
        render(spec.image_size, at(mid), spk, &mut rng, &mut pixels);
    }
    let video = VideoClip::new(spec.image_size, spec.image_size, spec.fps, pixels)?;

    let sr = spec.sample_rate as f64;
    let total = (dur * sr).round() as usize;
    let mut samples = Vec::with_capacity(total);
    let mut phase = 0.0;
    let mut cursor = 0usize;
    for (iv, a) in transcript.intervals.iter().zip(&arts) {
        let start = (iv.start_s * sr).round() as usize;
        if start > cursor {
            synth_audio(&silence, start - cursor, sr, spk, &mut phase, &mut rng, &mut samples);
        }
        let end = (iv.end_s * sr).round() as usize;
        synth_audio(a, end - start, sr, spk, &mut phase, &mut rng, &mut samples);
        cursor = end;
    }
    let audio = AudioClip { samples, sample_rate: spec.sample_rate };
    Ok(Rendered { transcript, video, audio })
}

/// Write a corpus under `out_dir` and return its manifest (also saved as
/// `out_dir/manifest.json`). Output is a pure function of `spec`.
pub fn synthesize_corpus(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    use rayon::prelude::*;
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let map = PhonemeMap::default();
    let mut jobs = Vec::new();
    for s in 0..spec.n_speakers {
        let g = spec.gender_of(s);
        let sid = format!("S{:02}{}", s + 1, if g == Gender::M { "M" } else { "F" });
        for j in 0..spec.sentences_per_speaker {
            jobs.push((s, sid.clone(), g, j, s * spec.sentences_per_speaker + j));
        }
    }
    let utterances = jobs
        .par_iter()
        .map(|(s, sid, g, j, index)| -> Result<Utterance> {
            let spk = speaker(spec, *s);
            let r = render_utterance(spec, &map, &spk, *index)?;
            let dir = out_dir.join(sid);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let id = format!("{sid}_{:03}", j + 1);
            let rel = |ext: &str| Path::new(sid).join(format!("{id}.{ext}"));
            let (video_path, audio_path, transcript_path) = (rel("rvf"), rel("wav"), rel("tsv"));
            write_rvf(&r.video, out_dir.join(&video_path))?;
            write_wav(&r.audio, out_dir.join(&audio_path))?;
            write_transcript(&r.transcript, out_dir.join(&transcript_path))?;
            Ok(Utterance {
                id,
                speaker_id: sid.clone(),
                gender: *g,
                video_path,
                audio_path,
                transcript_path,
                fps: spec.fps,
                sample_rate: spec.sample_rate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest::new(utterances, out_dir);
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Exact frame rate as a fraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rational {
    pub num: u32,
    pub den: u32,
}

impl Rational {
    pub const fn new(num: u32, den: u32) -> Self {
        Self { num, den }
    }

    pub const fn integer(n: u32) -> Self {
        Self { num: n, den: 1 }
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn is_positive(self) -> bool {
        self.num > 0 && self.den > 0
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
}

/// One recording with its speaker metadata and data files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: String,
    pub gender: Gender,
    pub video_path: PathBuf,
    pub audio_path: PathBuf,
    pub transcript_path: PathBuf,
    pub fps: Rational,
    pub sample_rate: u32,
}

/// A list of utterances; relative paths resolve against `root`.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub utterances: Vec<Utterance>,
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(utterances: Vec<Utterance>, root: impl Into<PathBuf>) -> Self {
        Self { utterances, root: root.into() }
    }

    /// Load a JSON manifest and validate it. Audio files are checked separately
    /// by [`Manifest::check_audio`], since video-only work never opens them.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let utterances: Vec<Utterance> = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self { utterances, root };
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.utterances)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    fn validate(&self) -> Result<()> {
        let mut ids = std::collections::BTreeSet::new();
        for u in &self.utterances {
            if !ids.insert(&u.id) {
                return Err(Error::Format(format!("duplicate utterance id {}", u.id)));
            }
            if !u.fps.is_positive() {
                return Err(Error::Format(format!("{}: fps must be positive", u.id)));
            }
            if u.sample_rate == 0 {
                return Err(Error::Format(format!("{}: sample_rate must be positive", u.id)));
            }
            for p in [&u.video_path, &u.transcript_path] {
                let full = self.resolve(p);
                if !full.exists() {
                    return Err(Error::io(full, std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file missing")));
                }
            }
        }
        Ok(())
    }

    pub fn check_audio(&self) -> Result<()> {
        for u in &self.utterances {
            let full = self.resolve(&u.audio_path);
            if !full.exists() {
                return Err(Error::io(full, std::io::Error::new(std::io::ErrorKind::NotFound, "audio file missing")));
            }
        }
        Ok(())
    }

    /// Distinct speakers with their gender, sorted by id.
    pub fn speakers(&self) -> Vec<(String, Gender)> {
        let mut v: Vec<(String, Gender)> = self.utterances.iter().map(|u| (u.speaker_id.clone(), u.gender)).collect();
        v.sort();
        v.dedup();
        v
    }

    /// SHA-256 over the manifest's canonical JSON.
    pub fn content_hash(&self) -> [u8; 32] {
        let json = serde_json::to_vec(&self.utterances).expect("manifest serializes");
        acc_tensor::checkpoint::sha256(&json)
    }
}

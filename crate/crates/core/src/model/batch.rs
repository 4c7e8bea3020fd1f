use acc_tensor::Tensor;

use crate::alignment::FrameExample;
use crate::encoders::{patchify_batch, VitConfig};
use crate::phonology::Dimension;
use crate::{Error, Result};

/// Model inputs for a group of frames. Either modality may be absent.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[B, N, C P^2]`, pixels scaled to `[-0.5, 0.5]`.
    pub patches: Option<Tensor>,
    /// `[B, W, 1]`, samples scaled to `[-1, 1)`.
    pub windows: Option<Tensor>,
    pub labels: Vec<usize>,
    pub mask: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn from_examples(examples: &[&FrameExample], dim: Dimension, vit: &VitConfig, video: bool, audio: bool) -> Result<Batch> {
        let b = examples.len();
        let patches = if video {
            let (s, c) = (vit.image_size, vit.channels);
            let mut px = Vec::with_capacity(b * c * s * s);
            for e in examples {
                if e.frame.len() != s * s {
                    return Err(Error::Format(format!(
                        "{} frame {}: {} pixels, expected {s}x{s}",
                        e.utterance_id,
                        e.frame_index,
                        e.frame.len()
                    )));
                }
                for _ in 0..c {
                    px.extend(e.frame.iter().map(|&p| p as f64 / 255.0 - 0.5));
                }
            }
            let data = patchify_batch(&px, b, c, s, s, vit.patch_size);
            Some(Tensor::new(&[b, vit.n_patches(), vit.patch_dim()], data)?)
        } else {
            None
        };
        let windows = if audio {
            let mut w_len = None;
            let mut data = Vec::new();
            for e in examples {
                let w = e.audio_window.as_ref().ok_or_else(|| {
                    Error::Format(format!("{} frame {}: audio window missing", e.utterance_id, e.frame_index))
                })?;
                if *w_len.get_or_insert(w.len()) != w.len() {
                    return Err(Error::Format("audio windows differ in length".into()));
                }
                data.extend(w.iter().map(|&s| s as f64 / 32768.0));
            }
            Some(Tensor::new(&[b, w_len.unwrap_or(0), 1], data)?)
        } else {
            None
        };
        let labels = examples.iter().map(|e| e.label(dim).unwrap_or(0)).collect();
        let mask = examples.iter().map(|e| if e.masked(dim) { 0.0 } else { 1.0 }).collect();
        Ok(Batch { patches, windows, labels, mask })
    }
}

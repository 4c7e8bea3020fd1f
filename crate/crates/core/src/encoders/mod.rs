//! Image and audio encoders.

mod audio;
pub mod nn;
mod vit;

pub use audio::{AttentionPool, AudioConfig, AudioEncoder, ConvLayer};
pub use vit::{patchify, patchify_batch, unpatchify, PositionalEncoding, Vit, VitConfig};

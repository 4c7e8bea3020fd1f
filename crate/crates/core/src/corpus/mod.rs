//! Corpus I/O: manifests, transcripts, WAV audio, RVF1/PGM video, and the
//! synthetic corpus generator.

mod manifest;
pub mod resample;
mod stats;
pub mod synth;
mod transcript;
pub mod video;
pub mod wav;

pub use manifest::{Gender, Manifest, Rational, Utterance};
pub use stats::{class_histogram, ClassHistogram};
pub use synth::{synthesize_corpus, SynthSpec};
pub use transcript::{parse_transcript, parse_transcript_str, write_transcript, Interval, Transcript};
pub use video::{read_video, rvf_frame_count, write_rvf, VideoClip};
pub use wav::{read_audio, read_wav, write_wav, AudioClip};

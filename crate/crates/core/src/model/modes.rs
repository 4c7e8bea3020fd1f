//! Classification configurations behind a common interface, selected by name.

use acc_tensor::{ParamStore, Tape, Var};
use rand_chacha::ChaCha8Rng;

use super::projection::Projection;
use super::{Batch, ModelConfig};
use crate::encoders::nn::{Ctx, Linear};
use crate::encoders::{AttentionPool, AudioEncoder, Vit};
use crate::{Error, Result};

/// Sub-networks a mode may own.
#[derive(Clone, Debug, Default)]
pub struct Parts {
    pub vit: Option<Vit>,
    pub audio: Option<AudioEncoder>,
    pub pool: Option<AttentionPool>,
    pub img_proj: Option<Projection>,
    pub aud_proj: Option<Projection>,
    pub head: Option<Linear>,
}

/// Forward results. `img`/`aud` are the aligned `[B, T, D]` projections
/// used by the contrastive term.
#[derive(Clone, Copy, Debug)]
pub struct Outputs {
    pub logits: Var,
    pub img: Option<Var>,
    pub aud: Option<Var>,
}

/// What a model needs to build its parts.
pub struct BuildSpec<'a> {
    pub cfg: &'a ModelConfig,
    pub window: usize,
    pub n_classes: usize,
}

pub trait Mode: Send + Sync {
    fn name(&self) -> &'static str;
    fn uses_video(&self) -> bool;
    /// Audio is consumed during training.
    fn uses_audio(&self) -> bool;
    /// Audio is consumed at inference time.
    fn inference_uses_audio(&self) -> bool {
        self.uses_audio()
    }
    fn build(&self, store: &mut ParamStore, spec: &BuildSpec, rng: &mut ChaCha8Rng) -> Result<Parts>;
    /// `training` selects the full graph (including the contrastive branch);
    /// otherwise only what inference needs is evaluated.
    fn forward(&self, parts: &Parts, tape: &mut Tape, store: &ParamStore, ctx: &mut Ctx, batch: &Batch, training: bool) -> Result<Outputs>;
}

fn input(tape: &mut Tape, t: &Option<acc_tensor::Tensor>, what: &str) -> Result<Var> {
    t.as_ref()
        .map(|t| tape.constant(t.clone()))
        .ok_or_else(|| Error::Config(format!("batch carries no {what}")))
}

fn part<'a, T>(p: &'a Option<T>, what: &str) -> Result<&'a T> {
    p.as_ref().ok_or_else(|| Error::Config(format!("model has no {what}")))
}

fn zero_head(store: &mut ParamStore, in_dim: usize, n_classes: usize, rng: &mut ChaCha8Rng) -> Result<Linear> {
    let head = Linear::new(store, "head", in_dim, n_classes, true, rng)?;
    store.get_mut(head.w).value_mut().data_mut().fill(0.0);
    Ok(head)
}

fn cls_token(tape: &mut Tape, tokens: Var) -> Result<Var> {
    let s = tape.shape(tokens).to_vec();
    let c = tape.narrow(tokens, 1, 0, 1)?;
    Ok(tape.reshape(c, &[s[0], s[2]])?)
}

fn pooled_audio(parts: &Parts, tape: &mut Tape, store: &ParamStore, ctx: &mut Ctx, batch: &Batch) -> Result<Var> {
    let w = input(tape, &batch.windows, "audio")?;
    let z = part(&parts.audio, "audio encoder")?.forward(tape, store, ctx, w)?;
    part(&parts.pool, "attention pool")?.forward(tape, store, z)
}

/// Vision transformer, [CLS] state to a linear head.
pub struct UniV;
/// Audio encoder with attention pooling to a linear head.
pub struct UniA;
/// [CLS] state concatenated with pooled audio, then a linear head.
pub struct Fusion;
/// Image patch tokens and audio latents projected to a shared `[T, D]` space
/// and pulled together by a cosine loss; classifies from the image side only.
pub struct Contrast;

impl Mode for UniV {
    fn name(&self) -> &'static str {
        "univ"
    }
    fn uses_video(&self) -> bool {
        true
    }
    fn uses_audio(&self) -> bool {
        false
    }
    fn build(&self, store: &mut ParamStore, spec: &BuildSpec, rng: &mut ChaCha8Rng) -> Result<Parts> {
        let vit = Vit::new(store, "vit", &spec.cfg.vit, rng)?;
        let head = zero_head(store, spec.cfg.vit.embed_dim, spec.n_classes, rng)?;
        Ok(Parts { vit: Some(vit), head: Some(head), ..Default::default() })
    }
    fn forward(&self, parts: &Parts, tape: &mut Tape, store: &ParamStore, ctx: &mut Ctx, batch: &Batch, _: bool) -> Result<Outputs> {
        let x = input(tape, &batch.patches, "video")?;
        let tokens = part(&parts.vit, "vit")?.forward(tape, store, ctx, x)?;
        let cls = cls_token(tape, tokens)?;
        let logits = part(&parts.head, "head")?.forward(tape, store, cls)?;
        Ok(Outputs { logits, img: None, aud: None })
    }
}

impl Mode for UniA {
    fn name(&self) -> &'static str {
        "unia"
    }
    fn uses_video(&self) -> bool {
        false
    }
    fn uses_audio(&self) -> bool {
        true
    }
    fn build(&self, store: &mut ParamStore, spec: &BuildSpec, rng: &mut ChaCha8Rng) -> Result<Parts> {
        let a = &spec.cfg.audio;
        let audio = AudioEncoder::new(store, "audio", a, spec.window, rng)?;
        let pool = AttentionPool::new(store, "pool", a.hidden, rng)?;
        let head = zero_head(store, a.hidden, spec.n_classes, rng)?;
        Ok(Parts { audio: Some(audio), pool: Some(pool), head: Some(head), ..Default::default() })
    }
    fn forward(&self, parts: &Parts, tape: &mut Tape, store: &ParamStore, ctx: &mut Ctx, batch: &Batch, _: bool) -> Result<Outputs> {
        let pooled = pooled_audio(parts, tape, store, ctx, batch)?;
        let logits = part(&parts.head, "head")?.forward(tape, store, pooled)?;
        Ok(Outputs { logits, img: None, aud: None })
    }
}

impl Mode for Fusion {
    fn name(&self) -> &'static str {
        "fusion"
    }
    fn uses_video(&self) -> bool {
        true
    }
    fn uses_audio(&self) -> bool {
        true
    }
    fn build(&self, store: &mut ParamStore, spec: &BuildSpec, rng: &mut ChaCha8Rng) -> Result<Parts> {
        let a = &spec.cfg.audio;
        let vit = Vit::new(store, "vit", &spec.cfg.vit, rng)?;
        let audio = AudioEncoder::new(store, "audio", a, spec.window, rng)?;
        let pool = AttentionPool::new(store, "pool", a.hidden, rng)?;
        let head = zero_head(store, spec.cfg.vit.embed_dim + a.hidden, spec.n_classes, rng)?;
        Ok(Parts { vit: Some(vit), audio: Some(audio), pool: Some(pool), head: Some(head), ..Default::default() })
    }
    fn forward(&self, parts: &Parts, tape: &mut Tape, store: &ParamStore, ctx: &mut Ctx, batch: &Batch, _: bool) -> Result<Outputs> {
        let x = input(tape, &batch.patches, "video")?;
        let tokens = part(&parts.vit, "vit")?.forward(tape, store, ctx, x)?;
        let cls = cls_token(tape, tokens)?;
        let pooled = pooled_audio(parts, tape, store, ctx, batch)?;
        let joint = tape.concat(&[cls, pooled], 1)?;
        let logits = part(&parts.head, "head")?.forward(tape, store, joint)?;
        Ok(Outputs { logits, img: None, aud: None })
    }
}

impl Contrast {
    /// Projected image tokens `[B, T, D]`.
    fn image_side(parts: &Parts, tape: &mut Tape, store: &ParamStore, ctx: &mut Ctx, batch: &Batch) -> Result<Var> {
        let x = input(tape, &batch.patches, "video")?;
        let tokens = part(&parts.vit, "vit")?.forward(tape, store, ctx, x)?;
        let s = tape.shape(tokens).to_vec();
        let patches = tape.narrow(tokens, 1, 1, s[1] - 1)?;
        part(&parts.img_proj, "image projection")?.forward(tape, store, ctx, patches)
    }
}

impl Mode for Contrast {
    fn name(&self) -> &'static str {
        "contrast"
    }
    fn uses_video(&self) -> bool {
        true
    }
    fn uses_audio(&self) -> bool {
        true
    }
    fn inference_uses_audio(&self) -> bool {
        false
    }
    fn build(&self, store: &mut ParamStore, spec: &BuildSpec, rng: &mut ChaCha8Rng) -> Result<Parts> {
        let (v, a, m) = (&spec.cfg.vit, &spec.cfg.audio, &spec.cfg.mode);
        let vit = Vit::new(store, "vit", v, rng)?;
        let audio = AudioEncoder::new(store, "audio", a, spec.window, rng)?;
        let img_proj = Projection::new(store, "proj_img", v.n_patches(), v.embed_dim, m.t, m.d, rng)?;
        let aud_proj = Projection::new(store, "proj_aud", audio.output_len(), a.hidden, m.t, m.d, rng)?;
        let head = zero_head(store, m.d, spec.n_classes, rng)?;
        Ok(Parts {
            vit: Some(vit),
            audio: Some(audio),
            img_proj: Some(img_proj),
            aud_proj: Some(aud_proj),
            head: Some(head),
            ..Default::default()
        })
    }
    fn forward(&self, parts: &Parts, tape: &mut Tape, store: &ParamStore, ctx: &mut Ctx, batch: &Batch, training: bool) -> Result<Outputs> {
        let img = Self::image_side(parts, tape, store, ctx, batch)?;
        let mean = tape.mean_axis(img, 1)?;
        let logits = part(&parts.head, "head")?.forward(tape, store, mean)?;
        if !training {
            return Ok(Outputs { logits, img: Some(img), aud: None });
        }
        let w = input(tape, &batch.windows, "audio")?;
        let z = part(&parts.audio, "audio encoder")?.forward(tape, store, ctx, w)?;
        let aud = part(&parts.aud_proj, "audio projection")?.forward(tape, store, ctx, z)?;
        Ok(Outputs { logits, img: Some(img), aud: Some(aud) })
    }
}

static REGISTRY: [&dyn Mode; 4] = [&UniV, &UniA, &Fusion, &Contrast];

/// All registered modes.
pub fn registry() -> &'static [&'static dyn Mode] {
    &REGISTRY
}

/// Look up a mode by name (case-insensitive).
pub fn lookup(name: &str) -> Result<&'static dyn Mode> {
    REGISTRY
        .iter()
        .copied()
        .find(|m| m.name().eq_ignore_ascii_case(name))
        .ok_or_else(|| {
            let known: Vec<_> = REGISTRY.iter().map(|m| m.name()).collect();
            Error::Config(format!("unknown mode {name:?}; known modes: {}", known.join(", ")))
        })
}

//! Classification modes, class weighting, losses and checkpoints.

mod batch;
pub mod modes;
mod projection;

use std::path::Path;

use acc_tensor::{Checkpoint, ParamId, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use batch::Batch;
pub use modes::{lookup, registry, Mode, Outputs, Parts};
pub use projection::Projection;

use crate::encoders::nn::Ctx;
use crate::encoders::{AudioConfig, VitConfig};
use crate::phonology::Dimension;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Negatives {
    None,
    InBatchMargin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeConfig {
    pub mode: String,
    pub dimension: Dimension,
    pub lambda: f64,
    /// Length of the shared contrastive sequence.
    pub t: usize,
    /// Width of the shared contrastive space.
    pub d: usize,
    pub negatives: Negatives,
    pub margin: f64,
}

impl Default for ModeConfig {
    fn default() -> Self {
        Self {
            mode: "contrast".into(),
            dimension: Dimension::Voicing,
            lambda: 0.1,
            t: 8,
            d: 64,
            negatives: Negatives::None,
            margin: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub mode: ModeConfig,
    pub vit: VitConfig,
    pub audio: AudioConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let m = &self.mode;
        lookup(&m.mode)?;
        if !(m.lambda >= 0.0) || !m.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", m.lambda)));
        }
        if m.t == 0 || m.d == 0 {
            return Err(Error::Config("contrastive t and d must be >= 1".into()));
        }
        self.vit.validate()
    }
}

/// Learnable class weights `w = C softmax(a)`, with `a` starting at the log
/// of the inverse class frequencies.
#[derive(Clone, Copy, Debug)]
pub struct ClassWeights {
    pub logits: ParamId,
    pub n_classes: usize,
}

impl ClassWeights {
    pub const PARAM: &'static str = "class_weights.a";

    /// Counts below one are treated as one.
    pub fn new(store: &mut ParamStore, counts: &[f64]) -> Result<Self> {
        let c = counts.len();
        let total: f64 = counts.iter().map(|&n| n.max(1.0)).sum();
        let a: Vec<f64> = counts.iter().map(|&n| (total / n.max(1.0)).ln()).collect();
        Ok(Self { logits: store.add(Self::PARAM, Tensor::new(&[c], a)?)?, n_classes: c })
    }

    pub fn on_tape(&self, tape: &mut Tape, store: &ParamStore) -> Var {
        let a = tape.param(store, self.logits);
        let s = tape.softmax(a);
        tape.scale(s, self.n_classes as f64)
    }
}

/// `C softmax(a)` evaluated directly.
pub fn effective_class_weights(a: &[f64]) -> Vec<f64> {
    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = a.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| a.len() as f64 * v / s).collect()
}

/// Cosine embedding loss between flattened `[B, T, D]` sequences:
/// `mean_i (1 - cos(img_i, aud_i))`, plus, with in-batch negatives, the mean
/// of `max(0, cos(img_i, aud_j) - margin)` over `i != j`.
pub fn contrastive_loss(tape: &mut Tape, img: Var, aud: Var, negatives: Negatives, margin: f64) -> Result<Var> {
    let (si, sa) = (tape.shape(img).to_vec(), tape.shape(aud).to_vec());
    if si != sa || si.is_empty() {
        return Err(acc_tensor::TensorError::ShapeMismatch(format!("contrastive inputs {si:?} vs {sa:?}")).into());
    }
    let b = si[0];
    let flat: usize = si[1..].iter().product();
    let u = tape.reshape(img, &[b, flat])?;
    let v = tape.reshape(aud, &[b, flat])?;
    let cos = tape.cosine_similarity(u, v)?;
    let m = tape.mean(cos);
    let neg_m = tape.scale(m, -1.0);
    let pos = tape.add_scalar(neg_m, 1.0);
    if negatives == Negatives::None || b < 2 {
        return Ok(pos);
    }
    let un = tape.l2_normalize(u, acc_tensor::tape::COSINE_EPS);
    let vn = tape.l2_normalize(v, acc_tensor::tape::COSINE_EPS);
    let sim = tape.matmul_ext(un, vn, true)?;
    let shifted = tape.add_scalar(sim, -margin);
    let hinge = tape.relu(shifted);
    let off = Tensor::new(&[b, b], (0..b * b).map(|i| if i / b == i % b { 0.0 } else { 1.0 }).collect())?;
    let off = tape.constant(off);
    let masked = tape.mul(hinge, off)?;
    let total = tape.sum(masked);
    let neg = tape.scale(total, 1.0 / (b * (b - 1)) as f64);
    Ok(tape.add(pos, neg)?)
}

/// Loss graph nodes for logging.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub cls: Var,
    pub cos: Option<Var>,
}

/// `L = L_cls + lambda L_cos`. With `lambda = 0` (or no contrastive pair) the
/// total is the classification node itself.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    mask: &[f64],
    weights: Var,
    pair: Option<(Var, Var)>,
    lambda: f64,
    negatives: Negatives,
    margin: f64,
) -> Result<LossParts> {
    let cls = tape.weighted_cross_entropy(logits, weights, labels, mask)?;
    let cos = match pair {
        Some((i, a)) => Some(contrastive_loss(tape, i, a, negatives, margin)?),
        None => None,
    };
    let total = match cos {
        Some(c) if lambda != 0.0 => {
            let s = tape.scale(c, lambda);
            tape.add(cls, s)?
        }
        _ => cls,
    };
    Ok(LossParts { total, cls, cos })
}

/// Metadata stored alongside checkpoint tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub mode: String,
    pub n_classes: usize,
    pub window: usize,
    pub model: ModelConfig,
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// A configured network with its parameters.
pub struct Model {
    pub cfg: ModelConfig,
    pub window: usize,
    pub n_classes: usize,
    pub store: ParamStore,
    pub weights: ClassWeights,
    mode: &'static dyn Mode,
    parts: Parts,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model").field("mode", &self.mode.name()).field("params", &self.store.num_scalars()).finish()
    }
}

impl Model {
    /// Build with class frequencies `counts` (used for the weight prior) and
    /// an initialization seed.
    pub fn new(cfg: &ModelConfig, window: usize, counts: &[f64], seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mode = lookup(&cfg.mode.mode)?;
        let n_classes = cfg.mode.dimension.n_classes();
        if counts.len() != n_classes {
            return Err(Error::Config(format!("{} class counts for {} classes", counts.len(), n_classes)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let parts = mode.build(&mut store, &modes::BuildSpec { cfg, window, n_classes }, &mut rng)?;
        let weights = ClassWeights::new(&mut store, counts)?;
        Ok(Self { cfg: cfg.clone(), window, n_classes, store, weights, mode, parts })
    }

    pub fn mode(&self) -> &'static dyn Mode {
        self.mode
    }

    pub fn parts(&self) -> &Parts {
        &self.parts
    }

    pub fn dimension(&self) -> Dimension {
        self.cfg.mode.dimension
    }

    /// Forward with an explicit parameter store (used by gradient checks).
    pub fn forward_with(&self, store: &ParamStore, tape: &mut Tape, ctx: &mut Ctx, batch: &Batch, training: bool) -> Result<Outputs> {
        self.mode.forward(&self.parts, tape, store, ctx, batch, training)
    }

    pub fn loss_with(&self, store: &ParamStore, tape: &mut Tape, ctx: &mut Ctx, batch: &Batch) -> Result<LossParts> {
        let out = self.forward_with(store, tape, ctx, batch, true)?;
        let w = self.weights.on_tape(tape, store);
        let pair = out.img.zip(out.aud);
        let m = &self.cfg.mode;
        total_loss(tape, out.logits, &batch.labels, &batch.mask, w, pair, m.lambda, m.negatives, m.margin)
    }

    pub fn loss(&self, tape: &mut Tape, ctx: &mut Ctx, batch: &Batch) -> Result<LossParts> {
        self.loss_with(&self.store, tape, ctx, batch)
    }

    /// Eval-mode logits `[B, C]` using only the inputs inference needs.
    pub fn logits(&self, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let out = self.forward_with(&self.store, &mut tape, &mut Ctx::eval(), batch, false)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Image-only prediction of a Contrast model from `[B, N, C P^2]` patches.
    pub fn predict_contrastive(&self, patches: &Tensor) -> Result<Tensor> {
        if self.mode.name() != modes::Contrast.name() {
            return Err(Error::WrongMode { expected: "contrast".into(), found: self.mode.name().into() });
        }
        let b = patches.shape().first().copied().unwrap_or(0);
        let batch = Batch { patches: Some(patches.clone()), windows: None, labels: vec![0; b], mask: vec![1.0; b] };
        self.logits(&batch)
    }

    pub fn effective_weights(&self) -> Vec<f64> {
        effective_class_weights(self.store.value(self.weights.logits).data())
    }

    pub fn checkpoint(&self, config_hash: [u8; 32], extra: serde_json::Value) -> Result<Checkpoint> {
        let meta = CheckpointMeta {
            mode: self.mode.name().into(),
            n_classes: self.n_classes,
            window: self.window,
            model: self.cfg.clone(),
            extra,
        };
        Ok(Checkpoint::from_store(&self.store, config_hash, serde_json::to_string(&meta)?))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, CheckpointMeta)> {
        let meta: CheckpointMeta = serde_json::from_str(&ck.metadata)?;
        let mut model = Model::new(&meta.model, meta.window, &vec![1.0; meta.n_classes], 0)?;
        ck.apply_to(&mut model.store)?;
        Ok((model, meta))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, CheckpointMeta)> {
        let path = path.as_ref();
        let ck = Checkpoint::load(path).map_err(|e| match e {
            acc_tensor::TensorError::Io(io) => Error::io(path, io),
            other => other.into(),
        })?;
        Self::from_checkpoint(&ck)
    }
}

#[cfg(test)]
mod tests;

use acc_tensor::param::trunc_normal;
use acc_tensor::{conv_out_len, ParamId, ParamStore, Tape, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::{sinusoidal, Block, Ctx, LayerNorm, Linear, INIT_STD};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayer {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudioConfig {
    pub conv: Vec<ConvLayer>,
    pub depth: usize,
    pub heads: usize,
    pub hidden: usize,
    pub mlp_dim: usize,
    pub dropout: f64,
    pub frozen: bool,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self {
            conv: vec![ConvLayer { channels: 32, kernel: 10, stride: 5 }, ConvLayer { channels: 64, kernel: 8, stride: 4 }],
            depth: 2,
            heads: 4,
            hidden: 64,
            mlp_dim: 128,
            dropout: 0.0,
            frozen: true,
        }
    }
}

impl AudioConfig {
    /// Latent sequence length for a window of `w` samples, or 0 if too short.
    pub fn output_len(&self, w: usize) -> usize {
        self.conv.iter().fold(w, |len, l| if len < l.kernel { 0 } else { conv_out_len(len, l.kernel, l.stride) })
    }

    pub fn validate(&self, w: usize) -> Result<()> {
        if self.conv.is_empty() || self.conv.iter().any(|l| l.channels == 0 || l.kernel == 0 || l.stride == 0) {
            return Err(Error::Config("audio conv stack needs at least one layer with positive sizes".into()));
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!("audio hidden {} is not divisible by {} heads", self.hidden, self.heads)));
        }
        if self.output_len(w) == 0 {
            return Err(Error::Config(format!("a {w}-sample window is shorter than the audio conv stack's receptive field")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("audio dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct ConvBlock {
    spec: ConvLayer,
    linear: Linear,
    norm: LayerNorm,
}

/// Strided 1-D conv feature extractor followed by transformer context layers.
#[derive(Clone, Debug)]
pub struct AudioEncoder {
    pub cfg: AudioConfig,
    pub window: usize,
    convs: Vec<ConvBlock>,
    proj: Linear,
    blocks: Vec<Block>,
    norm: LayerNorm,
}

impl AudioEncoder {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &AudioConfig, window: usize, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate(window)?;
        let mut in_ch = 1;
        let mut convs = Vec::new();
        for (i, l) in cfg.conv.iter().enumerate() {
            let n = format!("{name}.conv{i}");
            convs.push(ConvBlock {
                spec: *l,
                linear: Linear::new(store, &n, l.kernel * in_ch, l.channels, true, rng)?,
                norm: LayerNorm::new(store, &format!("{n}.ln"), l.channels)?,
            });
            in_ch = l.channels;
        }
        let proj = Linear::new(store, &format!("{name}.proj"), in_ch, cfg.hidden, true, rng)?;
        let blocks = (0..cfg.depth)
            .map(|i| Block::new(store, &format!("{name}.block{i}"), cfg.hidden, cfg.heads, cfg.mlp_dim, cfg.dropout, rng))
            .collect::<Result<_>>()?;
        let norm = LayerNorm::new(store, &format!("{name}.norm"), cfg.hidden)?;
        if cfg.frozen {
            store.set_frozen_prefix(&format!("{name}."), true);
        }
        Ok(Self { cfg: cfg.clone(), window, convs, proj, blocks, norm })
    }

    pub fn output_len(&self) -> usize {
        self.cfg.output_len(self.window)
    }

    /// `[B, W, 1]` samples to `[B, T_a, D_a]` latents. A frozen encoder always
    /// runs in eval mode.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let mut eval = Ctx::eval();
        let ctx = if self.cfg.frozen { &mut eval } else { ctx };
        let mut h = x;
        for c in &self.convs {
            h = tape.unfold1d(h, c.spec.kernel, c.spec.stride)?;
            h = c.linear.forward(tape, store, h)?;
            h = c.norm.forward(tape, store, h)?;
            h = tape.gelu(h);
        }
        h = self.proj.forward(tape, store, h)?;
        let pos = tape.constant(sinusoidal(self.output_len(), self.cfg.hidden));
        h = tape.add_bias(h, pos)?;
        for blk in &self.blocks {
            h = blk.forward(tape, store, ctx, h)?;
        }
        self.norm.forward(tape, store, h)
    }
}

/// Additive attention pooling: `s_t = q . tanh(M h_t)`, output `sum_t softmax(s)_t h_t`.
#[derive(Clone, Debug)]
pub struct AttentionPool {
    pub m: Linear,
    pub q: ParamId,
}

impl AttentionPool {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let m = Linear::new(store, &format!("{name}.m"), dim, dim, false, rng)?;
        let q = store.add(format!("{name}.q"), trunc_normal(&[dim, 1], INIT_STD, rng))?;
        Ok(Self { m, q })
    }

    /// Pooling weights `[B, T]`.
    pub fn weights(&self, tape: &mut Tape, store: &ParamStore, seq: Var) -> Result<Var> {
        let s = tape.shape(seq).to_vec();
        let h = self.m.forward(tape, store, seq)?;
        let h = tape.tanh(h);
        let q = tape.param(store, self.q);
        let scores = tape.matmul(h, q)?;
        let scores = tape.reshape(scores, &[s[0], s[1]])?;
        Ok(tape.softmax(scores))
    }

    /// `[B, T, D]` to `[B, D]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, seq: Var) -> Result<Var> {
        let s = tape.shape(seq).to_vec();
        let a = self.weights(tape, store, seq)?;
        let a = tape.reshape(a, &[s[0], 1, s[1]])?;
        let y = tape.matmul(a, seq)?;
        Ok(tape.reshape(y, &[s[0], s[2]])?)
    }
}

//! Layers built on the autodiff tape.

use acc_tensor::param::trunc_normal;
use acc_tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::Result;

pub const INIT_STD: f64 = 0.02;
pub const LN_EPS: f64 = 1e-5;

/// Forward-pass state: train/eval switch and a dropout key sequence.
#[derive(Clone, Debug)]
pub struct Ctx {
    pub train: bool,
    key: u64,
    counter: u64,
}

impl Ctx {
    pub fn eval() -> Self {
        Self { train: false, key: 0, counter: 0 }
    }

    /// Training mode; dropout masks are drawn from streams derived from `key`.
    pub fn train(key: u64) -> Self {
        Self { train: true, key, counter: 0 }
    }

    pub fn dropout(&mut self, tape: &mut Tape, x: Var, rate: f64) -> Result<Var> {
        if !self.train || rate <= 0.0 {
            return Ok(x);
        }
        self.counter += 1;
        Ok(tape.dropout(x, rate, mix(self.key, self.counter))?)
    }
}

/// SplitMix64-style combination of two words.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, bias: bool, rng: &mut impl Rng) -> Result<Self> {
        let w = store.add(format!("{name}.w"), trunc_normal(&[in_dim, out_dim], INIT_STD, rng))?;
        let b = if bias { Some(store.add(format!("{name}.b"), Tensor::zeros(&[out_dim]))?) } else { None };
        Ok(Self { w, b, in_dim, out_dim })
    }

    /// `x @ w + b` over the last axis.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = tape.param(store, b);
                Ok(tape.add_bias(y, b)?)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add(format!("{name}.g"), Tensor::ones(&[dim]))?,
            bias: store.add(format!("{name}.b"), Tensor::zeros(&[dim]))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        Ok(tape.layer_norm(x, g, b, LN_EPS)?)
    }
}

/// Two linear layers with GELU between.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
    pub dropout: f64,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, dims: (usize, usize, usize), dropout: f64, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), dims.0, dims.1, true, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), dims.1, dims.2, true, rng)?,
            dropout,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, store, x)?;
        let h = tape.gelu(h);
        let h = ctx.dropout(tape, h, self.dropout)?;
        self.fc2.forward(tape, store, h)
    }
}

/// Multi-head self-attention over `[B, N, D]`.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl SelfAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(crate::Error::Config(format!("{name}: width {dim} is not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, true, rng)?,
            k: Linear::new(store, &format!("{name}.k"), dim, dim, true, rng)?,
            v: Linear::new(store, &format!("{name}.v"), dim, dim, true, rng)?,
            out: Linear::new(store, &format!("{name}.o"), dim, dim, true, rng)?,
            heads,
        })
    }

    fn split_heads(&self, tape: &mut Tape, x: Var, b: usize, n: usize, d: usize) -> Result<Var> {
        let h = self.heads;
        let x = tape.reshape(x, &[b, n, h, d / h])?;
        let x = tape.permute(x, &[0, 2, 1, 3])?;
        Ok(tape.reshape(x, &[b * h, n, d / h])?)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        let (b, n, d) = (s[0], s[1], s[2]);
        let q = self.q.forward(tape, store, x)?;
        let k = self.k.forward(tape, store, x)?;
        let v = self.v.forward(tape, store, x)?;
        let q = self.split_heads(tape, q, b, n, d)?;
        let k = self.split_heads(tape, k, b, n, d)?;
        let v = self.split_heads(tape, v, b, n, d)?;
        let scores = tape.matmul_ext(q, k, true)?;
        let scores = tape.scale(scores, 1.0 / ((d / self.heads) as f64).sqrt());
        let attn = tape.softmax(scores);
        let y = tape.matmul(attn, v)?;
        let y = tape.reshape(y, &[b, self.heads, n, d / self.heads])?;
        let y = tape.permute(y, &[0, 2, 1, 3])?;
        let y = tape.reshape(y, &[b, n, d])?;
        self.out.forward(tape, store, y)
    }
}

/// Pre-norm transformer block.
#[derive(Clone, Debug)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: SelfAttention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
    pub dropout: f64,
}

impl Block {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, mlp_dim: usize, dropout: f64, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim)?,
            attn: SelfAttention::new(store, &format!("{name}.attn"), dim, heads, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), (dim, mlp_dim, dim), dropout, rng)?,
            dropout,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.ln1.forward(tape, store, x)?;
        let h = self.attn.forward(tape, store, h)?;
        let h = ctx.dropout(tape, h, self.dropout)?;
        let x = tape.add(x, h)?;
        let h = self.ln2.forward(tape, store, x)?;
        let h = self.mlp.forward(tape, store, ctx, h)?;
        let h = ctx.dropout(tape, h, self.dropout)?;
        Ok(tape.add(x, h)?)
    }
}

/// Fixed sinusoidal position table `[n, d]`.
pub fn sinusoidal(n: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * d);
    for pos in 0..n {
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = pos as f64 * freq;
            data.push(if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    Tensor::new(&[n, d], data).expect("table shape")
}

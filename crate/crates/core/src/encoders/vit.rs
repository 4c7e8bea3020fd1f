use acc_tensor::param::trunc_normal;
use acc_tensor::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::{sinusoidal, Block, Ctx, LayerNorm, Linear, INIT_STD};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionalEncoding {
    Learned,
    Sinusoidal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VitConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    pub dropout: f64,
    pub positional: PositionalEncoding,
}

impl Default for VitConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            patch_size: 16,
            channels: 1,
            embed_dim: 64,
            depth: 2,
            heads: 4,
            mlp_dim: 128,
            dropout: 0.1,
            positional: PositionalEncoding::Learned,
        }
    }
}

impl VitConfig {
    pub fn n_patches(&self) -> usize {
        (self.image_size / self.patch_size).pow(2)
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!("image_size {} is not divisible by patch_size {}", self.image_size, self.patch_size)));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!("embed_dim {} is not divisible by {} heads", self.embed_dim, self.heads)));
        }
        if self.channels == 0 || self.depth == 0 || self.mlp_dim == 0 {
            return Err(Error::Config("vit channels, depth and mlp_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("vit dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Split a `[C, H, W]` image into row-major `P x P` patches, each flattened
/// channel-major: `[(H/P)(W/P), C P^2]`.
pub fn patchify(image: &Tensor, p: usize) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 3 || p == 0 || s[1] % p != 0 || s[2] % p != 0 {
        return Err(TensorError::ShapeMismatch(format!("cannot patchify {s:?} with patch {p}")).into());
    }
    let data = patchify_batch(image.data(), 1, s[0], s[1], s[2], p);
    Ok(Tensor::new(&[(s[1] / p) * (s[2] / p), s[0] * p * p], data)?)
}

/// Patchify `b` images stored contiguously as `[B, C, H, W]`.
pub fn patchify_batch(images: &[f64], b: usize, c: usize, h: usize, w: usize, p: usize) -> Vec<f64> {
    let (gh, gw) = (h / p, w / p);
    let mut out = Vec::with_capacity(images.len());
    for bi in 0..b {
        let img = &images[bi * c * h * w..(bi + 1) * c * h * w];
        for py in 0..gh {
            for px in 0..gw {
                for ch in 0..c {
                    for y in 0..p {
                        let row = ch * h * w + (py * p + y) * w + px * p;
                        out.extend_from_slice(&img[row..row + p]);
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`patchify`].
pub fn unpatchify(tokens: &Tensor, c: usize, h: usize, w: usize, p: usize) -> Result<Tensor> {
    let (gh, gw) = (h / p, w / p);
    if tokens.shape() != [gh * gw, c * p * p] {
        return Err(TensorError::ShapeMismatch(format!("cannot unpatchify {:?} into [{c}, {h}, {w}]", tokens.shape())).into());
    }
    let mut out = vec![0.0; c * h * w];
    let t = tokens.data();
    let mut i = 0;
    for py in 0..gh {
        for px in 0..gw {
            for ch in 0..c {
                for y in 0..p {
                    let row = ch * h * w + (py * p + y) * w + px * p;
                    out[row..row + p].copy_from_slice(&t[i..i + p]);
                    i += p;
                }
            }
        }
    }
    Ok(Tensor::new(&[c, h, w], out)?)
}

/// Vision transformer with a [CLS] token.
#[derive(Clone, Debug)]
pub struct Vit {
    pub cfg: VitConfig,
    pub embed: Linear,
    pub cls: ParamId,
    pub pos: Option<ParamId>,
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
}

impl Vit {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &VitConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let embed = Linear::new(store, &format!("{name}.embed"), cfg.patch_dim(), d, true, rng)?;
        let cls = store.add(format!("{name}.cls"), trunc_normal(&[1, d], INIT_STD, rng))?;
        let pos = match cfg.positional {
            PositionalEncoding::Learned => Some(store.add(format!("{name}.pos"), trunc_normal(&[cfg.n_patches() + 1, d], INIT_STD, rng))?),
            PositionalEncoding::Sinusoidal => None,
        };
        let blocks = (0..cfg.depth)
            .map(|i| Block::new(store, &format!("{name}.block{i}"), d, cfg.heads, cfg.mlp_dim, cfg.dropout, rng))
            .collect::<Result<_>>()?;
        let norm = LayerNorm::new(store, &format!("{name}.norm"), d)?;
        Ok(Self { cfg: cfg.clone(), embed, cls, pos, blocks, norm })
    }

    /// `[B, N, C P^2]` patches to `[B, N + 1, D]` token states; row 0 is [CLS].
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, ctx: &mut Ctx, patches: Var) -> Result<Var> {
        let b = tape.shape(patches)[0];
        let x = self.embed.forward(tape, store, patches)?;
        let cls = tape.param(store, self.cls);
        let cls = tape.expand(cls, b);
        let x = tape.concat(&[cls, x], 1)?;
        let pos = match self.pos {
            Some(p) => tape.param(store, p),
            None => tape.constant(sinusoidal(self.cfg.n_patches() + 1, self.cfg.embed_dim)),
        };
        let mut x = tape.add_bias(x, pos)?;
        x = ctx.dropout(tape, x, self.cfg.dropout)?;
        for blk in &self.blocks {
            x = blk.forward(tape, store, ctx, x)?;
        }
        self.norm.forward(tape, store, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn patch_counts() {
        assert_eq!(VitConfig { image_size: 224, ..Default::default() }.n_patches(), 196);
        assert_eq!(VitConfig { image_size: 128, ..Default::default() }.n_patches(), 64);
    }

    #[test]
    fn patchify_roundtrip() {
        let img = Tensor::new(&[2, 8, 12], (0..192).map(|v| v as f64).collect()).unwrap();
        let t = patchify(&img, 4).unwrap();
        assert_eq!(t.shape(), [6, 32]);
        // first patch, first row of channel 0
        assert_eq!(&t.data()[..4], &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(unpatchify(&t, 2, 8, 12, 4).unwrap(), img);
        assert!(patchify(&img, 5).is_err());
    }

    fn encode(vit: &Vit, store: &ParamStore, patches: &Tensor) -> Tensor {
        let mut tape = Tape::inference();
        let x = tape.constant(patches.clone());
        let y = vit.forward(&mut tape, store, &mut Ctx::eval(), x).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn shapes_determinism_and_position_sensitivity() {
        let cfg = VitConfig { image_size: 32, ..Default::default() };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let vit = Vit::new(&mut store, "vit", &cfg, &mut rng).unwrap();
        let img: Vec<f64> = (0..32 * 32).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let patches = Tensor::new(&[1, 4, 256], patchify_batch(&img, 1, 1, 32, 32, 16)).unwrap();
        let a = encode(&vit, &store, &patches);
        assert_eq!(a.shape(), [1, 5, 64]);
        assert!(a.all_finite());
        assert_eq!(a, encode(&vit, &store, &patches));
        // swap the contents of patches 0 and 3
        let mut swapped = patches.data().to_vec();
        let (p0, p3) = (swapped[..256].to_vec(), swapped[768..].to_vec());
        swapped[..256].copy_from_slice(&p3);
        swapped[768..].copy_from_slice(&p0);
        let b = encode(&vit, &store, &Tensor::new(&[1, 4, 256], swapped).unwrap());
        assert!(a.row(0).iter().zip(b.row(0)).any(|(x, y)| (x - y).abs() > 1e-9));
    }
}

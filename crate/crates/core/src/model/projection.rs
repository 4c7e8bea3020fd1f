use acc_tensor::param::trunc_normal;
use acc_tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::encoders::nn::{Ctx, Mlp, INIT_STD};
use crate::Result;

/// Maps a `[B, N, D_in]` sequence to `[B, T, D]`: a learned linear map over
/// the sequence axis, then a two-layer MLP over features.
#[derive(Clone, Debug)]
pub struct Projection {
    pub time_w: ParamId,
    pub time_b: ParamId,
    pub mlp: Mlp,
}

impl Projection {
    /// The sequence map starts near uniform averaging.
    pub fn new(store: &mut ParamStore, name: &str, n: usize, d_in: usize, t: usize, d: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut w = trunc_normal(&[n, t], INIT_STD, rng);
        for v in w.data_mut() {
            *v += 1.0 / n as f64;
        }
        Ok(Self {
            time_w: store.add(format!("{name}.time.w"), w)?,
            time_b: store.add(format!("{name}.time.b"), Tensor::zeros(&[t]))?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), (d_in, d, d), 0.0, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let xt = tape.transpose(x)?;
        let w = tape.param(store, self.time_w);
        let b = tape.param(store, self.time_b);
        let y = tape.matmul(xt, w)?;
        let y = tape.add_bias(y, b)?;
        let y = tape.transpose(y)?;
        self.mlp.forward(tape, store, ctx, y)
    }
}

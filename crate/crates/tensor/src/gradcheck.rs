//! Central finite-difference gradient checking.
//!
//! The checker only ever evaluates the forward pass, so it is independent of
//! the backward rules it is used to validate.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::{ParamId, ParamStore, Result, Tape, Var};

/// Denominator floor for relative error, so that gradients that are zero up
/// to rounding do not register as failures.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(parameter name, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl CheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compare analytic gradients of `loss_fn` against central differences.
///
/// `loss_fn` must be deterministic: it is called once for the analytic pass
/// and twice per sampled coordinate. At most `samples` coordinates are drawn
/// uniformly from the trainable entries of `ids`; pass `usize::MAX` to check
/// every entry.
pub fn check<F>(store: &mut ParamStore, ids: &[ParamId], step: f64, samples: usize, rng: &mut impl Rng, mut loss_fn: F) -> Result<CheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    let grads = tape.backward(loss)?;

    let mut coords: Vec<(ParamId, usize)> = ids
        .iter()
        .filter(|id| !store.get(**id).is_frozen())
        .flat_map(|&id| (0..store.value(id).len()).map(move |i| (id, i)))
        .collect();
    if coords.len() > samples {
        coords.shuffle(rng);
        coords.truncate(samples);
        coords.sort();
    }

    let mut report = CheckReport { checked: 0, max_rel_err: 0.0, worst: None };
    for (id, i) in coords {
        let analytic = grads.get(id).map_or(0.0, |g| g.data()[i]);
        let original = store.value(id).data()[i];
        store.get_mut(id).value_mut().data_mut()[i] = original + step;
        let plus = eval(store, &mut loss_fn)?;
        store.get_mut(id).value_mut().data_mut()[i] = original - step;
        let minus = eval(store, &mut loss_fn)?;
        store.get_mut(id).value_mut().data_mut()[i] = original;
        let numeric = (plus - minus) / (2.0 * step);
        let err = rel_err(analytic, numeric);
        report.checked += 1;
        if err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(err);
            report.worst = Some((store.get(id).name().to_string(), i, analytic, numeric));
        }
    }
    Ok(report)
}

fn eval<F>(store: &ParamStore, loss_fn: &mut F) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::inference();
    let v = loss_fn(&mut tape, store)?;
    tape.value(v).item()
}

/// Randomized finite-difference cases for every differentiable tape op.
pub mod suite {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::{check, CheckReport};
    use crate::param::uniform;
    use crate::{ParamId, ParamStore, Result, Tape, Tensor, Var};

    type LossFn = Box<dyn Fn(&mut Tape, &ParamStore) -> Result<Var>>;

    /// Per-op summary over all trials.
    #[derive(Clone, Debug)]
    pub struct OpSummary {
        pub op: &'static str,
        pub trials: usize,
        pub checked: usize,
        pub max_rel_err: f64,
    }

    pub const OPS: &[&str] = &[
        "matmul", "matmul_batched", "matmul_trans_b", "add", "sub", "mul", "add_bias", "scale", "add_scalar", "gelu",
        "tanh", "relu", "softmax", "layer_norm", "permute", "reshape", "narrow", "concat", "expand", "unfold1d",
        "mean_axis", "sum", "mean", "sum_last", "l2_normalize", "cosine_similarity", "weighted_cross_entropy",
        "dropout",
    ];

    fn dim(rng: &mut ChaCha8Rng) -> usize {
        rng.gen_range(1..=4)
    }

    /// Random tensor with entries in `[-1, 1]`.
    fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        uniform(shape, 1.0, rng)
    }

    /// Entries bounded away from zero, for ops with a kink at the origin.
    fn rand_away(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let t = uniform(shape, 1.0, rng);
        t.map(|v| if v.abs() < 0.1 { 0.5 * v.signum() } else { v })
    }

    /// Contract `out` with a fixed random tensor so every output entry matters.
    fn project(tape: &mut Tape, out: Var, probe: &Tensor) -> Result<Var> {
        let r = tape.constant(probe.clone());
        let p = tape.mul(out, r)?;
        Ok(tape.sum(p))
    }

    fn build(op: &str, rng: &mut ChaCha8Rng) -> (ParamStore, Vec<ParamId>, LossFn) {
        let mut s = ParamStore::new();
        let (m, k, n, b) = (dim(rng), dim(rng), dim(rng), dim(rng));
        let add = |s: &mut ParamStore, name: &str, t: Tensor| s.add(name, t).unwrap();
        let f: LossFn;
        let ids: Vec<ParamId>;
        macro_rules! probe {
            ($shape:expr) => {
                rand_t(&$shape, rng)
            };
        }
        match op {
            "matmul" => {
                let a = add(&mut s, "a", rand_t(&[b, m, k], rng));
                let w = add(&mut s, "w", rand_t(&[k, n], rng));
                let p = probe!([b, m, n]);
                ids = vec![a, w];
                f = Box::new(move |t, st| {
                    let (x, y) = (t.param(st, a), t.param(st, w));
                    let o = t.matmul(x, y)?;
                    project(t, o, &p)
                });
            }
            "matmul_batched" => {
                let a = add(&mut s, "a", rand_t(&[b, m, k], rng));
                let w = add(&mut s, "w", rand_t(&[b, k, n], rng));
                let p = probe!([b, m, n]);
                ids = vec![a, w];
                f = Box::new(move |t, st| {
                    let (x, y) = (t.param(st, a), t.param(st, w));
                    let o = t.matmul(x, y)?;
                    project(t, o, &p)
                });
            }
            "matmul_trans_b" => {
                let shared = rng.gen_bool(0.5);
                let a = add(&mut s, "a", rand_t(&[b, m, k], rng));
                let w = if shared { add(&mut s, "w", rand_t(&[n, k], rng)) } else { add(&mut s, "w", rand_t(&[b, n, k], rng)) };
                let p = probe!([b, m, n]);
                ids = vec![a, w];
                f = Box::new(move |t, st| {
                    let (x, y) = (t.param(st, a), t.param(st, w));
                    let o = t.matmul_ext(x, y, true)?;
                    project(t, o, &p)
                });
            }
            "add" | "sub" | "mul" => {
                let x = add(&mut s, "x", rand_t(&[m, n], rng));
                let y = add(&mut s, "y", rand_t(&[m, n], rng));
                let p = probe!([m, n]);
                let op = op.to_string();
                ids = vec![x, y];
                f = Box::new(move |t, st| {
                    let (xv, yv) = (t.param(st, x), t.param(st, y));
                    let o = match op.as_str() {
                        "add" => t.add(xv, yv)?,
                        "sub" => t.sub(xv, yv)?,
                        _ => t.mul(xv, yv)?,
                    };
                    project(t, o, &p)
                });
            }
            "add_bias" => {
                let x = add(&mut s, "x", rand_t(&[b, m, n], rng));
                let bias = add(&mut s, "b", rand_t(&[m, n], rng));
                let p = probe!([b, m, n]);
                ids = vec![x, bias];
                f = Box::new(move |t, st| {
                    let (xv, bv) = (t.param(st, x), t.param(st, bias));
                    let o = t.add_bias(xv, bv)?;
                    project(t, o, &p)
                });
            }
            "scale" | "add_scalar" | "gelu" | "tanh" | "relu" | "softmax" | "sum_last" | "l2_normalize" => {
                let init = if op == "relu" { rand_away(&[m, n], rng) } else { rand_t(&[m, n], rng).map(|v| v * 2.0) };
                let x = add(&mut s, "x", init);
                let c = rng.gen_range(-2.0..2.0);
                let p = if op == "sum_last" { probe!([m]) } else { probe!([m, n]) };
                let op = op.to_string();
                ids = vec![x];
                f = Box::new(move |t, st| {
                    let xv = t.param(st, x);
                    let o = match op.as_str() {
                        "scale" => t.scale(xv, c),
                        "add_scalar" => t.add_scalar(xv, c),
                        "gelu" => t.gelu(xv),
                        "tanh" => t.tanh(xv),
                        "relu" => t.relu(xv),
                        "softmax" => t.softmax(xv),
                        "sum_last" => t.sum_last(xv),
                        _ => t.l2_normalize(xv, 1e-8),
                    };
                    project(t, o, &p)
                });
            }
            "layer_norm" => {
                let d = dim(rng) + 1;
                let x = add(&mut s, "x", rand_t(&[m, d], rng));
                let g = add(&mut s, "g", rand_t(&[d], rng));
                let bb = add(&mut s, "b", rand_t(&[d], rng));
                let p = probe!([m, d]);
                ids = vec![x, g, bb];
                f = Box::new(move |t, st| {
                    let (xv, gv, bv) = (t.param(st, x), t.param(st, g), t.param(st, bb));
                    let o = t.layer_norm(xv, gv, bv, 1e-5)?;
                    project(t, o, &p)
                });
            }
            "permute" => {
                let x = add(&mut s, "x", rand_t(&[b, m, n], rng));
                let mut axes = vec![0, 1, 2];
                use rand::seq::SliceRandom;
                axes.shuffle(rng);
                let shape = [b, m, n];
                let p = probe!([shape[axes[0]], shape[axes[1]], shape[axes[2]]]);
                ids = vec![x];
                f = Box::new(move |t, st| {
                    let xv = t.param(st, x);
                    let o = t.permute(xv, &axes)?;
                    project(t, o, &p)
                });
            }
            "reshape" => {
                let x = add(&mut s, "x", rand_t(&[b, m, n], rng));
                let p = probe!([b * m, n]);
                ids = vec![x];
                f = Box::new(move |t, st| {
                    let xv = t.param(st, x);
                    let o = t.reshape(xv, &[b * m, n])?;
                    project(t, o, &p)
                });
            }
            "narrow" => {
                let len_axis = dim(rng) + 1;
                let axis = rng.gen_range(0..3);
                let mut shape = vec![b, m, n];
                shape[axis] = len_axis;
                let start = rng.gen_range(0..len_axis);
                let len = rng.gen_range(1..=len_axis - start);
                let x = add(&mut s, "x", rand_t(&shape, rng));
                let mut out_shape = shape.clone();
                out_shape[axis] = len;
                let p = rand_t(&out_shape, rng);
                ids = vec![x];
                f = Box::new(move |t, st| {
                    let xv = t.param(st, x);
                    let o = t.narrow(xv, axis, start, len)?;
                    project(t, o, &p)
                });
            }
            "concat" => {
                let axis = rng.gen_range(0..2);
                let (k1, k2) = (dim(rng), dim(rng));
                let (s1, s2, so) = if axis == 0 { ([k1, n], [k2, n], [k1 + k2, n]) } else { ([m, k1], [m, k2], [m, k1 + k2]) };
                let x = add(&mut s, "x", rand_t(&s1, rng));
                let y = add(&mut s, "y", rand_t(&s2, rng));
                let p = rand_t(&so, rng);
                ids = vec![x, y];
                f = Box::new(move |t, st| {
                    let (xv, yv) = (t.param(st, x), t.param(st, y));
                    let o = t.concat(&[xv, yv, xv], axis)?;
                    let o = t.narrow(o, axis, 0, so[axis])?;
                    project(t, o, &p)
                });
            }
            "expand" => {
                let x = add(&mut s, "x", rand_t(&[m, n], rng));
                let p = probe!([b, m, n]);
                ids = vec![x];
                f = Box::new(move |t, st| {
                    let xv = t.param(st, x);
                    let o = t.expand(xv, b);
                    project(t, o, &p)
                });
            }
            "unfold1d" => {
                let kernel = rng.gen_range(1..=4);
                let stride = rng.gen_range(1..=3);
                let l = kernel + rng.gen_range(0..8);
                let x = add(&mut s, "x", rand_t(&[b, l, n], rng));
                let lout = crate::conv_out_len(l, kernel, stride);
                let p = probe!([b, lout, kernel * n]);
                ids = vec![x];
                f = Box::new(move |t, st| {
                    let xv = t.param(st, x);
                    let o = t.unfold1d(xv, kernel, stride)?;
                    project(t, o, &p)
                });
            }
            "mean_axis" => {
                let axis = rng.gen_range(0..3);
                let shape = [b, m, n];
                let x = add(&mut s, "x", rand_t(&shape, rng));
                let mut out_shape = shape.to_vec();
                out_shape.remove(axis);
                let p = rand_t(&out_shape, rng);
                ids = vec![x];
                f = Box::new(move |t, st| {
                    let xv = t.param(st, x);
                    let o = t.mean_axis(xv, axis)?;
                    project(t, o, &p)
                });
            }
            "sum" | "mean" => {
                let x = add(&mut s, "x", rand_t(&[m, n], rng));
                let is_sum = op == "sum";
                ids = vec![x];
                f = Box::new(move |t, st| {
                    let xv = t.param(st, x);
                    let sq = t.mul(xv, xv)?;
                    Ok(if is_sum { t.sum(sq) } else { t.mean(sq) })
                });
            }
            "cosine_similarity" => {
                let u = add(&mut s, "u", rand_t(&[m, n + 1], rng));
                let v = add(&mut s, "v", rand_t(&[m, n + 1], rng));
                let p = probe!([m]);
                ids = vec![u, v];
                f = Box::new(move |t, st| {
                    let (uv, vv) = (t.param(st, u), t.param(st, v));
                    let o = t.cosine_similarity(uv, vv)?;
                    project(t, o, &p)
                });
            }
            "weighted_cross_entropy" => {
                let c = dim(rng) + 1;
                let logits = add(&mut s, "logits", rand_t(&[b, c], rng).map(|v| v * 3.0));
                let w = add(&mut s, "w", rand_t(&[c], rng).map(|v| 1.0 + 0.5 * v));
                let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..c)).collect();
                let mut mask: Vec<f64> = (0..b).map(|_| if rng.gen_bool(0.8) { 1.0 } else { 0.0 }).collect();
                mask[0] = 1.0;
                ids = vec![logits, w];
                f = Box::new(move |t, st| {
                    let (lv, wv) = (t.param(st, logits), t.param(st, w));
                    t.weighted_cross_entropy(lv, wv, &labels, &mask)
                });
            }
            "dropout" => {
                let x = add(&mut s, "x", rand_t(&[m, n], rng));
                let key = rng.gen();
                let p = probe!([m, n]);
                ids = vec![x];
                f = Box::new(move |t, st| {
                    let xv = t.param(st, x);
                    let o = t.dropout(xv, 0.3, key)?;
                    project(t, o, &p)
                });
            }
            other => panic!("unknown op case {other}"),
        }
        (s, ids, f)
    }

    /// Run `trials` random instances of one op and fold them into a summary.
    pub fn run_op(op: &'static str, trials: usize, step: f64, seed: u64) -> Result<OpSummary> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut summary = OpSummary { op, trials, checked: 0, max_rel_err: 0.0 };
        for _ in 0..trials {
            let (mut store, ids, f) = build(op, &mut rng);
            let report: CheckReport = check(&mut store, &ids, step, 32, &mut rng, |t, s| f(t, s))?;
            summary.checked += report.checked;
            summary.max_rel_err = summary.max_rel_err.max(report.max_rel_err);
        }
        Ok(summary)
    }

    pub fn run_all(trials: usize, step: f64, seed: u64) -> Result<Vec<OpSummary>> {
        OPS.iter().enumerate().map(|(i, op)| run_op(op, trials, step, seed.wrapping_add(i as u64))).collect()
    }
}

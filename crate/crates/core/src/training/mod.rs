//! Cross-validation folds, AdamW and the training loop.

mod folds;

use std::io::Write as _;
use std::path::{Path, PathBuf};

use acc_tensor::{Checkpoint, ParamStore, Tape};
use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use folds::{make_folds, split_examples, Fold, FoldPlan, FoldPolicy, SplitIndices};

use crate::alignment::FrameExample;
use crate::encoders::nn::{mix, Ctx};
use crate::evaluation::{evaluate, macro_f1};
use crate::model::{Batch, Model, ModelConfig};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub folds: usize,
    pub fold: usize,
    pub fold_policy: FoldPolicy,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 16,
            lr: 1e-4,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 7,
            folds: 5,
            fold: 0,
            fold_policy: FoldPolicy::Default,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("lr must be > 0 and weight_decay >= 0".into()));
        }
        if self.fold >= self.folds {
            return Err(Error::Config(format!("fold {} out of range for {} folds", self.fold, self.folds)));
        }
        Ok(())
    }
}

/// Hyperparameters of one AdamW update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&TrainConfig> for AdamW {
    fn from(c: &TrainConfig) -> Self {
        Self { lr: c.lr, weight_decay: c.weight_decay, beta1: c.beta1, beta2: c.beta2, eps: c.eps }
    }
}

/// One AdamW update of every trainable parameter from its accumulated
/// gradient, at step `t >= 1`. Weight decay is decoupled:
/// `w <- w - lr (m_hat / (sqrt(v_hat) + eps) + wd w)`.
pub fn adamw_step(store: &mut ParamStore, opt: &AdamW, t: u64) {
    let bc1 = 1.0 - opt.beta1.powi(t as i32);
    let bc2 = 1.0 - opt.beta2.powi(t as i32);
    for p in store.iter_mut() {
        if p.is_frozen() {
            continue;
        }
        let mut step = Vec::with_capacity(p.grad.len());
        for ((g, m), v) in p.grad.data().iter().zip(p.m.data_mut()).zip(p.v.data_mut()) {
            *m = opt.beta1 * *m + (1.0 - opt.beta1) * g;
            *v = opt.beta2 * *v + (1.0 - opt.beta2) * g * g;
            step.push((*m / bc1) / ((*v / bc2).sqrt() + opt.eps));
        }
        for (w, s) in p.value_mut().data_mut().iter_mut().zip(step) {
            *w -= opt.lr * (s + opt.weight_decay * *w);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub loss_cls: f64,
    pub loss_cos: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_macro_f1: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl History {
    /// Mean training loss of `epoch` (1-based).
    pub fn mean_loss(&self, epoch: usize) -> Option<f64> {
        self.epochs.iter().find(|e| e.epoch == epoch).map(|e| e.mean_loss)
    }

    fn jsonl<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for r in rows {
            serde_json::to_writer(&mut out, r)?;
            out.push(b'\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Step records as JSON lines.
    pub fn write_steps(&self, path: &Path) -> Result<()> {
        Self::jsonl(&self.steps, path)
    }

    pub fn write_epochs(&self, path: &Path) -> Result<()> {
        Self::jsonl(&self.epochs, path)
    }
}

/// Trained weights and logs.
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub best_epoch: usize,
    pub history: History,
}

impl TrainOutcome {
    pub const BEST: &'static str = "model.best.acck";
    pub const LAST: &'static str = "model.final.acck";
    pub const HISTORY: &'static str = "history.jsonl";
    pub const EPOCHS: &'static str = "epochs.jsonl";

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths: Vec<PathBuf> = [Self::BEST, Self::LAST, Self::HISTORY, Self::EPOCHS].iter().map(|n| dir.join(n)).collect();
        std::fs::write(&paths[0], self.best.to_bytes()).map_err(|e| Error::io(&paths[0], e))?;
        std::fs::write(&paths[1], self.last.to_bytes()).map_err(|e| Error::io(&paths[1], e))?;
        self.history.write_steps(&paths[2])?;
        self.history.write_epochs(&paths[3])?;
        Ok(paths)
    }
}

/// Examples used for one training run.
pub struct TrainData<'a> {
    pub train: Vec<&'a FrameExample>,
    pub val: Vec<&'a FrameExample>,
}

/// Options that do not affect the numbers.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Where to dump the offending batch when the loss turns non-finite.
    pub dump_dir: Option<PathBuf>,
}

fn dump_batch(dir: &Path, step: u64, batch: &[&FrameExample]) -> Result<PathBuf> {
    #[derive(Serialize)]
    struct Item<'a> {
        utterance_id: &'a str,
        frame_index: usize,
        labels: [Option<usize>; 3],
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format!("nonfinite_step{step}.json"));
    let items: Vec<Item> =
        batch.iter().map(|e| Item { utterance_id: &e.utterance_id, frame_index: e.frame_index, labels: e.labels }).collect();
    let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(&mut f, &items)?;
    f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Class frequencies of the training examples (excluded frames skipped).
pub fn class_counts(examples: &[&FrameExample], dim: crate::phonology::Dimension) -> Vec<f64> {
    let mut counts = vec![0.0; dim.n_classes()];
    for e in examples {
        if let Some(c) = e.label(dim) {
            counts[c] += 1.0;
        }
    }
    counts
}

/// Train a fresh model. Examples excluded from the task's dimension are
/// dropped. Batch order, dropout masks and initialization all derive from
/// `cfg.seed`, so identical inputs give identical outputs.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    window: usize,
    data: &TrainData,
    config_hash: [u8; 32],
    meta: serde_json::Value,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dim = model_cfg.mode.dimension;
    let train: Vec<&FrameExample> = data.train.iter().copied().filter(|e| !e.masked(dim)).collect();
    let val: Vec<&FrameExample> = data.val.iter().copied().filter(|e| !e.masked(dim)).collect();
    if train.is_empty() {
        return Err(Error::Config("no training examples".into()));
    }
    let mut model = Model::new(model_cfg, window, &class_counts(&train, dim), mix(cfg.seed, 0xC0FFEE))?;
    let mode = model.mode();
    info!(
        "training {} on {} ({} train / {} val frames, {} trainable scalars)",
        mode.name(),
        dim,
        train.len(),
        val.len(),
        model.store.iter().filter(|(_, p)| !p.is_frozen()).map(|(_, p)| p.value().len()).sum::<usize>()
    );
    let opt = AdamW::from(cfg);
    let mut history = History::default();
    let mut best: Option<(f64, usize, Vec<acc_tensor::Tensor>)> = None;
    let mut stale = 0;
    let mut step: u64 = 0;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64)));
        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0;
        for idx in order.chunks(cfg.batch_size) {
            if idx.len() < 2 {
                continue;
            }
            step += 1;
            let items: Vec<&FrameExample> = idx.iter().map(|&i| train[i]).collect();
            let batch = Batch::from_examples(&items, dim, &model.cfg.vit, mode.uses_video(), mode.uses_audio())?;
            let mut tape = Tape::new();
            let mut ctx = Ctx::train(mix(cfg.seed, step));
            let parts = model.loss(&mut tape, &mut ctx, &batch)?;
            let loss = tape.value(parts.total).item()?;
            let loss_cls = tape.value(parts.cls).item()?;
            let loss_cos = match parts.cos {
                Some(c) => tape.value(c).item()?,
                None => 0.0,
            };
            if !loss.is_finite() {
                let mut detail = format!("loss {loss} (cls {loss_cls}, cos {loss_cos})");
                if let Some(dir) = &opts.dump_dir {
                    let p = dump_batch(dir, step, &items)?;
                    detail.push_str(&format!("; batch written to {}", p.display()));
                }
                return Err(Error::NonFiniteLoss { step: step as usize, detail });
            }
            let grads = tape.backward(parts.total)?;
            model.store.zero_grad();
            grads.accumulate_into(&mut model.store);
            adamw_step(&mut model.store, &opt, step);
            history.steps.push(StepRecord { step, epoch, loss, loss_cls, loss_cos, lr: cfg.lr });
            epoch_loss += loss;
            epoch_steps += 1;
        }
        let mean_loss = epoch_loss / epoch_steps.max(1) as f64;
        let val_f1 = if val.is_empty() { None } else { Some(macro_f1(&evaluate(&model, &val)?)) };
        info!("epoch {epoch}: mean loss {mean_loss:.4}, val macro-F1 {}", val_f1.map_or("n/a".into(), |f| format!("{f:.4}")));
        history.epochs.push(EpochRecord { epoch, mean_loss, val_macro_f1: val_f1 });
        let score = val_f1.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().map_or(true, |(b, _, _)| score > *b) {
            best = Some((score, epoch, model.store.snapshot()));
            stale = 0;
        } else {
            stale += 1;
            debug!("no validation improvement for {stale} epoch(s)");
        }
        if cfg.patience.is_some_and(|p| stale >= p) {
            info!("early stop after epoch {epoch}");
            break;
        }
    }
    let with_epoch = |kind: &str, epoch: usize| {
        let mut m = meta.clone();
        if let serde_json::Value::Object(map) = &mut m {
            map.insert("checkpoint".into(), kind.into());
            map.insert("epoch".into(), epoch.into());
        }
        m
    };
    let last_epoch = history.epochs.len();
    let last = model.checkpoint(config_hash, with_epoch("final", last_epoch))?;
    let (_, best_epoch, snapshot) = best.expect("at least one epoch ran");
    model.store.restore(&snapshot)?;
    let best = model.checkpoint(config_hash, with_epoch("best", best_epoch))?;
    Ok(TrainOutcome { best, last, best_epoch, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use acc_tensor::Tensor;

    #[test]
    fn decay_only_step() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::ones(&[1])).unwrap();
        let opt = AdamW { lr: 1e-4, weight_decay: 5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        adamw_step(&mut s, &opt, 1);
        assert!((s.value(s.id("w").unwrap()).data()[0] - (1.0 - 5e-8)).abs() < 1e-18);
    }

    #[test]
    fn constant_gradient_moments() {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::zeros(&[1])).unwrap();
        let opt = AdamW { lr: 1e-3, weight_decay: 0.0, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        for t in 1..=200 {
            s.get_mut(id).grad = Tensor::from_vec(vec![0.5]);
            adamw_step(&mut s, &opt, t);
            let m_hat = s.get(id).m.data()[0] / (1.0 - 0.9f64.powi(t as i32));
            assert!((m_hat - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn frozen_untouched() {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::ones(&[2])).unwrap();
        s.set_frozen(id, true);
        s.get_mut(id).grad = Tensor::from_vec(vec![1.0, 1.0]);
        adamw_step(&mut s, &AdamW::from(&TrainConfig::default()), 1);
        assert_eq!(s.value(id).data(), &[1.0, 1.0]);
    }
}

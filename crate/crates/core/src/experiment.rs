//! One cross-validation fold end to end: examples, training and evaluation.

use std::path::Path;

use acc_tensor::Checkpoint;
use log::info;
use serde::{Deserialize, Serialize};

use crate::alignment::{build_all, FrameExample};
use crate::config::RunConfig;
use crate::corpus::Manifest;
use crate::evaluation::{evaluate, EvalResult, FoldResult};
use crate::model::{lookup, Model};
use crate::phonology::PhonemeMap;
use crate::training::{make_folds, split_examples, train, TrainData, TrainOptions, TrainOutcome};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?} (train | val | test)"))),
        }
    }
}

/// Examples of a manifest partitioned for one fold.
pub struct FoldExamples {
    pub examples: Vec<FrameExample>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl FoldExamples {
    pub fn build(manifest: &Manifest, cfg: &RunConfig, fold: usize, load_audio: bool, map: &PhonemeMap) -> Result<Self> {
        let t = &cfg.train;
        let plan = make_folds(&manifest.speakers(), t.folds, t.seed, t.fold_policy)?;
        let f = plan.folds.get(fold).ok_or_else(|| Error::Config(format!("fold {fold} out of range for {} folds", t.folds)))?;
        let examples = build_all(manifest, &cfg.align_config(load_audio), map)?;
        let s = split_examples(&examples, f, t.fold_policy);
        info!("fold {fold}: test {:?}, val {:?}; {} / {} / {} frames", f.test, f.val, s.train.len(), s.val.len(), s.test.len());
        Ok(Self { examples, train: s.train, val: s.val, test: s.test })
    }

    pub fn split(&self, which: Split) -> Vec<&FrameExample> {
        let idx = match which {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        };
        idx.iter().map(|&i| &self.examples[i]).collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RunStamp {
    run: RunConfig,
    fold: usize,
}

/// Train `cfg.model` on fold `cfg.train.fold`. The run config and fold are
/// stored in the checkpoint so evaluation can rebuild the same split.
pub fn train_fold(manifest: &Manifest, cfg: &RunConfig, map: &PhonemeMap, opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mode = lookup(&cfg.model.mode.mode)?;
    let fold = cfg.train.fold;
    let data = FoldExamples::build(manifest, cfg, fold, mode.uses_audio(), map)?;
    let td = TrainData { train: data.split(Split::Train), val: data.split(Split::Val) };
    let stamp = serde_json::to_value(RunStamp { run: cfg.clone(), fold })?;
    train(&cfg.model, &cfg.train, cfg.align_config(false).window_len(), &td, cfg.hash(), stamp, opts)
}

/// Run configuration and fold recorded in a checkpoint.
pub fn checkpoint_run(ck: &Checkpoint) -> Result<(RunConfig, usize)> {
    let meta: crate::model::CheckpointMeta = serde_json::from_str(&ck.metadata)?;
    let stamp: RunStamp = serde_json::from_value(meta.extra)
        .map_err(|e| Error::Format(format!("checkpoint carries no run configuration: {e}")))?;
    Ok((stamp.run, stamp.fold))
}

/// Evaluate a checkpoint on one split of its fold (or of `fold` if given).
/// Only the inputs the mode uses at inference are loaded.
pub fn eval_checkpoint(ck: &Checkpoint, manifest: &Manifest, fold: Option<usize>, split: Split, map: &PhonemeMap) -> Result<EvalResult> {
    let (model, meta) = Model::from_checkpoint(ck)?;
    let (cfg, trained_fold) = checkpoint_run(ck)?;
    let fold = fold.unwrap_or(trained_fold);
    let data = FoldExamples::build(manifest, &cfg, fold, model.mode().inference_uses_audio(), map)?;
    let confusion = evaluate(&model, &data.split(split))?;
    Ok(EvalResult {
        mode: meta.mode,
        dimension: model.dimension(),
        folds: vec![FoldResult { fold, split: split.as_str().into(), confusion }],
    })
}

/// Merge per-fold results of the same (mode, dimension).
pub fn combine(results: Vec<EvalResult>) -> Vec<EvalResult> {
    let mut out: Vec<EvalResult> = Vec::new();
    for r in results {
        match out.iter_mut().find(|o| o.mode == r.mode && o.dimension == r.dimension) {
            Some(o) => o.folds.extend(r.folds),
            None => out.push(r),
        }
    }
    for o in &mut out {
        o.folds.sort_by_key(|f| f.fold);
    }
    out
}

pub fn save_result(result: &EvalResult, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(result)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_result(path: &Path) -> Result<EvalResult> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

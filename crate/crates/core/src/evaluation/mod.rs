//! Frame-level metrics, prediction and report files.

mod metrics;
mod report;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{confusion, fold_mean, macro_avg, macro_f1, prf, ConfusionMatrix, Prf};
pub use report::{emit_report, render_svg, summary, write_csv, ReportFormat};

use crate::alignment::FrameExample;
use crate::model::{Batch, Model};
use crate::phonology::Dimension;
use crate::Result;

/// Batch size for every evaluation pass, so repeated evaluations of the same
/// frames give identical numbers.
pub const EVAL_BATCH: usize = 64;

/// Argmax predictions, in input order. Only the inputs the mode needs at
/// inference are read.
pub fn predict(model: &Model, examples: &[&FrameExample]) -> Result<Vec<usize>> {
    let mode = model.mode();
    let chunks: Vec<&[&FrameExample]> = examples.chunks(EVAL_BATCH).collect();
    let parts = chunks
        .par_iter()
        .map(|chunk| {
            let batch = Batch::from_examples(chunk, model.dimension(), &model.cfg.vit, mode.uses_video(), mode.inference_uses_audio())?;
            Ok(model.logits(&batch)?.argmax_rows())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.concat())
}

/// Confusion matrix of `model` over `examples`; excluded frames are skipped.
pub fn evaluate(model: &Model, examples: &[&FrameExample]) -> Result<ConfusionMatrix> {
    let dim = model.dimension();
    let kept: Vec<&FrameExample> = examples.iter().copied().filter(|e| !e.masked(dim)).collect();
    let preds = predict(model, &kept)?;
    let labels: Vec<usize> = kept.iter().map(|e| e.label(dim).unwrap_or(0)).collect();
    confusion(&preds, &labels, &vec![false; kept.len()], dim.n_classes())
}

/// Majority-class predictor evaluated on `test`, trained on `train` counts.
pub fn majority_baseline(train: &[&FrameExample], test: &[&FrameExample], dim: Dimension) -> Result<ConfusionMatrix> {
    let mut counts = vec![0usize; dim.n_classes()];
    for e in train {
        if let Some(c) = e.label(dim) {
            counts[c] += 1;
        }
    }
    let majority = (0..counts.len()).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap_or(0);
    let kept: Vec<&&FrameExample> = test.iter().filter(|e| !e.masked(dim)).collect();
    let labels: Vec<usize> = kept.iter().map(|e| e.label(dim).unwrap_or(0)).collect();
    confusion(&vec![majority; labels.len()], &labels, &vec![false; labels.len()], dim.n_classes())
}

/// Confusion matrix of one fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub split: String,
    pub confusion: ConfusionMatrix,
}

/// Evaluation of one (mode, dimension) across folds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mode: String,
    pub dimension: Dimension,
    pub folds: Vec<FoldResult>,
}

impl EvalResult {
    /// Metrics over all folds' frames together.
    pub fn pooled(&self) -> Vec<Prf> {
        let mut cm = ConfusionMatrix::new(self.dimension.n_classes());
        for f in &self.folds {
            cm.merge(&f.confusion);
        }
        prf(&cm)
    }

    /// Per-class metrics averaged over folds.
    pub fn fold_mean(&self) -> Vec<Prf> {
        let per: Vec<Vec<Prf>> = self.folds.iter().map(|f| prf(&f.confusion)).collect();
        fold_mean(&per)
    }
}

//! Frame-wise prediction, confusion matrices, macro F1 and result tables.

mod report;

pub use report::{make_report, make_report_csv, published_rows, ReportRow};

use serde::{Deserialize, Serialize};

use crate::dataset::{Image, LoadedSplit, N_CLASSES};
use crate::error::{bail, Result};
use crate::model::ModelAssembly;
use crate::nn::{Float, Mode};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N_CLASSES]; N_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

pub fn confusion(labels: &[usize], preds: &[usize]) -> Result<ConfusionMatrix> {
    if labels.len() != preds.len() {
        bail!(Data, "{} labels vs {} predictions", labels.len(), preds.len());
    }
    if labels.is_empty() {
        bail!(Data, "nothing to evaluate");
    }
    let mut cm = ConfusionMatrix::default();
    for (&l, &p) in labels.iter().zip(preds) {
        if l >= N_CLASSES || p >= N_CLASSES {
            bail!(Data, "class id out of range: label {l}, prediction {p}");
        }
        cm.counts[l][p] += 1;
    }
    Ok(cm)
}

/// Per-class and macro F1, all scaled to `[0, 100]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub per_class: [f64; N_CLASSES],
    pub macro_f1: f64,
}

/// `F1_c = 2·TP / (2·TP + FP + FN)`, zero when the denominator is zero; the
/// macro score averages all eight classes unconditionally.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<F1Scores> {
    if cm.total() == 0 {
        bail!(Data, "empty confusion matrix");
    }
    let mut per_class = [0.0; N_CLASSES];
    for (c, f1) in per_class.iter_mut().enumerate() {
        let tp = cm.counts[c][c];
        let fp: u64 = (0..N_CLASSES).filter(|&r| r != c).map(|r| cm.counts[r][c]).sum();
        let fn_: u64 = (0..N_CLASSES).filter(|&p| p != c).map(|p| cm.counts[c][p]).sum();
        let denom = 2 * tp + fp + fn_;
        *f1 = if denom == 0 {
            0.0
        } else {
            100.0 * (2 * tp) as f64 / denom as f64
        };
    }
    let macro_f1 = per_class.iter().sum::<f64>() / N_CLASSES as f64;
    Ok(F1Scores { per_class, macro_f1 })
}

/// Index of the largest logit; ties go to the lowest class id.
pub fn argmax<T: Float>(row: ndarray::ArrayView1<'_, T>) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Inference-mode class predictions in input order.
pub fn predict<T: Float>(model: &mut ModelAssembly<T>, frames: &[&Image], batch_size: usize) -> Result<Vec<usize>> {
    if batch_size == 0 {
        bail!(Config, "batch size must be positive");
    }
    let mut out = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(batch_size) {
        let batch = model.normalization.batch::<T>(chunk)?;
        let logits = model.forward(batch.view(), Mode::Eval)?;
        out.extend(logits.outer_iter().map(argmax));
    }
    Ok(out)
}

/// Mean cross-entropy over a whole split in inference mode.
pub fn split_loss<T: Float>(model: &mut ModelAssembly<T>, split: &LoadedSplit, batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    for (imgs, samples) in split.images.chunks(batch_size).zip(split.samples.chunks(batch_size)) {
        let refs: Vec<&Image> = imgs.iter().collect();
        let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
        let batch = model.normalization.batch::<T>(&refs)?;
        let logits = model.forward(batch.view(), Mode::Eval)?;
        let l = crate::trainer::compute_loss(&logits, &labels)?;
        total += l.to_f64().expect("finite") * labels.len() as f64;
    }
    Ok(total / split.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class_f1: [f64; N_CLASSES],
    pub macro_f1: f64,
    pub n_frames: usize,
    pub config_hash: String,
    pub weights_id: String,
    pub backbone: String,
    pub pretrained: String,
    pub split: String,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    pub fn row(&self) -> ReportRow {
        ReportRow {
            backbone: self.backbone.clone(),
            pretrained: self.pretrained.clone(),
            f1: self.macro_f1,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct") + "\n"
    }
}

/// Scores of a model on every labelled frame of a split.
pub struct SplitScores {
    pub confusion: ConfusionMatrix,
    pub f1: F1Scores,
    pub macro_f1: f64,
}

pub fn evaluate_split<T: Float>(model: &mut ModelAssembly<T>, split: &LoadedSplit, batch_size: usize) -> Result<SplitScores> {
    let refs: Vec<&Image> = split.images.iter().collect();
    let preds = predict(model, &refs, batch_size)?;
    let confusion = confusion(&split.labels(), &preds)?;
    let f1 = macro_f1(&confusion)?;
    Ok(SplitScores {
        macro_f1: f1.macro_f1,
        confusion,
        f1,
    })
}

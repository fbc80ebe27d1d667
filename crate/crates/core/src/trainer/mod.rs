//! Fine-tuning: cross-entropy, SGD with momentum under a cosine schedule,
//! epoch-wise re-drawn temporal subsampling, frozen early stages.

mod loss;
mod schedule;
mod sgd;

pub use loss::{compute_loss, loss_and_grad};
pub use schedule::cosine_lr;
pub use sgd::{sgd_step, Sgd};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{subsample_indices, AugmentParams, Image, LoadedSplit};
use crate::error::{bail, Result};
use crate::metrics;
use crate::model::checkpoint::Checkpoint;
use crate::model::ModelAssembly;
use crate::nn::{Float, Mode, Module};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    /// Optimizer steps (one batch each).
    pub total_iters: u64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub freeze_k: usize,
    pub seed: u64,
    pub eval_every: u64,
    /// Mixed precision is not supported; must stay `false`.
    pub amp: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 5e-3,
            total_iters: 8000,
            batch_size: 128,
            momentum: 0.9,
            weight_decay: 1e-4,
            freeze_k: 2,
            seed: 0,
            eval_every: 1000,
            amp: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            bail!(Config, "base_lr must be positive");
        }
        if self.total_iters < 1 {
            bail!(Config, "total_iters must be >= 1");
        }
        if self.batch_size < 1 {
            bail!(Config, "batch_size must be >= 1");
        }
        if self.freeze_k > 4 {
            bail!(Config, "freeze_k must be in 0..=4");
        }
        if self.eval_every < 1 {
            bail!(Config, "eval_every must be >= 1");
        }
        if self.amp {
            bail!(Config, "mixed precision (amp) is not supported");
        }
        Ok(())
    }
}

/// One JSON line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub iter: u64,
    pub lr: f64,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub macro_f1: Option<f64>,
}

pub fn log_to_json_lines(log: &[TrainLogRecord]) -> String {
    log.iter()
        .map(|r| serde_json::to_string(r).expect("plain record") + "\n")
        .collect()
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Best checkpoint by validation macro F1, when a validation split was given.
    pub best: Option<(f64, Checkpoint)>,
    pub log: Vec<TrainLogRecord>,
    /// Batch loss of every iteration.
    pub losses: Vec<f64>,
}

/// Endless stream of sample indices: each epoch re-draws the temporal
/// subsample and reshuffles it.
pub(crate) struct EpochStream<'a> {
    data: &'a LoadedSplit,
    stride: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl<'a> EpochStream<'a> {
    pub(crate) fn new(data: &'a LoadedSplit, stride: usize, seed: u64) -> Self {
        EpochStream {
            data,
            stride,
            seed,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        }
    }

    /// `(sample index, epoch)` of the next sample.
    pub(crate) fn next_sample(&mut self) -> Result<(usize, u64)> {
        if self.pos == self.order.len() {
            if !self.order.is_empty() {
                self.epoch += 1;
            }
            let mut rng = seed::stream(self.seed, "subsample", &[self.epoch]);
            self.order = subsample_indices(&self.data.samples, self.stride, &mut rng)?;
            self.order.shuffle(&mut seed::stream(self.seed, "shuffle", &[self.epoch]));
            self.pos = 0;
        }
        let i = self.order[self.pos];
        self.pos += 1;
        Ok((i, self.epoch))
    }
}

/// Augmented view of sample `i`, seeded by `(seed, video, frame, epoch)`.
pub(crate) fn augmented(data: &LoadedSplit, i: usize, epoch: u64, run: &RunConfig) -> Result<Image> {
    let s = &data.samples[i];
    let img = &data.images[i];
    let mut rng = seed::stream(
        run.train.seed,
        "augment",
        &[seed::string_id(&s.video_id), s.frame_index as u64, epoch],
    );
    let (h, w, _) = img.dim();
    let aug = run.augment();
    Ok(AugmentParams::sample(h, w, &aug, &mut rng)?.apply(img, &aug))
}

pub(crate) fn make_checkpoint<T: Float>(model: &ModelAssembly<T>, run: &RunConfig, iteration: u64) -> Checkpoint {
    Checkpoint {
        config_hash: run.hash(),
        iteration,
        pretext: None,
        normalization: model.normalization,
        config: run.to_json(),
        tensors: model.export_weights(),
    }
}

/// Runs exactly `total_iters` optimizer steps.
///
/// Frozen stages (per `train.freeze_k`) run in inference mode and are never
/// updated. Deterministic given the config seed.
pub fn train<T: Float>(
    model: &mut ModelAssembly<T>,
    data: &LoadedSplit,
    run: &RunConfig,
    val: Option<&LoadedSplit>,
) -> Result<TrainOutcome> {
    run.validate()?;
    let cfg = &run.train;
    if data.is_empty() {
        bail!(Data, "training split has no labelled frames");
    }
    if model.input_resolution() != run.augment().crop_size {
        bail!(Config, "model resolution differs from crop size");
    }
    model.freeze_stages(cfg.freeze_k)?;
    let mut opt = Sgd::<T>::new(cfg.momentum, cfg.weight_decay);
    let mut stream = EpochStream::new(data, run.data.stride, cfg.seed);
    let mut log = Vec::new();
    let mut losses = Vec::with_capacity(cfg.total_iters as usize);
    let mut best: Option<(f64, Checkpoint)> = None;

    for t in 0..cfg.total_iters {
        let lr = cosine_lr(t, cfg.total_iters, cfg.base_lr)?;
        let mut images = Vec::with_capacity(cfg.batch_size);
        let mut labels = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let (i, epoch) = stream.next_sample()?;
            images.push(augmented(data, i, epoch, run)?);
            labels.push(data.samples[i].label);
        }
        let refs: Vec<&Image> = images.iter().collect();
        let batch = model.normalization.batch::<T>(&refs)?;

        model.zero_grad();
        let logits = model.forward(batch.view(), Mode::Train)?;
        let (loss, dlogits) = loss_and_grad(&logits, &labels)?;
        let loss = loss.to_f64().expect("finite");
        if !loss.is_finite() {
            bail!(Numerics, "loss diverged at iteration {}", t + 1);
        }
        model.backward(&dlogits);
        opt.step(model.trainable_mut(), lr)?;
        losses.push(loss);

        let iter = t + 1;
        if iter % cfg.eval_every == 0 || iter == cfg.total_iters {
            let macro_f1 = match val {
                Some(v) => {
                    let report = metrics::evaluate_split(model, v, run.eval.batch_size)?;
                    if best.as_ref().is_none_or(|(b, _)| report.macro_f1 > *b) {
                        best = Some((report.macro_f1, make_checkpoint(model, run, iter)));
                    }
                    Some(report.macro_f1)
                }
                None => None,
            };
            log::info!("iter {iter} lr {lr:.6} loss {loss:.4}");
            log.push(TrainLogRecord {
                iter,
                lr,
                loss,
                macro_f1,
            });
        }
    }
    Ok(TrainOutcome {
        checkpoint: make_checkpoint(model, run, cfg.total_iters),
        best,
        log,
        losses,
    })
}

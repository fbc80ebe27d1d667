//! Warp-contrastive pretraining of a backbone at desk scale.
//!
//! Each source image yields an anchor (crop + flip), a positive (another crop
//! + flip with brightness/contrast jitter) and a warped copy of the anchor.
//! By default the warped copy is a negative: a local deformation of the face
//! is taken to change its expression.

mod contrastive;
mod warp;

pub use contrastive::{
    candidate_count, contrastive_step, export_backbone, info_nce, nce_term, stack_views, ContrastiveBatchView, Encoder,
    Polarity,
};
pub use warp::{random_warp, WarpField};

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{AugmentParams, Image, LoadedSplit};
use crate::error::{bail, Result};
use crate::model::checkpoint::{Checkpoint, PRETEXT_CONTRASTIVE_WARP};
use crate::model::Normalization;
use crate::nn::{Float, Module};
use crate::seed;
use crate::trainer::{cosine_lr, Sgd};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: u64,
    /// Source images per step; each contributes three views.
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub temperature: f64,
    /// Control-point displacement bound in pixels at 224×224; scaled with the input resolution.
    pub warp_magnitude: f64,
    pub warp_grid: usize,
    pub proj_dim: usize,
    pub polarity: Polarity,
    /// Maximum brightness shift as a fraction of full scale.
    pub brightness: f64,
    /// Maximum relative contrast change.
    pub contrast: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 500,
            batch_size: 8,
            base_lr: 0.03,
            momentum: 0.9,
            weight_decay: 1e-4,
            temperature: 0.1,
            warp_magnitude: 10.0,
            warp_grid: 4,
            proj_dim: 128,
            polarity: Polarity::Negative,
            brightness: 0.2,
            contrast: 0.2,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            bail!(Config, "pretrain steps must be >= 1");
        }
        if self.batch_size < 2 {
            bail!(Config, "pretrain batch_size must be >= 2");
        }
        if !(self.temperature > 0.0) {
            bail!(Config, "temperature must be positive");
        }
        if !(self.warp_magnitude >= 0.0) {
            bail!(Config, "warp_magnitude must be >= 0");
        }
        if self.warp_grid < 2 {
            bail!(Config, "warp_grid must be >= 2");
        }
        if self.proj_dim == 0 {
            bail!(Config, "proj_dim must be positive");
        }
        if !(self.base_lr > 0.0) {
            bail!(Config, "pretrain base_lr must be positive");
        }
        if !(0.0..1.0).contains(&self.brightness) || !(0.0..1.0).contains(&self.contrast) {
            bail!(Config, "brightness and contrast jitter must be in [0, 1)");
        }
        Ok(())
    }

    /// Warp bound in pixels at the given input resolution.
    pub fn warp_pixels(&self, resolution: usize) -> f32 {
        (self.warp_magnitude * resolution as f64 / 224.0) as f32
    }
}

fn to_float(img: &Image) -> Array3<f32> {
    img.mapv(f32::from)
}

fn normalise(img: &mut Array3<f32>, norm: &Normalization) {
    for ((_, _, c), v) in img.indexed_iter_mut() {
        *v = (*v / 255.0 - norm.mean[c]) / norm.std[c];
    }
}

/// Builds the three views of `img` (raw `u8` pixels) and normalises them.
pub fn make_views<R: Rng + ?Sized>(
    img: &Image,
    run: &RunConfig,
    norm: &Normalization,
    rng: &mut R,
) -> Result<ContrastiveBatchView> {
    let cfg = &run.pretrain;
    let aug = run.augment();
    let (h, w, _) = img.dim();
    let anchor = to_float(&AugmentParams::sample(h, w, &aug, rng)?.apply(img, &aug));
    let mut positive = to_float(&AugmentParams::sample(h, w, &aug, rng)?.apply(img, &aug));
    let gain = 1.0 + rng.random_range(-cfg.contrast..=cfg.contrast) as f32;
    let shift = rng.random_range(-cfg.brightness..=cfg.brightness) as f32 * 255.0;
    let mean = positive.mean().unwrap_or(0.0);
    positive.mapv_inplace(|v| ((v - mean) * gain + mean + shift).clamp(0.0, 255.0));
    let warped = random_warp(anchor.view(), cfg.warp_pixels(aug.crop_size), cfg.warp_grid, rng)?;
    let mut views = ContrastiveBatchView {
        anchor,
        positive,
        warped,
    };
    for v in [&mut views.anchor, &mut views.positive, &mut views.warped] {
        normalise(v, norm);
    }
    Ok(views)
}

pub struct PretrainOutcome {
    /// Backbone-only weights flagged with the contrastive-warp pretext.
    pub checkpoint: Checkpoint,
    pub losses: Vec<f64>,
}

/// Runs `pretrain.steps` SGD steps of warp-contrastive learning on the
/// images of `data` (labels unused). Deterministic given `pretrain.seed`.
pub fn pretrain<T: Float>(encoder: &mut Encoder<T>, data: &LoadedSplit, run: &RunConfig) -> Result<PretrainOutcome> {
    run.validate()?;
    let cfg = &run.pretrain;
    if data.images.len() < 2 {
        bail!(Data, "pretraining needs at least 2 images, got {}", data.images.len());
    }
    if encoder.backbone.spec.input_resolution != run.augment().crop_size {
        bail!(Config, "encoder resolution differs from crop size");
    }
    let norm = Normalization::default();
    let mut opt = Sgd::<T>::new(cfg.momentum, cfg.weight_decay);
    let mut losses = Vec::with_capacity(cfg.steps as usize);
    for t in 0..cfg.steps {
        let lr = cosine_lr(t, cfg.steps, cfg.base_lr)?;
        let picks = rand::seq::index::sample(
            &mut seed::stream(cfg.seed, "pretrain-batch", &[t]),
            data.images.len(),
            cfg.batch_size.min(data.images.len()),
        );
        let mut views = Vec::with_capacity(picks.len());
        for (k, i) in picks.iter().enumerate() {
            let mut rng = seed::stream(cfg.seed, "pretrain-views", &[t, k as u64]);
            views.push(make_views(&data.images[i], run, &norm, &mut rng)?);
        }
        encoder.zero_grad();
        let loss = contrastive_step(encoder, &views, cfg.temperature, cfg.polarity)?;
        opt.step(encoder.weights_mut(), lr)?;
        if (t + 1) % 50 == 0 {
            log::info!("pretrain step {} lr {lr:.5} loss {loss:.4}", t + 1);
        }
        losses.push(loss);
    }
    Ok(PretrainOutcome {
        checkpoint: Checkpoint {
            config_hash: run.hash(),
            iteration: cfg.steps,
            pretext: Some(PRETEXT_CONTRASTIVE_WARP.to_string()),
            normalization: norm,
            config: run.to_json(),
            tensors: export_backbone(encoder),
        },
        losses,
    })
}

/// Encoder initialised from `(model.init_seed)` for the configured backbone.
pub fn build_encoder<T: Float>(run: &RunConfig) -> Result<Encoder<T>> {
    let spec = run.model.backbone_spec()?;
    Encoder::new(&spec, run.pretrain.proj_dim, &mut seed::stream(run.model.init_seed, "encoder-init", &[]))
}

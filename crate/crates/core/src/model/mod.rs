//! Backbone + spatial head + classifier, stage freezing and weight import.

mod backbone;
pub mod checkpoint;
mod head;
mod weights;

pub use backbone::{Backbone, BackboneSpec, BlockKind, StageSpec, STAGE_NAMES};
pub use head::{head_output_shape, HeadConfig};
pub use weights::{MatchReport, NameMap, NamedArrays, RenameRule};
pub(crate) use weights::export_module;

use std::collections::BTreeMap;

use ndarray::{Array2, Array4, ArrayView4};
use serde::{Deserialize, Serialize};

use crate::dataset::Image;
use crate::error::{bail, Result};
use crate::nn::{join, Float, Mode, Module, Param};
use crate::seed;
use head::SpatialHead;

/// Per-channel pixel normalisation applied to `u8 / 255` values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl Normalization {
    /// Stacks `H×W×3` images into a normalised `B×H×W×3` batch.
    pub fn batch<T: Float>(&self, images: &[&Image]) -> Result<Array4<T>> {
        let Some(first) = images.first() else {
            bail!(Data, "empty batch");
        };
        let (h, w, _) = first.dim();
        let mut out = Array4::<T>::zeros((images.len(), h, w, 3));
        for (b, img) in images.iter().enumerate() {
            if img.dim() != (h, w, 3) {
                bail!(Shape, "image {b} is {:?}, expected ({h}, {w}, 3)", img.dim());
            }
            let src = img.as_standard_layout();
            let mut dst = out.index_axis_mut(ndarray::Axis(0), b);
            for ((y, x, c), d) in dst.indexed_iter_mut() {
                let v = src[[y, x, c]] as f32 / 255.0;
                *d = T::lit(((v - self.mean[c]) / self.std[c]) as f64);
            }
        }
        Ok(out)
    }
}

/// Backbone, spatial head and classifier with a stage freeze mask.
///
/// Parameter names follow `backbone.stem.*`, `backbone.stage{1..4}.*`,
/// `head.conv{1..n}.*`, `head.fc.{weight,bias}`.
pub struct ModelAssembly<T: Float = f32> {
    pub backbone: Backbone<T>,
    head: SpatialHead<T>,
    pub head_config: HeadConfig,
    pub normalization: Normalization,
    freeze_k: usize,
}

/// Deterministic construction from `init_seed`.
pub fn build_model<T: Float>(backbone: &BackboneSpec, head: &HeadConfig, init_seed: u64) -> Result<ModelAssembly<T>> {
    head.validate()?;
    let feature = backbone.feature_shape()?;
    head_output_shape(feature, head)?;
    let mut rng = seed::stream(init_seed, "model-init", &[]);
    let bb = Backbone::new(backbone, &mut rng)?;
    let hd = SpatialHead::new(feature, head, &mut rng)?;
    Ok(ModelAssembly {
        backbone: bb,
        head: hd,
        head_config: head.clone(),
        normalization: Normalization::default(),
        freeze_k: 0,
    })
}

impl<T: Float> ModelAssembly<T> {
    pub fn spec(&self) -> &BackboneSpec {
        &self.backbone.spec
    }

    pub fn input_resolution(&self) -> usize {
        self.backbone.spec.input_resolution
    }

    /// Logits for a normalised `B×H×W×3` batch.
    pub fn forward(&mut self, batch: ArrayView4<'_, T>, mode: Mode) -> Result<Array2<T>> {
        let (_, h, w, c) = batch.dim();
        let r = self.input_resolution();
        if h != r || w != r || c != 3 {
            bail!(Shape, "expected B×{r}×{r}×3 input, got {:?}", batch.dim());
        }
        let x = batch.permuted_axes([0, 3, 1, 2]).as_standard_layout().into_owned();
        Ok(self.forward_nchw(&x, mode))
    }

    pub(crate) fn forward_nchw(&mut self, x: &Array4<T>, mode: Mode) -> Array2<T> {
        let feat = self.backbone.forward(x, mode, self.freeze_k);
        self.head.forward(&feat, mode)
    }

    /// Accumulates gradients of every trainable parameter given `∂loss/∂logits`.
    pub fn backward(&mut self, dlogits: &Array2<T>) {
        let need_backbone = self.freeze_k < 4;
        if let Some(dfeat) = self.head.backward(dlogits, need_backbone) {
            self.backbone.backward(dfeat, self.freeze_k, false);
        }
    }

    /// Width of the flattened head output feeding the classifier.
    pub fn classifier_width(&self) -> usize {
        self.head.flat_width()
    }

    pub fn freeze_k(&self) -> usize {
        self.freeze_k
    }

    /// Freezes the stem and stages `1..=k`; `k = 0` freezes nothing.
    pub fn freeze_stages(&mut self, k: usize) -> Result<()> {
        if k > 4 {
            bail!(Config, "freeze_k must be in 0..=4, got {k}");
        }
        self.freeze_k = k;
        Ok(())
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        match Backbone::<T>::block_of(name) {
            Some(b) => self.freeze_k > 0 && b <= self.freeze_k,
            None => false,
        }
    }

    /// `true` for every frozen entry, covering all parameters and buffers.
    pub fn freeze_mask(&self) -> BTreeMap<String, bool> {
        self.named_params("")
            .into_iter()
            .map(|(n, _)| {
                let f = self.is_frozen(&n);
                (n, f)
            })
            .collect()
    }

    /// Learnable scalars, optionally restricted to the frozen or trainable set.
    pub fn count_weights(&self, frozen: Option<bool>) -> usize {
        self.named_params("")
            .into_iter()
            .filter(|(n, p)| p.is_weight() && frozen.is_none_or(|f| self.is_frozen(n) == f))
            .map(|(_, p)| p.value.len())
            .sum()
    }

    /// Trainable weights (not buffers, not frozen), by canonical name.
    pub fn trainable_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let k = self.freeze_k;
        self.named_params_mut("")
            .into_iter()
            .filter(|(n, p)| {
                p.is_weight() && !matches!(Backbone::<T>::block_of(n), Some(b) if k > 0 && b <= k)
            })
            .collect()
    }

    pub fn zero_classifier(&mut self) {
        self.head.fc.weight.value.fill(T::zero());
        self.head.fc.bias.value.fill(T::zero());
    }
}

impl<T: Float> Module<T> for ModelAssembly<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        self.backbone.visit(&join(prefix, "backbone"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param<T>)) {
        self.backbone.visit_mut(&join(prefix, "backbone"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

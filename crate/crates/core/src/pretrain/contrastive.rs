//! InfoNCE over anchor / positive / warped views with a projection-head encoder.

use ndarray::{Array2, Array3, Array4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::model::{export_module, Backbone, BackboneSpec, NamedArrays};
use crate::nn::{global_avg_pool, global_avg_pool_backward, join, Float, Linear, Mode, Module, Param, Relu};

/// Which view is the anchor's positive.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    /// The globally transformed view is the positive; the warped view is a negative.
    #[default]
    Negative,
    /// The warped view is the positive; the globally transformed view is a negative.
    Positive,
}

/// Three normalised `H×W×3` views of one source image.
#[derive(Clone, Debug)]
pub struct ContrastiveBatchView {
    pub anchor: Array3<f32>,
    pub positive: Array3<f32>,
    pub warped: Array3<f32>,
}

/// Backbone followed by global pooling and a two-layer projection MLP.
pub struct Encoder<T: Float = f32> {
    pub backbone: Backbone<T>,
    pub fc1: Linear<T>,
    relu: Relu<T, ndarray::Ix2>,
    pub fc2: Linear<T>,
    feat_hw: (usize, usize),
}

impl<T: Float> Encoder<T> {
    pub fn new<R: Rng>(spec: &BackboneSpec, proj_dim: usize, rng: &mut R) -> Result<Self> {
        if proj_dim == 0 {
            bail!(Config, "projection dimension must be positive");
        }
        let backbone = Backbone::new(spec, rng)?;
        let c = spec.out_channels();
        Ok(Encoder {
            backbone,
            fc1: Linear::new(c, c, rng),
            relu: Relu::default(),
            fc2: Linear::new(c, proj_dim, rng),
            feat_hw: (0, 0),
        })
    }

    /// Unnormalised embeddings for an NCHW batch.
    pub fn forward(&mut self, x: &Array4<T>, mode: Mode) -> Array2<T> {
        let feat = self.backbone.forward(x, mode, 0);
        let (_, _, h, w) = feat.dim();
        self.feat_hw = (h, w);
        let z = self.fc1.forward(global_avg_pool(&feat), mode);
        let z = self.relu.forward(z, mode);
        self.fc2.forward(z, mode)
    }

    pub fn backward(&mut self, demb: &Array2<T>) {
        let d = self.fc2.backward(demb, true).expect("requested");
        let d = self.relu.backward(d);
        let d = self.fc1.backward(&d, true).expect("requested");
        let (h, w) = self.feat_hw;
        self.backbone.backward(global_avg_pool_backward(&d, h, w), 0, false);
    }

    pub fn weights_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        self.named_params_mut("")
            .into_iter()
            .filter(|(_, p)| p.is_weight())
            .collect()
    }
}

impl<T: Float> Module<T> for Encoder<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        self.backbone.visit(&join(prefix, "backbone"), f);
        self.fc1.visit(&join(prefix, "proj.fc1"), f);
        self.fc2.visit(&join(prefix, "proj.fc2"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param<T>)) {
        self.backbone.visit_mut(&join(prefix, "backbone"), f);
        self.fc1.visit_mut(&join(prefix, "proj.fc1"), f);
        self.fc2.visit_mut(&join(prefix, "proj.fc2"), f);
    }
}

/// Backbone parameters and buffers under `backbone.*`; the projection head is dropped.
pub fn export_backbone<T: Float>(encoder: &Encoder<T>) -> NamedArrays {
    export_module(&encoder.backbone, "backbone")
}

/// Candidates per anchor for a batch of `b` images.
pub fn candidate_count(b: usize) -> usize {
    3 * b - 1
}

/// `−log softmax` of the positive among `{pos} ∪ negatives`, all similarities scaled by `1/τ`.
pub fn nce_term(pos: f64, negatives: &[f64], tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        bail!(Config, "temperature must be positive, got {tau}");
    }
    let top = negatives.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if top <= pos {
        // stays accurate as the negatives' mass vanishes
        let rest: f64 = negatives.iter().map(|s| ((s - pos) / tau).exp()).sum();
        return Ok(rest.ln_1p());
    }
    let m = top / tau;
    let sum: f64 = std::iter::once(pos).chain(negatives.iter().copied()).map(|s| (s / tau - m).exp()).sum();
    Ok(m + sum.ln() - pos / tau)
}

/// InfoNCE loss and its gradient w.r.t. raw embeddings.
///
/// Rows are `[anchors; positives; warped]`, `b` of each. Embeddings are L2
/// normalised inside. Each anchor scores every other row; the target row is
/// picked by `polarity`.
pub fn info_nce<T: Float>(emb: &Array2<T>, b: usize, tau: f64, polarity: Polarity) -> Result<(T, Array2<T>)> {
    if !(tau > 0.0) {
        bail!(Config, "temperature must be positive, got {tau}");
    }
    if b < 2 {
        bail!(Config, "contrastive batch needs at least 2 images, got {b}");
    }
    let n = emb.nrows();
    if n != 3 * b {
        bail!(Shape, "expected {} embeddings, got {n}", 3 * b);
    }
    let norms: Vec<T> = emb
        .outer_iter()
        .map(|r| r.dot(&r).sqrt().max(T::lit(1e-12)))
        .collect();
    let mut z = emb.clone();
    for (mut r, &nr) in z.outer_iter_mut().zip(&norms) {
        r.mapv_inplace(|v| v / nr);
    }
    let sims = z.slice(ndarray::s![..b, ..]).dot(&z.t());
    let inv_tau = T::lit(1.0 / tau);
    let scale = T::lit(1.0 / (tau * b as f64));
    let mut loss = T::zero();
    // ∂L/∂s for the anchor rows
    let mut ds = Array2::<T>::zeros((b, n));
    for i in 0..b {
        let target = match polarity {
            Polarity::Negative => b + i,
            Polarity::Positive => 2 * b + i,
        };
        let row = sims.row(i);
        let m = (0..n).filter(|&j| j != i).map(|j| row[j]).fold(T::neg_infinity(), T::max) * inv_tau;
        let mut denom = T::zero();
        for j in (0..n).filter(|&j| j != i) {
            denom += (row[j] * inv_tau - m).exp();
        }
        loss += m + denom.ln() - row[target] * inv_tau;
        for j in (0..n).filter(|&j| j != i) {
            let p = (row[j] * inv_tau - m).exp() / denom;
            ds[[i, j]] = (p - if j == target { T::one() } else { T::zero() }) * scale;
        }
    }
    loss = loss / T::lit(b as f64);

    let mut dz = Array2::<T>::zeros((n, z.ncols()));
    for i in 0..b {
        for j in 0..n {
            let g = ds[[i, j]];
            if g == T::zero() {
                continue;
            }
            let (zi, zj) = (z.row(i).to_owned(), z.row(j).to_owned());
            dz.row_mut(i).scaled_add(g, &zj);
            dz.row_mut(j).scaled_add(g, &zi);
        }
    }
    // back through the normalisation: (dz − z (z·dz)) / ‖e‖
    let mut demb = dz;
    for ((mut d, zr), &nr) in demb.outer_iter_mut().zip(z.outer_iter()).zip(&norms) {
        let proj = zr.dot(&d);
        d.zip_mut_with(&zr, |dv, &zv| *dv = (*dv - zv * proj) / nr);
    }
    Ok((loss, demb))
}

/// Stacks views as `[anchors; positives; warped]` in NCHW.
pub fn stack_views<T: Float>(views: &[ContrastiveBatchView]) -> Result<Array4<T>> {
    let Some(first) = views.first() else {
        bail!(Config, "empty contrastive batch");
    };
    let (h, w, c) = first.anchor.dim();
    let b = views.len();
    let mut x = Array4::<T>::zeros((3 * b, c, h, w));
    for (k, v) in views.iter().enumerate() {
        for (slot, img) in [(k, &v.anchor), (b + k, &v.positive), (2 * b + k, &v.warped)] {
            if img.dim() != (h, w, c) {
                bail!(Shape, "view {slot} is {:?}, expected {:?}", img.dim(), (h, w, c));
            }
            let mut dst = x.index_axis_mut(Axis(0), slot);
            for ((y, xx, ch), &val) in img.indexed_iter() {
                dst[[ch, y, xx]] = T::lit(val as f64);
            }
        }
    }
    Ok(x)
}

/// One forward/backward pass; gradients accumulate into the encoder.
pub fn contrastive_step<T: Float>(
    encoder: &mut Encoder<T>,
    views: &[ContrastiveBatchView],
    tau: f64,
    polarity: Polarity,
) -> Result<f64> {
    if !(tau > 0.0) {
        bail!(Config, "temperature must be positive, got {tau}");
    }
    if views.len() < 2 {
        bail!(Config, "contrastive batch needs at least 2 images, got {}", views.len());
    }
    let x = stack_views::<T>(views)?;
    let emb = encoder.forward(&x, Mode::Train);
    let (loss, demb) = info_nce(&emb, views.len(), tau, polarity)?;
    let loss = loss.to_f64().expect("finite");
    if !loss.is_finite() {
        bail!(Numerics, "contrastive loss is not finite");
    }
    encoder.backward(&demb);
    Ok(loss)
}

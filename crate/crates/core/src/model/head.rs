//! Spatial down-sampling head: strided convolutions, flatten, one linear classifier.

use ndarray::{Array2, Array4, Ix4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::nn::{join, Conv2d, Float, Linear, Mode, Module, Param, Relu};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub n_conv: usize,
    pub kernel: usize,
    pub stride: usize,
    pub hidden_channels: usize,
    pub n_classes: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            n_conv: 2,
            kernel: 2,
            stride: 2,
            hidden_channels: 256,
            n_classes: crate::dataset::N_CLASSES,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_conv < 1 {
            bail!(Config, "head needs at least one convolution");
        }
        if self.kernel == 0 || self.stride == 0 || self.hidden_channels == 0 || self.n_classes == 0 {
            bail!(Config, "head kernel, stride, width and class count must be positive");
        }
        Ok(())
    }

    /// Spatial size after each convolution, starting from `(h, w)`.
    pub fn spatial_cascade(&self, h: usize, w: usize) -> Result<Vec<(usize, usize)>> {
        self.validate()?;
        let mut dims = Vec::with_capacity(self.n_conv);
        let (mut h, mut w) = (h, w);
        for i in 0..self.n_conv {
            if h < self.kernel || w < self.kernel {
                bail!(
                    Shape,
                    "head conv{} input {h}x{w} is smaller than kernel {}",
                    i + 1,
                    self.kernel
                );
            }
            h = (h - self.kernel) / self.stride + 1;
            w = (w - self.kernel) / self.stride + 1;
            dims.push((h, w));
        }
        Ok(dims)
    }
}

/// Classifier input width for a backbone feature map `(H, W, C)`:
/// `H'·W'·hidden_channels` after `n_conv` unpadded strided convolutions.
pub fn head_output_shape(feature_shape: (usize, usize, usize), head: &HeadConfig) -> Result<usize> {
    let (h, w, _c) = feature_shape;
    let cascade = head.spatial_cascade(h, w)?;
    let &(hh, ww) = cascade.last().expect("n_conv >= 1");
    Ok(hh * ww * head.hidden_channels)
}

pub(crate) struct SpatialHead<T> {
    convs: Vec<Conv2d<T>>,
    relus: Vec<Relu<T, Ix4>>,
    pub(crate) fc: Linear<T>,
    flat_shape: Option<(usize, usize, usize, usize)>,
}

impl<T: Float> SpatialHead<T> {
    pub(crate) fn new<R: Rng>(
        feature_shape: (usize, usize, usize),
        cfg: &HeadConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let flat = head_output_shape(feature_shape, cfg)?;
        let mut c_in = feature_shape.2;
        let mut convs = Vec::with_capacity(cfg.n_conv);
        for _ in 0..cfg.n_conv {
            convs.push(Conv2d::new_with_bias(c_in, cfg.hidden_channels, cfg.kernel, cfg.stride, 0, rng));
            c_in = cfg.hidden_channels;
        }
        Ok(SpatialHead {
            relus: (0..cfg.n_conv).map(|_| Relu::default()).collect(),
            convs,
            fc: Linear::new(flat, cfg.n_classes, rng),
            flat_shape: None,
        })
    }

    /// Channel-major flatten of the final `C×H'×W'` map; positions stay distinct features.
    pub(crate) fn forward(&mut self, x: &Array4<T>, mode: Mode) -> Array2<T> {
        let mut h = x.clone();
        for (conv, relu) in self.convs.iter_mut().zip(self.relus.iter_mut()) {
            h = conv.forward(&h, mode);
            h = relu.forward(h, mode);
        }
        let (n, c, hh, ww) = h.dim();
        self.flat_shape = Some((n, c, hh, ww));
        let flat = h.into_shape_with_order((n, c * hh * ww)).expect("standard layout");
        self.fc.forward(flat, mode)
    }

    pub(crate) fn flat_width(&self) -> usize {
        self.fc.in_features
    }

    pub(crate) fn backward(&mut self, dlogits: &Array2<T>, need_dx: bool) -> Option<Array4<T>> {
        let shape = self.flat_shape.expect("head backward without forward");
        let dflat = self.fc.backward(dlogits, true).expect("requested");
        let mut d = dflat.into_shape_with_order(shape).expect("standard layout");
        for i in (0..self.convs.len()).rev() {
            d = self.relus[i].backward(d);
            let need = i > 0 || need_dx;
            match self.convs[i].backward(&d, need) {
                Some(g) => d = g,
                None => return None,
            }
        }
        Some(d)
    }
}

impl<T: Float> Module<T> for SpatialHead<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit(&join(prefix, &format!("conv{}", i + 1)), f);
        }
        self.fc.visit(&join(prefix, "fc"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param<T>)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_mut(&join(prefix, &format!("conv{}", i + 1)), f);
        }
        self.fc.visit_mut(&join(prefix, "fc"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_cascades() {
        let cfg = HeadConfig::default();
        assert_eq!(cfg.spatial_cascade(7, 7).unwrap(), vec![(3, 3), (1, 1)]);
        assert_eq!(head_output_shape((7, 7, 2048), &cfg).unwrap(), 256);
        assert_eq!(head_output_shape((4, 4, 512), &cfg).unwrap(), 256);
    }

    #[test]
    fn too_small_map_fails_at_second_conv() {
        let err = head_output_shape((2, 2, 64), &HeadConfig::default()).unwrap_err();
        match err {
            crate::Error::Shape(msg) => assert!(msg.contains("conv2"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_conv_keeps_more_positions() {
        let cfg = HeadConfig {
            n_conv: 1,
            ..HeadConfig::default()
        };
        assert_eq!(head_output_shape((7, 7, 2048), &cfg).unwrap(), 3 * 3 * 256);
        let zero = HeadConfig {
            n_conv: 0,
            ..HeadConfig::default()
        };
        assert!(matches!(head_output_shape((7, 7, 8), &zero), Err(crate::Error::Config(_))));
    }
}

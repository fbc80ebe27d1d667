//! Residual-network backbones: a stem plus four stages.

use ndarray::Array4;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::nn::{join, BatchNorm2d, Conv2d, Float, MaxPool2d, Mode, Module, Param, Relu};
use ndarray::Ix4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    /// Two 3×3 convolutions (18/34-layer networks).
    Basic,
    /// 1×1 → 3×3 → 1×1 with 4× expansion (50-layer and deeper).
    Bottleneck,
}

impl BlockKind {
    pub fn expansion(self) -> usize {
        match self {
            BlockKind::Basic => 1,
            BlockKind::Bottleneck => 4,
        }
    }
}

/// Geometry of one of the five backbone blocks (stem + 4 stages).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageSpec {
    pub name: &'static str,
    pub out_channels: usize,
    pub cumulative_stride: usize,
    pub n_blocks: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub name: String,
    pub block: BlockKind,
    pub blocks_per_stage: [usize; 4],
    /// Stem width; stage `i` has `base_width · 2^(i-1) · expansion` output channels.
    pub base_width: usize,
    pub input_resolution: usize,
}

pub const STAGE_NAMES: [&str; 5] = ["stem", "stage1", "stage2", "stage3", "stage4"];

impl BackboneSpec {
    pub fn resnet18(input_resolution: usize) -> Self {
        BackboneSpec {
            name: "resnet18".into(),
            block: BlockKind::Basic,
            blocks_per_stage: [2, 2, 2, 2],
            base_width: 64,
            input_resolution,
        }
    }

    pub fn resnet50(input_resolution: usize) -> Self {
        BackboneSpec {
            name: "resnet50".into(),
            block: BlockKind::Bottleneck,
            blocks_per_stage: [3, 4, 6, 3],
            base_width: 64,
            input_resolution,
        }
    }

    /// Names accepted by [`BackboneSpec::from_name`].
    pub fn registry() -> &'static [&'static str] {
        &["resnet18", "resnet50"]
    }

    pub fn from_name(name: &str, input_resolution: usize) -> Result<Self> {
        match name {
            "resnet18" => Ok(Self::resnet18(input_resolution)),
            "resnet50" => Ok(Self::resnet50(input_resolution)),
            other => bail!(Config, "unknown backbone {other:?}; known: {:?}", Self::registry()),
        }
    }

    /// Same depth, narrower channels (desk-scale runs).
    pub fn with_base_width(mut self, base_width: usize) -> Self {
        self.base_width = base_width;
        self
    }

    pub fn stages(&self) -> [StageSpec; 5] {
        let e = self.block.expansion();
        let w = self.base_width;
        let stage = |i: usize| StageSpec {
            name: STAGE_NAMES[i],
            out_channels: w * (1 << (i - 1)) * e,
            cumulative_stride: 4 * (1 << (i - 1)),
            n_blocks: self.blocks_per_stage[i - 1],
        };
        [
            StageSpec {
                name: "stem",
                out_channels: w,
                cumulative_stride: 4,
                n_blocks: 1,
            },
            stage(1),
            stage(2),
            stage(3),
            stage(4),
        ]
    }

    pub fn out_channels(&self) -> usize {
        self.stages()[4].out_channels
    }

    /// Final feature map `(H, W, C)` for the configured input resolution.
    pub fn feature_shape(&self) -> Result<(usize, usize, usize)> {
        let down = |x: usize, k: usize, p: usize| -> Result<usize> {
            if x + 2 * p < k {
                bail!(Shape, "input resolution {} too small for {}", self.input_resolution, self.name);
            }
            Ok((x + 2 * p - k) / 2 + 1)
        };
        let mut s = down(self.input_resolution, 7, 3)?;
        s = down(s, 3, 1)?;
        for _ in 0..3 {
            s = down(s, 3, 1)?;
        }
        Ok((s, s, self.out_channels()))
    }
}

pub(crate) struct Downsample<T> {
    conv: Conv2d<T>,
    bn: BatchNorm2d<T>,
}

pub(crate) struct ResBlock<T> {
    convs: Vec<Conv2d<T>>,
    bns: Vec<BatchNorm2d<T>>,
    relus: Vec<Relu<T, Ix4>>,
    downsample: Option<Downsample<T>>,
    relu_out: Relu<T, Ix4>,
}

impl<T: Float> ResBlock<T> {
    fn new<R: Rng>(kind: BlockKind, c_in: usize, width: usize, stride: usize, rng: &mut R) -> Self {
        let c_out = width * kind.expansion();
        let convs = match kind {
            BlockKind::Basic => vec![
                Conv2d::new_no_bias(c_in, width, 3, stride, 1, rng),
                Conv2d::new_no_bias(width, width, 3, 1, 1, rng),
            ],
            BlockKind::Bottleneck => vec![
                Conv2d::new_no_bias(c_in, width, 1, 1, 0, rng),
                Conv2d::new_no_bias(width, width, 3, stride, 1, rng),
                Conv2d::new_no_bias(width, c_out, 1, 1, 0, rng),
            ],
        };
        let bns = convs.iter().map(|c| BatchNorm2d::new(c.out_channels)).collect();
        let relus = (0..convs.len() - 1).map(|_| Relu::default()).collect();
        let downsample = (stride != 1 || c_in != c_out).then(|| Downsample {
            conv: Conv2d::new_no_bias(c_in, c_out, 1, stride, 0, rng),
            bn: BatchNorm2d::new(c_out),
        });
        ResBlock {
            convs,
            bns,
            relus,
            downsample,
            relu_out: Relu::default(),
        }
    }

    fn forward(&mut self, x: &Array4<T>, mode: Mode) -> Array4<T> {
        let n = self.convs.len();
        let mut h = x.clone();
        for i in 0..n {
            h = self.convs[i].forward(&h, mode);
            h = self.bns[i].forward(&h, mode);
            if i + 1 < n {
                h = self.relus[i].forward(h, mode);
            }
        }
        match &mut self.downsample {
            Some(ds) => {
                let s = ds.conv.forward(x, mode);
                h += &ds.bn.forward(&s, mode);
            }
            None => h += x,
        }
        self.relu_out.forward(h, mode)
    }

    fn backward(&mut self, dy: Array4<T>, need_dx: bool) -> Option<Array4<T>> {
        let d = self.relu_out.backward(dy);
        let n = self.convs.len();
        let mut h = d.clone();
        let mut dx = None;
        for i in (0..n).rev() {
            if i + 1 < n {
                h = self.relus[i].backward(h);
            }
            h = self.bns[i].backward(&h);
            let need = i > 0 || need_dx;
            match self.convs[i].backward(&h, need) {
                Some(g) if i > 0 => h = g,
                g => dx = g,
            }
        }
        let shortcut = match &mut self.downsample {
            Some(ds) => {
                let g = ds.bn.backward(&d);
                ds.conv.backward(&g, need_dx)
            }
            None => need_dx.then_some(d),
        };
        match (dx, shortcut) {
            (Some(mut a), Some(b)) => {
                a += &b;
                Some(a)
            }
            _ => None,
        }
    }

    fn visit_impl<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        for (i, (c, b)) in self.convs.iter().zip(&self.bns).enumerate() {
            c.visit(&join(prefix, &format!("conv{}", i + 1)), f);
            b.visit(&join(prefix, &format!("bn{}", i + 1)), f);
        }
        if let Some(ds) = &self.downsample {
            ds.conv.visit(&join(prefix, "downsample.conv"), f);
            ds.bn.visit(&join(prefix, "downsample.bn"), f);
        }
    }

    fn visit_mut_impl<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param<T>)) {
        for (i, (c, b)) in self.convs.iter_mut().zip(self.bns.iter_mut()).enumerate() {
            c.visit_mut(&join(prefix, &format!("conv{}", i + 1)), f);
            b.visit_mut(&join(prefix, &format!("bn{}", i + 1)), f);
        }
        if let Some(ds) = &mut self.downsample {
            ds.conv.visit_mut(&join(prefix, "downsample.conv"), f);
            ds.bn.visit_mut(&join(prefix, "downsample.bn"), f);
        }
    }
}

pub(crate) struct Stem<T> {
    conv: Conv2d<T>,
    bn: BatchNorm2d<T>,
    relu: Relu<T, Ix4>,
    pool: MaxPool2d,
}

impl<T: Float> Stem<T> {
    fn forward(&mut self, x: &Array4<T>, mode: Mode) -> Array4<T> {
        let h = self.conv.forward(x, mode);
        let h = self.bn.forward(&h, mode);
        let h = self.relu.forward(h, mode);
        self.pool.forward(&h, mode)
    }

    fn backward(&mut self, dy: Array4<T>, need_dx: bool) -> Option<Array4<T>> {
        let d = self.pool.backward(&dy);
        let d = self.relu.backward(d);
        let d = self.bn.backward(&d);
        self.conv.backward(&d, need_dx)
    }
}

/// Stem + four residual stages, parameters named `backbone.stem.*`, `backbone.stage{1..4}.*`.
pub struct Backbone<T> {
    pub spec: BackboneSpec,
    stem: Stem<T>,
    stages: Vec<Vec<ResBlock<T>>>,
}

impl<T: Float> Backbone<T> {
    pub fn new<R: Rng>(spec: &BackboneSpec, rng: &mut R) -> Result<Self> {
        if spec.base_width == 0 {
            bail!(Config, "backbone base width must be positive");
        }
        spec.feature_shape()?;
        let w = spec.base_width;
        let stem = Stem {
            conv: Conv2d::new_no_bias(3, w, 7, 2, 3, rng),
            bn: BatchNorm2d::new(w),
            relu: Relu::default(),
            pool: MaxPool2d::new(3, 2, 1),
        };
        let mut c_in = w;
        let mut stages = Vec::with_capacity(4);
        for (i, &n_blocks) in spec.blocks_per_stage.iter().enumerate() {
            let width = w << i;
            let stride = if i == 0 { 1 } else { 2 };
            let mut blocks = Vec::with_capacity(n_blocks);
            for b in 0..n_blocks {
                blocks.push(ResBlock::new(spec.block, c_in, width, if b == 0 { stride } else { 1 }, rng));
                c_in = width * spec.block.expansion();
            }
            stages.push(blocks);
        }
        Ok(Backbone {
            spec: spec.clone(),
            stem,
            stages,
        })
    }

    /// Runs all five blocks; blocks `0..=frozen_upto` (when `frozen > 0`) run in eval mode.
    pub fn forward(&mut self, x: &Array4<T>, mode: Mode, frozen: usize) -> Array4<T> {
        let mode_of = |b: usize| if frozen > 0 && b <= frozen { Mode::Eval } else { mode };
        let mut h = self.stem.forward(x, mode_of(0));
        for (i, stage) in self.stages.iter_mut().enumerate() {
            let m = mode_of(i + 1);
            for block in stage.iter_mut() {
                h = block.forward(&h, m);
            }
        }
        h
    }

    /// Back-propagates through the trainable blocks only; returns the input
    /// gradient when nothing is frozen and `need_dx` is set.
    pub fn backward(&mut self, dy: Array4<T>, frozen: usize, need_dx: bool) -> Option<Array4<T>> {
        let first = if frozen > 0 { frozen + 1 } else { 0 };
        let mut d = dy;
        for s in (first.max(1)..=4).rev() {
            let stage = &mut self.stages[s - 1];
            for (bi, block) in stage.iter_mut().enumerate().rev() {
                let need = !(s == first && bi == 0) || need_dx;
                match block.backward(d, need) {
                    Some(g) => d = g,
                    None => return None,
                }
            }
        }
        if first == 0 {
            self.stem.backward(d, need_dx)
        } else {
            None
        }
    }

    /// Index of the block (0 = stem) owning a canonical parameter name.
    pub fn block_of(name: &str) -> Option<usize> {
        let rest = name.strip_prefix("backbone.")?;
        STAGE_NAMES
            .iter()
            .position(|s| rest.starts_with(s) && rest[s.len()..].starts_with('.'))
    }
}

impl<T: Float> Module<T> for Backbone<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        let stem = join(prefix, "stem");
        self.stem.conv.visit(&join(&stem, "conv"), f);
        self.stem.bn.visit(&join(&stem, "bn"), f);
        for (i, stage) in self.stages.iter().enumerate() {
            for (b, block) in stage.iter().enumerate() {
                block.visit_impl(&join(prefix, &format!("stage{}.{b}", i + 1)), f);
            }
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param<T>)) {
        let stem = join(prefix, "stem");
        self.stem.conv.visit_mut(&join(&stem, "conv"), f);
        self.stem.bn.visit_mut(&join(&stem, "bn"), f);
        for (i, stage) in self.stages.iter_mut().enumerate() {
            for (b, block) in stage.iter_mut().enumerate() {
                block.visit_mut_impl(&join(prefix, &format!("stage{}.{b}", i + 1)), f);
            }
        }
    }
}

//! A small CPU neural-network engine with hand-written backward passes.
//!
//! Activations are NCHW `Array4` values in standard layout. Layers cache what
//! their backward pass needs when run in [`Mode::Train`] and accumulate into
//! their parameters' gradients; [`Mode::Eval`] keeps nothing. Convolutions use
//! im2col followed by a single GEMM over the whole batch.

mod act;
mod conv;
mod linear;
mod norm;
mod pool;

pub use act::Relu;
pub use conv::Conv2d;
pub use linear::Linear;
pub use norm::BatchNorm2d;
pub use pool::{global_avg_pool, global_avg_pool_backward, MaxPool2d};

use ndarray::{ArrayD, IxDyn, NdFloat};
use num_traits::FromPrimitive;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

/// Scalar types the engine runs in. Training uses `f32`; gradient checks use `f64`.
pub trait Float: NdFloat + FromPrimitive + Default {
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite literal")
    }
}

impl Float for f32 {}
impl Float for f64 {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, caches kept for backward.
    Train,
    /// Running statistics, nothing cached.
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Learned by gradient descent.
    Weight,
    /// State carried in checkpoints but never given a gradient (normalization statistics).
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: ArrayD<T>,
    pub grad: ArrayD<T>,
    pub kind: ParamKind,
}

impl<T: Float> Param<T> {
    pub fn weight(value: ArrayD<T>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param {
            value,
            grad,
            kind: ParamKind::Weight,
        }
    }

    pub fn buffer(value: ArrayD<T>) -> Self {
        Param {
            value,
            grad: ArrayD::zeros(IxDyn(&[0])),
            kind: ParamKind::Buffer,
        }
    }

    pub fn is_weight(&self) -> bool {
        self.kind == ParamKind::Weight
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Anything holding named parameters.
///
/// Names are joined with `.`; the prefix passed in is the owner's path.
pub trait Module<T: Float> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>));
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param<T>));

    fn named_params(&self, prefix: &str) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        self.visit(prefix, &mut |n, p| out.push((n, p)));
        out
    }

    fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Param<T>)> {
        let mut out = Vec::new();
        self.visit_mut(prefix, &mut |n, p| out.push((n, p)));
        out
    }

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// He-normal initialisation with `fan` as the variance denominator.
pub(crate) fn kaiming_normal<T: Float, R: Rng>(shape: &[usize], fan: usize, rng: &mut R) -> ArrayD<T> {
    let std = (2.0 / fan as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || T::lit(dist.sample(rng)))
}

pub(crate) fn uniform<T: Float, R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> ArrayD<T> {
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || T::lit(dist.sample(rng)))
}

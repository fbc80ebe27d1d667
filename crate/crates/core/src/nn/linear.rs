use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Ix2};
use rand::Rng;

use super::{join, uniform, Float, Mode, Module, Param};

/// Fully-connected layer `y = x Wᵀ + b`, weight stored `[out, in]`.
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_features: usize,
    pub out_features: usize,
    cache: Option<Array2<T>>,
}

impl<T: Float> Linear<T> {
    pub fn new<R: Rng>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        Linear {
            weight: Param::weight(uniform(&[out_features, in_features], bound, rng)),
            bias: Param::weight(uniform(&[out_features], bound, rng)),
            in_features,
            out_features,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: Array2<T>, mode: Mode) -> Array2<T> {
        assert_eq!(x.ncols(), self.in_features, "linear input width");
        let w = self.weight.value.view().into_dimensionality::<Ix2>().expect("2-d weight");
        let b = self.bias.value.as_slice().expect("contiguous bias");
        let mut y = Array2::<T>::zeros((x.nrows(), self.out_features));
        general_mat_mul(T::one(), &x, &w.t(), T::zero(), &mut y);
        for mut row in y.outer_iter_mut() {
            for (v, &bi) in row.iter_mut().zip(b) {
                *v += bi;
            }
        }
        self.cache = match mode {
            Mode::Train => Some(x),
            Mode::Eval => None,
        };
        y
    }

    pub fn backward(&mut self, dy: &Array2<T>, need_dx: bool) -> Option<Array2<T>> {
        let x = self.cache.take().expect("linear backward without a training forward");
        {
            let mut gw = self.weight.grad.view_mut().into_dimensionality::<Ix2>().expect("2-d grad");
            general_mat_mul(T::one(), &dy.t(), &x, T::one(), &mut gw);
        }
        let gb = self.bias.grad.as_slice_mut().expect("contiguous bias grad");
        for row in dy.outer_iter() {
            for (g, &d) in gb.iter_mut().zip(row.iter()) {
                *g += d;
            }
        }
        if !need_dx {
            return None;
        }
        let w = self.weight.value.view().into_dimensionality::<Ix2>().expect("2-d weight");
        Some(dy.dot(&w))
    }
}

impl<T: Float> Module<T> for Linear<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

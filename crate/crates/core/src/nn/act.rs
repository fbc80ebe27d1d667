use ndarray::{Array, Dimension};

use super::{Float, Mode};

/// Rectifier; caches its output to mask the backward pass.
pub struct Relu<T, D> {
    out: Option<Array<T, D>>,
}

impl<T: Float, D: Dimension> Default for Relu<T, D> {
    fn default() -> Self {
        Relu { out: None }
    }
}

impl<T: Float, D: Dimension> Relu<T, D> {
    pub fn forward(&mut self, mut x: Array<T, D>, mode: Mode) -> Array<T, D> {
        x.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
        self.out = match mode {
            Mode::Train => Some(x.clone()),
            Mode::Eval => None,
        };
        x
    }

    pub fn backward(&mut self, mut dy: Array<T, D>) -> Array<T, D> {
        let out = self.out.take().expect("relu backward without a training forward");
        dy.zip_mut_with(&out, |d, &o| {
            if o <= T::zero() {
                *d = T::zero();
            }
        });
        dy
    }
}

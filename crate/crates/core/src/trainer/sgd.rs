use std::collections::BTreeMap;

use ndarray::ArrayD;

use crate::error::{bail, Result};
use crate::nn::{Float, Param};

/// One SGD-with-momentum update:
/// `v ← momentum·v + (grad + weight_decay·param)`, `param ← param − lr·v`.
pub fn sgd_step<T: Float>(
    param: &mut [T],
    grad: &[T],
    velocity: &mut [T],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    assert!(param.len() == grad.len() && param.len() == velocity.len(), "sgd shapes");
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        bail!(Numerics, "non-finite gradient at element {i}: {}", grad[i]);
    }
    let (lr, m, wd) = (T::lit(lr), T::lit(momentum), T::lit(weight_decay));
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = m * *v + (g + wd * *p);
        *p = *p - lr * *v;
    }
    Ok(())
}

/// Momentum buffers keyed by canonical parameter name.
#[derive(Default)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    state: BTreeMap<String, ArrayD<T>>,
}

impl<T: Float> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            state: BTreeMap::new(),
        }
    }

    /// Updates every given parameter; a non-finite gradient anywhere aborts before any write.
    pub fn step(&mut self, params: Vec<(String, &mut Param<T>)>, lr: f64) -> Result<()> {
        for (name, p) in &params {
            if p.grad.iter().any(|g| !g.is_finite()) {
                bail!(Numerics, "non-finite gradient in {name}");
            }
        }
        for (name, p) in params {
            let v = self
                .state
                .entry(name)
                .or_insert_with(|| ArrayD::zeros(p.value.raw_dim()));
            sgd_step(
                p.value.as_slice_mut().expect("contiguous param"),
                p.grad.as_slice().expect("contiguous grad"),
                v.as_slice_mut().expect("contiguous state"),
                lr,
                self.momentum,
                self.weight_decay,
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plain_sgd_without_momentum() {
        let mut p = [1.0f64, -2.0];
        let mut v = [0.0; 2];
        sgd_step(&mut p, &[0.5, 0.25], &mut v, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(p, [1.0 - 0.1 * 0.5, -2.0 - 0.1 * 0.25]);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = [3.0f64];
        let mut v = [0.0];
        sgd_step(&mut p, &[0.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p, [3.0]);
    }

    #[test]
    fn two_momentum_steps_match_hand_recurrence() {
        // p0 = 1, g = 2 p (gradient of p²), lr = 0.1, momentum 0.9, wd 0.01
        let (lr, m, wd) = (0.1, 0.9, 0.01);
        let mut p = [1.0f64];
        let mut v = [0.0];
        let g1 = 2.0 * p[0];
        sgd_step(&mut p, &[g1], &mut v, lr, m, wd).unwrap();
        let v1 = 2.0 + 0.01;
        let p1 = 1.0 - 0.1 * v1;
        assert_eq!(p[0], p1);
        let g2 = 2.0 * p[0];
        sgd_step(&mut p, &[g2], &mut v, lr, m, wd).unwrap();
        let v2 = 0.9 * v1 + (2.0 * p1 + 0.01 * p1);
        assert_eq!(v[0], v2);
        assert_eq!(p[0], p1 - 0.1 * v2);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = [1.0f32];
        let mut v = [0.0];
        let err = sgd_step(&mut p, &[f32::NAN], &mut v, 0.1, 0.9, 0.0).unwrap_err();
        assert!(matches!(err, crate::Error::Numerics(_)));
        assert_eq!(p, [1.0]);
    }

    proptest! {
        #[test]
        fn matches_recurrence_on_random_tensors(
            data in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0, -1.0f64..1.0), 1..32),
            lr in 0.0f64..1.0, m in 0.0f64..1.0, wd in 0.0f64..0.1,
        ) {
            let mut p: Vec<f64> = data.iter().map(|d| d.0).collect();
            let g: Vec<f64> = data.iter().map(|d| d.1).collect();
            let mut v: Vec<f64> = data.iter().map(|d| d.2).collect();
            let (p0, v0) = (p.clone(), v.clone());
            sgd_step(&mut p, &g, &mut v, lr, m, wd).unwrap();
            for i in 0..p.len() {
                let ve = m * v0[i] + (g[i] + wd * p0[i]);
                prop_assert_eq!(v[i], ve);
                prop_assert_eq!(p[i], p0[i] - lr * ve);
            }
        }
    }
}

use ndarray::Array2;

use crate::error::{bail, Result};
use crate::nn::Float;

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn loss_and_grad<T: Float>(logits: &Array2<T>, labels: &[usize]) -> Result<(T, Array2<T>)> {
    let (b, k) = logits.dim();
    if labels.len() != b {
        bail!(Data, "{} labels for {b} logit rows", labels.len());
    }
    if b == 0 {
        bail!(Data, "empty batch");
    }
    let inv_b = T::one() / T::from_usize(b).expect("count");
    let mut grad = Array2::<T>::zeros((b, k));
    let mut total = T::zero();
    for (i, (row, &y)) in logits.outer_iter().zip(labels).enumerate() {
        if y >= k {
            bail!(Data, "label {y} out of range for {k} classes");
        }
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for &v in row.iter() {
            sum += (v - max).exp();
        }
        let lse = max + sum.ln();
        total += lse - row[y];
        for j in 0..k {
            let p = (row[j] - lse).exp();
            grad[[i, j]] = (p - if j == y { T::one() } else { T::zero() }) * inv_b;
        }
    }
    Ok((total * inv_b, grad))
}

pub fn compute_loss<T: Float>(logits: &Array2<T>, labels: &[usize]) -> Result<T> {
    loss_and_grad(logits, labels).map(|(l, _)| l)
}

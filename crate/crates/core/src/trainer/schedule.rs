use std::f64::consts::PI;

use crate::error::{bail, Result};

/// Cosine decay from `base_lr` at `t = 0` to exactly zero at `t = total`.
pub fn cosine_lr(t: u64, total: u64, base_lr: f64) -> Result<f64> {
    if total == 0 {
        bail!(Config, "total_iters must be >= 1");
    }
    if t > total {
        bail!(Config, "iteration {t} past the end of the schedule ({total})");
    }
    Ok(base_lr * 0.5 * (1.0 + (PI * t as f64 / total as f64).cos()))
}

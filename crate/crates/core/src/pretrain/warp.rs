//! Local image warps: a coarse grid of random displacements, bilinearly
//! upsampled to a dense field and applied by backward bilinear sampling.

use ndarray::{Array3, ArrayView3};
use rand::Rng;

use crate::error::{bail, Result};

/// `G×G` control displacements `(dx, dy)` in pixels, each bounded by `magnitude` in ∞-norm.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpField {
    pub grid: usize,
    pub magnitude: f32,
    /// `[G, G, 2]`, last axis `(dx, dy)`.
    pub control: Array3<f32>,
}

fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

impl WarpField {
    pub fn random<R: Rng + ?Sized>(grid: usize, magnitude: f32, rng: &mut R) -> Result<Self> {
        if !(magnitude >= 0.0) || !magnitude.is_finite() {
            bail!(Config, "warp magnitude must be a non-negative number, got {magnitude}");
        }
        if grid < 2 {
            bail!(Config, "warp grid must be at least 2x2");
        }
        let control = Array3::from_shape_simple_fn((grid, grid, 2), || {
            if magnitude == 0.0 {
                0.0
            } else {
                rng.random_range(-magnitude..=magnitude)
            }
        });
        Ok(WarpField {
            grid,
            magnitude,
            control,
        })
    }

    pub fn constant(grid: usize, dx: f32, dy: f32) -> Self {
        let mut control = Array3::zeros((grid, grid, 2));
        for mut v in control.outer_iter_mut() {
            for mut d in v.outer_iter_mut() {
                d[0] = dx;
                d[1] = dy;
            }
        }
        WarpField {
            grid,
            magnitude: dx.abs().max(dy.abs()),
            control,
        }
    }

    /// Dense `[H, W, 2]` displacement; control points sit on an even lattice
    /// spanning the image corners.
    pub fn dense(&self, height: usize, width: usize) -> Array3<f32> {
        let g = self.grid;
        let scale = |n: usize, i: usize| {
            if n <= 1 {
                0.0
            } else {
                i as f32 * (g - 1) as f32 / (n - 1) as f32
            }
        };
        let m = self.magnitude;
        Array3::from_shape_fn((height, width, 2), |(y, x, k)| {
            let gy = scale(height, y);
            let gx = scale(width, x);
            let y0 = (gy.floor() as usize).min(g - 2);
            let x0 = (gx.floor() as usize).min(g - 2);
            let (ty, tx) = (gy - y0 as f32, gx - x0 as f32);
            let c = &self.control;
            let top = lerp(c[[y0, x0, k]], c[[y0, x0 + 1, k]], tx);
            let bottom = lerp(c[[y0 + 1, x0, k]], c[[y0 + 1, x0 + 1, k]], tx);
            lerp(top, bottom, ty).clamp(-m, m)
        })
    }

    /// `out(y, x) = in(y + dy, x + dx)`, bilinear, coordinates clamped to the image.
    pub fn apply(&self, image: ArrayView3<'_, f32>) -> Array3<f32> {
        let (h, w, c) = image.dim();
        let field = self.dense(h, w);
        let mut out = Array3::zeros((h, w, c));
        for y in 0..h {
            for x in 0..w {
                let sx = (x as f32 + field[[y, x, 0]]).clamp(0.0, (w - 1) as f32);
                let sy = (y as f32 + field[[y, x, 1]]).clamp(0.0, (h - 1) as f32);
                let x0 = sx.floor() as usize;
                let y0 = sy.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let y1 = (y0 + 1).min(h - 1);
                let (tx, ty) = (sx - x0 as f32, sy - y0 as f32);
                for ch in 0..c {
                    let top = lerp(image[[y0, x0, ch]], image[[y0, x1, ch]], tx);
                    let bottom = lerp(image[[y1, x0, ch]], image[[y1, x1, ch]], tx);
                    out[[y, x, ch]] = lerp(top, bottom, ty);
                }
            }
        }
        out
    }
}

/// Warps `image` with a fresh random `grid × grid` field bounded by `magnitude` pixels.
pub fn random_warp<R: Rng + ?Sized>(image: ArrayView3<'_, f32>, magnitude: f32, grid: usize, rng: &mut R) -> Result<Array3<f32>> {
    Ok(WarpField::random(grid, magnitude, rng)?.apply(image))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn noise(h: usize, w: usize, s: u64) -> Array3<f32> {
        let mut rng = seed::stream(s, "img", &[]);
        Array3::from_shape_simple_fn((h, w, 3), || rng.random_range(0.0..255.0))
    }

    #[test]
    fn zero_magnitude_is_identity() {
        let img = noise(9, 11, 1);
        let out = random_warp(img.view(), 0.0, 4, &mut seed::stream(2, "w", &[])).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn constant_unit_shift_matches_clamped_shift_oracle() {
        let img = noise(6, 7, 3);
        let out = WarpField::constant(2, 1.0, 0.0).apply(img.view());
        // oracle: out(y, x) = in(y, min(x + 1, W - 1))
        let (h, w, _) = img.dim();
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    assert_eq!(out[[y, x, c]], img[[y, (x + 1).min(w - 1), c]]);
                }
            }
        }
    }

    #[test]
    fn corners_fixed_under_zero_corner_grid() {
        let img = noise(8, 8, 4);
        let f = WarpField {
            grid: 2,
            magnitude: 3.0,
            control: Array3::zeros((2, 2, 2)),
        };
        let out = f.apply(img.view());
        for &(y, x) in &[(0, 0), (0, 7), (7, 0), (7, 7)] {
            assert_eq!(out[[y, x, 0]], img[[y, x, 0]]);
        }
    }

    #[test]
    fn invalid_parameters() {
        let mut rng = seed::stream(0, "w", &[]);
        assert!(matches!(WarpField::random(4, -1.0, &mut rng), Err(crate::Error::Config(_))));
        assert!(WarpField::random(1, 1.0, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn dense_field_is_bounded(m in 0.0f32..20.0, g in 2usize..6, h in 2usize..24, w in 2usize..24, s in any::<u64>()) {
            let f = WarpField::random(g, m, &mut seed::stream(s, "w", &[])).unwrap();
            let d = f.dense(h, w);
            prop_assert!(d.iter().all(|v| v.abs() <= m));
        }

        #[test]
        fn deterministic_given_seed(s in any::<u64>()) {
            let img = noise(10, 10, 5);
            let a = random_warp(img.view(), 2.5, 3, &mut seed::stream(s, "w", &[])).unwrap();
            let b = random_warp(img.view(), 2.5, 3, &mut seed::stream(s, "w", &[])).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}

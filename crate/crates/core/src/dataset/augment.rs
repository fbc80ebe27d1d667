use ndarray::{s, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::{bail, Result};

/// Random crop from a zero-padded image, then a horizontal flip with probability `hflip_probability`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub crop_size: usize,
    pub crop_padding: usize,
    pub hflip_probability: f64,
}

impl AugmentConfig {
    pub fn new(crop_size: usize) -> Self {
        AugmentConfig {
            crop_size,
            crop_padding: 8,
            hflip_probability: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_size == 0 {
            bail!(Config, "crop_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.hflip_probability) {
            bail!(Config, "hflip_probability must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Crop window (in padded coordinates) and flip decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentParams {
    pub top: usize,
    pub left: usize,
    pub flip: bool,
}

impl AugmentParams {
    pub fn sample<R: Rng + ?Sized>(height: usize, width: usize, cfg: &AugmentConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let ph = height + 2 * cfg.crop_padding;
        let pw = width + 2 * cfg.crop_padding;
        if ph < cfg.crop_size || pw < cfg.crop_size {
            bail!(
                Config,
                "image {height}x{width} (+{} padding) is smaller than crop {}",
                cfg.crop_padding,
                cfg.crop_size
            );
        }
        let top = rng.random_range(0..=ph - cfg.crop_size);
        let left = rng.random_range(0..=pw - cfg.crop_size);
        let flip = cfg.hflip_probability > 0.0 && rng.random_bool(cfg.hflip_probability);
        Ok(AugmentParams { top, left, flip })
    }

    pub fn apply<T: Copy + Default>(&self, image: &Array3<T>, cfg: &AugmentConfig) -> Array3<T> {
        let (h, w, c) = image.dim();
        let p = cfg.crop_padding;
        let n = cfg.crop_size;
        let mut out = Array3::from_elem((n, n, c), T::default());
        for y in 0..n {
            let sy = (self.top + y) as isize - p as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..n {
                let sx = (self.left + x) as isize - p as isize;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                let dx = if self.flip { n - 1 - x } else { x };
                for ch in 0..c {
                    out[[y, dx, ch]] = image[[sy as usize, sx as usize, ch]];
                }
            }
        }
        out
    }
}

/// Training-time augmentation: pad, random crop, random horizontal flip.
pub fn augment<T: Copy + Default, R: Rng + ?Sized>(image: &Array3<T>, cfg: &AugmentConfig, rng: &mut R) -> Result<Array3<T>> {
    let (h, w, _) = image.dim();
    let params = AugmentParams::sample(h, w, cfg, rng)?;
    Ok(params.apply(image, cfg))
}

pub fn hflip<T: Copy>(image: &Array3<T>) -> Array3<T> {
    image.slice(s![.., ..;-1, ..]).to_owned()
}

pub fn center_crop<T: Copy>(image: &Array3<T>, size: usize) -> Result<Array3<T>> {
    let (h, w, _) = image.dim();
    if h < size || w < size {
        bail!(Shape, "cannot center-crop {h}x{w} to {size}");
    }
    let top = (h - size) / 2;
    let left = (w - size) / 2;
    Ok(image.slice(s![top..top + size, left..left + size, ..]).to_owned())
}

/// Bilinear resize to `size × size`; returns a copy when already that size.
pub fn resize(image: &Image, size: usize) -> Image {
    let (h, w, _) = image.dim();
    if h == size && w == size {
        return image.clone();
    }
    let raw: Vec<u8> = image.iter().copied().collect();
    let buf = image::RgbImage::from_raw(w as u32, h as u32, raw).expect("H×W×3 buffer");
    let out = image::imageops::resize(&buf, size as u32, size as u32, image::imageops::FilterType::Triangle);
    Array3::from_shape_vec((size, size, 3), out.into_raw()).expect("resized buffer")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize) -> Array3<u16> {
        Array3::from_shape_fn((h, w, 3), |(y, x, c)| (1 + y * 100 + x * 3 + c) as u16)
    }

    #[test]
    fn identity_when_no_padding_no_flip_full_crop() {
        let img = ramp(5, 5);
        let cfg = AugmentConfig {
            crop_size: 5,
            crop_padding: 0,
            hflip_probability: 0.0,
        };
        assert_eq!(augment(&img, &cfg, &mut seed::stream(1, "a", &[])).unwrap(), img);
    }

    #[test]
    fn flip_is_an_involution() {
        let img = ramp(4, 7);
        assert_eq!(hflip(&hflip(&img)), img);
        assert_ne!(hflip(&img), img);
    }

    #[test]
    fn six_by_six_crop_offsets() {
        let img = ramp(6, 6);
        let cfg = AugmentConfig {
            crop_size: 4,
            crop_padding: 0,
            hflip_probability: 0.0,
        };
        // oracle: enumerate all windows fully inside the image
        let windows: Vec<((usize, usize), Array3<u16>)> = (0..=2)
            .flat_map(|t| (0..=2).map(move |l| (t, l)))
            .map(|(t, l)| ((t, l), img.slice(s![t..t + 4, l..l + 4, ..]).to_owned()))
            .collect();
        let mut hit = std::collections::BTreeSet::new();
        for trial in 0..200 {
            let out = augment(&img, &cfg, &mut seed::stream(trial, "crop", &[])).unwrap();
            let again = augment(&img, &cfg, &mut seed::stream(trial, "crop", &[])).unwrap();
            assert_eq!(out, again);
            let matches: Vec<_> = windows.iter().filter(|(_, w)| *w == out).map(|(o, _)| *o).collect();
            assert_eq!(matches.len(), 1);
            hit.insert(matches[0]);
        }
        assert_eq!(hit.len(), 9, "every valid offset is reachable");
    }

    #[test]
    fn too_small_input_is_config_error() {
        let cfg = AugmentConfig {
            crop_size: 10,
            crop_padding: 1,
            hflip_probability: 0.5,
        };
        let err = augment(&ramp(4, 4), &cfg, &mut seed::stream(0, "a", &[])).unwrap_err();
        assert!(matches!(err, crate::Error::Config(_)));
    }

    #[test]
    fn center_crop_and_resize() {
        let img = ramp(6, 8);
        let c = center_crop(&img, 4).unwrap();
        assert_eq!(c[[0, 0, 0]], img[[1, 2, 0]]);
        let u8img = Image::from_elem((10, 12, 3), 77);
        let r = resize(&u8img, 6);
        assert_eq!(r.dim(), (6, 6, 3));
        assert!(r.iter().all(|&v| v == 77));
    }

    proptest! {
        #[test]
        fn output_is_a_subset_of_padded_input(h in 4usize..12, w in 4usize..12, pad in 0usize..4, p in 0.0f64..=1.0, s in any::<u64>()) {
            let crop = h.min(w);
            let img = ramp(h, w);
            let cfg = AugmentConfig { crop_size: crop, crop_padding: pad, hflip_probability: p };
            let out = augment(&img, &cfg, &mut seed::stream(s, "a", &[])).unwrap();
            prop_assert_eq!(out.dim(), (crop, crop, 3));
            let values: std::collections::BTreeSet<u16> = img.iter().copied().chain([0]).collect();
            prop_assert!(out.iter().all(|v| values.contains(v)));
            // the non-padding pixels form one contiguous, possibly mirrored, window of the input
            let nonzero = out.iter().filter(|&&v| v != 0).count();
            prop_assert!(nonzero % 3 == 0);
        }
    }
}

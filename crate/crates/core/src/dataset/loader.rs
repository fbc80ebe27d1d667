use std::path::Path;

use ndarray::Array3;

use super::{build_index, read_annotation_dir, resize, FrameSample, Image, LabelSpace, SkipReport};
use crate::error::{Error, Result};

/// A split decoded into memory, images resized to the model resolution.
pub struct LoadedSplit {
    pub samples: Vec<FrameSample>,
    pub images: Vec<Image>,
    pub skip: SkipReport,
}

impl LoadedSplit {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

pub fn decode_image(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Array3::from_shape_vec((h as usize, w as usize, 3), img.into_raw()).expect("rgb8 buffer"))
}

/// Reads `<root>/annotations/<split>/*.txt` and the frames under `<root>/images`.
pub fn load_split(data_root: &Path, split: &str, resolution: usize) -> Result<LoadedSplit> {
    let ann_dir = data_root.join("annotations").join(split);
    let tracks = read_annotation_dir(&ann_dir, &LabelSpace::canonical())?;
    let (samples, skip) = build_index(&tracks, &data_root.join("images"))?;
    for e in &skip.entries {
        log::warn!("{}: {} labelled frames without an image", e.video_id, e.missing);
    }
    let images = samples
        .iter()
        .map(|s| decode_image(&s.image_ref).map(|img| resize(&img, resolution)))
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedSplit { samples, images, skip })
}

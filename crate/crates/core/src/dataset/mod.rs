//! Annotation parsing, frame indexing, temporal subsampling, augmentation and
//! synthetic desk-scale datasets.

mod annotation;
mod augment;
mod index;
mod loader;
mod sampler;
mod synth;

pub use annotation::{parse_annotation_file, read_annotation_dir, serialize_annotation, AnnotationTrack};
pub use augment::{augment, center_crop, hflip, resize, AugmentConfig, AugmentParams};
pub use index::{build_index, image_path, FrameSample, SkipEntry, SkipReport};
pub use loader::{load_split, LoadedSplit};
pub use sampler::{group_by_video, subsample_indices, temporal_subsample};
pub use synth::{render_frame, synthesize_dataset, SynthOptions, VideoStyle};

use crate::error::{bail, Result};

/// `H×W×3` RGB pixels.
pub type Image = ndarray::Array3<u8>;

pub const N_CLASSES: usize = 8;

/// Canonical order: ids 0..7.
pub const CLASS_NAMES: [&str; N_CLASSES] = [
    "anger",
    "disgust",
    "fear",
    "happiness",
    "sadness",
    "surprise",
    "neutral",
    "other",
];

/// Header of the public Aff-Wild2 EXPR annotation files.
pub const AFFWILD2_HEADER: [&str; N_CLASSES] = [
    "Neutral",
    "Anger",
    "Disgust",
    "Fear",
    "Happiness",
    "Sadness",
    "Surprise",
    "Other",
];

pub const TRAIN_SPLIT: &str = "Train_Set";
pub const VALIDATION_SPLIT: &str = "Validation_Set";

/// The eight expression categories with a fixed id ↔ name bijection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSpace {
    classes: Vec<String>,
}

impl Default for LabelSpace {
    fn default() -> Self {
        LabelSpace {
            classes: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl LabelSpace {
    pub fn canonical() -> Self {
        Self::default()
    }

    pub fn new(classes: Vec<String>) -> Result<Self> {
        if classes.len() != N_CLASSES {
            bail!(Config, "label space needs {N_CLASSES} classes, got {}", classes.len());
        }
        for (i, a) in classes.iter().enumerate() {
            if classes[..i].iter().any(|b| b.eq_ignore_ascii_case(a)) {
                bail!(Config, "duplicate class name {a:?}");
            }
        }
        Ok(LabelSpace { classes })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Case-insensitive lookup.
    pub fn id_of(&self, name: &str) -> Option<usize> {
        let name = name.trim();
        self.classes.iter().position(|c| c.eq_ignore_ascii_case(name))
    }

    pub fn name_of(&self, id: usize) -> Option<&str> {
        self.classes.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.classes
    }
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::AnnotationTrack;
use crate::error::{Error, Result};

/// One labelled frame; INVALID frames never become samples.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrameSample {
    pub video_id: String,
    pub frame_index: usize,
    pub image_ref: PathBuf,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub video_id: String,
    pub missing: usize,
}

/// Videos with labelled frames whose image file was absent.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SkipReport {
    pub entries: Vec<SkipEntry>,
}

impl SkipReport {
    pub fn total(&self) -> usize {
        self.entries.iter().map(|e| e.missing).sum()
    }

    /// One `{"video_id":…,"missing":…}` object per line.
    pub fn to_json_lines(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("plain struct") + "\n")
            .collect()
    }
}

/// `<image_root>/<video_id>/<frame_index + 1 as %05d>.jpg`
pub fn image_path(image_root: &Path, video_id: &str, frame_index: usize) -> PathBuf {
    image_root.join(video_id).join(format!("{:05}.jpg", frame_index + 1))
}

/// Samples in `(video_id, frame_index)` order, skipping (and counting) missing images.
pub fn build_index(tracks: &[AnnotationTrack], image_root: &Path) -> Result<(Vec<FrameSample>, SkipReport)> {
    if !image_root.is_dir() {
        return Err(Error::io(
            image_root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "image root is not a directory"),
        ));
    }
    let mut order: Vec<&AnnotationTrack> = tracks.iter().collect();
    order.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    let mut samples = Vec::new();
    let mut report = SkipReport::default();
    for track in order {
        let mut missing = 0;
        for (frame_index, label) in track.labels.iter().enumerate() {
            let Some(label) = *label else { continue };
            let image_ref = image_path(image_root, &track.video_id, frame_index);
            if image_ref.is_file() {
                samples.push(FrameSample {
                    video_id: track.video_id.clone(),
                    frame_index,
                    image_ref,
                    label,
                });
            } else {
                missing += 1;
            }
        }
        if missing > 0 {
            report.entries.push(SkipEntry {
                video_id: track.video_id.clone(),
                missing,
            });
        }
    }
    Ok((samples, report))
}

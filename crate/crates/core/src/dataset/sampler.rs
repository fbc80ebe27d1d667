use std::ops::Range;

use rand::Rng;

use super::FrameSample;
use crate::error::{bail, Result};

/// Index ranges of consecutive samples sharing a video id.
pub fn group_by_video(samples: &[FrameSample]) -> Vec<Range<usize>> {
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=samples.len() {
        if i == samples.len() || samples[i].video_id != samples[start].video_id {
            if i > start {
                groups.push(start..i);
            }
            start = i;
        }
    }
    groups
}

/// Picks one index uniformly from each run of `stride` consecutive samples
/// of a video; a trailing partial run contributes one of its members.
pub fn subsample_indices<R: Rng + ?Sized>(samples: &[FrameSample], stride: usize, rng: &mut R) -> Result<Vec<usize>> {
    if stride < 1 {
        bail!(Config, "subsampling stride must be >= 1");
    }
    let mut out = Vec::with_capacity(samples.len().div_ceil(stride));
    for video in group_by_video(samples) {
        let mut start = video.start;
        while start < video.end {
            let end = (start + stride).min(video.end);
            out.push(if end - start == 1 { start } else { rng.random_range(start..end) });
            start = end;
        }
    }
    Ok(out)
}

/// Samples must be grouped per video and ordered by frame index.
pub fn temporal_subsample<R: Rng + ?Sized>(samples: &[FrameSample], stride: usize, rng: &mut R) -> Result<Vec<FrameSample>> {
    Ok(subsample_indices(samples, stride, rng)?
        .into_iter()
        .map(|i| samples[i].clone())
        .collect())
}

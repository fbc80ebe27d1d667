//! Desk-scale stand-in for the Aff-Wild2 layout: class-conditional textured
//! "faces" written as JPEG frames plus EXPR-style annotation files.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{image_path, serialize_annotation, AnnotationTrack, Image, LabelSpace, AFFWILD2_HEADER, N_CLASSES, TRAIN_SPLIT};
use crate::error::{bail, Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthOptions {
    pub n_videos: usize,
    pub frames_per_video: usize,
    pub image_size: usize,
    pub seed: u64,
    pub split: String,
}

impl SynthOptions {
    pub fn new(n_videos: usize, frames_per_video: usize, image_size: usize, seed: u64) -> Self {
        SynthOptions {
            n_videos,
            frames_per_video,
            image_size,
            seed,
            split: TRAIN_SPLIT.to_string(),
        }
    }
}

const PALETTE: [[f64; 3]; N_CLASSES] = [
    [0.85, 0.15, 0.15],
    [0.45, 0.60, 0.10],
    [0.55, 0.25, 0.75],
    [0.95, 0.85, 0.20],
    [0.15, 0.30, 0.85],
    [0.95, 0.55, 0.10],
    [0.60, 0.60, 0.60],
    [0.10, 0.70, 0.70],
];

/// Per-video nuisance factors.
#[derive(Clone, Copy, Debug)]
pub struct VideoStyle {
    phase: f64,
    brightness: f64,
    face_dx: f64,
    face_dy: f64,
}

impl VideoStyle {
    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        VideoStyle {
            phase: rng.random_range(0.0..2.0 * PI),
            brightness: rng.random_range(-0.06..0.06),
            face_dx: rng.random_range(-0.05..0.05),
            face_dy: rng.random_range(-0.05..0.05),
        }
    }
}

/// Renders frame `t` of a video of class `class`.
///
/// Class identity is carried by a stripe texture (orientation, frequency,
/// colour) behind an elliptical face whose mouth curvature also depends on the
/// class. Frames drift in phase over time and carry per-frame noise.
pub fn render_frame(class: usize, style: &VideoStyle, t: usize, size: usize, noise_seed: u64) -> Image {
    let mut rng = seed::stream(noise_seed, "synth-noise", &[t as u64]);
    let color = PALETTE[class];
    let theta = class as f64 * PI / N_CLASSES as f64;
    let freq = 3.0 + (class % 4) as f64;
    let (st, ct) = theta.sin_cos();
    let curve = (class as f64 - 3.5) / 3.5;
    let phase = style.phase + 0.4 * t as f64;
    let n = size as f64;
    let cx = 0.5 + style.face_dx;
    let cy = 0.5 + style.face_dy;
    Image::from_shape_fn((size, size, 3), |(y, x, c)| {
        let u = x as f64 / n;
        let v = y as f64 / n;
        let stripe = 0.55 + 0.35 * (2.0 * PI * freq * (u * ct + v * st) + phase).sin();
        let mut val = color[c] * stripe;
        let (fx, fy) = ((u - cx) / 0.28, (v - cy) / 0.36);
        if fx * fx + fy * fy < 1.0 {
            val = 0.5 * val + 0.5 * [0.93, 0.78, 0.65][c];
            let eye = |ex: f64| ((u - (cx + ex)).powi(2) + (v - (cy - 0.1)).powi(2)).sqrt() < 0.035;
            let mouth_y = cy + 0.15 + curve * 0.12 * ((u - cx) / 0.15).powi(2) - curve * 0.06;
            let in_mouth = (u - cx).abs() < 0.15 && (v - mouth_y).abs() < 0.018;
            if eye(-0.1) || eye(0.1) || in_mouth {
                val = 0.1;
            }
        }
        let noise = rng.random_range(-0.04..0.04);
        ((val + style.brightness + noise).clamp(0.0, 1.0) * 255.0).round() as u8
    })
}

fn write_jpeg(path: &Path, img: &Image) -> Result<()> {
    let (h, w, _) = img.dim();
    let raw: Vec<u8> = img.iter().copied().collect();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = std::io::BufWriter::new(file);
    image::codecs::jpeg::JpegEncoder::new_with_quality(&mut writer, 95)
        .encode(&raw, w as u32, h as u32, image::ExtendedColorType::Rgb8)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}

/// Writes `annotations/<split>/<video>.txt` and `images/<video>/<frame>.jpg`
/// under `out_dir`. Classes are balanced over videos (`video mod 8`, shuffled
/// by seed); every frame of a video carries the video's class.
pub fn synthesize_dataset(out_dir: &Path, opts: &SynthOptions) -> Result<Vec<AnnotationTrack>> {
    if opts.n_videos == 0 || opts.frames_per_video == 0 || opts.image_size == 0 {
        bail!(Config, "video count, frames per video and image size must be positive");
    }
    let ann_dir = out_dir.join("annotations").join(&opts.split);
    let img_root = out_dir.join("images");
    std::fs::create_dir_all(&ann_dir).map_err(|e| Error::io(&ann_dir, e))?;

    let mut classes: Vec<usize> = (0..opts.n_videos).map(|v| v % N_CLASSES).collect();
    classes.shuffle(&mut seed::stream(opts.seed, "synth-classes", &[]));
    let labels = LabelSpace::canonical();
    let mut tracks = Vec::with_capacity(opts.n_videos);
    for (v, &class) in classes.iter().enumerate() {
        let video_id = format!("{}_{v:03}", opts.split.to_lowercase());
        let mut rng = seed::stream(opts.seed, "synth-video", &[v as u64, seed::string_id(&opts.split)]);
        let style = VideoStyle::sample(&mut rng);
        let noise_seed: u64 = rng.random();
        let dir = img_root.join(&video_id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for t in 0..opts.frames_per_video {
            let img = render_frame(class, &style, t, opts.image_size, noise_seed);
            write_jpeg(&image_path(&img_root, &video_id, t), &img)?;
        }
        let track = AnnotationTrack {
            video_id: video_id.clone(),
            labels: vec![Some(class); opts.frames_per_video],
        };
        let text = serialize_annotation(&track, &AFFWILD2_HEADER, &labels)?;
        let path = ann_dir.join(format!("{video_id}.txt"));
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        tracks.push(track);
    }
    Ok(tracks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::read_annotation_dir;

    fn class_video_counts(root: &Path) -> [usize; N_CLASSES] {
        let tracks = read_annotation_dir(&root.join("annotations").join(TRAIN_SPLIT), &LabelSpace::canonical()).unwrap();
        let mut counts = [0; N_CLASSES];
        for t in tracks {
            counts[t.labels[0].unwrap()] += 1;
        }
        counts
    }

    #[test]
    fn eight_videos_one_per_class() {
        let dir = tempfile::tempdir().unwrap();
        let tracks = synthesize_dataset(dir.path(), &SynthOptions::new(8, 10, 32, 1)).unwrap();
        assert_eq!(tracks.iter().map(|t| t.frame_count()).sum::<usize>(), 80);
        assert_eq!(class_video_counts(dir.path()), [1; N_CLASSES]);
        let n_images = walk_count(&dir.path().join("images"));
        assert_eq!(n_images, 80);
    }

    #[test]
    fn sixteen_videos_two_per_class() {
        let dir = tempfile::tempdir().unwrap();
        synthesize_dataset(dir.path(), &SynthOptions::new(16, 2, 16, 5)).unwrap();
        assert_eq!(class_video_counts(dir.path()), [2; N_CLASSES]);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        synthesize_dataset(a.path(), &SynthOptions::new(3, 2, 24, 9)).unwrap();
        synthesize_dataset(b.path(), &SynthOptions::new(3, 2, 24, 9)).unwrap();
        for rel in ["annotations/Train_Set/train_set_001.txt", "images/train_set_002/00002.jpg"] {
            assert_eq!(std::fs::read(a.path().join(rel)).unwrap(), std::fs::read(b.path().join(rel)).unwrap());
        }
    }

    #[test]
    fn zero_counts_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let err = synthesize_dataset(dir.path(), &SynthOptions::new(0, 2, 16, 1)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn classes_look_different() {
        let style = VideoStyle {
            phase: 0.0,
            brightness: 0.0,
            face_dx: 0.0,
            face_dy: 0.0,
        };
        let frames: Vec<Image> = (0..N_CLASSES).map(|c| render_frame(c, &style, 0, 32, 1)).collect();
        for i in 0..N_CLASSES {
            for j in i + 1..N_CLASSES {
                let diff: f64 = frames[i]
                    .iter()
                    .zip(frames[j].iter())
                    .map(|(&a, &b)| (a as f64 - b as f64).abs())
                    .sum::<f64>()
                    / frames[i].len() as f64;
                assert!(diff > 10.0, "classes {i} and {j} too similar: {diff}");
            }
        }
    }

    fn walk_count(dir: &Path) -> usize {
        std::fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                if p.is_dir() {
                    walk_count(&p)
                } else {
                    1
                }
            })
            .sum()
    }
}

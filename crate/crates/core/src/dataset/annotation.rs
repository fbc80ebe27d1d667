use std::path::Path;

use super::{LabelSpace, N_CLASSES};
use crate::error::{bail, Error, Result};

/// Per-frame labels of one video; `None` marks an INVALID frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotationTrack {
    pub video_id: String,
    pub labels: Vec<Option<usize>>,
}

impl AnnotationTrack {
    pub fn frame_count(&self) -> usize {
        self.labels.len()
    }

    pub fn valid_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }
}

/// Parses the EXPR layout: a comma-separated class-name header, then one
/// integer per frame (`-1` = INVALID). Ids are remapped from header order to
/// the canonical order of `label_space`.
pub fn parse_annotation_file(video_id: &str, text: &str, label_space: &LabelSpace) -> Result<AnnotationTrack> {
    let mut lines = text.lines();
    let Some(header) = lines.next().filter(|h| !h.trim().is_empty()) else {
        bail!(Format, "{video_id}: empty annotation file");
    };
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    if names.len() != N_CLASSES {
        bail!(Format, "{video_id}: header has {} names, expected {N_CLASSES}", names.len());
    }
    let mut remap = [0usize; N_CLASSES];
    let mut seen = [false; N_CLASSES];
    for (file_id, name) in names.iter().enumerate() {
        let Some(id) = label_space.id_of(name) else {
            bail!(Format, "{video_id}: unknown class {name:?} in header");
        };
        if seen[id] {
            bail!(Format, "{video_id}: class {name:?} repeated in header");
        }
        seen[id] = true;
        remap[file_id] = id;
    }

    let mut labels = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: i64 = line
            .parse()
            .map_err(|_| Error::Format(format!("{video_id}:{}: not an integer: {line:?}", lineno + 2)))?;
        labels.push(match v {
            -1 => None,
            0..=7 => Some(remap[v as usize]),
            _ => bail!(Format, "{video_id}:{}: label {v} outside -1..=7", lineno + 2),
        });
    }
    if labels.is_empty() {
        bail!(Format, "{video_id}: no frame lines after the header");
    }
    Ok(AnnotationTrack {
        video_id: video_id.to_string(),
        labels,
    })
}

/// Writes a track with the given header order (e.g. [`super::AFFWILD2_HEADER`]).
pub fn serialize_annotation(track: &AnnotationTrack, header: &[&str], label_space: &LabelSpace) -> Result<String> {
    if header.len() != N_CLASSES {
        bail!(Format, "header needs {N_CLASSES} names");
    }
    let mut to_file = [usize::MAX; N_CLASSES];
    for (file_id, name) in header.iter().enumerate() {
        match label_space.id_of(name) {
            Some(id) if to_file[id] == usize::MAX => to_file[id] = file_id,
            _ => bail!(Format, "header {header:?} is not a permutation of the label space"),
        }
    }
    let mut out = header.join(",");
    out.push('\n');
    for l in &track.labels {
        match l {
            Some(id) => out.push_str(&to_file[*id].to_string()),
            None => out.push_str("-1"),
        }
        out.push('\n');
    }
    Ok(out)
}

/// Reads every `*.txt` in `dir`, video id = file stem, sorted by id.
pub fn read_annotation_dir(dir: &Path, label_space: &LabelSpace) -> Result<Vec<AnnotationTrack>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            paths.push(path);
        }
    }
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            parse_annotation_file(id, &text, label_space)
        })
        .collect()
}

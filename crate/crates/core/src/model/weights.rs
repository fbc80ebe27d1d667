//! Named weight export/import with rename rules.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::ModelAssembly;
use crate::error::{bail, Result};
use crate::nn::{Float, Module};

/// Named `f32` arrays keyed by canonical parameter name.
pub type NamedArrays = BTreeMap<String, ArrayD<f32>>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RenameRule {
    /// Replace a leading `from` with `to`.
    Prefix { from: String, to: String },
    /// Replace every occurrence of `from` with `to`.
    Substring { from: String, to: String },
}

impl RenameRule {
    /// Parses `from=to` (substring) or `^from=to` (prefix only).
    pub fn parse(s: &str) -> Result<Self> {
        let Some((from, to)) = s.split_once('=') else {
            bail!(Config, "rename rule {s:?} is not of the form from=to");
        };
        Ok(match from.strip_prefix('^') {
            Some(p) => RenameRule::Prefix {
                from: p.to_string(),
                to: to.to_string(),
            },
            None => RenameRule::Substring {
                from: from.to_string(),
                to: to.to_string(),
            },
        })
    }

    fn apply(&self, name: &str) -> String {
        match self {
            RenameRule::Prefix { from, to } => match name.strip_prefix(from.as_str()) {
                Some(rest) => format!("{to}{rest}"),
                None => name.to_string(),
            },
            RenameRule::Substring { from, to } => name.replace(from.as_str(), to),
        }
    }
}

/// Ordered rename rules mapping file names onto canonical names.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NameMap {
    pub rules: Vec<RenameRule>,
}

impl NameMap {
    pub fn identity() -> Self {
        NameMap::default()
    }

    /// Layout used by torchvision-style residual network state dicts.
    pub fn torchvision() -> Self {
        let mut rules = vec![
            RenameRule::Prefix {
                from: "conv1.".into(),
                to: "backbone.stem.conv.".into(),
            },
            RenameRule::Prefix {
                from: "bn1.".into(),
                to: "backbone.stem.bn.".into(),
            },
        ];
        for i in 1..=4 {
            rules.push(RenameRule::Prefix {
                from: format!("layer{i}."),
                to: format!("backbone.stage{i}."),
            });
        }
        rules.push(RenameRule::Substring {
            from: ".downsample.0.".into(),
            to: ".downsample.conv.".into(),
        });
        rules.push(RenameRule::Substring {
            from: ".downsample.1.".into(),
            to: ".downsample.bn.".into(),
        });
        NameMap { rules }
    }

    pub fn map(&self, name: &str) -> String {
        self.rules.iter().fold(name.to_string(), |n, r| r.apply(&n))
    }
}

/// Outcome of an import. The four lists are disjoint and together cover every
/// model name and every (renamed) file name.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchReport {
    pub matched: Vec<String>,
    pub missing: Vec<String>,
    pub unexpected: Vec<String>,
    pub shape_mismatch: Vec<String>,
}

impl MatchReport {
    pub fn summary(&self) -> String {
        format!(
            "matched {} / missing {} / unexpected {} / shape_mismatch {}",
            self.matched.len(),
            self.missing.len(),
            self.unexpected.len(),
            self.shape_mismatch.len()
        )
    }
}

impl<T: Float> ModelAssembly<T> {
    /// Every parameter and buffer as `f32`.
    pub fn export_weights(&self) -> NamedArrays {
        export_module(self, "")
    }

    /// Copies matching entries in; everything else is reported, never dropped.
    pub fn import_weights(&mut self, weights: &NamedArrays, name_map: &NameMap) -> MatchReport {
        import_module(self, "", weights, name_map)
    }
}

pub(crate) fn export_module<T: Float, M: Module<T> + ?Sized>(m: &M, prefix: &str) -> NamedArrays {
    m.named_params(prefix)
        .into_iter()
        .map(|(n, p)| (n, p.value.mapv(|v| v.to_f32().expect("finite"))))
        .collect()
}

pub(crate) fn import_module<T: Float, M: Module<T> + ?Sized>(
    m: &mut M,
    prefix: &str,
    weights: &NamedArrays,
    name_map: &NameMap,
) -> MatchReport {
    let mut report = MatchReport::default();
    let mut incoming: BTreeMap<String, &ArrayD<f32>> = BTreeMap::new();
    for (orig, arr) in weights {
        let mapped = name_map.map(orig);
        if incoming.contains_key(&mapped) {
            report.unexpected.push(orig.clone());
        } else {
            incoming.insert(mapped, arr);
        }
    }
    let mut seen = BTreeSet::new();
    for (name, param) in m.named_params_mut(prefix) {
        match incoming.get(&name) {
            Some(arr) if arr.shape() == param.value.shape() => {
                param.value.zip_mut_with(*arr, |d, &s| *d = T::from(s).expect("finite"));
                report.matched.push(name.clone());
            }
            Some(_) => report.shape_mismatch.push(name.clone()),
            None => report.missing.push(name.clone()),
        }
        seen.insert(name);
    }
    report
        .unexpected
        .extend(incoming.keys().filter(|k| !seen.contains(*k)).cloned());
    report.unexpected.sort();
    report
}

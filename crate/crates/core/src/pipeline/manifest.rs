//! Dataset manifests: which slices and rater labels belong to which split.
//!
//! Text form, one slice per line, tab-separated, `#` starts a comment:
//!
//! ```text
//! # split  subject  scan  slice  slice_path  labels
//! train    1        1     1      s001_c1_z01.mcs  1=s001_c1_z01_r1.mlb,2=s001_c1_z01_r2.mlb
//! test     7        2     3      s007_c2_z03.mcs  -
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::types::SliceId;
use crate::error::{Error, Result};

pub const SLICE_EXT: &str = "mcs";
pub const LABEL_EXT: &str = "mlb";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Manifest(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub split: Split,
    pub id: SliceId,
    pub slice_path: PathBuf,
    /// `(rater, label path)` pairs sorted by rater.
    pub labels: Vec<(u32, PathBuf)>,
}

impl ManifestEntry {
    pub fn label_for(&self, rater: u32) -> Option<&Path> {
        self.labels
            .iter()
            .find(|(r, _)| *r == rater)
            .map(|(_, p)| p.as_path())
    }
}

/// Subject-to-split assignment. Subjects not listed as test or validation
/// are training subjects, unless `train` restricts them explicitly.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test: BTreeSet<u32>,
    pub validation: BTreeSet<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<BTreeSet<u32>>,
}

impl SplitSpec {
    /// Tests on `groups[test_group]`; of the remaining subjects the one with
    /// the highest id validates and the rest train.
    pub fn cross_validation(groups: &[Vec<u32>], test_group: usize) -> Result<Self> {
        let test: BTreeSet<u32> = groups
            .get(test_group)
            .ok_or_else(|| Error::Manifest(format!("no group {test_group}")))?
            .iter()
            .copied()
            .collect();
        let mut rest: BTreeSet<u32> = groups
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != test_group)
            .flat_map(|(_, s)| s.iter().copied())
            .collect();
        let val = rest
            .pop_last()
            .ok_or_else(|| Error::Manifest("no subjects left for training".into()))?;
        let spec = Self {
            test,
            validation: BTreeSet::from([val]),
            train: Some(rest),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeMap::new();
        let train = self.train.iter().flatten().map(|s| (*s, Split::Train));
        let all = self
            .test
            .iter()
            .map(|s| (*s, Split::Test))
            .chain(self.validation.iter().map(|s| (*s, Split::Validation)))
            .chain(train);
        for (subject, split) in all {
            if let Some(prev) = seen.insert(subject, split) {
                return Err(Error::Manifest(format!(
                    "subject {subject} assigned to both {prev} and {split}"
                )));
            }
        }
        Ok(())
    }

    /// `None` when the subject is excluded by an explicit training list.
    pub fn split_of(&self, subject: u32) -> Option<Split> {
        if self.test.contains(&subject) {
            Some(Split::Test)
        } else if self.validation.contains(&subject) {
            Some(Split::Validation)
        } else {
            match &self.train {
                Some(t) if !t.contains(&subject) => None,
                _ => Some(Split::Train),
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Sorts entries by slice id and checks for duplicates and subject leaks.
    pub fn new(mut entries: Vec<ManifestEntry>) -> Result<Self> {
        entries.sort_by(|a, b| (a.id, &a.slice_path).cmp(&(b.id, &b.slice_path)));
        let mut paths = BTreeSet::new();
        let mut ids = BTreeSet::new();
        for e in &entries {
            if !paths.insert(e.slice_path.clone()) {
                return Err(Error::Manifest(format!(
                    "duplicate slice path {}",
                    e.slice_path.display()
                )));
            }
            if !ids.insert(e.id) {
                return Err(Error::Manifest(format!("duplicate slice {}", e.id)));
            }
        }
        let m = Self { entries };
        m.check_disjoint()?;
        Ok(m)
    }

    /// Errors if any subject has slices in more than one split.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut owner: BTreeMap<u32, Split> = BTreeMap::new();
        for e in &self.entries {
            match owner.insert(e.id.subject, e.split) {
                Some(prev) if prev != e.split => {
                    return Err(Error::Manifest(format!(
                        "subject {} appears in both {prev} and {}",
                        e.id.subject, e.split
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn subjects(&self, split: Split) -> BTreeSet<u32> {
        self.split(split).map(|e| e.id.subject).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# split\tsubject\tscan\tslice\tslice_path\tlabels\n");
        for e in &self.entries {
            let labels = if e.labels.is_empty() {
                "-".to_string()
            } else {
                e.labels
                    .iter()
                    .map(|(r, p)| format!("{r}={}", p.display()))
                    .collect::<Vec<_>>()
                    .join(",")
            };
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                e.split,
                e.id.subject,
                e.id.scan,
                e.id.slice,
                e.slice_path.display(),
                labels
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Manifest(format!("line {}: {what}", n + 1));
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            if cols.len() != 6 {
                return Err(bad(&format!("expected 6 columns, found {}", cols.len())));
            }
            let num = |s: &str| s.parse::<u32>().map_err(|_| bad(&format!("invalid number '{s}'")));
            let labels = if cols[5] == "-" {
                Vec::new()
            } else {
                let mut l = cols[5]
                    .split(',')
                    .map(|item| {
                        let (r, p) = item
                            .split_once('=')
                            .ok_or_else(|| bad(&format!("label '{item}' is not rater=path")))?;
                        Ok((num(r)?, PathBuf::from(p)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                l.sort();
                l
            };
            entries.push(ManifestEntry {
                split: cols[0].parse().map_err(|_| bad(&format!("unknown split '{}'", cols[0])))?,
                id: SliceId::new(num(cols[1])?, num(cols[2])?, num(cols[3])?),
                slice_path: PathBuf::from(cols[4]),
                labels,
            });
        }
        Self::new(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Parses `s{subject}_c{scan}_z{slice}` and an optional `_r{rater}` suffix.
pub fn parse_stem(stem: &str) -> Option<(SliceId, Option<u32>)> {
    let mut parts = stem.split('_');
    let mut field = |prefix: char| -> Option<u32> {
        parts.next()?.strip_prefix(prefix)?.parse().ok()
    };
    let id = SliceId::new(field('s')?, field('c')?, field('z')?);
    let rater = match parts.next() {
        None => None,
        Some(r) => Some(r.strip_prefix('r')?.parse().ok()?),
    };
    if parts.next().is_some() {
        return None;
    }
    Some((id, rater))
}

/// Scans `root` for slice files named by [`SliceId::stem`] and rater labels
/// `<stem>_r<k>.mlb` beside them, assigning splits by subject.
pub fn build_manifest(root: impl AsRef<Path>, spec: &SplitSpec) -> Result<DatasetManifest> {
    let root = root.as_ref();
    spec.validate()?;
    if !root.is_dir() {
        return Err(Error::Manifest(format!("{} is not a directory", root.display())));
    }
    let mut slices: BTreeMap<SliceId, PathBuf> = BTreeMap::new();
    let mut labels: BTreeMap<SliceId, Vec<(u32, PathBuf)>> = BTreeMap::new();
    for item in WalkDir::new(root).sort_by_file_name() {
        let item = item.map_err(|e| Error::Manifest(format!("walking {}: {e}", root.display())))?;
        let path = item.path();
        let (Some(stem), Some(ext)) = (
            path.file_stem().and_then(|s| s.to_str()),
            path.extension().and_then(|s| s.to_str()),
        ) else {
            continue;
        };
        match (ext, parse_stem(stem)) {
            (SLICE_EXT, Some((id, None))) => {
                if let Some(prev) = slices.insert(id, path.to_path_buf()) {
                    return Err(Error::Manifest(format!(
                        "slice {id} found at both {} and {}",
                        prev.display(),
                        path.display()
                    )));
                }
            }
            (LABEL_EXT, Some((id, Some(rater)))) => {
                labels.entry(id).or_default().push((rater, path.to_path_buf()))
            }
            _ => {}
        }
    }
    if slices.is_empty() {
        return Err(Error::Manifest(format!("no slice files under {}", root.display())));
    }
    let entries = slices
        .into_iter()
        .filter_map(|(id, slice_path)| {
            let split = spec.split_of(id.subject)?;
            let mut l = labels.remove(&id).unwrap_or_default();
            l.sort();
            Some(ManifestEntry {
                split,
                id,
                slice_path,
                labels: l,
            })
        })
        .collect();
    DatasetManifest::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems() {
        assert_eq!(parse_stem("s003_c1_z02"), Some((SliceId::new(3, 1, 2), None)));
        assert_eq!(parse_stem("s003_c1_z02_r4"), Some((SliceId::new(3, 1, 2), Some(4))));
        assert_eq!(parse_stem("s003_c1"), None);
        assert_eq!(parse_stem("scan_c1_z2"), None);
    }

    #[test]
    fn overlapping_spec_rejected() {
        let spec = SplitSpec {
            test: BTreeSet::from([1, 2]),
            validation: BTreeSet::from([2]),
            train: None,
        };
        assert!(spec.validate().is_err());
    }
}

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::distance::{area, surface_distances};
use super::overlap::{check_extent, confusion, overlap_metrics};
use crate::error::{Error, Result};
use crate::pipeline::{LabelMap, SliceId, BACKGROUND};

/// Relative standard deviation in percent, with the `n − 1` divisor.
pub fn rsd(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::invalid(format!(
            "RSD needs at least 2 values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Err(Error::invalid("RSD undefined for zero mean"));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok(100.0 * var.sqrt() / mean)
}

/// Mean and sample standard deviation (0 for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.n == 0 {
            write!(f, "{:>6} ± {:<6}", "-", "-")
        } else {
            write!(f, "{:>6.2} ± {:<6.2}", self.mean, self.std)
        }
    }
}

/// Agreement between segmentations of the same anatomical slice.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PairStats {
    pub pairs: Vec<(SliceId, SliceId)>,
    pub dsc: Vec<f64>,
    /// Pairs where either mask is empty contribute no HD value.
    pub hd: Vec<f64>,
    pub rsd: Vec<f64>,
}

impl PairStats {
    fn push(&mut self, a: &LabelMap, b: &LabelMap, class: u8) -> Result<()> {
        check_extent("session pair", a, b)?;
        let ma = a.mask(class);
        let mb = b.mask(class);
        self.pairs.push((a.id, b.id));
        self.dsc.push(overlap_metrics(&confusion(a, b, class)?).dsc);
        if let Some(hd) = surface_distances(&ma, &mb, a.height, a.width, a.spacing_mm)?
            .hausdorff
            .value()
        {
            self.hd.push(hd);
        }
        let areas = [area(&ma, a.spacing_mm), area(&mb, b.spacing_mm)];
        if let Ok(v) = rsd(&areas) {
            self.rsd.push(v);
        }
        Ok(())
    }

    pub fn dsc_summary(&self) -> MeanStd {
        MeanStd::of(&self.dsc)
    }

    pub fn hd_summary(&self) -> MeanStd {
        MeanStd::of(&self.hd)
    }

    pub fn rsd_summary(&self) -> MeanStd {
        MeanStd::of(&self.rsd)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SessionStats {
    pub class: u8,
    /// Pairs of scans taken without repositioning.
    pub intra: PairStats,
    /// Pairs that include the repositioned scan.
    pub inter: PairStats,
    /// `(subject, slice)` groups missing a scan.
    pub skipped: Vec<(u32, u32)>,
}

/// Scan-rescan agreement of `class` over segmentations keyed by slice id.
///
/// Slices are grouped by `(subject, slice)`. Every pair of scans other than
/// `repositioned_scan` is intra-session; every pair with it is inter-session.
/// Groups lacking any of the scans seen in the data set are skipped.
pub fn session_stats(
    segmentations: &BTreeMap<SliceId, LabelMap>,
    class: u8,
    repositioned_scan: u32,
) -> Result<SessionStats> {
    let scans: BTreeSet<u32> = segmentations.keys().map(|id| id.scan).collect();
    if scans.len() < 2 {
        return Err(Error::invalid("session statistics need at least 2 scans"));
    }
    let mut groups: BTreeMap<(u32, u32), BTreeMap<u32, &LabelMap>> = BTreeMap::new();
    for (id, seg) in segmentations {
        groups.entry((id.subject, id.slice)).or_default().insert(id.scan, seg);
    }
    let mut out = SessionStats {
        class,
        ..Default::default()
    };
    for ((subject, slice), by_scan) in groups {
        if by_scan.len() != scans.len() {
            log::warn!("subject {subject} slice {slice}: missing scans, skipped");
            out.skipped.push((subject, slice));
            continue;
        }
        let list: Vec<(u32, &LabelMap)> = by_scan.into_iter().collect();
        for i in 0..list.len() {
            for j in i + 1..list.len() {
                let (sa, a) = list[i];
                let (sb, b) = list[j];
                if sa == repositioned_scan || sb == repositioned_scan {
                    out.inter.push(a, b, class)?;
                } else {
                    out.intra.push(a, b, class)?;
                }
            }
        }
    }
    Ok(out)
}

/// Consensus by voting. A foreground class wins a pixel when strictly more
/// than `threshold` maps vote for it; among winners the larger count, then
/// the lower class index, is taken. Otherwise the pixel is background.
pub fn majority_vote(maps: &[LabelMap], threshold: usize) -> Result<LabelMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::invalid("majority vote over an empty list"))?;
    for m in &maps[1..] {
        check_extent("majority vote", first, m)?;
    }
    let mut out = first.clone();
    out.rater = None;
    for i in 0..first.labels.len() {
        let mut votes = [0usize; 256];
        for m in maps {
            votes[m.labels[i] as usize] += 1;
        }
        let mut best = BACKGROUND;
        let mut best_votes = threshold;
        for (class, &count) in votes.iter().enumerate() {
            if class as u8 != BACKGROUND && count > best_votes {
                best = class as u8;
                best_votes = count;
            }
        }
        out.labels[i] = best;
    }
    Ok(out)
}

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pipeline::LabelMap;

/// A metric value, or the reason it is undefined for this input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Measure {
    Defined(f64),
    Undefined(Undefined),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Undefined {
    NoTruePositives,
    EmptyDenominator,
    EmptyMask,
    EmptySkeleton,
}

impl Measure {
    pub fn value(self) -> Option<f64> {
        match self {
            Measure::Defined(v) => Some(v),
            Measure::Undefined(_) => None,
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, Measure::Defined(_))
    }

    fn ratio(num: f64, den: f64, scale: f64) -> Self {
        if den == 0.0 {
            Measure::Undefined(Undefined::EmptyDenominator)
        } else {
            Measure::Defined(scale * num / den)
        }
    }
}

impl std::fmt::Display for Measure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Measure::Defined(v) => write!(f, "{v}"),
            Measure::Undefined(_) => f.write_str("NA"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn from_masks(auto: &[bool], reference: &[bool]) -> Result<Self> {
        if auto.len() != reference.len() {
            return Err(Error::ShapeMismatch {
                op: "confusion",
                lhs: vec![auto.len()],
                rhs: vec![reference.len()],
            });
        }
        let mut c = Self::default();
        for (&a, &r) in auto.iter().zip(reference) {
            match (a, r) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }
}

pub(crate) fn check_extent(op: &'static str, a: &LabelMap, b: &LabelMap) -> Result<()> {
    if a.same_extent(b) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            op,
            lhs: vec![a.height, a.width],
            rhs: vec![b.height, b.width],
        })
    }
}

/// Pixel counts of `class` in `auto` against `reference`.
pub fn confusion(auto: &LabelMap, reference: &LabelMap, class: u8) -> Result<ConfusionCounts> {
    check_extent("confusion", auto, reference)?;
    ConfusionCounts::from_masks(&auto.mask(class), &reference.mask(class))
}

/// Overlap scores; rates and conformity are percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapMetrics {
    pub dsc: f64,
    pub jaccard: f64,
    pub conformity: Measure,
    pub tpr: Measure,
    pub tnr: Measure,
    pub precision: Measure,
}

pub fn overlap_metrics(c: &ConfusionCounts) -> OverlapMetrics {
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let union = tp + fp + fn_;
    let (dsc, jaccard) = if union == 0.0 {
        (1.0, 1.0)
    } else {
        (2.0 * tp / (2.0 * tp + fp + fn_), tp / union)
    };
    let conformity = if c.tp == 0 {
        Measure::Undefined(Undefined::NoTruePositives)
    } else {
        Measure::Defined((1.0 - (fp + fn_) / tp) * 100.0)
    };
    OverlapMetrics {
        dsc,
        jaccard,
        conformity,
        tpr: Measure::ratio(tp, tp + fn_, 100.0),
        tnr: Measure::ratio(tn, tn + fp, 100.0),
        precision: Measure::ratio(tp, tp + fp, 100.0),
    }
}

//! Cross-entropy, Dice and generalized Dice losses with regularized
//! inverse-volume class weights.
//!
//! All losses take probabilities `p` and a one-hot target `r` of identical shape
//! `[..., L]` (labels on the last axis) and are recorded on a [`Tape`] so they can
//! be differentiated with respect to `p`. Class weights are constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Guard added to every ratio denominator and used to clamp probabilities.
pub const EPS: f64 = 1e-12;

/// Label index of gray matter in the {background, GM, WM} palette.
pub const GM_LABEL: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("class weights must be finite and nonnegative"));
        }
        Ok(Self(values))
    }

    /// Weight 1 on gray matter and 0 elsewhere.
    pub fn gm_only(num_classes: usize) -> Self {
        Self((0..num_classes).map(|l| if l == GM_LABEL { 1.0 } else { 0.0 }).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Weights rescaled to sum to one.
    fn normalized(&self) -> Result<Vec<f64>> {
        let total: f64 = self.0.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("all class weights are zero"));
        }
        Ok(self.0.iter().map(|w| w / total).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossVariant {
    /// Weighted mean of per-label Dice scores.
    #[serde(rename = "dl")]
    Dice,
    /// Generalized Dice: weighted intersections over weighted totals.
    #[serde(rename = "gdl")]
    GeneralizedDice,
    /// Dice on the gray-matter label only.
    #[serde(rename = "gm-dl")]
    GmDice,
}

impl std::str::FromStr for LossVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dl" | "dice" => Ok(Self::Dice),
            "gdl" | "generalized-dice" => Ok(Self::GeneralizedDice),
            "gm-dl" | "gmdl" | "gm-dice" => Ok(Self::GmDice),
            other => Err(Error::invalid(format!("unknown loss variant '{other}'"))),
        }
    }
}

impl std::fmt::Display for LossVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Dice => "dl",
            Self::GeneralizedDice => "gdl",
            Self::GmDice => "gm-dl",
        })
    }
}

fn num_labels(shape: &[usize]) -> Result<usize> {
    shape
        .last()
        .copied()
        .filter(|&l| l > 0)
        .ok_or_else(|| Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "expected a trailing label axis".into(),
        })
}

fn spatial_axes(shape: &[usize]) -> Vec<usize> {
    (0..shape.len() - 1).collect()
}

/// Per-label volumes `Σ_x r_lx`.
pub fn label_volumes(r: &Tensor) -> Result<Vec<f64>> {
    let l = num_labels(r.shape())?;
    let mut vol = vec![0.0; l];
    for px in r.data().chunks_exact(l) {
        for (v, x) in vol.iter_mut().zip(px) {
            *v += x;
        }
    }
    Ok(vol)
}

/// `ω_l = 1 / (1 + (Σ_x r_lx)²)`.
pub fn class_weights(r: &Tensor) -> Result<ClassWeights> {
    let vol = label_volumes(r)?;
    Ok(ClassWeights(vol.iter().map(|v| 1.0 / (1.0 + v * v)).collect()))
}

/// One-hot encoding of integer labels into an `[H, W, L]` tensor.
pub fn one_hot(labels: &[u8], height: usize, width: usize, num_classes: usize) -> Result<Tensor> {
    if labels.len() != height * width {
        return Err(Error::ShapeMismatch {
            op: "one_hot",
            lhs: vec![height, width],
            rhs: vec![labels.len()],
        });
    }
    let mut data = vec![0.0; labels.len() * num_classes];
    for (i, &c) in labels.iter().enumerate() {
        let c = c as usize;
        if c >= num_classes {
            return Err(Error::invalid(format!("label {c} outside 0..{num_classes}")));
        }
        data[i * num_classes + c] = 1.0;
    }
    Tensor::new(vec![height, width, num_classes], data)
}

fn check_pair(tape: &Tape, p: Var, r: &Tensor) -> Result<usize> {
    if tape.shape(p) != r.shape() {
        return Err(Error::ShapeMismatch {
            op: "loss inputs",
            lhs: tape.shape(p).to_vec(),
            rhs: r.shape().to_vec(),
        });
    }
    num_labels(r.shape())
}

/// `−(1/|X|) Σ_x Σ_l r_lx log p_lx` with `p` clamped to `[ε, 1−ε]`.
pub fn cross_entropy(tape: &mut Tape, p: Var, r: &Tensor) -> Result<Var> {
    let l = check_pair(tape, p, r)?;
    let pixels = (r.len() / l) as f64;
    let pc = tape.clamp(p, EPS, 1.0 - EPS)?;
    let lg = tape.log(pc)?;
    let rv = tape.constant(r.clone());
    let prod = tape.mul(rv, lg)?;
    let s = tape.sum_all(prod)?;
    tape.scale(s, -1.0 / pixels)
}

/// Per-label intersections `Σ_x p r` and totals `Σ_x (p + r)`.
fn overlap_terms(tape: &mut Tape, p: Var, r: &Tensor) -> Result<(Var, Var)> {
    let axes = spatial_axes(r.shape());
    let rv = tape.constant(r.clone());
    let pr = tape.mul(p, rv)?;
    let inter = tape.sum(pr, &axes)?;
    let psum = tape.sum(p, &axes)?;
    let rsum = tape.constant(Tensor::new(vec![r.shape()[r.rank() - 1]], label_volumes(r)?)?);
    let total = tape.add(psum, rsum)?;
    Ok((inter, total))
}

fn check_weights(w: &ClassWeights, l: usize) -> Result<Vec<f64>> {
    if w.0.len() != l {
        return Err(Error::invalid(format!(
            "{} class weights for {} labels",
            w.0.len(),
            l
        )));
    }
    w.normalized()
}

/// `−(1/Σω) Σ_l ω_l · 2Σ_x p r / (Σ_x (p + r) + ε)`.
pub fn dice_loss(tape: &mut Tape, p: Var, r: &Tensor, w: &ClassWeights) -> Result<Var> {
    let l = check_pair(tape, p, r)?;
    let wn = check_weights(w, l)?;
    let (inter, total) = overlap_terms(tape, p, r)?;
    let num = tape.scale(inter, 2.0)?;
    let den = tape.add_scalar(total, EPS)?;
    let per_label = tape.div(num, den)?;
    let wv = tape.constant(Tensor::new(vec![l], wn)?);
    let weighted = tape.mul(wv, per_label)?;
    let s = tape.sum_all(weighted)?;
    tape.neg(s)
}

/// `−2 Σ_l ω_l Σ_x p r / (Σ_l ω_l Σ_x (p + r) + ε)`.
pub fn generalized_dice_loss(tape: &mut Tape, p: Var, r: &Tensor, w: &ClassWeights) -> Result<Var> {
    let l = check_pair(tape, p, r)?;
    let wn = check_weights(w, l)?;
    let (inter, total) = overlap_terms(tape, p, r)?;
    let wv = tape.constant(Tensor::new(vec![l], wn)?);
    let wi = tape.mul(wv, inter)?;
    let wi = tape.sum_all(wi)?;
    let num = tape.scale(wi, 2.0)?;
    let wt = tape.mul(wv, total)?;
    let wt = tape.sum_all(wt)?;
    let den = tape.add_scalar(wt, EPS)?;
    let ratio = tape.div(num, den)?;
    tape.neg(ratio)
}

/// Scalar terms of one combined-loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub dice: Var,
    pub cross_entropy: Var,
}

/// `λ·L_{D|GD} + (1−λ)·L_C`, with weights from [`class_weights`] (or GM-only).
pub fn combined_loss(
    tape: &mut Tape,
    p: Var,
    r: &Tensor,
    lambda: f64,
    variant: LossVariant,
) -> Result<LossTerms> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    let l = check_pair(tape, p, r)?;
    let dice = match variant {
        LossVariant::Dice => {
            let w = class_weights(r)?;
            dice_loss(tape, p, r, &w)?
        }
        LossVariant::GeneralizedDice => {
            let w = class_weights(r)?;
            generalized_dice_loss(tape, p, r, &w)?
        }
        LossVariant::GmDice => dice_loss(tape, p, r, &ClassWeights::gm_only(l))?,
    };
    let ce = cross_entropy(tape, p, r)?;
    let a = tape.scale(dice, lambda)?;
    let b = tape.scale(ce, 1.0 - lambda)?;
    let total = tape.add(a, b)?;
    Ok(LossTerms {
        total,
        dice,
        cross_entropy: ce,
    })
}

/// Evaluates a loss on plain tensors (no gradient).
pub fn evaluate(
    p: &Tensor,
    f: impl FnOnce(&mut Tape, Var) -> Result<Var>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let pv = tape.constant(p.clone());
    let out = f(&mut tape, pv)?;
    tape.value(out).item()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], d: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), d.to_vec()).unwrap()
    }

    #[test]
    fn weights_closed_form() {
        // label 0 covers 3 pixels, label 1 one pixel, label 2 absent
        let r = t(&[4, 3], &[1., 0., 0., 1., 0., 0., 1., 0., 0., 0., 1., 0.]);
        let w = class_weights(&r).unwrap();
        assert_eq!(w.values(), &[0.1, 0.5, 1.0]);
    }

    #[test]
    fn all_zero_weights_rejected() {
        let r = t(&[2, 2], &[1., 0., 0., 1.]);
        let w = ClassWeights::new(vec![0.0, 0.0]).unwrap();
        assert!(evaluate(&r, |tp, p| dice_loss(tp, p, &r, &w)).is_err());
        assert!(evaluate(&r, |tp, p| generalized_dice_loss(tp, p, &r, &w)).is_err());
    }

    #[test]
    fn lambda_range_checked() {
        let r = t(&[2, 2], &[1., 0., 0., 1.]);
        for bad in [-0.1, 1.5] {
            let res = evaluate(&r, |tp, p| {
                combined_loss(tp, p, &r, bad, LossVariant::GeneralizedDice).map(|l| l.total)
            });
            assert!(res.is_err());
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let r = t(&[2, 2], &[1., 0., 0., 1.]);
        let p = t(&[1, 2], &[0.5, 0.5]);
        assert!(evaluate(&p, |tp, pv| cross_entropy(tp, pv, &r)).is_err());
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("GDL".parse::<LossVariant>().unwrap(), LossVariant::GeneralizedDice);
        assert_eq!("gm-dl".parse::<LossVariant>().unwrap(), LossVariant::GmDice);
        assert!("focal".parse::<LossVariant>().is_err());
    }
}

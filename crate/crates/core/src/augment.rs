//! Training-time augmentation: smooth random deformations, random scaling and
//! rotation about the window centre, mirroring, and window sampling away from
//! the image border.
//!
//! Output pixel `o` of a window is read from the source image at
//! `origin + c + R(−θ)(mirror(o) − c)/s + d(o)`, where `c` is the window
//! centre and `d` the dense deformation field.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{LabelMap, MultiChannelSlice};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Per-axis standard deviation of support-point displacements (px).
    pub deform_std: f64,
    /// Largest allowed displacement norm (px).
    pub deform_truncate: f64,
    pub scale_range: (f64, f64),
    /// Largest absolute rotation (degrees).
    pub max_rotation_deg: f64,
    pub mirror_prob: f64,
    pub safe_margin: usize,
    pub window: (usize, usize),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            deform_std: 15.0,
            deform_truncate: 45.0,
            scale_range: (0.8, 1.25),
            max_rotation_deg: 10.0,
            mirror_prob: 0.5,
            safe_margin: 45,
            window: (500, 500),
        }
    }
}

impl AugmentConfig {
    /// No geometric change: windows are plain crops.
    pub fn identity(window: (usize, usize), safe_margin: usize) -> Self {
        Self {
            deform_std: 0.0,
            deform_truncate: 0.0,
            scale_range: (1.0, 1.0),
            max_rotation_deg: 0.0,
            mirror_prob: 0.0,
            safe_margin,
            window,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(self.deform_std >= 0.0 && self.deform_std.is_finite()) {
            return bad(format!("deform_std {} must be nonnegative", self.deform_std));
        }
        if (self.deform_truncate - 3.0 * self.deform_std).abs() > 1e-9 * self.deform_std.max(1.0) {
            return bad(format!(
                "deform_truncate {} must be three times deform_std {}",
                self.deform_truncate, self.deform_std
            ));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi && (lo * hi - 1.0).abs() < 1e-9) {
            return bad(format!(
                "scale range [{lo}, {hi}] must be positive and reciprocal-symmetric"
            ));
        }
        if !(0.0..180.0).contains(&self.max_rotation_deg) {
            return bad(format!("rotation bound {} out of range", self.max_rotation_deg));
        }
        if !(0.0..=1.0).contains(&self.mirror_prob) {
            return bad(format!("mirror probability {} outside [0, 1]", self.mirror_prob));
        }
        if self.window.0 == 0 || self.window.1 == 0 {
            return bad("window must be nonempty".into());
        }
        Ok(())
    }

    /// Smallest image extent that admits a window.
    pub fn min_extent(&self) -> (usize, usize) {
        (
            self.window.0 + 2 * self.safe_margin,
            self.window.1 + 2 * self.safe_margin,
        )
    }
}

/// Dense per-pixel displacements `(row, col)` over a window, interpolated
/// from vectors at its four corners.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    pub height: usize,
    pub width: usize,
    /// Corner vectors: top-left, top-right, bottom-left, bottom-right.
    pub support: [[f64; 2]; 4],
    data: Vec<[f64; 2]>,
}

/// Cubic convolution between two knots with replicated end knots; rises
/// monotonically from 0 to 1 so interpolated vectors are convex combinations.
fn cubic_weight(t: f64) -> f64 {
    0.5 * t + 1.5 * t * t - t * t * t
}

impl DeformationField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::from_support(height, width, [[0.0; 2]; 4])
    }

    pub fn from_support(height: usize, width: usize, support: [[f64; 2]; 4]) -> Self {
        let frac = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            let wr = cubic_weight(frac(r, height));
            for c in 0..width {
                let wc = cubic_weight(frac(c, width));
                let w = [(1.0 - wr) * (1.0 - wc), (1.0 - wr) * wc, wr * (1.0 - wc), wr * wc];
                let mut v = [0.0; 2];
                for (k, s) in support.iter().enumerate() {
                    v[0] += w[k] * s[0];
                    v[1] += w[k] * s[1];
                }
                data.push(v);
            }
        }
        Self {
            height,
            width,
            support,
            data,
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> [f64; 2] {
        self.data[row * self.width + col]
    }

    pub fn max_displacement(&self) -> f64 {
        self.data
            .iter()
            .map(|v| v[0].hypot(v[1]))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transform {
    pub field: DeformationField,
    pub scale: f64,
    pub angle_deg: f64,
    pub mirror: bool,
    /// Top-left corner of the window in the source image.
    pub origin: (usize, usize),
}

impl Transform {
    /// A plain crop at `origin`.
    pub fn crop(origin: (usize, usize), window: (usize, usize)) -> Self {
        Self {
            field: DeformationField::zeros(window.0, window.1),
            scale: 1.0,
            angle_deg: 0.0,
            mirror: false,
            origin,
        }
    }

    pub fn window(&self) -> (usize, usize) {
        (self.field.height, self.field.width)
    }

    /// Source coordinates `(row, col)` of window pixel `(r, c)`.
    pub fn source(&self, r: usize, c: usize) -> (f64, f64) {
        let (h, w) = self.window();
        let cr = (h as f64 - 1.0) / 2.0;
        let cc = (w as f64 - 1.0) / 2.0;
        let c_m = if self.mirror { (w - 1 - c) as f64 } else { c as f64 };
        let (dy, dx) = (r as f64 - cr, c_m - cc);
        let (sin, cos) = (-self.angle_deg.to_radians()).sin_cos();
        let y = cr + (cos * dy - sin * dx) / self.scale;
        let x = cc + (sin * dy + cos * dx) / self.scale;
        let d = self.field.at(r, c);
        (
            self.origin.0 as f64 + y + d[0],
            self.origin.1 as f64 + x + d[1],
        )
    }
}

fn clamp_norm(v: [f64; 2], limit: f64) -> [f64; 2] {
    let n = v[0].hypot(v[1]);
    if n > limit {
        let mut k = limit / n;
        while (v[0] * k).hypot(v[1] * k) > limit {
            k = k.next_down();
        }
        [v[0] * k, v[1] * k]
    } else {
        v
    }
}

/// Draws one random transform for an image of `extent` (rows, cols).
pub fn sample_augmentation<R: Rng + ?Sized>(
    rng: &mut R,
    config: &AugmentConfig,
    extent: (usize, usize),
) -> Result<Transform> {
    config.validate()?;
    let need = config.min_extent();
    if extent.0 < need.0 || extent.1 < need.1 {
        return Err(Error::invalid(format!(
            "image {}x{} too small for window {}x{} with margin {}",
            extent.0, extent.1, config.window.0, config.window.1, config.safe_margin
        )));
    }
    let mut support = [[0.0; 2]; 4];
    if config.deform_std > 0.0 {
        let normal = Normal::new(0.0, config.deform_std)
            .map_err(|e| Error::invalid(format!("deformation distribution: {e}")))?;
        for s in support.iter_mut() {
            *s = clamp_norm([normal.sample(rng), normal.sample(rng)], config.deform_truncate);
        }
    }
    let (lo, hi) = config.scale_range;
    let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let a = config.max_rotation_deg;
    let angle_deg = if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 };
    let mirror = rng.random_bool(config.mirror_prob);
    let m = config.safe_margin;
    let origin = (
        rng.random_range(m..=extent.0 - m - config.window.0),
        rng.random_range(m..=extent.1 - m - config.window.1),
    );
    Ok(Transform {
        field: DeformationField::from_support(config.window.0, config.window.1, support),
        scale,
        angle_deg,
        mirror,
        origin,
    })
}

fn check_window(t: &Transform, extent: (usize, usize), margin: usize) -> Result<()> {
    let (h, w) = t.window();
    let fits = |o: usize, n: usize, e: usize| o >= margin && o + n + margin <= e;
    if fits(t.origin.0, h, extent.0) && fits(t.origin.1, w, extent.1) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "window {h}x{w} at {:?} leaves the safe region of a {}x{} image (margin {margin})",
            t.origin, extent.0, extent.1
        )))
    }
}

/// Bilinear sample with edge clamping.
fn bilinear(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Image window, bilinear per channel.
pub fn warp_slice(slice: &MultiChannelSlice, t: &Transform) -> MultiChannelSlice {
    let (wh, ww) = t.window();
    let coords: Vec<(f64, f64)> = (0..wh * ww).map(|i| t.source(i / ww, i % ww)).collect();
    slice.map_channels(|plane| {
        let out = coords
            .iter()
            .map(|&(y, x)| bilinear(plane, slice.height, slice.width, y, x))
            .collect();
        (wh, ww, out)
    })
}

/// Label window, nearest neighbour.
pub fn warp_labels(labels: &LabelMap, t: &Transform) -> LabelMap {
    let (wh, ww) = t.window();
    let (h, w) = (labels.height, labels.width);
    let mut out = labels.clone();
    out.height = wh;
    out.width = ww;
    out.labels = (0..wh * ww)
        .map(|i| {
            let (y, x) = t.source(i / ww, i % ww);
            let r = (y.round().max(0.0) as usize).min(h - 1);
            let c = (x.round().max(0.0) as usize).min(w - 1);
            labels.labels[r * w + c]
        })
        .collect();
    out
}

/// Applies `t` to an image and its labels; both receive the same map.
pub fn apply_transform(
    slice: &MultiChannelSlice,
    labels: &LabelMap,
    t: &Transform,
    safe_margin: usize,
) -> Result<(MultiChannelSlice, LabelMap)> {
    if slice.height != labels.height || slice.width != labels.width {
        return Err(Error::ShapeMismatch {
            op: "apply_transform",
            lhs: vec![slice.height, slice.width],
            rhs: vec![labels.height, labels.width],
        });
    }
    check_window(t, (slice.height, slice.width), safe_margin)?;
    Ok((warp_slice(slice, t), warp_labels(labels, t)))
}

/// Flips columns about the vertical centre line.
pub fn mirror_labels(labels: &LabelMap) -> LabelMap {
    let mut out = labels.clone();
    for row in out.labels.chunks_exact_mut(labels.width) {
        row.reverse();
    }
    out
}

pub fn mirror_slice(slice: &MultiChannelSlice) -> MultiChannelSlice {
    let mut out = slice.clone();
    let c = slice.channels;
    for row in out.pixels.chunks_exact_mut(slice.width * c) {
        let mut px: Vec<&[f64]> = row.chunks_exact(c).collect();
        px.reverse();
        let flipped: Vec<f64> = px.concat();
        row.copy_from_slice(&flipped);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn support_weights_reach_corners() {
        let s = [[1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [4.0, 0.0]];
        let f = DeformationField::from_support(5, 7, s);
        assert_eq!(f.at(0, 0), [1.0, 0.0]);
        assert_eq!(f.at(0, 6), [2.0, 0.0]);
        assert_eq!(f.at(4, 0), [3.0, 0.0]);
        assert_eq!(f.at(4, 6), [4.0, 0.0]);
        assert_eq!(cubic_weight(0.0), 0.0);
        assert_eq!(cubic_weight(1.0), 1.0);
    }

    #[test]
    fn config_checks() {
        assert!(AugmentConfig::default().validate().is_ok());
        let mut c = AugmentConfig::default();
        c.deform_truncate = 40.0;
        assert!(c.validate().is_err());
        let mut c = AugmentConfig::default();
        c.scale_range = (0.8, 1.2);
        assert!(c.validate().is_err());
    }
}

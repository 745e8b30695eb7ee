//! Synthetic multi-inversion cord slices with exact tissue labels.
//!
//! Each subject gets a cord ellipse surrounded by a CSF ring, with a
//! butterfly-shaped gray matter made of mirrored dorsal and ventral horn
//! ellipses joined by a commissure bar. Shapes drift smoothly along the slice
//! index; every scan is posed with a small random translation, rotation and
//! axial offset, larger for the repositioned scan.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{
    save_labels, save_slice, DatasetManifest, LabelMap, ManifestEntry, MultiChannelSlice, SliceId,
    SplitSpec, BACKGROUND, GM, WM,
};
use crate::rng::{stream_rng, Stream};

/// Horn ellipse: centre offset `(row, col)` from the cord centre (right-hand
/// side; the left horn is mirrored), semi-axes `(along, across)` and tilt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Horn {
    pub offset: (f64, f64),
    pub radii: (f64, f64),
    pub tilt_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ButterflySpec {
    pub dorsal: Horn,
    pub ventral: Horn,
    /// Half height of the commissure bar joining the horns (px).
    pub waist: f64,
    /// Multiplies every horn radius and the waist.
    pub lobe_scale: f64,
}

impl Default for ButterflySpec {
    fn default() -> Self {
        Self {
            dorsal: Horn {
                offset: (-6.5, 6.5),
                radii: (8.0, 3.0),
                tilt_deg: 35.0,
            },
            ventral: Horn {
                offset: (5.0, 7.5),
                radii: (6.0, 4.5),
                tilt_deg: -25.0,
            },
            waist: 2.0,
            lobe_scale: 1.0,
        }
    }
}

/// Per-tissue longitudinal relaxation times, sampled as `|1 − 2e^(−TI/T1)|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    pub inversion_times_ms: Vec<f64>,
    pub t1_outside_ms: f64,
    pub t1_csf_ms: f64,
    pub t1_gm_ms: f64,
    pub t1_wm_ms: f64,
    pub noise_std: f64,
    /// Peak relative strength of a smooth multiplicative intensity ramp,
    /// drawn per scan.
    pub bias_amplitude: f64,
}

impl Default for SignalSpec {
    fn default() -> Self {
        Self {
            inversion_times_ms: vec![100.0, 250.0, 450.0, 700.0, 1000.0, 1400.0, 2000.0, 3000.0],
            t1_outside_ms: 600.0,
            t1_csf_ms: 4000.0,
            t1_gm_ms: 1300.0,
            t1_wm_ms: 850.0,
            noise_std: 0.05,
            bias_amplitude: 0.1,
        }
    }
}

impl SignalSpec {
    pub fn curve(&self, t1_ms: f64) -> Vec<f64> {
        self.inversion_times_ms
            .iter()
            .map(|ti| (1.0 - 2.0 * (-ti / t1_ms).exp()).abs())
            .collect()
    }
}

/// Pose perturbation between scans of one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterSpec {
    pub translation_std_px: f64,
    pub rotation_std_deg: f64,
    /// Axial position offset, in slices.
    pub axial_std: f64,
    pub repositioned_scan: u32,
    /// Multiplies every jitter std of the repositioned scan.
    pub repositioned_factor: f64,
}

impl Default for JitterSpec {
    fn default() -> Self {
        Self {
            translation_std_px: 0.7,
            rotation_std_deg: 1.5,
            axial_std: 0.3,
            repositioned_scan: 3,
            repositioned_factor: 3.0,
        }
    }
}

impl JitterSpec {
    pub fn none() -> Self {
        Self {
            translation_std_px: 0.0,
            rotation_std_deg: 0.0,
            axial_std: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub extent: (usize, usize),
    pub spacing_mm: (f64, f64),
    /// Cord ellipse semi-axes `(rows, cols)` in px.
    pub cord_radii: (f64, f64),
    /// Thickness of the CSF ring around the cord (px).
    pub csf_thickness: f64,
    /// Sub-samples per pixel side when averaging signal (partial volume).
    pub supersample: usize,
    pub butterfly: ButterflySpec,
    pub signal: SignalSpec,
    pub jitter: JitterSpec,
    /// Relative std of the per-subject cord size (draws clipped at 2 std).
    pub cord_variation: f64,
    /// Relative std of the per-subject gray matter size.
    pub gm_variation: f64,
    /// Relative amplitude of the shape drift along the slice index.
    pub drift: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            extent: (96, 96),
            spacing_mm: (0.25, 0.25),
            cord_radii: (20.0, 28.0),
            csf_thickness: 5.0,
            supersample: 4,
            butterfly: ButterflySpec::default(),
            signal: SignalSpec::default(),
            jitter: JitterSpec::default(),
            cord_variation: 0.05,
            gm_variation: 0.06,
            drift: 0.06,
            seed: 0,
        }
    }
}

/// Number of subjects, scans per subject and slices per scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomLayout {
    pub subjects: u32,
    pub scans: u32,
    pub slices: u32,
}

impl Default for PhantomLayout {
    fn default() -> Self {
        Self {
            subjects: 8,
            scans: 3,
            slices: 6,
        }
    }
}

/// Relative extra GM size allowed for the drift along slices.
const GM_DRIFT_GAIN: f64 = 1.5;
/// Slices per full drift period.
const DRIFT_PERIOD: f64 = 12.0;
/// Minimal white matter rim around the gray matter, relative to the cord.
const RIM: f64 = 0.1;

fn horn_points(h: &Horn, scale: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
    let (s, c) = h.tilt_deg.to_radians().sin_cos();
    (0..72).map(move |k| {
        let t = k as f64 * PI / 36.0;
        let (u, v) = (h.radii.0 * scale * t.cos(), h.radii.1 * scale * t.sin());
        // `u` runs along the tilted long axis, measured from the row axis
        (h.offset.0 + c * u - s * v, h.offset.1 + s * u + c * v)
    })
}

fn in_horn(h: &Horn, scale: f64, y: f64, x: f64) -> bool {
    let (s, c) = h.tilt_deg.to_radians().sin_cos();
    let (dy, dx) = (y - h.offset.0, x - h.offset.1);
    let u = c * dy + s * dx;
    let v = -s * dy + c * dx;
    let (a, b) = (h.radii.0 * scale, h.radii.1 * scale);
    (u / a).powi(2) + (v / b).powi(2) <= 1.0
}

impl PhantomSpec {
    /// Scaled-down variant with a smaller gray matter, for class-imbalance
    /// experiments.
    pub fn imbalanced() -> Self {
        let mut s = Self::default();
        s.butterfly.lobe_scale = 0.6;
        s.butterfly.waist = 1.5;
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.extent.0 < 8 || self.extent.1 < 8 {
            return bad(format!("extent {:?} too small", self.extent));
        }
        if !(self.spacing_mm.0 > 0.0 && self.spacing_mm.1 > 0.0) {
            return bad("pixel spacing must be positive".into());
        }
        if !(self.cord_radii.0 > 0.0 && self.cord_radii.1 > 0.0 && self.csf_thickness > 0.0) {
            return bad("cord radii and CSF thickness must be positive".into());
        }
        for v in [self.cord_variation, self.gm_variation, self.drift] {
            if !(0.0..0.25).contains(&v) {
                return bad(format!("relative variation {v} outside [0, 0.25)"));
            }
        }
        let j = &self.jitter;
        if [j.translation_std_px, j.rotation_std_deg, j.axial_std, j.repositioned_factor]
            .iter()
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return bad("jitter parameters must be finite and nonnegative".into());
        }
        let sig = &self.signal;
        if sig.inversion_times_ms.is_empty() || !(sig.noise_std >= 0.0) {
            return bad("signal needs inversion times and a nonnegative noise std".into());
        }
        if !(0.0..0.5).contains(&sig.bias_amplitude) {
            return bad(format!("bias amplitude {} outside [0, 0.5)", sig.bias_amplitude));
        }
        if self.supersample == 0 {
            return bad("supersample must be at least 1".into());
        }
        let curves = [
            sig.curve(sig.t1_outside_ms),
            sig.curve(sig.t1_csf_ms),
            sig.curve(sig.t1_gm_ms),
            sig.curve(sig.t1_wm_ms),
        ];
        for i in 0..4 {
            for j in i + 1..4 {
                let sep = curves[i]
                    .iter()
                    .zip(&curves[j])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                if sep < 0.05 {
                    return bad(format!("tissue signal curves {i} and {j} are indistinguishable"));
                }
            }
        }
        self.check_nesting()
    }

    /// Gray matter must stay inside the cord under the largest size
    /// excursions, and the CSF ring must fit in the image.
    fn check_nesting(&self) -> Result<()> {
        let b = &self.butterfly;
        if !(b.lobe_scale > 0.0 && b.waist >= 0.0) {
            return Err(Error::invalid("lobe scale must be positive"));
        }
        let gm_max = (1.0 + 2.0 * self.gm_variation) * (1.0 + GM_DRIFT_GAIN * self.drift);
        let cord_min = (1.0 - 2.0 * self.cord_variation) * (1.0 - self.drift);
        let ratio = b.lobe_scale * gm_max / cord_min;
        let (ry, rx) = (self.cord_radii.0 * (1.0 - RIM), self.cord_radii.1 * (1.0 - RIM));
        let inside = |(y, x): (f64, f64)| (y / ry).powi(2) + (x / rx).powi(2) <= 1.0;
        let bar_x = b.dorsal.offset.1.max(b.ventral.offset.1);
        let bar = [(1.0, 1.0), (-1.0, 1.0)].map(|(sy, sx)| (sy * b.waist * ratio, sx * bar_x));
        for horn in [&b.dorsal, &b.ventral] {
            if !horn_points(horn, ratio).all(inside)
                || !bar.iter().all(|p| inside(*p))
            {
                return Err(Error::invalid(
                    "gray matter reaches the cord boundary: regions are not nested",
                ));
            }
        }
        let cord_max = (1.0 + 2.0 * self.cord_variation) * (1.0 + self.drift);
        let half = (self.extent.0 as f64 / 2.0, self.extent.1 as f64 / 2.0);
        if self.cord_radii.0 * cord_max + self.csf_thickness >= half.0
            || self.cord_radii.1 * cord_max + self.csf_thickness >= half.1
        {
            return Err(Error::invalid("CSF ring does not fit in the image"));
        }
        Ok(())
    }
}

/// Subject-level random shape parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Anatomy {
    cord_scale: f64,
    gm_scale: f64,
    phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Pose {
    shift: (f64, f64),
    angle_rad: f64,
    axial: f64,
}

fn clipped_normal<R: Rng>(rng: &mut R, std: f64) -> f64 {
    if std == 0.0 {
        return 0.0;
    }
    let n = Normal::new(0.0, std).expect("finite std");
    n.sample(rng).clamp(-2.0 * std, 2.0 * std)
}

fn stream_index(subject: u32, scan: u32, slice: u32, purpose: u64) -> u64 {
    ((subject as u64) << 40) | ((scan as u64) << 24) | ((slice as u64) << 8) | purpose
}

fn anatomy(spec: &PhantomSpec, subject: u32) -> Anatomy {
    let mut rng = stream_rng(spec.seed, Stream::Phantom, stream_index(subject, 0, 0, 1));
    Anatomy {
        cord_scale: 1.0 + clipped_normal(&mut rng, spec.cord_variation),
        gm_scale: 1.0 + clipped_normal(&mut rng, spec.gm_variation),
        phase: rng.random_range(0.0..2.0 * PI),
    }
}

fn pose(spec: &PhantomSpec, subject: u32, scan: u32) -> Pose {
    let j = &spec.jitter;
    let k = if scan == j.repositioned_scan {
        j.repositioned_factor
    } else {
        1.0
    };
    let mut rng = stream_rng(spec.seed, Stream::Phantom, stream_index(subject, scan, 0, 2));
    let normal = |rng: &mut rand_chacha::ChaCha8Rng, std: f64| {
        if std == 0.0 {
            0.0
        } else {
            Normal::new(0.0, std).expect("finite std").sample(rng)
        }
    };
    Pose {
        shift: (
            normal(&mut rng, k * j.translation_std_px),
            normal(&mut rng, k * j.translation_std_px),
        ),
        angle_rad: normal(&mut rng, k * j.rotation_std_deg).to_radians(),
        axial: normal(&mut rng, k * j.axial_std),
    }
}

/// Intensity ramp direction (radians) and strength. Like the noise it
/// depends on subject and slice only, so scans differ by pose alone.
fn bias(spec: &PhantomSpec, subject: u32, slice: u32) -> (f64, f64) {
    let mut rng = stream_rng(spec.seed, Stream::Phantom, stream_index(subject, 0, slice, 4));
    (
        rng.random_range(0.0..2.0 * PI),
        rng.random_range(0.0..=1.0) * spec.signal.bias_amplitude,
    )
}

/// Ground-truth labels with tissue masks for one posed slice.
struct Geometry<'a> {
    spec: &'a PhantomSpec,
    cord: (f64, f64),
    gm_scale: f64,
    offset_scale: f64,
    pose: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tissue {
    Outside,
    Csf,
    Gm,
    Wm,
}

impl Geometry<'_> {
    fn tissue(&self, r: f64, c: f64) -> Tissue {
        let cy = (self.spec.extent.0 as f64 - 1.0) / 2.0 + self.pose.shift.0;
        let cx = (self.spec.extent.1 as f64 - 1.0) / 2.0 + self.pose.shift.1;
        let (s, co) = (-self.pose.angle_rad).sin_cos();
        let (dy, dx) = (r - cy, c - cx);
        let y = co * dy - s * dx;
        let x = s * dy + co * dx;
        let (ry, rx) = self.cord;
        let t = self.spec.csf_thickness;
        if (y / (ry + t)).powi(2) + (x / (rx + t)).powi(2) > 1.0 {
            return Tissue::Outside;
        }
        if (y / ry).powi(2) + (x / rx).powi(2) > 1.0 {
            return Tissue::Csf;
        }
        // butterfly in cord-normalized coordinates, mirrored about the midline
        let (yn, xn) = (y / self.offset_scale, x.abs() / self.offset_scale);
        let b = &self.spec.butterfly;
        let g = b.lobe_scale * self.gm_scale / self.offset_scale;
        let bar_x = b.dorsal.offset.1.max(b.ventral.offset.1);
        let in_gm = in_horn(&b.dorsal, g, yn, xn)
            || in_horn(&b.ventral, g, yn, xn)
            || (yn.abs() <= b.waist * g && xn <= bar_x);
        if in_gm {
            Tissue::Gm
        } else {
            Tissue::Wm
        }
    }
}

/// One generated slice with its exact labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSample {
    pub slice: MultiChannelSlice,
    pub labels: LabelMap,
}

/// Renders one slice; `slice` and `scan` are 1-based.
pub fn render_slice(spec: &PhantomSpec, subject: u32, scan: u32, slice: u32) -> Result<PhantomSample> {
    spec.validate()?;
    let anat = anatomy(spec, subject);
    let pose = pose(spec, subject, scan);
    let z = slice as f64 - 1.0 + pose.axial;
    let w = 2.0 * PI / DRIFT_PERIOD;
    let cord_drift = 1.0 + spec.drift * (w * z + anat.phase).sin();
    let gm_drift = 1.0 + GM_DRIFT_GAIN * spec.drift * (w * z + anat.phase + 0.7).sin();
    let offset_scale = anat.cord_scale * cord_drift;
    let geom = Geometry {
        spec,
        cord: (spec.cord_radii.0 * offset_scale, spec.cord_radii.1 * offset_scale),
        gm_scale: anat.gm_scale * gm_drift,
        offset_scale,
        pose,
    };
    let sig = &spec.signal;
    let curves = [
        sig.curve(sig.t1_outside_ms),
        sig.curve(sig.t1_csf_ms),
        sig.curve(sig.t1_gm_ms),
        sig.curve(sig.t1_wm_ms),
    ];
    let (h, wd) = spec.extent;
    let ch = sig.inversion_times_ms.len();
    let id = SliceId::new(subject, scan, slice);
    let curve_of = |t: Tissue| match t {
        Tissue::Outside => &curves[0],
        Tissue::Csf => &curves[1],
        Tissue::Gm => &curves[2],
        Tissue::Wm => &curves[3],
    };
    let ss = spec.supersample;
    let offsets: Vec<f64> = (0..ss).map(|i| (i as f64 + 0.5) / ss as f64 - 0.5).collect();
    let (bias_dir, bias_amp) = bias(spec, subject, slice);
    let (bs, bc) = bias_dir.sin_cos();
    let half = (h.max(wd) as f64) / 2.0;
    let mut pixels = Vec::with_capacity(h * wd * ch);
    let mut labels = Vec::with_capacity(h * wd);
    let mut acc = vec![0.0; ch];
    for r in 0..h {
        for c in 0..wd {
            labels.push(match geom.tissue(r as f64, c as f64) {
                Tissue::Outside | Tissue::Csf => BACKGROUND,
                Tissue::Gm => GM,
                Tissue::Wm => WM,
            });
            acc.iter_mut().for_each(|a| *a = 0.0);
            for &oy in &offsets {
                for &ox in &offsets {
                    let curve = curve_of(geom.tissue(r as f64 + oy, c as f64 + ox));
                    acc.iter_mut().zip(curve).for_each(|(a, v)| *a += v);
                }
            }
            let ramp = (r as f64 - (h as f64 - 1.0) / 2.0) * bs + (c as f64 - (wd as f64 - 1.0) / 2.0) * bc;
            let gain = 1.0 + bias_amp * ramp / half;
            let norm = gain / (ss * ss) as f64;
            pixels.extend(acc.iter().map(|a| a * norm));
        }
    }
    if sig.noise_std > 0.0 {
        let mut rng = stream_rng(spec.seed, Stream::Phantom, stream_index(subject, 0, slice, 3));
        let n = Normal::new(0.0, sig.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
        for p in pixels.iter_mut() {
            *p += n.sample(&mut rng);
        }
    }
    let slice_img = MultiChannelSlice::new(h, wd, ch, pixels, spec.spacing_mm, id)?;
    let mut label_map = LabelMap::new(h, wd, labels, spec.spacing_mm)?;
    label_map.id = id;
    Ok(PhantomSample {
        slice: slice_img,
        labels: label_map,
    })
}

/// All slices of the layout, ordered by subject, scan and slice.
pub fn generate_phantom(spec: &PhantomSpec, layout: PhantomLayout) -> Result<Vec<PhantomSample>> {
    spec.validate()?;
    use rayon::prelude::*;
    let ids: Vec<SliceId> = (1..=layout.subjects)
        .flat_map(|s| (1..=layout.scans).flat_map(move |c| (1..=layout.slices).map(move |z| SliceId::new(s, c, z))))
        .collect();
    ids.par_iter()
        .map(|id| render_slice(spec, id.subject, id.scan, id.slice))
        .collect()
}

/// Simulated rater: every pixel touching a different class (4-neighbourhood)
/// takes one of those neighbouring classes with probability `flip_prob`.
pub fn perturb_rater(labels: &LabelMap, seed: u64, rater: u32, flip_prob: f64) -> Result<LabelMap> {
    if !(0.0..0.5).contains(&flip_prob) {
        return Err(Error::invalid(format!("flip probability {flip_prob} outside [0, 0.5)")));
    }
    let id = labels.id;
    let index = stream_index(id.subject, id.scan, id.slice, 0x80 | (rater as u64 & 0x7f));
    let mut rng = stream_rng(seed, Stream::Rater, index);
    let (h, w) = (labels.height, labels.width);
    let mut out = labels.clone();
    out.rater = Some(rater);
    for r in 0..h {
        for c in 0..w {
            let own = labels.at(r, c);
            let mut others = [0u8; 4];
            let mut n = 0;
            let nb = [
                (r.wrapping_sub(1), c),
                (r + 1, c),
                (r, c.wrapping_sub(1)),
                (r, c + 1),
            ];
            for (rr, cc) in nb {
                if rr < h && cc < w && labels.at(rr, cc) != own {
                    others[n] = labels.at(rr, cc);
                    n += 1;
                }
            }
            if n > 0 && rng.random_bool(flip_prob) {
                out.labels[r * w + c] = others[rng.random_range(0..n)];
            }
        }
    }
    Ok(out)
}

/// Rater label files written next to each slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaterSpec {
    pub count: u32,
    pub flip_prob: f64,
}

/// Writes slices, ground truth (rater 0), simulated raters `1..=count` and a
/// `manifest.tsv` under `dir`. Manifest paths are relative to `dir`.
pub fn write_phantom(
    samples: &[PhantomSample],
    dir: impl AsRef<Path>,
    split: &SplitSpec,
    raters: Option<RaterSpec>,
    seed: u64,
) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    let mut entries = Vec::new();
    for s in samples {
        let id = s.slice.id;
        let Some(which) = split.split_of(id.subject) else {
            continue;
        };
        let sub = PathBuf::from(format!("s{:03}", id.subject));
        let slice_path = sub.join(format!("{}.mcs", id.stem()));
        save_slice(dir.join(&slice_path), &s.slice)?;
        let mut gt = s.labels.clone();
        gt.rater = Some(0);
        let gt_path = sub.join(format!("{}_r0.mlb", id.stem()));
        save_labels(dir.join(&gt_path), &gt)?;
        let mut labels = vec![(0, gt_path)];
        if let Some(rs) = raters {
            for k in 1..=rs.count {
                let l = perturb_rater(&s.labels, seed, k, rs.flip_prob)?;
                let p = sub.join(format!("{}_r{k}.mlb", id.stem()));
                save_labels(dir.join(&p), &l)?;
                labels.push((k, p));
            }
        }
        entries.push(ManifestEntry {
            split: which,
            id,
            slice_path,
            labels,
        });
    }
    let manifest = DatasetManifest::new(entries)?;
    manifest.save(dir.join("manifest.tsv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_is_valid() {
        PhantomSpec::default().validate().unwrap();
        PhantomSpec::imbalanced().validate().unwrap();
    }

    #[test]
    fn oversized_gray_matter_rejected() {
        let mut s = PhantomSpec::default();
        s.butterfly.lobe_scale = 2.5;
        assert!(s.validate().is_err());
    }

    #[test]
    fn classes_present() {
        let s = render_slice(&PhantomSpec::default(), 1, 1, 1).unwrap();
        assert!(s.labels.count(GM) > 150, "gm {}", s.labels.count(GM));
        assert!(s.labels.count(WM) > s.labels.count(GM));
        assert!(s.labels.count(BACKGROUND) > 0);
    }
}

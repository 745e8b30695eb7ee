use super::types::{LabelMap, MultiChannelSlice};
use crate::error::{Error, Result};

/// Lanczos window half-width.
pub const LANCZOS_A: usize = 3;

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if x.fract() == 0.0 {
        0.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Lanczos-3 kernel.
pub fn lanczos_kernel(x: f64) -> f64 {
    let a = LANCZOS_A as f64;
    if x.abs() >= a {
        0.0
    } else {
        sinc(x) * sinc(x / a)
    }
}

/// Resamples one axis; `src` is `outer × n × inner`, sampled along `n`.
fn resample_axis(src: &[f64], outer: usize, n: usize, inner: usize, factor: f64) -> (usize, Vec<f64>) {
    let n_out = ((n as f64 * factor).round() as usize).max(1);
    let scale = (1.0 / factor).max(1.0);
    let support = LANCZOS_A as f64 * scale;
    // taps and normalized weights per output index
    let taps: Vec<Vec<(usize, f64)>> = (0..n_out)
        .map(|o| {
            let center = (o as f64 + 0.5) / factor - 0.5;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut w: Vec<(usize, f64)> = (lo..=hi)
                .filter_map(|j| {
                    let k = lanczos_kernel((center - j as f64) / scale);
                    (k != 0.0).then(|| (j.clamp(0, n as isize - 1) as usize, k))
                })
                .collect();
            let total: f64 = w.iter().map(|(_, k)| k).sum();
            w.iter_mut().for_each(|(_, k)| *k /= total);
            w
        })
        .collect();
    let mut out = vec![0.0; outer * n_out * inner];
    for o in 0..outer {
        for (t, tw) in taps.iter().enumerate() {
            for i in 0..inner {
                let mut acc = 0.0;
                for &(j, k) in tw {
                    acc += k * src[(o * n + j) * inner + i];
                }
                out[(o * n_out + t) * inner + i] = acc;
            }
        }
    }
    (n_out, out)
}

/// Separable Lanczos-3 resampling of every channel by `(row, col)` factors.
/// Output spacing is the input spacing divided by the factors.
pub fn lanczos_resample(slice: &MultiChannelSlice, factor: (f64, f64)) -> Result<MultiChannelSlice> {
    if !(factor.0 > 0.0 && factor.1 > 0.0 && factor.0.is_finite() && factor.1.is_finite()) {
        return Err(Error::invalid(format!(
            "resampling factors must be positive, got {factor:?}"
        )));
    }
    let mut out = slice.map_channels(|plane| {
        let (h_out, rows) = resample_axis(plane, 1, slice.height, slice.width, factor.0);
        let (w_out, cols) = resample_axis(&rows, h_out, slice.width, 1, factor.1);
        (h_out, w_out, cols)
    });
    out.spacing_mm = (slice.spacing_mm.0 / factor.0, slice.spacing_mm.1 / factor.1);
    Ok(out)
}

/// Resamples to an isotropic `target_mm` pixel spacing.
pub fn resample_to_spacing(slice: &MultiChannelSlice, target_mm: f64) -> Result<MultiChannelSlice> {
    if !(target_mm > 0.0) {
        return Err(Error::invalid("target spacing must be positive"));
    }
    lanczos_resample(
        slice,
        (slice.spacing_mm.0 / target_mm, slice.spacing_mm.1 / target_mm),
    )
}

/// (source offset, destination offset, copied length) for one axis.
fn crop_pad_axis(n: usize, target: usize) -> (usize, usize, usize) {
    if n >= target {
        ((n - target) / 2, 0, target)
    } else {
        (0, (target - n) / 2, n)
    }
}

fn crop_or_pad_plane<T: Copy>(
    src: &[T],
    h: usize,
    w: usize,
    target: (usize, usize),
    pad: T,
) -> Vec<T> {
    let (sr, dr, nr) = crop_pad_axis(h, target.0);
    let (sc, dc, nc) = crop_pad_axis(w, target.1);
    let mut out = vec![pad; target.0 * target.1];
    for r in 0..nr {
        let s = (sr + r) * w + sc;
        let d = (dr + r) * target.1 + dc;
        out[d..d + nc].copy_from_slice(&src[s..s + nc]);
    }
    out
}

/// Center crop (offset `floor((n − target)/2)`) or symmetric pad with `pad_value`.
pub fn center_crop_or_pad(
    slice: &MultiChannelSlice,
    target: (usize, usize),
    pad_value: f64,
) -> MultiChannelSlice {
    slice.map_channels(|plane| {
        (
            target.0,
            target.1,
            crop_or_pad_plane(plane, slice.height, slice.width, target, pad_value),
        )
    })
}

pub fn center_crop_or_pad_labels(labels: &LabelMap, target: (usize, usize)) -> LabelMap {
    let mut out = labels.clone();
    out.labels = crop_or_pad_plane(&labels.labels, labels.height, labels.width, target, 0);
    out.height = target.0;
    out.width = target.1;
    out
}

/// Keeps the inner ninth: trims a third of the extent from each side.
pub fn inner_ninth(slice: &MultiChannelSlice) -> MultiChannelSlice {
    center_crop_or_pad(slice, (slice.height / 3, slice.width / 3), 0.0)
}

/// Normalized discrete Gaussian truncated at 4σ.
pub fn gaussian_kernel(variance: f64) -> Vec<f64> {
    let sigma = variance.sqrt();
    let radius = (4.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * variance)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

fn convolve_axis(src: &[f64], outer: usize, n: usize, inner: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for t in 0..n {
            for i in 0..inner {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let j = (t as isize + k as isize - r).clamp(0, n as isize - 1) as usize;
                    acc += kv * src[(o * n + j) * inner + i];
                }
                out[(o * n + t) * inner + i] = acc;
            }
        }
    }
    out
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(slice: &MultiChannelSlice, variance: f64) -> Result<MultiChannelSlice> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::invalid(format!("variance {variance} must be positive")));
    }
    let k = gaussian_kernel(variance);
    Ok(slice.map_channels(|plane| {
        let rows = convolve_axis(plane, 1, slice.height, slice.width, &k);
        (
            slice.height,
            slice.width,
            convolve_axis(&rows, slice.height, slice.width, 1, &k),
        )
    }))
}

/// `input − GaussianBlur(input)` per channel; variance in pixels².
pub fn gaussian_highpass(slice: &MultiChannelSlice, variance: f64) -> Result<MultiChannelSlice> {
    let blurred = gaussian_blur(slice, variance)?;
    let mut out = slice.clone();
    for (o, b) in out.pixels.iter_mut().zip(&blurred.pixels) {
        *o -= b;
    }
    Ok(out)
}

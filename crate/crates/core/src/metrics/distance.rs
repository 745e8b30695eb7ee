use serde::Serialize;

use super::overlap::{Measure, Undefined};
use crate::error::{Error, Result};

/// Foreground pixels with at least one background 4-neighbour; pixels
/// outside the image count as background.
pub fn boundary(mask: &[bool], height: usize, width: usize) -> Vec<bool> {
    let at = |r: isize, c: isize| {
        r >= 0
            && c >= 0
            && (r as usize) < height
            && (c as usize) < width
            && mask[r as usize * width + c as usize]
    };
    (0..height * width)
        .map(|i| {
            let (r, c) = ((i / width) as isize, (i % width) as isize);
            mask[i] && !(at(r - 1, c) && at(r + 1, c) && at(r, c - 1) && at(r, c + 1))
        })
        .collect()
}

/// Distance in millimetres between pixel offsets.
#[inline]
pub fn offset_mm(dr: isize, dc: isize, spacing_mm: (f64, f64)) -> f64 {
    let y = dr as f64 * spacing_mm.0;
    let x = dc as f64 * spacing_mm.1;
    (y * y + x * x).sqrt()
}

/// Lower envelope of parabolas `a(q − p)² + f(p)` over finite `f`
/// (Felzenszwalb–Huttenlocher); returns the minimizing `p` per `q`.
fn envelope_argmin(f: &[f64], a: f64, arg: &mut [Option<usize>]) {
    let n = f.len();
    let mut v: Vec<usize> = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);
    let key = |p: usize| f[p] + a * (p * p) as f64;
    for q in (0..n).filter(|&q| f[q].is_finite()) {
        if v.is_empty() {
            v.push(q);
            z.push(f64::NEG_INFINITY);
            continue;
        }
        loop {
            let p = *v.last().expect("nonempty envelope");
            let s = (key(q) - key(p)) / (2.0 * a * (q - p) as f64);
            if s <= *z.last().expect("nonempty envelope") {
                v.pop();
                z.pop();
                if v.is_empty() {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
            } else {
                v.push(q);
                z.push(s);
                break;
            }
        }
    }
    if v.is_empty() {
        arg.iter_mut().for_each(|a| *a = None);
        return;
    }
    let mut k = 0;
    for (q, slot) in arg.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        *slot = Some(v[k]);
    }
}

/// Index of the nearest feature pixel (in millimetres) for every pixel, via
/// an exact separable Euclidean distance transform.
pub fn nearest_feature(
    features: &[bool],
    height: usize,
    width: usize,
    spacing_mm: (f64, f64),
) -> Vec<Option<usize>> {
    let (ar, ac) = (spacing_mm.0 * spacing_mm.0, spacing_mm.1 * spacing_mm.1);
    // pass 1: down each column, nearest feature row
    let mut row_of = vec![None; height * width];
    let mut f = vec![0.0; height];
    let mut arg = vec![None; height];
    for c in 0..width {
        for r in 0..height {
            f[r] = if features[r * width + c] { 0.0 } else { f64::INFINITY };
        }
        envelope_argmin(&f, ar, &mut arg);
        for r in 0..height {
            row_of[r * width + c] = arg[r];
        }
    }
    // pass 2: along each row using the column-wise squared distances
    let mut out = vec![None; height * width];
    let mut g = vec![0.0; width];
    let mut arg = vec![None; width];
    for r in 0..height {
        for c in 0..width {
            g[c] = match row_of[r * width + c] {
                Some(p) => {
                    let d = (r as f64 - p as f64) * spacing_mm.0;
                    d * d
                }
                None => f64::INFINITY,
            };
        }
        envelope_argmin(&g, ac, &mut arg);
        for c in 0..width {
            out[r * width + c] = arg[c].map(|cc| {
                let rr = row_of[r * width + cc].expect("finite column");
                rr * width + cc
            });
        }
    }
    out
}

/// Distances from every `from` pixel to the nearest `to` pixel.
pub fn directed_distances(
    from: &[bool],
    to: &[bool],
    height: usize,
    width: usize,
    spacing_mm: (f64, f64),
) -> Vec<f64> {
    let nearest = nearest_feature(to, height, width, spacing_mm);
    from.iter()
        .enumerate()
        .filter(|(_, &on)| on)
        .filter_map(|(i, _)| {
            nearest[i].map(|j| {
                offset_mm(
                    (i / width) as isize - (j / width) as isize,
                    (i % width) as isize - (j % width) as isize,
                    spacing_mm,
                )
            })
        })
        .collect()
}

fn check_masks(a: &[bool], b: &[bool], height: usize, width: usize) -> Result<()> {
    if a.len() != height * width || b.len() != height * width {
        return Err(Error::ShapeMismatch {
            op: "surface distance",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    Ok(())
}

/// Mean and Hausdorff surface distances in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurfaceDistances {
    pub mean: Measure,
    pub hausdorff: Measure,
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

fn mean_of(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Boundary-to-boundary distances between two binary masks. The mean is the
/// average of both directed means; Hausdorff is the larger directed maximum.
pub fn surface_distances(
    auto: &[bool],
    reference: &[bool],
    height: usize,
    width: usize,
    spacing_mm: (f64, f64),
) -> Result<SurfaceDistances> {
    check_masks(auto, reference, height, width)?;
    let ba = boundary(auto, height, width);
    let bb = boundary(reference, height, width);
    if !ba.contains(&true) || !bb.contains(&true) {
        let u = Measure::Undefined(Undefined::EmptyMask);
        return Ok(SurfaceDistances { mean: u, hausdorff: u });
    }
    let ab = directed_distances(&ba, &bb, height, width, spacing_mm);
    let ba_ = directed_distances(&bb, &ba, height, width, spacing_mm);
    Ok(SurfaceDistances {
        mean: Measure::Defined(0.5 * (mean_of(&ab) + mean_of(&ba_))),
        hausdorff: Measure::Defined(max_of(&ab).max(max_of(&ba_))),
    })
}

/// Zhang–Suen thinning to a one-pixel-wide skeleton.
pub fn skeletonize(mask: &[bool], height: usize, width: usize) -> Vec<bool> {
    let mut img = mask.to_vec();
    let px = |img: &[bool], r: isize, c: isize| -> u8 {
        (r >= 0 && c >= 0 && (r as usize) < height && (c as usize) < width && img[r as usize * width + c as usize])
            as u8
    };
    loop {
        let mut changed = false;
        for step in 0..2 {
            let mut remove = Vec::new();
            for i in (0..height * width).filter(|&i| img[i]) {
                let (r, c) = ((i / width) as isize, (i % width) as isize);
                // P2..P9 clockwise from north
                let n = [
                    px(&img, r - 1, c),
                    px(&img, r - 1, c + 1),
                    px(&img, r, c + 1),
                    px(&img, r + 1, c + 1),
                    px(&img, r + 1, c),
                    px(&img, r + 1, c - 1),
                    px(&img, r, c - 1),
                    px(&img, r - 1, c - 1),
                ];
                let b: u8 = n.iter().sum();
                let a = (0..8).filter(|&k| n[k] == 0 && n[(k + 1) % 8] == 1).count();
                let (p2, p4, p6, p8) = (n[0], n[2], n[4], n[6]);
                let ok = if step == 0 {
                    p2 * p4 * p6 == 0 && p4 * p6 * p8 == 0
                } else {
                    p2 * p4 * p8 == 0 && p2 * p6 * p8 == 0
                };
                if (2..=6).contains(&b) && a == 1 && ok {
                    remove.push(i);
                }
            }
            changed |= !remove.is_empty();
            for i in remove {
                img[i] = false;
            }
        }
        if !changed {
            return img;
        }
    }
}

/// Skeleton Hausdorff and median distances in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SkeletonDistances {
    pub hausdorff: Measure,
    pub median: Measure,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Distances between Zhang–Suen skeletons; the median pools both directions.
pub fn skeleton_distances(
    auto: &[bool],
    reference: &[bool],
    height: usize,
    width: usize,
    spacing_mm: (f64, f64),
) -> Result<SkeletonDistances> {
    check_masks(auto, reference, height, width)?;
    let sa = skeletonize(auto, height, width);
    let sb = skeletonize(reference, height, width);
    if !sa.contains(&true) || !sb.contains(&true) {
        let u = Measure::Undefined(Undefined::EmptySkeleton);
        return Ok(SkeletonDistances { hausdorff: u, median: u });
    }
    let mut all = directed_distances(&sa, &sb, height, width, spacing_mm);
    all.extend(directed_distances(&sb, &sa, height, width, spacing_mm));
    Ok(SkeletonDistances {
        hausdorff: Measure::Defined(max_of(&all)),
        median: Measure::Defined(median(all)),
    })
}

/// Pixel count times pixel area.
pub fn area(mask: &[bool], spacing_mm: (f64, f64)) -> f64 {
    mask.iter().filter(|&&m| m).count() as f64 * spacing_mm.0 * spacing_mm.1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_of_filled_square() {
        let m = vec![true; 9];
        let b = boundary(&m, 3, 3);
        assert_eq!(b.iter().filter(|&&x| x).count(), 8);
        assert!(!b[4]);
    }

    #[test]
    fn nearest_feature_single_point() {
        let mut f = vec![false; 25];
        f[7] = true;
        let n = nearest_feature(&f, 5, 5, (1.0, 1.0));
        assert!(n.iter().all(|&x| x == Some(7)));
        let none = nearest_feature(&vec![false; 25], 5, 5, (1.0, 1.0));
        assert!(none.iter().all(|x| x.is_none()));
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}

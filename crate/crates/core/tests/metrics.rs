use std::collections::BTreeMap;

use cordseg::metrics::{
    area, boundary, confusion, evaluate_slice, majority_vote, overlap_metrics, rsd, session_stats, skeleton_distances,
    skeletonize, surface_distances, table1, table3, ConfusionCounts, Measure, MethodSummary, Undefined,
};
use cordseg::pipeline::{LabelMap, SliceId, GM, WM};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn map(h: usize, w: usize, labels: Vec<u8>) -> LabelMap {
    LabelMap::new(h, w, labels, (0.25, 0.25)).unwrap()
}

fn random_map(h: usize, w: usize, rng: &mut ChaCha8Rng) -> LabelMap {
    map(h, w, (0..h * w).map(|_| rng.random_range(0..3u8)).collect())
}

/// Union of a few random rectangles and discs.
fn random_blob(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut m = vec![false; h * w];
    for _ in 0..rng.random_range(1..4) {
        let (cy, cx) = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
        let rad = rng.random_range(1.5..h as f64 / 3.0);
        let square = rng.random_bool(0.5);
        for r in 0..h {
            for c in 0..w {
                let (dy, dx) = (r as f64 - cy, c as f64 - cx);
                let inside = if square { dy.abs().max(dx.abs()) <= rad } else { dy.hypot(dx) <= rad };
                m[r * w + c] |= inside;
            }
        }
    }
    m
}

fn points(mask: &[bool], w: usize) -> Vec<(usize, usize)> {
    (0..mask.len()).filter(|&i| mask[i]).map(|i| (i / w, i % w)).collect()
}

fn directed_oracle(from: &[(usize, usize)], to: &[(usize, usize)], sp: (f64, f64)) -> Vec<f64> {
    from.iter()
        .map(|&(r, c)| {
            to.iter()
                .map(|&(r2, c2)| {
                    let y = (r as isize - r2 as isize) as f64 * sp.0;
                    let x = (c as isize - c2 as isize) as f64 * sp.1;
                    (y * y + x * x).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Brute-force `(mean, hausdorff)` over 4-connected boundaries.
fn surface_oracle(a: &[bool], b: &[bool], h: usize, w: usize, sp: (f64, f64)) -> (f64, f64) {
    let edge = |m: &[bool]| -> Vec<(usize, usize)> {
        points(m, w)
            .into_iter()
            .filter(|&(r, c)| {
                let bg = |rr: isize, cc: isize| {
                    rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize || !m[rr as usize * w + cc as usize]
                };
                let (r, c) = (r as isize, c as isize);
                bg(r - 1, c) || bg(r + 1, c) || bg(r, c - 1) || bg(r, c + 1)
            })
            .collect()
    };
    let (ea, eb) = (edge(a), edge(b));
    let ab = directed_oracle(&ea, &eb, sp);
    let ba = directed_oracle(&eb, &ea, sp);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    (0.5 * (mean(&ab) + mean(&ba)), max(&ab).max(max(&ba)))
}

fn value(m: Measure) -> f64 {
    m.value().expect("defined measure")
}

#[test]
fn confusion_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_map(16, 16, &mut rng);
    let c = confusion(&a, &a, GM).unwrap();
    assert_eq!((c.fp, c.fn_), (0, 0));
    let ma = map(2, 2, vec![1, 1, 0, 0]);
    let mb = map(2, 2, vec![0, 0, 1, 1]);
    let c = confusion(&ma, &mb, GM).unwrap();
    assert_eq!((c.tp, c.tn), (0, 0));
    assert!(confusion(&ma, &map(1, 4, vec![0; 4]), GM).is_err());
}

#[test]
fn confusion_matches_pixel_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (a, b) = (random_map(16, 16, &mut rng), random_map(16, 16, &mut rng));
    for class in [GM, WM] {
        let mut want = ConfusionCounts::default();
        for i in 0..256 {
            match (a.labels[i] == class, b.labels[i] == class) {
                (true, true) => want.tp += 1,
                (true, false) => want.fp += 1,
                (false, true) => want.fn_ += 1,
                (false, false) => want.tn += 1,
            }
        }
        let got = confusion(&a, &b, class).unwrap();
        assert_eq!(got, want);
        assert_eq!(got.total(), 256);
    }
}

#[test]
fn overlap_of_two_pixel_masks() {
    let o = overlap_metrics(&confusion(&map(1, 3, vec![1, 1, 0]), &map(1, 3, vec![0, 1, 1]), GM).unwrap());
    assert_eq!(o.dsc, 0.5);
    assert!((o.jaccard - 1.0 / 3.0).abs() <= 1e-15);
    assert_eq!(value(o.conformity), -100.0);
}

#[test]
fn reported_table_magnitudes_are_consistent() {
    let dsc: f64 = 0.90;
    let c = (3.0 * dsc - 2.0) / dsc * 100.0;
    let j = dsc / (2.0 - dsc);
    assert!((c - 77.78).abs() < 0.01);
    assert!((c - 77.46).abs() < 0.5);
    assert!((j - 0.82).abs() < 0.005);
}

#[test]
fn empty_masks() {
    let e = map(3, 3, vec![0; 9]);
    let o = overlap_metrics(&confusion(&e, &e, GM).unwrap());
    assert_eq!(o.dsc, 1.0);
    assert_eq!(o.conformity, Measure::Undefined(Undefined::NoTruePositives));
    let full = map(3, 3, vec![1; 9]);
    assert_eq!(overlap_metrics(&confusion(&e, &full, GM).unwrap()).dsc, 0.0);
    let s = surface_distances(&e.mask(GM), &full.mask(GM), 3, 3, (1.0, 1.0)).unwrap();
    assert_eq!(s.hausdorff, Measure::Undefined(Undefined::EmptyMask));
    let k = skeleton_distances(&e.mask(GM), &full.mask(GM), 3, 3, (1.0, 1.0)).unwrap();
    assert_eq!(k.median, Measure::Undefined(Undefined::EmptySkeleton));
}

#[test]
fn shifted_square_hausdorff() {
    let (h, w) = (8, 8);
    let square = |off: usize| -> Vec<bool> {
        (0..h * w).map(|i| (2..5).contains(&(i / w)) && (2 + off..5 + off).contains(&(i % w))).collect()
    };
    let (a, b) = (square(0), square(1));
    let s = surface_distances(&a, &b, h, w, (0.25, 0.25)).unwrap();
    assert_eq!(value(s.hausdorff), 0.25);
    assert_eq!(value(s.hausdorff), surface_oracle(&a, &b, h, w, (0.25, 0.25)).1);
    let same = surface_distances(&a, &a, h, w, (0.25, 0.25)).unwrap();
    assert_eq!((value(same.mean), value(same.hausdorff)), (0.0, 0.0));
}

#[test]
fn bar_thins_to_a_line() {
    let (h, w) = (7, 14);
    let bar: Vec<bool> = (0..h * w).map(|i| (2..5).contains(&(i / w)) && (2..12).contains(&(i % w))).collect();
    let sk = skeletonize(&bar, h, w);
    let pts = points(&sk, w);
    assert!(pts.len() >= 6);
    assert!(pts.iter().all(|&(r, _)| r == 3), "{pts:?}");
    let cols: Vec<usize> = pts.iter().map(|&(_, c)| c).collect();
    assert!(cols.windows(2).all(|p| p[1] == p[0] + 1));
    let k = skeleton_distances(&bar, &bar, h, w, (1.0, 1.0)).unwrap();
    assert_eq!((value(k.hausdorff), value(k.median)), (0.0, 0.0));
}

#[test]
fn areas() {
    let m = vec![true; 100];
    assert!((area(&m, (0.067, 0.067)) - 0.4489).abs() <= 1e-12);
    assert_eq!(area(&[false; 10], (0.5, 0.5)), 0.0);
    let checker: Vec<bool> = (0..256).map(|i| (i / 16 + i % 16) % 2 == 0).collect();
    assert_eq!(area(&checker, (0.5, 2.0)), 128.0);
}

#[test]
fn relative_standard_deviation() {
    assert_eq!(rsd(&[100.0, 100.0, 100.0]).unwrap(), 0.0);
    assert!((rsd(&[90.0, 110.0]).unwrap() - 100.0 * 200f64.sqrt() / 100.0).abs() <= 1e-12);
    assert!((rsd(&[90.0, 110.0]).unwrap() - 14.1421).abs() < 1e-4);
    assert!(rsd(&[5.0]).is_err());
}

fn three_scans(subjects: u32, slices: u32, mut make: impl FnMut(SliceId) -> LabelMap) -> BTreeMap<SliceId, LabelMap> {
    let mut out = BTreeMap::new();
    for s in 1..=subjects {
        for z in 1..=slices {
            for c in 1..=3 {
                let id = SliceId::new(s, c, z);
                let mut m = make(id);
                m.id = id;
                out.insert(id, m);
            }
        }
    }
    out
}

fn disc(h: usize, w: usize, cy: f64, cx: f64, rad: f64) -> LabelMap {
    map(
        h,
        w,
        (0..h * w)
            .map(|i| u8::from(((i / w) as f64 - cy).hypot((i % w) as f64 - cx) <= rad))
            .collect(),
    )
}

#[test]
fn identical_sessions_agree_perfectly() {
    let segs = three_scans(2, 3, |_| disc(20, 20, 10.0, 10.0, 5.0));
    let s = session_stats(&segs, GM, 3).unwrap();
    assert_eq!(s.intra.pairs.len(), 6);
    assert_eq!(s.inter.pairs.len(), 12);
    for p in [&s.intra, &s.inter] {
        assert!(p.dsc.iter().all(|&d| d == 1.0));
        assert!(p.rsd.iter().all(|&r| r == 0.0));
    }
}

#[test]
fn perturbing_scan_three_only_affects_inter_pairs() {
    let base = three_scans(2, 2, |_| disc(20, 20, 10.0, 10.0, 5.0));
    let segs = three_scans(2, 2, |id| {
        if id.scan == 3 {
            disc(20, 20, 11.0, 10.0, 6.0)
        } else {
            disc(20, 20, 10.0, 10.0, 5.0)
        }
    });
    let (a, b) = (session_stats(&base, GM, 3).unwrap(), session_stats(&segs, GM, 3).unwrap());
    assert_eq!(a.intra, b.intra);
    assert!(b.inter.dsc_summary().mean < 1.0);
    assert!(b.inter.rsd_summary().mean > 0.0);
}

#[test]
fn session_pairs_match_explicit_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let segs = three_scans(2, 2, |_| {
        disc(
            24,
            24,
            rng.random_range(9.0..14.0),
            rng.random_range(9.0..14.0),
            rng.random_range(3.0..7.0),
        )
    });
    let s = session_stats(&segs, GM, 3).unwrap();
    let (mut intra, mut inter) = (Vec::new(), Vec::new());
    for subject in 1..=2 {
        for slice in 1..=2 {
            let get = |scan| &segs[&SliceId::new(subject, scan, slice)];
            for (x, y, kind) in [(1, 2, 0), (1, 3, 1), (2, 3, 1)] {
                let (a, b) = (get(x), get(y));
                let d = overlap_metrics(&confusion(a, b, GM).unwrap()).dsc;
                let r = rsd(&[area(&a.mask(GM), a.spacing_mm), area(&b.mask(GM), b.spacing_mm)]).unwrap();
                if kind == 0 { intra.push((d, r)) } else { inter.push((d, r)) }
            }
        }
    }
    let unzip = |v: &[(f64, f64)]| -> (Vec<f64>, Vec<f64>) { v.iter().copied().unzip() };
    assert_eq!((s.intra.dsc.clone(), s.intra.rsd.clone()), unzip(&intra));
    assert_eq!((s.inter.dsc.clone(), s.inter.rsd.clone()), unzip(&inter));
}

#[test]
fn missing_scan_skips_the_group() {
    let mut segs = three_scans(1, 2, |_| disc(12, 12, 6.0, 6.0, 3.0));
    segs.remove(&SliceId::new(1, 3, 2));
    let s = session_stats(&segs, GM, 3).unwrap();
    assert_eq!(s.skipped, vec![(1, 2)]);
    assert_eq!(s.intra.pairs.len() + s.inter.pairs.len(), 3);
}

#[test]
fn voting_examples() {
    let px = |v: u8| map(1, 1, vec![v]);
    let vote = |v: [u8; 4]| majority_vote(&v.map(px), 2).unwrap().labels[0];
    assert_eq!(vote([1, 1, 1, 0]), 1);
    assert_eq!(vote([1, 1, 0, 0]), 0);
    assert_eq!(vote([2, 2, 2, 2]), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = random_map(9, 7, &mut rng);
    assert_eq!(majority_vote(&vec![m.clone(); 4], 2).unwrap().labels, m.labels);
    assert!(majority_vote(&[], 2).is_err());
}

#[test]
fn voting_matches_enumeration_of_all_patterns() {
    let mut labels: [Vec<u8>; 4] = Default::default();
    for pattern in 0..81u32 {
        let mut p = pattern;
        for rater in &mut labels {
            rater.push((p % 3) as u8);
            p /= 3;
        }
    }
    let maps: Vec<LabelMap> = labels.iter().map(|l| map(9, 9, l.clone())).collect();
    let fused = majority_vote(&maps, 2).unwrap();
    for i in 0..81 {
        let votes = |class: u8| labels.iter().filter(|l| l[i] == class).count();
        let want = if votes(1) > 2 {
            1
        } else if votes(2) > 2 {
            2
        } else {
            0
        };
        assert_eq!(fused.labels[i], want, "pattern {i}");
    }
}

#[test]
fn evaluation_tables_render() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut reports = Vec::new();
    for z in 1..=3 {
        let mut a = map(24, 24, random_blob(24, 24, &mut rng).iter().map(|&b| u8::from(b)).collect());
        let mut r = disc(24, 24, 12.0, 12.0, 6.0);
        a.id = SliceId::new(1, 1, z);
        r.id = a.id;
        reports.push(evaluate_slice(&a, &r, GM).unwrap());
    }
    let t3 = table3(&reports);
    assert!(t3.contains("DSC") && t3.contains("GM"));
    let t1 = table1(&[MethodSummary {
        name: "gdl".into(),
        accuracy: &reports,
        sessions: &[],
    }]);
    assert!(t1.contains("gdl"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn surface_distances_equal_brute_force(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sp = (rng.random_range(0.1..1.0), rng.random_range(0.1..1.0));
        let (a, b) = (random_blob(32, 32, &mut rng), random_blob(32, 32, &mut rng));
        let s = surface_distances(&a, &b, 32, 32, sp).unwrap();
        let (mean, hd) = surface_oracle(&a, &b, 32, 32, sp);
        prop_assert_eq!(value(s.hausdorff), hd);
        prop_assert_eq!(value(s.mean), mean);
    }

    #[test]
    fn identity_relations_and_symmetry(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let to_map = |m: Vec<bool>| map(32, 32, m.iter().map(|&b| u8::from(b)).collect());
        let (a, b) = (to_map(random_blob(32, 32, &mut rng)), to_map(random_blob(32, 32, &mut rng)));
        let ab = evaluate_slice(&a, &b, GM).unwrap();
        let ba = evaluate_slice(&b, &a, GM).unwrap();
        let d = ab.overlap.dsc;
        prop_assert!((ab.overlap.jaccard - d / (2.0 - d)).abs() <= 1e-9);
        if ab.counts.tp > 0 {
            prop_assert!((value(ab.overlap.conformity) - (3.0 * d - 2.0) / d * 100.0).abs() <= 1e-6);
        }
        prop_assert_eq!(d, ba.overlap.dsc);
        prop_assert_eq!(ab.hd, ba.hd);
        prop_assert!((value(ab.md) - value(ba.md)).abs() <= 1e-12);
        if let (Some(smd), Some(shd)) = (ab.smd.value(), ab.shd.value()) {
            prop_assert!(smd <= shd);
        }
    }

    #[test]
    fn translation_leaves_metrics_unchanged(seed in any::<u64>(), dy in 0usize..6, dx in 0usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_blob(20, 20, &mut rng), random_blob(20, 20, &mut rng));
        let shift = |m: &[bool]| -> LabelMap {
            let mut out = vec![0u8; 26 * 26];
            for (i, &v) in m.iter().enumerate() {
                out[(i / 20 + dy) * 26 + i % 20 + dx] = u8::from(v);
            }
            map(26, 26, out)
        };
        let pad = |m: &[bool]| -> LabelMap {
            let mut out = vec![0u8; 26 * 26];
            for (i, &v) in m.iter().enumerate() {
                out[(i / 20) * 26 + i % 20] = u8::from(v);
            }
            map(26, 26, out)
        };
        let x = evaluate_slice(&pad(&a), &pad(&b), GM).unwrap();
        let y = evaluate_slice(&shift(&a), &shift(&b), GM).unwrap();
        prop_assert_eq!(x.overlap.dsc, y.overlap.dsc);
        prop_assert_eq!(x.hd, y.hd);
        prop_assert_eq!(x.md, y.md);
        prop_assert_eq!(x.shd, y.shd);
        prop_assert_eq!(x.smd, y.smd);
        prop_assert_eq!(x.area_auto_mm2, y.area_auto_mm2);
    }

    #[test]
    fn rsd_is_scale_invariant(values in prop::collection::vec(1.0f64..100.0, 2..8), k in 0.01f64..100.0) {
        let scaled: Vec<f64> = values.iter().map(|v| v * k).collect();
        prop_assert!((rsd(&values).unwrap() - rsd(&scaled).unwrap()).abs() <= 1e-9 * rsd(&values).unwrap().max(1.0));
    }

    #[test]
    fn boundary_is_inside_the_mask(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_blob(16, 16, &mut rng);
        let b = boundary(&m, 16, 16);
        prop_assert!(b.iter().zip(&m).all(|(e, v)| !e || *v));
    }
}

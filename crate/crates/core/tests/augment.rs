use cordseg::augment::{
    apply_transform, mirror_labels, mirror_slice, sample_augmentation, warp_labels, warp_slice, AugmentConfig,
    DeformationField, Transform,
};
use cordseg::pipeline::{LabelMap, MultiChannelSlice, SliceId};
use cordseg::rng::{stream_rng, Stream};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> AugmentConfig {
    AugmentConfig {
        window: (40, 36),
        safe_margin: 45,
        ..AugmentConfig::default()
    }
}

fn random_slice(h: usize, w: usize, c: usize, rng: &mut ChaCha8Rng) -> MultiChannelSlice {
    let px = (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    MultiChannelSlice::new(h, w, c, px, (0.5, 0.5), SliceId::new(1, 1, 1)).unwrap()
}

/// Union of random discs with labels 1 and 2 on background 0.
fn blobs(h: usize, w: usize, rng: &mut ChaCha8Rng) -> LabelMap {
    let mut labels = vec![0u8; h * w];
    for _ in 0..6 {
        let (cy, cx) = (rng.random_range(h as f64 * 0.3..h as f64 * 0.7), rng.random_range(w as f64 * 0.3..w as f64 * 0.7));
        let rad = rng.random_range(6.0..h as f64 / 5.0);
        let class = rng.random_range(1..=2u8);
        for r in 0..h {
            for c in 0..w {
                if (r as f64 - cy).hypot(c as f64 - cx) <= rad {
                    labels[r * w + c] = class;
                }
            }
        }
    }
    LabelMap::new(h, w, labels, (0.5, 0.5)).unwrap()
}

fn dice(a: &LabelMap, b: &LabelMap, class: u8) -> f64 {
    let (mut inter, mut total) = (0usize, 0usize);
    for (x, y) in a.labels.iter().zip(&b.labels) {
        inter += usize::from(*x == class && *y == class);
        total += usize::from(*x == class) + usize::from(*y == class);
    }
    2.0 * inter as f64 / total as f64
}

fn crop_labels(l: &LabelMap, origin: (usize, usize), window: (usize, usize)) -> Vec<u8> {
    (0..window.0)
        .flat_map(|r| (0..window.1).map(move |c| (r, c)))
        .map(|(r, c)| l.at(origin.0 + r, origin.1 + c))
        .collect()
}

#[test]
fn default_config_is_consistent() {
    let c = AugmentConfig::default();
    c.validate().unwrap();
    assert_eq!(c.deform_truncate, 3.0 * c.deform_std);
    assert_eq!(c.scale_range.0 * c.scale_range.1, 1.0);
    let bad = AugmentConfig {
        deform_truncate: 40.0,
        ..AugmentConfig::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn zero_deformation_is_identity_field() {
    let cfg = AugmentConfig {
        deform_std: 0.0,
        deform_truncate: 0.0,
        ..small_config()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = sample_augmentation(&mut rng, &cfg, (200, 200)).unwrap();
    assert_eq!(t.field.max_displacement(), 0.0);
    assert_eq!(t.field, DeformationField::zeros(40, 36));
}

#[test]
fn too_small_image_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = small_config();
    assert!(sample_augmentation(&mut rng, &cfg, (129, 500)).is_err());
    assert!(sample_augmentation(&mut rng, &cfg, (130, 126)).is_ok());
}

#[test]
fn same_stream_same_transform() {
    let cfg = small_config();
    let a = sample_augmentation(&mut stream_rng(9, Stream::Augment, 4), &cfg, (300, 300)).unwrap();
    let b = sample_augmentation(&mut stream_rng(9, Stream::Augment, 4), &cfg, (300, 300)).unwrap();
    let c = sample_augmentation(&mut stream_rng(9, Stream::Augment, 5), &cfg, (300, 300)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn identity_transform_is_exact_crop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let slice = random_slice(60, 50, 3, &mut rng);
    let labels = blobs(60, 50, &mut rng);
    let t = Transform::crop((7, 5), (30, 25));
    let (s, l) = apply_transform(&slice, &labels, &t, 5).unwrap();
    for r in 0..30 {
        for c in 0..25 {
            for ch in 0..3 {
                assert_eq!(s.at(r, c, ch), slice.at(r + 7, c + 5, ch));
            }
        }
    }
    assert_eq!(l.labels, crop_labels(&labels, (7, 5), (30, 25)));
}

#[test]
fn window_outside_safe_region_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let slice = random_slice(60, 50, 1, &mut rng);
    let labels = blobs(60, 50, &mut rng);
    assert!(apply_transform(&slice, &labels, &Transform::crop((4, 5), (30, 25)), 5).is_err());
    assert!(apply_transform(&slice, &labels, &Transform::crop((5, 21), (30, 25)), 5).is_err());
    assert!(apply_transform(&slice, &labels, &Transform::crop((25, 20), (30, 25)), 5).is_ok());
}

#[test]
fn mirror_is_an_involution() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let labels = blobs(31, 28, &mut rng);
    let slice = random_slice(31, 28, 4, &mut rng);
    assert_eq!(mirror_labels(&mirror_labels(&labels)), labels);
    assert_eq!(mirror_slice(&mirror_slice(&slice)), slice);
    let mut t = Transform::crop((0, 0), (31, 28));
    t.mirror = true;
    assert_eq!(warp_labels(&labels, &t), mirror_labels(&labels));
    assert_eq!(warp_slice(&slice, &t), mirror_slice(&slice));
}

#[test]
fn rotation_round_trip_on_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..5 {
        let labels = blobs(160, 160, &mut rng);
        let rotate = |l: &LabelMap, deg: f64| {
            let mut t = Transform::crop((0, 0), (160, 160));
            t.angle_deg = deg;
            warp_labels(l, &t)
        };
        let back = rotate(&rotate(&labels, 10.0), -10.0);
        for class in [1, 2] {
            if labels.count(class) > 0 {
                assert!(dice(&back, &labels, class) >= 0.98, "class {class}");
            }
        }
    }
}

#[test]
fn image_and_labels_share_the_geometry() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let labels = blobs(140, 140, &mut rng);
    let as_image = MultiChannelSlice::new(
        140,
        140,
        1,
        labels.labels.iter().map(|&l| l as f64).collect(),
        (0.5, 0.5),
        SliceId::default(),
    )
    .unwrap();
    let cfg = small_config();
    for i in 0..20 {
        let t = sample_augmentation(&mut stream_rng(3, Stream::Augment, i), &cfg, (140, 140)).unwrap();
        let (img, lab) = apply_transform(&as_image, &labels, &t, cfg.safe_margin).unwrap();
        let (wh, ww) = t.window();
        for r in 0..wh {
            for c in 0..ww {
                let (y, x) = t.source(r, c);
                let (y0, x0) = (y.floor() as usize, x.floor() as usize);
                let corners = [
                    labels.at(y0, x0),
                    labels.at(y0 + 1, x0),
                    labels.at(y0, x0 + 1),
                    labels.at(y0 + 1, x0 + 1),
                ];
                // away from class boundaries bilinear and nearest-neighbour agree
                if corners.iter().all(|&v| v == corners[0]) {
                    assert_eq!(img.at(r, c, 0).round() as u8, lab.at(r, c));
                }
            }
        }
        // on the pixel grid the two interpolations agree everywhere
        let mut grid = Transform::crop(t.origin, t.window());
        grid.mirror = t.mirror;
        let (img, lab) = apply_transform(&as_image, &labels, &grid, cfg.safe_margin).unwrap();
        assert!(img.pixels.iter().zip(&lab.labels).all(|(v, l)| *v == *l as f64));
    }
}

#[test]
fn sampling_distribution_moments() {
    let cfg = small_config();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 10_000;
    let (mut scale, mut angle, mut mirrored) = (0.0, 0.0, 0usize);
    for _ in 0..n {
        let t = sample_augmentation(&mut rng, &cfg, (130, 126)).unwrap();
        scale += t.scale;
        angle += t.angle_deg;
        mirrored += usize::from(t.mirror);
    }
    let (scale, angle) = (scale / n as f64, angle / n as f64);
    assert!((0.99..=1.04).contains(&scale), "mean scale {scale}");
    assert!(angle.abs() <= 0.5, "mean angle {angle}");
    assert!((mirrored as f64 / n as f64 - 0.5).abs() < 0.03);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn transforms_respect_bounds(seed in any::<u64>(), h in 130usize..200, w in 126usize..200) {
        let cfg = small_config();
        let t = sample_augmentation(&mut ChaCha8Rng::seed_from_u64(seed), &cfg, (h, w)).unwrap();
        prop_assert!(t.field.max_displacement() <= 45.0);
        prop_assert!(t.field.support.iter().all(|s| s[0].hypot(s[1]) <= 45.0));
        prop_assert!((0.8..=1.25).contains(&t.scale));
        prop_assert!(t.angle_deg.abs() <= 10.0);
        prop_assert!(t.origin.0 >= 45 && t.origin.0 + 40 + 45 <= h);
        prop_assert!(t.origin.1 >= 45 && t.origin.1 + 36 + 45 <= w);
    }

    #[test]
    fn augmentation_never_invents_classes(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels = blobs(130, 130, &mut rng);
        for v in labels.labels.iter_mut() {
            if *v == 2 {
                *v = 1;
            }
        }
        let slice = random_slice(130, 130, 2, &mut rng);
        let cfg = small_config();
        let t = sample_augmentation(&mut rng, &cfg, (130, 130)).unwrap();
        let (_, out) = apply_transform(&slice, &labels, &t, cfg.safe_margin).unwrap();
        prop_assert!(out.labels.iter().all(|&v| v <= 1));
    }
}

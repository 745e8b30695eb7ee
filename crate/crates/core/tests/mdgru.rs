use cordseg::losses::{combined_loss, one_hot, LossVariant};
use cordseg::mdgru::{cgru_scan, cgru_step, Axis, CGRUParams, Direction, Masks, MdGru, MdGruConfig};
use cordseg::tensor::{grad_check_many, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng, a: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-a..a))
}

fn random_cgru(k: usize, cin: usize, ch: usize, rng: &mut ChaCha8Rng) -> CGRUParams {
    let w = |rng: &mut ChaCha8Rng| random(&[k, k, cin, ch], rng, 0.8);
    let u = |rng: &mut ChaCha8Rng| random(&[k, k, ch, ch], rng, 0.8);
    let b = |rng: &mut ChaCha8Rng| random(&[ch], rng, 0.5);
    CGRUParams {
        w_r: w(rng),
        w_z: w(rng),
        w_h: w(rng),
        u_r: u(rng),
        u_z: u(rng),
        u_h: u(rng),
        b_r: b(rng),
        b_z: b(rng),
        b_h: b(rng),
    }
}

fn small_config(cin: usize, ch: usize, classes: usize) -> MdGruConfig {
    MdGruConfig {
        input_channels: cin,
        hidden_channels: vec![ch],
        kernel_size: 3,
        num_classes: classes,
        ..MdGruConfig::default()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Same-padded convolution of a `1×W×Cin` slab with the centre row of a
/// `k×k×Cin×Ch` kernel (the other rows only ever meet padding).
fn slab_conv(x: &[f64], width: usize, cin: usize, k: &Tensor, bias: Option<&Tensor>) -> Vec<f64> {
    let (kk, ch) = (k.shape()[0], k.shape()[3]);
    let p = kk / 2;
    let mut out = vec![0.0; width * ch];
    for j in 0..width {
        for co in 0..ch {
            let mut acc = bias.map_or(0.0, |b| b.data()[co]);
            for dj in 0..kk {
                let jj = j as isize + dj as isize - p as isize;
                if jj < 0 || jj >= width as isize {
                    continue;
                }
                for ci in 0..cin {
                    acc += x[jj as usize * cin + ci] * k.data()[((p * kk + dj) * cin + ci) * ch + co];
                }
            }
            out[j * ch + co] = acc;
        }
    }
    out
}

/// Plain-loop C-GRU update on one slab.
fn step_oracle(p: &CGRUParams, x: &[f64], h: &[f64], width: usize, cin: usize) -> Vec<f64> {
    let ch = p.b_r.len();
    let add = |a: Vec<f64>, b: Vec<f64>| a.iter().zip(&b).map(|(x, y)| x + y).collect::<Vec<_>>();
    let r: Vec<f64> = add(slab_conv(x, width, cin, &p.w_r, Some(&p.b_r)), slab_conv(h, width, ch, &p.u_r, None))
        .into_iter()
        .map(sigmoid)
        .collect();
    let z: Vec<f64> = add(slab_conv(x, width, cin, &p.w_z, Some(&p.b_z)), slab_conv(h, width, ch, &p.u_z, None))
        .into_iter()
        .map(sigmoid)
        .collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let cand: Vec<f64> = add(slab_conv(x, width, cin, &p.w_h, Some(&p.b_h)), slab_conv(&rh, width, ch, &p.u_h, None))
        .into_iter()
        .map(f64::tanh)
        .collect();
    (0..h.len()).map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i]).collect()
}

fn run_step(p: &CGRUParams, x: &Tensor, h: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let vars = p.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let hv = tape.constant(h.clone());
    let out = cgru_step(&mut tape, xv, hv, &vars).unwrap();
    tape.value(out).clone()
}

fn run_scan(p: &CGRUParams, x: &Tensor, axis: Axis, dir: Direction) -> Tensor {
    let mut tape = Tape::new();
    let vars = p.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let out = cgru_scan(&mut tape, xv, &vars, axis, dir).unwrap();
    tape.value(out).clone()
}

fn reverse_rows(t: &Tensor) -> Tensor {
    let (h, w, c) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    Tensor::from_fn(vec![h, w, c], |i| {
        let (r, rest) = (i / (w * c), i % (w * c));
        t.data()[(h - 1 - r) * w * c + rest]
    })
}

fn mirror_cols(t: &Tensor) -> Tensor {
    let (h, w, c) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    Tensor::from_fn(vec![h, w, c], |i| {
        let (r, col, ch) = (i / (w * c), (i / c) % w, i % c);
        t.data()[(r * w + (w - 1 - col)) * c + ch]
    })
}

/// Flips a `k×k×Cin×Cout` kernel along its second spatial axis.
fn flip_kernel_cols(k: &Tensor) -> Tensor {
    let s = k.shape().to_vec();
    let inner = s[2] * s[3];
    Tensor::from_fn(s.clone(), |i| {
        let (di, dj, rest) = (i / (s[1] * inner), (i / inner) % s[1], i % inner);
        k.data()[(di * s[1] + (s[1] - 1 - dj)) * inner + rest]
    })
    .with_grad()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn step_matches_scalar_gru_on_a_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = random_cgru(1, 1, 1, &mut rng);
    let x = random(&[1, 3, 1], &mut rng, 1.0);
    let h = random(&[1, 3, 1], &mut rng, 0.9);
    let got = run_step(&p, &x, &h);
    let s = |t: &Tensor| t.data()[0];
    for j in 0..3 {
        let (xv, hv) = (x.data()[j], h.data()[j]);
        let r = sigmoid(s(&p.w_r) * xv + s(&p.u_r) * hv + s(&p.b_r));
        let z = sigmoid(s(&p.w_z) * xv + s(&p.u_z) * hv + s(&p.b_z));
        let cand = (s(&p.w_h) * xv + s(&p.u_h) * (r * hv) + s(&p.b_h)).tanh();
        let want = (1.0 - z) * hv + z * cand;
        assert!((got.data()[j] - want).abs() <= 1e-12, "pixel {j}");
    }
}

#[test]
fn single_row_scan_is_one_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let p = random_cgru(3, 2, 3, &mut rng);
    let x = random(&[1, 5, 2], &mut rng, 1.0);
    let scan = run_scan(&p, &x, Axis::Rows, Direction::Forward);
    let step = run_step(&p, &x, &Tensor::zeros(vec![1, 5, 3]));
    assert_eq!(scan.shape(), &[1, 5, 3]);
    assert_eq!(scan.data(), step.data());
}

#[test]
fn backward_scan_is_reversed_forward_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let p = random_cgru(3, 2, 2, &mut rng);
    let x = random(&[5, 4, 2], &mut rng, 1.0);
    let bwd = run_scan(&p, &x, Axis::Rows, Direction::Backward);
    let fwd_rev = reverse_rows(&run_scan(&p, &reverse_rows(&x), Axis::Rows, Direction::Forward));
    assert!(max_abs_diff(bwd.data(), fwd_rev.data()) <= 1e-12);
}

#[test]
fn scan_matches_unrolled_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (cin, ch) = (2, 2);
    let p = random_cgru(3, cin, ch, &mut rng);
    let x = random(&[4, 4, cin], &mut rng, 1.0);
    let got = run_scan(&p, &x, Axis::Rows, Direction::Forward);
    let mut h = vec![0.0; 4 * ch];
    for t in 0..4 {
        let slab = &x.data()[t * 4 * cin..(t + 1) * 4 * cin];
        h = step_oracle(&p, slab, &h, 4, cin);
        assert!(max_abs_diff(&got.data()[t * 4 * ch..(t + 1) * 4 * ch], &h) <= 1e-12, "row {t}");
    }
    // column scans are row scans of the transposed image
    let cols = run_scan(&p, &x, Axis::Cols, Direction::Forward);
    let xt = Tensor::from_fn(vec![4, 4, cin], |i| {
        let (r, c, k) = (i / (4 * cin), (i / cin) % 4, i % cin);
        x.data()[(c * 4 + r) * cin + k]
    });
    let rows_t = run_scan(&p, &xt, Axis::Rows, Direction::Forward);
    for r in 0..4 {
        for c in 0..4 {
            for k in 0..ch {
                let a = cols.data()[(r * 4 + c) * ch + k];
                let b = rows_t.data()[(c * 4 + r) * ch + k];
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn output_shape_contract() {
    let model = MdGru::new(
        MdGruConfig {
            hidden_channels: vec![4],
            kernel_size: 3,
            ..MdGruConfig::default()
        },
        0,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[64, 64, 8], &mut rng, 1.0);
    assert_eq!(model.logits(&x).unwrap().shape(), &[64, 64, 3]);
}

#[test]
fn inference_is_deterministic() {
    let model = MdGru::new(small_config(2, 3, 3), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[7, 6, 2], &mut rng, 1.0);
    let a = model.logits(&x).unwrap();
    let b = model.logits(&x).unwrap();
    assert_eq!(a.data(), b.data());
    let fwd = model.forward(&x, false, 99, 3).unwrap();
    assert_eq!(fwd.tape.value(fwd.logits).data(), a.data());
}

#[test]
fn training_masks_follow_the_seed() {
    let model = MdGru::new(small_config(2, 3, 3), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[6, 6, 2], &mut rng, 1.0);
    let run = |seed, step| {
        let f = model.forward(&x, true, seed, step).unwrap();
        f.tape.value(f.logits).clone()
    };
    assert_eq!(run(1, 4).data(), run(1, 4).data());
    assert_ne!(run(1, 4).data(), run(2, 4).data());
    assert_ne!(run(1, 4).data(), run(1, 5).data());
    assert_ne!(run(1, 4).data(), model.logits(&x).unwrap().data());
}

#[test]
fn one_pixel_image_oracle() {
    let (cin, ch, classes) = (2, 2, 3);
    let model = MdGru::new(small_config(cin, ch, classes), 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[1, 1, cin], &mut rng, 1.0);
    let got = model.logits(&x).unwrap();
    // with h = 0 every scan is one step: h' = σ(W_z x + b_z) ⊙ tanh(W_h x + b_h)
    let mut combined = vec![0.0; ch];
    for scan in 0..4 {
        let p = model.cgru(0, scan);
        let z = slab_conv(x.data(), 1, cin, &p.w_z, Some(&p.b_z));
        let c = slab_conv(x.data(), 1, cin, &p.w_h, Some(&p.b_h));
        for k in 0..ch {
            combined[k] += sigmoid(z[k]) * c[k].tanh();
        }
    }
    let params = model.params();
    let res = slab_conv(
        x.data(),
        1,
        cin,
        params.get("layer0.residual.kernel").unwrap(),
        params.get("layer0.residual.bias"),
    );
    let hidden: Vec<f64> = combined.iter().zip(&res).map(|(a, b)| a + b).collect();
    let want = slab_conv(
        &hidden,
        1,
        ch,
        params.get("classifier.kernel").unwrap(),
        params.get("classifier.bias"),
    );
    assert!(max_abs_diff(got.data(), &want) <= 1e-12);
}

fn loss_on<'a>(model: &'a MdGru, x: &Tensor, r: &Tensor, masks: Option<&Masks>) -> impl Fn(&mut Tape, &[Var]) -> cordseg::Result<Var> + 'a {
    let (x, r, masks) = (x.clone(), r.clone(), masks.cloned());
    move |tape: &mut Tape, vars: &[Var]| {
        let xv = tape.constant(x.clone());
        let logits = model.build(tape, xv, vars, masks.as_ref())?;
        let p = tape.softmax(logits, 2)?;
        Ok(combined_loss(tape, p, &r, 0.5, LossVariant::GeneralizedDice)?.total)
    }
}

#[test]
fn full_network_gradient_check() {
    let model = MdGru::new(small_config(2, 2, 2), 31).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&[6, 6, 2], &mut rng, 1.0);
    let labels: Vec<u8> = (0..36).map(|_| rng.random_range(0..2)).collect();
    let r = one_hot(&labels, 6, 6, 2).unwrap();
    let err = grad_check_many(loss_on(&model, &x, &r, None), model.params().tensors(), 1e-5).unwrap();
    assert!(err <= 1e-4, "inference graph: {err}");
    let masks = Masks::sample(model.config(), 6, 6, 3, 0);
    let err = grad_check_many(loss_on(&model, &x, &r, Some(&masks)), model.params().tensors(), 1e-5).unwrap();
    assert!(err <= 1e-4, "training graph: {err}");
}

#[test]
fn zero_classifier_blocks_recurrent_gradients() {
    let mut model = MdGru::new(small_config(2, 2, 3), 8).unwrap();
    model.params_mut().get_mut("classifier.kernel").unwrap().data_mut().fill(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&[4, 5, 2], &mut rng, 1.0);
    let labels: Vec<u8> = (0..20).map(|i| (i % 3) as u8).collect();
    let r = one_hot(&labels, 4, 5, 3).unwrap();
    let mut fwd = model.forward(&x, false, 0, 0).unwrap();
    let p = fwd.tape.softmax(fwd.logits, 2).unwrap();
    let loss = combined_loss(&mut fwd.tape, p, &r, 0.5, LossVariant::GeneralizedDice).unwrap().total;
    let mut params = model.params().clone();
    fwd.backward(loss, &mut params).unwrap();
    for (name, t) in params.iter() {
        let g = t.grad().unwrap();
        if name.starts_with("layer") {
            assert!(g.iter().all(|v| *v == 0.0), "{name} has a nonzero gradient");
        }
    }
    assert!(params.get("classifier.kernel").unwrap().grad().unwrap().iter().any(|v| *v != 0.0));
}

#[test]
fn repeated_backward_accumulates() {
    let model = MdGru::new(small_config(2, 2, 2), 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(&[5, 5, 2], &mut rng, 1.0);
    let r = one_hot(&(0..25).map(|i| (i % 2) as u8).collect::<Vec<_>>(), 5, 5, 2).unwrap();
    let mut fwd = model.forward(&x, true, 1, 1).unwrap();
    let p = fwd.tape.softmax(fwd.logits, 2).unwrap();
    let loss = combined_loss(&mut fwd.tape, p, &r, 0.5, LossVariant::Dice).unwrap().total;
    let mut params = model.params().clone();
    fwd.backward(loss, &mut params).unwrap();
    let once: Vec<Vec<f64>> = params.tensors().iter().map(|t| t.grad().unwrap().to_vec()).collect();
    fwd.backward(loss, &mut params).unwrap();
    for (t, g1) in params.tensors().iter().zip(&once) {
        let g2 = t.grad().unwrap();
        assert!(g2.iter().zip(g1).all(|(b, a)| *b == 2.0 * a));
    }
    params.zero_grad();
    assert!(params.tensors().iter().all(|t| t.grad().unwrap().iter().all(|v| *v == 0.0)));
}

#[test]
fn backward_on_a_foreign_tape_fails() {
    let mut other = Tape::new();
    let a = other.constant(Tensor::scalar(1.0));
    let b = other.constant(Tensor::scalar(2.0));
    let loss = other.add(a, b).unwrap();
    assert!(Tape::new().backward(loss).is_err());
}

/// Mirrors the network along columns: row-scan kernels are flipped and the
/// forward/backward column scans trade parameters.
fn mirrored_model(model: &MdGru) -> MdGru {
    let mut m = model.clone();
    for scan in 0..2 {
        let mut p = model.cgru(0, scan);
        for k in [&mut p.w_r, &mut p.w_z, &mut p.w_h, &mut p.u_r, &mut p.u_z, &mut p.u_h] {
            *k = flip_kernel_cols(k);
        }
        m.set_cgru(0, scan, &p).unwrap();
    }
    m.set_cgru(0, 2, &model.cgru(0, 3)).unwrap();
    m.set_cgru(0, 3, &model.cgru(0, 2)).unwrap();
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn directional_symmetry(seed in 0u64..1000, h in 2usize..6, w in 2usize..6) {
        let model = MdGru::new(small_config(2, 2, 3), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[h, w, 2], &mut rng, 1.5);
        let a = mirror_cols(&model.logits(&x).unwrap());
        let b = mirrored_model(&model).logits(&mirror_cols(&x)).unwrap();
        prop_assert!(max_abs_diff(a.data(), b.data()) <= 1e-9);
    }

    #[test]
    fn hidden_state_stays_in_open_interval(seed in 0u64..1000, scale in 0.1f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_cgru(3, 2, 3, &mut rng);
        let x = random(&[6, 5, 2], &mut rng, scale);
        for (axis, dir) in [(Axis::Rows, Direction::Forward), (Axis::Cols, Direction::Backward)] {
            let out = run_scan(&p, &x, axis, dir);
            prop_assert!(out.data().iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn hidden_state_bounded_for_extreme_inputs(seed in 0u64..1000, scale in 1e2f64..1e6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_cgru(3, 2, 3, &mut rng);
        let x = random(&[5, 5, 2], &mut rng, scale);
        let out = run_scan(&p, &x, Axis::Rows, Direction::Forward);
        prop_assert!(out.data().iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    }
}

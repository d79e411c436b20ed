use ndarray::{s, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smlm_core::decoder::*;
use smlm_core::Error;

fn small_spec() -> DecoderSpec {
    DecoderSpec { context_channels: 3, dilations: vec![1, 2, 4, 8], refine_channels: 2, depth: 3, ..DecoderSpec::default() }
}

fn random_frame(h: usize, w: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((h, w), || rng.random_range(-1.5..1.5))
}

/// Randomised biases so activations sit on both sides of the kink.
fn randomized(spec: &DecoderSpec, seed: u64) -> DecoderParams<f64> {
    let mut p = DecoderParams::<f64>::init(spec, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    for t in p.tensors_mut() {
        if t.len() <= 121 {
            t.iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
        }
    }
    p
}

fn output(p: &DecoderParams<f64>, x: &Array2<f64>) -> Array3<f64> {
    decoder_forward(p, x.view()).unwrap().0
}

/// Central difference of Σ g·y, differencing outputs element-wise before the
/// sum to avoid cancellation.
fn directional(up: &Array3<f64>, down: &Array3<f64>, g: &Array3<f64>, h: f64) -> f64 {
    ((up - down) * g).sum() / (2.0 * h)
}

fn close(a: f64, n: f64, rel: f64) -> bool {
    (a - n).abs() <= rel * a.abs().max(n.abs()) + 1e-10
}

#[test]
fn zero_parameters_give_one_half() {
    let mut p = DecoderParams::<f64>::init(&small_spec(), 1).unwrap();
    p.tensors_mut().for_each(|t| t.fill(0.0));
    let (y, _) = decoder_forward(&p, random_frame(8, 8, 2).view()).unwrap();
    assert!(y.iter().all(|&v| v == 0.5));
}

#[test]
fn output_shape_and_parameter_count() {
    let p = DecoderParams::<f32>::init(&DecoderSpec::with_depth(121), 0).unwrap();
    let (y, _) = decoder_forward(&p, Array2::<f32>::zeros((64, 64)).view()).unwrap();
    assert_eq!(y.dim(), (121, 256, 256));
    assert!(y.iter().all(|&v| v > 0.0 && v < 1.0));
    let conv = |i: usize, o: usize, k: usize| o * i * k * k + o;
    let expected = conv(1, 32, 3) + 3 * conv(32, 32, 3) + conv(32, 32, 3) + conv(32, 121, 1);
    assert_eq!(p.parameter_count(), expected);
}

#[test]
fn forward_is_deterministic() {
    let p = DecoderParams::<f32>::init(&DecoderSpec::with_depth(8), 5).unwrap();
    let x = random_frame(20, 20, 3).mapv(|v| v as f32);
    let (a, _) = decoder_forward(&p, x.view()).unwrap();
    let (b, _) = decoder_forward(&p, x.view()).unwrap();
    assert!(a.iter().zip(b.iter()).all(|(u, v)| u.to_bits() == v.to_bits()));
}

#[test]
fn shifted_input_shifts_output_by_four_cells() {
    let spec = DecoderSpec::with_depth(4);
    let p = randomized(&spec, 9);
    let (h, w) = (40, 40);
    let x = random_frame(h, w, 4);
    let mut shifted = Array2::zeros((h, w));
    shifted.slice_mut(s![.., 1..]).assign(&x.slice(s![.., ..w - 1]));
    let (y, _) = decoder_forward(&p, x.view()).unwrap();
    let (ys, _) = decoder_forward(&p, shifted.view()).unwrap();
    let margin = 4 * (spec.receptive_radius() + 1);
    let mut worst: f64 = 0.0;
    for d in 0..4 {
        for i in margin..4 * h - margin {
            for j in margin..4 * w - margin {
                worst = worst.max((ys[[d, i, j + 4]] - y[[d, i, j]]).abs());
            }
        }
    }
    assert!(worst < 1e-5, "{worst}");
}

#[test]
fn receptive_field_is_bounded() {
    let spec = DecoderSpec::with_depth(2);
    let p = randomized(&spec, 3);
    let x = random_frame(48, 48, 1);
    let (y, _) = decoder_forward(&p, x.view()).unwrap();
    let r = spec.receptive_radius();
    assert!(2 * (r - 1) + 1 > 30);
    let probe = |dc: usize| {
        let mut xp = x.clone();
        xp[[20, 20 + dc]] += 1.0;
        let (yp, _) = decoder_forward(&p, xp.view()).unwrap();
        (yp[[0, 80, 80]] - y[[0, 80, 80]]).abs()
    };
    assert_eq!(probe(r + 1), 0.0);
    assert!(probe(r - 1) > 0.0);
}

#[test]
fn every_parameter_gradient_matches_finite_differences() {
    let spec = small_spec();
    let mut p = randomized(&spec, 21);
    let x = random_frame(16, 16, 22);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let g = Array3::from_shape_simple_fn((3, 64, 64), || rng.random_range(-1.0..1.0));
    let (_, cache) = decoder_forward(&p, x.view()).unwrap();
    let (grads, _) = decoder_backward(&p, &cache, g.view()).unwrap();
    let analytic: Vec<f64> = grads.tensors().flat_map(|t| t.to_vec()).collect();
    assert_eq!(analytic.len(), p.parameter_count());

    let h = 1e-4;
    let mut failures = Vec::new();
    for k in 0..analytic.len() {
        let set = |delta: f64, p: &mut DecoderParams<f64>| {
            let mut idx = k;
            for t in p.tensors_mut() {
                if idx < t.len() {
                    t[idx] += delta;
                    return;
                }
                idx -= t.len();
            }
        };
        set(h, &mut p);
        let up = output(&p, &x);
        set(-2.0 * h, &mut p);
        let down = output(&p, &x);
        set(h, &mut p);
        let numeric = directional(&up, &down, &g, h);
        if !close(analytic[k], numeric, 1e-4) {
            failures.push((k, analytic[k], numeric));
        }
    }
    assert!(failures.is_empty(), "{} of {} mismatched, e.g. {:?}", failures.len(), analytic.len(), &failures[..failures.len().min(5)]);
}

#[test]
fn default_architecture_sampled_gradients() {
    let spec = DecoderSpec::with_depth(5);
    let mut p = randomized(&spec, 31);
    let x = random_frame(16, 16, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let g = Array3::from_shape_simple_fn((5, 64, 64), || rng.random_range(-1.0..1.0));
    let (_, cache) = decoder_forward(&p, x.view()).unwrap();
    let (grads, _) = decoder_backward(&p, &cache, g.view()).unwrap();
    let sizes: Vec<usize> = p.tensors().map(|t| t.len()).collect();
    let grad_tensors: Vec<Vec<f64>> = grads.tensors().map(|t| t.to_vec()).collect();
    let h = 1e-6;
    for (ti, &n) in sizes.iter().enumerate() {
        for _ in 0..8 {
            let k = rng.random_range(0..n);
            let bump = |p: &mut DecoderParams<f64>, delta: f64| {
                p.tensors_mut().nth(ti).unwrap()[k] += delta;
            };
            bump(&mut p, h);
            let up = output(&p, &x);
            bump(&mut p, -2.0 * h);
            let down = output(&p, &x);
            bump(&mut p, h);
            let numeric = directional(&up, &down, &g, h);
            assert!(close(grad_tensors[ti][k], numeric, 1e-4), "tensor {ti}[{k}]: {} vs {numeric}", grad_tensors[ti][k]);
        }
    }
}

#[test]
fn input_gradient_matches_finite_differences() {
    let spec = small_spec();
    let p = randomized(&spec, 41);
    let x = random_frame(16, 16, 42);
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let g = Array3::from_shape_simple_fn((3, 64, 64), || rng.random_range(-1.0..1.0));
    let (_, cache) = decoder_forward(&p, x.view()).unwrap();
    let (_, gx) = decoder_backward(&p, &cache, g.view()).unwrap();
    let h = 1e-6;
    for _ in 0..10 {
        let (i, j) = (rng.random_range(0..16), rng.random_range(0..16));
        let mut xp = x.clone();
        xp[[i, j]] += h;
        let up = output(&p, &xp);
        xp[[i, j]] -= 2.0 * h;
        let down = output(&p, &xp);
        let numeric = directional(&up, &down, &g, h);
        assert!(close(gx[[i, j]], numeric, 1e-4), "({i},{j}): {} vs {numeric}", gx[[i, j]]);
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let p = randomized(&small_spec(), 5);
    let x = random_frame(8, 8, 6);
    let (_, cache) = decoder_forward(&p, x.view()).unwrap();
    let (grads, gx) = decoder_backward(&p, &cache, Array3::zeros((3, 32, 32)).view()).unwrap();
    assert!(grads.tensors().all(|t| t.iter().all(|&v| v == 0.0)));
    assert!(gx.iter().all(|&v| v == 0.0));
}

#[test]
fn stale_or_mismatched_cache_rejected() {
    let mut p = randomized(&small_spec(), 5);
    let x = random_frame(8, 8, 6);
    let (_, cache) = decoder_forward(&p, x.view()).unwrap();
    assert!(matches!(decoder_backward(&p, &cache, Array3::zeros((3, 16, 16)).view()), Err(Error::Shape(_))));
    p.tensors_mut().next().unwrap()[0] += 1.0;
    assert!(matches!(decoder_backward(&p, &cache, Array3::zeros((3, 32, 32)).view()), Err(Error::Shape(_))));
    let other = p.clone();
    let (_, cache) = decoder_forward(&p, x.view()).unwrap();
    assert!(decoder_backward(&other, &cache, Array3::zeros((3, 32, 32)).view()).is_err());
}

#[test]
fn loss_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let t = Array3::from_shape_simple_fn((3, 6, 6), || rng.random_range(0.0..1.0));
    let (l, g) = loss_eval(t.view(), t.view(), LossWeights { w_pos: 1.0, w_l1: 0.0 }).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.iter().all(|&v| v == 0.0));

    let p = Array3::from_shape_simple_fn((3, 6, 6), || rng.random_range(0.01..1.0));
    let w = LossWeights { w_pos: 1.0, w_l1: 0.3 };
    let (base, grad) = loss_eval(p.view(), t.view(), w).unwrap();
    let (mse, _) = loss_eval(p.view(), t.view(), LossWeights { w_pos: 1.0, w_l1: 0.0 }).unwrap();
    let (mse2, _) = loss_eval(p.view(), t.view(), LossWeights { w_pos: 2.0, w_l1: 0.0 }).unwrap();
    assert_eq!(mse2, 2.0 * mse);
    assert!(base > mse);
    let h = 1e-7;
    for idx in [(0, 0, 0), (1, 2, 3), (2, 5, 5)] {
        let mut q = p.clone();
        q[idx] += h;
        let up = loss_eval(q.view(), t.view(), w).unwrap().0;
        q[idx] -= 2.0 * h;
        let down = loss_eval(q.view(), t.view(), w).unwrap().0;
        assert!(close(grad[idx], (up - down) / (2.0 * h), 1e-6));
    }
    assert!(loss_eval(p.view(), t.slice(s![..2, .., ..]), w).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let p = DecoderParams::<f32>::init(&DecoderSpec::with_depth(31), 12).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("decoder.bin");
    let norm = Normalization { mean: 150.25, std: 13.5 };
    save_checkpoint(&path, &p, norm).unwrap();
    let (back, manifest) = load_checkpoint(&path).unwrap();
    assert_eq!(back, p);
    assert_eq!(manifest.normalization, norm);
    assert_eq!(manifest.parameter_count, p.parameter_count());
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Corrupt { .. })));
}

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn seq(t: usize, n: usize, values: Vec<f64>) -> Tensor {
    Tensor::new(vec![t, n], values).unwrap()
}

#[test]
fn window_average_examples() {
    let x = seq(3, 1, vec![1.0, 2.0, 3.0]);
    assert_eq!(window_average(&x, 1).unwrap().data()[1], 2.0);
    assert_eq!(window_average(&x, 0).unwrap(), x);
    assert_eq!(past_window_average(&x, 1).unwrap().data()[2], 2.5);
    // truncated at the ends
    assert_eq!(window_average(&x, 1).unwrap().data()[0], 1.5);
}

#[test]
fn blur_of_constant_series_is_constant() {
    let x = seq(6, 2, vec![3.25; 12]);
    let m = seq(6, 2, vec![0.0, 0.3, 0.5, 0.9, 0.1, 0.0, 0.7, 0.2, 1.0, 0.4, 0.6, 0.8]);
    let out = gaussian_blur(&x, &m, 2.0).unwrap();
    assert!(out.data().iter().all(|v| (v - 3.25).abs() < 1e-12));
}

#[test]
fn blur_with_full_mask_is_identity() {
    let x = seq(4, 2, vec![1.0, -2.0, 0.5, 7.0, 3.0, 0.0, -1.5, 2.5]);
    let m = Tensor::full(&[4, 2], 1.0);
    assert_eq!(gaussian_blur(&x, &m, 2.0).unwrap(), x);
}

#[test]
fn blur_spike_matches_hand_kernel() {
    let mut data = vec![0.0; 5];
    data[2] = 1.0;
    let x = seq(5, 1, data);
    let out = gaussian_blur(&x, &Tensor::zeros(&[5, 1]), 2.0).unwrap();
    // sigma = 2 gives a cut at 8 steps, wider than the series
    let w = |d: f64| (-d * d / 8.0).exp();
    let total = w(0.0) + 2.0 * w(1.0) + 2.0 * w(2.0);
    assert!((out.data()[2] - 1.0 / total).abs() < 1e-15);
    // at the edge the kernel covers offsets 0..=4
    let edge: f64 = (0..5).map(|d| w(d as f64)).sum();
    assert!((out.data()[0] - w(2.0) / edge).abs() < 1e-15);
}

#[test]
fn apply_fixed_limits() {
    let x = seq(4, 1, vec![1.0, 5.0, 2.0, 8.0]);
    let window = FixedPerturbationConfig {
        kind: FixedKind::WindowAverage,
        window: 1,
        sigma_max: 1.0,
    };
    assert_eq!(apply_fixed(&x, &Tensor::full(&[4, 1], 1.0), &window).unwrap(), x);
    assert_eq!(
        apply_fixed(&x, &Tensor::zeros(&[4, 1]), &window).unwrap(),
        window_average(&x, 1).unwrap()
    );
    let two = seq(1, 1, vec![2.0]);
    let half = seq(1, 1, vec![0.5]);
    assert_eq!(blend(&two, &half, &Tensor::zeros(&[1, 1])).unwrap().data(), &[1.0]);
}

#[test]
fn wide_window_blends_towards_series_mean() {
    let x = seq(5, 2, vec![1.0, 0.0, 2.0, 4.0, 6.0, -1.0, 3.0, 5.0, 8.0, 2.0]);
    let m = seq(5, 2, vec![0.2, 0.9, 0.4, 0.0, 1.0, 0.3, 0.5, 0.5, 0.1, 0.7]);
    let cfg = FixedPerturbationConfig {
        kind: FixedKind::WindowAverage,
        window: 1000,
        sigma_max: 1.0,
    };
    let out = apply_fixed(&x, &m, &cfg).unwrap();
    for i in 0..2 {
        let mean: f64 = (0..5).map(|t| x.at2(t, i)).sum::<f64>() / 5.0;
        for t in 0..5 {
            let expect = m.at2(t, i) * x.at2(t, i) + (1.0 - m.at2(t, i)) * mean;
            assert!((out.at2(t, i) - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn invalid_sigma_is_rejected() {
    let cfg = FixedPerturbationConfig {
        sigma_max: 0.0,
        ..FixedPerturbationConfig::default()
    };
    let x = Tensor::zeros(&[2, 1]);
    assert!(apply_fixed(&x, &x, &cfg).is_err());
}

fn generator(kind: GeneratorKind, n: usize, seed: u64) -> PerturbationGenerator {
    PerturbationGenerator::init(kind, n, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn random_seq(t: usize, n: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    seq(t, n, (0..t * n).map(|_| rng.random_range(-2.0..2.0)).collect())
}

#[test]
fn learned_perturbation_endpoints_are_exact() {
    let x = random_seq(7, 3, 1);
    for kind in [GeneratorKind::Unidirectional, GeneratorKind::Bidirectional] {
        let gen = generator(kind, 3, 2);
        assert_eq!(apply_learned(&x, &Tensor::full(&[7, 3], 1.0), &gen).unwrap(), x);
        assert_eq!(
            apply_learned(&x, &Tensor::zeros(&[7, 3]), &gen).unwrap(),
            gen.forward(&x).unwrap()
        );
    }
}

#[test]
fn zero_generator_scales_input() {
    let x = seq(1, 1, vec![2.0]);
    let out = apply_learned(&x, &seq(1, 1, vec![0.5]), &PerturbationGenerator::zero(1)).unwrap();
    assert_eq!(out.data(), &[1.0]);
}

#[test]
fn stacked_graph_matches_plain_generator() {
    let (t, n) = (5, 3);
    for kind in [GeneratorKind::Zero, GeneratorKind::Unidirectional, GeneratorKind::Bidirectional] {
        let gens = [generator(kind, n, 3), generator(kind, n, 4)];
        let xs = [random_seq(t, n, 5), random_seq(t, n, 6)];
        let batch = GeneratorBatch::stack(&[&gens[0], &gens[1]]);
        let mut g = Graph::new();
        let vars = batch.bind(&mut g);
        let flat: Vec<f64> = xs.iter().flat_map(|x| x.data().iter().copied()).collect();
        let xv = g.constant(Tensor::new(vec![2, t, n], flat).unwrap());
        let steps = crate::nets::split_time(&mut g, xv).unwrap();
        let out = batch.run(&mut g, &vars, &steps).unwrap();
        let stacked = stack_time(&mut g, &out).unwrap();
        let got = g.value(stacked).data();
        for (b, (gen, x)) in gens.iter().zip(&xs).enumerate() {
            let plain = gen.forward(x).unwrap();
            for (a, e) in got[b * t * n..(b + 1) * t * n].iter().zip(plain.data()) {
                assert!((a - e).abs() < 1e-13, "{kind:?}");
            }
        }
    }
}

/// Central-difference check of `sum(c * phi)` against the recorded
/// gradient with respect to the mask and to every generator tensor.
#[test]
fn learned_perturbation_gradients_match_finite_differences() {
    let (t, n) = (4, 2);
    let x = random_seq(t, n, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m0: Vec<f64> = (0..t * n).map(|_| rng.random_range(0.05..0.95)).collect();
    let c: Vec<f64> = (0..t * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let gen0 = generator(GeneratorKind::Bidirectional, n, 12);

    let eval = |m: &[f64], gen: &PerturbationGenerator| -> f64 {
        let phi = apply_learned(&x, &seq(t, n, m.to_vec()), gen).unwrap();
        phi.data().iter().zip(&c).map(|(p, w)| p * w).sum()
    };

    let mut g = Graph::new();
    let batch = GeneratorBatch::stack(&[&gen0]);
    let vars = batch.bind(&mut g);
    let xv = g.constant(Tensor::new(vec![1, t, n], x.data().to_vec()).unwrap());
    let mv = g.param(Tensor::new(vec![1, t, n], m0.clone()).unwrap());
    let steps = crate::nets::split_time(&mut g, xv).unwrap();
    let nn = batch.run(&mut g, &vars, &steps).unwrap();
    let nn = stack_time(&mut g, &nn).unwrap();
    let phi = blend_graph(&mut g, xv, mv, nn).unwrap();
    let cv = g.constant(Tensor::new(vec![1, t, n], c.clone()).unwrap());
    let weighted = g.mul(phi, cv).unwrap();
    let loss = g.sum(weighted);
    g.backward(loss).unwrap();

    let h = 1e-5;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-4);
    let gm = g.grad(mv).unwrap().to_vec();
    for k in 0..m0.len() {
        let (mut up, mut dn) = (m0.clone(), m0.clone());
        up[k] += h;
        dn[k] -= h;
        let num = (eval(&up, &gen0) - eval(&dn, &gen0)) / (2.0 * h);
        assert!(rel(gm[k], num) < 1e-4, "mask cell {k}: {} vs {num}", gm[k]);
    }
    for (k, &v) in vars.iter().enumerate() {
        let grad = g.grad(v).unwrap().to_vec();
        for j in 0..grad.len() {
            let bump = |delta: f64| {
                let mut gen = gen0.clone();
                gen.tensors_mut()[k].data_mut()[j] += delta;
                eval(&m0, &gen)
            };
            let num = (bump(h) - bump(-h)) / (2.0 * h);
            assert!(rel(grad[j], num) < 1e-4, "tensor {k}[{j}]: {} vs {num}", grad[j]);
        }
    }
}

#[test]
fn mask_projection_clamps() {
    let mut m = Mask::constant(2, 2, 0.5);
    m.values.data_mut().copy_from_slice(&[-0.3, 0.2, 1.7, 1.0]);
    assert!(!m.within_bounds());
    m.project();
    assert_eq!(m.values.data(), &[0.0, 0.2, 1.0, 1.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn blur_kernel_sums_to_one(len in 1usize..60, t_frac in 0.0f64..1.0, sigma in 0.0f64..6.0) {
        let t = ((len - 1) as f64 * t_frac) as usize;
        let (start, w) = gaussian_weights(len, t, sigma);
        prop_assert!(start + w.len() <= len);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn learned_perturbation_interpolates(seed in 0u64..1000, m in proptest::collection::vec(0.0f64..=1.0, 12)) {
        let x = random_seq(4, 3, seed);
        let gen = generator(GeneratorKind::Bidirectional, 3, seed + 1);
        let nn = gen.forward(&x).unwrap();
        let phi = apply_learned(&x, &seq(4, 3, m), &gen).unwrap();
        for k in 0..12 {
            let (lo, hi) = (x.data()[k].min(nn.data()[k]), x.data()[k].max(nn.data()[k]));
            prop_assert!(phi.data()[k] >= lo - 1e-12 && phi.data()[k] <= hi + 1e-12);
        }
    }
}

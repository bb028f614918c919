use std::sync::atomic::AtomicU64;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nets::{ClassifierParams, Readout};
use crate::numerics::Tensor;
use crate::test_models::Linear;
use crate::perturbation::GeneratorKind;

fn random_seq(t: usize, n: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![t, n], (0..t * n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn classifier(n: usize, hidden: usize, readout: Readout, seed: u64) -> ClassifierParams {
    ClassifierParams::init(n, hidden, 2, readout, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn short(iterations: usize) -> ExplainerConfig {
    ExplainerConfig {
        iterations,
        ..ExplainerConfig::default()
    }
}

#[test]
fn min_max_handles_constant_input() {
    assert_eq!(min_max_normalize(&[2.0, 2.0]), vec![0.0, 0.0]);
    assert_eq!(min_max_normalize(&[1.0, 3.0, 2.0]), vec![0.0, 1.0, 0.5]);
}

// occlusion

/// Scores every single-cell substitution by re-running the model on one
/// sample at a time.
fn brute_force_occlusion(f: &ClassifierParams, x: &Tensor, baseline: f64) -> Vec<f64> {
    let (t, n) = (x.shape()[0], x.shape()[1]);
    let score = |v: &Tensor| -> (Vec<usize>, Vec<f64>) {
        let out = crate::numerics::softmax_rows(&crate::nets::classifier_forward(v, f).unwrap());
        let rows = out.shape()[0];
        let probs: Vec<Vec<f64>> = (0..rows).map(|r| out.row(r).to_vec()).collect();
        let cls = probs.iter().map(|p| if p[1] > p[0] { 1 } else { 0 }).collect();
        (cls, probs.into_iter().flatten().collect())
    };
    let (cls, base) = score(x);
    let fc = |probs: &[f64]| cls.iter().enumerate().map(|(r, &c)| probs[r * 2 + c]).sum::<f64>();
    let reference = fc(&base);
    (0..t * n)
        .map(|k| {
            let mut y = x.clone();
            y.data_mut()[k] = baseline;
            (reference - fc(&score(&y).1)).abs()
        })
        .collect()
}

#[test]
fn occlusion_matches_brute_force() {
    for (seed, readout) in [(1, Readout::PerTimestep), (2, Readout::FinalStep)] {
        let f = classifier(2, 4, readout, seed);
        let x = random_seq(3, 2, seed + 10);
        let cfg = OcclusionConfig {
            baseline: 0.25,
            ..OcclusionConfig::default()
        };
        let map = occlusion(&x, &f, &cfg).unwrap();
        let raw = map.meta.raw.as_ref().unwrap();
        for (a, e) in raw.iter().zip(brute_force_occlusion(&f, &x, 0.25)) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
        assert_eq!(map.scores, min_max_normalize(raw));
    }
}

#[test]
fn occlusion_of_identity_cell() {
    let mut w = vec![0.0; 6];
    w[3] = 1.0;
    let f = Linear::new(3, 2, w);
    let x = Tensor::new(vec![3, 2], vec![0.5, -1.0, 2.0, 0.75, 1.5, 3.0]).unwrap();
    let map = occlusion(&x, &f, &OcclusionConfig::default()).unwrap();
    let raw = map.meta.raw.unwrap();
    assert_eq!(raw, vec![0.0, 0.0, 0.0, 0.75, 0.0, 0.0]);
    assert_eq!(map.scores[3], 1.0);
}

#[test]
fn occlusion_of_constant_model_is_zero() {
    let f = Linear::new(2, 2, vec![0.0; 4]);
    let x = random_seq(2, 2, 3);
    let map = occlusion(&x, &f, &OcclusionConfig::default()).unwrap();
    assert!(map.scores.iter().all(|&s| s == 0.0));
    let reference = FeatureReference::new(vec![vec![1.0, 2.0]; 2]).unwrap();
    let aug = augmented_occlusion(&x, &f, &reference, &OcclusionConfig::default()).unwrap();
    assert!(aug.scores.iter().all(|&s| s == 0.0));
}

#[test]
fn augmented_occlusion_uses_reference_values() {
    let mut w = vec![0.0; 4];
    w[1] = 2.0;
    let f = Linear::new(2, 2, w);
    let x = Tensor::new(vec![2, 2], vec![1.0, 3.0, 0.0, 0.0]).unwrap();
    // a single-valued pool makes every draw identical
    let reference = FeatureReference::new(vec![vec![9.0], vec![-1.0]]).unwrap();
    let map = augmented_occlusion(&x, &f, &reference, &OcclusionConfig::default()).unwrap();
    assert_eq!(map.meta.raw.unwrap(), vec![0.0, 8.0, 0.0, 0.0]);
}

#[test]
fn augmented_occlusion_is_seeded() {
    let f = classifier(2, 3, Readout::FinalStep, 4);
    let xs = [random_seq(3, 2, 5), random_seq(3, 2, 6)];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pool: Vec<Vec<f64>> = (0..2).map(|_| (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let reference = FeatureReference::new(pool).unwrap();
    let cfg = OcclusionConfig::default();
    let a = augmented_occlusion_batch(&xs, &[3, 4], &f, &reference, &cfg).unwrap();
    let b = augmented_occlusion_batch(&xs, &[3, 4], &f, &reference, &cfg).unwrap();
    assert_eq!(a, b);
    let alone = augmented_occlusion_batch(&xs[1..], &[4], &f, &reference, &cfg).unwrap();
    assert_eq!(alone[0], a[1]);
}

#[test]
fn empty_reference_is_rejected() {
    assert_eq!(FeatureReference::new(vec![]), Err(ExplainerError::EmptyReference));
    assert_eq!(FeatureReference::new(vec![vec![1.0], vec![]]), Err(ExplainerError::EmptyReference));
}

// integrated gradients

#[test]
fn ig_is_exact_for_linear_models() {
    let w = vec![0.5, -1.0, 2.0, 0.25, -3.0, 1.5];
    let f = Linear::new(3, 2, w.clone());
    let x = random_seq(3, 2, 11);
    for steps in [1, 7, 32] {
        let cfg = IgConfig {
            steps,
            ..IgConfig::default()
        };
        let raw = integrated_gradients(&x, &f, &cfg).unwrap().meta.raw.unwrap();
        for ((a, w), x) in raw.iter().zip(&w).zip(x.data()) {
            assert!((a - w * x).abs() < 1e-12);
        }
    }
}

#[test]
fn ig_of_baseline_is_zero() {
    let f = classifier(2, 4, Readout::PerTimestep, 12);
    let x = Tensor::full(&[4, 2], 0.3);
    let cfg = IgConfig {
        baseline: 0.3,
        ..IgConfig::default()
    };
    let map = integrated_gradients(&x, &f, &cfg).unwrap();
    assert!(map.meta.raw.unwrap().iter().all(|&v| v == 0.0));
    assert!(map.scores.iter().all(|&v| v == 0.0));
}

#[test]
fn ig_is_nearly_complete() {
    let f = classifier(3, 6, Readout::PerTimestep, 13);
    let x = random_seq(5, 3, 14);
    let cfg = IgConfig {
        steps: 128,
        ..IgConfig::default()
    };
    let raw = integrated_gradients(&x, &f, &cfg).unwrap().meta.raw.unwrap();
    let out = outputs_of(&f, x.data(), 1, 5, 3).unwrap();
    let targets = target_classes(&out, None, 2).unwrap();
    let at_x = target_score(&out, &targets)[0];
    let base = outputs_of(&f, &[0.0; 15], 1, 5, 3).unwrap();
    let at_zero = target_score(&base, &targets)[0];
    let total: f64 = raw.iter().sum();
    assert!((total - (at_x - at_zero)).abs() <= 0.01 * (at_x - at_zero).abs(), "{total} vs {}", at_x - at_zero);
}

#[test]
fn ig_batches_agree_with_single_runs() {
    let f = classifier(2, 4, Readout::FinalStep, 15);
    let xs: Vec<Tensor> = (0..5).map(|s| random_seq(4, 2, 20 + s)).collect();
    let cfg = IgConfig {
        batch_size: 2,
        ..IgConfig::default()
    };
    let batch = integrated_gradients_batch(&xs, &f, &cfg).unwrap();
    for (x, m) in xs.iter().zip(&batch) {
        let single = integrated_gradients(x, &f, &cfg).unwrap();
        for (a, b) in single.meta.raw.unwrap().iter().zip(m.meta.raw.as_ref().unwrap()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

// learned perturbations

#[test]
fn learned_batch_equals_single_runs_bitwise() {
    let f = classifier(3, 4, Readout::PerTimestep, 30);
    let xs: Vec<Tensor> = (0..3).map(|s| random_seq(5, 3, 31 + s)).collect();
    let ids = [5, 6, 7];
    for mode in [LearnedMode::Preservation, LearnedMode::Deletion] {
        let cfg = ExplainerConfig {
            mode,
            batch_size: 2,
            ..short(25)
        };
        let batch = explain_learned_batch(&xs, &ids, &f, &cfg).unwrap();
        for ((x, id), m) in xs.iter().zip(ids).zip(&batch) {
            let single = explain_learned_batch(std::slice::from_ref(x), &[id], &f, &cfg).unwrap();
            assert_eq!(&single[0], m);
        }
    }
}

#[test]
fn learned_is_deterministic() {
    let f = classifier(2, 3, Readout::FinalStep, 40);
    let x = random_seq(6, 2, 41);
    let cfg = short(30);
    assert_eq!(explain_learned(&x, &f, &cfg).unwrap(), explain_learned(&x, &f, &cfg).unwrap());
}

#[test]
fn learned_mask_stays_in_box_after_every_step() {
    let f = classifier(2, 3, Readout::PerTimestep, 42);
    let x = random_seq(4, 2, 43);
    for iterations in 1..=6 {
        let cfg = ExplainerConfig {
            mask_lr: 0.4,
            lambda1: 5.0,
            ..short(iterations)
        };
        let map = explain_learned(&x, &f, &cfg).unwrap();
        assert!(map.scores.iter().all(|s| (0.0..=1.0).contains(s)));
        assert_eq!(map.meta.iterations, iterations);
    }
}

#[test]
fn zero_iterations_leave_the_mask_at_init() {
    let f = classifier(2, 3, Readout::PerTimestep, 44);
    let cfg = ExplainerConfig {
        lambda1: 0.0,
        lambda2: 0.0,
        generator: GeneratorKind::Zero,
        ..short(0)
    };
    let map = explain_learned(&random_seq(3, 2, 45), &f, &cfg).unwrap();
    assert!(map.scores.iter().all(|&s| s == 0.5));
    assert_eq!(map.meta.final_loss, None);
}

#[test]
fn heavy_mask_penalty_switches_the_mask_off() {
    let f = classifier(3, 4, Readout::PerTimestep, 46);
    let cfg = ExplainerConfig {
        lambda1: 100.0,
        ..short(300)
    };
    let map = explain_learned(&random_seq(6, 3, 47), &f, &cfg).unwrap();
    let mean = map.scores.iter().sum::<f64>() / map.scores.len() as f64;
    assert!(mean < 0.05, "mean mask {mean}");
}

#[test]
fn preservation_loss_mostly_decreases() {
    for seed in 0..6 {
        let f = classifier(3, 6, Readout::PerTimestep, 48 + seed);
        let map = explain_learned(&random_seq(8, 3, 60 + seed), &f, &short(200)).unwrap();
        let h = &map.meta.loss_history;
        let ok = h.windows(2).filter(|w| w[1] <= w[0]).count();
        assert!(ok as f64 >= 0.95 * (h.len() - 1) as f64, "seed {seed}: {ok} of {}", h.len() - 1);
        assert_eq!(map.meta.final_loss, h.last().copied());
        assert!(map.meta.loss_terms.contains_key("cross_entropy"));
    }
}

#[test]
fn heavy_deletion_penalty_switches_the_mask_on() {
    let f = classifier(3, 4, Readout::PerTimestep, 50);
    let cfg = ExplainerConfig {
        lambda1: 100.0,
        mode: LearnedMode::Deletion,
        ..short(300)
    };
    let map = explain_learned(&random_seq(6, 3, 51), &f, &cfg).unwrap();
    let mean = map.scores.iter().sum::<f64>() / map.scores.len() as f64;
    assert!(mean > 0.95, "mean mask {mean}");
    assert_eq!(map.method, "learned_bi_gru_deletion");
}

#[test]
fn unfrozen_or_mutated_models_are_refused() {
    let mut f = Linear::new(2, 1, vec![1.0, 1.0]);
    f.frozen = false;
    let x = random_seq(2, 1, 52);
    assert_eq!(explain_learned(&x, &f, &short(1)), Err(ExplainerError::ModelNotFrozen));
    assert_eq!(occlusion(&x, &f, &OcclusionConfig::default()), Err(ExplainerError::ModelNotFrozen));
    f.frozen = true;
    f.calls = Some(AtomicU64::new(0));
    assert_eq!(explain_learned(&x, &f, &short(1)), Err(ExplainerError::ModelMutated));
    assert_eq!(
        integrated_gradients(&x, &f, &IgConfig::default()),
        Err(ExplainerError::ModelMutated)
    );
}

#[test]
fn classifier_is_untouched_by_explaining() {
    let f = classifier(2, 3, Readout::PerTimestep, 53);
    let copy = f.clone();
    explain_learned(&random_seq(4, 2, 54), &f, &short(5)).unwrap();
    explain_dynamask(&random_seq(4, 2, 54), &f, &DynamaskConfig::default()).unwrap();
    assert_eq!(f, copy);
}

#[test]
fn nan_loss_reports_divergence() {
    let mut f = classifier(2, 3, Readout::PerTimestep, 55);
    f.readout_b.data_mut()[0] = f64::NAN;
    let err = explain_learned_batch(&[random_seq(3, 2, 56)], &[9], &f, &short(3)).unwrap_err();
    assert_eq!(err, ExplainerError::Diverged { iteration: 0, sample: 9 });
}

#[test]
fn wrong_shapes_and_classes_are_rejected() {
    let f = classifier(2, 3, Readout::PerTimestep, 57);
    assert!(matches!(
        explain_learned(&random_seq(3, 3, 58), &f, &short(1)),
        Err(ExplainerError::Input { .. })
    ));
    let cfg = ExplainerConfig {
        target_class: Some(2),
        ..short(1)
    };
    assert!(explain_learned(&random_seq(3, 2, 58), &f, &cfg).is_err());
}

// dynamask

#[test]
fn vecsort_and_area_reference() {
    assert_eq!(vecsort(&[0.3, 0.9, 0.1]), vec![0.1, 0.3, 0.9]);
    assert_eq!(target_area(10, 0.3), vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    assert_eq!(area_regularizer(&[1.0, 0.0, 0.0, 1.0], 0.5), 0.0);
    assert!((area_regularizer(&[0.5, 0.5], 0.5) - 0.25).abs() < 1e-15);
}

#[test]
fn full_area_pushes_mask_to_one() {
    // a one-class model has zero cross-entropy, leaving only the area term
    let f = Linear::new(4, 2, vec![1.0; 8]);
    let cfg = DynamaskConfig {
        area: 1.0,
        iterations: 300,
        lr: 0.05,
        ..DynamaskConfig::default()
    };
    let map = explain_dynamask(&random_seq(4, 2, 60), &f, &cfg).unwrap();
    assert!(map.scores.iter().all(|&s| s > 0.99), "{:?}", map.scores);
}

#[test]
fn dynamask_batches_agree_with_single_runs() {
    let f = classifier(2, 3, Readout::PerTimestep, 61);
    let xs: Vec<Tensor> = (0..3).map(|s| random_seq(5, 2, 62 + s)).collect();
    for kind in [crate::perturbation::FixedKind::GaussianBlur, crate::perturbation::FixedKind::WindowAverage] {
        let cfg = DynamaskConfig {
            iterations: 20,
            batch_size: 2,
            perturbation: crate::perturbation::FixedPerturbationConfig {
                kind,
                ..Default::default()
            },
            ..DynamaskConfig::default()
        };
        let batch = explain_dynamask_batch(&xs, &f, &cfg).unwrap();
        for (x, m) in xs.iter().zip(&batch) {
            assert_eq!(&explain_dynamask(x, &f, &cfg).unwrap(), m);
            assert!(m.scores.iter().all(|s| (0.0..=1.0).contains(s)));
        }
    }
}

#[test]
fn dynamask_rejects_bad_area() {
    let f = classifier(2, 3, Readout::PerTimestep, 63);
    let cfg = DynamaskConfig {
        area: 0.0,
        ..DynamaskConfig::default()
    };
    assert!(matches!(
        explain_dynamask(&random_seq(3, 2, 64), &f, &cfg),
        Err(ExplainerError::Config(_))
    ));
}

// output

#[test]
fn saliency_round_trips_through_csv_and_archive() {
    let f = Linear::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
    let xs = [random_seq(2, 2, 70), random_seq(2, 2, 71)];
    let maps = occlusion_batch(&xs, &f, &OcclusionConfig::default()).unwrap();
    let mut buf = Vec::new();
    write_saliency_csv(&mut buf, &[3, 8], &maps).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "sample_id,t,feature,score");
    assert_eq!(lines.len(), 9);
    assert!(lines[5].starts_with("8,0,0,"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("maps.tpx");
    save_saliency(&path, &[3, 8], &maps).unwrap();
    let (ids, back) = load_saliency(&path).unwrap();
    assert_eq!(ids, vec![3, 8]);
    assert_eq!(back, maps);
}

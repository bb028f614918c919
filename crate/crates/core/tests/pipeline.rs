use tempex::experiment::{classifier_auroc, fold_data, fold_model_config, ExperimentConfig, ExperimentKind, Profile};
use tempex::explainers::{integrated_gradients, IgConfig};
use tempex::nets::{batch_steps, predicted_classes, train_classifier, ClassifierParams, SequenceModel};
use tempex::numerics::Tensor;

fn target_score(f: &ClassifierParams, x: &[f64], classes: &[usize], steps: usize, features: usize) -> f64 {
    let outs = f.outputs_batch(&batch_steps(x, 1, steps, features)).unwrap();
    outs.iter().zip(classes).map(|(o, &c)| o.row(0)[c]).sum()
}

#[test]
fn hmm_classifier_trains_and_ig_is_complete() {
    let cfg = ExperimentConfig::preset(ExperimentKind::Hmm, Profile::Full);
    let (train, test) = fold_data(&cfg, 0).unwrap();
    let (f, report) = train_classifier(&train, &fold_model_config(&cfg, 0)).unwrap();
    assert!(report.epoch_losses.last() < report.epoch_losses.first());
    let auroc = classifier_auroc(&f, &test).unwrap().unwrap();
    assert!(auroc > 0.85, "test AUROC {auroc}");

    let (steps, features) = (test.n_timesteps, test.n_features);
    let ig = IgConfig {
        steps: 300,
        ..IgConfig::default()
    };
    for i in 0..3 {
        let x: Tensor = test.sample(i);
        let classes = predicted_classes(&f.outputs_batch(&batch_steps(x.data(), 1, steps, features)).unwrap()).remove(0);
        let delta = target_score(&f, x.data(), &classes, steps, features)
            - target_score(&f, &vec![0.0; steps * features], &classes, steps, features);
        let map = integrated_gradients(&x, &f, &ig).unwrap();
        let total: f64 = map.meta.raw.as_ref().unwrap().iter().sum();
        assert!((total - delta).abs() <= 0.01 * delta.abs(), "sample {i}: sum {total} vs {delta}");
    }
}

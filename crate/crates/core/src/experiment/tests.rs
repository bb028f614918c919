use std::fs;

use super::checks::{generator_ordering, late_masking, lambda_grid_trend};
use super::*;
use crate::metrics::{read_metric_rows, MetricRow};

fn tiny(kind: ExperimentKind, dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(kind, Profile::Fast);
    cfg.dataset.hmm.n_series = 12;
    cfg.dataset.hmm.length = 8;
    cfg.dataset.icu.n_samples = 24;
    cfg.dataset.icu.length = 12;
    cfg.metrics.masking_steps = vec![3];
    cfg.metrics.fractions = vec![0.2, 0.4];
    cfg.model.hidden_size = 4;
    cfg.model.epochs = 2;
    cfg.run.folds = 2;
    cfg.run.explain_samples = Some(3);
    if let Some(l) = cfg.explainers.learned.as_mut() {
        l.iterations = 4;
    }
    if let Some(d) = cfg.explainers.dynamask.as_mut() {
        d.iterations = 4;
    }
    if let Some(ig) = cfg.explainers.integrated_gradients.as_mut() {
        ig.steps = 4;
    }
    cfg.run.output_dir = Some(dir.to_path_buf());
    cfg
}

fn summary_row(method: &str, metric: &str, fraction: Option<f64>, sub: Option<&str>, mean: f64, std: f64) -> MetricRow {
    MetricRow {
        method: method.into(),
        metric: metric.into(),
        fraction,
        substitution: sub.map(Into::into),
        mean,
        std,
        fold: None,
    }
}

#[test]
fn hmm_run_writes_one_row_per_method_metric_fold() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("hmm");
    let cfg = tiny(ExperimentKind::Hmm, &dir);
    let out = run_experiment(&cfg, false).unwrap();
    let rows = read_metric_rows(fs::File::open(dir.join("hmm_results.csv")).unwrap()).unwrap();
    assert_eq!(rows, out.fold_rows);
    let methods = cfg.methods();
    assert_eq!(methods.len(), 5);
    for m in &methods {
        for metric in ["aup", "aur", "information", "entropy"] {
            for fold in 0..2 {
                let n = rows
                    .iter()
                    .filter(|r| r.method == m.name && r.metric == metric && r.fold == Some(fold))
                    .count();
                assert_eq!(n, 1, "{} {metric} fold {fold}", m.name);
            }
        }
        assert!(dir.join("fold_1").join(format!("{}.sal", m.name)).is_file());
    }
    assert!(dir.join("fold_0/model.ckpt").is_file());
    assert!(out.summary.iter().all(|r| r.fold.is_none()));
    let report = report(&dir).unwrap();
    assert!(report.text.contains("AUP"));
    assert!(report.text.contains("learned_bi_gru"));
}

#[test]
fn identical_configs_give_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_experiment(&tiny(ExperimentKind::IcuLike, &a), false).unwrap();
    run_experiment(&tiny(ExperimentKind::IcuLike, &b), false).unwrap();
    for file in ["icu_like_results.csv", "icu_like_summary.csv", "importance.csv"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    assert!(a.join("icu_like_cross_entropy_zeros.svg").is_file());
}

#[test]
fn icu_run_reports_masked_metrics_and_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("icu");
    let mut cfg = tiny(ExperimentKind::IcuLike, &dir);
    cfg.run.folds = 1;
    cfg.run.compare_generators = true;
    let out = run_experiment(&cfg, false).unwrap();
    for m in ["learned_zeros", "learned_gru", "learned_bi_gru", "occlusion"] {
        for metric in ["accuracy", "cross_entropy", "comprehensiveness", "sufficiency"] {
            let n = out
                .summary
                .iter()
                .filter(|r| r.method == m && r.metric == metric)
                .count();
            assert_eq!(n, 4, "{m} {metric}");
        }
    }
    let text = report(&dir).unwrap().text;
    assert!(text.contains("zeros substitution, 20% of cells masked"));
}

#[test]
fn occupied_output_dir_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("keep.txt"), "x").unwrap();
    let cfg = tiny(ExperimentKind::Hmm, tmp.path());
    assert!(matches!(run_experiment(&cfg, false), Err(ExperimentError::OutputExists(_))));
    let mut cfg = cfg;
    cfg.run.folds = 1;
    cfg.explainers = ExplainersSection {
        occlusion: Some(Default::default()),
        ..Default::default()
    };
    run_experiment(&cfg, true).unwrap();
    assert!(tmp.path().join("keep.txt").is_file());
}

#[test]
fn failing_stage_is_named_and_files_survive() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("csv");
    let mut cfg = tiny(ExperimentKind::Csv, &dir);
    cfg.dataset.csv.path = Some(tmp.path().join("absent.csv"));
    match run_experiment(&cfg, false) {
        Err(ExperimentError::Stage { fold: 0, stage, .. }) => assert_eq!(stage, "generate"),
        other => panic!("unexpected {other:?}"),
    }
    assert!(dir.join("config.toml").is_file());
    assert!(dir.join("csv_results.csv").is_file());
}

#[test]
fn report_lists_missing_files() {
    let tmp = tempfile::tempdir().unwrap();
    let err = report(tmp.path()).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("config.toml") && msg.contains("_summary.csv"), "{msg}");
}

#[test]
fn config_survives_toml_round_trip() {
    for kind in [ExperimentKind::Hmm, ExperimentKind::IcuLike] {
        for profile in [Profile::Fast, Profile::Full] {
            let cfg = ExperimentConfig::preset(kind, profile);
            assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
        }
    }
    let minimal = ExperimentConfig::from_toml("name = \"hmm\"\n[run]\nfolds = 2\n").unwrap();
    assert_eq!(minimal.run.folds, 2);
    assert_eq!(minimal.methods().len(), 5);
    assert!(ExperimentConfig::from_toml("name = \"hmm\"\n[run]\nfolds = 0\n").is_err());
}

#[test]
fn ablations_expand_the_method_list() {
    let mut cfg = ExperimentConfig::preset(ExperimentKind::Hmm, Profile::Fast);
    cfg.run.ablation = Ablation::Lambda;
    let names: Vec<String> = cfg.methods().into_iter().map(|m| m.name).collect();
    assert_eq!(names.len(), 25);
    assert!(names.contains(&lambda_method_name(1.0, 1.0)));
    assert_eq!(lambda_method_name(0.01, 100.0), "learned_l1_0.01_l2_100");
    cfg.run.ablation = Ablation::Deletion;
    let names: Vec<String> = cfg.methods().into_iter().map(|m| m.name).collect();
    assert_eq!(names, ["learned_bi_gru", "learned_bi_gru_deletion"]);
    cfg.run.ablation = Ablation::None;
    cfg.run.compare_generators = true;
    let names: Vec<String> = cfg.methods().into_iter().map(|m| m.name).collect();
    assert_eq!(names.iter().filter(|n| n.starts_with("learned_")).count(), 3);
}

#[test]
fn aggregation_gives_mean_and_std_over_folds() {
    let mut rows = vec![
        summary_row("a", "aup", None, None, 1.0, 0.0),
        summary_row("a", "aup", None, None, 3.0, 0.0),
        summary_row("a", "ce", Some(0.2), Some("zeros"), 2.0, 0.0),
    ];
    for (i, r) in rows.iter_mut().enumerate() {
        r.fold = Some(i);
    }
    let s = aggregate(&rows);
    assert_eq!(s.len(), 2);
    assert_eq!((s[0].mean, s[0].std), (2.0, 2f64.sqrt()));
    assert_eq!(s[1].fraction, Some(0.2));
}

#[test]
fn lambda_check_wants_the_best_cell_at_unit_lambda1() {
    let mut rows = Vec::new();
    for &l1 in &LAMBDA_GRID {
        for &l2 in &LAMBDA_GRID {
            let (aup, aur) = if l1 == 1.0 && l2 == 1.0 { (0.9, 0.8) } else if l1 >= 10.0 { (0.9, 0.1) } else { (0.5, 0.5) };
            let name = lambda_method_name(l1, l2);
            rows.push(summary_row(&name, "aup", None, None, aup, 0.0));
            rows.push(summary_row(&name, "aur", None, None, aur, 0.0));
        }
    }
    assert!(lambda_grid_trend(&rows).unwrap().passed);
    rows.retain(|r| r.method != lambda_method_name(1.0, 1.0));
    assert!(lambda_grid_trend(&rows).is_none());
}

#[test]
fn generator_check_allows_ties_within_one_std() {
    let rows = |gru: f64| {
        vec![
            summary_row("learned_gru", "cross_entropy", Some(0.2), Some("zeros"), gru, 0.1),
            summary_row("learned_bi_gru", "cross_entropy", Some(0.2), Some("zeros"), 1.0, 0.1),
            summary_row("learned_zeros", "cross_entropy", Some(0.2), Some("zeros"), 0.95, 0.1),
        ]
    };
    assert!(generator_ordering(&rows(0.95)).unwrap().passed);
    assert!(!generator_ordering(&rows(0.8)).unwrap().passed);
}

#[test]
fn late_masking_check_compares_drops() {
    let rows = |first: f64, last: f64| {
        vec![
            summary_row(CLASSIFIER, "positive_rate_mask_first", Some(0.25), None, first, 0.0),
            summary_row(CLASSIFIER, "positive_rate_mask_last", Some(0.25), None, last, 0.0),
        ]
    };
    assert!(late_masking(&rows(0.95, 0.6)).unwrap().passed);
    assert!(!late_masking(&rows(0.8, 0.6)).unwrap().passed);
}

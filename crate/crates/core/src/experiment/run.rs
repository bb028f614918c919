use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{CsvSource, ExperimentConfig, ExperimentKind, Method, MethodKind};
use super::{io_err, svg, ExperimentError};
use crate::datagen::{generate_hmm, generate_icu_like, impute_forward_fill, load_csv, Labels, TimeSeriesDataset};
use crate::explainers::{
    augmented_occlusion_batch, explain_dynamask_batch, explain_learned_batch, integrated_gradients_batch,
    occlusion_batch, save_saliency, ExplainerConfig, ExplainerError, FeatureReference, OcclusionConfig, SaliencyMap,
};
use crate::metrics::{
    aggregate_importance, ground_truth_report, masked_prediction_metrics, mean_std, positive_rate_masking_curve,
    write_metric_rows, MetricRow, MetricsError,
};
use crate::nets::{auroc, batch_steps, save_checkpoint, train_classifier, ClassifierParams, Readout, SequenceModel};
use crate::par;
use crate::seeding::{derive_seed, stream_rng};

const SALT_DATA: u64 = 1;
const SALT_MODEL: u64 = 2;
const SALT_EXPLAIN: u64 = 3;

/// Method name used for rows describing the classifier itself.
pub const CLASSIFIER: &str = "classifier";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub fold: usize,
    pub method: String,
    /// `feature` or `time`.
    pub axis: String,
    pub index: usize,
    pub mean: f64,
    pub half_width: f64,
}

#[derive(Debug, Default)]
struct FoldOutcome {
    rows: Vec<MetricRow>,
    importance: Vec<ImportanceRow>,
}

struct FoldFailure {
    stage: String,
    message: String,
    partial: FoldOutcome,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    /// One row per method, metric and fold.
    pub fold_rows: Vec<MetricRow>,
    /// Mean and standard deviation over folds.
    pub summary: Vec<MetricRow>,
}

pub fn results_file(kind: ExperimentKind) -> String {
    format!("{}_results.csv", kind.label())
}

pub fn summary_file(kind: ExperimentKind) -> String {
    format!("{}_summary.csv", kind.label())
}

pub const CONFIG_FILE: &str = "config.toml";
pub const IMPORTANCE_FILE: &str = "importance.csv";

/// Runs every fold, writes the tables and charts, and returns the rows.
/// When a fold fails the rows gathered so far are still written and the
/// error names the fold and stage.
pub fn run_experiment(cfg: &ExperimentConfig, force: bool) -> Result<RunOutput, ExperimentError> {
    cfg.validate()?;
    let dir = cfg.output_dir();
    if dir.exists() && !force && fs::read_dir(&dir).map_err(|e| io_err(&dir, e))?.next().is_some() {
        return Err(ExperimentError::OutputExists(dir));
    }
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, cfg.to_toml()?).map_err(|e| io_err(&config_path, e))?;

    let methods = cfg.methods();
    let started = Instant::now();
    let outcomes = par::with_jobs(cfg.run.jobs, || {
        par::map_indices(cfg.run.folds, |fold| run_fold(cfg, &methods, fold, &dir))
    });

    let mut fold_rows = Vec::new();
    let mut importance = Vec::new();
    let mut failure = None;
    for (fold, outcome) in outcomes.into_iter().enumerate() {
        let part = match outcome {
            Ok(part) => part,
            Err(f) => {
                failure.get_or_insert((fold, f.stage, f.message));
                f.partial
            }
        };
        fold_rows.extend(part.rows);
        importance.extend(part.importance);
    }
    let summary = aggregate(&fold_rows);
    write_rows(&dir.join(results_file(cfg.name)), &fold_rows)?;
    write_rows(&dir.join(summary_file(cfg.name)), &summary)?;
    write_importance(&dir.join(IMPORTANCE_FILE), &importance)?;
    svg::write_charts(&dir, cfg.name, &summary)?;
    info!("{} finished {} folds in {:.1?}", cfg.name, cfg.run.folds, started.elapsed());

    match failure {
        Some((fold, stage, message)) => Err(ExperimentError::Stage {
            fold,
            stage,
            message,
            dir,
        }),
        None => Ok(RunOutput { dir, fold_rows, summary }),
    }
}

/// Train and test sets of one fold. Folds re-seed data generation, or the
/// shuffle for loaded data.
pub fn fold_data(cfg: &ExperimentConfig, fold: usize) -> Result<(TimeSeriesDataset, TimeSeriesDataset), ExperimentError> {
    let seed = derive_seed(cfg.run.seed, fold as u64, SALT_DATA);
    let ds = match cfg.name {
        ExperimentKind::Hmm => generate_hmm(&crate::datagen::HmmConfig {
            seed,
            ..cfg.dataset.hmm.clone()
        })?,
        ExperimentKind::IcuLike => generate_icu_like(&crate::datagen::IcuConfig {
            seed,
            ..cfg.dataset.icu.clone()
        })?,
        ExperimentKind::Csv => {
            let ds = load_csv_source(&cfg.dataset.csv)?;
            let mut order: Vec<usize> = (0..ds.n_samples).collect();
            order.shuffle(&mut stream_rng(seed, 0));
            ds.subset(&order)
        }
    };
    Ok(ds.split(cfg.dataset.train_fraction))
}

/// Loads the configured CSV file and fills its missing cells.
pub fn load_csv_source(src: &CsvSource) -> Result<TimeSeriesDataset, ExperimentError> {
    let path = src
        .path
        .as_ref()
        .ok_or_else(|| ExperimentError::Config("csv experiment needs dataset.csv.path".into()))?;
    let ds = load_csv(path, &src.schema)?;
    let defaults = if src.impute_defaults.is_empty() {
        vec![0.0; ds.n_features]
    } else {
        src.impute_defaults.clone()
    };
    Ok(impute_forward_fill(ds, &defaults)?)
}

pub fn fold_model_config(cfg: &ExperimentConfig, fold: usize) -> crate::nets::TrainConfig {
    crate::nets::TrainConfig {
        seed: derive_seed(cfg.run.seed, fold as u64, SALT_MODEL),
        ..cfg.model.clone()
    }
}

/// Runs one explainer on `xs`, the samples with ids `ids` of the test set.
pub fn run_method(
    method: &Method,
    f: &ClassifierParams,
    train: &TimeSeriesDataset,
    xs: &[crate::numerics::Tensor],
    ids: &[u64],
    seed: u64,
) -> Result<Vec<SaliencyMap>, ExplainerError> {
    match &method.kind {
        MethodKind::Learned(c) => explain_learned_batch(xs, ids, f, &ExplainerConfig { seed, ..c.clone() }),
        MethodKind::Dynamask(c) => explain_dynamask_batch(xs, f, c),
        MethodKind::Occlusion(c) => occlusion_batch(xs, f, c),
        MethodKind::AugmentedOcclusion(c) => {
            let reference = FeatureReference::from_dataset(train)?;
            augmented_occlusion_batch(xs, ids, f, &reference, &OcclusionConfig { seed, ..c.clone() })
        }
        MethodKind::IntegratedGradients(c) => integrated_gradients_batch(xs, f, c),
    }
}

fn run_fold(cfg: &ExperimentConfig, methods: &[Method], fold: usize, dir: &Path) -> Result<FoldOutcome, FoldFailure> {
    let mut out = FoldOutcome::default();
    macro_rules! stage {
        ($name:expr, $e:expr) => {
            match $e {
                Ok(v) => v,
                Err(err) => {
                    return Err(FoldFailure {
                        stage: $name.to_string(),
                        message: err.to_string(),
                        partial: out,
                    })
                }
            }
        };
    }
    let fold_dir = dir.join(format!("fold_{fold}"));
    stage!("setup", fs::create_dir_all(&fold_dir));

    let (train, test) = stage!("generate", fold_data(cfg, fold));
    let t0 = Instant::now();
    let (f, _) = stage!("train", train_classifier(&train, &fold_model_config(cfg, fold)));
    info!("fold {fold}: trained classifier in {:.1?}", t0.elapsed());
    stage!("train", save_checkpoint(&f, &fold_dir.join("model.ckpt")));
    let frozen = f;
    let f = &frozen;

    if let Some(score) = stage!("evaluate:classifier", classifier_auroc(f, &test)) {
        out.rows.push(row(CLASSIFIER, "auroc", None, None, score, fold));
    }
    if f.readout() == Readout::FinalStep && f.classes() == 2 && !cfg.metrics.masking_steps.is_empty() {
        match positive_rate_masking_curve(f, &test, &cfg.metrics.masking_steps) {
            Ok(curve) => {
                for (i, &k) in curve.ks.iter().enumerate() {
                    let frac = Some(k as f64 / test.n_timesteps as f64);
                    out.rows.push(row(CLASSIFIER, "positive_rate_mask_first", frac, None, curve.first[i], fold));
                    out.rows.push(row(CLASSIFIER, "positive_rate_mask_last", frac, None, curve.last[i], fold));
                }
            }
            Err(MetricsError::NoPositives) => warn!("fold {fold}: no positive predictions, masking curve skipped"),
            Err(e) => stage!("evaluate:masking_curve", Err(e)),
        }
    }

    let n_explain = cfg.run.explain_samples.unwrap_or(test.n_samples).min(test.n_samples);
    let sub = test.subset(&(0..n_explain).collect::<Vec<_>>());
    let xs = sub.samples();
    let ids: Vec<u64> = (0..n_explain as u64).collect();
    let seed = derive_seed(cfg.run.seed, fold as u64, SALT_EXPLAIN);

    for method in methods {
        let t0 = Instant::now();
        let stage_name = format!("explain:{}", method.name);
        let maps = stage!(stage_name, run_method(method, f, &train, &xs, &ids, seed));
        info!("fold {fold}: {} explained {n_explain} samples in {:.1?}", method.name, t0.elapsed());
        stage!(stage_name, save_saliency(&fold_dir.join(format!("{}.sal", method.name)), &ids, &maps));
        let stage_name = format!("evaluate:{}", method.name);
        let rows = stage!(stage_name, evaluate_maps(cfg, f, &sub, &maps, &method.name, fold));
        out.rows.extend(rows);
        if maps.len() >= 2 {
            let summary = stage!(stage_name, aggregate_importance(&maps));
            for (axis, values) in [("feature", &summary.per_feature), ("time", &summary.per_time)] {
                out.importance.extend(values.iter().enumerate().map(|(index, ci)| ImportanceRow {
                    fold,
                    method: method.name.clone(),
                    axis: axis.into(),
                    index,
                    mean: ci.mean,
                    half_width: ci.half_width,
                }));
            }
        }
    }
    Ok(out)
}

/// Ground-truth metrics when the salient cells are known, and the masked
/// prediction metrics for every configured fraction and substitution.
pub fn evaluate_maps(
    cfg: &ExperimentConfig,
    f: &ClassifierParams,
    ds: &TimeSeriesDataset,
    maps: &[SaliencyMap],
    method: &str,
    fold: usize,
) -> Result<Vec<MetricRow>, MetricsError> {
    let mut rows = Vec::new();
    if ds.true_saliency.is_some() {
        let truths: Vec<&[bool]> = (0..ds.n_samples).filter_map(|i| ds.saliency(i)).collect();
        let r = ground_truth_report(maps, &truths, cfg.metrics.thresholds)?;
        for (metric, v) in [("aup", r.aup), ("aur", r.aur), ("information", r.information), ("entropy", r.entropy)] {
            rows.push(row(method, metric, None, None, v, fold));
        }
    }
    for &sub in &cfg.metrics.substitutions {
        for &fraction in &cfg.metrics.fractions {
            let r = masked_prediction_metrics(f, ds, maps, fraction, sub)?;
            for (metric, v) in [
                ("accuracy", r.accuracy),
                ("cross_entropy", r.cross_entropy),
                ("comprehensiveness", r.comprehensiveness),
                ("sufficiency", r.sufficiency),
            ] {
                rows.push(row(method, metric, Some(fraction), Some(sub.label()), v, fold));
            }
        }
    }
    Ok(rows)
}

/// AUROC of the class-1 probability on `ds`, pooled over output positions.
pub fn classifier_auroc<M: SequenceModel + ?Sized>(f: &M, ds: &TimeSeriesDataset) -> Result<Option<f64>, ExplainerError> {
    if f.classes() != 2 {
        return Ok(None);
    }
    let outs = f.outputs_batch(&batch_steps(&ds.x, ds.n_samples, ds.n_timesteps, ds.n_features))?;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for s in 0..ds.n_samples {
        match &ds.labels {
            Labels::PerTimestep(_) => {
                for (p, out) in outs.iter().enumerate() {
                    scores.push(out.row(s)[1]);
                    labels.push(ds.labels_of(s)[p]);
                }
            }
            Labels::PerSequence(_) => {
                scores.push(outs[outs.len() - 1].row(s)[1]);
                labels.push(ds.labels_of(s)[0]);
            }
        }
    }
    Ok(auroc(&scores, &labels))
}

fn row(method: &str, metric: &str, fraction: Option<f64>, sub: Option<&str>, value: f64, fold: usize) -> MetricRow {
    MetricRow {
        method: method.into(),
        metric: metric.into(),
        fraction,
        substitution: sub.map(Into::into),
        mean: value,
        std: 0.0,
        fold: Some(fold),
    }
}

/// Mean and standard deviation over folds of every (method, metric,
/// fraction, substitution), in order of first appearance.
pub fn aggregate(rows: &[MetricRow]) -> Vec<MetricRow> {
    let mut keys: Vec<(&str, &str, Option<u64>, Option<&str>)> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    for r in rows {
        let key = (
            r.method.as_str(),
            r.metric.as_str(),
            r.fraction.map(f64::to_bits),
            r.substitution.as_deref(),
        );
        match keys.iter().position(|k| *k == key) {
            Some(i) => values[i].push(r.mean),
            None => {
                keys.push(key);
                values.push(vec![r.mean]);
            }
        }
    }
    keys.into_iter()
        .zip(values)
        .map(|((method, metric, fraction, sub), v)| {
            let (mean, std) = mean_std(&v);
            MetricRow {
                method: method.into(),
                metric: metric.into(),
                fraction: fraction.map(f64::from_bits),
                substitution: sub.map(Into::into),
                mean,
                std,
                fold: None,
            }
        })
        .collect()
}

fn write_rows(path: &Path, rows: &[MetricRow]) -> Result<(), ExperimentError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    write_metric_rows(file, rows)?;
    Ok(())
}

fn write_importance(path: &Path, rows: &[ImportanceRow]) -> Result<(), ExperimentError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r).map_err(|e| ExperimentError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

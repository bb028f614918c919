//! Ground-truth saliency scores, masked-prediction scores and the
//! importance summaries over samples and time.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datagen::TimeSeriesDataset;
use crate::explainers::SaliencyMap;
use crate::nets::{batch_steps, predicted_classes, NetError, SequenceModel};
use crate::par;

/// Clip applied before logarithms of mask values.
pub const LOG_EPS: f64 = 1e-6;

/// Thresholds swept for AUP and AUR.
pub const DEFAULT_THRESHOLDS: usize = 100;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("ground truth has no {0} cells")]
    DegenerateTruth(&'static str),
    #[error("{0}")]
    Shape(String),
    #[error("invalid metric config: {0}")]
    Config(String),
    #[error("no sample is predicted positive")]
    NoPositives,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthReport {
    pub aup: f64,
    pub aur: f64,
    pub information: f64,
    pub entropy: f64,
}

/// Mean precision and mean recall of `{score > tau}` over `thresholds`
/// evenly spaced `tau` in `(0, 1)`. Thresholds selecting no cell are
/// skipped for precision.
pub fn aup_aur(scores: &[f64], truth: &[bool], thresholds: usize) -> Result<(f64, f64), MetricsError> {
    if scores.len() != truth.len() {
        return Err(MetricsError::Shape(format!("{} scores for {} truth cells", scores.len(), truth.len())));
    }
    if thresholds == 0 {
        return Err(MetricsError::Config("at least one threshold is needed".into()));
    }
    let positives = truth.iter().filter(|&&t| t).count();
    if positives == 0 {
        return Err(MetricsError::DegenerateTruth("salient"));
    }
    if positives == truth.len() {
        return Err(MetricsError::DegenerateTruth("non-salient"));
    }
    let (mut precision, mut valid, mut recall) = (0.0, 0usize, 0.0);
    for k in 1..=thresholds {
        let tau = k as f64 / (thresholds + 1) as f64;
        let (mut selected, mut hits) = (0usize, 0usize);
        for (s, &t) in scores.iter().zip(truth) {
            if *s > tau {
                selected += 1;
                hits += usize::from(t);
            }
        }
        if selected > 0 {
            precision += hits as f64 / selected as f64;
            valid += 1;
        }
        recall += hits as f64 / positives as f64;
    }
    let aup = if valid > 0 { precision / valid as f64 } else { 0.0 };
    Ok((aup, recall / thresholds as f64))
}

/// `-sum ln(1 - m)` over the truly salient cells.
pub fn information(scores: &[f64], truth: &[bool]) -> f64 {
    scores
        .iter()
        .zip(truth)
        .filter(|(_, &t)| t)
        .map(|(m, _)| -(1.0 - m.clamp(LOG_EPS, 1.0 - LOG_EPS)).ln())
        .sum()
}

/// Binary entropy of the mask summed over the truly salient cells, with
/// `0 ln 0 = 0`.
pub fn entropy(scores: &[f64], truth: &[bool]) -> f64 {
    scores
        .iter()
        .zip(truth)
        .filter(|(_, &t)| t)
        .map(|(m, _)| {
            let m = m.clamp(0.0, 1.0);
            -(crate::numerics::xlogx(m) + crate::numerics::xlogx(1.0 - m))
        })
        .sum()
}

/// AUP and AUR pooled over every cell of every sample; information and
/// entropy are per-sample sums averaged over samples.
pub fn ground_truth_report(
    maps: &[SaliencyMap],
    truths: &[&[bool]],
    thresholds: usize,
) -> Result<GroundTruthReport, MetricsError> {
    if maps.len() != truths.len() || maps.is_empty() {
        return Err(MetricsError::Shape(format!("{} maps for {} truths", maps.len(), truths.len())));
    }
    let scores: Vec<f64> = maps.iter().flat_map(|m| m.scores.iter().copied()).collect();
    let truth: Vec<bool> = truths.iter().flat_map(|t| t.iter().copied()).collect();
    let (aup, aur) = aup_aur(&scores, &truth, thresholds)?;
    let n = maps.len() as f64;
    Ok(GroundTruthReport {
        aup,
        aur,
        information: maps.iter().zip(truths).map(|(m, t)| information(&m.scores, t)).sum::<f64>() / n,
        entropy: maps.iter().zip(truths).map(|(m, t)| entropy(&m.scores, t)).sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Substitution {
    /// Each feature's mean over time.
    TimeAverage,
    Zeros,
}

impl Substitution {
    pub fn label(self) -> &'static str {
        match self {
            Self::TimeAverage => "time_average",
            Self::Zeros => "zeros",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskedPredictionReport {
    pub accuracy: f64,
    pub cross_entropy: f64,
    pub comprehensiveness: f64,
    pub sufficiency: f64,
    pub fraction: f64,
    pub substitution: Substitution,
}

/// Indices of the `k` highest scores; ties keep the lower index first.
pub fn top_cells(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx.truncate(k);
    idx
}

/// Replacement values for a `[T, n]` sample.
pub fn substitute_values(x: &[f64], steps: usize, features: usize, kind: Substitution) -> Vec<f64> {
    match kind {
        Substitution::Zeros => vec![0.0; x.len()],
        Substitution::TimeAverage => {
            let mut means = vec![0.0; features];
            for row in x.chunks(features) {
                for (m, v) in means.iter_mut().zip(row) {
                    *m += v / steps as f64;
                }
            }
            means.repeat(steps)
        }
    }
}

/// Copy of `x` with `cells` replaced by `fill`.
fn masked(x: &[f64], fill: &[f64], cells: &[usize]) -> Vec<f64> {
    let mut out = x.to_vec();
    for &c in cells {
        out[c] = fill[c];
    }
    out
}

#[derive(Clone, Copy)]
struct Masking {
    k: usize,
    steps: usize,
    features: usize,
    substitution: Substitution,
}

/// Scores of one sample under top-`k` masking: (correct, total positions,
/// cross-entropy, comprehensiveness, sufficiency), all summed over positions.
fn masked_sample<M: SequenceModel + ?Sized>(
    f: &M,
    x: &[f64],
    labels: &[u8],
    scores: &[f64],
    how: &Masking,
) -> Result<[f64; 5], MetricsError> {
    let Masking {
        k,
        steps,
        features,
        substitution,
    } = *how;
    let fill = substitute_values(x, steps, features, substitution);
    let top = top_cells(scores, k);
    let mut keep_only = vec![true; scores.len()];
    for &c in &top {
        keep_only[c] = false;
    }
    let rest: Vec<usize> = (0..scores.len()).filter(|&c| keep_only[c]).collect();
    let mut flat = x.to_vec();
    flat.extend(masked(x, &fill, &top));
    flat.extend(masked(x, &fill, &rest));
    let outputs = f.outputs_batch(&batch_steps(&flat, 3, steps, features))?;
    let positions = outputs.len();
    let labels: Vec<u8> = if labels.len() == positions {
        labels.to_vec()
    } else if positions == 1 && !labels.is_empty() {
        vec![labels[labels.len() - 1]]
    } else {
        return Err(MetricsError::Shape(format!("{} labels for {positions} outputs", labels.len())));
    };
    let classes = predicted_classes(&outputs);
    let mut acc = [0.0; 5];
    for (pos, o) in outputs.iter().enumerate() {
        let (orig, drop, kept) = (o.row(0), o.row(1), o.row(2));
        let c = classes[0][pos];
        acc[0] += f64::from(u8::from(classes[1][pos] == usize::from(labels[pos])));
        acc[1] += 1.0;
        acc[2] -= orig
            .iter()
            .zip(drop)
            .map(|(p, q)| p * q.clamp(LOG_EPS, 1.0).ln())
            .sum::<f64>();
        acc[3] += orig[c] - drop[c];
        acc[4] += orig[c] - kept[c];
    }
    Ok(acc)
}

/// Masks the top `fraction` of each sample's cells and compares the
/// model's predictions before and after. Sufficiency masks the complement.
pub fn masked_prediction_metrics<M: SequenceModel + ?Sized>(
    f: &M,
    ds: &TimeSeriesDataset,
    maps: &[SaliencyMap],
    fraction: f64,
    substitution: Substitution,
) -> Result<MaskedPredictionReport, MetricsError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(MetricsError::Config(format!("fraction {fraction} outside (0, 1)")));
    }
    if maps.len() != ds.n_samples {
        return Err(MetricsError::Shape(format!("{} maps for {} samples", maps.len(), ds.n_samples)));
    }
    let (steps, features) = (ds.n_timesteps, ds.n_features);
    let cells = steps * features;
    let k = (fraction * cells as f64).round() as usize;
    if k == 0 {
        return Err(MetricsError::Config(format!("fraction {fraction} selects no cell of {cells}")));
    }
    if let Some(m) = maps.iter().find(|m| m.scores.len() != cells) {
        return Err(MetricsError::Shape(format!("map of {} cells, samples have {cells}", m.scores.len())));
    }
    let how = Masking {
        k,
        steps,
        features,
        substitution,
    };
    let per_sample = par::map_indices(ds.n_samples, |i| {
        masked_sample(f, ds.sample_slice(i), ds.labels_of(i), &maps[i].scores, &how)
    });
    let mut total = [0.0; 5];
    for s in per_sample {
        for (t, v) in total.iter_mut().zip(s?) {
            *t += v;
        }
    }
    let positions = total[1];
    Ok(MaskedPredictionReport {
        accuracy: total[0] / positions,
        cross_entropy: total[2] / positions,
        comprehensiveness: total[3] / positions,
        sufficiency: total[4] / positions,
        fraction,
        substitution,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub half_width: f64,
}

impl MeanCi {
    /// Mean and 95% interval of independent observations.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            half_width: 1.96 * (var / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceSummary {
    /// Per feature, averaged over time within each sample.
    pub per_feature: Vec<MeanCi>,
    /// Per timestep, averaged over features within each sample.
    pub per_time: Vec<MeanCi>,
}

pub fn aggregate_importance(maps: &[SaliencyMap]) -> Result<ImportanceSummary, MetricsError> {
    if maps.len() < 2 {
        return Err(MetricsError::Config("importance intervals need at least two samples".into()));
    }
    let (steps, features) = (maps[0].n_timesteps, maps[0].n_features);
    if maps.iter().any(|m| m.n_timesteps != steps || m.n_features != features) {
        return Err(MetricsError::Shape("maps differ in shape".into()));
    }
    let per_feature = (0..features)
        .map(|i| {
            let v: Vec<f64> = maps
                .iter()
                .map(|m| (0..steps).map(|t| m.at(t, i)).sum::<f64>() / steps as f64)
                .collect();
            MeanCi::of(&v)
        })
        .collect();
    let per_time = (0..steps)
        .map(|t| {
            let v: Vec<f64> = maps
                .iter()
                .map(|m| (0..features).map(|i| m.at(t, i)).sum::<f64>() / features as f64)
                .collect();
            MeanCi::of(&v)
        })
        .collect();
    Ok(ImportanceSummary { per_feature, per_time })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingCurve {
    pub ks: Vec<usize>,
    /// Positive rate after zeroing the first `k` steps.
    pub first: Vec<f64>,
    /// Positive rate after zeroing the last `k` steps.
    pub last: Vec<f64>,
    /// Samples predicted positive before masking.
    pub positives: usize,
}

/// Class-1 predictions at the final output position.
fn positive_flags<M: SequenceModel + ?Sized>(
    f: &M,
    flat: &[f64],
    batch: usize,
    steps: usize,
    features: usize,
) -> Result<Vec<bool>, MetricsError> {
    let outputs = f.outputs_batch(&batch_steps(flat, batch, steps, features))?;
    Ok(predicted_classes(&outputs).into_iter().map(|c| c[c.len() - 1] == 1).collect())
}

/// Share of originally positive predictions that stay positive when the
/// first or last `k` timesteps are zeroed.
pub fn positive_rate_masking_curve<M: SequenceModel + ?Sized>(
    f: &M,
    ds: &TimeSeriesDataset,
    ks: &[usize],
) -> Result<MaskingCurve, MetricsError> {
    let (steps, features) = (ds.n_timesteps, ds.n_features);
    if f.classes() != 2 {
        return Err(MetricsError::Config("the masking curve needs a binary classifier".into()));
    }
    if let Some(&k) = ks.iter().find(|&&k| k > steps) {
        return Err(MetricsError::Config(format!("cannot mask {k} of {steps} steps")));
    }
    let flags = positive_flags(f, &ds.x, ds.n_samples, steps, features)?;
    let chosen: Vec<usize> = (0..ds.n_samples).filter(|&i| flags[i]).collect();
    if chosen.is_empty() {
        return Err(MetricsError::NoPositives);
    }
    let block = steps * features;
    let rate = |range: &dyn Fn(usize) -> std::ops::Range<usize>, k: usize| -> Result<f64, MetricsError> {
        let mut flat = Vec::with_capacity(chosen.len() * block);
        for &i in &chosen {
            let start = flat.len();
            flat.extend_from_slice(ds.sample_slice(i));
            for t in range(k) {
                flat[start + t * features..start + (t + 1) * features].fill(0.0);
            }
        }
        let kept = positive_flags(f, &flat, chosen.len(), steps, features)?;
        Ok(kept.iter().filter(|&&p| p).count() as f64 / chosen.len() as f64)
    };
    let mut first = Vec::with_capacity(ks.len());
    let mut last = Vec::with_capacity(ks.len());
    for &k in ks {
        first.push(rate(&|k| 0..k, k)?);
        last.push(rate(&|k| steps - k..steps, k)?);
    }
    Ok(MaskingCurve {
        ks: ks.to_vec(),
        first,
        last,
        positives: chosen.len(),
    })
}

/// One aggregated metric value as written to the results tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub metric: String,
    pub fraction: Option<f64>,
    pub substitution: Option<String>,
    pub mean: f64,
    pub std: f64,
    /// Fold index, or `None` for the aggregate over folds.
    pub fold: Option<usize>,
}

pub fn write_metric_rows<W: Write>(out: W, rows: &[MetricRow]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| MetricsError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| MetricsError::Csv(e.to_string()))?;
    Ok(())
}

pub fn read_metric_rows<R: std::io::Read>(input: R) -> Result<Vec<MetricRow>, MetricsError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<Result<Vec<MetricRow>, _>>()
        .map_err(|e| MetricsError::Csv(e.to_string()))
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_frozen, check_inputs, check_unchanged, min_max_normalize, outputs_of, target_classes, target_score,
    ExplainerError, ExplanationMeta, SaliencyMap,
};
use crate::datagen::TimeSeriesDataset;
use crate::nets::SequenceModel;
use crate::numerics::Tensor;
use crate::par;
use crate::seeding::stream_rng;

/// Largest number of perturbed copies scored in one model call.
const ROWS_PER_CALL: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcclusionConfig {
    /// Replacement value for plain occlusion.
    pub baseline: f64,
    /// Draws per cell for the augmented variant.
    pub samples: usize,
    pub seed: u64,
    pub target_class: Option<usize>,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            baseline: 0.0,
            samples: 10,
            seed: 0,
            target_class: None,
        }
    }
}

/// Empirical per-feature values that augmented occlusion draws from.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureReference {
    values: Vec<Vec<f64>>,
}

impl FeatureReference {
    /// Finite values of each feature, pooled over samples and time.
    pub fn from_dataset(ds: &TimeSeriesDataset) -> Result<Self, ExplainerError> {
        let values: Vec<Vec<f64>> = (0..ds.n_features)
            .map(|i| ds.feature_values(i).into_iter().filter(|v| v.is_finite()).collect())
            .collect();
        Self::new(values)
    }

    pub fn new(values: Vec<Vec<f64>>) -> Result<Self, ExplainerError> {
        if values.is_empty() || values.iter().any(Vec::is_empty) {
            return Err(ExplainerError::EmptyReference);
        }
        Ok(Self { values })
    }

    pub fn n_features(&self) -> usize {
        self.values.len()
    }

    fn draw<R: Rng>(&self, feature: usize, rng: &mut R) -> f64 {
        let pool = &self.values[feature];
        pool[rng.random_range(0..pool.len())]
    }
}

/// Target-class score of every `[T, n]` block in `flat`.
fn scores_of<M: SequenceModel + ?Sized>(
    f: &M,
    flat: &[f64],
    targets: &[usize],
    steps: usize,
    features: usize,
) -> Result<Vec<f64>, ExplainerError> {
    let cells = steps * features;
    let rows = flat.len() / cells;
    let mut out = Vec::with_capacity(rows);
    for lo in (0..rows).step_by(ROWS_PER_CALL) {
        let hi = (lo + ROWS_PER_CALL).min(rows);
        let outputs = outputs_of(f, &flat[lo * cells..hi * cells], hi - lo, steps, features)?;
        let t = vec![targets.to_vec(); hi - lo];
        out.extend(target_score(&outputs, &t));
    }
    Ok(out)
}

fn sample_targets<M: SequenceModel + ?Sized>(
    f: &M,
    x: &Tensor,
    forced: Option<usize>,
    steps: usize,
    features: usize,
) -> Result<(Vec<usize>, f64), ExplainerError> {
    let outputs = outputs_of(f, x.data(), 1, steps, features)?;
    let targets = target_classes(&outputs, forced, f.classes())?.remove(0);
    let score = target_score(&outputs, std::slice::from_ref(&targets))[0];
    Ok((targets, score))
}

fn finish(method: &str, raw: Vec<f64>, steps: usize, features: usize) -> SaliencyMap {
    SaliencyMap {
        method: method.into(),
        n_timesteps: steps,
        n_features: features,
        scores: min_max_normalize(&raw),
        meta: ExplanationMeta {
            raw: Some(raw),
            ..ExplanationMeta::default()
        },
    }
}

fn occlude_one<M: SequenceModel + ?Sized>(
    x: &Tensor,
    f: &M,
    cfg: &OcclusionConfig,
    steps: usize,
    features: usize,
) -> Result<SaliencyMap, ExplainerError> {
    let cells = steps * features;
    let (targets, base) = sample_targets(f, x, cfg.target_class, steps, features)?;
    let mut flat = Vec::with_capacity(cells * cells);
    for c in 0..cells {
        let start = flat.len();
        flat.extend_from_slice(x.data());
        flat[start + c] = cfg.baseline;
    }
    let scores = scores_of(f, &flat, &targets, steps, features)?;
    let raw = scores.iter().map(|s| (base - s).abs()).collect();
    Ok(finish("occlusion", raw, steps, features))
}

/// `|f_c(x) - f_c(x with one cell set to the baseline)|` per cell.
pub fn occlusion<M: SequenceModel + ?Sized>(
    x: &Tensor,
    f: &M,
    cfg: &OcclusionConfig,
) -> Result<SaliencyMap, ExplainerError> {
    Ok(occlusion_batch(std::slice::from_ref(x), f, cfg)?.remove(0))
}

pub fn occlusion_batch<M: SequenceModel + ?Sized>(
    xs: &[Tensor],
    f: &M,
    cfg: &OcclusionConfig,
) -> Result<Vec<SaliencyMap>, ExplainerError> {
    let (steps, features) = check_inputs(xs, f.input_size())?;
    let before = check_frozen(f)?;
    let results = par::map_indices(xs.len(), |s| occlude_one(&xs[s], f, cfg, steps, features));
    check_unchanged(f, before)?;
    results.into_iter().collect()
}

fn augmented_one<M: SequenceModel + ?Sized>(
    x: &Tensor,
    id: u64,
    f: &M,
    reference: &FeatureReference,
    cfg: &OcclusionConfig,
    steps: usize,
    features: usize,
) -> Result<SaliencyMap, ExplainerError> {
    let cells = steps * features;
    let (targets, base) = sample_targets(f, x, cfg.target_class, steps, features)?;
    let mut rng = stream_rng(cfg.seed, id);
    let mut flat = Vec::with_capacity(cells * cells * cfg.samples);
    for c in 0..cells {
        for _ in 0..cfg.samples {
            let start = flat.len();
            flat.extend_from_slice(x.data());
            flat[start + c] = reference.draw(c % features, &mut rng);
        }
    }
    let scores = scores_of(f, &flat, &targets, steps, features)?;
    let raw = scores
        .chunks(cfg.samples)
        .map(|draws| draws.iter().map(|s| (base - s).abs()).sum::<f64>() / cfg.samples as f64)
        .collect();
    Ok(finish("augmented_occlusion", raw, steps, features))
}

/// Occlusion with replacements drawn from each feature's empirical
/// distribution, averaged over `cfg.samples` draws.
pub fn augmented_occlusion<M: SequenceModel + ?Sized>(
    x: &Tensor,
    f: &M,
    reference: &FeatureReference,
    cfg: &OcclusionConfig,
) -> Result<SaliencyMap, ExplainerError> {
    Ok(augmented_occlusion_batch(std::slice::from_ref(x), &[0], f, reference, cfg)?.remove(0))
}

pub fn augmented_occlusion_batch<M: SequenceModel + ?Sized>(
    xs: &[Tensor],
    ids: &[u64],
    f: &M,
    reference: &FeatureReference,
    cfg: &OcclusionConfig,
) -> Result<Vec<SaliencyMap>, ExplainerError> {
    if cfg.samples == 0 {
        return Err(ExplainerError::Config("augmented occlusion needs at least one draw".into()));
    }
    if ids.len() != xs.len() {
        return Err(ExplainerError::Config(format!("{} ids for {} samples", ids.len(), xs.len())));
    }
    let (steps, features) = check_inputs(xs, f.input_size())?;
    if reference.n_features() != features {
        return Err(ExplainerError::Config(format!(
            "reference has {} features, inputs have {features}",
            reference.n_features()
        )));
    }
    let before = check_frozen(f)?;
    let results = par::map_indices(xs.len(), |s| augmented_one(&xs[s], ids[s], f, reference, cfg, steps, features));
    check_unchanged(f, before)?;
    results.into_iter().collect()
}

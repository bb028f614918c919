//! Attribution methods. Every explainer returns one [`SaliencyMap`] per
//! sample with scores in `[0, 1]`, larger meaning more salient.

mod dynamask;
mod gradients;
mod learned;
mod occlusion;
mod output;

pub use dynamask::{area_regularizer, explain_dynamask, explain_dynamask_batch, target_area, vecsort, DynamaskConfig, MaskOptimizer};
pub use gradients::{integrated_gradients, integrated_gradients_batch, IgConfig};
pub use learned::{explain_learned, explain_learned_batch, ExplainerConfig, LearnedMode};
pub use occlusion::{augmented_occlusion, augmented_occlusion_batch, occlusion, occlusion_batch, FeatureReference, OcclusionConfig};
pub use output::{load_saliency, save_saliency, write_saliency_csv};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datagen::DataError;
use crate::nets::{batch_steps, predicted_classes, NetError, SequenceModel};
use crate::numerics::{NumericsError, Tensor};
use crate::perturbation::PerturbationError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExplainerError {
    #[error("loss diverged at iteration {iteration} for sample {sample}")]
    Diverged { iteration: usize, sample: u64 },
    #[error("the model is not frozen; explanations need fixed parameters")]
    ModelNotFrozen,
    #[error("model parameters changed while explaining")]
    ModelMutated,
    #[error("reference dataset is empty")]
    EmptyReference,
    #[error("invalid explainer config: {0}")]
    Config(String),
    #[error("input {index} has shape {shape:?}, expected [{steps}, {features}]")]
    Input {
        index: usize,
        shape: Vec<usize>,
        steps: usize,
        features: usize,
    },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Perturbation(#[from] PerturbationError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplanationMeta {
    /// Optimisation steps taken, zero for non-iterative methods.
    pub iterations: usize,
    pub final_loss: Option<f64>,
    /// Named components of the final loss.
    pub loss_terms: BTreeMap<String, f64>,
    /// Unnormalised attributions for gradient and occlusion methods.
    pub raw: Option<Vec<f64>>,
    /// Loss at every iteration, for iterative methods.
    pub loss_history: Vec<f64>,
}

/// Per-cell importance of one `[T, n]` sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub method: String,
    pub n_timesteps: usize,
    pub n_features: usize,
    /// `[T, n]` row-major, each in `[0, 1]`.
    pub scores: Vec<f64>,
    pub meta: ExplanationMeta,
}

impl SaliencyMap {
    pub fn at(&self, t: usize, i: usize) -> f64 {
        self.scores[t * self.n_features + i]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.n_timesteps, self.n_features], self.scores.clone()).expect("shape")
    }
}

/// Per-sample min-max scaling into `[0, 1]`. A constant map becomes zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

fn check_inputs(xs: &[Tensor], n_features: usize) -> Result<(usize, usize), ExplainerError> {
    let first = xs.first().ok_or_else(|| ExplainerError::Config("nothing to explain".into()))?;
    let (steps, features) = match first.shape() {
        [t, n] if *t > 0 => (*t, *n),
        s => {
            return Err(ExplainerError::Input {
                index: 0,
                shape: s.to_vec(),
                steps: 0,
                features: n_features,
            })
        }
    };
    for (index, x) in xs.iter().enumerate() {
        if x.shape() != [steps, n_features] {
            return Err(ExplainerError::Input {
                index,
                shape: x.shape().to_vec(),
                steps,
                features: n_features,
            });
        }
    }
    debug_assert_eq!(features, n_features);
    Ok((steps, features))
}

fn check_frozen<M: SequenceModel + ?Sized>(f: &M) -> Result<u64, ExplainerError> {
    if !f.is_frozen() {
        return Err(ExplainerError::ModelNotFrozen);
    }
    Ok(f.fingerprint())
}

fn check_unchanged<M: SequenceModel + ?Sized>(f: &M, before: u64) -> Result<(), ExplainerError> {
    if f.fingerprint() != before {
        return Err(ExplainerError::ModelMutated);
    }
    Ok(())
}

/// Model outputs for sample-major `[B, T, n]` values, one `[B, classes]`
/// tensor per output position.
pub(crate) fn outputs_of<M: SequenceModel + ?Sized>(
    f: &M,
    flat: &[f64],
    batch: usize,
    steps: usize,
    features: usize,
) -> Result<Vec<Tensor>, ExplainerError> {
    Ok(f.outputs_batch(&batch_steps(flat, batch, steps, features))?)
}

/// Classes the explanations target: `[B][positions]`, the model's own
/// prediction unless a class is forced.
pub(crate) fn target_classes(
    outputs: &[Tensor],
    forced: Option<usize>,
    classes: usize,
) -> Result<Vec<Vec<usize>>, ExplainerError> {
    match forced {
        Some(c) if c >= classes => Err(NetError::InvalidClass { class: c, classes }.into()),
        Some(c) => Ok(vec![vec![c; outputs.len()]; outputs[0].shape()[0]]),
        None => Ok(predicted_classes(outputs)),
    }
}

/// `f_c` per batch row: the probability of the target class summed over
/// output positions.
pub(crate) fn target_score(outputs: &[Tensor], targets: &[Vec<usize>]) -> Vec<f64> {
    targets
        .iter()
        .enumerate()
        .map(|(r, cs)| outputs.iter().zip(cs).map(|(o, &c)| o.row(r)[c]).sum())
        .collect()
}

#[cfg(test)]
mod tests;

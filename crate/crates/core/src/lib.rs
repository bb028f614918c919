//! Saliency for recurrent time-series classifiers by jointly learning a mask
//! and a perturbation generator, with fixed-perturbation, occlusion and
//! gradient baselines, a ground-truth benchmark and the evaluation metrics.

// `!(a > b)` is deliberate: it rejects NaN along with the ordinary failures.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod datagen;
pub mod experiment;
pub mod explainers;
pub mod metrics;
pub mod nets;
pub mod numerics;
pub mod par;
pub mod perturbation;
pub mod seeding;
#[cfg(test)]
mod test_models;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "snake_case")]
pub enum Labels {
    /// `[N, T]` binary labels, one per timestep.
    PerTimestep(Vec<u8>),
    /// `[N]` binary labels, one per sequence.
    PerSequence(Vec<u8>),
}

/// `N` multivariate series of `T` steps and `n` features, stored sample-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub n_samples: usize,
    pub n_timesteps: usize,
    pub n_features: usize,
    /// `[N, T, n]`
    pub x: Vec<f64>,
    pub labels: Labels,
    /// `[N, T, n]`, when the salient cells are known.
    pub true_saliency: Option<Vec<bool>>,
    /// `[N, T]` hidden states of generated data.
    pub states: Option<Vec<u8>>,
    pub feature_names: Vec<String>,
    pub seed: Option<u64>,
}

impl TimeSeriesDataset {
    pub fn validate(&self) -> Result<(), DataError> {
        let cells = self.n_samples * self.n_timesteps * self.n_features;
        if self.x.len() != cells {
            return Err(DataError::Shape(format!(
                "x holds {} values, expected {cells}",
                self.x.len()
            )));
        }
        let label_len = match &self.labels {
            Labels::PerTimestep(v) => (v.len(), self.n_samples * self.n_timesteps),
            Labels::PerSequence(v) => (v.len(), self.n_samples),
        };
        if label_len.0 != label_len.1 {
            return Err(DataError::Shape(format!(
                "{} labels, expected {}",
                label_len.0, label_len.1
            )));
        }
        if let Some(s) = &self.true_saliency {
            if s.len() != cells {
                return Err(DataError::Shape("true saliency shape".into()));
            }
        }
        if self.feature_names.len() != self.n_features {
            return Err(DataError::Shape("feature name count".into()));
        }
        Ok(())
    }

    pub fn cells_per_sample(&self) -> usize {
        self.n_timesteps * self.n_features
    }

    pub fn sample_slice(&self, i: usize) -> &[f64] {
        let c = self.cells_per_sample();
        &self.x[i * c..(i + 1) * c]
    }

    /// Sample `i` as a `[T, n]` tensor.
    pub fn sample(&self, i: usize) -> Tensor {
        Tensor::new(vec![self.n_timesteps, self.n_features], self.sample_slice(i).to_vec()).expect("validated shape")
    }

    pub fn samples(&self) -> Vec<Tensor> {
        (0..self.n_samples).map(|i| self.sample(i)).collect()
    }

    pub fn saliency(&self, i: usize) -> Option<&[bool]> {
        let c = self.cells_per_sample();
        self.true_saliency.as_ref().map(|s| &s[i * c..(i + 1) * c])
    }

    /// Labels of sample `i`: `T` entries, or one for sequence labels.
    pub fn labels_of(&self, i: usize) -> &[u8] {
        match &self.labels {
            Labels::PerTimestep(v) => &v[i * self.n_timesteps..(i + 1) * self.n_timesteps],
            Labels::PerSequence(v) => &v[i..i + 1],
        }
    }

    pub fn is_per_timestep(&self) -> bool {
        matches!(self.labels, Labels::PerTimestep(_))
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let c = self.cells_per_sample();
        let t = self.n_timesteps;
        let x = indices.iter().flat_map(|&i| self.sample_slice(i).iter().copied()).collect();
        let labels = match &self.labels {
            Labels::PerTimestep(v) => {
                Labels::PerTimestep(indices.iter().flat_map(|&i| v[i * t..(i + 1) * t].iter().copied()).collect())
            }
            Labels::PerSequence(v) => Labels::PerSequence(indices.iter().map(|&i| v[i]).collect()),
        };
        let true_saliency = self
            .true_saliency
            .as_ref()
            .map(|s| indices.iter().flat_map(|&i| s[i * c..(i + 1) * c].iter().copied()).collect());
        let states = self
            .states
            .as_ref()
            .map(|s| indices.iter().flat_map(|&i| s[i * t..(i + 1) * t].iter().copied()).collect());
        Self {
            n_samples: indices.len(),
            x,
            labels,
            true_saliency,
            states,
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> Self {
        Self {
            n_samples: 0,
            n_timesteps: self.n_timesteps,
            n_features: self.n_features,
            x: Vec::new(),
            labels: Labels::PerSequence(Vec::new()),
            true_saliency: None,
            states: None,
            feature_names: self.feature_names.clone(),
            seed: self.seed,
        }
    }

    /// Deterministic split: the first `round(train_fraction * N)` samples
    /// train, the rest test.
    pub fn split(&self, train_fraction: f64) -> (Self, Self) {
        let cut = ((self.n_samples as f64) * train_fraction).round() as usize;
        let cut = cut.min(self.n_samples);
        let train: Vec<usize> = (0..cut).collect();
        let test: Vec<usize> = (cut..self.n_samples).collect();
        (self.subset(&train), self.subset(&test))
    }

    /// Every value of feature `i` across samples and time.
    pub fn feature_values(&self, i: usize) -> Vec<f64> {
        self.x.iter().skip(i).step_by(self.n_features).copied().collect()
    }
}

//! Two-state hidden Markov benchmark with known salient cells.
//!
//! Each series follows a two-state Markov chain. Emissions are Gaussian with
//! state-dependent mean and covariance over three features. The label at
//! time `t` is Bernoulli with parameter `sigmoid(x[t, 1])` in state 0 and
//! `sigmoid(x[t, 2])` in state 1, so exactly one cell per timestep is
//! salient and the first feature never is.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DataError, Labels, TimeSeriesDataset};
use crate::numerics::sigmoid;
use crate::par;
use crate::seeding::stream_rng;

pub const HMM_FEATURES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmmConfig {
    pub n_series: usize,
    pub length: usize,
    /// Row-stochastic transition matrix.
    pub transition: [[f64; 2]; 2],
    pub means: [[f64; HMM_FEATURES]; 2],
    pub covariances: [[[f64; HMM_FEATURES]; HMM_FEATURES]; 2],
    pub seed: u64,
}

impl Default for HmmConfig {
    fn default() -> Self {
        let cov = [[0.8, 0.0, 0.0], [0.0, 0.8, 0.2], [0.0, 0.2, 0.8]];
        Self {
            n_series: 1000,
            length: 200,
            transition: [[0.9, 0.1], [0.1, 0.9]],
            means: [[0.1, 1.6, 0.5], [-0.1, -0.4, -1.5]],
            covariances: [cov, cov],
            seed: 0,
        }
    }
}

impl HmmConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_series == 0 || self.length == 0 {
            return Err(DataError::Config("HMM needs at least one series of length >= 1".into()));
        }
        for row in &self.transition {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (row[0] + row[1] - 1.0).abs() > 1e-9 {
                return Err(DataError::Config(format!("transition row {row:?} does not sum to 1")));
            }
        }
        for cov in &self.covariances {
            cholesky3(cov)?;
        }
        Ok(())
    }

    /// Long-run probability of state 0.
    pub fn stationary_state0(&self) -> f64 {
        let leave0 = self.transition[0][1];
        let leave1 = self.transition[1][0];
        if leave0 + leave1 == 0.0 {
            0.5
        } else {
            leave1 / (leave0 + leave1)
        }
    }
}

/// Lower-triangular factor of a symmetric positive-definite 3x3 matrix.
pub fn cholesky3(a: &[[f64; 3]; 3]) -> Result<[[f64; 3]; 3], DataError> {
    for i in 0..3 {
        for j in 0..3 {
            if (a[i][j] - a[j][i]).abs() > 1e-12 {
                return Err(DataError::NotPositiveDefinite);
            }
        }
    }
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if d <= 0.0 {
                    return Err(DataError::NotPositiveDefinite);
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Index of the feature driving the label in `state`.
pub fn salient_feature(state: u8) -> usize {
    if state == 0 {
        1
    } else {
        2
    }
}

/// Bernoulli parameter of the label at one timestep.
pub fn label_probability(x_t: &[f64], state: u8) -> f64 {
    sigmoid(x_t[salient_feature(state)])
}

struct Series {
    x: Vec<f64>,
    states: Vec<u8>,
    labels: Vec<u8>,
}

fn generate_series(cfg: &HmmConfig, chol: &[[[f64; 3]; 3]; 2], index: usize) -> Series {
    let mut rng = stream_rng(cfg.seed, index as u64);
    let t_len = cfg.length;
    let mut x = Vec::with_capacity(t_len * HMM_FEATURES);
    let mut states = Vec::with_capacity(t_len);
    let mut labels = Vec::with_capacity(t_len);
    let mut state: u8 = if rng.random::<f64>() < cfg.stationary_state0() { 0 } else { 1 };
    for t in 0..t_len {
        if t > 0 {
            let stay = cfg.transition[state as usize][state as usize];
            if rng.random::<f64>() >= stay {
                state = 1 - state;
            }
        }
        let z: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let l = &chol[state as usize];
        let mu = &cfg.means[state as usize];
        let xt: Vec<f64> = (0..3).map(|i| mu[i] + (0..=i).map(|k| l[i][k] * z[k]).sum::<f64>()).collect();
        let p = label_probability(&xt, state);
        labels.push(u8::from(rng.random::<f64>() < p));
        states.push(state);
        x.extend_from_slice(&xt);
    }
    Series { x, states, labels }
}

pub fn generate_hmm(cfg: &HmmConfig) -> Result<TimeSeriesDataset, DataError> {
    cfg.validate()?;
    let chol = [cholesky3(&cfg.covariances[0])?, cholesky3(&cfg.covariances[1])?];
    let series = par::map_indices(cfg.n_series, |i| generate_series(cfg, &chol, i));
    let mut x = Vec::with_capacity(cfg.n_series * cfg.length * HMM_FEATURES);
    let mut states = Vec::with_capacity(cfg.n_series * cfg.length);
    let mut labels = Vec::with_capacity(cfg.n_series * cfg.length);
    for s in series {
        x.extend(s.x);
        states.extend(s.states);
        labels.extend(s.labels);
    }
    let true_saliency = states
        .iter()
        .flat_map(|&s| (0..HMM_FEATURES).map(move |i| i == salient_feature(s)))
        .collect();
    let ds = TimeSeriesDataset {
        n_samples: cfg.n_series,
        n_timesteps: cfg.length,
        n_features: HMM_FEATURES,
        x,
        labels: Labels::PerTimestep(labels),
        true_saliency: Some(true_saliency),
        states: Some(states),
        feature_names: vec!["x1".into(), "x2".into(), "x3".into()],
        seed: Some(cfg.seed),
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> HmmConfig {
        HmmConfig {
            n_series: 20,
            length: 50,
            seed,
            ..HmmConfig::default()
        }
    }

    #[test]
    fn state0_marks_second_feature() {
        let ds = generate_hmm(&small(3)).unwrap();
        let states = ds.states.as_ref().unwrap();
        let sal = ds.true_saliency.as_ref().unwrap();
        for (k, &s) in states.iter().enumerate() {
            let cell = &sal[k * 3..k * 3 + 3];
            if s == 0 {
                assert_eq!(cell, &[false, true, false]);
            } else {
                assert_eq!(cell, &[false, false, true]);
            }
        }
    }

    #[test]
    fn exactly_one_salient_cell_per_step() {
        let ds = generate_hmm(&small(4)).unwrap();
        for i in 0..ds.n_samples {
            let marked = ds.saliency(i).unwrap().iter().filter(|&&b| b).count();
            assert_eq!(marked, ds.n_timesteps);
        }
    }

    #[test]
    fn zero_salient_value_gives_even_odds() {
        assert_eq!(label_probability(&[5.0, 0.0, 9.0], 0), 0.5);
        assert_eq!(label_probability(&[5.0, 9.0, 0.0], 1), 0.5);
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        assert_eq!(generate_hmm(&small(11)).unwrap(), generate_hmm(&small(11)).unwrap());
        assert_ne!(generate_hmm(&small(11)).unwrap().x, generate_hmm(&small(12)).unwrap().x);
    }

    #[test]
    fn stored_states_reproduce_label_parameters() {
        let ds = generate_hmm(&small(5)).unwrap();
        let states = ds.states.as_ref().unwrap();
        for k in 0..states.len() {
            let xt = &ds.x[k * 3..k * 3 + 3];
            let p = label_probability(xt, states[k]);
            let direct = 1.0 / (1.0 + (-xt[salient_feature(states[k])]).exp());
            assert!((p - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_non_positive_definite_covariance() {
        let mut cfg = small(1);
        cfg.covariances[1] = [[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(matches!(generate_hmm(&cfg), Err(DataError::NotPositiveDefinite)));
        cfg.covariances[1] = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(matches!(generate_hmm(&cfg), Err(DataError::NotPositiveDefinite)));
    }

    #[test]
    fn rejects_bad_transition_rows() {
        let mut cfg = small(1);
        cfg.transition[0] = [0.5, 0.6];
        assert!(generate_hmm(&cfg).is_err());
    }
}

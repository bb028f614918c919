//! ICU-like stand-in: hourly vitals as autocorrelated Gaussian channels and
//! a sequence label planted in a few channels over the last third of the
//! window.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DataError, Labels, TimeSeriesDataset};
use crate::numerics::sigmoid;
use crate::par;
use crate::seeding::stream_rng;

const VITAL_NAMES: [&str; 12] = [
    "heart_rate",
    "sys_bp",
    "resp_rate",
    "spo2",
    "temperature",
    "dia_bp",
    "glucose",
    "bicarbonate",
    "anion_gap",
    "platelets",
    "lactate",
    "creatinine",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcuConfig {
    pub n_samples: usize,
    pub length: usize,
    pub n_features: usize,
    /// Channels that drive the label.
    pub informative: Vec<usize>,
    /// Slope of the label logit in the late-window score.
    pub label_weight: f64,
    /// Late-window score at which both labels are equally likely.
    pub label_threshold: f64,
    pub seed: u64,
}

impl Default for IcuConfig {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            length: 48,
            n_features: 8,
            informative: vec![1, 2],
            label_weight: 6.0,
            label_threshold: 0.0,
            seed: 0,
        }
    }
}

impl IcuConfig {
    pub fn new(n_samples: usize, length: usize, n_features: usize, seed: u64) -> Self {
        Self {
            n_samples,
            length,
            n_features,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_features < 4 {
            return Err(DataError::Config(format!(
                "ICU-like data needs at least 4 channels, got {}",
                self.n_features
            )));
        }
        if self.n_samples == 0 || self.length < 3 {
            return Err(DataError::Config("ICU-like data needs N >= 1 and T >= 3".into()));
        }
        if self.informative.is_empty() || self.informative.iter().any(|&c| c >= self.n_features) {
            return Err(DataError::Config(format!(
                "informative channels {:?} out of range",
                self.informative
            )));
        }
        Ok(())
    }

    /// First timestep of the window the label depends on.
    pub fn late_start(&self) -> usize {
        self.length - self.length / 3
    }

    /// Lag-one autocorrelation of channel `c`, spread over [0.5, 0.9].
    pub fn autocorrelation(&self, c: usize) -> f64 {
        0.5 + 0.1 * (c % 5) as f64
    }
}

fn simulate(cfg: &IcuConfig, index: usize) -> (Vec<f64>, u8) {
    let mut rng = stream_rng(cfg.seed, index as u64);
    let (t_len, n) = (cfg.length, cfg.n_features);
    let mut x = vec![0.0; t_len * n];
    for c in 0..n {
        let phi = cfg.autocorrelation(c);
        let innov = (1.0 - phi * phi).sqrt();
        let mut v: f64 = rng.sample(StandardNormal);
        for t in 0..t_len {
            if t > 0 {
                let e: f64 = rng.sample(StandardNormal);
                v = phi * v + innov * e;
            }
            x[t * n + c] = v;
        }
    }
    let score = late_score(&x, cfg);
    let p = sigmoid(cfg.label_weight * (score - cfg.label_threshold));
    let y = u8::from(rng.random::<f64>() < p);
    (x, y)
}

/// Mean of the informative channels over the late window of one `[T, n]`
/// sample.
pub fn late_score(x: &[f64], cfg: &IcuConfig) -> f64 {
    let n = cfg.n_features;
    let start = cfg.late_start();
    let mut total = 0.0;
    for t in start..cfg.length {
        for &c in &cfg.informative {
            total += x[t * n + c];
        }
    }
    total / ((cfg.length - start) * cfg.informative.len()) as f64
}

pub fn generate_icu_like(cfg: &IcuConfig) -> Result<TimeSeriesDataset, DataError> {
    cfg.validate()?;
    let sims = par::map_indices(cfg.n_samples, |i| simulate(cfg, i));
    let (n, t_len) = (cfg.n_features, cfg.length);
    let mut x = Vec::with_capacity(cfg.n_samples * t_len * n);
    let mut labels = Vec::with_capacity(cfg.n_samples);
    for (xs, y) in sims {
        x.extend(xs);
        labels.push(y);
    }
    standardize(&mut x, n);
    let start = cfg.late_start();
    let mut truth = vec![false; x.len()];
    for i in 0..cfg.n_samples {
        for t in start..t_len {
            for &c in &cfg.informative {
                truth[(i * t_len + t) * n + c] = true;
            }
        }
    }
    let feature_names = (0..n)
        .map(|c| VITAL_NAMES.get(c).map(|s| s.to_string()).unwrap_or_else(|| format!("channel_{c}")))
        .collect();
    let ds = TimeSeriesDataset {
        n_samples: cfg.n_samples,
        n_timesteps: t_len,
        n_features: n,
        x,
        labels: Labels::PerSequence(labels),
        true_saliency: Some(truth),
        states: None,
        feature_names,
        seed: Some(cfg.seed),
    };
    ds.validate()?;
    Ok(ds)
}

/// Per-channel z-scoring over all samples and timesteps.
fn standardize(x: &mut [f64], n: usize) {
    for c in 0..n {
        let vals: Vec<f64> = x.iter().skip(c).step_by(n).copied().collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        let sd = var.sqrt().max(1e-12);
        for v in x.iter_mut().skip(c).step_by(n) {
            *v = (*v - mean) / sd;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_length_is_48_hours() {
        assert_eq!(IcuConfig::default().length, 48);
    }

    #[test]
    fn channels_are_standardized() {
        let ds = generate_icu_like(&IcuConfig::new(2100, 48, 4, 9)).unwrap();
        for c in 0..4 {
            let v = ds.feature_values(c);
            assert!(v.len() >= 100_000);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
            assert!(mean.abs() < 0.05 && (sd - 1.0).abs() < 0.05, "channel {c}: {mean} {sd}");
        }
    }

    #[test]
    fn rejects_too_few_channels() {
        assert!(generate_icu_like(&IcuConfig::new(10, 48, 3, 0)).is_err());
    }

    #[test]
    fn planted_truth_covers_late_informative_cells() {
        let cfg = IcuConfig::new(3, 12, 5, 1);
        let ds = generate_icu_like(&cfg).unwrap();
        let s = ds.saliency(0).unwrap();
        let marked: Vec<(usize, usize)> =
            (0..12 * 5).filter(|&k| s[k]).map(|k| (k / 5, k % 5)).collect();
        assert_eq!(marked.len(), 4 * cfg.informative.len());
        assert!(marked.iter().all(|&(t, c)| t >= 8 && cfg.informative.contains(&c)));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_icu_like(&IcuConfig::new(30, 48, 6, 4)).unwrap();
        let b = generate_icu_like(&IcuConfig::new(30, 48, 6, 4)).unwrap();
        assert_eq!(a, b);
    }
}

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::classifier::{batch_steps, ClassifierParams, ClassifierVars, Readout};
use super::NetError;
use crate::datagen::TimeSeriesDataset;
use crate::numerics::{AdamConfig, AdamState, Graph, Tensor};
use crate::seeding::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_size: 32,
            epochs: 50,
            batch_size: 32,
            lr: 0.001,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training cross-entropy of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Fits a one-layer forward GRU classifier with minibatch Adam on
/// cross-entropy. Per-timestep labels give a per-timestep readout, sequence
/// labels a final-step readout.
pub fn train_classifier(ds: &TimeSeriesDataset, cfg: &TrainConfig) -> Result<(ClassifierParams, TrainReport), NetError> {
    if ds.n_samples == 0 || ds.n_timesteps == 0 {
        return Err(NetError::EmptySequence);
    }
    if cfg.batch_size == 0 || cfg.hidden_size == 0 {
        return Err(NetError::Invalid("batch size and hidden size must be positive".into()));
    }
    let readout = if ds.is_per_timestep() {
        Readout::PerTimestep
    } else {
        Readout::FinalStep
    };
    let mut init_rng = stream_rng(cfg.seed, 0);
    let mut params = ClassifierParams::init(ds.n_features, cfg.hidden_size, 2, readout, &mut init_rng);
    let names = params.tensor_names();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut adam = AdamState::new(&params.tensors(), AdamConfig::with_lr(cfg.lr));
    let mut shuffle_rng = stream_rng(cfg.seed, 1);
    let mut order: Vec<usize> = (0..ds.n_samples).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grads, weight) = batch_loss(&params, ds, idx)?;
            if !loss.is_finite() {
                return Err(NetError::Diverged { epoch, batch, loss });
            }
            let grad_refs: Vec<Option<&[f64]>> = grads.iter().map(|g| g.as_deref()).collect();
            adam.step(&mut params.tensors_mut(), &grad_refs, &name_refs)?;
            total += loss * weight as f64;
            count += weight;
        }
        let mean = total / count as f64;
        debug!("epoch {epoch}: loss {mean:.5}");
        epoch_losses.push(mean);
    }
    if let (Some(first), Some(last)) = (epoch_losses.first(), epoch_losses.last()) {
        info!("trained {} epochs, loss {first:.4} -> {last:.4}", cfg.epochs);
    }
    Ok((params, TrainReport { epoch_losses }))
}

type Grads = Vec<Option<Vec<f64>>>;

fn batch_loss(params: &ClassifierParams, ds: &TimeSeriesDataset, idx: &[usize]) -> Result<(f64, Grads, usize), NetError> {
    let (t_len, n) = (ds.n_timesteps, ds.n_features);
    let b = idx.len();
    let x: Vec<f64> = idx.iter().flat_map(|&i| ds.sample_slice(i).iter().copied()).collect();
    let mut g = Graph::new();
    let steps: Vec<_> = batch_steps(&x, b, t_len, n).into_iter().map(|s| g.constant(s)).collect();
    let vars = ClassifierVars::bind(&mut g, params, true);
    let logits = vars.logits(&mut g, &steps)?;
    let positions = logits.len();
    let mut terms = Vec::with_capacity(positions);
    for (p, &z) in logits.iter().enumerate() {
        let mut target = vec![0.0; b * 2];
        for (r, &i) in idx.iter().enumerate() {
            let labels = ds.labels_of(i);
            let y = if params.readout == Readout::PerTimestep { labels[p] } else { labels[0] };
            target[r * 2 + usize::from(y)] = 1.0;
        }
        let ce = g.cross_entropy_with_logits(z, &Tensor::new(vec![b, 2], target)?)?;
        terms.push(g.sum(ce));
    }
    let total = g.add_all(&terms)?;
    let weight = b * positions;
    let loss = g.scale(total, 1.0 / weight as f64);
    g.backward(loss)?;
    let grads = vars.leaves().into_iter().map(|v| g.grad(v).map(<[f64]>::to_vec)).collect();
    Ok((g.value(loss).data()[0], grads, weight))
}

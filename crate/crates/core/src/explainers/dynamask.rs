use serde::{Deserialize, Serialize};

use super::learned::{gather_rows, mean_cross_entropy, preservation_targets, row_sums, stacked};
use super::{check_frozen, check_inputs, check_unchanged, outputs_of, ExplainerError, ExplanationMeta, SaliencyMap};
use crate::nets::{split_time, SequenceModel};
use crate::numerics::{AdamConfig, AdamState, Graph, Tensor};
use crate::par;
use crate::perturbation::{blend_graph, fixed_surrogate, FixedKind, FixedPerturbationConfig, Mask};

/// Mask-only baseline with a fixed perturbation and an area constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamaskConfig {
    pub perturbation: FixedPerturbationConfig,
    /// Fraction of cells the mask is pushed to keep.
    pub area: f64,
    pub iterations: usize,
    pub lr: f64,
    pub optimizer: MaskOptimizer,
    /// Weight of the area term at the first iteration.
    pub area_weight_init: f64,
    /// Factor by which the area weight grows over the whole run.
    pub area_weight_dilation: f64,
    pub target_class: Option<usize>,
    pub mask_init: f64,
    pub batch_size: usize,
}

impl Default for DynamaskConfig {
    fn default() -> Self {
        Self {
            perturbation: FixedPerturbationConfig::default(),
            area: 0.1,
            iterations: 500,
            lr: 0.1,
            optimizer: MaskOptimizer::Momentum { momentum: 0.9 },
            area_weight_init: 0.5,
            area_weight_dilation: 100.0,
            target_class: None,
            mask_init: 0.5,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskOptimizer {
    Adam,
    /// Plain gradient descent with heavy-ball momentum.
    Momentum { momentum: f64 },
}

enum Stepper {
    Adam(AdamState),
    Momentum { velocity: Vec<f64>, momentum: f64, lr: f64 },
}

impl Stepper {
    fn new(mask: &Tensor, cfg: &DynamaskConfig) -> Self {
        match cfg.optimizer {
            MaskOptimizer::Adam => Stepper::Adam(AdamState::new(&[mask], AdamConfig::with_lr(cfg.lr))),
            MaskOptimizer::Momentum { momentum } => Stepper::Momentum {
                velocity: vec![0.0; mask.len()],
                momentum,
                lr: cfg.lr,
            },
        }
    }

    fn step(&mut self, mask: &mut Tensor, grad: &[f64]) -> Result<(), ExplainerError> {
        match self {
            Stepper::Adam(state) => state.step(&mut [mask], &[Some(grad)], &["mask"])?,
            Stepper::Momentum { velocity, momentum, lr } => {
                for ((m, v), g) in mask.data_mut().iter_mut().zip(velocity.iter_mut()).zip(grad) {
                    *v = *momentum * *v + g;
                    *m -= *lr * *v;
                }
            }
        }
        Ok(())
    }
}

impl DynamaskConfig {
    pub fn validate(&self) -> Result<(), ExplainerError> {
        self.perturbation.validate()?;
        let bad = |m: String| Err(ExplainerError::Config(m));
        if !(self.area > 0.0 && self.area <= 1.0) {
            return bad(format!("area {} outside (0, 1]", self.area));
        }
        if !(self.lr > 0.0) {
            return bad("learning rate must be positive".into());
        }
        if let MaskOptimizer::Momentum { momentum } = self.optimizer {
            if !(0.0..1.0).contains(&momentum) {
                return bad(format!("momentum {momentum} outside [0, 1)"));
            }
        }
        if !(self.area_weight_init >= 0.0 && self.area_weight_dilation > 0.0) {
            return bad("area weight schedule must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.mask_init) {
            return bad(format!("mask init {} outside [0, 1]", self.mask_init));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        Ok(())
    }

    fn area_weight(&self, iteration: usize) -> f64 {
        let progress = iteration as f64 / self.iterations.max(1) as f64;
        self.area_weight_init * self.area_weight_dilation.powf(progress)
    }
}

/// Ascending copy of `values`.
pub fn vecsort(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Reference `r_a`: `round((1 - a) * len)` zeros followed by ones.
pub fn target_area(len: usize, area: f64) -> Vec<f64> {
    let ones = ((area * len as f64).round() as usize).min(len);
    let mut r = vec![0.0; len - ones];
    r.resize(len, 1.0);
    r
}

/// Mean squared distance between the sorted mask and `r_a`.
pub fn area_regularizer(mask: &[f64], area: f64) -> f64 {
    let r = target_area(mask.len(), area);
    vecsort(mask).iter().zip(&r).map(|(m, r)| (m - r).powi(2)).sum::<f64>() / mask.len().max(1) as f64
}

pub fn explain_dynamask<M: SequenceModel + ?Sized>(
    x: &Tensor,
    f: &M,
    cfg: &DynamaskConfig,
) -> Result<SaliencyMap, ExplainerError> {
    let mut maps = explain_dynamask_batch(std::slice::from_ref(x), f, cfg)?;
    Ok(maps.remove(0))
}

pub fn explain_dynamask_batch<M: SequenceModel + ?Sized>(
    xs: &[Tensor],
    f: &M,
    cfg: &DynamaskConfig,
) -> Result<Vec<SaliencyMap>, ExplainerError> {
    cfg.validate()?;
    let (steps, features) = check_inputs(xs, f.input_size())?;
    let before = check_frozen(f)?;
    let chunks: Vec<usize> = (0..xs.len()).step_by(cfg.batch_size).collect();
    let results = par::map_indices(chunks.len(), |c| {
        let lo = chunks[c];
        let hi = (lo + cfg.batch_size).min(xs.len());
        run_chunk(&xs[lo..hi], lo as u64, f, cfg, steps, features)
    });
    check_unchanged(f, before)?;
    let mut out = Vec::with_capacity(xs.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

fn run_chunk<M: SequenceModel + ?Sized>(
    xs: &[Tensor],
    first_id: u64,
    f: &M,
    cfg: &DynamaskConfig,
    steps: usize,
    features: usize,
) -> Result<Vec<SaliencyMap>, ExplainerError> {
    let b = xs.len();
    let cells = steps * features;
    let flat: Vec<f64> = xs.iter().flat_map(|x| x.data().iter().copied()).collect();
    let targets = preservation_targets(&outputs_of(f, &flat, b, steps, features)?, cfg.target_class, f.classes())?;
    let surrogates = match cfg.perturbation.kind {
        FixedKind::GaussianBlur => None,
        _ => Some(
            xs.iter()
                .map(|x| Ok(fixed_surrogate(x, &cfg.perturbation)?))
                .collect::<Result<Vec<_>, ExplainerError>>()?,
        ),
    };
    let reference = target_area(cells, cfg.area);

    let mut masks: Vec<Mask> = (0..b).map(|_| Mask::constant(steps, features, cfg.mask_init)).collect();
    let mut opts: Vec<Stepper> = masks.iter().map(|m| Stepper::new(&m.values, cfg)).collect();
    let mut histories: Vec<Vec<f64>> = vec![Vec::new(); b];
    let mut terms = vec![[0.0; 2]; b];
    let rows: Vec<usize> = (0..b).collect();
    let row_targets = gather_rows(&targets, &rows);
    let tiled_reference = Tensor::new(vec![b, cells], reference.repeat(b))?;

    for iteration in 0..cfg.iterations {
        let mut g = Graph::new();
        let xv = g.constant(Tensor::new(vec![b, steps, features], flat.clone())?);
        let parts: Vec<&[f64]> = masks.iter().map(|m| m.values.data()).collect();
        let mv = g.param(stacked(&parts, steps, features));
        let perturbed = match &surrogates {
            None => g.gaussian_blur(xv, mv, cfg.perturbation.sigma_max)?,
            Some(s) => {
                let parts: Vec<&[f64]> = s.iter().map(Tensor::data).collect();
                let sv = g.constant(stacked(&parts, steps, features));
                blend_graph(&mut g, xv, mv, sv)?
            }
        };
        let phi_steps = split_time(&mut g, perturbed)?;
        let logits = f.logits_graph(&mut g, &phi_steps)?;
        let ce = mean_cross_entropy(&mut g, &logits, &row_targets)?;

        let rows_m = g.reshape(mv, &[b, cells])?;
        let sorted = g.sort_rows(rows_m);
        let rv = g.constant(tiled_reference.clone());
        let diff = g.sub(sorted, rv)?;
        let sq = g.mul(diff, diff)?;
        let reg_sum = row_sums(&mut g, sq, b, cells)?;
        let reg = g.scale(reg_sum, 1.0 / cells as f64);
        let weighted = g.scale(reg, cfg.area_weight(iteration));
        let loss = g.add(ce, weighted)?;
        let total = g.sum(loss);
        g.backward(total)?;

        let grad = g.grad(mv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; b * cells]);
        let (loss_v, ce_v, reg_v) = (g.value(loss).data(), g.value(ce).data(), g.value(reg).data());
        for r in 0..b {
            if !loss_v[r].is_finite() {
                return Err(ExplainerError::Diverged {
                    iteration,
                    sample: first_id + r as u64,
                });
            }
            histories[r].push(loss_v[r]);
            terms[r] = [ce_v[r], reg_v[r]];
            opts[r].step(&mut masks[r].values, &grad[r * cells..(r + 1) * cells])?;
            masks[r].project();
        }
    }

    Ok(masks
        .into_iter()
        .zip(histories)
        .zip(terms)
        .map(|((m, history), [ce, reg])| {
            let mut meta = ExplanationMeta {
                iterations: history.len(),
                final_loss: history.last().copied(),
                loss_history: history,
                ..ExplanationMeta::default()
            };
            if meta.iterations > 0 {
                meta.loss_terms.insert("cross_entropy".into(), ce);
                meta.loss_terms.insert("area".into(), reg);
            }
            SaliencyMap {
                method: "dynamask".into(),
                n_timesteps: steps,
                n_features: features,
                scores: m.values.into_data(),
                meta,
            }
        })
        .collect())
}

use serde::{Deserialize, Serialize};

use super::{
    check_frozen, check_inputs, check_unchanged, min_max_normalize, outputs_of, target_classes, ExplainerError,
    ExplanationMeta, SaliencyMap,
};
use crate::nets::{split_time, SequenceModel};
use crate::numerics::{Graph, Tensor};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IgConfig {
    /// Riemann midpoints along the straight path.
    pub steps: usize,
    /// Constant baseline value for every cell.
    pub baseline: f64,
    pub target_class: Option<usize>,
    /// Samples per recorded graph.
    pub batch_size: usize,
}

impl Default for IgConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            baseline: 0.0,
            target_class: None,
            batch_size: 4,
        }
    }
}

/// Integrated gradients of the target-class score. Raw attributions are kept
/// in the metadata; scores are min-max scaled magnitudes.
pub fn integrated_gradients<M: SequenceModel + ?Sized>(
    x: &Tensor,
    f: &M,
    cfg: &IgConfig,
) -> Result<SaliencyMap, ExplainerError> {
    let mut maps = integrated_gradients_batch(std::slice::from_ref(x), f, cfg)?;
    Ok(maps.remove(0))
}

pub fn integrated_gradients_batch<M: SequenceModel + ?Sized>(
    xs: &[Tensor],
    f: &M,
    cfg: &IgConfig,
) -> Result<Vec<SaliencyMap>, ExplainerError> {
    if cfg.steps == 0 || cfg.batch_size == 0 {
        return Err(ExplainerError::Config("steps and batch size must be positive".into()));
    }
    let (steps, features) = check_inputs(xs, f.input_size())?;
    let before = check_frozen(f)?;
    let chunks: Vec<usize> = (0..xs.len()).step_by(cfg.batch_size).collect();
    let results = par::map_indices(chunks.len(), |c| {
        let lo = chunks[c];
        let hi = (lo + cfg.batch_size).min(xs.len());
        run_chunk(&xs[lo..hi], f, cfg, steps, features)
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
    f: &M,
    cfg: &IgConfig,
    steps: usize,
    features: usize,
) -> Result<Vec<SaliencyMap>, ExplainerError> {
    let b = xs.len();
    let cells = steps * features;
    let k = cfg.steps;
    let flat: Vec<f64> = xs.iter().flat_map(|x| x.data().iter().copied()).collect();
    let original = outputs_of(f, &flat, b, steps, features)?;
    let targets = target_classes(&original, cfg.target_class, f.classes())?;

    // rows are sample-major: sample s, midpoint j at row s * k + j
    let mut path = Vec::with_capacity(b * k * cells);
    for x in xs {
        for j in 0..k {
            let alpha = (j as f64 + 0.5) / k as f64;
            path.extend(x.data().iter().map(|&v| cfg.baseline + alpha * (v - cfg.baseline)));
        }
    }
    let rows = b * k;
    let mut g = Graph::new();
    let xv = g.param(Tensor::new(vec![rows, steps, features], path)?);
    let step_vars = split_time(&mut g, xv)?;
    let outputs = f.outputs_graph(&mut g, &step_vars)?;
    let classes = f.classes();
    let mut picked = Vec::with_capacity(outputs.len());
    for (pos, &o) in outputs.iter().enumerate() {
        let mut select = vec![0.0; rows * classes];
        for (s, cs) in targets.iter().enumerate() {
            for j in 0..k {
                select[(s * k + j) * classes + cs[pos]] = 1.0;
            }
        }
        let sv = g.constant(Tensor::new(vec![rows, classes], select)?);
        let prod = g.mul(o, sv)?;
        picked.push(g.sum(prod));
    }
    let total = g.add_all(&picked)?;
    g.backward(total)?;
    let grad = g.grad(xv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; rows * cells]);

    Ok(xs
        .iter()
        .enumerate()
        .map(|(s, x)| {
            let raw: Vec<f64> = (0..cells)
                .map(|c| {
                    let mean = (0..k).map(|j| grad[(s * k + j) * cells + c]).sum::<f64>() / k as f64;
                    (x.data()[c] - cfg.baseline) * mean
                })
                .collect();
            let magnitude: Vec<f64> = raw.iter().map(|v| v.abs()).collect();
            SaliencyMap {
                method: "integrated_gradients".into(),
                n_timesteps: steps,
                n_features: features,
                scores: min_max_normalize(&magnitude),
                meta: ExplanationMeta {
                    raw: Some(raw),
                    ..ExplanationMeta::default()
                },
            }
        })
        .collect())
}

use serde::{Deserialize, Serialize};

use super::{check_frozen, check_inputs, check_unchanged, outputs_of, target_classes, ExplainerError, ExplanationMeta, SaliencyMap};
use crate::nets::{split_time, SequenceModel};
use crate::numerics::{AdamConfig, AdamState, Graph, Tensor, Var};
use crate::par;
use crate::perturbation::{blend_graph, stack_time, GeneratorBatch, GeneratorKind, Mask, PerturbationGenerator};
use crate::seeding::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnedMode {
    /// Keep the prediction with as little of the input as possible.
    Preservation,
    /// Move the prediction towards that of the all-zero input while
    /// removing as little as possible.
    Deletion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainerConfig {
    /// Weight of the mask-size term.
    pub lambda1: f64,
    /// Weight of the surrogate-size term.
    pub lambda2: f64,
    pub mode: LearnedMode,
    pub generator: GeneratorKind,
    /// Generator hidden size; the feature count when unset.
    pub generator_hidden: Option<usize>,
    pub mask_lr: f64,
    pub generator_lr: f64,
    pub iterations: usize,
    /// Class whose probability is preserved. Unset means the model's own
    /// output distribution is the target.
    pub target_class: Option<usize>,
    pub seed: u64,
    pub mask_init: f64,
    /// Stop once the loss improved less than this over `early_stop_window`
    /// iterations.
    pub early_stop_tol: f64,
    pub early_stop_window: usize,
    /// Samples optimised together in one graph.
    pub batch_size: usize,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            mode: LearnedMode::Preservation,
            generator: GeneratorKind::Bidirectional,
            generator_hidden: None,
            mask_lr: 0.01,
            generator_lr: 0.001,
            iterations: 500,
            target_class: None,
            seed: 0,
            mask_init: 0.5,
            early_stop_tol: 1e-6,
            early_stop_window: 10,
            batch_size: 32,
        }
    }
}

impl ExplainerConfig {
    pub fn validate(&self) -> Result<(), ExplainerError> {
        let bad = |m: String| Err(ExplainerError::Config(m));
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad(format!("lambdas must be non-negative, got {} and {}", self.lambda1, self.lambda2));
        }
        if !(self.mask_lr > 0.0 && self.generator_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.mask_init) {
            return bad(format!("mask init {} outside [0, 1]", self.mask_init));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        Ok(())
    }

    pub fn method_name(&self) -> String {
        let mode = match self.mode {
            LearnedMode::Preservation => "",
            LearnedMode::Deletion => "_deletion",
        };
        format!("learned_{}{mode}", self.generator.label())
    }
}

/// Learned-perturbation explanation of one `[T, n]` sample.
pub fn explain_learned<M: SequenceModel + ?Sized>(
    x: &Tensor,
    f: &M,
    cfg: &ExplainerConfig,
) -> Result<SaliencyMap, ExplainerError> {
    let mut maps = explain_learned_batch(std::slice::from_ref(x), &[0], f, cfg)?;
    Ok(maps.remove(0))
}

/// Explains many samples. `ids` seed each sample's generator, so a sample
/// gets the same map whether explained alone or within any batch.
pub fn explain_learned_batch<M: SequenceModel + ?Sized>(
    xs: &[Tensor],
    ids: &[u64],
    f: &M,
    cfg: &ExplainerConfig,
) -> Result<Vec<SaliencyMap>, ExplainerError> {
    cfg.validate()?;
    if ids.len() != xs.len() {
        return Err(ExplainerError::Config(format!("{} ids for {} samples", ids.len(), xs.len())));
    }
    let (steps, features) = check_inputs(xs, f.input_size())?;
    let before = check_frozen(f)?;
    let chunks: Vec<usize> = (0..xs.len()).step_by(cfg.batch_size).collect();
    let results = par::map_indices(chunks.len(), |c| {
        let lo = chunks[c];
        let hi = (lo + cfg.batch_size).min(xs.len());
        run_chunk(&xs[lo..hi], &ids[lo..hi], f, cfg, steps, features)
    });
    check_unchanged(f, before)?;
    let mut out = Vec::with_capacity(xs.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// `[rows]` sums of a `[rows, cols]` variable.
pub(crate) fn row_sums(g: &mut Graph, v: Var, rows: usize, cols: usize) -> Result<Var, ExplainerError> {
    let flat = g.reshape(v, &[rows, cols])?;
    let ones = g.constant(Tensor::full(&[cols, 1], 1.0));
    let s = g.matmul(flat, ones)?;
    Ok(g.reshape(s, &[rows])?)
}

/// Soft cross-entropy against per-position target distributions, averaged
/// over positions: `[rows]`.
pub(crate) fn mean_cross_entropy(
    g: &mut Graph,
    logits: &[Var],
    targets: &[Tensor],
) -> Result<Var, ExplainerError> {
    let terms = logits
        .iter()
        .zip(targets)
        .map(|(&z, t)| g.cross_entropy_with_logits(z, t))
        .collect::<Result<Vec<_>, _>>()?;
    let total = g.add_all(&terms)?;
    Ok(g.scale(total, 1.0 / logits.len() as f64))
}

/// Rows `rows` of each per-position `[B, p]` tensor.
pub(crate) fn gather_rows(tables: &[Tensor], rows: &[usize]) -> Vec<Tensor> {
    tables
        .iter()
        .map(|t| {
            let p = t.last_dim();
            let data = rows.iter().flat_map(|&r| t.row(r).iter().copied()).collect();
            Tensor::new(vec![rows.len(), p], data).expect("shape")
        })
        .collect()
}

pub(crate) fn stacked(parts: &[&[f64]], steps: usize, features: usize) -> Tensor {
    let data = parts.iter().flat_map(|p| p.iter().copied()).collect();
    Tensor::new(vec![parts.len(), steps, features], data).expect("shape")
}

/// One-hot targets of a preservation game: the model's predicted class at
/// every output position, or a forced class.
pub(crate) fn preservation_targets(
    original: &[Tensor],
    target_class: Option<usize>,
    classes: usize,
) -> Result<Vec<Tensor>, ExplainerError> {
    let picked = target_classes(original, target_class, classes)?;
    let b = picked.len();
    Ok((0..original.len())
        .map(|pos| {
            let mut onehot = vec![0.0; b * classes];
            for (r, cs) in picked.iter().enumerate() {
                onehot[r * classes + cs[pos]] = 1.0;
            }
            Tensor::new(vec![b, classes], onehot).expect("shape")
        })
        .collect())
}

struct SampleState {
    id: u64,
    mask: Mask,
    generator: PerturbationGenerator,
    mask_opt: AdamState,
    gen_opt: AdamState,
    history: Vec<f64>,
    terms: [f64; 3],
    active: bool,
}

fn run_chunk<M: SequenceModel + ?Sized>(
    xs: &[Tensor],
    ids: &[u64],
    f: &M,
    cfg: &ExplainerConfig,
    steps: usize,
    features: usize,
) -> Result<Vec<SaliencyMap>, ExplainerError> {
    let b = xs.len();
    let cells = steps * features;
    let flat: Vec<f64> = xs.iter().flat_map(|x| x.data().iter().copied()).collect();
    let original = outputs_of(f, &flat, b, steps, features)?;
    let targets = match cfg.mode {
        LearnedMode::Preservation => preservation_targets(&original, cfg.target_class, f.classes())?,
        LearnedMode::Deletion => preservation_targets(&outputs_of(f, &vec![0.0; flat.len()], b, steps, features)?, None, f.classes())?,
    };
    let hidden = cfg.generator_hidden.unwrap_or(features);

    let mut states: Vec<SampleState> = ids
        .iter()
        .map(|&id| {
            let mut rng = stream_rng(cfg.seed, id);
            let generator = PerturbationGenerator::init(cfg.generator, features, hidden, &mut rng);
            let mask = Mask::constant(steps, features, cfg.mask_init);
            let mask_opt = AdamState::new(&[&mask.values], AdamConfig::with_lr(cfg.mask_lr));
            let gen_opt = AdamState::new(&generator.tensors(), AdamConfig::with_lr(cfg.generator_lr));
            SampleState {
                id,
                mask,
                generator,
                mask_opt,
                gen_opt,
                history: Vec::new(),
                terms: [0.0; 3],
                active: true,
            }
        })
        .collect();
    let gen_names: Vec<String> = (0..states[0].generator.tensors().len()).map(|k| format!("generator[{k}]")).collect();
    let gen_names: Vec<&str> = gen_names.iter().map(String::as_str).collect();

    for iteration in 0..cfg.iterations {
        let act: Vec<usize> = (0..b).filter(|&r| states[r].active).collect();
        if act.is_empty() {
            break;
        }
        let a = act.len();
        let mut g = Graph::new();
        let x_parts: Vec<&[f64]> = act.iter().map(|&r| xs[r].data()).collect();
        let xv = g.constant(stacked(&x_parts, steps, features));
        let m_parts: Vec<&[f64]> = act.iter().map(|&r| states[r].mask.values.data()).collect();
        let mv = g.param(stacked(&m_parts, steps, features));
        let gens: Vec<&PerturbationGenerator> = act.iter().map(|&r| &states[r].generator).collect();
        let gen_batch = GeneratorBatch::stack(&gens);
        let gen_vars = gen_batch.bind(&mut g);

        let x_steps = split_time(&mut g, xv)?;
        let nn_steps = gen_batch.run(&mut g, &gen_vars, &x_steps)?;
        let nn = stack_time(&mut g, &nn_steps)?;
        let phi = blend_graph(&mut g, xv, mv, nn)?;
        let phi_steps = split_time(&mut g, phi)?;
        let logits = f.logits_graph(&mut g, &phi_steps)?;
        let ce = mean_cross_entropy(&mut g, &logits, &gather_rows(&targets, &act))?;

        let mask_sum = row_sums(&mut g, mv, a, cells)?;
        let mask_term = match cfg.mode {
            LearnedMode::Preservation => g.scale(mask_sum, 1.0 / cells as f64),
            LearnedMode::Deletion => g.affine(mask_sum, -1.0 / cells as f64, 1.0),
        };
        let gen_term = if cfg.generator == GeneratorKind::Zero {
            None
        } else {
            let abs = g.abs(nn);
            let s = row_sums(&mut g, abs, a, cells)?;
            Some(g.scale(s, 1.0 / cells as f64))
        };
        let weighted_mask = g.scale(mask_term, cfg.lambda1);
        let mut loss = g.add(ce, weighted_mask)?;
        if let Some(gt) = gen_term {
            let weighted = g.scale(gt, cfg.lambda2);
            loss = g.add(loss, weighted)?;
        }
        let total = g.sum(loss);
        g.backward(total)?;

        let mask_grad = g.grad(mv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; a * cells]);
        let gen_grads: Vec<Vec<f64>> = gen_vars
            .iter()
            .zip(&gen_batch.tensors)
            .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
            .collect();
        let loss_vals = g.value(loss).data().to_vec();
        let ce_vals = g.value(ce).data().to_vec();
        let mask_vals = g.value(mask_term).data().to_vec();
        let gen_vals = gen_term.map(|v| g.value(v).data().to_vec());

        for (k, &r) in act.iter().enumerate() {
            let s = &mut states[r];
            let value = loss_vals[k];
            if !value.is_finite() {
                return Err(ExplainerError::Diverged { iteration, sample: s.id });
            }
            s.history.push(value);
            s.terms = [ce_vals[k], mask_vals[k], gen_vals.as_ref().map_or(0.0, |v| v[k])];

            let grad = &mask_grad[k * cells..(k + 1) * cells];
            s.mask_opt.step(&mut [&mut s.mask.values], &[Some(grad)], &["mask"])?;
            s.mask.project();
            let rows: Vec<Option<&[f64]>> = gen_grads
                .iter()
                .enumerate()
                .map(|(j, gr)| Some(gen_batch.row_slice(j, gr, k)))
                .collect();
            s.gen_opt.step(&mut s.generator.tensors_mut(), &rows, &gen_names)?;

            let w = cfg.early_stop_window;
            let h = &s.history;
            if w > 0 && h.len() > w && h[h.len() - 1 - w] - h[h.len() - 1] < cfg.early_stop_tol {
                s.active = false;
            }
        }
    }

    let name = cfg.method_name();
    Ok(states
        .into_iter()
        .map(|s| {
            let scores = s.mask.values.data().to_vec();
            let mut meta = ExplanationMeta {
                iterations: s.history.len(),
                final_loss: s.history.last().copied(),
                loss_history: s.history,
                ..ExplanationMeta::default()
            };
            if meta.iterations > 0 {
                for (key, v) in ["cross_entropy", "mask_size", "perturbation_size"].iter().zip(s.terms) {
                    meta.loss_terms.insert((*key).to_string(), v);
                }
            }
            SaliencyMap {
                method: name.clone(),
                n_timesteps: steps,
                n_features: features,
                scores,
                meta,
            }
        })
        .collect())
}

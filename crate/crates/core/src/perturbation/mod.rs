//! Perturbation operators: fixed temporal surrogates (moving averages and a
//! mask-dependent Gaussian blur) and the learned blend
//! `m * x + (1 - m) * NN(x)`.

mod generator;

pub use generator::{GeneratorBatch, GeneratorKind, PerturbationGenerator};

use serde::{Deserialize, Serialize};

use crate::numerics::{Graph, NumericsError, Tensor, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PerturbationError {
    #[error("shape mismatch: x {x:?}, mask {mask:?}")]
    Shape { x: Vec<usize>, mask: Vec<usize> },
    #[error("invalid perturbation config: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Net(#[from] crate::nets::NetError),
}

/// Saliency mask over a `[T, n]` sample, kept inside `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub values: Tensor,
}

impl Mask {
    pub fn constant(steps: usize, features: usize, value: f64) -> Self {
        Self {
            values: Tensor::full(&[steps, features], value.clamp(0.0, 1.0)),
        }
    }

    /// Clamps every entry into `[0, 1]`.
    pub fn project(&mut self) {
        project_unit(self.values.data_mut());
    }

    pub fn within_bounds(&self) -> bool {
        self.values.data().iter().all(|v| (0.0..=1.0).contains(v))
    }
}

pub(crate) fn project_unit(values: &mut [f64]) {
    for v in values {
        *v = v.clamp(0.0, 1.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedKind {
    WindowAverage,
    PastWindowAverage,
    GaussianBlur,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedPerturbationConfig {
    pub kind: FixedKind,
    /// Window half-width in timesteps for the averaging kinds.
    pub window: usize,
    /// Largest blur bandwidth in timesteps.
    pub sigma_max: f64,
}

impl Default for FixedPerturbationConfig {
    fn default() -> Self {
        Self {
            kind: FixedKind::GaussianBlur,
            window: 2,
            sigma_max: 2.0,
        }
    }
}

impl FixedPerturbationConfig {
    pub fn validate(&self) -> Result<(), PerturbationError> {
        if !(self.sigma_max > 0.0) {
            return Err(PerturbationError::Config(format!("sigma_max must be positive, got {}", self.sigma_max)));
        }
        Ok(())
    }
}

fn check_sequence(x: &Tensor) -> Result<(usize, usize), PerturbationError> {
    match x.shape() {
        [t, n] => Ok((*t, *n)),
        s => Err(PerturbationError::Shape {
            x: s.to_vec(),
            mask: vec![],
        }),
    }
}

fn windowed_mean(x: &Tensor, window: impl Fn(usize, usize) -> (usize, usize)) -> Result<Tensor, PerturbationError> {
    let (t_len, n) = check_sequence(x)?;
    let mut out = Tensor::zeros(&[t_len, n]);
    for t in 0..t_len {
        let (lo, hi) = window(t, t_len);
        for i in 0..n {
            let s: f64 = (lo..=hi).map(|k| x.at2(k, i)).sum();
            out.set2(t, i, s / (hi - lo + 1) as f64);
        }
    }
    Ok(out)
}

/// Centred moving average over `[t - W, t + W]`, truncated at the ends.
pub fn window_average(x: &Tensor, window: usize) -> Result<Tensor, PerturbationError> {
    windowed_mean(x, |t, len| (t.saturating_sub(window), (t + window).min(len - 1)))
}

/// Trailing moving average over `[t - W, t]`, truncated at the start.
pub fn past_window_average(x: &Tensor, window: usize) -> Result<Tensor, PerturbationError> {
    windowed_mean(x, |t, _| (t.saturating_sub(window), t))
}

/// Normalised Gaussian weights centred on `t` over a series of `len` steps,
/// truncated beyond `4 * sigma`. Returns the first covered index and the
/// weights. A non-positive `sigma` yields the identity kernel.
pub fn gaussian_weights(len: usize, t: usize, sigma: f64) -> (usize, Vec<f64>) {
    if !(sigma > 0.0) {
        return (t, vec![1.0]);
    }
    let radius = (4.0 * sigma).floor() as usize;
    let lo = t.saturating_sub(radius);
    let hi = (t + radius).min(len - 1);
    let mut w: Vec<f64> = (lo..=hi)
        .map(|j| {
            let d = j as f64 - t as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    (lo, w)
}

/// Per-cell temporal blur with bandwidth `sigma_max * (1 - m[t, i])`.
pub fn gaussian_blur(x: &Tensor, m: &Tensor, sigma_max: f64) -> Result<Tensor, PerturbationError> {
    let (t_len, n) = check_sequence(x)?;
    if m.shape() != x.shape() {
        return Err(PerturbationError::Shape {
            x: x.shape().to_vec(),
            mask: m.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(&[t_len, n]);
    for t in 0..t_len {
        for i in 0..n {
            let (start, w) = gaussian_weights(t_len, t, sigma_max * (1.0 - m.at2(t, i)));
            out.set2(t, i, w.iter().enumerate().map(|(j, wj)| wj * x.at2(start + j, i)).sum());
        }
    }
    Ok(out)
}

/// Cellwise `m * x + (1 - m) * surrogate`.
pub fn blend(x: &Tensor, m: &Tensor, surrogate: &Tensor) -> Result<Tensor, PerturbationError> {
    if m.shape() != x.shape() || surrogate.shape() != x.shape() {
        return Err(PerturbationError::Shape {
            x: x.shape().to_vec(),
            mask: m.shape().to_vec(),
        });
    }
    let data = x
        .data()
        .iter()
        .zip(m.data())
        .zip(surrogate.data())
        .map(|((&xv, &mv), &s)| mv * xv + (1.0 - mv) * s)
        .collect();
    Ok(Tensor::new(x.shape().to_vec(), data)?)
}

/// The surrogate a fixed perturbation blends towards.
pub fn fixed_surrogate(x: &Tensor, cfg: &FixedPerturbationConfig) -> Result<Tensor, PerturbationError> {
    match cfg.kind {
        FixedKind::WindowAverage => window_average(x, cfg.window),
        FixedKind::PastWindowAverage => past_window_average(x, cfg.window),
        FixedKind::GaussianBlur => Err(PerturbationError::Config("the blur has no mask-free surrogate".into())),
    }
}

/// Fixed perturbation of `x` under mask `m`. The blur kind re-blurs `x`
/// with mask-dependent bandwidth and has no separate blend.
pub fn apply_fixed(x: &Tensor, m: &Tensor, cfg: &FixedPerturbationConfig) -> Result<Tensor, PerturbationError> {
    cfg.validate()?;
    if m.shape() != x.shape() {
        return Err(PerturbationError::Shape {
            x: x.shape().to_vec(),
            mask: m.shape().to_vec(),
        });
    }
    match cfg.kind {
        FixedKind::GaussianBlur => gaussian_blur(x, m, cfg.sigma_max),
        _ => blend(x, m, &fixed_surrogate(x, cfg)?),
    }
}

/// Learned perturbation `m * x + (1 - m) * NN(x)` of one `[T, n]` sample.
pub fn apply_learned(x: &Tensor, m: &Tensor, generator: &PerturbationGenerator) -> Result<Tensor, PerturbationError> {
    let nn = generator.forward(x)?;
    blend(x, m, &nn)
}

/// Stacks `T` step variables of shape `[B, n]` into one `[B, T, n]`.
pub fn stack_time(g: &mut Graph, steps: &[Var]) -> Result<Var, PerturbationError> {
    let shape = g.value(steps[0]).shape().to_vec();
    let (b, n) = (shape[0], shape[1]);
    let parts = steps
        .iter()
        .map(|&s| g.reshape(s, &[b, 1, n]))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(g.concat(&parts, 1)?)
}

/// Recorded `m * x + (1 - m) * surrogate`.
pub fn blend_graph(
    g: &mut Graph,
    x: Var,
    m: Var,
    surrogate: Var,
) -> Result<Var, PerturbationError> {
    let kept = g.mul(m, x)?;
    let rest = g.one_minus(m);
    let filled = g.mul(rest, surrogate)?;
    Ok(g.add(kept, filled)?)
}

#[cfg(test)]
mod tests;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PerturbationError;
use crate::nets::{gru_forward, CellVars, Direction, GruParams, LinearVars};
use crate::numerics::{matmul_acc, Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// `NN(x) = 0`, so the perturbation is `m * x`.
    #[serde(alias = "zeros")]
    Zero,
    /// Forward GRU: the surrogate at `t` only sees `x[..=t]`.
    #[serde(alias = "gru")]
    Unidirectional,
    #[serde(alias = "bi_gru")]
    Bidirectional,
}

impl GeneratorKind {
    pub fn label(self) -> &'static str {
        match self {
            GeneratorKind::Zero => "zeros",
            GeneratorKind::Unidirectional => "gru",
            GeneratorKind::Bidirectional => "bi_gru",
        }
    }
}

/// The learnable surrogate `NN(x)`: a GRU over the sample followed by a
/// per-timestep linear head back to `n` features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationGenerator {
    pub kind: GeneratorKind,
    pub n_features: usize,
    pub gru: Option<GruParams>,
    /// `[gru output size, n]`
    pub head_w: Option<Tensor>,
    /// `[n]`
    pub head_b: Option<Tensor>,
}

impl PerturbationGenerator {
    pub fn zero(n_features: usize) -> Self {
        Self {
            kind: GeneratorKind::Zero,
            n_features,
            gru: None,
            head_w: None,
            head_b: None,
        }
    }

    pub fn init<R: Rng>(kind: GeneratorKind, n_features: usize, hidden: usize, rng: &mut R) -> Self {
        let direction = match kind {
            GeneratorKind::Zero => return Self::zero(n_features),
            GeneratorKind::Unidirectional => Direction::Forward,
            GeneratorKind::Bidirectional => Direction::Bidirectional,
        };
        let gru = GruParams::init(n_features, hidden, direction, rng);
        let out = gru.output_size();
        let k = 1.0 / (out as f64).sqrt();
        let mut draw = |len: usize| (0..len).map(|_| rng.random_range(-k..=k)).collect::<Vec<f64>>();
        let head_w = Tensor::new(vec![out, n_features], draw(out * n_features)).expect("shape");
        let head_b = Tensor::new(vec![n_features], draw(n_features)).expect("shape");
        Self {
            kind,
            n_features,
            gru: Some(gru),
            head_w: Some(head_w),
            head_b: Some(head_b),
        }
    }

    /// Trainable tensors: GRU cells (w_ih, w_hh, b_ih, b_hh each), then the
    /// head weight and bias. Empty for the zero generator.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.gru.iter().flat_map(|g| g.cells()).flat_map(|c| c.tensors()).collect();
        v.extend(self.head_w.iter());
        v.extend(self.head_b.iter());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> =
            self.gru.iter_mut().flat_map(|g| g.cells_mut()).flat_map(|c| c.tensors_mut()).collect();
        v.extend(self.head_w.iter_mut());
        v.extend(self.head_b.iter_mut());
        v
    }

    /// `NN(x)` for one `[T, n]` sample.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, PerturbationError> {
        if x.shape().len() != 2 || x.shape()[1] != self.n_features {
            return Err(PerturbationError::Shape {
                x: x.shape().to_vec(),
                mask: vec![0, self.n_features],
            });
        }
        let (Some(gru), Some(w), Some(b)) = (&self.gru, &self.head_w, &self.head_b) else {
            return Ok(Tensor::zeros(x.shape()));
        };
        let h = gru_forward(x, gru)?;
        let (t_len, n) = (x.shape()[0], self.n_features);
        let mut out: Vec<f64> = (0..t_len).flat_map(|_| b.data().iter().copied()).collect();
        matmul_acc(h.data(), w.data(), &mut out, t_len, gru.output_size(), n);
        Ok(Tensor::new(vec![t_len, n], out)?)
    }
}

/// Generators of several samples stacked along a leading batch axis so that
/// each batch row is driven by its own weights.
#[derive(Debug, Clone)]
pub struct GeneratorBatch {
    pub kind: GeneratorKind,
    pub n_features: usize,
    pub hidden: usize,
    pub batch: usize,
    /// One `[B, ..]` tensor per entry of [`PerturbationGenerator::tensors`].
    pub tensors: Vec<Tensor>,
}

impl GeneratorBatch {
    pub fn stack(gens: &[&PerturbationGenerator]) -> Self {
        let first = gens[0];
        let parts: Vec<Vec<&Tensor>> = gens.iter().map(|g| g.tensors()).collect();
        let tensors = (0..parts[0].len())
            .map(|k| {
                let mut shape = vec![gens.len()];
                shape.extend_from_slice(parts[0][k].shape());
                let data = parts.iter().flat_map(|p| p[k].data().iter().copied()).collect();
                Tensor::new(shape, data).expect("stack")
            })
            .collect();
        Self {
            kind: first.kind,
            n_features: first.n_features,
            hidden: first.gru.as_ref().map_or(0, |g| g.hidden_size),
            batch: gens.len(),
            tensors,
        }
    }

    /// Splits a gradient (or any buffer laid out like `tensors[k]`) per row.
    pub fn row_slice<'a>(&self, k: usize, buf: &'a [f64], row: usize) -> &'a [f64] {
        let per = self.tensors[k].len() / self.batch;
        &buf[row * per..(row + 1) * per]
    }

    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.tensors.iter().map(|t| g.param(t.clone())).collect()
    }

    /// `NN(x)` per step: `steps[t]` is `[B, n]`, output `[B, n]` per step.
    pub fn run(&self, g: &mut Graph, vars: &[Var], steps: &[Var]) -> Result<Vec<Var>, PerturbationError> {
        let n = self.n_features;
        if self.kind == GeneratorKind::Zero {
            return Ok(steps.iter().map(|_| g.constant(Tensor::zeros(&[self.batch, n]))).collect());
        }
        let cell = |at: usize| CellVars {
            input: LinearVars::PerRow {
                w: vars[at],
                b: vars[at + 2],
            },
            hidden: LinearVars::PerRow {
                w: vars[at + 1],
                b: vars[at + 3],
            },
            hidden_size: self.hidden,
        };
        let fwd = cell(0).run(g, steps, false)?;
        let hidden = if self.kind == GeneratorKind::Bidirectional {
            let bwd = cell(4).run(g, steps, true)?;
            fwd.into_iter()
                .zip(bwd)
                .map(|(a, b)| g.concat(&[a, b], 1))
                .collect::<Result<Vec<_>, _>>()?
        } else {
            fwd
        };
        let head_at = vars.len() - 2;
        let head = LinearVars::PerRow {
            w: vars[head_at],
            b: vars[head_at + 1],
        };
        hidden
            .into_iter()
            .map(|h| head.apply(g, h).map_err(PerturbationError::from))
            .collect()
    }
}

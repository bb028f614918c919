use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NetError;
use crate::numerics::{matmul_acc, sigmoid, Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
    Bidirectional,
}

/// Weights of one recurrent cell. Gate blocks along the last axis are
/// ordered reset, update, candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruWeights {
    /// `[n, 3H]`
    pub w_ih: Tensor,
    /// `[H, 3H]`
    pub w_hh: Tensor,
    /// `[3H]`
    pub b_ih: Tensor,
    /// `[3H]`
    pub b_hh: Tensor,
}

impl GruWeights {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Tensor::zeros(&[input, 3 * hidden]),
            w_hh: Tensor::zeros(&[hidden, 3 * hidden]),
            b_ih: Tensor::zeros(&[3 * hidden]),
            b_hh: Tensor::zeros(&[3 * hidden]),
        }
    }

    /// Uniform in `[-1/sqrt(H), 1/sqrt(H)]`.
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let mut draw = |shape: &[usize]| {
            let len: usize = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..len).map(|_| rng.random_range(-k..=k)).collect()).expect("shape")
        };
        Self {
            w_ih: draw(&[input, 3 * hidden]),
            w_hh: draw(&[hidden, 3 * hidden]),
            b_ih: draw(&[3 * hidden]),
            b_hh: draw(&[3 * hidden]),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_ih.shape()[0]
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hh.shape()[0]
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.w_ih, &self.w_hh, &self.b_ih, &self.b_hh]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w_ih, &mut self.w_hh, &mut self.b_ih, &mut self.b_hh]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub input_size: usize,
    pub hidden_size: usize,
    pub direction: Direction,
    /// Reads the sequence in time order. Absent for `Direction::Backward`.
    pub forward: Option<GruWeights>,
    /// Reads the sequence in reverse. Absent for `Direction::Forward`.
    pub backward: Option<GruWeights>,
}

impl GruParams {
    pub fn init<R: Rng>(input: usize, hidden: usize, direction: Direction, rng: &mut R) -> Self {
        let forward = matches!(direction, Direction::Forward | Direction::Bidirectional)
            .then(|| GruWeights::init(input, hidden, rng));
        let backward = matches!(direction, Direction::Backward | Direction::Bidirectional)
            .then(|| GruWeights::init(input, hidden, rng));
        Self {
            input_size: input,
            hidden_size: hidden,
            direction,
            forward,
            backward,
        }
    }

    pub fn zeros(input: usize, hidden: usize, direction: Direction) -> Self {
        let forward = matches!(direction, Direction::Forward | Direction::Bidirectional)
            .then(|| GruWeights::zeros(input, hidden));
        let backward = matches!(direction, Direction::Backward | Direction::Bidirectional)
            .then(|| GruWeights::zeros(input, hidden));
        Self {
            input_size: input,
            hidden_size: hidden,
            direction,
            forward,
            backward,
        }
    }

    /// Width of the per-timestep output.
    pub fn output_size(&self) -> usize {
        match self.direction {
            Direction::Bidirectional => 2 * self.hidden_size,
            _ => self.hidden_size,
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = &GruWeights> {
        self.forward.iter().chain(self.backward.iter())
    }

    pub fn cells_mut(&mut self) -> impl Iterator<Item = &mut GruWeights> {
        self.forward.iter_mut().chain(self.backward.iter_mut())
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let expected = match self.direction {
            Direction::Bidirectional => (true, true),
            Direction::Forward => (true, false),
            Direction::Backward => (false, true),
        };
        if (self.forward.is_some(), self.backward.is_some()) != expected {
            return Err(NetError::Invalid(format!(
                "direction {:?} does not match the stored cells",
                self.direction
            )));
        }
        for cell in self.cells() {
            let (n, h) = (self.input_size, self.hidden_size);
            let ok = cell.w_ih.shape() == [n, 3 * h]
                && cell.w_hh.shape() == [h, 3 * h]
                && cell.b_ih.len() == 3 * h
                && cell.b_hh.len() == 3 * h;
            if !ok {
                return Err(NetError::Invalid(format!(
                    "cell weights inconsistent with input {n}, hidden {h}"
                )));
            }
        }
        Ok(())
    }
}

/// One step of the gated recurrent cell on plain vectors.
pub fn gru_cell_step(x_t: &[f64], h_prev: &[f64], w: &GruWeights) -> Result<Vec<f64>, NetError> {
    let (n, h) = (w.input_size(), w.hidden_size());
    if x_t.len() != n || h_prev.len() != h {
        return Err(NetError::Dimension {
            what: "gru_cell_step input",
            expected: vec![n, h],
            got: vec![x_t.len(), h_prev.len()],
        });
    }
    let mut out = vec![0.0; h];
    cell_rows(x_t, h_prev, w, &mut out, 1);
    Ok(out)
}

/// Batched cell step on `rows` stacked inputs, without recording a tape.
fn cell_rows(x: &[f64], h_prev: &[f64], w: &GruWeights, out: &mut [f64], rows: usize) {
    let (n, h) = (w.input_size(), w.hidden_size());
    let mut gi = vec![0.0; rows * 3 * h];
    let mut gh = vec![0.0; rows * 3 * h];
    matmul_acc(x, w.w_ih.data(), &mut gi, rows, n, 3 * h);
    matmul_acc(h_prev, w.w_hh.data(), &mut gh, rows, h, 3 * h);
    for r in 0..rows {
        let gi = &gi[r * 3 * h..(r + 1) * 3 * h];
        let gh = &gh[r * 3 * h..(r + 1) * 3 * h];
        for j in 0..h {
            let reset = sigmoid(gi[j] + w.b_ih.data()[j] + gh[j] + w.b_hh.data()[j]);
            let update = sigmoid(gi[h + j] + w.b_ih.data()[h + j] + gh[h + j] + w.b_hh.data()[h + j]);
            let cand = (gi[2 * h + j] + w.b_ih.data()[2 * h + j] + reset * (gh[2 * h + j] + w.b_hh.data()[2 * h + j])).tanh();
            out[r * h + j] = (1.0 - update) * cand + update * h_prev[r * h + j];
        }
    }
}

/// Runs one cell over time-major batched inputs (`steps[t]` is `[B, n]`).
fn run_cell_batch(steps: &[Tensor], w: &GruWeights, reverse: bool) -> Vec<Vec<f64>> {
    let rows = steps[0].shape()[0];
    let h = w.hidden_size();
    let mut state = vec![0.0; rows * h];
    let mut outs = vec![Vec::new(); steps.len()];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..steps.len()).rev())
    } else {
        Box::new(0..steps.len())
    };
    for t in order {
        let mut next = vec![0.0; rows * h];
        cell_rows(steps[t].data(), &state, w, &mut next, rows);
        outs[t] = next.clone();
        state = next;
    }
    outs
}

/// Per-timestep hidden states for a batch, without recording a tape.
/// `steps[t]` is `[B, n]`; the result holds `[B, output_size]` per step.
pub fn gru_forward_batch(steps: &[Tensor], params: &GruParams) -> Result<Vec<Tensor>, NetError> {
    if steps.is_empty() {
        return Err(NetError::EmptySequence);
    }
    let rows = steps[0].shape()[0];
    for s in steps {
        if s.shape() != [rows, params.input_size] {
            return Err(NetError::Dimension {
                what: "gru input step",
                expected: vec![rows, params.input_size],
                got: s.shape().to_vec(),
            });
        }
    }
    let h = params.hidden_size;
    let fwd = params.forward.as_ref().map(|w| run_cell_batch(steps, w, false));
    let bwd = params.backward.as_ref().map(|w| run_cell_batch(steps, w, true));
    let width = params.output_size();
    let mut out = Vec::with_capacity(steps.len());
    for t in 0..steps.len() {
        let data = match (&fwd, &bwd) {
            (Some(f), Some(b)) => {
                let mut d = Vec::with_capacity(rows * width);
                for r in 0..rows {
                    d.extend_from_slice(&f[t][r * h..(r + 1) * h]);
                    d.extend_from_slice(&b[t][r * h..(r + 1) * h]);
                }
                d
            }
            (Some(f), None) => f[t].clone(),
            (None, Some(b)) => b[t].clone(),
            (None, None) => return Err(NetError::Invalid("GRU has no cells".into())),
        };
        out.push(Tensor::new(vec![rows, width], data)?);
    }
    Ok(out)
}

/// Hidden states `[T, H]` (or `[T, 2H]` when bidirectional) for one sequence.
pub fn gru_forward(x: &Tensor, params: &GruParams) -> Result<Tensor, NetError> {
    let steps = time_steps(x)?;
    let outs = gru_forward_batch(&steps, params)?;
    let width = params.output_size();
    let data: Vec<f64> = outs.into_iter().flat_map(Tensor::into_data).collect();
    Ok(Tensor::new(vec![x.shape()[0], width], data)?)
}

/// Splits a `[T, n]` sequence into `T` tensors of shape `[1, n]`.
pub fn time_steps(x: &Tensor) -> Result<Vec<Tensor>, NetError> {
    if x.shape().len() != 2 {
        return Err(NetError::Dimension {
            what: "sequence",
            expected: vec![0, 0],
            got: x.shape().to_vec(),
        });
    }
    let (t, n) = (x.shape()[0], x.shape()[1]);
    if t == 0 {
        return Err(NetError::EmptySequence);
    }
    Ok((0..t)
        .map(|k| Tensor::new(vec![1, n], x.row(k).to_vec()).expect("row"))
        .collect())
}

/// An affine map recorded on a graph. `Shared` applies one matrix to every
/// row; `PerRow` gives each batch row its own matrix and bias.
#[derive(Debug, Clone, Copy)]
pub enum LinearVars {
    Shared { w: Var, b: Var },
    PerRow { w: Var, b: Var },
}

impl LinearVars {
    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var, NetError> {
        Ok(match *self {
            LinearVars::Shared { w, b } => {
                let xw = g.matmul(x, w)?;
                g.add_bias(xw, b)?
            }
            LinearVars::PerRow { w, b } => {
                let xw = g.batch_matvec(x, w)?;
                g.add(xw, b)?
            }
        })
    }
}

/// Graph handles for one recurrent cell.
#[derive(Debug, Clone, Copy)]
pub struct CellVars {
    pub input: LinearVars,
    pub hidden: LinearVars,
    pub hidden_size: usize,
}

impl CellVars {
    /// Binds weights shared by every batch row.
    pub fn bind(g: &mut Graph, w: &GruWeights, trainable: bool) -> Self {
        let mut leaf = |t: &Tensor| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        let w_ih = leaf(&w.w_ih);
        let w_hh = leaf(&w.w_hh);
        let b_ih = leaf(&w.b_ih);
        let b_hh = leaf(&w.b_hh);
        Self {
            input: LinearVars::Shared { w: w_ih, b: b_ih },
            hidden: LinearVars::Shared { w: w_hh, b: b_hh },
            hidden_size: w.hidden_size(),
        }
    }

    /// One recorded step. `h_prev` is `None` for the zero initial state.
    pub fn step(&self, g: &mut Graph, x: Var, h_prev: Option<Var>) -> Result<Var, NetError> {
        let h = self.hidden_size;
        let rows = g.value(x).shape()[0];
        let h_prev = match h_prev {
            Some(v) => v,
            None => g.constant(Tensor::zeros(&[rows, h])),
        };
        let gi = self.input.apply(g, x)?;
        let gh = self.hidden.apply(g, h_prev)?;
        let gi_rz = g.slice(gi, 1, 0, 2 * h)?;
        let gh_rz = g.slice(gh, 1, 0, 2 * h)?;
        let rz_pre = g.add(gi_rz, gh_rz)?;
        let rz = g.sigmoid(rz_pre);
        let reset = g.slice(rz, 1, 0, h)?;
        let update = g.slice(rz, 1, h, h)?;
        let gi_n = g.slice(gi, 1, 2 * h, h)?;
        let gh_n = g.slice(gh, 1, 2 * h, h)?;
        let gated = g.mul(reset, gh_n)?;
        let cand_pre = g.add(gi_n, gated)?;
        let cand = g.tanh(cand_pre);
        // h' = (1 - z) * n + z * h = n + z * (h - n)
        let diff = g.sub(h_prev, cand)?;
        let carried = g.mul(update, diff)?;
        Ok(g.add(cand, carried)?)
    }

    pub fn run(&self, g: &mut Graph, steps: &[Var], reverse: bool) -> Result<Vec<Var>, NetError> {
        let mut out = vec![None; steps.len()];
        let mut state = None;
        let order: Vec<usize> = if reverse {
            (0..steps.len()).rev().collect()
        } else {
            (0..steps.len()).collect()
        };
        for t in order {
            let h = self.step(g, steps[t], state)?;
            out[t] = Some(h);
            state = Some(h);
        }
        Ok(out.into_iter().map(|h| h.expect("filled")).collect())
    }
}

/// Graph handles for a (possibly bidirectional) recurrent layer.
#[derive(Debug, Clone)]
pub struct GruVars {
    pub forward: Option<CellVars>,
    pub backward: Option<CellVars>,
}

impl GruVars {
    pub fn bind(g: &mut Graph, params: &GruParams, trainable: bool) -> Self {
        Self {
            forward: params.forward.as_ref().map(|w| CellVars::bind(g, w, trainable)),
            backward: params.backward.as_ref().map(|w| CellVars::bind(g, w, trainable)),
        }
    }

    /// Leaves in the order of [`GruParams::cells`] then [`GruWeights::tensors`].
    pub fn leaves(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for cell in self.forward.iter().chain(self.backward.iter()) {
            for lin in [cell.input, cell.hidden] {
                let (LinearVars::Shared { w, .. } | LinearVars::PerRow { w, .. }) = lin;
                out.push(w);
            }
            for lin in [cell.input, cell.hidden] {
                let (LinearVars::Shared { b, .. } | LinearVars::PerRow { b, .. }) = lin;
                out.push(b);
            }
        }
        out
    }

    /// Per-step outputs `[B, output_size]`.
    pub fn run(&self, g: &mut Graph, steps: &[Var]) -> Result<Vec<Var>, NetError> {
        if steps.is_empty() {
            return Err(NetError::EmptySequence);
        }
        let fwd = self.forward.as_ref().map(|c| c.run(g, steps, false)).transpose()?;
        let bwd = self.backward.as_ref().map(|c| c.run(g, steps, true)).transpose()?;
        match (fwd, bwd) {
            (Some(f), Some(b)) => f
                .into_iter()
                .zip(b)
                .map(|(a, c)| g.concat(&[a, c], 1).map_err(NetError::from))
                .collect(),
            (Some(f), None) => Ok(f),
            (None, Some(b)) => Ok(b),
            (None, None) => Err(NetError::Invalid("GRU has no cells".into())),
        }
    }
}

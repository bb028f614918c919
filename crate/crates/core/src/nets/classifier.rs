use std::hash::{DefaultHasher, Hash, Hasher};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gru::{gru_forward_batch, time_steps, GruParams, GruVars};
use super::{Direction, NetError};
use crate::numerics::{matmul_acc, softmax_rows, Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// One prediction per timestep.
    PerTimestep,
    /// One prediction from the last hidden state.
    FinalStep,
}

/// A black-box model as seen by the explainers.
///
/// Inputs are time-major: `steps[t]` has shape `[B, n]`. Outputs hold one
/// `[B, classes]` entry per output position (`T` positions for per-timestep
/// readout, one for final-step readout).
pub trait SequenceModel: Sync {
    fn input_size(&self) -> usize;
    fn classes(&self) -> usize;
    fn readout(&self) -> Readout;
    fn logits_graph(&self, g: &mut Graph, steps: &[Var]) -> Result<Vec<Var>, NetError>;
    fn logits_batch(&self, steps: &[Tensor]) -> Result<Vec<Tensor>, NetError>;

    /// Class probabilities. Models whose raw output already is the score of
    /// interest may override both output methods.
    fn outputs_graph(&self, g: &mut Graph, steps: &[Var]) -> Result<Vec<Var>, NetError> {
        let logits = self.logits_graph(g, steps)?;
        Ok(logits.into_iter().map(|z| g.softmax(z)).collect())
    }

    fn outputs_batch(&self, steps: &[Tensor]) -> Result<Vec<Tensor>, NetError> {
        Ok(self.logits_batch(steps)?.iter().map(softmax_rows).collect())
    }

    /// Digest of the parameters, used to check that explaining leaves the
    /// model untouched.
    fn fingerprint(&self) -> u64 {
        0
    }

    /// Whether the parameters are final. Explainers refuse models that are
    /// still being trained.
    fn is_frozen(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub gru: GruParams,
    /// `[gru output size, classes]`
    pub readout_w: Tensor,
    /// `[classes]`
    pub readout_b: Tensor,
    pub readout: Readout,
}

impl ClassifierParams {
    pub fn init<R: Rng>(input: usize, hidden: usize, classes: usize, readout: Readout, rng: &mut R) -> Self {
        let gru = GruParams::init(input, hidden, Direction::Forward, rng);
        let out = gru.output_size();
        let k = 1.0 / (out as f64).sqrt();
        let readout_w =
            Tensor::new(vec![out, classes], (0..out * classes).map(|_| rng.random_range(-k..=k)).collect()).expect("shape");
        let readout_b = Tensor::new(vec![classes], (0..classes).map(|_| rng.random_range(-k..=k)).collect()).expect("shape");
        Self {
            gru,
            readout_w,
            readout_b,
            readout,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        self.gru.validate()?;
        let out = self.gru.output_size();
        if self.readout_w.shape().len() != 2 || self.readout_w.shape()[0] != out {
            return Err(NetError::Dimension {
                what: "readout weights",
                expected: vec![out, self.readout_b.len()],
                got: self.readout_w.shape().to_vec(),
            });
        }
        if self.readout_w.shape()[1] != self.readout_b.len() || self.readout_b.is_empty() {
            return Err(NetError::Invalid("readout bias does not match the class count".into()));
        }
        Ok(())
    }

    /// Every trainable tensor, GRU cells first.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.gru.cells().flat_map(|c| c.tensors()).collect();
        v.push(&self.readout_w);
        v.push(&self.readout_b);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.gru.cells_mut().flat_map(|c| c.tensors_mut()).collect();
        v.push(&mut self.readout_w);
        v.push(&mut self.readout_b);
        v
    }

    /// Names matching [`Self::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let dirs: Vec<&str> = [self.gru.forward.as_ref().map(|_| "fwd"), self.gru.backward.as_ref().map(|_| "bwd")]
            .into_iter()
            .flatten()
            .collect();
        for d in dirs {
            for t in ["w_ih", "w_hh", "b_ih", "b_hh"] {
                names.push(format!("gru.{d}.{t}"));
            }
        }
        names.push("readout.w".into());
        names.push("readout.b".into());
        names
    }
}

/// Graph handles for a classifier.
pub struct ClassifierVars {
    pub gru: GruVars,
    pub w: Var,
    pub b: Var,
    pub readout: Readout,
}

impl ClassifierVars {
    pub fn bind(g: &mut Graph, params: &ClassifierParams, trainable: bool) -> Self {
        let gru = GruVars::bind(g, &params.gru, trainable);
        let (w, b) = if trainable {
            (g.param(params.readout_w.clone()), g.param(params.readout_b.clone()))
        } else {
            (g.constant(params.readout_w.clone()), g.constant(params.readout_b.clone()))
        };
        Self {
            gru,
            w,
            b,
            readout: params.readout,
        }
    }

    /// Leaves in the order of [`ClassifierParams::tensors`].
    pub fn leaves(&self) -> Vec<Var> {
        let mut v = self.gru.leaves();
        v.push(self.w);
        v.push(self.b);
        v
    }

    pub fn logits(&self, g: &mut Graph, steps: &[Var]) -> Result<Vec<Var>, NetError> {
        let hidden = self.gru.run(g, steps)?;
        let used: &[Var] = match self.readout {
            Readout::PerTimestep => &hidden,
            Readout::FinalStep => &hidden[hidden.len() - 1..],
        };
        used.iter()
            .map(|&h| {
                let z = g.matmul(h, self.w)?;
                Ok(g.add_bias(z, self.b)?)
            })
            .collect()
    }
}

impl SequenceModel for ClassifierParams {
    fn input_size(&self) -> usize {
        self.gru.input_size
    }

    fn classes(&self) -> usize {
        self.readout_b.len()
    }

    fn readout(&self) -> Readout {
        self.readout
    }

    fn logits_graph(&self, g: &mut Graph, steps: &[Var]) -> Result<Vec<Var>, NetError> {
        ClassifierVars::bind(g, self, false).logits(g, steps)
    }

    fn logits_batch(&self, steps: &[Tensor]) -> Result<Vec<Tensor>, NetError> {
        let hidden = gru_forward_batch(steps, &self.gru)?;
        let used: &[Tensor] = match self.readout {
            Readout::PerTimestep => &hidden,
            Readout::FinalStep => &hidden[hidden.len() - 1..],
        };
        let (out, p) = (self.gru.output_size(), self.classes());
        Ok(used
            .iter()
            .map(|h| {
                let rows = h.shape()[0];
                let mut z: Vec<f64> = (0..rows).flat_map(|_| self.readout_b.data().iter().copied()).collect();
                matmul_acc(h.data(), self.readout_w.data(), &mut z, rows, out, p);
                Tensor::new(vec![rows, p], z).expect("shape")
            })
            .collect())
    }

    fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for t in self.tensors() {
            t.shape().hash(&mut h);
            for v in t.data() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Logits of one `[T, n]` sequence: `[T, classes]` for per-timestep readout,
/// `[1, classes]` for final-step readout.
pub fn classifier_forward(x: &Tensor, params: &ClassifierParams) -> Result<Tensor, NetError> {
    let steps = time_steps(x)?;
    let outs = params.logits_batch(&steps)?;
    let p = params.classes();
    let rows = outs.len();
    Ok(Tensor::new(vec![rows, p], outs.into_iter().flat_map(Tensor::into_data).collect())?)
}

/// Column `class` of a `[rows, classes]` probability table.
pub fn target_probability(probs: &Tensor, class: usize) -> Result<Vec<f64>, NetError> {
    let classes = probs.last_dim();
    if class >= classes {
        return Err(NetError::InvalidClass { class, classes });
    }
    Ok(probs.data().chunks(classes).map(|row| row[class]).collect())
}

/// Argmax class per sample and output position, `[B][positions]`. Ties go to
/// the lower class index.
pub fn predicted_classes(outputs: &[Tensor]) -> Vec<Vec<usize>> {
    let rows = outputs.first().map_or(0, |o| o.shape()[0]);
    (0..rows)
        .map(|r| {
            outputs
                .iter()
                .map(|o| {
                    let row = o.row(r);
                    let mut best = 0;
                    for (k, v) in row.iter().enumerate() {
                        if *v > row[best] {
                            best = k;
                        }
                    }
                    best
                })
                .collect()
        })
        .collect()
}

/// Time-major steps from sample-major `[B, T, n]` values.
pub fn batch_steps(x: &[f64], batch: usize, steps: usize, features: usize) -> Vec<Tensor> {
    assert_eq!(x.len(), batch * steps * features, "batch_steps input size");
    (0..steps)
        .map(|t| {
            let mut d = Vec::with_capacity(batch * features);
            for b in 0..batch {
                let at = (b * steps + t) * features;
                d.extend_from_slice(&x[at..at + features]);
            }
            Tensor::new(vec![batch, features], d).expect("shape")
        })
        .collect()
}

/// Splits a `[B, T, n]` variable into `T` step variables of shape `[B, n]`.
pub fn split_time(g: &mut Graph, x: Var) -> Result<Vec<Var>, NetError> {
    let shape = g.value(x).shape().to_vec();
    if shape.len() != 3 {
        return Err(NetError::Dimension {
            what: "batched sequence",
            expected: vec![0, 0, 0],
            got: shape,
        });
    }
    let (b, t, n) = (shape[0], shape[1], shape[2]);
    if t == 0 {
        return Err(NetError::EmptySequence);
    }
    (0..t)
        .map(|k| {
            let s = g.slice(x, 1, k, 1)?;
            Ok(g.reshape(s, &[b, n])?)
        })
        .collect()
}

/// Area under the ROC curve of `scores` against binary `labels`, with tied
/// scores sharing their average rank. `None` when one class is absent.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = avg;
        }
        i = j + 1;
    }
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return None;
    }
    let rank_sum: f64 = labels.iter().zip(&ranks).filter(|(l, _)| **l == 1).map(|(_, r)| r).sum();
    Some((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

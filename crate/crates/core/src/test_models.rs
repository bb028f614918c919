//! Small closed-form models for unit tests.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::nets::{NetError, Readout, SequenceModel};
use crate::numerics::{Graph, Tensor, Var};

/// `s(x) = sum(w * x)` over all cells. With one class the output is `s`
/// itself; with two classes the logits are `[0, s]`.
pub(crate) struct Linear {
    pub steps: usize,
    pub features: usize,
    pub w: Vec<f64>,
    pub classes: usize,
    pub frozen: bool,
    /// When set, every fingerprint differs from the last.
    pub calls: Option<AtomicU64>,
}

impl Linear {
    pub fn new(steps: usize, features: usize, w: Vec<f64>) -> Self {
        assert_eq!(w.len(), steps * features);
        Self {
            steps,
            features,
            w,
            classes: 1,
            frozen: true,
            calls: None,
        }
    }

    pub fn binary(steps: usize, features: usize, w: Vec<f64>) -> Self {
        Self {
            classes: 2,
            ..Self::new(steps, features, w)
        }
    }

    fn score_graph(&self, g: &mut Graph, steps: &[Var]) -> Result<Var, NetError> {
        let mut terms = Vec::new();
        for (t, &s) in steps.iter().enumerate() {
            let w = Tensor::new(vec![self.features, 1], self.w[t * self.features..(t + 1) * self.features].to_vec())?;
            let wv = g.constant(w);
            terms.push(g.matmul(s, wv)?);
        }
        Ok(g.add_all(&terms)?)
    }

    fn scores(&self, steps: &[Tensor]) -> Vec<f64> {
        assert_eq!(steps.len(), self.steps);
        let b = steps[0].shape()[0];
        (0..b)
            .map(|r| {
                steps
                    .iter()
                    .enumerate()
                    .map(|(t, s)| s.row(r).iter().zip(&self.w[t * self.features..]).map(|(x, w)| x * w).sum::<f64>())
                    .sum()
            })
            .collect()
    }
}

impl SequenceModel for Linear {
    fn input_size(&self) -> usize {
        self.features
    }

    fn classes(&self) -> usize {
        self.classes
    }

    fn readout(&self) -> Readout {
        Readout::FinalStep
    }

    fn logits_graph(&self, g: &mut Graph, steps: &[Var]) -> Result<Vec<Var>, NetError> {
        let s = self.score_graph(g, steps)?;
        if self.classes == 1 {
            return Ok(vec![s]);
        }
        let rows = g.value(s).shape()[0];
        let zero = g.constant(Tensor::zeros(&[rows, 1]));
        Ok(vec![g.concat(&[zero, s], 1)?])
    }

    fn logits_batch(&self, steps: &[Tensor]) -> Result<Vec<Tensor>, NetError> {
        let s = self.scores(steps);
        let b = s.len();
        if self.classes == 1 {
            return Ok(vec![Tensor::new(vec![b, 1], s)?]);
        }
        Ok(vec![Tensor::new(vec![b, 2], s.iter().flat_map(|&v| [0.0, v]).collect())?])
    }

    fn outputs_graph(&self, g: &mut Graph, steps: &[Var]) -> Result<Vec<Var>, NetError> {
        let logits = self.logits_graph(g, steps)?;
        if self.classes == 1 {
            return Ok(logits);
        }
        Ok(logits.into_iter().map(|z| g.softmax(z)).collect())
    }

    fn outputs_batch(&self, steps: &[Tensor]) -> Result<Vec<Tensor>, NetError> {
        let logits = self.logits_batch(steps)?;
        if self.classes == 1 {
            return Ok(logits);
        }
        Ok(logits.iter().map(crate::numerics::softmax_rows).collect())
    }

    fn fingerprint(&self) -> u64 {
        self.calls.as_ref().map_or(7, |c| c.fetch_add(1, Ordering::SeqCst))
    }

    fn is_frozen(&self) -> bool {
        self.frozen
    }
}

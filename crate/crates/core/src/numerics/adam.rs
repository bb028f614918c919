use serde::{Deserialize, Serialize};

use super::{NumericsError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[&Tensor], config: AdamConfig) -> Self {
        Self {
            config,
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one Adam update. `names` label the parameters in errors.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Option<&[f64]>],
        names: &[&str],
    ) -> Result<(), NumericsError> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(NumericsError::ParamCount {
                expected: self.first.len(),
                got: params.len().min(grads.len()),
            });
        }
        for (k, grad) in grads.iter().enumerate() {
            let name = names.get(k).copied().unwrap_or("param");
            let grad = grad.ok_or_else(|| NumericsError::MissingGrad { name: name.to_string() })?;
            if grad.len() != params[k].len() || self.first[k].len() != grad.len() {
                return Err(NumericsError::ShapeMismatch {
                    op: "adam_step",
                    left: params[k].shape().to_vec(),
                    right: vec![grad.len()],
                });
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (k, param) in params.iter_mut().enumerate() {
            let grad = grads[k].expect("checked");
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for (((p, &g), mk), vk) in param.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mk = beta1 * *mk + (1.0 - beta1) * g;
                *vk = beta2 * *vk + (1.0 - beta2) * g * g;
                let m_hat = *mk / bc1;
                let v_hat = *vk / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Single-tensor convenience wrapper around [`AdamState::step`].
pub fn adam_step(param: &mut Tensor, grad: Option<&[f64]>, state: &mut AdamState) -> Result<(), NumericsError> {
    state.step(&mut [param], &[grad], &["param"])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut w = Tensor::from_vec(vec![0.3, -1.2]);
        let before = w.clone();
        let mut st = AdamState::new(&[&w], AdamConfig::with_lr(0.01));
        for _ in 0..100 {
            adam_step(&mut w, Some(&[0.0, 0.0]), &mut st).unwrap();
        }
        assert!(w.max_abs_diff(&before) < 1e-12);
    }

    #[test]
    fn constant_gradient_moves_against_sign() {
        let mut w = Tensor::from_vec(vec![0.0, 0.0]);
        let mut st = AdamState::new(&[&w], AdamConfig::with_lr(0.01));
        for _ in 0..50 {
            adam_step(&mut w, Some(&[2.0, -0.5]), &mut st).unwrap();
        }
        assert!(w.data()[0] < 0.0 && w.data()[1] > 0.0);
        assert_eq!(st.step_count(), 50);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut w = Tensor::from_vec(vec![1.0]);
        let mut st = AdamState::new(&[&w], AdamConfig::with_lr(0.05));
        for _ in 0..500 {
            let g = 2.0 * w.data()[0];
            adam_step(&mut w, Some(&[g]), &mut st).unwrap();
        }
        assert!(w.data()[0].abs() < 1e-3, "w = {}", w.data()[0]);
    }

    #[test]
    fn missing_grad_names_parameter() {
        let mut w = Tensor::from_vec(vec![1.0]);
        let mut st = AdamState::new(&[&w], AdamConfig::default());
        let err = st.step(&mut [&mut w], &[None], &["w_ih"]).unwrap_err();
        assert!(err.to_string().contains("w_ih"));
    }
}

//! Adam optimizer with standard bias correction.

use crate::error::{Error, Result};

/// Optimizer state: one pair of moment buffers per parameter tensor, kept in
/// the caller's canonical parameter order.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

/// One parameter tensor scheduled for an update.
pub struct ParamUpdate<'a> {
    pub name: &'a str,
    pub values: &'a mut [f64],
    /// Gradient for this tensor; `None` raises a training error.
    pub grad: Option<&'a [f64]>,
}

impl AdamState {
    /// Moments start at zero and are shaped lazily on the first step.
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn first_moment(&self, index: usize) -> Option<&[f64]> {
        self.first_moment.get(index).map(|v| v.as_slice())
    }

    pub fn second_moment(&self, index: usize) -> Option<&[f64]> {
        self.second_moment.get(index).map(|v| v.as_slice())
    }

    /// Apply one bias-corrected Adam update to every tensor in `params`.
    ///
    /// The slice order must be identical on every call; it defines which
    /// moment buffers belong to which tensor.
    pub fn step(&mut self, params: &mut [ParamUpdate<'_>]) -> Result<()> {
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| vec![0.0; p.values.len()]).collect();
            self.second_moment = params.iter().map(|p| vec![0.0; p.values.len()]).collect();
        } else if self.first_moment.len() != params.len() {
            return Err(Error::Train(format!(
                "adam_step: expected {} parameter tensors, got {}",
                self.first_moment.len(),
                params.len()
            )));
        }

        for p in params.iter() {
            if p.grad.is_none() {
                return Err(Error::Train(format!(
                    "adam_step: missing gradient for parameter `{}`",
                    p.name
                )));
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);

        for (idx, p) in params.iter_mut().enumerate() {
            let grad = p.grad.expect("checked above");
            if grad.len() != p.values.len() {
                return Err(Error::Train(format!(
                    "adam_step: gradient length {} does not match parameter `{}` length {}",
                    grad.len(),
                    p.name,
                    p.values.len()
                )));
            }
            let m = &mut self.first_moment[idx];
            let v = &mut self.second_moment[idx];
            for ((w, &g), (mi, vi)) in p
                .values
                .iter_mut()
                .zip(grad)
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

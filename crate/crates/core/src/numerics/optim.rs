use serde::{Deserialize, Serialize};

use crate::numerics::{NumericsError, ParamSet, Tensor};
use crate::Scalar;

/// AdamW hyperparameters. The moment constants follow the usual defaults.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.02,
        }
    }
}

/// Optimizer state: one pair of moment buffers per parameter slot.
#[derive(Clone, Debug)]
pub struct AdamW<S> {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Tensor<S>>,
    second: Vec<Tensor<S>>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Number of completed updates.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads[i]` belongs to the `i`-th entry of `params`.
    ///
    /// Frozen entries are skipped. Decay is decoupled from the adaptive step
    /// and only applies to entries flagged for it. Nothing is modified when
    /// any gradient is non-finite.
    pub fn step(
        &mut self,
        params: &mut ParamSet<S>,
        grads: &[Tensor<S>],
        lr: S,
    ) -> Result<(), NumericsError> {
        if grads.len() != params.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "adamw_step",
                left: vec![params.len()],
                right: vec![grads.len()],
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.value.shape() != g.shape() {
                return Err(NumericsError::ShapeMismatch {
                    op: "adamw_step",
                    left: p.value.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            if p.trainable && !g.all_finite() {
                return Err(NumericsError::NonFiniteGradient {
                    step: self.step + 1,
                    param: p.name.clone(),
                });
            }
        }
        if self.first.len() != params.len() {
            self.first = params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect();
            self.second = self.first.clone();
        }

        self.step += 1;
        let c = &self.config;
        let (b1, b2, eps) = (S::lit(c.beta1), S::lit(c.beta2), S::lit(c.eps));
        let wd = S::lit(c.weight_decay);
        let t = self.step as i32;
        let bias1 = S::one() - b1.powi(t);
        let bias2 = S::one() - b2.powi(t);

        for (i, p) in params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let decay = if p.decay { lr * wd } else { S::zero() };
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (k, (w, &gk)) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grads[i].data())
                .enumerate()
            {
                *w -= decay * *w;
                m[k] = b1 * m[k] + (S::one() - b1) * gk;
                v[k] = b2 * v[k] + (S::one() - b2) * gk * gk;
                let m_hat = m[k] / bias1;
                let v_hat = v[k] / bias2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

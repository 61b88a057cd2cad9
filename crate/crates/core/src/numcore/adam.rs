//! Adam with bias-corrected moment estimates.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
    pub hyper: AdamConfig,
}

impl AdamState {
    pub fn new(n_params: usize, hyper: AdamConfig) -> Self {
        Self {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step_count: 0,
            hyper,
        }
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    /// In-place update. Gradients are checked for finiteness before anything
    /// is modified, so a rejected step leaves both state and parameters intact.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.len() {
            return Err(Error::shape("adam parameters", self.len(), params.len()));
        }
        if grads.len() != self.len() {
            return Err(Error::shape("adam gradients", self.len(), grads.len()));
        }
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index });
        }

        self.step_count += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.hyper;
        let t = self.step_count as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            let m = beta1 * self.first_moment[i] + (1.0 - beta1) * g;
            let v = beta2 * self.second_moment[i] + (1.0 - beta2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            let m_hat = m / bias1;
            let v_hat = v / bias2;
            params[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(state: &AdamState, params: &[f64], grads: &[f64]) -> Result<(Vec<f64>, AdamState)> {
    let mut next = state.clone();
    let mut updated = params.to_vec();
    next.step(&mut updated, grads)?;
    Ok((updated, next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let state = AdamState::new(3, AdamConfig::default());
        let (p, s) = adam_step(&state, &[1.0, -2.0, 3.0], &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_is_bias_corrected() {
        let state = AdamState::new(1, AdamConfig::default());
        let (p, _) = adam_step(&state, &[0.0], &[0.1]).unwrap();
        // -lr * 0.1 / (0.1 + 1e-8)
        let expected = -1e-3 * 0.1 / (0.1 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((p[0] + 9.99999e-4).abs() < 1e-9);
    }

    #[test]
    fn constant_gradient_second_step_still_lr_sized() {
        let state = AdamState::new(1, AdamConfig::default());
        let (p1, s1) = adam_step(&state, &[0.0], &[0.1]).unwrap();
        let (p2, s2) = adam_step(&s1, &p1, &[0.1]).unwrap();
        let second = p2[0] - p1[0];
        assert!((second + 1e-3).abs() < 1e-8, "{second}");
        assert_eq!(s2.step_count(), 2);
    }

    #[test]
    fn non_finite_gradient_reports_index() {
        let mut state = AdamState::new(3, AdamConfig::default());
        let mut params = [1.0, 2.0, 3.0];
        let err = state.step(&mut params, &[0.0, 0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { index: 2 }));
        assert_eq!(params, [1.0, 2.0, 3.0]);
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn length_mismatch_rejected() {
        let mut state = AdamState::new(2, AdamConfig::default());
        assert!(state.step(&mut [0.0; 3], &[0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn constant_gradient_updates_bounded_by_lr(
            g in prop::collection::vec(-10.0f64..10.0, 1..8),
            steps in 1usize..30,
        ) {
            let hyper = AdamConfig::default();
            let mut state = AdamState::new(g.len(), hyper);
            let mut params = vec![0.0; g.len()];
            for _ in 0..steps {
                let before = params.clone();
                state.step(&mut params, &g).unwrap();
                for (a, b) in params.iter().zip(&before) {
                    prop_assert!((a - b).abs() <= hyper.learning_rate * (1.0 + 1e-9));
                }
            }
            prop_assert_eq!(state.step_count(), steps as u64);
        }
    }
}

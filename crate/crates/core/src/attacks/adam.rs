use serde::{Deserialize, Serialize};

/// Moment estimates for bias-corrected Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One in-place update of `variable` against `gradient`.
    pub fn step(&mut self, variable: &mut [f64], gradient: &[f64], lr: f64) {
        debug_assert_eq!(variable.len(), self.m.len());
        debug_assert_eq!(gradient.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..variable.len() {
            let g = gradient[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            variable[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_update(state: &AdamState, variable: &[f64], gradient: &[f64], lr: f64) -> (Vec<f64>, AdamState) {
    let mut next = state.clone();
    let mut v = variable.to_vec();
    next.step(&mut v, gradient, lr);
    (v, next)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let state = AdamState::new(3);
        let (v, s) = adam_update(&state, &[0.0, 0.0, 0.0], &[3.0, -0.5, 1e-2], 0.01);
        assert_eq!(s.step, 1);
        for (vi, expected) in v.iter().zip([-0.01, 0.01, -0.01]) {
            assert!((vi - expected).abs() < 1e-8, "{vi} vs {expected}");
        }
    }

    #[test]
    fn zero_gradient_leaves_variable() {
        let (v, _) = adam_update(&AdamState::new(2), &[0.3, -0.7], &[0.0, 0.0], 0.1);
        assert_eq!(v, vec![0.3, -0.7]);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut state = AdamState::new(1);
        let mut v = [1.0];
        for _ in 0..200 {
            let g = [2.0 * v[0]];
            state.step(&mut v, &g, 0.1);
        }
        assert!(v[0].abs() < 0.05, "v = {}", v[0]);
    }
}

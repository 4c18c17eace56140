//! Adam optimizer with bias correction.

use crate::error::{Error, Result};

/// Hyperparameters; defaults follow the usual (0.001, 0.9, 0.999, 1e-8).
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        AdamParams {
            lr,
            ..Default::default()
        }
    }
}

/// First/second-moment accumulators and the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    /// Zero-initialized state for `n` parameters.
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One Adam update in place. The step counter increments by exactly one.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    hp: &AdamParams,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::shape(format!(
            "adam: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.len()
        )));
    }
    if !(hp.lr > 0.0) {
        return Err(Error::config(format!(
            "adam: learning rate must be positive, got {}",
            hp.lr
        )));
    }
    state.step += 1;
    let bc1 = 1.0 - hp.beta1.powi(state.step as i32);
    let bc2 = 1.0 - hp.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.5, -2.0];
        let mut st = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut st, &AdamParams::default()).unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
        assert_eq!(st.step, 1);
    }

    /// First step moves by -lr * sign(g) / (1 + eps/|g|): bias correction
    /// makes m_hat / sqrt(v_hat) = sign(g).
    #[test]
    fn first_step_is_signed_lr() {
        let hp = AdamParams::default();
        for &g in &[0.37, -4.2, 1e3] {
            let mut p = vec![0.0];
            let mut st = AdamState::new(1);
            adam_step(&mut p, &[g], &mut st, &hp).unwrap();
            let expected = -hp.lr * g.signum() / (1.0 + hp.eps / g.abs());
            assert_abs_diff_eq!(p[0], expected, epsilon = 1e-12);
        }
    }

    /// Quadratic bowl (p - 3)^2 converges under Adam.
    #[test]
    fn quadratic_bowl_converges() {
        let hp = AdamParams::with_lr(0.01);
        let mut p = vec![0.0];
        let mut st = AdamState::new(1);
        for _ in 0..5000 {
            let g = 2.0 * (p[0] - 3.0);
            adam_step(&mut p, &[g], &mut st, &hp).unwrap();
        }
        assert!((p[0] - 3.0).abs() < 1e-3, "p = {}", p[0]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![0.0; 3];
        let mut st = AdamState::new(3);
        assert!(adam_step(&mut p, &[0.0; 2], &mut st, &AdamParams::default()).is_err());
        let mut st2 = AdamState::new(2);
        assert!(adam_step(&mut p, &[0.0; 3], &mut st2, &AdamParams::default()).is_err());
    }
}

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainError};
use crate::diff::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Steps taken so far.
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update with the standard constants.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Vec<f64>],
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TrainError> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(TrainError::Config("gradient and parameter lists differ".into()));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.len() != g.len() {
            return Err(TrainError::Config("gradient and parameter shapes differ".into()));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteGradient);
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (k, x) in p.data_mut().iter_mut().enumerate() {
            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Learning rate at iteration `iter`: linear warmup from 0 to `base_lr`,
/// then exponential decay by `decay_factor` every `decay_iters`.
pub fn lr_at(cfg: &TrainConfig, iter: u64) -> f64 {
    if cfg.constant_lr {
        return cfg.base_lr;
    }
    if iter <= cfg.warmup_iters {
        if cfg.warmup_iters == 0 {
            return cfg.base_lr;
        }
        return cfg.base_lr * iter as f64 / cfg.warmup_iters as f64;
    }
    let after = (iter - cfg.warmup_iters) as f64 / cfg.decay_iters as f64;
    cfg.base_lr / cfg.decay_factor.powf(after)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_the_sign() {
        let mut p = vec![Tensor::row_vector(vec![1.0, -2.0, 0.5])];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[vec![3.0, -0.01, 0.0]], &mut s, 0.1).unwrap();
        let d = p[0].data();
        assert!((d[0] - 0.9).abs() < 1e-8);
        assert!((d[1] + 1.9).abs() < 1e-6);
        assert_eq!(d[2], 0.5);
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut p = vec![Tensor::row_vector(vec![1.0])];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[vec![1.0]], &mut s, 0.1).unwrap();
        let (before, m1, v1) = (p[0].data()[0], s.m[0][0], s.v[0][0]);
        // The bias-corrected moment is still non-zero, so move the step to
        // a fresh state to isolate the zero-gradient case.
        let mut q = vec![Tensor::row_vector(vec![1.0])];
        let mut fresh = AdamState::new(&q);
        adam_step(&mut q, &[vec![0.0]], &mut fresh, 0.1).unwrap();
        assert_eq!(q[0].data()[0], 1.0);
        adam_step(&mut p, &[vec![0.0]], &mut s, 0.0).unwrap();
        assert_eq!(p[0].data()[0], before);
        assert_eq!(s.m[0][0], ADAM_BETA1 * m1);
        assert_eq!(s.v[0][0], ADAM_BETA2 * v1);
    }

    #[test]
    fn quadratic_converges() {
        let mut p = vec![Tensor::row_vector(vec![1.0])];
        let mut s = AdamState::new(&p);
        for _ in 0..2000 {
            let g = 2.0 * p[0].data()[0];
            adam_step(&mut p, &[vec![g]], &mut s, 1e-2).unwrap();
        }
        let x = p[0].data()[0];
        assert!(x * x < 1e-6, "θ² = {}", x * x);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = vec![Tensor::row_vector(vec![1.0])];
        let mut s = AdamState::new(&p);
        assert!(adam_step(&mut p, &[vec![f64::NAN]], &mut s, 0.1).is_err());
        assert_eq!(s.t, 0);
    }

    #[test]
    fn schedule_values() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(&cfg, 0), 0.0);
        assert_eq!(lr_at(&cfg, 1250), 5e-5);
        assert_eq!(lr_at(&cfg, 2500), 1e-4);
        assert_eq!(lr_at(&cfg, 252_500), 1e-5);
        let mut prev = lr_at(&cfg, 2500);
        for it in (2501..600_000).step_by(997) {
            let lr = lr_at(&cfg, it);
            assert!(lr <= prev);
            prev = lr;
        }
        assert!((lr_at(&cfg, 2501) - 1e-4).abs() < 1e-9);
        let fine = TrainConfig {
            constant_lr: true,
            ..TrainConfig::default()
        };
        assert_eq!(lr_at(&fine, 0), 1e-4);
    }
}

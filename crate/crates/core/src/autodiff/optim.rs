//! Adam / AdamW over a [`ParamSet`], plus EMA target tracking.

use super::ParamSet;
use crate::error::{ArsqError, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Per-parameter first/second moment accumulators with bias correction.
/// `weight_decay > 0` switches to the decoupled AdamW update.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(params: &ParamSet, learning_rate: f64, weight_decay: f64) -> Self {
        let m = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        Self {
            m,
            v,
            step: 0,
            learning_rate,
            weight_decay,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update using the gradients stored on `params`, then clear
    /// them. Parameters without a gradient are left untouched.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        for idx in 0..params.len() {
            let name_ok = params.get(idx).tensor.grad.is_some();
            if !name_ok {
                continue;
            }
            // check for non-finite gradients before touching state
            {
                let p = params.get(idx);
                let g = p.tensor.grad.as_ref().unwrap();
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(ArsqError::NonFiniteGradient(p.name.clone()));
                }
            }
            let p = params.get_mut(idx);
            let g = p.tensor.grad.take().unwrap();
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            for i in 0..g.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.tensor.data[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + EPS);
                if self.weight_decay > 0.0 {
                    p.tensor.data[i] -= self.learning_rate * self.weight_decay * p.tensor.data[i];
                }
            }
        }
        Ok(())
    }
}

/// Elementwise `target <- rho * target + (1 - rho) * online`.
pub fn ema_update(target: &mut ParamSet, online: &ParamSet, rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(ArsqError::InvalidConfig(format!(
            "ema rho must be in [0, 1], got {rho}"
        )));
    }
    if target.len() != online.len() {
        return Err(ArsqError::ShapeMismatch(
            "target/online param sets differ in length".into(),
        ));
    }
    for idx in 0..target.len() {
        let src = online.data(idx).to_vec();
        let dst = &mut target.get_mut(idx).tensor.data;
        if dst.len() != src.len() {
            return Err(ArsqError::ShapeMismatch(format!(
                "parameter '{}' length mismatch",
                target.get(idx).name
            )));
        }
        for (t, o) in dst.iter_mut().zip(src) {
            *t = rho * *t + (1.0 - rho) * o;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn single_param(value: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.add("x", Tensor::new(vec![1], vec![value]).unwrap());
        p
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = single_param(1.5);
        params.accumulate_grad(0, &[0.0]);
        let mut opt = OptimizerState::new(&params, 0.1, 0.0);
        opt.step(&mut params).unwrap();
        assert_eq!(params.data(0)[0], 1.5);
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        // bias-corrected first step with g=1: delta = lr / (1 + eps)
        let mut params = single_param(0.0);
        params.accumulate_grad(0, &[1.0]);
        let mut opt = OptimizerState::new(&params, 0.1, 0.0);
        opt.step(&mut params).unwrap();
        let expected = -0.1 / (1.0 + EPS);
        assert!((params.data(0)[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn decoupled_weight_decay_shrinks_params() {
        let mut params = single_param(2.0);
        params.accumulate_grad(0, &[0.0]);
        let mut opt = OptimizerState::new(&params, 0.1, 0.1);
        opt.step(&mut params).unwrap();
        assert!((params.data(0)[0] - (2.0 - 0.1 * 0.1 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_reports_param_name() {
        let mut params = single_param(0.0);
        params.accumulate_grad(0, &[f64::NAN]);
        let mut opt = OptimizerState::new(&params, 0.1, 0.0);
        match opt.step(&mut params) {
            Err(ArsqError::NonFiniteGradient(name)) => assert_eq!(name, "x"),
            other => panic!("expected NonFiniteGradient, got {other:?}"),
        }
    }

    #[test]
    fn ema_limit_cases() {
        let online = single_param(0.0);
        let mut target = single_param(1.0);
        ema_update(&mut target, &online, 1.0).unwrap();
        assert_eq!(target.data(0)[0], 1.0);
        ema_update(&mut target, &online, 0.0).unwrap();
        assert_eq!(target.data(0)[0], 0.0);
        let mut target = single_param(1.0);
        ema_update(&mut target, &online, 0.995).unwrap();
        assert!((target.data(0)[0] - 0.995).abs() < 1e-15);
        assert!(ema_update(&mut target, &online, 1.5).is_err());
    }

    #[test]
    fn ema_contracts_geometrically() {
        let online = single_param(3.0);
        let mut target = single_param(0.0);
        let rho: f64 = 0.9;
        for k in 1..=40 {
            ema_update(&mut target, &online, rho).unwrap();
            let expected = 3.0 * (1.0 - rho.powi(k));
            assert!((target.data(0)[0] - expected).abs() < 1e-12);
        }
    }
}

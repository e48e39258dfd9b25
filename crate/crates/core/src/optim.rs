//! Adam and linearly decayed SGD.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TlaError};
use crate::tensor::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments per parameter tensor plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate
    }
}

fn check_finite(params: &ParamSet) -> Result<()> {
    for id in params.ids() {
        if let Some(bad) = params.get(id).grad().iter().find(|g| !g.is_finite()) {
            return Err(TlaError::Numeric {
                step: 0,
                message: format!("gradient of parameter '{}' is not finite ({bad})", params.name(id)),
            });
        }
    }
    Ok(())
}

/// One bias-corrected Adam update using the gradients stored in `params`.
///
/// Fails without touching anything if any gradient is non-finite.
pub fn adam_step(state: &mut AdamState, params: &mut ParamSet) -> Result<()> {
    if state.m.len() != params.len() || state.m.iter().zip(params.tensors()).any(|(m, t)| m.len() != t.len()) {
        return Err(TlaError::dim("optimizer state does not match the parameter set"));
    }
    check_finite(params)?;
    state.t += 1;
    let AdamConfig {
        learning_rate: lr,
        beta1: b1,
        beta2: b2,
        epsilon: eps,
    } = state.config;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for ((tensor, m), v) in params.tensors_mut().iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let grad = tensor.grad().to_vec();
        for (((p, g), mi), vi) in tensor.values_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm(params: &mut ParamSet, max_norm: f64) -> f64 {
    let norm = params.grad_norm();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for t in params.tensors_mut() {
            t.grad_mut().iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

/// Learning rate interpolated linearly from `start` to `end` over
/// `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearDecaySchedule {
    pub start: f64,
    pub end: f64,
    pub total_steps: u64,
}

impl LinearDecaySchedule {
    pub fn new(start: f64, end: f64, total_steps: u64) -> Self {
        LinearDecaySchedule { start, end, total_steps }
    }

    pub fn rate(&self, step: u64) -> f64 {
        if self.total_steps == 0 {
            return self.end;
        }
        let frac = step.min(self.total_steps) as f64 / self.total_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// `params − rate(step)·grads` on raw slices.
pub fn sgd_step(schedule: &LinearDecaySchedule, step: u64, params: &mut [f64], grads: &[f64]) {
    let lr = schedule.rate(step);
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_set(v: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.add("x", Tensor::vector(vec![v]));
        ps
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut ps = scalar_set(1.25);
        let mut st = AdamState::new(&ps, AdamConfig::default());
        for _ in 0..3 {
            adam_step(&mut st, &mut ps).unwrap();
        }
        assert_eq!(ps.tensors()[0].values(), &[1.25]);
        assert_eq!(st.t, 3);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [0.3, -7.0, 1e-3] {
            let mut ps = scalar_set(0.0);
            ps.tensors_mut()[0].grad_mut()[0] = g;
            let mut st = AdamState::new(&ps, AdamConfig::default());
            adam_step(&mut st, &mut ps).unwrap();
            let delta = ps.tensors()[0].values()[0];
            assert!((delta.abs() - 0.001).abs() < 1e-7, "g={g} delta={delta}");
            assert_eq!(delta.signum(), -g.signum());
        }
    }

    #[test]
    fn two_step_hand_trace() {
        // g1 = 2, g2 = -1, lr = 0.1
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut ps = scalar_set(1.0);
        let mut st = AdamState::new(&ps, cfg);
        ps.tensors_mut()[0].grad_mut()[0] = 2.0;
        adam_step(&mut st, &mut ps).unwrap();
        // m1 = 0.2, v1 = 0.004, mhat = 2, vhat = 4 -> step 0.1·2/(2+1e-8)
        let x1 = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((ps.tensors()[0].values()[0] - x1).abs() < 1e-15);
        assert!((st.m[0][0] - 0.2).abs() < 1e-15);
        assert!((st.v[0][0] - 0.004).abs() < 1e-15);

        ps.tensors_mut()[0].grad_mut()[0] = -1.0;
        adam_step(&mut st, &mut ps).unwrap();
        let m2 = 0.9 * 0.2 - 0.1;
        let v2 = 0.999 * 0.004 + 0.001;
        let mhat = m2 / (1.0 - 0.81);
        let vhat = v2 / (1.0 - 0.999f64.powi(2));
        let x2 = x1 - 0.1 * mhat / (vhat.sqrt() + 1e-8);
        assert_eq!(st.t, 2);
        assert!((st.m[0][0] - m2).abs() < 1e-15);
        assert!((st.v[0][0] - v2).abs() < 1e-15);
        assert!((ps.tensors()[0].values()[0] - x2).abs() < 1e-14);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut ps = scalar_set(0.0);
        ps.tensors_mut()[0].grad_mut()[0] = f64::NAN;
        let mut st = AdamState::new(&ps, AdamConfig::default());
        let err = adam_step(&mut st, &mut ps).unwrap_err().to_string();
        assert!(err.contains("'x'"), "{err}");
        assert_eq!(st.t, 0);
    }

    #[test]
    fn adam_descends_convex_quadratic() {
        // f(x) = Σ a_i (x_i − c_i)²
        let a = [1.0, 3.0, 0.5];
        let c = [0.2, -0.4, 0.9];
        let mut ps = ParamSet::new();
        ps.add("x", Tensor::vector(vec![0.0; 3]));
        let mut st = AdamState::new(&ps, AdamConfig::default());
        let f = |x: &[f64]| -> f64 { (0..3).map(|i| a[i] * (x[i] - c[i]).powi(2)).sum() };
        let mut trace = vec![f(ps.tensors()[0].values())];
        for _ in 0..50 {
            let x = ps.tensors()[0].values().to_vec();
            for i in 0..3 {
                ps.tensors_mut()[0].grad_mut()[i] = 2.0 * a[i] * (x[i] - c[i]);
            }
            adam_step(&mut st, &mut ps).unwrap();
            ps.zero_grad();
            trace.push(f(ps.tensors()[0].values()));
        }
        for w in trace[3..].windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn linear_schedule_endpoints_and_midpoint() {
        let s = LinearDecaySchedule::new(0.025, 0.001, 1000);
        assert_eq!(s.rate(0), 0.025);
        assert!((s.rate(1000) - 0.001).abs() < 1e-15);
        assert!((s.rate(500) - 0.013).abs() < 1e-15);
        let mut p = vec![1.0, 2.0];
        sgd_step(&s, 10, &mut p, &[0.0, 0.0]);
        assert_eq!(p, vec![1.0, 2.0]);
        sgd_step(&s, 0, &mut p, &[1.0, -2.0]);
        assert_eq!(p, vec![1.0 - 0.025, 2.0 + 0.05]);
    }
}

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::num::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        Self {
            t: 0,
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        }
    }
}

/// One bias-corrected Adam update. Parameters are left untouched when any
/// gradient is non-finite.
pub fn adam_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::ShapeMismatch("adam: parameter / gradient count".into()));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if g.len() != p.numel() || state.m[i].len() != p.numel() {
            return Err(Error::ShapeMismatch(format!("adam: tensor {i} size")));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of parameter tensor {i}")));
        }
    }
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let g = grads[i][j].as_f64();
            let mj = b1 * m[j].as_f64() + (1.0 - b1) * g;
            let vj = b2 * v[j].as_f64() + (1.0 - b2) * g * g;
            m[j] = T::from_f64(mj);
            v[j] = T::from_f64(vj);
            let update = lr * (mj / bc1) / ((vj / bc2).sqrt() + cfg.eps);
            *w = T::from_f64(w.as_f64() - update);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f32) -> Vec<Tensor<f32>> {
        vec![Tensor::from_vec([1, 1, 1, 1], vec![v]).unwrap()]
    }

    #[test]
    fn first_step_moves_by_lr() {
        // with bias correction the first update is lr * g / (|g| + eps)
        for g in [0.3f32, -2.0, 1e-3] {
            let mut p = one(1.0);
            let mut st = AdamState::new(&p);
            adam_step(&mut p, &[vec![g]], &mut st, &AdamConfig::default(), 0.01).unwrap();
            let expected = 1.0 - 0.01 * g.signum() as f64 * (g.abs() as f64 / (g.abs() as f64 + 1e-8));
            assert!((p[0].data()[0] as f64 - expected).abs() < 1e-7);
        }
    }

    #[test]
    fn matches_hand_rolled_sequence() {
        let cfg = AdamConfig::default();
        let grads = [0.5, -0.2, 0.1, 0.4, -0.3];
        let mut p = one(0.0);
        let mut st = AdamState::new(&p);
        let (mut w, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for (k, &g) in grads.iter().enumerate() {
            adam_step(&mut p, &[vec![g as f32]], &mut st, &cfg, 1e-2).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let t = (k + 1) as i32;
            w -= 1e-2 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
        }
        assert_eq!(st.t, 5);
        assert!((p[0].data()[0] as f64 - w).abs() < 1e-6);
    }

    #[test]
    fn two_constant_steps_match_recurrence() {
        let mut p = vec![Tensor::<f64>::from_vec([1, 1, 1, 1], vec![0.0]).unwrap()];
        let mut st = AdamState::new(&p);
        let (mut w, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            adam_step(&mut p, &[vec![1.0]], &mut st, &AdamConfig::default(), 1e-3).unwrap();
            m = 0.9 * m + 0.1;
            v = 0.999 * v + 0.001;
            w -= 1e-3 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
        }
        assert!((p[0].data()[0] - w).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = one(0.7);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[vec![0.0]], &mut st, &AdamConfig::default(), 0.1).unwrap();
        assert_eq!(p[0].data()[0], 0.7);
    }

    #[test]
    fn non_finite_gradient_leaves_state_alone() {
        let mut p = one(0.7);
        let mut st = AdamState::new(&p);
        let before = st.clone();
        let err = adam_step(&mut p, &[vec![f32::NAN]], &mut st, &AdamConfig::default(), 0.1);
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(p[0].data()[0], 0.7);
        assert_eq!(st, before);
    }
}

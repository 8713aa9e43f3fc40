use crate::{HstError, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    /// Decoupled weight decay, applied as `p -= lr * weight_decay * p`.
    pub weight_decay: T,
}

impl<T: Real> AdamConfig<T> {
    pub fn new(lr: T) -> Self {
        Self { lr, beta1: T::lit(0.9), beta2: T::lit(0.98), eps: T::lit(1e-8), weight_decay: T::zero() }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = sizes.into_iter().collect();
        Self {
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update with decoupled weight decay, in place.
pub fn adam_step<T: Real>(params: &mut [Vec<T>], grads: &[Vec<T>], state: &mut AdamState<T>, cfg: &AdamConfig<T>) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(HstError::Shape(format!(
            "adam: {} params, {} grads, {} state buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = i32::try_from(state.step).unwrap_or(i32::MAX);
    let bc1 = T::one() - cfg.beta1.powi(t);
    let bc2 = T::one() - cfg.beta2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(HstError::Shape("adam: parameter and gradient sizes differ".into()));
        }
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (T::one() - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (T::one() - cfg.beta2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            let decay = cfg.weight_decay * p[i];
            p[i] -= cfg.lr * (mhat / (vhat.sqrt() + cfg.eps) + decay);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![vec![1.0f64, -2.0, 3.0]];
        let before = p.clone();
        let mut st = AdamState::new([3]);
        adam_step(&mut p, &[vec![0.0; 3]], &mut st, &AdamConfig::new(1e-3)).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut p = vec![vec![0.5f64, 0.5]];
        let g = vec![vec![3.0, -0.2]];
        let mut st = AdamState::new([2]);
        let cfg = AdamConfig::new(1e-2);
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let expect0 = 0.5 - 1e-2 * 3.0 / (3.0 + 1e-8);
        let expect1 = 0.5 + 1e-2 * 0.2 / (0.2 + 1e-8);
        assert!((p[0][0] - expect0).abs() < 1e-15);
        assert!((p[0][1] - expect1).abs() < 1e-15);
    }

    #[test]
    fn decoupled_weight_decay_matches_hand_computation() {
        let mut p = vec![vec![2.0f64]];
        let mut st = AdamState::new([1]);
        let cfg = AdamConfig { weight_decay: 1e-4, ..AdamConfig::new(0.1) };
        adam_step(&mut p, &[vec![0.0]], &mut st, &cfg).unwrap();
        assert!((p[0][0] - (2.0 - 0.1 * 1e-4 * 2.0)).abs() < 1e-15);
        // Second step, nonzero gradient: hand-rolled moments.
        adam_step(&mut p, &[vec![1.0]], &mut st, &cfg).unwrap();
        let p1 = 2.0 - 0.1 * 1e-4 * 2.0;
        let m = 0.1 * 1.0;
        let v = 0.02 * 1.0;
        let mhat = m / (1.0 - 0.9f64.powi(2));
        let vhat = v / (1.0 - 0.98f64.powi(2));
        let expect = p1 - 0.1 * (mhat / (vhat.sqrt() + 1e-8) + 1e-4 * p1);
        assert!((p[0][0] - expect).abs() < 1e-14);
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let mut p = vec![vec![1.0f64]];
        let mut st = AdamState::new([1]);
        assert!(adam_step(&mut p, &[vec![1.0, 2.0]], &mut st, &AdamConfig::new(0.1)).is_err());
        assert!(adam_step(&mut p, &[], &mut st, &AdamConfig::new(0.1)).is_err());
    }
}

use serde::{Deserialize, Serialize};

/// First and second moment estimates of Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update of `theta` in place.
///
/// Coordinates with `mask[i] == false` are left untouched, moments included.
pub fn adam_step(state: &mut AdamState, theta: &mut [f64], g: &[f64], lr: f64, mask: Option<&[bool]>) {
    assert_eq!(theta.len(), g.len());
    assert_eq!(theta.len(), state.m.len());
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..theta.len() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let m = b1 * state.m[i] + (1.0 - b1) * g[i];
        let v = b2 * state.v[i] + (1.0 - b2) * g[i] * g[i];
        state.m[i] = m;
        state.v[i] = v;
        theta[i] -= lr * (m / c1) / ((v / c2).sqrt() + state.eps);
    }
}

/// `lr = initial * factor^(step / every)`, decayed continuously.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSchedule {
    pub initial: f64,
    pub factor: f64,
    pub every: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { initial: 1e-3, factor: 0.9, every: 1000 }
    }
}

impl LrSchedule {
    pub fn at(&self, step: usize) -> f64 {
        self.initial * self.factor.powf(step as f64 / self.every as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_theta() {
        let mut s = AdamState::new(3);
        let mut th = [1.0, -2.0, 0.5];
        adam_step(&mut s, &mut th, &[0.0; 3], 1e-3, None);
        assert_eq!(th, [1.0, -2.0, 0.5]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = AdamState::new(1);
        let mut th = [0.0];
        adam_step(&mut s, &mut th, &[1.0], 1e-3, None);
        assert!((th[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn quadratic_descends_monotonically() {
        let mut s = AdamState::new(4);
        let mut th = [1.0, -0.5, 2.0, 0.3];
        let norm = |t: &[f64]| t.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut last = norm(&th);
        for _ in 0..100 {
            let g = th;
            adam_step(&mut s, &mut th, &g, 0.01, None);
            let n = norm(&th);
            assert!(n < last);
            last = n;
        }
    }

    #[test]
    fn mask_freezes_coordinates_bitwise() {
        let mut s = AdamState::new(2);
        let mut th = [0.123456789, 0.5];
        for _ in 0..10 {
            adam_step(&mut s, &mut th, &[1.0, 1.0], 0.1, Some(&[false, true]));
        }
        assert_eq!(th[0].to_bits(), 0.123456789f64.to_bits());
        assert!(th[1] < 0.5);
    }

    #[test]
    fn schedule_decays_by_factor_per_interval() {
        let s = LrSchedule::default();
        assert_eq!(s.at(0), 1e-3);
        assert!((s.at(1000) - 9e-4).abs() < 1e-18);
        assert!((s.at(500) - 1e-3 * 0.9f64.sqrt()).abs() < 1e-18);
    }
}

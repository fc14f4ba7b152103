//! Error norms and convergence-order fits.

use serde::Serialize;

use crate::error::{Error, Result};

/// `sqrt(sum (pred - ref)^2 / sum ref^2)` over every timestamp and grid point.
///
/// Rows are timestamps; row `n` of both arguments must have equal length.
pub fn relative_l2(pred: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(Error::ShapeError { expected: reference.len(), got: pred.len() });
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (p, r) in pred.iter().zip(reference) {
        if p.len() != r.len() {
            return Err(Error::ShapeError { expected: r.len(), got: p.len() });
        }
        for (a, b) in p.iter().zip(r) {
            num += (a - b) * (a - b);
            den += b * b;
        }
    }
    if den == 0.0 {
        return Err(Error::DegenerateReference);
    }
    Ok((num / den).sqrt())
}

/// Euclidean norm of one snapshot.
pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Least-squares slope of `log e` against `log h` for `(h, e)` pairs with `h` strictly decreasing.
pub fn convergence_order(data: &[(f64, f64)]) -> Result<f64> {
    if data.len() < 3 {
        return Err(Error::DomainError(format!("need at least 3 points, got {}", data.len())));
    }
    if data.windows(2).any(|w| w[1].0 >= w[0].0) {
        return Err(Error::DomainError("step sizes must strictly decrease".into()));
    }
    if data.iter().any(|&(h, e)| !(h > 0.0 && e > 0.0)) {
        return Err(Error::DomainError("steps and errors must be positive".into()));
    }
    let n = data.len() as f64;
    let xs: Vec<f64> = data.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = data.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// Number of sign changes along a periodic sample, i.e. interface crossings.
pub fn interface_count(v: &[f64]) -> usize {
    let n = v.len();
    (0..n).filter(|&i| (v[i] > 0.0) != (v[(i + 1) % n] > 0.0)).count()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Per-run summary: the global error plus per-timestamp profiles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub relative_l2: f64,
    /// Relative error of each timestamp `n = 1..=N_t` on its own.
    pub per_step: Vec<f64>,
    /// Final residual loss `L_r(t_n)`.
    pub residual: Vec<f64>,
    pub epochs: Vec<usize>,
}

impl ErrorReport {
    pub fn new(pred: &[Vec<f64>], reference: &[Vec<f64>], residual: Vec<f64>, epochs: Vec<usize>) -> Result<Self> {
        let relative_l2 = relative_l2(pred, reference)?;
        let per_step = pred
            .iter()
            .zip(reference)
            .map(|(p, r)| {
                let den = l2_norm(r);
                let num = p.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                if den > 0.0 {
                    num / den
                } else {
                    num
                }
            })
            .collect();
        Ok(Self { relative_l2, per_step, residual, epochs })
    }

    /// `max_n L_r / median_n L_r`, the temporal-causality ratio.
    pub fn residual_ratio(&self) -> f64 {
        let max = self.residual.iter().cloned().fold(0.0, f64::max);
        max / median(&self.residual)
    }

    pub fn mean_epochs(&self) -> f64 {
        self.epochs.iter().sum::<usize>() as f64 / self.epochs.len().max(1) as f64
    }

    /// CSV with one row per timestamp and a trailing summary row.
    pub fn to_csv(&self, tau: f64) -> String {
        let mut s = String::from("n,t,rel_l2,residual,epochs\n");
        for (i, ((e, r), ep)) in self.per_step.iter().zip(&self.residual).zip(&self.epochs).enumerate() {
            let n = i + 1;
            s.push_str(&format!("{n},{:.6},{e:.6e},{r:.6e},{ep}\n", n as f64 * tau));
        }
        s.push_str(&format!("total,,{:.6e},{:.6e},{:.2}\n", self.relative_l2, median(&self.residual), self.mean_epochs()));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn relative_l2_examples() {
        let r = vec![vec![1.0, -2.0], vec![0.5, 3.0]];
        assert_eq!(relative_l2(&r, &r).unwrap(), 0.0);
        let zero = vec![vec![0.0; 2]; 2];
        assert_eq!(relative_l2(&zero, &r).unwrap(), 1.0);
        let scaled: Vec<Vec<f64>> = r.iter().map(|v| v.iter().map(|x| 1.01 * x).collect()).collect();
        assert!((relative_l2(&scaled, &r).unwrap() - 0.01).abs() < 1e-14);
        assert!(matches!(relative_l2(&r, &zero), Err(Error::DegenerateReference)));
    }

    #[test]
    fn convergence_order_examples() {
        let hs = [0.1, 0.05, 0.025];
        let sq: Vec<_> = hs.iter().map(|&h| (h, h * h)).collect();
        assert!((convergence_order(&sq).unwrap() - 2.0).abs() < 1e-12);
        let lin: Vec<_> = hs.iter().map(|&h| (h, 3.0 * h)).collect();
        assert!((convergence_order(&lin).unwrap() - 1.0).abs() < 1e-12);
        assert!(convergence_order(&[(0.1, 1.0), (0.05, 0.0), (0.01, 1.0)]).is_err());
        assert!(convergence_order(&sq[..2]).is_err());
    }

    #[test]
    fn cn_decay_order() {
        let cn = crate::schemes::ButcherTableau::builtin("crank_nicolson").unwrap();
        let data: Vec<(f64, f64)> = [0.1, 0.05, 0.025, 0.0125]
            .iter()
            .map(|&tau| {
                let n = (1.0 / tau as f64).round() as usize;
                // closed-form CN amplification, stepped n times
                let r = (1.0 - tau / 2.0) / (1.0 + tau / 2.0);
                let u: f64 = (0..n).fold(1.0, |u, _| u * r);
                let stepped = (0..n).fold(num_complex::Complex64::new(1.0, 0.0), |u, _| {
                    cn.step_linear(num_complex::Complex64::new(-1.0, 0.0), tau, u)
                });
                assert!((stepped.re - u).abs() < 1e-14);
                (tau, (u - (-1f64).exp()).abs())
            })
            .collect();
        assert!((convergence_order(&data).unwrap() - 2.0).abs() < 0.05);
    }

    #[test]
    fn interfaces_and_ratio() {
        assert_eq!(interface_count(&[1.0, 1.0, -1.0, -1.0, 1.0]), 2);
        let r = ErrorReport {
            relative_l2: 0.0,
            per_step: vec![],
            residual: vec![1.0, 2.0, 3.0, 30.0],
            epochs: vec![1, 3],
        };
        assert_eq!(r.residual_ratio(), 12.0);
        assert_eq!(r.mean_epochs(), 2.0);
    }

    proptest! {
        #[test]
        fn relative_l2_scale_covariant(
            data in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..40),
            c in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
        ) {
            let pred = vec![data.iter().map(|d| d.0).collect::<Vec<_>>()];
            let reference = vec![data.iter().map(|d| d.1 + 20.0).collect::<Vec<_>>()];
            let scale = |v: &Vec<Vec<f64>>| v.iter().map(|r| r.iter().map(|x| c * x).collect()).collect::<Vec<Vec<f64>>>();
            let a = relative_l2(&pred, &reference).unwrap();
            let b = relative_l2(&scale(&pred), &scale(&reference)).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn convergence_order_recovers_power(p in 0.5f64..5.0, c in 0.01f64..100.0) {
            let data: Vec<_> = [0.2, 0.1, 0.05, 0.025].iter().map(|&h: &f64| (h, c * h.powf(p))).collect();
            prop_assert!((convergence_order(&data).unwrap() - p).abs() < 1e-10);
        }
    }
}

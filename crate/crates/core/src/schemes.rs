//! Runge–Kutta time-differencing schemes and the per-point discrete residuals
//! that the spatial networks are trained against.

use std::fmt;

use num_complex::Complex64;

use crate::autodiff::{DerivativeTower, Real};
use crate::error::{Error, Result};
use crate::pdes::{Operator, PointJet};

pub const SCHEMES: [&str; 7] = [
    "forward_euler",
    "backward_euler",
    "trapezoidal",
    "crank_nicolson",
    "rk2",
    "rk4",
    "gauss_legendre2",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ButcherTableau {
    name: String,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    c: Vec<f64>,
    order: usize,
    implicit: bool,
}

/// One order condition `lhs == rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderCondition {
    pub order: usize,
    pub label: &'static str,
    pub lhs: f64,
    pub rhs: f64,
}

impl OrderCondition {
    pub fn holds(&self, tol: f64) -> bool {
        (self.lhs - self.rhs).abs() <= tol
    }
}

/// How a tableau is turned into a training loss.
#[derive(Debug, Clone, PartialEq)]
pub enum ResidualForm {
    /// Every stage argument is a fixed blend `w u^{n+1} + (1 - w) u^n`, so one
    /// network suffices. Entries are `(b_i, w_i)`.
    Single(Vec<(f64, f64)>),
    /// Stage values are separate networks trained jointly with `u^{n+1}`.
    Stages,
}

impl ButcherTableau {
    /// Builds a tableau; `c` is taken as the row sums of `a`.
    pub fn new(name: &str, a: Vec<Vec<f64>>, b: Vec<f64>, order: usize) -> Result<Self> {
        let q = b.len();
        if q == 0 || a.len() != q {
            return Err(Error::ShapeError { expected: q, got: a.len() });
        }
        if let Some(row) = a.iter().find(|r| r.len() != q) {
            return Err(Error::ShapeError { expected: q, got: row.len() });
        }
        let c = a.iter().map(|r| r.iter().sum()).collect();
        let implicit = (0..q).any(|i| (i..q).any(|j| a[i][j] != 0.0));
        Ok(Self { name: name.to_string(), a, b, c, order, implicit })
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let s3 = 3f64.sqrt() / 6.0;
        let (a, b, order) = match name {
            "forward_euler" => (vec![vec![0.0]], vec![1.0], 1),
            "backward_euler" => (vec![vec![1.0]], vec![1.0], 1),
            "trapezoidal" => (vec![vec![0.0, 0.0], vec![0.5, 0.5]], vec![0.5, 0.5], 2),
            "crank_nicolson" => (vec![vec![0.5]], vec![1.0], 2),
            "rk2" => (vec![vec![0.0, 0.0], vec![0.5, 0.0]], vec![0.0, 1.0], 2),
            "rk4" => (
                vec![
                    vec![0.0, 0.0, 0.0, 0.0],
                    vec![0.5, 0.0, 0.0, 0.0],
                    vec![0.0, 0.5, 0.0, 0.0],
                    vec![0.0, 0.0, 1.0, 0.0],
                ],
                vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
                4,
            ),
            "gauss_legendre2" => (vec![vec![0.25, 0.25 - s3], vec![0.25 + s3, 0.25]], vec![0.5, 0.5], 4),
            other => return Err(Error::UnknownScheme(other.to_string())),
        };
        Self::new(name, a, b, order)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &[Vec<f64>] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn classical_order(&self) -> usize {
        self.order
    }

    pub fn is_implicit(&self) -> bool {
        self.implicit
    }

    /// The rooted-tree conditions up to order four.
    pub fn order_conditions(&self, max_order: usize) -> Vec<OrderCondition> {
        let q = self.stages();
        let (a, b, c) = (&self.a, &self.b, &self.c);
        let ac: Vec<f64> = (0..q).map(|i| (0..q).map(|j| a[i][j] * c[j]).sum()).collect();
        let ac2: Vec<f64> = (0..q).map(|i| (0..q).map(|j| a[i][j] * c[j] * c[j]).sum()).collect();
        let aac: Vec<f64> = (0..q).map(|i| (0..q).map(|j| a[i][j] * ac[j]).sum()).collect();
        let dot = |v: &dyn Fn(usize) -> f64| (0..q).map(|i| b[i] * v(i)).sum::<f64>();
        let all = [
            (1, "sum b", dot(&|_| 1.0), 1.0),
            (2, "sum b c", dot(&|i| c[i]), 0.5),
            (3, "sum b c^2", dot(&|i| c[i] * c[i]), 1.0 / 3.0),
            (3, "sum b a c", dot(&|i| ac[i]), 1.0 / 6.0),
            (4, "sum b c^3", dot(&|i| c[i].powi(3)), 0.25),
            (4, "sum b c a c", dot(&|i| c[i] * ac[i]), 0.125),
            (4, "sum b a c^2", dot(&|i| ac2[i]), 1.0 / 12.0),
            (4, "sum b a a c", dot(&|i| aac[i]), 1.0 / 24.0),
        ];
        all.into_iter()
            .filter(|(o, ..)| *o <= max_order)
            .map(|(order, label, lhs, rhs)| OrderCondition { order, label, lhs, rhs })
            .collect()
    }

    /// Stage values `k` of `u' = lambda u` from `u`, by solving `(I - z A) k = lambda u 1`.
    fn linear_stages(&self, lambda: Complex64, tau: f64, u: Complex64) -> Vec<Complex64> {
        let q = self.stages();
        let z = lambda * tau;
        let mut m: Vec<Vec<Complex64>> = (0..q)
            .map(|i| {
                (0..q)
                    .map(|j| {
                        let id = if i == j { 1.0 } else { 0.0 };
                        Complex64::new(id, 0.0) - z * self.a[i][j]
                    })
                    .collect()
            })
            .collect();
        let mut rhs = vec![lambda * u; q];
        solve_in_place(&mut m, &mut rhs);
        rhs
    }

    /// One step of `u' = lambda u`.
    pub fn step_linear(&self, lambda: Complex64, tau: f64, u: Complex64) -> Complex64 {
        let k = self.linear_stages(lambda, tau, u);
        u + k.iter().zip(&self.b).map(|(k, b)| k * *b).sum::<Complex64>() * tau
    }

    /// Stability function `R(z)`, the one-step amplification of `u' = lambda u` at `z = lambda tau`.
    pub fn stability(&self, z: Complex64) -> Complex64 {
        self.step_linear(z, 1.0, Complex64::new(1.0, 0.0))
    }

    pub fn residual_form(&self) -> ResidualForm {
        let q = self.stages();
        if q == 1 {
            if self.b[0] == 0.0 {
                return ResidualForm::Stages;
            }
            return ResidualForm::Single(vec![(self.b[0], self.a[0][0] / self.b[0])]);
        }
        let mut out = Vec::with_capacity(q);
        for (i, row) in self.a.iter().enumerate() {
            if row.iter().all(|&x| x == 0.0) {
                out.push((self.b[i], 0.0));
            } else if row.iter().zip(&self.b).all(|(x, y)| x == y) {
                out.push((self.b[i], 1.0));
            } else {
                return ResidualForm::Stages;
            }
        }
        ResidualForm::Single(out)
    }
}

/// Gaussian elimination with partial pivoting; the system is tiny and nonsingular.
fn solve_in_place(m: &mut [Vec<Complex64>], rhs: &mut [Complex64]) {
    let n = rhs.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].norm().total_cmp(&m[j][col].norm())).unwrap();
        m.swap(col, piv);
        rhs.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                let sub = f * m[col][k];
                m[row][k] -= sub;
            }
            let sub = f * rhs[col];
            rhs[row] -= sub;
        }
    }
    for col in (0..n).rev() {
        let mut s = rhs[col];
        for k in col + 1..n {
            s -= m[col][k] * rhs[k];
        }
        rhs[col] = s / m[col][col];
    }
}

impl fmt::Display for ButcherTableau {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = if self.implicit { "implicit" } else { "explicit" };
        writeln!(f, "{} (order {}, {})", self.name, self.order, kind)?;
        for (ci, row) in self.c.iter().zip(&self.a) {
            write!(f, "{ci:>10.6} |")?;
            for x in row {
                write!(f, " {x:>10.6}")?;
            }
            writeln!(f)?;
        }
        writeln!(f, "{}+{}", "-".repeat(11), "-".repeat(11 * self.stages()))?;
        write!(f, "{:>10} |", "")?;
        for x in &self.b {
            write!(f, " {x:>10.6}")?;
        }
        writeln!(f)
    }
}

/// Residual entries at one collocation point.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeResidual {
    pub values: Vec<f64>,
}

impl SchemeResidual {
    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn sum_squares(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Residual of a single-network form, in the evolved field.
///
/// Arguments with `w == 0` depend only on the frozen previous state and are
/// evaluated in plain `f64`.
pub fn single_residual<T: Real>(
    weights: &[(f64, f64)],
    next: &PointJet<T>,
    prev: &PointJet<f64>,
    op: &Operator,
    tau: f64,
) -> T {
    let e = op.evolved_field();
    let mut r = (next.value(e) - prev.value(e)) * (1.0 / tau);
    let mut frozen = 0.0;
    for &(b, w) in weights {
        if b == 0.0 {
            continue;
        }
        if w == 0.0 {
            frozen += b * op.apply(prev);
        } else {
            let arg = next.scaled_plus(w, &prev.scaled(1.0 - w));
            r = r - op.apply(&arg) * b;
        }
    }
    r - frozen
}

/// Stage-equation residuals `k_i - N[u^n + tau sum_j a_ij k_j]` followed by the
/// update residual `(u^{n+1} - u^n) / tau - sum_i b_i k_i`.
pub fn bundle_residuals<T: Real>(
    tab: &ButcherTableau,
    stages: &[PointJet<T>],
    next: &PointJet<T>,
    prev: &PointJet<f64>,
    op: &Operator,
    tau: f64,
    out: &mut Vec<T>,
) {
    debug_assert_eq!(stages.len(), tab.stages());
    for (i, row) in tab.a.iter().enumerate() {
        let mut arg: Option<PointJet<T>> = None;
        for (j, &aij) in row.iter().enumerate() {
            if aij == 0.0 {
                continue;
            }
            match arg.as_mut() {
                Some(acc) => acc.add_scaled(&stages[j], tau * aij),
                None => arg = Some(stages[j].scaled_plus(tau * aij, prev)),
            }
        }
        let k = stages[i].value(0);
        out.push(match arg {
            Some(arg) => k - op.apply(&arg),
            None => k - op.apply(prev),
        });
    }
    let mut r = (next.value(0) - prev.value(0)) * (1.0 / tau);
    for (k, &b) in stages.iter().zip(&tab.b) {
        if b != 0.0 {
            r = r - k.value(0) * b;
        }
    }
    out.push(r);
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::DomainError(format!("time step {tau} must be positive")));
    }
    Ok(())
}

/// Crank–Nicolson residual `(u^{n+1} - u^n) / tau - N[(u^{n+1} + u^n) / 2]` at one point.
pub fn cn_residual(u_next: &DerivativeTower, u_prev: &DerivativeTower, op: &Operator, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let next = PointJet::from_tower(u_next);
    let prev = PointJet::from_tower(u_prev);
    op.check_order(&next)?;
    op.check_order(&prev)?;
    Ok(single_residual(&[(1.0, 0.5)], &next, &prev, op, tau))
}

/// All `q + 1` residual equations of a general tableau at one point.
pub fn stage_residuals(
    tab: &ButcherTableau,
    stages: &[DerivativeTower],
    u_next: &DerivativeTower,
    u_prev: &DerivativeTower,
    op: &Operator,
    tau: f64,
) -> Result<SchemeResidual> {
    check_tau(tau)?;
    if stages.len() != tab.stages() {
        return Err(Error::ShapeError { expected: tab.stages(), got: stages.len() });
    }
    let ks: Vec<PointJet<f64>> = stages.iter().map(PointJet::from_tower).collect();
    let prev = PointJet::from_tower(u_prev);
    op.check_order(&prev)?;
    for k in &ks {
        op.check_order(k)?;
    }
    let mut values = Vec::with_capacity(tab.stages() + 1);
    bundle_residuals(tab, &ks, &PointJet::from_tower(u_next), &prev, op, tau, &mut values);
    Ok(SchemeResidual { values })
}

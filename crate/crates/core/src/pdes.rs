//! Concrete evolutionary problems `u_t = N(u)`: spatial operators acting on
//! derivative jets, domains, boundary handling and initial conditions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::{DerivativeTower, Real};
use crate::error::{Error, Result};

/// Spatial derivatives of every solution field at one point.
///
/// Entry `(field, axis, k)` is the k-th derivative of `field` along `axis`;
/// `k = 0` is the field value (duplicated across axes).
#[derive(Debug, Clone, PartialEq)]
pub struct PointJet<T> {
    fields: usize,
    axes: usize,
    ncoef: usize,
    data: Vec<T>,
}

impl<T: Copy> PointJet<T> {
    pub fn from_fn(fields: usize, axes: usize, order: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let ncoef = order + 1;
        let mut data = Vec::with_capacity(fields * axes * ncoef);
        for fi in 0..fields {
            for a in 0..axes {
                for k in 0..ncoef {
                    data.push(f(fi, a, k));
                }
            }
        }
        Self { fields, axes, ncoef, data }
    }

    pub fn fields(&self) -> usize {
        self.fields
    }

    pub fn axes(&self) -> usize {
        self.axes
    }

    pub fn order(&self) -> usize {
        self.ncoef - 1
    }

    #[inline]
    pub fn d(&self, field: usize, axis: usize, k: usize) -> T {
        self.data[(field * self.axes + axis) * self.ncoef + k]
    }

    #[inline]
    pub fn value(&self, field: usize) -> T {
        self.d(field, 0, 0)
    }
}

impl<T: Real> PointJet<T> {
    /// `self * s + base`, entrywise.
    pub fn scaled_plus(&self, s: f64, base: &PointJet<f64>) -> PointJet<T> {
        debug_assert_eq!(self.data.len(), base.data.len());
        PointJet {
            fields: self.fields,
            axes: self.axes,
            ncoef: self.ncoef,
            data: self.data.iter().zip(&base.data).map(|(&x, &b)| x * s + b).collect(),
        }
    }

    /// `self += other * s`, entrywise.
    pub fn add_scaled(&mut self, other: &PointJet<T>, s: f64) {
        for (x, &o) in self.data.iter_mut().zip(&other.data) {
            *x = *x + o * s;
        }
    }
}

impl PointJet<f64> {
    pub fn scaled(&self, s: f64) -> Self {
        Self { data: self.data.iter().map(|x| x * s).collect(), ..*self }
    }

    /// One-field, one-axis jet from a derivative tower.
    pub fn from_tower(t: &DerivativeTower) -> Self {
        Self::from_fn(1, 1, t.order(), |_, _, k| t.coeffs()[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Operator {
    /// `D u_xx + r u`; covers the heat test problem and the zero/decay toys.
    Linear { diffusion: f64, reaction: f64 },
    /// `d1 u_xx + d2 u^2`.
    ReactionDiffusion { d1: f64, d2: f64 },
    /// `g1 u_xx + g2 u (1 - u^2)`.
    AllenCahn { g1: f64, g2: f64 },
    /// `-(alpha u u_x + beta u_xx + gamma u_xxxx)`.
    KuramotoSivashinsky { alpha: f64, beta: f64, gamma: f64 },
    /// Vorticity transport `-(u w_x + v w_y) + (w_xx + w_yy) / Re` on fields `(u, v, w)`,
    /// constrained by `u_x + v_y = 0` and `w = v_x - u_y`.
    NavierStokes { re: f64 },
}

impl Operator {
    pub fn order(&self) -> usize {
        match self {
            Operator::Linear { diffusion, .. } if *diffusion == 0.0 => 0,
            Operator::KuramotoSivashinsky { .. } => 4,
            _ => 2,
        }
    }

    pub fn field_count(&self) -> usize {
        match self {
            Operator::NavierStokes { .. } => 3,
            _ => 1,
        }
    }

    /// Index of the field advanced in time; the others are slaved by constraints.
    pub fn evolved_field(&self) -> usize {
        match self {
            Operator::NavierStokes { .. } => 2,
            _ => 0,
        }
    }

    pub fn coefficients(&self) -> Vec<(&'static str, f64)> {
        match *self {
            Operator::Linear { diffusion, reaction } => vec![("diffusion", diffusion), ("reaction", reaction)],
            Operator::ReactionDiffusion { d1, d2 } => vec![("d1", d1), ("d2", d2)],
            Operator::AllenCahn { g1, g2 } => vec![("gamma1", g1), ("gamma2", g2)],
            Operator::KuramotoSivashinsky { alpha, beta, gamma } => {
                vec![("alpha", alpha), ("beta", beta), ("gamma", gamma)]
            }
            Operator::NavierStokes { re } => vec![("re", re)],
        }
    }

    /// `N[u]` at a point. The jet must carry at least [`Operator::order`] derivatives.
    pub fn apply<T: Real>(&self, j: &PointJet<T>) -> T {
        match *self {
            Operator::Linear { diffusion, reaction } => {
                let u = j.value(0);
                if diffusion == 0.0 {
                    u * reaction
                } else {
                    j.d(0, 0, 2) * diffusion + u * reaction
                }
            }
            Operator::ReactionDiffusion { d1, d2 } => {
                let u = j.value(0);
                j.d(0, 0, 2) * d1 + u * u * d2
            }
            Operator::AllenCahn { g1, g2 } => {
                let u = j.value(0);
                j.d(0, 0, 2) * g1 + (u - u * u * u) * g2
            }
            Operator::KuramotoSivashinsky { alpha, beta, gamma } => {
                let u = j.value(0);
                -(u * j.d(0, 0, 1) * alpha + j.d(0, 0, 2) * beta + j.d(0, 0, 4) * gamma)
            }
            Operator::NavierStokes { re } => {
                let (u, v) = (j.value(0), j.value(1));
                let transport = u * j.d(2, 0, 1) + v * j.d(2, 1, 1);
                (j.d(2, 0, 2) + j.d(2, 1, 2)) * (1.0 / re) - transport
            }
        }
    }

    /// Algebraic constraints that must vanish at every time level.
    pub fn constraints<T: Real>(&self, j: &PointJet<T>) -> Vec<T> {
        match self {
            Operator::NavierStokes { .. } => {
                let div = j.d(0, 0, 1) + j.d(1, 1, 1);
                let curl = j.value(2) - (j.d(1, 0, 1) - j.d(0, 1, 1));
                vec![div, curl]
            }
            _ => Vec::new(),
        }
    }

    pub fn constraint_count(&self) -> usize {
        match self {
            Operator::NavierStokes { .. } => 2,
            _ => 0,
        }
    }

    pub fn check_order<T>(&self, j: &PointJet<T>) -> Result<()>
    where
        T: Copy,
    {
        if j.order() < self.order() {
            return Err(Error::OrderError { have: j.order(), need: self.order() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Boundary {
    Periodic,
    /// Fixed values at the two ends of a 1-D interval.
    Dirichlet { left: f64, right: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitialCondition {
    /// `sin(pi x)`
    SinPi,
    /// `sin(2 pi x)(1 + cos(2 pi x))`
    ReactionDiffusionBump,
    /// `x^2 cos(pi x)`
    QuadraticCosine,
    /// `-sin(pi x)`
    NegSinPi,
    /// `cos(x)(1 + sin(x))`
    CosOnePlusSin,
    /// `w0 = sin x cos y + 0.1 cos 3x sin 2y` with its periodic velocity.
    VortexPair,
    /// `w0 = 2 cos x cos y`, an exact decaying solution.
    TaylorGreen,
    Constant(f64),
}

impl InitialCondition {
    /// All field values at `p` (velocity then vorticity for 2-D flows).
    pub fn eval(&self, p: &[f64]) -> Vec<f64> {
        let x = p[0];
        match *self {
            InitialCondition::SinPi => vec![(PI * x).sin()],
            InitialCondition::ReactionDiffusionBump => vec![(2.0 * PI * x).sin() * (1.0 + (2.0 * PI * x).cos())],
            InitialCondition::QuadraticCosine => vec![x * x * (PI * x).cos()],
            InitialCondition::NegSinPi => vec![-(PI * x).sin()],
            InitialCondition::CosOnePlusSin => vec![x.cos() * (1.0 + x.sin())],
            InitialCondition::Constant(c) => vec![c],
            InitialCondition::VortexPair => {
                let y = p[1];
                // stream function psi with -lap psi = w, u = psi_y, v = -psi_x
                // psi = sin x cos y / 2 + 0.1 cos 3x sin 2y / 13
                let u = -0.5 * x.sin() * y.sin() + 0.2 / 13.0 * (3.0 * x).cos() * (2.0 * y).cos();
                let v = -0.5 * x.cos() * y.cos() + 0.3 / 13.0 * (3.0 * x).sin() * (2.0 * y).sin();
                let w = x.sin() * y.cos() + 0.1 * (3.0 * x).cos() * (2.0 * y).sin();
                vec![u, v, w]
            }
            InitialCondition::TaylorGreen => {
                let y = p[1];
                // psi = cos x cos y
                vec![-x.cos() * y.sin(), x.sin() * y.cos(), 2.0 * x.cos() * y.cos()]
            }
        }
    }
}

/// `u_t = N(u)` on a box with initial and boundary data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeProblem {
    pub name: String,
    /// `(lo, hi)` per spatial axis.
    pub domain: Vec<(f64, f64)>,
    pub end_time: f64,
    pub boundary: Boundary,
    pub initial: InitialCondition,
    pub operator: Operator,
}

pub const BENCHMARKS: [&str; 6] = ["heat_test", "rd", "ac", "ks_regular", "ks_chaotic", "ns2d"];

impl PdeProblem {
    pub fn spatial_dim(&self) -> usize {
        self.domain.len()
    }

    pub fn max_derivative_order(&self) -> usize {
        self.operator.order()
    }

    pub fn is_periodic(&self) -> bool {
        self.boundary == Boundary::Periodic
    }

    pub fn length(&self, axis: usize) -> f64 {
        let (lo, hi) = self.domain[axis];
        hi - lo
    }

    pub fn coefficients(&self) -> Vec<(&'static str, f64)> {
        self.operator.coefficients()
    }

    pub fn initial_value(&self, p: &[f64]) -> Vec<f64> {
        self.initial.eval(p)
    }

    /// Same problem with a different operator, e.g. for identity-dynamics checks.
    pub fn with_operator(&self, operator: Operator) -> Self {
        Self { operator, ..self.clone() }
    }
}

/// A named problem instance.
pub fn benchmark(name: &str) -> Result<PdeProblem> {
    let line = |lo: f64, hi: f64| vec![(lo, hi)];
    let p = match name {
        "heat_test" => PdeProblem {
            name: name.into(),
            domain: line(-1.0, 1.0),
            end_time: 1.0,
            boundary: Boundary::Dirichlet { left: 0.0, right: 0.0 },
            initial: InitialCondition::SinPi,
            operator: Operator::Linear { diffusion: 1.0, reaction: 0.0 },
        },
        "rd" => PdeProblem {
            name: name.into(),
            domain: line(-1.0, 1.0),
            end_time: 1.0,
            boundary: Boundary::Dirichlet { left: 0.0, right: 0.0 },
            initial: InitialCondition::ReactionDiffusionBump,
            operator: Operator::ReactionDiffusion { d1: 0.01, d2: 0.01 },
        },
        "ac" => PdeProblem {
            name: name.into(),
            domain: line(-1.0, 1.0),
            end_time: 1.0,
            boundary: Boundary::Periodic,
            initial: InitialCondition::QuadraticCosine,
            operator: Operator::AllenCahn { g1: 1e-4, g2: 5.0 },
        },
        "ks_regular" => PdeProblem {
            name: name.into(),
            domain: line(-1.0, 1.0),
            end_time: 1.0,
            boundary: Boundary::Periodic,
            initial: InitialCondition::NegSinPi,
            operator: Operator::KuramotoSivashinsky { alpha: 5.0, beta: 0.5, gamma: 0.005 },
        },
        "ks_chaotic" => PdeProblem {
            name: name.into(),
            domain: line(0.0, 2.0 * PI),
            end_time: 1.0,
            boundary: Boundary::Periodic,
            initial: InitialCondition::CosOnePlusSin,
            operator: Operator::KuramotoSivashinsky {
                alpha: 100.0 / 16.0,
                beta: 100.0 / 256.0,
                gamma: 100.0 / 65536.0,
            },
        },
        "ns2d" => PdeProblem {
            name: name.into(),
            domain: vec![(0.0, 2.0 * PI), (0.0, 2.0 * PI)],
            end_time: 1.0,
            boundary: Boundary::Periodic,
            initial: InitialCondition::VortexPair,
            operator: Operator::NavierStokes { re: 100.0 },
        },
        other => return Err(Error::UnknownProblem(other.to_string())),
    };
    Ok(p)
}

/// `N[u]` from a single derivative tower (1-D problems).
pub fn apply_operator(p: &PdeProblem, tower: &DerivativeTower) -> Result<f64> {
    if p.operator.field_count() != 1 {
        return Err(Error::ShapeError { expected: p.operator.field_count(), got: 1 });
    }
    let j = PointJet::from_tower(tower);
    p.operator.check_order(&j)?;
    Ok(p.operator.apply(&j))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tower(c: &[f64]) -> DerivativeTower {
        DerivativeTower::new(c.to_vec()).unwrap()
    }

    #[test]
    fn rd_constant_state() {
        let p = benchmark("rd").unwrap();
        let c = 1.7;
        let n = apply_operator(&p, &tower(&[c, 0.0, 0.0])).unwrap();
        assert!((n - 0.01 * c * c).abs() < 1e-15);
    }

    #[test]
    fn ac_equilibrium() {
        let p = benchmark("ac").unwrap();
        assert_eq!(apply_operator(&p, &tower(&[1.0, 0.0, 0.0])).unwrap(), 0.0);
    }

    #[test]
    fn ks_odd_state_at_origin() {
        let p = benchmark("ks_regular").unwrap();
        // -sin(pi x) at 0: u = 0, u_x = -pi, u_xx = 0, u_xxx = pi^3, u_xxxx = 0
        let t = tower(&[0.0, -PI, 0.0, PI.powi(3), 0.0]);
        assert_eq!(apply_operator(&p, &t).unwrap(), 0.0);
    }

    #[test]
    fn short_tower_is_order_error() {
        let p = benchmark("ks_regular").unwrap();
        let r = apply_operator(&p, &tower(&[0.0, 1.0, 0.0]));
        assert!(matches!(r, Err(Error::OrderError { have: 2, need: 4 })));
    }

    #[test]
    fn benchmark_coefficients() {
        let rd = benchmark("rd").unwrap();
        assert_eq!(rd.coefficients(), vec![("d1", 0.01), ("d2", 0.01)]);
        let ac = benchmark("ac").unwrap();
        assert_eq!(ac.coefficients(), vec![("gamma1", 0.0001), ("gamma2", 5.0)]);
        let x = 0.3;
        assert_eq!(ac.initial_value(&[x])[0], x * x * (PI * x).cos());
        let ks = benchmark("ks_chaotic").unwrap();
        let c = ks.coefficients();
        assert_eq!(c[0].1, 6.25);
        assert_eq!(c[1].1, 0.390625);
        assert!((c[2].1 - 0.001525878906).abs() < 1e-12);
        assert!(benchmark("burgers").is_err());
    }

    #[test]
    fn periodic_initial_conditions_match_at_endpoints() {
        for name in ["ac", "ks_regular", "ks_chaotic"] {
            let p = benchmark(name).unwrap();
            let (lo, hi) = p.domain[0];
            let d = p.initial_value(&[lo])[0] - p.initial_value(&[hi])[0];
            assert!(d.abs() < 1e-10, "{name}: {d}");
        }
        let ns = benchmark("ns2d").unwrap();
        let a = ns.initial_value(&[0.0, 1.3]);
        let b = ns.initial_value(&[2.0 * PI, 1.3]);
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-10));
    }

    fn ns_jet(ic: InitialCondition, x: f64, y: f64) -> PointJet<f64> {
        // central differences of the closed-form fields, first order only
        let h = 1e-5;
        let f = |x: f64, y: f64| ic.eval(&[x, y]);
        PointJet::from_fn(3, 2, 2, |fi, a, k| match (a, k) {
            (_, 0) => f(x, y)[fi],
            (0, 1) => (f(x + h, y)[fi] - f(x - h, y)[fi]) / (2.0 * h),
            (1, 1) => (f(x, y + h)[fi] - f(x, y - h)[fi]) / (2.0 * h),
            _ => 0.0,
        })
    }

    #[test]
    fn ns_initial_velocity_is_consistent() {
        for ic in [InitialCondition::VortexPair, InitialCondition::TaylorGreen] {
            for &(x, y) in &[(0.3, 1.1), (2.0, 4.5), (5.5, 0.2)] {
                let c = Operator::NavierStokes { re: 100.0 }.constraints(&ns_jet(ic, x, y));
                assert!(c[0].abs() < 1e-8 && c[1].abs() < 1e-8, "{ic:?}: {c:?}");
            }
        }
    }

    #[test]
    fn heat_operator_is_dissipative() {
        // int u N(u) dx = -int u_x^2 dx <= 0 for smooth periodic u, by midpoint quadrature
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let op = Operator::Linear { diffusion: 1.0, reaction: 0.0 };
        for _ in 0..5 {
            let a: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = 2000;
            let (mut lhs, mut rhs) = (0.0, 0.0);
            for i in 0..n {
                let x = 2.0 * PI * (i as f64 + 0.5) / n as f64;
                let (mut u, mut ux, mut uxx) = (0.0, 0.0, 0.0);
                for m in 0..4 {
                    let k = (m + 1) as f64;
                    let (s, c) = (k * x).sin_cos();
                    u += a[m] * c + b[m] * s;
                    ux += k * (-a[m] * s + b[m] * c);
                    uxx += -k * k * (a[m] * c + b[m] * s);
                }
                let j = PointJet::from_fn(1, 1, 2, |_, _, k| [u, ux, uxx][k]);
                lhs += u * op.apply(&j);
                rhs -= ux * ux;
            }
            assert!(lhs <= 0.0);
            assert!((lhs - rhs).abs() < 1e-9 * rhs.abs());
        }
    }
}

//! Self-check suites behind `verify`: scheme properties, derivative and
//! gradient fidelity against finite differences, and the error-scaling study.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::taylor_eval;
use crate::error::Result;
use crate::exec::ExecMode;
use crate::metrics::convergence_order;
use crate::network::{Architecture, NetSpec};
use crate::pdes::{benchmark, BENCHMARKS};
use crate::schemes::{ButcherTableau, SCHEMES};
use crate::training::{run, Collocation, InitialLoss, LossParts, Model, StageLoss, TrainConfig};

/// One line of a pass/fail table.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag}  {:<50} {}", self.name, self.detail)
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

/// Steps decreasing by halves from 0.1, as used by the order fits on `u' = -u`.
pub const TAU_SWEEP: [f64; 4] = [0.1, 0.05, 0.025, 0.0125];

/// The same for the stiffer heat mode `lambda = -pi^2`.
pub const HEAT_TAU_SWEEP: [f64; 4] = [0.02, 0.01, 0.005, 0.0025];

/// `max_n |R(lambda tau)^n - e^{lambda t_n}|` over `t_n <= t_end` for each step size.
pub fn linear_sweep(tab: &ButcherTableau, lambda: f64, taus: &[f64], t_end: f64) -> Vec<(f64, f64)> {
    taus.iter()
        .map(|&tau| {
            let steps = (t_end / tau).round() as usize;
            let mut u = Complex64::new(1.0, 0.0);
            let mut err: f64 = 0.0;
            for n in 1..=steps {
                u = tab.step_linear(Complex64::new(lambda, 0.0), tau, u);
                err = err.max((u.re - (lambda * n as f64 * tau).exp()).abs());
            }
            (tau, err)
        })
        .collect()
}

/// Expected order and its tolerance for the convergence checks.
pub fn expected_order(tab: &ButcherTableau) -> (f64, f64) {
    match tab.classical_order() {
        4 => (4.0, 0.3),
        p => (p as f64, 0.2),
    }
}

/// Order conditions, A-stability of the implicit schemes, and fitted orders on
/// `u' = -u` and on the heat test problem with exact spatial treatment.
pub fn schemes_suite() -> Vec<Check> {
    let mut out = Vec::new();
    for name in SCHEMES {
        let tab = ButcherTableau::builtin(name).expect("builtin scheme");
        let p = tab.classical_order();
        let conds = tab.order_conditions(p);
        let failing: Vec<_> = conds.iter().filter(|c| !c.holds(1e-12)).map(|c| c.label).collect();
        out.push(Check::new(
            format!("{name}: order conditions through {p}"),
            failing.is_empty(),
            if failing.is_empty() { format!("{} conditions", conds.len()) } else { failing.join(", ") },
        ));
        if tab.is_implicit() {
            let worst = (0..200)
                .flat_map(|i| {
                    let y = -50.0 + i as f64 * 0.5;
                    [Complex64::new(0.0, y), Complex64::new(-1e-3 * (i + 1) as f64 * 10.0, y)]
                })
                .map(|z| tab.stability(z).norm())
                .fold(0.0, f64::max);
            out.push(Check::new(format!("{name}: |R(z)| <= 1 for Re z <= 0"), worst <= 1.0 + 1e-12, format!("max {worst:.6}")));
        }
        let (want, tol) = expected_order(&tab);
        for (label, lambda, taus) in [("u' = -u", -1.0, TAU_SWEEP), ("heat_test mode", -PI * PI, HEAT_TAU_SWEEP)] {
            let got = convergence_order(&linear_sweep(&tab, lambda, &taus, 1.0));
            let (passed, detail) = match got {
                Ok(o) => ((o - want).abs() <= tol, format!("order {o:.3} (want {want} +- {tol})")),
                Err(e) => (false, e.to_string()),
            };
            out.push(Check::new(format!("{name}: convergence on {label}"), passed, detail));
        }
    }
    out
}

/// Worst relative discrepancy of `ad` against `fd`, the latter refined over a step sweep.
fn rel(ad: f64, fds: &[f64], floor: f64) -> f64 {
    fds.iter().map(|fd| (ad - fd).abs() / ad.abs().max(floor)).fold(f64::INFINITY, f64::min)
}

/// The `i`-th network of the autodiff suite with its problem and scheme.
fn suite_model(i: usize) -> Result<Model> {
    let name = BENCHMARKS[i % BENCHMARKS.len()];
    let spec = NetSpec {
        arch: if i % 4 == 3 { Architecture::Plain } else { Architecture::Modified },
        depth: 2 + i % 2,
        width: 6 + 2 * (i % 3),
        modes: 1 + i % 3,
    };
    let scheme = if i % 5 == 2 && name != "ns2d" { "gauss_legendre2" } else { "crank_nicolson" };
    Model::new(&benchmark(name)?, &spec, scheme)
}

fn grad_check(eval: impl Fn(&[f64], Option<&mut [f64]>) -> Result<LossParts>, theta: &[f64]) -> Result<f64> {
    let mut g = vec![0.0; theta.len()];
    eval(theta, Some(&mut g))?;
    let gmax = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut worst: f64 = 0.0;
    let mut th = theta.to_vec();
    for i in 0..theta.len() {
        let mut fds = Vec::new();
        for h in [1e-5, 1e-6] {
            th[i] = theta[i] + h;
            let a = eval(&th, None)?.total;
            th[i] = theta[i] - h;
            let b = eval(&th, None)?.total;
            th[i] = theta[i];
            fds.push((a - b) / (2.0 * h));
        }
        worst = worst.max(rel(g[i], &fds, 1e-4 * gmax));
    }
    Ok(worst)
}

/// Towers through fourth order and parameter gradients of the initial-fit
/// (mean squared error) and stage (nested derivative) losses on `nets`
/// random networks, all against central finite differences.
pub fn autodiff_suite(nets: usize, seed: u64, tol: f64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let (mut tower_worst, mut mse_worst, mut stage_worst) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..nets {
        let model = suite_model(i)?;
        let p = &model.problem;
        let theta = model.net.init(rng.random());
        let dim = p.spatial_dim();
        let x: Vec<f64> = p.domain.iter().map(|&(a, b)| a + (b - a) * rng.random_range(0.1..0.9)).collect();
        for axis in 0..dim {
            let t = taylor_eval(&model.net, theta.values(), &x, axis, 4)?;
            let scale = t.iter().flat_map(|tw| tw.coeffs()).fold(0.0f64, |m, c| m.max(c.abs()));
            for k in 1..=4 {
                let fds: Vec<Vec<f64>> = [1e-3, 1e-4, 1e-5]
                    .iter()
                    .map(|&h| {
                        let mut xp = x.clone();
                        let mut xm = x.clone();
                        xp[axis] += h;
                        xm[axis] -= h;
                        let up = taylor_eval(&model.net, theta.values(), &xp, axis, k - 1)?;
                        let um = taylor_eval(&model.net, theta.values(), &xm, axis, k - 1)?;
                        Ok(up.iter().zip(&um).map(|(a, b)| (a.coeffs()[k - 1] - b.coeffs()[k - 1]) / (2.0 * h)).collect())
                    })
                    .collect::<Result<_>>()?;
                for (f, tw) in t.iter().enumerate() {
                    let cands: Vec<f64> = fds.iter().map(|v| v[f]).collect();
                    tower_worst = tower_worst.max(rel(tw.coeffs()[k], &cands, 1e-3 * scale));
                }
            }
        }

        let pts = Collocation::for_problem(p, 8);
        let init = InitialLoss::new(p, &model.net, &pts, Default::default(), ExecMode::Sequential);
        mse_worst = mse_worst.max(grad_check(|th, g| init.eval(th, g), theta.values())?);

        let prev = model.net.init(rng.random());
        let next = match model.bundle() {
            Some(b) => b.init(&theta, rng.random())?,
            None => theta.clone(),
        };
        let stage = StageLoss::new(&model, &pts, prev.values(), 0.05, Default::default(), ExecMode::Sequential)?;
        stage_worst = stage_worst.max(grad_check(|th, g| stage.eval(th, g), next.values())?);
    }
    for (name, worst) in [
        ("spatial derivatives through order 4", tower_worst),
        ("gradient of mean squared error", mse_worst),
        ("gradient of nested stage residual", stage_worst),
    ] {
        out.push(Check::new(format!("{name} ({nets} nets)"), worst <= tol, format!("worst relative {worst:.2e} (tol {tol:.0e})")));
    }
    Ok(out)
}

/// One training budget of the error-scaling study.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetRow {
    pub max_iters: usize,
    /// `max_n sqrt(L^n)` over the stage losses.
    pub max_sqrt_loss: f64,
    pub error: f64,
}

/// Empirical error scaling on `heat_test`: scheme-only orders over `taus`, and
/// final network error against `max_n sqrt(L^n)` for each budget in `budgets`.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoremStudy {
    /// Scheme name, fitted order, `(tau, error)` rows.
    pub schemes: Vec<(String, f64, Vec<(f64, f64)>)>,
    pub budgets: Vec<BudgetRow>,
}

pub fn theorem_study(base: &TrainConfig, taus: &[f64], budgets: &[usize]) -> Result<TheoremStudy> {
    let p = benchmark("heat_test")?;
    let mut schemes = Vec::new();
    for name in SCHEMES {
        let tab = ButcherTableau::builtin(name)?;
        let rows = linear_sweep(&tab, -PI * PI, taus, p.end_time);
        schemes.push((name.to_string(), convergence_order(&rows)?, rows));
    }
    let reference = crate::oracle::heat_reference(&p, base.n_t, 128);
    let mut rows = Vec::new();
    for &m in budgets {
        let cfg = TrainConfig { max_iters: m, problem: p.name.clone(), ..base.clone() };
        let sol = run(&p, &cfg, |_, _| {})?;
        let report = crate::report::evaluate(&sol, &reference)?;
        let max_sqrt_loss = sol.records[1..].iter().map(|r| r.loss.sqrt()).fold(0.0, f64::max);
        rows.push(BudgetRow { max_iters: m, max_sqrt_loss, error: report.relative_l2 });
    }
    Ok(TheoremStudy { schemes, budgets: rows })
}

impl TheoremStudy {
    pub fn checks(&self) -> Vec<Check> {
        let mut out: Vec<Check> = self
            .schemes
            .iter()
            .map(|(name, order, _)| {
                let (want, tol) = expected_order(&ButcherTableau::builtin(name).expect("builtin"));
                Check::new(format!("{name}: order of scheme error"), (order - want).abs() <= tol, format!("{order:.3} (want {want} +- {tol})"))
            })
            .collect();
        if let (Some(first), Some(last)) = (self.budgets.first(), self.budgets.last()) {
            out.push(Check::new(
                "larger budget lowers max sqrt(L) and the error",
                last.max_sqrt_loss < first.max_sqrt_loss && last.error < first.error,
                format!(
                    "{} iters: {:.2e}/{:.2e}; {} iters: {:.2e}/{:.2e}",
                    first.max_iters, first.max_sqrt_loss, first.error, last.max_iters, last.max_sqrt_loss, last.error
                ),
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,name,h,value\n");
        for (name, order, rows) in &self.schemes {
            for (tau, e) in rows {
                s.push_str(&format!("scheme,{name},{tau},{e:.6e}\n"));
            }
            s.push_str(&format!("order,{name},,{order:.6}\n"));
        }
        for b in &self.budgets {
            s.push_str(&format!("budget_sqrt_loss,{},,{:.6e}\n", b.max_iters, b.max_sqrt_loss));
            s.push_str(&format!("budget_error,{},,{:.6e}\n", b.max_iters, b.error));
        }
        s
    }
}

/// A small network setup for the budget part of the study.
pub fn theorem_base() -> TrainConfig {
    let mut c = crate::presets::preset("heat_test", crate::presets::Preset::Desk).expect("heat preset");
    c.net = NetSpec { arch: Architecture::Modified, depth: 2, width: 16, modes: 2 };
    c.n_t = 5;
    c.n_r = 32;
    c.max_iters_initial = 1000;
    c.epsilon = 0.0;
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schemes_suite_passes() {
        let checks = schemes_suite();
        for c in &checks {
            assert!(c.passed, "{c}");
        }
        assert!(checks.len() >= 7 * 3);
    }

    #[test]
    fn autodiff_suite_passes_on_a_few_nets() {
        for c in autodiff_suite(6, 1, 1e-5).unwrap() {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn linear_sweep_is_exact_for_zero_rate() {
        let tab = ButcherTableau::builtin("crank_nicolson").unwrap();
        assert!(linear_sweep(&tab, 0.0, &TAU_SWEEP, 1.0).iter().all(|r| r.1 == 0.0));
    }
}

//! The sequential, warm-started training loop.
//!
//! Step (a) fits the initial condition; step (b) trains one network per
//! timestamp against the scheme residual with the previous network frozen,
//! starting from the previous parameters.

mod adam;
mod loss;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState, LrSchedule};
pub use loss::{jets, Collocation, InitialLoss, LossParts, LossWeights, Model, StageLoss};

use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::network::{NetSpec, ParameterVector};
use crate::oracle::OracleConfig;
use crate::pdes::{benchmark, PdeProblem};

/// Which parameters carry over between timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transfer {
    /// Warm start and fine-tune everything.
    #[default]
    All,
    /// Warm start, training only the last `k` layers.
    LastK(usize),
    /// Fresh initialization at every timestamp.
    None,
}

impl FromStr for Transfer {
    type Err = Error;

    /// `all`, `none`, or `last_k:K`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Transfer::All),
            "none" => Ok(Transfer::None),
            _ => s
                .strip_prefix("last_k:")
                .and_then(|k| k.parse().ok())
                .filter(|&k| k > 0)
                .map(Transfer::LastK)
                .ok_or_else(|| Error::Config(format!("unknown transfer strategy '{s}'"))),
        }
    }
}

impl fmt::Display for Transfer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transfer::All => write!(f, "all"),
            Transfer::LastK(k) => write!(f, "last_k:{k}"),
            Transfer::None => write!(f, "none"),
        }
    }
}

fn default_scheme() -> String {
    "crank_nicolson".into()
}

fn default_initial_tol() -> f64 {
    1e-12
}

/// Everything a run depends on. Together with the problem it determines the
/// output bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub problem: String,
    pub net: NetSpec,
    #[serde(default = "default_scheme")]
    pub scheme: String,
    /// Number of timestamps; `tau = T / n_t`.
    pub n_t: usize,
    /// Interior collocation points.
    pub n_r: usize,
    /// Points for the initial fit; defaults to `n_r`.
    #[serde(default)]
    pub n_u: Option<usize>,
    #[serde(default)]
    pub weights: LossWeights,
    /// Adam steps for the initial fit.
    pub max_iters_initial: usize,
    /// Adam steps per timestamp.
    pub max_iters: usize,
    /// Early stop once successive losses differ by less than this.
    pub epsilon: f64,
    /// The initial fit stops once its loss drops below this.
    #[serde(default = "default_initial_tol")]
    pub initial_tol: f64,
    /// Learning rate of each timestamp's Adam loop, restarted at every timestamp.
    #[serde(default)]
    pub lr: LrSchedule,
    /// Learning rate of the initial fit; defaults to `lr`.
    #[serde(default)]
    pub lr_initial: Option<LrSchedule>,
    #[serde(default)]
    pub transfer: Transfer,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub exec: ExecMode,
    #[serde(default)]
    pub oracle: OracleConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_t < 1 {
            return bad("n_t must be at least 1");
        }
        if self.n_r < 1 || self.n_u == Some(0) {
            return bad("collocation counts must be positive");
        }
        if self.max_iters_initial < 1 || self.max_iters < 1 {
            return bad("iteration limits must be at least 1");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.lr.initial > 0.0 && self.lr.factor > 0.0 && self.lr.every > 0) {
            return bad("learning-rate schedule must be positive");
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<PdeProblem> {
        benchmark(&self.problem)
    }

    pub fn tau(&self, p: &PdeProblem) -> f64 {
        p.end_time / self.n_t as f64
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Threshold,
    MaxIters,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Threshold => "threshold",
            StopReason::MaxIters => "max_iters",
        })
    }
}

/// Diagnostics of one timestamp; `n = 0` is the initial fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimestampRecord {
    pub n: usize,
    pub loss: f64,
    /// Mean squared scheme residual `L_r(t_n)` at the returned parameters.
    pub residual: f64,
    pub constraint: f64,
    pub epochs: usize,
    pub stop: StopReason,
    pub seconds: f64,
}

/// Solution networks `theta^0 .. theta^{N_t}` with their diagnostics.
#[derive(Debug, Clone)]
pub struct TrajectorySolution {
    pub model: Model,
    pub params: Vec<ParameterVector>,
    pub records: Vec<TimestampRecord>,
    pub config: TrainConfig,
}

impl TrajectorySolution {
    /// Field values `[field][point]` of timestamp `n` at flat points of the problem's dimension.
    pub fn sample(&self, n: usize, points: &[f64]) -> Result<Vec<Vec<f64>>> {
        sample_net(&self.model, self.params[n].values(), points, self.config.exec)
    }

    /// Snapshots `n = 1..=N_t` of one field.
    pub fn trajectory(&self, field: usize, points: &[f64]) -> Result<Vec<Vec<f64>>> {
        (1..self.params.len()).map(|n| Ok(self.sample(n, points)?.swap_remove(field))).collect()
    }

    pub fn tau(&self) -> f64 {
        self.config.tau(&self.model.problem)
    }
}

/// Evaluates a solution network at flat points.
pub fn sample_net(model: &Model, params: &[f64], points: &[f64], mode: ExecMode) -> Result<Vec<Vec<f64>>> {
    let dim = model.problem.spatial_dim();
    let n = points.len() / dim;
    let parts = crate::exec::map_chunks(n, mode, |r| {
        r.map(|i| model.net.eval(params, &points[i * dim..(i + 1) * dim])).collect::<Result<Vec<_>>>()
    });
    let fields = model.net.body.out_dim();
    let mut out = vec![Vec::with_capacity(n); fields];
    for part in parts {
        for vals in part? {
            for (f, v) in vals.into_iter().enumerate() {
                out[f].push(v);
            }
        }
    }
    Ok(out)
}

/// Trainable-coordinate mask: only the spans of the last `k` layers of every member.
pub fn last_k_mask(model: &Model, layout: &[crate::network::Span], k: usize) -> Vec<bool> {
    let names = model.net.layer_names();
    let keep: Vec<&String> = names.iter().rev().take(k).collect();
    let mut mask = vec![false; layout.iter().map(|s| s.offset + s.len).max().unwrap_or(0)];
    for s in layout {
        let layer = s.name.rsplit('.').nth(1).unwrap_or("");
        if keep.iter().any(|n| n.as_str() == layer) {
            mask[s.range()].iter_mut().for_each(|m| *m = true);
        }
    }
    mask
}

/// Outcome of one Adam loop.
struct Fit {
    params: Vec<f64>,
    parts: LossParts,
    epochs: usize,
    stop: StopReason,
}

/// Adam with early stopping on `|L_{i+1} - L_i| < eps`; `stop_below` ends the loop once the loss is that small.
///
/// Returns the iterate with the lowest loss seen.
fn optimize(
    mut theta: Vec<f64>,
    eval: impl Fn(&[f64], &mut [f64]) -> Result<LossParts>,
    max_iters: usize,
    eps: Option<f64>,
    stop_below: f64,
    lr: &LrSchedule,
    mask: Option<&[bool]>,
) -> Result<Fit> {
    let mut grad = vec![0.0; theta.len()];
    let mut state = AdamState::new(theta.len());
    let mut parts = eval(&theta, &mut grad)?;
    if parts.total < stop_below {
        return Ok(Fit { params: theta, parts, epochs: 0, stop: StopReason::Threshold });
    }
    let mut best = (parts, theta.clone());
    let finish = |epochs, stop, best: (LossParts, Vec<f64>)| Fit { params: best.1, parts: best.0, epochs, stop };
    for step in 1..=max_iters {
        adam_step(&mut state, &mut theta, &grad, lr.at(step - 1), mask);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let next = eval(&theta, &mut grad)?;
        let delta = (next.total - parts.total).abs();
        parts = next;
        if parts.total < best.0.total {
            best = (parts, theta.clone());
        }
        if eps.is_some_and(|e| delta < e) || parts.total < stop_below {
            return Ok(finish(step, StopReason::Threshold, best));
        }
    }
    Ok(finish(max_iters, StopReason::MaxIters, best))
}

/// Step (a): fit the initial condition.
pub fn fit_initial(model: &Model, cfg: &TrainConfig) -> Result<(ParameterVector, TimestampRecord)> {
    let start = Instant::now();
    let p = &model.problem;
    let points = Collocation::for_problem(p, cfg.n_u.unwrap_or(cfg.n_r));
    let loss = InitialLoss::new(p, &model.net, &points, cfg.weights, cfg.exec);
    let theta0 = model.net.init(cfg.seed);
    let fit = optimize(
        theta0.values().to_vec(),
        |th, g| loss.eval(th, Some(g)),
        cfg.max_iters_initial,
        None,
        cfg.initial_tol,
        cfg.lr_initial.as_ref().unwrap_or(&cfg.lr),
        None,
    )
    .map_err(|e| annotate(e, 0))?;
    let rec = TimestampRecord {
        n: 0,
        loss: fit.parts.total,
        residual: fit.parts.data,
        constraint: 0.0,
        epochs: fit.epochs,
        stop: fit.stop,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((theta0.with_values(fit.params)?, rec))
}

fn annotate(e: Error, n: usize) -> Error {
    match e {
        Error::NumericalOverflow(m) => Error::NumericalOverflow(format!("{m} at timestamp {n}")),
        other => other,
    }
}

/// Loss of one step vector against a frozen previous solution network.
pub fn stage_loss(model: &Model, next: &[f64], prev: &[f64], points: &Collocation, cfg: &TrainConfig) -> Result<LossParts> {
    let tau = cfg.tau(&model.problem);
    StageLoss::new(model, points, prev, tau, cfg.weights, cfg.exec)?.eval(next, None)
}

/// Step (b) for timestamp `n + 1`: train `start` against the residual with `prev` frozen.
pub fn advance(
    model: &Model,
    prev: &ParameterVector,
    start: ParameterVector,
    points: &Collocation,
    cfg: &TrainConfig,
    n: usize,
) -> Result<(ParameterVector, TimestampRecord)> {
    if !prev.all_finite() {
        return Err(Error::NumericalOverflow(format!("previous parameters at timestamp {n}")));
    }
    let clock = Instant::now();
    let tau = cfg.tau(&model.problem);
    let loss = StageLoss::new(model, points, prev.values(), tau, cfg.weights, cfg.exec)?;
    let mask = match cfg.transfer {
        Transfer::LastK(k) => Some(last_k_mask(model, start.layout(), k)),
        _ => None,
    };
    let fit = optimize(
        start.values().to_vec(),
        |th, g| loss.eval(th, Some(g)),
        cfg.max_iters,
        Some(cfg.epsilon),
        0.0,
        &cfg.lr,
        mask.as_deref(),
    )
    .map_err(|e| annotate(e, n + 1))?;
    let rec = TimestampRecord {
        n: n + 1,
        loss: fit.parts.total,
        residual: fit.parts.residual,
        constraint: fit.parts.constraint,
        epochs: fit.epochs,
        stop: fit.stop,
        seconds: clock.elapsed().as_secs_f64(),
    };
    Ok((start.with_values(fit.params)?, rec))
}

/// The solution member of a step vector.
fn solution_of(model: &Model, step: &ParameterVector) -> ParameterVector {
    match model.bundle() {
        Some(_) => step.member("u").expect("bundle has a solution member"),
        None => step.clone(),
    }
}

fn fresh_step(model: &Model, solution: &ParameterVector, seed: u64) -> Result<ParameterVector> {
    match model.bundle() {
        Some(b) => b.init(solution, seed),
        None => Ok(solution.clone()),
    }
}

/// Runs steps (a) and (b) for every timestamp in order.
///
/// `observe` sees each record together with the solution network right
/// after it is produced.
pub fn run(
    p: &PdeProblem,
    cfg: &TrainConfig,
    mut observe: impl FnMut(&TimestampRecord, &ParameterVector),
) -> Result<TrajectorySolution> {
    cfg.validate()?;
    let model = Model::new(p, &cfg.net, &cfg.scheme)?;
    let points = Collocation::for_problem(p, cfg.n_r);
    let (theta0, rec0) = fit_initial(&model, cfg)?;
    observe(&rec0, &theta0);
    let mut params = vec![theta0.clone()];
    let mut records = vec![rec0];
    let mut step = fresh_step(&model, &theta0, cfg.seed)?;
    for n in 0..cfg.n_t {
        let start = match cfg.transfer {
            Transfer::All | Transfer::LastK(_) => step,
            Transfer::None => {
                let cold = cfg.seed.wrapping_add(1000 * (n as u64 + 1));
                fresh_step(&model, &model.net.init(cold), cold)?
            }
        };
        let (next, rec) = advance(&model, &params[n], start, &points, cfg, n)?;
        let sol = solution_of(&model, &next);
        observe(&rec, &sol);
        params.push(sol);
        records.push(rec);
        step = next;
    }
    Ok(TrajectorySolution { model, params, records, config: cfg.clone() })
}

#[cfg(test)]
mod tests;

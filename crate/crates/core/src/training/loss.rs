use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::autodiff::{taylor, FieldModel, Tape, Var};
use crate::error::{Error, Result};
use crate::exec::{map_chunks, ExecMode};
use crate::network::{Embedding, FourierEmbedding1D, FourierEmbedding2D, NetSpec, Pinn, StageBundle};
use crate::pdes::{Boundary, PdeProblem, PointJet};
use crate::schemes::{bundle_residuals, single_residual, ButcherTableau, ResidualForm};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub residual: f64,
    pub boundary: f64,
    pub initial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { residual: 1.0, boundary: 100.0, initial: 1.0 }
    }
}

/// Fixed sample locations: interior points plus Dirichlet endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Collocation {
    pub dim: usize,
    interior: Vec<f64>,
    /// `(x, g(x))` pairs.
    pub boundary: Vec<(f64, f64)>,
}

impl Collocation {
    /// `n` equispaced points: strictly interior for Dirichlet intervals, a
    /// half-open periodic grid otherwise, and a strided square lattice in 2-D.
    pub fn for_problem(p: &PdeProblem, n: usize) -> Self {
        let dim = p.spatial_dim();
        let (a, b) = p.domain[0];
        let len = b - a;
        match (dim, p.boundary) {
            (1, Boundary::Dirichlet { left, right }) => {
                let h = len / (n + 1) as f64;
                let interior = (1..=n).map(|i| a + i as f64 * h).collect();
                Self { dim, interior, boundary: vec![(a, left), (b, right)] }
            }
            (1, Boundary::Periodic) => {
                let interior = (0..n).map(|i| a + i as f64 * len / n as f64).collect();
                Self { dim, interior, boundary: Vec::new() }
            }
            _ => {
                let side = (n as f64).sqrt().ceil() as usize;
                let total = side * side;
                let (c, d) = p.domain[1];
                let mut interior = Vec::with_capacity(2 * n);
                for k in 0..n {
                    let idx = k * total / n;
                    let (i, j) = (idx % side, idx / side);
                    interior.push(a + i as f64 * len / side as f64);
                    interior.push(c + j as f64 * (d - c) / side as f64);
                }
                Self { dim, interior, boundary: Vec::new() }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.interior.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.interior.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.interior[i * self.dim..(i + 1) * self.dim]
    }
}

/// Network architecture, scheme and residual form for one problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub problem: PdeProblem,
    pub net: Pinn,
    pub tableau: ButcherTableau,
    pub form: ResidualForm,
}

impl Model {
    pub fn new(problem: &PdeProblem, spec: &NetSpec, scheme: &str) -> Result<Self> {
        if spec.depth < 1 || spec.width < 1 || spec.modes < 1 {
            return Err(Error::Config("depth, width and modes must be positive".into()));
        }
        let embedding = Self::embedding_for(problem, spec.modes);
        let body = spec.body(embedding.feature_dim(), problem.operator.field_count());
        let net = Pinn::new(embedding, body)?;
        let tableau = ButcherTableau::builtin(scheme)?;
        let form = tableau.residual_form();
        if form == ResidualForm::Stages && problem.operator.field_count() > 1 {
            return Err(Error::Config(format!("{scheme} needs stage networks, which are limited to scalar problems")));
        }
        Ok(Self { problem: problem.clone(), net, tableau, form })
    }

    /// Periodic features for every problem: one period on periodic domains,
    /// twice the interval length on Dirichlet intervals so that the walls are
    /// not identified.
    pub fn embedding_for(p: &PdeProblem, modes: usize) -> Embedding {
        if p.spatial_dim() == 2 {
            return Embedding::Fourier2D(FourierEmbedding2D::new(modes, p.length(0), p.length(1)));
        }
        let period = if p.is_periodic() { p.length(0) } else { 2.0 * p.length(0) };
        Embedding::Fourier1D(FourierEmbedding1D::new(modes, period))
    }

    pub fn bundle(&self) -> Option<StageBundle> {
        match self.form {
            ResidualForm::Stages => Some(StageBundle::new(self.net.clone(), self.tableau.stages())),
            ResidualForm::Single(_) => None,
        }
    }

    /// Parameter count of one time step's trainable vector.
    pub fn step_param_count(&self) -> usize {
        self.bundle().map_or(self.net.param_count(), |b| b.param_count())
    }

    /// Offset of the solution network inside the step vector.
    pub fn solution_offset(&self) -> usize {
        self.bundle().map_or(0, |b| b.solution_offset())
    }

    pub fn order(&self) -> usize {
        self.problem.max_derivative_order()
    }
}

/// Derivative jet of a network recorded on `tape`, one pass per axis.
fn record_jet<'a, const N: usize>(net: &Pinn, tape: &'a Tape<'a, N>, offset: usize, x: &[f64]) -> Result<PointJet<Var<'a, N>>> {
    let dim = x.len();
    let mut per_axis = Vec::with_capacity(dim);
    for a in 0..dim {
        let coords: Vec<[f64; N]> =
            x.iter().enumerate().map(|(b, &xb)| taylor::variable(xb, if a == b { 1.0 } else { 0.0 })).collect();
        per_axis.push(net.record(tape, offset, &coords)?);
    }
    Ok(PointJet::from_fn(net.output_dim(), dim, N - 1, |f, a, k| per_axis[a][f].derivative(k)))
}

fn value_jet<const N: usize>(net: &Pinn, params: &[f64], x: &[f64]) -> Result<PointJet<f64>> {
    let tape = Tape::<N>::new(params);
    let dim = x.len();
    let mut per_axis = Vec::with_capacity(dim);
    for a in 0..dim {
        let coords: Vec<[f64; N]> =
            x.iter().enumerate().map(|(b, &xb)| taylor::variable(xb, if a == b { 1.0 } else { 0.0 })).collect();
        let outs = net.record(&tape, 0, &coords)?;
        per_axis.push(outs.iter().map(|v| v.tower()).collect::<Vec<_>>());
    }
    Ok(PointJet::from_fn(net.output_dim(), dim, N - 1, |f, a, k| per_axis[a][f][k] * taylor::FACTORIAL[k]))
}

/// Derivative jets of the solution network at every point.
pub fn jets(net: &Pinn, params: &[f64], points: &Collocation, order: usize, mode: ExecMode) -> Result<Vec<PointJet<f64>>> {
    let parts = map_chunks(points.len(), mode, |r: Range<usize>| {
        r.map(|i| match order {
            0 => value_jet::<1>(net, params, points.point(i)),
            1 | 2 => value_jet::<3>(net, params, points.point(i)),
            3 | 4 => value_jet::<5>(net, params, points.point(i)),
            _ => Err(Error::OrderError { have: 4, need: order }),
        })
        .collect::<Result<Vec<_>>>()
    });
    let mut out = Vec::with_capacity(points.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Loss decomposition at one parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    /// Mean squared scheme residual (unweighted).
    pub residual: f64,
    /// Mean squared constraint violation (unweighted).
    pub constraint: f64,
    /// Mean squared boundary or initial-data mismatch (unweighted).
    pub data: f64,
}

struct ChunkOut {
    residual: f64,
    constraint: f64,
    grad: Vec<f64>,
}

fn seed<const N: usize>(c: f64) -> [f64; N] {
    taylor::constant(c)
}

fn reduce(parts: Vec<Result<ChunkOut>>, grad: Option<&mut [f64]>) -> Result<(f64, f64)> {
    let (mut r, mut c) = (0.0, 0.0);
    let mut grad = grad;
    for p in parts {
        let p = p?;
        r += p.residual;
        c += p.constraint;
        if let Some(g) = grad.as_deref_mut() {
            for (a, b) in g.iter_mut().zip(&p.grad) {
                *a += b;
            }
        }
    }
    Ok((r, c))
}

fn overflow(what: &str) -> Error {
    Error::NumericalOverflow(format!("non-finite {what}"))
}

/// The discrete loss of one time step with the previous network frozen.
pub struct StageLoss<'m> {
    model: &'m Model,
    points: &'m Collocation,
    prev: Vec<PointJet<f64>>,
    tau: f64,
    weights: LossWeights,
    mode: ExecMode,
}

impl<'m> StageLoss<'m> {
    /// Precomputes the previous network's jets; `prev` is a solution-network vector.
    pub fn new(
        model: &'m Model,
        points: &'m Collocation,
        prev: &[f64],
        tau: f64,
        weights: LossWeights,
        mode: ExecMode,
    ) -> Result<Self> {
        if prev.len() != model.net.param_count() {
            return Err(Error::ShapeError { expected: model.net.param_count(), got: prev.len() });
        }
        let prev = jets(&model.net, prev, points, model.order(), mode)?;
        Ok(Self { model, points, prev, tau, weights, mode })
    }

    /// Loss at `params` (a step vector), accumulating its gradient into `grad` if given.
    pub fn eval(&self, params: &[f64], grad: Option<&mut [f64]>) -> Result<LossParts> {
        if params.len() != self.model.step_param_count() {
            return Err(Error::ShapeError { expected: self.model.step_param_count(), got: params.len() });
        }
        let want = grad.is_some();
        let parts = map_chunks(self.points.len(), self.mode, |r| match self.model.order() {
            0 => self.chunk::<1>(params, r, want),
            1 | 2 => self.chunk::<3>(params, r, want),
            _ => self.chunk::<5>(params, r, want),
        });
        let mut grad = grad;
        let (res, con) = reduce(parts, grad.as_deref_mut())?;
        let data = self.boundary(params, grad)?;
        let n = self.points.len() as f64;
        let (res, con) = (res / n, con / n);
        let total = self.weights.residual * (res + con) + self.weights.boundary * data;
        if !total.is_finite() {
            return Err(overflow("stage loss"));
        }
        Ok(LossParts { total, residual: res, constraint: con, data })
    }

    fn chunk<const N: usize>(&self, params: &[f64], range: Range<usize>, want: bool) -> Result<ChunkOut> {
        let m = self.model;
        let op = &m.problem.operator;
        let w = 2.0 * self.weights.residual / self.points.len() as f64;
        let mut tape = Tape::<N>::new(params);
        let mut out = ChunkOut { residual: 0.0, constraint: 0.0, grad: if want { vec![0.0; params.len()] } else { Vec::new() } };
        for i in range {
            {
                let x = self.points.point(i);
                let prev = &self.prev[i];
                let mut rs = Vec::with_capacity(4);
                let next = record_jet(&m.net, &tape, m.solution_offset(), x)?;
                match &m.form {
                    ResidualForm::Single(bw) => rs.push(single_residual(bw, &next, prev, op, self.tau)),
                    ResidualForm::Stages => {
                        let bundle = m.bundle().expect("stage form has a bundle");
                        let ks = (0..bundle.stages)
                            .map(|j| record_jet(&m.net, &tape, bundle.member_offset(j), x))
                            .collect::<Result<Vec<_>>>()?;
                        bundle_residuals(&m.tableau, &ks, &next, prev, op, self.tau, &mut rs);
                    }
                }
                let n_res = rs.len();
                rs.extend(op.constraints(&next));
                let mut seeds = Vec::with_capacity(rs.len());
                for (j, r) in rs.iter().enumerate() {
                    let v = r.value();
                    if !v.is_finite() {
                        return Err(overflow("residual"));
                    }
                    if j < n_res {
                        out.residual += v * v;
                    } else {
                        out.constraint += v * v;
                    }
                    seeds.push((*r, seed::<N>(w * v)));
                }
                if want {
                    tape.backward(&seeds, &mut out.grad);
                }
            }
            tape.clear();
        }
        Ok(out)
    }

    /// Mean squared Dirichlet mismatch of the solution network.
    fn boundary(&self, params: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
        boundary_term(&self.model.net, params, self.model.solution_offset(), &self.points.boundary, self.weights.boundary, grad)
    }
}

fn boundary_term(
    net: &Pinn,
    params: &[f64],
    offset: usize,
    boundary: &[(f64, f64)],
    weight: f64,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    if boundary.is_empty() {
        return Ok(0.0);
    }
    let tape = Tape::<1>::new(params);
    let nb = boundary.len() as f64;
    let mut sum = 0.0;
    let mut seeds = Vec::with_capacity(boundary.len());
    for &(x, g) in boundary {
        let u = net.record(&tape, offset, &[[x]])?[0];
        let d = u.value() - g;
        sum += d * d;
        seeds.push((u, [2.0 * weight * d / nb]));
    }
    if let Some(g) = grad {
        tape.backward(&seeds, g);
    }
    Ok(sum / nb)
}

/// Mean squared mismatch to the initial data over the initial points.
pub struct InitialLoss<'m> {
    net: &'m Pinn,
    points: &'m Collocation,
    targets: Vec<Vec<f64>>,
    weights: LossWeights,
    mode: ExecMode,
}

impl<'m> InitialLoss<'m> {
    pub fn new(p: &PdeProblem, net: &'m Pinn, points: &'m Collocation, weights: LossWeights, mode: ExecMode) -> Self {
        let targets = (0..points.len()).map(|i| p.initial_value(points.point(i))).collect();
        Self { net, points, targets, weights, mode }
    }

    pub fn eval(&self, params: &[f64], grad: Option<&mut [f64]>) -> Result<LossParts> {
        let want = grad.is_some();
        let n = self.points.len() as f64;
        let w = 2.0 * self.weights.initial / n;
        let parts = map_chunks(self.points.len(), self.mode, |range| {
            let mut tape = Tape::<1>::new(params);
            let mut out = ChunkOut { residual: 0.0, constraint: 0.0, grad: if want { vec![0.0; params.len()] } else { Vec::new() } };
            for i in range {
                {
                    let coords: Vec<[f64; 1]> = self.points.point(i).iter().map(|&x| [x]).collect();
                    let outs = self.net.record(&tape, 0, &coords)?;
                    let mut seeds = Vec::with_capacity(outs.len());
                    for (u, t) in outs.iter().zip(&self.targets[i]) {
                        let d = u.value() - t;
                        out.residual += d * d;
                        seeds.push((*u, [w * d]));
                    }
                    if want {
                        tape.backward(&seeds, &mut out.grad);
                    }
                }
                tape.clear();
            }
            Ok(out)
        });
        let mut grad = grad;
        let (fit, _) = reduce(parts, grad.as_deref_mut())?;
        let fit = fit / n;
        let bnd = boundary_term(self.net, params, 0, &self.points.boundary, self.weights.boundary, grad)?;
        let total = self.weights.initial * fit + self.weights.boundary * bnd;
        if !total.is_finite() {
            return Err(overflow("initial loss"));
        }
        Ok(LossParts { total, residual: 0.0, constraint: 0.0, data: fit + bnd })
    }
}

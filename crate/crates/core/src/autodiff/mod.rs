//! Forward Taylor towers nested inside reverse-mode gradients.
//!
//! Spatial derivatives (up to fourth order) are carried as truncated Taylor
//! towers through the network; parameter gradients come from a reverse sweep
//! over the same recording. See [`Tape`] for the engine and [`taylor_eval`]
//! / [`grad`] for the two entry points used elsewhere in the crate.

pub mod taylor;
mod tape;

use std::ops::{Add, Mul, Neg, Sub};

pub use tape::{Tape, Var};

use crate::error::{Error, Result};

/// Highest supported derivative order.
pub const MAX_ORDER: usize = 4;

/// Scalar types the PDE operators and scheme residuals are generic over:
/// plain `f64` for direct evaluation and tape [`Var`]s for training.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    fn value(&self) -> f64;
}

impl Real for f64 {
    fn value(&self) -> f64 {
        *self
    }
}

/// Value and spatial derivatives of a scalar field at one point, along one axis.
///
/// `coeffs[k]` is the k-th derivative (not the Taylor coefficient).
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeTower {
    coeffs: Vec<f64>,
}

impl DerivativeTower {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() || coeffs.len() > MAX_ORDER + 1 {
            return Err(Error::DomainError(format!("tower length {} outside 1..=5", coeffs.len())));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NumericalOverflow("derivative tower".into()));
        }
        Ok(Self { coeffs })
    }

    /// Tower of a constant field.
    pub fn constant(c: f64, order: usize) -> Self {
        let mut coeffs = vec![0.0; order + 1];
        coeffs[0] = c;
        Self { coeffs }
    }

    pub fn from_taylor<const N: usize>(t: &[f64; N]) -> Self {
        let coeffs = t.iter().enumerate().map(|(k, c)| c * taylor::FACTORIAL[k]).collect();
        Self { coeffs }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn derivative(&self, k: usize) -> Option<f64> {
        self.coeffs.get(k).copied()
    }
}

/// A parameterized field `R^d -> R^m` that can record itself on a tape.
pub trait FieldModel: Sync {
    fn coord_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn param_count(&self) -> usize;

    /// Records the forward pass with parameters read from `tape.params()[offset..]`.
    ///
    /// `coords` holds one tower per coordinate (value plus seed direction);
    /// the returned vector holds one node per output.
    fn record<'a, const N: usize>(
        &self,
        tape: &'a Tape<'a, N>,
        offset: usize,
        coords: &[[f64; N]],
    ) -> Result<Vec<Var<'a, N>>>;
}

fn eval_towers<M: FieldModel, const N: usize>(
    net: &M,
    params: &[f64],
    point: &[f64],
    axis: usize,
) -> Result<Vec<DerivativeTower>> {
    let tape = Tape::<N>::new(params);
    let coords: Vec<[f64; N]> = point
        .iter()
        .enumerate()
        .map(|(i, &x)| taylor::variable(x, if i == axis { 1.0 } else { 0.0 }))
        .collect();
    let outs = net.record(&tape, 0, &coords)?;
    outs.iter()
        .map(|v| {
            let t = v.tower();
            if t.iter().all(|c| c.is_finite()) {
                Ok(DerivativeTower::from_taylor(&t))
            } else {
                Err(Error::NumericalOverflow("taylor_eval".into()))
            }
        })
        .collect()
}

/// Derivatives of every model output along `axis` at `point`, up to `order`.
pub fn taylor_eval<M: FieldModel>(
    net: &M,
    params: &[f64],
    point: &[f64],
    axis: usize,
    order: usize,
) -> Result<Vec<DerivativeTower>> {
    if point.len() != net.coord_dim() {
        return Err(Error::ShapeError { expected: net.coord_dim(), got: point.len() });
    }
    if params.len() != net.param_count() {
        return Err(Error::ShapeError { expected: net.param_count(), got: params.len() });
    }
    if axis >= point.len() {
        return Err(Error::DomainError(format!("axis {axis} out of range")));
    }
    match order {
        0 => eval_towers::<M, 1>(net, params, point, axis),
        1 => eval_towers::<M, 2>(net, params, point, axis),
        2 => eval_towers::<M, 3>(net, params, point, axis),
        3 => eval_towers::<M, 4>(net, params, point, axis),
        4 => eval_towers::<M, 5>(net, params, point, axis),
        _ => Err(Error::OrderError { have: MAX_ORDER, need: order }),
    }
}

/// Gradient of a scalar loss recorded by `loss` on a scalar tape.
///
/// The closure receives one node per parameter and returns the loss node.
pub fn grad<F>(loss: F, params: &[f64]) -> Result<(f64, Vec<f64>)>
where
    F: for<'a> Fn(&'a Tape<'a, 1>, &[Var<'a, 1>]) -> Var<'a, 1>,
{
    let tape = Tape::<1>::new(params);
    let theta: Vec<_> = (0..params.len()).map(|i| tape.param(i)).collect();
    let out = loss(&tape, &theta);
    let value = out.value();
    if !value.is_finite() {
        return Err(Error::NumericalOverflow("loss".into()));
    }
    let mut g = vec![0.0; params.len()];
    tape.backward(&[(out, [1.0])], &mut g);
    Ok((value, g))
}

//! Fourier feature maps that make the network exactly periodic.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::taylor::{self, Unary};

/// Wraps `x` into `[0, period)`; features at `x` and `x + period` then differ
/// only by the rounding of the shift itself.
#[inline]
fn reduce(x: f64, period: f64) -> f64 {
    x.rem_euclid(period)
}

/// `[1, cos(wx), sin(wx), .., cos(Mwx), sin(Mwx)]` with `w = 2 pi / L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierEmbedding1D {
    pub modes: usize,
    pub period: f64,
}

impl FourierEmbedding1D {
    pub fn new(modes: usize, period: f64) -> Self {
        assert!(modes > 0 && period > 0.0);
        Self { modes, period }
    }

    pub fn omega(&self) -> f64 {
        2.0 * PI / self.period
    }

    pub fn dim(&self) -> usize {
        2 * self.modes + 1
    }

    pub fn embed(&self, x: f64) -> Vec<f64> {
        let x = reduce(x, self.period);
        let w = self.omega();
        let mut out = Vec::with_capacity(self.dim());
        out.push(1.0);
        for m in 1..=self.modes {
            let (s, c) = (m as f64 * w * x).sin_cos();
            out.push(c);
            out.push(s);
        }
        out
    }

    /// Feature towers for a coordinate tower. Range reduction shifts only the
    /// value, so derivative coefficients pass through unchanged.
    pub fn embed_tower<const N: usize>(&self, x: &[f64; N]) -> Vec<[f64; N]> {
        let mut xr = *x;
        xr[0] = reduce(x[0], self.period);
        let w = self.omega();
        let mut out = Vec::with_capacity(self.dim());
        out.push(taylor::constant(1.0));
        for m in 1..=self.modes {
            let arg = taylor::scale(&xr, m as f64 * w);
            out.push(taylor::compose(Unary::Cos, &arg));
            out.push(taylor::compose(Unary::Sin, &arg));
        }
        out
    }
}

/// Two-dimensional periodic features: the constant, four pure blocks
/// (`cos x`, `cos y`, `sin x`, `sin y`) and four full cross-product blocks
/// (`cc`, `cs`, `sc`, `ss`) over all `(i, j)` frequency pairs, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierEmbedding2D {
    pub modes: usize,
    pub period_x: f64,
    pub period_y: f64,
}

impl FourierEmbedding2D {
    pub fn new(modes: usize, period_x: f64, period_y: f64) -> Self {
        assert!(modes > 0 && period_x > 0.0 && period_y > 0.0);
        Self { modes, period_x, period_y }
    }

    pub fn dim(&self) -> usize {
        1 + 4 * self.modes + 4 * self.modes * self.modes
    }

    fn assemble<T: Copy>(&self, one: T, cx: &[T], sx: &[T], cy: &[T], sy: &[T], mul: impl Fn(&T, &T) -> T) -> Vec<T> {
        let mut out = Vec::with_capacity(self.dim());
        out.push(one);
        out.extend_from_slice(cx);
        out.extend_from_slice(cy);
        out.extend_from_slice(sx);
        out.extend_from_slice(sy);
        for (a, b) in [(cx, cy), (cx, sy), (sx, cy), (sx, sy)] {
            for ai in a {
                for bj in b {
                    out.push(mul(ai, bj));
                }
            }
        }
        out
    }

    pub fn embed(&self, x: f64, y: f64) -> Vec<f64> {
        let (x, y) = (reduce(x, self.period_x), reduce(y, self.period_y));
        let (wx, wy) = (2.0 * PI / self.period_x, 2.0 * PI / self.period_y);
        let m = self.modes;
        let (mut cx, mut sx, mut cy, mut sy) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        for i in 0..m {
            let k = (i + 1) as f64;
            (sx[i], cx[i]) = (k * wx * x).sin_cos();
            (sy[i], cy[i]) = (k * wy * y).sin_cos();
        }
        self.assemble(1.0, &cx, &sx, &cy, &sy, |a, b| a * b)
    }

    pub fn embed_tower<const N: usize>(&self, x: &[f64; N], y: &[f64; N]) -> Vec<[f64; N]> {
        let (mut xr, mut yr) = (*x, *y);
        xr[0] = reduce(x[0], self.period_x);
        yr[0] = reduce(y[0], self.period_y);
        let (wx, wy) = (2.0 * PI / self.period_x, 2.0 * PI / self.period_y);
        let m = self.modes;
        let mut cx = Vec::with_capacity(m);
        let mut sx = Vec::with_capacity(m);
        let mut cy = Vec::with_capacity(m);
        let mut sy = Vec::with_capacity(m);
        for i in 1..=m {
            let ax = taylor::scale(&xr, i as f64 * wx);
            let ay = taylor::scale(&yr, i as f64 * wy);
            cx.push(taylor::compose(Unary::Cos, &ax));
            sx.push(taylor::compose(Unary::Sin, &ax));
            cy.push(taylor::compose(Unary::Cos, &ay));
            sy.push(taylor::compose(Unary::Sin, &ay));
        }
        self.assemble(taylor::constant(1.0), &cx, &sx, &cy, &sy, taylor::mul)
    }
}

/// Input transformation applied before the trainable body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Embedding {
    /// Raw coordinates.
    Identity { dim: usize },
    Fourier1D(FourierEmbedding1D),
    Fourier2D(FourierEmbedding2D),
}

impl Embedding {
    pub fn coord_dim(&self) -> usize {
        match self {
            Embedding::Identity { dim } => *dim,
            Embedding::Fourier1D(_) => 1,
            Embedding::Fourier2D(_) => 2,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Embedding::Identity { dim } => *dim,
            Embedding::Fourier1D(e) => e.dim(),
            Embedding::Fourier2D(e) => e.dim(),
        }
    }

    pub fn towers<const N: usize>(&self, coords: &[[f64; N]]) -> Vec<[f64; N]> {
        match self {
            Embedding::Identity { .. } => coords.to_vec(),
            Embedding::Fourier1D(e) => e.embed_tower(&coords[0]),
            Embedding::Fourier2D(e) => e.embed_tower(&coords[0], &coords[1]),
        }
    }
}

//! Reverse-mode tape whose nodes are Taylor towers in one spatial direction.
//!
//! Each node holds a truncated Taylor expansion of a scalar field of the
//! input coordinates. Trainable parameters are constants in space, so the
//! reverse sweep yields gradients of any tower coefficient with respect to
//! the parameter vector. Dense layers are recorded as single range ops to
//! keep the tape at one entry per layer rather than one per weight.

use std::cell::RefCell;
use std::ops::{Add, Mul, Neg, Sub};

use super::taylor::{self, Unary};
use super::Real;

#[derive(Debug, Clone, Copy)]
enum Op {
    Param { index: u32, out: u32 },
    Affine { input: u32, n_in: u32, out: u32, n_out: u32, weight: u32, bias: u32 },
    Unary { f: Unary, input: u32, out: u32, len: u32 },
    Gate { z: u32, u: u32, v: u32, out: u32, len: u32 },
    Add { a: u32, b: u32, out: u32 },
    Sub { a: u32, b: u32, out: u32 },
    Mul { a: u32, b: u32, out: u32 },
    Scale { a: u32, c: f64, out: u32 },
    Shift { a: u32, out: u32 },
    Coeff { a: u32, k: u32, out: u32 },
}

#[derive(Default)]
struct Inner<const N: usize> {
    vals: Vec<[f64; N]>,
    active: Vec<bool>,
    ops: Vec<Op>,
}

impl<const N: usize> Inner<N> {
    fn push(&mut self, v: [f64; N], active: bool) -> u32 {
        self.vals.push(v);
        self.active.push(active);
        (self.vals.len() - 1) as u32
    }
}

/// A recording of tower operations over one parameter slice.
///
/// `N` is the number of Taylor coefficients carried per node (derivative
/// order plus one).
pub struct Tape<'p, const N: usize> {
    params: &'p [f64],
    inner: RefCell<Inner<N>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'a, const N: usize> {
    tape: &'a Tape<'a, N>,
    idx: u32,
}

impl<const N: usize> std::fmt::Debug for Var<'_, N> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.idx, self.tower())
    }
}

impl<'p, const N: usize> Tape<'p, N> {
    pub fn new(params: &'p [f64]) -> Self {
        assert!((1..=5).contains(&N), "towers carry 1..=5 coefficients");
        Self { params, inner: RefCell::new(Inner::default()) }
    }

    pub fn params(&self) -> &'p [f64] {
        self.params
    }

    /// Drops all nodes, keeping allocations.
    pub fn clear(&mut self) {
        let inner = self.inner.get_mut();
        inner.vals.clear();
        inner.active.clear();
        inner.ops.clear();
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn var(&self, idx: u32) -> Var<'_, N> {
        Var { tape: self, idx }
    }

    /// A tower that does not depend on the parameters.
    pub fn leaf(&self, tower: [f64; N]) -> Var<'_, N> {
        let idx = self.inner.borrow_mut().push(tower, false);
        self.var(idx)
    }

    pub fn constant(&self, c: f64) -> Var<'_, N> {
        self.leaf(taylor::constant(c))
    }

    /// Parameter `index` of the slice as a node constant in space.
    pub fn param(&self, index: usize) -> Var<'_, N> {
        let mut inner = self.inner.borrow_mut();
        let out = inner.push(taylor::constant(self.params[index]), true);
        inner.ops.push(Op::Param { index: index as u32, out });
        drop(inner);
        self.var(out)
    }

    /// Dense layer `out_j = b_j + sum_i in_i W[i, j]` over a contiguous input range.
    ///
    /// `W` is stored row-major as `n_in x n_out` at `weight`, `b` at `bias`.
    /// Returns the first output node; outputs are contiguous.
    pub fn affine(&self, input: Var<'_, N>, n_in: usize, n_out: usize, weight: usize, bias: usize) -> Var<'_, N> {
        let w = &self.params[weight..weight + n_in * n_out];
        let b = &self.params[bias..bias + n_out];
        let mut inner = self.inner.borrow_mut();
        let out = inner.vals.len() as u32;
        let start = input.idx as usize;
        for &bj in b {
            inner.vals.push(taylor::constant(bj));
            inner.active.push(true);
        }
        let (head, tail) = inner.vals.split_at_mut(out as usize);
        let xs = &head[start..start + n_in];
        for (x, row) in xs.iter().zip(w.chunks_exact(n_out)) {
            for (o, &wij) in tail.iter_mut().zip(row) {
                for k in 0..N {
                    o[k] += x[k] * wij;
                }
            }
        }
        inner.ops.push(Op::Affine {
            input: input.idx,
            n_in: n_in as u32,
            out,
            n_out: n_out as u32,
            weight: weight as u32,
            bias: bias as u32,
        });
        drop(inner);
        self.var(out)
    }

    /// Elementwise `f` over `len` contiguous nodes.
    pub fn unary_range(&self, f: Unary, input: Var<'_, N>, len: usize) -> Var<'_, N> {
        let mut inner = self.inner.borrow_mut();
        let out = inner.vals.len() as u32;
        let start = input.idx as usize;
        let mut any_active = false;
        for i in 0..len {
            let v = taylor::compose(f, &inner.vals[start + i]);
            let act = inner.active[start + i];
            any_active |= act;
            inner.push(v, act);
        }
        if any_active {
            inner.ops.push(Op::Unary { f, input: input.idx, out, len: len as u32 });
        }
        drop(inner);
        self.var(out)
    }

    /// Elementwise `u + z (v - u)`, i.e. `(1 - z) u + z v`.
    pub fn gate_range(&self, z: Var<'_, N>, u: Var<'_, N>, v: Var<'_, N>, len: usize) -> Var<'_, N> {
        let mut inner = self.inner.borrow_mut();
        let out = inner.vals.len() as u32;
        for i in 0..len {
            let zi = inner.vals[z.idx as usize + i];
            let ui = inner.vals[u.idx as usize + i];
            let vi = inner.vals[v.idx as usize + i];
            let mut diff = vi;
            for k in 0..N {
                diff[k] -= ui[k];
            }
            let zd = taylor::mul(&zi, &diff);
            let mut o = ui;
            for k in 0..N {
                o[k] += zd[k];
            }
            inner.push(o, true);
        }
        inner.ops.push(Op::Gate { z: z.idx, u: u.idx, v: v.idx, out, len: len as u32 });
        drop(inner);
        self.var(out)
    }

    /// Node `first + offset` of a range produced by a layer op.
    pub fn at(&self, first: Var<'_, N>, offset: usize) -> Var<'_, N> {
        self.var(first.idx + offset as u32)
    }

    fn binary(&self, a: u32, b: u32, make: impl Fn(u32, u32, u32) -> Op, f: impl Fn(&[f64; N], &[f64; N]) -> [f64; N]) -> u32 {
        let mut inner = self.inner.borrow_mut();
        let v = f(&inner.vals[a as usize], &inner.vals[b as usize]);
        let act = inner.active[a as usize] || inner.active[b as usize];
        let out = inner.push(v, act);
        if act {
            inner.ops.push(make(a, b, out));
        }
        out
    }

    fn unary_op(&self, a: u32, make: impl Fn(u32, u32) -> Op, f: impl Fn(&[f64; N]) -> [f64; N]) -> u32 {
        let mut inner = self.inner.borrow_mut();
        let v = f(&inner.vals[a as usize]);
        let act = inner.active[a as usize];
        let out = inner.push(v, act);
        if act {
            inner.ops.push(make(a, out));
        }
        out
    }

    /// Reverse sweep.
    ///
    /// Seeds pair a node with the adjoint of each of its coefficients.
    /// Parameter adjoints are accumulated into `grad`, indexed like the
    /// tape's parameter slice.
    pub fn backward(&self, seeds: &[(Var<'_, N>, [f64; N])], grad: &mut [f64]) {
        let inner = self.inner.borrow();
        let mut adj = vec![[0.0; N]; inner.vals.len()];
        for (v, s) in seeds {
            let a = &mut adj[v.idx as usize];
            for k in 0..N {
                a[k] += s[k];
            }
        }
        let vals = &inner.vals;
        let active = &inner.active;
        let params = self.params;
        for op in inner.ops.iter().rev() {
            match *op {
                Op::Param { index, out } => {
                    grad[index as usize] += adj[out as usize][0];
                }
                Op::Affine { input, n_in, out, n_out, weight, bias } => {
                    let (n_in, n_out) = (n_in as usize, n_out as usize);
                    let (input, out) = (input as usize, out as usize);
                    let (weight, bias) = (weight as usize, bias as usize);
                    let (head, tail) = adj.split_at_mut(out);
                    let outs = &tail[..n_out];
                    for (j, o) in outs.iter().enumerate() {
                        grad[bias + j] += o[0];
                    }
                    let w = &params[weight..weight + n_in * n_out];
                    let gw = &mut grad[weight..weight + n_in * n_out];
                    for i in 0..n_in {
                        let x = &vals[input + i];
                        let row = &w[i * n_out..(i + 1) * n_out];
                        let grow = &mut gw[i * n_out..(i + 1) * n_out];
                        if active[input + i] {
                            let mut ax = [0.0; N];
                            for ((o, &wij), g) in outs.iter().zip(row).zip(grow.iter_mut()) {
                                let mut dot = 0.0;
                                for k in 0..N {
                                    ax[k] += wij * o[k];
                                    dot += o[k] * x[k];
                                }
                                *g += dot;
                            }
                            let a = &mut head[input + i];
                            for k in 0..N {
                                a[k] += ax[k];
                            }
                        } else {
                            for (o, g) in outs.iter().zip(grow.iter_mut()) {
                                let mut dot = 0.0;
                                for k in 0..N {
                                    dot += o[k] * x[k];
                                }
                                *g += dot;
                            }
                        }
                    }
                }
                Op::Unary { f, input, out, len } => {
                    for i in 0..len as usize {
                        let src = input as usize + i;
                        if !active[src] {
                            continue;
                        }
                        let o = adj[out as usize + i];
                        let d = taylor::compose_derivative(f, &vals[src]);
                        taylor::mul_adjoint(&o, &d, &mut adj[src]);
                    }
                }
                Op::Gate { z, u, v, out, len } => {
                    for i in 0..len as usize {
                        let (zi, ui, vi) = (z as usize + i, u as usize + i, v as usize + i);
                        let o = adj[out as usize + i];
                        // out = u + z (v - u)
                        let zt = vals[zi];
                        let mut diff = vals[vi];
                        for k in 0..N {
                            diff[k] -= vals[ui][k];
                        }
                        let mut dz = [0.0; N];
                        taylor::mul_adjoint(&o, &diff, &mut dz);
                        let mut dv = [0.0; N];
                        taylor::mul_adjoint(&o, &zt, &mut dv);
                        for k in 0..N {
                            adj[zi][k] += dz[k];
                            adj[vi][k] += dv[k];
                            adj[ui][k] += o[k] - dv[k];
                        }
                    }
                }
                Op::Add { a, b, out } => {
                    let o = adj[out as usize];
                    for k in 0..N {
                        adj[a as usize][k] += o[k];
                        adj[b as usize][k] += o[k];
                    }
                }
                Op::Sub { a, b, out } => {
                    let o = adj[out as usize];
                    for k in 0..N {
                        adj[a as usize][k] += o[k];
                        adj[b as usize][k] -= o[k];
                    }
                }
                Op::Mul { a, b, out } => {
                    let o = adj[out as usize];
                    let (va, vb) = (vals[a as usize], vals[b as usize]);
                    let mut da = [0.0; N];
                    let mut db = [0.0; N];
                    taylor::mul_adjoint(&o, &vb, &mut da);
                    taylor::mul_adjoint(&o, &va, &mut db);
                    for k in 0..N {
                        adj[a as usize][k] += da[k];
                        adj[b as usize][k] += db[k];
                    }
                }
                Op::Scale { a, c, out } => {
                    let o = adj[out as usize];
                    for k in 0..N {
                        adj[a as usize][k] += c * o[k];
                    }
                }
                Op::Shift { a, out } => {
                    let o = adj[out as usize];
                    for k in 0..N {
                        adj[a as usize][k] += o[k];
                    }
                }
                Op::Coeff { a, k, out } => {
                    adj[a as usize][k as usize] += adj[out as usize][0];
                }
            }
        }
    }
}

impl<'a, const N: usize> Var<'a, N> {
    pub fn tower(&self) -> [f64; N] {
        self.tape.inner.borrow().vals[self.idx as usize]
    }

    pub fn value(&self) -> f64 {
        self.tower()[0]
    }

    /// The k-th spatial derivative at the expansion point, as a node constant in space.
    pub fn derivative(self, k: usize) -> Self {
        assert!(k < N, "derivative order {k} exceeds tower length {N}");
        let scale = taylor::FACTORIAL[k];
        let out = self.tape.unary_op(
            self.idx,
            |a, out| Op::Coeff { a, k: k as u32, out },
            |v| taylor::constant(v[k]),
        );
        let coeff = self.tape.var(out);
        if k > 1 {
            coeff * scale
        } else {
            coeff
        }
    }

    pub fn tanh(self) -> Self {
        self.tape.unary_range(Unary::Tanh, self, 1)
    }

    pub fn sin(self) -> Self {
        self.tape.unary_range(Unary::Sin, self, 1)
    }

    pub fn cos(self) -> Self {
        self.tape.unary_range(Unary::Cos, self, 1)
    }
}

impl<'a, const N: usize> Add for Var<'a, N> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let out = self.tape.binary(self.idx, rhs.idx, |a, b, out| Op::Add { a, b, out }, |x, y| {
            let mut o = *x;
            for k in 0..N {
                o[k] += y[k];
            }
            o
        });
        self.tape.var(out)
    }
}

impl<'a, const N: usize> Sub for Var<'a, N> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let out = self.tape.binary(self.idx, rhs.idx, |a, b, out| Op::Sub { a, b, out }, |x, y| {
            let mut o = *x;
            for k in 0..N {
                o[k] -= y[k];
            }
            o
        });
        self.tape.var(out)
    }
}

impl<'a, const N: usize> Mul for Var<'a, N> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let out = self.tape.binary(self.idx, rhs.idx, |a, b, out| Op::Mul { a, b, out }, taylor::mul);
        self.tape.var(out)
    }
}

impl<'a, const N: usize> Mul<f64> for Var<'a, N> {
    type Output = Self;
    fn mul(self, c: f64) -> Self {
        let out = self.tape.unary_op(self.idx, |a, out| Op::Scale { a, c, out }, |v| taylor::scale(v, c));
        self.tape.var(out)
    }
}

impl<'a, const N: usize> Mul<Var<'a, N>> for f64 {
    type Output = Var<'a, N>;
    fn mul(self, v: Var<'a, N>) -> Var<'a, N> {
        v * self
    }
}

impl<'a, const N: usize> Add<f64> for Var<'a, N> {
    type Output = Self;
    fn add(self, c: f64) -> Self {
        let out = self.tape.unary_op(self.idx, |a, out| Op::Shift { a, out }, |v| {
            let mut o = *v;
            o[0] += c;
            o
        });
        self.tape.var(out)
    }
}

impl<'a, const N: usize> Add<Var<'a, N>> for f64 {
    type Output = Var<'a, N>;
    fn add(self, v: Var<'a, N>) -> Var<'a, N> {
        v + self
    }
}

impl<'a, const N: usize> Sub<f64> for Var<'a, N> {
    type Output = Self;
    fn sub(self, c: f64) -> Self {
        self + (-c)
    }
}

impl<'a, const N: usize> Sub<Var<'a, N>> for f64 {
    type Output = Var<'a, N>;
    fn sub(self, v: Var<'a, N>) -> Var<'a, N> {
        (-v) + self
    }
}

impl<'a, const N: usize> Neg for Var<'a, N> {
    type Output = Self;
    fn neg(self) -> Self {
        self * -1.0
    }
}

impl<const N: usize> Real for Var<'_, N> {
    fn value(&self) -> f64 {
        Var::value(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_layer_matches_manual_sum() {
        // 2 inputs -> 3 outputs, W row-major (in, out), then bias
        let params = [1.0, 2.0, 3.0, -1.0, 0.5, 0.25, 0.1, 0.2, 0.3];
        let tape = Tape::<2>::new(&params);
        let x0 = tape.leaf([0.5, 1.0]);
        let _x1 = tape.leaf([-2.0, 0.0]);
        let out = tape.affine(x0, 2, 3, 0, 6);
        let want = [0.1 + 0.5 + 2.0, 0.2 + 1.0 - 1.0, 0.3 + 1.5 - 0.5];
        for j in 0..3 {
            assert!((tape.at(out, j).value() - want[j]).abs() < 1e-15);
        }
        // d/dx of output j is W[0, j]
        assert_eq!(tape.at(out, 1).tower()[1], 2.0);
    }

    #[test]
    fn backward_through_param_product() {
        let params = [2.0, 3.0];
        let tape = Tape::<1>::new(&params);
        let a = tape.param(0);
        let b = tape.param(1);
        let y = a * b + a * 4.0;
        let mut g = [0.0; 2];
        tape.backward(&[(y, [1.0])], &mut g);
        assert_eq!(g, [7.0, 2.0]);
    }

    #[test]
    fn inactive_branches_record_no_ops() {
        let params: [f64; 0] = [];
        let tape = Tape::<3>::new(&params);
        let x = tape.leaf(taylor::variable(0.3, 1.0));
        let y = (x * x).tanh() + 1.0;
        assert!(tape.inner.borrow().ops.is_empty());
        assert!(y.value().is_finite());
    }
}

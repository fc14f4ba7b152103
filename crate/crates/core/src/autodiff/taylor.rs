//! Truncated Taylor arithmetic on fixed-size coefficient arrays.
//!
//! A tower `[c0, c1, .., c{N-1}]` stores normalized coefficients
//! `c_k = f^(k)(x0) / k!`, so products are plain Cauchy convolutions and
//! composition with a smooth scalar function is a finite polynomial in the
//! tail `f - c0`.

/// Smooth scalar functions supported by tower composition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Sin,
    Cos,
    /// Value-only; its second derivative is singular.
    Relu,
}

impl Unary {
    pub fn name(self) -> &'static str {
        match self {
            Unary::Tanh => "tanh",
            Unary::Sin => "sin",
            Unary::Cos => "cos",
            Unary::Relu => "relu",
        }
    }

    /// Scaled derivatives `g^(m)(x) / m!` for `m = 0..=count-1`, `count <= 6`.
    pub fn scaled_derivs(self, x: f64, count: usize) -> [f64; 6] {
        const INV_FACT: [f64; 6] = [1.0, 1.0, 0.5, 1.0 / 6.0, 1.0 / 24.0, 1.0 / 120.0];
        let mut d = [0.0; 6];
        match self {
            Unary::Tanh => {
                let t = x.tanh();
                let t2 = t * t;
                let s = 1.0 - t2;
                let all = [
                    t,
                    s,
                    -2.0 * t * s,
                    -2.0 + t2 * (8.0 - 6.0 * t2),
                    t * (16.0 + t2 * (-40.0 + 24.0 * t2)),
                    16.0 + t2 * (-136.0 + t2 * (240.0 - 120.0 * t2)),
                ];
                for m in 0..count {
                    d[m] = all[m] * INV_FACT[m];
                }
            }
            Unary::Relu => {
                d[0] = x.max(0.0);
                if count > 1 {
                    d[1] = if x > 0.0 { 1.0 } else { 0.0 };
                }
            }
            Unary::Sin | Unary::Cos => {
                let (s, c) = x.sin_cos();
                // sin, cos, -sin, -cos cycle; cos starts one step later.
                let cycle = [s, c, -s, -c];
                let shift = if self == Unary::Cos { 1 } else { 0 };
                for m in 0..count {
                    d[m] = cycle[(m + shift) % 4] * INV_FACT[m];
                }
            }
        }
        d
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Unary::Tanh => x.tanh(),
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Relu => x.max(0.0),
        }
    }
}

#[inline]
pub fn constant<const N: usize>(c: f64) -> [f64; N] {
    let mut t = [0.0; N];
    t[0] = c;
    t
}

/// Tower of the independent variable `x` at `x0` along direction `dir`.
#[inline]
pub fn variable<const N: usize>(x0: f64, dir: f64) -> [f64; N] {
    let mut t = [0.0; N];
    t[0] = x0;
    if N > 1 {
        t[1] = dir;
    }
    t
}

#[inline]
pub fn mul<const N: usize>(a: &[f64; N], b: &[f64; N]) -> [f64; N] {
    let mut c = [0.0; N];
    for k in 0..N {
        let mut s = 0.0;
        for i in 0..=k {
            s += a[i] * b[k - i];
        }
        c[k] = s;
    }
    c
}

/// Adjoint of `c = a * b` with respect to `a`, given `c_bar`: `a_bar_i += sum_k c_bar_k b_{k-i}`.
#[inline]
pub fn mul_adjoint<const N: usize>(c_bar: &[f64; N], b: &[f64; N], a_bar: &mut [f64; N]) {
    for i in 0..N {
        let mut s = 0.0;
        for k in i..N {
            s += c_bar[k] * b[k - i];
        }
        a_bar[i] += s;
    }
}

#[inline]
pub fn scale<const N: usize>(a: &[f64; N], c: f64) -> [f64; N] {
    let mut out = *a;
    for v in out.iter_mut() {
        *v *= c;
    }
    out
}

/// Powers `delta^m` (m = 0..N-1) of the tail `delta = a - a0`.
#[inline]
fn tail_powers<const N: usize>(a: &[f64; N]) -> [[f64; N]; N] {
    let mut delta = *a;
    delta[0] = 0.0;
    let mut p = [[0.0; N]; N];
    p[0][0] = 1.0;
    for m in 1..N {
        p[m] = mul(&p[m - 1], &delta);
    }
    p
}

/// `g(a)` as a tower.
pub fn compose<const N: usize>(g: Unary, a: &[f64; N]) -> [f64; N] {
    let d = g.scaled_derivs(a[0], N);
    let p = tail_powers(a);
    let mut out = [0.0; N];
    for m in 0..N {
        for k in m..N {
            out[k] += d[m] * p[m][k];
        }
    }
    out
}

/// `g'(a)` as a tower; the Jacobian of `compose` is multiplication by this.
pub fn compose_derivative<const N: usize>(g: Unary, a: &[f64; N]) -> [f64; N] {
    let d = g.scaled_derivs(a[0], N + 1);
    let p = tail_powers(a);
    let mut out = [0.0; N];
    for m in 0..N {
        let coef = (m + 1) as f64 * d[m + 1];
        for k in m..N {
            out[k] += coef * p[m][k];
        }
    }
    out
}

pub const FACTORIAL: [f64; 6] = [1.0, 1.0, 2.0, 6.0, 24.0, 120.0];

#[cfg(test)]
mod tests {
    use super::*;

    fn analytic(g: Unary, x: f64, m: usize) -> f64 {
        match g {
            Unary::Sin => [x.sin(), x.cos(), -x.sin(), -x.cos()][m % 4],
            Unary::Cos => [x.cos(), -x.sin(), -x.cos(), x.sin()][m % 4],
            Unary::Tanh => {
                let t = x.tanh();
                let s = 1.0 - t * t;
                [
                    t,
                    s,
                    -2.0 * t * s,
                    s * (6.0 * t * t - 2.0),
                    s * (16.0 * t - 24.0 * t * t * t),
                ][m]
            }
            Unary::Relu => unreachable!(),
        }
    }

    #[test]
    fn primitive_towers_match_analytic_derivatives() {
        let xs = [-1.7, -0.9, -0.31, 0.0, 0.12, 0.5, 0.77, 1.3, 2.1, 3.4];
        for g in [Unary::Tanh, Unary::Sin, Unary::Cos] {
            for &x in &xs {
                let t = compose::<5>(g, &variable(x, 1.0));
                for k in 0..5 {
                    let want = analytic(g, x, k);
                    let got = t[k] * FACTORIAL[k];
                    let tol = 1e-10 * want.abs().max(1.0);
                    assert!((got - want).abs() <= tol, "{g:?} x={x} k={k}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn fifth_tanh_derivative_matches_difference_of_fourth() {
        let x = 0.37;
        let h = 1e-5;
        let d4 = |x: f64| Unary::Tanh.scaled_derivs(x, 5)[4] * 24.0;
        let fd = (d4(x + h) - d4(x - h)) / (2.0 * h);
        let d5 = Unary::Tanh.scaled_derivs(x, 6)[5] * 120.0;
        assert!((fd - d5).abs() < 1e-6 * d5.abs().max(1.0));
    }

    #[test]
    fn product_is_leibniz_convolution() {
        // derivative-form towers of sin and exp-like polynomial
        let a = [0.3, -1.2, 0.7, 2.0, -0.4];
        let b = [1.1, 0.5, -0.25, 0.9, 0.33];
        let c = mul(&a, &b);
        // check in derivative form: (fg)^(k) = sum binom(k,i) f^(i) g^(k-i)
        let binom = |n: usize, k: usize| FACTORIAL[n] / (FACTORIAL[k] * FACTORIAL[n - k]);
        for k in 0..5 {
            let mut want = 0.0;
            for i in 0..=k {
                want += binom(k, i) * a[i] * FACTORIAL[i] * b[k - i] * FACTORIAL[k - i];
            }
            assert!((c[k] * FACTORIAL[k] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn chain_rule_through_nested_composition() {
        // sin(tanh(x)) derivatives vs finite differences of lower order coefficients
        let f = |x: f64| compose::<5>(Unary::Sin, &compose(Unary::Tanh, &variable(x, 1.0)));
        let x = 0.4;
        let h = 1e-4;
        let t = f(x);
        for k in 1..5 {
            let dk = |x: f64| f(x)[k - 1] * FACTORIAL[k - 1];
            let fd = (dk(x + h) - dk(x - h)) / (2.0 * h);
            assert!((t[k] * FACTORIAL[k] - fd).abs() < 1e-6 * fd.abs().max(1.0), "k={k}");
        }
    }
}

//! Reference solutions: the analytic heat solution, a fourth-order finite
//! difference solver for Dirichlet problems, ETDRK4 pseudo-spectral solvers
//! for periodic 1-D problems and an RK4 vorticity solver for 2-D flow.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pdes::{Boundary, Operator, PdeProblem};

/// `e^{-pi^2 t} sin(pi x)`, the exact solution of `heat_test`.
pub fn heat_analytic(t: f64, x: f64) -> f64 {
    (-PI * PI * t).exp() * (PI * x).sin()
}

/// Field samples on a fixed grid at the timestamps `t_n = n tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub dim: usize,
    /// Point coordinates, `dim` per point.
    pub points: Vec<f64>,
    pub times: Vec<f64>,
    pub fields: usize,
    /// Indexed `[time][field][point]`.
    pub values: Vec<f64>,
}

impl ReferenceTrajectory {
    fn new(dim: usize, points: Vec<f64>, times: Vec<f64>, fields: usize) -> Self {
        let n = points.len() / dim;
        let values = Vec::with_capacity(times.len() * fields * n);
        Self { dim, points, times, fields, values }
    }

    pub fn n_points(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn snapshot(&self, n: usize, field: usize) -> &[f64] {
        let np = self.n_points();
        let start = (n * self.fields + field) * np;
        &self.values[start..start + np]
    }

    /// Snapshots `n = 1..=N_t` of one field, the rows compared by the error metric.
    pub fn trajectory(&self, field: usize) -> Vec<Vec<f64>> {
        (1..self.times.len()).map(|n| self.snapshot(n, field).to_vec()).collect()
    }

    /// Keeps every `stride`-th point (along each axis for 2-D lattices).
    pub fn subsample(&self, stride: usize) -> Self {
        let np = self.n_points();
        let keep: Vec<usize> = if self.dim == 1 {
            (0..np).step_by(stride).collect()
        } else {
            let side = (np as f64).sqrt().round() as usize;
            (0..side)
                .step_by(stride)
                .flat_map(|i| (0..side).step_by(stride).map(move |j| i * side + j))
                .collect()
        };
        let mut out = Self::new(self.dim, Vec::new(), self.times.clone(), self.fields);
        for &i in &keep {
            out.points.extend_from_slice(self.point(i));
        }
        for n in 0..self.times.len() {
            for f in 0..self.fields {
                let s = self.snapshot(n, f);
                out.values.extend(keep.iter().map(|&i| s[i]));
            }
        }
        out
    }

    fn check_finite(&self, n: usize) -> Result<()> {
        for f in 0..self.fields {
            if self.snapshot(n, f).iter().any(|v| !v.is_finite()) {
                return Err(Error::OracleDiverged { t: self.times[n] });
            }
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write, key: &str) -> Result<()> {
        writeln!(w, "tldpinn-reference v1")?;
        writeln!(w, "key {key}")?;
        writeln!(w, "dim {}", self.dim)?;
        writeln!(w, "points {}", self.n_points())?;
        writeln!(w, "times {}", self.times.len())?;
        writeln!(w, "fields {}", self.fields)?;
        writeln!(w, "end")?;
        for v in self.points.iter().chain(&self.times).chain(&self.values) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a cached trajectory; returns the stored key alongside.
    pub fn read_from(r: &mut impl BufRead) -> Result<(Self, String)> {
        let mut header = Vec::new();
        loop {
            let mut line = String::new();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Format("truncated reference header".into()));
            }
            let line = line.trim_end().to_string();
            if line == "end" {
                break;
            }
            header.push(line);
        }
        if header.first().map(String::as_str) != Some("tldpinn-reference v1") {
            return Err(Error::Format("not a reference file".into()));
        }
        let field = |name: &str| -> Result<String> {
            header
                .iter()
                .find_map(|l| l.strip_prefix(name).and_then(|s| s.strip_prefix(' ')))
                .map(str::to_string)
                .ok_or_else(|| Error::Format(format!("missing {name}")))
        };
        let num = |name: &str| -> Result<usize> {
            field(name)?.parse().map_err(|_| Error::Format(format!("bad {name}")))
        };
        let (dim, np, nt, nf) = (num("dim")?, num("points")?, num("times")?, num("fields")?);
        let key = field("key")?;
        let mut read = |n: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf)?;
            Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        };
        let points = read(np * dim)?;
        let times = read(nt)?;
        let values = read(nt * nf * np)?;
        Ok((Self { dim, points, times, fields: nf, values }, key))
    }
}

/// Resolution knobs for the reference solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Fourier modes for periodic 1-D problems.
    pub modes_1d: usize,
    /// Grid intervals for the finite-difference solver.
    pub grid_fd: usize,
    /// Fourier modes per axis for 2-D flow.
    pub modes_2d: usize,
    /// Internal steps per PINN time step.
    pub substeps: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { modes_1d: 512, grid_fd: 512, modes_2d: 128, substeps: 100 }
    }
}

/// Dispatches to the solver suited to the problem and samples at `t_n = n T / n_t`.
pub fn reference(p: &PdeProblem, n_t: usize, cfg: &OracleConfig) -> Result<ReferenceTrajectory> {
    let dt = p.end_time / n_t as f64 / cfg.substeps as f64;
    match (p.name.as_str(), p.boundary) {
        ("heat_test", _) => Ok(heat_reference(p, n_t, cfg.grid_fd)),
        (_, Boundary::Dirichlet { .. }) => fd_solve_dirichlet(p, cfg.grid_fd, dt, n_t),
        _ if p.spatial_dim() == 2 => spectral_solve_ns2d(p, cfg.modes_2d, dt, n_t),
        _ => spectral_solve_1d(p, cfg.modes_1d, dt, n_t),
    }
}

/// Analytic heat samples on the finite-difference grid.
pub fn heat_reference(p: &PdeProblem, n_t: usize, grid_n: usize) -> ReferenceTrajectory {
    let (a, b) = p.domain[0];
    let h = (b - a) / grid_n as f64;
    let xs: Vec<f64> = (0..=grid_n).map(|i| a + i as f64 * h).collect();
    let times: Vec<f64> = (0..=n_t).map(|n| n as f64 * p.end_time / n_t as f64).collect();
    let mut out = ReferenceTrajectory::new(1, xs.clone(), times.clone(), 1);
    for &t in &times {
        out.values.extend(xs.iter().map(|&x| heat_analytic(t, x)));
    }
    out
}

fn check_1d(p: &PdeProblem) -> Result<()> {
    if p.spatial_dim() != 1 || p.operator.field_count() != 1 {
        return Err(Error::DomainError(format!("{} is not a scalar 1-D problem", p.name)));
    }
    Ok(())
}

fn check_steps(dt_ref: f64, n_t: usize) -> Result<()> {
    if !(dt_ref > 0.0) || n_t == 0 {
        return Err(Error::DomainError("oracle needs dt_ref > 0 and n_t >= 1".into()));
    }
    Ok(())
}

/// Fourth-order central differences with classical RK4 in time; boundary values pinned.
///
/// The step is `tau / m` with `m` the smallest count giving a step no larger
/// than `dt_ref` and inside the RK4 stability interval.
pub fn fd_solve_dirichlet(p: &PdeProblem, grid_n: usize, dt_ref: f64, n_t: usize) -> Result<ReferenceTrajectory> {
    check_1d(p)?;
    check_steps(dt_ref, n_t)?;
    let Boundary::Dirichlet { left, right } = p.boundary else {
        return Err(Error::DomainError(format!("{} is periodic", p.name)));
    };
    if grid_n < 8 {
        return Err(Error::DomainError("finite-difference grid needs at least 8 intervals".into()));
    }
    let (a, b) = p.domain[0];
    let h = (b - a) / grid_n as f64;
    let xs: Vec<f64> = (0..=grid_n).map(|i| a + i as f64 * h).collect();
    let (diff, react) = match p.operator {
        Operator::Linear { diffusion, reaction } => (diffusion, reaction.abs()),
        Operator::ReactionDiffusion { d1, .. } => (d1, 0.0),
        Operator::AllenCahn { g1, g2 } => (g1, 2.0 * g2),
        _ => return Err(Error::DomainError(format!("no finite-difference operator for {}", p.name))),
    };
    let tau = p.end_time / n_t as f64;
    // 16/3 bounds the stencil's spectral radius over h^2
    let rho = diff * 16.0 / 3.0 / (h * h) + react + 1.0;
    let dt_max = dt_ref.min(2.5 / rho);
    let m = (tau / dt_max).ceil().max(1.0) as usize;
    let dt = tau / m as f64;

    let op = p.operator;
    let inv12h2 = 1.0 / (12.0 * h * h);
    let n = grid_n;
    let rhs = |u: &[f64], out: &mut [f64]| {
        out[0] = 0.0;
        out[n] = 0.0;
        for i in 1..n {
            let uxx = if i == 1 {
                10.0 * u[0] - 15.0 * u[1] - 4.0 * u[2] + 14.0 * u[3] - 6.0 * u[4] + u[5]
            } else if i == n - 1 {
                10.0 * u[n] - 15.0 * u[n - 1] - 4.0 * u[n - 2] + 14.0 * u[n - 3] - 6.0 * u[n - 4] + u[n - 5]
            } else {
                -u[i - 2] + 16.0 * u[i - 1] - 30.0 * u[i] + 16.0 * u[i + 1] - u[i + 2]
            } * inv12h2;
            let jet = crate::pdes::PointJet::from_fn(1, 1, 2, |_, _, k| [u[i], 0.0, uxx][k]);
            out[i] = op.apply(&jet);
        }
    };

    let mut u: Vec<f64> = xs.iter().map(|&x| p.initial_value(&[x])[0]).collect();
    u[0] = left;
    u[n] = right;
    let times: Vec<f64> = (0..=n_t).map(|k| k as f64 * tau).collect();
    let mut out = ReferenceTrajectory::new(1, xs, times, 1);
    out.values.extend_from_slice(&u);
    let len = u.len();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    for step in 1..=n_t {
        for _ in 0..m {
            rhs(&u, &mut k1);
            for i in 0..len {
                tmp[i] = u[i] + 0.5 * dt * k1[i];
            }
            rhs(&tmp, &mut k2);
            for i in 0..len {
                tmp[i] = u[i] + 0.5 * dt * k2[i];
            }
            rhs(&tmp, &mut k3);
            for i in 0..len {
                tmp[i] = u[i] + dt * k3[i];
            }
            rhs(&tmp, &mut k4);
            for i in 0..len {
                u[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        out.values.extend_from_slice(&u);
        out.check_finite(step)?;
    }
    Ok(out)
}

fn wavenumbers(n: usize, length: f64) -> Vec<f64> {
    let w = 2.0 * PI / length;
    (0..n)
        .map(|j| {
            let j = j as i64;
            let n = n as i64;
            let k = if j < n / 2 { j } else if j == n / 2 { 0 } else { j - n };
            k as f64 * w
        })
        .collect()
}

/// Keeps modes with `|index| <= n / 3`.
fn dealias_mask(n: usize) -> Vec<bool> {
    (0..n)
        .map(|j| {
            let k = if j <= n / 2 { j } else { n - j };
            k <= n / 3
        })
        .collect()
}

struct Spectral1d {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    k: Vec<f64>,
    mask: Vec<bool>,
    n: usize,
}

impl Spectral1d {
    fn new(n: usize, length: f64) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            k: wavenumbers(n, length),
            mask: dealias_mask(n),
            n,
        }
    }

    fn to_physical(&self, vh: &[Complex64]) -> Vec<f64> {
        let mut buf = vh.to_vec();
        self.inv.process(&mut buf);
        let s = 1.0 / self.n as f64;
        buf.iter().map(|c| c.re * s).collect()
    }

    fn to_spectral(&self, u: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = u.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fwd.process(&mut buf);
        buf
    }
}

/// Splits a periodic scalar operator into a diagonal linear symbol and a
/// nonlinear remainder evaluated pseudo-spectrally.
fn linear_symbol(op: &Operator, k: f64) -> Result<f64> {
    Ok(match *op {
        Operator::Linear { diffusion, reaction } => -diffusion * k * k + reaction,
        Operator::ReactionDiffusion { d1, .. } => -d1 * k * k,
        Operator::AllenCahn { g1, .. } => -g1 * k * k,
        Operator::KuramotoSivashinsky { beta, gamma, .. } => beta * k * k - gamma * k.powi(4),
        Operator::NavierStokes { .. } => return Err(Error::DomainError("2-D operator".into())),
    })
}

fn nonlinear(op: &Operator, sp: &Spectral1d, vh: &[Complex64]) -> Vec<Complex64> {
    let u = sp.to_physical(vh);
    let mut out = match *op {
        Operator::Linear { .. } => return vec![Complex64::new(0.0, 0.0); sp.n],
        Operator::ReactionDiffusion { d2, .. } => sp.to_spectral(&u.iter().map(|x| d2 * x * x).collect::<Vec<_>>()),
        Operator::AllenCahn { g2, .. } => sp.to_spectral(&u.iter().map(|x| g2 * (x - x * x * x)).collect::<Vec<_>>()),
        Operator::KuramotoSivashinsky { alpha, .. } => {
            // u u_x = (u^2)_x / 2
            let mut h = sp.to_spectral(&u.iter().map(|x| x * x).collect::<Vec<_>>());
            for (c, &k) in h.iter_mut().zip(&sp.k) {
                *c *= Complex64::new(0.0, -0.5 * alpha * k);
            }
            h
        }
        Operator::NavierStokes { .. } => unreachable!(),
    };
    for (c, &keep) in out.iter_mut().zip(&sp.mask) {
        if !keep {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    out
}

/// ETDRK4 coefficients for step `h` and diagonal symbol `l`, by contour averaging.
fn etdrk4_coefficients(h: f64, l: &[f64]) -> [Vec<f64>; 6] {
    const M: usize = 32;
    let roots: Vec<Complex64> = (1..=M)
        .map(|j| Complex64::from_polar(1.0, PI * (j as f64 - 0.5) / M as f64))
        .collect();
    let mut e = Vec::with_capacity(l.len());
    let mut e2 = Vec::with_capacity(l.len());
    let (mut q, mut f1, mut f2, mut f3) = (vec![], vec![], vec![], vec![]);
    for &li in l {
        let hl = h * li;
        e.push(hl.exp());
        e2.push((hl / 2.0).exp());
        let (mut sq, mut s1, mut s2, mut s3) = (Complex64::default(), Complex64::default(), Complex64::default(), Complex64::default());
        for r in &roots {
            let z = hl + r;
            let ez = z.exp();
            let z3 = z * z * z;
            sq += ((z / 2.0).exp() - 1.0) / z;
            s1 += (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3;
            s2 += (2.0 + z + ez * (z - 2.0)) / z3;
            s3 += (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3;
        }
        let m = M as f64;
        q.push(h * (sq / m).re);
        f1.push(h * (s1 / m).re);
        f2.push(h * (s2 / m).re);
        f3.push(h * (s3 / m).re);
    }
    [e, e2, q, f1, f2, f3]
}

/// Fourier pseudo-spectral solver with ETDRK4 stepping for periodic 1-D problems.
pub fn spectral_solve_1d(p: &PdeProblem, modes: usize, dt_ref: f64, n_t: usize) -> Result<ReferenceTrajectory> {
    check_1d(p)?;
    check_steps(dt_ref, n_t)?;
    if !p.is_periodic() {
        return Err(Error::DomainError(format!("{} is not periodic", p.name)));
    }
    if !modes.is_power_of_two() || modes < 8 {
        return Err(Error::DomainError(format!("mode count {modes} must be a power of two >= 8")));
    }
    let (a, b) = p.domain[0];
    let length = b - a;
    let sp = Spectral1d::new(modes, length);
    let tau = p.end_time / n_t as f64;
    let m = (tau / dt_ref).ceil().max(1.0) as usize;
    let h = tau / m as f64;
    let l: Vec<f64> = sp.k.iter().map(|&k| linear_symbol(&p.operator, k)).collect::<Result<_>>()?;
    let [e, e2, q, f1, f2, f3] = etdrk4_coefficients(h, &l);

    let xs: Vec<f64> = (0..modes).map(|j| a + j as f64 * length / modes as f64).collect();
    let u0: Vec<f64> = xs.iter().map(|&x| p.initial_value(&[x])[0]).collect();
    let mut v = sp.to_spectral(&u0);
    let times: Vec<f64> = (0..=n_t).map(|k| k as f64 * tau).collect();
    let mut out = ReferenceTrajectory::new(1, xs, times, 1);
    out.values.extend_from_slice(&u0);
    let op = p.operator;
    let n = modes;
    let mut a_ = vec![Complex64::default(); n];
    let mut b_ = vec![Complex64::default(); n];
    let mut c_ = vec![Complex64::default(); n];
    for step in 1..=n_t {
        for _ in 0..m {
            let nv = nonlinear(&op, &sp, &v);
            for i in 0..n {
                a_[i] = v[i] * e2[i] + nv[i] * q[i];
            }
            let na = nonlinear(&op, &sp, &a_);
            for i in 0..n {
                b_[i] = v[i] * e2[i] + na[i] * q[i];
            }
            let nb = nonlinear(&op, &sp, &b_);
            for i in 0..n {
                c_[i] = a_[i] * e2[i] + (nb[i] * 2.0 - nv[i]) * q[i];
            }
            let nc = nonlinear(&op, &sp, &c_);
            for i in 0..n {
                v[i] = v[i] * e[i] + nv[i] * f1[i] + (na[i] + nb[i]) * (2.0 * f2[i]) + nc[i] * f3[i];
            }
        }
        out.values.extend(sp.to_physical(&v));
        out.check_finite(step)?;
    }
    Ok(out)
}

/// 2-D FFT over a row-major `n x n` array, rows indexed by `y`.
struct Spectral2d {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    n: usize,
    k: Vec<f64>,
    mask: Vec<bool>,
}

impl Spectral2d {
    fn new(n: usize, length: f64) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            n,
            k: wavenumbers(n, length),
            mask: dealias_mask(n),
        }
    }

    fn transform(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        fft.process(data);
        let mut col = vec![Complex64::default(); n];
        for j in 0..n {
            for i in 0..n {
                col[i] = data[i * n + j];
            }
            fft.process(&mut col);
            for i in 0..n {
                data[i * n + j] = col[i];
            }
        }
    }

    fn to_spectral(&self, u: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = u.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.transform(&mut buf, &self.fwd);
        buf
    }

    fn to_physical(&self, vh: &[Complex64]) -> Vec<f64> {
        let mut buf = vh.to_vec();
        self.transform(&mut buf, &self.inv);
        let s = 1.0 / (self.n * self.n) as f64;
        buf.iter().map(|c| c.re * s).collect()
    }

    /// `(kx, ky)` of flat index `idx`.
    fn wave(&self, idx: usize) -> (f64, f64) {
        (self.k[idx % self.n], self.k[idx / self.n])
    }

    fn keep(&self, idx: usize) -> bool {
        self.mask[idx % self.n] && self.mask[idx / self.n]
    }

    /// Velocity `(u, v) = (psi_y, -psi_x)` with `-lap psi = w`, zero-mean gauge.
    fn velocity(&self, wh: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let mut uh = vec![Complex64::default(); wh.len()];
        let mut vh = vec![Complex64::default(); wh.len()];
        for idx in 0..wh.len() {
            let (kx, ky) = self.wave(idx);
            let k2 = kx * kx + ky * ky;
            if k2 == 0.0 {
                continue;
            }
            let psi = wh[idx] / k2;
            uh[idx] = psi * Complex64::new(0.0, ky);
            vh[idx] = psi * Complex64::new(0.0, -kx);
        }
        (uh, vh)
    }

    fn rhs(&self, wh: &[Complex64], re: f64) -> Vec<Complex64> {
        let (uh, vh) = self.velocity(wh);
        let mut wxh = wh.to_vec();
        let mut wyh = wh.to_vec();
        for idx in 0..wh.len() {
            let (kx, ky) = self.wave(idx);
            wxh[idx] *= Complex64::new(0.0, kx);
            wyh[idx] *= Complex64::new(0.0, ky);
        }
        let (u, v) = (self.to_physical(&uh), self.to_physical(&vh));
        let (wx, wy) = (self.to_physical(&wxh), self.to_physical(&wyh));
        let adv: Vec<f64> = (0..u.len()).map(|i| u[i] * wx[i] + v[i] * wy[i]).collect();
        let advh = self.to_spectral(&adv);
        (0..wh.len())
            .map(|idx| {
                let (kx, ky) = self.wave(idx);
                let nl = if self.keep(idx) { -advh[idx] } else { Complex64::default() };
                nl - wh[idx] * ((kx * kx + ky * ky) / re)
            })
            .collect()
    }
}

/// Vorticity-form pseudo-spectral solver on `[0, 2 pi]^2` with RK4 stepping.
///
/// Stores fields `(u, v, w)` on an `n x n` lattice, `x` varying fastest.
pub fn spectral_solve_ns2d(p: &PdeProblem, modes: usize, dt_ref: f64, n_t: usize) -> Result<ReferenceTrajectory> {
    check_steps(dt_ref, n_t)?;
    let Operator::NavierStokes { re } = p.operator else {
        return Err(Error::DomainError(format!("{} is not a 2-D flow", p.name)));
    };
    let length = p.length(0);
    if (p.length(1) - length).abs() > 1e-12 || !modes.is_power_of_two() || modes < 8 {
        return Err(Error::DomainError("flow solver needs a square box and a power-of-two grid".into()));
    }
    let n = modes;
    let sp = Spectral2d::new(n, length);
    let (x0, y0) = (p.domain[0].0, p.domain[1].0);
    let h = length / n as f64;
    let mut points = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            points.push(x0 + i as f64 * h);
            points.push(y0 + j as f64 * h);
        }
    }
    let w0: Vec<f64> = points.chunks_exact(2).map(|pt| p.initial_value(pt)[2]).collect();
    let mut wh = sp.to_spectral(&w0);
    for (idx, c) in wh.iter_mut().enumerate() {
        if !sp.keep(idx) {
            *c = Complex64::default();
        }
    }
    let tau = p.end_time / n_t as f64;
    let m = (tau / dt_ref).ceil().max(1.0) as usize;
    let dt = tau / m as f64;
    let times: Vec<f64> = (0..=n_t).map(|k| k as f64 * tau).collect();
    let mut out = ReferenceTrajectory::new(2, points, times, 3);
    let push = |out: &mut ReferenceTrajectory, wh: &[Complex64]| {
        let (uh, vh) = sp.velocity(wh);
        out.values.extend(sp.to_physical(&uh));
        out.values.extend(sp.to_physical(&vh));
        out.values.extend(sp.to_physical(wh));
    };
    push(&mut out, &wh);
    let len = wh.len();
    let mut tmp = vec![Complex64::default(); len];
    for step in 1..=n_t {
        for _ in 0..m {
            let k1 = sp.rhs(&wh, re);
            for i in 0..len {
                tmp[i] = wh[i] + k1[i] * (0.5 * dt);
            }
            let k2 = sp.rhs(&tmp, re);
            for i in 0..len {
                tmp[i] = wh[i] + k2[i] * (0.5 * dt);
            }
            let k3 = sp.rhs(&tmp, re);
            for i in 0..len {
                tmp[i] = wh[i] + k3[i] * dt;
            }
            let k4 = sp.rhs(&tmp, re);
            for i in 0..len {
                wh[i] += (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (dt / 6.0);
            }
        }
        push(&mut out, &wh);
        out.check_finite(step)?;
    }
    Ok(out)
}

/// Spectral divergence `u_x + v_y` of a sampled periodic velocity on an `n x n` lattice.
pub fn spectral_divergence(u: &[f64], v: &[f64], length: f64) -> Vec<f64> {
    let n = (u.len() as f64).sqrt().round() as usize;
    let sp = Spectral2d::new(n, length);
    let (uh, vh) = (sp.to_spectral(u), sp.to_spectral(v));
    let dh: Vec<Complex64> = (0..uh.len())
        .map(|idx| {
            let (kx, ky) = sp.wave(idx);
            uh[idx] * Complex64::new(0.0, kx) + vh[idx] * Complex64::new(0.0, ky)
        })
        .collect();
    sp.to_physical(&dh)
}

/// The resolution with every knob doubled.
pub fn refined(cfg: &OracleConfig) -> OracleConfig {
    OracleConfig {
        modes_1d: 2 * cfg.modes_1d,
        grid_fd: 2 * cfg.grid_fd,
        modes_2d: 2 * cfg.modes_2d,
        substeps: 2 * cfg.substeps,
    }
}

/// Relative change of the whole trajectory, all fields, when the resolution is doubled.
pub fn self_convergence(p: &PdeProblem, n_t: usize, cfg: &OracleConfig) -> Result<f64> {
    let coarse = reference(p, n_t, cfg)?;
    let fine = reference(p, n_t, &refined(cfg))?.subsample(2);
    if fine.points != coarse.points {
        return Err(Error::ShapeError { expected: coarse.points.len(), got: fine.points.len() });
    }
    let rows = |t: &ReferenceTrajectory| (0..t.fields).flat_map(|f| t.trajectory(f)).collect::<Vec<_>>();
    crate::metrics::relative_l2(&rows(&coarse), &rows(&fine))
}

/// Cache key for a problem, sampling and resolution.
pub fn cache_key(p: &PdeProblem, n_t: usize, cfg: &OracleConfig) -> String {
    let desc = serde_json::json!({ "problem": p, "n_t": n_t, "oracle": cfg, "format": 1 });
    hex::encode(Sha256::digest(desc.to_string().as_bytes()))
}

/// [`reference`] memoized under `dir`; writes go through a temporary file and rename.
pub fn cached_reference(dir: Option<&Path>, p: &PdeProblem, n_t: usize, cfg: &OracleConfig) -> Result<ReferenceTrajectory> {
    Ok(load_or_compute(dir, p, n_t, cfg)?.0)
}

/// Like [`cached_reference`], also telling whether the cache was hit.
pub fn load_or_compute(dir: Option<&Path>, p: &PdeProblem, n_t: usize, cfg: &OracleConfig) -> Result<(ReferenceTrajectory, bool)> {
    let Some(dir) = dir else {
        return Ok((reference(p, n_t, cfg)?, false));
    };
    let key = cache_key(p, n_t, cfg);
    let path: PathBuf = dir.join(format!("{}-{}.ref", p.name, &key[..16]));
    if let Ok(f) = fs::File::open(&path) {
        if let Ok((traj, stored)) = ReferenceTrajectory::read_from(&mut BufReader::new(f)) {
            if stored == key {
                return Ok((traj, true));
            }
        }
    }
    let traj = reference(p, n_t, cfg)?;
    fs::create_dir_all(dir)?;
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    {
        let mut w = std::io::BufWriter::new(fs::File::create(&tmp)?);
        traj.write_to(&mut w, &key)?;
        w.flush()?;
    }
    fs::rename(&tmp, &path)?;
    Ok((traj, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::relative_l2;
    use crate::pdes::{benchmark, InitialCondition};

    #[test]
    fn heat_analytic_examples() {
        assert!((heat_analytic(0.0, 0.37) - (PI * 0.37).sin()).abs() < 1e-15);
        assert!(heat_analytic(0.4, 1.0).abs() < 1e-15 && heat_analytic(0.4, -1.0).abs() < 1e-15);
        assert!((heat_analytic(0.1, 0.5) - 0.372708).abs() < 1e-6);
    }

    #[test]
    fn fd_heat_matches_analytic() {
        let p = benchmark("heat_test").unwrap();
        let fd = fd_solve_dirichlet(&p, 512, 1e-5, 10).unwrap();
        let exact = heat_reference(&p, 10, 512);
        let e = relative_l2(&fd.trajectory(0), &exact.trajectory(0)).unwrap();
        assert!(e <= 1e-7, "{e}");
    }

    #[test]
    fn fd_rd_pins_boundaries() {
        let p = benchmark("rd").unwrap();
        let fd = fd_solve_dirichlet(&p, 64, 1e-3, 5).unwrap();
        for n in 0..=5 {
            let s = fd.snapshot(n, 0);
            assert_eq!((s[0], s[64]), (0.0, 0.0));
        }
    }

    #[test]
    fn spectral_periodic_heat_matches_analytic() {
        let p = PdeProblem {
            name: "periodic_heat".into(),
            boundary: Boundary::Periodic,
            ..benchmark("heat_test").unwrap()
        };
        let s = spectral_solve_1d(&p, 64, 1e-3, 10).unwrap();
        for n in 0..=10 {
            let t = s.times[n];
            for (i, v) in s.snapshot(n, 0).iter().enumerate() {
                assert!((v - heat_analytic(t, s.point(i)[0])).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn taylor_green_decay() {
        let p = PdeProblem { initial: InitialCondition::TaylorGreen, end_time: 0.1, ..benchmark("ns2d").unwrap() };
        let s = spectral_solve_ns2d(&p, 16, 1e-3, 2).unwrap();
        let decay = (-2.0 * 0.1 / 100.0f64).exp();
        let w = s.snapshot(2, 2);
        for (i, v) in w.iter().enumerate() {
            let pt = s.point(i);
            let exact = 2.0 * pt[0].cos() * pt[1].cos() * decay;
            assert!((v - exact).abs() < 1e-6);
        }
    }

    #[test]
    fn flow_velocity_is_divergence_free_and_mean_vorticity_conserved() {
        let p = PdeProblem { end_time: 0.2, ..benchmark("ns2d").unwrap() };
        let s = spectral_solve_ns2d(&p, 32, 1e-2, 4).unwrap();
        for n in 0..=4 {
            let div = spectral_divergence(s.snapshot(n, 0), s.snapshot(n, 1), 2.0 * PI);
            assert!(crate::metrics::l2_norm(&div) <= 1e-10);
        }
        let mean = |n: usize| s.snapshot(n, 2).iter().sum::<f64>() / s.n_points() as f64;
        assert!((mean(4) - mean(0)).abs() <= 1e-12);
    }

    #[test]
    fn self_convergence_of_heat_and_ks() {
        let p = benchmark("heat_test").unwrap();
        let cfg = OracleConfig { grid_fd: 64, substeps: 20, ..OracleConfig::default() };
        assert!(self_convergence(&p, 4, &cfg).unwrap() < 1e-6);
        let p = benchmark("ks_regular").unwrap();
        let cfg = OracleConfig { modes_1d: 128, substeps: 400, ..OracleConfig::default() };
        assert!(self_convergence(&p, 10, &cfg).unwrap() < 1e-6);
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = benchmark("rd").unwrap();
        let cfg = OracleConfig { grid_fd: 32, substeps: 5, ..Default::default() };
        let a = cached_reference(Some(dir.path()), &p, 3, &cfg).unwrap();
        let b = cached_reference(Some(dir.path()), &p, 3, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn unsupported_combinations() {
        let rd = benchmark("rd").unwrap();
        assert!(spectral_solve_1d(&rd, 64, 1e-3, 2).is_err());
        let ac = benchmark("ac").unwrap();
        assert!(fd_solve_dirichlet(&ac, 64, 1e-3, 2).is_err());
        assert!(spectral_solve_1d(&ac, 100, 1e-3, 2).is_err());
    }
}

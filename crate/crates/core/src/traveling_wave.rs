//! One-dimensional traveling waves `c q' - I_e[q] + f(q) = h` and their correctors.

use faer::Mat;
use rayon::prelude::*;

use crate::bistable::Bistable;
use crate::error::{Error, Result};
use crate::kernels::{reduced_kernel, KernelSpec, Reduced1D};
use crate::linalg::DenseLu;
use crate::quad::{composite_gl, gauss_legendre, ls_slope, trapezoid_weights, Pchip};

/// Symmetric grid `r_k = A (rho^k - 1)`, `k = -n_half..=n_half`, graded toward large |r|.
#[derive(Debug, Clone)]
pub struct WaveGrid {
    pub nodes: Vec<f64>,
    pub r_max: f64,
    pub ratio: f64,
}

impl WaveGrid {
    pub fn geometric(n_half: usize, ratio: f64, r_max: f64) -> Result<Self> {
        if r_max < 50.0 {
            return Err(Error::InvalidGrid(format!("truncation radius {r_max} below 50")));
        }
        if !(ratio > 1.0) || n_half < 8 {
            return Err(Error::InvalidGrid("stretch ratio must exceed 1 and n_half >= 8".into()));
        }
        let a = r_max / (ratio.powi(n_half as i32) - 1.0);
        let half: Vec<f64> = (0..=n_half).map(|k| a * (ratio.powi(k as i32) - 1.0)).collect();
        let mut nodes: Vec<f64> = half[1..].iter().rev().map(|r| -r).collect();
        nodes.extend_from_slice(&half);
        let n = nodes.len();
        nodes[0] = -r_max;
        nodes[n - 1] = r_max;
        Ok(Self { nodes, r_max, ratio })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index of the node at r = 0.
    pub fn mid(&self) -> usize {
        self.nodes.len() / 2
    }

    pub fn weights(&self) -> Vec<f64> {
        trapezoid_weights(&self.nodes)
    }

    /// Grid with every node multiplied by `lambda > 0`.
    pub fn scaled(&self, lambda: f64) -> Self {
        Self { nodes: self.nodes.iter().map(|r| r * lambda).collect(), r_max: self.r_max * lambda, ratio: self.ratio }
    }
}

impl Default for WaveGrid {
    fn default() -> Self {
        Self::geometric(1024, 1.01, 200.0).expect("default grid is valid")
    }
}

/// Sparse linear form `sum coef_k q_{idx_k} + c_minus m_- + c_plus m_+`.
#[derive(Debug, Clone, Default)]
struct Stencil {
    terms: Vec<(usize, f64)>,
    c_minus: f64,
    c_plus: f64,
}

impl Stencil {
    fn apply(&self, q: &[f64], m_minus: f64, m_plus: f64) -> f64 {
        self.terms.iter().map(|(k, c)| c * q[*k]).sum::<f64>() + self.c_minus * m_minus + self.c_plus * m_plus
    }
}

/// Discretisation of `q -> I_e[q]` on a wave grid as `M q + m_- b_minus + m_+ b_plus`.
///
/// Between nodes q is piecewise linear plus a quadratic bubble built from nodal second
/// differences; a symmetric window around each node is Taylor-compensated; beyond the
/// truncation radius q follows `m_pm + k_pm |r|^{-alpha}` with `k_pm` fixed by continuity.
#[derive(Debug, Clone)]
pub struct ReducedOperator {
    pub grid: WaveGrid,
    pub kernel: Reduced1D,
    m: Mat<f64>,
    b_minus: Vec<f64>,
    b_plus: Vec<f64>,
    deriv: Vec<Stencil>,
}

/// Quadrature resolution of the operator assembly.
#[derive(Debug, Clone, Copy)]
pub struct AssemblyOptions {
    /// Gauss points per element for elements far from the evaluation node.
    pub far_points: usize,
    /// Elements closer than this many element lengths use exact moments.
    pub near_factor: f64,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self { far_points: 8, near_factor: 2.0 }
    }
}

/// Finite-difference weights for the `order`-th derivative at `x0` from nodes `xs` (Fornberg).
pub fn fd_weights(xs: &[f64], x0: f64, order: usize) -> Vec<f64> {
    let n = xs.len();
    let mut c = vec![vec![0.0; order + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|row| row[order]).collect()
}

/// Centred stencil of `order`-th derivative at node j: five points inside, three next to the ends.
fn centred_stencil(x: &[f64], j: usize, order: usize) -> Vec<(usize, f64)> {
    let n = x.len();
    let half = if j >= 2 && j + 2 < n { 2 } else { 1 };
    let idx: Vec<usize> = (j - half..=j + half).collect();
    let xs: Vec<f64> = idx.iter().map(|&k| x[k]).collect();
    idx.into_iter().zip(fd_weights(&xs, x[j], order)).collect()
}

/// Exact moments `int_a^b t^k |t|^{-1-alpha} dt`, k = 0, 1, 2, for an interval not containing 0.
fn moments(a: f64, b: f64, alpha: f64) -> [f64; 3] {
    let (lo, hi, sign) = if a > 0.0 { (a, b, 1.0) } else { (-b, -a, -1.0) };
    let m0 = (lo.powf(-alpha) - hi.powf(-alpha)) / alpha;
    let m1 = if (alpha - 1.0).abs() < 1e-14 {
        (hi / lo).ln()
    } else {
        (hi.powf(1.0 - alpha) - lo.powf(1.0 - alpha)) / (1.0 - alpha)
    };
    let m2 = (hi.powf(2.0 - alpha) - lo.powf(2.0 - alpha)) / (2.0 - alpha);
    [m0, sign * m1, m2]
}

/// `int_S^inf s^{-alpha} (s - r)^{-1-alpha} ds` with `S > max(r, 0)`.
fn tail_integral(r: f64, s: f64, alpha: f64) -> f64 {
    let l = s - r;
    let wmax = 40.0 / alpha;
    let (ws, ww) = composite_gl(0.0, wmax, 80, 8);
    let mut acc = 0.0;
    for (w, wt) in ws.iter().zip(&ww) {
        let ew = w.exp();
        acc += wt * l.powf(-alpha) * (-alpha * w).exp() * (r + l * ew).powf(-alpha);
    }
    acc
}

impl ReducedOperator {
    pub fn new(grid: &WaveGrid, kernel: &Reduced1D) -> Self {
        Self::with_options(grid, kernel, AssemblyOptions::default())
    }

    pub fn with_options(grid: &WaveGrid, kernel: &Reduced1D, opts: AssemblyOptions) -> Self {
        let deriv = derivative_stencils(grid, kernel.alpha());
        let (m, b_minus, b_plus) = match kernel {
            Reduced1D::Power { weight, alpha } => assemble_power(grid, *weight, *alpha, opts),
            Reduced1D::Marginal { radius, nodes, weighted } => assemble_marginal(grid, *radius, nodes, weighted),
        };
        Self { grid: grid.clone(), kernel: kernel.clone(), m, b_minus, b_plus, deriv }
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// `I_e[q]` at the nodes for far-field states `m_-`, `m_+`.
    pub fn apply(&self, q: &[f64], m_minus: f64, m_plus: f64) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut s = m_minus * self.b_minus[i] + m_plus * self.b_plus[i];
                for j in 0..n {
                    s += self.m[(i, j)] * q[j];
                }
                s
            })
            .collect()
    }

    /// Nodal derivative consistent with the tail ansatz.
    pub fn derivative(&self, q: &[f64], m_minus: f64, m_plus: f64) -> Vec<f64> {
        self.deriv.iter().map(|s| s.apply(q, m_minus, m_plus)).collect()
    }

    pub fn matrix(&self) -> &Mat<f64> {
        &self.m
    }
}

fn derivative_stencils(grid: &WaveGrid, alpha: Option<f64>) -> Vec<Stencil> {
    let x = &grid.nodes;
    let n = x.len();
    let r = grid.r_max;
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let st = if j == 0 {
            match alpha {
                Some(a) => Stencil { terms: vec![(0, a / r)], c_minus: -a / r, c_plus: 0.0 },
                None => Stencil::default(),
            }
        } else if j == n - 1 {
            match alpha {
                Some(a) => Stencil { terms: vec![(n - 1, -a / r)], c_minus: 0.0, c_plus: a / r },
                None => Stencil::default(),
            }
        } else {
            Stencil { terms: centred_stencil(x, j, 1), c_minus: 0.0, c_plus: 0.0 }
        };
        out.push(st);
    }
    out
}

/// Second-derivative stencils at the nodes; end nodes use the tail ansatz.
fn curvature_stencils(grid: &WaveGrid, alpha: f64) -> Vec<Stencil> {
    let x = &grid.nodes;
    let n = x.len();
    let r = grid.r_max;
    let tail = alpha * (alpha + 1.0) / (r * r);
    (0..n)
        .map(|j| {
            if j == 0 {
                Stencil { terms: vec![(0, tail)], c_minus: -tail, c_plus: 0.0 }
            } else if j == n - 1 {
                Stencil { terms: vec![(n - 1, tail)], c_minus: 0.0, c_plus: -tail }
            } else {
                Stencil { terms: centred_stencil(x, j, 2), c_minus: 0.0, c_plus: 0.0 }
            }
        })
        .collect()
}

struct Row {
    coef: Vec<f64>,
    b_minus: f64,
    b_plus: f64,
}

impl Row {
    fn add_stencil(&mut self, st: &Stencil, w: f64) {
        for (k, c) in &st.terms {
            self.coef[*k] += w * c;
        }
        self.b_minus += w * st.c_minus;
        self.b_plus += w * st.c_plus;
    }
}

fn assemble_power(grid: &WaveGrid, weight: f64, alpha: f64, opts: AssemblyOptions) -> (Mat<f64>, Vec<f64>, Vec<f64>) {
    let x = &grid.nodes;
    let n = x.len();
    let r_max = grid.r_max;
    let d2 = curvature_stencils(grid, alpha);
    let (gx, gw) = gauss_legendre(opts.far_points);
    let ra = r_max.powf(alpha);
    let rows: Vec<Row> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ri = x[i];
            let mut row = Row { coef: vec![0.0; n], b_minus: 0.0, b_plus: 0.0 };
            let hm = if i > 0 { ri - x[i - 1] } else { f64::INFINITY };
            let hp = if i + 1 < n { x[i + 1] - ri } else { f64::INFINITY };
            let delta = hm.min(hp);
            // Taylor window (r_i - delta, r_i + delta).
            row.add_stencil(&d2[i], delta.powf(2.0 - alpha) / (2.0 - alpha));
            let mut self_coef = 0.0;
            for j in 0..n - 1 {
                let (xa, xb) = (x[j], x[j + 1]);
                let h = xb - xa;
                // Part of the element outside the window.
                let mut segs: Vec<(f64, f64)> = Vec::with_capacity(2);
                let (wl, wr) = (ri - delta, ri + delta);
                if xa < wl {
                    segs.push((xa, xb.min(wl)));
                }
                if xb > wr {
                    segs.push((xa.max(wr), xb));
                }
                // Curvature of the bubble: mean of the nodal second differences.
                let half = 0.5;
                for (sa, sb) in segs {
                    if sb <= sa {
                        continue;
                    }
                    let dist = if sa > ri { sa - ri } else { ri - sb };
                    let (w0, w1, wb, wself);
                    if dist >= opts.near_factor * (sb - sa) {
                        let (c, hw) = (0.5 * (sa + sb), 0.5 * (sb - sa));
                        let (mut a0, mut a1, mut ab, mut am) = (0.0, 0.0, 0.0, 0.0);
                        for (t, w) in gx.iter().zip(&gw) {
                            let s = c + hw * t;
                            let k = w * hw * (s - ri).abs().powf(-1.0 - alpha);
                            a0 += k * (xb - s) / h;
                            a1 += k * (s - xa) / h;
                            ab += k * (s - xa) * (xb - s);
                            am += k;
                        }
                        w0 = a0;
                        w1 = a1;
                        wb = -0.5 * ab;
                        wself = am;
                    } else {
                        let mk = moments(sa - ri, sb - ri, alpha);
                        let tau = ri - xa;
                        w0 = (1.0 - tau / h) * mk[0] - mk[1] / h;
                        w1 = (tau / h) * mk[0] + mk[1] / h;
                        wb = -0.5 * (tau * (h - tau) * mk[0] + (h - 2.0 * tau) * mk[1] - mk[2]);
                        wself = mk[0];
                    }
                    row.coef[j] += w0;
                    row.coef[j + 1] += w1;
                    row.add_stencil(&d2[j], half * wb);
                    row.add_stencil(&d2[j + 1], half * wb);
                    self_coef -= wself;
                }
            }
            // Right tail beyond S.
            let s_right = r_max.max(ri + delta);
            let mass_r = (s_right - ri).powf(-alpha) / alpha;
            let t_r = tail_integral(ri, s_right, alpha) * ra;
            row.b_plus += mass_r - t_r;
            row.coef[n - 1] += t_r;
            self_coef -= mass_r;
            // Left tail below -S'.
            let s_left = r_max.max(-ri + delta);
            let mass_l = (s_left + ri).powf(-alpha) / alpha;
            let t_l = tail_integral(-ri, s_left, alpha) * ra;
            row.b_minus += mass_l - t_l;
            row.coef[0] += t_l;
            self_coef -= mass_l;
            row.coef[i] += self_coef;
            for v in row.coef.iter_mut() {
                *v *= weight;
            }
            row.b_minus *= weight;
            row.b_plus *= weight;
            row
        })
        .collect();
    let m = Mat::<f64>::from_fn(n, n, |i, j| rows[i].coef[j]);
    let bm = rows.iter().map(|r| r.b_minus).collect();
    let bp = rows.iter().map(|r| r.b_plus).collect();
    (m, bm, bp)
}

/// Cubic Lagrange interpolation weights at `t` from the four nodes around it.
fn lagrange4(x: &[f64], t: f64) -> Vec<(usize, f64)> {
    let n = x.len();
    let k = match x.binary_search_by(|v| v.total_cmp(&t)) {
        Ok(i) => return vec![(i, 1.0)],
        Err(i) => i,
    };
    let start = k.saturating_sub(2).min(n - 4);
    let idx: Vec<usize> = (start..start + 4).collect();
    idx.iter()
        .map(|&a| {
            let mut w = 1.0;
            for &b in &idx {
                if a != b {
                    w *= (t - x[b]) / (x[a] - x[b]);
                }
            }
            (a, w)
        })
        .collect()
}

fn assemble_marginal(grid: &WaveGrid, _radius: f64, nodes: &[f64], weighted: &[f64]) -> (Mat<f64>, Vec<f64>, Vec<f64>) {
    let x = &grid.nodes;
    let n = x.len();
    let (lo, hi) = (x[0], x[n - 1]);
    let rows: Vec<Row> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = Row { coef: vec![0.0; n], b_minus: 0.0, b_plus: 0.0 };
            for (s, w) in nodes.iter().zip(weighted) {
                for t in [x[i] + s, x[i] - s] {
                    if t >= hi {
                        row.b_plus += w;
                    } else if t <= lo {
                        row.b_minus += w;
                    } else {
                        for (k, c) in lagrange4(x, t) {
                            row.coef[k] += w * c;
                        }
                    }
                }
                row.coef[i] -= 2.0 * w;
            }
            row
        })
        .collect();
    let m = Mat::<f64>::from_fn(n, n, |i, j| rows[i].coef[j]);
    let bm = rows.iter().map(|r| r.b_minus).collect();
    let bp = rows.iter().map(|r| r.b_plus).collect();
    (m, bm, bp)
}

/// Discretised traveling wave.
#[derive(Debug, Clone)]
pub struct WaveProfile {
    pub grid: WaveGrid,
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub c: f64,
    pub e: Vec<f64>,
    pub h: f64,
    /// `(m_-(h), m_0(h), m_+(h))`.
    pub roots: [f64; 3],
    /// Tail amplitudes: `q ~ m_pm + k_pm |r|^{-alpha}` beyond the grid.
    pub k_minus: f64,
    pub k_plus: f64,
    pub kernel: Reduced1D,
    pub residual: f64,
    pub iterations: usize,
    interp: Pchip,
}

impl WaveProfile {
    fn build(
        op: &ReducedOperator,
        q: Vec<f64>,
        c: f64,
        e: &[f64],
        h: f64,
        roots: [f64; 3],
        residual: f64,
        iterations: usize,
    ) -> Self {
        let grid = op.grid.clone();
        let n = q.len();
        let qdot = op.derivative(&q, roots[0], roots[2]);
        let (k_minus, k_plus) = match op.kernel.alpha() {
            Some(a) => ((q[0] - roots[0]) * grid.r_max.powf(a), (q[n - 1] - roots[2]) * grid.r_max.powf(a)),
            None => (0.0, 0.0),
        };
        let interp = Pchip::new(grid.nodes.clone(), q.clone());
        Self {
            grid,
            q,
            qdot,
            c,
            e: e.to_vec(),
            h,
            roots,
            k_minus,
            k_plus,
            kernel: op.kernel.clone(),
            residual,
            iterations,
            interp,
        }
    }

    pub fn m_minus(&self) -> f64 {
        self.roots[0]
    }

    pub fn m_plus(&self) -> f64 {
        self.roots[2]
    }

    pub fn alpha(&self) -> Option<f64> {
        self.kernel.alpha()
    }

    pub fn a11(&self) -> Option<f64> {
        match self.kernel {
            Reduced1D::Power { weight, .. } => Some(weight),
            Reduced1D::Marginal { .. } => None,
        }
    }

    /// q(r) with monotone cubic interpolation inside the grid and the tail ansatz outside.
    pub fn eval(&self, r: f64) -> f64 {
        let rm = self.grid.r_max;
        if r > rm {
            match self.alpha() {
                Some(a) => self.roots[2] + self.k_plus * r.powf(-a),
                None => self.roots[2],
            }
        } else if r < -rm {
            match self.alpha() {
                Some(a) => self.roots[0] + self.k_minus * (-r).powf(-a),
                None => self.roots[0],
            }
        } else {
            self.interp.eval(r)
        }
    }

    /// q'(r), consistent with [`WaveProfile::eval`].
    pub fn deriv(&self, r: f64) -> f64 {
        let rm = self.grid.r_max;
        if r > rm {
            self.alpha().map_or(0.0, |a| -a * self.k_plus * r.powf(-a - 1.0))
        } else if r < -rm {
            self.alpha().map_or(0.0, |a| a * self.k_minus * (-r).powf(-a - 1.0))
        } else {
            self.interp.deriv(r)
        }
    }

    /// Least-squares slopes of `log|q - m_-|` and `log|q - m_+|` against `log|r|` over the
    /// outer decade `R/10 <= |r| <= R`.
    pub fn decay_slopes(&self) -> (f64, f64) {
        self.fit_slopes(|k| (self.q[k] - self.roots[0]).abs(), |k| (self.q[k] - self.roots[2]).abs())
    }

    /// Same fit for `|q'|`.
    pub fn derivative_decay_slopes(&self) -> (f64, f64) {
        self.fit_slopes(|k| self.qdot[k].abs(), |k| self.qdot[k].abs())
    }

    fn fit_slopes<F: Fn(usize) -> f64, G: Fn(usize) -> f64>(&self, left: F, right: G) -> (f64, f64) {
        let rm = self.grid.r_max;
        let (mut xl, mut yl, mut xr, mut yr) = (vec![], vec![], vec![], vec![]);
        for (k, &r) in self.grid.nodes.iter().enumerate() {
            if r.abs() >= 0.1 * rm {
                if r < 0.0 {
                    xl.push(r.abs().ln());
                    yl.push(left(k).ln());
                } else {
                    xr.push(r.ln());
                    yr.push(right(k).ln());
                }
            }
        }
        (ls_slope(&xl, &yl), ls_slope(&xr, &yr))
    }

    /// Wave-grid inner product.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.grid.weights().iter().zip(a.iter().zip(b)).map(|(w, (x, y))| w * x * y).sum()
    }

    /// Integral of q'^2 with the analytic tail beyond the grid.
    pub fn dot_l2(&self) -> f64 {
        let mut s = self.inner(&self.qdot, &self.qdot);
        if let Some(a) = self.alpha() {
            let rm = self.grid.r_max;
            let tail = a * a * rm.powf(-2.0 * a - 1.0) / (2.0 * a + 1.0);
            s += tail * (self.k_plus * self.k_plus + self.k_minus * self.k_minus);
        }
        s
    }

    /// Exact rescaling of a power-kernel wave to weight `a11` and direction `e`:
    /// `q_new(r) = q(r / lambda)` with `lambda = (a11 / a11_old)^{1/alpha}` on the stretched grid.
    pub fn rescaled(&self, a11: f64, e: &[f64]) -> Result<WaveProfile> {
        let (w0, alpha) = match self.kernel {
            Reduced1D::Power { weight, alpha } => (weight, alpha),
            Reduced1D::Marginal { .. } => return Err(Error::Invalid("rescaling needs a power kernel".into())),
        };
        if !(a11 > 0.0) {
            return Err(Error::Invalid(format!("reduced weight {a11} must be positive")));
        }
        let lambda = (a11 / w0).powf(1.0 / alpha);
        let grid = self.grid.scaled(lambda);
        let qdot: Vec<f64> = self.qdot.iter().map(|d| d / lambda).collect();
        let la = lambda.powf(alpha);
        let interp = Pchip::new(grid.nodes.clone(), self.q.clone());
        Ok(WaveProfile {
            grid,
            q: self.q.clone(),
            qdot,
            c: self.c * lambda,
            e: e.to_vec(),
            h: self.h,
            roots: self.roots,
            k_minus: self.k_minus * la,
            k_plus: self.k_plus * la,
            kernel: Reduced1D::power(a11, alpha),
            residual: self.residual,
            iterations: 0,
            interp,
        })
    }

    /// Rows `(r, q, qdot)`.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.grid.nodes.iter().zip(&self.q).zip(&self.qdot).map(|((r, q), d)| (*r, *q, *d))
    }
}

/// Newton controls for [`solve_wave`].
#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 60 }
    }
}

/// Residual `c q' - I[q] + f(q) - h` at the nodes.
pub fn wave_residual(op: &ReducedOperator, nl: &Bistable, q: &[f64], c: f64, h: f64, roots: [f64; 3]) -> Vec<f64> {
    let iq = op.apply(q, roots[0], roots[2]);
    let dq = op.derivative(q, roots[0], roots[2]);
    (0..q.len()).map(|i| c * dq[i] - iq[i] + nl.f(q[i]) - h).collect()
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn strictly_increasing(q: &[f64]) -> bool {
    q.windows(2).all(|w| w[1] > w[0])
}

/// Scaled arctan profile through `m_pm(h)` crossing `m_0(h)` at the origin.
pub fn arctan_guess(grid: &WaveGrid, roots: [f64; 3], width: f64) -> Vec<f64> {
    let mid = 0.5 * (roots[0] + roots[2]);
    let jump = roots[2] - roots[0];
    let shift = (std::f64::consts::PI * (roots[1] - mid) / jump).tan();
    grid.nodes
        .iter()
        .map(|r| mid + jump / std::f64::consts::PI * (r / width + shift).atan())
        .collect()
}

/// Damped Newton on `(q, c)` with the pinning row `q(0) = m_0(h)`.
pub fn solve_wave_with(
    op: &ReducedOperator,
    nl: &Bistable,
    e: &[f64],
    h: f64,
    init_q: Vec<f64>,
    init_c: f64,
    opts: NewtonOptions,
) -> Result<WaveProfile> {
    let roots = nl.roots(h)?;
    let n = op.len();
    let mid = op.grid.mid();
    let mut q = init_q;
    let mut c = init_c;
    let full_residual = |q: &[f64], c: f64| -> (Vec<f64>, f64) {
        let mut r = wave_residual(op, nl, q, c, h, roots);
        r.push(q[mid] - roots[1]);
        let s = sup(&r);
        (r, s)
    };
    let (mut res, mut norm) = full_residual(&q, c);
    let mut iters = 0;
    while norm > opts.tol {
        if iters >= opts.max_iter {
            return Err(Error::NewtonFailed { iterations: iters, residual: norm });
        }
        iters += 1;
        let dq = op.derivative(&q, roots[0], roots[2]);
        let jac = Mat::<f64>::from_fn(n + 1, n + 1, |i, j| {
            if i == n {
                if j == mid {
                    1.0
                } else {
                    0.0
                }
            } else if j == n {
                dq[i]
            } else {
                let mut v = -op.m[(i, j)];
                if i == j {
                    v += nl.fp(q[i]);
                }
                v
            }
        });
        // c * D enters through the derivative stencils (sparse).
        let mut jac = jac;
        for (i, st) in op.deriv.iter().enumerate() {
            for (k, w) in &st.terms {
                jac[(i, *k)] += c * w;
            }
        }
        let lu = DenseLu::new(&jac);
        let neg: Vec<f64> = res.iter().map(|v| -v).collect();
        let step = lu.solve(&neg);
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let qn: Vec<f64> = (0..n).map(|i| q[i] + lambda * step[i]).collect();
            let cn = c + lambda * step[n];
            if strictly_increasing(&qn) {
                let (rn, nn) = full_residual(&qn, cn);
                if nn.is_finite() && nn < (1.0 - 1e-4 * lambda) * norm {
                    q = qn;
                    c = cn;
                    res = rn;
                    norm = nn;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            if !strictly_increasing(&q) {
                return Err(Error::Monotonicity);
            }
            return Err(Error::NewtonFailed { iterations: iters, residual: norm });
        }
    }
    if !strictly_increasing(&q) {
        return Err(Error::Monotonicity);
    }
    Ok(WaveProfile::build(op, q, c, e, h, roots, norm, iters))
}

/// Width of the initial arctan guess, matched to the exact layer of the
/// `a11 = 1, alpha = 1`, sine case.
fn initial_width(kernel: &Reduced1D, nl: &Bistable, roots: [f64; 3]) -> f64 {
    let slope = nl.fp(roots[2]).min(nl.fp(roots[0])).max(1e-3);
    match kernel {
        Reduced1D::Power { weight, alpha } => (std::f64::consts::PI * weight / slope).powf(1.0 / alpha),
        Reduced1D::Marginal { radius, .. } => *radius,
    }
}

/// Traveling wave for kernel `spec` in direction `e` at tilt `h`.
pub fn solve_wave(
    spec: &KernelSpec,
    nl: &Bistable,
    e: &[f64],
    h: f64,
    grid: &WaveGrid,
    opts: NewtonOptions,
) -> Result<WaveProfile> {
    let kernel = reduced_kernel(spec, e)?;
    let op = ReducedOperator::new(grid, &kernel);
    solve_wave_on(&op, nl, e, h, opts)
}

/// As [`solve_wave`] with a prebuilt operator. Non-zero tilts are reached by continuation
/// from the standing wave when a direct start fails.
pub fn solve_wave_on(op: &ReducedOperator, nl: &Bistable, e: &[f64], h: f64, opts: NewtonOptions) -> Result<WaveProfile> {
    let roots = nl.roots(h)?;
    let width = initial_width(&op.kernel, nl, roots);
    let guess = arctan_guess(&op.grid, roots, width);
    match solve_wave_with(op, nl, e, h, guess, 0.0, opts) {
        Ok(p) => Ok(p),
        Err(err) if h != 0.0 => {
            let base = solve_wave_with(op, nl, e, 0.0, arctan_guess(&op.grid, nl.zeros, width), 0.0, opts)
                .map_err(|_| err)?;
            let mut prof = base;
            for k in 1..=8 {
                let hk = h * k as f64 / 8.0;
                prof = solve_wave_with(op, nl, e, hk, prof.q.clone(), prof.c, opts)?;
            }
            Ok(prof)
        }
        Err(err) => Err(err),
    }
}

/// Standing wave (h = 0); asserts that the speed vanishes to within `opts.tol`.
pub fn standing_wave(spec: &KernelSpec, nl: &Bistable, e: &[f64], grid: &WaveGrid, opts: NewtonOptions) -> Result<WaveProfile> {
    let p = solve_wave(spec, nl, e, 0.0, grid, opts)?;
    check_standing(p, opts)
}

pub fn standing_wave_on(op: &ReducedOperator, nl: &Bistable, e: &[f64], opts: NewtonOptions) -> Result<WaveProfile> {
    let p = solve_wave_on(op, nl, e, 0.0, opts)?;
    check_standing(p, opts)
}

fn check_standing(p: WaveProfile, opts: NewtonOptions) -> Result<WaveProfile> {
    if p.c.abs() >= opts.tol.max(1e-8) {
        return Err(Error::Invalid(format!("standing wave has nonzero speed {}", p.c)));
    }
    Ok(p)
}

/// `a - (<a, q'>/<q', q'>) q'` in the wave-grid inner product.
pub fn project_orthogonal(a: &[f64], profile: &WaveProfile) -> Vec<f64> {
    let w = profile.grid.weights();
    let qd = &profile.qdot;
    let num: f64 = (0..a.len()).map(|i| w[i] * a[i] * qd[i]).sum();
    let den: f64 = (0..a.len()).map(|i| w[i] * qd[i] * qd[i]).sum();
    (0..a.len()).map(|i| a[i] - num / den * qd[i]).collect()
}

/// Linearised operator `L Q = c Q' - I[Q] + f'(q) Q` with zero far field.
pub fn apply_linearized(op: &ReducedOperator, nl: &Bistable, profile: &WaveProfile, big_q: &[f64]) -> Vec<f64> {
    let iq = op.apply(big_q, 0.0, 0.0);
    let dq = op.derivative(big_q, 0.0, 0.0);
    (0..big_q.len()).map(|i| profile.c * dq[i] - iq[i] + nl.fp(profile.q[i]) * big_q[i]).collect()
}

#[derive(Debug, Clone)]
pub struct CorrectorProfile {
    pub grid: WaveGrid,
    pub big_q: Vec<f64>,
    /// Projected right-hand side.
    pub rhs: Vec<f64>,
    /// Lagrange multiplier of the orthogonality constraint.
    pub multiplier: f64,
    /// `sup |L Q - P a|`.
    pub residual: f64,
    /// `sup |P (L Q) - P a|`, the residual of the projected equation.
    pub projected_residual: f64,
    /// `<Q, q'>`.
    pub orthogonality: f64,
}

/// Solves `L Q = P a`, `<Q, q'> = 0` by a bordered system with one multiplier.
pub fn solve_corrector(op: &ReducedOperator, nl: &Bistable, profile: &WaveProfile, a: &[f64]) -> Result<CorrectorProfile> {
    let n = op.len();
    if a.len() != n || profile.q.len() != n {
        return Err(Error::Invalid("right-hand side does not match the wave grid".into()));
    }
    let w = profile.grid.weights();
    let qd = &profile.qdot;
    let rhs = project_orthogonal(a, profile);
    let mut mat = Mat::<f64>::from_fn(n + 1, n + 1, |i, j| {
        if i == n && j == n {
            0.0
        } else if i == n {
            w[j] * qd[j]
        } else if j == n {
            qd[i]
        } else {
            let mut v = -op.m[(i, j)];
            if i == j {
                v += nl.fp(profile.q[i]);
            }
            v
        }
    });
    for (i, st) in op.deriv.iter().enumerate() {
        for (k, c) in &st.terms {
            mat[(i, *k)] += profile.c * c;
        }
    }
    let lu = DenseLu::new(&mat);
    let mut b = rhs.clone();
    b.push(0.0);
    let mut sol = lu.solve(&b);
    // One step of iterative refinement.
    let mut r = vec![0.0; n + 1];
    for i in 0..=n {
        let mut s = 0.0;
        for j in 0..=n {
            s += mat[(i, j)] * sol[j];
        }
        r[i] = b[i] - s;
    }
    let corr = lu.solve(&r);
    for i in 0..=n {
        sol[i] += corr[i];
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("bordered corrector system is singular".into()));
    }
    let multiplier = sol[n];
    sol.truncate(n);
    let lq = apply_linearized(op, nl, profile, &sol);
    let diff: Vec<f64> = (0..n).map(|i| lq[i] - rhs[i]).collect();
    let residual = sup(&diff);
    let projected_residual = sup(&project_orthogonal(&diff, profile));
    let orthogonality = profile.inner(&sol, qd);
    Ok(CorrectorProfile {
        grid: profile.grid.clone(),
        big_q: sol,
        rhs,
        multiplier,
        residual,
        projected_residual,
        orthogonality,
    })
}

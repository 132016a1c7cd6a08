//! Level-set anisotropic mean curvature flow, the circle benchmark and the
//! fractional curvature of a front.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::coefficients::{CoefficientTable, DistanceProbe};
use crate::error::{Error, Result};
use crate::front::{contour, wrap, Polyline, Snapshot};
use crate::kernels::KernelSpec;
use crate::nonlocal_op::{Field, PeriodicGrid};
use crate::quad::tanh_sinh;

/// Stability constant of the explicit scheme.
pub const C_STAB: f64 = 0.25;

#[derive(Debug, Clone)]
pub struct LevelSetState {
    pub phi: Field,
    pub table: CoefficientTable,
    pub time: f64,
    pub steps: usize,
    pub reinit_every: usize,
    pub reinits: usize,
    /// Only nodes with `|phi| < band` cells are advanced (infinite: the whole grid).
    pub band: f64,
}

impl LevelSetState {
    /// Level set from a signed distance `d0` (negative inside).
    pub fn new<F: Fn(&[f64]) -> f64 + Sync>(grid: &PeriodicGrid, d0: F, table: CoefficientTable) -> Result<Self> {
        if grid.dim() != 2 {
            return Err(Error::InvalidGrid("level sets are 2D".into()));
        }
        if table.len() < 4 {
            return Err(Error::Invalid("coefficient table needs at least 4 directions".into()));
        }
        let phi = Field::from_fn(grid, d0);
        phi.check_finite()?;
        Ok(Self { phi, table, time: 0.0, steps: 0, reinit_every: 20, reinits: 0, band: 6.0 })
    }

    /// Largest stable step `C_STAB dx^2 / max(mu lambda_max(A))`.
    pub fn max_dt(&self) -> f64 {
        let speed = self
            .table
            .mu
            .iter()
            .zip(&self.table.a)
            .map(|(m, a)| m * a.eigenvalues().into_iter().fold(0.0, f64::max))
            .fold(0.0, f64::max);
        let h = self.phi.grid.min_spacing();
        C_STAB * h * h / speed.max(1e-300)
    }

    pub fn fronts(&self) -> Result<Vec<Polyline>> {
        contour(&self.phi, 0.0, 4.0)
    }

    /// One explicit step of `u_t = mu(n) (t.A(n).t) (t.D^2u.t)` with `t` the unit tangent.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        let bound = self.max_dt();
        if dt > bound * (1.0 + 1e-12) {
            return Err(Error::Cfl { dt, bound });
        }
        let g = &self.phi.grid;
        let (nx, ny) = (g.dims[0], g.dims[1]);
        let (hx, hy) = (g.spacing(0), g.spacing(1));
        let band = self.band * hx.max(hy);
        let phi = &self.phi.values;
        let table = &self.table;
        let rate: Vec<f64> = (0..nx * ny)
            .into_par_iter()
            .map(|k| {
                if phi[k].abs() >= band {
                    return 0.0;
                }
                let (i, j) = ((k / ny) as isize, (k % ny) as isize);
                let at = |a: isize, b: isize| phi[wrap(g, i + a, j + b)];
                let px = (at(1, 0) - at(-1, 0)) / (2.0 * hx);
                let py = (at(0, 1) - at(0, -1)) / (2.0 * hy);
                let norm = px.hypot(py);
                if norm < 1e-12 {
                    return 0.0;
                }
                let pxx = (at(1, 0) - 2.0 * phi[k] + at(-1, 0)) / (hx * hx);
                let pyy = (at(0, 1) - 2.0 * phi[k] + at(0, -1)) / (hy * hy);
                let pxy = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * hx * hy);
                let (n0, n1) = (px / norm, py / norm);
                let t = [-n1, n0];
                let (mu, a, _) = table.interpolate(n1.atan2(n0));
                let hess_tt = t[0] * t[0] * pxx + 2.0 * t[0] * t[1] * pxy + t[1] * t[1] * pyy;
                mu * a.quad(&t) * hess_tt
            })
            .collect();
        for (p, r) in self.phi.values.iter_mut().zip(&rate) {
            *p += dt * r;
        }
        self.phi.check_finite()?;
        self.time += dt;
        self.steps += 1;
        if self.reinit_every > 0 && self.steps % self.reinit_every == 0 {
            reinitialize(&mut self.phi, 2);
            self.reinits += 1;
        }
        Ok(())
    }
}

/// Advance to `t_end` with step `dt` (the last step is shortened), recording the
/// zero level every `record_every` time units plus the initial and final states.
pub fn evolve_amcm(state: &mut LevelSetState, t_end: f64, dt: f64, record_every: f64) -> Result<Vec<Snapshot>> {
    if !(t_end > state.time) {
        return Err(Error::Invalid(format!("end time {t_end} is not after the current time {}", state.time)));
    }
    let bound = state.max_dt();
    if !(dt > 0.0) || dt > bound * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, bound });
    }
    let mut out = vec![Snapshot { t: state.time, fronts: state.fronts()? }];
    let mut next = state.time + record_every;
    while state.time < t_end - 1e-14 * t_end.abs().max(1.0) {
        let h = dt.min(t_end - state.time);
        state.step(h)?;
        if state.time >= next - 1e-12 {
            out.push(Snapshot { t: state.time, fronts: state.fronts()? });
            next += record_every;
        }
    }
    if out.last().map_or(true, |s| (s.t - state.time).abs() > 1e-12) {
        out.push(Snapshot { t: state.time, fronts: state.fronts()? });
    }
    Ok(out)
}

/// Rings of nodes around the front whose distance is computed from the interface geometry.
pub const REINIT_RINGS: f64 = 3.0;

/// Replace `phi` by the signed distance to its zero level.
///
/// Zero crossings on grid lines come from cubic interpolation; nodes within
/// [`REINIT_RINGS`] cells take their distance to a least-squares parabola through
/// the nearby crossings. The rest of the grid follows from `rounds` fast-sweeping
/// rounds seeded by those nodes.
pub fn reinitialize(phi: &mut Field, rounds: usize) {
    let g = phi.grid.clone();
    let (nx, ny) = (g.dims[0], g.dims[1]);
    let (hx, hy) = (g.spacing(0), g.spacing(1));
    let v = phi.values.clone();
    let idx = |i: usize, j: usize| i * ny + j;
    let big = 1e30;
    let mut d = vec![big; nx * ny];
    let mut fixed = vec![false; nx * ny];
    let pts = crossings(&v, nx, ny, hx, hy);
    if pts.is_empty() {
        return;
    }
    let h = hx.max(hy);
    let cell = |p: &[f64; 2]| (((p[0] / hx).floor() as usize).min(nx - 1), ((p[1] / hy).floor() as usize).min(ny - 1));
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); nx * ny];
    let mut candidate = vec![false; nx * ny];
    let rings = REINIT_RINGS.ceil() as isize + 1;
    for (k, p) in pts.iter().enumerate() {
        let (i, j) = cell(p);
        buckets[idx(i, j)].push(k);
        for a in -rings..=rings {
            for b in -rings..=rings {
                let (ii, jj) = (i as isize + a, j as isize + b);
                if ii >= 0 && jj >= 0 && (ii as usize) < nx && (jj as usize) < ny {
                    candidate[idx(ii as usize, jj as usize)] = true;
                }
            }
        }
    }
    let reach = rings + 4;
    let near: Vec<(usize, f64)> = (0..nx * ny)
        .into_par_iter()
        .filter(|&k| candidate[k])
        .filter_map(|k| {
            let (i, j) = ((k / ny) as isize, (k % ny) as isize);
            let p = [i as f64 * hx, j as f64 * hy];
            let mut cand: Vec<usize> = Vec::new();
            for a in (i - reach).max(0)..=(i + reach).min(nx as isize - 1) {
                for b in (j - reach).max(0)..=(j + reach).min(ny as isize - 1) {
                    cand.extend_from_slice(&buckets[idx(a as usize, b as usize)]);
                }
            }
            let dist2 = |q: &[f64; 2]| (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
            let c0 = *cand.iter().min_by(|&&a, &&b| dist2(&pts[a]).partial_cmp(&dist2(&pts[b])).unwrap())?;
            if dist2(&pts[c0]).sqrt() > (REINIT_RINGS + 0.5) * h {
                return None;
            }
            let local: Vec<[f64; 2]> = cand
                .iter()
                .map(|&c| pts[c])
                .filter(|q| (q[0] - pts[c0][0]).hypot(q[1] - pts[c0][1]) <= 3.0 * h)
                .collect();
            Some((k, parabola_distance(p, pts[c0], &local)))
        })
        .collect();
    for (k, dist) in near {
        d[k] = dist;
        fixed[k] = true;
    }
    if !fixed.iter().any(|&f| f) {
        return;
    }
    let orders: [(bool, bool); 4] = [(true, true), (false, true), (false, false), (true, false)];
    for _ in 0..rounds {
        for &(fx, fy) in &orders {
            for ii in 0..nx {
                let i = if fx { ii } else { nx - 1 - ii };
                for jj in 0..ny {
                    let j = if fy { jj } else { ny - 1 - jj };
                    let k = idx(i, j);
                    if fixed[k] {
                        continue;
                    }
                    let a = match (i > 0, i + 1 < nx) {
                        (true, true) => d[idx(i - 1, j)].min(d[idx(i + 1, j)]),
                        (true, false) => d[idx(i - 1, j)],
                        (false, _) => d[idx(i + 1, j)],
                    };
                    let b = match (j > 0, j + 1 < ny) {
                        (true, true) => d[idx(i, j - 1)].min(d[idx(i, j + 1)]),
                        (true, false) => d[idx(i, j - 1)],
                        (false, _) => d[idx(i, j + 1)],
                    };
                    let cand = eikonal_update(a, b, hx, hy);
                    if cand < d[k] {
                        d[k] = cand;
                    }
                }
            }
        }
    }
    for (p, (dist, old)) in phi.values.iter_mut().zip(d.iter().zip(&v)) {
        *p = if *dist >= big { *old } else { dist * old.signum() };
    }
}

/// Zero crossings of `v` on grid lines, located with the cubic through four nodes
/// (linear next to the grid boundary).
fn crossings(v: &[f64], nx: usize, ny: usize, hx: f64, hy: f64) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    for axis in 0..2 {
        let (n_along, n_across) = if axis == 0 { (nx, ny) } else { (ny, nx) };
        for c in 0..n_across {
            let at = |s: usize| if axis == 0 { v[s * ny + c] } else { v[c * ny + s] };
            for s in 0..n_along - 1 {
                let (f0, f1) = (at(s), at(s + 1));
                if (f0 >= 0.0) == (f1 >= 0.0) {
                    continue;
                }
                let lin = f0 / (f0 - f1);
                let t = if s >= 1 && s + 2 < n_along { cubic_root([at(s - 1), f0, f1, at(s + 2)], lin) } else { lin };
                let along = (s as f64 + t) * if axis == 0 { hx } else { hy };
                let across = c as f64 * if axis == 0 { hy } else { hx };
                out.push(if axis == 0 { [along, across] } else { [across, along] });
            }
        }
    }
    out
}

/// Root in `[0, 1]` of the cubic through `f` at `-1, 0, 1, 2`, by safeguarded Newton.
fn cubic_root(f: [f64; 4], guess: f64) -> f64 {
    let p = |t: f64| {
        let l = [
            -t * (t - 1.0) * (t - 2.0) / 6.0,
            (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
            -(t + 1.0) * t * (t - 2.0) / 2.0,
            (t + 1.0) * t * (t - 1.0) / 6.0,
        ];
        f.iter().zip(l).map(|(a, b)| a * b).sum::<f64>()
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    let pos_lo = f[1] >= 0.0;
    let mut t = guess.clamp(0.0, 1.0);
    for _ in 0..60 {
        let val = p(t);
        if (val >= 0.0) == pos_lo {
            lo = t;
        } else {
            hi = t;
        }
        let dp = (p(t + 1e-7) - p(t - 1e-7)) / 2e-7;
        let mut next = if dp != 0.0 { t - val / dp } else { 0.5 * (lo + hi) };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() < 1e-14 {
            return next;
        }
        t = next;
    }
    t
}

/// Distance from `p` to the parabola fitted through `local` in the frame of its
/// principal direction at `c0`; the distance to `c0` when the fit is degenerate.
fn parabola_distance(p: [f64; 2], c0: [f64; 2], local: &[[f64; 2]]) -> f64 {
    let fallback = (p[0] - c0[0]).hypot(p[1] - c0[1]);
    if local.len() < 3 {
        return fallback;
    }
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for q in local {
        let (a, b) = (q[0] - c0[0], q[1] - c0[1]);
        sxx += a * a;
        sxy += a * b;
        syy += b * b;
    }
    let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (tx, ty) = (angle.cos(), angle.sin());
    let frame = |q: [f64; 2]| {
        let (a, b) = (q[0] - c0[0], q[1] - c0[1]);
        (a * tx + b * ty, -a * ty + b * tx)
    };
    // Normal equations for y = c0 + c1 x + c2 x^2.
    let mut m = [[0.0; 3]; 3];
    let mut r = [0.0; 3];
    for &q in local {
        let (x, y) = frame(q);
        let basis = [1.0, x, x * x];
        for a in 0..3 {
            r[a] += basis[a] * y;
            for b in 0..3 {
                m[a][b] += basis[a] * basis[b];
            }
        }
    }
    let Some(c) = solve3(m, r) else { return fallback };
    let (px, py) = frame(p);
    let y = |x: f64| c[0] + c[1] * x + c[2] * x * x;
    let dy = |x: f64| c[1] + 2.0 * c[2] * x;
    let mut x = px;
    for _ in 0..30 {
        let gval = (x - px) + (y(x) - py) * dy(x);
        let gd = 1.0 + dy(x) * dy(x) + (y(x) - py) * 2.0 * c[2];
        if gd <= 0.0 {
            break;
        }
        let step = gval / gd;
        x -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    let dist = (x - px).hypot(y(x) - py);
    if dist.is_finite() && dist <= fallback * (1.0 + 1e-9) + 1e-14 {
        dist
    } else {
        fallback
    }
}

fn solve3(mut m: [[f64; 3]; 3], mut r: [f64; 3]) -> Option<[f64; 3]> {
    let scale = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    for col in 0..3 {
        let piv = (col..3).max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())?;
        if m[piv][col].abs() <= 1e-12 * scale {
            return None;
        }
        m.swap(col, piv);
        r.swap(col, piv);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            r[row] -= f * r[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| m[row][k] * x[k]).sum();
        x[row] = (r[row] - s) / m[row][row];
    }
    Some(x)
}

/// Godunov update for `((u-a)/hx)^2 + ((u-b)/hy)^2 = 1` with upwind values `a`, `b`.
fn eikonal_update(a: f64, b: f64, hx: f64, hy: f64) -> f64 {
    if a + hx <= b {
        return a + hx;
    }
    if b + hy <= a {
        return b + hy;
    }
    let (wa, wb) = (1.0 / (hx * hx), 1.0 / (hy * hy));
    let qa = wa + wb;
    let qb = -2.0 * (a * wa + b * wb);
    let qc = a * a * wa + b * b * wb - 1.0;
    let disc = (qb * qb - 4.0 * qa * qc).max(0.0);
    (-qb + disc.sqrt()) / (2.0 * qa)
}

/// `R(t) = sqrt(R0^2 - 2 mu_abar t)`, `None` after extinction.
pub fn circle_radius(r0: f64, mu_abar: f64, t: f64) -> Option<f64> {
    let s = r0 * r0 - 2.0 * mu_abar * t;
    if s < -1e-14 * r0 * r0 {
        None
    } else {
        Some(s.max(0.0).sqrt())
    }
}

pub fn extinction_time(r0: f64, mu_abar: f64) -> f64 {
    r0 * r0 / (2.0 * mu_abar)
}

/// `samples + 1` uniform times on `[0, T]`, truncated at extinction.
pub fn circle_ode(r0: f64, mu_abar: f64, t_end: f64, samples: usize) -> Vec<(f64, f64)> {
    let n = samples.max(1);
    (0..=n)
        .map(|k| t_end * k as f64 / n as f64)
        .map_while(|t| circle_radius(r0, mu_abar, t).map(|r| (t, r)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractionalCurvature {
    /// Non-strict level set `{U >= U(x)}` against the closed half-space.
    pub kappa_star: f64,
    /// Strict level set `{U > U(x)}` against the open half-space.
    pub kappa_sub: f64,
    /// Contribution of `|z| > rho_max`, included in both values.
    pub tail: f64,
    /// Quadrature error estimate.
    pub error: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct CurvatureOptions {
    /// Truncation radius in units of the front's curvature radius.
    pub far: f64,
    /// Geometric ratio of the ray samples.
    pub ratio: f64,
    pub levels: usize,
}

impl Default for CurvatureOptions {
    fn default() -> Self {
        Self { far: 100.0, ratio: 1.05, levels: 7 }
    }
}

/// `kappa*[x, U] = int J(z) (1{U(x+z) >= U(x)} - 1{Dd.z >= 0}) dz` for alpha < 1 in 2D,
/// with `U` the probe's signed distance.
///
/// Integrated ray by ray: along `x + rho w` the bracket is constant between
/// crossings of the level set, so each piece is `int rho^{-1-alpha}` in closed
/// form. Beyond `rho_max` the bracket is taken as constant.
pub fn fractional_curvature(probe: &DistanceProbe, spec: &KernelSpec, opts: CurvatureOptions) -> Result<FractionalCurvature> {
    let k = spec.singular()?;
    if k.alpha >= 1.0 {
        return Err(Error::InvalidExponent { alpha: k.alpha, reason: "the fractional curvature is finite only for alpha < 1" });
    }
    if k.dim != 2 {
        return Err(Error::Invalid("fractional curvature is evaluated in 2D".into()));
    }
    let d0 = probe.eval(&probe.point);
    let scale = probe.smoothness_radius().min(1e6);
    if d0.abs() > 1e-8 * scale.max(1.0) {
        return Err(Error::NotOnFront(d0));
    }
    let alpha = k.alpha;
    let n = probe.e;
    let t = [-n[1], n[0]];
    let rho_max = opts.far * scale;
    let pw = |r: f64| r.powf(-alpha) / alpha;
    // Signed ray integral; `in_half` is the half-space indicator of the direction.
    let ray = |w: [f64; 2], cos_n: f64, strict: bool| -> f64 {
        let in_half = if strict { cos_n > 0.0 } else { cos_n >= 0.0 };
        let diff = |r: f64| {
            let z = [r * w[0], r * w[1]];
            r * cos_n + probe.second_order(&z)
        };
        let inside = |r: f64| if strict { diff(r) > 0.0 } else { diff(r) >= 0.0 };
        let curv = probe.hessian.quad(&w);
        let rq = if curv != 0.0 { -2.0 * cos_n / curv } else { f64::INFINITY };
        let mut samples = Vec::new();
        if rq > 0.0 && rq < 1e-3 * scale {
            samples.push(0.5 * rq);
            samples.push(2.0 * rq);
        }
        let mut r = 1e-3 * scale;
        while r < rho_max {
            samples.push(r);
            r *= opts.ratio;
        }
        samples.push(rho_max);
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut total = 0.0;
        let mut lo = 0.0;
        let mut state = in_half;
        let mut start = 0.0;
        for &s in &samples {
            let now = inside(s);
            if now != state {
                let mut a = if lo > 0.0 { lo } else { s * 1e-12 };
                let mut b = s;
                for _ in 0..200 {
                    let m = (a * b).sqrt();
                    if inside(m) == state {
                        a = m;
                    } else {
                        b = m;
                    }
                    if b - a <= 1e-14 * b {
                        break;
                    }
                }
                let cross = 0.5 * (a + b);
                if state != in_half {
                    total += pw(start) - pw(cross);
                }
                state = now;
                start = cross;
            }
            lo = s;
        }
        if state != in_half {
            // Constant bracket beyond the last crossing, out to infinity.
            total += if start > 0.0 { pw(start) } else { f64::INFINITY };
        }
        if in_half {
            -total
        } else {
            total
        }
    };
    let integrate = |strict: bool, levels: usize| -> (f64, f64, f64) {
        let mut value = 0.0;
        let mut tail = 0.0;
        let mut err = 0.0;
        for half in [0, 1] {
            let (a, b) = if half == 0 { (-PI / 2.0, PI / 2.0) } else { (PI / 2.0, 1.5 * PI) };
            let est = tanh_sinh(
                |s, da, db| {
                    let edge = da.min(db);
                    let c = if half == 0 { edge.sin() } else { -edge.sin() };
                    let sn = s.sin();
                    let w = [c * n[0] + sn * t[0], c * n[1] + sn * t[1]];
                    k.weight.eval(&w) * ray(w, c, strict)
                },
                a,
                b,
                levels,
            );
            let tail_est = tanh_sinh(
                |s, da, db| {
                    let edge = da.min(db);
                    let c = if half == 0 { edge.sin() } else { -edge.sin() };
                    let sn = s.sin();
                    let w = [c * n[0] + sn * t[0], c * n[1] + sn * t[1]];
                    k.weight.eval(&w) * ray_tail(probe, w, c, strict, rho_max)
                },
                a,
                b,
                levels.min(5),
            );
            value += est.value;
            err += est.error;
            tail += tail_est.value * pw(rho_max);
        }
        (value, err, tail)
    };
    let (ks, es, tail) = integrate(false, opts.levels);
    let (kw, ew, _) = integrate(true, opts.levels);
    Ok(FractionalCurvature { kappa_star: ks, kappa_sub: kw, tail, error: es.max(ew) })
}

/// Sign of the bracket at `rho_max` along `w` (0 when it vanishes there).
fn ray_tail(probe: &DistanceProbe, w: [f64; 2], cos_n: f64, strict: bool, rho_max: f64) -> f64 {
    let in_half = if strict { cos_n > 0.0 } else { cos_n >= 0.0 };
    let z = [rho_max * w[0], rho_max * w[1]];
    let diff = rho_max * cos_n + probe.second_order(&z);
    let inside = if strict { diff > 0.0 } else { diff >= 0.0 };
    match (inside, in_half) {
        (true, false) => 1.0,
        (false, true) => -1.0,
        _ => 0.0,
    }
}

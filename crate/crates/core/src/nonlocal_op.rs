//! The scaled operator `I_eps` on periodic grids: Fourier multiplier and direct quadrature.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::kernels::{symbol_constant, AngularWeight, KernelSpec, RegularKernel};
use crate::quad::composite_gl;

/// Periodic box with power-of-two sizes; row-major storage, last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicGrid {
    pub dims: Vec<usize>,
    pub lengths: Vec<f64>,
}

impl PeriodicGrid {
    pub fn new(dims: &[usize], lengths: &[f64]) -> Result<Self> {
        if dims.is_empty() || dims.len() > 3 || dims.len() != lengths.len() {
            return Err(Error::InvalidGrid("need 1 to 3 axes with one length each".into()));
        }
        for (&n, &l) in dims.iter().zip(lengths) {
            if n < 32 || !n.is_power_of_two() {
                return Err(Error::InvalidGrid(format!("axis size {n} must be a power of two >= 32")));
            }
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidGrid(format!("axis length {l} must be positive")));
            }
        }
        Ok(Self { dims: dims.to_vec(), lengths: lengths.to_vec() })
    }

    /// Square (or cubic) box `[0, length)^dim` with `n` points per axis.
    pub fn cube(dim: usize, n: usize, length: f64) -> Result<Self> {
        Self::new(&vec![n; dim], &vec![length; dim])
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.lengths[axis] / self.dims[axis] as f64
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).fold(f64::INFINITY, f64::min)
    }

    /// Multi-index of a flat index.
    pub fn index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = flat % self.dims[a];
            flat /= self.dims[a];
        }
        idx
    }

    /// Flat index of a multi-index taken modulo the grid.
    pub fn flat(&self, idx: &[isize]) -> usize {
        let mut f = 0;
        for a in 0..self.dim() {
            let n = self.dims[a] as isize;
            f = f * self.dims[a] + idx[a].rem_euclid(n) as usize;
        }
        f
    }

    /// Physical coordinates of a flat index.
    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.index(flat).iter().enumerate().map(|(a, &i)| i as f64 * self.spacing(a)).collect()
    }

    /// Angular wavenumber of FFT bin `k` on `axis`.
    pub fn wavenumber(&self, axis: usize, k: usize) -> f64 {
        let n = self.dims[axis];
        let signed = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        2.0 * PI * signed / self.lengths[axis]
    }

    /// Frequency vector of flat bin index `flat`.
    pub fn frequency(&self, flat: usize) -> Vec<f64> {
        self.index(flat).iter().enumerate().map(|(a, &k)| self.wavenumber(a, k)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: PeriodicGrid,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(grid: PeriodicGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!("{} values for a grid of {}", values.len(), grid.len())));
        }
        let f = Self { grid, values };
        f.check_finite()?;
        Ok(f)
    }

    pub fn constant(grid: &PeriodicGrid, v: f64) -> Self {
        Self { grid: grid.clone(), values: vec![v; grid.len()] }
    }

    pub fn from_fn<F: Fn(&[f64]) -> f64 + Sync>(grid: &PeriodicGrid, f: F) -> Self {
        let values = (0..grid.len()).into_par_iter().map(|k| f(&grid.point(k))).collect();
        Self { grid: grid.clone(), values }
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(k) => Err(Error::Invalid(format!("non-finite field value at index {k}"))),
            None => Ok(()),
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Discrete L2 norm with cell volume.
    pub fn l2(&self) -> f64 {
        let vol: f64 = (0..self.grid.dim()).map(|a| self.grid.spacing(a)).product();
        (self.values.iter().map(|v| v * v).sum::<f64>() * vol).sqrt()
    }

    /// `self - other`.
    pub fn sub(&self, other: &Field) -> Field {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Field { grid: self.grid.clone(), values }
    }

    /// Periodic shift by whole cells: `out(i) = self(i - shift)`.
    pub fn shifted(&self, shift: &[isize]) -> Field {
        let g = &self.grid;
        let values = (0..g.len())
            .map(|k| {
                let idx: Vec<isize> = g.index(k).iter().zip(shift).map(|(&i, &s)| i as isize - s).collect();
                self.values[g.flat(&idx)]
            })
            .collect();
        Field { grid: g.clone(), values }
    }
}

/// n-D complex FFT built from 1-D passes along each axis.
#[derive(Clone)]
pub struct FftNd {
    dims: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for FftNd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FftNd{:?}", self.dims)
    }
}

impl FftNd {
    pub fn new(dims: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        let forward = dims.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = dims.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        Self { dims: dims.to_vec(), forward, inverse }
    }

    pub fn forward(&self, data: &mut [Complex<f64>]) {
        self.run(data, &self.forward);
    }

    /// Inverse transform including the 1/n normalisation.
    pub fn inverse(&self, data: &mut [Complex<f64>]) {
        self.run(data, &self.inverse);
        let s = 1.0 / data.len() as f64;
        data.par_iter_mut().for_each(|v| *v *= s);
    }

    fn run(&self, data: &mut [Complex<f64>], plans: &[Arc<dyn Fft<f64>>]) {
        let d = self.dims.len();
        for a in 0..d {
            let n = self.dims[a];
            let stride: usize = self.dims[a + 1..].iter().product();
            let plan = &plans[a];
            if stride == 1 {
                data.par_chunks_mut(n).for_each(|line| plan.process(line));
                continue;
            }
            // Transpose each block so that lines along axis a are contiguous.
            let block = n * stride;
            let mut tmp = vec![Complex::new(0.0, 0.0); block];
            for blk in data.chunks_mut(block) {
                tmp.par_chunks_mut(n).enumerate().for_each(|(off, line)| {
                    for i in 0..n {
                        line[i] = blk[i * stride + off];
                    }
                    plan.process(line);
                });
                blk.par_chunks_mut(stride).enumerate().for_each(|(i, row)| {
                    for (off, v) in row.iter_mut().enumerate() {
                        *v = tmp[off * n + i];
                    }
                });
            }
        }
    }
}

/// `m_eps(xi) = integral of (cos(eps xi.z) - 1) J(z) dz`.
pub fn operator_symbol(spec: &KernelSpec, xi: &[f64], eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!("eps must be positive, got {eps}")));
    }
    if xi.len() != spec.dim() {
        return Err(Error::Invalid("frequency dimension does not match the kernel".into()));
    }
    let r = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r == 0.0 {
        return Ok(0.0);
    }
    match spec {
        KernelSpec::Singular(k) => {
            let w: Vec<f64> = xi.iter().map(|v| v / r).collect();
            Ok(-(eps * r).powf(k.alpha) * symbol_constant(spec, &w)?)
        }
        KernelSpec::Regular(k) => {
            let sx: Vec<f64> = xi.iter().map(|v| eps * v).collect();
            Ok(regular_rule(k).iter().map(|(z, w)| w * (cos_dot(&sx, z) - 1.0)).sum())
        }
    }
}

fn cos_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().cos()
}

/// Number of tabulated directions on the half circle for the planar multiplier.
pub const SYMBOL_DIRECTIONS: usize = 256;

/// Cached multiplier of `I_eps` on a grid.
#[derive(Debug, Clone)]
pub struct SpectralOperator {
    pub grid: PeriodicGrid,
    pub eps: f64,
    symbol: Vec<f64>,
    fft: FftNd,
}

impl SpectralOperator {
    pub fn new(spec: &KernelSpec, grid: &PeriodicGrid, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::Invalid(format!("eps must be positive, got {eps}")));
        }
        if spec.dim() != grid.dim() {
            return Err(Error::InvalidGrid(format!("kernel dimension {} on a {}-d grid", spec.dim(), grid.dim())));
        }
        let symbol = match spec {
            KernelSpec::Singular(k) => singular_symbol(spec, k.alpha, &k.weight, grid, eps)?,
            KernelSpec::Regular(k) => regular_symbol(k, grid, eps),
        };
        Ok(Self { grid: grid.clone(), eps, symbol, fft: FftNd::new(&grid.dims) })
    }

    /// Multiplier values in FFT bin order.
    pub fn symbol(&self) -> &[f64] {
        &self.symbol
    }

    pub fn fft(&self) -> &FftNd {
        &self.fft
    }

    pub fn apply(&self, u: &Field) -> Result<Field> {
        if u.grid != self.grid {
            return Err(Error::InvalidGrid("field grid differs from the operator grid".into()));
        }
        u.check_finite()?;
        let mut buf: Vec<Complex<f64>> = u.values.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fft.forward(&mut buf);
        buf.par_iter_mut().zip(self.symbol.par_iter()).for_each(|(b, m)| *b *= m);
        self.fft.inverse(&mut buf);
        Ok(Field { grid: self.grid.clone(), values: buf.iter().map(|c| c.re).collect() })
    }
}

/// Convenience wrapper building a one-off [`SpectralOperator`].
pub fn apply_operator_spectral(u: &Field, spec: &KernelSpec, eps: f64) -> Result<Field> {
    SpectralOperator::new(spec, &u.grid, eps)?.apply(u)
}

fn singular_symbol(spec: &KernelSpec, alpha: f64, weight: &AngularWeight, grid: &PeriodicGrid, eps: f64) -> Result<Vec<f64>> {
    let n = grid.len();
    let radial = |xi: &[f64]| xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    if matches!(weight, AngularWeight::Isotropic) {
        let mut e = vec![0.0; grid.dim()];
        e[0] = 1.0;
        let c = symbol_constant(spec, &e)?;
        return Ok((0..n).into_par_iter().map(|k| -c * (eps * radial(&grid.frequency(k))).powf(alpha)).collect());
    }
    match grid.dim() {
        2 => {
            // c_g has period pi in angle; tabulate on [0, pi] and interpolate linearly.
            let m = SYMBOL_DIRECTIONS;
            let table: Vec<f64> = (0..=m)
                .into_par_iter()
                .map(|j| {
                    let t = PI * j as f64 / m as f64;
                    symbol_constant(spec, &[t.cos(), t.sin()])
                })
                .collect::<Result<_>>()?;
            Ok((0..n)
                .into_par_iter()
                .map(|k| {
                    let xi = grid.frequency(k);
                    let r = radial(&xi);
                    if r == 0.0 {
                        return 0.0;
                    }
                    let t = xi[1].atan2(xi[0]).rem_euclid(PI) / PI * m as f64;
                    let j = (t.floor() as usize).min(m - 1);
                    let s = t - j as f64;
                    let c = (1.0 - s) * table[j] + s * table[j + 1];
                    -c * (eps * r).powf(alpha)
                })
                .collect())
        }
        _ => {
            // Direct evaluation per distinct direction; 3-d anisotropic runs are rare.
            (0..n)
                .into_par_iter()
                .map(|k| {
                    let xi = grid.frequency(k);
                    let r = radial(&xi);
                    if r == 0.0 {
                        return Ok(0.0);
                    }
                    let w: Vec<f64> = xi.iter().map(|v| v / r).collect();
                    Ok(-symbol_constant(spec, &w)? * (eps * r).powf(alpha))
                })
                .collect()
        }
    }
}

/// Product rule on the support of a regular kernel, weights times density; shared by
/// every frequency of the multiplier.
fn regular_rule(k: &RegularKernel) -> Vec<(Vec<f64>, f64)> {
    let (rs, rw) = composite_gl(0.0, k.radius, 8, 8);
    let mut pts: Vec<(Vec<f64>, f64)> = Vec::new();
    match k.dim {
        2 => {
            let nt = 128;
            for j in 0..nt {
                let t = 2.0 * PI * (j as f64 + 0.5) / nt as f64;
                for (r, w) in rs.iter().zip(&rw) {
                    let z = vec![r * t.cos(), r * t.sin()];
                    let jz = (k.density)(&z);
                    pts.push((z, jz * r * w * 2.0 * PI / nt as f64));
                }
            }
        }
        _ => {
            let (cs, cw) = composite_gl(-1.0, 1.0, 4, 8);
            let np = 64;
            for (c, wc) in cs.iter().zip(&cw) {
                let sn = (1.0 - c * c).sqrt();
                for j in 0..np {
                    let p = 2.0 * PI * (j as f64 + 0.5) / np as f64;
                    for (r, w) in rs.iter().zip(&rw) {
                        let z = vec![r * sn * p.cos(), r * sn * p.sin(), r * c];
                        let jz = (k.density)(&z);
                        pts.push((z, jz * r * r * w * wc * 2.0 * PI / np as f64));
                    }
                }
            }
        }
    }
    pts.retain(|(_, w)| *w != 0.0);
    pts
}

fn regular_symbol(k: &RegularKernel, grid: &PeriodicGrid, eps: f64) -> Vec<f64> {
    let pts = regular_rule(k);
    (0..grid.len())
        .into_par_iter()
        .map(|f| {
            let xi: Vec<f64> = grid.frequency(f).iter().map(|v| eps * v).collect();
            pts.iter().map(|(z, w)| w * (cos_dot(&xi, z) - 1.0)).sum()
        })
        .collect()
}

/// Window of the moment correction: `exp(-(r/rho)^8)`, flat to eighth order at 0.
fn window(r: f64, rho: f64) -> f64 {
    (-(r / rho).powi(8)).exp()
}

/// Number of periodic image shells summed explicitly around the base cell.
const IMAGE_SHELLS: isize = 16;

/// Direct evaluation of `I_eps u` on a planar grid, used as an oracle for the spectral path.
///
/// A punctured lattice sum of `J_eps(y) (u(x+y) - u(x))` over the base cell and
/// `IMAGE_SHELLS` periodic images, plus the mass of `J_eps` outside them acting on
/// `mean(u) - u(x)`. Near the origin the lattice misrepresents the singular kernel; this is
/// corrected by subtracting the lattice-minus-integral second and fourth moments of
/// `w(|y|) J_eps(y)` (window radius `cutoff`) contracted with centred-difference derivatives,
/// which makes the sum exact on quartic u.
pub fn apply_operator_direct(u: &Field, spec: &KernelSpec, eps: f64, cutoff: f64) -> Result<Field> {
    let g = &u.grid;
    if g.dim() != 2 || spec.dim() != 2 {
        return Err(Error::InvalidGrid("direct operator implemented for planar grids only".into()));
    }
    let h = g.spacing(0).max(g.spacing(1));
    if !(cutoff >= h) {
        return Err(Error::Invalid(format!("cutoff {cutoff} below the grid spacing {h}")));
    }
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!("eps must be positive, got {eps}")));
    }
    u.check_finite()?;
    let jeps = |y: &[f64]| -> f64 {
        match spec {
            KernelSpec::Singular(k) => eps.powf(k.alpha) * spec.eval(y).unwrap_or(0.0),
            KernelSpec::Regular(k) => (k.density)(&[y[0] / eps, y[1] / eps]) / (eps * eps),
        }
    };
    let (nx, ny) = (g.dims[0], g.dims[1]);
    let (lx, ly) = (g.lengths[0], g.lengths[1]);
    let (hx, hy) = (g.spacing(0), g.spacing(1));
    let (e2, e4) = moment_defects(spec, eps, cutoff, hx, hy, &jeps);

    // Periodised kernel on the base cell, offsets in -n/2..n/2.
    let support = match spec {
        KernelSpec::Singular(_) => f64::INFINITY,
        KernelSpec::Regular(k) => eps * k.radius,
    };
    let shells = if support.is_finite() { (support / lx.min(ly)).ceil() as isize + 1 } else { IMAGE_SHELLS };
    let kper: Vec<f64> = (0..nx * ny)
        .into_par_iter()
        .map(|f| {
            let (i, j) = (f / ny, f % ny);
            let ox = if i < nx / 2 { i as f64 } else { i as f64 - nx as f64 } * hx;
            let oy = if j < ny / 2 { j as f64 } else { j as f64 - ny as f64 } * hy;
            let mut s = 0.0;
            for a in -shells..=shells {
                for b in -shells..=shells {
                    let y = [ox + a as f64 * lx, oy + b as f64 * ly];
                    let r = (y[0] * y[0] + y[1] * y[1]).sqrt();
                    if r == 0.0 || r >= support {
                        continue;
                    }
                    s += jeps(&y);
                }
            }
            s * hx * hy
        })
        .collect();
    let tail = match spec {
        KernelSpec::Singular(k) => box_tail_mass(&k.weight, k.alpha, eps, (shells as f64 + 0.5) * lx, (shells as f64 + 0.5) * ly),
        KernelSpec::Regular(_) => 0.0,
    };
    let mean = u.mean();
    let nz: Vec<(isize, isize, f64)> = kper
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(f, v)| {
            let (i, j) = (f / ny, f % ny);
            let di = if i < nx / 2 { i as isize } else { i as isize - nx as isize };
            let dj = if j < ny / 2 { j as isize } else { j as isize - ny as isize };
            (di, dj, *v)
        })
        .collect();

    let vals = &u.values;
    let at = |i: isize, j: isize| vals[(i.rem_euclid(nx as isize) as usize) * ny + j.rem_euclid(ny as isize) as usize];
    let out: Vec<f64> = (0..nx * ny)
        .into_par_iter()
        .map(|f| {
            let (i, j) = ((f / ny) as isize, (f % ny) as isize);
            let u0 = at(i, j);
            let mut sum = 0.0;
            for &(di, dj, w) in &nz {
                sum += w * (at(i + di, j + dj) - u0);
            }
            let d = derivatives(&at, i, j, hx, hy);
            let defect = 0.5 * (e2[0] * d.xx + 2.0 * e2[1] * d.xy + e2[2] * d.yy)
                + (e4[0] * d.xxxx + 4.0 * e4[1] * d.xxxy + 6.0 * e4[2] * d.xxyy + 4.0 * e4[3] * d.xyyy + e4[4] * d.yyyy)
                    / 24.0;
            sum - defect + tail * (mean - u0)
        })
        .collect();
    Ok(Field { grid: g.clone(), values: out })
}

struct Derivs {
    xx: f64,
    xy: f64,
    yy: f64,
    xxxx: f64,
    xxxy: f64,
    xxyy: f64,
    xyyy: f64,
    yyyy: f64,
}

/// Centred differences: fourth order for second derivatives, second order for fourth.
fn derivatives<F: Fn(isize, isize) -> f64>(u: &F, i: isize, j: isize, hx: f64, hy: f64) -> Derivs {
    let d2 = [-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0];
    let d1 = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
    let d4 = [1.0, -4.0, 6.0, -4.0, 1.0];
    let d3 = [-0.5, 1.0, 0.0, -1.0, 0.5];
    let d2lo = [0.0, 1.0, -2.0, 1.0, 0.0];
    let d1lo = [0.0, -0.5, 0.0, 0.5, 0.0];
    let apply = |wx: &[f64; 5], wy: &[f64; 5]| {
        let mut s = 0.0;
        for a in 0..5 {
            if wx[a] == 0.0 {
                continue;
            }
            for b in 0..5 {
                if wy[b] != 0.0 {
                    s += wx[a] * wy[b] * u(i + a as isize - 2, j + b as isize - 2);
                }
            }
        }
        s
    };
    let id = [0.0, 0.0, 1.0, 0.0, 0.0];
    Derivs {
        xx: apply(&d2, &id) / (hx * hx),
        xy: apply(&d1, &d1) / (hx * hy),
        yy: apply(&id, &d2) / (hy * hy),
        xxxx: apply(&d4, &id) / hx.powi(4),
        xxxy: apply(&d3, &d1lo) / (hx.powi(3) * hy),
        xxyy: apply(&d2lo, &d2lo) / (hx * hx * hy * hy),
        xyyy: apply(&d1lo, &d3) / (hx * hy.powi(3)),
        yyyy: apply(&id, &d4) / hy.powi(4),
    }
}

/// Lattice sum minus integral of `w(|y|) J_eps(y) y^{(x)k}`, k = 2 (`[xx, xy, yy]`) and
/// k = 4 (`[xxxx, xxxy, xxyy, xyyy, yyyy]`), with the window `w` of radius `rho`.
fn moment_defects<F: Fn(&[f64]) -> f64>(spec: &KernelSpec, eps: f64, rho: f64, hx: f64, hy: f64, jeps: &F) -> ([f64; 3], [f64; 5]) {
    let mut m2 = [0.0; 3];
    let mut m4 = [0.0; 5];
    let reach = match spec {
        KernelSpec::Singular(_) => 3.0 * rho,
        KernelSpec::Regular(k) => (3.0 * rho).min(eps * k.radius),
    };
    let (ix, iy) = ((reach / hx).ceil() as isize, (reach / hy).ceil() as isize);
    for i in -ix..=ix {
        for j in -iy..=iy {
            let y = [i as f64 * hx, j as f64 * hy];
            let r = (y[0] * y[0] + y[1] * y[1]).sqrt();
            if r == 0.0 || r > reach {
                continue;
            }
            let w = window(r, rho) * jeps(&y) * hx * hy;
            m2[0] += w * y[0] * y[0];
            m2[1] += w * y[0] * y[1];
            m2[2] += w * y[1] * y[1];
            for (p, m) in m4.iter_mut().enumerate() {
                *m += w * y[0].powi(4 - p as i32) * y[1].powi(p as i32);
            }
        }
    }
    let nt = 1024;
    let mut sub = |c: f64, s: f64, a2: f64, a4: f64| {
        m2[0] -= a2 * c * c;
        m2[1] -= a2 * c * s;
        m2[2] -= a2 * s * s;
        for (p, m) in m4.iter_mut().enumerate() {
            *m -= a4 * c.powi(4 - p as i32) * s.powi(p as i32);
        }
    };
    match spec {
        KernelSpec::Singular(k) => {
            // Radial parts in closed form: int_0^inf w(r) r^{p-alpha} dr = rho^{q} Gamma(q/8)/8, q = p+1-alpha.
            let radial = |p: f64| {
                let q = p + 1.0 - k.alpha;
                rho.powf(q) * statrs::function::gamma::gamma(q / 8.0) / 8.0
            };
            let (r2, r4) = (radial(1.0), radial(3.0));
            let scale = eps.powf(k.alpha) * 2.0 * PI / nt as f64;
            for j in 0..nt {
                let t = 2.0 * PI * (j as f64 + 0.5) / nt as f64;
                let (c, s) = (t.cos(), t.sin());
                let gw = k.weight.eval(&[c, s]) * scale;
                sub(c, s, gw * r2, gw * r4);
            }
        }
        KernelSpec::Regular(k) => {
            let rmax = eps * k.radius;
            let (rs, rw) = composite_gl(0.0, rmax, 32, 8);
            let nt = 256;
            for j in 0..nt {
                let t = 2.0 * PI * (j as f64 + 0.5) / nt as f64;
                let (c, s) = (t.cos(), t.sin());
                for (r, w) in rs.iter().zip(&rw) {
                    let jv = (k.density)(&[r * c / eps, r * s / eps]) / (eps * eps);
                    let base = jv * window(*r, rho) * r * w * 2.0 * PI / nt as f64;
                    sub(c, s, base * r * r, base * r.powi(4));
                }
            }
        }
    }
    (m2, m4)
}

/// Mass of `eps^alpha g(z/|z|)|z|^{-2-alpha}` outside the box `[-bx, bx] x [-by, by]`.
fn box_tail_mass(weight: &AngularWeight, alpha: f64, eps: f64, bx: f64, by: f64) -> f64 {
    let nt = 4096;
    let mut s = 0.0;
    for j in 0..nt {
        let t = 2.0 * PI * (j as f64 + 0.5) / nt as f64;
        let (c, sn) = (t.cos(), t.sin());
        let rho = (bx / c.abs()).min(by / sn.abs());
        s += weight.eval(&[c, sn]) * rho.powf(-alpha) / alpha;
    }
    eps.powf(alpha) * s * 2.0 * PI / nt as f64
}

//! Interaction potentials J and their direction-reduced quantities.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{frame_from, Tensor};
use crate::quad::{composite_gl, tanh_sinh};

pub type SphereFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Angular factor g of a singular kernel, evaluated on unit vectors.
#[derive(Clone)]
pub enum AngularWeight {
    Isotropic,
    /// `1 + beta * (2 (z.v)^2 - 1)` with `v = (cos theta0, sin theta0, 0)`;
    /// in the plane this is `1 + beta cos(2(theta - theta0))`.
    Cos2 { beta: f64, theta0: f64 },
    Custom(SphereFn),
}

impl AngularWeight {
    pub fn eval(&self, w: &[f64]) -> f64 {
        match self {
            AngularWeight::Isotropic => 1.0,
            AngularWeight::Cos2 { beta, theta0 } => {
                let p = w[0] * theta0.cos() + w[1] * theta0.sin();
                1.0 + beta * (2.0 * p * p - 1.0)
            }
            AngularWeight::Custom(g) => g(w),
        }
    }
}

impl fmt::Debug for AngularWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AngularWeight::Isotropic => write!(f, "Isotropic"),
            AngularWeight::Cos2 { beta, theta0 } => write!(f, "Cos2(beta={beta}, theta0={theta0})"),
            AngularWeight::Custom(_) => write!(f, "Custom"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SingularKernel {
    pub dim: usize,
    pub alpha: f64,
    pub weight: AngularWeight,
    /// Least constant with `J(z) <= c_j |z|^{-N-alpha}` (sampled maximum of g).
    pub c_j: f64,
}

#[derive(Clone)]
pub struct RegularKernel {
    pub dim: usize,
    pub radius: f64,
    pub density: SphereFn,
    pub l1_norm: f64,
    pub label: String,
}

impl fmt::Debug for RegularKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RegularKernel({}, dim={}, radius={})", self.label, self.dim, self.radius)
    }
}

#[derive(Clone, Debug)]
pub enum KernelSpec {
    Singular(SingularKernel),
    Regular(RegularKernel),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    Singular,
    Regular,
}

/// Fixed validation mesh on the unit sphere: 1024 points.
pub fn sphere_mesh(dim: usize) -> Vec<Vec<f64>> {
    let n = 1024;
    match dim {
        2 => (0..n)
            .map(|k| {
                let t = 2.0 * PI * (k as f64 + 0.5) / n as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        _ => {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let t = golden * k as f64;
                    vec![r * t.cos(), r * t.sin(), z]
                })
                .collect()
        }
    }
}

fn norm(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl SingularKernel {
    pub fn new(dim: usize, alpha: f64, weight: AngularWeight) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::InvalidExponent { alpha, reason: "alpha must lie in (0,2)" });
        }
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidKernel(format!("dimension {dim} unsupported (2 or 3)")));
        }
        let mut c_j: f64 = 0.0;
        for w in sphere_mesh(dim) {
            let g = weight.eval(&w);
            let neg: Vec<f64> = w.iter().map(|v| -v).collect();
            let gm = weight.eval(&neg);
            if !(g > 0.0) || !g.is_finite() {
                return Err(Error::InvalidKernel(format!("angular weight not positive at {w:?}: {g}")));
            }
            if (g - gm).abs() > 1e-12 * g.abs().max(1.0) {
                return Err(Error::InvalidKernel(format!("angular weight not even at {w:?}")));
            }
            c_j = c_j.max(g);
        }
        Ok(Self { dim, alpha, weight, c_j })
    }

    pub fn isotropic(dim: usize, alpha: f64) -> Result<Self> {
        Self::new(dim, alpha, AngularWeight::Isotropic)
    }
}

impl RegularKernel {
    /// Validates evenness, sign and support on sample points and integrates the L1 norm.
    pub fn new(dim: usize, radius: f64, density: SphereFn, label: &str) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidKernel(format!("dimension {dim} unsupported (2 or 3)")));
        }
        if !(radius > 0.0) {
            return Err(Error::InvalidKernel("support radius must be positive".into()));
        }
        for w in sphere_mesh(dim).iter().step_by(8) {
            for k in 1..=40 {
                let r = radius * k as f64 / 20.0;
                let z: Vec<f64> = w.iter().map(|v| v * r).collect();
                let zm: Vec<f64> = z.iter().map(|v| -v).collect();
                let a = density(&z);
                let b = density(&zm);
                if !(a >= 0.0) || !a.is_finite() {
                    return Err(Error::InvalidKernel(format!("density negative or non-finite at {z:?}")));
                }
                if (a - b).abs() > 1e-12 * a.abs().max(1e-300) {
                    return Err(Error::InvalidKernel(format!("density not even at {z:?}")));
                }
                if r > radius * (1.0 + 1e-12) && a != 0.0 {
                    return Err(Error::InvalidKernel(format!("density nonzero outside radius at {z:?}")));
                }
            }
        }
        let mut k = Self { dim, radius, density, l1_norm: 0.0, label: label.to_string() };
        let l1 = k.radial_integral(|_, _| 1.0);
        if !(l1.is_finite() && l1 > 0.0) {
            return Err(Error::InvalidKernel("density has zero or infinite mass".into()));
        }
        k.l1_norm = l1;
        Ok(k)
    }

    /// Smooth bump `exp(1 - 1/(1 - |z|^2/radius^2))` supported in the ball, rescaled to `mass`.
    pub fn bump(dim: usize, radius: f64, mass: f64) -> Result<Self> {
        if !(mass > 0.0) {
            return Err(Error::InvalidKernel("bump mass must be positive".into()));
        }
        let r2 = radius * radius;
        let shape = move |z: &[f64]| {
            let s = z.iter().map(|v| v * v).sum::<f64>() / r2;
            if s < 1.0 {
                (1.0 - 1.0 / (1.0 - s)).exp()
            } else {
                0.0
            }
        };
        let unit = Self::new(dim, radius, Arc::new(shape), "bump")?;
        let scale = mass / unit.l1_norm;
        let density: SphereFn = Arc::new(move |z: &[f64]| scale * shape(z));
        Self::new(dim, radius, density, "bump")
    }

    /// Integral of `w(z, J(z)) J(z)` over the support in polar coordinates.
    pub fn radial_integral<F: Fn(&[f64], f64) -> f64>(&self, w: F) -> f64 {
        let (rs, rw) = composite_gl(0.0, self.radius, 16, 8);
        match self.dim {
            2 => {
                let nt = 256;
                let mut s = 0.0;
                for k in 0..nt {
                    let t = 2.0 * PI * (k as f64 + 0.5) / nt as f64;
                    for (r, wr) in rs.iter().zip(&rw) {
                        let z = [r * t.cos(), r * t.sin()];
                        let j = (self.density)(&z);
                        s += w(&z, j) * j * r * wr;
                    }
                }
                s * 2.0 * PI / nt as f64
            }
            _ => {
                let (cs, cw) = composite_gl(-1.0, 1.0, 8, 8);
                let np = 64;
                let mut s = 0.0;
                for (c, wc) in cs.iter().zip(&cw) {
                    let sn = (1.0 - c * c).sqrt();
                    for k in 0..np {
                        let p = 2.0 * PI * (k as f64 + 0.5) / np as f64;
                        for (r, wr) in rs.iter().zip(&rw) {
                            let z = [r * sn * p.cos(), r * sn * p.sin(), r * c];
                            let j = (self.density)(&z);
                            s += w(&z, j) * j * r * r * wr * wc;
                        }
                    }
                }
                s * 2.0 * PI / np as f64
            }
        }
    }
}

impl KernelSpec {
    pub fn kind(&self) -> KernelKind {
        match self {
            KernelSpec::Singular(_) => KernelKind::Singular,
            KernelSpec::Regular(_) => KernelKind::Regular,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            KernelSpec::Singular(k) => k.dim,
            KernelSpec::Regular(k) => k.dim,
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            KernelSpec::Singular(k) => Some(k.alpha),
            KernelSpec::Regular(_) => None,
        }
    }

    pub fn singular(&self) -> Result<&SingularKernel> {
        match self {
            KernelSpec::Singular(k) => Ok(k),
            KernelSpec::Regular(_) => Err(Error::InvalidKernel("operation requires a singular kernel".into())),
        }
    }

    /// J(z). Singular kernels reject the origin.
    pub fn eval(&self, z: &[f64]) -> Result<f64> {
        match self {
            KernelSpec::Singular(k) => {
                let r = norm(z);
                if r == 0.0 {
                    return Err(Error::Invalid("singular kernel evaluated at the origin".into()));
                }
                let w: Vec<f64> = z.iter().map(|v| v / r).collect();
                Ok(k.weight.eval(&w) * r.powf(-(k.dim as f64) - k.alpha))
            }
            KernelSpec::Regular(k) => Ok((k.density)(z)),
        }
    }
}

/// Evaluates `F(s, d)` along the half-circle `d = cos s e + sin s e_perp` for N=2,
/// or the hemisphere `cos s e + sin s (cos p f1 + sin p f2)` for N=3, integrating
/// `weight(s) F` with tanh-sinh in s. `weight` receives `(cos s, sin s)` computed
/// accurately near the endpoints.
fn half_sphere_integral<F: FnMut(&[f64], f64, f64) -> f64>(dim: usize, e: &[f64], mut f: F) -> Result<f64> {
    let fr = frame_from(e)?;
    match dim {
        2 => {
            let est = tanh_sinh(
                |s, da, db| {
                    // s in (-pi/2, pi/2); cos s = sin(distance to nearer endpoint).
                    let c = da.min(db).sin();
                    let sn = s.sin();
                    let d = [c * fr[0][0] + sn * fr[1][0], c * fr[0][1] + sn * fr[1][1]];
                    f(&d, c, sn)
                },
                -PI / 2.0,
                PI / 2.0,
                9,
            );
            Ok(est.value)
        }
        3 => {
            let np = 64;
            let mut total = 0.0;
            for k in 0..np {
                let p = 2.0 * PI * (k as f64 + 0.5) / np as f64;
                let (cp, sp) = (p.cos(), p.sin());
                let est = tanh_sinh(
                    |_s, da, db| {
                        let c = db.sin();
                        let sn = da.sin();
                        let d: Vec<f64> =
                            (0..3).map(|i| c * fr[0][i] + sn * (cp * fr[1][i] + sp * fr[2][i])).collect();
                        // Jacobian sin s from the polar measure in u.
                        f(&d, c, sn) * sn
                    },
                    0.0,
                    PI / 2.0,
                    8,
                );
                total += est.value;
            }
            Ok(total * 2.0 * PI / np as f64)
        }
        n => Err(Error::InvalidKernel(format!("dimension {n} unsupported"))),
    }
}

/// Reduced one-dimensional weight a11(e).
pub fn reduced_weight_a11(spec: &KernelSpec, e: &[f64]) -> Result<f64> {
    let k = spec.singular()?;
    let alpha = k.alpha;
    half_sphere_integral(k.dim, e, |d, c, _| k.weight.eval(d) * c.powf(alpha))
}

/// A_g(e) = alpha(alpha-1) * integral of (1,u)(x)(1,u) g (1+|u|^2)^{-(N+alpha)/2} du, ambient frame.
pub fn matrix_ag(spec: &KernelSpec, e: &[f64]) -> Result<Tensor> {
    let k = spec.singular()?;
    let alpha = k.alpha;
    if alpha <= 1.0 {
        return Err(Error::InvalidExponent {
            alpha,
            reason: "A_g carries the prefactor alpha(alpha-1), which degenerates for alpha <= 1",
        });
    }
    let n = k.dim;
    let mut out = Tensor::zeros(n);
    for i in 0..n {
        for j in i..n {
            let v = half_sphere_integral(n, e, |d, c, _| k.weight.eval(d) * d[i] * d[j] * c.powf(alpha - 2.0))?;
            out.m[i][j] = alpha * (alpha - 1.0) * v;
            out.m[j][i] = out.m[i][j];
        }
    }
    Ok(out)
}

/// D_alpha = integral over R of (1 - cos t)|t|^{-1-alpha} dt.
pub fn one_dim_symbol_constant(alpha: f64) -> f64 {
    PI / (statrs::function::gamma::gamma(1.0 + alpha) * (PI * alpha / 2.0).sin())
}

/// c_g(w) = integral of (1 - cos(w.z)) g(z/|z|)|z|^{-N-alpha} dz for a unit vector w.
pub fn symbol_constant(spec: &KernelSpec, w: &[f64]) -> Result<f64> {
    let k = spec.singular()?;
    Ok(reduced_weight_a11(spec, w)? * one_dim_symbol_constant(k.alpha))
}

/// Integral of theta (x) theta J(theta) over the unit sphere of the hyperplane orthogonal to e.
/// For N=2 this is the counting measure on the two unit normals of e.
pub fn equator_moment(spec: &KernelSpec, e: &[f64]) -> Result<Tensor> {
    let k = spec.singular()?;
    let fr = frame_from(e)?;
    let n = k.dim;
    let mut out = Tensor::zeros(n);
    match n {
        2 => {
            for sgn in [1.0, -1.0] {
                let t: Vec<f64> = fr[1].iter().map(|v| sgn * v).collect();
                out.add_scaled(&Tensor::outer(&t), k.weight.eval(&t));
            }
        }
        _ => {
            let np = 512;
            for j in 0..np {
                let p = 2.0 * PI * (j as f64 + 0.5) / np as f64;
                let t: Vec<f64> = (0..3).map(|i| p.cos() * fr[1][i] + p.sin() * fr[2][i]).collect();
                out.add_scaled(&Tensor::outer(&t), k.weight.eval(&t) * 2.0 * PI / np as f64);
            }
        }
    }
    Ok(out)
}

/// One-dimensional kernel obtained by integrating J over hyperplanes orthogonal to e.
#[derive(Clone, Debug)]
pub enum Reduced1D {
    /// `weight * |s|^{-1-alpha}`.
    Power { weight: f64, alpha: f64 },
    /// Even marginal `j1(s)`, supported in `|s| <= radius`, tabulated at quadrature nodes
    /// `s_k > 0` with the weights already multiplied in.
    Marginal { radius: f64, nodes: Vec<f64>, weighted: Vec<f64> },
}

impl Reduced1D {
    pub fn power(weight: f64, alpha: f64) -> Self {
        Reduced1D::Power { weight, alpha }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            Reduced1D::Power { alpha, .. } => Some(*alpha),
            Reduced1D::Marginal { .. } => None,
        }
    }
}

/// Marginal `j1(s) = integral of J(s e + z') dz'` over the hyperplane orthogonal to e.
pub fn marginal(k: &RegularKernel, e: &[f64], s: f64) -> Result<f64> {
    let fr = frame_from(e)?;
    let rad2 = k.radius * k.radius - s * s;
    if rad2 <= 0.0 {
        return Ok(0.0);
    }
    let w = rad2.sqrt();
    match k.dim {
        2 => {
            let (ts, tw) = composite_gl(-w, w, 4, 16);
            Ok(ts
                .iter()
                .zip(&tw)
                .map(|(t, wt)| {
                    let z = [s * fr[0][0] + t * fr[1][0], s * fr[0][1] + t * fr[1][1]];
                    (k.density)(&z) * wt
                })
                .sum())
        }
        _ => {
            let (rs, rw) = composite_gl(0.0, w, 4, 16);
            let np = 64;
            let mut acc = 0.0;
            for j in 0..np {
                let p = 2.0 * PI * (j as f64 + 0.5) / np as f64;
                for (r, wr) in rs.iter().zip(&rw) {
                    let z: Vec<f64> =
                        (0..3).map(|i| s * fr[0][i] + r * (p.cos() * fr[1][i] + p.sin() * fr[2][i])).collect();
                    acc += (k.density)(&z) * r * wr;
                }
            }
            Ok(acc * 2.0 * PI / np as f64)
        }
    }
}

/// Direction-reduced kernel used by the traveling-wave solver.
pub fn reduced_kernel(spec: &KernelSpec, e: &[f64]) -> Result<Reduced1D> {
    match spec {
        KernelSpec::Singular(k) => Ok(Reduced1D::power(reduced_weight_a11(spec, e)?, k.alpha)),
        KernelSpec::Regular(k) => {
            let (nodes, w) = composite_gl(0.0, k.radius, 16, 8);
            let mut weighted = Vec::with_capacity(nodes.len());
            for (s, ws) in nodes.iter().zip(&w) {
                weighted.push(marginal(k, e, *s)? * ws);
            }
            Ok(Reduced1D::Marginal { radius: k.radius, nodes, weighted })
        }
    }
}

/// Outcome of the integrable-majorant check for `|z|^2 J_eps` and its gradient on the unit ball.
#[derive(Debug, Clone)]
pub struct Cond2Report {
    /// Integral of the majorant over dyadic shells `2^{-k-1} < |z| < 2^{-k}`.
    pub shell_masses: Vec<f64>,
    /// Ratio of consecutive shell masses at the innermost shells (< 1 means summable).
    pub ratio: f64,
    pub integrable: bool,
}

/// Checks that `|z|^2 J_eps(z) + |grad(|z|^2 J_eps(z))|`, maximised over the sampled eps,
/// has finite integral over the unit ball. `J_eps(z) = eps^{-N-alpha} J(z/eps)`.
pub fn check_cond2(spec: &KernelSpec, eps: &[f64]) -> Result<Cond2Report> {
    let dim = spec.dim();
    let alpha = spec.alpha().unwrap_or(0.0);
    let mesh = sphere_mesh(dim);
    let step = if dim == 2 { 8 } else { 16 };
    let dirs: Vec<&Vec<f64>> = mesh.iter().step_by(step).collect();
    let area = if dim == 2 { 2.0 * PI } else { 4.0 * PI };
    let phi = |z: &[f64], ep: f64| -> f64 {
        let r2: f64 = z.iter().map(|v| v * v).sum();
        let y: Vec<f64> = z.iter().map(|v| v / ep).collect();
        r2 * ep.powf(-(dim as f64) - alpha) * spec.eval(&y).unwrap_or(0.0)
    };
    let mut masses = Vec::new();
    for k in 0..24 {
        let (lo, hi) = (0.5f64.powi(k + 1), 0.5f64.powi(k));
        let (rs, rw) = composite_gl(lo, hi, 1, 6);
        let mut mass = 0.0;
        for (r, wr) in rs.iter().zip(&rw) {
            for d in &dirs {
                let z: Vec<f64> = d.iter().map(|v| v * r).collect();
                let mut best: f64 = 0.0;
                for &ep in eps {
                    let h = 1e-6 * r;
                    let mut g2 = 0.0;
                    for i in 0..dim {
                        let mut zp = z.clone();
                        let mut zm = z.clone();
                        zp[i] += h;
                        zm[i] -= h;
                        let gi = (phi(&zp, ep) - phi(&zm, ep)) / (2.0 * h);
                        g2 += gi * gi;
                    }
                    best = best.max(phi(&z, ep) + g2.sqrt());
                }
                mass += best * r.powi(dim as i32 - 1) * wr;
            }
        }
        masses.push(mass * area / dirs.len() as f64);
    }
    let n = masses.len();
    let ratio = masses[n - 1] / masses[n - 2];
    Ok(Cond2Report { integrable: ratio < 0.99, ratio, shell_masses: masses })
}

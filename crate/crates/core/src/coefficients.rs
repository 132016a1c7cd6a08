//! Mobility and diffusion matrices of the sharp-interface limit, the appendix identity check,
//! and the oscillating averages `abar_eps` whose limits they describe.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::bistable::Bistable;
use crate::error::{Error, Result};
use crate::front::fmt_num;
use crate::kernels::{equator_moment, matrix_ag, reduced_kernel, reduced_weight_a11, KernelSpec, Reduced1D, RegularKernel};
use crate::linalg::{frame_from, Tensor};
use crate::quad::{adaptive, adaptive_semi_infinite, richardson, Extrapolation, Pchip};
use crate::scaling::ScalingRule;
use crate::traveling_wave::{solve_wave_on, standing_wave_on, NewtonOptions, ReducedOperator, WaveGrid, WaveProfile};

/// Which closed form produced a table entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormulaTag {
    SingularGt1,
    SingularEq1,
    Regular,
}

impl FormulaTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            FormulaTag::SingularGt1 => "singular_gt1",
            FormulaTag::SingularEq1 => "singular_eq1",
            FormulaTag::Regular => "regular",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "singular_gt1" => Some(FormulaTag::SingularGt1),
            "singular_eq1" => Some(FormulaTag::SingularEq1),
            "regular" => Some(FormulaTag::Regular),
            _ => None,
        }
    }
}

impl fmt::Display for FormulaTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn require_standing(profile: &WaveProfile) -> Result<()> {
    if profile.h != 0.0 {
        return Err(Error::Invalid(format!("coefficient needs a standing wave, got tilt h = {}", profile.h)));
    }
    Ok(())
}

/// mu(e) = 1 / integral of q'^2.
pub fn mobility(profile: &WaveProfile) -> Result<f64> {
    require_standing(profile)?;
    Ok(1.0 / profile.dot_l2())
}

const TAIL_ABS: f64 = 1e-15;
const TAIL_REL: f64 = 1e-11;

/// Integral over the real line of `f(x)`, where `f` is built from the profile at `x` and `x + s`.
/// Inside the grid the interpolant is piecewise cubic, so a 4-point Gauss rule on the merged
/// breakpoints `{r_k} U {r_k - s}` is exact up to rounding; the two tails are smooth power laws.
fn shifted_integral<F: Fn(f64) -> f64>(profile: &WaveProfile, s: f64, f: F) -> f64 {
    let nodes = &profile.grid.nodes;
    let mut pts = Vec::with_capacity(2 * nodes.len());
    let (mut i, mut j) = (0, 0);
    while i < nodes.len() || j < nodes.len() {
        let a = nodes.get(i).copied().unwrap_or(f64::INFINITY);
        let b = nodes.get(j).map_or(f64::INFINITY, |v| v - s);
        if a <= b {
            pts.push(a);
            i += 1;
        } else {
            pts.push(b);
            j += 1;
        }
    }
    pts.dedup_by(|x, y| (*x - *y).abs() <= 1e-14 * (1.0 + y.abs()));
    const X: [f64; 4] = [-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526];
    const W: [f64; 4] = [0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538];
    // Gaps between the two shifted grids are smooth but can span decades.
    let gap = 4.0 * nodes.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let mut total = 0.0;
    for w in pts.windows(2) {
        if w[1] - w[0] > gap {
            total += adaptive(&f, w[0], w[1], &[], TAIL_ABS, TAIL_REL, 2000).value;
            continue;
        }
        let (c, h) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
        total += h * (0..4).map(|k| W[k] * f(c + h * X[k])).sum::<f64>();
    }
    let scale = profile.grid.r_max;
    let (lo, hi) = (pts[0], pts[pts.len() - 1]);
    total += adaptive_semi_infinite(|x| f(lo - x), 0.0, scale, TAIL_ABS, TAIL_REL).value;
    total + adaptive_semi_infinite(|x| f(hi + x), 0.0, scale, TAIL_ABS, TAIL_REL).value
}

/// `H(z) = integral of q'(xi) q'(xi + z) d xi`.
pub fn derivative_correlation(profile: &WaveProfile, z: f64) -> f64 {
    shifted_integral(profile, z, |x| profile.deriv(x) * profile.deriv(x + z))
}

/// `G(s) = integral of q'(xi) q(xi + s) d xi`.
pub fn shift_correlation(profile: &WaveProfile, s: f64) -> f64 {
    shifted_integral(profile, s, |x| profile.deriv(x) * profile.eval(x + s))
}

/// `D(z) = integral of (q(xi + z) - q(xi))^2 d xi`.
pub fn increment_energy(profile: &WaveProfile, z: f64) -> f64 {
    shifted_integral(profile, z, |x| {
        let d = profile.eval(x + z) - profile.eval(x);
        d * d
    })
}

fn width_scale(profile: &WaveProfile) -> f64 {
    // Width of the layer: distance over which q covers the middle half of its jump.
    let lo = profile.m_minus() + 0.25 * (profile.m_plus() - profile.m_minus());
    let hi = profile.m_minus() + 0.75 * (profile.m_plus() - profile.m_minus());
    let at = |level: f64| {
        let k = profile.q.iter().position(|&v| v >= level).unwrap_or(profile.q.len() - 1);
        profile.grid.nodes[k]
    };
    (at(hi) - at(lo)).abs().max(1e-3)
}

const FAR_DECADES: f64 = 4.0;

fn power_alpha(profile: &WaveProfile) -> Result<f64> {
    match profile.kernel {
        Reduced1D::Power { alpha, .. } => Ok(alpha),
        Reduced1D::Marginal { .. } => Err(Error::InvalidKernel("operation requires a singular kernel profile".into())),
    }
}

/// `K = [1/(alpha(alpha-1))] double integral of q'(xi) q'(xi+z) |z|^{1-alpha}`.
pub fn k_integral(profile: &WaveProfile) -> Result<f64> {
    require_standing(profile)?;
    let alpha = power_alpha(profile)?;
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(Error::InvalidExponent { alpha, reason: "K is defined for 1 < alpha < 2" });
    }
    let big_z = width_scale(profile) * 10f64.powf(FAR_DECADES);
    // z = u^m removes the |z|^{1-alpha} singularity at the origin.
    let m = 1.0 / (2.0 - alpha);
    let u_max = big_z.powf(1.0 / m);
    let breaks: Vec<f64> = (0..FAR_DECADES as i32).map(|k| (big_z * 10f64.powi(-k - 1)).powf(1.0 / m)).collect();
    let body = adaptive(|u| m * derivative_correlation(profile, u.powf(m)), 0.0, u_max, &breaks, 1e-13, 1e-10, 400).value;
    // H(z) ~ C z^{-1-alpha} beyond big_z.
    let tail = derivative_correlation(profile, big_z) * big_z.powf(2.0 - alpha) / (2.0 * alpha - 1.0);
    Ok(2.0 * (body + tail) / (alpha * (alpha - 1.0)))
}

/// Value of `double integral of (q(xi+z) - q(xi))^2 |z|^{-p}`; infinite when the far field
/// `D(z) ~ jump^2 |z|` makes the integral diverge (p <= 2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Closure {
    pub p: f64,
    pub value: f64,
    pub finite: bool,
    /// Integral truncated at the far-field radius, reported even when the full value diverges.
    pub truncated: f64,
}

pub fn closure_integral(profile: &WaveProfile, p: f64) -> Result<Closure> {
    require_standing(profile)?;
    if !(p > 0.0 && p < 3.0) {
        return Err(Error::Invalid(format!("closure exponent {p} outside (0, 3)")));
    }
    let jump2 = (profile.m_plus() - profile.m_minus()).powi(2);
    let big_z = width_scale(profile) * 10f64.powf(FAR_DECADES);
    let m = 1.0 / (3.0 - p);
    let u_max = big_z.powf(1.0 / m);
    let breaks: Vec<f64> = (0..FAR_DECADES as i32).map(|k| (big_z * 10f64.powi(-k - 1)).powf(1.0 / m)).collect();
    let body = adaptive(
        |u| {
            let z = u.powf(m);
            m * increment_energy(profile, z) * z.powf(-p) * u.powf(m - 1.0)
        },
        0.0,
        u_max,
        &breaks,
        1e-13,
        1e-10,
        400,
    )
    .value;
    let truncated = 2.0 * body;
    if p <= 2.0 {
        return Ok(Closure { p, value: f64::INFINITY, finite: false, truncated });
    }
    // D(z) = jump^2 z - b beyond big_z.
    let b = jump2 * big_z - increment_energy(profile, big_z);
    let tail = jump2 * big_z.powf(2.0 - p) / (p - 2.0) - b * big_z.powf(1.0 - p) / (p - 1.0);
    Ok(Closure { p, value: truncated + 2.0 * tail, finite: true, truncated })
}

/// Outcome of the appendix identity check.
#[derive(Debug, Clone)]
pub struct AppendixReport {
    pub alpha: f64,
    pub k_direct: f64,
    /// Candidates for p in {alpha, 1 + alpha}.
    pub candidates: Vec<Closure>,
    /// Exponent whose closure matches K within 1e-3 relative, if any.
    pub matched: Option<f64>,
    /// Relative discrepancy `|S_p / K - 1|` per candidate (infinite for divergent ones).
    pub discrepancy: Vec<f64>,
}

impl AppendixReport {
    /// Ratio `S_p / K` for the candidate with exponent `p`.
    pub fn ratio(&self, p: f64) -> Option<f64> {
        self.candidates.iter().find(|c| (c.p - p).abs() < 1e-12).map(|c| c.value / self.k_direct)
    }
}

pub fn appendix_k(profile: &WaveProfile, alpha: f64) -> Result<AppendixReport> {
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(Error::InvalidExponent { alpha, reason: "the appendix identity concerns 1 < alpha < 2" });
    }
    let pa = power_alpha(profile)?;
    if (pa - alpha).abs() > 1e-12 {
        return Err(Error::Invalid(format!("profile was computed for alpha = {pa}, not {alpha}")));
    }
    let k_direct = k_integral(profile)?;
    let candidates = vec![closure_integral(profile, alpha)?, closure_integral(profile, 1.0 + alpha)?];
    let discrepancy: Vec<f64> = candidates
        .iter()
        .map(|c| if c.finite { (c.value / k_direct - 1.0).abs() } else { f64::INFINITY })
        .collect();
    let matched = candidates.iter().zip(&discrepancy).find(|(_, d)| **d < 1e-3).map(|(c, _)| c.p);
    Ok(AppendixReport { alpha, k_direct, candidates, matched, discrepancy })
}

/// Literal singular formula for alpha > 1: `[double integral (q(xi+z)-q(xi))^2 |z|^{-1-alpha}] A_g(e)`.
pub fn matrix_a_singular_gt1(profile: &WaveProfile, spec: &KernelSpec) -> Result<Tensor> {
    let k = spec.singular()?;
    if k.alpha <= 1.0 {
        return Err(Error::InvalidExponent { alpha: k.alpha, reason: "the far field jump^2 |z|^{-alpha} is not integrable" });
    }
    let factor = closure_integral(profile, 1.0 + k.alpha)?;
    Ok(matrix_ag(spec, &profile.e)?.scale(factor.value))
}

/// Literal formula for alpha = 1: `jump^2` times the equatorial moment of J.
pub fn matrix_a_singular_eq1(spec: &KernelSpec, nl: &Bistable, e: &[f64]) -> Result<Tensor> {
    let k = spec.singular()?;
    if (k.alpha - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidExponent { alpha: k.alpha, reason: "the equatorial formula is the alpha = 1 case" });
    }
    if k.dim < 2 {
        return Err(Error::Invalid("equatorial moment needs N >= 2".into()));
    }
    Ok(equator_moment(spec, e)?.scale(nl.jump() * nl.jump()))
}

/// Literal regular formula: `double integral of q'(xi) q'(xi + e.z) z (x) z J(z)`.
pub fn matrix_a_regular(profile: &WaveProfile, spec: &KernelSpec) -> Result<Tensor> {
    require_standing(profile)?;
    let k = match spec {
        KernelSpec::Regular(k) => k,
        KernelSpec::Singular(_) => {
            return Err(Error::InvalidKernel("regular formula does not apply to singular kernels".into()))
        }
    };
    let h = correlation_table(profile, k.radius);
    regular_moment(k, &profile.e, &h)
}

fn regular_moment(k: &RegularKernel, e: &[f64], h: &Pchip) -> Result<Tensor> {
    let e = frame_from(e)?.swap_remove(0);
    let n = k.dim;
    let mut out = Tensor::zeros(n);
    for i in 0..n {
        for j in i..n {
            let v = k.radial_integral(|z, _| {
                let s: f64 = z.iter().zip(&e).map(|(a, b)| a * b).sum();
                h.eval(s) * z[i] * z[j]
            });
            out.m[i][j] = v;
            out.m[j][i] = v;
        }
    }
    Ok(out)
}

/// H tabulated on [-r, r] for repeated evaluation.
fn correlation_table(profile: &WaveProfile, r: f64) -> Pchip {
    let n = 801;
    let xs: Vec<f64> = (0..n).map(|k| -r + 2.0 * r * k as f64 / (n - 1) as f64).collect();
    let ys: Vec<f64> = xs.par_iter().map(|&z| derivative_correlation(profile, z)).collect();
    Pchip::new(xs, ys)
}

/// Matrix that drives the limit front law `V = mu Tr(A D^2 d)`, i.e. the limit of `abar_eps`.
/// It is half of the literal second-moment formula: the Taylor remainder of the distance is
/// `W = z.D^2d.z / 2`.
pub fn effective_matrix(spec: &KernelSpec, nl: &Bistable, profile: &WaveProfile) -> Result<(Tensor, FormulaTag)> {
    match spec {
        KernelSpec::Regular(_) => Ok((matrix_a_regular(profile, spec)?.scale(0.5), FormulaTag::Regular)),
        KernelSpec::Singular(k) if (k.alpha - 1.0).abs() < 1e-12 => {
            Ok((matrix_a_singular_eq1(spec, nl, &profile.e)?.scale(0.5), FormulaTag::SingularEq1))
        }
        KernelSpec::Singular(k) if k.alpha > 1.0 => {
            let kk = k_integral(profile)?;
            Ok((matrix_ag(spec, &profile.e)?.scale(0.5 * kk), FormulaTag::SingularGt1))
        }
        KernelSpec::Singular(k) => Err(Error::InvalidExponent {
            alpha: k.alpha,
            reason: "no diffusion matrix for alpha < 1; the limit is the fractional curvature",
        }),
    }
}

/// Smooth signed distance near a probe point, with its first and second derivatives there.
#[derive(Clone)]
pub enum Shape {
    /// `d(y) = sign (|y - center| - radius)`.
    Circle { center: [f64; 2], radius: f64, sign: f64 },
    /// `d(y) = normal . (y - origin)`.
    Affine { normal: [f64; 2], origin: [f64; 2] },
    Custom(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Circle { center, radius, sign } => write!(f, "Circle({center:?}, r={radius}, sign={sign})"),
            Shape::Affine { normal, origin } => write!(f, "Affine(n={normal:?}, o={origin:?})"),
            Shape::Custom(_) => write!(f, "Custom"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DistanceProbe {
    pub shape: Shape,
    pub point: [f64; 2],
    /// `Dd` at the point.
    pub e: [f64; 2],
    /// `D^2 d` at the point.
    pub hessian: Tensor,
}

impl DistanceProbe {
    /// `d(y) = |y - center| - radius` (positive outside) probed at `point`.
    pub fn circle(center: [f64; 2], radius: f64, point: [f64; 2]) -> Result<Self> {
        Self::from_shape(Shape::Circle { center, radius, sign: 1.0 }, point)
    }

    pub fn affine(normal: [f64; 2], origin: [f64; 2], point: [f64; 2]) -> Result<Self> {
        let n = normal[0].hypot(normal[1]);
        if !(n > 0.0) {
            return Err(Error::Invalid("affine probe needs a nonzero normal".into()));
        }
        Self::from_shape(Shape::Affine { normal: [normal[0] / n, normal[1] / n], origin }, point)
    }

    /// Derivatives by centred differences with step 1e-4.
    pub fn custom(d: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>, point: [f64; 2]) -> Result<Self> {
        Self::from_shape(Shape::Custom(d), point)
    }

    fn from_shape(shape: Shape, point: [f64; 2]) -> Result<Self> {
        let (e, hessian) = match &shape {
            Shape::Circle { center, radius, sign } => {
                if !(*radius > 0.0) {
                    return Err(Error::Invalid("circle radius must be positive".into()));
                }
                let p = [point[0] - center[0], point[1] - center[1]];
                let r = p[0].hypot(p[1]);
                if r == 0.0 {
                    return Err(Error::Invalid("probe point at the circle centre".into()));
                }
                let n = [p[0] / r, p[1] / r];
                let mut hs = Tensor::identity(2);
                hs.add_scaled(&Tensor::outer(&n), -1.0);
                ([sign * n[0], sign * n[1]], hs.scale(sign / r))
            }
            Shape::Affine { normal, .. } => (*normal, Tensor::zeros(2)),
            Shape::Custom(d) => {
                let h = 1e-4;
                let at = |a: f64, b: f64| d(&[point[0] + a, point[1] + b]);
                let e = [(at(h, 0.0) - at(-h, 0.0)) / (2.0 * h), (at(0.0, h) - at(0.0, -h)) / (2.0 * h)];
                let d0 = at(0.0, 0.0);
                let mut t = Tensor::zeros(2);
                t.m[0][0] = (at(h, 0.0) - 2.0 * d0 + at(-h, 0.0)) / (h * h);
                t.m[1][1] = (at(0.0, h) - 2.0 * d0 + at(0.0, -h)) / (h * h);
                t.m[0][1] = (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4.0 * h * h);
                t.m[1][0] = t.m[0][1];
                (e, t)
            }
        };
        let probe = Self { shape, point, e, hessian };
        probe.validate()?;
        Ok(probe)
    }

    fn tolerance(&self) -> f64 {
        if matches!(self.shape, Shape::Custom(_)) {
            1e-6
        } else {
            1e-10
        }
    }

    /// `|Dd| = 1` and `D^2 d Dd = 0` at the point.
    pub fn validate(&self) -> Result<()> {
        let tol = self.tolerance();
        let ne = self.e[0].hypot(self.e[1]);
        if (ne - 1.0).abs() > tol {
            return Err(Error::Invalid(format!("|Dd| = {ne} at the probe point")));
        }
        let scale = 1.0 + self.hessian.m.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
        for i in 0..2 {
            let v = self.hessian.m[i][0] * self.e[0] + self.hessian.m[i][1] * self.e[1];
            if v.abs() > tol * scale {
                return Err(Error::Invalid(format!("D^2 d Dd = {v:e} at the probe point")));
            }
        }
        Ok(())
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        match &self.shape {
            Shape::Circle { center, radius, sign } => sign * ((y[0] - center[0]).hypot(y[1] - center[1]) - radius),
            Shape::Affine { normal, origin } => normal[0] * (y[0] - origin[0]) + normal[1] * (y[1] - origin[1]),
            Shape::Custom(d) => d(y),
        }
    }

    /// `d(x + y) - d(x) - Dd(x).y`, free of cancellation for small |y| on analytic shapes.
    pub fn second_order(&self, y: &[f64]) -> f64 {
        match &self.shape {
            Shape::Circle { center, sign, .. } => {
                let p = [self.point[0] - center[0], self.point[1] - center[1]];
                let r0 = p[0].hypot(p[1]);
                let py = p[0] * y[0] + p[1] * y[1];
                let yy = y[0] * y[0] + y[1] * y[1];
                let r1 = (p[0] + y[0]).hypot(p[1] + y[1]);
                let delta = (2.0 * py + yy) / (r1 + r0);
                sign * (yy * r0 - py * delta) / (r0 * (r1 + r0))
            }
            Shape::Affine { .. } => 0.0,
            Shape::Custom(_) => {
                let ny = y[0].hypot(y[1]);
                if ny < 1e-3 {
                    0.5 * self.hessian.quad(y)
                } else {
                    let x = self.point;
                    self.eval(&[x[0] + y[0], x[1] + y[1]]) - self.eval(&x) - self.e[0] * y[0] - self.e[1] * y[1]
                }
            }
        }
    }

    /// Radius over which the second-order model of `d` is meaningful.
    pub fn smoothness_radius(&self) -> f64 {
        match &self.shape {
            Shape::Circle { radius, .. } => *radius,
            Shape::Affine { .. } => f64::INFINITY,
            Shape::Custom(_) => {
                let k = self.hessian.m.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
                if k > 0.0 {
                    1.0 / k
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Probe of the reflected distance: same point and normal, `D^2 d -> -D^2 d`.
    pub fn reflected(&self) -> Result<Self> {
        let shape = match &self.shape {
            Shape::Circle { center, radius, sign } => {
                let c = [2.0 * self.point[0] - center[0], 2.0 * self.point[1] - center[1]];
                Shape::Circle { center: c, radius: *radius, sign: -sign }
            }
            Shape::Affine { .. } => self.shape.clone(),
            Shape::Custom(d) => {
                let (x, e) = (self.point, self.e);
                let d = d.clone();
                // Reflect the graph of d about its tangent plane at x.
                let d0 = d(&x);
                Shape::Custom(Arc::new(move |y: &[f64]| {
                    let lin = d0 + e[0] * (y[0] - x[0]) + e[1] * (y[1] - x[1]);
                    2.0 * lin - d(y)
                }))
            }
        };
        Self::from_shape(shape, self.point)
    }
}

/// `G(s) = integral of q'(xi) q(xi + s)` tabulated on `s = s0 sinh(t)` with Hermite
/// interpolation (slopes `H = G'`), power-law tails beyond the table.
#[derive(Debug, Clone)]
pub struct ShiftTable {
    s0: f64,
    dt: f64,
    t_max: f64,
    g: Vec<f64>,
    h: Vec<f64>,
    g_minus: f64,
    g_plus: f64,
    alpha: Option<f64>,
}

impl ShiftTable {
    pub fn new(profile: &WaveProfile) -> Self {
        let s0 = width_scale(profile);
        let s_max = match profile.alpha() {
            Some(_) => s0 * 1e5,
            None => 2.0 * profile.grid.r_max,
        };
        let t_max = (s_max / s0).asinh();
        let dt = 0.02;
        let n = (2.0 * t_max / dt).ceil() as usize + 1;
        let dt = 2.0 * t_max / (n - 1) as f64;
        let vals: Vec<(f64, f64)> = (0..n)
            .into_par_iter()
            .map(|k| {
                let s = s0 * (-t_max + k as f64 * dt).sinh();
                (shift_correlation(profile, s), derivative_correlation(profile, s))
            })
            .collect();
        let jump = profile.m_plus() - profile.m_minus();
        Self {
            s0,
            dt,
            t_max,
            g: vals.iter().map(|v| v.0).collect(),
            h: vals.iter().map(|v| v.1).collect(),
            g_minus: jump * profile.m_minus(),
            g_plus: jump * profile.m_plus(),
            alpha: profile.alpha(),
        }
    }

    fn node(&self, k: usize) -> f64 {
        self.s0 * (-self.t_max + k as f64 * self.dt).sinh()
    }

    fn s_max(&self) -> f64 {
        self.node(self.g.len() - 1)
    }

    /// `(G(s), G'(s))`.
    pub fn eval(&self, s: f64) -> (f64, f64) {
        let sm = self.s_max();
        if s.abs() >= sm {
            let (g_inf, g_edge) = if s > 0.0 { (self.g_plus, self.g[self.g.len() - 1]) } else { (self.g_minus, self.g[0]) };
            return match self.alpha {
                Some(a) => {
                    let ratio = (sm / s.abs()).powf(a);
                    let dev = (g_edge - g_inf) * ratio;
                    (g_inf + dev, -a * dev / s)
                }
                None => (g_inf, 0.0),
            };
        }
        let t = (s / self.s0).asinh() + self.t_max;
        let k = ((t / self.dt).floor() as usize).min(self.g.len() - 2);
        let (x0, x1) = (self.node(k), self.node(k + 1));
        let hh = x1 - x0;
        let u = (s - x0) / hh;
        let (g0, g1, d0, d1) = (self.g[k], self.g[k + 1], self.h[k] * hh, self.h[k + 1] * hh);
        let u2 = u * u;
        let u3 = u2 * u;
        let val = (2.0 * u3 - 3.0 * u2 + 1.0) * g0
            + (u3 - 2.0 * u2 + u) * d0
            + (-2.0 * u3 + 3.0 * u2) * g1
            + (u3 - u2) * d1;
        let der = ((6.0 * u2 - 6.0 * u) * g0 + (3.0 * u2 - 4.0 * u + 1.0) * d0 + (-6.0 * u2 + 6.0 * u) * g1
            + (3.0 * u2 - 2.0 * u) * d1)
            / hh;
        (val, der)
    }

    /// `G(s + delta) - G(s)` with a midpoint rule for small increments.
    pub fn increment(&self, s: f64, delta: f64) -> f64 {
        if delta.abs() < 1e-3 * self.s0 {
            delta * self.eval(s + 0.5 * delta).1
        } else {
            self.eval(s + delta).0 - self.eval(s).0
        }
    }
}

/// One evaluation of `abar_eps`.
#[derive(Debug, Clone, Copy)]
pub struct AbarSample {
    pub eps: f64,
    pub eta: f64,
    pub value: f64,
    /// Quadrature error estimate.
    pub error: f64,
    /// Set when eps is not small against the probe's smoothness radius.
    pub flagged: bool,
}

/// Evaluates `abar_eps` for one profile and kernel at many probes and eps values.
pub struct AbarEvaluator<'a> {
    spec: &'a KernelSpec,
    table: ShiftTable,
    e: [f64; 2],
    rule: ScalingRule,
}

impl<'a> AbarEvaluator<'a> {
    pub fn new(spec: &'a KernelSpec, profile: &WaveProfile) -> Result<Self> {
        if spec.dim() != 2 {
            return Err(Error::Invalid("abar_eps is implemented for N = 2".into()));
        }
        require_standing(profile)?;
        let e = frame_from(&profile.e)?.swap_remove(0);
        if let (KernelSpec::Singular(_), Some(w)) = (spec, profile.a11()) {
            let expect = reduced_weight_a11(spec, &e)?;
            if (w / expect - 1.0).abs() > 1e-8 {
                return Err(Error::Invalid(format!("profile weight {w} does not match a11(e) = {expect}")));
            }
        }
        Ok(Self { spec, table: ShiftTable::new(profile), e: [e[0], e[1]], rule: ScalingRule::for_spec(spec) })
    }

    pub fn rule(&self) -> ScalingRule {
        self.rule
    }

    pub fn eval(&self, probe: &DistanceProbe, eps: f64) -> Result<AbarSample> {
        if !(eps > 0.0 && eps <= 0.5) {
            return Err(Error::Invalid(format!("eps = {eps} outside (0, 0.5]")));
        }
        if (probe.e[0] - self.e[0]).abs() + (probe.e[1] - self.e[1]).abs() > 1e-8 {
            return Err(Error::Invalid("probe normal differs from the profile direction".into()));
        }
        let eta = self.rule.eta(eps);
        let big_r = probe.smoothness_radius();
        let flagged = eps > 0.25 * big_r;
        let t = [-self.e[1], self.e[0]];
        let s0 = self.table.s0;
        let (alpha, rho_hi, small_exp) = match self.spec {
            KernelSpec::Singular(k) => (Some(k.alpha), f64::INFINITY, 2.0 - k.alpha),
            KernelSpec::Regular(k) => (None, k.radius, 4.0),
        };
        let tau_lo = (1e-9 * s0).ln();
        let tau_hi = if rho_hi.is_finite() {
            rho_hi.ln()
        } else {
            let far = if big_r.is_finite() { big_r / eps } else { s0 / eps };
            (far * 1e6).ln()
        };
        let mut total_err = 0.0;
        let outer = adaptive(
            |phi| {
                let (c, sn) = (phi.cos(), phi.sin());
                let dir = [c * self.e[0] + sn * t[0], c * self.e[1] + sn * t[1]];
                let f = |tau: f64| -> f64 {
                    let rho = tau.exp();
                    let z = [rho * dir[0], rho * dir[1]];
                    let j = match self.spec.eval(&z) {
                        Ok(v) => v,
                        Err(_) => return 0.0,
                    };
                    let y = [eps * z[0], eps * z[1]];
                    let delta = probe.second_order(&y) / eps;
                    j * rho * rho * self.table.increment(rho * c, delta)
                };
                let mut breaks = vec![(s0 / c.abs().max(1e-300)).ln()];
                if big_r.is_finite() {
                    breaks.push((2.0 * big_r / eps).sqrt().ln());
                    breaks.push((big_r / eps).ln());
                }
                let est = adaptive(&f, tau_lo, tau_hi, &breaks, 1e-14, 1e-9, 600);
                let mut v = est.value + f(tau_lo) / small_exp;
                if let Some(a) = alpha {
                    v += f(tau_hi) / a;
                }
                total_err += est.error;
                v
            },
            -PI,
            PI,
            &[-PI / 2.0, 0.0, PI / 2.0],
            1e-13,
            1e-8,
            2000,
        );
        Ok(AbarSample {
            eps,
            eta,
            value: outer.value / eta,
            error: (outer.error + total_err * 1e-3) / eta,
            flagged,
        })
    }

    /// Samples at every eps (in parallel) and the Richardson limit for geometric sequences.
    pub fn limit(&self, probe: &DistanceProbe, eps: &[f64]) -> Result<AbarLimit> {
        let samples: Vec<AbarSample> = eps.par_iter().map(|&e| self.eval(probe, e)).collect::<Result<_>>()?;
        let ratio = if eps.len() >= 2 { eps[1] / eps[0] } else { 0.5 };
        let values: Vec<f64> = samples.iter().map(|s| s.value).collect();
        Ok(AbarLimit { samples, extrapolation: richardson(&values, ratio) })
    }
}

#[derive(Debug, Clone)]
pub struct AbarLimit {
    pub samples: Vec<AbarSample>,
    pub extrapolation: Option<Extrapolation>,
}

impl AbarLimit {
    /// Extrapolated limit, or the finest sample when the sequence is not geometric-like.
    pub fn value(&self) -> f64 {
        self.extrapolation.map_or_else(|| self.samples.last().map_or(f64::NAN, |s| s.value), |x| x.limit)
    }
}

/// `abar_eps = (1/eta) double integral of q'(xi)[q(xi + e.z + eps W) - q(xi + e.z)] J(z)`.
pub fn abar_eps(spec: &KernelSpec, profile: &WaveProfile, probe: &DistanceProbe, eps: f64) -> Result<AbarSample> {
    AbarEvaluator::new(spec, profile)?.eval(probe, eps)
}

/// Same average for alpha < 1 (eta = eps^alpha); its limit is `jump^2 kappa*[x, d]`.
pub fn abar_eps_sublinear(spec: &KernelSpec, profile: &WaveProfile, probe: &DistanceProbe, eps: f64) -> Result<AbarSample> {
    match spec.alpha() {
        Some(a) if a < 1.0 => abar_eps(spec, profile, probe, eps),
        Some(a) => Err(Error::InvalidExponent { alpha: a, reason: "the sublinear scaling needs alpha < 1" }),
        None => Err(Error::InvalidKernel("the sublinear scaling needs a singular kernel".into())),
    }
}

/// Sampled coefficients over uniformly spaced directions `e_k = (cos t_k, sin t_k)`.
#[derive(Debug, Clone)]
pub struct CoefficientTable {
    pub angles: Vec<f64>,
    pub mu: Vec<f64>,
    pub a: Vec<Tensor>,
    pub tags: Vec<FormulaTag>,
    pub cbar: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TableOptions {
    pub directions: usize,
    pub grid: WaveGrid,
    pub newton: NewtonOptions,
    /// Tilts for the `c(h)/h` extrapolation, geometric with ratio 1/2.
    pub tilts: Vec<f64>,
}

impl Default for TableOptions {
    fn default() -> Self {
        Self { directions: 64, grid: WaveGrid::default(), newton: NewtonOptions::default(), tilts: vec![0.02, 0.01, 0.005] }
    }
}

/// `cbar = lim c(h)/h` from waves on a fixed operator.
pub fn cbar_from_op(op: &ReducedOperator, nl: &Bistable, e: &[f64], tilts: &[f64], opts: NewtonOptions) -> Result<f64> {
    let mut ratios = Vec::with_capacity(tilts.len());
    for &h in tilts {
        ratios.push(solve_wave_on(op, nl, e, h, opts)?.c / h);
    }
    let ratio = if tilts.len() >= 2 { tilts[1] / tilts[0] } else { 0.5 };
    Ok(richardson(&ratios, ratio).map_or(*ratios.last().unwrap_or(&f64::NAN), |x| x.limit))
}

impl CoefficientTable {
    pub fn build(spec: &KernelSpec, nl: &Bistable, opts: &TableOptions) -> Result<Self> {
        if spec.dim() != 2 {
            return Err(Error::Invalid("coefficient tables are sampled for N = 2".into()));
        }
        if opts.directions < 4 || opts.directions % 2 != 0 {
            return Err(Error::Invalid("direction count must be even and at least 4".into()));
        }
        let angles: Vec<f64> = (0..opts.directions).map(|k| 2.0 * PI * k as f64 / opts.directions as f64).collect();
        let dirs: Vec<[f64; 2]> = angles.iter().map(|t| [t.cos(), t.sin()]).collect();
        match spec {
            KernelSpec::Singular(k) => {
                if k.alpha < 1.0 {
                    return Err(Error::InvalidExponent {
                        alpha: k.alpha,
                        reason: "no diffusion matrix for alpha < 1; the limit is the fractional curvature",
                    });
                }
                let op = ReducedOperator::new(&opts.grid, &Reduced1D::power(1.0, k.alpha));
                let base = standing_wave_on(&op, nl, &dirs[0], opts.newton)?;
                let mu1 = mobility(&base)?;
                let cbar1 = cbar_from_op(&op, nl, &dirs[0], &opts.tilts, opts.newton)?;
                let eq1 = (k.alpha - 1.0).abs() < 1e-12;
                let k1 = if eq1 { 0.0 } else { k_integral(&base)? };
                let rows: Vec<(f64, Tensor, f64)> = dirs
                    .par_iter()
                    .map(|e| -> Result<(f64, Tensor, f64)> {
                        let lambda = reduced_weight_a11(spec, e)?.powf(1.0 / k.alpha);
                        let a = if eq1 {
                            matrix_a_singular_eq1(spec, nl, e)?.scale(0.5)
                        } else {
                            matrix_ag(spec, e)?.scale(0.5 * k1 * lambda.powf(1.0 - k.alpha))
                        };
                        Ok((mu1 * lambda, a, cbar1 * lambda))
                    })
                    .collect::<Result<_>>()?;
                let tag = if eq1 { FormulaTag::SingularEq1 } else { FormulaTag::SingularGt1 };
                Ok(Self {
                    angles,
                    mu: rows.iter().map(|r| r.0).collect(),
                    a: rows.iter().map(|r| r.1).collect(),
                    tags: vec![tag; opts.directions],
                    cbar: rows.iter().map(|r| r.2).collect(),
                })
            }
            KernelSpec::Regular(k) => {
                // Directions with identical reduced kernels share one wave solve.
                let reduced: Vec<Reduced1D> = dirs.iter().map(|e| reduced_kernel(spec, e)).collect::<Result<_>>()?;
                let mut reps: Vec<usize> = Vec::new();
                let mut class = vec![0usize; dirs.len()];
                for (i, r) in reduced.iter().enumerate() {
                    match reps.iter().position(|&j| same_marginal(&reduced[j], r)) {
                        Some(c) => class[i] = c,
                        None => {
                            class[i] = reps.len();
                            reps.push(i);
                        }
                    }
                }
                let solved: Vec<(f64, f64, Pchip)> = reps
                    .par_iter()
                    .map(|&i| -> Result<(f64, f64, Pchip)> {
                        let op = ReducedOperator::new(&opts.grid, &reduced[i]);
                        let p = standing_wave_on(&op, nl, &dirs[i], opts.newton)?;
                        let cbar = cbar_from_op(&op, nl, &dirs[i], &opts.tilts, opts.newton)?;
                        Ok((mobility(&p)?, cbar, correlation_table(&p, k.radius)))
                    })
                    .collect::<Result<_>>()?;
                let a: Vec<Tensor> = dirs
                    .par_iter()
                    .enumerate()
                    .map(|(i, e)| Ok(regular_moment(k, e, &solved[class[i]].2)?.scale(0.5)))
                    .collect::<Result<_>>()?;
                Ok(Self {
                    angles,
                    mu: class.iter().map(|&c| solved[c].0).collect(),
                    a,
                    tags: vec![FormulaTag::Regular; opts.directions],
                    cbar: class.iter().map(|&c| solved[c].1).collect(),
                })
            }
        }
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    /// Periodic cubic (Catmull-Rom) interpolation of `(mu, A, cbar)` at angle `theta`.
    /// `A` is interpolated through its components in the frame `(e, e_perp)`.
    pub fn interpolate(&self, theta: f64) -> (f64, Tensor, f64) {
        let n = self.len();
        let step = 2.0 * PI / n as f64;
        let x = (theta - self.angles[0]).rem_euclid(2.0 * PI) / step;
        let k = (x.floor() as usize) % n;
        let u = x - x.floor();
        let idx = |o: isize| ((k as isize + o).rem_euclid(n as isize)) as usize;
        let w = [
            0.5 * (-u * u * u + 2.0 * u * u - u),
            0.5 * (3.0 * u * u * u - 5.0 * u * u + 2.0),
            0.5 * (-3.0 * u * u * u + 4.0 * u * u + u),
            0.5 * (u * u * u - u * u),
        ];
        let mut mu = 0.0;
        let mut cbar = 0.0;
        let mut local = [0.0; 3];
        for (o, wo) in (-1..=2).zip(w) {
            let i = idx(o);
            mu += wo * self.mu[i];
            cbar += wo * self.cbar[i];
            let (e, t) = frame_at(self.angles[i]);
            let a = &self.a[i];
            local[0] += wo * a.quad(&e);
            local[1] += wo * bilinear(a, &e, &t);
            local[2] += wo * a.quad(&t);
        }
        let (e, t) = frame_at(theta);
        let mut a = Tensor::outer(&e).scale(local[0]);
        a.add_scaled(&Tensor::outer(&t), local[2]);
        for r in 0..2 {
            for c in 0..2 {
                a.m[r][c] += local[1] * (e[r] * t[c] + t[r] * e[c]);
            }
        }
        (mu, a, cbar)
    }

    /// Largest relative mismatch between the entries at `e` and `-e`.
    pub fn antipodal_defect(&self) -> f64 {
        let n = self.len();
        let mut worst: f64 = 0.0;
        for k in 0..n / 2 {
            let j = k + n / 2;
            worst = worst.max((self.mu[k] - self.mu[j]).abs() / self.mu[k].abs());
            let scale = self.a[k].m.iter().flatten().map(|v| v.abs()).fold(1e-300, f64::max);
            for r in 0..2 {
                for c in 0..2 {
                    worst = worst.max((self.a[k].m[r][c] - self.a[j].m[r][c]).abs() / scale);
                }
            }
        }
        worst
    }

    /// `angle,mu,A11,A12,A22,formula_tag,cbar`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("angle,mu,A11,A12,A22,formula_tag,cbar\n");
        for k in 0..self.len() {
            let a = &self.a[k];
            let num = [self.angles[k], self.mu[k], a.m[0][0], a.m[0][1], a.m[1][1]].map(fmt_num).join(",");
            s.push_str(&format!("{num},{},{}\n", self.tags[k], fmt_num(self.cbar[k])));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut out = Self { angles: vec![], mu: vec![], a: vec![], tags: vec![], cbar: vec![] };
        let bad = |line: usize, field: &str, message: String| Error::Config { line, field: field.into(), message };
        for (ln, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 7 {
                return Err(bad(ln + 1, "row", format!("expected 7 columns, found {}", cols.len())));
            }
            let num = |i: usize, name: &str| -> Result<f64> {
                cols[i].trim().parse::<f64>().map_err(|e| bad(ln + 1, name, e.to_string()))
            };
            let mut a = Tensor::zeros(2);
            a.m[0][0] = num(2, "A11")?;
            a.m[0][1] = num(3, "A12")?;
            a.m[1][0] = a.m[0][1];
            a.m[1][1] = num(4, "A22")?;
            out.angles.push(num(0, "angle")?);
            out.mu.push(num(1, "mu")?);
            out.a.push(a);
            out.tags.push(
                FormulaTag::parse(cols[5]).ok_or_else(|| bad(ln + 1, "formula_tag", format!("unknown tag `{}`", cols[5])))?,
            );
            out.cbar.push(num(6, "cbar")?);
        }
        if out.len() < 4 {
            return Err(bad(1, "row", "table needs at least 4 directions".into()));
        }
        Ok(out)
    }

    /// Isotropic table with constant `mu`, transverse eigenvalue `a_perp` and `cbar`.
    pub fn isotropic(directions: usize, mu: f64, a_perp: f64, cbar: f64, tag: FormulaTag) -> Self {
        let angles: Vec<f64> = (0..directions).map(|k| 2.0 * PI * k as f64 / directions as f64).collect();
        let a = angles.iter().map(|t| Tensor::outer(&[-t.sin(), t.cos()]).scale(a_perp)).collect();
        Self { mu: vec![mu; directions], a, tags: vec![tag; directions], cbar: vec![cbar; directions], angles }
    }
}

fn frame_at(theta: f64) -> ([f64; 2], [f64; 2]) {
    let (s, c) = theta.sin_cos();
    ([c, s], [-s, c])
}

fn bilinear(a: &Tensor, u: &[f64; 2], v: &[f64; 2]) -> f64 {
    (0..2).map(|r| (0..2).map(|c| u[r] * a.m[r][c] * v[c]).sum::<f64>()).sum()
}

fn same_marginal(a: &Reduced1D, b: &Reduced1D) -> bool {
    match (a, b) {
        (Reduced1D::Marginal { weighted: wa, .. }, Reduced1D::Marginal { weighted: wb, .. }) => {
            let scale = wa.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
            wa.len() == wb.len() && wa.iter().zip(wb).all(|(x, y)| (x - y).abs() <= 1e-12 * scale)
        }
        _ => false,
    }
}

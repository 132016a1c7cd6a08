//! Bistable nonlinearity f, its tilted equilibria and assumption checks.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    /// `k (u - a)(u - b)(u - c)`.
    Cubic { zeros: [f64; 3], scale: f64 },
    /// `-amplitude * sin(pi u)`.
    Sine { amplitude: f64 },
    Custom,
}

#[derive(Clone)]
pub struct Bistable {
    pub family: Family,
    f: ScalarFn,
    fprime: ScalarFn,
    /// Stable, unstable, stable zeros `(m_-, m_0, m_+)` at h = 0.
    pub zeros: [f64; 3],
    /// Admissible tilt range `|h| < h_max`.
    pub h_max: f64,
    /// Lipschitz constant of `h -> m_pm(h)`.
    pub c_f: f64,
}

impl fmt::Debug for Bistable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Bistable")
            .field("family", &self.family)
            .field("zeros", &self.zeros)
            .field("h_max", &self.h_max)
            .field("c_f", &self.c_f)
            .finish()
    }
}

impl Bistable {
    pub fn cubic() -> Self {
        Self::cubic_with(-1.0, 0.0, 1.0, 1.0).expect("standard cubic is valid")
    }

    pub fn cubic_with(a: f64, b: f64, c: f64, scale: f64) -> Result<Self> {
        if !(a < b && b < c && scale > 0.0) {
            return Err(Error::InvalidNonlinearity("cubic needs ordered zeros and positive scale".into()));
        }
        let f: ScalarFn = Arc::new(move |u| scale * (u - a) * (u - b) * (u - c));
        let fp: ScalarFn =
            Arc::new(move |u| scale * ((u - b) * (u - c) + (u - a) * (u - c) + (u - a) * (u - b)));
        Ok(Self::assemble(Family::Cubic { zeros: [a, b, c], scale }, f, fp, [a, b, c]))
    }

    pub fn sine() -> Self {
        Self::sine_with(1.0).expect("standard sine is valid")
    }

    pub fn sine_with(amplitude: f64) -> Result<Self> {
        if !(amplitude > 0.0) {
            return Err(Error::InvalidNonlinearity("sine amplitude must be positive".into()));
        }
        let f: ScalarFn = Arc::new(move |u| -amplitude * (PI * u).sin());
        let fp: ScalarFn = Arc::new(move |u| -amplitude * PI * (PI * u).cos());
        Ok(Self::assemble(Family::Sine { amplitude }, f, fp, [-1.0, 0.0, 1.0]))
    }

    /// Arbitrary C^1 nonlinearity with user-supplied zeros. Not validated here;
    /// see [`Bistable::validate`].
    pub fn custom(f: ScalarFn, fprime: ScalarFn, zeros: [f64; 3]) -> Self {
        Self::assemble(Family::Custom, f, fprime, zeros)
    }

    fn assemble(family: Family, f: ScalarFn, fprime: ScalarFn, zeros: [f64; 3]) -> Self {
        let mut nl = Self { family, f, fprime, zeros, h_max: 0.0, c_f: 0.0 };
        nl.h_max = nl.compute_h_max();
        let slope = nl.fp(zeros[0]).min(nl.fp(zeros[2]));
        nl.c_f = if slope > 0.0 { 1.5 / slope } else { f64::INFINITY };
        nl
    }

    #[inline]
    pub fn f(&self, u: f64) -> f64 {
        (self.f)(u)
    }

    #[inline]
    pub fn fp(&self, u: f64) -> f64 {
        (self.fprime)(u)
    }

    pub fn jump(&self) -> f64 {
        self.zeros[2] - self.zeros[0]
    }

    /// Largest |f'| on [m_-, m_+], sampled.
    pub fn max_abs_fprime(&self) -> f64 {
        let [a, _, c] = self.zeros;
        (0..=2000).map(|k| self.fp(a + (c - a) * k as f64 / 2000.0).abs()).fold(0.0, f64::max)
    }

    /// Largest h for which f - h keeps three transversal roots: the smaller of the
    /// positive hump of f on (m_-, m_0) and the negative dip on (m_0, m_+).
    fn compute_h_max(&self) -> f64 {
        let [a, b, c] = self.zeros;
        let hump = golden_max(|u| self.f(u), a, b);
        let dip = golden_max(|u| -self.f(u), b, c);
        hump.min(dip).max(0.0)
    }

    /// Roots `m_-(h) < m_0(h) < m_+(h)` of `f(m) = h`.
    pub fn roots(&self, h: f64) -> Result<[f64; 3]> {
        if !(h.abs() < self.h_max) {
            return Err(Error::TiltOutOfRange { h, h_max: self.h_max });
        }
        if h == 0.0 {
            return Ok(self.zeros);
        }
        let [a, b, c] = self.zeros;
        // Each root stays inside the monotone branch around its zero: bracket by the
        // extrema of f located on (a, b) and (b, c).
        let p = golden_arg(|u| self.f(u), a, b);
        let q = golden_arg(|u| -self.f(u), b, c);
        let lo = golden_arg(|u| -self.f(u), a - (b - a), a);
        let hi = golden_arg(|u| self.f(u), c, c + (c - b));
        let out = [
            self.branch_root(h, lo, p, a)?,
            self.branch_root(h, p, q, b)?,
            self.branch_root(h, q, hi, c)?,
        ];
        if !(out[0] < out[1] && out[1] < out[2]) {
            return Err(Error::TiltOutOfRange { h, h_max: self.h_max });
        }
        Ok(out)
    }

    /// Safeguarded Newton for f(m) = h in [lo, hi] seeded at `seed`.
    fn branch_root(&self, h: f64, lo: f64, hi: f64, seed: f64) -> Result<f64> {
        let g = |u: f64| self.f(u) - h;
        let (mut lo, mut hi) = (lo, hi);
        let (glo, ghi) = (g(lo), g(hi));
        if glo * ghi > 0.0 {
            return Err(Error::TiltOutOfRange { h, h_max: self.h_max });
        }
        let rising = ghi > glo;
        let mut x = seed.clamp(lo, hi);
        for _ in 0..200 {
            let gx = g(x);
            if gx == 0.0 {
                return Ok(x);
            }
            if (gx > 0.0) == rising {
                hi = x;
            } else {
                lo = x;
            }
            let d = self.fp(x);
            let mut next = if d != 0.0 { x - gx / d } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) || hi - lo <= 1e-15 * (1.0 + x.abs()) {
                return Ok(next);
            }
            x = next;
        }
        Err(Error::TiltOutOfRange { h, h_max: self.h_max })
    }

    /// Checks the bistability assumptions; failures are reported, not thrown.
    pub fn validate(&self) -> BistableReport {
        let [a, b, c] = self.zeros;
        let zero_values = [self.f(a), self.f(b), self.f(c)];
        let slopes = [self.fp(a), self.fp(b), self.fp(c)];
        let ordered = a < b && b < c;
        let n = 10_000;
        let mut sign_ok = ordered;
        if ordered {
            for k in 1..n {
                let t = k as f64 / n as f64;
                if self.f(a + (b - a) * t) <= 0.0 || self.f(b + (c - b) * t) >= 0.0 {
                    sign_ok = false;
                    break;
                }
            }
        }
        // Count sign changes of f across a wide window as a crude zero census.
        let lo = a - (c - a);
        let hi = c + (c - a);
        let mut zeros_found = 0;
        let mut prev = self.f(lo);
        for k in 1..=4 * n {
            let v = self.f(lo + (hi - lo) * k as f64 / (4 * n) as f64);
            if v == 0.0 || (prev != 0.0 && v.signum() != prev.signum()) {
                zeros_found += 1;
            }
            prev = v;
        }
        let checks = vec![
            Check::new("zeros", zero_values.iter().all(|v| v.abs() <= 1e-12), format!("f at zeros = {zero_values:?}")),
            Check::new("stable slopes", slopes[0] > 0.0 && slopes[2] > 0.0, format!("f'(m_-)={}, f'(m_+)={}", slopes[0], slopes[2])),
            Check::new("unstable slope", slopes[1] < 0.0, format!("f'(m_0)={}", slopes[1])),
            Check::new("sign pattern", sign_ok, "f > 0 on (m_-, m_0), f < 0 on (m_0, m_+)".into()),
            Check::new("bistability", zeros_found >= 3, format!("{zeros_found} sign changes of f found")),
        ];
        BistableReport { checks, slopes }
    }
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

#[derive(Debug, Clone)]
pub struct BistableReport {
    pub checks: Vec<Check>,
    /// f' at (m_-, m_0, m_+).
    pub slopes: [f64; 3],
}

impl BistableReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn golden_arg<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    // Coarse scan then golden-section refinement for a maximiser on [a, b].
    let n = 400;
    let mut best = a;
    let mut bv = f64::NEG_INFINITY;
    for k in 0..=n {
        let x = a + (b - a) * k as f64 / n as f64;
        let v = f(x);
        if v > bv {
            bv = v;
            best = x;
        }
    }
    let step = (b - a) / n as f64;
    let (mut lo, mut hi) = ((best - step).max(a), (best + step).min(b));
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let x1 = hi - r * (hi - lo);
        let x2 = lo + r * (hi - lo);
        if f(x1) > f(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    0.5 * (lo + hi)
}

fn golden_max<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let x = golden_arg(&f, a, b);
    f(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_h_max_is_local_max() {
        let nl = Bistable::cubic();
        assert!((nl.h_max - 2.0 / (3.0 * 3f64.sqrt())).abs() < 1e-12);
        assert!((Bistable::sine().h_max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn roots_at_zero_tilt_are_exact() {
        assert_eq!(Bistable::cubic().roots(0.0).unwrap(), [-1.0, 0.0, 1.0]);
        assert_eq!(Bistable::sine().roots(0.0).unwrap(), [-1.0, 0.0, 1.0]);
    }

    #[test]
    fn out_of_range_tilt() {
        let nl = Bistable::cubic();
        assert!(matches!(nl.roots(0.5), Err(Error::TiltOutOfRange { .. })));
    }

    #[test]
    fn monostable_fails_validation() {
        let nl = Bistable::custom(Arc::new(|u| u), Arc::new(|_| 1.0), [-1.0, 0.0, 1.0]);
        let r = nl.validate();
        assert!(!r.passed());
        assert!(!r.check("bistability").unwrap().passed);
    }
}

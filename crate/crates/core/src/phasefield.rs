//! Semi-implicit spectral evolution of `u_t = (I^eps[u] - f(u)) / (eps eta)`.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex;

use crate::bistable::Bistable;
use crate::error::{Error, Result};
use crate::front::{contour, Polyline, Snapshot};
use crate::kernels::{reduced_weight_a11, AngularWeight, KernelSpec};
use crate::nonlocal_op::{Field, PeriodicGrid, SpectralOperator};
use crate::traveling_wave::{standing_wave, NewtonOptions, WaveGrid, WaveProfile};

pub use crate::scaling::{Regime, ScalingRule};

/// Layer profiles `q0(r, e)` at uniformly spaced angles, or one profile for all directions.
#[derive(Debug, Clone)]
pub struct ProfileFamily {
    pub angles: Vec<f64>,
    pub profiles: Vec<WaveProfile>,
}

impl ProfileFamily {
    pub fn isotropic(profile: WaveProfile) -> Self {
        Self { angles: vec![profile.e[1].atan2(profile.e[0])], profiles: vec![profile] }
    }

    /// Profiles whose directions cover the circle at uniform spacing `2 pi / n`.
    pub fn new(mut profiles: Vec<WaveProfile>) -> Result<Self> {
        if profiles.len() == 1 {
            return Ok(Self::isotropic(profiles.remove(0)));
        }
        if profiles.len() < 4 {
            return Err(Error::Invalid(format!("{} profiles cannot cover the circle", profiles.len())));
        }
        let angle = |p: &WaveProfile| p.e[1].atan2(p.e[0]).rem_euclid(2.0 * PI);
        profiles.sort_by(|a, b| angle(a).partial_cmp(&angle(b)).unwrap());
        let angles: Vec<f64> = profiles.iter().map(angle).collect();
        let n = angles.len();
        let gaps: Vec<f64> = (0..n).map(|k| if k + 1 < n { angles[k + 1] - angles[k] } else { angles[0] + 2.0 * PI - angles[k] }).collect();
        let step = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
        if let Some(k) = gaps.iter().position(|g| (g - step).abs() > 1e-9) {
            return Err(Error::Invalid(format!(
                "profile directions leave a gap between angles {:.6} and {:.6} (spacing elsewhere {:.6})",
                angles[k],
                (angles[k] + gaps[k]).rem_euclid(2.0 * PI),
                step
            )));
        }
        Ok(Self { angles, profiles })
    }

    /// Standing waves for `directions` angles; isotropic kernels share one profile and
    /// power kernels reuse one solve through exact rescaling.
    pub fn for_kernel(spec: &KernelSpec, nl: &Bistable, grid: &WaveGrid, directions: usize, opts: NewtonOptions) -> Result<Self> {
        let e0 = [1.0, 0.0];
        let base = standing_wave(spec, nl, &e0, grid, opts)?;
        match spec {
            KernelSpec::Singular(k) if matches!(k.weight, AngularWeight::Isotropic) => Ok(Self::isotropic(base)),
            KernelSpec::Singular(_) => {
                let profiles = (0..directions)
                    .map(|j| {
                        let t = 2.0 * PI * j as f64 / directions as f64;
                        let e = [t.cos(), t.sin()];
                        base.rescaled(reduced_weight_a11(spec, &e)?, &e)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Self::new(profiles)
            }
            KernelSpec::Regular(_) => {
                let profiles = (0..directions)
                    .map(|j| {
                        let t = 2.0 * PI * j as f64 / directions as f64;
                        standing_wave(spec, nl, &[t.cos(), t.sin()], grid, opts)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Self::new(profiles)
            }
        }
    }

    pub fn roots(&self) -> [f64; 3] {
        self.profiles[0].roots
    }

    /// `q0(r, theta)`, Catmull-Rom blended over the four nearest angles.
    pub fn eval(&self, r: f64, theta: f64) -> f64 {
        let n = self.profiles.len();
        if n == 1 {
            return self.profiles[0].eval(r);
        }
        let step = 2.0 * PI / n as f64;
        let x = (theta - self.angles[0]).rem_euclid(2.0 * PI) / step;
        let k = x.floor() as isize;
        let u = x - x.floor();
        let w = [
            0.5 * (-u * u * u + 2.0 * u * u - u),
            0.5 * (3.0 * u * u * u - 5.0 * u * u + 2.0),
            0.5 * (-3.0 * u * u * u + 4.0 * u * u + u),
            0.5 * (u * u * u - u * u),
        ];
        (-1..=2).zip(w).map(|(o, wo)| wo * self.profiles[(k + o).rem_euclid(n as isize) as usize].eval(r)).sum()
    }
}

/// Time-step choice for [`run_until`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DtRule {
    /// `0.2 eps eta / max(1, max |f'|)`.
    Reaction,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub min: f64,
    pub max: f64,
    /// Largest excursion outside `[m_-, m_+]`.
    pub overshoot: f64,
    /// Field sits on the unstable zero `m_0` everywhere.
    pub unstable_equilibrium: bool,
}

#[derive(Clone)]
pub struct PhaseFieldState {
    pub field: Field,
    pub eps: f64,
    pub scaling: ScalingRule,
    pub time: f64,
    pub steps: usize,
    pub nl: Bistable,
    pub spec: KernelSpec,
    op: SpectralOperator,
    /// `(dt, 1 / (1 - dt m_eps / (eps eta)))` of the last step.
    multiplier: Option<(f64, Vec<f64>)>,
}

impl std::fmt::Debug for PhaseFieldState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PhaseFieldState")
            .field("dims", &self.field.grid.dims)
            .field("eps", &self.eps)
            .field("scaling", &self.scaling)
            .field("time", &self.time)
            .field("steps", &self.steps)
            .finish()
    }
}

/// `u0 = q0(d0 / eps, D d0)` near the front, smoothly taper to `m_-` / `m_+` between
/// `|d0| = 10 eps` and `20 eps`.
pub fn init_from_set<D: Fn(&[f64]) -> f64 + Sync>(
    d0: D,
    family: &ProfileFamily,
    spec: &KernelSpec,
    nl: &Bistable,
    eps: f64,
    grid: &PeriodicGrid,
) -> Result<PhaseFieldState> {
    if grid.dim() != 2 {
        return Err(Error::InvalidGrid("phase-field runs are 2D".into()));
    }
    let [m_minus, _, m_plus] = family.roots();
    let h = 0.25 * grid.min_spacing();
    let anisotropic = family.profiles.len() > 1;
    let field = Field::from_fn(grid, |x| {
        let d = d0(x);
        let far = if d > 0.0 { m_plus } else { m_minus };
        let a = d.abs() / eps;
        if a >= 20.0 {
            return far;
        }
        let theta = if anisotropic {
            let gx = (d0(&[x[0] + h, x[1]]) - d0(&[x[0] - h, x[1]])) / (2.0 * h);
            let gy = (d0(&[x[0], x[1] + h]) - d0(&[x[0], x[1] - h])) / (2.0 * h);
            gy.atan2(gx)
        } else {
            0.0
        };
        let q = family.eval(d / eps, theta);
        if a <= 10.0 {
            return q;
        }
        let s = (a - 10.0) / 10.0;
        let w = s * s * (3.0 - 2.0 * s);
        (1.0 - w) * q + w * far
    });
    PhaseFieldState::new(field, eps, spec, nl)
}

impl PhaseFieldState {
    pub fn new(field: Field, eps: f64, spec: &KernelSpec, nl: &Bistable) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Invalid(format!("eps = {eps} must lie in (0, 1)")));
        }
        field.check_finite()?;
        let op = SpectralOperator::new(spec, &field.grid, eps)?;
        Ok(Self {
            scaling: ScalingRule::for_spec(spec),
            field,
            eps,
            time: 0.0,
            steps: 0,
            nl: nl.clone(),
            spec: spec.clone(),
            op,
            multiplier: None,
        })
    }

    pub fn default_dt(&self) -> f64 {
        0.2 * self.eps * self.scaling.eta(self.eps) / self.nl.max_abs_fprime().max(1.0)
    }

    /// `u <- F^-1[ F[u - dt r f(u)] / (1 - dt r m_eps) ]` with `r = 1 / (eps eta)`.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::Invalid(format!("time step {dt} must be positive")));
        }
        let r = self.scaling.relaxation(self.eps);
        let stale = self.multiplier.as_ref().map_or(true, |(d, _)| *d != dt);
        if stale {
            let inv = self.op.symbol().par_iter().map(|m| 1.0 / (1.0 - dt * r * m)).collect();
            self.multiplier = Some((dt, inv));
        }
        let inv = &self.multiplier.as_ref().unwrap().1;
        let nl = &self.nl;
        let mut buf: Vec<Complex<f64>> =
            self.field.values.par_iter().map(|&u| Complex::new(u - dt * r * nl.f(u), 0.0)).collect();
        let fft = self.op.fft();
        fft.forward(&mut buf);
        buf.par_iter_mut().zip(inv.par_iter()).for_each(|(b, s)| *b *= s);
        fft.inverse(&mut buf);
        self.steps += 1;
        let bound = 10.0 * nl.zeros[0].abs().max(nl.zeros[2].abs());
        let mut sup: f64 = 0.0;
        for (u, b) in self.field.values.iter_mut().zip(&buf) {
            *u = b.re;
            sup = if u.is_finite() { sup.max(u.abs()) } else { f64::INFINITY };
        }
        if sup > bound {
            return Err(Error::Blowup { step: self.steps, dt, value: sup });
        }
        self.time += dt;
        Ok(())
    }

    pub fn diagnostics(&self) -> Diagnostics {
        let [m_minus, m0, m_plus] = self.nl.zeros;
        let (min, max) = (self.field.min(), self.field.max());
        let scale = (m_plus - m_minus).abs();
        let unstable_equilibrium = self.field.values.iter().all(|u| (u - m0).abs() <= 1e-9 * scale);
        Diagnostics { min, max, overshoot: (m_minus - min).max(max - m_plus).max(0.0), unstable_equilibrium }
    }

    /// Closed contours of `u = m_0`; components smaller than 4 cells are dropped.
    pub fn extract_front(&self) -> Result<Vec<Polyline>> {
        contour(&self.field, self.nl.zeros[1], 4.0)
    }
}

/// Evolve to `t_end`, recording fronts at the start, every `record_every` and at the end.
/// The largest overshoot seen is returned with the trajectory.
pub fn run_until(state: &mut PhaseFieldState, t_end: f64, rule: DtRule, record_every: f64) -> Result<(Vec<Snapshot>, f64)> {
    if !(t_end > state.time) {
        return Err(Error::Invalid(format!("end time {t_end} is not after the current time {}", state.time)));
    }
    let dt = match rule {
        DtRule::Reaction => state.default_dt(),
        DtRule::Fixed(dt) => dt,
    };
    let steps = ((t_end - state.time) / dt).ceil().max(1.0) as usize;
    let dt = (t_end - state.time) / steps as f64;
    let t0 = state.time;
    let mut out = vec![Snapshot { t: state.time, fronts: state.extract_front()? }];
    let mut overshoot = state.diagnostics().overshoot;
    let mut next = t0 + record_every;
    for k in 1..=steps {
        state.step(dt)?;
        state.time = t0 + k as f64 * dt;
        overshoot = overshoot.max(state.diagnostics().overshoot);
        if k == steps || state.time >= next - 1e-12 * dt {
            out.push(Snapshot { t: state.time, fronts: state.extract_front()? });
            while next <= state.time + 1e-12 * dt {
                next += record_every;
            }
        }
    }
    Ok((out, overshoot))
}

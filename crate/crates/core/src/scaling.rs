//! Time scaling `eta(eps)` of the rescaled reaction-diffusion equation.

use std::fmt;

use crate::kernels::{KernelKind, KernelSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regime {
    /// `eta = eps` (regular kernels and alpha > 1).
    Linear,
    /// `eta = eps |ln eps|` (alpha = 1, natural log).
    Logarithmic,
    /// `eta = eps^alpha` (alpha < 1).
    Power(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingRule {
    pub alpha: Option<f64>,
    pub kind: KernelKind,
    pub regime: Regime,
}

impl ScalingRule {
    pub fn for_spec(spec: &KernelSpec) -> Self {
        let alpha = spec.alpha();
        let regime = match alpha {
            None => Regime::Linear,
            Some(a) if (a - 1.0).abs() < 1e-12 => Regime::Logarithmic,
            Some(a) if a > 1.0 => Regime::Linear,
            Some(a) => Regime::Power(a),
        };
        Self { alpha, kind: spec.kind(), regime }
    }

    pub fn eta(&self, eps: f64) -> f64 {
        match self.regime {
            Regime::Linear => eps,
            Regime::Logarithmic => eps * eps.ln().abs(),
            Regime::Power(a) => eps.powf(a),
        }
    }

    /// Prefactor `1 / (eps * eta)` of the reaction-diffusion right-hand side.
    pub fn relaxation(&self, eps: f64) -> f64 {
        1.0 / (eps * self.eta(eps))
    }

    pub fn label(&self) -> &'static str {
        match self.regime {
            Regime::Linear => "eps",
            Regime::Logarithmic => "eps*|ln eps|",
            Regime::Power(_) => "eps^alpha",
        }
    }
}

impl fmt::Display for ScalingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "eta = {}", self.label())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::SingularKernel;

    #[test]
    fn regimes_follow_alpha() {
        let rule = |a: f64| ScalingRule::for_spec(&KernelSpec::Singular(SingularKernel::isotropic(2, a).unwrap()));
        assert_eq!(rule(1.5).eta(0.1), 0.1);
        assert!((rule(1.0).eta(0.1) - 0.1 * 10f64.ln()).abs() < 1e-15);
        assert!((rule(0.5).eta(0.04) - 0.2).abs() < 1e-15);
        assert!((rule(1.5).relaxation(0.1) - 100.0).abs() < 1e-9);
    }
}

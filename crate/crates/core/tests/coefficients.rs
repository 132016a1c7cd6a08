use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use frontlab::bistable::Bistable;
use frontlab::coefficients::*;
use frontlab::kernels::{matrix_ag, reduced_weight_a11, AngularWeight, KernelSpec, Reduced1D, RegularKernel, SingularKernel};
use frontlab::linalg::Tensor;
use frontlab::traveling_wave::*;
use proptest::prelude::*;
use statrs::function::gamma::gamma;

fn iso(alpha: f64) -> KernelSpec {
    KernelSpec::Singular(SingularKernel::isotropic(2, alpha).unwrap())
}

fn cos2(alpha: f64, beta: f64) -> KernelSpec {
    KernelSpec::Singular(SingularKernel::new(2, alpha, AngularWeight::Cos2 { beta, theta0: 0.0 }).unwrap())
}

fn base_wave(alpha: f64, nl: &Bistable) -> WaveProfile {
    let op = ReducedOperator::new(&WaveGrid::default(), &Reduced1D::power(1.0, alpha));
    standing_wave_on(&op, nl, &[1.0, 0.0], NewtonOptions::default()).unwrap()
}

fn pn() -> &'static WaveProfile {
    static W: OnceLock<WaveProfile> = OnceLock::new();
    W.get_or_init(|| base_wave(1.0, &Bistable::sine()))
}

fn cubic15() -> &'static WaveProfile {
    static W: OnceLock<WaveProfile> = OnceLock::new();
    W.get_or_init(|| base_wave(1.5, &Bistable::cubic()))
}

fn cubic05() -> &'static WaveProfile {
    static W: OnceLock<WaveProfile> = OnceLock::new();
    W.get_or_init(|| base_wave(0.5, &Bistable::cubic()))
}

/// Base wave rescaled to the isotropic weight a11(e) in direction e.
fn directed(base: &WaveProfile, spec: &KernelSpec, e: [f64; 2]) -> WaveProfile {
    base.rescaled(reduced_weight_a11(spec, &e).unwrap(), &e).unwrap()
}

fn iso_table15() -> &'static CoefficientTable {
    static T: OnceLock<CoefficientTable> = OnceLock::new();
    T.get_or_init(|| CoefficientTable::build(&iso(1.5), &Bistable::cubic(), &TableOptions::default()).unwrap())
}

/// Fractional curvature of a circle of radius r for g = 1, N = 2:
/// integral over the lens between the tangent and the circle, in closed form.
fn kappa_circle(alpha: f64, r: f64) -> f64 {
    (2.0 * r).powf(-alpha) / alpha * PI.sqrt() * gamma((1.0 - alpha) / 2.0) / gamma(1.0 - alpha / 2.0)
}

fn max_entry(t: &Tensor) -> f64 {
    t.m.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[test]
fn mobility_of_peierls_nabarro_layer() {
    let mu = mobility(pn()).unwrap();
    assert!((mu - PI / 2.0).abs() < 1e-3, "mu = {mu}");
}

#[test]
fn mobility_needs_standing_wave() {
    let op = ReducedOperator::new(&WaveGrid::geometric(256, 1.02, 60.0).unwrap(), &Reduced1D::power(1.0, 1.5));
    let tilted = solve_wave_on(&op, &Bistable::cubic(), &[1.0, 0.0], 0.01, NewtonOptions::default()).unwrap();
    assert!(mobility(&tilted).is_err());
    assert!(mobility(pn()).unwrap() > 0.0);
}

#[test]
fn isotropic_table_collapses() {
    let t = iso_table15();
    assert_eq!(t.len(), 64);
    let mu0 = t.mu[0];
    for k in 0..t.len() {
        assert!((t.mu[k] / mu0 - 1.0).abs() < 1e-6);
        assert_eq!(t.tags[k], FormulaTag::SingularGt1);
        // Single transverse eigenvalue, the same in every direction.
        let th = t.angles[k];
        let tan = [-th.sin(), th.cos()];
        let ratio = t.a[k].quad(&tan) / t.a[0].quad(&[0.0, 1.0]);
        assert!((ratio - 1.0).abs() < 1e-4, "direction {k}: {ratio}");
        assert!((t.a[k].m[0][1] - t.a[k].m[1][0]).abs() < 1e-14);
    }
    assert!(t.antipodal_defect() < 1e-10);
}

#[test]
fn table_speed_slope_is_jump_times_mobility() {
    // Testing c(h) against q' gives c int q'^2 = h jump + O(h^2).
    let t = iso_table15();
    for k in [0, 13, 40] {
        let expect = 2.0 * t.mu[k];
        assert!((t.cbar[k] / expect - 1.0).abs() < 1e-3, "{} vs {}", t.cbar[k], expect);
    }
}

#[test]
fn table_csv_roundtrip_and_interpolation() {
    let t = iso_table15();
    let csv = t.to_csv();
    assert!(csv.starts_with("angle,mu,A11,A12,A22,formula_tag,cbar\n"));
    let back = CoefficientTable::from_csv(&csv).unwrap();
    assert_eq!(back.len(), t.len());
    for k in 0..t.len() {
        assert_eq!(back.mu[k], t.mu[k]);
        assert_eq!(back.a[k], t.a[k]);
        assert_eq!(back.tags[k], t.tags[k]);
    }
    let (mu, a, _) = t.interpolate(0.3);
    assert!((mu / t.mu[0] - 1.0).abs() < 1e-6);
    let tan = [-(0.3f64).sin(), 0.3f64.cos()];
    assert!((a.quad(&tan) / t.a[0].quad(&[0.0, 1.0]) - 1.0).abs() < 1e-3);
    let broken = csv.replace("singular_gt1", "bogus");
    assert!(matches!(CoefficientTable::from_csv(&broken), Err(frontlab::Error::Config { .. })));
}

#[test]
fn anisotropic_table_is_even_and_varies() {
    let spec = cos2(1.5, 0.3);
    let opts = TableOptions { directions: 16, ..TableOptions::default() };
    let t = CoefficientTable::build(&spec, &Bistable::cubic(), &opts).unwrap();
    assert!(t.antipodal_defect() < 1e-8, "{}", t.antipodal_defect());
    let spread = t.mu.iter().cloned().fold(f64::MIN, f64::max) / t.mu.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread > 1.05, "mobility spread {spread}");
    for (k, a) in t.a.iter().enumerate() {
        let th = t.angles[k];
        assert!(a.quad(&[-th.sin(), th.cos()]) > 0.0);
        assert!(t.mu[k] > 0.0);
    }
}

#[test]
fn appendix_identity() {
    let p = directed(cubic15(), &iso(1.5), [1.0, 0.0]);
    let r = appendix_k(&p, 1.5).unwrap();
    assert!(r.k_direct.is_finite() && r.k_direct > 0.0);
    let s_alpha = &r.candidates[0];
    assert!(!s_alpha.finite && s_alpha.value.is_infinite());
    // Frozen outcome: the convergent closure is twice K, so neither candidate equals K.
    let ratio = r.ratio(2.5).unwrap();
    assert!((ratio - 2.0).abs() < 1e-6, "S_(1+alpha)/K = {ratio}");
    assert_eq!(r.matched, None);
    assert!(appendix_k(&p, 0.8).is_err());
}

#[test]
fn correlation_is_even() {
    let p = cubic15();
    for z in [0.3, 2.0, 17.0] {
        let a = derivative_correlation(p, z);
        let b = derivative_correlation(p, -z);
        assert!((a - b).abs() < 1e-10 * a.abs().max(1e-12), "z={z}: {a} {b}");
    }
    // Half-line doubling equals the full-line integral of H.
    let full = frontlab::quad::adaptive(|z| derivative_correlation(p, z), -30.0, 30.0, &[0.0], 1e-12, 1e-10, 200).value;
    let half = frontlab::quad::adaptive(|z| derivative_correlation(p, z), 0.0, 30.0, &[], 1e-12, 1e-10, 200).value;
    assert!((full - 2.0 * half).abs() < 1e-9);
}

#[test]
fn literal_gt1_matrix_is_factor_times_ag() {
    let spec = cos2(1.5, 0.3);
    let e = [0.6, 0.8];
    let p = directed(cubic15(), &spec, e);
    let a = matrix_a_singular_gt1(&p, &spec).unwrap();
    let factor = closure_integral(&p, 2.5).unwrap();
    assert!(factor.finite && factor.value > 0.0);
    let ag = matrix_ag(&spec, &e).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            assert!((a.m[i][j] - factor.value * ag.m[i][j]).abs() < 1e-12 * max_entry(&a));
        }
    }
    assert!(matrix_a_singular_gt1(pn(), &iso(1.0)).is_err());
}

#[test]
fn equatorial_matrix_examples() {
    let nl = Bistable::cubic();
    let e = [0.6, 0.8];
    let th = [-0.8, 0.6];
    let a = matrix_a_singular_eq1(&iso(1.0), &nl, &e).unwrap();
    let expect = Tensor::outer(&th).scale(8.0);
    for i in 0..2 {
        for j in 0..2 {
            assert!((a.m[i][j] - expect.m[i][j]).abs() < 1e-14);
        }
    }
    // Annihilates e, rank one.
    assert!(a.quad(&e).abs() < 1e-14);
    assert!((a.m[0][0] * a.m[1][1] - a.m[0][1] * a.m[1][0]).abs() < 1e-12);
    // Linear in beta.
    let at = |b: f64| matrix_a_singular_eq1(&cos2(1.0, b), &nl, &e).unwrap().m[0][1];
    assert!((at(0.2) - 0.5 * (at(0.0) + at(0.4))).abs() < 1e-13);
    assert!(matrix_a_singular_eq1(&iso(1.5), &nl, &e).is_err());
}

#[test]
fn regular_matrix_small_support_limit() {
    let grid = WaveGrid::geometric(256, 1.02, 60.0).unwrap();
    let wide = KernelSpec::Regular(RegularKernel::bump(2, 1.0, 4.0).unwrap());
    let e = [1.0, 0.0];
    let p = standing_wave(&wide, &Bistable::cubic(), &e, &grid, NewtonOptions::default()).unwrap();
    let a = matrix_a_regular(&p, &wide).unwrap();
    assert!((a.m[0][1] - a.m[1][0]).abs() < 1e-15);
    for v in [[1.0, 0.0], [0.0, 1.0], [0.7, -0.7]] {
        assert!(a.quad(&v) > 0.0);
    }
    // With a support much narrower than the layer, q'(xi + e.z) ~ q'(xi).
    let rho = 0.02;
    let narrow = RegularKernel::bump(2, rho, 1.0).unwrap();
    let second = narrow.radial_integral(|z, _| z[1] * z[1]);
    let an = matrix_a_regular(&p, &KernelSpec::Regular(narrow)).unwrap();
    let oracle = p.dot_l2() * second;
    assert!((an.m[1][1] / oracle - 1.0).abs() < 1e-3, "{} vs {}", an.m[1][1], oracle);
    assert!(matrix_a_regular(cubic15(), &iso(1.5)).is_err());
}

#[test]
fn affine_probe_gives_zero() {
    let spec = iso(1.5);
    let p = directed(cubic15(), &spec, [1.0, 0.0]);
    let probe = DistanceProbe::affine([1.0, 0.0], [0.0, 0.0], [0.0, 0.0]).unwrap();
    assert_eq!(abar_eps(&spec, &p, &probe, 0.05).unwrap().value, 0.0);
}

#[test]
fn oscillating_average_converges_to_table() {
    let spec = iso(1.5);
    let p = directed(cubic15(), &spec, [1.0, 0.0]);
    let ev = AbarEvaluator::new(&spec, &p).unwrap();
    // d = |x - c| - 1 at the rightmost point of the unit circle centred at (-1, 0).
    let probe = DistanceProbe::circle([-1.0, 0.0], 1.0, [0.0, 0.0]).unwrap();
    let eps = [0.1, 0.05, 0.025, 0.0125];
    let lim = ev.limit(&probe, &eps).unwrap();
    let (_, a, _) = iso_table15().interpolate(0.0);
    let target = a.contract(&probe.hessian);
    let errs: Vec<f64> = lim.samples.iter().map(|s| (s.value - target).abs()).collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    let x = lim.extrapolation.expect("Richardson limit");
    assert!((x.limit / target - 1.0).abs() < 0.05, "{} vs {}", x.limit, target);
    // Reflection flips the limit.
    let refl = ev.limit(&probe.reflected().unwrap(), &eps).unwrap();
    assert!((refl.value() + x.limit).abs() < 1e-6 * x.limit.abs());
}

#[test]
fn sublinear_average_matches_fractional_curvature() {
    let spec = iso(0.5);
    let p = directed(cubic05(), &spec, [1.0, 0.0]);
    let ev = AbarEvaluator::new(&spec, &p).unwrap();
    let eps: Vec<f64> = (0..4).map(|k| 1e-5 * 0.25f64.powi(k)).collect();
    let limit = |r: f64| {
        let probe = DistanceProbe::circle([-r, 0.0], r, [0.0, 0.0]).unwrap();
        ev.limit(&probe, &eps).unwrap().value()
    };
    let one = limit(1.0);
    let oracle = 4.0 * kappa_circle(0.5, 1.0);
    assert!((one / oracle - 1.0).abs() < 0.05, "{one} vs {oracle}");
    // Dilation by 2 scales the limit by 2^{-alpha}.
    let two = limit(2.0);
    assert!((two / one - 2f64.powf(-0.5)).abs() < 0.02, "{}", two / one);
    let flat = DistanceProbe::affine([1.0, 0.0], [0.0, 0.0], [0.0, 0.0]).unwrap();
    assert_eq!(abar_eps_sublinear(&spec, &p, &flat, 1e-3).unwrap().value, 0.0);
    assert!(abar_eps_sublinear(&iso(1.5), &directed(cubic15(), &iso(1.5), [1.0, 0.0]), &flat, 0.1).is_err());
}

#[test]
fn probe_validation() {
    let c = DistanceProbe::circle([0.0, 0.0], 2.0, [2.0, 0.0]).unwrap();
    assert_eq!(c.e, [1.0, 0.0]);
    assert!((c.hessian.m[1][1] - 0.5).abs() < 1e-15 && c.hessian.m[0][0].abs() < 1e-15);
    let f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync> = Arc::new(|y: &[f64]| y[0].hypot(y[1]) - 2.0);
    let custom = DistanceProbe::custom(f, [2.0, 0.0]).unwrap();
    assert!((custom.hessian.m[1][1] - 0.5).abs() < 1e-6);
    let r = c.reflected().unwrap();
    assert!((r.hessian.m[1][1] + 0.5).abs() < 1e-15);
    assert_eq!(r.e, c.e);
    let steep: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync> = Arc::new(|y: &[f64]| 2.0 * y[0]);
    assert!(DistanceProbe::custom(steep, [0.0, 0.0]).is_err());
}

#[test]
fn eps_outside_range_is_rejected() {
    let spec = iso(1.5);
    let p = directed(cubic15(), &spec, [1.0, 0.0]);
    let probe = DistanceProbe::circle([-1.0, 0.0], 1.0, [0.0, 0.0]).unwrap();
    assert!(abar_eps(&spec, &p, &probe, 0.7).is_err());
    let wrong = DistanceProbe::circle([0.0, -1.0], 1.0, [0.0, 0.0]).unwrap();
    assert!(abar_eps(&spec, &p, &wrong, 0.05).is_err());
    assert!(abar_eps(&spec, &p, &probe, 0.3).unwrap().flagged);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn second_order_matches_naive_difference(x in -1.0f64..1.0, y in -1.0f64..1.0, r in 0.5f64..3.0) {
        let probe = DistanceProbe::circle([-r, 0.0], r, [0.0, 0.0]).unwrap();
        let z = [0.3 * x, 0.3 * y];
        let naive = probe.eval(&z) - probe.eval(&[0.0, 0.0]) - probe.e[0] * z[0] - probe.e[1] * z[1];
        prop_assert!((probe.second_order(&z) - naive).abs() < 1e-13);
    }

    #[test]
    fn interpolation_hits_nodes(k in 0usize..64) {
        let t = iso_table15();
        let (mu, a, cbar) = t.interpolate(t.angles[k]);
        prop_assert!((mu - t.mu[k]).abs() < 1e-12 * mu);
        prop_assert!((cbar - t.cbar[k]).abs() < 1e-12 * cbar.abs());
        prop_assert!((a.m[0][1] - t.a[k].m[0][1]).abs() < 1e-12 * max_entry(&t.a[k]));
    }
}

#[test]
fn regular_table_halves_the_literal_matrix() {
    let spec = KernelSpec::Regular(RegularKernel::bump(2, 1.0, 4.0).unwrap());
    let nl = Bistable::cubic();
    let grid = WaveGrid::geometric(256, 1.02, 60.0).unwrap();
    let opts = TableOptions { directions: 8, grid: grid.clone(), ..TableOptions::default() };
    let t = CoefficientTable::build(&spec, &nl, &opts).unwrap();
    assert!(t.tags.iter().all(|&g| g == FormulaTag::Regular));
    assert!(t.antipodal_defect() < 1e-8);
    let e = [t.angles[1].cos(), t.angles[1].sin()];
    let p = standing_wave(&spec, &nl, &e, &grid, NewtonOptions::default()).unwrap();
    let lit = matrix_a_regular(&p, &spec).unwrap();
    assert!((t.a[1].m[0][1] / lit.m[0][1] - 0.5).abs() < 1e-6);
    assert!((t.mu[1] / mobility(&p).unwrap() - 1.0).abs() < 1e-10);
}

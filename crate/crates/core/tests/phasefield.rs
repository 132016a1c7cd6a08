use std::f64::consts::PI;
use std::sync::OnceLock;

use frontlab::bistable::Bistable;
use frontlab::coefficients::{CoefficientTable, TableOptions};
use frontlab::front::{front_distance, Polyline, Snapshot};
use frontlab::kernels::{KernelSpec, SingularKernel};
use frontlab::nonlocal_op::{Field, PeriodicGrid};
use frontlab::phasefield::*;
use frontlab::sharp_interface::{circle_radius, extinction_time};
use frontlab::traveling_wave::{NewtonOptions, WaveGrid};
use frontlab::Error;

fn iso(alpha: f64) -> KernelSpec {
    KernelSpec::Singular(SingularKernel::isotropic(2, alpha).unwrap())
}

struct Setup {
    spec: KernelSpec,
    nl: Bistable,
    family: ProfileFamily,
    mu_abar: f64,
}

/// Isotropic alpha = 1.5 kernel with the cubic nonlinearity.
fn cubic15() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| {
        let spec = iso(1.5);
        let nl = Bistable::cubic();
        let family = ProfileFamily::for_kernel(&spec, &nl, &WaveGrid::default(), 64, NewtonOptions::default()).unwrap();
        let opts = TableOptions { directions: 4, tilts: vec![0.02], ..Default::default() };
        let table = CoefficientTable::build(&spec, &nl, &opts).unwrap();
        let (mu, a, _) = table.interpolate(0.0);
        Setup { spec, nl, family, mu_abar: mu * a.quad(&[0.0, 1.0]) }
    })
}

fn disk_state(s: &Setup, n: usize, l: f64, c: [f64; 2], r: f64, eps: f64) -> PhaseFieldState {
    let grid = PeriodicGrid::cube(2, n, l).unwrap();
    init_from_set(|x| (x[0] - c[0]).hypot(x[1] - c[1]) - r, &s.family, &s.spec, &s.nl, eps, &grid).unwrap()
}

fn single(s: &Snapshot) -> &Polyline {
    assert_eq!(s.fronts.len(), 1, "expected one front at t = {}", s.t);
    &s.fronts[0]
}

#[test]
fn stable_constant_is_a_fixed_point() {
    let s = cubic15();
    let grid = PeriodicGrid::cube(2, 32, 1.0).unwrap();
    let mut st = PhaseFieldState::new(Field::constant(&grid, 1.0), 0.05, &s.spec, &s.nl).unwrap();
    for _ in 0..5 {
        st.step(st.default_dt()).unwrap();
    }
    assert!(st.field.values.iter().all(|u| (u - 1.0).abs() < 1e-14));
    assert!(!st.diagnostics().unstable_equilibrium);
    assert_eq!(st.diagnostics().overshoot, 0.0);
}

#[test]
fn unstable_constant_is_flagged() {
    let s = cubic15();
    let grid = PeriodicGrid::cube(2, 32, 1.0).unwrap();
    let mut st = PhaseFieldState::new(Field::constant(&grid, 0.0), 0.05, &s.spec, &s.nl).unwrap();
    st.step(st.default_dt()).unwrap();
    assert!(st.field.values.iter().all(|u| u.abs() < 1e-14));
    assert!(st.diagnostics().unstable_equilibrium);
    assert!((st.time - st.default_dt()).abs() < 1e-18);
}

#[test]
fn step_validates_and_reports_blowup_dt() {
    let s = cubic15();
    let grid = PeriodicGrid::cube(2, 32, 1.0).unwrap();
    let mut st = PhaseFieldState::new(Field::from_fn(&grid, |x| 2.0 * (2.0 * PI * x[0]).sin()), 0.05, &s.spec, &s.nl).unwrap();
    assert!(matches!(st.step(0.0), Err(Error::Invalid(_))));
    let dt = 1e3 * st.default_dt();
    let err = (0..20).find_map(|_| st.step(dt).err()).expect("oversized step must blow up");
    match &err {
        Error::Blowup { dt: d, .. } => assert_eq!(*d, dt),
        other => panic!("unexpected error {other:?}"),
    }
    assert!(err.to_string().contains("dt = "));
}

#[test]
fn state_rejects_bad_eps_and_non_2d_init() {
    let s = cubic15();
    let grid = PeriodicGrid::cube(2, 32, 1.0).unwrap();
    assert!(PhaseFieldState::new(Field::constant(&grid, 1.0), 1.5, &s.spec, &s.nl).is_err());
    let line = PeriodicGrid::cube(1, 64, 1.0).unwrap();
    assert!(matches!(
        init_from_set(|x| x[0] - 0.5, &s.family, &s.spec, &s.nl, 0.05, &line),
        Err(Error::InvalidGrid(_))
    ));
}

#[test]
fn profile_family_reports_direction_gaps() {
    let s = cubic15();
    let base = &s.family.profiles[0];
    let at = |k: usize| {
        let t = 2.0 * PI * k as f64 / 8.0;
        base.rescaled(base.a11().unwrap(), &[t.cos(), t.sin()]).unwrap()
    };
    let full = ProfileFamily::new((0..8).map(at).collect()).unwrap();
    assert_eq!(full.angles.len(), 8);
    assert!((full.eval(0.7, 1.234) - base.eval(0.7)).abs() < 1e-12);
    let err = ProfileFamily::new([0, 1, 2, 3, 5, 6, 7].into_iter().map(at).collect()).unwrap_err();
    assert!(err.to_string().contains("gap between angles 2.356194 and 3.926991"), "{err}");
}

#[test]
fn anisotropic_family_blends_rescaled_profiles() {
    use frontlab::kernels::AngularWeight;
    let spec = KernelSpec::Singular(SingularKernel::new(2, 1.5, AngularWeight::Cos2 { beta: 0.3, theta0: 0.0 }).unwrap());
    let nl = Bistable::cubic();
    let fam = ProfileFamily::for_kernel(&spec, &nl, &WaveGrid::default(), 16, NewtonOptions::default()).unwrap();
    assert_eq!(fam.profiles.len(), 16);
    for (k, p) in fam.profiles.iter().enumerate() {
        assert!((fam.eval(0.8, fam.angles[k]) - p.eval(0.8)).abs() < 1e-12);
        assert!(fam.eval(0.0, fam.angles[k]).abs() < 1e-12);
    }
    // Between nodes the blend stays within the bracket of its neighbours' values.
    let mid = 0.5 * (fam.angles[1] + fam.angles[2]);
    let (a, b) = (fam.profiles[1].eval(1.0), fam.profiles[2].eval(1.0));
    let v = fam.eval(1.0, mid);
    assert!(v > a.min(b) - 1e-3 && v < a.max(b) + 1e-3);
}

#[test]
fn disk_initial_datum_is_radial_and_pinned() {
    let s = cubic15();
    let n = 128;
    let l = 4.0;
    let h = l / n as f64;
    let r = 24.0 * h;
    let st = disk_state(s, n, l, [2.0, 2.0], r, 0.02);
    let u = |i: isize, j: isize| st.field.values[st.field.grid.flat(&[64 + i, 64 + j])];
    assert!(u(24, 0).abs() < 1e-14 && u(0, -24).abs() < 1e-14);
    // Nodes at the same distance from the centre carry the same value.
    for (i, j) in [(3, 7), (10, 21), (15, 20), (0, 30)] {
        let v = u(i, j);
        for w in [u(-i, j), u(j, -i), u(-j, -i), u(i, -j)] {
            assert!((v - w).abs() < 1e-13);
        }
    }
    // (0, 25) and (7, 24) share |x|^2 = 625.
    assert!((u(0, 25) - u(7, 24)).abs() < 1e-13);
    assert!(u(0, 0) == -1.0 && u(60, 60) == 1.0);
}

#[test]
fn layer_width_shrinks_linearly_in_eps() {
    let s = cubic15();
    let count = |eps: f64| {
        let st = disk_state(s, 512, 2.0, [1.0, 1.0], 0.6, eps);
        st.field.values.iter().filter(|&&u| (u + 1.0).abs() > 0.1 && (u - 1.0).abs() > 0.1).count() as f64
    };
    let c = [count(0.04), count(0.02), count(0.01)];
    for w in c.windows(2) {
        let ratio = w[1] / w[0];
        assert!((ratio - 0.5).abs() < 0.05, "ratio {ratio}");
    }
}

#[test]
fn far_field_approaches_the_stable_state() {
    let s = cubic15();
    let grid = PeriodicGrid::cube(2, 32, 1.0).unwrap();
    let eps = 0.01;
    let dev = |gamma: f64| {
        let st = init_from_set(|_| gamma, &s.family, &s.spec, &s.nl, eps, &grid).unwrap();
        (st.field.max() - 1.0).abs()
    };
    let q = &s.family.profiles[0];
    let mut prev = f64::INFINITY;
    for k in 1..=25 {
        let gamma = k as f64 * eps;
        let d = dev(gamma);
        assert!(d <= (1.0 - q.eval(k as f64)).abs() + 1e-12 && d <= prev, "gamma / eps = {k}");
        if k >= 20 {
            assert_eq!(d, 0.0);
        }
        prev = d;
    }
}

#[test]
fn front_extraction_on_constant_and_noisy_fields() {
    let s = cubic15();
    let grid = PeriodicGrid::cube(2, 64, 2.0).unwrap();
    let st = PhaseFieldState::new(Field::constant(&grid, 1.0), 0.05, &s.spec, &s.nl).unwrap();
    assert!(st.extract_front().unwrap().is_empty());

    let mut st = disk_state(s, 64, 2.0, [1.0, 1.0], 0.5, 0.05);
    let fronts = st.extract_front().unwrap();
    assert_eq!(fronts.len(), 1);
    let h = 2.0 / 64.0;
    for p in &fronts[0].points {
        assert!(((p[0] - 1.0).hypot(p[1] - 1.0) - 0.5).abs() < h);
    }
    // Isolated flipped nodes give sub-threshold islands that are filtered out.
    let mut seed: u64 = 0x9e37_79b9_7f4a_7c15;
    for _ in 0..40 {
        seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let k = (seed >> 33) as usize % grid.len();
        let u = &mut st.field.values[k];
        if u.abs() > 0.99 {
            *u = -*u;
        }
    }
    let noisy = st.extract_front().unwrap();
    assert_eq!(noisy.len(), 1);
    assert!(noisy[0].closed);
}

#[test]
fn peierls_nabarro_layer_is_stationary() {
    let spec = iso(1.0);
    let nl = Bistable::sine();
    let family = ProfileFamily::for_kernel(&spec, &nl, &WaveGrid::default(), 64, NewtonOptions::default()).unwrap();
    assert_eq!(family.profiles.len(), 1);
    let (n, l) = (512, 8.0);
    let h = l / n as f64;
    let grid = PeriodicGrid::new(&[n, 32], &[l, 32.0 * h]).unwrap();
    let mut st = init_from_set(|x| 2.0 - (x[0] - 4.0).abs(), &family, &spec, &nl, 0.05, &grid).unwrap();
    let crossings = |st: &PhaseFieldState| {
        let row: Vec<f64> = (0..n).map(|i| st.field.values[st.field.grid.flat(&[i as isize, 5])]).collect();
        (0..n - 1)
            .filter(|&i| row[i].signum() != row[i + 1].signum())
            .map(|i| (i as f64 + row[i] / (row[i] - row[i + 1])) * h)
            .collect::<Vec<_>>()
    };
    let before = crossings(&st);
    assert_eq!(before.len(), 2);
    let (_, overshoot) = run_until(&mut st, 1.0, DtRule::Reaction, 0.5).unwrap();
    let after = crossings(&st);
    assert_eq!(after.len(), 2);
    for (a, b) in before.iter().zip(&after) {
        assert!((a - b).abs() < h, "layer moved from {a} to {b}");
    }
    assert!(overshoot <= 1e-3);
}

#[test]
fn shrinking_disk_follows_the_circle_law() {
    let s = cubic15();
    let r0 = 1.0;
    let mut st = disk_state(s, 256, 12.0, [6.0, 6.0], r0, 0.02);
    let t_ext = extinction_time(r0, s.mu_abar);
    let (snaps, overshoot) = run_until(&mut st, 0.4 * t_ext, DtRule::Reaction, 0.05 * t_ext).unwrap();
    assert!(snaps.len() >= 9);
    for snap in &snaps {
        let r = single(snap).equivalent_radius();
        let exact = circle_radius(r0, s.mu_abar, snap.t).unwrap();
        assert!((r / exact - 1.0).abs() < 0.05, "t = {}: radius {r} vs {exact}", snap.t);
    }
    assert!(overshoot <= 1e-3);
}

#[test]
fn small_disk_vanishes_in_finite_time() {
    let s = cubic15();
    let r0 = 0.3;
    let mut st = disk_state(s, 128, 3.0, [1.5, 1.5], r0, 0.03);
    let t_ext = extinction_time(r0, s.mu_abar);
    let (snaps, overshoot) = run_until(&mut st, 1.5 * t_ext, DtRule::Reaction, 0.1 * t_ext).unwrap();
    assert!(!snaps[0].fronts.is_empty());
    let gone = snaps.iter().position(|s| s.fronts.is_empty()).expect("disk must vanish");
    assert!(snaps[gone..].iter().all(|s| s.fronts.is_empty()));
    assert!(snaps[gone].t > 0.5 * t_ext);
    assert!(st.field.min() > 0.0);
    assert!(overshoot <= 1e-3);
}

#[test]
fn distant_fronts_evolve_independently() {
    let s = cubic15();
    let (n, l, r, eps) = (256, 12.0, 0.5, 0.04);
    let grid = PeriodicGrid::cube(2, n, l).unwrap();
    let one = |x: &[f64]| (x[0] - 3.0).hypot(x[1] - 6.0) - r;
    let other = |x: &[f64]| (x[0] - 9.0).hypot(x[1] - 6.0) - r;
    let mut alone = init_from_set(one, &s.family, &s.spec, &s.nl, eps, &grid).unwrap();
    let mut pair = init_from_set(|x| one(x).min(other(x)), &s.family, &s.spec, &s.nl, eps, &grid).unwrap();
    let t = 0.5 * extinction_time(r, s.mu_abar);
    run_until(&mut alone, t, DtRule::Reaction, t).unwrap();
    run_until(&mut pair, t, DtRule::Reaction, t).unwrap();
    let a = alone.extract_front().unwrap();
    let b: Vec<Polyline> = pair.extract_front().unwrap().into_iter().filter(|p| p.centroid()[0] < 6.0).collect();
    assert_eq!((a.len(), b.len()), (1, 1));
    let (haus, _) = front_distance(&a, &b);
    assert!(haus < 1e-3, "hausdorff {haus}");
}

#[test]
fn nested_disks_give_nested_fronts() {
    let s = cubic15();
    let mut inner = disk_state(s, 128, 4.0, [2.0, 2.0], 0.4, 0.04);
    let mut outer = disk_state(s, 128, 4.0, [2.0, 2.0], 0.55, 0.04);
    let t = 0.9 * extinction_time(0.4, s.mu_abar);
    let (a, oa) = run_until(&mut inner, t, DtRule::Reaction, 0.1 * t).unwrap();
    let (b, ob) = run_until(&mut outer, t, DtRule::Reaction, 0.1 * t).unwrap();
    assert_eq!(a.len(), b.len());
    for (sa, sb) in a.iter().zip(&b) {
        assert!((sa.t - sb.t).abs() < 1e-12);
        let big = single(sb);
        for f in &sa.fronts {
            assert!(f.points.iter().all(|&p| big.contains(p)), "fronts cross at t = {}", sa.t);
        }
    }
    assert!(oa.max(ob) <= 1e-3);
}

#[test]
fn quarter_turn_rotates_the_trajectory() {
    let s = cubic15();
    let (n, l) = (128, 4.0);
    let c = 2.0;
    let grid = PeriodicGrid::cube(2, n, l).unwrap();
    // Off-centre ellipse with no symmetry about the box axes.
    let shape = |x: f64, y: f64| {
        let (u, v) = (x - 2.2, y - 1.9);
        let (p, q) = ((u + v) / 2f64.sqrt(), (v - u) / 2f64.sqrt());
        (p / 0.5).hypot(q / 0.3) - 1.0
    };
    let rot = |x: &[f64]| shape(x[1], 2.0 * c - x[0]);
    // The taper region stays clear of the box edges, so both data are periodic.
    let mut a = init_from_set(|x| 0.3 * shape(x[0], x[1]), &s.family, &s.spec, &s.nl, 0.03, &grid).unwrap();
    let mut b = init_from_set(|x| 0.3 * rot(x), &s.family, &s.spec, &s.nl, 0.03, &grid).unwrap();
    let t = 0.01;
    let (sa, _) = run_until(&mut a, t, DtRule::Reaction, 0.5 * t).unwrap();
    let (sb, _) = run_until(&mut b, t, DtRule::Reaction, 0.5 * t).unwrap();
    for (fa, fb) in sa.iter().zip(&sb) {
        let turned: Vec<Polyline> = fa
            .fronts
            .iter()
            .map(|p| Polyline::new(p.points.iter().map(|q| [2.0 * c - q[1], q[0]]).collect(), p.closed))
            .collect();
        let (haus, _) = front_distance(&turned, &fb.fronts);
        assert!(haus < 1e-9, "t = {}: {haus}", fa.t);
    }
}

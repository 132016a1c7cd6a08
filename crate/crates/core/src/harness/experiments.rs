use std::f64::consts::PI;

use rayon::prelude::*;
use statrs::function::gamma::gamma;

use super::config::{Experiment, ExperimentConfig, KernelConfig, NonlinearityConfig, WeightConfig};
use super::{Artifact, Outcome};
use crate::coefficients::{appendix_k, effective_matrix, mobility, AbarEvaluator, CoefficientTable, DistanceProbe, TableOptions};
use crate::error::{Error, Result};
use crate::front::{compare_fronts, fmt_num, polylines_csv, write_field, Polyline};
use crate::kernels::{KernelSpec, Reduced1D};
use crate::nonlocal_op::PeriodicGrid;
use crate::phasefield::{init_from_set, run_until, ProfileFamily, ScalingRule};
use crate::quad::ls_slope;
use crate::sharp_interface::{circle_radius, evolve_amcm, extinction_time, fractional_curvature, CurvatureOptions, LevelSetState};
use crate::traveling_wave::{solve_wave_on, standing_wave, standing_wave_on, NewtonOptions, ReducedOperator, WaveGrid};

/// Run one experiment in memory.
pub fn execute(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> Result<Outcome> {
    match cfg.experiment {
        Experiment::Wave => wave(cfg, log),
        Experiment::Coefficients => coefficients(cfg, log),
        Experiment::AbarConvergence => abar_convergence(cfg, log),
        Experiment::ShrinkingCircle => shrinking_circle(cfg, log),
        Experiment::AnisotropicFront => anisotropic_front(cfg, log),
        Experiment::AppendixCheck => appendix_check(cfg, log),
        Experiment::KappaCheck => kappa_check(cfg, log),
    }
}

fn csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// `series,<x>,<y>` rows, one labelled series after another.
fn plotdata(x: &str, y: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    csv(
        &["series", x, y],
        series.iter().flat_map(|(label, pts)| pts.iter().map(move |(a, b)| vec![label.to_string(), fmt_num(*a), fmt_num(*b)])),
    )
}

fn direction(cfg: &ExperimentConfig) -> [f64; 2] {
    let (s, c) = cfg.numerics.angle.sin_cos();
    [c, s]
}

fn eta_label(spec: &KernelSpec) -> String {
    let rule = ScalingRule::for_spec(spec);
    match rule.alpha {
        Some(a) => format!("{rule} (alpha = {a})"),
        None => format!("{rule} (regular kernel)"),
    }
}

fn wave(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> Result<Outcome> {
    let mut out = Outcome::default();
    let nl = cfg.bistable()?;
    let e = direction(cfg);
    let kernel = cfg.reduced(&e)?;
    let h = cfg.numerics.tilt;
    log(&format!("solving the traveling wave at h = {h}"));
    let p = out.stage("wave", || {
        let op = ReducedOperator::new(&WaveGrid::default(), &kernel);
        solve_wave_on(&op, &nl, &e, h, NewtonOptions::default())
    })?;
    let rows = p.rows().map(|(r, q, d)| vec![fmt_num(r), fmt_num(q), fmt_num(d)]);
    out.artifacts.push(Artifact::text("wave.csv", csv(&["r", "q", "qdot"], rows)));
    let near: Vec<_> = p.rows().filter(|(r, _, _)| r.abs() <= 50.0).collect();
    out.artifacts.push(Artifact::text(
        "plotdata_wave.csv",
        plotdata(
            "r",
            "value",
            &[("q", near.iter().map(|&(r, q, _)| (r, q)).collect()), ("qdot", near.iter().map(|&(r, _, d)| (r, d)).collect())],
        ),
    ));
    out.num("speed", p.c);
    out.num("residual", p.residual);
    out.note("iterations", p.iterations);
    out.note("roots", p.roots.map(fmt_num).join(" "));
    if h == 0.0 {
        let mu = out.stage("mobility", || mobility(&p))?;
        out.num("mobility", mu);
    }
    if let Reduced1D::Power { weight, alpha } = kernel {
        let (l, r) = p.decay_slopes();
        out.num("tail_slope_minus", l);
        out.num("tail_slope_plus", r);
        let pn = (alpha - 1.0).abs() < 1e-12 && h == 0.0 && cfg.nonlinearity == NonlinearityConfig::Sine { amplitude: 1.0 };
        if pn {
            let err = p.rows().map(|(r, q, _)| (q - 2.0 / PI * (r / weight).atan()).abs()).fold(0.0, f64::max);
            out.num("arctan_sup_error", err);
        }
    }
    Ok(out)
}

fn table_options(cfg: &ExperimentConfig) -> TableOptions {
    TableOptions { directions: cfg.numerics.directions, tilts: cfg.numerics.tilts.clone(), ..Default::default() }
}

fn coefficients(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> Result<Outcome> {
    let mut out = Outcome::default();
    let (spec, nl) = (cfg.spec()?, cfg.bistable()?);
    log(&format!("building a {}-direction coefficient table", cfg.numerics.directions));
    let table = out.stage("table", || CoefficientTable::build(&spec, &nl, &table_options(cfg)))?;
    out.artifacts.push(Artifact::text("coefficients.csv", table.to_csv()));
    let along = |k: usize| {
        let t = [-table.angles[k].sin(), table.angles[k].cos()];
        table.a[k].quad(&t)
    };
    let n = table.len();
    out.artifacts.push(Artifact::text(
        "plotdata_coefficients.csv",
        plotdata(
            "angle",
            "value",
            &[
                ("mu", (0..n).map(|k| (table.angles[k], table.mu[k])).collect()),
                ("a_tangential", (0..n).map(|k| (table.angles[k], along(k))).collect()),
                ("cbar", (0..n).map(|k| (table.angles[k], table.cbar[k])).collect()),
            ],
        ),
    ));
    out.num("antipodal_defect", table.antipodal_defect());
    out.num("mean_mu_a_tangential", (0..n).map(|k| table.mu[k] * along(k)).sum::<f64>() / n as f64);
    out.note("formula", table.tags[0]);
    Ok(out)
}

/// Circle of radius `r` through the origin with outer normal `e` there.
fn circle_probe(r: f64, e: [f64; 2]) -> Result<DistanceProbe> {
    DistanceProbe::circle([-r * e[0], -r * e[1]], r, [0.0, 0.0])
}

fn abar_convergence(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> Result<Outcome> {
    let mut out = Outcome::default();
    let (spec, nl) = (cfg.spec()?, cfg.bistable()?);
    let e = direction(cfg);
    let eps = &cfg.numerics.eps;
    if eps.is_empty() {
        return Err(Error::Invalid("abar-convergence needs an eps list".into()));
    }
    out.eta_rule = Some(eta_label(&spec));
    let profile = out.stage("wave", || standing_wave(&spec, &nl, &e, &WaveGrid::default(), NewtonOptions::default()))?;
    let probe = circle_probe(cfg.numerics.radius, e)?;
    let sublinear = spec.alpha().is_some_and(|a| a < 1.0);
    let target = out.stage("target", || {
        if sublinear {
            let k = fractional_curvature(&probe, &spec, CurvatureOptions::default())?;
            Ok(nl.jump().powi(2) * k.kappa_star)
        } else {
            Ok(effective_matrix(&spec, &nl, &profile)?.0.contract(&probe.hessian))
        }
    })?;
    log(&format!("averaging over {} values of eps", eps.len()));
    let lim = out.stage("abar", || AbarEvaluator::new(&spec, &profile)?.limit(&probe, eps))?;
    let rows = lim.samples.iter().map(|s| {
        vec![fmt_num(s.eps), fmt_num(s.eta), fmt_num(s.value), fmt_num(s.error), fmt_num(s.value - target), s.flagged.to_string()]
    });
    out.artifacts.push(Artifact::text("abar.csv", csv(&["eps", "eta", "abar", "error_estimate", "gap", "flagged"], rows)));
    out.artifacts.push(Artifact::text(
        "plotdata_abar.csv",
        plotdata("eps", "abs_gap", &[("abar", lim.samples.iter().map(|s| (s.eps, (s.value - target).abs())).collect())]),
    ));
    let gaps: Vec<f64> = lim.samples.iter().map(|s| (s.value - target).abs()).collect();
    out.num("target", target);
    out.note("target_kind", if sublinear { "jump^2 * fractional curvature" } else { "Tr(A D^2 d)" });
    out.note("gap_monotone", gaps.windows(2).all(|w| w[1] < w[0]));
    if let Some(x) = lim.extrapolation {
        out.num("limit", x.limit);
        out.num("order", x.order);
        out.num("relative_difference", x.limit / target - 1.0);
    } else {
        out.warnings.push("sequence not in the asymptotic range; no extrapolated limit".into());
    }
    Ok(out)
}

/// Radius of the largest front, or 0 once the phase is gone.
fn front_radius(fronts: &[Polyline]) -> f64 {
    fronts.iter().map(Polyline::equivalent_radius).fold(0.0, f64::max)
}

fn shrinking_circle(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> Result<Outcome> {
    let mut out = Outcome::default();
    let (spec, nl) = (cfg.spec()?, cfg.bistable()?);
    let num = &cfg.numerics;
    out.eta_rule = Some(eta_label(&spec));
    let table = out.stage("table", || CoefficientTable::build(&spec, &nl, &table_options(cfg)))?;
    let (mu, a, _) = table.interpolate(0.0);
    let mu_abar = mu * a.quad(&[0.0, 1.0]);
    let spread = table.mu.iter().zip(&table.a).zip(&table.angles).map(|((m, a), t)| m * a.quad(&[-t.sin(), t.cos()])).fold(
        (f64::INFINITY, 0.0f64),
        |(lo, hi), v| (lo.min(v), hi.max(v)),
    );
    if spread.1 - spread.0 > 1e-6 * spread.1 {
        out.warnings.push("anisotropic coefficients: the ODE column uses the direction-0 value of mu * a".into());
    }
    let r0 = num.radius;
    let l = num.box_size.unwrap_or(12.0 * r0);
    let c = 0.5 * l;
    if l < 12.0 * r0 {
        out.warnings.push(format!("box {l} is smaller than 6 initial diameters ({})", 12.0 * r0));
    }
    out.note("box_over_diameter", format!("{:.3}", l / (2.0 * r0)));
    let t_ext = extinction_time(r0, mu_abar);
    let t_end = num.t_end.unwrap_or(num.t_fraction * t_ext);
    let times: Vec<f64> = (1..=num.snapshots).map(|k| t_end * k as f64 / num.snapshots as f64).collect();
    let d0 = move |x: &[f64]| (x[0] - c).hypot(x[1] - c) - r0;

    log(&format!("level set on {}^2 up to t = {t_end:.4e}", num.level_set_grid));
    let ls_grid = PeriodicGrid::cube(2, num.level_set_grid, l)?;
    let level_set = out.stage("level_set", || {
        let mut st = LevelSetState::new(&ls_grid, d0, table.clone())?;
        let dt = 0.9 * st.max_dt();
        let mut snaps = vec![(0.0, st.fronts()?)];
        for &t in &times {
            evolve_amcm(&mut st, t, dt, f64::INFINITY)?;
            snaps.push((t, st.fronts()?));
        }
        Ok(snaps)
    })?;

    log(&format!("phase field on {}^2 for eps = {:?}", num.grid, num.eps));
    let family = out.stage("profiles", || ProfileFamily::for_kernel(&spec, &nl, &WaveGrid::default(), 64, NewtonOptions::default()))?;
    let pf_grid = PeriodicGrid::cube(2, num.grid, l)?;
    let runs = out.stage("phase_field", || {
        num.eps
            .par_iter()
            .map(|&eps| {
                let mut st = init_from_set(d0, &family, &spec, &nl, eps, &pf_grid)?;
                let mut snaps = vec![(0.0, st.extract_front()?)];
                let mut overshoot = st.diagnostics().overshoot;
                for &t in &times {
                    let (_, o) = run_until(&mut st, t, num.dt, f64::INFINITY)?;
                    overshoot = overshoot.max(o);
                    snaps.push((t, st.extract_front()?));
                }
                let mut dump = Vec::new();
                if num.dump_fields {
                    write_field(&mut dump, &st.field, st.time)?;
                }
                Ok((eps, snaps, overshoot, dump))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut header = vec!["t".to_string(), "ode".into(), "level_set".into()];
    header.extend(runs.iter().map(|(eps, ..)| format!("phase_field_eps_{eps}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = level_set.iter().enumerate().map(|(k, (t, fronts))| {
        let mut row = vec![fmt_num(*t), fmt_num(circle_radius(r0, mu_abar, *t).unwrap_or(0.0)), fmt_num(front_radius(fronts))];
        row.extend(runs.iter().map(|(_, snaps, ..)| fmt_num(front_radius(&snaps[k].1))));
        row
    });
    out.artifacts.push(Artifact::text("radius_vs_t.csv", csv(&header_refs, rows)));

    let mut fronts = polylines_csv("level_set", &level_set, true);
    for (eps, snaps, ..) in &runs {
        fronts.push_str(&polylines_csv(&format!("phase_field_eps_{eps}"), snaps, false));
    }
    out.artifacts.push(Artifact::text("fronts.csv", fronts));

    let reference = &level_set.last().expect("final snapshot").1;
    let mut gaps = Vec::new();
    for (eps, snaps, overshoot, _) in &runs {
        let final_fronts = &snaps.last().expect("final snapshot").1;
        let (haus, mean) = match (reference.first(), final_fronts.first()) {
            (Some(a), Some(b)) if reference.len() == 1 && final_fronts.len() == 1 => compare_fronts(a, b)?,
            _ => (f64::NAN, f64::NAN),
        };
        gaps.push((*eps, haus, mean, *overshoot));
        if *overshoot > 1e-3 {
            out.warnings.push(format!("eps = {eps}: overshoot {overshoot:e} beyond [m-, m+]"));
        }
    }
    let rows = gaps.iter().map(|&(eps, h, m, o)| vec![fmt_num(eps), fmt_num(t_end), fmt_num(h), fmt_num(m), fmt_num(h / r0), fmt_num(o)]);
    out.artifacts.push(Artifact::text(
        "hausdorff.csv",
        csv(&["eps", "t", "hausdorff", "mean_gap", "hausdorff_over_r0", "overshoot"], rows),
    ));
    let mut series = vec![
        ("ode", times_with_zero(&times).map(|t| (t, circle_radius(r0, mu_abar, t).unwrap_or(0.0))).collect::<Vec<_>>()),
        ("level_set", level_set.iter().map(|(t, f)| (*t, front_radius(f))).collect()),
    ];
    let labels: Vec<String> = runs.iter().map(|(eps, ..)| format!("phase_field_eps_{eps}")).collect();
    for ((_, snaps, ..), label) in runs.iter().zip(&labels) {
        series.push((label.as_str(), snaps.iter().map(|(t, f)| (*t, front_radius(f))).collect()));
    }
    out.artifacts.push(Artifact::text("plotdata_radius.csv", plotdata("t", "radius", &series)));
    for (eps, _, _, dump) in &runs {
        if !dump.is_empty() {
            out.artifacts.push(Artifact { name: format!("field_eps_{eps}.bin"), bytes: dump.clone() });
        }
    }

    out.num("mu_abar", mu_abar);
    out.num("t_extinction", t_ext);
    out.num("t_end", t_end);
    let hs: Vec<f64> = gaps.iter().map(|g| g.1).collect();
    out.note("hausdorff_monotone", hs.windows(2).all(|w| w[1] < w[0]));
    if let Some(&(_, h, ..)) = gaps.last() {
        out.num("final_hausdorff_over_r0", h / r0);
    }
    Ok(out)
}

fn times_with_zero(times: &[f64]) -> impl Iterator<Item = f64> + '_ {
    std::iter::once(0.0).chain(times.iter().copied())
}

fn anisotropic_front(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> Result<Outcome> {
    let mut out = Outcome::default();
    let (spec, nl) = (cfg.spec()?, cfg.bistable()?);
    let num = &cfg.numerics;
    let table = out.stage("table", || CoefficientTable::build(&spec, &nl, &table_options(cfg)))?;
    let n = table.len();
    let rate_integrand: Vec<f64> =
        (0..n).map(|k| table.mu[k] * table.a[k].quad(&[-table.angles[k].sin(), table.angles[k].cos()])).collect();
    // dA/dt = -(closed integral of mu(n) a(n) kappa ds) = -(integral over the normal angle of mu a).
    let predicted = -2.0 * PI * rate_integrand.iter().sum::<f64>() / n as f64;
    let r0 = num.radius;
    let l = num.box_size.unwrap_or(12.0 * r0);
    let c = 0.5 * l;
    let t_end = num.t_end.unwrap_or(num.t_fraction * PI * r0 * r0 / -predicted);
    let times: Vec<f64> = (1..=num.snapshots).map(|k| t_end * k as f64 / num.snapshots as f64).collect();
    log(&format!("level set on {}^2 up to t = {t_end:.4e}", num.level_set_grid));
    let grid = PeriodicGrid::cube(2, num.level_set_grid, l)?;
    let snaps = out.stage("level_set", || {
        let mut st = LevelSetState::new(&grid, |x| (x[0] - c).hypot(x[1] - c) - r0, table.clone())?;
        let dt = 0.9 * st.max_dt();
        let mut snaps = vec![(0.0, st.fronts()?)];
        for &t in &times {
            evolve_amcm(&mut st, t, dt, f64::INFINITY)?;
            snaps.push((t, st.fronts()?));
        }
        Ok(snaps)
    })?;
    let areas: Vec<(f64, f64)> = snaps.iter().map(|(t, f)| (*t, f.iter().map(Polyline::area).sum())).collect();
    let rows = snaps.iter().zip(&areas).map(|((t, f), &(_, a))| {
        let (lo, hi) = f.first().map_or((0.0, 0.0), Polyline::radius_range);
        vec![fmt_num(*t), fmt_num(a), fmt_num(PI * r0 * r0 + predicted * t), fmt_num(hi / lo.max(1e-300))]
    });
    out.artifacts.push(Artifact::text("area_vs_t.csv", csv(&["t", "area", "predicted_area", "aspect_ratio"], rows)));
    out.artifacts.push(Artifact::text("fronts.csv", polylines_csv("level_set", &snaps, true)));
    out.artifacts.push(Artifact::text(
        "plotdata_area.csv",
        plotdata(
            "t",
            "area",
            &[
                ("measured", areas.clone()),
                ("predicted", areas.iter().map(|&(t, _)| (t, PI * r0 * r0 + predicted * t)).collect()),
            ],
        ),
    ));
    let (ts, as_): (Vec<f64>, Vec<f64>) = areas.into_iter().unzip();
    let measured = ls_slope(&ts, &as_);
    out.num("predicted_area_rate", predicted);
    out.num("measured_area_rate", measured);
    out.num("relative_difference", measured / predicted - 1.0);
    Ok(out)
}

fn appendix_check(cfg: &ExperimentConfig, _log: &mut dyn FnMut(&str)) -> Result<Outcome> {
    let mut out = Outcome::default();
    let nl = cfg.bistable()?;
    let alpha = cfg.alpha().ok_or_else(|| Error::InvalidKernel("the appendix identity needs a power kernel".into()))?;
    let e = direction(cfg);
    let kernel = cfg.reduced(&e)?;
    let profile = out.stage("wave", || {
        let op = ReducedOperator::new(&WaveGrid::default(), &kernel);
        standing_wave_on(&op, &nl, &e, NewtonOptions::default())
    })?;
    let rep = out.stage("appendix", || appendix_k(&profile, alpha))?;
    let rows = rep.candidates.iter().zip(&rep.discrepancy).map(|(c, d)| {
        vec![fmt_num(c.p), fmt_num(c.value), c.finite.to_string(), fmt_num(c.truncated), fmt_num(c.value / rep.k_direct), fmt_num(*d)]
    });
    out.artifacts.push(Artifact::text(
        "appendix.csv",
        csv(&["p", "closure", "finite", "truncated", "ratio_to_k", "relative_discrepancy"], rows),
    ));
    out.num("k_direct", rep.k_direct);
    out.note("matched_exponent", rep.matched.map_or("none".to_string(), fmt_num));
    Ok(out)
}

/// Lens-integral value for a circle of radius `r` with `g = 1` in the plane.
pub(crate) fn kappa_circle(alpha: f64, r: f64) -> f64 {
    (2.0 * r).powf(-alpha) / alpha * PI.sqrt() * gamma((1.0 - alpha) / 2.0) / gamma(1.0 - alpha / 2.0)
}

fn kappa_check(cfg: &ExperimentConfig, _log: &mut dyn FnMut(&str)) -> Result<Outcome> {
    let mut out = Outcome::default();
    let spec = cfg.spec()?;
    let alpha = spec.alpha().ok_or_else(|| Error::InvalidKernel("fractional curvature needs a singular kernel".into()))?;
    let e = direction(cfg);
    let isotropic = matches!(cfg.kernel, KernelConfig::Singular { weight: WeightConfig::Isotropic, .. });
    let radii = &cfg.numerics.radii;
    let values = out.stage("kappa", || {
        radii
            .par_iter()
            .map(|&r| fractional_curvature(&circle_probe(r, e)?, &spec, CurvatureOptions::default()))
            .collect::<Result<Vec<_>>>()
    })?;
    let closed = |r: f64| if isotropic { fmt_num(kappa_circle(alpha, r)) } else { String::new() };
    let rows = radii.iter().zip(&values).map(|(&r, k)| {
        vec![fmt_num(r), fmt_num(k.kappa_star), fmt_num(k.kappa_sub), fmt_num(k.tail), fmt_num(k.error), closed(r)]
    });
    out.artifacts.push(Artifact::text(
        "kappa.csv",
        csv(&["radius", "kappa_star", "kappa_sub", "tail", "error", "closed_form"], rows),
    ));
    let mut series = vec![("kappa_star", radii.iter().zip(&values).map(|(&r, k)| (r, k.kappa_star)).collect::<Vec<_>>())];
    if isotropic {
        series.push(("closed_form", radii.iter().map(|&r| (r, kappa_circle(alpha, r))).collect()));
    }
    out.artifacts.push(Artifact::text("plotdata_kappa.csv", plotdata("radius", "kappa", &series)));
    if radii.len() >= 2 {
        let x: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
        let y: Vec<f64> = values.iter().map(|k| k.kappa_star.abs().ln()).collect();
        out.num("dilation_exponent", ls_slope(&x, &y));
    }
    if isotropic {
        let worst = radii.iter().zip(&values).map(|(&r, k)| (k.kappa_star / kappa_circle(alpha, r) - 1.0).abs()).fold(0.0, f64::max);
        out.num("max_relative_error", worst);
    }
    Ok(out)
}

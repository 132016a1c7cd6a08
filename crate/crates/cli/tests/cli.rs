use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use frontlab::harness::config_hash;
use tempfile::TempDir;

fn frontlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frontlab")).args(args).output().expect("binary runs")
}

fn run_in(dir: &Path, sub: &str, config: &str, extra: &[&str]) -> Output {
    let cfg = dir.join(format!("{sub}.ini"));
    fs::write(&cfg, config).unwrap();
    let out = dir.join(sub);
    let mut args = vec![sub, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    frontlab(&args)
}

fn columns(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap_or_else(|| panic!("no column {name}"));
    lines.map(|l| l.split(',').nth(k).unwrap().parse().unwrap()).collect()
}

const PN: &str = "experiment = wave\n[kernel]\nkind = power1d\nalpha = 1\n[nonlinearity]\nfamily = sine\n";

#[test]
fn wave_matches_the_arctan_layer() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), "wave", PN, &["--threads", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("wave/wave.csv")).unwrap();
    let r = columns(&csv, "r");
    let q = columns(&csv, "q");
    let err = r.iter().zip(&q).map(|(r, q)| (q - 2.0 / std::f64::consts::PI * r.atan()).abs()).fold(0.0, f64::max);
    assert!(err < 5e-3, "{err}");
    let manifest = fs::read_to_string(dir.path().join("wave/manifest.txt")).unwrap();
    assert!(manifest.contains(&format!("config_sha256 = {}", config_hash(PN))));
    assert!(manifest.contains("status = ok") && manifest.contains("threads = 1"));
    assert!(dir.path().join("wave/plotdata_wave.csv").exists());
}

#[test]
fn invalid_alpha_names_the_admissible_range() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), "wave", "experiment = wave\n[kernel]\nalpha = 2.5\n", &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("alpha ∈ (0,2)") && err.contains("line 3") && err.contains("kernel.alpha"), "{err}");
}

#[test]
fn subcommand_must_match_the_config() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), "kappa-check", PN, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("describes `wave`"));
    assert!(!frontlab(&["wave"]).status.success());
}

const SHRINK: &str = "experiment = shrinking-circle
[kernel]
alpha = 1.5
[numerics]
grid = 64
level_set_grid = 64
box = 6
radius = 0.5
eps = 0.1, 0.05
snapshots = 3
directions = 4
tilts = 0.02
";

#[test]
fn shrinking_circle_writes_all_radius_columns() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), "shrinking-circle", SHRINK, &["--verbose"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("wrote radius_vs_t.csv"));
    let csv = fs::read_to_string(dir.path().join("shrinking-circle/radius_vs_t.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,ode,level_set,phase_field_eps_0.1,phase_field_eps_0.05");
    assert_eq!(csv.lines().count(), 1 + 4);
    let ode = columns(&csv, "ode");
    assert_eq!(ode[0], 0.5);
    assert!(ode.windows(2).all(|w| w[1] < w[0]));
    let manifest = fs::read_to_string(dir.path().join("shrinking-circle/manifest.txt")).unwrap();
    assert!(manifest.contains("eta_rule = eta = eps (alpha = 1.5)"), "{manifest}");
    for f in ["fronts.csv", "hausdorff.csv", "plotdata_radius.csv"] {
        assert!(dir.path().join("shrinking-circle").join(f).exists(), "{f}");
    }
}

#[test]
fn reruns_reproduce_identical_csv_bytes() {
    let dir = TempDir::new().unwrap();
    let kappa = "experiment = kappa-check\n[kernel]\nalpha = 0.5\n";
    for sub in ["a", "b"] {
        let d = dir.path().join(sub);
        fs::create_dir_all(&d).unwrap();
        assert!(run_in(&d, "kappa-check", kappa, &[]).status.success());
        assert!(run_in(&d, "shrinking-circle", SHRINK, &[]).status.success());
    }
    for f in ["kappa-check/kappa.csv", "kappa-check/plotdata_kappa.csv", "shrinking-circle/radius_vs_t.csv", "shrinking-circle/fronts.csv"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between reruns");
    }
}

#[test]
fn failed_runs_still_leave_a_manifest() {
    let dir = TempDir::new().unwrap();
    // The coefficient table has no diffusion matrix for alpha < 1.
    let out = run_in(dir.path(), "coefficients", "experiment = coefficients\n[kernel]\nalpha = 0.5\n", &[]);
    assert_eq!(out.status.code(), Some(1));
    let manifest = fs::read_to_string(dir.path().join("coefficients/manifest.txt")).unwrap();
    assert!(manifest.contains("status = failed") && manifest.contains("stage `table` failed"), "{manifest}");
}

//! Flat sectioned `key = value` experiment files.
//!
//! ```text
//! experiment = shrinking-circle
//! output = runs/disk
//!
//! [kernel]
//! kind = singular
//! alpha = 1.5
//!
//! [nonlinearity]
//! family = cubic
//!
//! [numerics]
//! grid = 512
//! eps = 0.08, 0.04, 0.02
//! ```
//!
//! `#` and `;` start comments. Unknown sections and keys are errors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use crate::bistable::Bistable;
use crate::error::{Error, Result};
use crate::kernels::{AngularWeight, KernelSpec, Reduced1D, RegularKernel, SingularKernel};
use crate::phasefield::DtRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Wave,
    Coefficients,
    AbarConvergence,
    ShrinkingCircle,
    AnisotropicFront,
    AppendixCheck,
    KappaCheck,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Wave,
        Experiment::Coefficients,
        Experiment::AbarConvergence,
        Experiment::ShrinkingCircle,
        Experiment::AnisotropicFront,
        Experiment::AppendixCheck,
        Experiment::KappaCheck,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Wave => "wave",
            Experiment::Coefficients => "coefficients",
            Experiment::AbarConvergence => "abar-convergence",
            Experiment::ShrinkingCircle => "shrinking-circle",
            Experiment::AnisotropicFront => "anisotropic-front",
            Experiment::AppendixCheck => "appendix-check",
            Experiment::KappaCheck => "kappa-check",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelConfig {
    /// `g(z/|z|) |z|^{-2-alpha}` in the plane.
    Singular { alpha: f64, weight: WeightConfig },
    /// One-dimensional power kernel `a11 |r|^{-1-alpha}`; wave and appendix experiments only.
    Power1d { alpha: f64, a11: f64 },
    /// Compactly supported bump of the given radius and mass.
    Regular { radius: f64, mass: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightConfig {
    Isotropic,
    Cos2 { beta: f64, theta0: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum NonlinearityConfig {
    Cubic { zeros: [f64; 3], scale: f64 },
    Sine { amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Numerics {
    /// Phase-field grid points per axis.
    pub grid: usize,
    pub level_set_grid: usize,
    /// Periodic box side; defaults to twelve initial radii.
    pub box_size: Option<f64>,
    /// Strictly decreasing.
    pub eps: Vec<f64>,
    pub radius: f64,
    pub radii: Vec<f64>,
    /// End time as a fraction of the circle extinction time, unless `t_end` is set.
    pub t_fraction: f64,
    pub t_end: Option<f64>,
    pub dt: DtRule,
    pub snapshots: usize,
    pub directions: usize,
    pub tilts: Vec<f64>,
    /// Tilt `h` of the wave experiment.
    pub tilt: f64,
    /// Direction angle of the wave and abar experiments.
    pub angle: f64,
    pub dump_fields: bool,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            grid: 256,
            level_set_grid: 256,
            box_size: None,
            eps: vec![],
            radius: 0.5,
            radii: vec![0.5, 1.0, 2.0, 4.0],
            t_fraction: 0.5,
            t_end: None,
            dt: DtRule::Reaction,
            snapshots: 10,
            directions: 64,
            tilts: vec![0.02, 0.01, 0.005],
            tilt: 0.0,
            angle: 0.0,
            dump_fields: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub kernel: KernelConfig,
    pub nonlinearity: NonlinearityConfig,
    pub numerics: Numerics,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

type Sections = BTreeMap<String, BTreeMap<String, Entry>>;

const KEYS: [(&str, &[&str]); 4] = [
    ("", &["experiment", "output"]),
    ("kernel", &["kind", "alpha", "weight", "beta", "theta0", "a11", "radius", "mass"]),
    ("nonlinearity", &["family", "zeros", "scale", "amplitude"]),
    (
        "numerics",
        &[
            "grid",
            "level_set_grid",
            "box",
            "eps",
            "radius",
            "radii",
            "t_fraction",
            "t_end",
            "dt",
            "snapshots",
            "directions",
            "tilts",
            "tilt",
            "angle",
            "dump_fields",
        ],
    ),
];

fn err(line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Config { line, field: field.into(), message: message.into() }
}

fn lex(text: &str) -> Result<Sections> {
    let mut out: Sections = BTreeMap::new();
    out.insert(String::new(), BTreeMap::new());
    let mut section = String::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split(['#', ';']).next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(name) = body.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| err(line, body, "unterminated section header"))?.trim();
            if !KEYS.iter().any(|(s, _)| *s == name) {
                return Err(err(line, name, "unknown section"));
            }
            if out.contains_key(name) {
                return Err(err(line, name, "section appears twice"));
            }
            section = name.to_string();
            out.insert(section.clone(), BTreeMap::new());
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| err(line, body, "expected `key = value`"))?;
        let key = key.trim();
        let field = qualified(&section, key);
        let allowed = KEYS.iter().find(|(s, _)| *s == section).map_or(&[][..], |(_, k)| *k);
        if !allowed.contains(&key) {
            return Err(err(line, &field, "unknown key"));
        }
        let entries = out.get_mut(&section).expect("section inserted above");
        if entries.insert(key.to_string(), Entry { value: value.trim().to_string(), line }).is_some() {
            return Err(err(line, &field, "key appears twice"));
        }
    }
    Ok(out)
}

fn qualified(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

/// Typed access to one section, remembering line numbers for error messages.
struct View<'a> {
    name: &'a str,
    entries: Option<&'a BTreeMap<String, Entry>>,
}

impl<'a> View<'a> {
    fn line(&self, key: &str) -> usize {
        self.entries.and_then(|e| e.get(key)).map_or(0, |e| e.line)
    }

    fn field(&self, key: &str) -> String {
        qualified(self.name, key)
    }

    fn raw(&self, key: &str) -> Option<&'a Entry> {
        self.entries.and_then(|e| e.get(key))
    }

    fn str(&self, key: &str) -> Option<&'a str> {
        self.raw(key).map(|e| e.value.as_str())
    }

    fn num(&self, key: &str) -> Result<Option<f64>> {
        let Some(e) = self.raw(key) else { return Ok(None) };
        let v: f64 = e.value.parse().map_err(|_| err(e.line, &self.field(key), format!("`{}` is not a number", e.value)))?;
        if !v.is_finite() {
            return Err(err(e.line, &self.field(key), "must be finite"));
        }
        Ok(Some(v))
    }

    fn count(&self, key: &str) -> Result<Option<usize>> {
        let Some(e) = self.raw(key) else { return Ok(None) };
        e.value
            .parse()
            .map(Some)
            .map_err(|_| err(e.line, &self.field(key), format!("`{}` is not a non-negative integer", e.value)))
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(e) = self.raw(key) else { return Ok(None) };
        e.value
            .split(',')
            .map(|s| {
                let s = s.trim();
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(e.line, &self.field(key), format!("`{s}` is not a number")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn positive(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.num(key)?.unwrap_or(default);
        if !(v > 0.0) {
            return Err(err(self.line(key), &self.field(key), format!("must be positive, got {v}")));
        }
        Ok(v)
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let sections = lex(text)?;
        let view = |name: &'static str| View { name, entries: sections.get(name) };
        let top = view("");
        let exp = top.raw("experiment").ok_or_else(|| err(0, "experiment", "missing"))?;
        let experiment = Experiment::parse(&exp.value).ok_or_else(|| {
            let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
            err(exp.line, "experiment", format!("unknown experiment `{}` (expected one of {})", exp.value, names.join(", ")))
        })?;
        let output = top.str("output").map(PathBuf::from);
        let kernel = parse_kernel(&view("kernel"), experiment)?;
        let nonlinearity = parse_nonlinearity(&view("nonlinearity"))?;
        let numerics = parse_numerics(&view("numerics"), experiment, &kernel)?;
        Ok(Self { experiment, kernel, nonlinearity, numerics, output })
    }

    pub fn spec(&self) -> Result<KernelSpec> {
        match &self.kernel {
            KernelConfig::Singular { alpha, weight } => {
                let w = match *weight {
                    WeightConfig::Isotropic => AngularWeight::Isotropic,
                    WeightConfig::Cos2 { beta, theta0 } => AngularWeight::Cos2 { beta, theta0 },
                };
                Ok(KernelSpec::Singular(SingularKernel::new(2, *alpha, w)?))
            }
            KernelConfig::Regular { radius, mass } => Ok(KernelSpec::Regular(RegularKernel::bump(2, *radius, *mass)?)),
            KernelConfig::Power1d { .. } => Err(Error::Invalid("a one-dimensional kernel has no planar spec".into())),
        }
    }

    /// Reduced kernel for the wave experiments: the 1D power law, or the planar kernel seen along `e`.
    pub fn reduced(&self, e: &[f64]) -> Result<Reduced1D> {
        match &self.kernel {
            KernelConfig::Power1d { alpha, a11 } => Ok(Reduced1D::power(*a11, *alpha)),
            _ => crate::kernels::reduced_kernel(&self.spec()?, e),
        }
    }

    pub fn bistable(&self) -> Result<Bistable> {
        match &self.nonlinearity {
            NonlinearityConfig::Cubic { zeros, scale } => Bistable::cubic_with(zeros[0], zeros[1], zeros[2], *scale),
            NonlinearityConfig::Sine { amplitude } => Bistable::sine_with(*amplitude),
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match &self.kernel {
            KernelConfig::Singular { alpha, .. } | KernelConfig::Power1d { alpha, .. } => Some(*alpha),
            KernelConfig::Regular { .. } => None,
        }
    }
}

fn parse_kernel(v: &View, experiment: Experiment) -> Result<KernelConfig> {
    let kind = v.str("kind").unwrap_or("singular");
    let alpha = || -> Result<f64> {
        let a = v.num("alpha")?.ok_or_else(|| err(v.line("kind"), "kernel.alpha", "missing"))?;
        if !(a > 0.0 && a < 2.0) {
            return Err(err(v.line("alpha"), "kernel.alpha", format!("alpha ∈ (0,2) required, got {a}")));
        }
        Ok(a)
    };
    match kind {
        "singular" => {
            let weight = match v.str("weight").unwrap_or("isotropic") {
                "isotropic" => WeightConfig::Isotropic,
                "cos2" => {
                    let beta = v.num("beta")?.unwrap_or(0.0);
                    if !(beta.abs() < 1.0) {
                        return Err(err(v.line("beta"), "kernel.beta", format!("|beta| < 1 required for a positive weight, got {beta}")));
                    }
                    WeightConfig::Cos2 { beta, theta0: v.num("theta0")?.unwrap_or(0.0) }
                }
                other => {
                    return Err(err(v.line("weight"), "kernel.weight", format!("unknown weight `{other}` (isotropic, cos2)")))
                }
            };
            Ok(KernelConfig::Singular { alpha: alpha()?, weight })
        }
        "power1d" => {
            if !matches!(experiment, Experiment::Wave | Experiment::AppendixCheck) {
                return Err(err(v.line("kind"), "kernel.kind", format!("power1d kernels cannot drive `{experiment}`")));
            }
            Ok(KernelConfig::Power1d { alpha: alpha()?, a11: v.positive("a11", 1.0)? })
        }
        "regular" => Ok(KernelConfig::Regular { radius: v.positive("radius", 1.0)?, mass: v.positive("mass", 4.0)? }),
        other => Err(err(v.line("kind"), "kernel.kind", format!("unknown kernel kind `{other}` (singular, power1d, regular)"))),
    }
}

fn parse_nonlinearity(v: &View) -> Result<NonlinearityConfig> {
    match v.str("family").unwrap_or("cubic") {
        "cubic" => {
            let zeros = match v.list("zeros")? {
                None => [-1.0, 0.0, 1.0],
                Some(z) if z.len() == 3 && z[0] < z[1] && z[1] < z[2] => [z[0], z[1], z[2]],
                Some(_) => return Err(err(v.line("zeros"), "nonlinearity.zeros", "need three increasing zeros")),
            };
            Ok(NonlinearityConfig::Cubic { zeros, scale: v.positive("scale", 1.0)? })
        }
        "sine" => Ok(NonlinearityConfig::Sine { amplitude: v.positive("amplitude", 1.0)? }),
        other => Err(err(v.line("family"), "nonlinearity.family", format!("unknown family `{other}` (cubic, sine)"))),
    }
}

fn default_eps(experiment: Experiment, alpha: Option<f64>) -> Vec<f64> {
    match experiment {
        Experiment::AbarConvergence if alpha.is_some_and(|a| a < 1.0) => (0..4).map(|k| 1e-5 * 0.25f64.powi(k)).collect(),
        Experiment::AbarConvergence => vec![0.1, 0.05, 0.025, 0.0125],
        Experiment::ShrinkingCircle => vec![0.08, 0.04, 0.02],
        _ => vec![],
    }
}

fn parse_numerics(v: &View, experiment: Experiment, kernel: &KernelConfig) -> Result<Numerics> {
    let d = Numerics::default();
    let grid_size = |key: &str, default: usize| -> Result<usize> {
        let n = v.count(key)?.unwrap_or(default);
        if n < 32 || !n.is_power_of_two() {
            return Err(err(v.line(key), &v.field(key), format!("must be a power of two >= 32, got {n}")));
        }
        Ok(n)
    };
    let alpha = match kernel {
        KernelConfig::Singular { alpha, .. } | KernelConfig::Power1d { alpha, .. } => Some(*alpha),
        KernelConfig::Regular { .. } => None,
    };
    let eps = v.list("eps")?.unwrap_or_else(|| default_eps(experiment, alpha));
    if let Some(bad) = eps.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
        return Err(err(v.line("eps"), "numerics.eps", format!("every eps must lie in (0,1), got {bad}")));
    }
    if eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(err(v.line("eps"), "numerics.eps", "eps list must be strictly decreasing"));
    }
    let dt = match v.str("dt") {
        None | Some("reaction") => DtRule::Reaction,
        Some(s) => match s.parse::<f64>() {
            Ok(x) if x > 0.0 && x.is_finite() => DtRule::Fixed(x),
            _ => return Err(err(v.line("dt"), "numerics.dt", format!("expected `reaction` or a positive step, got `{s}`"))),
        },
    };
    let t_fraction = v.positive("t_fraction", d.t_fraction)?;
    let t_end = match v.num("t_end")? {
        Some(t) if t > 0.0 => Some(t),
        Some(t) => return Err(err(v.line("t_end"), "numerics.t_end", format!("must be positive, got {t}"))),
        None => None,
    };
    let radii = v.list("radii")?.unwrap_or(d.radii);
    if radii.iter().any(|r| !(*r > 0.0)) {
        return Err(err(v.line("radii"), "numerics.radii", "radii must be positive"));
    }
    let tilts = v.list("tilts")?.unwrap_or(d.tilts);
    if tilts.is_empty() || tilts.iter().any(|h| !(*h > 0.0)) || tilts.windows(2).any(|w| w[1] >= w[0]) {
        return Err(err(v.line("tilts"), "numerics.tilts", "tilts must be positive and strictly decreasing"));
    }
    let directions = v.count("directions")?.unwrap_or(d.directions);
    if directions < 4 || directions % 2 != 0 {
        return Err(err(v.line("directions"), "numerics.directions", "need an even count of at least 4"));
    }
    let snapshots = v.count("snapshots")?.unwrap_or(d.snapshots);
    if snapshots == 0 {
        return Err(err(v.line("snapshots"), "numerics.snapshots", "need at least one snapshot"));
    }
    let dump_fields = match v.str("dump_fields") {
        None | Some("false") => false,
        Some("true") => true,
        Some(s) => return Err(err(v.line("dump_fields"), "numerics.dump_fields", format!("expected true or false, got `{s}`"))),
    };
    if experiment == Experiment::ShrinkingCircle && eps.is_empty() {
        return Err(err(v.line("eps"), "numerics.eps", "shrinking-circle needs at least one eps"));
    }
    Ok(Numerics {
        grid: grid_size("grid", d.grid)?,
        level_set_grid: grid_size("level_set_grid", d.level_set_grid)?,
        box_size: match v.num("box")? {
            Some(b) if b > 0.0 => Some(b),
            Some(b) => return Err(err(v.line("box"), "numerics.box", format!("must be positive, got {b}"))),
            None => None,
        },
        eps,
        radius: v.positive("radius", d.radius)?,
        radii,
        t_fraction,
        t_end,
        dt,
        snapshots,
        directions,
        tilts,
        tilt: v.num("tilt")?.unwrap_or(0.0),
        angle: v.num("angle")?.unwrap_or(0.0),
        dump_fields,
    })
}

//! Run configuration: `key = value` lines, `#` comments, `[section]` headers.
//!
//! ```text
//! geometry = cells/pore.geo          # or builtin:<shape>:...
//! [scaling]
//! alpha_mu.c = 1
//! alpha_mu.a = 2                     # integer, p/q or decimal
//! rho_f = 1
//! forcing_class = potential
//! [bindings]
//! lambda0 = 1                        # inf, 0 or a positive number
//! [solver]
//! tol = 1e-9
//! threads = 1
//! seed = 0
//! [schedule]
//! ratio = 1.25
//! [output]
//! dir = out
//! [macro]
//! n = 16
//! ```
//!
//! Every key is validated before anything is solved; unknown sections and
//! keys are errors.

use crate::error::{Error, Result};
use crate::microcell::{load_geometry, VoxelCell};
use crate::pde::tensor::Mat3;
use crate::scaling::{parse_exponent, Bindings, ExtReal, ForcingClass, Power, ScalingSpec};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

const PARAMS: [&str; 6] = ["alpha_tau", "alpha_nu", "alpha_mu", "alpha_p", "alpha_eta", "alpha_lambda"];

/// Where the cell geometry comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum GeometrySource {
    File(PathBuf),
    /// `builtin:laminate:NX:NY:NZ:LAYERS`
    Laminate([usize; 3], usize),
    /// `builtin:inclusion:NX:NY:NZ:SIZE` (solid cube in a fluid matrix)
    Inclusion([usize; 3], usize),
    /// `builtin:pore:NX:NY:NZ:SIZE` (fluid cube in a solid matrix)
    Pore([usize; 3], usize),
    /// `builtin:solid:NX:NY:NZ`
    Solid([usize; 3]),
}

impl GeometrySource {
    fn parse(value: &str, base: &Path) -> Result<GeometrySource> {
        let Some(rest) = value.strip_prefix("builtin:") else {
            return Ok(GeometrySource::File(base.join(value)));
        };
        let parts: Vec<&str> = rest.split(':').collect();
        let nums = |from: usize| -> Result<Vec<usize>> {
            parts[from..]
                .iter()
                .map(|s| s.trim().parse::<usize>().map_err(|_| Error::Invalid(format!("bad number `{s}` in geometry `{value}`"))))
                .collect()
        };
        let shape = parts[0];
        let n = nums(1)?;
        let expect = if shape == "solid" { 3 } else { 4 };
        if n.len() != expect {
            return Err(Error::Invalid(format!("geometry `{value}` needs {expect} numbers after the shape name")));
        }
        if n[..3].contains(&0) {
            return Err(Error::Invalid(format!("geometry `{value}` has a zero dimension")));
        }
        let dims = [n[0], n[1], n[2]];
        match shape {
            "laminate" => Ok(GeometrySource::Laminate(dims, n[3])),
            "inclusion" => Ok(GeometrySource::Inclusion(dims, n[3])),
            "pore" => Ok(GeometrySource::Pore(dims, n[3])),
            "solid" => Ok(GeometrySource::Solid(dims)),
            s => Err(Error::Invalid(format!("unknown builtin shape `{s}` (laminate, inclusion, pore, solid)"))),
        }
    }

    pub fn load(&self) -> Result<VoxelCell> {
        match self {
            GeometrySource::File(p) => load_geometry(p),
            GeometrySource::Laminate(d, l) => Ok(VoxelCell::laminate(*d, *l)),
            GeometrySource::Inclusion(d, s) => Ok(VoxelCell::solid_inclusion(*d, *s)),
            GeometrySource::Pore(d, s) => Ok(VoxelCell::isolated_pore(*d, *s)),
            GeometrySource::Solid(d) => Ok(VoxelCell::solid_only(*d)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub threads: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tol: 1e-9, max_iter: 50_000, threads: 1, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScheduleConfig {
    pub t1: Option<f64>,
    pub ratio: Option<f64>,
    pub max_steps: Option<usize>,
    pub decay: Option<f64>,
    pub stall: Option<f64>,
    pub keep_fields: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub prefix: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroConfig {
    pub n: usize,
    pub dim: usize,
    pub permeability: Option<Mat3>,
    /// Coefficient report providing B2 or the elastic set.
    pub coefficients: Option<PathBuf>,
    pub force: [f64; 3],
    pub p_star: Option<ExtReal>,
    pub nu0: Option<f64>,
    pub eta2: Option<ExtReal>,
    pub dt0: f64,
    pub dt_ratio: f64,
    pub steps: usize,
    /// Uniform initial pressure perturbation amplitude for the transient run.
    pub p0_amplitude: f64,
}

impl Default for MacroConfig {
    fn default() -> Self {
        MacroConfig {
            n: 16,
            dim: 3,
            permeability: None,
            coefficients: None,
            force: [0.0; 3],
            p_star: None,
            nu0: None,
            eta2: None,
            dt0: 1e-3,
            dt_ratio: 1.2,
            steps: 50,
            p0_amplitude: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub source: PathBuf,
    pub geometry: Option<GeometrySource>,
    /// Present when any exponent key is given.
    pub scaling: Option<ScalingSpec>,
    pub forcing: ForcingClass,
    pub overrides: Bindings,
    pub solver: SolverConfig,
    pub schedule: ScheduleConfig,
    pub output: OutputConfig,
    pub macro_: MacroConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            source: PathBuf::new(),
            geometry: None,
            scaling: None,
            forcing: ForcingClass::Potential,
            overrides: Bindings::default(),
            solver: SolverConfig::default(),
            schedule: ScheduleConfig::default(),
            output: OutputConfig { dir: PathBuf::from("."), prefix: None },
            macro_: MacroConfig::default(),
        }
    }
}

fn perr(source_name: &str, line: usize, msg: String) -> Error {
    Error::Parse { source_name: source_name.to_string(), line, msg }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse::<T>().map_err(|_| Error::Invalid(format!("`{key}`: cannot parse `{v}`")))
}

fn positive(key: &str, v: &str) -> Result<f64> {
    let x: f64 = num(key, v)?;
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::Invalid(format!("`{key}` must be positive, got {v}")));
    }
    Ok(x)
}

fn list(key: &str, v: &str, n: usize) -> Result<Vec<f64>> {
    let xs: Vec<f64> = v.split(',').map(|s| num::<f64>(key, s.trim())).collect::<Result<_>>()?;
    if xs.len() != n {
        return Err(Error::Invalid(format!("`{key}` needs {n} comma-separated numbers, got {}", xs.len())));
    }
    Ok(xs)
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Invalid(format!("`{key}` must be true or false, got `{v}`"))),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|err| Error::Io { path: path.display().to_string(), err })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut cfg = RunConfig::parse(&text, &base, &path.display().to_string())?;
        cfg.source = path.to_path_buf();
        Ok(cfg)
    }

    pub fn parse(text: &str, base: &Path, source_name: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        let mut coeffs: BTreeMap<&'static str, (Option<f64>, Option<num_rational::Rational64>)> = BTreeMap::new();
        let mut scaling_keys = false;
        let mut spec = ScalingSpec::unit();
        for (ln, raw) in text.lines().enumerate() {
            let lineno = ln + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !["scaling", "solver", "schedule", "output", "bindings", "macro"].contains(&name) {
                    return Err(perr(source_name, lineno, format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(perr(source_name, lineno, format!("expected `key = value`, got `{line}`")));
            };
            let (k, v) = (k.trim(), v.trim());
            let full = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            if let Some(prev) = seen.insert(full.clone(), lineno) {
                return Err(perr(source_name, lineno, format!("`{full}` already set on line {prev}")));
            }
            let at = |e: Error| perr(source_name, lineno, format!("{}", e.root()));
            cfg.set(&section, k, v, base, &mut coeffs, &mut spec, &mut scaling_keys).map_err(at)?;
        }
        for name in PARAMS {
            if let Some(&(c, a)) = coeffs.get(name) {
                let p = Power::new(c.unwrap_or(1.0), a.unwrap_or_default())?;
                match name {
                    "alpha_tau" => spec.alpha_tau = p,
                    "alpha_nu" => spec.alpha_nu = p,
                    "alpha_mu" => spec.alpha_mu = p,
                    "alpha_p" => spec.alpha_p = p,
                    "alpha_eta" => spec.alpha_eta = p,
                    _ => spec.alpha_lambda = p,
                }
            }
        }
        if scaling_keys {
            spec.validate()?;
            cfg.scaling = Some(spec);
        }
        Ok(cfg)
    }

    #[allow(clippy::too_many_arguments)]
    fn set(
        &mut self,
        section: &str,
        k: &str,
        v: &str,
        base: &Path,
        coeffs: &mut BTreeMap<&'static str, (Option<f64>, Option<num_rational::Rational64>)>,
        spec: &mut ScalingSpec,
        scaling_keys: &mut bool,
    ) -> Result<()> {
        let unknown = || Err(Error::Invalid(format!("unknown key `{k}` in {}", if section.is_empty() { "top level".to_string() } else { format!("[{section}]") })));
        match section {
            "" => match k {
                "geometry" => self.geometry = Some(GeometrySource::parse(v, base)?),
                _ => return unknown(),
            },
            "scaling" => {
                if let Some((name, part)) = k.split_once('.') {
                    let Some(&pname) = PARAMS.iter().find(|&&p| p == name) else { return unknown() };
                    let e = coeffs.entry(pname).or_default();
                    match part {
                        "c" => e.0 = Some(positive(k, v)?),
                        "a" => e.1 = Some(parse_exponent(v)?),
                        _ => return unknown(),
                    }
                    *scaling_keys = true;
                } else {
                    match k {
                        "rho_f" => spec.rho_f = positive(k, v)?,
                        "rho_s" => spec.rho_s = positive(k, v)?,
                        "forcing_class" => self.forcing = ForcingClass::parse(v)?,
                        _ => return unknown(),
                    }
                }
            }
            "bindings" => {
                let x = ExtReal::parse(v)?;
                let b = &mut self.overrides;
                match k {
                    "lambda0" => b.lambda0 = Some(x),
                    "eta0" => b.eta0 = Some(x),
                    "mu0" => b.mu0 = Some(x),
                    "mu1" => b.mu1 = Some(x),
                    "tau0" => b.tau0 = Some(x),
                    "nu0" => b.nu0 = Some(x),
                    "p_star" => b.p_star = Some(x),
                    _ => return unknown(),
                }
            }
            "solver" => match k {
                "tol" => self.solver.tol = positive(k, v)?,
                "max_iter" => self.solver.max_iter = num(k, v)?,
                "threads" => {
                    self.solver.threads = num(k, v)?;
                    if self.solver.threads == 0 {
                        return Err(Error::Invalid("`threads` must be at least 1".into()));
                    }
                }
                "seed" => self.solver.seed = num(k, v)?,
                _ => return unknown(),
            },
            "schedule" => match k {
                "t1" => self.schedule.t1 = Some(positive(k, v)?),
                "ratio" => {
                    let r = positive(k, v)?;
                    if r < 1.0 {
                        return Err(Error::Invalid("`ratio` must be at least 1".into()));
                    }
                    self.schedule.ratio = Some(r);
                }
                "max_steps" => self.schedule.max_steps = Some(num(k, v)?),
                "decay" => self.schedule.decay = Some(positive(k, v)?),
                "stall" => self.schedule.stall = Some(positive(k, v)?),
                "keep_fields" => self.schedule.keep_fields = flag(k, v)?,
                _ => return unknown(),
            },
            "output" => match k {
                "dir" => self.output.dir = base.join(v),
                "prefix" => self.output.prefix = Some(v.to_string()),
                _ => return unknown(),
            },
            "macro" => {
                let m = &mut self.macro_;
                match k {
                    "n" => {
                        m.n = num(k, v)?;
                        if m.n == 0 {
                            return Err(Error::Invalid("`n` must be at least 1".into()));
                        }
                    }
                    "dim" => {
                        m.dim = num(k, v)?;
                        if m.dim != 2 && m.dim != 3 {
                            return Err(Error::Invalid("`dim` must be 2 or 3".into()));
                        }
                    }
                    "permeability" => {
                        let x = list(k, v, 9)?;
                        m.permeability = Some([[x[0], x[1], x[2]], [x[3], x[4], x[5]], [x[6], x[7], x[8]]]);
                    }
                    "coefficients" => m.coefficients = Some(base.join(v)),
                    "force" => {
                        let x = list(k, v, 3)?;
                        m.force = [x[0], x[1], x[2]];
                    }
                    "p_star" => m.p_star = Some(ExtReal::parse(v)?),
                    "nu0" => {
                        let x: f64 = num(k, v)?;
                        if !(x >= 0.0 && x.is_finite()) {
                            return Err(Error::Invalid("`nu0` must be non-negative".into()));
                        }
                        m.nu0 = Some(x);
                    }
                    "eta2" => m.eta2 = Some(ExtReal::parse(v)?),
                    "dt0" => m.dt0 = positive(k, v)?,
                    "dt_ratio" => m.dt_ratio = positive(k, v)?,
                    "steps" => m.steps = num(k, v)?,
                    "p0_amplitude" => m.p0_amplitude = num(k, v)?,
                    _ => return unknown(),
                }
            }
            _ => unreachable!("section validated on entry"),
        }
        Ok(())
    }
}

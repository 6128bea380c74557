//! Command-line front end.
//!
//! Exit codes: 0 success, 1 solver or I/O failure, 2 inadmissible
//! parameters, 3 a post-solve invariant check failed (downgraded to a
//! warning by `--skip-checks`).

use crate::config::RunConfig;
use crate::elastic::{assemble_effective_elastic, energy_identity_defect, solve_elastic_cell, EffectiveElasticSet, ElasticOptions};
use crate::error::{Error, Result};
use crate::fluid::{kernel_csv, kernel_integral, solve_neumann_b3, solve_steady_stokes, solve_unsteady_stokes, FluidOptions, Schedule};
use crate::macroscale::{
    darcy_mms_study, elem_centers, field_csv, lame_coercivity_probe, lame_mms_study, node_positions, solve_darcy_steady, solve_darcy_transient,
    solve_lame_static, synthetic_elastic_set, MacroGrid, MacroOptions, MacroSchedule, MmsStudy,
};
use crate::microcell::{analyze_connectivity, Connectivity, VoxelCell};
use crate::pde::tensor::{asym3, max_abs3, min_eig3, Mat3, Sym6};
use crate::report::{fmt_f64, mat3_rows, rows_mat3, rows_sym6, sym6_rows, Report};
use crate::scaling::{classify_spec, derive_limits, check_admissible, Bindings, ExtReal, Regime};
use crate::visco::{assemble_visco_kernels, initial_time_identity_defect, solve_visco_evolution, sym6_kernel_csv, ViscoOptions, ViscoParams, ViscoSchedule};
use clap::{Parser, Subcommand, ValueEnum};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "porocell", version, about = "Effective coefficients of periodic poroelastic media from voxel cells")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Classify the parameter regime and list the cell problems it needs.
    Classify {
        #[arg(long)]
        config: PathBuf,
    },
    /// Solve a cell problem and write a coefficient report.
    Cell {
        which: CellWhich,
        #[arg(long)]
        config: PathBuf,
        /// Report failed invariant checks as warnings.
        #[arg(long)]
        skip_checks: bool,
    },
    /// Demonstration macroscale solves on the unit cube.
    Macro {
        which: MacroWhich,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run the manufactured-solution convergence study instead.
        #[arg(long)]
        mms: bool,
        #[arg(long)]
        skip_checks: bool,
    },
    /// Merge coefficient reports; shared keys must agree.
    ReportMerge {
        #[arg(short, long)]
        output: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CellWhich {
    Elastic,
    Stokes,
    Unsteady,
    B3,
    Visco,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MacroWhich {
    DarcySteady,
    DarcyTransient,
    Lame,
}

/// Invariant checks gathered while building a report.
#[derive(Default)]
struct Checks {
    failed: Vec<String>,
}

impl Checks {
    fn check(&mut self, rep: &mut Report, name: &str, ok: bool, detail: String) {
        rep.set(format!("check.{name}"), if ok { "pass" } else { "fail" });
        if !detail.is_empty() {
            rep.set(format!("check.{name}.value"), detail.clone());
        }
        if !ok {
            self.failed.push(format!("{name} ({detail})"));
        }
    }
}

enum Failure {
    Error(Error),
    Checks(Vec<String>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

/// Runs the CLI with explicit arguments; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let skip = match &cli.command {
        Command::Cell { skip_checks, .. } | Command::Macro { skip_checks, .. } => *skip_checks,
        _ => false,
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(Failure::Checks(list)) => {
            for c in &list {
                let _ = writeln!(err, "{}: invariant check failed: {c}", if skip { "warning" } else { "error" });
            }
            if skip {
                0
            } else {
                3
            }
        }
        Err(Failure::Error(e)) => {
            let _ = writeln!(err, "error: {e}");
            match e.root() {
                Error::Inadmissible(_) => 2,
                _ => 1,
            }
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> std::result::Result<(), Failure> {
    match cmd {
        Command::Classify { config } => {
            let cfg = RunConfig::load(&config)?;
            cmd_classify(&cfg, out)
        }
        Command::Cell { which, config, .. } => {
            let cfg = RunConfig::load(&config)?;
            with_threads(cfg.solver.threads, out, err, |o, e| cmd_cell(&cfg, which, o, e))
        }
        Command::Macro { which, config, mms, .. } => {
            let cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            with_threads(cfg.solver.threads, out, err, |o, _| cmd_macro(&cfg, which, mms, o))
        }
        Command::ReportMerge { output, inputs } => {
            let mut merged = Report::new();
            let mut commands = Vec::new();
            for p in &inputs {
                let mut r = Report::load(p)?;
                if let Some(i) = r.entries.iter().position(|(k, _)| k == "command") {
                    commands.push(r.entries.remove(i).1);
                }
                merged.merge(&r).map_err(|e| e.labeled(p.display().to_string()))?;
            }
            merged.entries.insert(0, ("command".into(), format!("report-merge: {}", commands.join("; "))));
            merged.write(&output)?;
            let _ = writeln!(out, "merged {} reports into {}", inputs.len(), output.display());
            Ok(())
        }
    }
}

/// Runs `f` inside a rayon pool of the requested size. Output is buffered
/// because the caller's writers need not be `Send`.
fn with_threads<T: Send>(
    threads: usize,
    out: &mut dyn Write,
    err: &mut dyn Write,
    f: impl FnOnce(&mut dyn Write, &mut dyn Write) -> T + Send,
) -> T {
    if threads <= 1 {
        return f(out, err);
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(_) => return f(out, err),
    };
    let (mut o, mut e) = (Vec::new(), Vec::new());
    let r = pool.install(|| f(&mut o, &mut e));
    let _ = out.write_all(&o);
    let _ = err.write_all(&e);
    r
}

fn output_path(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.output.dir).map_err(|err| Error::Io { path: cfg.output.dir.display().to_string(), err })?;
    let prefix = cfg.output.prefix.as_deref().unwrap_or("");
    Ok(cfg.output.dir.join(format!("{prefix}{name}")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|err| Error::Io { path: path.display().to_string(), err })
}

fn synthetic_connectivity(isolated: bool) -> Connectivity {
    Connectivity {
        fluid_connected: !isolated,
        solid_connected: true,
        pores_isolated: isolated,
        fluid_wraps: [!isolated; 3],
        fluid_components: 1,
        solid_components: 1,
    }
}

/// Regime from the scaling section. Without a geometry the answer must not
/// depend on pore connectivity.
fn regime_for(cfg: &RunConfig, cell: Option<&VoxelCell>) -> Result<Option<Regime>> {
    let Some(spec) = &cfg.scaling else { return Ok(None) };
    if let Some(cell) = cell {
        return classify_spec(spec, &analyze_connectivity(cell), cfg.forcing).map(Some);
    }
    let connected = classify_spec(spec, &synthetic_connectivity(false), cfg.forcing)?;
    let isolated = classify_spec(spec, &synthetic_connectivity(true), cfg.forcing)?;
    if connected != isolated {
        return Err(Error::Invalid("this regime depends on whether the pores are connected; set `geometry`".into()));
    }
    Ok(Some(connected))
}

fn write_regime(rep: &mut Report, prefix: &str, r: &Regime) {
    rep.set(format!("{prefix}theorem"), r.theorem.as_str());
    rep.set(format!("{prefix}theorem.description"), r.theorem.description());
    if let Some(d) = r.darcy_form {
        rep.set(format!("{prefix}darcy_form"), d.as_str());
    }
    let problems: Vec<&str> = r.required_cell_problems.iter().map(|p| p.as_str()).collect();
    rep.set(format!("{prefix}cell_problems"), problems.join(","));
    for (k, v) in r.bindings.named() {
        rep.set(format!("{prefix}binding.{k}"), v);
    }
    for (k, from) in &r.remaps {
        rep.set(format!("{prefix}binding.{k}.from"), from);
    }
    for (i, s) in r.renormalization.iter().enumerate() {
        rep.set(format!("{prefix}renormalization.{i}"), &s.description);
        rep.set(format!("{prefix}renormalization.{i}.displacement_scale"), s.displacement_scale);
    }
    if let Some(f) = r.forcing_route {
        rep.set(format!("{prefix}forcing_route"), f.as_str());
    }
    for (i, n) in r.notes.iter().enumerate() {
        rep.set(format!("{prefix}note.{i}"), n);
    }
    if let Some(s) = &r.second {
        write_regime(rep, &format!("{prefix}second."), s);
    }
}

fn cmd_classify(cfg: &RunConfig, out: &mut dyn Write) -> std::result::Result<(), Failure> {
    let spec = cfg.scaling.ok_or_else(|| Error::Invalid("classify needs a [scaling] section with exponents".into()))?;
    let mut rep = Report::new();
    rep.set("command", "classify");
    rep.set("forcing_class", cfg.forcing.as_str());
    for (k, p) in spec.named() {
        rep.set(format!("scaling.{k}"), p);
    }
    let limits = derive_limits(&spec);
    for (k, v) in limits.named() {
        rep.set(format!("limit.{k}"), v);
    }
    // report violations before any other failure
    let adm = check_admissible(&limits);
    if !adm.is_ok() && !limits.tau0.is_infinite() {
        return Err(Error::Inadmissible(adm.violations).into());
    }
    let cell = cfg.geometry.as_ref().map(|g| g.load()).transpose()?;
    let regime = regime_for(cfg, cell.as_ref())?.expect("scaling present");
    write_regime(&mut rep, "regime.", &regime);
    if let Some(c) = &cell {
        write_geometry(&mut rep, c);
    }
    let _ = writeln!(out, "theorem: {}", regime.theorem.as_str());
    let _ = writeln!(out, "  {}", regime.theorem.description());
    let problems: Vec<&str> = regime.all_cell_problems().iter().map(|p| p.as_str()).collect();
    let _ = writeln!(out, "cell problems: {}", problems.join(", "));
    for (k, v) in regime.bindings.named() {
        let _ = writeln!(out, "  {k} = {v}");
    }
    if let Some(s) = &regime.second {
        let _ = writeln!(out, "second approximation: {}", s.theorem.as_str());
    }
    for n in &regime.notes {
        let _ = writeln!(out, "note: {n}");
    }
    rep.write(&output_path(cfg, "classify.rpt")?)?;
    Ok(())
}

fn write_geometry(rep: &mut Report, cell: &VoxelCell) {
    let d = cell.dims();
    rep.set("geometry.dims", format!("{} {} {}", d[0], d[1], d[2]));
    rep.set_f64("geometry.porosity", cell.porosity());
    let c = analyze_connectivity(cell);
    rep.set("connectivity.fluid_connected", c.fluid_connected);
    rep.set("connectivity.solid_connected", c.solid_connected);
    rep.set("connectivity.pores_isolated", c.pores_isolated);
    rep.set("connectivity.fluid_components", c.fluid_components);
    rep.set("connectivity.solid_components", c.solid_components);
}

/// Binding from `[bindings]`, else from the classified regime.
fn binding(cfg: &RunConfig, regime: Option<&Regime>, name: &str) -> Result<ExtReal> {
    let pick = |b: &Bindings| b.named().into_iter().find(|(k, _)| *k == name).map(|(_, v)| v);
    pick(&cfg.overrides)
        .or_else(|| regime.and_then(|r| pick(&r.bindings).or_else(|| r.second.as_deref().and_then(|s| pick(&s.bindings)))))
        .ok_or_else(|| Error::Invalid(format!("missing value for {name}: set it under [bindings] or give [scaling] exponents that bind it")))
}

fn finite_positive(name: &str, v: ExtReal) -> Result<f64> {
    match v {
        ExtReal::Finite(x) if x > 0.0 => Ok(x),
        _ => Err(Error::Invalid(format!("{name} must be finite and positive here, got {v}"))),
    }
}

fn check_mat3_symmetric(checks: &mut Checks, rep: &mut Report, name: &str, m: &Mat3) {
    let scale = max_abs3(m);
    let a = asym3(m);
    checks.check(rep, &format!("{name}_symmetric"), a <= 1e-8 * scale + 1e-15, fmt_f64(a));
}

fn check_sym6(checks: &mut Checks, rep: &mut Report, name: &str, m: &Sym6, need_spd: bool) -> Result<()> {
    let scale = m.max_abs();
    let a = m.max_asym();
    checks.check(rep, &format!("{name}_symmetric"), a <= 1e-8 * scale + 1e-15, fmt_f64(a));
    if need_spd {
        let e = m.min_eig(f64::INFINITY)?;
        checks.check(rep, &format!("{name}_spd"), e > 1e-10 * scale, fmt_f64(e));
    }
    Ok(())
}

fn cmd_cell(cfg: &RunConfig, which: CellWhich, out: &mut dyn Write, err: &mut dyn Write) -> std::result::Result<(), Failure> {
    let geo = cfg.geometry.as_ref().ok_or_else(|| Error::Invalid("cell commands need `geometry`".into()))?;
    let cell = geo.load()?;
    let regime = regime_for(cfg, Some(&cell))?;
    let conn = analyze_connectivity(&cell);
    let parallel = cfg.solver.threads > 1;
    let mut rep = Report::new();
    let mut checks = Checks::default();
    let name = match which {
        CellWhich::Elastic => "elastic",
        CellWhich::Stokes => "stokes",
        CellWhich::Unsteady => "unsteady",
        CellWhich::B3 => "b3",
        CellWhich::Visco => "visco",
    };
    rep.set("command", format!("cell {name}"));
    write_geometry(&mut rep, &cell);
    if let Some(r) = &regime {
        write_regime(&mut rep, "regime.", r);
    }
    rep.set_f64("provenance.tol", cfg.solver.tol);
    rep.set("provenance.max_iter", cfg.solver.max_iter);
    rep.set("provenance.threads", cfg.solver.threads);
    rep.set("provenance.seed", cfg.solver.seed);
    let (rho_f, rho_s) = cfg.scaling.map_or((1.0, 1.0), |s| (s.rho_f, s.rho_s));
    let fopts = FluidOptions { tol: cfg.solver.tol, max_iter: cfg.solver.max_iter, parallel };
    let mut notes: Vec<String> = Vec::new();
    match which {
        CellWhich::Elastic => {
            let lambda0 = finite_positive("lambda0", binding(cfg, regime.as_ref(), "lambda0")?)?;
            let eta0 = binding(cfg, regime.as_ref(), "eta0")?;
            rep.set("binding.lambda0", fmt_f64(lambda0));
            rep.set("binding.eta0", eta0);
            let opts = ElasticOptions { tol: cfg.solver.tol, max_iter: cfg.solver.max_iter, parallel };
            let sol = solve_elastic_cell(&cell, lambda0, eta0, &opts)?;
            let eff = assemble_effective_elastic(&sol, &cell)?.with_densities(rho_f, rho_s);
            write_elastic(&mut rep, &eff);
            let iters: usize = sol.uij.iter().chain([&sol.u0, &sol.u1]).map(|f| f.info.iterations).sum();
            rep.set(format!("provenance.iterations.{name}"), iters);
            check_sym6(&mut checks, &mut rep, "A0s", &eff.a0s, true)?;
            let defect = energy_identity_defect(&sol, &cell);
            checks.check(&mut rep, "energy_identity", defect <= 1e-5, fmt_f64(defect));
            let _ = writeln!(out, "A0s min eigenvalue {}", fmt_f64(eff.a0s.min_eig(f64::INFINITY)?));
        }
        CellWhich::Stokes => {
            let mu1 = finite_positive("mu1", binding(cfg, regime.as_ref(), "mu1")?)?;
            rep.set("binding.mu1", fmt_f64(mu1));
            let sol = solve_steady_stokes(&cell, mu1, &fopts)?;
            rep.block("B2", mat3_rows(&sol.b2));
            rep.set(format!("provenance.iterations.{name}"), sol.info.iter().map(|i| i.iterations).sum::<usize>());
            notes.extend(sol.notes.iter().cloned());
            check_mat3_symmetric(&mut checks, &mut rep, "B2", &sol.b2);
            let e = min_eig3(&sol.b2, f64::INFINITY)?;
            let scale = max_abs3(&sol.b2);
            checks.check(&mut rep, "B2_psd", e >= -1e-8 * scale, fmt_f64(e));
            if conn.fluid_connected && conn.fluid_wraps.iter().all(|&w| w) {
                checks.check(&mut rep, "B2_spd", e > 1e-10 * scale, fmt_f64(e));
            }
            let _ = writeln!(out, "B2 diagonal {} {} {}", fmt_f64(sol.b2[0][0]), fmt_f64(sol.b2[1][1]), fmt_f64(sol.b2[2][2]));
        }
        CellWhich::Unsteady => {
            let mu1 = finite_positive("mu1", binding(cfg, regime.as_ref(), "mu1")?)?;
            let tau0 = finite_positive("tau0", binding(cfg, regime.as_ref(), "tau0")?)?;
            rep.set("binding.mu1", fmt_f64(mu1));
            rep.set("binding.tau0", fmt_f64(tau0));
            rep.set_f64("rho_f", rho_f);
            let d = Schedule::default();
            let sched = Schedule {
                t1: cfg.schedule.t1,
                ratio: cfg.schedule.ratio.unwrap_or(d.ratio),
                max_steps: cfg.schedule.max_steps.unwrap_or(d.max_steps),
                decay: cfg.schedule.decay.unwrap_or(d.decay),
                keep_fields: cfg.schedule.keep_fields,
            };
            let sol = solve_unsteady_stokes(&cell, mu1, tau0, rho_f, &sched, &fopts)?;
            notes.extend(sol.notes.iter().cloned());
            rep.block("B1_at_0", mat3_rows(&sol.kernel[0].1));
            rep.block("B1_raw_at_0", mat3_rows(&sol.raw_b1_0));
            let integral = kernel_integral(&sol);
            rep.block("B1_integral", mat3_rows(&integral));
            rep.set_f64("kernel.t_stop", sol.t_stop);
            rep.set("kernel.samples", sol.kernel.len());
            rep.set("kernel.steps", sol.steps);
            rep.set("kernel.tail_rate", sol.tail_rate.iter().map(|&r| fmt_f64(r)).collect::<Vec<_>>().join(" "));
            let path = output_path(cfg, "B1_kernel.csv")?;
            write_text(&path, &kernel_csv(&sol.kernel))?;
            rep.set("kernel.csv", path.file_name().unwrap().to_string_lossy());
            let worst = sol.kernel.iter().map(|(_, b)| asym3(b) / max_abs3(b).max(f64::MIN_POSITIVE)).fold(0.0, f64::max);
            checks.check(&mut rep, "B1_symmetric", worst <= 1e-8, fmt_f64(worst));
            let _ = writeln!(out, "B1 kernel: {} samples, integral diagonal {} {} {}", sol.kernel.len(), fmt_f64(integral[0][0]), fmt_f64(integral[1][1]), fmt_f64(integral[2][2]));
        }
        CellWhich::B3 => {
            let sol = solve_neumann_b3(&cell, &fopts)?;
            rep.block("B3", mat3_rows(&sol.b3));
            rep.block("mI_minus_B3", mat3_rows(&sol.mi_minus_b3));
            rep.set(format!("provenance.iterations.{name}"), sol.info.iter().map(|i| i.iterations).sum::<usize>());
            check_mat3_symmetric(&mut checks, &mut rep, "B3", &sol.b3);
            let e = min_eig3(&sol.mi_minus_b3, f64::INFINITY)?;
            checks.check(&mut rep, "mI_minus_B3_psd", e >= -1e-8 * cell.porosity().max(f64::MIN_POSITIVE), fmt_f64(e));
            let _ = writeln!(out, "B3 diagonal {} {} {}", fmt_f64(sol.b3[0][0]), fmt_f64(sol.b3[1][1]), fmt_f64(sol.b3[2][2]));
        }
        CellWhich::Visco => {
            let get = |n: &str| binding(cfg, regime.as_ref(), n);
            let params = ViscoParams {
                mu0: finite_positive("mu0", get("mu0")?)?,
                lambda0: finite_positive("lambda0", get("lambda0")?)?,
                nu0: match get("nu0")? {
                    ExtReal::Zero => 0.0,
                    ExtReal::Finite(x) => x,
                    ExtReal::Infinite => return Err(Error::Invalid("nu0 must be finite for the visco cell problems".into()).into()),
                },
                p_star: get("p_star")?,
                eta0: get("eta0")?,
            };
            for (k, v) in [("mu0", params.mu0), ("lambda0", params.lambda0), ("nu0", params.nu0)] {
                rep.set(format!("binding.{k}"), fmt_f64(v));
            }
            rep.set("binding.p_star", params.p_star);
            rep.set("binding.eta0", params.eta0);
            let d = ViscoSchedule::default();
            let sched = ViscoSchedule {
                t1: cfg.schedule.t1,
                ratio: cfg.schedule.ratio.unwrap_or(d.ratio),
                max_steps: cfg.schedule.max_steps.unwrap_or(d.max_steps),
                stall: cfg.schedule.stall.unwrap_or(d.stall),
                keep_fields: cfg.schedule.keep_fields,
                ..d
            };
            let vopts = ViscoOptions { tol: cfg.solver.tol, max_iter: cfg.solver.max_iter, parallel };
            let sol = solve_visco_evolution(&cell, &params, &sched, &vopts)?;
            let k = assemble_visco_kernels(&sol, &cell)?;
            rep.block("A2", sym6_rows(&k.a2));
            rep.block("A3", sym6_rows(&k.a3));
            rep.block("A0f", sym6_rows(&k.a0f));
            rep.block("B4", mat3_rows(&k.b4));
            rep.set("kernel.samples", sol.times.len());
            rep.set("kernel.steps", sol.steps);
            for (file, text) in [
                ("A1f_kernel.csv", sym6_kernel_csv(&k.a1f)),
                ("A4_kernel.csv", sym6_kernel_csv(&k.a4)),
                ("B5_kernel.csv", kernel_csv(&k.b5)),
                ("C2_kernel.csv", kernel_csv(&k.c2)),
                ("a2_kernel.csv", scalar_kernel_csv("a2", &k.a2_kernel)),
            ] {
                let path = output_path(cfg, file)?;
                write_text(&path, &text)?;
            }
            check_sym6(&mut checks, &mut rep, "A2", &k.a2, false)?;
            check_sym6(&mut checks, &mut rep, "A3", &k.a3, true)?;
            if conn.pores_isolated {
                if params.nu0 == 0.0 {
                    let n = k.a2.max_abs();
                    checks.check(&mut rep, "A2_degenerate", n <= 1e-6 * params.mu0, fmt_f64(n));
                } else {
                    notes.push("pores are isolated but ν₀ > 0, so A2 keeps its volumetric part".into());
                }
            } else {
                check_sym6(&mut checks, &mut rep, "A2", &k.a2, true)?;
            }
            let defect = initial_time_identity_defect(&sol, &cell);
            checks.check(&mut rep, "initial_time_identity", defect <= 1e-5, fmt_f64(defect));
            let _ = writeln!(out, "visco kernels: {} samples, A2 max {}, A3 min eigenvalue {}", sol.times.len(), fmt_f64(k.a2.max_abs()), fmt_f64(k.a3.min_eig(f64::INFINITY)?));
        }
    }
    for (i, n) in notes.iter().enumerate() {
        rep.set(format!("note.{i}"), n);
        let _ = writeln!(err, "warning: {n}");
    }
    let path = output_path(cfg, &format!("cell_{name}.rpt"))?;
    rep.write(&path)?;
    let _ = writeln!(out, "wrote {}", path.display());
    if checks.failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Checks(checks.failed))
    }
}

fn scalar_kernel_csv(name: &str, k: &[(f64, f64)]) -> String {
    let mut s = format!("t,{name}\n");
    for (t, v) in k {
        s.push_str(&format!("{},{}\n", fmt_f64(*t), fmt_f64(*v)));
    }
    s
}

fn write_elastic(rep: &mut Report, e: &EffectiveElasticSet) {
    rep.block("A0s", sym6_rows(&e.a0s));
    rep.block("A1s", sym6_rows(&e.a1s));
    rep.block("B0s", mat3_rows(&e.b0s));
    if let Some(b) = &e.b1s {
        rep.block("B1s", mat3_rows(b));
    }
    rep.block("C0s", mat3_rows(&e.c0s));
    rep.set_f64("a0s", e.a0s_scalar);
    if let Some(a) = e.a1s_scalar {
        rep.set_f64("a1s", a);
    }
    if let Some(a) = e.a2s_scalar {
        rep.set_f64("a2s.reported_only", a);
    }
    rep.set_f64("m", e.m);
    rep.set_f64("rho_hat", e.rho_hat);
}

fn read_elastic(rep: &Report) -> Result<EffectiveElasticSet> {
    let blk = |n: &str| rep.get_block(n).ok_or_else(|| Error::Invalid(format!("coefficient report has no block `{n}`")));
    let m3 = |n: &str| -> Result<Mat3> { rows_mat3(blk(n)?).ok_or_else(|| Error::Invalid(format!("block `{n}` must be 3×3"))) };
    let s6 = |n: &str| -> Result<Sym6> { rows_sym6(blk(n)?).ok_or_else(|| Error::Invalid(format!("block `{n}` must be 6×6"))) };
    let f = |n: &str| rep.get_f64(n).ok_or_else(|| Error::Invalid(format!("coefficient report has no value `{n}`")));
    Ok(EffectiveElasticSet {
        a0s: s6("A0s")?,
        a1s: s6("A1s")?,
        b0s: m3("B0s")?,
        b1s: if rep.get_block("B1s").is_some() { Some(m3("B1s")?) } else { None },
        c0s: m3("C0s")?,
        a0s_scalar: f("a0s")?,
        a1s_scalar: rep.get_f64("a1s"),
        a2s_scalar: rep.get_f64("a2s.reported_only"),
        m: f("m")?,
        rho_hat: f("rho_hat")?,
    })
}

fn macro_permeability(cfg: &RunConfig) -> Result<Mat3> {
    if let Some(k) = cfg.macro_.permeability {
        return Ok(k);
    }
    if let Some(p) = &cfg.macro_.coefficients {
        let rep = Report::load(p)?;
        let rows = rep.get_block("B2").ok_or_else(|| Error::Invalid(format!("{} has no block `B2`", p.display())))?;
        return rows_mat3(rows).ok_or_else(|| Error::Invalid("block `B2` must be 3×3".into()));
    }
    Err(Error::Invalid("set [macro] permeability or coefficients".into()))
}

fn mms_report(rep: &mut Report, study: &MmsStudy, checks: &mut Checks) {
    let rows: Vec<Vec<f64>> = study.ns.iter().zip(&study.errors).map(|(&n, &e)| vec![n as f64, e]).collect();
    rep.block(format!("mms_{}", study.name), rows);
    for (i, o) in study.orders.iter().enumerate() {
        checks.check(rep, &format!("mms_{}_order_{i}", study.name), (1.8..=2.2).contains(o), fmt_f64(*o));
    }
}

fn write_fields(cfg: &RunConfig, rep: &mut Report, grid: &MacroGrid, fields: Vec<(&str, bool, Vec<f64>)>) -> Result<()> {
    let nodes = node_positions(grid);
    let centers = elem_centers(grid);
    for (name, nodal, values) in fields {
        let pos = if nodal { &nodes } else { &centers };
        let path = output_path(cfg, &format!("{name}.csv"))?;
        write_text(&path, &field_csv(name, grid, pos, &values))?;
        rep.set(format!("field.{name}"), path.file_name().unwrap().to_string_lossy());
    }
    Ok(())
}

fn cmd_macro(cfg: &RunConfig, which: MacroWhich, mms: bool, out: &mut dyn Write) -> std::result::Result<(), Failure> {
    let mc = &cfg.macro_;
    let opts = MacroOptions { tol: cfg.solver.tol.min(1e-10), max_iter: cfg.solver.max_iter.max(100_000) };
    let mut rep = Report::new();
    let mut checks = Checks::default();
    let name = match which {
        MacroWhich::DarcySteady => "darcy_steady",
        MacroWhich::DarcyTransient => "darcy_transient",
        MacroWhich::Lame => "lame",
    };
    rep.set("command", format!("macro {name}"));
    let rho_f = cfg.scaling.map_or(1.0, |s| s.rho_f);
    let force = mc.force;
    if mms {
        let study = match which {
            MacroWhich::DarcySteady => darcy_mms_study(2, &[16, 32, 64], &opts)?,
            MacroWhich::Lame => lame_mms_study(&[16, 32, 64], &opts)?,
            MacroWhich::DarcyTransient => return Err(Error::Invalid("--mms is available for darcy-steady and lame".into()).into()),
        };
        mms_report(&mut rep, &study, &mut checks);
        let _ = write!(out, "{}", study.table());
        write_text(&output_path(cfg, &format!("mms_{name}.csv"))?, &study.table())?;
    } else {
        let grid = MacroGrid::new(mc.n, mc.dim)?;
        rep.set("grid.n", grid.n);
        rep.set("grid.dim", grid.dim);
        match which {
            MacroWhich::DarcySteady => {
                let k = macro_permeability(cfg)?;
                rep.block("K", mat3_rows(&k));
                let st = solve_darcy_steady(&grid, &k, rho_f, &|_| force, &|_| 0.0, &opts)?;
                rep.set_f64("boundary_flux", st.boundary_flux);
                rep.set(format!("provenance.iterations.{name}"), st.info.iterations);
                checks.check(&mut rep, "no_flux", st.boundary_flux.abs() <= 1e-12 * (1.0 + max_abs3(&k) * rho_f * force.iter().map(|f| f.abs()).fold(0.0, f64::max)), fmt_f64(st.boundary_flux));
                let mut fields = vec![("q", true, st.q.clone())];
                for (d, n) in ["v_x", "v_y", "v_z"].iter().enumerate().take(grid.dim) {
                    fields.push((n, false, st.v.iter().map(|v| v[d]).collect()));
                }
                write_fields(cfg, &mut rep, &grid, fields)?;
                let _ = writeln!(out, "darcy steady: max |q| = {}", fmt_f64(st.q.iter().fold(0.0f64, |m, x| m.max(x.abs()))));
            }
            MacroWhich::DarcyTransient => {
                let k = macro_permeability(cfg)?;
                let p_star = mc.p_star.or(cfg.overrides.p_star).ok_or_else(|| Error::Invalid("set [macro] p_star".into()))?;
                let nu0 = match mc.nu0 {
                    Some(v) => v,
                    None => match cfg.overrides.nu0 {
                        Some(ExtReal::Finite(v)) => v,
                        Some(ExtReal::Zero) | None => 0.0,
                        Some(ExtReal::Infinite) => return Err(Error::Invalid("nu0 must be finite".into()).into()),
                    },
                };
                rep.block("K", mat3_rows(&k));
                rep.set("p_star", p_star);
                rep.set_f64("nu0", nu0);
                let amp = mc.p0_amplitude;
                let p0 = grid.interpolate(|x| amp * (0..grid.dim).map(|d| (std::f64::consts::PI * x[d]).cos()).product::<f64>());
                let sched = MacroSchedule { dt0: mc.dt0, ratio: mc.dt_ratio, max_steps: mc.steps, steady_tol: 0.0 };
                let r = solve_darcy_transient(&grid, &k, p_star, nu0, rho_f, &|_, _| force, Some(&p0), &sched, &opts)?;
                let rows: Vec<Vec<f64>> = (0..r.times.len()).map(|i| vec![r.times[i], r.energy[i], r.mean_p[i]]).collect();
                rep.block("energy", rows);
                if force == [0.0; 3] {
                    let mono = r.energy.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-300);
                    checks.check(&mut rep, "energy_non_increasing", mono, String::new());
                }
                write_fields(cfg, &mut rep, &grid, vec![("p", true, r.state.p.clone()), ("q", true, r.state.q.clone())])?;
                let _ = writeln!(out, "darcy transient: {} steps, final energy {}", r.times.len() - 1, fmt_f64(*r.energy.last().unwrap()));
            }
            MacroWhich::Lame => {
                let eff = match &mc.coefficients {
                    Some(p) => read_elastic(&Report::load(p)?)?,
                    None => synthetic_elastic_set(),
                };
                let eta2 = mc.eta2.unwrap_or(ExtReal::Finite(1.0));
                rep.set("eta2", eta2);
                let q = vec![0.0; grid.num_nodes()];
                let st = solve_lame_static(&grid, &eff, &q, &|_| force, eta2, &opts)?;
                rep.set(format!("provenance.iterations.{name}"), st.info.iterations);
                rep.set("operator_symmetric", st.symmetric);
                if st.symmetric && !eta2.is_infinite() {
                    let probe = lame_coercivity_probe(&grid, &eff, eta2.value(), 16, cfg.solver.seed);
                    checks.check(&mut rep, "coercivity_probe", probe > 0.0, fmt_f64(probe));
                }
                let mut fields = Vec::new();
                for (d, n) in ["u_x", "u_y", "u_z"].iter().enumerate().take(grid.dim) {
                    fields.push((*n, true, st.u.iter().map(|v| v[d]).collect()));
                }
                fields.push(("pi", false, st.pi.clone()));
                write_fields(cfg, &mut rep, &grid, fields)?;
                let _ = writeln!(out, "lame: max |u| = {}", fmt_f64(st.u.iter().flat_map(|v| v.iter()).fold(0.0f64, |m, x| m.max(x.abs()))));
            }
        }
    }
    let path = output_path(cfg, &format!("macro_{name}.rpt"))?;
    rep.write(&path)?;
    if checks.failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Checks(checks.failed))
    }
}

//! Coupled fluid–solid cell problems for the viscoelastic regime and the
//! memory kernels built from them.
//!
//! Unknowns are Q1 vertex displacements on the whole cell. Eliminating the
//! pressures turns each family into the differential-algebraic system
//! `M Ẇ + K W + g = 0`, where `M` carries the fluid viscosities (μ₀ shear,
//! ν₀ volumetric) and `K` the fluid bulk modulus p* and the solid moduli
//! (λ₀ shear, η₀ volumetric). An infinite p* or η₀ becomes a per-voxel
//! divergence constraint. Time stepping is implicit Euler.

use crate::error::{Error, Result, ResultExt};
use crate::microcell::VoxelCell;
use crate::pde::krylov::{cg_solve, dot, saddle_solve, CgOptions, LinearOperator, SaddleOptions, SaddleSystem, SolveInfo};
use crate::pde::q1::{
    add_div_load, add_tensor_load, elem_div_integral, elem_strain_integral, touched_nodes, translations, Q1Constraint, Q1Element,
    Q1Operator,
};
use crate::pde::tensor::{add3, j_basis, scale3, zero3, Mat3, Sym6, VOIGT_PAIRS};
use crate::pde::{NodeField, PeriodicGrid, RectOperator};
use crate::scaling::ExtReal;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViscoParams {
    pub mu0: f64,
    pub lambda0: f64,
    pub nu0: f64,
    pub p_star: ExtReal,
    pub eta0: ExtReal,
}

impl ViscoParams {
    fn validate(&self) -> Result<()> {
        if !(self.mu0 > 0.0 && self.mu0.is_finite()) {
            return Err(Error::Invalid(format!("μ₀ must be positive and finite, got {}", self.mu0)));
        }
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return Err(Error::Invalid(format!("λ₀ must be positive and finite, got {}", self.lambda0)));
        }
        if !(self.nu0 >= 0.0 && self.nu0.is_finite()) {
            return Err(Error::Invalid(format!("ν₀ must be non-negative and finite, got {}", self.nu0)));
        }
        if self.p_star.is_zero() {
            return Err(Error::Invalid("p* must be positive".into()));
        }
        if self.eta0.is_zero() {
            return Err(Error::Invalid("η₀ must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ViscoOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Solve the seven families concurrently.
    pub parallel: bool,
}

impl Default for ViscoOptions {
    fn default() -> Self {
        ViscoOptions { tol: 1e-10, max_iter: 50_000, parallel: false }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ViscoSchedule {
    /// First regular sample; `None` picks `0.01 μ₀ / max(λ₀, p*)`.
    pub t1: Option<f64>,
    pub ratio: f64,
    pub max_steps: usize,
    /// Stop once `‖W^{n+1} − W^n‖ ≤ max(stall, 1e3·tol) ‖W^{n+1}‖` for every family.
    pub stall: f64,
    /// Length of the start-up step as a fraction of `t1`.
    pub first_step_fraction: f64,
    pub min_steps: usize,
    pub keep_fields: bool,
}

impl Default for ViscoSchedule {
    fn default() -> Self {
        ViscoSchedule { t1: None, ratio: 1.25, max_steps: 400, stall: 1e-8, first_step_fraction: 1e-2, min_steps: 3, keep_fields: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViscoFamily {
    /// Unit strain-rate family `ij`, by Voigt index.
    Tensor(usize),
    /// Unit volumetric family.
    Zero,
}

impl ViscoFamily {
    pub fn all() -> [ViscoFamily; 7] {
        [0, 1, 2, 3, 4, 5].map(ViscoFamily::Tensor).into_iter().chain([ViscoFamily::Zero]).collect::<Vec<_>>().try_into().unwrap()
    }

    pub fn label(self) -> String {
        match self {
            ViscoFamily::Tensor(k) => {
                let (i, j) = VOIGT_PAIRS[k];
                format!("W^{{{}{}}}", i + 1, j + 1)
            }
            ViscoFamily::Zero => "W^0".into(),
        }
    }
}

/// Instantaneous response `W₀` on the fluid part with the pressure `Q₀` per
/// voxel (zero on solid).
#[derive(Debug, Clone)]
pub struct InitialField {
    pub w0: NodeField,
    pub q0: Vec<f64>,
    pub info: SolveInfo,
}

struct Setup {
    grid: PeriodicGrid,
    elem: Q1Element,
    fluid: Vec<usize>,
    solid: Vec<usize>,
    is_fluid: Vec<bool>,
}

impl Setup {
    fn new(cell: &VoxelCell) -> Setup {
        let grid = cell.grid();
        let is_fluid: Vec<bool> = (0..grid.len()).map(|e| cell.is_fluid(e)).collect();
        Setup {
            grid,
            elem: Q1Element::for_grid(&grid),
            fluid: (0..grid.len()).filter(|&e| is_fluid[e]).collect(),
            solid: (0..grid.len()).filter(|&e| !is_fluid[e]).collect(),
            is_fluid,
        }
    }

    fn per_elem(&self, fluid: f64, solid: f64) -> Vec<f64> {
        self.is_fluid.iter().map(|&f| if f { fluid } else { solid }).collect()
    }

    fn sum_strain(&self, u: &NodeField, elems: &[usize]) -> Mat3 {
        elems.iter().fold(zero3(), |acc, &e| add3(&acc, &elem_strain_integral(u, &self.elem, e)))
    }

    fn sum_div(&self, u: &NodeField, elems: &[usize]) -> f64 {
        elems.iter().map(|&e| elem_div_integral(u, &self.elem, e)).sum()
    }

    /// Voxels carrying a divergence constraint.
    fn constrained(&self, p: &ViscoParams) -> Vec<usize> {
        (0..self.grid.len())
            .filter(|&e| if self.is_fluid[e] { p.p_star.is_infinite() } else { p.eta0.is_infinite() })
            .collect()
    }
}

/// Solves `∫_{Y_f} (μ₀ D(W₀) + J):D(φ) + ν₀ (div W₀ + s) div φ = 0` with a
/// traction-free condition on γ (`J = J^{ij}, s = 0` or `J = 0, s = 1`).
/// With p* = ∞ the fluid divergence is constrained (`div W₀ = −s`) and `Q₀` is
/// the multiplier.
pub fn solve_visco_initial(cell: &VoxelCell, params: &ViscoParams, family: ViscoFamily, opts: &ViscoOptions) -> Result<InitialField> {
    params.validate()?;
    let s = Setup::new(cell);
    solve_initial(&s, params, family, opts).label(|| format!("visco initial problem {}", family.label()))
}

fn solve_initial(s: &Setup, params: &ViscoParams, family: ViscoFamily, opts: &ViscoOptions) -> Result<InitialField> {
    let (mu0, nu0) = (params.mu0, params.nu0);
    let grid = s.grid;
    let mut w0 = NodeField::zeros(grid);
    let mut q0 = vec![0.0; grid.len()];
    if s.fluid.is_empty() {
        return Ok(InitialField { w0, q0, info: SolveInfo { iterations: 0, rel_residual: 0.0 } });
    }
    let op = Q1Operator::new(grid, s.per_elem(mu0, 0.0), s.per_elem(nu0, 0.0));
    let mut f = vec![0.0; 3 * grid.len()];
    let w: Vec<(usize, f64)> = s.fluid.iter().map(|&e| (e, 1.0)).collect();
    let shift = match family {
        ViscoFamily::Tensor(k) => {
            let (i, j) = VOIGT_PAIRS[k];
            add_tensor_load(&grid, &s.elem, &w, &j_basis(i, j), &mut f);
            0.0
        }
        ViscoFamily::Zero => {
            let wn: Vec<(usize, f64)> = s.fluid.iter().map(|&e| (e, -nu0)).collect();
            add_div_load(&grid, &s.elem, &wn, &mut f);
            1.0
        }
    };
    let mask = touched_nodes(&grid, |e| s.is_fluid[e]);
    let null = translations(&mask);
    let pre = op.jacobi();
    if params.p_star.is_infinite() {
        if s.solid.is_empty() && shift != 0.0 {
            return Err(Error::IllPosed("an incompressible fluid filling the cell cannot take a unit volume change".into()));
        }
        let b = Q1Constraint::new(grid, s.fluid.clone());
        let g = vec![-shift * s.elem.volume; s.fluid.len()];
        let pre_p = vec![mu0 / s.elem.volume; s.fluid.len()];
        let p_null = if s.solid.is_empty() { vec![vec![1.0; s.fluid.len()]] } else { vec![] };
        let sys = SaddleSystem { a: &op, b: &b, precond_u: &pre, precond_p: &pre_p, p_nullspace: &p_null, u_nullspace: &null };
        let so = SaddleOptions { tol: opts.tol, max_iter: opts.max_iter, x0: None };
        let (x, lam, info) = saddle_solve(&sys, &f, &g, &so)?;
        w0.values = x;
        for (k, &e) in s.fluid.iter().enumerate() {
            // same sign as the penalty pressure −ν₀(div W₀ + s)
            q0[e] = -lam[k] / s.elem.volume;
        }
        return Ok(InitialField { w0, q0, info });
    }
    // rigid motions of isolated pores are also in the kernel; the load is
    // orthogonal to them and they do not affect strains
    let cg = CgOptions { tol: opts.tol, max_iter: opts.max_iter, nullspace: &null, precond: Some(&pre), x0: None };
    let (x, info) = cg_solve(&op, &f, &cg)?;
    w0.values = x;
    for &e in &s.fluid {
        q0[e] = -nu0 * (elem_div_integral(&w0, &s.elem, e) / s.elem.volume + shift);
    }
    Ok(InitialField { w0, q0, info })
}

/// Per-sample averages of one family (integrals over the unit cell).
#[derive(Debug, Clone, Copy)]
pub struct FamilySample {
    pub t: f64,
    /// ∫_{Y_f} D(∂_t W)
    pub rate_f: Mat3,
    /// ∫_{Y_s} D(W)
    pub strain_s: Mat3,
    /// ∫_{Y_f} div W
    pub div_f: f64,
}

#[derive(Debug, Clone)]
pub struct FamilyHistory {
    pub family: ViscoFamily,
    pub initial: InitialField,
    pub samples: Vec<FamilySample>,
    /// State and rate after the start-up step (the consistent `t = 0` state).
    pub w_start: NodeField,
    pub wdot_start: NodeField,
    /// Multiplier of the constraint rows at the start-up step.
    pub multiplier_start: Vec<f64>,
    pub w_final: NodeField,
    pub fields: Vec<(f64, NodeField)>,
    pub max_rel_residual: f64,
}

#[derive(Debug, Clone)]
pub struct ViscoCellSolution {
    pub params: ViscoParams,
    pub times: Vec<f64>,
    pub families: Vec<FamilyHistory>,
    pub steps: usize,
}

struct Stepper<'a> {
    s: &'a Setup,
    p: ViscoParams,
    constrained: Vec<usize>,
    m_op: Q1Operator,
}

impl<'a> Stepper<'a> {
    fn new(s: &'a Setup, p: ViscoParams) -> Stepper<'a> {
        let m_op = Q1Operator::new(s.grid, s.per_elem(p.mu0, 0.0), s.per_elem(p.nu0, 0.0));
        Stepper { s, p, constrained: s.constrained(&p), m_op }
    }

    fn finite(v: ExtReal) -> f64 {
        match v {
            ExtReal::Finite(x) => x,
            _ => 0.0,
        }
    }

    /// Stiffness part `K` as an operator.
    fn k_op(&self) -> Q1Operator {
        let (ps, eta) = (Self::finite(self.p.p_star), Self::finite(self.p.eta0));
        Q1Operator::new(self.s.grid, self.s.per_elem(0.0, self.p.lambda0), self.s.per_elem(ps, eta))
    }

    /// One implicit Euler step `(M + Δt K) W' = M W − Δt g`, constraints
    /// `∫_e div W' = c_e`. Returns the new state and the multiplier.
    /// Warm-started from `w` and `lam_prev`; late steps then barely iterate
    /// and the stall test is not swamped by solver noise.
    fn step(&self, fam: ViscoFamily, w: &NodeField, lam_prev: Option<&[f64]>, dt: f64, opts: &ViscoOptions) -> Result<(NodeField, Vec<f64>, SolveInfo)> {
        let s = self.s;
        let grid = s.grid;
        let (ps, eta) = (Self::finite(self.p.p_star), Self::finite(self.p.eta0));
        let shear = s.per_elem(self.p.mu0, dt * self.p.lambda0);
        let vol = s.per_elem(self.p.nu0 + dt * ps, dt * eta);
        let a = Q1Operator::new(grid, shear.clone(), vol.clone());
        let n = 3 * grid.len();
        let mut rhs = vec![0.0; n];
        self.m_op.apply(&w.values, &mut rhs);
        if fam == ViscoFamily::Zero {
            let loads: Vec<(usize, f64)> =
                (0..grid.len()).map(|e| (e, if s.is_fluid[e] { -dt * ps } else { -dt * eta })).filter(|&(_, v)| v != 0.0).collect();
            add_div_load(&grid, &s.elem, &loads, &mut rhs);
        }
        // M W and the divergence load are orthogonal to translations; drop
        // the roundoff component so the compatibility check sees a clean rhs
        for d in 0..3 {
            let mean = rhs.iter().skip(d).step_by(3).sum::<f64>() / grid.len() as f64;
            rhs.iter_mut().skip(d).step_by(3).for_each(|v| *v -= mean);
        }
        let null = translations(&vec![true; grid.len()]);
        let pre = a.jacobi();
        let mut out = NodeField::zeros(grid);
        if self.constrained.is_empty() {
            let cg = CgOptions { tol: opts.tol, max_iter: opts.max_iter, nullspace: &null, precond: Some(&pre), x0: Some(&w.values) };
            let (x, info) = cg_solve(&a, &rhs, &cg)?;
            out.values = x;
            return Ok((out, vec![], info));
        }
        let b = Q1Constraint::new(grid, self.constrained.clone());
        let target = if fam == ViscoFamily::Zero { -s.elem.volume } else { 0.0 };
        let g = vec![target; self.constrained.len()];
        let pre_p: Vec<f64> = self.constrained.iter().map(|&e| (shear[e] + vol[e]).max(f64::MIN_POSITIVE) / s.elem.volume).collect();
        let p_null = if self.constrained.len() == grid.len() { vec![vec![1.0; grid.len()]] } else { vec![] };
        let sys = SaddleSystem { a: &a, b: &b, precond_u: &pre, precond_p: &pre_p, p_nullspace: &p_null, u_nullspace: &null };
        // the saddle multiplier is Δt λ
        let lam0: Vec<f64> = match lam_prev {
            Some(l) if l.len() == self.constrained.len() => l.iter().map(|v| v * dt).collect(),
            _ => vec![0.0; self.constrained.len()],
        };
        let so = SaddleOptions { tol: opts.tol, max_iter: opts.max_iter, x0: Some((&w.values, &lam0)) };
        let (x, lam, info) = saddle_solve(&sys, &rhs, &g, &so)?;
        out.values = x;
        Ok((out, lam.into_iter().map(|v| v / dt).collect(), info))
    }

    fn sample(&self, t: f64, w: &NodeField, wdot: &NodeField) -> FamilySample {
        FamilySample {
            t,
            rate_f: self.s.sum_strain(wdot, &self.s.fluid),
            strain_s: self.s.sum_strain(w, &self.s.solid),
            div_f: self.s.sum_div(w, &self.s.fluid),
        }
    }
}

fn rate(a: &NodeField, b: &NodeField, dt: f64) -> NodeField {
    let mut r = NodeField::zeros(a.grid);
    for (k, v) in r.values.iter_mut().enumerate() {
        *v = (b.values[k] - a.values[k]) / dt;
    }
    r
}

pub fn solve_visco_evolution(cell: &VoxelCell, params: &ViscoParams, schedule: &ViscoSchedule, opts: &ViscoOptions) -> Result<ViscoCellSolution> {
    run_visco(cell, params, schedule, opts, None)
}

/// Only the initial problems and the start-up step: enough for the
/// instantaneous tensors A2, A3 and B4.
pub fn solve_visco_instantaneous(cell: &VoxelCell, params: &ViscoParams, schedule: &ViscoSchedule, opts: &ViscoOptions) -> Result<ViscoCellSolution> {
    run_visco(cell, params, schedule, opts, Some(0))
}

fn run_visco(cell: &VoxelCell, params: &ViscoParams, schedule: &ViscoSchedule, opts: &ViscoOptions, limit: Option<usize>) -> Result<ViscoCellSolution> {
    params.validate()?;
    if params.p_star.is_infinite() && params.eta0.is_infinite() {
        return Err(Error::IllPosed("p* = η₀ = ∞ forces div W⁰ = −1 on the whole periodic cell, which has no solution".into()));
    }
    if !(schedule.ratio >= 1.0) {
        return Err(Error::Invalid(format!("schedule ratio must be at least 1, got {}", schedule.ratio)));
    }
    let s = Setup::new(cell);
    let st = Stepper::new(&s, *params);
    let stiff = params.lambda0.max(Stepper::finite(params.p_star));
    let t1 = schedule.t1.unwrap_or(0.01 * params.mu0 / stiff);
    if !(t1 > 0.0 && t1.is_finite()) {
        return Err(Error::Invalid(format!("first sample time must be positive, got {t1}")));
    }
    let delta = schedule.first_step_fraction * t1;
    let fams = ViscoFamily::all();

    let map = |f: &(dyn Fn(usize) -> Result<FamilyHistory> + Sync)| -> Result<Vec<FamilyHistory>> {
        if opts.parallel {
            (0..7).into_par_iter().map(f).collect()
        } else {
            (0..7).map(f).collect()
        }
    };
    // initial problems and the start-up step from the fluid-only initial data
    let mut hist = map(&|k: usize| {
        let fam = fams[k];
        let initial = solve_initial(&s, params, fam, opts).label(|| format!("visco initial problem {}", fam.label()))?;
        let (w1, lam, info) = st.step(fam, &initial.w0, None, delta, opts).label(|| format!("visco problem {}, start-up step", fam.label()))?;
        let wdot = rate(&initial.w0, &w1, delta);
        let sample = st.sample(delta, &w1, &wdot);
        let fields = if schedule.keep_fields { vec![(delta, w1.clone())] } else { vec![] };
        Ok(FamilyHistory {
            family: fam,
            initial,
            samples: vec![sample],
            w_start: w1.clone(),
            wdot_start: wdot,
            multiplier_start: lam,
            w_final: w1,
            fields,
            max_rel_residual: info.rel_residual,
        })
    })?;
    // late steps have Δt K ≫ M, and the solve cannot resolve changes below a
    // few hundred times its tolerance; a tighter stall test would never fire
    let stall = schedule.stall.max(1e3 * opts.tol);
    let mut lams: Vec<Vec<f64>> = hist.iter().map(|h| h.multiplier_start.clone()).collect();
    let mut times = vec![delta];
    let mut t = delta;
    let mut next = t1;
    let mut steps = 0;
    let max_steps = limit.unwrap_or(schedule.max_steps);
    while steps < max_steps {
        let dt = next - t;
        let results: Vec<(NodeField, Vec<f64>, f64, bool)> = {
            let run = |k: usize| -> Result<(NodeField, Vec<f64>, f64, bool)> {
                let h = &hist[k];
                let (w, lam, info) = st.step(h.family, &h.w_final, Some(&lams[k]), dt, opts).label(|| format!("visco problem {}, step {}", h.family.label(), steps + 1))?;
                let diff: f64 = w.values.iter().zip(&h.w_final.values).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let size = dot(&w.values, &w.values).sqrt();
                let stalled = diff <= stall * size || size == 0.0;
                Ok((w, lam, info.rel_residual, stalled))
            };
            if opts.parallel {
                (0..7).into_par_iter().map(run).collect::<Result<_>>()?
            } else {
                (0..7).map(run).collect::<Result<_>>()?
            }
        };
        t = next;
        steps += 1;
        times.push(t);
        let mut all_stalled = true;
        for ((h, lam_k), (w, lam, res, stalled)) in hist.iter_mut().zip(lams.iter_mut()).zip(results) {
            *lam_k = lam;
            let wdot = rate(&h.w_final, &w, dt);
            h.samples.push(st.sample(t, &w, &wdot));
            h.max_rel_residual = h.max_rel_residual.max(res);
            if schedule.keep_fields {
                h.fields.push((t, w.clone()));
            }
            h.w_final = w;
            all_stalled &= stalled;
        }
        if all_stalled && steps >= schedule.min_steps {
            break;
        }
        next = t1 * schedule.ratio.powi(steps as i32);
    }
    if limit.is_none() && steps >= max_steps {
        return Err(Error::NotConverged { solver: "visco time stepping", iterations: steps, residual: 0.0 });
    }
    Ok(ViscoCellSolution { params: *params, times, families: hist, steps })
}

#[derive(Debug, Clone)]
pub struct ViscoKernelSet {
    pub a2: Sym6,
    pub a3: Sym6,
    pub a0f: Sym6,
    pub a1f: Vec<(f64, Sym6)>,
    pub a4: Vec<(f64, Sym6)>,
    pub b4: Mat3,
    pub b5: Vec<(f64, Mat3)>,
    pub c2: Vec<(f64, Mat3)>,
    pub c3: Vec<(f64, Mat3)>,
    pub a2_kernel: Vec<(f64, f64)>,
    pub a3_kernel: Vec<(f64, f64)>,
}

/// Three-point derivative weights on a non-uniform grid, one-sided at the ends.
fn derivative_weights(t: &[f64], i: usize) -> ([usize; 3], [f64; 3]) {
    let n = t.len();
    if i == 0 {
        let (h1, h2) = (t[1] - t[0], t[2] - t[1]);
        ([0, 1, 2], [-(2.0 * h1 + h2) / (h1 * (h1 + h2)), (h1 + h2) / (h1 * h2), -h1 / (h2 * (h1 + h2))])
    } else if i == n - 1 {
        let (h1, h2) = (t[n - 2] - t[n - 3], t[n - 1] - t[n - 2]);
        ([n - 3, n - 2, n - 1], [h2 / (h1 * (h1 + h2)), -(h1 + h2) / (h1 * h2), (h1 + 2.0 * h2) / (h2 * (h1 + h2))])
    } else {
        let (h1, h2) = (t[i] - t[i - 1], t[i + 1] - t[i]);
        ([i - 1, i, i + 1], [-h2 / (h1 * (h1 + h2)), (h2 - h1) / (h1 * h2), h1 / (h2 * (h1 + h2))])
    }
}

pub fn assemble_visco_kernels(sol: &ViscoCellSolution, cell: &VoxelCell) -> Result<ViscoKernelSet> {
    let s = Setup::new(cell);
    let p = sol.params;
    let m = cell.porosity();
    let tensor_fams: Vec<&FamilyHistory> = sol.families.iter().filter(|h| matches!(h.family, ViscoFamily::Tensor(_))).collect();
    let zero_fam = sol.families.iter().find(|h| h.family == ViscoFamily::Zero).ok_or_else(|| Error::Invalid("missing family W^0".into()))?;
    let idx = |i: usize, j: usize| VOIGT_PAIRS.iter().position(|&q| q == (i.min(j), i.max(j))).unwrap();

    let init_strain: Vec<Mat3> = tensor_fams.iter().map(|h| scale3(&s.sum_strain(&h.initial.w0, &s.fluid), p.mu0)).collect();
    let a0f = Sym6::sum_outer_j(|i, j| init_strain[idx(i, j)]);
    let a2 = Sym6::identity().scale(p.mu0 * m).add(&a0f.scale(p.mu0));
    let n = sol.times.len();
    let a1f: Vec<(f64, Sym6)> = (0..n)
        .map(|k| {
            let x: Vec<Mat3> = tensor_fams
                .iter()
                .map(|h| add3(&scale3(&h.samples[k].rate_f, p.mu0), &scale3(&h.samples[k].strain_s, p.lambda0)))
                .collect();
            (sol.times[k], Sym6::sum_outer_j(|i, j| x[idx(i, j)]))
        })
        .collect();
    let a3 = Sym6::identity().scale(p.lambda0 * (1.0 - m)).sub(&a0f.scale(p.lambda0)).add(&a1f[0].1.scale(p.mu0));
    let a4 = if n >= 3 {
        (0..n)
            .map(|k| {
                let (ix, w) = derivative_weights(&sol.times, k);
                let mut d = Sym6::zero();
                for (&i, &wi) in ix.iter().zip(&w) {
                    d = d.add(&a1f[i].1.scale(wi));
                }
                (sol.times[k], d.scale(p.mu0).sub(&a1f[k].1.scale(p.lambda0)))
            })
            .collect()
    } else {
        vec![]
    };
    let b4 = scale3(&s.sum_strain(&zero_fam.initial.w0, &s.fluid), p.mu0);
    let b5 = zero_fam
        .samples
        .iter()
        .map(|smp| (smp.t, add3(&scale3(&smp.rate_f, p.mu0), &scale3(&smp.strain_s, p.lambda0))))
        .collect();
    let c2: Vec<(f64, Mat3)> = (0..n)
        .map(|k| {
            let mut c = zero3();
            for i in 0..3 {
                for j in 0..3 {
                    c = add3(&c, &scale3(&j_basis(i, j), tensor_fams[idx(i, j)].samples[k].div_f));
                }
            }
            (sol.times[k], c)
        })
        .collect();
    let c3 = c2.iter().map(|(t, c)| (*t, scale3(c, -1.0))).collect();
    let a2_kernel: Vec<(f64, f64)> = zero_fam.samples.iter().map(|smp| (smp.t, smp.div_f)).collect();
    let a3_kernel = a2_kernel.iter().map(|&(t, v)| (t, -v)).collect();
    Ok(ViscoKernelSet { a2, a3, a0f, a1f, a4, b4, b5, c2, c3, a2_kernel, a3_kernel })
}

/// Both sides of the initial-time identity obtained by testing the momentum
/// equation of family `ij` at `t = 0` with `W₀^{kl}`:
/// `⟨M ∂_t W^{ij}(0), W₀^{kl}⟩` and `−⟨K W^{ij}(0), W₀^{kl}⟩ − ⟨λ, B W₀^{kl}⟩`,
/// where the first pairing is `μ₀ ∫_{Y_f} D(∂_t W):D(W₀) + ν₀ ∫_{Y_f} div ∂_t W div W₀`.
pub fn initial_time_identity(sol: &ViscoCellSolution, cell: &VoxelCell, ij: usize, kl: usize) -> (f64, f64) {
    let s = Setup::new(cell);
    let st = Stepper::new(&s, sol.params);
    let a = &sol.families[ij];
    let b = &sol.families[kl];
    let n = 3 * s.grid.len();
    let mut mw = vec![0.0; n];
    st.m_op.apply(&a.wdot_start.values, &mut mw);
    let lhs = dot(&mw, &b.initial.w0.values);
    let mut kw = vec![0.0; n];
    st.k_op().apply(&a.w_start.values, &mut kw);
    let mut rhs = -dot(&kw, &b.initial.w0.values);
    if !st.constrained.is_empty() {
        let c = Q1Constraint::new(s.grid, st.constrained.clone());
        let mut bw = vec![0.0; st.constrained.len()];
        c.apply(&b.initial.w0.values, &mut bw);
        rhs -= dot(&a.multiplier_start, &bw);
    }
    (lhs, rhs)
}

/// Largest mismatch of the initial-time identity over the 36 tensor pairs,
/// relative to the largest entry.
pub fn initial_time_identity_defect(sol: &ViscoCellSolution, cell: &VoxelCell) -> f64 {
    let pairs: Vec<(f64, f64)> = (0..36).map(|k| initial_time_identity(sol, cell, k / 6, k % 6)).collect();
    let scale = pairs.iter().map(|(a, b)| a.abs().max(b.abs())).fold(1e-300, f64::max);
    pairs.iter().map(|(a, b)| (a - b).abs() / scale).fold(0.0, f64::max)
}

/// Max over fluid voxels of `|μ₀ D(W₀^{ij}) + J^{ij}|` (voxel means), the
/// isolated-pore degeneration residual.
pub fn isolated_pore_residual(init: &InitialField, cell: &VoxelCell, mu0: f64, k: usize) -> f64 {
    let s = Setup::new(cell);
    let (i, j) = VOIGT_PAIRS[k];
    let jm = j_basis(i, j);
    s.fluid
        .iter()
        .map(|&e| {
            let d = scale3(&elem_strain_integral(&init.w0, &s.elem, e), mu0 / s.elem.volume);
            crate::pde::tensor::max_abs3(&add3(&d, &jm))
        })
        .fold(0.0, f64::max)
}

/// Kernel rows as CSV; 6×6 blocks are flattened row-major in Voigt order.
pub fn sym6_kernel_csv(kernel: &[(f64, Sym6)]) -> String {
    let mut s = String::from("t");
    for r in 0..6 {
        for c in 0..6 {
            s.push_str(&format!(",A{}{}", r + 1, c + 1));
        }
    }
    s.push('\n');
    for (t, a) in kernel {
        s.push_str(&crate::report::fmt_f64(*t));
        for row in &a.0 {
            for v in row {
                s.push(',');
                s.push_str(&crate::report::fmt_f64(*v));
            }
        }
        s.push('\n');
    }
    s
}

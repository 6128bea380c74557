//! Fluid cell problems on the pore space: steady and unsteady Stokes on a
//! MAC grid and the Neumann potential problem, with the permeability-type
//! matrices built from them.
//!
//! Averages of fluid fields are taken over the fluid part extended by zero,
//! i.e. over the whole cell.

use crate::error::{Error, Result, ResultExt};
use crate::microcell::VoxelCell;
use crate::pde::krylov::{cg_solve, saddle_solve, CgOptions, LinearOperator, SaddleOptions, SaddleSystem, SolveInfo};
use crate::pde::tensor::{zero3, Mat3};
use crate::pde::{Csr, PeriodicGrid, ScalarField, VectorField};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy)]
pub struct FluidOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Solve the three directions concurrently.
    pub parallel: bool,
}

impl Default for FluidOptions {
    fn default() -> Self {
        FluidOptions { tol: 1e-9, max_iter: 50_000, parallel: false }
    }
}

/// Geometric time grid `t_k = t₁ r^{k-1}` for the unsteady problem.
#[derive(Debug, Clone, Copy)]
pub struct Schedule {
    /// First sample time; `None` picks `0.01 τ₀ρ_f h_visc² / μ₁`.
    pub t1: Option<f64>,
    pub ratio: f64,
    pub max_steps: usize,
    /// Stop once every column satisfies `‖⟨V⟩‖ ≤ decay · max_i ‖⟨V^i⟩(0)‖`.
    pub decay: f64,
    /// Keep the velocity fields at every sample (memory heavy).
    pub keep_fields: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { t1: None, ratio: 1.25, max_steps: 2000, decay: 1e-6, keep_fields: false }
    }
}

/// Unknown numbering for the pore space.
struct FluidMesh {
    grid: PeriodicGrid,
    /// Face `(d, c)` ↦ velocity unknown, for faces between two fluid cells.
    face_id: [Vec<Option<usize>>; 3],
    faces: Vec<(usize, usize)>,
    cell_id: Vec<Option<usize>>,
    cells: Vec<usize>,
    /// Fluid components as lists of pressure unknowns.
    components: Vec<Vec<usize>>,
}

impl FluidMesh {
    fn new(cell: &VoxelCell) -> FluidMesh {
        let grid = cell.grid();
        let n = grid.len();
        let mut face_id: [Vec<Option<usize>>; 3] = [vec![None; n], vec![None; n], vec![None; n]];
        let mut faces = Vec::new();
        for (d, ids) in face_id.iter_mut().enumerate() {
            for c in 0..n {
                if cell.is_fluid(c) && cell.is_fluid(grid.shift(c, d, 1)) {
                    ids[c] = Some(faces.len());
                    faces.push((d, c));
                }
            }
        }
        let mut cell_id = vec![None; n];
        let mut cells = Vec::new();
        for c in 0..n {
            if cell.is_fluid(c) {
                cell_id[c] = Some(cells.len());
                cells.push(c);
            }
        }
        let mut seen = vec![false; n];
        let mut components = Vec::new();
        for &start in &cells {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let mut comp = Vec::new();
            while let Some(c) = stack.pop() {
                comp.push(cell_id[c].unwrap());
                for d in 0..3 {
                    for o in [-1isize, 1] {
                        let nb = grid.shift(c, d, o);
                        if cell.is_fluid(nb) && !seen[nb] {
                            seen[nb] = true;
                            stack.push(nb);
                        }
                    }
                }
            }
            components.push(comp);
        }
        FluidMesh { grid, face_id, faces, cell_id, cells, components }
    }

    fn nu(&self) -> usize {
        self.faces.len()
    }

    fn np(&self) -> usize {
        self.cells.len()
    }

    fn fluid(&self, c: usize) -> bool {
        self.cell_id[c].is_some()
    }

    /// Positive semi-definite `-Δ` on fluid faces with no-slip on γ: a
    /// tangential neighbour face lying between two solid cells is mirrored
    /// (ghost value `-u`, wall on the cell boundary), one with a single solid
    /// cell or a normal neighbour touching solid is set to zero.
    fn laplacian(&self) -> Csr {
        let g = self.grid;
        let mut t = Vec::with_capacity(7 * self.nu());
        for (row, &(d, c)) in self.faces.iter().enumerate() {
            let mut diag = 0.0;
            for a in 0..3 {
                let w = 1.0 / (g.h(a) * g.h(a));
                for o in [-1isize, 1] {
                    let nb = g.shift(c, a, o);
                    match self.face_id[d][nb] {
                        Some(col) => {
                            diag += w;
                            t.push((row, col, -w));
                        }
                        None => {
                            let both_solid = a != d && !self.fluid(nb) && !self.fluid(g.shift(nb, d, 1));
                            diag += if both_solid { 2.0 * w } else { w };
                        }
                    }
                }
            }
            t.push((row, row, diag));
        }
        Csr::from_triplets(self.nu(), self.nu(), t).with_symmetric(true)
    }

    /// `B = -div`, rows on fluid cells.
    fn neg_div(&self) -> Csr {
        let g = self.grid;
        let mut t = Vec::new();
        for (row, &c) in self.cells.iter().enumerate() {
            for d in 0..3 {
                if let Some(col) = self.face_id[d][c] {
                    t.push((row, col, -1.0 / g.h(d)));
                }
                if let Some(col) = self.face_id[d][g.shift(c, d, -1)] {
                    t.push((row, col, 1.0 / g.h(d)));
                }
            }
        }
        Csr::from_triplets(self.np(), self.nu(), t)
    }

    fn pressure_nullspace(&self) -> Vec<Vec<f64>> {
        self.components
            .iter()
            .map(|comp| {
                let mut v = vec![0.0; self.np()];
                for &i in comp {
                    v[i] = 1.0;
                }
                v
            })
            .collect()
    }

    /// Unit force in direction `i` on the fluid faces.
    fn unit_force(&self, i: usize) -> Vec<f64> {
        self.faces.iter().map(|&(d, _)| if d == i { 1.0 } else { 0.0 }).collect()
    }

    /// ∫ u over the cell, with u zero off the fluid faces.
    fn mean(&self, u: &[f64]) -> [f64; 3] {
        let vol = self.grid.cell_volume();
        let mut m = [0.0; 3];
        for (k, &(d, _)) in self.faces.iter().enumerate() {
            m[d] += u[k] * vol;
        }
        m
    }

    fn to_vector_field(&self, u: &[f64]) -> VectorField {
        let mut v = VectorField::zeros(self.grid);
        for (k, &(d, c)) in self.faces.iter().enumerate() {
            v.comps[d][c] = u[k];
        }
        v
    }

    fn to_scalar_field(&self, p: &[f64]) -> ScalarField {
        let mut s = ScalarField::zeros(self.grid);
        for (k, &c) in self.cells.iter().enumerate() {
            s.values[c] = p[k];
        }
        s
    }

    /// Width of the narrowest fluid channel: for each fluid cell the
    /// shortest fluid run through it along the three axes, minimised.
    fn narrowest_channel(&self) -> f64 {
        let g = self.grid;
        let mut best = f64::INFINITY;
        for &c in &self.cells {
            let mut w = f64::INFINITY;
            for a in 0..3 {
                let n = g.dims[a];
                let mut run = 1;
                let mut x = g.shift(c, a, 1);
                while run < n && self.fluid(x) {
                    run += 1;
                    x = g.shift(x, a, 1);
                }
                let mut x = g.shift(c, a, -1);
                while run < n && self.fluid(x) {
                    run += 1;
                    x = g.shift(x, a, -1);
                }
                w = w.min(run as f64 * g.h(a));
            }
            best = best.min(w);
        }
        best
    }
}

struct Shifted<'a> {
    l: &'a Csr,
    mu: f64,
    shift: f64,
}

impl LinearOperator for Shifted<'_> {
    fn dim(&self) -> usize {
        self.l.rows
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.l.matvec(x, y);
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi = self.mu * *yi + self.shift * xi;
        }
    }
    fn is_symmetric(&self) -> bool {
        true
    }
}

fn check_phases(cell: &VoxelCell, what: &str) -> Result<()> {
    if cell.solid_count() == 0 {
        return Err(Error::IllPosed(format!("{what}: all-fluid cell has no solid anchor")));
    }
    Ok(())
}

fn mat_from_columns(cols: &[[f64; 3]]) -> Mat3 {
    let mut m = zero3();
    for (i, c) in cols.iter().enumerate() {
        for j in 0..3 {
            m[j][i] = c[j];
        }
    }
    m
}

fn map_dirs<T: Send>(parallel: bool, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    if parallel {
        (0..3).into_par_iter().map(f).collect()
    } else {
        (0..3).map(f).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SteadyStokesSolution {
    pub mu1: f64,
    pub velocity: Vec<VectorField>,
    pub pressure: Vec<ScalarField>,
    pub info: Vec<SolveInfo>,
    pub b2: Mat3,
    pub notes: Vec<String>,
}

pub fn solve_steady_stokes(cell: &VoxelCell, mu1: f64, opts: &FluidOptions) -> Result<SteadyStokesSolution> {
    if !(mu1 > 0.0 && mu1.is_finite()) {
        return Err(Error::Invalid(format!("μ₁ must be positive and finite, got {mu1}")));
    }
    check_phases(cell, "steady Stokes cell problem")?;
    let grid = cell.grid();
    if cell.fluid_count() == 0 {
        return Ok(SteadyStokesSolution {
            mu1,
            velocity: vec![VectorField::zeros(grid); 3],
            pressure: vec![ScalarField::zeros(grid); 3],
            info: vec![SolveInfo { iterations: 0, rel_residual: 0.0 }; 3],
            b2: zero3(),
            notes: vec!["no fluid phase: zero solution".into()],
        });
    }
    let mesh = FluidMesh::new(cell);
    let lap = mesh.laplacian();
    let b = mesh.neg_div();
    let a = Shifted { l: &lap, mu: mu1, shift: 0.0 };
    let pre_u: Vec<f64> = lap.diagonal().iter().map(|d| 1.0 / (mu1 * d)).collect();
    let pre_p = vec![mu1; mesh.np()];
    let pnull = mesh.pressure_nullspace();
    let solve = |i: usize| -> Result<(Vec<f64>, Vec<f64>, SolveInfo)> {
        let sys = SaddleSystem { a: &a, b: &b, precond_u: &pre_u, precond_p: &pre_p, p_nullspace: &pnull, u_nullspace: &[] };
        let so = SaddleOptions { tol: opts.tol, max_iter: opts.max_iter, x0: None };
        saddle_solve(&sys, &mesh.unit_force(i), &vec![0.0; mesh.np()], &so).label(|| format!("steady Stokes cell problem, direction {}", i + 1))
    };
    let out = map_dirs(opts.parallel, solve)?;
    let cols: Vec<[f64; 3]> = out.iter().map(|(u, _, _)| mesh.mean(u)).collect();
    Ok(SteadyStokesSolution {
        mu1,
        velocity: out.iter().map(|(u, _, _)| mesh.to_vector_field(u)).collect(),
        pressure: out.iter().map(|(_, p, _)| mesh.to_scalar_field(p)).collect(),
        info: out.iter().map(|o| o.2).collect(),
        b2: mat_from_columns(&cols),
        notes: vec![],
    })
}

pub fn permeability_b2(sol: &SteadyStokesSolution) -> Mat3 {
    sol.b2
}

#[derive(Debug, Clone)]
pub struct UnsteadyStokesSolution {
    pub mu1: f64,
    pub tau0: f64,
    pub rho_f: f64,
    /// `(t_k, B1(t_k))` starting with the projected value at `t = 0`.
    pub kernel: Vec<(f64, Mat3)>,
    /// `(m / (τ₀ρ_f)) I`, the average of the initial data before projection.
    pub raw_b1_0: Mat3,
    /// Time after which the kernel is approximated by an exponential tail.
    pub t_stop: f64,
    /// Decay rate of the tail per direction, from the last two samples.
    pub tail_rate: [f64; 3],
    pub velocity: Vec<Vec<(f64, VectorField)>>,
    pub steps: usize,
    pub notes: Vec<String>,
}

/// Implicit Euler for `τ₀ρ_f ∂V/∂t − μ₁ΔV + ∇Q = 0`, `div V = 0`, starting
/// from the discrete Leray projection of `e_i/(τ₀ρ_f)`.
pub fn solve_unsteady_stokes(cell: &VoxelCell, mu1: f64, tau0: f64, rho_f: f64, schedule: &Schedule, opts: &FluidOptions) -> Result<UnsteadyStokesSolution> {
    if mu1 == 0.0 {
        return Err(Error::NotApplicable("μ₁ = 0 has no viscous kernel; use the Neumann problem for B3 instead".into()));
    }
    if !(mu1 > 0.0 && mu1.is_finite()) {
        return Err(Error::Invalid(format!("μ₁ must be positive and finite, got {mu1}")));
    }
    let c = tau0 * rho_f;
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Invalid(format!("τ₀ρ_f must be positive and finite, got {c}")));
    }
    if !(schedule.ratio >= 1.0) {
        return Err(Error::Invalid(format!("schedule ratio must be at least 1, got {}", schedule.ratio)));
    }
    check_phases(cell, "unsteady Stokes cell problem")?;
    let m = cell.porosity();
    let mut raw = zero3();
    for (d, row) in raw.iter_mut().enumerate() {
        row[d] = m / c;
    }
    if cell.fluid_count() == 0 {
        return Ok(UnsteadyStokesSolution {
            mu1,
            tau0,
            rho_f,
            kernel: vec![(0.0, zero3())],
            raw_b1_0: raw,
            t_stop: 0.0,
            tail_rate: [0.0; 3],
            velocity: vec![],
            steps: 0,
            notes: vec!["no fluid phase: zero kernel".into()],
        });
    }
    let mesh = FluidMesh::new(cell);
    let lap = mesh.laplacian();
    let b = mesh.neg_div();
    let pnull = mesh.pressure_nullspace();
    let h_visc = mesh.narrowest_channel();
    let t1 = schedule.t1.unwrap_or(0.01 * c * h_visc * h_visc / mu1);
    if !(t1 > 0.0 && t1.is_finite()) {
        return Err(Error::Invalid(format!("first sample time must be positive, got {t1}")));
    }

    // projection: V = V0 - Bᵀφ with B Bᵀ φ = B V0
    let bbt = crate::pde::krylov::FnOperator {
        n: mesh.np(),
        f: |x: &[f64], y: &mut [f64]| {
            let mut tmp = vec![0.0; mesh.nu()];
            b.matvec_t(x, &mut tmp);
            b.matvec(&tmp, y);
        },
        symmetric: true,
    };
    let project = |i: usize| -> Result<Vec<f64>> {
        let v0: Vec<f64> = mesh.unit_force(i).into_iter().map(|v| v / c).collect();
        let mut rhs = vec![0.0; mesh.np()];
        b.matvec(&v0, &mut rhs);
        let cg = CgOptions { tol: opts.tol, max_iter: opts.max_iter, nullspace: &pnull, precond: None, x0: None };
        let (phi, _) = cg_solve(&bbt, &rhs, &cg)?;
        let mut corr = vec![0.0; mesh.nu()];
        b.matvec_t(&phi, &mut corr);
        Ok(v0.iter().zip(&corr).map(|(a, b)| a - b).collect())
    };
    let v_init: Vec<Vec<f64>> = map_dirs(opts.parallel, |i| project(i).label(|| format!("initial projection, direction {}", i + 1)))?;
    let mean0: Vec<[f64; 3]> = v_init.iter().map(|v| mesh.mean(v)).collect();
    let norm3 = |v: &[f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let ref_norm = mean0.iter().map(norm3).fold(0.0, f64::max);
    let mut notes = Vec::new();
    let mut kernel = vec![(0.0, mat_from_columns(&mean0))];
    let mut velocity: Vec<Vec<(f64, VectorField)>> = vec![Vec::new(); 3];
    if schedule.keep_fields {
        for i in 0..3 {
            velocity[i].push((0.0, mesh.to_vector_field(&v_init[i])));
        }
    }
    if ref_norm <= 1e-12 * m / c {
        notes.push("projected initial data has zero mean: pores are isolated, kernel vanishes".into());
        return Ok(UnsteadyStokesSolution { mu1, tau0, rho_f, kernel, raw_b1_0: raw, t_stop: 0.0, tail_rate: [0.0; 3], velocity, steps: 0, notes });
    }

    let lap_diag = lap.diagonal();
    let mut v = v_init;
    let mut p_prev: Vec<Option<Vec<f64>>> = vec![None; 3];
    let mut t = 0.0;
    let mut dt = t1;
    let mut steps = 0;
    let mut history: Vec<[[f64; 3]; 3]> = vec![[mean0[0], mean0[1], mean0[2]]];
    loop {
        if steps >= schedule.max_steps {
            return Err(Error::NotConverged { solver: "unsteady Stokes time stepping", iterations: steps, residual: 0.0 });
        }
        let shift = c / dt;
        let a = Shifted { l: &lap, mu: mu1, shift };
        let pre_u: Vec<f64> = lap_diag.iter().map(|d| 1.0 / (mu1 * d + shift)).collect();
        // diagonal Schur estimate B diag(A)⁻¹ Bᵀ ≈ L / (μ₁ L + c/Δt), L = Σ_a 2/h_a²
        let g = mesh.grid;
        let lap_scale: f64 = (0..3).map(|a| 2.0 / (g.h(a) * g.h(a))).sum();
        let pre_p = vec![(mu1 * lap_scale + shift) / lap_scale; mesh.np()];
        let step = |i: usize| -> Result<(Vec<f64>, Vec<f64>)> {
            let f: Vec<f64> = v[i].iter().map(|x| shift * x).collect();
            let sys = SaddleSystem { a: &a, b: &b, precond_u: &pre_u, precond_p: &pre_p, p_nullspace: &pnull, u_nullspace: &[] };
            let x0 = p_prev[i].as_ref().map(|p| (v[i].as_slice(), p.as_slice()));
            let so = SaddleOptions { tol: opts.tol, max_iter: opts.max_iter, x0 };
            let (u, p, _) = saddle_solve(&sys, &f, &vec![0.0; mesh.np()], &so)
                .label(|| format!("unsteady Stokes cell problem, direction {}, step {}", i + 1, steps + 1))?;
            Ok((u, p))
        };
        let out = map_dirs(opts.parallel, step)?;
        t += dt;
        steps += 1;
        let mut cols = [[0.0; 3]; 3];
        for (i, (u, p)) in out.into_iter().enumerate() {
            cols[i] = mesh.mean(&u);
            v[i] = u;
            p_prev[i] = Some(p);
            if schedule.keep_fields {
                velocity[i].push((t, mesh.to_vector_field(&v[i])));
            }
        }
        kernel.push((t, mat_from_columns(&cols)));
        history.push(cols);
        if cols.iter().all(|col| norm3(col) <= schedule.decay * ref_norm) {
            break;
        }
        dt *= schedule.ratio;
    }
    // exponential tail rate from the last two samples, per direction
    let k = history.len();
    let (t_a, t_b) = (kernel[k - 2].0, kernel[k - 1].0);
    let mut tail_rate = [0.0; 3];
    for i in 0..3 {
        let (na, nb) = (norm3(&history[k - 2][i]), norm3(&history[k - 1][i]));
        tail_rate[i] = if na > 0.0 && nb > 0.0 && nb < na { (na / nb).ln() / (t_b - t_a) } else { f64::INFINITY };
    }
    Ok(UnsteadyStokesSolution { mu1, tau0, rho_f, kernel, raw_b1_0: raw, t_stop: t, tail_rate, velocity, steps, notes })
}

pub fn kernel_b1(sol: &UnsteadyStokesSolution) -> &[(f64, Mat3)] {
    &sol.kernel
}

/// `∫₀^∞ B1 dt` by the right-endpoint rule on the time grid (the rule that
/// matches implicit Euler) plus an exponential tail beyond the last sample.
pub fn kernel_integral(sol: &UnsteadyStokesSolution) -> Mat3 {
    let mut acc = zero3();
    for w in sol.kernel.windows(2) {
        let dt = w[1].0 - w[0].0;
        for r in 0..3 {
            for c in 0..3 {
                acc[r][c] += dt * w[1].1[r][c];
            }
        }
    }
    if let Some((_, last)) = sol.kernel.last() {
        for c in 0..3 {
            let rate = sol.tail_rate[c];
            if rate.is_finite() && rate > 0.0 {
                for r in 0..3 {
                    acc[r][c] += last[r][c] / rate;
                }
            }
        }
    }
    acc
}

#[derive(Debug, Clone)]
pub struct NeumannSolution {
    pub potential: Vec<ScalarField>,
    pub b3: Mat3,
    pub mi_minus_b3: Mat3,
    pub info: Vec<SolveInfo>,
}

/// `Δ R_i = 0` in the fluid, `∇R_i · n = n · e_i` on γ, by a cell-centred
/// finite-volume scheme on fluid voxels.
pub fn solve_neumann_b3(cell: &VoxelCell, opts: &FluidOptions) -> Result<NeumannSolution> {
    check_phases(cell, "Neumann cell problem")?;
    let grid = cell.grid();
    let m = cell.porosity();
    if cell.fluid_count() == 0 {
        return Ok(NeumannSolution {
            potential: vec![ScalarField::zeros(grid); 3],
            b3: zero3(),
            mi_minus_b3: zero3(),
            info: vec![SolveInfo { iterations: 0, rel_residual: 0.0 }; 3],
        });
    }
    let mesh = FluidMesh::new(cell);
    let vol = grid.cell_volume();
    // volume-scaled operator: Σ_nb (R_c - R_nb) |e| / h_a²
    let mut t = Vec::new();
    for (row, &c) in mesh.cells.iter().enumerate() {
        let mut diag = 0.0;
        for a in 0..3 {
            let w = vol / (grid.h(a) * grid.h(a));
            for o in [-1isize, 1] {
                if let Some(col) = mesh.cell_id[grid.shift(c, a, o)] {
                    diag += w;
                    t.push((row, col, -w));
                }
            }
        }
        t.push((row, row, diag));
    }
    let lap = Csr::from_triplets(mesh.np(), mesh.np(), t).with_symmetric(true);
    let pre: Vec<f64> = lap.diagonal().iter().map(|d| if *d > 0.0 { 1.0 / d } else { 0.0 }).collect();
    let null = mesh.pressure_nullspace();
    // wall faces of fluid cells: (pressure index, axis, outward sign)
    let mut walls = Vec::new();
    for (row, &c) in mesh.cells.iter().enumerate() {
        for a in 0..3 {
            for o in [-1isize, 1] {
                if !mesh.fluid(grid.shift(c, a, o)) {
                    walls.push((row, a, o as f64));
                }
            }
        }
    }
    let solve = |i: usize| -> Result<(Vec<f64>, SolveInfo)> {
        let mut rhs = vec![0.0; mesh.np()];
        for &(row, a, sgn) in &walls {
            if a == i {
                rhs[row] += sgn * vol / grid.h(a);
            }
        }
        let cg = CgOptions { tol: opts.tol, max_iter: opts.max_iter, nullspace: &null, precond: Some(&pre), x0: None };
        cg_solve(&lap, &rhs, &cg).map_err(|e| match e {
            Error::IncompatibleRhs { component } => Error::Invalid(format!("internal error: Neumann data not balanced on γ ({component:.3e})")),
            e => e,
        })
        .label(|| format!("Neumann cell problem, direction {}", i + 1))
    };
    let out = map_dirs(opts.parallel, solve)?;
    let mut b3 = zero3();
    for (i, (r, _)) in out.iter().enumerate() {
        for j in 0..3 {
            let mut s = 0.0;
            for &(d, c) in &mesh.faces {
                if d == j {
                    let (p0, p1) = (mesh.cell_id[c].unwrap(), mesh.cell_id[grid.shift(c, d, 1)].unwrap());
                    s += (r[p1] - r[p0]) / grid.h(d) * vol;
                }
            }
            if i == j {
                // half cells next to walls carry the prescribed normal derivative
                s += walls.iter().filter(|w| w.1 == j).count() as f64 * 0.5 * vol;
            }
            b3[j][i] = s;
        }
    }
    let mut mi = zero3();
    for r in 0..3 {
        for c in 0..3 {
            mi[r][c] = if r == c { m } else { 0.0 } - b3[r][c];
        }
    }
    Ok(NeumannSolution {
        potential: out.iter().map(|(r, _)| mesh.to_scalar_field(r)).collect(),
        b3,
        mi_minus_b3: mi,
        info: out.iter().map(|o| o.1).collect(),
    })
}

/// Permeability-type matrices of one cell; entries are present for the
/// problems that were solved.
#[derive(Debug, Clone, Default)]
pub struct PermeabilitySet {
    pub b2: Option<Mat3>,
    pub b1_kernel: Option<Vec<(f64, Mat3)>>,
    pub b1_raw0: Option<Mat3>,
    pub b3: Option<Mat3>,
    pub mi_minus_b3: Option<Mat3>,
    pub m: f64,
}

/// Maximum divergence of a MAC velocity over fluid cells.
pub fn max_divergence(u: &VectorField, cell: &VoxelCell) -> f64 {
    let d = crate::pde::div(u);
    (0..cell.len()).filter(|&c| cell.is_fluid(c)).map(|c| d.values[c].abs()).fold(0.0, f64::max)
}

/// Kernel as CSV with header `t,B11,B12,...,B33`.
pub fn kernel_csv(kernel: &[(f64, Mat3)]) -> String {
    let mut s = String::from("t,B11,B12,B13,B21,B22,B23,B31,B32,B33\n");
    for (t, b) in kernel {
        s.push_str(&crate::report::fmt_f64(*t));
        for row in b {
            for v in row {
                s.push(',');
                s.push_str(&crate::report::fmt_f64(*v));
            }
        }
        s.push('\n');
    }
    s
}

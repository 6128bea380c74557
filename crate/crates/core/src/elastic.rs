//! Elastic cell problems on the solid part and the effective elastic set.
//!
//! Displacements are trilinear (Q1) on voxels with vertex unknowns; the
//! solid pressure is piecewise constant per solid voxel. A finite η₀ is
//! handled by eliminating the pressure (penalty form), η₀ = ∞ by the saddle
//! solver with the pressure as multiplier.

use crate::error::{Error, Result, ResultExt};
use crate::microcell::VoxelCell;
use crate::pde::krylov::{cg_solve, saddle_solve, CgOptions, SaddleOptions, SaddleSystem, SolveInfo};
use crate::pde::q1::{
    add_div_load, add_tensor_load, elem_div_integral, elem_strain_energy, elem_strain_integral, touched_nodes, translations,
    Q1Constraint, Q1Element, Q1Operator,
};
use crate::pde::tensor::{add3, ddot3, j_basis, scale3, zero3, Mat3, Sym6, VOIGT_PAIRS};
use crate::pde::{NodeField, PeriodicGrid};
use crate::scaling::ExtReal;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy)]
pub struct ElasticOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Run the independent families concurrently.
    pub parallel: bool,
}

impl Default for ElasticOptions {
    fn default() -> Self {
        ElasticOptions { tol: 1e-9, max_iter: 50_000, parallel: false }
    }
}

/// One displacement family with its solid pressure (per voxel, zero on fluid).
#[derive(Debug, Clone)]
pub struct CellField {
    pub u: NodeField,
    pub pi: Vec<f64>,
    pub info: SolveInfo,
}

#[derive(Debug, Clone)]
pub struct ElasticCellSolution {
    pub lambda0: f64,
    pub eta0: ExtReal,
    /// U^{ij} in Voigt order (11, 22, 33, 23, 13, 12).
    pub uij: Vec<CellField>,
    pub u0: CellField,
    pub u1: CellField,
    pub u2: CellField,
    /// ⟨div U₂⟩ over the solid part at the fixed point.
    pub s2: f64,
}

impl ElasticCellSolution {
    pub fn family(&self, i: usize, j: usize) -> &CellField {
        let k = VOIGT_PAIRS.iter().position(|&(a, b)| (a, b) == (i.min(j), i.max(j)) || (b, a) == (i.min(j), i.max(j))).unwrap();
        &self.uij[k]
    }
}

#[derive(Debug, Clone)]
pub struct EffectiveElasticSet {
    pub a0s: Sym6,
    pub a1s: Sym6,
    pub b0s: Mat3,
    /// `None` when there is no fluid (m = 0).
    pub b1s: Option<Mat3>,
    pub c0s: Mat3,
    pub a0s_scalar: f64,
    pub a1s_scalar: Option<f64>,
    /// Reported only; pressures are defined up to functions of time so this
    /// constant is not part of the exported macro coefficients.
    pub a2s_scalar: Option<f64>,
    pub m: f64,
    pub rho_hat: f64,
}

impl EffectiveElasticSet {
    pub fn with_densities(mut self, rho_f: f64, rho_s: f64) -> Self {
        self.rho_hat = self.m * rho_f + (1.0 - self.m) * rho_s;
        self
    }
}

struct Setup {
    grid: PeriodicGrid,
    elem: Q1Element,
    solid: Vec<usize>,
    translations: Vec<Vec<f64>>,
}

impl Setup {
    fn new(cell: &VoxelCell) -> Setup {
        let grid = cell.grid();
        let solid: Vec<usize> = (0..grid.len()).filter(|&e| !cell.is_fluid(e)).collect();
        let mask = touched_nodes(&grid, |e| !cell.is_fluid(e));
        Setup { grid, elem: Q1Element::for_grid(&grid), solid, translations: translations(&mask) }
    }

    fn coeff(&self, v: f64) -> Vec<f64> {
        let mut c = vec![0.0; self.grid.len()];
        for &e in &self.solid {
            c[e] = v;
        }
        c
    }

    fn weights(&self, w: f64) -> Vec<(usize, f64)> {
        self.solid.iter().map(|&e| (e, w)).collect()
    }

    /// Solves `shear ∫D:D + vol Σ (∫div)(∫div)/|e| = f`, or with `vol = None`
    /// the constrained problem `∫_e div u = g |e|` on every solid voxel.
    /// Returns the displacement and, when constrained, the multiplier `p`
    /// entering the momentum equation as `+Σ p_e ∫_e div φ`.
    fn solve(&self, shear: f64, vol: Option<f64>, f: &[f64], g: f64, opts: &ElasticOptions) -> Result<(NodeField, Option<Vec<f64>>, SolveInfo)> {
        let mut u = NodeField::zeros(self.grid);
        match vol {
            Some(v) => {
                let op = Q1Operator::new(self.grid, self.coeff(shear), self.coeff(v));
                let pre = op.jacobi();
                let cg = CgOptions { tol: opts.tol, max_iter: opts.max_iter, nullspace: &self.translations, precond: Some(&pre), x0: None };
                let (x, info) = cg_solve(&op, f, &cg)?;
                u.values = x;
                self.normalize(&mut u);
                Ok((u, None, info))
            }
            None => {
                let op = Q1Operator::new(self.grid, self.coeff(shear), vec![0.0; self.grid.len()]);
                let pre = op.jacobi();
                let b = Q1Constraint::new(self.grid, self.solid.clone());
                let pre_p = vec![shear / self.elem.volume; self.solid.len()];
                let gvec = vec![g * self.elem.volume; self.solid.len()];
                let p_null: Vec<Vec<f64>> = if self.solid.len() == self.grid.len() { vec![vec![1.0; self.solid.len()]] } else { vec![] };
                let sys = SaddleSystem { a: &op, b: &b, precond_u: &pre, precond_p: &pre_p, p_nullspace: &p_null, u_nullspace: &self.translations };
                let so = SaddleOptions { tol: opts.tol, max_iter: opts.max_iter, x0: None };
                let (x, p, info) = saddle_solve(&sys, f, &gvec, &so)?;
                u.values = x;
                self.normalize(&mut u);
                let mut full = vec![0.0; self.grid.len()];
                for (r, &e) in self.solid.iter().enumerate() {
                    full[e] = p[r];
                }
                Ok((u, Some(full), info))
            }
        }
    }

    /// Shifts the displacement so that its integral over the solid vanishes.
    fn normalize(&self, u: &mut NodeField) {
        if self.solid.is_empty() {
            return;
        }
        let mut mean = [0.0; 3];
        for &e in &self.solid {
            for n in self.grid.cell_nodes(e) {
                let v = u.at(n);
                for d in 0..3 {
                    mean[d] += v[d] / 8.0;
                }
            }
        }
        for m in &mut mean {
            *m /= self.solid.len() as f64;
        }
        for (d, t) in self.translations.iter().enumerate() {
            for (x, &w) in u.values.iter_mut().zip(t) {
                *x -= mean[d] * w;
            }
        }
    }

    fn div_mean(&self, u: &NodeField, e: usize) -> f64 {
        elem_div_integral(u, &self.elem, e) / self.elem.volume
    }

    /// Pressure `-k (div u + c)` per solid voxel.
    fn penalty_pressure(&self, u: &NodeField, k: f64, c: f64) -> Vec<f64> {
        let mut pi = vec![0.0; self.grid.len()];
        if k != 0.0 {
            for &e in &self.solid {
                pi[e] = -k * (self.div_mean(u, e) + c);
            }
        }
        pi
    }

    fn div_integral(&self, u: &NodeField) -> f64 {
        self.solid.iter().map(|&e| elem_div_integral(u, &self.elem, e)).sum()
    }

    fn strain_integral(&self, u: &NodeField) -> Mat3 {
        self.solid.iter().fold(zero3(), |acc, &e| add3(&acc, &elem_strain_integral(u, &self.elem, e)))
    }
}

enum Family {
    Tensor(usize),
    Zero,
    One,
}

impl Family {
    fn label(&self) -> String {
        match self {
            Family::Tensor(k) => {
                let (i, j) = VOIGT_PAIRS[*k];
                format!("elastic cell problem U^{{{}{}}}", i + 1, j + 1)
            }
            Family::Zero => "elastic cell problem U_0".into(),
            Family::One => "elastic cell problem U_1".into(),
        }
    }
}

fn solve_family(s: &Setup, fam: &Family, lambda0: f64, eta0: ExtReal, opts: &ElasticOptions) -> Result<CellField> {
    let n = 3 * s.grid.len();
    let mut f = vec![0.0; n];
    let field = match fam {
        Family::Tensor(k) => {
            let (i, j) = VOIGT_PAIRS[*k];
            add_tensor_load(&s.grid, &s.elem, &s.weights(1.0), &j_basis(i, j), &mut f);
            match eta0 {
                ExtReal::Infinite => {
                    let (u, p, info) = s.solve(1.0, None, &f, 0.0, opts)?;
                    let pi = p.unwrap().into_iter().map(|v| -v).collect();
                    CellField { u, pi, info }
                }
                _ => {
                    let k = eta0.value() / lambda0;
                    let (u, _, info) = s.solve(1.0, Some(k), &f, 0.0, opts)?;
                    let pi = s.penalty_pressure(&u, k, 0.0);
                    CellField { u, pi, info }
                }
            }
        }
        Family::Zero => match eta0 {
            ExtReal::Infinite => {
                if s.solid.len() == s.grid.len() {
                    return Err(Error::IllPosed("η₀ = ∞ forces div U₀ = -1 on the whole periodic cell, which has no solution without a fluid phase".into()));
                }
                let (u, p, info) = s.solve(lambda0, None, &f, -1.0, opts)?;
                let pi = p.unwrap().into_iter().map(|v| -v).collect();
                CellField { u, pi, info }
            }
            _ => {
                let eta = eta0.value();
                add_div_load(&s.grid, &s.elem, &s.weights(-eta), &mut f);
                let (u, _, info) = s.solve(lambda0, Some(eta), &f, 0.0, opts)?;
                let pi = s.penalty_pressure(&u, eta, 1.0);
                CellField { u, pi, info }
            }
        },
        Family::One => {
            add_div_load(&s.grid, &s.elem, &s.weights(-1.0), &mut f);
            match eta0 {
                ExtReal::Infinite => {
                    let (u, p, info) = s.solve(lambda0, None, &f, 0.0, opts)?;
                    let pi = p.unwrap().into_iter().map(|v| -v).collect();
                    CellField { u, pi, info }
                }
                _ => {
                    let eta = eta0.value();
                    let (u, _, info) = s.solve(lambda0, Some(eta), &f, 0.0, opts)?;
                    let pi = s.penalty_pressure(&u, eta, 0.0);
                    CellField { u, pi, info }
                }
            }
        }
    };
    Ok(field)
}

/// The U₂ problem is affine in `k = η₀ c` with `c = (s + m/η₀)/(1-m)`: its
/// local solution for frozen `s` is `(1 - k) U₁`, because the extra load
/// `k ∫_{Y_s} div φ` is `-k` times the load of U₁. The scalar `s` is then a
/// fixed point of an affine map, solved by a secant step and verified.
fn solve_u2(s: &Setup, u1: &CellField, eta0: ExtReal, m: f64) -> Result<(CellField, f64)> {
    let scaled = |k: f64| -> CellField {
        let mut u = u1.u.clone();
        u.values.iter_mut().for_each(|v| *v *= 1.0 - k);
        let pi = match eta0 {
            ExtReal::Infinite => u1.pi.clone(),
            _ => s.penalty_pressure(&u, eta0.value(), -k / eta0.value().max(f64::MIN_POSITIVE)),
        };
        CellField { u, pi, info: u1.info }
    };
    if eta0.is_infinite() {
        // the bracket m/η₀ vanishes and any s is consistent; s = 0 selects U₂ = U₁
        return Ok((scaled(0.0), 0.0));
    }
    let eta = eta0.value();
    let k_of = |sv: f64| (eta * sv + m) / (1.0 - m);
    let s1 = s.div_integral(&u1.u);
    let map = |sv: f64| (1.0 - k_of(sv)) * s1;
    // secant on F(s) = map(s) - s from two points
    let (x0, x1) = (0.0, 1.0);
    let (f0, f1) = (map(x0) - x0, map(x1) - x1);
    if (f1 - f0).abs() < f64::MIN_POSITIVE {
        return Err(Error::IllPosed("nonlocal U₂ problem is singular".into()));
    }
    let mut sv = x0 - f0 * (x1 - x0) / (f1 - f0);
    for _ in 0..50 {
        let next = map(sv);
        let ds = (next - sv).abs();
        sv = next;
        if ds <= 1e-10 {
            break;
        }
        let slope = -eta * s1 / (1.0 - m);
        if slope.abs() >= 1.0 {
            break; // plain iteration would diverge; the secant value is exact for an affine map
        }
    }
    let k = k_of(sv);
    let mut field = scaled(k);
    // Π₂ = -η₀ (div U₂ - c) = -η₀ div U₂ + k
    field.pi = vec![0.0; s.grid.len()];
    for &e in &s.solid {
        field.pi[e] = -eta * s.div_mean(&field.u, e) + k;
    }
    let check = s.div_integral(&field.u);
    if (check - sv).abs() > 1e-8 * (1.0 + sv.abs()) {
        return Err(Error::NotConverged { solver: "U₂ fixed point", iterations: 50, residual: (check - sv).abs() });
    }
    Ok((field, sv))
}

pub fn solve_elastic_cell(cell: &VoxelCell, lambda0: f64, eta0: ExtReal, opts: &ElasticOptions) -> Result<ElasticCellSolution> {
    if !(lambda0 > 0.0 && lambda0.is_finite()) {
        return Err(Error::Invalid(format!("λ₀ must be positive and finite, got {lambda0}")));
    }
    if cell.solid_count() == 0 {
        return Err(Error::Invalid("elastic cell problems need a non-empty solid phase".into()));
    }
    let s = Setup::new(cell);
    let fams: Vec<Family> = (0..6).map(Family::Tensor).chain([Family::Zero, Family::One]).collect();
    let run = |f: &Family| solve_family(&s, f, lambda0, eta0, opts).label(|| f.label());
    let mut out: Vec<CellField> = if opts.parallel {
        fams.par_iter().map(run).collect::<Result<_>>()?
    } else {
        fams.iter().map(run).collect::<Result<_>>()?
    };
    let u1 = out.pop().unwrap();
    let u0 = out.pop().unwrap();
    let (u2, s2) = solve_u2(&s, &u1, eta0, cell.porosity()).label(|| "elastic cell problem U_2".into())?;
    Ok(ElasticCellSolution { lambda0, eta0, uij: out, u0, u1, u2, s2 })
}

pub fn assemble_effective_elastic(sol: &ElasticCellSolution, cell: &VoxelCell) -> Result<EffectiveElasticSet> {
    let m = cell.porosity();
    if cell.solid_count() == 0 {
        return Err(Error::Invalid("empty solid phase (m = 1)".into()));
    }
    let s = Setup::new(cell);
    let x: Vec<Mat3> = sol.uij.iter().map(|f| s.strain_integral(&f.u)).collect();
    let idx = |i: usize, j: usize| VOIGT_PAIRS.iter().position(|&p| p == (i.min(j), i.max(j))).unwrap();
    let a1s = Sym6::sum_outer_j(|i, j| x[idx(i, j)]);
    let a0s = Sym6::identity().add(&a1s);
    let mut c0s = zero3();
    for i in 0..3 {
        for j in 0..3 {
            c0s = add3(&c0s, &scale3(&j_basis(i, j), s.div_integral(&sol.uij[idx(i, j)].u)));
        }
    }
    let b0s = s.strain_integral(&sol.u0.u);
    let d1 = s.div_integral(&sol.u1.u);
    let (b1s, a1, a2) = if m > 0.0 {
        let b1 = scale3(&s.strain_integral(&sol.u1.u), 1.0 / m);
        let a2 = match sol.eta0 {
            ExtReal::Zero => None,
            e => Some((m / e.value() - d1) / m),
        };
        (Some(b1), Some(d1 / m), a2)
    } else {
        (None, None, None)
    };
    Ok(EffectiveElasticSet {
        a0s,
        a1s,
        b0s,
        b1s,
        c0s,
        a0s_scalar: 1.0 - m + s.div_integral(&sol.u0.u),
        a1s_scalar: a1,
        a2s_scalar: a2,
        m,
        rho_hat: 1.0,
    })
}

/// Both sides of the energy identity for families `ij` and `kl` (Voigt
/// indices): the direct average `⟨D(U^{ij})⟩_{Y_s} : J^{kl}` and
/// `-⟨D(U^{ij}):D(U^{kl})⟩_{Y_s} - (λ₀/η₀) ⟨Π^{ij} Π^{kl}⟩_{Y_s}`.
pub fn energy_identity(sol: &ElasticCellSolution, cell: &VoxelCell, ij: usize, kl: usize) -> (f64, f64) {
    let s = Setup::new(cell);
    let (k, l) = VOIGT_PAIRS[kl];
    let direct = ddot3(&s.strain_integral(&sol.uij[ij].u), &j_basis(k, l));
    let dd: f64 = s.solid.iter().map(|&e| elem_strain_energy(&sol.uij[ij].u, &sol.uij[kl].u, &s.elem, e)).sum();
    let pp = match sol.eta0 {
        ExtReal::Finite(eta) => {
            let pp: f64 = s.solid.iter().map(|&e| sol.uij[ij].pi[e] * sol.uij[kl].pi[e]).sum::<f64>() * s.elem.volume;
            sol.lambda0 / eta * pp
        }
        _ => 0.0,
    };
    (direct, -dd - pp)
}

/// Largest mismatch of the energy identity over all 36 pairs, relative to
/// the largest entry.
pub fn energy_identity_defect(sol: &ElasticCellSolution, cell: &VoxelCell) -> f64 {
    let pairs: Vec<(f64, f64)> = (0..36).map(|n| energy_identity(sol, cell, n / 6, n % 6)).collect();
    let scale = pairs.iter().map(|(d, e)| d.abs().max(e.abs())).fold(1e-300, f64::max);
    pairs.iter().map(|(d, e)| (d - e).abs() / scale).fold(0.0, f64::max)
}

/// Maximum of `|∫_e div u| / |e|` over solid voxels.
pub fn max_solid_divergence(u: &NodeField, cell: &VoxelCell) -> f64 {
    let s = Setup::new(cell);
    s.solid.iter().map(|&e| s.div_mean(u, e).abs()).fold(0.0, f64::max)
}

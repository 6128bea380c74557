//! Trilinear (Q1) voxel elements for the elasticity-type cell problems.
//!
//! Unknowns are displacement vectors at the lattice nodes. The deviatoric
//! form ∫ D(u):D(v) uses 2×2×2 Gauss quadrature; the volumetric form uses
//! the element-mean divergence, which is the same as eliminating a
//! piecewise-constant pressure per voxel. Each voxel carries its own pair of
//! coefficients, so phase jumps are resolved element by element.

use super::grid::{NodeField, PeriodicGrid};
use super::krylov::{LinearOperator, RectOperator};
use super::tensor::{zero3, Mat3};

pub const NDOF: usize = 24;

#[derive(Debug, Clone)]
pub struct Q1Element {
    pub h: [f64; 3],
    pub volume: f64,
    /// ∫ D(φ_a e_i) : D(φ_b e_j), row/column index `3 a + i`.
    pub ke: Box<[[f64; NDOF]; NDOF]>,
    /// ∫ ∇φ_a, the exact element integral of the shape-function gradient.
    pub grad_int: [[f64; 3]; 8],
    /// ∫ div(φ_a e_i).
    pub dv: [f64; NDOF],
}

fn shape_grad(h: [f64; 3], a: usize, xi: [f64; 3]) -> [f64; 3] {
    let b = [(a & 1) as f64, ((a >> 1) & 1) as f64, ((a >> 2) & 1) as f64];
    let f = |d: usize| if b[d] == 1.0 { xi[d] } else { 1.0 - xi[d] };
    let df = |d: usize| (2.0 * b[d] - 1.0) / h[d];
    [df(0) * f(1) * f(2), f(0) * df(1) * f(2), f(0) * f(1) * df(2)]
}

impl Q1Element {
    pub fn new(h: [f64; 3]) -> Self {
        let volume = h[0] * h[1] * h[2];
        let g = 0.5 / 3f64.sqrt();
        let pts = [0.5 - g, 0.5 + g];
        let mut ke = Box::new([[0.0; NDOF]; NDOF]);
        for &x in &pts {
            for &y in &pts {
                for &z in &pts {
                    let w = volume / 8.0;
                    let grads: Vec<[f64; 3]> = (0..8).map(|a| shape_grad(h, a, [x, y, z])).collect();
                    for a in 0..8 {
                        for b in 0..8 {
                            let gab: f64 = (0..3).map(|d| grads[a][d] * grads[b][d]).sum();
                            for i in 0..3 {
                                for j in 0..3 {
                                    // D(φ_a e_i):D(φ_b e_j) = ½(δ_ij ∇φ_a·∇φ_b + ∂_j φ_a ∂_i φ_b)
                                    let mut v = 0.5 * grads[a][j] * grads[b][i];
                                    if i == j {
                                        v += 0.5 * gab;
                                    }
                                    ke[3 * a + i][3 * b + j] += w * v;
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut grad_int = [[0.0; 3]; 8];
        let mut dv = [0.0; NDOF];
        for (a, gi) in grad_int.iter_mut().enumerate() {
            for d in 0..3 {
                let s = if (a >> d) & 1 == 1 { 1.0 } else { -1.0 };
                gi[d] = s * volume / (4.0 * h[d]);
                dv[3 * a + d] = gi[d];
            }
        }
        Q1Element { h, volume, ke, grad_int, dv }
    }

    pub fn for_grid(grid: &PeriodicGrid) -> Self {
        Q1Element::new(grid.spacing())
    }
}

#[inline]
pub fn gather(u: &[f64], nodes: &[usize; 8], out: &mut [f64; NDOF]) {
    for (a, &n) in nodes.iter().enumerate() {
        out[3 * a] = u[3 * n];
        out[3 * a + 1] = u[3 * n + 1];
        out[3 * a + 2] = u[3 * n + 2];
    }
}

#[inline]
pub fn scatter_add(y: &mut [f64], nodes: &[usize; 8], v: &[f64; NDOF]) {
    for (a, &n) in nodes.iter().enumerate() {
        y[3 * n] += v[3 * a];
        y[3 * n + 1] += v[3 * a + 1];
        y[3 * n + 2] += v[3 * a + 2];
    }
}

/// Σ_e [ shear_e ∫ D(u):D(v) + vol_e |e|⁻¹ (∫div u)(∫div v) ] over voxels.
#[derive(Debug, Clone)]
pub struct Q1Operator {
    pub grid: PeriodicGrid,
    pub elem: Q1Element,
    pub shear: Vec<f64>,
    pub vol: Vec<f64>,
    active: Vec<usize>,
}

impl Q1Operator {
    pub fn new(grid: PeriodicGrid, shear: Vec<f64>, vol: Vec<f64>) -> Self {
        assert_eq!(shear.len(), grid.len());
        assert_eq!(vol.len(), grid.len());
        let active = (0..grid.len()).filter(|&e| shear[e] != 0.0 || vol[e] != 0.0).collect();
        Q1Operator { grid, elem: Q1Element::for_grid(&grid), shear, vol, active }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; 3 * self.grid.len()];
        let inv_vol = 1.0 / self.elem.volume;
        for &e in &self.active {
            let nodes = self.grid.cell_nodes(e);
            for (a, &n) in nodes.iter().enumerate() {
                for i in 0..3 {
                    let k = 3 * a + i;
                    d[3 * n + i] += self.shear[e] * self.elem.ke[k][k] + self.vol[e] * inv_vol * self.elem.dv[k] * self.elem.dv[k];
                }
            }
        }
        d
    }

    /// Inverse diagonal, zero on nodes untouched by any active element.
    pub fn jacobi(&self) -> Vec<f64> {
        self.diagonal().into_iter().map(|d| if d > 0.0 { 1.0 / d } else { 0.0 }).collect()
    }

    pub fn apply_elem(&self, e: usize, ue: &[f64; NDOF], out: &mut [f64; NDOF]) {
        let s = self.shear[e];
        let dvu: f64 = (0..NDOF).map(|k| self.elem.dv[k] * ue[k]).sum();
        let c = self.vol[e] * dvu / self.elem.volume;
        for r in 0..NDOF {
            let row = &self.elem.ke[r];
            let mut acc = 0.0;
            for k in 0..NDOF {
                acc += row[k] * ue[k];
            }
            out[r] = s * acc + c * self.elem.dv[r];
        }
    }
}

impl LinearOperator for Q1Operator {
    fn dim(&self) -> usize {
        3 * self.grid.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        let mut ue = [0.0; NDOF];
        let mut ye = [0.0; NDOF];
        for &e in &self.active {
            let nodes = self.grid.cell_nodes(e);
            gather(x, &nodes, &mut ue);
            self.apply_elem(e, &ue, &mut ye);
            scatter_add(y, &nodes, &ye);
        }
    }

    fn is_symmetric(&self) -> bool {
        true
    }
}

/// Element-mean divergence constraint rows, `(Bu)_r = ∫_{e_r} div u`.
#[derive(Debug, Clone)]
pub struct Q1Constraint {
    pub grid: PeriodicGrid,
    pub elem: Q1Element,
    pub elems: Vec<usize>,
}

impl Q1Constraint {
    pub fn new(grid: PeriodicGrid, elems: Vec<usize>) -> Self {
        Q1Constraint { grid, elem: Q1Element::for_grid(&grid), elems }
    }
}

impl RectOperator for Q1Constraint {
    fn rows(&self) -> usize {
        self.elems.len()
    }
    fn cols(&self) -> usize {
        3 * self.grid.len()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut ue = [0.0; NDOF];
        for (r, &e) in self.elems.iter().enumerate() {
            gather(x, &self.grid.cell_nodes(e), &mut ue);
            y[r] = (0..NDOF).map(|k| self.elem.dv[k] * ue[k]).sum();
        }
    }
    fn apply_t(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        let mut ye = [0.0; NDOF];
        for (r, &e) in self.elems.iter().enumerate() {
            for k in 0..NDOF {
                ye[k] = self.elem.dv[k] * x[r];
            }
            scatter_add(y, &self.grid.cell_nodes(e), &ye);
        }
    }
}

/// Adds `-w_e ∫_e J : D(φ)` over the listed elements.
pub fn add_tensor_load(grid: &PeriodicGrid, elem: &Q1Element, elems: &[(usize, f64)], j: &Mat3, f: &mut [f64]) {
    let mut fe = [0.0; NDOF];
    for a in 0..8 {
        for i in 0..3 {
            fe[3 * a + i] = -(0..3).map(|l| j[i][l] * elem.grad_int[a][l]).sum::<f64>();
        }
    }
    for &(e, w) in elems {
        let nodes = grid.cell_nodes(e);
        let scaled: [f64; NDOF] = std::array::from_fn(|k| w * fe[k]);
        scatter_add(f, &nodes, &scaled);
    }
}

/// Adds `s_e ∫_e div φ` over the listed elements.
pub fn add_div_load(grid: &PeriodicGrid, elem: &Q1Element, elems: &[(usize, f64)], f: &mut [f64]) {
    for &(e, s) in elems {
        let scaled: [f64; NDOF] = std::array::from_fn(|k| s * elem.dv[k]);
        scatter_add(f, &grid.cell_nodes(e), &scaled);
    }
}

/// ∫_e D(u), exact for the trilinear field.
pub fn elem_strain_integral(u: &NodeField, elem: &Q1Element, e: usize) -> Mat3 {
    let nodes = u.grid.cell_nodes(e);
    let mut gu = zero3();
    for (a, &n) in nodes.iter().enumerate() {
        let ua = u.at(n);
        for i in 0..3 {
            for d in 0..3 {
                gu[i][d] += ua[i] * elem.grad_int[a][d];
            }
        }
    }
    let mut s = zero3();
    for i in 0..3 {
        for j in 0..3 {
            s[i][j] = 0.5 * (gu[i][j] + gu[j][i]);
        }
    }
    s
}

/// ∫_e div u.
pub fn elem_div_integral(u: &NodeField, elem: &Q1Element, e: usize) -> f64 {
    let mut ue = [0.0; NDOF];
    gather(&u.values, &u.grid.cell_nodes(e), &mut ue);
    (0..NDOF).map(|k| elem.dv[k] * ue[k]).sum()
}

/// ∫_e D(u):D(v) with the Gauss rule of the operator.
pub fn elem_strain_energy(u: &NodeField, v: &NodeField, elem: &Q1Element, e: usize) -> f64 {
    let nodes = u.grid.cell_nodes(e);
    let mut ue = [0.0; NDOF];
    let mut ve = [0.0; NDOF];
    gather(&u.values, &nodes, &mut ue);
    gather(&v.values, &nodes, &mut ve);
    let mut s = 0.0;
    for r in 0..NDOF {
        let row: f64 = (0..NDOF).map(|k| elem.ke[r][k] * ve[k]).sum();
        s += ue[r] * row;
    }
    s
}

/// Nodes touching at least one of the flagged elements.
pub fn touched_nodes(grid: &PeriodicGrid, flag: impl Fn(usize) -> bool) -> Vec<bool> {
    let mut t = vec![false; grid.len()];
    for e in 0..grid.len() {
        if flag(e) {
            for n in grid.cell_nodes(e) {
                t[n] = true;
            }
        }
    }
    t
}

/// The three translations restricted to the given nodes.
pub fn translations(mask: &[bool]) -> Vec<Vec<f64>> {
    (0..3)
        .map(|d| {
            let mut v = vec![0.0; 3 * mask.len()];
            for (n, &m) in mask.iter().enumerate() {
                if m {
                    v[3 * n + d] = 1.0;
                }
            }
            v
        })
        .collect()
}

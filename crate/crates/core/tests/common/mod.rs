//! Dense reference solutions for small cells.
//!
//! The element here is built from an explicit strain-displacement matrix on
//! the reference cube [-1, 1]³, independently of the library's element
//! routines. Global systems are assembled densely and solved through the SVD
//! pseudo-inverse, so nullspaces (translations, untouched nodes, rigid
//! motions of isolated components) need no special handling. Comparisons are
//! made on quantities that are unique: per-voxel strain integrals and
//! per-voxel pressures.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use porocell::elastic::{solve_elastic_cell, ElasticOptions};
use porocell::microcell::VoxelCell;
use porocell::pde::NodeField;
use porocell::scaling::ExtReal;
use porocell::visco::{solve_visco_initial, ViscoFamily, ViscoOptions, ViscoParams};

/// Tensor-Voigt order 11, 22, 33, 23, 13, 12.
const PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];
const DD_WEIGHT: [f64; 6] = [1.0, 1.0, 1.0, 2.0, 2.0, 2.0];

pub struct Element {
    pub vol: f64,
    /// (weight, B) per Gauss point; B maps the 24 element dofs to strains.
    pub points: Vec<(f64, DMatrix<f64>)>,
    pub ke: DMatrix<f64>,
    pub dv: DVector<f64>,
}

impl Element {
    pub fn new(h: [f64; 3]) -> Element {
        let vol = h[0] * h[1] * h[2];
        let g = 1.0 / 3f64.sqrt();
        let mut points = Vec::new();
        for &a in &[-g, g] {
            for &b in &[-g, g] {
                for &c in &[-g, g] {
                    let xi = [a, b, c];
                    let mut bm = DMatrix::zeros(6, 24);
                    for node in 0..8 {
                        let s = [(node & 1) as f64 * 2.0 - 1.0, ((node >> 1) & 1) as f64 * 2.0 - 1.0, ((node >> 2) & 1) as f64 * 2.0 - 1.0];
                        let lin = |d: usize| 0.5 * (1.0 + s[d] * xi[d]);
                        let dn = [
                            s[0] / h[0] * lin(1) * lin(2),
                            s[1] / h[1] * lin(0) * lin(2),
                            s[2] / h[2] * lin(0) * lin(1),
                        ];
                        for (r, &(i, j)) in PAIRS.iter().enumerate() {
                            // e_ij = ½(∂_j u_i + ∂_i u_j)
                            bm[(r, 3 * node + i)] += 0.5 * dn[j];
                            bm[(r, 3 * node + j)] += 0.5 * dn[i];
                        }
                    }
                    points.push((vol / 8.0, bm));
                }
            }
        }
        let w = DMatrix::from_diagonal(&DVector::from_column_slice(&DD_WEIGHT));
        let mut ke = DMatrix::zeros(24, 24);
        let mut dv = DVector::zeros(24);
        for (wt, bm) in &points {
            ke += bm.transpose() * &w * bm * *wt;
            for c in 0..24 {
                dv[c] += wt * (bm[(0, c)] + bm[(1, c)] + bm[(2, c)]);
            }
        }
        Element { vol, points, ke, dv }
    }

    /// −∫_e J:D(φ) for a symmetric J.
    pub fn tensor_load(&self, j: &[[f64; 3]; 3]) -> DVector<f64> {
        let jv = DVector::from_iterator(6, PAIRS.iter().enumerate().map(|(r, &(a, b))| DD_WEIGHT[r] * j[a][b]));
        let mut f = DVector::zeros(24);
        for (wt, bm) in &self.points {
            f -= bm.transpose() * &jv * *wt;
        }
        f
    }

    /// ∫_e D(u) in tensor-Voigt order.
    pub fn strain_integral(&self, ue: &DVector<f64>) -> [f64; 6] {
        let mut s = [0.0; 6];
        for (wt, bm) in &self.points {
            let e = bm * ue;
            for r in 0..6 {
                s[r] += wt * e[r];
            }
        }
        s
    }
}

pub struct DenseCell {
    pub dims: [usize; 3],
    pub fluid: Vec<bool>,
    pub el: Element,
}

impl DenseCell {
    pub fn new(cell: &VoxelCell) -> DenseCell {
        let dims = cell.dims();
        let n = dims[0] * dims[1] * dims[2];
        DenseCell {
            dims,
            fluid: (0..n).map(|e| cell.is_fluid(e)).collect(),
            el: Element::new([1.0 / dims[0] as f64, 1.0 / dims[1] as f64, 1.0 / dims[2] as f64]),
        }
    }

    pub fn len(&self) -> usize {
        self.fluid.len()
    }

    /// Corner nodes of voxel `e` in order bx + 2 by + 4 bz, periodic.
    pub fn nodes(&self, e: usize) -> [usize; 8] {
        let [nx, ny, nz] = self.dims;
        let (i, j, k) = (e % nx, (e / nx) % ny, e / (nx * ny));
        let mut out = [0; 8];
        for (a, o) in out.iter_mut().enumerate() {
            let ii = (i + (a & 1)) % nx;
            let jj = (j + ((a >> 1) & 1)) % ny;
            let kk = (k + ((a >> 2) & 1)) % nz;
            *o = ii + nx * (jj + ny * kk);
        }
        out
    }

    fn dofs(&self, e: usize) -> Vec<usize> {
        self.nodes(e).iter().flat_map(|&n| (0..3).map(move |d| 3 * n + d)).collect()
    }

    /// Σ_e shear_e ke + vol_e dv dvᵀ / |e|.
    pub fn stiffness(&self, shear: &[f64], volc: &[f64]) -> DMatrix<f64> {
        let n = 3 * self.len();
        let mut k = DMatrix::zeros(n, n);
        let dvv = &self.el.dv * self.el.dv.transpose() / self.el.vol;
        for e in 0..self.len() {
            if shear[e] == 0.0 && volc[e] == 0.0 {
                continue;
            }
            let d = self.dofs(e);
            for a in 0..24 {
                for b in 0..24 {
                    k[(d[a], d[b])] += shear[e] * self.el.ke[(a, b)] + volc[e] * dvv[(a, b)];
                }
            }
        }
        k
    }

    pub fn tensor_load(&self, elems: &[usize], j: &[[f64; 3]; 3]) -> DVector<f64> {
        let mut f = DVector::zeros(3 * self.len());
        let fe = self.el.tensor_load(j);
        for &e in elems {
            for (a, &g) in self.dofs(e).iter().enumerate() {
                f[g] += fe[a];
            }
        }
        f
    }

    /// Σ_e s ∫_e div φ.
    pub fn div_load(&self, elems: &[usize], s: f64) -> DVector<f64> {
        let mut f = DVector::zeros(3 * self.len());
        for &e in elems {
            for (a, &g) in self.dofs(e).iter().enumerate() {
                f[g] += s * self.el.dv[a];
            }
        }
        f
    }

    pub fn constraint_rows(&self, elems: &[usize]) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(elems.len(), 3 * self.len());
        for (r, &e) in elems.iter().enumerate() {
            for (a, &g) in self.dofs(e).iter().enumerate() {
                b[(r, g)] += self.el.dv[a];
            }
        }
        b
    }

    pub fn gather(&self, u: &[f64], e: usize) -> DVector<f64> {
        DVector::from_iterator(24, self.dofs(e).into_iter().map(|g| u[g]))
    }

    pub fn strain(&self, u: &[f64], e: usize) -> [f64; 6] {
        self.el.strain_integral(&self.gather(u, e))
    }

    pub fn div_integral(&self, u: &[f64], e: usize) -> f64 {
        self.el.dv.dot(&self.gather(u, e))
    }
}

/// Minimum-norm solution of a symmetric (possibly singular) system.
pub fn pinv_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    svd.solve(b, 1e-11 * smax).expect("svd solve")
}

/// Solves `K u = f` (no constraints) or the saddle system with rows `B` and
/// targets `g`; returns `(u, multiplier)`.
pub fn dense_solve(k: &DMatrix<f64>, f: &DVector<f64>, b: Option<(&DMatrix<f64>, &DVector<f64>)>) -> (DVector<f64>, DVector<f64>) {
    match b {
        None => (pinv_solve(k, f), DVector::zeros(0)),
        Some((b, g)) => {
            let (n, m) = (k.nrows(), b.nrows());
            let mut kkt = DMatrix::zeros(n + m, n + m);
            kkt.view_mut((0, 0), (n, n)).copy_from(k);
            kkt.view_mut((0, n), (n, m)).copy_from(&b.transpose());
            kkt.view_mut((n, 0), (m, n)).copy_from(b);
            let mut rhs = DVector::zeros(n + m);
            rhs.rows_mut(0, n).copy_from(f);
            rhs.rows_mut(n, m).copy_from(g);
            let x = pinv_solve(&kkt, &rhs);
            (x.rows(0, n).into_owned(), x.rows(n, m).into_owned())
        }
    }
}

fn j_basis(i: usize, j: usize) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    m[i][j] += 0.5;
    m[j][i] += 0.5;
    m
}

/// Largest relative mismatch between two sets of per-voxel quantities.
pub fn rel_defect(reference: &[f64], computed: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    reference.iter().zip(computed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
}

/// Per-voxel strain integrals (over `elems`) followed by per-voxel pressures.
fn signature(dc: &DenseCell, u: &[f64], elems: &[usize], pressure: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = elems.iter().flat_map(|&e| dc.strain(u, e)).collect();
    out.extend_from_slice(pressure);
    out
}

/// Compares the six elastic tensor families against the dense oracle.
/// Returns the largest relative defect.
pub fn elastic_oracle_defect(cell: &VoxelCell, lambda0: f64, eta0: ExtReal) -> f64 {
    let dc = DenseCell::new(cell);
    let solid: Vec<usize> = (0..dc.len()).filter(|&e| !dc.fluid[e]).collect();
    let opts = ElasticOptions { tol: 1e-13, max_iter: 200_000, parallel: false };
    let sol = solve_elastic_cell(cell, lambda0, eta0, &opts).expect("elastic solve");
    let shear: Vec<f64> = (0..dc.len()).map(|e| if dc.fluid[e] { 0.0 } else { 1.0 }).collect();
    let mut worst = 0.0f64;
    for (k, &(i, j)) in PAIRS.iter().enumerate() {
        let f = dc.tensor_load(&solid, &j_basis(i, j));
        let (u, pi): (DVector<f64>, Vec<f64>) = match eta0 {
            ExtReal::Infinite => {
                let kk = dc.stiffness(&shear, &vec![0.0; dc.len()]);
                let b = dc.constraint_rows(&solid);
                let g = DVector::zeros(solid.len());
                let (u, p) = dense_solve(&kk, &f, Some((&b, &g)));
                (u, p.iter().map(|v| -v).collect())
            }
            _ => {
                let kpen = eta0.value() / lambda0;
                let volc: Vec<f64> = shear.iter().map(|s| s * kpen).collect();
                let u = dense_solve(&dc.stiffness(&shear, &volc), &f, None).0;
                let pi = solid.iter().map(|&e| -kpen * dc.div_integral(u.as_slice(), e) / dc.el.vol).collect();
                (u, pi)
            }
        };
        let field = &sol.uij[k];
        let computed_pi: Vec<f64> = solid.iter().map(|&e| field.pi[e]).collect();
        let reference = signature(&dc, u.as_slice(), &solid, &pi);
        let computed = signature(&dc, &field.u.values, &solid, &computed_pi);
        worst = worst.max(rel_defect(&reference, &computed));
    }
    worst
}

/// Compares the seven instantaneous visco responses against the oracle.
pub fn visco_initial_oracle_defect(cell: &VoxelCell, params: &ViscoParams) -> f64 {
    let dc = DenseCell::new(cell);
    let fluid: Vec<usize> = (0..dc.len()).filter(|&e| dc.fluid[e]).collect();
    let shear: Vec<f64> = (0..dc.len()).map(|e| if dc.fluid[e] { params.mu0 } else { 0.0 }).collect();
    let volc: Vec<f64> = (0..dc.len()).map(|e| if dc.fluid[e] { params.nu0 } else { 0.0 }).collect();
    let kk = dc.stiffness(&shear, &volc);
    let opts = ViscoOptions { tol: 1e-13, max_iter: 200_000, parallel: false };
    let mut worst = 0.0f64;
    for fam in ViscoFamily::all() {
        let (f, shift) = match fam {
            ViscoFamily::Tensor(k) => {
                let (i, j) = PAIRS[k];
                (dc.tensor_load(&fluid, &j_basis(i, j)), 0.0)
            }
            ViscoFamily::Zero => (dc.div_load(&fluid, -params.nu0), 1.0),
        };
        let (u, q0): (DVector<f64>, Vec<f64>) = if params.p_star.is_infinite() {
            let b = dc.constraint_rows(&fluid);
            let g = DVector::from_element(fluid.len(), -shift * dc.el.vol);
            let (u, lam) = dense_solve(&kk, &f, Some((&b, &g)));
            (u, lam.iter().map(|l| -l / dc.el.vol).collect())
        } else {
            let u = dense_solve(&kk, &f, None).0;
            let q = fluid.iter().map(|&e| -params.nu0 * (dc.div_integral(u.as_slice(), e) / dc.el.vol + shift)).collect();
            (u, q)
        };
        let init = solve_visco_initial(cell, params, fam, &opts).expect("visco initial solve");
        let computed_q: Vec<f64> = fluid.iter().map(|&e| init.q0[e]).collect();
        let reference = signature(&dc, u.as_slice(), &fluid, &q0);
        let computed = signature(&dc, &init.w0.values, &fluid, &computed_q);
        worst = worst.max(rel_defect(&reference, &computed));
    }
    worst
}

/// Node values as a flat slice (x fastest within a node).
pub fn values(u: &NodeField) -> &[f64] {
    &u.values
}

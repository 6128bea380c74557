//! Periodic voxel grid on the unit cube with cell-centred scalars, MAC face
//! vectors and lattice-node vectors.

use super::tensor::{zero3, Mat3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PeriodicGrid {
    pub dims: [usize; 3],
}

impl PeriodicGrid {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        assert!(nx > 0 && ny > 0 && nz > 0, "grid dimensions must be positive");
        PeriodicGrid { dims: [nx, ny, nz] }
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn h(&self, axis: usize) -> f64 {
        1.0 / self.dims[axis] as f64
    }

    pub fn spacing(&self) -> [f64; 3] {
        [self.h(0), self.h(1), self.h(2)]
    }

    pub fn cell_volume(&self) -> f64 {
        self.h(0) * self.h(1) * self.h(2)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let r = idx / self.dims[0];
        [i, r % self.dims[1], r / self.dims[1]]
    }

    /// Index of the periodic neighbour shifted by `offset` along `axis`.
    #[inline]
    pub fn shift(&self, idx: usize, axis: usize, offset: isize) -> usize {
        let mut c = self.coords(idx);
        let n = self.dims[axis] as isize;
        c[axis] = (c[axis] as isize + offset).rem_euclid(n) as usize;
        self.index(c[0], c[1], c[2])
    }

    pub fn cell_center(&self, idx: usize) -> [f64; 3] {
        let c = self.coords(idx);
        std::array::from_fn(|d| (c[d] as f64 + 0.5) * self.h(d))
    }

    /// Position of lattice node `idx` (the lower corner of cell `idx`).
    pub fn node_position(&self, idx: usize) -> [f64; 3] {
        let c = self.coords(idx);
        std::array::from_fn(|d| c[d] as f64 * self.h(d))
    }

    /// Centre of the face between cell `idx` and its `+axis` neighbour.
    pub fn face_center(&self, idx: usize, axis: usize) -> [f64; 3] {
        let mut x = self.cell_center(idx);
        x[axis] += 0.5 * self.h(axis);
        x
    }

    /// The eight lattice nodes of cell `idx`, local order `bx + 2 by + 4 bz`.
    #[inline]
    pub fn cell_nodes(&self, idx: usize) -> [usize; 8] {
        let [i, j, k] = self.coords(idx);
        let [nx, ny, nz] = self.dims;
        let i1 = if i + 1 == nx { 0 } else { i + 1 };
        let j1 = if j + 1 == ny { 0 } else { j + 1 };
        let k1 = if k + 1 == nz { 0 } else { k + 1 };
        [
            self.index(i, j, k),
            self.index(i1, j, k),
            self.index(i, j1, k),
            self.index(i1, j1, k),
            self.index(i, j, k1),
            self.index(i1, j, k1),
            self.index(i, j1, k1),
            self.index(i1, j1, k1),
        ]
    }

    /// The eight cells sharing lattice node `idx`.
    pub fn node_cells(&self, idx: usize) -> [usize; 8] {
        let mut out = [0; 8];
        for (a, o) in out.iter_mut().enumerate() {
            let mut c = idx;
            for d in 0..3 {
                if (a >> d) & 1 == 1 {
                    c = self.shift(c, d, -1);
                }
            }
            *o = c;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: PeriodicGrid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: PeriodicGrid) -> Self {
        ScalarField { grid, values: vec![0.0; grid.len()] }
    }

    pub fn from_fn(grid: PeriodicGrid, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.len()).map(|c| f(grid.cell_center(c))).collect();
        ScalarField { grid, values }
    }

    /// Sum of values times cell volume.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }
}

/// MAC vector field: component `d` of cell `c` lives on the face between
/// `c` and its `+d` neighbour.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: PeriodicGrid,
    pub comps: [Vec<f64>; 3],
}

impl VectorField {
    pub fn zeros(grid: PeriodicGrid) -> Self {
        let n = grid.len();
        VectorField { grid, comps: [vec![0.0; n], vec![0.0; n], vec![0.0; n]] }
    }

    pub fn from_fn(grid: PeriodicGrid, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let mut v = VectorField::zeros(grid);
        for d in 0..3 {
            for c in 0..grid.len() {
                v.comps[d][c] = f(grid.face_center(c, d))[d];
            }
        }
        v
    }

    pub fn dot(&self, o: &VectorField) -> f64 {
        (0..3).map(|d| super::krylov::dot(&self.comps[d], &o.comps[d])).sum()
    }
}

pub fn div(u: &VectorField) -> ScalarField {
    let g = u.grid;
    let mut out = ScalarField::zeros(g);
    for c in 0..g.len() {
        let mut s = 0.0;
        for d in 0..3 {
            s += (u.comps[d][c] - u.comps[d][g.shift(c, d, -1)]) / g.h(d);
        }
        out.values[c] = s;
    }
    out
}

pub fn grad(p: &ScalarField) -> VectorField {
    let g = p.grid;
    let mut out = VectorField::zeros(g);
    for d in 0..3 {
        for c in 0..g.len() {
            out.comps[d][c] = (p.values[g.shift(c, d, 1)] - p.values[c]) / g.h(d);
        }
    }
    out
}

/// Vector field collocated at lattice nodes (trilinear within each cell).
#[derive(Debug, Clone, PartialEq)]
pub struct NodeField {
    pub grid: PeriodicGrid,
    /// Interleaved components: `values[3 * node + d]`.
    pub values: Vec<f64>,
}

impl NodeField {
    pub fn zeros(grid: PeriodicGrid) -> Self {
        NodeField { grid, values: vec![0.0; 3 * grid.len()] }
    }

    pub fn from_fn(grid: PeriodicGrid, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let mut v = NodeField::zeros(grid);
        for n in 0..grid.len() {
            let x = f(grid.node_position(n));
            v.values[3 * n..3 * n + 3].copy_from_slice(&x);
        }
        v
    }

    #[inline]
    pub fn at(&self, node: usize) -> [f64; 3] {
        [self.values[3 * node], self.values[3 * node + 1], self.values[3 * node + 2]]
    }
}

/// Displacement gradient at the centre of cell `c`, exact for trilinear fields.
pub fn cell_gradient(u: &NodeField, c: usize) -> Mat3 {
    let g = u.grid;
    let nodes = g.cell_nodes(c);
    let h = g.spacing();
    let mut gu = zero3();
    for (a, &n) in nodes.iter().enumerate() {
        let ua = u.at(n);
        for d in 0..3 {
            let sign = if (a >> d) & 1 == 1 { 1.0 } else { -1.0 };
            let w = sign * 0.25 / h[d];
            for i in 0..3 {
                gu[i][d] += w * ua[i];
            }
        }
    }
    gu
}

/// Symmetric gradient at cell centres.
pub fn sym_grad(u: &NodeField) -> Vec<Mat3> {
    (0..u.grid.len())
        .map(|c| {
            let gu = cell_gradient(u, c);
            let mut e = zero3();
            for i in 0..3 {
                for j in 0..3 {
                    e[i][j] = 0.5 * (gu[i][j] + gu[j][i]);
                }
            }
            e
        })
        .collect()
}

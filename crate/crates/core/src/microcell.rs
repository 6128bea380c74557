//! Unit-cell geometry: the fluid indicator χ on a periodic voxel grid,
//! porosity and periodic connectivity of the two phases.

use crate::error::{Error, Result};
use crate::pde::PeriodicGrid;
use std::path::Path;

pub const CELLGEO_MAGIC: &str = "poro-cellgeo v1";

/// Periodic 0/1 voxel indicator of the fluid part (1 = fluid), x-fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoxelCell {
    grid: PeriodicGrid,
    chi: Vec<u8>,
    fluid_count: usize,
}

impl VoxelCell {
    pub fn new(dims: [usize; 3], chi: Vec<u8>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Invalid(format!("dimensions must be positive, got {dims:?}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if chi.len() != n {
            return Err(Error::Invalid(format!("indicator has {} entries, dims require {n}", chi.len())));
        }
        if let Some(pos) = chi.iter().position(|&v| v > 1) {
            return Err(Error::Invalid(format!("indicator entry {pos} is {}, expected 0 or 1", chi[pos])));
        }
        let fluid_count = chi.iter().filter(|&&v| v == 1).count();
        Ok(VoxelCell { grid: PeriodicGrid::new(dims[0], dims[1], dims[2]), chi, fluid_count })
    }

    pub fn from_fn(dims: [usize; 3], fluid: impl Fn([usize; 3]) -> bool) -> Self {
        let grid = PeriodicGrid::new(dims[0], dims[1], dims[2]);
        let chi = (0..grid.len()).map(|c| fluid(grid.coords(c)) as u8).collect();
        VoxelCell::new(dims, chi).expect("indicator built from predicate is valid")
    }

    pub fn solid_only(dims: [usize; 3]) -> Self {
        VoxelCell::from_fn(dims, |_| false)
    }

    /// Fluid slab of `layers` z-layers starting at layer `start`, spanning x and y.
    pub fn laminate_at(dims: [usize; 3], start: usize, layers: usize) -> Self {
        assert!(start + layers <= dims[2], "slab exceeds cell");
        VoxelCell::from_fn(dims, |c| c[2] >= start && c[2] < start + layers)
    }

    /// Centred fluid slab of `layers` z-layers.
    pub fn laminate(dims: [usize; 3], layers: usize) -> Self {
        VoxelCell::laminate_at(dims, (dims[2] - layers) / 2, layers)
    }

    fn centered_cube(dims: [usize; 3], size: usize) -> impl Fn([usize; 3]) -> bool {
        assert!(dims.iter().all(|&d| size <= d), "cube larger than cell");
        let lo: [usize; 3] = std::array::from_fn(|d| (dims[d] - size) / 2);
        move |c: [usize; 3]| (0..3).all(|d| c[d] >= lo[d] && c[d] < lo[d] + size)
    }

    /// Centred cubic fluid pore of side `size` voxels in a solid matrix.
    pub fn isolated_pore(dims: [usize; 3], size: usize) -> Self {
        let inside = Self::centered_cube(dims, size);
        VoxelCell::from_fn(dims, inside)
    }

    /// Centred cubic solid inclusion of side `size` voxels in a fluid matrix.
    pub fn solid_inclusion(dims: [usize; 3], size: usize) -> Self {
        let inside = Self::centered_cube(dims, size);
        VoxelCell::from_fn(dims, move |c| !inside(c))
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn chi(&self) -> &[u8] {
        &self.chi
    }

    #[inline]
    pub fn is_fluid(&self, idx: usize) -> bool {
        self.chi[idx] == 1
    }

    pub fn len(&self) -> usize {
        self.chi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chi.is_empty()
    }

    pub fn fluid_count(&self) -> usize {
        self.fluid_count
    }

    pub fn solid_count(&self) -> usize {
        self.len() - self.fluid_count
    }

    /// m = ⟨χ⟩, the exact count ratio.
    pub fn porosity(&self) -> f64 {
        self.fluid_count as f64 / self.len() as f64
    }

    /// Cyclic shift of the voxel array by `offset` voxels along every axis.
    pub fn shifted(&self, offset: [isize; 3]) -> VoxelCell {
        let g = self.grid;
        let mut chi = vec![0u8; g.len()];
        for (c, &v) in self.chi.iter().enumerate() {
            let mut t = c;
            for d in 0..3 {
                t = g.shift(t, d, offset[d]);
            }
            chi[t] = v;
        }
        VoxelCell::new(g.dims, chi).expect("shift preserves validity")
    }

    pub fn to_cellgeo(&self) -> String {
        let [nx, ny, nz] = self.dims();
        let mut s = format!("{CELLGEO_MAGIC}\ndims {nx} {ny} {nz}\n");
        for row in self.chi.chunks(nx) {
            s.extend(row.iter().map(|&v| if v == 1 { '1' } else { '0' }));
            s.push('\n');
        }
        s
    }

    pub fn parse_cellgeo(text: &str, source_name: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse { source_name: source_name.to_string(), line, msg };
        let mut lines = text.lines();
        match lines.next() {
            Some(l) if l.trim_end_matches('\r') == CELLGEO_MAGIC => {}
            Some(l) => return Err(err(1, format!("expected header `{CELLGEO_MAGIC}`, found `{l}`"))),
            None => return Err(err(1, "empty file".into())),
        }
        let dims_line = lines.next().ok_or_else(|| err(2, "missing `dims` line".into()))?;
        let mut parts = dims_line.split_whitespace();
        if parts.next() != Some("dims") {
            return Err(err(2, format!("expected `dims <nx> <ny> <nz>`, found `{dims_line}`")));
        }
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            let tok = parts.next().ok_or_else(|| err(2, "dims needs three integers".into()))?;
            *d = tok.parse().map_err(|_| err(2, format!("invalid dimension `{tok}`")))?;
            if *d == 0 {
                return Err(err(2, "dimensions must be positive".into()));
            }
        }
        if parts.next().is_some() {
            return Err(err(2, "trailing tokens after dims".into()));
        }
        let n = dims[0] * dims[1] * dims[2];
        let mut chi = Vec::with_capacity(n);
        for (k, line) in lines.enumerate() {
            let lineno = k + 3;
            for (col, ch) in line.chars().enumerate() {
                match ch {
                    '0' => chi.push(0),
                    '1' => chi.push(1),
                    c if c.is_whitespace() => {}
                    c => return Err(err(lineno, format!("invalid symbol `{c}` at offset {}", col + 1))),
                }
            }
        }
        if chi.len() != n {
            return Err(err(
                text.lines().count(),
                format!("payload has {} voxels, dims {}x{}x{} require {n}", chi.len(), dims[0], dims[1], dims[2]),
            ));
        }
        VoxelCell::new(dims, chi)
    }
}

pub fn load_geometry(path: &Path) -> Result<VoxelCell> {
    let text = std::fs::read_to_string(path).map_err(|err| Error::Io { path: path.display().to_string(), err })?;
    VoxelCell::parse_cellgeo(&text, &path.display().to_string())
}

pub fn write_geometry(cell: &VoxelCell, path: &Path) -> Result<()> {
    std::fs::write(path, cell.to_cellgeo()).map_err(|err| Error::Io { path: path.display().to_string(), err })
}

pub fn porosity(cell: &VoxelCell) -> f64 {
    cell.porosity()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Connectivity {
    pub fluid_connected: bool,
    pub solid_connected: bool,
    pub pores_isolated: bool,
    /// Axes along which some fluid component wraps around the torus.
    pub fluid_wraps: [bool; 3],
    pub fluid_components: usize,
    pub solid_components: usize,
}

/// Union–find carrying the unwrapped offset of each voxel from its parent,
/// so that cycles around the torus show up as non-zero windings.
struct WindingUnionFind {
    parent: Vec<usize>,
    offset: Vec<[i64; 3]>,
    size: Vec<usize>,
}

impl WindingUnionFind {
    fn new(n: usize) -> Self {
        WindingUnionFind { parent: (0..n).collect(), offset: vec![[0; 3]; n], size: vec![1; n] }
    }

    /// Root of `x` and the unwrapped offset of `x` relative to it.
    fn find(&mut self, x: usize) -> (usize, [i64; 3]) {
        let mut path = Vec::new();
        let mut r = x;
        while self.parent[r] != r {
            path.push(r);
            r = self.parent[r];
        }
        // compress from the top so every node on the path points at the root
        for &v in path.iter().rev() {
            let p = self.parent[v];
            if p != r {
                let po = self.offset[p];
                for d in 0..3 {
                    self.offset[v][d] += po[d];
                }
                self.parent[v] = r;
            }
        }
        (r, if x == r { [0; 3] } else { self.offset[x] })
    }

    /// Joins `a` and `b` where `b` sits at `a + delta`; returns the winding
    /// if they were already joined.
    fn union(&mut self, a: usize, b: usize, delta: [i64; 3]) -> Option<[i64; 3]> {
        let (ra, oa) = self.find(a);
        let (rb, ob) = self.find(b);
        if ra == rb {
            let w: [i64; 3] = std::array::from_fn(|d| oa[d] + delta[d] - ob[d]);
            return Some(w);
        }
        // offset of the attached root relative to the surviving root
        let rel: [i64; 3] = std::array::from_fn(|d| ob[d] - oa[d] - delta[d]);
        if self.size[ra] < self.size[rb] {
            self.parent[ra] = rb;
            self.offset[ra] = rel;
            self.size[rb] += self.size[ra];
        } else {
            self.parent[rb] = ra;
            self.offset[rb] = rel.map(|v| -v);
            self.size[ra] += self.size[rb];
        }
        None
    }
}

struct PhaseComponents {
    count: usize,
    wraps: [bool; 3],
    any_wraps_by_root: Vec<bool>,
}

fn phase_components(cell: &VoxelCell, phase: u8) -> PhaseComponents {
    let g = cell.grid();
    let mut uf = WindingUnionFind::new(g.len());
    let mut events = Vec::new();
    for c in 0..g.len() {
        if cell.chi[c] != phase {
            continue;
        }
        for d in 0..3 {
            let nb = g.shift(c, d, 1);
            if cell.chi[nb] != phase {
                continue;
            }
            let mut delta = [0; 3];
            delta[d] = 1;
            if let Some(w) = uf.union(c, nb, delta) {
                if w.iter().any(|&v| v != 0) {
                    events.push((c, w));
                }
            }
        }
    }
    let mut is_root = vec![false; g.len()];
    let mut count = 0;
    for c in 0..g.len() {
        if cell.chi[c] == phase {
            let (r, _) = uf.find(c);
            if !is_root[r] {
                is_root[r] = true;
                count += 1;
            }
        }
    }
    let mut wraps = [false; 3];
    let mut any_wraps_by_root = vec![false; g.len()];
    for (c, w) in events {
        let (r, _) = uf.find(c);
        any_wraps_by_root[r] = true;
        for d in 0..3 {
            wraps[d] |= w[d] != 0;
        }
    }
    PhaseComponents { count, wraps, any_wraps_by_root }
}

/// Periodic 6-face connectivity of both phases.
///
/// Isolated pores are detected as fluid components that do not wind around
/// the torus. This is invariant under cyclic shifts of the voxel array, so
/// the answer does not depend on where the cell boundary is drawn.
pub fn analyze_connectivity(cell: &VoxelCell) -> Connectivity {
    let fluid = phase_components(cell, 1);
    let solid = phase_components(cell, 0);
    let fluid_wrapping = fluid.any_wraps_by_root.iter().any(|&w| w);
    Connectivity {
        fluid_connected: fluid.count == 1 && fluid_wrapping,
        solid_connected: solid.count == 1,
        pores_isolated: !fluid_wrapping,
        fluid_wraps: fluid.wraps,
        fluid_components: fluid.count,
        solid_components: solid.count,
    }
}

impl Connectivity {
    pub fn fluid_wraps_all_axes(&self) -> bool {
        self.fluid_wraps.iter().all(|&w| w)
    }
}

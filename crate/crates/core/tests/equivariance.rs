//! Coordinate relabelling must commute with every solver: swapping two axes
//! of an asymmetric cell permutes the coefficient tensors, and rotating the
//! load on the unit square by a quarter turn rotates the Lamé displacement.

use porocell::elastic::{assemble_effective_elastic, solve_elastic_cell, ElasticOptions};
use porocell::fluid::{solve_neumann_b3, solve_steady_stokes, FluidOptions};
use porocell::macroscale::{solve_lame_static, synthetic_elastic_set, MacroGrid, MacroOptions};
use porocell::microcell::VoxelCell;
use porocell::pde::tensor::Mat3;
use porocell::scaling::ExtReal;

const SWAP_XY: [usize; 3] = [1, 0, 2];
const SWAP_XZ: [usize; 3] = [2, 1, 0];

/// Relabels the axes of a cell: new axis `a` is old axis `perm[a]`.
fn transposed(cell: &VoxelCell, perm: [usize; 3]) -> VoxelCell {
    let [nx, ny, _] = cell.dims();
    let d = cell.dims();
    VoxelCell::from_fn([d[perm[0]], d[perm[1]], d[perm[2]]], |p| {
        let mut q = [0; 3];
        for a in 0..3 {
            q[perm[a]] = p[a];
        }
        cell.is_fluid(q[0] + nx * (q[1] + ny * q[2]))
    })
}

/// Asymmetric cell: an L-shaped pore that does not touch the faces.
fn l_pore() -> VoxelCell {
    VoxelCell::from_fn([6, 5, 4], |[x, y, z]| (1..=2).contains(&z) && ((1..=4).contains(&x) && y == 1 || x == 1 && (1..=2).contains(&y)))
}

/// Fluid slab normal to y with a rib along z: connected in x and z only.
fn ribbed_slab() -> VoxelCell {
    VoxelCell::from_fn([5, 4, 6], |[x, y, _]| y == 1 || y == 2 && x <= 1)
}

fn assert_mat3_permuted(a: &Mat3, b: &Mat3, perm: [usize; 3], tol: f64, what: &str) {
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..3 {
        for j in 0..3 {
            let d = (b[i][j] - a[perm[i]][perm[j]]).abs();
            assert!(d <= tol * scale + 1e-12, "{what}[{i}][{j}]: {} vs {} ", b[i][j], a[perm[i]][perm[j]]);
        }
    }
}

#[test]
fn elastic_coefficients_follow_axis_swap() {
    let opts = ElasticOptions { tol: 1e-11, max_iter: 100_000, parallel: false };
    let cell = l_pore();
    let t = transposed(&cell, SWAP_XY);
    for eta0 in [ExtReal::Finite(1.0), ExtReal::Infinite] {
        let a = assemble_effective_elastic(&solve_elastic_cell(&cell, 1.0, eta0, &opts).unwrap(), &cell).unwrap();
        let b = assemble_effective_elastic(&solve_elastic_cell(&t, 1.0, eta0, &opts).unwrap(), &t).unwrap();
        let scale = a.a0s.max_abs();
        let anisotropy = (a.a0s.component(0, 0, 0, 0) - a.a0s.component(1, 1, 1, 1)).abs();
        assert!(anisotropy > 1e-4 * scale, "test cell should not be symmetric under the swap");
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        let d = (b.a0s.component(i, j, k, l) - a.a0s.component(SWAP_XY[i], SWAP_XY[j], SWAP_XY[k], SWAP_XY[l])).abs();
                        assert!(d <= 1e-8 * scale, "A0s {i}{j}{k}{l} off by {d} for {eta0:?}");
                    }
                }
            }
        }
        assert_mat3_permuted(&a.b0s, &b.b0s, SWAP_XY, 1e-8, "B0s");
        assert_mat3_permuted(&a.c0s, &b.c0s, SWAP_XY, 1e-8, "C0s");
        assert!((a.a0s_scalar - b.a0s_scalar).abs() <= 1e-8 * a.a0s_scalar.abs().max(1.0));
    }
}

#[test]
fn fluid_coefficients_follow_axis_swap() {
    let opts = FluidOptions { tol: 1e-11, max_iter: 100_000, parallel: false };
    let cell = ribbed_slab();
    let t = transposed(&cell, SWAP_XZ);
    let a = solve_steady_stokes(&cell, 1.0, &opts).unwrap().b2;
    let b = solve_steady_stokes(&t, 1.0, &opts).unwrap().b2;
    assert!((a[0][0] - a[2][2]).abs() > 1e-4 * a[2][2], "test cell should not be symmetric under the swap");
    assert_mat3_permuted(&a, &b, SWAP_XZ, 1e-7, "B2");

    let a = solve_neumann_b3(&cell, &opts).unwrap().b3;
    let b = solve_neumann_b3(&t, &opts).unwrap().b3;
    assert!((a[0][0] - a[2][2]).abs() > 1e-4 * a[2][2].abs());
    assert_mat3_permuted(&a, &b, SWAP_XZ, 1e-7, "B3");
}

#[test]
fn isotropic_lame_commutes_with_quarter_turn() {
    let n = 8;
    let grid = MacroGrid::new(n, 2).unwrap();
    let eff = synthetic_elastic_set();
    let q = vec![0.0; grid.num_nodes()];
    let opts = MacroOptions { tol: 1e-12, max_iter: 100_000 };
    let f = |x: [f64; 3]| [x[0] * x[0] + x[1], (3.0 * x[1]).sin() * x[0], 0.0];
    // x' = R(x − c) + c with R the quarter turn (x, y) ↦ (−y, x) about c = (½, ½).
    let rot = |v: [f64; 3]| [-v[1], v[0], 0.0];
    let inv = |x: [f64; 3]| [x[1], 1.0 - x[0], 0.0];
    let g = move |x: [f64; 3]| rot(f(inv(x)));

    for eta2 in [ExtReal::Finite(1.0), ExtReal::Infinite] {
        let a = solve_lame_static(&grid, &eff, &q, &f, eta2, &opts).unwrap();
        let b = solve_lame_static(&grid, &eff, &q, &g, eta2, &opts).unwrap();
        let scale = a.u.iter().flat_map(|u| u.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(scale > 0.0);
        let m = n + 1;
        for j in 0..m {
            for i in 0..m {
                // Node (i, j) maps to (n − j, i).
                let src = a.u[i + m * j];
                let dst = b.u[(n - j) + m * i];
                let want = rot(src);
                for d in 0..2 {
                    assert!((dst[d] - want[d]).abs() <= 1e-7 * scale, "{eta2:?} node ({i},{j}) comp {d}: {} vs {}", dst[d], want[d]);
                }
            }
        }
    }
}

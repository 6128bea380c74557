mod common;

use common::{elastic_oracle_defect, visco_initial_oracle_defect, DenseCell, Element};
use porocell::microcell::VoxelCell;
use porocell::pde::q1::Q1Element;
use porocell::scaling::ExtReal;
use porocell::visco::ViscoParams;

const TOL: f64 = 1e-8;

fn visco(p_star: ExtReal) -> ViscoParams {
    ViscoParams { mu0: 1.0, lambda0: 1.0, nu0: 0.5, p_star, eta0: ExtReal::Finite(1.0) }
}

#[test]
fn oracle_element_matches_library_element() {
    let h = [0.25, 0.5, 0.125];
    let a = Element::new(h);
    let b = Q1Element::new(h);
    let scale = a.ke.amax();
    for r in 0..24 {
        for c in 0..24 {
            assert!((a.ke[(r, c)] - b.ke[r][c]).abs() <= 1e-14 * scale, "ke[{r}][{c}]");
        }
        assert!((a.dv[r] - b.dv[r]).abs() <= 1e-15);
    }
}

#[test]
fn oracle_element_has_rigid_kernel() {
    let el = Element::new([0.5, 0.5, 0.5]);
    let eig = el.ke.clone().symmetric_eigen().eigenvalues;
    let zeros = eig.iter().filter(|v| v.abs() < 1e-12 * el.ke.amax()).count();
    // three translations and three rotations
    assert_eq!(zeros, 6);
}

#[test]
fn elastic_penalty_matches_dense_on_4_cubed() {
    let cell = VoxelCell::solid_inclusion([4, 4, 4], 2);
    let d = elastic_oracle_defect(&cell, 1.0, ExtReal::Finite(2.0));
    eprintln!("defect {d:e}");
    assert!(d <= TOL, "defect {d:e}");
}

#[test]
fn elastic_penalty_matches_dense_on_pore_cell() {
    let cell = VoxelCell::isolated_pore([4, 4, 4], 2);
    let d = elastic_oracle_defect(&cell, 1.5, ExtReal::Finite(1.0));
    eprintln!("defect {d:e}");
    assert!(d <= TOL, "defect {d:e}");
}

#[test]
fn elastic_incompressible_matches_dense_on_4x4x8() {
    let cell = VoxelCell::laminate([4, 4, 8], 3);
    let d = elastic_oracle_defect(&cell, 1.0, ExtReal::Infinite);
    eprintln!("defect {d:e}");
    assert!(d <= TOL, "defect {d:e}");
}

#[test]
fn visco_initial_matches_dense() {
    let inc = VoxelCell::solid_inclusion([4, 4, 4], 2);
    let lam = VoxelCell::laminate([4, 4, 8], 3);
    for (cell, ps) in [(&inc, ExtReal::Finite(1.0)), (&lam, ExtReal::Finite(1.0)), (&inc, ExtReal::Infinite), (&lam, ExtReal::Infinite)] {
        let d = visco_initial_oracle_defect(cell, &visco(ps));
        eprintln!("{ps:?}: defect {d:e}");
        assert!(d <= TOL, "{ps:?}: defect {d:e}");
    }
}

#[test]
fn dense_cell_node_order_matches_grid() {
    let cell = VoxelCell::laminate([3, 4, 5], 2);
    let dc = DenseCell::new(&cell);
    let grid = cell.grid();
    for e in 0..grid.len() {
        assert_eq!(dc.nodes(e), grid.cell_nodes(e));
    }
}

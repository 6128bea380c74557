//! Small dense tensors: 3×3 matrices and fourth-rank tensors on symmetric
//! matrices stored as 6×6 matrices.
//!
//! `Sym6` uses the Voigt index order (11, 22, 33, 23, 13, 12) with the
//! orthonormal (Mandel) weighting: a symmetric matrix `D` maps to the vector
//! `(D11, D22, D33, √2 D23, √2 D13, √2 D12)`. Under this weighting the
//! contraction `A:D` is a plain matrix–vector product, `D:E` is the dot product
//! of the two vectors, the identity tensor is the 6×6 identity and the
//! eigenvalues of the matrix are those of the tensor.

use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];

pub const VOIGT_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];

const SQRT2: f64 = std::f64::consts::SQRT_2;

pub fn voigt_weight(k: usize) -> f64 {
    if k < 3 {
        1.0
    } else {
        SQRT2
    }
}

pub fn zero3() -> Mat3 {
    [[0.0; 3]; 3]
}

pub fn eye3() -> Mat3 {
    let mut m = zero3();
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

/// J^{ij} = (e_i ⊗ e_j + e_j ⊗ e_i) / 2.
pub fn j_basis(i: usize, j: usize) -> Mat3 {
    let mut m = zero3();
    m[i][j] += 0.5;
    m[j][i] += 0.5;
    m
}

pub fn transpose3(a: &Mat3) -> Mat3 {
    let mut t = zero3();
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

pub fn add3(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = *a;
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] += b[i][j];
        }
    }
    c
}

pub fn scale3(a: &Mat3, s: f64) -> Mat3 {
    let mut c = *a;
    c.iter_mut().flatten().for_each(|v| *v *= s);
    c
}

pub fn ddot3(a: &Mat3, b: &Mat3) -> f64 {
    (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| a[i][j] * b[i][j]).sum()
}

pub fn trace3(a: &Mat3) -> f64 {
    a[0][0] + a[1][1] + a[2][2]
}

pub fn max_abs3(a: &Mat3) -> f64 {
    a.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn frob3(a: &Mat3) -> f64 {
    ddot3(a, a).sqrt()
}

pub fn asym3(a: &Mat3) -> f64 {
    let mut m = 0.0_f64;
    for i in 0..3 {
        for j in 0..3 {
            m = m.max((a[i][j] - a[j][i]).abs());
        }
    }
    m
}

/// Mandel vector of a symmetric matrix (the symmetric part is used).
pub fn mandel(d: &Mat3) -> [f64; 6] {
    let mut v = [0.0; 6];
    for (k, &(i, j)) in VOIGT_PAIRS.iter().enumerate() {
        v[k] = voigt_weight(k) * 0.5 * (d[i][j] + d[j][i]);
    }
    v
}

pub fn from_mandel(v: &[f64; 6]) -> Mat3 {
    let mut d = zero3();
    for (k, &(i, j)) in VOIGT_PAIRS.iter().enumerate() {
        let x = v[k] / voigt_weight(k);
        d[i][j] = x;
        d[j][i] = x;
    }
    d
}

pub type Tensor4 = [[[[f64; 3]; 3]; 3]; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sym6(pub [[f64; 6]; 6]);

impl Default for Sym6 {
    fn default() -> Self {
        Sym6::zero()
    }
}

impl Sym6 {
    pub fn zero() -> Self {
        Sym6([[0.0; 6]; 6])
    }

    pub fn identity() -> Self {
        let mut m = [[0.0; 6]; 6];
        for (k, row) in m.iter_mut().enumerate() {
            row[k] = 1.0;
        }
        Sym6(m)
    }

    /// `a ⊗ b`, acting as `D ↦ a (b:D)`.
    pub fn outer(a: &Mat3, b: &Mat3) -> Self {
        let va = mandel(a);
        let vb = mandel(b);
        let mut m = [[0.0; 6]; 6];
        for r in 0..6 {
            for c in 0..6 {
                m[r][c] = va[r] * vb[c];
            }
        }
        Sym6(m)
    }

    /// Σ_{i,j} X(i,j) ⊗ J^{ij} over all nine index pairs, where `x(i, j)`
    /// must be symmetric in (i, j).
    pub fn sum_outer_j(x: impl Fn(usize, usize) -> Mat3) -> Self {
        let mut s = Sym6::zero();
        for i in 0..3 {
            for j in 0..3 {
                s = s.add(&Sym6::outer(&x(i, j), &j_basis(i, j)));
            }
        }
        s
    }

    pub fn apply(&self, d: &Mat3) -> Mat3 {
        let v = mandel(d);
        let mut r = [0.0; 6];
        for (i, ri) in r.iter_mut().enumerate() {
            *ri = (0..6).map(|k| self.0[i][k] * v[k]).sum();
        }
        from_mandel(&r)
    }

    pub fn add(&self, o: &Sym6) -> Sym6 {
        let mut m = self.0;
        for r in 0..6 {
            for c in 0..6 {
                m[r][c] += o.0[r][c];
            }
        }
        Sym6(m)
    }

    pub fn sub(&self, o: &Sym6) -> Sym6 {
        self.add(&o.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Sym6 {
        let mut m = self.0;
        m.iter_mut().flatten().for_each(|v| *v *= s);
        Sym6(m)
    }

    pub fn transpose(&self) -> Sym6 {
        let mut m = [[0.0; 6]; 6];
        for r in 0..6 {
            for c in 0..6 {
                m[r][c] = self.0[c][r];
            }
        }
        Sym6(m)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_asym(&self) -> f64 {
        let mut m = 0.0_f64;
        for r in 0..6 {
            for c in 0..6 {
                m = m.max((self.0[r][c] - self.0[c][r]).abs());
            }
        }
        m
    }

    /// Entry in tensor indices, `T_{ijkl}`.
    pub fn component(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let a = voigt_index(i, j);
        let b = voigt_index(k, l);
        self.0[a][b] / (voigt_weight(a) * voigt_weight(b))
    }

    pub fn to_tensor(&self) -> Tensor4 {
        let mut t = [[[[0.0; 3]; 3]; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        t[i][j][k][l] = self.component(i, j, k, l);
                    }
                }
            }
        }
        t
    }

    /// Reads the minor-symmetric part of `t`.
    pub fn from_tensor(t: &Tensor4) -> Sym6 {
        let mut m = [[0.0; 6]; 6];
        for (a, &(i, j)) in VOIGT_PAIRS.iter().enumerate() {
            for (b, &(k, l)) in VOIGT_PAIRS.iter().enumerate() {
                let v = 0.25 * (t[i][j][k][l] + t[j][i][k][l] + t[i][j][l][k] + t[j][i][l][k]);
                m[a][b] = voigt_weight(a) * voigt_weight(b) * v;
            }
        }
        Sym6(m)
    }

    /// Smallest eigenvalue; errors when the asymmetry exceeds `tol`.
    pub fn min_eig(&self, tol: f64) -> Result<f64> {
        let asym = self.max_asym();
        if asym > tol {
            return Err(Error::Asymmetric { asym, tol });
        }
        let v: Vec<Vec<f64>> = (0..6)
            .map(|r| (0..6).map(|c| 0.5 * (self.0[r][c] + self.0[c][r])).collect())
            .collect();
        Ok(jacobi_eigenvalues(v).into_iter().fold(f64::INFINITY, f64::min))
    }

    pub fn is_spd(&self, tol: f64) -> Result<bool> {
        Ok(self.min_eig(tol)? > tol)
    }
}

pub fn voigt(t: &Tensor4) -> Sym6 {
    Sym6::from_tensor(t)
}

pub fn devoigt(m: &Sym6) -> Tensor4 {
    m.to_tensor()
}

pub fn voigt_index(i: usize, j: usize) -> usize {
    match (i.min(j), i.max(j)) {
        (0, 0) => 0,
        (1, 1) => 1,
        (2, 2) => 2,
        (1, 2) => 3,
        (0, 2) => 4,
        (0, 1) => 5,
        _ => panic!("index out of range"),
    }
}

/// Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    let scale = a.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return vec![0.0; n];
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).map(move |q| (p, q)))
            .filter(|(p, q)| p != q)
            .map(|(p, q)| a[p][q] * a[p][q])
            .sum();
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

pub fn min_eig3(m: &Mat3, tol: f64) -> Result<f64> {
    let asym = asym3(m);
    if asym > tol {
        return Err(Error::Asymmetric { asym, tol });
    }
    let v: Vec<Vec<f64>> = (0..3)
        .map(|r| (0..3).map(|c| 0.5 * (m[r][c] + m[c][r])).collect())
        .collect();
    Ok(jacobi_eigenvalues(v).into_iter().fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym_tensor(rng: &mut ChaCha8Rng) -> Tensor4 {
        let mut t = [[[[0.0; 3]; 3]; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        t[i][j][k][l] = rng.gen_range(-1.0..1.0);
                    }
                }
            }
        }
        // project onto minor symmetries
        let mut s = t;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        s[i][j][k][l] = 0.25 * (t[i][j][k][l] + t[j][i][k][l] + t[i][j][l][k] + t[j][i][l][k]);
                    }
                }
            }
        }
        s
    }

    #[test]
    fn identity_tensor_is_identity_matrix() {
        let id = Sym6::sum_outer_j(j_basis);
        assert!(id.sub(&Sym6::identity()).max_abs() < 1e-15);
        assert!((id.min_eig(1e-12).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_tensor_not_spd() {
        assert_eq!(Sym6::zero().min_eig(1e-12).unwrap(), 0.0);
        assert!(!Sym6::zero().is_spd(1e-12).unwrap());
    }

    #[test]
    fn roundtrip_on_symmetric_tensors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let t = random_sym_tensor(&mut rng);
            let back = devoigt(&voigt(&t));
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        for l in 0..3 {
                            assert!((back[i][j][k][l] - t[i][j][k][l]).abs() < 1e-14);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn contraction_is_matvec() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_sym_tensor(&mut rng);
        let mut d = zero3();
        for i in 0..3 {
            for j in i..3 {
                let v = rng.gen_range(-1.0..1.0);
                d[i][j] = v;
                d[j][i] = v;
            }
        }
        let got = voigt(&t).apply(&d);
        for i in 0..3 {
            for j in 0..3 {
                let mut want = 0.0;
                for k in 0..3 {
                    for l in 0..3 {
                        want += t[i][j][k][l] * d[k][l];
                    }
                }
                assert!((got[i][j] - want).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn gram_matrix_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for rank in 1..=6 {
            let g: Vec<[f64; 6]> = (0..rank)
                .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
                .collect();
            let mut m = [[0.0; 6]; 6];
            for r in 0..6 {
                for c in 0..6 {
                    m[r][c] = g.iter().map(|row| row[r] * row[c]).sum();
                }
            }
            let e = Sym6(m).min_eig(1e-12).unwrap();
            assert!(e >= -1e-12, "rank {rank}: {e}");
            if rank < 6 {
                assert!(e.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jacobi_matches_known_spectrum() {
        // tridiagonal (2,-1) of size 6 has eigenvalues 2 - 2cos(kπ/7)
        let n: usize = 6;
        let a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if i == j { 2.0 } else if i.abs_diff(j) == 1 { -1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let mut ev = jacobi_eigenvalues(a);
        ev.sort_by(f64::total_cmp);
        for (k, e) in ev.iter().enumerate() {
            let want = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / 7.0).cos();
            assert!((e - want).abs() < 1e-13);
        }
    }

    #[test]
    fn asymmetry_is_rejected() {
        let mut m = Sym6::identity();
        m.0[0][1] = 1e-3;
        assert!(matches!(m.min_eig(1e-8), Err(Error::Asymmetric { .. })));
    }
}

//! Small dense square matrices: cyclic Jacobi eigenvalues, Cholesky,
//! the symmetric-definite pencil reduction and leading principal minors.
//!
//! Sizes here are the spatial dimension (n <= 8 in practice), so everything
//! is row-major `Vec<f64>` with no blocking.

use std::ops::{Index, IndexMut};

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mat {
    n: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(n: usize) -> Mat {
        Mat {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Mat {
        Mat::diag(&vec![1.0; n])
    }

    pub fn diag(values: &[f64]) -> Mat {
        let mut m = Mat::zeros(values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Mat {
        let n = rows.len();
        let mut m = Mat::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "matrix must be square");
            m.data[i * n..(i + 1) * n].copy_from_slice(row);
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n.max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat {
            n: self.n,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!(self.n, other.n);
        Mat {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest |m_ij - m_ji|.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in i + 1..self.n {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// Replaces the matrix by (M + Mᵀ)/2.
    pub fn symmetrize(&mut self) {
        for i in 0..self.n {
            for j in i + 1..self.n {
                let avg = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = avg;
                self[(j, i)] = avg;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigenvalues of a symmetric matrix in ascending order (cyclic Jacobi).
///
/// Sweeps until the off-diagonal Frobenius norm is below `1e-12` relative to
/// the full Frobenius norm. Only the upper triangle is read.
pub fn symmetric_eigenvalues(m: &Mat) -> Vec<f64> {
    let n = m.n;
    let mut a = m.clone();
    for i in 0..n {
        for j in i + 1..n {
            a[(j, i)] = a[(i, j)];
        }
    }
    let total = a.frobenius();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off = off_diagonal_norm(&a);
        if off <= JACOBI_TOL * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(f64::total_cmp);
    eig
}

fn off_diagonal_norm(a: &Mat) -> f64 {
    let mut s = 0.0;
    for i in 0..a.n {
        for j in 0..a.n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

pub fn min_eigenvalue(m: &Mat) -> f64 {
    symmetric_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

/// Lower Cholesky factor, or `None` if a pivot is not strictly positive.
pub fn cholesky(m: &Mat) -> Option<Mat> {
    let n = m.n;
    let mut l = Mat::zeros(n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Eigenvalues of the pencil (m, a) with `a` symmetric positive definite,
/// via `L⁻¹ m L⁻ᵀ` where `a = L Lᵀ`. `None` if `a` is not positive definite.
pub fn pencil_eigenvalues(m: &Mat, a: &Mat) -> Option<Vec<f64>> {
    let l = cholesky(a)?;
    let n = m.n;
    // Y = L⁻¹ M (forward substitution column by column)
    let mut y = Mat::zeros(n);
    for col in 0..n {
        for i in 0..n {
            let mut s = m[(i, col)];
            for k in 0..i {
                s -= l[(i, k)] * y[(k, col)];
            }
            y[(i, col)] = s / l[(i, i)];
        }
    }
    // C = Y L⁻ᵀ, i.e. solve C Lᵀ = Y row by row.
    let mut c = Mat::zeros(n);
    for row in 0..n {
        for j in 0..n {
            let mut s = y[(row, j)];
            for k in 0..j {
                s -= c[(row, k)] * l[(j, k)];
            }
            c[(row, j)] = s / l[(j, j)];
        }
    }
    c.symmetrize();
    Some(symmetric_eigenvalues(&c))
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant(m: &Mat) -> f64 {
    let n = m.n;
    let mut a = m.clone();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs()))
            .expect("non-empty range");
        if a[(pivot, col)] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for k in 0..n {
                let tmp = a[(col, k)];
                a[(col, k)] = a[(pivot, k)];
                a[(pivot, k)] = tmp;
            }
            det = -det;
        }
        let p = a[(col, col)];
        det *= p;
        for i in col + 1..n {
            let f = a[(i, col)] / p;
            for k in col..n {
                a[(i, k)] -= f * a[(col, k)];
            }
        }
    }
    det
}

/// Determinants of the top-left k×k blocks, k = 1..n.
pub fn leading_minors(m: &Mat) -> Vec<f64> {
    (1..=m.n)
        .map(|k| {
            let mut sub = Mat::zeros(k);
            for i in 0..k {
                for j in 0..k {
                    sub[(i, j)] = m[(i, j)];
                }
            }
            determinant(&sub)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn random_orthogonal(n: usize, rng: &mut StdRng) -> Mat {
        // Gram-Schmidt on a random matrix.
        let mut cols: Vec<Vec<f64>> = Vec::new();
        while cols.len() < n {
            let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for c in &cols {
                let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                for (vi, ci) in v.iter_mut().zip(c) {
                    *vi -= dot * ci;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-3 {
                cols.push(v.into_iter().map(|x| x / norm).collect());
            }
        }
        let mut q = Mat::zeros(n);
        for (j, c) in cols.iter().enumerate() {
            for i in 0..n {
                q[(i, j)] = c[i];
            }
        }
        q
    }

    fn with_spectrum(spectrum: &[f64], rng: &mut StdRng) -> Mat {
        let n = spectrum.len();
        let q = random_orthogonal(n, rng);
        let mut m = Mat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = (0..n).map(|k| q[(i, k)] * spectrum[k] * q[(j, k)]).sum();
            }
        }
        m.symmetrize();
        m
    }

    #[test]
    fn jacobi_recovers_known_spectra() {
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..100 {
            let n = rng.gen_range(1..=6);
            let mut spectrum: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let m = with_spectrum(&spectrum, &mut rng);
            spectrum.sort_by(f64::total_cmp);
            let eig = symmetric_eigenvalues(&m);
            for (a, b) in eig.iter().zip(&spectrum) {
                assert!((a - b).abs() < 1e-10, "{eig:?} vs {spectrum:?}");
            }
        }
    }

    #[test]
    fn cholesky_success_iff_positive_spectrum() {
        let mut rng = StdRng::seed_from_u64(2);
        for trial in 0..100 {
            let n = rng.gen_range(2..=5);
            let mut spectrum: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..4.0)).collect();
            if trial % 2 == 0 {
                spectrum[rng.gen_range(0..n)] = -rng.gen_range(0.1..2.0);
            }
            let m = with_spectrum(&spectrum, &mut rng);
            let pd = min_eigenvalue(&m) > 0.0;
            assert_eq!(cholesky(&m).is_some(), pd);
            assert_eq!(pd, trial % 2 == 1);
            let minors_positive = leading_minors(&m).iter().all(|&d| d > 0.0);
            assert_eq!(minors_positive, pd);
        }
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = Mat::from_rows(&[
            vec![4.0, 12.0, -16.0],
            vec![12.0, 37.0, -43.0],
            vec![-16.0, -43.0, 98.0],
        ]);
        let l = cholesky(&a).unwrap();
        assert_eq!(
            l.rows(),
            vec![vec![2.0, 0.0, 0.0], vec![6.0, 1.0, 0.0], vec![-8.0, 5.0, 3.0]]
        );
    }

    #[test]
    fn pencil_of_diagonals() {
        let m = Mat::diag(&[8.0, 18.0]);
        let a = Mat::diag(&[2.0, 3.0]);
        let ev = pencil_eigenvalues(&m, &a).unwrap();
        assert!((ev[0] - 4.0).abs() <= 1e-14 && (ev[1] - 6.0).abs() <= 1e-14);
        assert!(pencil_eigenvalues(&m, &Mat::diag(&[1.0, -1.0])).is_none());
    }

    #[test]
    fn pencil_matches_direct_generalized_problem() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..50 {
            let spectrum: Vec<f64> = (0..3).map(|_| rng.gen_range(0.5..3.0)).collect();
            let a = with_spectrum(&spectrum, &mut rng);
            let m = with_spectrum(&[1.0, -2.0, 0.5], &mut rng);
            for mu in pencil_eigenvalues(&m, &a).unwrap() {
                // det(M - mu A) vanishes at a generalized eigenvalue
                let shifted = m.sub(&a.scale(mu));
                assert!(determinant(&shifted).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn minors_and_determinant() {
        let m = Mat::from_rows(&[vec![2.0, 1.0, 0.0], vec![1.0, 3.0, 1.0], vec![0.0, 1.0, 4.0]]);
        let minors = leading_minors(&m);
        assert_eq!(minors[0], 2.0);
        assert!((minors[1] - 5.0).abs() < 1e-14);
        assert!((minors[2] - 18.0).abs() < 1e-13);
        let swap = Mat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(determinant(&swap), -1.0);
    }
}

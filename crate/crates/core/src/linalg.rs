//! Dense helpers: a cyclic Jacobi symmetric eigensolver and a few small
//! matrix utilities shared by the solver and metrics modules.

use crate::error::{Error, Result};
use crate::Matrix;
use nalgebra::DVector;

/// Off-diagonal convergence threshold relative to ‖A‖_F.
pub const JACOBI_TOLERANCE: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Eigenvalues (descending) and orthonormal eigenvectors (as columns).
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: DVector<f64>,
    pub vectors: Matrix,
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

/// Frobenius norm of `a - aᵀ` relative to ‖a‖_F (0 for the zero matrix).
pub fn asymmetry(a: &Matrix) -> f64 {
    let norm = a.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (a - a.transpose()).norm() / norm
}

/// Cyclic Jacobi eigendecomposition of a real symmetric matrix.
///
/// The input is symmetrized first. Sweeps stop once the off-diagonal
/// Frobenius mass drops below [`JACOBI_TOLERANCE`]·‖A‖_F. Eigenpairs are
/// sorted by descending eigenvalue and each eigenvector is signed so that its
/// largest-magnitude component is positive.
pub fn symmetric_eigen(a: &Matrix) -> Result<SymmetricEigen> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::dims("symmetric_eigen input", (n, n), a.shape()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("eigendecomposition of non-finite matrix".into()));
    }
    // row-major working copies; `w` holds A, `v` accumulates rotations (rows are eigenvectors)
    let sym = symmetrize(a);
    let mut w = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            w[r * n + c] = sym[(r, c)];
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let threshold = JACOBI_TOLERANCE * sym.norm();
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|r| (0..n).filter(move |&c| c != r).map(move |c| (r, c)))
            .map(|(r, c)| w[r * n + c] * w[r * n + c])
            .sum::<f64>()
            .sqrt();
        if off <= threshold {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = w[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = w[p * n + p];
                let aqq = w[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut w, &mut v, n, p, q, c, s);
            }
        }
    }
    if !converged {
        return Err(Error::Generation(format!(
            "Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps (n={n})"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[j * n + j].total_cmp(&w[i * n + i]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| w[i * n + i]));
    let mut vectors = Matrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        let row = &v[i * n..(i + 1) * n];
        let pivot = row
            .iter()
            .copied()
            .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors[(r, col)] = sign * row[r];
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

// Applies the Jacobi rotation J(p, q, θ): W ← JᵀWJ, V ← JᵀV (row form).
fn rotate(w: &mut [f64], v: &mut [f64], n: usize, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..n {
        let wkp = w[k * n + p];
        let wkq = w[k * n + q];
        w[k * n + p] = c * wkp - s * wkq;
        w[k * n + q] = s * wkp + c * wkq;
    }
    for k in 0..n {
        let wpk = w[p * n + k];
        let wqk = w[q * n + k];
        w[p * n + k] = c * wpk - s * wqk;
        w[q * n + k] = s * wpk + c * wqk;
    }
    w[p * n + q] = 0.0;
    w[q * n + p] = 0.0;
    for k in 0..n {
        let vpk = v[p * n + k];
        let vqk = v[q * n + k];
        v[p * n + k] = c * vpk - s * vqk;
        v[q * n + k] = s * vpk + c * vqk;
    }
}

/// Relative Frobenius error ‖a − b‖ / ‖b‖ (absolute when b = 0).
pub fn relative_error(a: &Matrix, b: &Matrix) -> f64 {
    let denom = b.norm();
    let diff = (a - b).norm();
    if denom == 0.0 {
        diff
    } else {
        diff / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_symmetric(n: usize, seed: u64) -> Matrix {
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let m = Matrix::from_fn(n, n, |_, _| next());
        symmetrize(&m)
    }

    #[test]
    fn diagonal_matrix_is_sorted() {
        let a = Matrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0, 2.0]));
        let e = symmetric_eigen(&a).unwrap();
        assert_eq!(e.values.as_slice(), &[3.0, 2.0, 1.0]);
        assert_eq!(e.vectors[(1, 0)], 1.0);
    }

    #[test]
    fn reconstructs_random_matrix() {
        for &n in &[1, 2, 5, 17, 40] {
            let a = random_symmetric(n, n as u64);
            let e = symmetric_eigen(&a).unwrap();
            let v = &e.vectors;
            let orth = v.transpose() * v;
            assert!(relative_error(&orth, &Matrix::identity(n, n)) < 1e-10);
            let av = &a * v;
            let vs = v * Matrix::from_diagonal(&e.values);
            assert!((av - vs).norm() <= 1e-8 * a.norm().max(1e-300));
            for w in e.values.as_slice().windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn sign_convention_is_fixed() {
        let a = random_symmetric(9, 3);
        let e = symmetric_eigen(&(-&a * -1.0)).unwrap();
        for col in e.vectors.column_iter() {
            let pivot = col.iter().copied().fold(0.0f64, |b, x| if x.abs() > b.abs() { x } else { b });
            assert!(pivot > 0.0);
        }
    }

    #[test]
    fn rejects_non_square() {
        assert!(symmetric_eigen(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn matches_two_by_two_closed_form() {
        let a = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let e = symmetric_eigen(&a).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
    }
}

//! Direct vectorized least-squares solver used as a verification oracle.
//!
//! Builds each frame's full m²×n² operator `M_ij` (column-major `vec`) and
//! solves `(Σ M_ijᵀ M_ij + λI) vec(X) = Σ M_ijᵀ vec(Y_ij)` with a dense
//! factorization. Memory grows as n⁴, so the size is capped.

use super::{Reconstruction, SolverKind};
use crate::error::{Error, Result};
use crate::forward::Measurement;
use crate::illumination::PatternSet;
use crate::optics::SystemMatrices;
use crate::Matrix;
use nalgebra::DVector;

pub const BRUTE_FORCE_MAX_N: usize = 32;

/// `M[(s + m·t), (a + n·b)] = Φ_L[s, a] · Φ_R[t, b] · P_ij[a, b]`.
pub fn measurement_operator(sys: &SystemMatrices, set: &PatternSet, i: usize, j: usize) -> Result<Matrix> {
    let n = sys.scene_pixels();
    let m = sys.sensor_pixels();
    let p = set.pattern(i, j)?;
    let mut op = Matrix::zeros(m * m, n * n);
    for b in 0..n {
        for a in 0..n {
            let w = p[(a, b)];
            if w == 0.0 {
                continue;
            }
            let col = a + n * b;
            for t in 0..m {
                let rt = sys.phi_r[(t, b)] * w;
                for s in 0..m {
                    op[(s + m * t, col)] = sys.phi_l[(s, a)] * rt;
                }
            }
        }
    }
    Ok(op)
}

pub fn brute_force_solve(
    sys: &SystemMatrices,
    set: &PatternSet,
    frames: &[Measurement],
    lambda: f64,
) -> Result<Reconstruction> {
    let n = sys.scene_pixels();
    let m = sys.sensor_pixels();
    if n > BRUTE_FORCE_MAX_N {
        return Err(Error::Size(format!(
            "brute-force oracle limited to n <= {BRUTE_FORCE_MAX_N}, got {n}"
        )));
    }
    if set.scene_pixels() != n {
        return Err(Error::dims("pattern set", (n, set.k_left()), set.p_l.shape()));
    }
    let mut normal = Matrix::zeros(n * n, n * n);
    let mut rhs = DVector::zeros(n * n);
    for y in frames {
        if y.frame.shape() != (m, m) {
            return Err(Error::dims("measurement", (m, m), y.frame.shape()));
        }
        let (i, j) = y.pattern_index;
        let op = measurement_operator(sys, set, i, j)?;
        let vec_y = DVector::from_column_slice(y.frame.as_slice());
        normal += op.transpose() * &op;
        rhs += op.transpose() * vec_y;
    }
    for d in 0..n * n {
        normal[(d, d)] += lambda;
    }
    let solution = if lambda > 0.0 {
        match normal.clone().cholesky() {
            Some(ch) => Some(ch.solve(&rhs)),
            None => normal.clone().lu().solve(&rhs),
        }
    } else {
        normal.clone().lu().solve(&rhs)
    }
    .ok_or_else(|| Error::Singular("vectorized normal matrix is singular".into()))?;

    let image = Matrix::from_column_slice(n, n, solution.as_slice());
    let residual_vec = &normal * &solution - &rhs;
    let denom = rhs.norm();
    let residual = if denom == 0.0 { residual_vec.norm() } else { residual_vec.norm() / denom };
    Ok(Reconstruction {
        image,
        solver: SolverKind::BruteForce,
        lambda,
        residual,
        family: Some(set.family),
        block: set.block,
        noise_seed: None,
    })
}

//! Residue-class permutation and the block-diagonal fast path.
//!
//! For block-orthogonal pattern families `A_L`, `A_R` vanish between scene
//! indices of different residue mod k. Grouping indices by residue turns
//! both into block-diagonal matrices with k blocks, and the system splits
//! into k² independent patch problems.

use super::{EigenFactors, NormalAccumulator, Reconstruction, SolverKind};
use crate::error::{Error, Result};
use crate::Matrix;
use rayon::prelude::*;

/// Off-block Frobenius mass tolerated relative to ‖A‖_F.
pub const OFF_BLOCK_TOLERANCE: f64 = 1e-12;

/// Residue 0 positions ascending, then residue 1, and so on.
pub fn residue_permutation(n: usize, k: usize) -> Vec<usize> {
    (0..k).flat_map(|r| (r..n).step_by(k)).collect()
}

#[derive(Debug, Clone)]
pub struct BlockSystem {
    /// `permutation[a]` is the original index placed at permuted position `a`.
    pub permutation: Vec<usize>,
    /// Start offset of each block in permuted order, plus a final `n`.
    pub offsets: Vec<usize>,
    pub blocks_l: Vec<Matrix>,
    pub blocks_r: Vec<Matrix>,
    /// `q_tiles[r][c]` is the (r, c) tile of the permuted `Q`.
    pub q_tiles: Vec<Vec<Matrix>>,
    pub lambda: f64,
    family: crate::illumination::PatternFamily,
}

impl BlockSystem {
    pub fn k(&self) -> usize {
        self.blocks_l.len()
    }

    pub fn size(&self) -> usize {
        self.permutation.len()
    }

    fn block_range(&self, b: usize) -> std::ops::Range<usize> {
        self.offsets[b]..self.offsets[b + 1]
    }
}

fn permuted(a: &Matrix, perm: &[usize]) -> Matrix {
    let n = perm.len();
    Matrix::from_fn(n, n, |r, c| a[(perm[r], perm[c])])
}

fn off_block_mass(a: &Matrix, offsets: &[usize]) -> f64 {
    let n = a.nrows();
    let block_of: Vec<usize> = (0..offsets.len() - 1)
        .flat_map(|b| std::iter::repeat_n(b, offsets[b + 1] - offsets[b]))
        .collect();
    let mut mass = 0.0;
    for c in 0..n {
        for r in 0..n {
            if block_of[r] != block_of[c] {
                mass += a[(r, c)] * a[(r, c)];
            }
        }
    }
    mass.sqrt()
}

fn extract(a: &Matrix, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Matrix {
    a.view((rows.start, cols.start), (rows.len(), cols.len())).into_owned()
}

/// Permutes the accumulated system by residue class mod `k` and splits it.
pub fn permute_block(acc: &NormalAccumulator, k: usize) -> Result<BlockSystem> {
    let n = acc.size();
    if k == 0 || k > n {
        return Err(Error::Argument(format!("block period k={k} must lie in 1..={n}")));
    }
    let permutation = residue_permutation(n, k);
    let mut offsets = vec![0];
    for r in 0..k {
        let count = (r..n).step_by(k).count();
        offsets.push(offsets[r] + count);
    }
    let a_l = permuted(acc.a_l(), &permutation);
    let a_r = permuted(acc.a_r(), &permutation);
    for (name, a) in [("A_L", &a_l), ("A_R", &a_r)] {
        let mass = off_block_mass(a, &offsets);
        if mass > OFF_BLOCK_TOLERANCE * a.norm() {
            return Err(Error::Structure(format!(
                "{name} is not block diagonal after residue permutation (k={k}, off-block mass {:e} of {:e}); \
                 pattern family {} is not block-orthogonal",
                mass,
                a.norm(),
                acc.family()
            )));
        }
    }
    let q = permuted(acc.q(), &permutation);
    let ranges: Vec<_> = (0..k).map(|b| offsets[b]..offsets[b + 1]).collect();
    let blocks_l = ranges.iter().map(|r| extract(&a_l, r.clone(), r.clone())).collect();
    let blocks_r = ranges.iter().map(|r| extract(&a_r, r.clone(), r.clone())).collect();
    let q_tiles = ranges
        .iter()
        .map(|rr| ranges.iter().map(|cr| extract(&q, rr.clone(), cr.clone())).collect())
        .collect();
    Ok(BlockSystem {
        permutation,
        offsets,
        blocks_l,
        blocks_r,
        q_tiles,
        lambda: acc.lambda(),
        family: acc.family(),
    })
}

/// Solves the k² patch systems `Q̃_rc = Ã_L⁽ʳ⁾ X_rc Ã_R⁽ᶜ⁾ + λX_rc` in parallel
/// and scatters the patches back to scene order.
pub fn solve_block_diagonal(bs: &BlockSystem, lambda: f64) -> Result<Reconstruction> {
    let k = bs.k();
    let n = bs.size();
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Argument(format!("lambda {lambda} must be finite and >= 0")));
    }
    // one decomposition per block serves every tile in its row/column
    let factors: Vec<EigenFactors> = (0..k)
        .into_par_iter()
        .map(|b| EigenFactors::new(&bs.blocks_l[b], &bs.blocks_r[b]))
        .collect::<Result<_>>()?;
    let tiles: Vec<(usize, usize)> = (0..k).flat_map(|r| (0..k).map(move |c| (r, c))).collect();
    let solved: Vec<(Matrix, f64)> = tiles
        .par_iter()
        .map(|&(r, c)| {
            let left = &factors[r];
            let right = &factors[c];
            let split = EigenFactors {
                v_l: left.v_l.clone(),
                s_l: left.s_l.clone(),
                v_r: right.v_r.clone(),
                s_r: right.s_r.clone(),
            };
            let q = &bs.q_tiles[r][c];
            let x = split.solve(q, lambda).map_err(|e| match e {
                Error::Singular(msg) => Error::Singular(format!("block ({r}, {c}): {msg}")),
                other => other,
            })?;
            let lhs = &bs.blocks_l[r] * &x * &bs.blocks_r[c] + &x * lambda;
            let res2 = (lhs - q).norm_squared();
            Ok((x, res2))
        })
        .collect::<Result<_>>()?;

    let mut image = Matrix::zeros(n, n);
    let mut res2 = 0.0;
    let mut q2 = 0.0;
    for (&(r, c), (x, tile_res)) in tiles.iter().zip(&solved) {
        res2 += tile_res;
        q2 += bs.q_tiles[r][c].norm_squared();
        let rows = bs.block_range(r);
        let cols = bs.block_range(c);
        for (a, pa) in rows.clone().enumerate() {
            for (b, pb) in cols.clone().enumerate() {
                image[(bs.permutation[pa], bs.permutation[pb])] = x[(a, b)];
            }
        }
    }
    let residual = if q2 == 0.0 { res2.sqrt() } else { (res2 / q2).sqrt() };
    Ok(Reconstruction {
        image,
        solver: SolverKind::BlockDiagonal,
        lambda,
        residual,
        family: Some(bs.family),
        block: k,
        noise_seed: None,
    })
}

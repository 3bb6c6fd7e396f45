//! Separable illumination pattern families.
//!
//! A pattern set holds two n×k matrices whose columns are 1-D patterns; the
//! 2-D pattern `(i, j)` is the outer product `p_l[:, i] · p_r[:, j]ᵀ`.
//!
//! Periodic families (shifting dots, repeated orthogonal) place row `r` of
//! the k×k base block at every scene row `≡ r (mod k)`. When k does not
//! divide n the last period is truncated; the residue classes then have
//! ⌈n/k⌉ or ⌊n/k⌋ members but stay mutually orthogonal.

use crate::error::{Error, Result};
use crate::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Retry budget for drawing a covering random pattern set.
pub const RANDOM_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HadamardMode {
    /// ±1 Sylvester Hadamard rows.
    Signed,
    /// `(H + 1) / 2`, realizable with non-negative light.
    BinaryLifted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternFamily {
    Uniform,
    Random,
    ShiftingDots,
    RepeatedOrthogonal(HadamardMode),
}

impl PatternFamily {
    pub fn name(&self) -> &'static str {
        match self {
            PatternFamily::Uniform => "uniform",
            PatternFamily::Random => "random",
            PatternFamily::ShiftingDots => "shifting_dots",
            PatternFamily::RepeatedOrthogonal(HadamardMode::Signed) => "repeated_orthogonal_signed",
            PatternFamily::RepeatedOrthogonal(HadamardMode::BinaryLifted) => {
                "repeated_orthogonal_binary_lifted"
            }
        }
    }

    /// Families whose Gram matrix `P Pᵀ` vanishes between residue classes.
    pub fn is_block_orthogonal(&self) -> bool {
        matches!(
            self,
            PatternFamily::ShiftingDots | PatternFamily::RepeatedOrthogonal(HadamardMode::Signed)
        )
    }
}

impl std::fmt::Display for PatternFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternSet {
    pub p_l: Matrix,
    pub p_r: Matrix,
    pub family: PatternFamily,
    /// Pattern period k; 0 for uniform and random sets.
    pub block: usize,
}

impl PatternSet {
    pub fn uniform(n: usize) -> Result<Self> {
        check_n(n)?;
        let ones = Matrix::from_element(n, 1, 1.0);
        Ok(Self { p_l: ones.clone(), p_r: ones, family: PatternFamily::Uniform, block: 0 })
    }

    /// I.i.d. Bernoulli(1/2) entries, redrawn until every scene row and
    /// column is lit by at least one pattern.
    pub fn random(n: usize, k: usize, seed: u64) -> Result<Self> {
        check_n(n)?;
        if k == 0 {
            return Err(Error::Argument("random pattern count k must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |rng: &mut ChaCha8Rng| -> Option<Matrix> {
            for _ in 0..RANDOM_RETRIES {
                let m = Matrix::from_fn(n, k, |_, _| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
                if covers(&m) {
                    return Some(m);
                }
            }
            None
        };
        let p_l = draw(&mut rng);
        let p_r = draw(&mut rng);
        match (p_l, p_r) {
            (Some(p_l), Some(p_r)) => {
                Ok(Self { p_l, p_r, family: PatternFamily::Random, block: 0 })
            }
            _ => Err(Error::Generation(format!(
                "no covering random pattern set (n={n}, k={k}) within {RANDOM_RETRIES} draws"
            ))),
        }
    }

    /// Dot grid with period k: column j is 1 at every row `≡ j (mod k)`.
    pub fn shifting_dots(n: usize, k: usize) -> Result<Self> {
        check_period(n, k)?;
        let p = Matrix::from_fn(n, k, |r, c| if r % k == c { 1.0 } else { 0.0 });
        Ok(Self { p_l: p.clone(), p_r: p, family: PatternFamily::ShiftingDots, block: k })
    }

    /// Sylvester Hadamard matrix of order k stacked down the scene rows.
    pub fn repeated_orthogonal(n: usize, k: usize, mode: HadamardMode) -> Result<Self> {
        check_period(n, k)?;
        let h = hadamard(k)?;
        let p = Matrix::from_fn(n, k, |r, c| {
            let v = h[(r % k, c)];
            match mode {
                HadamardMode::Signed => v,
                HadamardMode::BinaryLifted => 0.5 * (v + 1.0),
            }
        });
        Ok(Self {
            p_l: p.clone(),
            p_r: p,
            family: PatternFamily::RepeatedOrthogonal(mode),
            block: k,
        })
    }

    pub fn scene_pixels(&self) -> usize {
        self.p_l.nrows()
    }

    pub fn k_left(&self) -> usize {
        self.p_l.ncols()
    }

    pub fn k_right(&self) -> usize {
        self.p_r.ncols()
    }

    pub fn pattern_count(&self) -> usize {
        self.k_left() * self.k_right()
    }

    /// All valid `(i, j)` in acquisition order (i major).
    pub fn indices(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let kr = self.k_right();
        (0..self.k_left()).flat_map(move |i| (0..kr).map(move |j| (i, j)))
    }

    pub fn check_index(&self, i: usize, j: usize) -> Result<()> {
        if i >= self.k_left() || j >= self.k_right() {
            return Err(Error::Argument(format!(
                "pattern index ({i}, {j}) out of range {}x{}",
                self.k_left(),
                self.k_right()
            )));
        }
        Ok(())
    }

    /// The n×n pattern `P_{i,j} = p_l[:, i] p_r[:, j]ᵀ`.
    pub fn pattern(&self, i: usize, j: usize) -> Result<Matrix> {
        self.check_index(i, j)?;
        Ok(self.p_l.column(i) * self.p_r.column(j).transpose())
    }

    /// `(P⁺, P⁻)` with `P = P⁺ − P⁻`, both non-negative; `P⁻ = 0` for
    /// realizable families. Signed patterns are acquired as the difference
    /// of two complementary exposures.
    pub fn split_pattern(&self, i: usize, j: usize) -> Result<(Matrix, Matrix)> {
        let p = self.pattern(i, j)?;
        Ok((p.map(|v| v.max(0.0)), p.map(|v| (-v).max(0.0))))
    }

    /// True when any pattern entry is negative.
    pub fn is_signed(&self) -> bool {
        self.p_l.iter().chain(self.p_r.iter()).any(|&v| v < 0.0)
    }

    pub fn gram_left(&self) -> Matrix {
        &self.p_l * self.p_l.transpose()
    }

    pub fn gram_right(&self) -> Matrix {
        &self.p_r * self.p_r.transpose()
    }

    /// Whether every scene row and column is lit by some pattern.
    pub fn is_covering(&self) -> bool {
        covers(&self.p_l) && covers(&self.p_r)
    }
}

// a pixel counts as lit when any pattern reaches it with either polarity
fn covers(p: &Matrix) -> bool {
    p.row_iter().all(|row| row.iter().map(|v| v.abs()).sum::<f64>() > 0.0)
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Argument("scene size n must be at least 1".into()));
    }
    Ok(())
}

fn check_period(n: usize, k: usize) -> Result<()> {
    check_n(n)?;
    if k == 0 || k > n {
        return Err(Error::Argument(format!("pattern period k={k} must lie in 1..={n}")));
    }
    Ok(())
}

/// Sylvester Hadamard matrix; orders that are not powers of two are rejected.
pub fn hadamard(k: usize) -> Result<Matrix> {
    if k == 0 || !k.is_power_of_two() {
        return Err(Error::Argument(format!(
            "no Hadamard matrix of order {k} available (Sylvester construction needs a power of two)"
        )));
    }
    let mut h = Matrix::from_element(1, 1, 1.0);
    while h.nrows() < k {
        let s = h.nrows();
        let mut next = Matrix::zeros(2 * s, 2 * s);
        for r in 0..s {
            for c in 0..s {
                let v = h[(r, c)];
                next[(r, c)] = v;
                next[(r, c + s)] = v;
                next[(r + s, c)] = v;
                next[(r + s, c + s)] = -v;
            }
        }
        h = next;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_is_all_ones() {
        let p = PatternSet::uniform(3).unwrap();
        assert_eq!(p.p_l, Matrix::from_element(3, 1, 1.0));
        assert_eq!(p.pattern(0, 0).unwrap(), Matrix::from_element(3, 3, 1.0));
        assert_eq!(p.gram_left(), Matrix::from_element(3, 3, 1.0));
    }

    #[test]
    fn random_is_seeded() {
        let a = PatternSet::random(32, 4, 7).unwrap();
        let b = PatternSet::random(32, 4, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, PatternSet::random(32, 4, 8).unwrap());
        assert!(a.is_covering());
    }

    #[test]
    fn random_single_pixel_is_forced_on() {
        let p = PatternSet::random(1, 1, 0).unwrap();
        assert_eq!(p.p_l[(0, 0)], 1.0);
        assert_eq!(p.p_r[(0, 0)], 1.0);
    }

    #[test]
    fn random_density() {
        let p = PatternSet::random(128, 8, 2024).unwrap();
        for col in p.p_l.column_iter().chain(p.p_r.column_iter()) {
            let density = col.sum() / 128.0;
            assert!((density - 0.5).abs() <= 0.15, "density {density}");
        }
    }

    #[test]
    fn shifting_dots_small() {
        let p = PatternSet::shifting_dots(4, 2).unwrap();
        assert_eq!(p.p_l.column(0).as_slice(), &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(p.p_l.column(1).as_slice(), &[0.0, 1.0, 0.0, 1.0]);
        let g = p.gram_left();
        let expected = Matrix::from_fn(4, 4, |r, c| if r % 2 == c % 2 { 1.0 } else { 0.0 });
        assert_eq!(g, expected);
        let pat = p.pattern(0, 1).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let lit = r % 2 == 0 && c % 2 == 1;
                assert_eq!(pat[(r, c)], if lit { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn shifting_dots_degenerate_periods() {
        let one = PatternSet::shifting_dots(5, 1).unwrap();
        assert_eq!(one.p_l, PatternSet::uniform(5).unwrap().p_l);
        let full = PatternSet::shifting_dots(5, 5).unwrap();
        assert_eq!(full.p_l, Matrix::identity(5, 5));
        assert_eq!(full.gram_left(), Matrix::identity(5, 5));
    }

    #[test]
    fn shifting_dots_sum_to_uniform() {
        let p = PatternSet::shifting_dots(12, 3).unwrap();
        let mut total = Matrix::zeros(12, 12);
        for (i, j) in p.indices() {
            total += p.pattern(i, j).unwrap();
        }
        assert_eq!(total, Matrix::from_element(12, 12, 1.0));
    }

    #[test]
    fn truncated_period_stays_orthogonal() {
        let p = PatternSet::shifting_dots(10, 3).unwrap();
        let g = p.gram_left();
        for r in 0..10 {
            for c in 0..10 {
                assert_eq!(g[(r, c)], if r % 3 == c % 3 { 1.0 } else { 0.0 });
            }
        }
        assert!(p.is_covering());
    }

    #[test]
    fn invalid_periods() {
        assert!(matches!(PatternSet::shifting_dots(4, 0), Err(Error::Argument(_))));
        assert!(matches!(PatternSet::shifting_dots(4, 5), Err(Error::Argument(_))));
        assert!(matches!(
            PatternSet::repeated_orthogonal(12, 3, HadamardMode::Signed),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            PatternSet::repeated_orthogonal(24, 12, HadamardMode::Signed),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn hadamard_two() {
        let h = hadamard(2).unwrap();
        assert_eq!(h, Matrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -1.0]));
        assert_eq!(&h * h.transpose(), Matrix::identity(2, 2) * 2.0);
        for k in [1, 4, 8, 16] {
            let h = hadamard(k).unwrap();
            assert_eq!(&h * h.transpose(), Matrix::identity(k, k) * k as f64);
        }
    }

    #[test]
    fn repeated_orthogonal_gram_is_twice_dots() {
        let h = PatternSet::repeated_orthogonal(4, 2, HadamardMode::Signed).unwrap();
        let d = PatternSet::shifting_dots(4, 2).unwrap();
        assert_eq!(h.gram_left(), d.gram_left() * 2.0);
        let one = PatternSet::repeated_orthogonal(4, 1, HadamardMode::Signed).unwrap();
        assert_eq!(one.p_l, PatternSet::uniform(4).unwrap().p_l);
    }

    #[test]
    fn binary_lifted_is_nonnegative() {
        let p = PatternSet::repeated_orthogonal(16, 4, HadamardMode::BinaryLifted).unwrap();
        assert!(p.p_l.iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(p.is_covering());
        assert!(!p.family.is_block_orthogonal());
    }

    #[test]
    fn pattern_index_out_of_range() {
        let p = PatternSet::shifting_dots(4, 2).unwrap();
        assert!(p.pattern(2, 0).is_err());
        assert!(p.pattern(0, 2).is_err());
    }
}

//! Streaming normal equations and their solvers.
//!
//! Every frame `Y_{i,j}` contributes `(Φ_Lᵀ Y_{i,j} Φ_R) ⊙ P_{i,j}` to `Q`;
//! together with `A_L = Φ_LᵀΦ_L ⊙ P_L P_Lᵀ` and `A_R = Φ_RᵀΦ_R ⊙ P_R P_Rᵀ`
//! the minimizer of the regularized least-squares problem satisfies
//! `Q = A_L X A_R + λX`. With eigendecompositions `A = V diag(s) Vᵀ` the
//! solution is `X = V_L [(V_Lᵀ Q V_R) ./ (s_L s_Rᵀ + λ)] V_Rᵀ`.

mod block;
mod oracle;

pub use block::{permute_block, residue_permutation, solve_block_diagonal, BlockSystem};
pub use oracle::{brute_force_solve, measurement_operator, BRUTE_FORCE_MAX_N};

use crate::error::{Error, Result};
use crate::forward::Measurement;
use crate::illumination::{PatternFamily, PatternSet};
use crate::linalg::{self, symmetric_eigen};
use crate::optics::SystemMatrices;
use crate::Matrix;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const EIGEN_FLOOR: f64 = 1e-12;
/// Relative stationarity residual regarded as a converged solve.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;
/// Default λ relative to the largest eigenvalue product `s_L,max · s_R,max`.
pub const DEFAULT_RELATIVE_LAMBDA: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    ClosedForm,
    BlockDiagonal,
    BruteForce,
}

/// How the regularization weight is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    Absolute(f64),
    /// Multiple of `s_L,max · s_R,max`.
    Relative(f64),
}

impl Default for Lambda {
    fn default() -> Self {
        Lambda::Relative(DEFAULT_RELATIVE_LAMBDA)
    }
}

/// Recovered scene with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub image: Matrix,
    pub solver: SolverKind,
    pub lambda: f64,
    /// `‖A_L X A_R + λX − Q‖_F / ‖Q‖_F`.
    pub residual: f64,
    pub family: Option<PatternFamily>,
    pub block: usize,
    pub noise_seed: Option<u64>,
}

impl Reconstruction {
    pub fn residual_ok(&self) -> bool {
        self.residual <= RESIDUAL_TOLERANCE
    }
}

/// Constant-memory recovery state: `Q`, `A_L`, `A_R` and scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalAccumulator {
    q: Matrix,
    a_l: Matrix,
    a_r: Matrix,
    lambda: f64,
    frames_seen: usize,
    family: PatternFamily,
    block: usize,
    // Σ‖Y‖² and Σ entries over accumulated frames, for data-driven λ choice
    energy: f64,
    samples: usize,
}

impl NormalAccumulator {
    /// Computes `A_L`, `A_R` once and zeroes `Q`.
    pub fn new(sys: &SystemMatrices, set: &PatternSet, lambda: Lambda) -> Result<Self> {
        let n = sys.scene_pixels();
        if set.scene_pixels() != n {
            return Err(Error::dims("pattern set", (n, set.k_left()), set.p_l.shape()));
        }
        let a_l = linalg::symmetrize(
            &(sys.phi_l.transpose() * &sys.phi_l).component_mul(&set.gram_left()),
        );
        let a_r = linalg::symmetrize(
            &(sys.phi_r.transpose() * &sys.phi_r).component_mul(&set.gram_right()),
        );
        let lambda = match lambda {
            Lambda::Absolute(v) => v,
            Lambda::Relative(rel) => rel * largest_eigenvalue(&a_l) * largest_eigenvalue(&a_r),
        };
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Argument(format!("lambda {lambda} must be finite and >= 0")));
        }
        Ok(Self {
            q: Matrix::zeros(n, n),
            a_l,
            a_r,
            lambda,
            frames_seen: 0,
            family: set.family,
            block: set.block,
            energy: 0.0,
            samples: 0,
        })
    }

    /// Restores a previously serialized state.
    pub fn from_parts(
        q: Matrix,
        a_l: Matrix,
        a_r: Matrix,
        lambda: f64,
        frames_seen: usize,
        family: PatternFamily,
        block: usize,
    ) -> Result<Self> {
        let n = q.nrows();
        for (what, m) in [("q", &q), ("a_l", &a_l), ("a_r", &a_r)] {
            if m.shape() != (n, n) {
                return Err(Error::dims(what, (n, n), m.shape()));
            }
        }
        if !(lambda >= 0.0) {
            return Err(Error::Argument(format!("lambda {lambda} must be >= 0")));
        }
        Ok(Self { q, a_l, a_r, lambda, frames_seen, family, block, energy: 0.0, samples: 0 })
    }

    /// Restores the measurement statistics used by [`gcv_lambda`].
    pub fn with_measurement_stats(mut self, energy: f64, samples: usize) -> Self {
        self.energy = energy;
        self.samples = samples;
        self
    }

    /// `Q += (Φ_Lᵀ Y Φ_R) ⊙ P_{i,j}`; the frame itself is not retained.
    pub fn accumulate(
        &mut self,
        y: &Measurement,
        sys: &SystemMatrices,
        set: &PatternSet,
    ) -> Result<()> {
        let n = self.size();
        let m = sys.sensor_pixels();
        if sys.scene_pixels() != n {
            return Err(Error::dims("system matrix", (m, n), sys.phi_l.shape()));
        }
        if y.frame.shape() != (m, m) {
            return Err(Error::dims("measurement", (m, m), y.frame.shape()));
        }
        let (i, j) = y.pattern_index;
        set.check_index(i, j)?;
        let back = sys.phi_l.transpose() * &y.frame * &sys.phi_r;
        let pl = set.p_l.column(i);
        let pr = set.p_r.column(j);
        for c in 0..n {
            let wc = pr[c];
            if wc == 0.0 {
                continue;
            }
            for r in 0..n {
                self.q[(r, c)] += back[(r, c)] * pl[r] * wc;
            }
        }
        self.frames_seen += 1;
        self.energy += y.frame.norm_squared();
        self.samples += y.frame.len();
        Ok(())
    }

    /// Adds another accumulator's `Q` built from the same system.
    pub fn merge(&mut self, other: &NormalAccumulator) -> Result<()> {
        if other.a_l != self.a_l || other.a_r != self.a_r || other.lambda != self.lambda {
            return Err(Error::Argument("accumulators describe different systems".into()));
        }
        self.q += &other.q;
        self.frames_seen += other.frames_seen;
        self.energy += other.energy;
        self.samples += other.samples;
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.q.nrows()
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn a_l(&self) -> &Matrix {
        &self.a_l
    }

    pub fn a_r(&self) -> &Matrix {
        &self.a_r
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn set_lambda(&mut self, lambda: f64) -> Result<()> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Argument(format!("lambda {lambda} must be finite and >= 0")));
        }
        self.lambda = lambda;
        Ok(())
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    pub fn family(&self) -> PatternFamily {
        self.family
    }

    pub fn block(&self) -> usize {
        self.block
    }

    /// Σ‖Y‖²_F over accumulated frames.
    pub fn energy(&self) -> f64 {
        self.energy
    }

    /// Total number of measured values accumulated.
    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Number of `f64` values held in matrix buffers (always `3n²`).
    pub fn state_len(&self) -> usize {
        self.q.len() + self.a_l.len() + self.a_r.len()
    }

    /// `‖A_L X A_R + λX − Q‖_F / ‖Q‖_F`.
    pub fn residual(&self, x: &Matrix) -> f64 {
        stationarity_residual(&self.a_l, &self.a_r, self.lambda, &self.q, x)
    }
}

fn stationarity_residual(a_l: &Matrix, a_r: &Matrix, lambda: f64, q: &Matrix, x: &Matrix) -> f64 {
    let lhs = a_l * x * a_r + x * lambda;
    let diff = (lhs - q).norm();
    let qn = q.norm();
    if qn == 0.0 {
        diff
    } else {
        diff / qn
    }
}

// Power iteration from the all-ones vector.
fn largest_eigenvalue(a: &Matrix) -> f64 {
    let n = a.nrows();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut estimate = 0.0;
    for _ in 0..1000 {
        let w = a * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - estimate).abs() <= 1e-12 * next.abs() {
            return next;
        }
        estimate = next;
    }
    estimate
}

/// Eigendecompositions of `A_L` and `A_R` (descending eigenvalues).
#[derive(Debug, Clone)]
pub struct EigenFactors {
    pub v_l: Matrix,
    pub v_r: Matrix,
    pub s_l: DVector<f64>,
    pub s_r: DVector<f64>,
}

impl EigenFactors {
    pub fn new(a_l: &Matrix, a_r: &Matrix) -> Result<Self> {
        let (s_l, v_l) = floored_eigen(a_l)?;
        let (s_r, v_r) = floored_eigen(a_r)?;
        Ok(Self { v_l, v_r, s_l, s_r })
    }

    pub fn from_accumulator(acc: &NormalAccumulator) -> Result<Self> {
        Self::new(&acc.a_l, &acc.a_r)
    }

    /// `V_L [(V_Lᵀ Q V_R) ./ (s_L s_Rᵀ + λ)] V_Rᵀ`; at λ = 0 a zero product is
    /// an error naming the first offending pair.
    pub fn solve(&self, q: &Matrix, lambda: f64) -> Result<Matrix> {
        let mut t = self.v_l.transpose() * q * &self.v_r;
        for c in 0..t.ncols() {
            for r in 0..t.nrows() {
                let denom = self.s_l[r] * self.s_r[c] + lambda;
                if denom <= 0.0 {
                    return Err(Error::Singular(format!(
                        "eigenvalue product s_L[{r}]·s_R[{c}] = {:e} with lambda = {lambda:e}",
                        self.s_l[r] * self.s_r[c]
                    )));
                }
                t[(r, c)] /= denom;
            }
        }
        Ok(&self.v_l * t * self.v_r.transpose())
    }
}

/// Decades of `λ / (s_L,max · s_R,max)` scanned by [`gcv_lambda`].
pub const GCV_RANGE: (f64, f64) = (-10.0, -1.0);
/// Grid points per decade for [`gcv_lambda`].
pub const GCV_STEPS_PER_DECADE: usize = 10;

/// λ minimizing generalized cross-validation over a log grid.
///
/// With `q̃ = V_Lᵀ Q V_R` and `s = s_L s_Rᵀ`, the data misfit at λ is
/// `E − Σ q̃²(s + 2λ)/(s + λ)²` (E the accumulated measurement energy) and the
/// influence trace is `Σ s/(s + λ)`; GCV is `N·misfit / (N − trace)²`.
pub fn gcv_lambda(acc: &NormalAccumulator, factors: &EigenFactors) -> Result<f64> {
    let n_obs = acc.samples as f64;
    if acc.samples == 0 {
        return Err(Error::Argument("gcv needs accumulated measurements".into()));
    }
    let qt = factors.v_l.transpose() * &acc.q * &factors.v_r;
    let s_max = factors.s_l[0] * factors.s_r[0];
    if !(s_max > 0.0) {
        return Err(Error::Singular("gcv on an all-zero system".into()));
    }
    let steps = ((GCV_RANGE.1 - GCV_RANGE.0) * GCV_STEPS_PER_DECADE as f64).round() as usize;
    let mut best = (f64::INFINITY, f64::NAN);
    for e in 0..=steps {
        let lambda = s_max * 10f64.powf(GCV_RANGE.0 + e as f64 / GCV_STEPS_PER_DECADE as f64);
        let mut fit = 0.0;
        let mut trace = 0.0;
        for c in 0..qt.ncols() {
            let sr = factors.s_r[c];
            for r in 0..qt.nrows() {
                let s = factors.s_l[r] * sr;
                let d = s + lambda;
                fit += qt[(r, c)] * qt[(r, c)] * (s + 2.0 * lambda) / (d * d);
                trace += s / d;
            }
        }
        let misfit = (acc.energy - fit).max(0.0);
        let dof = n_obs - trace;
        if dof <= 0.0 {
            continue;
        }
        let score = n_obs * misfit / (dof * dof);
        if score < best.0 {
            best = (score, lambda);
        }
    }
    if best.1.is_nan() {
        return Err(Error::Argument("gcv found no admissible lambda".into()));
    }
    Ok(best.1)
}

fn floored_eigen(a: &Matrix) -> Result<(DVector<f64>, Matrix)> {
    let e = symmetric_eigen(a)?;
    let s_max = e.values.iter().copied().fold(0.0f64, f64::max);
    let floor = EIGEN_FLOOR * s_max;
    let s = e.values.map(|v| if v < floor { 0.0 } else { v });
    Ok((s, e.vectors))
}

/// Closed-form solve of the accumulated normal equations.
pub fn solve_closed_form(acc: &NormalAccumulator) -> Result<Reconstruction> {
    let factors = EigenFactors::from_accumulator(acc)?;
    solve_with_factors(acc, &factors)
}

/// Closed-form solve reusing precomputed factors of `acc`.
pub fn solve_with_factors(acc: &NormalAccumulator, factors: &EigenFactors) -> Result<Reconstruction> {
    let image = factors.solve(&acc.q, acc.lambda)?;
    let residual = acc.residual(&image);
    if residual > RESIDUAL_TOLERANCE {
        log::debug!("closed-form residual {residual:e} above {RESIDUAL_TOLERANCE:e}");
    }
    Ok(Reconstruction {
        image,
        solver: SolverKind::ClosedForm,
        lambda: acc.lambda,
        residual,
        family: Some(acc.family),
        block: acc.block,
        noise_seed: None,
    })
}

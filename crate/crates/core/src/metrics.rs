//! Image-quality and conditioning metrics.

use crate::error::{Error, Result};
use crate::illumination::PatternFamily;
use crate::linalg::symmetric_eigen;
use crate::solver::NormalAccumulator;
use crate::Matrix;
use serde::{Deserialize, Serialize};

/// PSNR in dB against peak 1.0; `+∞` when the images are identical.
pub fn psnr(x_hat: &Matrix, x_ref: &Matrix) -> Result<f64> {
    if x_hat.shape() != x_ref.shape() {
        return Err(Error::dims("psnr reference", x_hat.shape(), x_ref.shape()));
    }
    if x_ref.is_empty() {
        return Err(Error::Argument("psnr of empty images".into()));
    }
    let mse = (x_hat - x_ref).norm_squared() / x_ref.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Singular values of the stacked measurement operator, normalized to max 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub singular_values: Vec<f64>,
    pub pattern_family: PatternFamily,
    pub k: usize,
}

impl SpectrumReport {
    /// Value at 0-based `rank`.
    pub fn at(&self, rank: usize) -> f64 {
        self.singular_values[rank]
    }

    pub fn count_above(&self, threshold: f64) -> usize {
        self.singular_values.iter().filter(|&&v| v > threshold).count()
    }
}

/// Sorted `√(s_L,i · s_R,j)` over all pairs.
///
/// The stacked operator `M` of all frames satisfies `MᵀM = A_R ⊗ A_L`, so
/// these are exactly its singular values.
pub fn system_spectrum(acc: &NormalAccumulator) -> Result<SpectrumReport> {
    let s_l = symmetric_eigen(acc.a_l())?.values;
    let s_r = symmetric_eigen(acc.a_r())?.values;
    let mut values: Vec<f64> = s_r
        .iter()
        .flat_map(|&b| s_l.iter().map(move |&a| (a * b).max(0.0).sqrt()))
        .collect();
    values.sort_by(|a, b| b.total_cmp(a));
    let max = values.first().copied().unwrap_or(0.0);
    if max > 0.0 {
        for v in &mut values {
            *v /= max;
        }
    }
    Ok(SpectrumReport { singular_values: values, pattern_family: acc.family(), k: acc.block() })
}

/// Rectangular image region (rows and columns are half-open ranges).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub label: String,
    pub row: usize,
    pub col: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Contrast percentage per region.
///
/// Each region has `dc_background` subtracted (clamped at 0), is averaged
/// along its columns into a profile over rows, and gives
/// `(max − min) / (max + min) · 100`. `None` marks `max + min = 0`.
pub fn mtf_contrast(image: &Matrix, groups: &[Region], dc_background: f64) -> Result<Vec<Option<f64>>> {
    if !(dc_background >= 0.0) {
        return Err(Error::Argument(format!("dc_background {dc_background} must be >= 0")));
    }
    groups
        .iter()
        .map(|g| {
            if g.rows == 0
                || g.cols == 0
                || g.row + g.rows > image.nrows()
                || g.col + g.cols > image.ncols()
            {
                return Err(Error::Argument(format!(
                    "region '{}' ({}+{} x {}+{}) outside {}x{} image",
                    g.label,
                    g.row,
                    g.rows,
                    g.col,
                    g.cols,
                    image.nrows(),
                    image.ncols()
                )));
            }
            let profile: Vec<f64> = (g.row..g.row + g.rows)
                .map(|r| {
                    let sum: f64 = (g.col..g.col + g.cols)
                        .map(|c| (image[(r, c)] - dc_background).max(0.0))
                        .sum();
                    sum / g.cols as f64
                })
                .collect();
            let max = profile.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = profile.iter().copied().fold(f64::INFINITY, f64::min);
            Ok(if max + min == 0.0 { None } else { Some((max - min) / (max + min) * 100.0) })
        })
        .collect()
}

//! Mask synthesis and geometric (ray-optics) system matrices.
//!
//! Sensor, mask and scene grids are centered on the optical axis. A ray from
//! scene coordinate `u'` (distance `z`) to sensor coordinate `u` crosses the
//! mask plane (distance `d`) at `u_m = (u·(z−d) + u'·d) / z`. Outside the
//! mask the transmittance is 0.

use crate::error::{Error, Result};
use crate::Matrix;
use serde::{Deserialize, Serialize};

/// Primitive feedback polynomials, one per LFSR degree.
///
/// Entry `r` is the tap mask for `x^r + ... + 1`: bit `i` is the
/// coefficient of `x^i` (bit 0 is always set).
///
/// | degree | polynomial |
/// |---|---|
/// | 2 | x²+x+1 |
/// | 3 | x³+x²+1 |
/// | 4 | x⁴+x³+1 |
/// | 5 | x⁵+x³+1 |
/// | 6 | x⁶+x⁵+1 |
/// | 7 | x⁷+x⁶+1 |
/// | 8 | x⁸+x⁶+x⁵+x⁴+1 |
/// | 9 | x⁹+x⁵+1 |
/// | 10 | x¹⁰+x⁷+1 |
/// | 11 | x¹¹+x⁹+1 |
/// | 12 | x¹²+x¹¹+x¹⁰+x⁴+1 |
/// | 13 | x¹³+x¹²+x¹¹+x⁸+1 |
/// | 14 | x¹⁴+x¹³+x¹²+x²+1 |
/// | 15 | x¹⁵+x¹⁴+1 |
/// | 16 | x¹⁶+x¹⁵+x¹³+x⁴+1 |
pub const PRIMITIVE_TAPS: [(u32, u32); 15] = [
    (2, 0b11),
    (3, (1 << 2) | 1),
    (4, (1 << 3) | 1),
    (5, (1 << 3) | 1),
    (6, (1 << 5) | 1),
    (7, (1 << 6) | 1),
    (8, (1 << 6) | (1 << 5) | (1 << 4) | 1),
    (9, (1 << 5) | 1),
    (10, (1 << 7) | 1),
    (11, (1 << 9) | 1),
    (12, (1 << 11) | (1 << 10) | (1 << 4) | 1),
    (13, (1 << 12) | (1 << 11) | (1 << 8) | 1),
    (14, (1 << 13) | (1 << 12) | (1 << 2) | 1),
    (15, (1 << 14) | 1),
    (16, (1 << 15) | (1 << 13) | (1 << 4) | 1),
];

/// Default mask feature size in meters.
pub const DEFAULT_FEATURE_SIZE: f64 = 60e-6;
/// Default box-filter sub-samples per sensor pixel.
pub const DEFAULT_SUPERSAMPLE: usize = 4;

/// 1-D binary mask transmittance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    sequence: Vec<u8>,
    feature_size: f64,
}

impl MaskSpec {
    pub fn new(sequence: Vec<u8>, feature_size: f64) -> Result<Self> {
        if sequence.is_empty() {
            return Err(Error::Config("mask sequence is empty".into()));
        }
        if let Some(bad) = sequence.iter().find(|&&b| b > 1) {
            return Err(Error::Config(format!("mask entry {bad} is not 0 or 1")));
        }
        if !(feature_size.is_finite() && feature_size > 0.0) {
            return Err(Error::Config(format!("feature size {feature_size} must be > 0")));
        }
        Ok(Self { sequence, feature_size })
    }

    pub fn sequence(&self) -> &[u8] {
        &self.sequence
    }

    pub fn feature_size(&self) -> f64 {
        self.feature_size
    }

    pub fn with_feature_size(mut self, feature_size: f64) -> Result<Self> {
        if !(feature_size.is_finite() && feature_size > 0.0) {
            return Err(Error::Config(format!("feature size {feature_size} must be > 0")));
        }
        self.feature_size = feature_size;
        Ok(self)
    }

    /// Physical width of the mask.
    pub fn extent(&self) -> f64 {
        self.sequence.len() as f64 * self.feature_size
    }

    /// Transmittance at mask-plane coordinate `x` (0 outside the mask).
    pub fn transmittance(&self, x: f64) -> f64 {
        let pos = (x + 0.5 * self.extent()) / self.feature_size;
        if pos < 0.0 {
            return 0.0;
        }
        let idx = pos.floor() as usize;
        self.sequence.get(idx).map_or(0.0, |&b| b as f64)
    }
}

/// Maximum-length sequence of length `2^degree − 1` from a Fibonacci LFSR
/// with the tap table [`PRIMITIVE_TAPS`], seeded with state `[1, 0, ..., 0]`.
pub fn generate_mls(degree: u32) -> Result<MaskSpec> {
    let taps = PRIMITIVE_TAPS
        .iter()
        .find(|(d, _)| *d == degree)
        .map(|&(_, t)| t)
        .ok_or_else(|| Error::Config(format!("unsupported LFSR degree {degree} (supported: 2..=16)")))?;
    let len = (1usize << degree) - 1;
    // bits 0..degree hold a_t..a_{t+degree-1}
    let mut state: u32 = 1;
    let mut seq = Vec::with_capacity(len);
    for _ in 0..len {
        seq.push((state & 1) as u8);
        let feedback = (state & taps).count_ones() & 1;
        state = (state >> 1) | (feedback << (degree - 1));
    }
    MaskSpec::new(seq, DEFAULT_FEATURE_SIZE)
}

/// Simulation geometry; lengths in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub sensor_pixels: usize,
    pub sensor_pitch: f64,
    pub mask_distance: f64,
    pub scene_distance: f64,
    pub scene_pixels: usize,
    pub scene_width: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            sensor_pixels: 512,
            sensor_pitch: 11.72e-6,
            mask_distance: 2e-3,
            scene_distance: 0.40,
            scene_pixels: 128,
            scene_width: 0.12,
        }
    }
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        let lengths = [
            ("sensor_pitch", self.sensor_pitch),
            ("mask_distance", self.mask_distance),
            ("scene_distance", self.scene_distance),
            ("scene_width", self.scene_width),
        ];
        for (name, v) in lengths {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        if self.scene_distance <= self.mask_distance {
            return Err(Error::Config(format!(
                "scene_distance {} must exceed mask_distance {}",
                self.scene_distance, self.mask_distance
            )));
        }
        if self.sensor_pixels == 0 || self.scene_pixels == 0 {
            return Err(Error::Config("pixel counts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn scene_pitch(&self) -> f64 {
        self.scene_width / self.scene_pixels as f64
    }

    /// Shadow displacement on the sensor, in sensor pixels, between adjacent
    /// scene pixels.
    pub fn shadow_shift(&self) -> f64 {
        self.scene_pitch() * self.mask_distance
            / (self.scene_distance - self.mask_distance)
            / self.sensor_pitch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    L,
    R,
}

/// The separable sensor responses `Φ_L`, `Φ_R` (m×n each).
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrices {
    pub phi_l: Matrix,
    pub phi_r: Matrix,
}

impl SystemMatrices {
    pub fn new(phi_l: Matrix, phi_r: Matrix) -> Result<Self> {
        if phi_l.shape() != phi_r.shape() {
            return Err(Error::dims("phi_r", phi_l.shape(), phi_r.shape()));
        }
        for (name, phi) in [("phi_l", &phi_l), ("phi_r", &phi_r)] {
            if phi.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Config(format!("{name} has negative or non-finite entries")));
            }
            if let Some(col) = phi.column_iter().position(|c| c.iter().all(|&v| v == 0.0)) {
                return Err(Error::Config(format!(
                    "{name} column {col} is all zero: scene pixel {col} never reaches the sensor"
                )));
            }
        }
        Ok(Self { phi_l, phi_r })
    }

    /// Builds both axes with the same geometric model.
    pub fn geometric(mask: &MaskSpec, geom: &Geometry, supersample: usize) -> Result<Self> {
        let phi_l = build_system_matrix(mask, geom, Axis::L, supersample)?;
        let phi_r = build_system_matrix(mask, geom, Axis::R, supersample)?;
        Self::new(phi_l, phi_r)
    }

    /// `Φ_L = Φ_R = I_n`, a toy system for pipeline checks.
    pub fn identity(n: usize) -> Self {
        Self { phi_l: Matrix::identity(n, n), phi_r: Matrix::identity(n, n) }
    }

    pub fn sensor_pixels(&self) -> usize {
        self.phi_l.nrows()
    }

    pub fn scene_pixels(&self) -> usize {
        self.phi_l.ncols()
    }

    pub fn binned(&self, factor: usize) -> Result<Self> {
        Ok(Self {
            phi_l: bin_system_matrix(&self.phi_l, factor)?,
            phi_r: bin_system_matrix(&self.phi_r, factor)?,
        })
    }
}

/// Geometric shadow-projection system matrix for one axis.
///
/// Entry `(s, i)` is the mean mask transmittance over `supersample`
/// equispaced points of sensor pixel `s`, back-projected towards scene pixel
/// `i`. The matrix is scaled so its largest entry is 1. The mask, sensor and
/// scene are assumed square and aligned, so both axes yield the same matrix.
pub fn build_system_matrix(
    mask: &MaskSpec,
    geom: &Geometry,
    _axis: Axis,
    supersample: usize,
) -> Result<Matrix> {
    geom.validate()?;
    if supersample == 0 {
        return Err(Error::Config("supersample must be at least 1".into()));
    }
    let m = geom.sensor_pixels;
    let n = geom.scene_pixels;
    let z = geom.scene_distance;
    let d = geom.mask_distance;
    let scene_pitch = geom.scene_pitch();
    let sub: Vec<f64> = (0..supersample)
        .map(|t| ((t as f64 + 0.5) / supersample as f64 - 0.5) * geom.sensor_pitch)
        .collect();

    let mut phi = Matrix::zeros(m, n);
    for i in 0..n {
        let u_scene = (i as f64 - 0.5 * (n as f64 - 1.0)) * scene_pitch;
        for s in 0..m {
            let u_center = (s as f64 - 0.5 * (m as f64 - 1.0)) * geom.sensor_pitch;
            let total: f64 = sub
                .iter()
                .map(|off| {
                    let u = u_center + off;
                    mask.transmittance((u * (z - d) + u_scene * d) / z)
                })
                .sum();
            phi[(s, i)] = total / supersample as f64;
        }
    }
    let peak = phi.max();
    if peak <= 0.0 {
        return Err(Error::Config("mask shadow misses the sensor entirely".into()));
    }
    phi /= peak;
    Ok(phi)
}

/// Averages each run of `factor` consecutive rows.
pub fn bin_system_matrix(phi: &Matrix, factor: usize) -> Result<Matrix> {
    let m = phi.nrows();
    if factor == 0 || !m.is_multiple_of(factor) {
        return Err(Error::Argument(format!("binning factor {factor} does not divide {m} rows")));
    }
    let rows = m / factor;
    let mut out = Matrix::zeros(rows, phi.ncols());
    for r in 0..rows {
        for c in 0..phi.ncols() {
            let sum: f64 = (0..factor).map(|t| phi[(r * factor + t, c)]).sum();
            out[(r, c)] = sum / factor as f64;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn period(seq: &[u8]) -> usize {
        let n = seq.len();
        (1..=n).find(|&p| (0..n).all(|i| seq[i] == seq[(i + p) % n])).unwrap()
    }

    #[test]
    fn degree_two_cycle() {
        let mls = generate_mls(2).unwrap();
        let seq = mls.sequence().to_vec();
        let rotations: Vec<Vec<u8>> = (0..3).map(|r| [&seq[r..], &seq[..r]].concat()).collect();
        assert!(rotations.contains(&vec![1, 0, 1]));
    }

    #[test]
    fn degree_nine_balance() {
        let mls = generate_mls(9).unwrap();
        assert_eq!(mls.sequence().len(), 511);
        assert_eq!(mls.sequence().iter().filter(|&&b| b == 1).count(), 256);
    }

    #[test]
    fn every_table_entry_is_maximal() {
        // a maximal LFSR sequence is balanced and its shortest cyclic period is the full length
        for degree in 2..=16u32 {
            let seq = generate_mls(degree).unwrap().sequence().to_vec();
            let len = (1usize << degree) - 1;
            assert_eq!(seq.len(), len);
            assert_eq!(seq.iter().filter(|&&b| b == 1).count(), 1 << (degree - 1), "degree {degree}");
            if degree <= 12 {
                assert_eq!(period(&seq), len, "degree {degree}");
            }
        }
    }

    #[test]
    fn unsupported_degrees() {
        assert!(matches!(generate_mls(1), Err(Error::Config(_))));
        assert!(matches!(generate_mls(17), Err(Error::Config(_))));
    }

    #[test]
    fn scene_inside_mask_plane_rejected() {
        let geom = Geometry { scene_distance: 1e-3, ..Geometry::default() };
        let mask = generate_mls(9).unwrap();
        assert!(matches!(build_system_matrix(&mask, &geom, Axis::L, 4), Err(Error::Config(_))));
    }

    #[test]
    fn mask_on_sensor_limit() {
        let mask = generate_mls(5).unwrap();
        let geom = Geometry {
            sensor_pixels: 64,
            sensor_pitch: 30e-6,
            mask_distance: 1e-12,
            scene_distance: 0.4,
            scene_pixels: 3,
            scene_width: 0.12,
        };
        let phi = build_system_matrix(&mask, &geom, Axis::L, 1).unwrap();
        for s in 0..64 {
            let u = (s as f64 - 31.5) * 30e-6;
            let expected = mask.transmittance(u);
            for i in 0..3 {
                assert_eq!(phi[(s, i)], expected);
            }
        }
    }

    #[test]
    fn all_ones_mask_gives_all_ones() {
        let mask = MaskSpec::new(vec![1; 2001], 60e-6).unwrap();
        let geom = Geometry { sensor_pixels: 32, scene_pixels: 8, ..Geometry::default() };
        let phi = build_system_matrix(&mask, &geom, Axis::R, 4).unwrap();
        assert!(phi.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn binning_definition() {
        let phi = Matrix::from_row_slice(4, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(bin_system_matrix(&phi, 1).unwrap(), phi);
        let b = bin_system_matrix(&phi, 2).unwrap();
        assert_eq!(b, Matrix::from_row_slice(2, 2, &[2.0, 3.0, 6.0, 7.0]));
        assert!(matches!(bin_system_matrix(&phi, 3), Err(Error::Argument(_))));
    }

    #[test]
    fn system_rejects_dark_column() {
        let mut phi = Matrix::from_element(3, 2, 1.0);
        phi.column_mut(1).fill(0.0);
        assert!(SystemMatrices::new(phi.clone(), phi).is_err());
    }

    #[test]
    fn default_geometry_shift() {
        let geom = Geometry::default();
        assert!((geom.shadow_shift() - 0.4019).abs() < 1e-3);
    }
}

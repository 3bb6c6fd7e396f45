//! Coded-illumination forward model, sensor noise and measurement binning.

use crate::error::{Error, Result};
use crate::illumination::PatternSet;
use crate::optics::SystemMatrices;
use crate::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

/// Poisson rates at or above this use a normal approximation.
pub const POISSON_NORMAL_THRESHOLD: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    #[default]
    Gray,
    Red,
    Green,
    Blue,
}

/// n×n scene intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SceneImage {
    pixels: Matrix,
    pub channel: Channel,
}

impl SceneImage {
    pub fn new(pixels: Matrix) -> Result<Self> {
        Self::with_channel(pixels, Channel::Gray)
    }

    pub fn with_channel(pixels: Matrix, channel: Channel) -> Result<Self> {
        if !pixels.is_square() {
            return Err(Error::dims("scene", (pixels.nrows(), pixels.nrows()), pixels.shape()));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Argument(format!("scene value {v} outside [0, 1]")));
        }
        Ok(Self { pixels, channel })
    }

    pub fn pixels(&self) -> &Matrix {
        &self.pixels
    }

    pub fn size(&self) -> usize {
        self.pixels.nrows()
    }
}

/// One sensor frame for pattern `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub frame: Matrix,
    pub pattern_index: (usize, usize),
    pub noise_seed: Option<u64>,
}

impl Measurement {
    pub fn new(frame: Matrix, pattern_index: (usize, usize)) -> Result<Self> {
        if frame.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("measurement has non-finite entries".into()));
        }
        Ok(Self { frame, pattern_index, noise_seed: None })
    }
}

/// Photon + read noise parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Full-well capacity F in electrons.
    pub full_well: f64,
    /// Gain G.
    pub gain: f64,
    /// Dynamic range R in dB.
    pub dynamic_range: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { full_well: 25_000.0, gain: 1.0, dynamic_range: 60.0, seed: 0 }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("full_well", self.full_well),
            ("gain", self.gain),
            ("dynamic_range", self.dynamic_range),
        ] {
            if !(v > 0.0) || v.is_nan() {
                return Err(Error::Config(format!("noise {name} = {v} must be positive")));
            }
        }
        Ok(())
    }

    /// Read-noise standard deviation in electrons, `F · 10^(−R/20)`.
    pub fn read_sigma(&self) -> f64 {
        self.full_well * 10f64.powf(-self.dynamic_range / 20.0)
    }

    /// Variance of the noisy output for a clean normalized value `y`.
    pub fn output_variance(&self, y: f64) -> f64 {
        let scale = self.gain / self.full_well;
        let sigma = self.read_sigma();
        scale * scale * (y / scale + sigma * sigma)
    }
}

fn check_system(sys: &SystemMatrices, n: usize) -> Result<()> {
    if sys.scene_pixels() != n {
        return Err(Error::dims(
            "system matrix",
            (sys.sensor_pixels(), n),
            (sys.sensor_pixels(), sys.scene_pixels()),
        ));
    }
    Ok(())
}

/// `Y = Φ_L (P_{i,j} ⊙ X) Φ_Rᵀ`.
pub fn simulate(
    sys: &SystemMatrices,
    x: &SceneImage,
    set: &PatternSet,
    i: usize,
    j: usize,
) -> Result<Measurement> {
    let n = x.size();
    check_system(sys, n)?;
    if set.scene_pixels() != n {
        return Err(Error::dims("pattern set", (n, set.k_left()), set.p_l.shape()));
    }
    set.check_index(i, j)?;
    simulate_pattern(sys, x, &set.pattern(i, j)?, (i, j))
}

/// `Φ_L (P ⊙ X) Φ_Rᵀ` for an arbitrary n×n illumination `P`, e.g. one
/// polarity of a signed pattern.
pub fn simulate_pattern(
    sys: &SystemMatrices,
    x: &SceneImage,
    pattern: &Matrix,
    pattern_index: (usize, usize),
) -> Result<Measurement> {
    let n = x.size();
    check_system(sys, n)?;
    if pattern.shape() != (n, n) {
        return Err(Error::dims("illumination pattern", (n, n), pattern.shape()));
    }
    let lit = pattern.component_mul(x.pixels());
    let frame = &sys.phi_l * lit * sys.phi_r.transpose();
    Ok(Measurement { frame, pattern_index, noise_seed: None })
}

/// Peak sensor value of a fully white scene under uniform light; dividing a
/// frame by it maps the sensor's usable range to [0, 1].
pub fn full_scale(sys: &SystemMatrices) -> f64 {
    let max_row = |phi: &Matrix| phi.row_iter().map(|r| r.sum()).fold(0.0, f64::max);
    max_row(&sys.phi_l) * max_row(&sys.phi_r)
}

/// Applies `Y_n = (G/F)·(Poisson((F/G)·Y) + N(0, σ²))` with `σ = F·10^(−R/20)`.
///
/// Negative inputs are clamped to 0 before sampling; the number of clamped
/// entries is returned alongside the noisy frame.
pub fn add_noise(y: &Measurement, spec: &NoiseSpec) -> Result<(Measurement, usize)> {
    spec.validate()?;
    if y.frame.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("cannot add noise to a non-finite frame".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let to_electrons = spec.full_well / spec.gain;
    let sigma = spec.read_sigma();
    let read = Normal::new(0.0, sigma).map_err(|e| Error::Argument(e.to_string()))?;
    let mut clamped = 0usize;
    // column-major iteration keeps the draw order fixed
    let frame = y.frame.map(|v| {
        let v = if v < 0.0 {
            clamped += 1;
            0.0
        } else {
            v
        };
        let rate = to_electrons * v;
        let photons = sample_poisson(rate, &mut rng);
        (photons + read.sample(&mut rng)) / to_electrons
    });
    if clamped > 0 {
        log::warn!("clamped {clamped} negative frame entries before noise");
    }
    Ok((
        Measurement { frame, pattern_index: y.pattern_index, noise_seed: Some(spec.seed) },
        clamped,
    ))
}

fn sample_poisson(rate: f64, rng: &mut ChaCha8Rng) -> f64 {
    if rate <= 0.0 {
        0.0
    } else if rate >= POISSON_NORMAL_THRESHOLD {
        let z: f64 = rand_distr::StandardNormal.sample(rng);
        rate + rate.sqrt() * z
    } else {
        // valid for 0 < rate < 1e4
        Poisson::new(rate).expect("positive finite rate").sample(rng)
    }
}

/// Non-overlapping `factor × factor` block means.
pub fn bin_measurement(y: &Measurement, factor: usize) -> Result<Measurement> {
    let (rows, cols) = y.frame.shape();
    if factor == 0 || rows % factor != 0 || cols % factor != 0 {
        return Err(Error::Argument(format!(
            "binning factor {factor} does not divide frame {rows}x{cols}"
        )));
    }
    let area = (factor * factor) as f64;
    let frame = Matrix::from_fn(rows / factor, cols / factor, |r, c| {
        let mut sum = 0.0;
        for dc in 0..factor {
            for dr in 0..factor {
                sum += y.frame[(r * factor + dr, c * factor + dc)];
            }
        }
        sum / area
    });
    Ok(Measurement { frame, pattern_index: y.pattern_index, noise_seed: y.noise_seed })
}

/// Elementwise mean of repeated captures of one pattern.
pub fn frame_average(frames: &[Measurement]) -> Result<Measurement> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Argument("frame_average needs at least one frame".into()))?;
    let mut sum = first.frame.clone();
    for f in &frames[1..] {
        if f.pattern_index != first.pattern_index {
            return Err(Error::Argument(format!(
                "cannot average pattern {:?} with {:?}",
                f.pattern_index, first.pattern_index
            )));
        }
        if f.frame.shape() != sum.shape() {
            return Err(Error::dims("averaged frame", sum.shape(), f.frame.shape()));
        }
        sum += &f.frame;
    }
    sum /= frames.len() as f64;
    Ok(Measurement { frame: sum, pattern_index: first.pattern_index, noise_seed: first.noise_seed })
}

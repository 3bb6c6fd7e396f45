//! simulate → noise → bin → accumulate → solve, driven by an [`ExperimentConfig`].

use crate::config::{ExperimentConfig, Exposure, LambdaMode, SystemModel};
use crate::error::{CliError, Result};
use codedcam_core::forward::{
    add_noise, bin_measurement, frame_average, full_scale, simulate_pattern, Measurement, SceneImage,
};
use codedcam_core::illumination::PatternSet;
use codedcam_core::metrics::psnr;
use codedcam_core::optics::{generate_mls, SystemMatrices};
use codedcam_core::solver::{
    brute_force_solve, gcv_lambda, permute_block, solve_block_diagonal, solve_with_factors, EigenFactors,
    NormalAccumulator, Reconstruction, SolverKind,
};
use codedcam_core::Matrix;
use rayon::prelude::*;
use serde::Serialize;

/// Seed of one exposure: `mix(base, frame, repeat, polarity)` via SplitMix64.
///
/// `frame` is the pattern's position in acquisition order, `repeat` indexes
/// averaged captures and `polarity` is 0 for the positive and 1 for the
/// negative part of a signed pattern.
pub fn exposure_seed(base: u64, frame: usize, repeat: usize, polarity: usize) -> u64 {
    let mut h = splitmix(base);
    for v in [frame as u64, repeat as u64, polarity as u64] {
        h = splitmix(h ^ v.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds the configured `Φ_L`, `Φ_R` at full sensor resolution.
pub fn build_system(cfg: &ExperimentConfig) -> Result<SystemMatrices> {
    Ok(match cfg.system.model {
        SystemModel::Identity => SystemMatrices::identity(cfg.geometry.scene_pixels),
        SystemModel::Geometric => {
            let mask = generate_mls(cfg.mask.degree)?.with_feature_size(cfg.mask.feature_size)?;
            SystemMatrices::geometric(&mask, &cfg.geometry.geometry(), cfg.geometry.supersample)?
        }
    })
}

/// Diagnostics of one solve.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub solver: SolverKind,
    pub lambda: f64,
    pub lambda_mode: LambdaMode,
    pub residual: f64,
    pub residual_ok: bool,
    pub frames: usize,
}

/// A configured acquisition: system, binned system and patterns.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub system: SystemMatrices,
    /// System seen by the solver (after binning).
    pub binned: SystemMatrices,
    pub patterns: PatternSet,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let system = build_system(&cfg)?;
        Self::with_system(cfg, system)
    }

    /// Reuses a prebuilt full-resolution system (it must match `cfg`).
    pub fn with_system(cfg: ExperimentConfig, system: SystemMatrices) -> Result<Self> {
        let binned = system.binned(cfg.binning.factor)?;
        let patterns = cfg.illumination.pattern_set(cfg.geometry.scene_pixels)?;
        Ok(Self { cfg, system, binned, patterns })
    }

    pub fn scene_pixels(&self) -> usize {
        self.system.scene_pixels()
    }

    /// Base seed of every exposure: the configured noise seed.
    pub fn noise_base_seed(&self) -> u64 {
        self.cfg.noise.seed
    }

    /// One processed frame for pattern `index` (acquisition position
    /// `frame`): signed patterns are captured as two complementary exposures
    /// and subtracted; each exposure is optionally averaged over repeats;
    /// binning is applied last.
    pub fn frame(&self, x: &SceneImage, frame: usize, index: (usize, usize)) -> Result<Measurement> {
        let (pos, neg) = self.patterns.split_pattern(index.0, index.1)?;
        let mut y = self.exposure(x, &pos, frame, 0, index)?;
        if neg.iter().any(|&v| v > 0.0) {
            let minus = self.exposure(x, &neg, frame, 1, index)?;
            y.frame -= minus.frame;
        }
        Ok(bin_measurement(&y, self.cfg.binning.factor)?)
    }

    fn exposure(
        &self,
        x: &SceneImage,
        pattern: &Matrix,
        frame: usize,
        polarity: usize,
        index: (usize, usize),
    ) -> Result<Measurement> {
        let clean = simulate_pattern(&self.system, x, pattern, index)?;
        let noise = &self.cfg.noise;
        if !noise.enabled {
            return Ok(clean);
        }
        let scale = match noise.exposure {
            Exposure::PerFrame => clean.frame.max(),
            Exposure::FullScale => full_scale(&self.system),
        };
        if !(scale > 0.0) {
            return Ok(clean);
        }
        let normalized = Measurement { frame: &clean.frame / scale, ..clean.clone() };
        let captures = (0..noise.frames_to_average)
            .map(|repeat| {
                let spec = noise.spec(exposure_seed(noise.seed, frame, repeat, polarity));
                let (mut y, _) = add_noise(&normalized, &spec)?;
                y.frame *= scale;
                Ok(y)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut y = frame_average(&captures)?;
        y.noise_seed = Some(exposure_seed(noise.seed, frame, 0, polarity));
        Ok(y)
    }

    pub fn new_accumulator(&self) -> Result<NormalAccumulator> {
        Ok(NormalAccumulator::new(&self.binned, &self.patterns, self.cfg.solver.initial_lambda())?)
    }

    /// Simulates every pattern and feeds `sink` in acquisition order.
    ///
    /// Frames are produced in parallel batches but handed over sequentially,
    /// so results do not depend on the worker count.
    pub fn acquire<F>(&self, x: &SceneImage, mut sink: F) -> Result<()>
    where
        F: FnMut(Measurement) -> Result<()>,
    {
        let indices: Vec<(usize, usize)> = self.patterns.indices().collect();
        let batch = (2 * rayon::current_num_threads()).max(1);
        for (b, chunk) in indices.chunks(batch).enumerate() {
            let frames = chunk
                .par_iter()
                .enumerate()
                .map(|(o, &idx)| self.frame(x, b * batch + o, idx))
                .collect::<Result<Vec<_>>>()?;
            for y in frames {
                sink(y)?;
            }
        }
        Ok(())
    }

    /// Streams all frames of `x` into a fresh accumulator.
    pub fn accumulate(&self, x: &SceneImage) -> Result<NormalAccumulator> {
        let mut acc = self.new_accumulator()?;
        self.acquire(x, |y| Ok(acc.accumulate(&y, &self.binned, &self.patterns)?))?;
        Ok(acc)
    }

    /// Solves the accumulated system with the configured λ policy and solver.
    /// `frames` is only needed by the brute-force oracle.
    pub fn solve(
        &self,
        acc: &mut NormalAccumulator,
        frames: Option<&[Measurement]>,
    ) -> Result<(Reconstruction, SolveReport)> {
        let solver = &self.cfg.solver;
        let factors = EigenFactors::from_accumulator(acc)?;
        if solver.lambda_mode == LambdaMode::Gcv {
            let lambda = gcv_lambda(acc, &factors)?;
            log::info!("gcv lambda {lambda:e}");
            acc.set_lambda(lambda)?;
        }
        let rec = match solver.kind {
            SolverKind::ClosedForm => solve_with_factors(acc, &factors)?,
            SolverKind::BlockDiagonal => {
                let k = acc.block().max(1);
                let bs = permute_block(acc, k)?;
                let mut rec = solve_block_diagonal(&bs, acc.lambda())?;
                rec.residual = acc.residual(&rec.image);
                rec
            }
            SolverKind::BruteForce => {
                let frames = frames.ok_or_else(|| {
                    CliError::Config("solver.kind = brute_force needs individual measurement files".into())
                })?;
                brute_force_solve(&self.binned, &self.patterns, frames, acc.lambda())?
            }
        };
        let report = SolveReport {
            solver: rec.solver,
            lambda: rec.lambda,
            lambda_mode: solver.lambda_mode,
            residual: rec.residual,
            residual_ok: rec.residual_ok(),
            frames: acc.frames_seen(),
        };
        Ok((rec, report))
    }

    /// Reconstruction as exported: clamped to [0, 1] when configured.
    pub fn output_image(&self, rec: &Reconstruction) -> Matrix {
        if self.cfg.metrics.clamp {
            rec.image.map(|v| v.clamp(0.0, 1.0))
        } else {
            rec.image.clone()
        }
    }

    /// Full in-memory run on one scene; returns the exported image and PSNR.
    pub fn run(&self, x: &SceneImage) -> Result<(Matrix, f64, SolveReport)> {
        let mut acc = self.accumulate(x)?;
        let frames = if self.cfg.solver.kind == SolverKind::BruteForce {
            let mut all = Vec::new();
            self.acquire(x, |y| {
                all.push(y);
                Ok(())
            })?;
            Some(all)
        } else {
            None
        };
        let (rec, report) = self.solve(&mut acc, frames.as_deref())?;
        let image = self.output_image(&rec);
        let score = psnr(&image, x.pixels())?;
        Ok((image, score, report))
    }
}

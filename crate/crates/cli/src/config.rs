//! Experiment configuration: a sectioned TOML file, overridable per key via
//! `CODEDCAM_<SECTION>_<KEY>` environment variables.

use crate::error::{CliError, Result};
use codedcam_core::forward::{Channel, NoiseSpec};
use codedcam_core::illumination::{HadamardMode, PatternSet};
use codedcam_core::metrics::Region;
use codedcam_core::optics::{Geometry, DEFAULT_FEATURE_SIZE, DEFAULT_SUPERSAMPLE};
use codedcam_core::solver::{Lambda, SolverKind, BRUTE_FORCE_MAX_N, DEFAULT_RELATIVE_LAMBDA};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const ENV_PREFIX: &str = "CODEDCAM_";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    pub mask: MaskConfig,
    pub system: SystemConfig,
    pub scene: SceneConfig,
    pub illumination: IlluminationConfig,
    pub noise: NoiseConfig,
    pub solver: SolverConfig,
    pub binning: BinningConfig,
    pub output: OutputConfig,
    pub metrics: MetricsConfig,
    pub sweep: SweepConfig,
    pub mtf: MtfConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub sensor_pixels: usize,
    pub sensor_pitch: f64,
    pub mask_distance: f64,
    pub scene_distance: f64,
    pub scene_pixels: usize,
    pub scene_width: f64,
    pub supersample: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        let g = Geometry::default();
        Self {
            sensor_pixels: g.sensor_pixels,
            sensor_pitch: g.sensor_pitch,
            mask_distance: g.mask_distance,
            scene_distance: g.scene_distance,
            scene_pixels: g.scene_pixels,
            scene_width: g.scene_width,
            supersample: DEFAULT_SUPERSAMPLE,
        }
    }
}

impl GeometryConfig {
    pub fn geometry(&self) -> Geometry {
        Geometry {
            sensor_pixels: self.sensor_pixels,
            sensor_pitch: self.sensor_pitch,
            mask_distance: self.mask_distance,
            scene_distance: self.scene_distance,
            scene_pixels: self.scene_pixels,
            scene_width: self.scene_width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    pub degree: u32,
    pub feature_size: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self { degree: 9, feature_size: DEFAULT_FEATURE_SIZE }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemModel {
    /// Mask shadow sampled from the imaging geometry.
    #[default]
    Geometric,
    /// `Φ = I`; the sensor sees the lit scene directly (m = n).
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub model: SystemModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub channel: Channel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    #[default]
    Uniform,
    Random,
    ShiftingDots,
    RepeatedOrthogonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IlluminationConfig {
    pub family: FamilyName,
    /// Patterns per axis (k² frames in total); ignored for uniform.
    pub k: usize,
    pub mode: HadamardMode,
    pub seed: u64,
}

impl Default for IlluminationConfig {
    fn default() -> Self {
        Self { family: FamilyName::Uniform, k: 1, mode: HadamardMode::Signed, seed: 1 }
    }
}

impl IlluminationConfig {
    pub fn pattern_set(&self, n: usize) -> Result<PatternSet> {
        Ok(match self.family {
            FamilyName::Uniform => PatternSet::uniform(n)?,
            FamilyName::Random => PatternSet::random(n, self.k, self.seed)?,
            FamilyName::ShiftingDots => PatternSet::shifting_dots(n, self.k)?,
            FamilyName::RepeatedOrthogonal => PatternSet::repeated_orthogonal(n, self.k, self.mode)?,
        })
    }

    /// Total number of distinct patterns.
    pub fn pattern_count(&self) -> usize {
        match self.family {
            FamilyName::Uniform => 1,
            _ => self.k * self.k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exposure {
    /// Each frame is scaled so its brightest pixel reaches full well.
    #[default]
    PerFrame,
    /// One exposure for all frames: a white scene under full light saturates.
    FullScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub enabled: bool,
    pub full_well: f64,
    pub gain: f64,
    pub dynamic_range: f64,
    pub seed: u64,
    pub frames_to_average: usize,
    pub exposure: Exposure,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        let n = NoiseSpec::default();
        Self {
            enabled: true,
            full_well: n.full_well,
            gain: n.gain,
            dynamic_range: n.dynamic_range,
            seed: n.seed,
            frames_to_average: 1,
            exposure: Exposure::PerFrame,
        }
    }
}

impl NoiseConfig {
    pub fn spec(&self, seed: u64) -> NoiseSpec {
        NoiseSpec { full_well: self.full_well, gain: self.gain, dynamic_range: self.dynamic_range, seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// `lambda` is a multiple of the largest eigenvalue product.
    #[default]
    Relative,
    Absolute,
    /// Chosen from the data by generalized cross-validation.
    Gcv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub kind: SolverKind,
    pub lambda: f64,
    pub lambda_mode: LambdaMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { kind: SolverKind::ClosedForm, lambda: DEFAULT_RELATIVE_LAMBDA, lambda_mode: LambdaMode::Relative }
    }
}

impl SolverConfig {
    /// Initial λ for the accumulator; GCV starts from the relative default.
    pub fn initial_lambda(&self) -> Lambda {
        match self.lambda_mode {
            LambdaMode::Relative => Lambda::Relative(self.lambda),
            LambdaMode::Absolute => Lambda::Absolute(self.lambda),
            LambdaMode::Gcv => Lambda::Relative(DEFAULT_RELATIVE_LAMBDA),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BinningConfig {
    pub factor: usize,
}

impl Default for BinningConfig {
    fn default() -> Self {
        Self { factor: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub psnr: bool,
    /// Clamp reconstructions to [0, 1] before scoring and image export.
    pub clamp: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { psnr: true, clamp: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    #[default]
    PatternCount,
    MaskDistance,
    Binning,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    /// Pattern counts (perfect squares), mask distances in metres, or binning factors.
    pub values: Vec<f64>,
    pub images_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MtfConfig {
    pub pattern_counts: Vec<usize>,
    pub dc_background: f64,
    pub regions: Vec<Region>,
}

impl Default for MtfConfig {
    fn default() -> Self {
        Self { pattern_counts: vec![9, 16, 49], dc_background: 0.0, regions: Vec::new() }
    }
}

impl ExperimentConfig {
    /// Reads `path`, applies environment overrides and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml_with_env(&text, std::env::vars())
    }

    /// Defaults plus environment overrides, validated.
    pub fn from_env() -> Result<Self> {
        Self::from_toml_with_env("", std::env::vars())
    }

    pub fn from_toml_with_env(
        text: &str,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let mut table: toml::Table =
            text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        apply_env(&mut table, vars)?;
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Sensor size actually simulated (the identity model ties it to n).
    pub fn sensor_pixels(&self) -> usize {
        match self.system.model {
            SystemModel::Geometric => self.geometry.sensor_pixels,
            SystemModel::Identity => self.geometry.scene_pixels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: String| Err(CliError::Config(format!("{key}: {why}")));
        self.geometry.geometry().validate().map_err(|e| CliError::Config(format!("geometry: {e}")))?;
        if self.geometry.supersample == 0 {
            return bad("geometry.supersample", "must be >= 1".into());
        }
        if !(2..=16).contains(&self.mask.degree) {
            return bad("mask.degree", format!("{} not in 2..=16", self.mask.degree));
        }
        if !(self.mask.feature_size > 0.0) || !self.mask.feature_size.is_finite() {
            return bad("mask.feature_size", "must be positive".into());
        }
        let n = self.geometry.scene_pixels;
        let ill = &self.illumination;
        if ill.family != FamilyName::Uniform {
            if ill.k == 0 || ill.k > n {
                return bad("illumination.k", format!("{} not in 1..={n}", ill.k));
            }
            if ill.family == FamilyName::RepeatedOrthogonal && !ill.k.is_power_of_two() {
                return bad("illumination.k", format!("no Hadamard matrix of order {} available", ill.k));
            }
        }
        if self.noise.enabled {
            self.noise.spec(0).validate().map_err(|e| CliError::Config(format!("noise: {e}")))?;
        }
        if self.noise.frames_to_average == 0 {
            return bad("noise.frames_to_average", "must be >= 1".into());
        }
        if !(self.solver.lambda >= 0.0) || !self.solver.lambda.is_finite() {
            return bad("solver.lambda", format!("{} must be finite and >= 0", self.solver.lambda));
        }
        if self.solver.kind == SolverKind::BruteForce && n > BRUTE_FORCE_MAX_N {
            return bad("solver.kind", format!("brute_force needs scene_pixels <= {BRUTE_FORCE_MAX_N}"));
        }
        let m = self.sensor_pixels();
        let f = self.binning.factor;
        if f == 0 || !m.is_multiple_of(f) {
            return bad("binning.factor", format!("{f} does not divide sensor size {m}"));
        }
        for &v in &self.sweep.values {
            if !v.is_finite() || v <= 0.0 {
                return bad("sweep.values", format!("{v} must be positive"));
            }
        }
        if !(self.mtf.dc_background >= 0.0) {
            return bad("mtf.dc_background", "must be >= 0".into());
        }
        Ok(())
    }
}

/// Merges `CODEDCAM_<SECTION>_<KEY>=value` into the parsed table. Values are
/// read as TOML literals, falling back to bare strings.
fn apply_env(table: &mut toml::Table, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
    for (name, raw) in vars {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else { continue };
        let rest = rest.to_ascii_lowercase();
        let Some((section, key)) = rest.split_once('_') else {
            return Err(CliError::Config(format!("{name}: expected {ENV_PREFIX}<SECTION>_<KEY>")));
        };
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.clone()));
        let entry = table
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        match entry {
            toml::Value::Table(t) => {
                t.insert(key.to_string(), value);
            }
            _ => return Err(CliError::Config(format!("{name}: [{section}] is not a section"))),
        }
    }
    Ok(())
}

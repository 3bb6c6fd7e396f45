//! Subcommands. Each writes its artifacts plus `manifest.json` and the
//! resolved `config.toml` into the configured output directory.

use crate::config::{ExperimentConfig, FamilyName, SweepAxis};
use crate::error::{CliError, Result};
use crate::io;
use crate::pipeline::{exposure_seed, Experiment, SolveReport};
use crate::scenes;
use clap::{Args, Parser, Subcommand};
use codedcam_core::forward::{Measurement, SceneImage};
use codedcam_core::metrics::{mtf_contrast, psnr, system_spectrum};
use codedcam_core::{Matrix, Region};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

pub const MEASUREMENT_DIR: &str = "measurements";
pub const ACCUMULATOR_FILE: &str = "accumulator.ccacc";
pub const TRUTH_FILE: &str = "truth.raw";

/// How seeds are derived, recorded verbatim in every manifest.
pub const SEED_RULE: &str = "exposure seed = splitmix64 chain over (noise.seed, frame position, repeat, polarity); \
sweep image j uses noise.seed + j";

#[derive(Debug, Parser)]
#[command(name = "codedcam", version, about = "Coded-illumination lensless camera simulation and reconstruction")]
pub struct Cli {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides both the noise seed and the random-pattern seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Accumulate frames on the fly instead of writing measurement files.
    #[arg(long, global = true)]
    pub stream: bool,
    /// Overrides output.dir.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the measurements of one scene.
    Simulate(SimulateArgs),
    /// Recover the scene from measurement files or an accumulator.
    Reconstruct(ReconstructArgs),
    /// Singular-value spectrum of the configured system as CSV.
    Spectrum,
    /// PSNR over a directory of test images along one parameter axis.
    Sweep,
    /// Contrast of resolution-target groups per pattern count.
    Mtf(MtfArgs),
    /// Write procedural test scenes, a resolution target and its regions.
    Scenes(ScenesArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scene image (8/16-bit PNG or PGM).
    #[arg(long)]
    pub scene: PathBuf,
    /// Also write 8-bit pattern images for projector playback.
    #[arg(long)]
    pub export_patterns: bool,
    /// Also write 16-bit PNG previews of each frame.
    #[arg(long)]
    pub previews: bool,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Measurement directory, simulate output directory or accumulator file.
    #[arg(long)]
    pub input: PathBuf,
    /// Ground truth (image or raw); `truth.raw` beside the input is used if present.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MtfArgs {
    /// Target image; the built-in resolution target when omitted.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Regions CSV (`label,row,col,rows,cols`); falls back to `[mtf] regions`.
    #[arg(long)]
    pub regions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScenesArgs {
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    /// Scene size (default: geometry.scene_pixels).
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed_rule: &'static str,
    config: &'a ExperimentConfig,
    details: T,
}

fn write_manifest<T: Serialize>(cfg: &ExperimentConfig, command: &'static str, details: T) -> Result<()> {
    let dir = &cfg.output.dir;
    let manifest = Manifest {
        tool: "codedcam",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed_rule: SEED_RULE,
        config: cfg,
        details,
    };
    io::write_json(&dir.join("manifest.json"), &manifest)?;
    io::write_atomic(&dir.join("config.toml"), cfg.to_toml()?.as_bytes())
}

/// Loads the config and applies the global flag overrides.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::from_env()?,
    };
    if let Some(seed) = cli.seed {
        cfg.noise.seed = seed;
        cfg.illumination.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Simulate(a) => simulate(&cfg, a, cli.stream),
        Command::Reconstruct(a) => reconstruct(&cfg, a),
        Command::Spectrum => spectrum(&cfg),
        Command::Sweep => sweep(&cfg),
        Command::Mtf(a) => mtf(&cfg, a),
        Command::Scenes(a) => write_scenes(&cfg, a),
    }
}

fn load_scene(cfg: &ExperimentConfig, path: &Path) -> Result<SceneImage> {
    let n = cfg.geometry.scene_pixels;
    let pixels = io::read_image(path, cfg.scene.channel, Some(n))?;
    Ok(SceneImage::with_channel(pixels, cfg.scene.channel)?)
}

fn frame_name(index: (usize, usize)) -> String {
    format!("frame_{:04}_{:04}", index.0, index.1)
}

#[derive(Debug, Serialize)]
struct SimulateDetails {
    scene: PathBuf,
    streamed: bool,
    frames: usize,
    frame_seeds: Vec<((usize, usize), Option<u64>)>,
}

pub fn simulate(cfg: &ExperimentConfig, args: &SimulateArgs, stream: bool) -> Result<()> {
    let exp = Experiment::new(cfg.clone())?;
    let x = load_scene(cfg, &args.scene)?;
    let out = &cfg.output.dir;
    io::write_raw(&out.join(TRUTH_FILE), x.pixels(), None, (0, 0))?;
    if args.export_patterns {
        export_patterns(&exp, &out.join("patterns"))?;
    }
    let mut seeds = Vec::new();
    let mut acc = exp.new_accumulator()?;
    let mdir = out.join(MEASUREMENT_DIR);
    exp.acquire(&x, |y| {
        seeds.push((y.pattern_index, y.noise_seed));
        if stream {
            acc.accumulate(&y, &exp.binned, &exp.patterns)?;
        } else {
            let name = frame_name(y.pattern_index);
            io::write_measurement(&mdir.join(format!("{name}.raw")), &y)?;
            if args.previews {
                let peak = y.frame.max();
                let scaled = if peak > 0.0 { &y.frame / peak } else { y.frame.clone() };
                io::write_image16(&mdir.join(format!("{name}.png")), &scaled)?;
            }
        }
        Ok(())
    })?;
    if stream {
        io::write_accumulator(&out.join(ACCUMULATOR_FILE), &acc)?;
    }
    log::info!("simulated {} frames into {}", seeds.len(), out.display());
    write_manifest(
        cfg,
        "simulate",
        SimulateDetails { scene: args.scene.clone(), streamed: stream, frames: seeds.len(), frame_seeds: seeds },
    )
}

fn export_patterns(exp: &Experiment, dir: &Path) -> Result<()> {
    for (i, j) in exp.patterns.indices() {
        let (pos, neg) = exp.patterns.split_pattern(i, j)?;
        if exp.patterns.is_signed() {
            io::write_image8(&dir.join(format!("pattern_{i:04}_{j:04}_pos.png")), &pos)?;
            io::write_image8(&dir.join(format!("pattern_{i:04}_{j:04}_neg.png")), &neg)?;
        } else {
            io::write_image8(&dir.join(format!("pattern_{i:04}_{j:04}.png")), &pos)?;
        }
    }
    Ok(())
}

/// Measurement files of a directory ordered as the pattern set acquires them.
fn load_frames(exp: &Experiment, dir: &Path) -> Result<Vec<Measurement>> {
    let mut by_index: HashMap<(usize, usize), Measurement> = HashMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("raw") {
            continue;
        }
        let y = io::read_measurement(&path)?;
        if by_index.insert(y.pattern_index, y).is_some() {
            return Err(CliError::format(&path, "duplicate pattern index"));
        }
    }
    let mut frames = Vec::with_capacity(exp.patterns.pattern_count());
    for idx in exp.patterns.indices() {
        let y = by_index
            .remove(&idx)
            .ok_or_else(|| CliError::format(dir, format!("no measurement for pattern {idx:?}")))?;
        frames.push(y);
    }
    if let Some(extra) = by_index.keys().next() {
        return Err(CliError::format(dir, format!("measurement {extra:?} is not in the configured pattern set")));
    }
    Ok(frames)
}

#[derive(Debug, Serialize)]
struct ReconstructDetails {
    input: PathBuf,
    solve: SolveReport,
    psnr_db: Option<f64>,
}

pub fn reconstruct(cfg: &ExperimentConfig, args: &ReconstructArgs) -> Result<()> {
    let exp = Experiment::new(cfg.clone())?;
    let input = &args.input;
    let (mut acc, frames, base) = if input.is_file() {
        (io::read_accumulator(input)?, None, input.parent().map(Path::to_path_buf))
    } else if input.join(ACCUMULATOR_FILE).is_file() {
        (io::read_accumulator(&input.join(ACCUMULATOR_FILE))?, None, Some(input.clone()))
    } else {
        let (dir, base) = if input.join(MEASUREMENT_DIR).is_dir() {
            (input.join(MEASUREMENT_DIR), input.clone())
        } else {
            (input.clone(), input.parent().map(Path::to_path_buf).unwrap_or_default())
        };
        let frames = load_frames(&exp, &dir)?;
        let mut acc = exp.new_accumulator()?;
        for y in &frames {
            acc.accumulate(y, &exp.binned, &exp.patterns)?;
        }
        (acc, Some(frames), Some(base))
    };
    let n = exp.scene_pixels();
    if acc.size() != n {
        return Err(codedcam_core::Error::dims("accumulator", (n, n), (acc.size(), acc.size())).into());
    }
    if input.is_file() || frames.is_none() {
        // a stored accumulator must describe the configured system
        let fresh = exp.new_accumulator()?;
        if fresh.a_l() != acc.a_l() || fresh.a_r() != acc.a_r() {
            return Err(CliError::Config("accumulator was built with a different system or pattern set".into()));
        }
    }
    let (rec, report) = exp.solve(&mut acc, frames.as_deref())?;
    let image = exp.output_image(&rec);
    let out = &cfg.output.dir;
    io::write_image16(&out.join("reconstruction.png"), &image)?;
    io::write_raw(&out.join("reconstruction.raw"), &rec.image, None, (0, 0))?;

    let truth_path = args.truth.clone().or_else(|| {
        base.map(|b| b.join(TRUTH_FILE)).filter(|p| p.is_file())
    });
    let psnr_db = match (&truth_path, cfg.metrics.psnr) {
        (Some(p), true) => {
            let truth = if p.extension().and_then(|e| e.to_str()) == Some("raw") {
                io::read_raw(p)?.1
            } else {
                load_scene(cfg, p)?.pixels().clone()
            };
            Some(psnr(&image, &truth)?)
        }
        _ => None,
    };
    if !report.residual_ok {
        log::warn!("stationarity residual {:e} above tolerance", report.residual);
    }
    let details = ReconstructDetails { input: input.clone(), solve: report, psnr_db };
    io::write_json(&out.join("metrics.json"), &details)?;
    write_manifest(cfg, "reconstruct", &details)
}

pub fn spectrum(cfg: &ExperimentConfig) -> Result<()> {
    let exp = Experiment::new(cfg.clone())?;
    let acc = exp.new_accumulator()?;
    let report = system_spectrum(&acc)?;
    let out = &cfg.output.dir;
    io::write_csv(
        &out.join("spectrum.csv"),
        &["rank", "value"],
        report.singular_values.iter().enumerate().map(|(r, v)| vec![r.to_string(), format!("{v:e}")]),
    )?;
    #[derive(Serialize)]
    struct Details {
        family: String,
        k: usize,
        values: usize,
    }
    write_manifest(
        cfg,
        "spectrum",
        Details { family: report.pattern_family.to_string(), k: report.k, values: report.singular_values.len() },
    )
}

/// `k` with `k² = count` for the configured family.
pub fn k_for_count(family: FamilyName, count: usize) -> Result<usize> {
    if family == FamilyName::Uniform {
        return if count == 1 {
            Ok(1)
        } else {
            Err(CliError::Config(format!("uniform illumination has 1 pattern, not {count}")))
        };
    }
    let k = (count as f64).sqrt().round() as usize;
    if k * k != count || k == 0 {
        return Err(CliError::Config(format!("pattern count {count} is not a perfect square")));
    }
    Ok(k)
}

/// Config for one sweep point.
pub fn sweep_point(cfg: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    match cfg.sweep.axis {
        SweepAxis::PatternCount => {
            let count = value.round() as usize;
            if (value - count as f64).abs() > 1e-9 {
                return Err(CliError::Config(format!("sweep value {value} is not an integer pattern count")));
            }
            c.illumination.k = k_for_count(cfg.illumination.family, count)?;
        }
        SweepAxis::MaskDistance => c.geometry.mask_distance = value,
        SweepAxis::Binning => {
            let f = value.round() as usize;
            if (value - f as f64).abs() > 1e-9 {
                return Err(CliError::Config(format!("sweep value {value} is not an integer binning factor")));
            }
            c.binning.factor = f;
        }
    }
    c.validate()?;
    Ok(c)
}

/// Image files (png/pgm) of a directory, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files = Vec::new();
    for e in entries {
        let path = e.map_err(|e| CliError::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if matches!(ext.as_deref(), Some("png") | Some("pgm")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Mean and per-image PSNR at one configuration.
pub fn evaluate(cfg: &ExperimentConfig, scenes: &[SceneImage]) -> Result<(f64, Vec<f64>)> {
    let proto = Experiment::new(cfg.clone())?;
    let scores = scenes
        .par_iter()
        .enumerate()
        .map(|(j, x)| {
            let mut c = cfg.clone();
            c.noise.seed = cfg.noise.seed.wrapping_add(j as u64);
            let exp = Experiment::with_system(c, proto.system.clone())?;
            Ok(exp.run(x)?.1)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok((mean, scores))
}

pub fn sweep(cfg: &ExperimentConfig) -> Result<()> {
    let dir = cfg
        .sweep
        .images_dir
        .as_ref()
        .ok_or_else(|| CliError::Config("sweep.images_dir: required for sweep".into()))?;
    let files = list_images(dir)?;
    if files.is_empty() {
        return Err(CliError::Config(format!("sweep.images_dir: no png/pgm images in {}", dir.display())));
    }
    if cfg.sweep.values.is_empty() {
        return Err(CliError::Config("sweep.values: at least one value required".into()));
    }
    let scenes = files.iter().map(|p| load_scene(cfg, p)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for &value in &cfg.sweep.values {
        let point = sweep_point(cfg, value)?;
        let (mean, scores) = evaluate(&point, &scenes)?;
        log::info!("sweep {:?} = {value}: mean PSNR {mean:.2} dB", cfg.sweep.axis);
        let mut row = vec![format!("{value}"), format!("{mean:.6}")];
        row.extend(scores.iter().map(|s| format!("{s:.6}")));
        rows.push(row);
    }
    let names: Vec<String> = files
        .iter()
        .map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    let mut header = vec!["value", "mean_psnr"];
    header.extend(names.iter().map(String::as_str));
    io::write_csv(&cfg.output.dir.join("sweep.csv"), &header, rows)?;
    #[derive(Serialize)]
    struct Details {
        axis: SweepAxis,
        images: Vec<PathBuf>,
    }
    write_manifest(cfg, "sweep", Details { axis: cfg.sweep.axis, images: files })
}

/// Contrast per region for each configured pattern count, plus the
/// reconstructions they were measured on.
pub fn mtf_table(
    cfg: &ExperimentConfig,
    target: &SceneImage,
    regions: &[Region],
) -> Result<Vec<(usize, Vec<Option<f64>>, Matrix)>> {
    let proto = Experiment::new(cfg.clone())?;
    cfg.mtf
        .pattern_counts
        .iter()
        .map(|&count| {
            let mut c = cfg.clone();
            c.illumination.k = k_for_count(cfg.illumination.family, count)?;
            c.validate()?;
            let exp = Experiment::with_system(c, proto.system.clone())?;
            let (image, _, _) = exp.run(target)?;
            let contrast = mtf_contrast(&image, regions, cfg.mtf.dc_background)?;
            Ok((count, contrast, image))
        })
        .collect()
}

pub fn mtf(cfg: &ExperimentConfig, args: &MtfArgs) -> Result<()> {
    let n = cfg.geometry.scene_pixels;
    let (target, builtin_regions) = match &args.image {
        Some(p) => (load_scene(cfg, p)?, None),
        None => {
            if n < 64 {
                return Err(CliError::Config("geometry.scene_pixels: built-in target needs >= 64".into()));
            }
            let (img, regions) = scenes::resolution_target(n);
            (SceneImage::new(img)?, Some(regions))
        }
    };
    let regions = match (&args.regions, cfg.mtf.regions.is_empty(), builtin_regions) {
        (Some(p), _, _) => io::read_regions(p)?,
        (None, false, _) => cfg.mtf.regions.clone(),
        (None, true, Some(r)) => r,
        (None, true, None) => {
            return Err(CliError::Config("mtf.regions: give --regions or [mtf] regions for a custom image".into()))
        }
    };
    let table = mtf_table(cfg, &target, &regions)?;
    let out = &cfg.output.dir;
    let mut rows = Vec::new();
    for (count, contrast, image) in &table {
        io::write_image16(&out.join(format!("mtf_{count}.png")), image)?;
        for (g, c) in regions.iter().zip(contrast) {
            rows.push(vec![count.to_string(), g.label.clone(), c.map_or_else(String::new, |v| format!("{v:.6}"))]);
        }
    }
    io::write_csv(&out.join("mtf.csv"), &["pattern_count", "group", "contrast_percent"], rows)?;
    #[derive(Serialize)]
    struct Details {
        image: Option<PathBuf>,
        regions: Vec<Region>,
    }
    write_manifest(cfg, "mtf", Details { image: args.image.clone(), regions })
}

pub fn write_scenes(cfg: &ExperimentConfig, args: &ScenesArgs) -> Result<()> {
    let n = args.size.unwrap_or(cfg.geometry.scene_pixels);
    let out = &cfg.output.dir;
    let seeds: Vec<u64> = (0..args.count).map(|j| exposure_seed(cfg.noise.seed, j, 0, 2)).collect();
    for (j, &s) in seeds.iter().enumerate() {
        io::write_image16(&out.join("scenes").join(format!("scene_{j:02}.png")), &scenes::natural_scene(n, s))?;
    }
    if n >= 64 {
        let (img, regions) = scenes::resolution_target(n);
        io::write_image16(&out.join("target.png"), &img)?;
        io::write_regions(&out.join("target_regions.csv"), &regions)?;
    }
    #[derive(Serialize)]
    struct Details {
        size: usize,
        scene_seeds: Vec<u64>,
    }
    write_manifest(cfg, "scenes", Details { size: n, scene_seeds: seeds })
}

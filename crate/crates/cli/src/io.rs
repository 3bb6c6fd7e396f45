//! On-disk formats.
//!
//! Raw arrays: one ASCII header line `CCAM 1 <rows> <cols> f64le <seed|-> <i> <j>`
//! followed by `rows·cols` little-endian `f64` values in row-major order.
//!
//! Accumulator state: a header line `CCACC 1 <n> f64le`, one line of JSON
//! metadata, then `Q`, `A_L`, `A_R` as row-major little-endian `f64` blocks.
//!
//! Every file is written to a temporary sibling and renamed into place.

use crate::error::{CliError, Result};
use codedcam_core::forward::{Channel, Measurement};
use codedcam_core::illumination::PatternFamily;
use codedcam_core::solver::NormalAccumulator;
use codedcam_core::Matrix;
use image::{imageops::FilterType, DynamicImage, ImageBuffer, ImageFormat, Luma};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const RAW_MAGIC: &str = "CCAM";
pub const ACC_MAGIC: &str = "CCACC";
pub const FORMAT_VERSION: u32 = 1;

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

fn push_row_major(out: &mut Vec<u8>, m: &Matrix) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
}

fn take_row_major(path: &Path, bytes: &[u8], rows: usize, cols: usize) -> Result<Matrix> {
    if bytes.len() != rows * cols * 8 {
        return Err(CliError::format(
            path,
            format!("expected {} payload bytes, found {}", rows * cols * 8, bytes.len()),
        ));
    }
    let mut values = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()));
    let mut m = Matrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m[(r, c)] = values.next().unwrap();
        }
    }
    Ok(m)
}

fn split_line<'a>(path: &Path, bytes: &'a [u8]) -> Result<(&'a str, &'a [u8])> {
    let end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CliError::format(path, "missing header line"))?;
    let line = std::str::from_utf8(&bytes[..end]).map_err(|_| CliError::format(path, "header is not ASCII"))?;
    Ok((line, &bytes[end + 1..]))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

/// Header fields of a raw array file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawHeader {
    pub rows: usize,
    pub cols: usize,
    pub seed: Option<u64>,
    pub index: (usize, usize),
}

pub fn encode_raw(m: &Matrix, seed: Option<u64>, index: (usize, usize)) -> Vec<u8> {
    let seed = seed.map_or_else(|| "-".to_string(), |s| s.to_string());
    let header = format!(
        "{RAW_MAGIC} {FORMAT_VERSION} {} {} f64le {seed} {} {}\n",
        m.nrows(),
        m.ncols(),
        index.0,
        index.1
    );
    let mut out = header.into_bytes();
    push_row_major(&mut out, m);
    out
}

pub fn write_raw(path: &Path, m: &Matrix, seed: Option<u64>, index: (usize, usize)) -> Result<()> {
    write_atomic(path, &encode_raw(m, seed, index))
}

pub fn read_raw(path: &Path) -> Result<(RawHeader, Matrix)> {
    let bytes = read_bytes(path)?;
    let (line, payload) = split_line(path, &bytes)?;
    let fields: Vec<&str> = line.split_ascii_whitespace().collect();
    if fields.len() != 8 || fields[0] != RAW_MAGIC {
        return Err(CliError::format(path, format!("bad raw header '{line}'")));
    }
    if fields[1] != FORMAT_VERSION.to_string() || fields[4] != "f64le" {
        return Err(CliError::format(path, format!("unsupported version/dtype in '{line}'")));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| CliError::format(path, format!("bad number '{s}'")));
    let seed = match fields[5] {
        "-" => None,
        s => Some(s.parse::<u64>().map_err(|_| CliError::format(path, format!("bad seed '{s}'")))?),
    };
    let header = RawHeader { rows: num(fields[2])?, cols: num(fields[3])?, seed, index: (num(fields[6])?, num(fields[7])?) };
    let m = take_row_major(path, payload, header.rows, header.cols)?;
    Ok((header, m))
}

pub fn write_measurement(path: &Path, y: &Measurement) -> Result<()> {
    write_raw(path, &y.frame, y.noise_seed, y.pattern_index)
}

pub fn read_measurement(path: &Path) -> Result<Measurement> {
    let (h, frame) = read_raw(path)?;
    let mut y = Measurement::new(frame, h.index).map_err(CliError::from)?;
    y.noise_seed = h.seed;
    Ok(y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AccumulatorMeta {
    lambda: f64,
    frames_seen: usize,
    family: PatternFamily,
    block: usize,
    energy: f64,
    samples: usize,
}

pub fn encode_accumulator(acc: &NormalAccumulator) -> Vec<u8> {
    let meta = AccumulatorMeta {
        lambda: acc.lambda(),
        frames_seen: acc.frames_seen(),
        family: acc.family(),
        block: acc.block(),
        energy: acc.energy(),
        samples: acc.samples(),
    };
    let mut out = format!("{ACC_MAGIC} {FORMAT_VERSION} {} f64le\n", acc.size()).into_bytes();
    out.extend_from_slice(serde_json::to_string(&meta).expect("plain metadata").as_bytes());
    out.push(b'\n');
    for m in [acc.q(), acc.a_l(), acc.a_r()] {
        push_row_major(&mut out, m);
    }
    out
}

pub fn write_accumulator(path: &Path, acc: &NormalAccumulator) -> Result<()> {
    write_atomic(path, &encode_accumulator(acc))
}

pub fn read_accumulator(path: &Path) -> Result<NormalAccumulator> {
    let bytes = read_bytes(path)?;
    let (line, rest) = split_line(path, &bytes)?;
    let fields: Vec<&str> = line.split_ascii_whitespace().collect();
    if fields.len() != 4 || fields[0] != ACC_MAGIC || fields[1] != FORMAT_VERSION.to_string() || fields[3] != "f64le" {
        return Err(CliError::format(path, format!("bad accumulator header '{line}'")));
    }
    let n: usize = fields[2].parse().map_err(|_| CliError::format(path, "bad accumulator size"))?;
    let (json, payload) = split_line(path, rest)?;
    let meta: AccumulatorMeta =
        serde_json::from_str(json).map_err(|e| CliError::format(path, format!("metadata: {e}")))?;
    let block = n * n * 8;
    if payload.len() != 3 * block {
        return Err(CliError::format(path, format!("expected {} payload bytes, found {}", 3 * block, payload.len())));
    }
    let q = take_row_major(path, &payload[..block], n, n)?;
    let a_l = take_row_major(path, &payload[block..2 * block], n, n)?;
    let a_r = take_row_major(path, &payload[2 * block..], n, n)?;
    Ok(NormalAccumulator::from_parts(q, a_l, a_r, meta.lambda, meta.frames_seen, meta.family, meta.block)?
        .with_measurement_stats(meta.energy, meta.samples))
}

/// Loads an 8/16-bit PNG or PGM as normalized intensities, centre-cropped to
/// a square and resampled to `n×n` when `n` is given.
pub fn read_image(path: &Path, channel: Channel, n: Option<usize>) -> Result<Matrix> {
    let img = image::open(path).map_err(|source| CliError::Image { path: path.into(), source })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane: Vec<f32> = match channel {
        Channel::Gray => img.to_luma16().pixels().map(|p| p.0[0] as f32 / 65535.0).collect(),
        c => {
            let idx = match c {
                Channel::Red => 0,
                Channel::Green => 1,
                _ => 2,
            };
            img.to_rgb16().pixels().map(|p| p.0[idx] as f32 / 65535.0).collect()
        }
    };
    let buf: ImageBuffer<Luma<f32>, Vec<f32>> =
        ImageBuffer::from_raw(w as u32, h as u32, plane).expect("plane matches dimensions");
    let side = w.min(h);
    let cropped = image::imageops::crop_imm(&buf, ((w - side) / 2) as u32, ((h - side) / 2) as u32, side as u32, side as u32)
        .to_image();
    let target = n.unwrap_or(side);
    let resized = if target == side {
        cropped
    } else {
        image::imageops::resize(&cropped, target as u32, target as u32, FilterType::Triangle)
    };
    Ok(Matrix::from_fn(target, target, |r, c| (resized.get_pixel(c as u32, r as u32).0[0] as f64).clamp(0.0, 1.0)))
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref() {
        Some("png") => Ok(ImageFormat::Png),
        Some("pgm") | Some("pnm") => Ok(ImageFormat::Pnm),
        _ => Err(CliError::format(path, "image extension must be .png or .pgm")),
    }
}

fn encode_image(path: &Path, img: DynamicImage) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, format_for(path)?)
        .map_err(|source| CliError::Image { path: path.into(), source })?;
    Ok(out.into_inner())
}

/// 16-bit grayscale export of values in [0, 1] (clamped); rows are image rows.
pub fn write_image16(path: &Path, m: &Matrix) -> Result<()> {
    let buf = ImageBuffer::from_fn(m.ncols() as u32, m.nrows() as u32, |x, y| {
        Luma([(m[(y as usize, x as usize)].clamp(0.0, 1.0) * 65535.0).round() as u16])
    });
    write_atomic(path, &encode_image(path, DynamicImage::ImageLuma16(buf))?)
}

/// 8-bit grayscale export (projector playback) of values in [0, 1].
pub fn write_image8(path: &Path, m: &Matrix) -> Result<()> {
    let buf = ImageBuffer::from_fn(m.ncols() as u32, m.nrows() as u32, |x, y| {
        Luma([(m[(y as usize, x as usize)].clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    write_atomic(path, &encode_image(path, DynamicImage::ImageLuma8(buf))?)
}

/// Serializes rows (header first) as CSV.
pub fn write_csv<R, I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::format(path, e.to_string());
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(row).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::format(path, e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::format(path, e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Regions CSV with header `label,row,col,rows,cols`.
pub fn read_regions(path: &Path) -> Result<Vec<codedcam_core::Region>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::format(path, e.to_string()))?;
    r.deserialize().map(|row| row.map_err(|e| CliError::format(path, e.to_string()))).collect()
}

pub fn write_regions(path: &Path, regions: &[codedcam_core::Region]) -> Result<()> {
    write_csv(
        path,
        &["label", "row", "col", "rows", "cols"],
        regions.iter().map(|g| {
            vec![g.label.clone(), g.row.to_string(), g.col.to_string(), g.rows.to_string(), g.cols.to_string()]
        }),
    )
}

//! Procedural test scenes.
//!
//! `natural_scene` composites a dead-leaves occlusion model (discs with
//! power-law radii, giving sharp edges and a roughly 1/f spectrum) over
//! multi-octave value noise. `resolution_target` draws bar groups of
//! decreasing period for contrast measurements.

use codedcam_core::{Matrix, Region};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Background level of [`resolution_target`]; bars sit at `1 − TARGET_DC`.
pub const TARGET_DC: f64 = 0.1;

const LEAVES: usize = 160;
const OCTAVE_DECAY: f64 = 0.85;

pub fn natural_scene(n: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = value_noise(n, &mut rng).map(|v| 0.25 * v);
    let mut covered = vec![false; n * n];
    // front-to-back: a pixel keeps the first leaf that covers it
    let (r_min, r_max): (f64, f64) = (1.5, n as f64 / 3.0);
    let mut leaf_layer = Matrix::zeros(n, n);
    for _ in 0..LEAVES {
        // radius density ∝ r⁻³ on [r_min, r_max] by inversion
        let u: f64 = rng.random();
        let inv = r_min.powi(-2) - u * (r_min.powi(-2) - r_max.powi(-2));
        let radius = inv.powf(-0.5);
        let (cy, cx) = (rng.random::<f64>() * n as f64, rng.random::<f64>() * n as f64);
        let tone: f64 = rng.random();
        let y0 = (cy - radius).floor().max(0.0) as usize;
        let y1 = ((cy + radius).ceil() as usize).min(n);
        let x0 = (cx - radius).floor().max(0.0) as usize;
        let x1 = ((cx + radius).ceil() as usize).min(n);
        for r in y0..y1 {
            for c in x0..x1 {
                let (dy, dx) = (r as f64 + 0.5 - cy, c as f64 + 0.5 - cx);
                if !covered[r * n + c] && dy * dy + dx * dx <= radius * radius {
                    covered[r * n + c] = true;
                    leaf_layer[(r, c)] = tone;
                }
            }
        }
    }
    for r in 0..n {
        for c in 0..n {
            let base = if covered[r * n + c] { leaf_layer[(r, c)] } else { 0.5 };
            img[(r, c)] += 0.75 * base;
        }
    }
    normalize(img)
}

// Sum of bilinear value-noise octaves, amplitude decaying per octave.
fn value_noise(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut img = Matrix::zeros(n, n);
    let mut amp = 1.0;
    let mut cells = 2;
    while cells <= n {
        let g = Matrix::from_fn(cells + 1, cells + 1, |_, _| rng.random::<f64>() - 0.5);
        for r in 0..n {
            for c in 0..n {
                let fr = r as f64 / n as f64 * cells as f64;
                let fc = c as f64 / n as f64 * cells as f64;
                let (i, j) = (fr as usize, fc as usize);
                let (dr, dc) = (fr - i as f64, fc - j as f64);
                img[(r, c)] += amp
                    * (g[(i, j)] * (1.0 - dr) * (1.0 - dc)
                        + g[(i + 1, j)] * dr * (1.0 - dc)
                        + g[(i, j + 1)] * (1.0 - dr) * dc
                        + g[(i + 1, j + 1)] * dr * dc);
            }
        }
        amp *= OCTAVE_DECAY;
        cells *= 2;
    }
    normalize(img)
}

fn normalize(img: Matrix) -> Matrix {
    let (lo, hi) = (img.min(), img.max());
    if hi > lo {
        img.map(|v| (v - lo) / (hi - lo))
    } else {
        Matrix::zeros(img.nrows(), img.ncols())
    }
}

/// Six horizontal-bar groups on a `TARGET_DC` background (periods
/// `n/8 … 3n/128`, at least 2 px) and the regions that cover them.
///
/// Bars vary along rows, so each region's column-averaged profile crosses
/// them. Panics if `n < 64`.
pub fn resolution_target(n: usize) -> (Matrix, Vec<Region>) {
    assert!(n >= 64, "resolution target needs n >= 64");
    let mut img = Matrix::from_element(n, n, TARGET_DC);
    let periods = [n / 8, 3 * n / 32, n / 16, 3 * n / 64, n / 32, 3 * n / 128].map(|p| p.max(2));
    let width = n / 5;
    let mut regions = Vec::new();
    for (g, &p) in periods.iter().enumerate() {
        let col = n / 16 + (g % 3) * (n / 3);
        let row = n / 16 + (g / 3) * (n / 2);
        let rows = 3 * p;
        for r in row..(row + rows).min(n) {
            if (r - row) % p < p / 2 {
                for c in col..col + width {
                    img[(r, c)] = 1.0 - TARGET_DC;
                }
            }
        }
        // inset so blur from the group edges stays outside the profile
        let inset = width / 6;
        regions.push(Region { label: format!("group{g}"), row, col: col + inset, rows, cols: width - 2 * inset });
    }
    (img, regions)
}

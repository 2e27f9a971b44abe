//! Attention-weight heatmaps over a synthetic heart-shaped feature map.
//!
//! The map is 4×20×20. A pixel is inside the heart when its center `(x, y)`
//! on the `[-1.5, 1.5]²` grid satisfies `(x² + y² − 1)³ ≤ x²·y³`, with row 0
//! at `y = +1.5`. Channel `c` holds `(c + 1) / 4` inside and 0 outside, plus
//! seeded uniform noise in `[-noise, noise]`. Projections are identities and
//! each channel is its own head, so head `c` scores `x_q[c] · x_k[c]` for
//! every pixel pair.

use std::fmt::Write as _;
use std::path::Path;

use fwa_core::attention::{drelu, scaled_scores, FwaConfig};
use fwa_core::{serialize, Patch, PatchGeometry, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const GRID: usize = 20;
pub const CHANNELS: usize = 4;
pub const DEFAULT_NOISE: f32 = 0.05;
const EXTENT: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Drelu,
    Softmax,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Drelu => "drelu",
            Method::Softmax => "softmax",
        }
    }
}

pub fn in_heart(row: usize, col: usize) -> bool {
    let step = 2.0 * EXTENT / GRID as f64;
    let x = -EXTENT + (col as f64 + 0.5) * step;
    let y = EXTENT - (row as f64 + 0.5) * step;
    (x * x + y * y - 1.0).powi(3) <= x * x * y.powi(3)
}

/// `[1, 4, 20, 20]` heart map.
pub fn heart_map(noise: f32, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(CHANNELS * GRID * GRID);
    for c in 0..CHANNELS {
        let level = (c + 1) as f32 / CHANNELS as f32;
        for row in 0..GRID {
            for col in 0..GRID {
                let base = if in_heart(row, col) { level } else { 0.0 };
                let jitter = if noise > 0.0 { rng.random_range(-noise..=noise) } else { 0.0 };
                data.push(base + jitter);
            }
        }
    }
    Tensor::new(&[1, CHANNELS, GRID, GRID], data).expect("heart map shape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub method: Method,
    pub channel: usize,
    /// Row-major `GRID × GRID` weights of the query pixel over all key pixels.
    pub weights: Vec<f32>,
}

impl Heatmap {
    pub fn file_name(&self) -> String {
        format!("heatmap_{}_c{}.pgm", self.method.name(), self.channel)
    }
}

/// DReLu and SoftMax weight rows of pixel `query` for each channel, DReLu first.
pub fn attention_heatmaps(map: &Tensor, query: (usize, usize)) -> fwa_core::Result<Vec<Heatmap>> {
    let (row, col) = query;
    if row >= GRID || col >= GRID {
        return Err(fwa_core::Error::Config(format!("query {query:?} lies outside the {GRID}x{GRID} grid")));
    }
    let tokens = serialize(map, Patch::UNIT, 1)?;
    let scores = scaled_scores(tokens.tokens(), tokens.tokens(), CHANNELS)?;
    let cfg = FwaConfig::new(CHANNELS, CHANNELS, PatchGeometry::square(GRID, 1)?)?;
    let n = GRID * GRID;
    let relu_w = drelu(&scores, n, &cfg)?;
    let soft_w = scores.softmax_lastdim();
    let q = row * GRID + col;
    let mut out = Vec::with_capacity(2 * CHANNELS);
    for (method, w) in [(Method::Drelu, &relu_w), (Method::Softmax, &soft_w)] {
        for channel in 0..CHANNELS {
            let start = (channel * n + q) * n;
            out.push(Heatmap { method, channel, weights: w.data()[start..start + n].to_vec() });
        }
    }
    Ok(out)
}

/// Linear scaling of `[lo, hi]` onto `0..=255` with `lo = min(0, min w)`, so
/// zero weights stay zero pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scale {
    pub lo: f32,
    pub hi: f32,
}

impl Scale {
    pub fn fit(weights: &[f32]) -> Self {
        let lo = weights.iter().copied().fold(0.0f32, f32::min);
        let hi = weights.iter().copied().fold(lo, f32::max);
        Self { lo, hi }
    }

    pub fn pixel(&self, w: f32) -> u8 {
        if self.hi <= self.lo {
            return 0;
        }
        (255.0 * (w - self.lo) / (self.hi - self.lo)).round().clamp(0.0, 255.0) as u8
    }
}

/// ASCII PGM (`P2`), one image row per line.
pub fn pgm_p2(width: usize, height: usize, pixels: &[u8]) -> String {
    assert_eq!(pixels.len(), width * height, "pixel count does not match {width}x{height}");
    let mut s = format!("P2\n{width} {height}\n255\n");
    for row in pixels.chunks(width) {
        let line: Vec<String> = row.iter().map(u8::to_string).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageEntry {
    pub file: String,
    pub method: Method,
    pub channel: usize,
    pub scale: Scale,
    pub zero_weights: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Sidecar {
    pub seed: u64,
    pub noise: f32,
    pub grid: usize,
    pub query: [usize; 2],
    pub images: Vec<ImageEntry>,
}

/// Writes one PGM per heatmap plus `heatmap.json` into `dir`.
pub fn write_heatmaps(
    dir: &Path,
    heatmaps: &[Heatmap],
    seed: u64,
    noise: f32,
    query: (usize, usize),
) -> std::io::Result<Sidecar> {
    std::fs::create_dir_all(dir)?;
    let mut images = Vec::with_capacity(heatmaps.len());
    for h in heatmaps {
        let scale = Scale::fit(&h.weights);
        let pixels: Vec<u8> = h.weights.iter().map(|&w| scale.pixel(w)).collect();
        std::fs::write(dir.join(h.file_name()), pgm_p2(GRID, GRID, &pixels))?;
        images.push(ImageEntry {
            file: h.file_name(),
            method: h.method,
            channel: h.channel,
            scale,
            zero_weights: h.weights.iter().filter(|&&w| w == 0.0).count(),
        });
    }
    let sidecar = Sidecar { seed, noise, grid: GRID, query: [query.0, query.1], images };
    let json = serde_json::to_string_pretty(&sidecar).map_err(std::io::Error::other)?;
    std::fs::write(dir.join("heatmap.json"), json + "\n")?;
    Ok(sidecar)
}

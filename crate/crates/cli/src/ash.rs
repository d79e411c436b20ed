//! Average-shifted-histogram rendering of localizations, z encoded as colour.

use image::{Rgb, RgbImage};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use smlm_core::grid3d::Localization;

use crate::error::{CliError, CliResult};

const VIRIDIS: &str = include_str!("../assets/viridis.csv");

/// A 256-entry RGB lookup table.
#[derive(Debug, Clone, PartialEq)]
pub struct Colormap(Vec<[u8; 3]>);

impl Colormap {
    /// The shipped perceptually ordered table.
    pub fn viridis() -> Self {
        Self::parse(VIRIDIS).expect("bundled colormap is well formed")
    }

    /// One `r,g,b` line per entry, exactly 256 entries.
    pub fn parse(text: &str) -> CliResult<Self> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let v: Vec<u8> = l.split(',').map(|c| c.trim().parse()).collect::<Result<_, _>>().map_err(|e| {
                    CliError::Data(format!("colormap line {l:?}: {e}"))
                })?;
                <[u8; 3]>::try_from(v).map_err(|_| CliError::Data(format!("colormap line {l:?} needs three values")))
            })
            .collect::<CliResult<Vec<_>>>()?;
        if entries.len() != 256 {
            return Err(CliError::Data(format!("colormap has {} entries, expected 256", entries.len())));
        }
        Ok(Self(entries))
    }

    pub fn entries(&self) -> &[[u8; 3]] {
        &self.0
    }

    /// Entry for `t` in [0, 1] (clamped).
    pub fn lookup(&self, t: f64) -> [u8; 3] {
        let i = (t.clamp(0.0, 1.0) * 255.0).round() as usize;
        self.0[i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AshConfig {
    /// Histogram bin (nm).
    pub bin_nm: f64,
    /// Shifts per axis; the output pitch is `bin_nm / shifts`.
    pub shifts: usize,
    /// Depths mapped to the first and last colormap entries.
    pub z_range: [f64; 2],
    /// `[x0, y0, width, height]` in nm; the padded bounding box when absent.
    pub extent: Option<[f64; 4]>,
}

impl Default for AshConfig {
    fn default() -> Self {
        Self { bin_nm: 20.0, shifts: 4, z_range: [-2000.0, 2000.0], extent: None }
    }
}

/// Averaged histogram on the fine grid: per-pixel weight (in counts per
/// coarse bin) and weight-averaged depth.
#[derive(Debug, Clone, PartialEq)]
pub struct AshImage {
    pub origin: [f64; 2],
    pub pitch_nm: f64,
    pub density: Array2<f64>,
    pub mean_z: Array2<f64>,
}

fn extent(locs: &[Localization], cfg: &AshConfig) -> [f64; 4] {
    if let Some(e) = cfg.extent {
        return e;
    }
    let b = cfg.bin_nm;
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for l in locs {
        x0 = x0.min(l.x);
        y0 = y0.min(l.y);
        x1 = x1.max(l.x);
        y1 = y1.max(l.y);
    }
    let (x0, y0) = ((x0 / b).floor() * b - b, (y0 / b).floor() * b - b);
    let (x1, y1) = ((x1 / b).floor() * b + 2.0 * b, (y1 / b).floor() * b + 2.0 * b);
    [x0, y0, x1 - x0, y1 - y0]
}

/// Average of `shifts²` histograms offset by multiples of `bin / shifts`.
/// Each localization spreads over `(2·shifts − 1)²` fine pixels with the
/// separable triangle weights `(s − |d|)/s` that the averaging produces.
pub fn ash_histogram(locs: &[Localization], cfg: &AshConfig) -> CliResult<AshImage> {
    if locs.is_empty() {
        return Err(CliError::Data("nothing to render: the localization list is empty".into()));
    }
    if !(cfg.bin_nm > 0.0) || cfg.shifts == 0 || !(cfg.z_range[1] > cfg.z_range[0]) {
        return Err(CliError::usage("render", "bin and shifts must be positive and the z range ordered"));
    }
    let [x0, y0, w, h] = extent(locs, cfg);
    let s = cfg.shifts as isize;
    let pitch = cfg.bin_nm / cfg.shifts as f64;
    let (cols, rows) = ((w / pitch).ceil() as usize, (h / pitch).ceil() as usize);
    if rows == 0 || cols == 0 {
        return Err(CliError::usage("render", "render extent is empty"));
    }
    let mut density = Array2::<f64>::zeros((rows, cols));
    let mut zsum = Array2::<f64>::zeros((rows, cols));
    let weight = |d: isize| (s - d.abs()) as f64 / s as f64;
    for l in locs {
        let ci = ((l.x - x0) / pitch).floor() as isize;
        let ri = ((l.y - y0) / pitch).floor() as isize;
        for dr in -(s - 1)..s {
            let r = ri + dr;
            if r < 0 || r >= rows as isize {
                continue;
            }
            for dc in -(s - 1)..s {
                let c = ci + dc;
                if c < 0 || c >= cols as isize {
                    continue;
                }
                let wgt = weight(dr) * weight(dc);
                density[[r as usize, c as usize]] += wgt;
                zsum[[r as usize, c as usize]] += wgt * l.z;
            }
        }
    }
    let mean_z = ndarray::Zip::from(&zsum).and(&density).map_collect(|&z, &d| if d > 0.0 { z / d } else { 0.0 });
    Ok(AshImage { origin: [x0, y0], pitch_nm: pitch, density, mean_z })
}

/// Hue from mean depth, brightness from density relative to the maximum.
pub fn colorize(img: &AshImage, cfg: &AshConfig, cmap: &Colormap) -> RgbImage {
    let (rows, cols) = img.density.dim();
    let peak = img.density.iter().fold(0.0f64, |a, &b| a.max(b));
    let [z0, z1] = cfg.z_range;
    RgbImage::from_fn(cols as u32, rows as u32, |c, r| {
        let d = img.density[[r as usize, c as usize]];
        if d <= 0.0 || peak <= 0.0 {
            return Rgb([0, 0, 0]);
        }
        let v = (d / peak).min(1.0);
        let rgb = cmap.lookup((img.mean_z[[r as usize, c as usize]] - z0) / (z1 - z0));
        Rgb(rgb.map(|ch| (ch as f64 * v).round() as u8))
    })
}

pub fn render_ash(locs: &[Localization], cfg: &AshConfig, cmap: &Colormap) -> CliResult<RgbImage> {
    Ok(colorize(&ash_histogram(locs, cfg)?, cfg, cmap))
}

//! The discretised emitter-occupancy ("vacancy") grid and its conversion to
//! and from continuous localizations.

use std::collections::BTreeMap;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{Emitter, OpticalConfig};

pub const DEFAULT_VOXEL_Z: f64 = 33.0;

/// Geometry of a `depth × height × width` voxel grid. Voxel `(d, i, j)` has
/// its centre at `origin + ((j, i, d) + 0.5) · pitch` in (x, y, z).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub voxel_xy: f64,
    pub voxel_z: f64,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    /// World coordinates (x, y, z) of the outer corner of voxel (0, 0, 0).
    pub origin: [f64; 3],
}

impl GridSpec {
    /// Grid matched to a `frame_height × frame_width` camera frame: lateral
    /// pitch is the hi-res pitch, slices cover the axial range centred on focus.
    pub fn for_frame(optics: &OpticalConfig, frame_height: usize, frame_width: usize) -> Self {
        let up = optics.upsample_factor;
        let depth = (optics.axial_range / DEFAULT_VOXEL_Z).ceil() as usize;
        Self {
            voxel_xy: optics.hires_pitch(),
            voxel_z: DEFAULT_VOXEL_Z,
            depth,
            height: frame_height * up,
            width: frame_width * up,
            origin: [0.0, 0.0, -(depth as f64) * DEFAULT_VOXEL_Z / 2.0],
        }
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        (self.depth, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.depth * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxel_center(&self, d: usize, i: usize, j: usize) -> (f64, f64, f64) {
        (
            self.origin[0] + (j as f64 + 0.5) * self.voxel_xy,
            self.origin[1] + (i as f64 + 0.5) * self.voxel_xy,
            self.origin[2] + (d as f64 + 0.5) * self.voxel_z,
        )
    }

    /// Voxel containing `(x, y, z)`, or `None` outside the extents.
    pub fn voxel_of(&self, x: f64, y: f64, z: f64) -> Option<(usize, usize, usize)> {
        let j = ((x - self.origin[0]) / self.voxel_xy).floor();
        let i = ((y - self.origin[1]) / self.voxel_xy).floor();
        let d = ((z - self.origin[2]) / self.voxel_z).floor();
        let inside = |v: f64, n: usize| v >= 0.0 && v < n as f64;
        (inside(d, self.depth) && inside(i, self.height) && inside(j, self.width))
            .then(|| (d as usize, i as usize, j as usize))
    }
}

/// Predicted or ground-truth vacancy grid (values ≥ 0).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid3D {
    pub values: Array3<f64>,
    pub spec: GridSpec,
}

impl Grid3D {
    pub fn zeros(spec: GridSpec) -> Self {
        Self { values: Array3::zeros(spec.dim()), spec }
    }

    pub fn from_values(values: Array3<f64>, spec: GridSpec) -> Result<Self> {
        if values.dim() != spec.dim() {
            return Err(Error::shape(format!(
                "grid values {:?} do not match spec {:?}",
                values.dim(),
                spec.dim()
            )));
        }
        Ok(Self { values, spec })
    }
}

/// One recovered emitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Photon estimate, or the grid confidence for grid-based localizers.
    pub photons: f64,
}

impl Localization {
    pub fn from_emitter(frame: usize, e: &Emitter) -> Self {
        Self { frame, x: e.x, y: e.y, z: e.z, photons: e.photons }
    }
}

pub type LocalizationList = Vec<Localization>;

/// How each emitter is weighted in a rasterised grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridWeight {
    #[default]
    Unit,
    Photons,
}

/// A rasterised emitter list plus the voxels that received more than one emitter.
#[derive(Debug, Clone)]
pub struct Rasterized {
    pub grid: Grid3D,
    pub collisions: Vec<(usize, usize, usize)>,
}

/// Snaps emitters to their nearest voxel. Emitters sharing a voxel add their
/// weights and are reported as a collision. With `dilation_sigma > 0` each
/// impulse is spread by a Gaussian (peak = impulse weight, truncated at
/// radius 2σ); overlapping spreads take the maximum.
pub fn positions_to_grid(
    emitters: &[Emitter],
    spec: &GridSpec,
    dilation_sigma: f64,
    weight: GridWeight,
) -> Result<Rasterized> {
    if !(dilation_sigma >= 0.0 && dilation_sigma.is_finite()) {
        return Err(Error::config(format!("dilation sigma must be nonnegative, got {dilation_sigma}")));
    }
    let mut impulses: BTreeMap<(usize, usize, usize), (f64, usize)> = BTreeMap::new();
    for (index, e) in emitters.iter().enumerate() {
        let voxel = spec.voxel_of(e.x, e.y, e.z).ok_or_else(|| Error::OutOfBounds {
            index,
            detail: format!("({}, {}, {}) nm is outside the grid", e.x, e.y, e.z),
        })?;
        let w = match weight {
            GridWeight::Unit => 1.0,
            GridWeight::Photons => e.photons,
        };
        let entry = impulses.entry(voxel).or_insert((0.0, 0));
        entry.0 += w;
        entry.1 += 1;
    }
    let collisions = impulses.iter().filter(|(_, (_, n))| *n > 1).map(|(&v, _)| v).collect();

    let mut grid = Grid3D::zeros(*spec);
    if dilation_sigma == 0.0 {
        for (&(d, i, j), &(w, _)) in &impulses {
            grid.values[[d, i, j]] = w;
        }
        return Ok(Rasterized { grid, collisions });
    }

    let cutoff = 2.0 * dilation_sigma;
    let reach = cutoff.floor() as isize;
    let mut kernel = Vec::new();
    for dd in -reach..=reach {
        for di in -reach..=reach {
            for dj in -reach..=reach {
                let r2 = (dd * dd + di * di + dj * dj) as f64;
                if r2 <= cutoff * cutoff {
                    kernel.push((dd, di, dj, (-r2 / (2.0 * dilation_sigma * dilation_sigma)).exp()));
                }
            }
        }
    }
    let (depth, height, width) = spec.dim();
    for (&(d, i, j), &(w, _)) in &impulses {
        for &(dd, di, dj, k) in &kernel {
            let (a, b, c) = (d as isize + dd, i as isize + di, j as isize + dj);
            if a < 0 || b < 0 || c < 0 || a >= depth as isize || b >= height as isize || c >= width as isize {
                continue;
            }
            let cell = &mut grid.values[[a as usize, b as usize, c as usize]];
            *cell = cell.max(w * k);
        }
    }
    Ok(Rasterized { grid, collisions })
}

/// Voxel centres of local maxima above `threshold` within a
/// `(2·radius + 1)³` neighbourhood. On plateaus the voxel with the lowest
/// linear index wins.
pub fn extract_peaks(grid: &Grid3D, threshold: f64, radius: usize, frame: usize) -> LocalizationList {
    let v = &grid.values;
    let (depth, height, width) = v.dim();
    let r = radius as isize;
    let linear = |d: usize, i: usize, j: usize| (d * height + i) * width + j;
    let mut out = Vec::new();
    for ((d, i, j), &value) in v.indexed_iter() {
        if value <= threshold {
            continue;
        }
        let here = linear(d, i, j);
        let mut is_peak = true;
        'scan: for a in (d as isize - r).max(0)..=(d as isize + r).min(depth as isize - 1) {
            for b in (i as isize - r).max(0)..=(i as isize + r).min(height as isize - 1) {
                for c in (j as isize - r).max(0)..=(j as isize + r).min(width as isize - 1) {
                    let (a, b, c) = (a as usize, b as usize, c as usize);
                    let other = v[[a, b, c]];
                    if other > value || (other == value && linear(a, b, c) < here) {
                        is_peak = false;
                        break 'scan;
                    }
                }
            }
        }
        if is_peak {
            let (x, y, z) = grid.spec.voxel_center(d, i, j);
            out.push(Localization { frame, x, y, z, photons: value });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> GridSpec {
        GridSpec { voxel_xy: 27.5, voxel_z: 33.0, depth: 12, height: 20, width: 24, origin: [0.0, 0.0, -198.0] }
    }

    #[test]
    fn default_grid_covers_the_axial_range() {
        let spec = GridSpec::for_frame(&OpticalConfig::default(), 64, 64);
        assert_eq!(spec.dim(), (122, 256, 256));
        assert!(spec.depth as f64 * spec.voxel_z >= 4000.0);
        assert!(spec.voxel_of(10.0, 10.0, -2000.0).is_some());
        assert!(spec.voxel_of(10.0, 10.0, 2000.0).is_some());
    }

    #[test]
    fn impulse_at_voxel_centre() {
        let spec = small_spec();
        let (x, y, z) = spec.voxel_center(3, 5, 7);
        let r = positions_to_grid(&[Emitter::new(x, y, z, 100.0)], &spec, 0.0, GridWeight::Unit).unwrap();
        assert_eq!(r.grid.values.iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(r.grid.values[[3, 5, 7]], 1.0);
        assert!(r.collisions.is_empty());
    }

    #[test]
    fn collisions_sum_and_are_flagged() {
        let spec = small_spec();
        let (x, y, z) = spec.voxel_center(2, 2, 2);
        let emitters = [Emitter::new(x, y, z, 100.0), Emitter::new(x + 3.0, y - 2.0, z + 1.0, 50.0)];
        let r = positions_to_grid(&emitters, &spec, 0.0, GridWeight::Photons).unwrap();
        assert_eq!(r.grid.values[[2, 2, 2]], 150.0);
        assert_eq!(r.grid.values.iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(r.collisions, vec![(2, 2, 2)]);
    }

    #[test]
    fn out_of_extent_is_rejected_with_index() {
        let spec = small_spec();
        let emitters = [Emitter::new(10.0, 10.0, 0.0, 1.0), Emitter::new(10.0, 10.0, 500.0, 1.0)];
        match positions_to_grid(&emitters, &spec, 0.0, GridWeight::Unit) {
            Err(Error::OutOfBounds { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dilated_impulse_has_single_peak() {
        let spec = small_spec();
        let (x, y, z) = spec.voxel_center(6, 10, 11);
        let r = positions_to_grid(&[Emitter::new(x, y, z, 1.0)], &spec, 1.0, GridWeight::Unit).unwrap();
        assert_eq!(r.grid.values[[6, 10, 11]], 1.0);
        assert!((r.grid.values[[6, 10, 12]] - (-0.5f64).exp()).abs() < 1e-15);
        // truncated beyond 2σ
        assert_eq!(r.grid.values[[6, 10, 14]], 0.0);
        let peaks = extract_peaks(&r.grid, 0.1, 1, 0);
        assert_eq!(peaks.len(), 1);
        assert_eq!((peaks[0].x, peaks[0].y, peaks[0].z), (x, y, z));
    }

    #[test]
    fn empty_grid_has_no_peaks() {
        assert!(extract_peaks(&Grid3D::zeros(small_spec()), 0.1, 1, 0).is_empty());
    }

    #[test]
    fn plateau_resolves_to_lowest_index() {
        let spec = small_spec();
        let mut grid = Grid3D::zeros(spec);
        grid.values[[4, 4, 4]] = 1.0;
        grid.values[[4, 4, 5]] = 1.0;
        grid.values[[4, 5, 4]] = 1.0;
        let peaks = extract_peaks(&grid, 0.5, 1, 0);
        assert_eq!(peaks.len(), 1);
        let (x, y, z) = spec.voxel_center(4, 4, 4);
        assert_eq!((peaks[0].x, peaks[0].y, peaks[0].z), (x, y, z));
    }
}

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::mask::PhaseMask;
use super::psf::{CameraPatch, PsfModel};
use super::pupil::Pupil;
use crate::error::{Error, Result};

/// A point source: position in nm (x, y from the field-of-view corner, z from
/// nominal focus) and expected detected signal photons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Emitter {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub photons: f64,
}

impl Emitter {
    pub fn new(x: f64, y: f64, z: f64, photons: f64) -> Self {
        Self { x, y, z, photons }
    }
}

/// Camera image in photons per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub pixels: Array2<f64>,
    pub pixel_pitch: f64,
    pub background: f64,
}

impl Frame {
    pub fn zeros(height: usize, width: usize, pixel_pitch: f64) -> Self {
        Self { pixels: Array2::zeros((height, width)), pixel_pitch, background: 0.0 }
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn total(&self) -> f64 {
        self.pixels.sum()
    }

    /// Adds `scale × patch`, dropping the parts that fall outside the frame.
    pub fn add_patch(&mut self, patch: &CameraPatch, scale: f64) {
        let (h, w) = self.pixels.dim();
        for ((i, j), &v) in patch.values.indexed_iter() {
            let r = patch.row0 + i as isize;
            let c = patch.col0 + j as isize;
            if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
                self.pixels[[r as usize, c as usize]] += scale * v;
            }
        }
    }
}

pub(crate) fn check_emitters(emitters: &[Emitter], height: usize, width: usize, pixel: f64) -> Result<()> {
    let (xmax, ymax) = (width as f64 * pixel, height as f64 * pixel);
    for (index, e) in emitters.iter().enumerate() {
        let inside = e.x >= 0.0 && e.x < xmax && e.y >= 0.0 && e.y < ymax && e.z.is_finite();
        if !inside {
            return Err(Error::OutOfBounds {
                index,
                detail: format!("({}, {}, {}) nm in a {xmax}×{ymax} nm field", e.x, e.y, e.z),
            });
        }
        if !(e.photons > 0.0 && e.photons.is_finite()) {
            return Err(Error::config(format!("emitter {index} has photon count {}", e.photons)));
        }
    }
    Ok(())
}

/// Expected camera image of a set of emitters: each PSF is evaluated on the
/// hi-res grid, box-binned to camera pixels and accumulated in list order.
pub fn render_noiseless(
    pupil: &Pupil,
    mask: &PhaseMask,
    emitters: &[Emitter],
    height: usize,
    width: usize,
) -> Result<Frame> {
    let pixel = pupil.config().camera_pixel;
    check_emitters(emitters, height, width, pixel)?;
    let model = PsfModel::new(pupil, mask)?;
    let mut frame = Frame::zeros(height, width, pixel);
    for e in emitters {
        frame.add_patch(&model.patch(e.x, e.y, e.z), e.photons);
    }
    Ok(frame)
}

/// Gradient of a scalar loss with respect to the mask phase, given
/// `upstream = ∂L/∂frame` on the noiseless rendering of `emitters`.
pub fn mask_gradient(
    pupil: &Pupil,
    mask: &PhaseMask,
    emitters: &[Emitter],
    upstream: &Array2<f64>,
) -> Result<Array2<f64>> {
    let pixel = pupil.config().camera_pixel;
    let (h, w) = upstream.dim();
    check_emitters(emitters, h, w, pixel)?;
    let model = PsfModel::new(pupil, mask)?;
    let n = pupil.samples();
    let mut grad = Array2::zeros((n, n));
    for e in emitters {
        model.accumulate_mask_gradient(e.x, e.y, e.z, e.photons, upstream, &mut grad);
    }
    Ok(grad)
}

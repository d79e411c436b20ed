use std::f64::consts::PI;

use ndarray::{Array2, Zip};
use num_complex::Complex64;

use super::mask::PhaseMask;
use super::pupil::Pupil;
use crate::error::{Error, Result};

/// Unit-photon PSF binned to camera pixels, anchored at `(row0, col0)` in
/// frame coordinates. Parts of the patch may fall outside the frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPatch {
    pub row0: isize,
    pub col0: isize,
    pub values: Array2<f64>,
}

/// A camera patch together with its derivatives along x, y and z (per nm).
#[derive(Debug, Clone)]
pub struct PatchDerivatives {
    pub patch: CameraPatch,
    pub dx: Array2<f64>,
    pub dy: Array2<f64>,
    pub dz: Array2<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Window {
    pub row0: isize,
    pub col0: isize,
    /// Emitter-relative position of the first hi-res sample centre.
    pub start_x: f64,
    pub start_y: f64,
    pub hires: usize,
}

/// A pupil paired with a phase mask: the image formation model.
#[derive(Debug, Clone, Copy)]
pub struct PsfModel<'a> {
    pupil: &'a Pupil,
    mask: &'a PhaseMask,
}

impl<'a> PsfModel<'a> {
    pub fn new(pupil: &'a Pupil, mask: &'a PhaseMask) -> Result<Self> {
        if mask.samples() != pupil.samples() {
            return Err(Error::shape(format!(
                "mask has {} samples per side, pupil has {}",
                mask.samples(),
                pupil.samples()
            )));
        }
        Ok(Self { pupil, mask })
    }

    pub fn pupil(&self) -> &'a Pupil {
        self.pupil
    }

    pub fn mask(&self) -> &'a PhaseMask {
        self.mask
    }

    /// Full periodic hi-res plane for an emitter offset `(dx, dy)` from the
    /// plane origin at sample `(M/2, M/2)`.
    pub fn slice(&self, z: f64, dx: f64, dy: f64) -> Array2<f64> {
        let m = self.pupil.plane_samples();
        let p = self.pupil.image_pitch();
        let origin = -((m / 2) as f64) * p;
        let field = self.pupil.field_at(self.mask, z);
        let (e, _) = self.pupil.image_field(&field, origin - dx, origin - dy, m);
        intensity(&e, self.pupil.norm())
    }

    pub(crate) fn window(&self, x: f64, y: f64) -> Window {
        let cfg = self.pupil.config();
        let half = (cfg.psf_window / 2) as isize;
        let col0 = (x / cfg.camera_pixel).floor() as isize - half;
        let row0 = (y / cfg.camera_pixel).floor() as isize - half;
        self.anchored(x, y, row0, col0, cfg.psf_window)
    }

    pub(crate) fn anchored(&self, x: f64, y: f64, row0: isize, col0: isize, size: usize) -> Window {
        let cfg = self.pupil.config();
        let up = cfg.upsample_factor as isize;
        let p = cfg.hires_pitch();
        Window {
            row0,
            col0,
            start_x: ((col0 * up) as f64 + 0.5) * p - x,
            start_y: ((row0 * up) as f64 + 0.5) * p - y,
            hires: size * up as usize,
        }
    }

    /// Hi-res unit-photon intensity over the rendering window of an emitter,
    /// with the window origin in hi-res sample coordinates.
    pub fn hires_patch(&self, x: f64, y: f64, z: f64) -> (isize, isize, Array2<f64>) {
        let w = self.window(x, y);
        let field = self.pupil.field_at(self.mask, z);
        let (e, _) = self.pupil.image_field(&field, w.start_x, w.start_y, w.hires);
        let up = self.pupil.config().upsample_factor as isize;
        (w.row0 * up, w.col0 * up, intensity(&e, self.pupil.norm()))
    }

    /// Unit-photon camera image of an emitter at `(x, y, z)` over its
    /// rendering window (`psf_window` pixels centred on the emitter's pixel).
    pub fn patch(&self, x: f64, y: f64, z: f64) -> CameraPatch {
        self.patch_in(self.window(x, y), z)
    }

    /// Like [`patch`](Self::patch) but over a caller-chosen `size × size`
    /// pixel window anchored at `(row0, col0)`.
    pub fn patch_anchored(&self, x: f64, y: f64, z: f64, row0: isize, col0: isize, size: usize) -> CameraPatch {
        self.patch_in(self.anchored(x, y, row0, col0, size), z)
    }

    fn patch_in(&self, w: Window, z: f64) -> CameraPatch {
        let field = self.pupil.field_at(self.mask, z);
        let (e, _) = self.pupil.image_field(&field, w.start_x, w.start_y, w.hires);
        let up = self.pupil.config().upsample_factor;
        CameraPatch {
            row0: w.row0,
            col0: w.col0,
            values: bin(&intensity(&e, self.pupil.norm()), up),
        }
    }

    /// Camera patch plus analytic position derivatives, from pupil-domain
    /// multiplication by `2πi k`.
    pub fn patch_derivatives(&self, x: f64, y: f64, z: f64) -> PatchDerivatives {
        self.derivatives_in(self.window(x, y), z)
    }

    pub fn derivatives_anchored(
        &self,
        x: f64,
        y: f64,
        z: f64,
        row0: isize,
        col0: isize,
        size: usize,
    ) -> PatchDerivatives {
        self.derivatives_in(self.anchored(x, y, row0, col0, size), z)
    }

    fn derivatives_in(&self, w: Window, z: f64) -> PatchDerivatives {
        let pupil = self.pupil;
        let up = pupil.config().upsample_factor;
        let norm = pupil.norm();
        let field = pupil.field_at(self.mask, z);
        let ramped = pupil.ramped(&field, w.start_x, w.start_y);
        let e = pupil.transform(&ramped, w.hires);
        let k = pupil.frequencies();
        let kz = pupil.kz();
        let twopi_i = Complex64::new(0.0, 2.0 * PI);

        let derivative = |factor: &dyn Fn(usize, usize) -> f64| {
            let scaled = Array2::from_shape_fn(ramped.dim(), |(i, j)| {
                ramped[[i, j]] * twopi_i * factor(i, j)
            });
            let de = pupil.transform(&scaled, w.hires);
            let mut di = Array2::zeros(e.dim());
            Zip::from(&mut di).and(&e).and(&de).for_each(|d, &a, &b| {
                *d = 2.0 * (a.conj() * b).re * norm;
            });
            bin(&di, up)
        };
        // The field depends on u − x, so ∂/∂x picks up +2πi k_x.
        let dx = derivative(&|_, j| k[j]);
        let dy = derivative(&|i, _| k[i]);
        let dz = derivative(&|i, j| kz[[i, j]]);
        PatchDerivatives {
            patch: CameraPatch { row0: w.row0, col0: w.col0, values: bin(&intensity(&e, norm), up) },
            dx,
            dy,
            dz,
        }
    }

    /// Reverse-mode pass: accumulates `∂L/∂phase` for one emitter given the
    /// upstream gradient on the camera frame.
    pub(crate) fn accumulate_mask_gradient(
        &self,
        x: f64,
        y: f64,
        z: f64,
        photons: f64,
        upstream: &Array2<f64>,
        grad: &mut Array2<f64>,
    ) {
        let w = self.window(x, y);
        let pupil = self.pupil;
        let up = pupil.config().upsample_factor;
        let (rows, cols) = upstream.dim();
        let scale = photons * pupil.norm();

        // Skip emitters whose window misses every pixel with a nonzero upstream.
        let mut weights = Array2::<f64>::zeros((w.hires, w.hires));
        let mut any = false;
        for oy in 0..w.hires {
            let r = w.row0 + (oy / up) as isize;
            if r < 0 || r >= rows as isize {
                continue;
            }
            for ox in 0..w.hires {
                let c = w.col0 + (ox / up) as isize;
                if c < 0 || c >= cols as isize {
                    continue;
                }
                let g = upstream[[r as usize, c as usize]];
                if g != 0.0 {
                    weights[[oy, ox]] = g * scale;
                    any = true;
                }
            }
        }
        if !any {
            return;
        }

        let field = pupil.field_at(self.mask, z);
        let (e, ramped) = pupil.image_field(&field, w.start_x, w.start_y, w.hires);
        let weighted = Array2::from_shape_fn(e.dim(), |(i, j)| e[[i, j]].conj() * weights[[i, j]]);
        let table = pupil.dft_rows(w.hires);
        let back = table.t().dot(&weighted).dot(&table);
        let aperture = pupil.aperture();
        Zip::indexed(grad).for_each(|(i, j), g| {
            if aperture[[i, j]] {
                *g += -2.0 * (ramped[[i, j]] * back[[i, j]]).im;
            }
        });
    }
}

pub(crate) fn intensity(field: &Array2<Complex64>, norm: f64) -> Array2<f64> {
    field.mapv(|v| v.norm_sqr() * norm)
}

/// Sums `factor × factor` blocks.
pub fn bin(hires: &Array2<f64>, factor: usize) -> Array2<f64> {
    let (h, w) = hires.dim();
    let mut out = Array2::zeros((h / factor, w / factor));
    for ((i, j), &v) in hires.indexed_iter() {
        out[[i / factor, j / factor]] += v;
    }
    out
}

/// One hi-res slice of the PSF over the whole periodic image plane, for an
/// emitter at depth `z` shifted laterally by `(dx, dy)` nm.
///
/// Normalised so the flat-mask, in-focus slice sums to one; by Parseval every
/// slice of every mask sums to one as well.
pub fn psf_slice(pupil: &Pupil, mask: &PhaseMask, z: f64, dx: f64, dy: f64) -> Result<Array2<f64>> {
    Ok(PsfModel::new(pupil, mask)?.slice(z, dx, dy))
}

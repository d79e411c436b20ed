//! Scalar Fourier-optics image formation through a pupil-plane phase mask.
//!
//! The pupil is an N×N grid whose frequency step is tied to the hi-res image
//! pitch (`camera_pixel / upsample_factor`) so that the periodic image plane
//! has `M = ⌊N λ / (2 NA p)⌋` samples. Fields are evaluated with a separable
//! matrix DFT, which gives the same samples as a zero-padded FFT but lets a
//! rendering window cover only the pixels around one emitter.

mod config;
mod mask;
mod noise;
mod psf;
mod pupil;
mod render;
pub mod zernike;

pub use config::OpticalConfig;
pub use mask::PhaseMask;
pub use noise::{add_read_noise, apply_noise};
pub(crate) use noise::poisson;
pub use psf::{bin, psf_slice, CameraPatch, PatchDerivatives, PsfModel};
pub use pupil::{build_pupil, Pupil};
pub use render::{mask_gradient, render_noiseless, Emitter, Frame};
pub use zernike::zernike_mask;

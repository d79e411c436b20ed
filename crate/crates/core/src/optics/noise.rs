use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use super::render::Frame;
use crate::error::{Error, Result};

/// Samples `Poisson(frame + background)` per pixel in row-major order.
pub fn apply_noise(frame: &Frame, background: f64, seed: u64) -> Result<Frame> {
    if !(background >= 0.0 && background.is_finite()) {
        return Err(Error::config(format!("background must be nonnegative, got {background}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = frame.pixels.mapv(|mean| poisson(mean + background, &mut rng));
    Ok(Frame { pixels, pixel_pitch: frame.pixel_pitch, background })
}

/// Additive Gaussian read noise, clamped at zero. Off unless requested.
pub fn add_read_noise(frame: &Frame, sigma: f64, seed: u64) -> Result<Frame> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::config(format!("read noise must be nonnegative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(frame.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let pixels = frame.pixels.mapv(|v| (v + normal.sample(&mut rng)).max(0.0));
    Ok(Frame { pixels, ..frame.clone() })
}

pub(crate) fn poisson(mean: f64, rng: &mut ChaCha8Rng) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng)
}

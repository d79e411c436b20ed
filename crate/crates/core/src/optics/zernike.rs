//! Noll-indexed Zernike polynomials on the unit pupil.

use ndarray::Array2;

use super::mask::PhaseMask;
use super::pupil::Pupil;
use crate::error::{Error, Result};

/// Largest Noll index accepted by [`zernike_mask`].
pub const MAX_NOLL: usize = 231;

/// Radial order `n` and signed azimuthal frequency `m` of Noll index `j`.
pub fn noll_to_nm(j: usize) -> Result<(usize, i64)> {
    if j == 0 || j > MAX_NOLL {
        return Err(Error::UnknownZernike(j));
    }
    let mut n = 0usize;
    while (n + 1) * (n + 2) / 2 < j {
        n += 1;
    }
    let first = n * (n + 1) / 2 + 1;
    let offset = j - first;
    let start_m = n % 2;
    let m = start_m + 2 * ((offset + (1 - start_m)) / 2);
    let m = m as i64;
    let signed = if m == 0 {
        0
    } else if j % 2 == 0 {
        m
    } else {
        -m
    };
    Ok((n, signed))
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

fn radial(n: usize, m: usize, rho: f64) -> f64 {
    (0..=(n - m) / 2)
        .map(|s| {
            let sign = if s % 2 == 0 { 1.0 } else { -1.0 };
            sign * factorial(n - s)
                / (factorial(s) * factorial((n + m) / 2 - s) * factorial((n - m) / 2 - s))
                * rho.powi((n - 2 * s) as i32)
        })
        .sum()
}

/// RMS-normalised Zernike polynomial `Z_j(ρ, θ)`.
pub fn zernike(j: usize, rho: f64, theta: f64) -> Result<f64> {
    let (n, m) = noll_to_nm(j)?;
    let mabs = m.unsigned_abs() as usize;
    let r = radial(n, mabs, rho);
    Ok(if m == 0 {
        ((n + 1) as f64).sqrt() * r
    } else if m > 0 {
        (2.0 * (n + 1) as f64).sqrt() * r * (mabs as f64 * theta).cos()
    } else {
        (2.0 * (n + 1) as f64).sqrt() * r * (mabs as f64 * theta).sin()
    })
}

/// Sampled `Z_j` over the pupil grid, zero outside the aperture.
pub fn zernike_map(pupil: &Pupil, j: usize) -> Result<Array2<f64>> {
    noll_to_nm(j)?;
    let k = pupil.frequencies();
    let cutoff = pupil.cutoff();
    let aperture = pupil.aperture();
    let n = pupil.samples();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for c in 0..n {
            if aperture[[i, c]] {
                let (kx, ky) = (k[c], k[i]);
                let rho = (kx * kx + ky * ky).sqrt() / cutoff;
                out[[i, c]] = zernike(j, rho.min(1.0), ky.atan2(kx))?;
            }
        }
    }
    Ok(out)
}

/// Phase mask `Σ c_j Z_j` over the aperture.
pub fn zernike_mask(coefficients: &[(usize, f64)], pupil: &Pupil) -> Result<PhaseMask> {
    let n = pupil.samples();
    let mut phase = Array2::zeros((n, n));
    for &(j, c) in coefficients {
        let basis = zernike_map(pupil, j)?;
        phase.scaled_add(c, &basis);
    }
    PhaseMask::from_phase(pupil, phase)
}

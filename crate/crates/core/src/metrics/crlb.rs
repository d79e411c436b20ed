use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{PhaseMask, PsfModel, Pupil};

/// Central-difference steps for the Fisher matrix.
pub const POSITION_STEP_NM: f64 = 1.0;
pub const PHOTON_STEP: f64 = 1.0;

/// Relative size below which a Fisher diagonal or Cholesky pivot counts as zero.
const DEGENERACY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Derivatives {
    #[default]
    FiniteDifference,
    /// Pupil-domain derivatives (`2πi k` multiplication).
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CrlbOptions {
    pub derivatives: Derivatives,
    /// Estimate the background jointly instead of treating it as known.
    pub background_nuisance: bool,
}

/// Cramér–Rao standard-deviation bounds for one emitter at depth `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrlbReport {
    pub z: f64,
    pub photons: f64,
    pub background: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_z: f64,
    pub sigma_photons: f64,
    pub sigma_background: Option<f64>,
}

const NAMES: [&str; 5] = ["x", "y", "z", "photons", "background"];

/// Per-pixel expected counts and parameter derivatives for an emitter centred
/// in a `psf_window`-sized frame. Columns: x, y, z, photons, background.
pub(crate) fn model_jacobian(
    model: &PsfModel<'_>,
    z: f64,
    photons: f64,
    background: f64,
    derivatives: Derivatives,
) -> (Vec<f64>, Vec<[f64; 5]>) {
    let cfg = model.pupil().config();
    let half = (cfg.psf_window / 2) as f64;
    let center = (half + 0.5) * cfg.camera_pixel;
    let (x, y) = (center, center);

    let base = model.patch(x, y, z).values;
    let (dx, dy, dz) = match derivatives {
        Derivatives::Analytic => {
            let d = model.patch_derivatives(x, y, z);
            (d.dx, d.dy, d.dz)
        }
        Derivatives::FiniteDifference => {
            let h = POSITION_STEP_NM;
            let diff = |a: Array2<f64>, b: Array2<f64>| (a - b) / (2.0 * h);
            (
                diff(model.patch(x + h, y, z).values, model.patch(x - h, y, z).values),
                diff(model.patch(x, y + h, z).values, model.patch(x, y - h, z).values),
                diff(model.patch(x, y, z + h).values, model.patch(x, y, z - h).values),
            )
        }
    };
    let photon_derivative = |psf: f64| match derivatives {
        Derivatives::Analytic => psf,
        Derivatives::FiniteDifference => {
            let h = PHOTON_STEP;
            ((photons + h) * psf - (photons - h) * psf) / (2.0 * h)
        }
    };

    let mut mu = Vec::with_capacity(base.len());
    let mut jac = Vec::with_capacity(base.len());
    for (idx, &psf) in base.iter().enumerate() {
        let (i, j) = (idx / base.ncols(), idx % base.ncols());
        mu.push(photons * psf + background);
        jac.push([
            photons * dx[[i, j]],
            photons * dy[[i, j]],
            photons * dz[[i, j]],
            photon_derivative(psf),
            1.0,
        ]);
    }
    (mu, jac)
}

/// Poisson Fisher information `Σ_p ∂μ_p/∂θ_a ∂μ_p/∂θ_b / μ_p` over the
/// first `params` parameters of (x, y, z, photons, background).
pub fn fisher_matrix(
    model: &PsfModel<'_>,
    z: f64,
    photons: f64,
    background: f64,
    options: CrlbOptions,
) -> Vec<Vec<f64>> {
    let params = if options.background_nuisance { 5 } else { 4 };
    let (mu, jac) = model_jacobian(model, z, photons, background, options.derivatives);
    let mut fisher = vec![vec![0.0; params]; params];
    for (m, d) in mu.iter().zip(&jac) {
        if *m <= 0.0 {
            continue;
        }
        for a in 0..params {
            for b in a..params {
                fisher[a][b] += d[a] * d[b] / m;
            }
        }
    }
    for a in 0..params {
        for b in 0..a {
            fisher[a][b] = fisher[b][a];
        }
    }
    fisher
}

/// Inverse of a symmetric positive-definite Fisher matrix, or the name of
/// the first parameter found to be unidentifiable.
pub(crate) fn invert_fisher(fisher: &[Vec<f64>]) -> std::result::Result<Vec<Vec<f64>>, &'static str> {
    let n = fisher.len();
    let spatial_scale = (0..n.min(3)).map(|a| fisher[a][a]).fold(0.0f64, f64::max);
    for a in 0..n {
        let d = fisher[a][a];
        let scale = if a < 3 { spatial_scale } else { d.abs() };
        if !(d > DEGENERACY_TOLERANCE * scale) || !d.is_finite() {
            return Err(NAMES[a]);
        }
    }
    // Work on the unit-diagonal (correlation) form for conditioning.
    let s: Vec<f64> = (0..n).map(|a| fisher[a][a].sqrt()).collect();
    let c: Vec<Vec<f64>> =
        (0..n).map(|a| (0..n).map(|b| fisher[a][b] / (s[a] * s[b])).collect()).collect();

    // Cholesky c = L Lᵀ
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = c[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= DEGENERACY_TOLERANCE {
                    return Err(NAMES[i]);
                }
                l[i][i] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    // c⁻¹ = L⁻ᵀ L⁻¹
    let mut linv = vec![vec![0.0; n]; n];
    for i in 0..n {
        linv[i][i] = 1.0 / l[i][i];
        for j in 0..i {
            let mut sum = 0.0;
            for k in j..i {
                sum -= l[i][k] * linv[k][j];
            }
            linv[i][j] = sum / l[i][i];
        }
    }
    let mut inv = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in 0..n {
            let mut sum = 0.0;
            for k in a.max(b)..n {
                sum += linv[k][a] * linv[k][b];
            }
            inv[a][b] = sum / (s[a] * s[b]);
        }
    }
    Ok(inv)
}

/// CRLB with the default protocol: central differences, known background.
pub fn crlb(pupil: &Pupil, mask: &PhaseMask, z: f64, photons: f64, background: f64) -> Result<CrlbReport> {
    crlb_with(pupil, mask, z, photons, background, CrlbOptions::default())
}

pub fn crlb_with(
    pupil: &Pupil,
    mask: &PhaseMask,
    z: f64,
    photons: f64,
    background: f64,
    options: CrlbOptions,
) -> Result<CrlbReport> {
    if !(photons > 0.0 && photons.is_finite()) {
        return Err(Error::config(format!("photons must be positive, got {photons}")));
    }
    if !(background >= 0.0 && background.is_finite()) {
        return Err(Error::config(format!("background must be nonnegative, got {background}")));
    }
    let model = PsfModel::new(pupil, mask)?;
    let fisher = fisher_matrix(&model, z, photons, background, options);
    let inv = invert_fisher(&fisher).map_err(|param| Error::SingularFisher { param })?;
    Ok(CrlbReport {
        z,
        photons,
        background,
        sigma_x: inv[0][0].sqrt(),
        sigma_y: inv[1][1].sqrt(),
        sigma_z: inv[2][2].sqrt(),
        sigma_photons: inv[3][3].sqrt(),
        sigma_background: options.background_nuisance.then(|| inv[4][4].sqrt()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_a_known_matrix() {
        let m = vec![vec![4.0, 1.0, 0.0, 0.0], vec![1.0, 3.0, 0.0, 0.0], vec![0.0, 0.0, 2.0, 0.5], vec![
            0.0, 0.0, 0.5, 1.0,
        ]];
        let inv = invert_fisher(&m).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let prod: f64 = (0..4).map(|k| m[a][k] * inv[k][b]).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((prod - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn names_the_degenerate_parameter() {
        let m = vec![vec![4.0, 0.0, 0.0, 0.0], vec![0.0, 4.0, 0.0, 0.0], vec![0.0, 0.0, 1e-20, 0.0], vec![
            0.0, 0.0, 0.0, 1.0,
        ]];
        assert_eq!(invert_fisher(&m), Err("z"));
    }
}

use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::raw;
use crate::optics::{OpticalConfig, PhaseMask, PsfModel, Pupil};

/// Axial spacing of the template lattice (nm).
pub const DEFAULT_AXIAL_STEP: f64 = 100.0;

const DICTIONARY_VERSION: u32 = 1;

/// PSF templates on a coarse 3D lattice (every camera pixel laterally,
/// every `axial_step` nm axially), prepared for FFT cross-correlation with
/// frames of one fixed size.
pub struct Dictionary {
    pupil: Pupil,
    mask: PhaseMask,
    z_lattice: Vec<f64>,
    /// Unit-photon templates, emitter at the centre pixel of each window.
    templates: Vec<Array2<f64>>,
    norms: Vec<f64>,
    /// Fraction of each normalised template's energy that lands inside the
    /// frame when centred on a given pixel.
    coverage: Vec<Array2<f64>>,
    height: usize,
    width: usize,
    correlator: Correlator,
}

/// Best lattice match for the current residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub row: usize,
    pub col: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub photons: f64,
    /// Matched-filter output against the ℓ2-normalised in-frame part of the template.
    pub score: f64,
}

impl Dictionary {
    pub fn new(pupil: &Pupil, mask: &PhaseMask, height: usize, width: usize, axial_step: f64) -> Result<Self> {
        if !(axial_step > 0.0) {
            return Err(Error::config("axial lattice step must be positive"));
        }
        let model = PsfModel::new(pupil, mask)?;
        let cfg = pupil.config();
        let half_range = cfg.axial_range / 2.0;
        let steps = (cfg.axial_range / axial_step).round() as usize;
        let z_lattice: Vec<f64> = (0..=steps).map(|k| (-half_range + k as f64 * axial_step).min(half_range)).collect();
        let center = (cfg.psf_window / 2) as f64 + 0.5;
        let templates: Vec<Array2<f64>> = z_lattice
            .iter()
            .map(|&z| model.patch(center * cfg.camera_pixel, center * cfg.camera_pixel, z).values)
            .collect();
        Self::from_templates(pupil, mask, z_lattice, templates, height, width)
    }

    fn from_templates(
        pupil: &Pupil,
        mask: &PhaseMask,
        z_lattice: Vec<f64>,
        templates: Vec<Array2<f64>>,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::config("dictionary frame size must be nonzero"));
        }
        let norms: Vec<f64> = templates.iter().map(|t| t.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        let normalized: Vec<Array2<f64>> = templates.iter().zip(&norms).map(|(t, n)| t / *n).collect();
        let window = pupil.config().psf_window;
        let correlator = Correlator::new(height, width, window, &normalized);
        let coverage = normalized.iter().map(|t| coverage(t, height, width)).collect();
        Ok(Self {
            pupil: pupil.clone(),
            mask: mask.clone(),
            z_lattice,
            templates,
            norms,
            coverage,
            height,
            width,
            correlator,
        })
    }

    pub fn model(&self) -> PsfModel<'_> {
        PsfModel::new(&self.pupil, &self.mask).expect("validated at construction")
    }

    pub fn pupil(&self) -> &Pupil {
        &self.pupil
    }

    pub fn mask(&self) -> &PhaseMask {
        &self.mask
    }

    pub fn z_lattice(&self) -> &[f64] {
        &self.z_lattice
    }

    pub fn templates(&self) -> &[Array2<f64>] {
        &self.templates
    }

    pub fn frame_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Matched-filter scores of a (background-subtracted, clamped) residual
    /// against every template: `scores[z][[row, col]]`.
    pub fn correlate(&self, residual: &Array2<f64>) -> Vec<Array2<f64>> {
        self.correlator.correlate(residual)
    }

    /// Lattice point with the largest normalised correlation.
    ///
    /// The residual is reduced by `background` and clamped at zero first.
    /// Near the border each template is renormalised to the part that falls
    /// inside the frame, so truncated emitters are scored and sized without bias.
    pub fn detect(&self, residual: &Array2<f64>, background: f64) -> Result<Candidate> {
        if residual.dim() != (self.height, self.width) {
            return Err(Error::shape(format!(
                "residual {:?} does not match dictionary frame {:?}",
                residual.dim(),
                (self.height, self.width)
            )));
        }
        let clamped = residual.mapv(|v| (v - background).max(0.0));
        let scores = self.correlate(&clamped);
        let mut best = (f64::NEG_INFINITY, 0, 0, 0);
        for (k, (s, cov)) in scores.iter().zip(&self.coverage).enumerate() {
            for (((r, c), &v), &f) in s.indexed_iter().zip(cov.iter()) {
                let v = v / f.sqrt();
                if v > best.0 {
                    best = (v, k, r, c);
                }
            }
        }
        let (score, k, row, col) = best;
        let cov = self.coverage[k][[row, col]];
        let pixel = self.pupil.config().camera_pixel;
        Ok(Candidate {
            row,
            col,
            x: (col as f64 + 0.5) * pixel,
            y: (row as f64 + 0.5) * pixel,
            z: self.z_lattice[k],
            photons: score / (cov.sqrt() * self.norms[k]),
            score,
        })
    }

    /// Writes the templates as raw little-endian f64 plus a JSON manifest.
    pub fn save(&self, path: &Path) -> Result<()> {
        let flat: Vec<f64> = self.templates.iter().flat_map(|t| t.iter().copied()).collect();
        let bytes = raw::f64_to_le_bytes(&flat);
        let manifest = DictionaryManifest {
            version: DICTIONARY_VERSION,
            optics: self.pupil.config().clone(),
            z_lattice: self.z_lattice.clone(),
            window: self.pupil.config().psf_window,
            mask_sha256: raw::sha256_hex(&raw::f64_to_le_bytes(self.mask.phase().as_slice().unwrap())),
            sha256: raw::sha256_hex(&bytes),
        };
        fs::write(path, &bytes)?;
        fs::write(raw::sidecar_path(path), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    /// Loads cached templates; refuses a cache built for different optics or mask.
    pub fn load(path: &Path, pupil: &Pupil, mask: &PhaseMask, height: usize, width: usize) -> Result<Self> {
        let sidecar = raw::sidecar_path(path);
        let manifest: DictionaryManifest = serde_json::from_str(&fs::read_to_string(&sidecar)?)?;
        raw::check_version(&sidecar, DICTIONARY_VERSION, manifest.version)?;
        if &manifest.optics != pupil.config() {
            return Err(Error::config("dictionary cache was built for different optics"));
        }
        let mask_sha = raw::sha256_hex(&raw::f64_to_le_bytes(mask.phase().as_slice().unwrap()));
        if manifest.mask_sha256 != mask_sha {
            return Err(Error::config("dictionary cache was built for a different mask"));
        }
        let bytes = raw::read_checked(path, &manifest.sha256)?;
        let w = manifest.window;
        let values = raw::f64_from_le_bytes(path, &bytes, manifest.z_lattice.len() * w * w)?;
        let templates = values
            .chunks_exact(w * w)
            .map(|c| Array2::from_shape_vec((w, w), c.to_vec()).unwrap())
            .collect();
        Self::from_templates(pupil, mask, manifest.z_lattice, templates, height, width)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DictionaryManifest {
    version: u32,
    optics: OpticalConfig,
    z_lattice: Vec<f64>,
    window: usize,
    mask_sha256: String,
    sha256: String,
}

/// Smallest in-frame energy fraction used for renormalisation.
const MIN_COVERAGE: f64 = 1e-3;

/// In-frame energy fraction of a unit-norm `w × w` template centred on each
/// pixel of a `height × width` frame, from 2D prefix sums of its square.
fn coverage(t: &Array2<f64>, height: usize, width: usize) -> Array2<f64> {
    let w = t.nrows();
    let half = w / 2;
    let mut prefix = Array2::<f64>::zeros((w + 1, w + 1));
    for i in 0..w {
        for j in 0..w {
            prefix[[i + 1, j + 1]] = t[[i, j]] * t[[i, j]] + prefix[[i, j + 1]] + prefix[[i + 1, j]] - prefix[[i, j]];
        }
    }
    // Template row a sits on frame row r + a − half.
    let span = |p: usize, n: usize| (half.saturating_sub(p), (n + half - p).min(w));
    Array2::from_shape_fn((height, width), |(r, c)| {
        let (r0, r1) = span(r, height);
        let (c0, c1) = span(c, width);
        let e = prefix[[r1, c1]] - prefix[[r0, c1]] - prefix[[r1, c0]] + prefix[[r0, c0]];
        e.max(MIN_COVERAGE)
    })
}

fn fast_size(min: usize) -> usize {
    (min..)
        .find(|&n| {
            let mut m = n;
            for p in [2, 3, 5] {
                while m % p == 0 {
                    m /= p;
                }
            }
            m == 1
        })
        .unwrap()
}

/// Zero-padded FFT cross-correlation against a fixed template bank.
struct Correlator {
    height: usize,
    width: usize,
    half: usize,
    rows: usize,
    cols: usize,
    row_fft: Arc<dyn Fft<f64>>,
    col_fft: Arc<dyn Fft<f64>>,
    row_ifft: Arc<dyn Fft<f64>>,
    col_ifft: Arc<dyn Fft<f64>>,
    spectra: Vec<Vec<Complex64>>,
}

impl Correlator {
    fn new(height: usize, width: usize, window: usize, templates: &[Array2<f64>]) -> Self {
        let rows = fast_size(height + window - 1);
        let cols = fast_size(width + window - 1);
        let mut planner = FftPlanner::new();
        let mut c = Self {
            height,
            width,
            half: window / 2,
            rows,
            cols,
            row_fft: planner.plan_fft_forward(cols),
            col_fft: planner.plan_fft_forward(rows),
            row_ifft: planner.plan_fft_inverse(cols),
            col_ifft: planner.plan_fft_inverse(rows),
            spectra: Vec::new(),
        };
        c.spectra = templates.iter().map(|t| c.forward(t)).collect();
        c
    }

    fn forward(&self, data: &Array2<f64>) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.rows * self.cols];
        for ((r, col), &v) in data.indexed_iter() {
            buf[r * self.cols + col] = Complex64::new(v, 0.0);
        }
        self.transform(&mut buf, &self.row_fft, &self.col_fft);
        buf
    }

    fn transform(&self, buf: &mut [Complex64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        row.process(buf);
        let mut t = vec![Complex64::new(0.0, 0.0); buf.len()];
        transpose(buf, &mut t, self.rows, self.cols);
        col.process(&mut t);
        transpose(&t, buf, self.cols, self.rows);
    }

    fn correlate(&self, residual: &Array2<f64>) -> Vec<Array2<f64>> {
        let spectrum = self.forward(residual);
        let scale = 1.0 / (self.rows * self.cols) as f64;
        self.spectra
            .iter()
            .map(|t| {
                let mut prod: Vec<Complex64> = spectrum.iter().zip(t).map(|(a, b)| a * b.conj()).collect();
                self.transform(&mut prod, &self.row_ifft, &self.col_ifft);
                // C(u) = Σ_q r(q + u) t(q); pixel c scores at u = c − half.
                Array2::from_shape_fn((self.height, self.width), |(r, c)| {
                    let ur = (r + self.rows - self.half) % self.rows;
                    let uc = (c + self.cols - self.half) % self.cols;
                    prod[ur * self.cols + uc].re * scale
                })
            })
            .collect()
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

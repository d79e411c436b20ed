//! Synthetic emitter scenes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::Emitter;

/// Attempts per emitter before a min-separation constraint is declared infeasible.
const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    Uniform,
    Ellipsoid,
    Nucleus,
    DensitySweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PhotonDist {
    Fixed { photons: f64 },
    LogUniform { min: f64, max: f64 },
}

impl PhotonDist {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            PhotonDist::Fixed { photons } => photons,
            PhotonDist::LogUniform { min, max } if min == max => min,
            PhotonDist::LogUniform { min, max } => rng.random_range(min.ln()..max.ln()).exp(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            PhotonDist::Fixed { photons } => photons > 0.0 && photons.is_finite(),
            PhotonDist::LogUniform { min, max } => min > 0.0 && max >= min && max.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid photon distribution {self:?}")))
        }
    }

    fn contains(&self, photons: f64) -> bool {
        match *self {
            PhotonDist::Fixed { photons: p } => photons == p,
            PhotonDist::LogUniform { min, max } => photons >= min && photons <= max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub kind: SceneKind,
    /// Field of view (width, height) in µm; emitters have x, y in [0, fov).
    pub fov_um: [f64; 2],
    /// Emitters have z in [−range/2, range/2] nm.
    pub axial_range_nm: f64,
    pub count: Option<usize>,
    /// Emitters per µm².
    pub density: Option<f64>,
    pub photons: PhotonDist,
    /// Photons per pixel.
    pub background: f64,
    pub min_separation_nm: f64,
    pub seed: u64,
    /// Ellipsoid semi-axes (nm), for [`SceneKind::Ellipsoid`].
    pub semi_axes_nm: Option<[f64; 3]>,
    /// Lateral disc diameter (µm), for [`SceneKind::Nucleus`].
    pub disc_diameter_um: Option<f64>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            kind: SceneKind::Uniform,
            fov_um: [13.0, 13.0],
            axial_range_nm: 4000.0,
            count: Some(1),
            density: None,
            photons: PhotonDist::Fixed { photons: 30000.0 },
            background: 150.0,
            min_separation_nm: 0.0,
            seed: 0,
            semi_axes_nm: None,
            disc_diameter_um: None,
        }
    }
}

impl SceneSpec {
    /// Telomere-like scene: 62 emitters in a 20 µm disc over 3 µm axially.
    pub fn nucleus() -> Self {
        Self {
            kind: SceneKind::Nucleus,
            fov_um: [20.0, 20.0],
            axial_range_nm: 3000.0,
            count: Some(62),
            photons: PhotonDist::LogUniform { min: 20000.0, max: 40000.0 },
            min_separation_nm: 400.0,
            disc_diameter_um: Some(20.0),
            ..Self::default()
        }
    }

    pub fn area_um2(&self) -> f64 {
        self.fov_um[0] * self.fov_um[1]
    }

    /// Emitter count, from `count` or `density × area`.
    pub fn emitter_count(&self) -> Result<usize> {
        match (self.count, self.density) {
            (Some(n), _) => Ok(n),
            (None, Some(d)) => Ok((d * self.area_um2()).round() as usize),
            (None, None) => Err(Error::config("scene needs an emitter count or a density")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [w, h] = self.fov_um;
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
            return Err(Error::config("field of view must be positive"));
        }
        if !(self.axial_range_nm >= 0.0 && self.axial_range_nm.is_finite()) {
            return Err(Error::config("axial range must be non-negative"));
        }
        if !(self.min_separation_nm >= 0.0 && self.min_separation_nm.is_finite()) {
            return Err(Error::config("min separation must be non-negative"));
        }
        if !(self.background >= 0.0 && self.background.is_finite()) {
            return Err(Error::config("background must be non-negative"));
        }
        if let (Some(n), Some(d)) = (self.count, self.density) {
            if ((d * self.area_um2()).round() as usize) != n {
                return Err(Error::config(format!(
                    "density {d}/µm² over {} µm² is inconsistent with count {n}",
                    self.area_um2()
                )));
            }
        }
        self.photons.validate()?;
        self.emitter_count()?;
        Ok(())
    }

    /// Post-hoc check that generated emitters satisfy this spec.
    pub fn check(&self, emitters: &[Emitter]) -> Result<()> {
        let (w, h) = (self.fov_um[0] * 1000.0, self.fov_um[1] * 1000.0);
        let half = self.axial_range_nm / 2.0;
        for (i, e) in emitters.iter().enumerate() {
            let inside = e.x >= 0.0 && e.x < w && e.y >= 0.0 && e.y < h && e.z.abs() <= half;
            if !inside || !self.photons.contains(e.photons) {
                return Err(Error::OutOfBounds { index: i, detail: format!("{e:?} violates the scene spec") });
            }
        }
        if self.min_separation_nm > 0.0 {
            for i in 0..emitters.len() {
                for j in 0..i {
                    if distance(&emitters[i], &emitters[j]) < self.min_separation_nm {
                        return Err(Error::Infeasible(format!("emitters {j} and {i} closer than min separation")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Same spec with the seed advanced for frame `index`.
    pub fn for_frame(&self, index: usize) -> Self {
        let mut s = self.clone();
        s.seed = frame_seed(self.seed, index);
        s
    }
}

/// Seed of frame `index` within a dataset seeded with `seed`.
pub fn frame_seed(seed: u64, index: usize) -> u64 {
    // SplitMix64 finaliser, so neighbouring frames get unrelated streams.
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn distance(a: &Emitter, b: &Emitter) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt()
}

/// Draws `count` points from `draw`, rejecting any closer than `min_sep` to
/// an accepted one.
fn place(
    count: usize,
    min_sep: f64,
    rng: &mut ChaCha8Rng,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> Emitter,
) -> Result<Vec<Emitter>> {
    let mut out: Vec<Emitter> = Vec::with_capacity(count);
    while out.len() < count {
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS {
            let e = draw(rng);
            if min_sep == 0.0 || out.iter().all(|o| distance(o, &e) >= min_sep) {
                out.push(e);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Infeasible(format!(
                "could not place emitter {} of {count} at {min_sep} nm separation after {MAX_ATTEMPTS} attempts",
                out.len() + 1
            )));
        }
    }
    Ok(out)
}

/// Emitters uniform over the field of view and axial range.
pub fn gen_uniform(spec: &SceneSpec) -> Result<Vec<Emitter>> {
    spec.validate()?;
    let count = spec.emitter_count()?;
    let (w, h) = (spec.fov_um[0] * 1000.0, spec.fov_um[1] * 1000.0);
    let half = spec.axial_range_nm / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    place(count, spec.min_separation_nm, &mut rng, |rng| {
        let x = rng.random_range(0.0..w);
        let y = rng.random_range(0.0..h);
        let z = if half > 0.0 { rng.random_range(-half..=half) } else { 0.0 };
        Emitter::new(x, y, z, spec.photons.sample(rng))
    })
}

/// Area-uniform points on an ellipsoid centred in the field of view at z = 0.
pub fn gen_ellipsoid(semi_axes: [f64; 3], count: usize, spec: &SceneSpec) -> Result<Vec<Emitter>> {
    spec.photons.validate()?;
    let [a, b, c] = semi_axes;
    let (w, h) = (spec.fov_um[0] * 1000.0, spec.fov_um[1] * 1000.0);
    if !(a > 0.0 && b > 0.0 && c > 0.0) {
        return Err(Error::config("ellipsoid semi-axes must be positive"));
    }
    if 2.0 * a >= w || 2.0 * b >= h || 2.0 * c > spec.axial_range_nm {
        return Err(Error::config(format!(
            "ellipsoid {semi_axes:?} nm exceeds the {w}×{h} nm field or {} nm axial range",
            spec.axial_range_nm
        )));
    }
    let (cx, cy) = (w / 2.0, h / 2.0);
    let g_max = (a * b).max(b * c).max(a * c);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let u: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let norm = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
        if norm == 0.0 {
            continue;
        }
        let u = u.map(|v| v / norm);
        // Surface element of the radial map from the unit sphere.
        let g = ((b * c * u[0]).powi(2) + (a * c * u[1]).powi(2) + (a * b * u[2]).powi(2)).sqrt();
        if rng.random::<f64>() * g_max < g {
            out.push(Emitter::new(cx + a * u[0], cy + b * u[1], c * u[2], spec.photons.sample(&mut rng)));
        }
    }
    Ok(out)
}

/// Emitters uniform in a disc laterally (centred in the field of view) and
/// over the axial range, under the spec's min separation.
pub fn gen_nucleus(spec: &SceneSpec) -> Result<Vec<Emitter>> {
    spec.validate()?;
    let count = spec.emitter_count()?;
    let diameter = spec.disc_diameter_um.unwrap_or(20.0) * 1000.0;
    let (w, h) = (spec.fov_um[0] * 1000.0, spec.fov_um[1] * 1000.0);
    if diameter > w.min(h) {
        return Err(Error::config(format!("disc of {diameter} nm exceeds the field of view")));
    }
    // Keep the disc strictly inside [0, fov).
    let r = diameter / 2.0 * (1.0 - 1e-9);
    let (cx, cy) = (w / 2.0, h / 2.0);
    let half = spec.axial_range_nm / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    place(count, spec.min_separation_nm, &mut rng, |rng| {
        let rho = r * rng.random::<f64>().sqrt();
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let z = if half > 0.0 { rng.random_range(-half..=half) } else { 0.0 };
        Emitter::new(cx + rho * theta.cos(), cy + rho * theta.sin(), z, spec.photons.sample(rng))
    })
}

/// Emitter counts log-spaced from `min` to `max` over `levels` steps.
pub fn density_sweep_counts(min: usize, max: usize, levels: usize) -> Vec<usize> {
    if levels <= 1 {
        return vec![min];
    }
    let (lo, hi) = ((min as f64).ln(), (max as f64).ln());
    (0..levels)
        .map(|k| (lo + (hi - lo) * k as f64 / (levels - 1) as f64).exp().round() as usize)
        .collect()
}

/// Generates one frame's emitters for any scene kind.
pub fn generate(spec: &SceneSpec) -> Result<Vec<Emitter>> {
    match spec.kind {
        SceneKind::Uniform | SceneKind::DensitySweep => gen_uniform(spec),
        SceneKind::Nucleus => gen_nucleus(spec),
        SceneKind::Ellipsoid => {
            let axes = spec.semi_axes_nm.ok_or_else(|| Error::config("ellipsoid scene needs semi_axes_nm"))?;
            gen_ellipsoid(axes, spec.emitter_count()?, spec)
        }
    }
}

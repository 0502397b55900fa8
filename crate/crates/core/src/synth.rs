//! Synthetic road scenes with exact ground truth.
//!
//! A scene is a positive disparity plane with elliptical depressions
//! subtracted, optional Gaussian noise, and optional invalidated pixels.
//! Because the generator and the transformation share one plane evaluator,
//! fitting a noiseless generated scene closes the loop to machine precision,
//! which makes these scenes the oracle for the whole pipeline.
//!
//! Randomness is a single ChaCha stream per scene, consumed in a frozen
//! order: Gaussian noise per pixel in row-major order (only when
//! `noise_sigma > 0`), then the invalidation shuffle (only when
//! `invalid_fraction > 0`). Changing that order would silently re-key every
//! regression artifact, so don't.

use crate::disparity::DisparityImage;
use crate::error::{Error, Result};
use crate::io::RawRaster;
use crate::mask::{Ellipse, LabelMask};
use crate::rng::{self, SeededRng};
use crate::transform::{plane_value, RoadModel};

use rand::RngCore as _;

// ── Scene specification ────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthProfile {
    /// Constant depth over the whole region; exact-value tests use this.
    Flat,
    /// Depth d·(1 − ρ²): full depth at the center, zero at the boundary.
    Paraboloid,
}

impl DepthProfile {
    pub fn as_str(self) -> &'static str {
        match self {
            DepthProfile::Flat => "flat",
            DepthProfile::Paraboloid => "paraboloid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(DepthProfile::Flat),
            "paraboloid" => Ok(DepthProfile::Paraboloid),
            other => Err(Error::BadScene(format!("unknown profile {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotholeSpec {
    pub region: Ellipse,
    /// Peak depth d > 0, disparity units.
    pub depth: f64,
    pub profile: DepthProfile,
}

impl PotholeSpec {
    /// Depression at (u, v); zero outside the region.
    pub fn depression(&self, u: f64, v: f64) -> f64 {
        let rho_sq = self.region.radius_sq(u, v);
        if rho_sq > 1.0 {
            return 0.0;
        }
        match self.profile {
            DepthProfile::Flat => self.depth,
            DepthProfile::Paraboloid => self.depth * (1.0 - rho_sq),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub phi: f64,
    pub varkappa: f64,
    pub kappa: f64,
    pub potholes: Vec<PotholeSpec>,
    pub noise_sigma: f64,
    pub invalid_fraction: f64,
    pub seed: u64,
}

impl SceneSpec {
    /// Checks that the noiseless scene is a legal disparity image: the plane
    /// is positive over the frame and no pothole digs below zero.
    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::BadScene(format!(
                "frame {}x{} too small",
                self.width, self.height
            )));
        }
        if !self.phi.is_finite() || self.phi.abs() >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::BadScene(format!("phi {} out of range", self.phi)));
        }
        if !(self.varkappa.is_finite() && self.varkappa > 0.0) {
            return Err(Error::BadScene(format!("varkappa {}", self.varkappa)));
        }
        if !self.kappa.is_finite() {
            return Err(Error::BadScene(format!("kappa {}", self.kappa)));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::BadScene(format!("noise sigma {}", self.noise_sigma)));
        }
        if !(0.0..1.0).contains(&self.invalid_fraction) {
            return Err(Error::BadScene(format!(
                "invalid fraction {}",
                self.invalid_fraction
            )));
        }
        // The plane is linear in (u, v), so frame corners bound it.
        let (s, c) = self.phi.sin_cos();
        let (umax, vmax) = ((self.width - 1) as f64, (self.height - 1) as f64);
        let corners = [(0.0, 0.0), (umax, 0.0), (0.0, vmax), (umax, vmax)];
        let plane_min = corners
            .iter()
            .map(|&(u, v)| plane_value(c, s, self.varkappa, self.kappa, u, v))
            .fold(f64::INFINITY, f64::min);
        if plane_min <= 0.0 {
            return Err(Error::BadScene(format!(
                "plane reaches {plane_min} inside the frame"
            )));
        }
        for (i, p) in self.potholes.iter().enumerate() {
            if !(p.depth.is_finite() && p.depth > 0.0) {
                return Err(Error::BadScene(format!("pothole {i} depth {}", p.depth)));
            }
            if !(p.region.semi_a > 0.0 && p.region.semi_b > 0.0) {
                return Err(Error::BadScene(format!("pothole {i} has empty axes")));
            }
            // Conservative: the plane minimum over the region's bbox corners
            // must leave room for the full peak depth.
            let (u0, v0, u1, v1) = p.region.clipped_bbox(self.width, self.height);
            let region_min = [(u0, v0), (u1, v0), (u0, v1), (u1, v1)]
                .iter()
                .map(|&(u, v)| plane_value(c, s, self.varkappa, self.kappa, u as f64, v as f64))
                .fold(f64::INFINITY, f64::min);
            if region_min - p.depth < 0.0 {
                return Err(Error::BadScene(format!(
                    "pothole {i} depth {} digs below zero (plane {region_min})",
                    p.depth
                )));
            }
        }
        Ok(())
    }
}

// ── Generation ─────────────────────────────────────────────────────────────

/// Build the scene: plane minus depressions, plus noise, minus invalidated
/// pixels. Returns the image, the exact pothole mask (depression > 0), and
/// the ground-truth model whose Λ is the largest peak depth — so that
/// transforming with it pins the deepest pothole center at 0.
pub fn generate(spec: &SceneSpec) -> Result<(DisparityImage, LabelMask, RoadModel)> {
    spec.validate()?;
    let (s, c) = spec.phi.sin_cos();
    let (w, h) = (spec.width, spec.height);

    let mut values = Vec::with_capacity(w * h);
    let mut mask = LabelMask::empty(w, h);
    for v in 0..h {
        for u in 0..w {
            let (uf, vf) = (u as f64, v as f64);
            // Overlapping potholes take the deepest depression, not the sum.
            let depression = spec
                .potholes
                .iter()
                .map(|p| p.depression(uf, vf))
                .fold(0.0f64, f64::max);
            if depression > 0.0 {
                mask.set(u, v, true);
            }
            values.push(plane_value(c, s, spec.varkappa, spec.kappa, uf, vf) - depression);
        }
    }

    let mut r = rng::seeded(spec.seed);
    if spec.noise_sigma > 0.0 {
        let mut normal = rng::Normal::new();
        for value in values.iter_mut() {
            *value += spec.noise_sigma * normal.sample(&mut r);
        }
    }
    if spec.invalid_fraction > 0.0 {
        let n = w * h;
        let n_invalid = (spec.invalid_fraction * n as f64).floor() as usize;
        let mut indices: Vec<usize> = (0..n).collect();
        for i in 0..n_invalid {
            let j = rng::uniform_usize(&mut r, i, n - 1);
            indices.swap(i, j);
        }
        for &i in &indices[..n_invalid] {
            values[i] = f64::NAN;
        }
    }

    let lambda = spec.potholes.iter().map(|p| p.depth).fold(0.0f64, f64::max);
    let model = RoadModel {
        phi: spec.phi,
        varkappa: spec.varkappa,
        kappa: spec.kappa,
        lambda,
    };
    Ok((DisparityImage::new(w, h, values)?, mask, model))
}

/// Deterministic gray-texture stand-in for the RGB channel of a dataset
/// triplet: seeded speckle around a mid gray, pothole pixels darkened by a
/// fixed factor.
pub fn generate_rgb_standin(
    disp: &DisparityImage,
    mask: &LabelMask,
    seed: u64,
) -> Result<RawRaster> {
    if disp.width() != mask.width() || disp.height() != mask.height() {
        return Err(Error::ShapeMismatch {
            left_width: disp.width(),
            left_height: disp.height(),
            right_width: mask.width(),
            right_height: mask.height(),
        });
    }
    let mut r = rng::seeded(seed);
    let mut data = Vec::with_capacity(disp.width() * disp.height());
    for v in 0..disp.height() {
        for u in 0..disp.width() {
            let texture = 150.0 + rng::uniform_in(&mut r, -20.0, 20.0);
            let shade = if mask.get(u, v) { 0.6 } else { 1.0 };
            data.push((texture * shade).round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(RawRaster::Gray8 {
        width: disp.width(),
        height: disp.height(),
        data,
    })
}

// ── Scene-line format ──────────────────────────────────────────────────────

/// One scene per line as whitespace-separated `key=value` pairs. `seed` is
/// mandatory; everything else falls back to defaults. Potholes repeat as
/// `pothole=cu:cv:a:b:rot:depth:profile`.
impl SceneSpec {
    pub fn parse_line(line: &str) -> Result<Self> {
        let mut spec = SceneSpec {
            width: 640,
            height: 480,
            phi: 0.0,
            varkappa: 1.0,
            kappa: 30.0,
            potholes: Vec::new(),
            noise_sigma: 0.0,
            invalid_fraction: 0.0,
            seed: 0,
        };
        let mut saw_seed = false;
        for token in line.split_whitespace() {
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| Error::BadScene(format!("token {token:?} is not key=value")))?;
            let num = || -> Result<f64> {
                value
                    .parse()
                    .map_err(|_| Error::BadScene(format!("{key}={value:?} is not a number")))
            };
            match key {
                "width" => spec.width = num()? as usize,
                "height" => spec.height = num()? as usize,
                "phi" => spec.phi = num()?,
                "varkappa" => spec.varkappa = num()?,
                "kappa" => spec.kappa = num()?,
                "noise_sigma" => spec.noise_sigma = num()?,
                "invalid_fraction" => spec.invalid_fraction = num()?,
                "seed" => {
                    spec.seed = value
                        .parse()
                        .map_err(|_| Error::BadScene(format!("seed={value:?}")))?;
                    saw_seed = true;
                }
                "pothole" => {
                    let fields: Vec<&str> = value.split(':').collect();
                    let [cu, cv, a, b, rot, depth, profile] = fields[..] else {
                        return Err(Error::BadScene(format!(
                            "pothole needs cu:cv:a:b:rot:depth:profile, got {value:?}"
                        )));
                    };
                    let f = |s: &str| -> Result<f64> {
                        s.parse()
                            .map_err(|_| Error::BadScene(format!("pothole field {s:?}")))
                    };
                    spec.potholes.push(PotholeSpec {
                        region: Ellipse {
                            center_u: f(cu)?,
                            center_v: f(cv)?,
                            semi_a: f(a)?,
                            semi_b: f(b)?,
                            rotation: f(rot)?,
                        },
                        depth: f(depth)?,
                        profile: DepthProfile::parse(profile)?,
                    });
                }
                other => {
                    return Err(Error::BadScene(format!("unknown key {other:?}")));
                }
            }
        }
        if !saw_seed {
            return Err(Error::BadScene("seed is mandatory".into()));
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_line(&self) -> String {
        use std::fmt::Write as _;
        let mut line = format!(
            "width={} height={} phi={} varkappa={} kappa={} noise_sigma={} invalid_fraction={} seed={}",
            self.width,
            self.height,
            crate::io::full_precision(self.phi),
            crate::io::full_precision(self.varkappa),
            crate::io::full_precision(self.kappa),
            crate::io::full_precision(self.noise_sigma),
            crate::io::full_precision(self.invalid_fraction),
            self.seed
        );
        for p in &self.potholes {
            write!(
                line,
                " pothole={}:{}:{}:{}:{}:{}:{}",
                crate::io::full_precision(p.region.center_u),
                crate::io::full_precision(p.region.center_v),
                crate::io::full_precision(p.region.semi_a),
                crate::io::full_precision(p.region.semi_b),
                crate::io::full_precision(p.region.rotation),
                crate::io::full_precision(p.depth),
                p.profile.as_str()
            )
            .unwrap();
        }
        line
    }
}

// ── Random scenes ──────────────────────────────────────────────────────────

/// Parameter ranges for scene sampling; all intervals are inclusive.
#[derive(Debug, Clone)]
pub struct SceneRanges {
    pub width: usize,
    pub height: usize,
    pub varkappa: (f64, f64),
    pub kappa: (f64, f64),
    /// Hard cap on |Φ|; the actual upper bound also respects positivity.
    pub phi_limit: f64,
    pub pothole_count: (usize, usize),
    pub semi_axis: (f64, f64),
    pub depth: (f64, f64),
    pub profile: DepthProfile,
    pub noise_sigma: f64,
    pub invalid_fraction: f64,
}

impl Default for SceneRanges {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            varkappa: (1.0, 2.5),
            kappa: (25.0, 45.0),
            phi_limit: 0.2,
            pothole_count: (1, 3),
            semi_axis: (8.0, 40.0),
            depth: (5.0, 10.0),
            profile: DepthProfile::Paraboloid,
            noise_sigma: 0.0,
            invalid_fraction: 0.0,
        }
    }
}

/// Draw a valid scene. The angle is drawn *after* scale and offset so its
/// upper bound can keep the plane above the deepest possible pothole
/// everywhere in the frame (for Φ > 0 the plane minimum sits at the far
/// corner (u_max, 0); solving `ϰ(κ − sinΦ·u_max) ≥ d_max + 1` bounds sinΦ).
/// Draw order per scene: seed, ϰ, κ, Φ, pothole count, then per pothole
/// axes, rotation, depth, and center attempts until placements stop
/// overlapping (a pothole that fails 64 attempts is skipped).
pub fn random_scene(ranges: &SceneRanges, r: &mut SeededRng) -> Result<SceneSpec> {
    let seed = r.next_u64();
    let varkappa = rng::uniform_in(r, ranges.varkappa.0, ranges.varkappa.1);
    let kappa = rng::uniform_in(r, ranges.kappa.0, ranges.kappa.1);

    let umax = (ranges.width - 1) as f64;
    let sin_bound = (kappa - (ranges.depth.1 + 1.0) / varkappa) / umax;
    if sin_bound <= 0.0 {
        return Err(Error::BadScene(format!(
            "ranges cannot keep the plane positive (sin bound {sin_bound})"
        )));
    }
    let phi_hi = ranges.phi_limit.min(sin_bound.min(1.0).asin());
    let phi = rng::uniform_in(r, -ranges.phi_limit, phi_hi);

    let count = rng::uniform_usize(r, ranges.pothole_count.0, ranges.pothole_count.1);
    let mut potholes: Vec<PotholeSpec> = Vec::new();
    for _ in 0..count {
        let semi_a = rng::uniform_in(r, ranges.semi_axis.0, ranges.semi_axis.1);
        let semi_b = rng::uniform_in(r, ranges.semi_axis.0, ranges.semi_axis.1);
        let rotation = rng::uniform_in(r, 0.0, std::f64::consts::PI);
        let depth = rng::uniform_in(r, ranges.depth.0, ranges.depth.1);
        let reach = semi_a.max(semi_b);
        let margin = reach + 2.0;
        if 2.0 * margin >= ranges.width as f64 || 2.0 * margin >= ranges.height as f64 {
            return Err(Error::BadScene(format!(
                "semi-axis range {:?} does not fit a {}x{} frame",
                ranges.semi_axis, ranges.width, ranges.height
            )));
        }
        for _attempt in 0..64 {
            let cu = rng::uniform_in(r, margin, ranges.width as f64 - 1.0 - margin);
            let cv = rng::uniform_in(r, margin, ranges.height as f64 - 1.0 - margin);
            // Conservative circle test keeps regions clearly apart.
            let clear = potholes.iter().all(|p| {
                let other = p.region.semi_a.max(p.region.semi_b);
                let (du, dv) = (cu - p.region.center_u, cv - p.region.center_v);
                (du * du + dv * dv).sqrt() > reach + other + 2.0
            });
            if clear {
                potholes.push(PotholeSpec {
                    region: Ellipse {
                        center_u: cu,
                        center_v: cv,
                        semi_a,
                        semi_b,
                        rotation,
                    },
                    depth,
                    profile: ranges.profile,
                });
                break;
            }
        }
    }

    let spec = SceneSpec {
        width: ranges.width,
        height: ranges.height,
        phi,
        varkappa,
        kappa,
        potholes,
        noise_sigma: ranges.noise_sigma,
        invalid_fraction: ranges.invalid_fraction,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, Intrinsics, Pose, Ray, Vec3};
use crate::raster::Raster;
use crate::renderer::{FnSource, MIN_DEPTH_MASK};

/// Samples per ray of the reference renderer.
pub const ORACLE_SAMPLES: usize = 4096;

/// Gaussian density blob: `amplitude · exp(−‖x − center‖² / (2·radius²))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftSphere {
    pub center: [f64; 3],
    pub radius: f64,
    pub color: [f64; 3],
    pub amplitude: f64,
}

impl SoftSphere {
    fn center(&self) -> Vec3 {
        Vec3::from(self.center)
    }
}

/// Cameras evenly spaced in azimuth on a circle around the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRing {
    pub n_frames: usize,
    pub radius: f64,
    pub elevation_deg: f64,
    pub fov_deg: f64,
    /// Azimuth of frame 0.
    pub azimuth_offset_deg: f64,
}

impl CameraRing {
    pub fn new(n_frames: usize) -> Self {
        CameraRing {
            n_frames,
            radius: 4.0,
            elevation_deg: 20.0,
            fov_deg: 40.0,
            azimuth_offset_deg: 0.0,
        }
    }

    /// Same ring with azimuths shifted half a step, between the original
    /// ones.
    pub fn interleaved(mut self) -> Self {
        self.azimuth_offset_deg += 180.0 / self.n_frames as f64;
        self
    }

    pub fn pose(&self, frame: usize) -> Result<Pose> {
        let az = (self.azimuth_offset_deg + 360.0 * frame as f64 / self.n_frames as f64).to_radians();
        let el = self.elevation_deg.to_radians();
        let eye = Vec3::new(az.cos() * el.cos(), az.sin() * el.cos(), el.sin()) * self.radius;
        Pose::look_at(eye, Vec3::zeros(), Vec3::z())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub spheres: Vec<SoftSphere>,
    pub ring: CameraRing,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

impl SyntheticSceneSpec {
    /// One random instance: 1–3 spheres near the origin with random sizes,
    /// colors and densities.
    pub fn random(rng: &mut impl Rng, ring: CameraRing, width: usize, height: usize) -> Self {
        let seed = rng.gen();
        let n = rng.gen_range(1..=3);
        let spheres = (0..n)
            .map(|_| SoftSphere {
                center: [rng.gen_range(-0.45..0.45), rng.gen_range(-0.45..0.45), rng.gen_range(-0.3..0.3)],
                radius: rng.gen_range(0.18..0.35),
                color: [rng.gen_range(0.1..0.95), rng.gen_range(0.1..0.95), rng.gen_range(0.1..0.95)],
                amplitude: rng.gen_range(20.0..60.0),
            })
            .collect();
        SyntheticSceneSpec {
            spheres,
            ring,
            width,
            height,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ring.n_frames < 8 {
            return Err(Error::InvalidConfig(format!("a camera ring needs ≥ 8 frames, got {}", self.ring.n_frames)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("image size must be positive".into()));
        }
        for s in &self.spheres {
            if !(s.radius > 0.0 && s.amplitude > 0.0) {
                return Err(Error::InvalidConfig(format!("sphere radius and amplitude must be positive: {s:?}")));
            }
        }
        let (near, _) = self.bounds();
        if near <= 0.0 {
            return Err(Error::InvalidConfig("spheres reach the camera ring".into()));
        }
        Ok(())
    }

    /// Radius of a ball around the origin holding all visible mass.
    pub fn bound_radius(&self) -> f64 {
        self.spheres
            .iter()
            .map(|s| s.center().norm() + 3.0 * s.radius)
            .fold(0.5, f64::max)
    }

    /// Depth range covering the bounding ball from any ring camera.
    pub fn bounds(&self) -> (f64, f64) {
        let r = 1.1 * self.bound_radius();
        (self.ring.radius - r, self.ring.radius + r)
    }

    pub fn camera(&self, frame: usize) -> Result<Camera> {
        let intr = Intrinsics::from_fov(self.ring.fov_deg, self.width, self.height)?;
        Ok(Camera::new(intr, self.ring.pose(frame)?))
    }

    pub fn density(&self, x: &Vec3) -> f64 {
        self.spheres.iter().map(|s| s.amplitude * gauss(s, x)).sum()
    }

    /// Density and density-weighted color.
    pub fn radiance(&self, x: &Vec3) -> ([f64; 3], f64) {
        let mut sigma = 0.0;
        let mut c = [0.0; 3];
        for s in &self.spheres {
            let d = s.amplitude * gauss(s, x);
            sigma += d;
            for k in 0..3 {
                c[k] += d * s.color[k];
            }
        }
        if sigma > 0.0 {
            for v in &mut c {
                *v /= sigma;
            }
        }
        (c, sigma)
    }

    /// The scene as a renderer source.
    pub fn source(&self) -> FnSource<impl Fn(&Vec3, &Vec3) -> ([f64; 3], f64) + '_> {
        FnSource(move |x: &Vec3, _: &Vec3| self.radiance(x))
    }
}

fn gauss(s: &SoftSphere, x: &Vec3) -> f64 {
    (-(x - s.center()).norm_squared() / (2.0 * s.radius * s.radius)).exp()
}

/// Exponent past which a sphere's density counts as zero. At `e^-36 ≈ 2e-16`
/// of the amplitude the optical depth it adds is below `1e-13`.
const NEGLIGIBLE_EXPONENT: f64 = 36.0;

/// Dense reference render: `n` midpoint samples per ray through the same
/// emission-absorption sums as the renderer. Returns masked rgb, the soft
/// mask and conditional depth.
pub fn oracle_render_with(spec: &SyntheticSceneSpec, camera: &Camera, n: usize) -> Result<(Raster, Raster, Raster)> {
    let (near, far) = spec.bounds();
    let rays = camera.pixel_rays(near, far)?;
    let (w, h) = (camera.intrinsics.width, camera.intrinsics.height);
    let mut rgb = Raster::zeros(w, h, 3);
    let mut mask = Raster::zeros(w, h, 1);
    let mut depth = Raster::zeros(w, h, 1);
    for (i, ray) in rays.iter().enumerate() {
        let (c, m, d) = oracle_ray(spec, ray, n);
        rgb.data[3 * i..3 * i + 3].copy_from_slice(&c.map(|v| v * m));
        mask.data[i] = m;
        depth.data[i] = d;
    }
    Ok((rgb, mask, depth))
}

pub fn oracle_render(spec: &SyntheticSceneSpec, camera: &Camera) -> Result<(Raster, Raster, Raster)> {
    oracle_render_with(spec, camera, ORACLE_SAMPLES)
}

/// Samples whose index lies outside every sphere's support window are
/// skipped; there the density is below `e^-36·amplitude`.
fn oracle_ray(spec: &SyntheticSceneSpec, ray: &Ray, n: usize) -> ([f64; 3], f64, f64) {
    let step = (ray.far - ray.near) / n as f64;
    let depth_at = |i: usize| ray.near + (ray.far - ray.near) * ((i as f64 + 0.5) / n as f64);
    // Per-sphere sample windows from the closest approach along the ray.
    let mut windows: Vec<(usize, usize)> = Vec::new();
    for s in &spec.spheres {
        let rel = s.center() - ray.origin;
        let t0 = rel.dot(&ray.direction);
        let b2 = (rel - ray.direction * t0).norm_squared();
        let reach2 = 2.0 * s.radius * s.radius * NEGLIGIBLE_EXPONENT - b2;
        if reach2 <= 0.0 {
            continue;
        }
        let reach = reach2.sqrt();
        let z_lo = (t0 - reach) / ray.depth_scale;
        let z_hi = (t0 + reach) / ray.depth_scale;
        let lo = (((z_lo - ray.near) / step - 0.5).floor().max(0.0)) as usize;
        let hi = (((z_hi - ray.near) / step + 0.5).ceil().max(0.0) as usize).min(n);
        if lo < hi {
            windows.push((lo, hi));
        }
    }
    windows.sort_unstable();
    let mut acc = 1.0;
    let mut color = [0.0; 3];
    let mut weighted_depth = 0.0;
    let mut cursor = 0;
    for (lo, hi) in windows {
        for i in lo.max(cursor)..hi {
            let z = depth_at(i);
            let (c, sigma) = spec.radiance(&ray.at_depth(z));
            let delta = if i + 1 < n { depth_at(i + 1) - z } else { ray.far - z };
            let t = (-delta * sigma).exp();
            let p = acc * (1.0 - t);
            for k in 0..3 {
                color[k] += p * c[k];
            }
            weighted_depth += p * z;
            acc *= t;
        }
        cursor = cursor.max(hi);
    }
    let m = 1.0 - acc;
    let depth = if m < MIN_DEPTH_MASK { 0.0 } else { weighted_depth / m.max(1e-8) };
    (color, m, depth)
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ea::{conditional_depth, EaComposite};
use super::sampling::{fine_depths, stratified_depths, DepthSamples};
use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::fields::RadianceField;
use crate::geometry::{Camera, Ray, Vec3};
use crate::raster::Raster;
use crate::wcr::{embed_points, global_embedding, ViewVars};

/// Anything that assigns color and density to world points on a tape.
pub trait RadianceSource {
    /// Returns `rgb: [n, 3]` and `sigma: [n, 1]` for `n` points seen along
    /// unit directions `dirs`.
    fn query(&self, tape: &mut Tape, points: &[Vec3], dirs: &[Vec3]) -> Result<(Var, Var)>;
}

/// How the radiance MLP's latent code is produced.
#[derive(Clone, Debug)]
pub enum Conditioning<'a> {
    /// Per-point aggregate over posed source views.
    Views(Vec<ViewVars<'a>>),
    /// One code shared by every point: the mean of these `[1, c]` codes.
    Global(Vec<Var>),
}

/// Radiance MLP bound to parameters on a tape.
#[derive(Clone, Debug)]
pub struct NeuralSource<'a> {
    pub field: &'a RadianceField,
    pub params: Vec<Var>,
    pub conditioning: Conditioning<'a>,
}

fn rows(vs: &[Vec3]) -> Tensor {
    Tensor::new(vec![vs.len(), 3], vs.iter().flat_map(|v| [v.x, v.y, v.z]).collect()).expect("three columns")
}

impl RadianceSource for NeuralSource<'_> {
    fn query(&self, tape: &mut Tape, points: &[Vec3], dirs: &[Vec3]) -> Result<(Var, Var)> {
        let h = &self.field.config().harmonic;
        let gx = tape.constant(h.encode_positions(points));
        let gr = tape.constant(h.encode_directions(dirs));
        let z = match &self.conditioning {
            Conditioning::Views(views) => {
                let p = tape.constant(rows(points));
                embed_points(tape, views, p, &rows(dirs))?
            }
            Conditioning::Global(codes) => global_embedding(tape, codes, points.len())?,
        };
        self.field.forward(tape, &self.params, gx, gr, z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub n_coarse: usize,
    /// Importance samples added after the coarse pass; zero skips it.
    pub n_fine: usize,
    /// Random sample placement (training) instead of midpoints.
    pub jitter: bool,
    /// Rays per tape segment in [`render_image`].
    pub chunk_rays: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            n_coarse: 128,
            n_fine: 128,
            jitter: false,
            chunk_rays: 256,
        }
    }
}

/// Everything known about one rendered ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RayRender {
    pub color: [f64; 3],
    pub opacity: f64,
    pub mask: f64,
    pub expected_depth: f64,
    pub probs: Vec<f64>,
    pub escape: f64,
}

impl RayRender {
    /// The displayed pixel, color softly masked by the intersection
    /// probability.
    pub fn pixel(&self) -> [f64; 3] {
        self.color.map(|c| c * self.mask)
    }
}

/// A batch of rays rendered on a tape.
#[derive(Debug)]
pub struct RenderedRays {
    /// `[rays, 4]`: masked pixel then mask, differentiable.
    pub output: Var,
    pub rays: Vec<RayRender>,
}

/// Coarse pass, importance pass, and emission-absorption compositing over
/// the merged samples of every ray.
pub fn render_rays(
    tape: &mut Tape,
    source: &dyn RadianceSource,
    rays: &[Ray],
    cfg: &RenderConfig,
    rng: &mut impl Rng,
) -> Result<RenderedRays> {
    if rays.is_empty() {
        return Err(Error::EmptySplit("no rays to render".into()));
    }
    let nc = cfg.n_coarse;
    let coarse: Vec<DepthSamples> = rays
        .iter()
        .map(|r| stratified_depths(r.near, r.far, nc, cfg.jitter, rng))
        .collect::<Result<_>>()?;
    let (points, dirs) = ray_points(rays, coarse.iter().map(|s| s.depths()));
    let (c_rgb, c_sigma) = source.query(tape, &points, &dirs)?;

    let (rgb, sigma, samples) = if cfg.n_fine == 0 {
        (c_rgb, c_sigma, coarse)
    } else {
        let sig = tape.value(c_sigma).data().to_vec();
        let mut fine = Vec::with_capacity(rays.len());
        for (r, s) in coarse.iter().enumerate() {
            let w = super::ea_weights(s, &sig[r * nc..(r + 1) * nc])?;
            fine.push(fine_depths(s, &w.probs, cfg.n_fine, cfg.jitter, rng));
        }
        let (points, dirs) = ray_points(rays, fine.iter().map(|f| f.as_slice()));
        let (f_rgb, f_sigma) = source.query(tape, &points, &dirs)?;

        // Merge per ray: rows of the coarse block come first, then the fine
        // block; gather them back in ascending depth.
        let nf = cfg.n_fine;
        let fine_base = rays.len() * nc;
        let mut order = Vec::with_capacity(rays.len() * (nc + nf));
        let mut merged = Vec::with_capacity(rays.len());
        for (r, (s, f)) in coarse.iter().zip(&fine).enumerate() {
            let mut tagged: Vec<(f64, usize)> = s
                .depths()
                .iter()
                .enumerate()
                .map(|(i, &z)| (z, r * nc + i))
                .chain(f.iter().enumerate().map(|(j, &z)| (z, fine_base + r * nf + j)))
                .collect();
            tagged.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            order.extend(tagged.iter().map(|t| t.1));
            merged.push(DepthSamples::new(tagged.iter().map(|t| t.0).collect(), s.far())?);
        }
        let all_rgb = tape.concat_rows(&[c_rgb, f_rgb])?;
        let all_sigma = tape.concat_rows(&[c_sigma, f_sigma])?;
        let rgb = tape.gather_rows(all_rgb, order.clone())?;
        let sigma = tape.gather_rows(all_sigma, order)?;
        (rgb, sigma, merged)
    };

    let per_ray = samples[0].len();
    let deltas: Vec<f64> = samples.iter().flat_map(|s| s.intervals()).collect();
    let output = tape.apply(EaComposite { samples: per_ray, deltas }, &[rgb, sigma])?;

    let rgb_v = tape.value(rgb).data();
    let sigma_v = tape.value(sigma).data();
    let mut renders = Vec::with_capacity(rays.len());
    for (r, s) in samples.iter().enumerate() {
        let sig = &sigma_v[r * per_ray..(r + 1) * per_ray];
        if let Some((index, &value)) = sig.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::NegativeDensity { index, value });
        }
        let w = super::ea_weights(s, sig)?;
        let mut color = [0.0; 3];
        let mut opacity = 0.0;
        let mut depth = 0.0;
        for (i, p) in w.probs.iter().enumerate() {
            let c = &rgb_v[3 * (r * per_ray + i)..3 * (r * per_ray + i + 1)];
            for k in 0..3 {
                color[k] += p * c[k];
            }
            opacity += p * sig[i];
            depth += p * s.depths()[i];
        }
        renders.push(RayRender {
            color,
            opacity,
            mask: w.mask,
            expected_depth: conditional_depth(depth, w.mask),
            escape: w.escape(),
            probs: w.probs,
        });
    }
    Ok(RenderedRays { output, rays: renders })
}

fn ray_points<'a>(rays: &[Ray], depths: impl Iterator<Item = &'a [f64]>) -> (Vec<Vec3>, Vec<Vec3>) {
    let mut points = Vec::new();
    let mut dirs = Vec::new();
    for (ray, zs) in rays.iter().zip(depths) {
        for &z in zs {
            points.push(ray.at_depth(z));
            dirs.push(ray.direction);
        }
    }
    (points, dirs)
}

/// Renders one ray on a scratch tape.
pub fn render_ray(ray: &Ray, source: &dyn RadianceSource, tape: &mut Tape, cfg: &RenderConfig, rng: &mut impl Rng) -> Result<RayRender> {
    let base = tape.len();
    let out = render_rays(tape, source, std::slice::from_ref(ray), cfg, rng);
    tape.truncate(base);
    Ok(out?.rays.remove(0))
}

/// Full-frame render: masked rgb, mask and conditional depth.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub rgb: Raster,
    pub mask: Raster,
    pub depth: Raster,
}

/// Renders every pixel of `camera` in chunks. Nodes recorded on `tape` by
/// each chunk are dropped before the next, so `source` may reference
/// anything already on the tape.
pub fn render_image(
    tape: &mut Tape,
    source: &dyn RadianceSource,
    camera: &Camera,
    near: f64,
    far: f64,
    cfg: &RenderConfig,
    rng: &mut impl Rng,
) -> Result<RenderedImage> {
    let rays = camera.pixel_rays(near, far)?;
    let (w, h) = (camera.intrinsics.width, camera.intrinsics.height);
    let mut rgb = Raster::zeros(w, h, 3);
    let mut mask = Raster::zeros(w, h, 1);
    let mut depth = Raster::zeros(w, h, 1);
    let base = tape.len();
    for (chunk_idx, chunk) in rays.chunks(cfg.chunk_rays.max(1)).enumerate() {
        let rendered = render_rays(tape, source, chunk, cfg, rng);
        tape.truncate(base);
        for (k, r) in rendered?.rays.iter().enumerate() {
            let i = chunk_idx * cfg.chunk_rays.max(1) + k;
            rgb.data[3 * i..3 * i + 3].copy_from_slice(&r.pixel());
            mask.data[i] = r.mask;
            depth.data[i] = r.expected_depth;
        }
    }
    Ok(RenderedImage { rgb, mask, depth })
}

/// Pointwise closed-form radiance; its outputs are constants on the tape.
pub struct FnSource<F>(pub F);

impl<F> RadianceSource for FnSource<F>
where
    F: Fn(&Vec3, &Vec3) -> ([f64; 3], f64),
{
    fn query(&self, tape: &mut Tape, points: &[Vec3], dirs: &[Vec3]) -> Result<(Var, Var)> {
        let mut rgb = Vec::with_capacity(3 * points.len());
        let mut sigma = Vec::with_capacity(points.len());
        for (p, d) in points.iter().zip(dirs) {
            let (c, s) = (self.0)(p, d);
            rgb.extend(c);
            sigma.push(s);
        }
        let rgb = tape.constant(Tensor::new(vec![points.len(), 3], rgb)?);
        let sigma = tape.constant(Tensor::new(vec![points.len(), 1], sigma)?);
        Ok((rgb, sigma))
    }
}

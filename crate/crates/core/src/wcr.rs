//! Ray-point embeddings built by projecting into source views, sampling
//! their feature fields and pooling across views.
//!
//! Features are looked up where a point lands in each source image, so the
//! embedding depends only on the relative geometry of the point and the
//! source cameras. Any similarity transform applied to the scene and every
//! camera together leaves it unchanged.

use crate::diff::{bilinear_lookup, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::fields::FeatureField;
use crate::geometry::{Camera, PixelCoord, Vec3, MIN_DEPTH};

/// A posed source image together with its extracted features.
#[derive(Clone, Debug)]
pub struct SourceView {
    pub camera: Camera,
    pub features: FeatureField,
}

impl SourceView {
    pub fn new(camera: Camera, features: FeatureField) -> Result<Self> {
        let (w, h) = (camera.intrinsics.width, camera.intrinsics.height);
        if features.width() != w || features.height() != h {
            return Err(Error::shape("SourceView feature resolution", &[h, w], &[features.height(), features.width()]));
        }
        Ok(SourceView { camera, features })
    }

    pub fn center(&self) -> Vec3 {
        self.camera.pose.center()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WcrEmbedding {
    pub z_mu: Vec<f64>,
    pub z_sigma: f64,
    pub z_global: Vec<f64>,
}

impl WcrEmbedding {
    /// `[z_mu | z_sigma | z_global]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.z_mu.len() + 1 + self.z_global.len());
        v.extend_from_slice(&self.z_mu);
        v.push(self.z_sigma);
        v.extend_from_slice(&self.z_global);
        v
    }
}

/// Per-view lookup result for one point.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewSample {
    pub features: Vec<f64>,
    /// Unit vector from the source camera center toward the point.
    pub direction: Vec3,
    /// False when the point is behind the camera; `features` is then zero.
    pub valid: bool,
}

/// Bilinear lookup with border clamping.
pub fn bilinear_sample(field: &FeatureField, u: PixelCoord) -> Vec<f64> {
    let mut out = vec![0.0; field.dim()];
    bilinear_lookup(field.values.data(), field.height(), field.width(), field.dim(), u.u, u.v, &mut out);
    out
}

pub fn wcr_single(view: &SourceView, x: &Vec3) -> ViewSample {
    let direction = (x - view.center()).normalize();
    match view.camera.project(x) {
        Ok(px) => ViewSample {
            features: bilinear_sample(&view.features, px),
            direction,
            valid: true,
        },
        Err(_) => ViewSample {
            features: vec![0.0; view.features.dim()],
            direction,
            valid: false,
        },
    }
}

/// Normalized `1 + r_src·r_tgt` weights over valid views.
pub fn view_weights(directions: &[Vec3], target: &Vec3, valid: &[bool]) -> Result<Vec<f64>> {
    let n_valid = valid.iter().filter(|&&v| v).count();
    if n_valid == 0 {
        return Err(Error::NoValidViews);
    }
    let raw: Vec<f64> = directions
        .iter()
        .zip(valid)
        .map(|(d, &ok)| if ok { (1.0 + d.dot(target)).max(0.0) } else { 0.0 })
        .collect();
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        Ok(raw.iter().map(|r| r / total).collect())
    } else {
        let uniform = 1.0 / n_valid as f64;
        Ok(valid.iter().map(|&ok| if ok { uniform } else { 0.0 }).collect())
    }
}

pub fn wcr_aggregate(views: &[SourceView], x: &Vec3, r_tgt: &Vec3) -> Result<WcrEmbedding> {
    if views.is_empty() {
        return Err(Error::NoValidViews);
    }
    let samples: Vec<ViewSample> = views.iter().map(|v| wcr_single(v, x)).collect();
    let dirs: Vec<Vec3> = samples.iter().map(|s| s.direction).collect();
    let valid: Vec<bool> = samples.iter().map(|s| s.valid).collect();
    let weights = view_weights(&dirs, r_tgt, &valid)?;

    let d = views[0].features.dim();
    let mut z_mu = vec![0.0; d];
    for (s, w) in samples.iter().zip(&weights) {
        for (m, f) in z_mu.iter_mut().zip(&s.features) {
            *m += w * f;
        }
    }
    let mut z_sigma = 0.0;
    for k in 0..d {
        let var: f64 = samples.iter().zip(&weights).map(|(s, w)| w * (s.features[k] - z_mu[k]).powi(2)).sum();
        z_sigma += var.sqrt();
    }
    z_sigma /= d as f64;

    let c = views[0].features.global.len();
    let mut z_global = vec![0.0; c];
    for v in views {
        for (g, f) in z_global.iter_mut().zip(&v.features.global) {
            *g += f / views.len() as f64;
        }
    }
    Ok(WcrEmbedding { z_mu, z_sigma, z_global })
}

/// A source view whose feature field and global code live on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ViewVars<'a> {
    pub camera: &'a Camera,
    /// `[h, w, d]` feature field.
    pub field: Var,
    /// `[1, c]` global code.
    pub global: Var,
}

/// Batched embedding of `points: [n, 3]` seen along `targets` (unit rows
/// `[n, 3]`), giving `[n, d + 1 + c]`.
///
/// Gradients reach the feature fields, the global codes and the points.
/// Rows that no view sees get a zero view-dependent part.
pub fn embed_points(tape: &mut Tape, views: &[ViewVars], points: Var, targets: &Tensor) -> Result<Var> {
    if views.is_empty() {
        return Err(Error::NoValidViews);
    }
    let n = tape.shape(points)[0];
    if tape.shape(points) != [n, 3] || targets.shape() != [n, 3] {
        return Err(Error::shape("embed_points rows", &[n, 3], targets.shape()));
    }
    let r_tgt = tape.constant(targets.clone());

    let mut feats = Vec::with_capacity(views.len());
    let mut raws = Vec::with_capacity(views.len());
    let mut valids = Vec::with_capacity(views.len());
    for view in views {
        let (sample, raw, valid) = project_and_sample(tape, view, points, r_tgt)?;
        feats.push(sample);
        raws.push(raw);
        valids.push(valid);
    }

    // Rows whose raw weights all vanish fall back to uniform weights over
    // their valid views; rows no view sees keep zero weights.
    let mut offset = vec![0.0; n];
    let mut guard = vec![0.0; n];
    for i in 0..n {
        let total: f64 = raws.iter().map(|&r| tape.value(r).data()[i]).sum();
        let n_valid: f64 = valids.iter().map(|v: &Vec<f64>| v[i]).sum();
        if n_valid == 0.0 {
            guard[i] = 1.0;
        } else if total <= 0.0 {
            offset[i] = 1.0;
        }
    }
    let mut adjusted = Vec::with_capacity(views.len());
    for (raw, valid) in raws.iter().zip(&valids) {
        if offset.iter().all(|&o| o == 0.0) {
            adjusted.push(*raw);
            continue;
        }
        let fallback: Vec<f64> = valid.iter().zip(&offset).map(|(v, o)| v * o).collect();
        let fallback = tape.constant(Tensor::new(vec![n, 1], fallback)?);
        adjusted.push(tape.add(*raw, fallback)?);
    }
    let mut total = adjusted[0];
    for &r in &adjusted[1..] {
        total = tape.add(total, r)?;
    }
    let guard = tape.constant(Tensor::new(vec![n, 1], guard)?);
    let total = tape.add(total, guard)?;

    let mut weights = Vec::with_capacity(views.len());
    let mut z_mu = None;
    for (&raw, &f) in adjusted.iter().zip(&feats) {
        let w = tape.div(raw, total)?;
        let term = tape.mul(f, w)?;
        z_mu = Some(match z_mu {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
        weights.push(w);
    }
    let z_mu = z_mu.expect("at least one view");

    let mut var = None;
    for (&w, &f) in weights.iter().zip(&feats) {
        let dev = tape.sub(f, z_mu)?;
        let sq = tape.square(dev)?;
        let term = tape.mul(sq, w)?;
        var = Some(match var {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    let std = tape.sqrt(var.expect("at least one view"))?;
    let d = tape.shape(std)[1];
    let std_sum = tape.sum_axis(std, 1)?;
    let z_sigma = tape.scale(std_sum, 1.0 / d as f64)?;

    let z_global = global_embedding(tape, &views.iter().map(|v| v.global).collect::<Vec<_>>(), n)?;
    tape.concat_cols(&[z_mu, z_sigma, z_global])
}

/// Plain average of the global codes, repeated over `n` rows.
pub fn global_embedding(tape: &mut Tape, globals: &[Var], n: usize) -> Result<Var> {
    let Some((&first, rest)) = globals.split_first() else {
        return Err(Error::NoValidViews);
    };
    let mut acc = first;
    for &g in rest {
        acc = tape.add(acc, g)?;
    }
    let mean = tape.scale(acc, 1.0 / globals.len() as f64)?;
    tape.gather_rows(mean, vec![0; n])
}

/// Returns masked samples `[n, d]`, raw weights `[n, 1]` and the validity
/// mask as plain numbers.
fn project_and_sample(tape: &mut Tape, view: &ViewVars, points: Var, r_tgt: Var) -> Result<(Var, Var, Vec<f64>)> {
    let pose = &view.camera.pose;
    let intr = &view.camera.intrinsics;
    let n = tape.shape(points)[0];

    // Column-major storage of R is Rᵀ in row-major order.
    let rt = tape.constant(Tensor::new(vec![3, 3], pose.rotation().iter().copied().collect())?);
    let t = pose.translation();
    let t = tape.constant(Tensor::new(vec![1, 3], vec![t.x, t.y, t.z])?);
    let rotated = tape.matmul(points, rt)?;
    let cam = tape.add(rotated, t)?;

    let depth: Vec<f64> = tape.value(cam).data().chunks_exact(3).map(|p| p[2]).collect();
    let valid: Vec<f64> = depth.iter().map(|&z| if z > MIN_DEPTH { 1.0 } else { 0.0 }).collect();
    let valid_var = tape.constant(Tensor::new(vec![n, 1], valid.clone())?);
    let invalid = tape.constant(Tensor::new(vec![n, 1], valid.iter().map(|v| 1.0 - v).collect())?);

    let x = tape.slice_cols(cam, 0, 1)?;
    let y = tape.slice_cols(cam, 1, 2)?;
    let z = tape.slice_cols(cam, 2, 3)?;
    let z = tape.mul(z, valid_var)?;
    let z = tape.add(z, invalid)?;
    let xn = tape.div(x, z)?;
    let yn = tape.div(y, z)?;
    let u = tape.affine(xn, intr.fx, intr.cx)?;
    let v = tape.affine(yn, intr.fy, intr.cy)?;
    let uv = tape.concat_cols(&[u, v])?;
    let sample = tape.bilinear_sample(view.field, uv)?;
    let sample = tape.mul(sample, valid_var)?;

    let c = pose.center();
    let c = tape.constant(Tensor::new(vec![1, 3], vec![c.x, c.y, c.z])?);
    let offset = tape.sub(points, c)?;
    let r_src = tape.normalize_rows(offset)?;
    let prod = tape.mul(r_src, r_tgt)?;
    let dot = tape.sum_axis(prod, 1)?;
    let raw = tape.affine(dot, 1.0, 1.0)?;
    let raw = tape.clamp(raw, 0.0, 2.0)?;
    let raw = tape.mul(raw, valid_var)?;
    Ok((sample, raw, valid))
}

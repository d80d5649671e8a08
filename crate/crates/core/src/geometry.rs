//! Pinhole cameras, rigid and similarity transforms, rays.
//!
//! Poses map world points into the camera frame, `x̄ = R·x + t`. Depth `Z`
//! always means camera-frame z, never distance along the ray. Pixel `(i, j)`
//! sits at continuous coordinate `(i, j)`, so an image spans
//! `[-0.5, W-0.5] × [-0.5, H-0.5]`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Camera-frame depth below which a point counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

const ORTHO_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || width == 0 || height == 0 || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "intrinsics need positive focal lengths and image size, got fx={fx} fy={fy} {width}x{height}"
            )));
        }
        Ok(Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Square pixels, principal point at the image centre.
    pub fn from_fov(fov_deg: f64, width: usize, height: usize) -> Result<Self> {
        let f = 0.5 * width as f64 / (0.5 * fov_deg.to_radians()).tan();
        Self::new(
            f,
            f,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn from_matrix(k: &Mat3, width: usize, height: usize) -> Result<Self> {
        Self::new(k[(0, 0)], k[(1, 1)], k[(0, 2)], k[(1, 2)], width, height)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

impl PixelCoord {
    pub fn new(u: f64, v: f64) -> Self {
        PixelCoord { u, v }
    }
}

fn orthonormality_error(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).abs().max()
}

/// Nearest rotation in the Frobenius sense (polar factor of the SVD).
fn polar_rotation(r: &Mat3) -> Mat3 {
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut q = u * vt;
    if q.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        q = u * vt;
    }
    q
}

/// World-to-camera rigid transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: Mat3,
    translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        if orthonormality_error(&rotation) > ORTHO_TOL || (rotation.determinant() - 1.0).abs() > ORTHO_TOL {
            return Err(Error::InvalidConfig(format!(
                "pose rotation is not a proper rotation: {rotation}"
            )));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Pose {
            rotation: Mat3::identity(),
            translation: t,
        }
    }

    /// Camera at `eye` looking toward `target`, image `y` pointing along
    /// `-up` (so `up` appears at the top of the image).
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let forward = (target - eye).try_normalize(1e-12).ok_or_else(|| {
            Error::InvalidConfig("look_at: eye and target coincide".into())
        })?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidConfig("look_at: up is parallel to the view direction".into()))?;
        let down = forward.cross(&right);
        // rows are the camera axes expressed in world coordinates
        let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn transform(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    /// Camera centre in world coordinates, `-Rᵀt`.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first. Re-orthonormalizes the rotation
    /// when accumulated rounding exceeds the tolerance.
    pub fn compose(&self, other: &Pose) -> Pose {
        let mut rotation = self.rotation * other.rotation;
        if orthonormality_error(&rotation) > ORTHO_TOL {
            rotation = polar_rotation(&rotation);
        }
        Pose {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

/// `x ↦ s·R·x + t`
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Similarity {
    pub fn new(scale: f64, rotation: Mat3, translation: Vec3) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::InvalidConfig(format!("similarity scale must be positive, got {scale}")));
        }
        Pose::new(rotation, translation)?;
        Ok(Similarity {
            scale,
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Similarity {
            scale: 1.0,
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.scale * (self.rotation * x) + self.translation
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    /// Camera centre (world).
    pub origin: Vec3,
    /// Unit direction (world).
    pub direction: Vec3,
    /// Depth bounds in camera-frame z.
    pub near: f64,
    pub far: f64,
    /// Euclidean distance travelled per unit of camera-frame depth.
    pub depth_scale: f64,
}

impl Ray {
    /// World point at camera-frame depth `z`.
    pub fn at_depth(&self, z: f64) -> Vec3 {
        self.origin + self.direction * (z * self.depth_scale)
    }
}

/// A posed pinhole camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Self {
        Camera { intrinsics, pose }
    }

    pub fn project(&self, x: &Vec3) -> Result<PixelCoord> {
        project(&self.intrinsics, &self.pose, x)
    }

    pub fn ray(&self, pixel: PixelCoord, near: f64, far: f64) -> Result<Ray> {
        ray_through_pixel(&self.intrinsics, &self.pose, pixel, near, far)
    }

    /// Rays through every pixel centre, row-major.
    pub fn pixel_rays(&self, near: f64, far: f64) -> Result<Vec<Ray>> {
        let (w, h) = (self.intrinsics.width, self.intrinsics.height);
        (0..h * w)
            .map(|i| self.ray(PixelCoord::new((i % w) as f64, (i / w) as f64), near, far))
            .collect()
    }
}

pub fn world_to_camera(pose: &Pose, x: &Vec3) -> Vec3 {
    pose.transform(x)
}

/// Perspective projection of a world point into pixel coordinates.
pub fn project(intr: &Intrinsics, pose: &Pose, x: &Vec3) -> Result<PixelCoord> {
    let p = pose.transform(x);
    if p.z <= MIN_DEPTH {
        return Err(Error::PointBehindCamera { depth: p.z });
    }
    Ok(PixelCoord {
        u: intr.fx * p.x / p.z + intr.cx,
        v: intr.fy * p.y / p.z + intr.cy,
    })
}

/// Camera-frame point on the ray through `pixel` at depth `z`.
pub fn unproject(intr: &Intrinsics, pixel: PixelCoord, z: f64) -> Result<Vec3> {
    if !(z > 0.0) {
        return Err(Error::NonPositiveDepth(z));
    }
    Ok(Vec3::new(
        z * (pixel.u - intr.cx) / intr.fx,
        z * (pixel.v - intr.cy) / intr.fy,
        z,
    ))
}

pub fn ray_through_pixel(intr: &Intrinsics, pose: &Pose, pixel: PixelCoord, near: f64, far: f64) -> Result<Ray> {
    if !(near > 0.0 && near < far) {
        return Err(Error::InvalidBounds { near, far });
    }
    let cam_dir = unproject(intr, pixel, 1.0)?;
    let depth_scale = cam_dir.norm();
    let direction = pose.rotation().transpose() * (cam_dir / depth_scale);
    Ok(Ray {
        origin: pose.center(),
        direction,
        near,
        far,
        depth_scale,
    })
}

/// Moves a point by `g_star` and adjusts the camera so the pair images
/// identically.
///
/// The returned pose is `pose ∘ g_star⁻¹` with its scale folded into the
/// translation: the new camera-frame point is `s·(R·x + t)` of the original,
/// which leaves every projection unchanged.
pub fn apply_similarity(g_star: &Similarity, pose: &Pose, x: &Vec3) -> (Pose, Vec3) {
    let rotation = pose.rotation() * g_star.rotation.transpose();
    let translation = g_star.scale * pose.translation() - rotation * g_star.translation;
    (
        Pose {
            rotation,
            translation,
        },
        g_star.apply(x),
    )
}

/// Random proper rotation from a unit quaternion drawn uniformly on S³.
pub fn random_rotation(rng: &mut impl rand::Rng) -> Mat3 {
    let mut n = || -> f64 { rng.sample(rand_distr::StandardNormal) };
    let q = nalgebra::Quaternion::new(n(), n(), n(), n());
    nalgebra::UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

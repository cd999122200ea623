//! Deterministic scene geometry: array layouts, mirror-image transforms and
//! ray parameterization.
//!
//! Conventions: right-handed global frame with z up. A surface feature voxel
//! (SFV) is the mirror image of the coordinate origin across a planar
//! reflector, so a single 3-vector encodes both the wall point `p/2` and the
//! wall normal `p/‖p‖`. Arrays are uniform rectangular arrays (URAs) built
//! from a template in the local yz-plane, shifted and rotated into the scene.
//! All functions here are pure and cheap; callers may evaluate them from any
//! number of threads.

use nalgebra::{Matrix3, Matrix3xX, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Propagation velocity in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("array counts must be at least 1 (got ny={ny}, nz={nz})")]
    InvalidCounts { ny: usize, nz: usize },
    #[error("element spacings must be positive (got dy={dy}, dz={dz})")]
    InvalidSpacing { dy: f64, dz: f64 },
    #[error("matrix is not a rotation: {0}")]
    NotARotation(String),
    #[error("SFV position must be nonzero")]
    ZeroSfv,
    #[error("ray is degenerate: source and target coincide")]
    DegenerateRay,
}

/// Rotation matrix in SO(3). Construction checks orthogonality and
/// determinant to 1e-12.
#[derive(Debug, Clone, PartialEq)]
pub struct RotMat(Matrix3<f64>);

impl RotMat {
    pub fn try_new(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let gram = m * m.transpose();
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev > 1e-9 {
            return Err(GeometryError::NotARotation(format!(
                "R R^T deviates from I by {dev:.2e}"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > 1e-9 {
            return Err(GeometryError::NotARotation(format!("det = {det}")));
        }
        Ok(RotMat(m))
    }

    pub fn identity() -> Self {
        RotMat(Matrix3::identity())
    }

    /// Rotation by `angle` radians about the z axis.
    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        RotMat(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Intrinsic z-y'-x'' rotation (yaw, pitch, roll), all in radians.
    pub fn from_yaw_pitch_roll(yaw: f64, pitch: f64, roll: f64) -> Self {
        let rot = nalgebra::Rotation3::from_euler_angles(roll, pitch, yaw);
        RotMat(*rot.matrix())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Checks the SO(3) invariants at the tight tolerance used by the tests.
    pub fn orthogonality_defect(&self) -> f64 {
        (self.0 * self.0.transpose() - Matrix3::identity())
            .abs()
            .max()
            .max((self.0.determinant() - 1.0).abs())
    }
}

/// Surface feature voxel position, the mirror image of the origin across a
/// planar reflector. Excludes the origin itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SfvPosition(Vec3);

impl SfvPosition {
    pub fn try_new(p: Vec3) -> Result<Self, GeometryError> {
        if p.norm() == 0.0 || !p.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::ZeroSfv);
        }
        Ok(SfvPosition(p))
    }

    pub fn vector(&self) -> Vec3 {
        self.0
    }

    /// Point on the reflecting surface closest to the origin.
    pub fn wall_point(&self) -> Vec3 {
        self.0 / 2.0
    }

    /// Unit normal of the reflecting surface.
    pub fn wall_normal(&self) -> Vec3 {
        self.0 / self.0.norm()
    }
}

/// Uniform rectangular array template in the local yz-plane, symmetric about
/// the origin. Columns are element positions; the y index varies slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct UraGeometry {
    pub ny: usize,
    pub nz: usize,
    pub dy: f64,
    pub dz: f64,
    /// 3 x (ny*nz) element template.
    pub template: Matrix3xX<f64>,
    /// The ny distinct y coordinates, centered on zero.
    pub y_positions: Vec<f64>,
    /// The nz distinct z coordinates, centered on zero.
    pub z_positions: Vec<f64>,
}

impl UraGeometry {
    pub fn n_elements(&self) -> usize {
        self.ny * self.nz
    }
}

fn centered_grid(n: usize, d: f64) -> Vec<f64> {
    let mid = (n as f64 - 1.0) / 2.0;
    (0..n).map(|i| (i as f64 - mid) * d).collect()
}

/// Build the URA template: x-row zero, y coordinates replicated per z block,
/// both axes centered on the origin.
pub fn template_layout(ny: usize, nz: usize, dy: f64, dz: f64) -> Result<UraGeometry, GeometryError> {
    if ny < 1 || nz < 1 {
        return Err(GeometryError::InvalidCounts { ny, nz });
    }
    if dy <= 0.0 || dz <= 0.0 {
        return Err(GeometryError::InvalidSpacing { dy, dz });
    }
    let y_positions = centered_grid(ny, dy);
    let z_positions = centered_grid(nz, dz);
    let mut template = Matrix3xX::zeros(ny * nz);
    for (iy, &y) in y_positions.iter().enumerate() {
        for (iz, &z) in z_positions.iter().enumerate() {
            let col = iy * nz + iz;
            template[(1, col)] = y;
            template[(2, col)] = z;
        }
    }
    Ok(UraGeometry {
        ny,
        nz,
        dy,
        dz,
        template,
        y_positions,
        z_positions,
    })
}

/// A physical anchor: a URA at a known position and orientation.
#[derive(Debug, Clone)]
pub struct PaConfig {
    pub position: Vec3,
    pub orientation: RotMat,
    pub geometry: UraGeometry,
}

/// Global element positions of the physical array: column m is
/// `position + R * template[:, m]`.
pub fn pa_layout(cfg: &PaConfig) -> Matrix3xX<f64> {
    let mut out = cfg.orientation.matrix() * &cfg.geometry.template;
    for mut col in out.column_iter_mut() {
        col += cfg.position;
    }
    out
}

/// Householder reflection across the plane with normal `psfv/‖psfv‖`:
/// `H = I − 2 p pᵀ / ‖p‖²`. Symmetric, involutory, determinant −1.
pub fn householder(psfv: &SfvPosition) -> Matrix3<f64> {
    let p = psfv.vector();
    Matrix3::identity() - 2.0 / p.norm_squared() * (p * p.transpose())
}

/// Virtual-anchor position: the mirror image of `pa` across surface `psfv`.
pub fn sfv_to_va(pa: Vec3, psfv: &SfvPosition) -> Vec3 {
    let p = psfv.vector();
    pa - (2.0 * pa.dot(&p) / p.norm_squared() - 1.0) * p
}

/// Global element positions of the single-bounce virtual array:
/// column m is `va + H R template[:, m]`.
pub fn va_layout(cfg: &PaConfig, psfv: &SfvPosition) -> Matrix3xX<f64> {
    let va = sfv_to_va(cfg.position, psfv);
    let h = householder(psfv);
    let mut out = h * cfg.orientation.matrix() * &cfg.geometry.template;
    for mut col in out.column_iter_mut() {
        col += va;
    }
    out
}

/// Ray from the anchor to the (possibly mirrored) source, expressed in the
/// anchor's local frame. `psfv = None` selects the direct path, where the ray
/// is simply `Rᵀ (p_mt − p_pa)`; for a bounce it is `Rᵀ H (p_mt − p_va)`,
/// which preserves the mobile-to-virtual-anchor distance.
pub fn local_ray(
    p_mt: Vec3,
    psfv: Option<&SfvPosition>,
    pa: &PaConfig,
) -> Result<Vec3, GeometryError> {
    let rt = pa.orientation.matrix().transpose();
    let r = match psfv {
        None => rt * (p_mt - pa.position),
        Some(s) => {
            let va = sfv_to_va(pa.position, s);
            rt * householder(s) * (p_mt - va)
        }
    };
    if r.norm() == 0.0 {
        return Err(GeometryError::DegenerateRay);
    }
    Ok(r)
}

/// Delay / elevation / azimuth of a local ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalParams {
    pub delay: f64,
    pub elevation: f64,
    pub azimuth: f64,
    /// The ray points along ±z; azimuth is reported as 0 by convention.
    pub at_pole: bool,
}

/// `τ = ‖r‖/c`, `θ = arccos(r_z/‖r‖) ∈ [0,π]`, `φ = atan2(r_y, r_x)`.
/// At the ±z pole the azimuth is undefined; it is returned as 0 and flagged
/// so downstream Fisher-information code can skip the singular direction.
pub fn spherical_params(ray: &Vec3) -> Result<SphericalParams, GeometryError> {
    let norm = ray.norm();
    if norm == 0.0 {
        return Err(GeometryError::DegenerateRay);
    }
    let at_pole = ray.x == 0.0 && ray.y == 0.0;
    Ok(SphericalParams {
        delay: norm / SPEED_OF_LIGHT,
        elevation: (ray.z / norm).clamp(-1.0, 1.0).acos(),
        azimuth: if at_pole { 0.0 } else { ray.y.atan2(ray.x) },
        at_pole,
    })
}

/// Inverse of [`spherical_params`] on the unit sphere (directional cosines).
pub fn unit_ray(elevation: f64, azimuth: f64) -> Vec3 {
    Vec3::new(
        elevation.sin() * azimuth.cos(),
        elevation.sin() * azimuth.sin(),
        elevation.cos(),
    )
}

/// Mirror image of an arbitrary point across the surface encoded by `psfv`.
/// `sfv_to_va` is this map applied to an anchor position.
pub fn mirror_point(x: Vec3, psfv: &SfvPosition) -> Vec3 {
    householder(psfv) * x + psfv.vector()
}

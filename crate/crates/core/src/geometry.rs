//! Vector and pose types plus the mapping between camera placements and the
//! unit-cube coordinates seen by the optimizer.
//!
//! Each camera is described to the optimizer by five numbers: its position
//! `(x, y, z)` inside an axis-aligned box, and its viewing direction as
//! `(azimuth, elevation)`. All five are affinely rescaled to `[0, 1]`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Number of optimizer coordinates per camera.
pub const COORDS_PER_CAMERA: usize = 5;

pub(crate) fn is_finite(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

/// Cosine of the angle between `a` and `b`, clamped to `[-1, 1]`.
pub fn angle_cosine(a: &Vec3, b: &Vec3) -> Result<f64> {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::domain("angle_cosine of a zero vector"));
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Position and unit viewing direction of one camera.
///
/// `orientation` points from the camera into the scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: Vec3,
    pub orientation: Vec3,
}

impl CameraPose {
    pub fn new(position: Vec3, orientation: Vec3) -> Result<Self> {
        if !is_finite(&position) || !is_finite(&orientation) {
            return Err(Error::domain("camera pose has non-finite components"));
        }
        let norm = orientation.norm();
        if norm == 0.0 {
            return Err(Error::domain("camera orientation has zero norm"));
        }
        Ok(Self {
            position,
            orientation: orientation / norm,
        })
    }

    /// Camera at `position` looking at `target`.
    pub fn looking_at(position: Vec3, target: Vec3) -> Result<Self> {
        Self::new(position, target - position)
    }

    /// Build from spherical viewing angles. Azimuth is measured in the xy-plane
    /// from +x toward +y, elevation upward from that plane.
    pub fn from_angles(position: Vec3, azimuth: f64, elevation: f64) -> Result<Self> {
        let (sa, ca) = azimuth.sin_cos();
        let (se, ce) = elevation.sin_cos();
        Self::new(position, Vec3::new(ce * ca, ce * sa, se))
    }

    /// Azimuth in `[0, 2π)`.
    pub fn azimuth(&self) -> f64 {
        let a = self.orientation.y.atan2(self.orientation.x);
        let a = if a < 0.0 { a + TAU } else { a };
        if a >= TAU {
            0.0
        } else {
            a
        }
    }

    /// Elevation in `[-π/2, π/2]`.
    pub fn elevation(&self) -> f64 {
        self.orientation.z.clamp(-1.0, 1.0).asin()
    }
}

/// Ordered list of `N >= 2` camera poses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    cameras: Vec<CameraPose>,
}

impl Placement {
    pub fn new(cameras: Vec<CameraPose>) -> Result<Self> {
        if cameras.len() < 2 {
            return Err(Error::domain(format!(
                "a placement needs at least 2 cameras, got {}",
                cameras.len()
            )));
        }
        Ok(Self { cameras })
    }

    pub fn cameras(&self) -> &[CameraPose] {
        &self.cameras
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.cameras.len() * COORDS_PER_CAMERA
    }
}

/// How the last two per-camera coordinates describe the viewing direction.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OrientationMode {
    /// World azimuth in `[0, 2π)` and elevation in `[-π/2, π/2]`.
    #[default]
    Absolute,
    /// Yaw and pitch offsets in `[-max_offset, max_offset]` from the direction
    /// toward `target`. The offset frame uses world +z as its up reference.
    Aimed { target: Vec3, max_offset: f64 },
}

/// Orthonormal frame whose forward axis points from `position` to `target`.
fn aim_frame(position: &Vec3, target: &Vec3) -> Result<(Vec3, Vec3, Vec3)> {
    let d = target - position;
    let n = d.norm();
    if n == 0.0 {
        return Err(Error::domain("camera sits on its aim target"));
    }
    let forward = d / n;
    let mut right = forward.cross(&Vec3::z());
    if right.norm() < 1e-12 {
        right = forward.cross(&Vec3::x());
    }
    let right = right.normalize();
    let up = right.cross(&forward);
    Ok((forward, right, up))
}

/// Feasible camera positions (an axis-aligned box, meters) and the
/// orientation parameterization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub lower: Vec3,
    pub upper: Vec3,
    #[serde(default)]
    pub orientation: OrientationMode,
}

impl SearchSpace {
    pub fn new(lower: Vec3, upper: Vec3) -> Result<Self> {
        if !is_finite(&lower) || !is_finite(&upper) {
            return Err(Error::domain("search box bounds must be finite"));
        }
        if (0..3).any(|i| lower[i] >= upper[i]) {
            return Err(Error::domain(format!(
                "search box lower bound {lower:?} not strictly below upper bound {upper:?}"
            )));
        }
        Ok(Self {
            lower,
            upper,
            orientation: OrientationMode::Absolute,
        })
    }

    /// Restrict viewing directions to within `max_offset` (per axis) of the
    /// direction toward `target`.
    pub fn aimed_at(mut self, target: Vec3, max_offset: f64) -> Result<Self> {
        if !is_finite(&target) {
            return Err(Error::domain("aim target must be finite"));
        }
        if !(max_offset > 0.0 && max_offset <= FRAC_PI_2) {
            return Err(Error::domain(format!(
                "aim offset {max_offset} outside (0, π/2]"
            )));
        }
        self.orientation = OrientationMode::Aimed { target, max_offset };
        Ok(self)
    }

    fn encode_orientation(&self, cam: &CameraPose) -> Result<[f64; 2]> {
        match self.orientation {
            OrientationMode::Absolute => Ok([
                cam.azimuth() / TAU,
                (cam.elevation() + FRAC_PI_2) / PI,
            ]),
            OrientationMode::Aimed { target, max_offset } => {
                let (forward, right, up) = aim_frame(&cam.position, &target)?;
                let o = cam.orientation;
                let pitch = o.dot(&up).clamp(-1.0, 1.0).asin();
                let yaw = o.dot(&right).atan2(o.dot(&forward));
                let slack = 1e-12;
                if yaw.abs() > max_offset + slack || pitch.abs() > max_offset + slack {
                    return Err(Error::domain(format!(
                        "camera orientation is more than {max_offset} rad off its aim direction"
                    )));
                }
                let unit = |a: f64| (0.5 + a / (2.0 * max_offset)).clamp(0.0, 1.0);
                Ok([unit(yaw), unit(pitch)])
            }
        }
    }

    fn decode_orientation(&self, position: Vec3, u: [f64; 2]) -> Result<CameraPose> {
        match self.orientation {
            OrientationMode::Absolute => {
                CameraPose::from_angles(position, u[0] * TAU, u[1] * PI - FRAC_PI_2)
            }
            OrientationMode::Aimed { target, max_offset } => {
                let (forward, right, up) = aim_frame(&position, &target)?;
                let yaw = (u[0] - 0.5) * 2.0 * max_offset;
                let pitch = (u[1] - 0.5) * 2.0 * max_offset;
                let (sy, cy) = yaw.sin_cos();
                let (sp, cp) = pitch.sin_cos();
                CameraPose::new(position, forward * (cy * cp) + right * (sy * cp) + up * sp)
            }
        }
    }

    pub fn center(&self) -> Vec3 {
        (self.lower + self.upper) * 0.5
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.lower[i] && p[i] <= self.upper[i])
    }

    /// Dimension of the encoded vector for `n_cameras` cameras.
    pub fn dimension(&self, n_cameras: usize) -> usize {
        n_cameras * COORDS_PER_CAMERA
    }

    pub fn encode(&self, placement: &Placement) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(placement.dimension());
        for (k, cam) in placement.cameras().iter().enumerate() {
            if !self.contains(&cam.position) {
                return Err(Error::domain(format!(
                    "camera {k} at {:?} lies outside the search box",
                    cam.position
                )));
            }
            for i in 0..3 {
                out.push((cam.position[i] - self.lower[i]) / (self.upper[i] - self.lower[i]));
            }
            out.extend(self.encode_orientation(cam)?);
        }
        Ok(out)
    }

    pub fn decode(&self, x: &[f64]) -> Result<Placement> {
        if x.is_empty() || x.len() % COORDS_PER_CAMERA != 0 {
            return Err(Error::domain(format!(
                "encoded placement length {} is not a positive multiple of {COORDS_PER_CAMERA}",
                x.len()
            )));
        }
        if let Some(bad) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::domain(format!(
                "encoded coordinate {bad} outside [0, 1]"
            )));
        }
        let cameras = x
            .chunks_exact(COORDS_PER_CAMERA)
            .map(|c| {
                let position = Vec3::from_fn(|i, _| {
                    self.lower[i] + c[i] * (self.upper[i] - self.lower[i])
                });
                self.decode_orientation(position, [c[3], c[4]])
            })
            .collect::<Result<Vec<_>>>()?;
        Placement::new(cameras)
    }
}

//! Geometric reconstruction-quality reward of a camera placement.
//!
//! For every point and every unordered camera pair `(i, j)` the reward adds the
//! sine of the triangulation angle at the point, but only if the point lies in
//! both cameras' field of view and the two viewing rays are close enough for
//! features to match. The total is normalized by `points * pairs`, so the
//! reward lies in `[0, 1]`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_cosine, is_finite, CameraPose, Placement, Vec3};

/// Points below this count are summed on the calling thread.
const PARALLEL_MIN_POINTS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    /// Full cone angle of the camera field of view, radians.
    pub fov: f64,
    /// Largest angle between two viewing rays that still allows matching.
    pub theta_match: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            fov: FRAC_PI_2,
            theta_match: FRAC_PI_4,
        }
    }
}

impl RewardParams {
    pub fn new(fov: f64, theta_match: f64) -> Result<Self> {
        let p = Self { fov, theta_match };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov > 0.0 && self.fov < TAU) {
            return Err(Error::domain(format!("fov {} outside (0, 2π)", self.fov)));
        }
        if !(self.theta_match > 0.0 && self.theta_match < FRAC_PI_2) {
            return Err(Error::domain(format!(
                "theta_match {} outside (0, π/2)",
                self.theta_match
            )));
        }
        Ok(())
    }

    fn cos_half_fov(&self) -> f64 {
        (self.fov / 2.0).cos()
    }

    fn cos_match(&self) -> f64 {
        self.theta_match.cos()
    }
}

/// Non-empty ordered list of finite points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::domain("point cloud is empty"));
        }
        if let Some(k) = points.iter().position(|p| !is_finite(p)) {
            return Err(Error::domain(format!("point {k} is not finite")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        self.points.iter().sum::<Vec3>() / self.points.len() as f64
    }

    /// Componentwise `(min, max)`.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        self.points.iter().fold(
            (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
            |(lo, hi), p| (lo.inf(p), hi.sup(p)),
        )
    }
}

fn ray(c: &Vec3, p: &Vec3) -> Result<Vec3> {
    let d = c - p;
    if d.norm() == 0.0 {
        return Err(Error::domain(format!("camera at {c:?} coincides with a point")));
    }
    Ok(d)
}

/// Sine of the angle between the rays `ci - p` and `cj - p`.
pub fn pair_quality(ci: &Vec3, cj: &Vec3, p: &Vec3) -> Result<f64> {
    let a = ray(ci, p)?;
    let b = ray(cj, p)?;
    Ok((a.cross(&b).norm() / (a.norm() * b.norm())).clamp(0.0, 1.0))
}

/// Whether `p` lies inside the field-of-view cone of `cam`.
///
/// The stored orientation is the viewing direction, so the cone test compares
/// it against `p - c`, the negation of the camera-to-point ray `c - p`.
pub fn fov_condition(cam: &CameraPose, p: &Vec3, params: &RewardParams) -> Result<bool> {
    let r = ray(&cam.position, p)?;
    Ok(angle_cosine(&-r, &cam.orientation)? >= params.cos_half_fov())
}

/// Whether the rays from `p` to the two cameras are within `theta_match`.
pub fn match_condition(ci: &Vec3, cj: &Vec3, p: &Vec3, params: &RewardParams) -> Result<bool> {
    let a = ray(ci, p)?;
    let b = ray(cj, p)?;
    Ok(angle_cosine(&a, &b)? >= params.cos_match())
}

/// Product of the two field-of-view indicators and the match indicator.
pub fn pair_visibility(
    cami: &CameraPose,
    camj: &CameraPose,
    p: &Vec3,
    params: &RewardParams,
) -> Result<u8> {
    let seen = fov_condition(cami, p, params)?
        && fov_condition(camj, p, params)?
        && match_condition(&cami.position, &camj.position, p, params)?;
    Ok(u8::from(seen))
}

/// Number of unordered camera pairs.
pub fn pair_count(n_cameras: usize) -> usize {
    n_cameras * n_cameras.saturating_sub(1) / 2
}

struct Ray {
    dir: Vec3,
    norm: f64,
    in_view: bool,
}

fn point_sum(cams: &[CameraPose], p: &Vec3, params: &RewardParams, rays: &mut Vec<Ray>) -> Result<f64> {
    let cos_fov = params.cos_half_fov();
    let cos_match = params.cos_match();
    rays.clear();
    for cam in cams {
        let dir = cam.position - p;
        let norm = dir.norm();
        if norm == 0.0 {
            return Err(Error::domain(format!(
                "camera at {:?} coincides with a point",
                cam.position
            )));
        }
        // orientation is unit length
        let cos_view = (-dir.dot(&cam.orientation) / norm).clamp(-1.0, 1.0);
        rays.push(Ray {
            dir,
            norm,
            in_view: cos_view >= cos_fov,
        });
    }
    let mut sum = 0.0;
    for i in 0..rays.len() {
        if !rays[i].in_view {
            continue;
        }
        for j in (i + 1)..rays.len() {
            if !rays[j].in_view {
                continue;
            }
            let (a, b) = (&rays[i], &rays[j]);
            let denom = a.norm * b.norm;
            let cos_pair = (a.dir.dot(&b.dir) / denom).clamp(-1.0, 1.0);
            if cos_pair >= cos_match {
                sum += (a.dir.cross(&b.dir).norm() / denom).clamp(0.0, 1.0);
            }
        }
    }
    Ok(sum)
}

/// Reward of `placement` over `cloud`, in `[0, 1]`.
///
/// Per-point partial sums are added in point order, so serial and parallel
/// evaluation give bit-identical results.
pub fn reward(placement: &Placement, cloud: &PointCloud, params: &RewardParams) -> Result<f64> {
    let cams = placement.cameras();
    if cams.len() < 2 {
        return Err(Error::domain("reward needs at least 2 cameras"));
    }
    let points = cloud.points();
    let partials: Vec<f64> = if points.len() >= PARALLEL_MIN_POINTS {
        points
            .par_iter()
            .map_init(Vec::new, |rays, p| point_sum(cams, p, params, rays))
            .collect::<Result<_>>()?
    } else {
        let mut rays = Vec::with_capacity(cams.len());
        points
            .iter()
            .map(|p| point_sum(cams, p, params, &mut rays))
            .collect::<Result<_>>()?
    };
    let total: f64 = partials.iter().sum();
    let norm = (points.len() * pair_count(cams.len())) as f64;
    Ok((total / norm).clamp(0.0, 1.0))
}

/// Reward evaluated on a noise-displaced cloud.
pub fn noisy_reward(
    placement: &Placement,
    noisy_cloud: &PointCloud,
    params: &RewardParams,
) -> Result<f64> {
    reward(placement, noisy_cloud, params)
}

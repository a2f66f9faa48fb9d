//! Procedural plant scenes and the height-graded motion-noise model.
//!
//! A plant is a vertical stem with a handful of drooping leaf arcs. Every plant
//! gets a random yaw and a scale within 10% of nominal. Motion noise shifts all
//! points of a plant along one wind direction by an amount that grows linearly
//! from zero at the plant base to a single scalar draw at its top.

use std::f64::consts::TAU;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{is_finite, Vec3};
use crate::reward::PointCloud;

/// Variance of the scalar motion draw used in the reference experiments (m²).
pub const DEFAULT_NOISE_VARIANCE: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Single,
    Row3,
    Grid9,
}

impl Layout {
    pub fn name(&self) -> &'static str {
        match self {
            Layout::Single => "single",
            Layout::Row3 => "row3",
            Layout::Grid9 => "grid9",
        }
    }

    /// Camera count used for this layout in the reference experiments.
    pub fn default_cameras(&self) -> usize {
        match self {
            Layout::Single => 4,
            Layout::Row3 | Layout::Grid9 => 6,
        }
    }

    /// Ground positions of the plant bases.
    pub fn sites(&self, spacing: f64) -> Vec<Vec3> {
        match self {
            Layout::Single => vec![Vec3::zeros()],
            Layout::Row3 => (-1..=1)
                .map(|i| Vec3::new(i as f64 * spacing, 0.0, 0.0))
                .collect(),
            Layout::Grid9 => (-1..=1)
                .flat_map(|j| (-1..=1).map(move |i| Vec3::new(i as f64 * spacing, j as f64 * spacing, 0.0)))
                .collect(),
        }
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Layout::Single),
            "row3" => Ok(Layout::Row3),
            "grid9" => Ok(Layout::Grid9),
            other => Err(Error::domain(format!(
                "unknown scene layout '{other}' (expected single, row3 or grid9)"
            ))),
        }
    }
}

impl std::fmt::Display for Layout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub layout: Layout,
    /// Distance between neighbouring plant bases, meters.
    pub plant_spacing: f64,
    pub points_per_plant: usize,
    /// Nominal plant height before per-plant scaling, meters.
    pub base_height: f64,
    pub rng_seed: u64,
}

impl SceneSpec {
    pub fn new(layout: Layout, rng_seed: u64) -> Self {
        Self {
            layout,
            plant_spacing: 0.6,
            points_per_plant: 200,
            base_height: 1.0,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points_per_plant < 10 {
            return Err(Error::domain(format!(
                "points_per_plant must be at least 10, got {}",
                self.points_per_plant
            )));
        }
        if !(self.plant_spacing > 0.0 && self.plant_spacing.is_finite()) {
            return Err(Error::domain("plant_spacing must be positive"));
        }
        if !(self.base_height > 0.0 && self.base_height.is_finite()) {
            return Err(Error::domain("base_height must be positive"));
        }
        Ok(())
    }
}

/// Placement record for one generated plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantInfo {
    /// Index range of this plant's points within the cloud.
    pub start: usize,
    pub end: usize,
    pub base: Vec3,
    pub yaw: f64,
    pub scale: f64,
}

impl PlantInfo {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

/// A point cloud together with its per-plant segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cloud: PointCloud,
    pub plants: Vec<PlantInfo>,
}

impl Scene {
    /// Treat a bare cloud as a single plant rooted at its lowest point.
    pub fn from_cloud(cloud: PointCloud) -> Self {
        let (lo, _) = cloud.bounds();
        let c = cloud.centroid();
        let plants = vec![PlantInfo {
            start: 0,
            end: cloud.len(),
            base: Vec3::new(c.x, c.y, lo.z),
            yaw: 0.0,
            scale: 1.0,
        }];
        Self { cloud, plants }
    }

    pub fn with_plants(cloud: PointCloud, plants: Vec<PlantInfo>) -> Result<Self> {
        let mut next = 0;
        for p in &plants {
            if p.start != next || p.end <= p.start {
                return Err(Error::domain("plant index ranges must tile the cloud in order"));
            }
            next = p.end;
        }
        if next != cloud.len() {
            return Err(Error::domain(format!(
                "plant ranges cover {next} points but the cloud has {}",
                cloud.len()
            )));
        }
        Ok(Self { cloud, plants })
    }
}

fn build_plant(rng: &mut ChaCha8Rng, n_points: usize, height: f64) -> Vec<Vec3> {
    let n_stem = (n_points * 3 / 10).max(3);
    let n_leaf_points = n_points - n_stem;
    let n_leaves = rng.gen_range(4..=8usize);
    let stem_radius = 0.012 * height;

    let mut pts = Vec::with_capacity(n_points);
    for k in 0..n_stem {
        let z = height * (k as f64 + rng.gen::<f64>()) / n_stem as f64;
        let a = rng.gen::<f64>() * TAU;
        let r = stem_radius * rng.gen::<f64>().sqrt();
        pts.push(Vec3::new(r * a.cos(), r * a.sin(), z));
    }

    struct Leaf {
        attach: f64,
        heading: f64,
        length: f64,
        rise: f64,
    }
    let leaves: Vec<Leaf> = (0..n_leaves)
        .map(|k| Leaf {
            attach: height * (0.2 + 0.7 * (k as f64 + rng.gen::<f64>()) / n_leaves as f64),
            // alternate sides like a grass stalk, with some spread
            heading: (k % 2) as f64 * std::f64::consts::PI + rng.gen_range(-0.6..0.6),
            length: height * rng.gen_range(0.3..0.5),
            rise: rng.gen_range(0.2..0.6),
        })
        .collect();

    for k in 0..n_leaf_points {
        let leaf = &leaves[k % n_leaves];
        let t: f64 = rng.gen();
        let radial = leaf.length * t;
        // rises first, then droops
        let dz = leaf.length * (leaf.rise * t - 0.7 * t * t);
        let width = 0.03 * height * (1.0 - t) * rng.gen_range(-1.0..1.0);
        let (s, c) = leaf.heading.sin_cos();
        pts.push(Vec3::new(
            radial * c - width * s,
            radial * s + width * c,
            (leaf.attach + dz).max(0.0),
        ));
    }
    pts
}

/// Generate a scene; bit-deterministic in `spec.rng_seed`.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut points = Vec::with_capacity(spec.points_per_plant * 9);
    let mut plants = Vec::new();
    for base in spec.layout.sites(spec.plant_spacing) {
        let yaw = rng.gen::<f64>() * TAU;
        let scale = rng.gen_range(0.9..=1.1);
        let local = build_plant(&mut rng, spec.points_per_plant, spec.base_height);
        let (s, c) = yaw.sin_cos();
        let start = points.len();
        points.extend(local.into_iter().map(|p| {
            let p = p * scale;
            base + Vec3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z)
        }));
        plants.push(PlantInfo {
            start,
            end: points.len(),
            base,
            yaw,
            scale,
        });
    }
    Scene::with_plants(PointCloud::new(points)?, plants)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Motion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    /// Standard deviation of the per-plant scalar draw, meters.
    pub sigma: f64,
    /// Unit wind direction.
    pub direction: Vec3,
    pub rng_seed: u64,
    /// Use one draw for every plant instead of independent per-plant draws.
    #[serde(default)]
    pub shared_across_plants: bool,
}

impl NoiseModel {
    pub fn motion(sigma: f64, rng_seed: u64) -> Self {
        Self {
            kind: NoiseKind::Motion,
            sigma,
            direction: Vec3::x(),
            rng_seed,
            shared_across_plants: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::domain(format!("noise sigma {} must be >= 0", self.sigma)));
        }
        if !is_finite(&self.direction) || (self.direction.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::domain("noise direction must be a unit vector"));
        }
        Ok(())
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::motion(DEFAULT_NOISE_VARIANCE.sqrt(), 0)
    }
}

/// Per-point displacement field for one noise draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRealization {
    pub offsets: Vec<Vec3>,
    pub realization_id: u64,
}

impl NoiseRealization {
    pub fn zero(n_points: usize) -> Self {
        Self {
            offsets: vec![Vec3::zeros(); n_points],
            realization_id: 0,
        }
    }

    pub fn negated(&self) -> Self {
        Self {
            offsets: self.offsets.iter().map(|o| -o).collect(),
            realization_id: self.realization_id,
        }
    }
}

/// Height of each point within its plant, mapped to `[0, 1]`.
fn height_fractions(points: &[Vec3]) -> impl Iterator<Item = f64> + '_ {
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.z), hi.max(p.z)));
    let span = hi - lo;
    points
        .iter()
        .map(move |p| if span > 0.0 { (p.z - lo) / span } else { 0.0 })
}

pub fn sample_realization(
    model: &NoiseModel,
    scene: &Scene,
    realization_id: u64,
) -> Result<NoiseRealization> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(model.rng_seed ^ realization_id);
    let normal = Normal::new(0.0, model.sigma).map_err(|e| Error::domain(e.to_string()))?;
    let shared = normal.sample(&mut rng);
    let points = scene.cloud.points();
    let mut offsets = Vec::with_capacity(points.len());
    for plant in &scene.plants {
        let s = if model.shared_across_plants {
            shared
        } else {
            normal.sample(&mut rng)
        };
        offsets.extend(height_fractions(&points[plant.range()]).map(|h| model.direction * (s * h)));
    }
    Ok(NoiseRealization {
        offsets,
        realization_id,
    })
}

pub fn apply_noise(cloud: &PointCloud, realization: &NoiseRealization) -> Result<PointCloud> {
    if cloud.len() != realization.offsets.len() {
        return Err(Error::domain(format!(
            "realization has {} offsets for a cloud of {} points",
            realization.offsets.len(),
            cloud.len()
        )));
    }
    PointCloud::new(
        cloud
            .points()
            .iter()
            .zip(&realization.offsets)
            .map(|(p, o)| p + o)
            .collect(),
    )
}

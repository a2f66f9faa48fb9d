//! File formats: ASCII PLY point clouds, JSON sidecars and run configs, and
//! CSV regret reports.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionOptions;
use crate::error::{Error, Result};
use crate::geometry::{Placement, SearchSpace, Vec3};
use crate::gp::{FitOptions, KernelFamily};
use crate::planner::{
    aimed_search_space, default_acquisition, default_priors, default_search_space, derive_seed, BaselineResult, BoConfig,
    CellOutcome, ExperimentConfig, ExperimentReport, NoiseMode, RegretTrace, BASELINE_METHOD,
    DEFAULT_AIM_OFFSET, DEFAULT_MARGIN,
};
use crate::reward::{PointCloud, RewardParams};
use crate::scene::{generate_scene, Layout, NoiseModel, PlantInfo, Scene, SceneSpec, DEFAULT_NOISE_VARIANCE};

/// Column header shared by every trace and report CSV.
pub const TRACE_HEADER: &str = "scene,kernel,realization,iteration,observed,running_best,simple_regret";

pub fn write_ply<W: Write>(mut w: W, cloud: &PointCloud) -> Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property double {axis}")?;
    }
    writeln!(w, "end_header")?;
    // Rust's float formatting is shortest round-trip, so reading back is exact.
    for p in cloud.points() {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the `x`, `y`, `z` properties of the vertex element of an ASCII PLY
/// file. Other properties and elements after the vertices are ignored.
pub fn read_ply<R: BufRead>(r: R) -> Result<PointCloud> {
    let mut lines = r.lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| Error::Parse("unexpected end of PLY file".into()))?
            .map_err(Error::from)
    };
    if next()?.trim() != "ply" {
        return Err(Error::Parse("missing `ply` magic line".into()));
    }
    let mut vertices: Option<usize> = None;
    let mut in_vertex = false;
    let mut props: Vec<String> = Vec::new();
    loop {
        let line = next()?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(Error::Parse(format!("unsupported PLY format `{other}`")));
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    if vertices.is_some() {
                        return Err(Error::Parse("duplicate vertex element".into()));
                    }
                    if props.is_empty() && vertices.is_none() {
                        vertices = Some(count.parse().map_err(|_| {
                            Error::Parse(format!("bad vertex count `{count}`"))
                        })?);
                    }
                } else if vertices.is_none() {
                    return Err(Error::Parse("vertex must be the first PLY element".into()));
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(Error::Parse("list properties on vertices are not supported".into()));
            }
            ["property", _, name] => {
                if in_vertex {
                    props.push(name.to_string());
                }
            }
            ["end_header"] => break,
            _ => return Err(Error::Parse(format!("unrecognized PLY header line `{line}`"))),
        }
    }
    let n = vertices.ok_or_else(|| Error::Parse("PLY file has no vertex element".into()))?;
    let col = |axis: &str| {
        props
            .iter()
            .position(|p| p == axis)
            .ok_or_else(|| Error::Parse(format!("PLY vertices lack property `{axis}`")))
    };
    let (ix, iy, iz) = (col("x")?, col("y")?, col("z")?);
    let mut points = Vec::with_capacity(n);
    for k in 0..n {
        let line = next()?;
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != props.len() {
            return Err(Error::Parse(format!(
                "vertex {k}: expected {} values, got {}",
                props.len(),
                vals.len()
            )));
        }
        let num = |i: usize| {
            vals[i]
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("vertex {k}: bad number `{}`", vals[i])))
        };
        points.push(Vec3::new(num(ix)?, num(iy)?, num(iz)?));
    }
    PointCloud::new(points)
}

pub fn save_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_ply(BufWriter::new(fs::File::create(path)?), cloud)
}

pub fn load_ply(path: &Path) -> Result<PointCloud> {
    read_ply(BufReader::new(fs::File::open(path)?))
}

/// Everything needed to regenerate a PLY written by `generate-scene`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSidecar {
    pub spec: SceneSpec,
    pub plants: Vec<PlantInfo>,
    pub noise: NoiseModel,
    /// Realization applied to the written points, if any.
    pub realization: Option<u64>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// How the search box and orientation coordinates are derived from a scene
/// when no explicit `space` is given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceRule {
    pub margin: f64,
    /// `None` uses absolute azimuth/elevation angles.
    pub aim_offset: Option<f64>,
}

impl Default for SpaceRule {
    fn default() -> Self {
        Self {
            margin: DEFAULT_MARGIN,
            aim_offset: Some(DEFAULT_AIM_OFFSET),
        }
    }
}

impl SpaceRule {
    pub fn apply(&self, cloud: &PointCloud) -> Result<SearchSpace> {
        match self.aim_offset {
            Some(off) => aimed_search_space(cloud, self.margin, off),
            None => default_search_space(cloud, self.margin),
        }
    }
}

/// Full configuration of a CLI run. After [`RunConfig::resolve`] every field,
/// including the search space and all seeds, is explicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scene: SceneSpec,
    /// Layouts run by `experiment`; empty means just `scene.layout`.
    #[serde(default)]
    pub scenes: Vec<Layout>,
    /// Plan on this point cloud instead of generating `scene`.
    #[serde(default)]
    pub ply: Option<PathBuf>,
    pub noise: NoiseModel,
    #[serde(default)]
    pub noise_mode: NoiseMode,
    /// Realization used by `plan` and `baseline`.
    #[serde(default)]
    pub realization: u64,
    pub reward: RewardParams,
    /// `None` picks the layout's default camera count.
    pub n_cameras: Option<usize>,
    pub n_init: usize,
    pub n_iters: usize,
    pub kernel: KernelFamily,
    /// Kernels compared by `experiment`.
    pub kernels: Vec<KernelFamily>,
    pub rng_seed: u64,
    pub acquisition: AcquisitionOptions,
    pub fit: FitOptions,
    #[serde(default)]
    pub refit_every: usize,
    pub space_rule: SpaceRule,
    /// Explicit search space; derived from the scene via `space_rule` if absent.
    pub space: Option<SearchSpace>,
    pub n_realizations: usize,
    pub baseline_candidates: usize,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn new(layout: Layout, seed: u64) -> Self {
        Self {
            scene: SceneSpec::new(layout, seed),
            scenes: Vec::new(),
            ply: None,
            noise: NoiseModel::motion(DEFAULT_NOISE_VARIANCE.sqrt(), derive_seed(seed, 0x401)),
            noise_mode: NoiseMode::Frozen,
            realization: 0,
            reward: RewardParams::default(),
            n_cameras: None,
            n_init: 50,
            n_iters: 200,
            kernel: KernelFamily::Matern25,
            kernels: vec![KernelFamily::Matern25],
            rng_seed: seed,
            acquisition: default_acquisition(),
            fit: FitOptions {
                priors: default_priors(),
                ..FitOptions::default()
            },
            refit_every: 0,
            space_rule: SpaceRule::default(),
            space: None,
            n_realizations: 5,
            baseline_candidates: 50,
            out_dir: PathBuf::from("out"),
        }
    }

    /// Reduced budget for quick end-to-end checks.
    pub fn smoke(&mut self) {
        self.n_init = 10;
        self.n_iters = 30;
        self.n_realizations = 1;
    }

    /// Copy with `scene.layout` switched; layout-dependent fields are reset.
    pub fn with_layout(&self, layout: Layout) -> Self {
        let mut c = self.clone();
        if c.scene.layout != layout {
            c.scene.layout = layout;
            c.space = None;
            c.n_cameras = None;
        }
        c
    }

    /// Scene or loaded cloud that this config plans on. For a PLY input the
    /// scene has no plant records and noise is not applied.
    pub fn load_scene(&self) -> Result<Scene> {
        match &self.ply {
            Some(path) => Ok(Scene::from_cloud(load_ply(path)?)),
            None => generate_scene(&self.scene),
        }
    }

    /// Fill in the camera count and search space from the scene.
    pub fn resolve(&self, scene: &Scene) -> Result<Self> {
        let mut c = self.clone();
        c.n_cameras.get_or_insert(c.scene.layout.default_cameras());
        if c.space.is_none() {
            c.space = Some(c.space_rule.apply(&scene.cloud)?);
        }
        c.bo()?.validate()?;
        c.noise.validate()?;
        Ok(c)
    }

    pub fn bo(&self) -> Result<BoConfig> {
        let space = self
            .space
            .ok_or_else(|| Error::Config("search space not resolved".into()))?;
        let n = self.n_cameras.unwrap_or(self.scene.layout.default_cameras());
        let mut bo = BoConfig::new(n, self.kernel, space, self.rng_seed);
        bo.n_init = self.n_init;
        bo.n_iters = self.n_iters;
        bo.reward = self.reward;
        bo.acquisition = self.acquisition.clone();
        bo.fit = self.fit.clone();
        bo.refit_every = self.refit_every;
        Ok(bo)
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig {
            scene: self.scene.clone(),
            noise: self.noise.clone(),
            noise_mode: self.noise_mode,
            kernels: self.kernels.clone(),
            n_realizations: self.n_realizations,
            baseline_candidates: self.baseline_candidates,
            bo: self.bo()?,
        })
    }
}

fn csv_row<W: Write>(w: &mut W, scene: &str, kernel: &str, realization: u64, t: usize, observed: f64, best: f64, sr: f64) -> Result<()> {
    writeln!(w, "{scene},{kernel},{realization},{t},{observed},{best},{sr}")?;
    Ok(())
}

pub fn write_trace_csv<W: Write>(mut w: W, trace: &RegretTrace) -> Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    write_trace_rows(&mut w, trace)?;
    w.flush()?;
    Ok(())
}

fn write_trace_rows<W: Write>(w: &mut W, trace: &RegretTrace) -> Result<()> {
    let m = &trace.meta;
    for r in &trace.records {
        csv_row(w, &m.scene, &m.kernel, m.realization, r.t, r.observed, r.running_best, r.simple_regret)?;
    }
    Ok(())
}

/// Baseline candidates as trace rows: iteration is the candidate index and
/// the running best is over candidates so far.
fn write_baseline_rows<W: Write>(w: &mut W, scene: &str, realization: u64, b: &BaselineResult) -> Result<()> {
    let mut best = f64::NEG_INFINITY;
    for (k, c) in b.candidates.iter().enumerate() {
        best = best.max(c.value);
        csv_row(w, scene, BASELINE_METHOD, realization, k + 1, c.value, best, 1.0 - best)?;
    }
    Ok(())
}

/// Every cell of a report in the trace schema.
pub fn write_report_csv<W: Write>(mut w: W, report: &ExperimentReport) -> Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for cell in &report.cells {
        match &cell.outcome {
            CellOutcome::Bo(t) => write_trace_rows(&mut w, t)?,
            CellOutcome::Baseline(b) => write_baseline_rows(&mut w, &report.scene, cell.realization, b)?,
            CellOutcome::Failed { .. } => {}
        }
    }
    w.flush()?;
    Ok(())
}

/// Mean simple regret per evaluation for each kernel, plus the mean baseline
/// regret repeated over the same iterations as a horizontal reference.
pub fn write_mean_csv<W: Write>(mut w: W, report: &ExperimentReport) -> Result<()> {
    writeln!(w, "scene,method,iteration,mean_simple_regret")?;
    let mut len = 0;
    for k in &report.config.kernels {
        let curve = report.mean_curve(k.name());
        len = len.max(curve.len());
        for (i, v) in curve.iter().enumerate() {
            writeln!(w, "{},{},{},{v}", report.scene, k.name(), i + 1)?;
        }
    }
    if let Some(b) = report.mean_baseline_regret() {
        for i in 0..len {
            writeln!(w, "{},{BASELINE_METHOD},{},{b}", report.scene, i + 1)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: String,
    pub realization: u64,
    pub seed: Option<u64>,
    pub final_simple_regret: Option<f64>,
    pub complete: bool,
    pub error: Option<String>,
    /// Candidate rewards, for baseline cells.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub scene: String,
    pub config: RunConfig,
    pub cells: Vec<CellSummary>,
    pub mean_baseline_simple_regret: Option<f64>,
    /// Best placement found per cell, in meters.
    pub placements: Vec<Option<Placement>>,
}

pub fn summarize(report: &ExperimentReport, config: &RunConfig) -> Result<ReportSummary> {
    let space = report.config.bo.space;
    let mut cells = Vec::new();
    let mut placements = Vec::new();
    for c in &report.cells {
        let (seed, complete, error, values, placement) = match &c.outcome {
            CellOutcome::Bo(t) => (
                Some(t.meta.seed),
                t.complete,
                t.failure.clone(),
                None,
                t.best().map(|r| space.decode(&r.z)).transpose()?,
            ),
            CellOutcome::Baseline(b) => (None, true, None, Some(b.values()), Some(b.best.clone())),
            CellOutcome::Failed { error } => (None, false, Some(error.clone()), None, None),
        };
        cells.push(CellSummary {
            method: c.method.clone(),
            realization: c.realization,
            seed,
            final_simple_regret: c.final_regret(),
            complete,
            error,
            baseline_values: values,
        });
        placements.push(placement);
    }
    Ok(ReportSummary {
        scene: report.scene.clone(),
        config: config.clone(),
        cells,
        mean_baseline_simple_regret: report.mean_baseline_regret(),
        placements,
    })
}

//! Bayesian-optimization loop, circular-formation baseline and simple-regret
//! bookkeeping.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{maximize_ei, AcquisitionOptions, EiState};
use crate::error::{Error, Result};
use crate::geometry::{CameraPose, Placement, SearchSpace, Vec3, COORDS_PER_CAMERA};
use crate::gp::{self, FitOptions, FitReport, GpModel, HyperPriors, KernelFamily, LogNormalPrior};
use crate::reward::{noisy_reward, PointCloud, RewardParams};
use crate::scene::{apply_noise, generate_scene, sample_realization, NoiseModel, Scene, SceneSpec};

/// Reward value treated as the optimum when computing simple regret.
pub const REGRET_OPTIMUM: f64 = 1.0;

/// Attempts at drawing a valid random placement before giving up.
const MAX_RESAMPLES: usize = 100;

/// SplitMix64 finalizer; spreads `base` and `tag` into an independent seed.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn simple_regret(best_observed: f64, optimum: f64) -> f64 {
    optimum - best_observed
}

/// How the noisy environment is presented to the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// One noise realization is drawn per run and every query sees it.
    #[default]
    Frozen,
    /// Every query sees a fresh realization.
    PerEvaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    pub n_cameras: usize,
    pub n_init: usize,
    pub n_iters: usize,
    pub kernel: KernelFamily,
    pub reward: RewardParams,
    pub space: SearchSpace,
    pub rng_seed: u64,
    pub acquisition: AcquisitionOptions,
    pub fit: FitOptions,
    /// Refit hyperparameters every this many iterations; 0 keeps the values
    /// fitted on the initial design.
    #[serde(default)]
    pub refit_every: usize,
}

impl BoConfig {
    pub fn new(n_cameras: usize, kernel: KernelFamily, space: SearchSpace, rng_seed: u64) -> Self {
        Self {
            n_cameras,
            n_init: 50,
            n_iters: 200,
            kernel,
            reward: RewardParams::default(),
            space,
            rng_seed,
            acquisition: default_acquisition(),
            fit: FitOptions {
                priors: default_priors(),
                ..FitOptions::default()
            },
            refit_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cameras < 2 {
            return Err(Error::Config(format!("need at least 2 cameras, got {}", self.n_cameras)));
        }
        if self.n_init < 2 {
            return Err(Error::Config(format!("need at least 2 initial points, got {}", self.n_init)));
        }
        if self.acquisition.budget == 0 {
            return Err(Error::Config("acquisition budget must be at least 1".into()));
        }
        self.reward.validate()?;
        SearchSpace::new(self.space.lower, self.space.upper)?;
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.space.dimension(self.n_cameras)
    }
}

/// Horizontal padding of the default search box, meters.
pub const DEFAULT_MARGIN: f64 = 0.5;
/// Default per-axis cone half-width of aimed viewing directions, radians.
pub const DEFAULT_AIM_OFFSET: f64 = 0.4;

/// Hyperpriors used by the planner. Without them the marginal likelihood on
/// 50 points in 20–30 dimensions tends to pick a tiny lengthscale and the
/// surrogate degenerates into white noise. The lengthscale prior (median
/// e^0.5 ≈ 1.65 unit-cube lengths) also keeps moves of a single camera
/// correlated with the incumbent, which EI needs to leave placements where
/// one camera pairs with nobody.
pub fn default_priors() -> HyperPriors {
    HyperPriors {
        output_variance: None,
        lengthscale: Some(LogNormalPrior { mean: 0.5, sd: 0.3 }),
        noise_variance: Some(LogNormalPrior { mean: -6.0, sd: 1.0 }),
    }
}

/// Acquisition settings used by the planner: the generic defaults plus
/// candidates that re-place a single camera of the incumbent.
pub fn default_acquisition() -> AcquisitionOptions {
    AcquisitionOptions {
        block_candidates: 512,
        block_size: COORDS_PER_CAMERA,
        ..AcquisitionOptions::default()
    }
}

/// [`default_search_space`] with viewing directions restricted to within
/// `max_offset` radians of the cloud centroid.
pub fn aimed_search_space(cloud: &PointCloud, margin: f64, max_offset: f64) -> Result<SearchSpace> {
    default_search_space(cloud, margin)?.aimed_at(cloud.centroid(), max_offset)
}

/// Axis-aligned box around `cloud`, padded horizontally by `margin` and
/// vertically from the ground up to `margin` above the top.
pub fn default_search_space(cloud: &PointCloud, margin: f64) -> Result<SearchSpace> {
    let (lo, hi) = cloud.bounds();
    SearchSpace::new(
        Vec3::new(lo.x - margin, lo.y - margin, lo.z.min(0.0)),
        Vec3::new(hi.x + margin, hi.y + margin, hi.z + margin),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Bo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// 1-based evaluation index.
    pub t: usize,
    pub phase: Phase,
    pub z: Vec<f64>,
    pub observed: f64,
    pub running_best: f64,
    pub simple_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceMeta {
    pub scene: String,
    pub realization: u64,
    pub kernel: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub meta: TraceMeta,
    pub records: Vec<TraceRecord>,
    pub complete: bool,
    pub failure: Option<String>,
    pub fit: Option<FitReport>,
}

impl RegretTrace {
    fn new(meta: TraceMeta) -> Self {
        Self {
            meta,
            records: Vec::new(),
            complete: false,
            failure: None,
            fit: None,
        }
    }

    fn push(&mut self, phase: Phase, z: Vec<f64>, observed: f64) {
        let running_best = self
            .records
            .last()
            .map_or(observed, |r| r.running_best.max(observed));
        self.records.push(TraceRecord {
            t: self.records.len() + 1,
            phase,
            z,
            observed,
            running_best,
            simple_regret: simple_regret(running_best, REGRET_OPTIMUM),
        });
    }

    pub fn best(&self) -> Option<&TraceRecord> {
        // first record attaining the running best
        let last = self.records.last()?;
        self.records.iter().find(|r| r.observed == last.running_best)
    }

    pub fn final_regret(&self) -> Option<f64> {
        self.records.last().map(|r| r.simple_regret)
    }

    /// Simple regret after `t` evaluations (1-based).
    pub fn regret_at(&self, t: usize) -> Option<f64> {
        self.records.get(t.checked_sub(1)?).map(|r| r.simple_regret)
    }
}

/// Evaluates the (noisy) reward of a placement.
pub trait Objective {
    fn evaluate(&mut self, placement: &Placement) -> Result<f64>;
}

impl<F: FnMut(&Placement) -> Result<f64>> Objective for F {
    fn evaluate(&mut self, placement: &Placement) -> Result<f64> {
        self(placement)
    }
}

/// Reward over one fixed, already-noisy cloud.
pub struct FrozenCloud<'a> {
    pub cloud: &'a PointCloud,
    pub params: RewardParams,
}

impl Objective for FrozenCloud<'_> {
    fn evaluate(&mut self, placement: &Placement) -> Result<f64> {
        noisy_reward(placement, self.cloud, &self.params)
    }
}

/// Reward where every query sees a fresh noise realization.
pub struct ResampledNoise<'a> {
    pub scene: &'a Scene,
    pub noise: &'a NoiseModel,
    pub params: RewardParams,
    pub next_realization: u64,
}

impl Objective for ResampledNoise<'_> {
    fn evaluate(&mut self, placement: &Placement) -> Result<f64> {
        let r = sample_realization(self.noise, self.scene, self.next_realization)?;
        self.next_realization += 1;
        noisy_reward(placement, &apply_noise(&self.scene.cloud, &r)?, &self.params)
    }
}

fn is_domain(e: &Error) -> bool {
    matches!(e, Error::Domain(_))
}

/// Uniform random initial design on the unit cube, evaluated with `objective`.
pub fn init_design(config: &BoConfig, objective: &mut dyn Objective) -> Result<Vec<(Vec<f64>, f64)>> {
    config.validate()?;
    let dim = config.dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.rng_seed, 0x1D));
    let mut design = Vec::with_capacity(config.n_init);
    while design.len() < config.n_init {
        let mut attempt = 0;
        loop {
            let z: Vec<f64> = (0..dim).map(|_| rng.gen()).collect();
            let placement = config.space.decode(&z)?;
            match objective.evaluate(&placement) {
                Ok(v) => {
                    design.push((z, v));
                    break;
                }
                Err(e) if is_domain(&e) && attempt + 1 < MAX_RESAMPLES => attempt += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(design)
}

fn fit_model(config: &BoConfig, inputs: Vec<Vec<f64>>, outputs: Vec<f64>, tag: u64) -> Result<(GpModel, FitReport)> {
    let mut opts = config.fit.clone();
    opts.seed = derive_seed(config.rng_seed, tag);
    gp::fit(config.kernel, inputs, outputs, &opts)
}

/// Run GP-EI Bayesian optimization. Hyperparameters are fitted on the initial
/// design and kept fixed unless `refit_every > 0`. A numerical failure ends the
/// run early and returns the partial trace with `complete == false`.
pub fn run_bo_with(config: &BoConfig, objective: &mut dyn Objective, meta: TraceMeta) -> Result<RegretTrace> {
    config.validate()?;
    let mut trace = RegretTrace::new(meta);
    let design = init_design(config, objective)?;
    for (z, v) in &design {
        trace.push(Phase::Init, z.clone(), *v);
    }
    if config.n_iters == 0 {
        trace.complete = true;
        return Ok(trace);
    }
    let (inputs, outputs): (Vec<_>, Vec<_>) = design.into_iter().unzip();
    let mut model = match fit_model(config, inputs, outputs, 0xF17) {
        Ok((m, report)) => {
            trace.fit = Some(report);
            m
        }
        Err(e @ Error::Numerical { .. }) => {
            trace.failure = Some(e.to_string());
            return Ok(trace);
        }
        Err(e) => return Err(e),
    };

    for iter in 1..=config.n_iters {
        if config.refit_every > 0 && iter > 1 && (iter - 1) % config.refit_every == 0 {
            match fit_model(config, model.inputs().to_vec(), model.outputs().to_vec(), 0xF17 + iter as u64) {
                Ok((m, _)) => model = m,
                Err(e @ Error::Numerical { .. }) => {
                    trace.failure = Some(e.to_string());
                    return Ok(trace);
                }
                Err(e) => return Err(e),
            }
        }
        let state = EiState::new(&model);
        let z = maximize_ei(&state, &config.acquisition, derive_seed(config.rng_seed, 0xA000 + iter as u64))?;
        let value = objective.evaluate(&config.space.decode(&z)?)?;
        trace.push(Phase::Bo, z.clone(), value);
        if let Err(e) = model.push(z, value) {
            trace.failure = Some(e.to_string());
            return Ok(trace);
        }
    }
    trace.complete = true;
    Ok(trace)
}

/// Bayesian optimization of the reward over a fixed noisy cloud.
pub fn run_bo(config: &BoConfig, noisy_cloud: &PointCloud) -> Result<RegretTrace> {
    let mut objective = FrozenCloud {
        cloud: noisy_cloud,
        params: config.reward,
    };
    run_bo_with(
        config,
        &mut objective,
        TraceMeta {
            kernel: config.kernel.name().into(),
            seed: config.rng_seed,
            ..Default::default()
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircleCandidate {
    pub radius: f64,
    pub height: f64,
    /// Azimuth of the first camera, radians.
    pub phase: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub best: Placement,
    pub best_value: f64,
    pub candidates: Vec<CircleCandidate>,
}

impl BaselineResult {
    pub fn values(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.value).collect()
    }

    pub fn simple_regret(&self) -> f64 {
        simple_regret(self.best_value, REGRET_OPTIMUM)
    }
}

/// `n` cameras equally spaced on a horizontal circle around `center`, all
/// looking at `center`.
pub fn circle_placement(center: &Vec3, n: usize, radius: f64, height: f64, phase: f64) -> Result<Placement> {
    let cams = (0..n)
        .map(|k| {
            let a = phase + TAU * k as f64 / n as f64;
            let pos = Vec3::new(center.x + radius * a.cos(), center.y + radius * a.sin(), height);
            CameraPose::looking_at(pos, *center)
        })
        .collect::<Result<Vec<_>>>()?;
    Placement::new(cams)
}

/// Best of `n_candidates` random circular formations centred on the cloud
/// centroid, with radius and height drawn uniformly inside the search box.
pub fn circular_baseline(
    config: &BoConfig,
    cloud: &PointCloud,
    n_candidates: usize,
) -> Result<BaselineResult> {
    config.validate()?;
    if n_candidates == 0 {
        return Err(Error::Config("baseline needs at least one candidate".into()));
    }
    let space = &config.space;
    let center = cloud.centroid();
    if !space.contains(&Vec3::new(center.x, center.y, space.lower.z)) {
        return Err(Error::domain("cloud centroid lies outside the search box footprint"));
    }
    let max_radius = [
        center.x - space.lower.x,
        space.upper.x - center.x,
        center.y - space.lower.y,
        space.upper.y - center.y,
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.rng_seed, 0xC1C));
    let mut candidates = Vec::with_capacity(n_candidates);
    let mut best: Option<(Placement, f64)> = None;
    while candidates.len() < n_candidates {
        let mut attempt = 0;
        loop {
            attempt += 1;
            let radius = rng.gen_range(0.0..=max_radius);
            let height = rng.gen_range(space.lower.z..=space.upper.z);
            let phase = rng.gen_range(0.0..TAU);
            let placement = match circle_placement(&center, config.n_cameras, radius, height, phase) {
                Ok(p) if p.cameras().iter().all(|c| space.contains(&c.position)) => p,
                // camera on the centroid or outside the box
                _ if attempt < MAX_RESAMPLES => continue,
                Ok(_) => return Err(Error::domain("could not fit a circle inside the search box")),
                Err(e) => return Err(e),
            };
            match noisy_reward(&placement, cloud, &config.reward) {
                Ok(value) => {
                    candidates.push(CircleCandidate {
                        radius,
                        height,
                        phase,
                        value,
                    });
                    if best.as_ref().map_or(true, |(_, b)| value > *b) {
                        best = Some((placement, value));
                    }
                    break;
                }
                Err(e) if is_domain(&e) && attempt < MAX_RESAMPLES => continue,
                Err(e) => return Err(e),
            }
        }
    }
    let (best, best_value) = best.expect("at least one candidate");
    Ok(BaselineResult {
        best,
        best_value,
        candidates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scene: SceneSpec,
    pub noise: NoiseModel,
    #[serde(default)]
    pub noise_mode: NoiseMode,
    pub kernels: Vec<KernelFamily>,
    pub n_realizations: usize,
    pub baseline_candidates: usize,
    /// Template for every BO cell; its `kernel` is overridden per cell.
    pub bo: BoConfig,
}

impl ExperimentConfig {
    /// Defaults for one layout: Matérn-5/2, 5 realizations of motion noise,
    /// best-of-50 baseline, aimed search space around the generated scene.
    pub fn for_scene(scene: SceneSpec, seed: u64) -> Result<Self> {
        let generated = generate_scene(&scene)?;
        let space = aimed_search_space(&generated.cloud, DEFAULT_MARGIN, DEFAULT_AIM_OFFSET)?;
        let n = scene.layout.default_cameras();
        Ok(Self {
            noise: NoiseModel::motion(crate::scene::DEFAULT_NOISE_VARIANCE.sqrt(), derive_seed(seed, 0x401)),
            scene,
            noise_mode: NoiseMode::Frozen,
            kernels: vec![KernelFamily::Matern25],
            n_realizations: 5,
            baseline_candidates: 50,
            bo: BoConfig::new(n, KernelFamily::Matern25, space, seed),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CellOutcome {
    Bo(RegretTrace),
    Baseline(BaselineResult),
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentCell {
    /// Kernel name, or `baseline`.
    pub method: String,
    pub realization: u64,
    pub outcome: CellOutcome,
}

impl ExperimentCell {
    pub fn final_regret(&self) -> Option<f64> {
        match &self.outcome {
            CellOutcome::Bo(t) => t.final_regret(),
            CellOutcome::Baseline(b) => Some(b.simple_regret()),
            CellOutcome::Failed { .. } => None,
        }
    }

    pub fn failed(&self) -> bool {
        match &self.outcome {
            CellOutcome::Bo(t) => !t.complete,
            CellOutcome::Baseline(_) => false,
            CellOutcome::Failed { .. } => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scene: String,
    pub config: ExperimentConfig,
    pub cells: Vec<ExperimentCell>,
}

impl ExperimentReport {
    /// Mean simple regret per evaluation index over the completed runs of
    /// `method`.
    pub fn mean_curve(&self, method: &str) -> Vec<f64> {
        let traces: Vec<&RegretTrace> = self
            .cells
            .iter()
            .filter(|c| c.method == method)
            .filter_map(|c| match &c.outcome {
                CellOutcome::Bo(t) if t.complete => Some(t),
                _ => None,
            })
            .collect();
        let Some(len) = traces.iter().map(|t| t.records.len()).min() else {
            return Vec::new();
        };
        (0..len)
            .map(|k| traces.iter().map(|t| t.records[k].simple_regret).sum::<f64>() / traces.len() as f64)
            .collect()
    }

    /// Mean baseline simple regret across realizations.
    pub fn mean_baseline_regret(&self) -> Option<f64> {
        let v: Vec<f64> = self
            .cells
            .iter()
            .filter_map(|c| match &c.outcome {
                CellOutcome::Baseline(b) => Some(b.simple_regret()),
                _ => None,
            })
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn all_failed(&self) -> bool {
        self.cells.iter().all(|c| c.failed())
    }
}

pub const BASELINE_METHOD: &str = "baseline";

/// One noise realization × (kernels + baseline) grid on a generated scene.
/// Cells run in parallel on the current rayon pool; the result depends only
/// on the seeds in `config`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    if config.n_realizations == 0 {
        return Err(Error::Config("need at least one noise realization".into()));
    }
    config.bo.validate()?;
    config.noise.validate()?;
    let scene = generate_scene(&config.scene)?;
    let realizations: Vec<PointCloud> = (0..config.n_realizations as u64)
        .map(|r| apply_noise(&scene.cloud, &sample_realization(&config.noise, &scene, r)?))
        .collect::<Result<_>>()?;

    let mut jobs: Vec<(u64, Option<KernelFamily>)> = Vec::new();
    for r in 0..config.n_realizations as u64 {
        for k in &config.kernels {
            jobs.push((r, Some(*k)));
        }
        jobs.push((r, None));
    }

    let scene_name = config.scene.layout.name().to_string();
    let cells: Vec<ExperimentCell> = jobs
        .par_iter()
        .map(|&(r, kernel)| {
            let cloud = &realizations[r as usize];
            let mut bo = config.bo.clone();
            bo.rng_seed = derive_seed(config.bo.rng_seed, r);
            let (method, outcome) = match kernel {
                Some(k) => {
                    bo.kernel = k;
                    let meta = TraceMeta {
                        scene: scene_name.clone(),
                        realization: r,
                        kernel: k.name().into(),
                        seed: bo.rng_seed,
                    };
                    let result = match config.noise_mode {
                        NoiseMode::Frozen => run_bo_with(
                            &bo,
                            &mut FrozenCloud {
                                cloud,
                                params: bo.reward,
                            },
                            meta,
                        ),
                        NoiseMode::PerEvaluation => run_bo_with(
                            &bo,
                            &mut ResampledNoise {
                                scene: &scene,
                                noise: &config.noise,
                                params: bo.reward,
                                next_realization: derive_seed(config.noise.rng_seed, r),
                            },
                            meta,
                        ),
                    };
                    (k.name().to_string(), result.map(CellOutcome::Bo))
                }
                None => (
                    BASELINE_METHOD.to_string(),
                    circular_baseline(&bo, cloud, config.baseline_candidates).map(CellOutcome::Baseline),
                ),
            };
            ExperimentCell {
                method,
                realization: r,
                outcome: outcome.unwrap_or_else(|e| CellOutcome::Failed { error: e.to_string() }),
            }
        })
        .collect();

    Ok(ExperimentReport {
        scene: scene_name,
        config: config.clone(),
        cells,
    })
}

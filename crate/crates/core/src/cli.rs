//! The `viewplan` command line.

use std::ffi::OsString;
use std::fs;
use std::io::BufWriter;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Placement;
use crate::gp::KernelFamily;
use crate::io::{
    save_ply, summarize, write_json, write_mean_csv, write_report_csv, write_trace_csv, RunConfig,
    SceneSidecar,
};
use crate::planner::{
    circular_baseline, derive_seed, run_bo_with, run_experiment, BaselineResult, FrozenCloud,
    ResampledNoise, TraceMeta,
};
use crate::reward::PointCloud;
use crate::scene::{apply_noise, sample_realization, Layout, Scene};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "viewplan", version, about = "Camera view planning with Bayesian optimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run config; flags below override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub scene: Option<Layout>,
    /// Comma-separated layouts for `experiment`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub scenes: Option<Vec<Layout>>,
    /// Plan on a PLY point cloud instead of a generated scene.
    #[arg(long, global = true)]
    pub ply: Option<PathBuf>,
    #[arg(long, global = true)]
    pub cameras: Option<usize>,
    #[arg(long, global = true)]
    pub kernel: Option<KernelFamily>,
    #[arg(long, global = true)]
    pub init: Option<usize>,
    #[arg(long, global = true)]
    pub iters: Option<usize>,
    /// Master seed; scene, noise and optimizer seeds are derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub noise_sigma: Option<f64>,
    #[arg(long, global = true)]
    pub realizations: Option<usize>,
    /// Noise realization used by `plan`, `baseline` and `generate-scene --noisy`.
    #[arg(long, global = true)]
    pub realization: Option<u64>,
    #[arg(long, global = true)]
    pub candidates: Option<usize>,
    /// Points per plant.
    #[arg(long, global = true)]
    pub points: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// n_init=10, n_iters=30, one realization.
    #[arg(long, global = true)]
    pub smoke: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a procedural scene as PLY plus a JSON sidecar.
    GenerateScene {
        /// Apply the selected noise realization before writing.
        #[arg(long)]
        noisy: bool,
    },
    /// Run GP-EI on one noisy scene.
    Plan,
    /// Best-of-K circular camera formation.
    Baseline,
    /// Kernels × realizations × scenes regret comparison.
    Experiment,
    /// Print the resolved run config as JSON.
    Config,
}

impl Cli {
    /// Config file (or defaults) with flag overrides applied.
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => crate::io::read_json::<RunConfig>(path)?,
            None => {
                let mut c = RunConfig::new(self.scene.unwrap_or(Layout::Single), self.seed.unwrap_or(0));
                c.kernels = KernelFamily::ALL.to_vec();
                c
            }
        };
        if let Some(layout) = self.scene {
            c = c.with_layout(layout);
        }
        if let Some(seed) = self.seed {
            c.rng_seed = seed;
            c.scene.rng_seed = seed;
            c.noise.rng_seed = derive_seed(seed, 0x401);
        }
        if let Some(s) = &self.scenes {
            c.scenes = s.clone();
        }
        if let Some(p) = &self.ply {
            c.ply = Some(p.clone());
        }
        if let Some(n) = self.cameras {
            c.n_cameras = Some(n);
        }
        if let Some(k) = self.kernel {
            c.kernel = k;
            c.kernels = vec![k];
        }
        if self.smoke {
            c.smoke();
        }
        if let Some(v) = self.init {
            c.n_init = v;
        }
        if let Some(v) = self.iters {
            c.n_iters = v;
        }
        if let Some(v) = self.noise_sigma {
            c.noise.sigma = v;
        }
        if let Some(v) = self.realizations {
            c.n_realizations = v;
        }
        if let Some(v) = self.realization {
            c.realization = v;
        }
        if let Some(v) = self.candidates {
            c.baseline_candidates = v;
        }
        if let Some(v) = self.points {
            c.scene.points_per_plant = v;
        }
        if let Some(v) = &self.out {
            c.out_dir = v.clone();
        }
        Ok(c)
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::Json(_) => EXIT_IO,
        Error::Numerical { .. } => EXIT_NUMERICAL,
        Error::Domain(_) | Error::Config(_) | Error::Parse(_) => EXIT_USAGE,
    }
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli) -> Result<i32> {
    let config = cli.run_config()?;
    match &cli.command {
        Command::GenerateScene { noisy } => cmd_generate_scene(&config, *noisy).map(|_| EXIT_OK),
        Command::Plan => cmd_plan(&config),
        Command::Baseline => cmd_baseline(&config).map(|_| EXIT_OK),
        Command::Experiment => cmd_experiment(&config),
        Command::Config => {
            let scene = config.load_scene()?;
            println!("{}", serde_json::to_string_pretty(&config.resolve(&scene)?)?);
            Ok(EXIT_OK)
        }
    }
}

fn out_path(config: &RunConfig, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(&config.out_dir)?;
    Ok(config.out_dir.join(name))
}

fn scene_name(config: &RunConfig) -> String {
    match &config.ply {
        Some(p) => p
            .file_stem()
            .map_or_else(|| "ply".into(), |s| s.to_string_lossy().into_owned()),
        None => config.scene.layout.name().into(),
    }
}

/// The cloud `plan` and `baseline` optimize over: the PLY as given, or the
/// generated scene under the configured noise realization.
fn noisy_cloud(config: &RunConfig, scene: &Scene) -> Result<PointCloud> {
    if config.ply.is_some() {
        return Ok(scene.cloud.clone());
    }
    apply_noise(&scene.cloud, &sample_realization(&config.noise, scene, config.realization)?)
}

/// Returns the PLY and sidecar paths.
pub fn cmd_generate_scene(config: &RunConfig, noisy: bool) -> Result<(PathBuf, PathBuf)> {
    let scene = crate::scene::generate_scene(&config.scene)?;
    config.noise.validate()?;
    let name = config.scene.layout.name();
    let (cloud, realization, stem) = if noisy {
        let r = config.realization;
        (apply_noise(&scene.cloud, &sample_realization(&config.noise, &scene, r)?)?, Some(r), format!("scene_{name}_r{r}"))
    } else {
        (scene.cloud.clone(), None, format!("scene_{name}"))
    };
    let ply = out_path(config, &format!("{stem}.ply"))?;
    let json = out_path(config, &format!("{stem}.json"))?;
    save_ply(&ply, &cloud)?;
    write_json(
        &json,
        &SceneSidecar {
            spec: config.scene.clone(),
            plants: scene.plants.clone(),
            noise: config.noise.clone(),
            realization,
        },
    )?;
    println!("wrote {} ({} points)", ply.display(), cloud.len());
    Ok((ply, json))
}

#[derive(Debug, Serialize)]
struct PlanOutput<'a> {
    config: &'a RunConfig,
    incomplete: bool,
    failure: Option<&'a str>,
    evaluations: usize,
    best_value: Option<f64>,
    final_simple_regret: Option<f64>,
    placement: Option<Placement>,
}

/// Exit code 3 (after writing the partial trace) if the run aborted.
pub fn cmd_plan(config: &RunConfig) -> Result<i32> {
    let scene = config.load_scene()?;
    let config = config.resolve(&scene)?;
    let bo = config.bo()?;
    let name = scene_name(&config);
    let meta = TraceMeta {
        scene: name.clone(),
        realization: config.realization,
        kernel: bo.kernel.name().into(),
        seed: bo.rng_seed,
    };
    let cloud = noisy_cloud(&config, &scene)?;
    let trace = match config.noise_mode {
        crate::planner::NoiseMode::PerEvaluation if config.ply.is_none() => run_bo_with(
            &bo,
            &mut ResampledNoise {
                scene: &scene,
                noise: &config.noise,
                params: bo.reward,
                next_realization: derive_seed(config.noise.rng_seed, config.realization),
            },
            meta,
        )?,
        _ => run_bo_with(
            &bo,
            &mut FrozenCloud {
                cloud: &cloud,
                params: bo.reward,
            },
            meta,
        )?,
    };
    let stem = format!("{name}_{}", bo.kernel.name());
    let csv = out_path(&config, &format!("trace_{stem}.csv"))?;
    write_trace_csv(BufWriter::new(fs::File::create(&csv)?), &trace)?;
    let best = trace.best();
    write_json(
        &out_path(&config, &format!("plan_{stem}.json"))?,
        &PlanOutput {
            config: &config,
            incomplete: !trace.complete,
            failure: trace.failure.as_deref(),
            evaluations: trace.records.len(),
            best_value: best.map(|r| r.observed),
            final_simple_regret: trace.final_regret(),
            placement: best.map(|r| bo.space.decode(&r.z)).transpose()?,
        },
    )?;
    match (trace.final_regret(), best) {
        (Some(sr), Some(b)) => println!("final simple regret {sr:.6}  best reward {:.6}", b.observed),
        _ => println!("no evaluations"),
    }
    if let Some(f) = &trace.failure {
        eprintln!("error: run aborted after {} evaluations: {f}", trace.records.len());
        return Ok(EXIT_NUMERICAL);
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct BaselineOutput<'a> {
    config: &'a RunConfig,
    simple_regret: f64,
    result: &'a BaselineResult,
}

pub fn cmd_baseline(config: &RunConfig) -> Result<BaselineResult> {
    let scene = config.load_scene()?;
    let config = config.resolve(&scene)?;
    let cloud = noisy_cloud(&config, &scene)?;
    let result = circular_baseline(&config.bo()?, &cloud, config.baseline_candidates)?;
    write_json(
        &out_path(&config, &format!("baseline_{}.json", scene_name(&config)))?,
        &BaselineOutput {
            config: &config,
            simple_regret: result.simple_regret(),
            result: &result,
        },
    )?;
    println!(
        "best of {} circles: reward {:.6}  simple regret {:.6}",
        result.candidates.len(),
        result.best_value,
        result.simple_regret()
    );
    Ok(result)
}

/// Writes `report_<scene>.csv`, `mean_<scene>.csv` and `summary_<scene>.json`
/// per layout. Exit code 3 only if every cell of every scene failed.
pub fn cmd_experiment(config: &RunConfig) -> Result<i32> {
    if config.ply.is_some() {
        return Err(Error::Config("experiment runs on generated scenes; drop --ply".into()));
    }
    let layouts = if config.scenes.is_empty() {
        vec![config.scene.layout]
    } else {
        config.scenes.clone()
    };
    let mut all_failed = true;
    for layout in layouts {
        let c = config.with_layout(layout);
        let scene = c.load_scene()?;
        let c = c.resolve(&scene)?;
        let report = run_experiment(&c.experiment()?)?;
        let name = layout.name();
        write_report_csv(BufWriter::new(fs::File::create(out_path(&c, &format!("report_{name}.csv"))?)?), &report)?;
        write_mean_csv(BufWriter::new(fs::File::create(out_path(&c, &format!("mean_{name}.csv"))?)?), &report)?;
        write_json(&out_path(&c, &format!("summary_{name}.json"))?, &summarize(&report, &c)?)?;
        for cell in &report.cells {
            match cell.final_regret() {
                Some(sr) if !cell.failed() => {
                    println!("{name} {} r{}: final simple regret {sr:.6}", cell.method, cell.realization)
                }
                _ => println!("{name} {} r{}: failed", cell.method, cell.realization),
            }
        }
        all_failed &= report.all_failed();
    }
    Ok(if all_failed { EXIT_NUMERICAL } else { EXIT_OK })
}

/// Cap the global rayon pool from `VIEWPLAN_THREADS`, if set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("VIEWPLAN_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| Error::Config(format!("VIEWPLAN_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

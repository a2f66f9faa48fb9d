//! Expected Improvement and its maximization over the unit cube.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::gp::GpModel;

/// Below this posterior standard deviation EI is replaced by its σ → 0 limit.
pub const SIGMA_FLOOR: f64 = 1e-12;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Closed-form EI for a Gaussian with improvement mean `delta = μ - incumbent`
/// and standard deviation `sigma`.
pub fn expected_improvement(delta: f64, sigma: f64) -> f64 {
    if sigma <= SIGMA_FLOOR {
        return delta.max(0.0);
    }
    let u = delta / sigma;
    (delta * normal_cdf(u) + sigma * normal_pdf(u)).max(0.0)
}

/// A fitted model together with the best raw output observed so far.
#[derive(Debug, Clone, Copy)]
pub struct EiState<'a> {
    pub model: &'a GpModel,
    pub incumbent: f64,
}

impl<'a> EiState<'a> {
    pub fn new(model: &'a GpModel) -> Self {
        let incumbent = model
            .outputs()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        Self { model, incumbent }
    }

    pub fn value(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.model.dimension() {
            return Err(Error::domain(format!(
                "EI query has dimension {}, model expects {}",
                z.len(),
                self.model.dimension()
            )));
        }
        Ok(self.value_unchecked(z))
    }

    fn value_unchecked(&self, z: &[f64]) -> f64 {
        let p = self.model.posterior_unchecked(z);
        expected_improvement(p.mean - self.incumbent, p.std_dev())
    }

    /// Training input with the largest output (first on ties).
    pub fn best_input(&self) -> &[f64] {
        let outputs = self.model.outputs();
        let mut best = 0;
        for (k, y) in outputs.iter().enumerate() {
            if *y > outputs[best] {
                best = k;
            }
        }
        &self.model.inputs()[best]
    }
}

pub fn ei_value(state: &EiState<'_>, z: &[f64]) -> Result<f64> {
    state.value(z)
}

/// Additive recurrence quasi-random sequence on `[0,1)^d` built from the
/// generalized golden ratio, with a seeded random shift.
#[derive(Debug, Clone)]
pub struct QuasiSequence {
    alpha: Vec<f64>,
    shift: Vec<f64>,
}

impl QuasiSequence {
    pub fn new(dim: usize, seed: u64) -> Self {
        // unique positive root of x^(d+1) = x + 1
        let mut phi: f64 = 2.0;
        for _ in 0..64 {
            phi = (1.0 + phi).powf(1.0 / (dim as f64 + 1.0));
        }
        let alpha = (1..=dim).map(|k| (1.0 / phi.powi(k as i32)).fract()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift = (0..dim).map(|_| rng.gen::<f64>()).collect();
        Self { alpha, shift }
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        let n = (index + 1) as f64;
        self.alpha
            .iter()
            .zip(&self.shift)
            .map(|(a, s)| (s + n * a).fract())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionOptions {
    /// Quasi-random candidates scored in the global phase.
    pub budget: usize,
    /// Best candidates refined by pattern search.
    pub refine: usize,
    pub initial_step: f64,
    pub min_step: f64,
    /// Cap on EI evaluations per refined candidate.
    pub max_evals_per_start: usize,
    /// Extra candidates drawn as Gaussian perturbations of the incumbent.
    #[serde(default)]
    pub local: usize,
    /// Per-coordinate standard deviation of those perturbations.
    #[serde(default = "default_local_scale")]
    pub local_scale: f64,
    /// Extra candidates that copy the incumbent and redraw one aligned block
    /// of `block_size` coordinates uniformly (one camera, for placements).
    #[serde(default)]
    pub block_candidates: usize,
    #[serde(default)]
    pub block_size: usize,
}

fn default_local_scale() -> f64 {
    0.05
}

impl Default for AcquisitionOptions {
    fn default() -> Self {
        Self {
            budget: 2048,
            refine: 5,
            initial_step: 0.05,
            min_step: 1e-4,
            max_evals_per_start: 2000,
            local: 512,
            local_scale: default_local_scale(),
            block_candidates: 0,
            block_size: 0,
        }
    }
}

/// Coordinate pattern search on `[0,1]^d`, halving the step whenever a full
/// sweep finds no improvement.
fn pattern_search(
    state: &EiState<'_>,
    mut x: Vec<f64>,
    mut fx: f64,
    opts: &AcquisitionOptions,
) -> (Vec<f64>, f64) {
    let mut step = opts.initial_step;
    let mut evals = 0;
    while step >= opts.min_step && evals < opts.max_evals_per_start {
        let mut improved = false;
        for i in 0..x.len() {
            for dir in [1.0, -1.0] {
                let moved = (x[i] + dir * step).clamp(0.0, 1.0);
                if moved == x[i] {
                    continue;
                }
                let old = x[i];
                x[i] = moved;
                let f = state.value_unchecked(&x);
                evals += 1;
                if f > fx {
                    fx = f;
                    improved = true;
                    break;
                }
                x[i] = old;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, fx)
}

/// Approximate `argmax EI` over `[0,1]^d`: score quasi-random candidates plus
/// the incumbent input, then refine the best few by pattern search.
/// Deterministic in `seed`; ties go to the lowest candidate index.
pub fn maximize_ei(state: &EiState<'_>, opts: &AcquisitionOptions, seed: u64) -> Result<Vec<f64>> {
    if opts.budget == 0 {
        return Err(Error::domain("acquisition budget must be at least 1"));
    }
    let dim = state.model.dimension();
    let seq = QuasiSequence::new(dim, seed);
    let mut candidates: Vec<Vec<f64>> = (0..opts.budget).map(|k| seq.point(k)).collect();
    candidates.push(state.best_input().to_vec());
    if opts.local > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x10CA_1000);
        let normal = Normal::new(0.0, opts.local_scale)
            .map_err(|e| Error::domain(format!("local_scale: {e}")))?;
        let center = state.best_input();
        for _ in 0..opts.local {
            candidates.push(
                center
                    .iter()
                    .map(|c| (c + normal.sample(&mut rng)).clamp(0.0, 1.0))
                    .collect(),
            );
        }
    }

    if opts.block_candidates > 0 && opts.block_size > 0 && dim % opts.block_size == 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB10C_0000);
        let blocks = dim / opts.block_size;
        for _ in 0..opts.block_candidates {
            let mut z = state.best_input().to_vec();
            let b = rng.gen_range(0..blocks);
            for v in &mut z[b * opts.block_size..(b + 1) * opts.block_size] {
                *v = rng.gen();
            }
            candidates.push(z);
        }
    }

    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|z| state.value_unchecked(z))
        .collect();

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let refined: Vec<(Vec<f64>, f64)> = order
        .iter()
        .take(opts.refine)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&&k| pattern_search(state, candidates[k].clone(), scores[k], opts))
        .collect();

    let mut best_z = candidates[order[0]].clone();
    let mut best_f = scores[order[0]];
    for (z, f) in refined {
        if f > best_f {
            best_f = f;
            best_z = z;
        }
    }
    Ok(best_z)
}

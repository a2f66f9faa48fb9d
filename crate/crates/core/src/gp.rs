//! Exact Gaussian-process regression with a zero-mean prior.
//!
//! Targets are standardized before conditioning; predictions are mapped back
//! to the raw output scale. The kernel system `K + σ_n² I` is factorized with
//! a Cholesky decomposition, retried with escalating diagonal jitter when it is
//! not numerically positive definite.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;
const SQRT5: f64 = 2.236_067_977_499_79;

/// Diagonal jitter levels tried after a failed factorization.
const JITTER_LADDER: [f64; 5] = [1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Rbf,
    ArdRbf,
    Matern15,
    Matern25,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 4] = [
        KernelFamily::Rbf,
        KernelFamily::ArdRbf,
        KernelFamily::Matern15,
        KernelFamily::Matern25,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::Rbf => "rbf",
            KernelFamily::ArdRbf => "ard",
            KernelFamily::Matern15 => "matern15",
            KernelFamily::Matern25 => "matern25",
        }
    }

    pub fn is_ard(&self) -> bool {
        matches!(self, KernelFamily::ArdRbf)
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rbf" => Ok(KernelFamily::Rbf),
            "ard" | "ard_rbf" => Ok(KernelFamily::ArdRbf),
            "matern15" => Ok(KernelFamily::Matern15),
            "matern25" => Ok(KernelFamily::Matern25),
            other => Err(Error::Config(format!(
                "unknown kernel '{other}' (expected rbf, ard, matern15 or matern25)"
            ))),
        }
    }
}

impl std::fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub output_variance: f64,
    /// One entry (isotropic) or one per input dimension.
    pub lengthscales: Vec<f64>,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, output_variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        let k = Self {
            family,
            output_variance,
            lengthscales,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn isotropic(family: KernelFamily, output_variance: f64, lengthscale: f64) -> Result<Self> {
        Self::new(family, output_variance, vec![lengthscale])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.output_variance > 0.0 && self.output_variance.is_finite()) {
            return Err(Error::domain("kernel output variance must be positive"));
        }
        if self.lengthscales.is_empty() {
            return Err(Error::domain("kernel needs at least one lengthscale"));
        }
        if self.lengthscales.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::domain("kernel lengthscales must be positive"));
        }
        Ok(())
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if self.lengthscales.len() != 1 && self.lengthscales.len() != dim {
            return Err(Error::domain(format!(
                "kernel has {} lengthscales for inputs of dimension {dim}",
                self.lengthscales.len()
            )));
        }
        Ok(())
    }

    fn scaled_sq_dist(&self, a: &[f64], b: &[f64]) -> f64 {
        if let [l] = self.lengthscales[..] {
            let inv = 1.0 / (l * l);
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() * inv
        } else {
            a.iter()
                .zip(b)
                .zip(&self.lengthscales)
                .map(|((x, y), l)| {
                    let d = (x - y) / l;
                    d * d
                })
                .sum()
        }
    }

    fn profile(&self, d2: f64) -> f64 {
        let s2 = self.output_variance;
        match self.family {
            KernelFamily::Rbf | KernelFamily::ArdRbf => s2 * (-0.5 * d2).exp(),
            KernelFamily::Matern15 => {
                let r = SQRT3 * d2.sqrt();
                s2 * (1.0 + r) * (-r).exp()
            }
            KernelFamily::Matern25 => {
                let d = d2.sqrt();
                let r = SQRT5 * d;
                s2 * (1.0 + r + 5.0 * d2 / 3.0) * (-r).exp()
            }
        }
    }

    /// `-(dk/dr) / r`: the factor multiplying `(Δ_i/ℓ_i)²` in `dk/dlog ℓ_i`.
    fn lengthscale_factor(&self, d2: f64) -> f64 {
        let s2 = self.output_variance;
        match self.family {
            KernelFamily::Rbf | KernelFamily::ArdRbf => s2 * (-0.5 * d2).exp(),
            KernelFamily::Matern15 => 3.0 * s2 * (-SQRT3 * d2.sqrt()).exp(),
            KernelFamily::Matern25 => {
                let r = SQRT5 * d2.sqrt();
                s2 * 5.0 / 3.0 * (1.0 + r) * (-r).exp()
            }
        }
    }

    pub(crate) fn eval_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        self.profile(self.scaled_sq_dist(a, b))
    }

    /// Covariance between `a` and `b`.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::domain(format!(
                "kernel inputs have dimensions {} and {}",
                a.len(),
                b.len()
            )));
        }
        self.check_dim(a.len())?;
        Ok(self.eval_unchecked(a, b))
    }

    /// Symmetric kernel matrix over `inputs`.
    pub fn matrix(&self, inputs: &[Vec<f64>]) -> DMatrix<f64> {
        let t = inputs.len();
        let mut k = DMatrix::zeros(t, t);
        for i in 0..t {
            k[(i, i)] = self.output_variance;
            for j in 0..i {
                let v = self.eval_unchecked(&inputs[i], &inputs[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }
}

/// Affine map between raw outputs and the standardized targets the GP sees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub scale: f64,
}

impl Standardization {
    pub const IDENTITY: Self = Self {
        mean: 0.0,
        scale: 1.0,
    };

    /// Zero mean, unit sample standard deviation; a constant sample keeps
    /// scale 1.
    pub fn from_outputs(y: &[f64]) -> Self {
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = if y.len() > 1 {
            y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let scale = var.sqrt();
        Self {
            mean,
            scale: if scale > 1e-12 { scale } else { 1.0 },
        }
    }

    fn forward(&self, y: f64) -> f64 {
        (y - self.mean) / self.scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mean: f64,
    pub variance: f64,
}

impl Posterior {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Serializable hyperparameters and training data of a [`GpModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSnapshot {
    pub kernel: KernelSpec,
    pub noise_variance: f64,
    pub standardize: bool,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<f64>,
}

struct Factor {
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

fn factorize(mut system: DMatrix<f64>, targets: &DVector<f64>) -> Result<Factor> {
    let t = system.nrows();
    let mut jitter = 0.0;
    let mut ladder = JITTER_LADDER.iter();
    loop {
        if let Some(c) = system.clone().cholesky() {
            let alpha = c.solve(targets);
            return Ok(Factor {
                chol: c.unpack(),
                alpha,
                jitter,
            });
        }
        match ladder.next() {
            Some(&next) => {
                for i in 0..t {
                    system[(i, i)] += next - jitter;
                }
                jitter = next;
            }
            None => {
                return Err(Error::Numerical {
                    message: format!("kernel system of size {t} is not positive definite"),
                    jitter,
                })
            }
        }
    }
}

/// Conditioned Gaussian process.
pub struct GpModel {
    kernel: KernelSpec,
    noise_variance: f64,
    standardize: bool,
    transform: Standardization,
    inputs: Vec<Vec<f64>>,
    outputs: Vec<f64>,
    factor: Factor,
}

impl std::fmt::Debug for GpModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GpModel")
            .field("kernel", &self.kernel)
            .field("noise_variance", &self.noise_variance)
            .field("transform", &self.transform)
            .field("observations", &self.outputs.len())
            .field("jitter", &self.factor.jitter)
            .finish()
    }
}

impl GpModel {
    /// Condition on `(inputs, outputs)` with fixed hyperparameters and no
    /// output standardization.
    pub fn new(
        kernel: KernelSpec,
        noise_variance: f64,
        inputs: Vec<Vec<f64>>,
        outputs: Vec<f64>,
    ) -> Result<Self> {
        Self::build(kernel, noise_variance, false, inputs, outputs)
    }

    /// As [`GpModel::new`] but standardizing outputs first.
    pub fn standardized(
        kernel: KernelSpec,
        noise_variance: f64,
        inputs: Vec<Vec<f64>>,
        outputs: Vec<f64>,
    ) -> Result<Self> {
        Self::build(kernel, noise_variance, true, inputs, outputs)
    }

    fn build(
        kernel: KernelSpec,
        noise_variance: f64,
        standardize: bool,
        inputs: Vec<Vec<f64>>,
        outputs: Vec<f64>,
    ) -> Result<Self> {
        kernel.validate()?;
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(Error::domain("noise variance must be >= 0"));
        }
        if inputs.is_empty() || inputs.len() != outputs.len() {
            return Err(Error::domain(format!(
                "need matching non-empty inputs and outputs, got {} and {}",
                inputs.len(),
                outputs.len()
            )));
        }
        let dim = inputs[0].len();
        if dim == 0 || inputs.iter().any(|z| z.len() != dim) {
            return Err(Error::domain("training inputs must share one positive dimension"));
        }
        kernel.check_dim(dim)?;
        let transform = if standardize {
            Standardization::from_outputs(&outputs)
        } else {
            Standardization::IDENTITY
        };
        let factor = Self::factor_for(&kernel, noise_variance, &inputs, &outputs, transform)?;
        Ok(Self {
            kernel,
            noise_variance,
            standardize,
            transform,
            inputs,
            outputs,
            factor,
        })
    }

    fn factor_for(
        kernel: &KernelSpec,
        noise_variance: f64,
        inputs: &[Vec<f64>],
        outputs: &[f64],
        transform: Standardization,
    ) -> Result<Factor> {
        let mut system = kernel.matrix(inputs);
        for i in 0..inputs.len() {
            system[(i, i)] += noise_variance;
        }
        let targets = DVector::from_iterator(outputs.len(), outputs.iter().map(|y| transform.forward(*y)));
        factorize(system, &targets)
    }

    pub fn from_snapshot(s: GpSnapshot) -> Result<Self> {
        Self::build(s.kernel, s.noise_variance, s.standardize, s.inputs, s.outputs)
    }

    pub fn snapshot(&self) -> GpSnapshot {
        GpSnapshot {
            kernel: self.kernel.clone(),
            noise_variance: self.noise_variance,
            standardize: self.standardize,
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
        }
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn transform(&self) -> Standardization {
        self.transform
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.inputs[0].len()
    }

    /// Diagonal jitter that was needed to factorize the current system.
    pub fn jitter(&self) -> f64 {
        self.factor.jitter
    }

    /// Append one observation and refactorize from scratch. Hyperparameters
    /// stay fixed; the output standardization is recomputed.
    pub fn push(&mut self, z: Vec<f64>, y: f64) -> Result<()> {
        if z.len() != self.dimension() {
            return Err(Error::domain(format!(
                "observation has dimension {}, model expects {}",
                z.len(),
                self.dimension()
            )));
        }
        self.inputs.push(z);
        self.outputs.push(y);
        if self.standardize {
            self.transform = Standardization::from_outputs(&self.outputs);
        }
        match Self::factor_for(&self.kernel, self.noise_variance, &self.inputs, &self.outputs, self.transform) {
            Ok(f) => {
                self.factor = f;
                Ok(())
            }
            Err(e) => {
                self.inputs.pop();
                self.outputs.pop();
                if self.standardize {
                    self.transform = Standardization::from_outputs(&self.outputs);
                }
                Err(e)
            }
        }
    }

    /// Prior variance `κ(z, z)` on the raw output scale.
    pub fn prior_variance(&self) -> f64 {
        self.kernel.output_variance * self.transform.scale * self.transform.scale
    }

    /// Posterior mean and variance on the raw output scale.
    pub fn posterior(&self, z: &[f64]) -> Result<Posterior> {
        if z.len() != self.dimension() {
            return Err(Error::domain(format!(
                "query has dimension {}, model expects {}",
                z.len(),
                self.dimension()
            )));
        }
        Ok(self.posterior_unchecked(z))
    }

    pub(crate) fn posterior_unchecked(&self, z: &[f64]) -> Posterior {
        let t = self.inputs.len();
        let k = DVector::from_iterator(t, self.inputs.iter().map(|x| self.kernel.eval_unchecked(x, z)));
        let mean = k.dot(&self.factor.alpha);
        let v = self
            .factor
            .chol
            .solve_lower_triangular(&k)
            .expect("cholesky factor has a positive diagonal");
        let var = (self.kernel.output_variance - v.norm_squared()).max(0.0);
        let s = self.transform.scale;
        Posterior {
            mean: self.transform.mean + s * mean,
            variance: s * s * var,
        }
    }

    /// Log marginal likelihood of the (standardized) targets.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let t = self.outputs.len() as f64;
        let y = DVector::from_iterator(
            self.outputs.len(),
            self.outputs.iter().map(|y| self.transform.forward(*y)),
        );
        let log_det: f64 = self.factor.chol.diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        -0.5 * y.dot(&self.factor.alpha) - 0.5 * log_det - 0.5 * t * (2.0 * PI).ln()
    }
}

/// Box constraints and multi-start settings for hyperparameter fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub lengthscale_bounds: (f64, f64),
    pub output_variance_bounds: (f64, f64),
    pub noise_variance_bounds: (f64, f64),
    pub starts: usize,
    pub max_iters: usize,
    pub seed: u64,
    #[serde(default)]
    pub priors: HyperPriors,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lengthscale_bounds: (1e-3, 10.0),
            output_variance_bounds: (1e-4, 10.0),
            noise_variance_bounds: (1e-8, 1.0),
            starts: 8,
            max_iters: 400,
            seed: 0,
            priors: HyperPriors::default(),
        }
    }
}

/// Normal prior on the natural log of a hyperparameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalPrior {
    pub mean: f64,
    pub sd: f64,
}

impl LogNormalPrior {
    /// Log density (up to a constant) and its derivative at log value `x`.
    fn eval(&self, x: f64) -> (f64, f64) {
        let z = (x - self.mean) / self.sd;
        (-0.5 * z * z, -z / self.sd)
    }
}

/// Optional priors turning the fit into a MAP estimate. All `None` means plain
/// marginal-likelihood maximization.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HyperPriors {
    pub output_variance: Option<LogNormalPrior>,
    pub lengthscale: Option<LogNormalPrior>,
    pub noise_variance: Option<LogNormalPrior>,
}

impl HyperPriors {
    pub fn is_empty(&self) -> bool {
        self.output_variance.is_none() && self.lengthscale.is_none() && self.noise_variance.is_none()
    }

    fn add(&self, theta: &[f64], value: &mut f64, grad: &mut [f64]) {
        let last = theta.len() - 1;
        let mut apply = |prior: &Option<LogNormalPrior>, k: usize| {
            if let Some(p) = prior {
                let (v, g) = p.eval(theta[k]);
                *value += v;
                grad[k] += g;
            }
        };
        apply(&self.output_variance, 0);
        for k in 1..last {
            apply(&self.lengthscale, k);
        }
        apply(&self.noise_variance, last);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartRecord {
    pub initial_objective: f64,
    pub final_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Log marginal likelihood at the selected hyperparameters.
    pub mll: f64,
    /// Maximized objective: the marginal likelihood plus any log priors.
    pub objective: f64,
    pub starts: Vec<StartRecord>,
}

/// Hyperparameters in log space: `[log σ², log ℓ.., log σ_n²]`.
#[derive(Debug, Clone)]
struct LogParams {
    family: KernelFamily,
    theta: Vec<f64>,
}

impl LogParams {
    fn n_lengthscales(&self) -> usize {
        self.theta.len() - 2
    }

    fn kernel(&self) -> KernelSpec {
        let n = self.n_lengthscales();
        KernelSpec {
            family: self.family,
            output_variance: self.theta[0].exp(),
            lengthscales: self.theta[1..=n].iter().map(|v| v.exp()).collect(),
        }
    }

    fn noise(&self) -> f64 {
        self.theta[self.theta.len() - 1].exp()
    }
}

/// Log marginal likelihood and its gradient with respect to the log
/// hyperparameters, for standardized targets `y`.
fn mll_and_grad(
    family: KernelFamily,
    theta: &[f64],
    inputs: &[Vec<f64>],
    y: &DVector<f64>,
) -> Result<(f64, Vec<f64>)> {
    let p = LogParams {
        family,
        theta: theta.to_vec(),
    };
    let kernel = p.kernel();
    let noise = p.noise();
    let t = inputs.len();
    let mut system = kernel.matrix(inputs);
    for i in 0..t {
        system[(i, i)] += noise;
    }
    let chol = system.cholesky().ok_or_else(|| Error::Numerical {
        message: "kernel system not positive definite during fitting".into(),
        jitter: 0.0,
    })?;
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let mll = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * t as f64 * (2.0 * PI).ln();

    // W = α αᵀ - K⁻¹, dL/dθ = ½ Σ W ∘ dK/dθ
    let mut w = chol.inverse();
    w.iter_mut().for_each(|v| *v = -*v);
    w.ger(1.0, &alpha, &alpha, 1.0);

    let n_ls = p.n_lengthscales();
    let mut grad = vec![0.0; theta.len()];
    let inv_l2: Vec<f64> = kernel.lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
    for i in 0..t {
        // diagonal: only σ² and σ_n² contribute
        grad[0] += 0.5 * w[(i, i)] * kernel.output_variance;
        grad[n_ls + 1] += 0.5 * w[(i, i)] * noise;
        for j in 0..i {
            let a = &inputs[i];
            let b = &inputs[j];
            let d2 = kernel.scaled_sq_dist(a, b);
            let wij = w[(i, j)]; // counted twice via symmetry
            grad[0] += wij * kernel.profile(d2);
            let g = kernel.lengthscale_factor(d2);
            if n_ls == 1 {
                grad[1] += wij * g * d2;
            } else {
                for (k, (x, z)) in a.iter().zip(b).enumerate() {
                    grad[1 + k] += wij * g * (x - z) * (x - z) * inv_l2[k];
                }
            }
        }
    }
    Ok((mll, grad))
}

struct Bounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Bounds {
    fn project(&self, theta: &mut [f64]) {
        for ((v, lo), hi) in theta.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// Gradient with components that push against an active bound removed.
    fn projected_grad(&self, theta: &[f64], grad: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(grad)
            .enumerate()
            .map(|(k, (v, g))| {
                if (*v <= self.lo[k] && *g < 0.0) || (*v >= self.hi[k] && *g > 0.0) {
                    0.0
                } else {
                    *g
                }
            })
            .collect()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Projected gradient ascent with Barzilai-Borwein steps and an Armijo
/// backtracking safeguard.
fn ascend(
    objective: &dyn Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
    mut theta: Vec<f64>,
    bounds: &Bounds,
    max_iters: usize,
) -> Result<(Vec<f64>, f64)> {
    let (mut f, mut g) = objective(&theta)?;
    let mut step = 0.1 / norm(&g).max(1e-12);
    for _ in 0..max_iters {
        let pg = bounds.projected_grad(&theta, &g);
        if norm(&pg) < 1e-9 {
            break;
        }
        let mut accepted = None;
        let mut s = step;
        for _ in 0..40 {
            let mut cand: Vec<f64> = theta.iter().zip(&g).map(|(v, d)| v + s * d).collect();
            bounds.project(&mut cand);
            let moved: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
            let gain: f64 = moved.iter().zip(&g).map(|(m, d)| m * d).sum();
            if gain <= 0.0 {
                break;
            }
            if let Ok((fc, gc)) = objective(&cand) {
                if fc >= f + 1e-4 * gain {
                    accepted = Some((cand, fc, gc));
                    break;
                }
            }
            s *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else {
            break;
        };
        // BB step for the next iteration
        let sk: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let yk: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| b - a).collect();
        let sy: f64 = sk.iter().zip(&yk).map(|(a, b)| a * b).sum();
        let ss: f64 = sk.iter().map(|a| a * a).sum();
        step = if sy > 1e-16 { (ss / sy).clamp(1e-6, 1e3) } else { (s * 2.0).min(1e3) };
        let improvement = fc - f;
        theta = cand;
        f = fc;
        g = gc;
        if improvement.abs() < 1e-12 * (1.0 + f.abs()) && ss < 1e-20 {
            break;
        }
    }
    Ok((theta, f))
}

/// Fit hyperparameters by maximizing the log marginal likelihood of the
/// standardized outputs, then condition on the data.
pub fn fit(
    family: KernelFamily,
    inputs: Vec<Vec<f64>>,
    outputs: Vec<f64>,
    options: &FitOptions,
) -> Result<(GpModel, FitReport)> {
    if inputs.len() < 2 || inputs.len() != outputs.len() {
        return Err(Error::domain(format!(
            "fitting needs at least 2 matching observations, got {} inputs and {} outputs",
            inputs.len(),
            outputs.len()
        )));
    }
    let dim = inputs[0].len();
    if dim == 0 || inputs.iter().any(|z| z.len() != dim) {
        return Err(Error::domain("training inputs must share one positive dimension"));
    }
    let transform = Standardization::from_outputs(&outputs);
    let y = DVector::from_iterator(outputs.len(), outputs.iter().map(|v| transform.forward(*v)));

    let n_ls = if family.is_ard() { dim } else { 1 };
    let (ls_lo, ls_hi) = options.lengthscale_bounds;
    let (sv_lo, sv_hi) = options.output_variance_bounds;
    let (nv_lo, nv_hi) = options.noise_variance_bounds;
    let mut lo = vec![sv_lo.ln()];
    let mut hi = vec![sv_hi.ln()];
    lo.extend(std::iter::repeat(ls_lo.ln()).take(n_ls));
    hi.extend(std::iter::repeat(ls_hi.ln()).take(n_ls));
    lo.push(nv_lo.ln());
    hi.push(nv_hi.ln());
    let bounds = Bounds { lo, hi };

    let priors = options.priors;
    let objective = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (mut f, mut g) = mll_and_grad(family, theta, &inputs, &y)?;
        priors.add(theta, &mut f, &mut g);
        Ok((f, g))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut starts = Vec::new();
    for s in 0..options.starts.max(1) {
        let mut theta: Vec<f64> = if s == 0 {
            // unit signal, lengthscale ~ typical inter-point distance, small noise
            let ls = ((dim as f64) / 6.0).sqrt().max(0.1);
            let mut v = vec![0.0];
            v.extend(std::iter::repeat(ls.ln()).take(n_ls));
            v.push(1e-2f64.ln());
            v
        } else {
            bounds
                .lo
                .iter()
                .zip(&bounds.hi)
                .map(|(l, h)| rng.gen_range(*l..=*h))
                .collect()
        };
        bounds.project(&mut theta);
        let Ok((f0, _)) = objective(&theta) else {
            continue;
        };
        let (theta, f) = ascend(&objective, theta, &bounds, options.max_iters)?;
        starts.push(StartRecord {
            initial_objective: f0,
            final_objective: f,
        });
        if best.as_ref().map_or(true, |(_, bf)| f > *bf) {
            best = Some((theta, f));
        }
    }
    let (theta, objective) = best.ok_or_else(|| Error::Numerical {
        message: "no hyperparameter start produced a positive-definite system".into(),
        jitter: 0.0,
    })?;
    let mll = mll_and_grad(family, &theta, &inputs, &y)?.0;
    let p = LogParams { family, theta };
    let model = GpModel::standardized(p.kernel(), p.noise(), inputs, outputs)?;
    Ok((
        model,
        FitReport {
            mll,
            objective,
            starts,
        },
    ))
}

/// Log marginal likelihood for explicit log hyperparameters (used by tests and
/// diagnostics).
pub fn log_marginal_likelihood_at(
    family: KernelFamily,
    log_params: &[f64],
    inputs: &[Vec<f64>],
    outputs: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let transform = Standardization::from_outputs(outputs);
    let y = DVector::from_iterator(outputs.len(), outputs.iter().map(|v| transform.forward(*v)));
    mll_and_grad(family, log_params, inputs, &y)
}

/// Log hyperparameter vector `[log σ², log ℓ.., log σ_n²]` of a model.
pub fn log_params_of(model: &GpModel) -> Vec<f64> {
    let mut v = vec![model.kernel.output_variance.ln()];
    v.extend(model.kernel.lengthscales.iter().map(|l| l.ln()));
    v.push(model.noise_variance.ln());
    v
}

//! Independent reference implementations shared by the integration and
//! acceptance tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use viewplan::geometry::{CameraPose, Placement, Vec3};
use viewplan::gp::KernelSpec;
use viewplan::planner::RegretTrace;
use viewplan::reward::{PointCloud, RewardParams};

fn angle(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Naive enumeration: every point, every unordered pair, angles via atan2.
pub fn reward_oracle(cams: &[CameraPose], points: &[Vec3], params: &RewardParams) -> f64 {
    let n = cams.len();
    let mut total = 0.0;
    for p in points {
        for i in 0..n {
            for j in 0..n {
                if j <= i {
                    continue;
                }
                let ri = cams[i].position - p;
                let rj = cams[j].position - p;
                let fov_i = angle(&(p - cams[i].position), &cams[i].orientation) <= params.fov / 2.0;
                let fov_j = angle(&(p - cams[j].position), &cams[j].orientation) <= params.fov / 2.0;
                let theta = angle(&ri, &rj);
                if fov_i && fov_j && theta <= params.theta_match {
                    total += theta.sin();
                }
            }
        }
    }
    total / (points.len() as f64 * (n * (n - 1) / 2) as f64)
}

pub fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Cameras on a shell around a small cloud, mostly aimed near the origin so
/// that the indicators are a mix of true and false.
pub fn random_instance(rng: &mut ChaCha8Rng, max_cams: usize, max_points: usize) -> (Placement, PointCloud) {
    let n = rng.gen_range(2..=max_cams);
    let p = rng.gen_range(1..=max_points);
    let points: Vec<Vec3> = (0..p)
        .map(|_| Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(0.0..1.0)))
        .collect();
    let cams = (0..n)
        .map(|_| {
            let pos = random_unit(rng) * rng.gen_range(1.0..3.0) + Vec3::new(0.0, 0.0, 0.5);
            let aim = -pos + random_unit(rng) * rng.gen_range(0.0..1.5);
            CameraPose::new(pos, aim).unwrap()
        })
        .collect();
    (Placement::new(cams).unwrap(), PointCloud::new(points).unwrap())
}

/// Posterior mean and variance with an explicit dense inverse of `K + σn² I`.
pub fn dense_posterior(kernel: &KernelSpec, noise: f64, x: &[Vec<f64>], y: &[f64], z: &[f64]) -> (f64, f64) {
    let t = x.len();
    let k = DMatrix::from_fn(t, t, |i, j| kernel.eval(&x[i], &x[j]).unwrap() + if i == j { noise } else { 0.0 });
    let inv = k.try_inverse().expect("invertible Gram matrix");
    let kz = DVector::from_fn(t, |i, _| kernel.eval(&x[i], z).unwrap());
    let yv = DVector::from_column_slice(y);
    let mean = (kz.transpose() * &inv * yv)[0];
    let var = kernel.eval(z, z).unwrap() - (kz.transpose() * &inv * &kz)[0];
    (mean, var)
}

/// Checks that a trace's simple regret is non-increasing and equals
/// `1 - running_best` exactly, and that the running best is the prefix max.
pub fn check_trace_bookkeeping(trace: &RegretTrace) -> Result<(), String> {
    let mut best = f64::NEG_INFINITY;
    let mut last_sr = f64::INFINITY;
    for r in &trace.records {
        best = best.max(r.observed);
        if r.running_best != best {
            return Err(format!("t={}: running best {} != prefix max {}", r.t, r.running_best, best));
        }
        if r.simple_regret != 1.0 - r.running_best {
            return Err(format!("t={}: SR {} != 1 - {}", r.t, r.simple_regret, r.running_best));
        }
        if r.simple_regret > last_sr {
            return Err(format!("t={}: SR increased", r.t));
        }
        if !(0.0..=1.0).contains(&r.observed) {
            return Err(format!("t={}: observed {} outside [0,1]", r.t, r.observed));
        }
        last_sr = r.simple_regret;
    }
    Ok(())
}

/// Same checks on CSV rows in the trace schema, grouped by (scene, kernel,
/// realization).
pub fn check_csv_bookkeeping(csv: &str) -> Result<usize, String> {
    let mut lines = csv.lines();
    let header = lines.next().ok_or("empty csv")?;
    if header != "scene,kernel,realization,iteration,observed,running_best,simple_regret" {
        return Err(format!("bad header {header}"));
    }
    let mut key = String::new();
    let (mut best, mut last_sr) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut rows = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(format!("bad row {line}"));
        }
        let k = f[..3].join(",");
        if k != key {
            key = k;
            best = f64::NEG_INFINITY;
            last_sr = f64::INFINITY;
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| format!("{s}: {e}"));
        let (obs, rb, sr) = (num(f[4])?, num(f[5])?, num(f[6])?);
        best = best.max(obs);
        if rb != best || sr != 1.0 - rb || sr > last_sr {
            return Err(format!("bookkeeping broken at {line}"));
        }
        last_sr = sr;
        rows += 1;
    }
    Ok(rows)
}

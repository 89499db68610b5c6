//! Synthetic separable data, noise models, and the anchor-recovery sweep.
//!
//! Every random matrix comes from its own ChaCha8 stream of the instance
//! seed, so each piece is reproducible on its own and across platforms:
//!
//! | stream | draws                         |
//! |--------|-------------------------------|
//! | 1      | `W`                           |
//! | 2      | Dirichlet parameters          |
//! | 3      | mixture columns `H'`          |
//! | 4      | Laplace noise                 |
//! | 5      | exponential observations      |

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driver::{run, Loss, RunConfig};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::projection::SolverOptions;
use crate::selection::ExteriorMode;

const W_STREAM: u64 = 1;
const ALPHA_STREAM: u64 = 2;
const MIX_STREAM: u64 = 3;
const LAPLACE_STREAM: u64 = 4;
const EXPONENTIAL_STREAM: u64 = 5;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// `X = W [I | H']` with known anchors `0..r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparableInstance {
    pub w: DenseMatrix,
    pub h: DenseMatrix,
    pub x: DenseMatrix,
    pub true_anchors: Vec<usize>,
    pub seed: u64,
}

/// Draws a separable instance: `W` uniform on `[0, 1]`, and each of the
/// `n - r` mixture columns from one Dirichlet distribution whose parameters
/// are themselves uniform on `(0, 1)`.
pub fn gen_separable(m: usize, r: usize, n: usize, seed: u64) -> Result<SeparableInstance> {
    if r == 0 || r > n || m == 0 {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= r <= n and m >= 1, got m={m}, r={r}, n={n}"
        )));
    }
    let mut w_rng = stream(seed, W_STREAM);
    let w = DenseMatrix::from_fn(m, r, |_, _| w_rng.random::<f64>())?;

    let mut alpha_rng = stream(seed, ALPHA_STREAM);
    let gammas: Vec<Gamma<f64>> = (0..r)
        .map(|_| {
            let a: f64 = alpha_rng.sample(Open01);
            Gamma::new(a, 1.0).expect("shape in (0, 1) is valid")
        })
        .collect();

    let mut mix_rng = stream(seed, MIX_STREAM);
    let mut h_data = vec![0.0; r * n];
    for j in 0..n {
        let col = &mut h_data[j * r..(j + 1) * r];
        if j < r {
            col[j] = 1.0;
            continue;
        }
        loop {
            for (v, g) in col.iter_mut().zip(&gammas) {
                *v = g.sample(&mut mix_rng);
            }
            let s: f64 = col.iter().sum();
            if s > 0.0 && s.is_finite() {
                col.iter_mut().for_each(|v| *v /= s);
                break;
            }
        }
    }
    let h = DenseMatrix::from_col_major(r, n, h_data)?;
    let x = w.matmul(&h)?;
    Ok(SeparableInstance {
        w,
        h,
        x,
        true_anchors: (0..r).collect(),
        seed,
    })
}

/// `X + max(N1, 0)` with `N1` i.i.d. Laplace, mean 0 and standard deviation
/// `delta` (scale `delta / sqrt 2`), drawn by inverting the CDF.
pub fn add_sparse_laplace_noise(x: &DenseMatrix, delta: f64, seed: u64) -> Result<DenseMatrix> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise level must be >= 0, got {delta}")));
    }
    if delta == 0.0 {
        return Ok(x.clone());
    }
    let b = delta / std::f64::consts::SQRT_2;
    let mut rng = stream(seed, LAPLACE_STREAM);
    let data = x
        .as_slice()
        .iter()
        .map(|&v| {
            let u: f64 = rng.sample::<f64, _>(Open01) - 0.5;
            let n1 = -b * u.signum() * (1.0 - 2.0 * u.abs()).ln();
            v + n1.max(0.0)
        })
        .collect();
    DenseMatrix::from_col_major(x.rows(), x.cols(), data)
}

/// Observations `X_ij ~ Exponential` with mean `lambda (W H)_ij`, drawn by
/// inverting the CDF.
pub fn gen_exponential_data(w: &DenseMatrix, h: &DenseMatrix, lambda: f64, seed: u64) -> Result<DenseMatrix> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let mean = w.matmul(h)?;
    let mut rng = stream(seed, EXPONENTIAL_STREAM);
    let data = mean
        .as_slice()
        .iter()
        .map(|&mu| {
            let u: f64 = rng.sample(Open01);
            -lambda * mu * u.ln()
        })
        .collect();
    DenseMatrix::from_col_major(mean.rows(), mean.cols(), data)
}

/// `|found ∩ truth| / |truth|`.
pub fn anchor_recovery_rate(found: &[usize], truth: &[usize]) -> f64 {
    assert!(!truth.is_empty(), "ground truth must be non-empty");
    let hits = truth.iter().filter(|t| found.contains(t)).count();
    hits as f64 / truth.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// Grid values are the Laplace standard deviation.
    Laplace,
    /// Grid values are the exponential mean multiplier.
    Exponential,
}

impl fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseModel::Laplace => "laplace",
            NoiseModel::Exponential => "exponential",
        })
    }
}

impl FromStr for NoiseModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "laplace" => Ok(NoiseModel::Laplace),
            "exponential" => Ok(NoiseModel::Exponential),
            other => Err(Error::InvalidArgument(format!(
                "unknown noise model {other:?} (expected laplace or exponential)"
            ))),
        }
    }
}

/// Inclusive arithmetic grid written `start:stop:step`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl GridSpec {
    /// Grid points; the count is `round((stop - start) / step) + 1` so that
    /// decimal steps do not lose the last point to rounding.
    pub fn points(&self) -> Vec<f64> {
        if self.stop == self.start {
            return vec![self.start];
        }
        let count = ((self.stop - self.start) / self.step).round() as usize + 1;
        (0..count).map(|k| self.start + k as f64 * self.step).collect()
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::InvalidArgument(format!("grid {s:?} is not start:stop:step")));
        }
        let mut vals = [0.0; 3];
        for (v, p) in vals.iter_mut().zip(&parts) {
            *v = p
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidArgument(format!("grid {s:?}: {p:?} is not a number ({e})")))?;
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("grid {s:?} has a non-finite value")));
            }
        }
        let [start, stop, step] = vals;
        if stop < start {
            return Err(Error::InvalidArgument(format!("grid {s:?} has stop < start")));
        }
        if step <= 0.0 {
            return Err(Error::InvalidArgument(format!("grid {s:?} needs a positive step")));
        }
        Ok(Self { start, stop, step })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub m: usize,
    pub r: usize,
    pub n: usize,
    pub noise: NoiseModel,
    pub grid: Vec<f64>,
    pub algorithms: Vec<Loss>,
    /// Instance seeds; each grid point averages over all of them.
    pub seeds: Vec<u64>,
    pub exterior_mode: ExteriorMode,
    pub solver: SolverOptions,
}

impl SweepConfig {
    /// Full-size benchmark instances (`200 x 210`, rank 20) with `seed_count` seeds.
    pub fn full_scale(noise: NoiseModel, grid: Vec<f64>, algorithms: Vec<Loss>, seed_count: u64) -> Self {
        Self {
            m: 200,
            r: 20,
            n: 210,
            noise,
            grid,
            algorithms,
            seeds: (0..seed_count).collect(),
            exterior_mode: ExteriorMode::Max,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub algorithm: String,
    pub param: f64,
    pub seed_count: usize,
    pub mean_recovery: f64,
    pub stddev_recovery: f64,
}

/// Noisy data for one grid point of the sweep.
pub fn noisy_instance(inst: &SeparableInstance, noise: NoiseModel, param: f64) -> Result<DenseMatrix> {
    match noise {
        NoiseModel::Laplace => add_sparse_laplace_noise(&inst.x, param, inst.seed),
        NoiseModel::Exponential => gen_exponential_data(&inst.w, &inst.h, param, inst.seed),
    }
}

/// Recovery rate of one algorithm on one seed at one grid point.
pub fn recovery_cell(cfg: &SweepConfig, loss: Loss, param: f64, seed: u64) -> Result<f64> {
    let inst = gen_separable(cfg.m, cfg.r, cfg.n, seed)?;
    let x = noisy_instance(&inst, cfg.noise, param)?;
    let run_cfg = RunConfig {
        r: cfg.r,
        loss,
        exterior_mode: cfg.exterior_mode,
        seed,
        solver: cfg.solver.clone(),
    };
    let f = run(&x, &run_cfg)?;
    Ok(anchor_recovery_rate(&f.anchors.indices(), &inst.true_anchors))
}

/// One row per (algorithm, grid point), algorithms outermost, each averaging
/// the recovery rate over all seeds. Cells run in parallel; the output order
/// does not depend on scheduling.
pub fn bench_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    if cfg.algorithms.is_empty() || cfg.grid.is_empty() {
        return Ok(Vec::new());
    }
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one seed".into()));
    }
    let cells: Vec<(usize, usize, u64)> = (0..cfg.algorithms.len())
        .flat_map(|a| (0..cfg.grid.len()).flat_map(move |g| cfg.seeds.iter().map(move |&s| (a, g, s))))
        .collect();
    let rates: Vec<f64> = cells
        .par_iter()
        .map(|&(a, g, s)| recovery_cell(cfg, cfg.algorithms[a], cfg.grid[g], s))
        .collect::<Result<_>>()?;
    let k = cfg.seeds.len();
    Ok(rates
        .chunks(k)
        .zip(cells.chunks(k))
        .map(|(rs, cs)| {
            let (a, g, _) = cs[0];
            let mean = rs.iter().sum::<f64>() / k as f64;
            let var = if k > 1 {
                rs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64
            } else {
                0.0
            };
            SweepRow {
                algorithm: cfg.algorithms[a].to_string(),
                param: cfg.grid[g],
                seed_count: k,
                mean_recovery: mean,
                stddev_recovery: var.sqrt(),
            }
        })
        .collect())
}

/// Writes `algorithm,param,seed_count,mean_recovery,stddev_recovery`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["algorithm", "param", "seed_count", "mean_recovery", "stddev_recovery"])?;
    for row in rows {
        w.write_record([
            row.algorithm.clone(),
            format!("{}", row.param),
            row.seed_count.to_string(),
            format!("{}", row.mean_recovery),
            format!("{}", row.stddev_recovery),
        ])?;
    }
    w.flush()?;
    Ok(())
}

//! Cramér–von Mises functionals of residual processes and the simulated
//! null law of `int_0^1 B(t)^2 dt`.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use log::{info, warn};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::StepProcess;
use crate::rng;
use crate::weights::WeightVector;

pub const DEFAULT_TRIM: f64 = 0.95;
pub const MIN_TRIM_POINTS: usize = 10;

fn check_weight(w: &WeightVector, n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::Dimension(format!("process has {n} points, weight {}", w.len())));
    }
    if w.is_degenerate() {
        return Err(Error::DegenerateWeight(w.rho_hat));
    }
    Ok(())
}

/// `CvM_n = n^{-1} sum_k (values[k] / rho_hat)^2`.
pub fn cvm_statistic(proc: &StepProcess, w: &WeightVector) -> Result<f64> {
    check_weight(w, proc.len())?;
    Ok(cvm_raw(&proc.values, w.rho_hat))
}

pub(crate) fn cvm_raw(values: &[f64], rho: f64) -> f64 {
    values.iter().map(|v| (v / rho).powi(2)).sum::<f64>() / values.len() as f64
}

/// Number of sorted points at or below the empirical `trim` quantile.
pub fn trim_count(jump_points: &[f64], trim: f64) -> usize {
    let n = jump_points.len();
    let k = ((trim * n as f64).ceil() as usize).clamp(1, n);
    let t0 = jump_points[k - 1];
    jump_points.partition_point(|&z| z <= t0)
}

/// Trimmed statistic of a transformed process,
/// `[rho^2 F(t0)^2]^{-1} n^{-1} sum_{e_(k) <= t0} values[k]^2`.
pub fn tcvm_statistic(tproc: &StepProcess, w: &WeightVector, trim: f64) -> Result<f64> {
    tcvm_statistic_with(tproc, w, trim, MIN_TRIM_POINTS)
}

pub fn tcvm_statistic_with(tproc: &StepProcess, w: &WeightVector, trim: f64, min_points: usize) -> Result<f64> {
    check_weight(w, tproc.len())?;
    if !(trim > 0.0 && trim <= 1.0) {
        return Err(Error::InvalidInput(format!("trim {trim} outside (0, 1]")));
    }
    let n = tproc.len();
    let kept = trim_count(&tproc.jump_points, trim);
    if kept < min_points {
        return Err(Error::InvalidInput(format!("trim {trim} keeps {kept} points, need {min_points}")));
    }
    let f0 = kept as f64 / n as f64;
    let sum: f64 = tproc.values[..kept].iter().map(|v| v * v).sum();
    Ok(sum / (n as f64) / (w.rho_hat * w.rho_hat * f0 * f0))
}

/// Levels at which the Brownian table stores quantiles.
pub fn table_levels() -> Vec<f64> {
    let mut v = vec![0.001, 0.005];
    v.extend((1..=99).map(|k| k as f64 / 100.0));
    v.extend([0.995, 0.999, 0.9995, 0.9999]);
    v
}

pub const DEFAULT_PATHS: usize = 100_000;
pub const DEFAULT_GRID: usize = 2000;
pub const DEFAULT_TABLE_SEED: u64 = 20_240_601;

/// Simulated quantiles of `int_0^1 B(t)^2 dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrownianCvmTable {
    pub levels: Vec<f64>,
    pub quantiles: Vec<f64>,
    #[serde(rename = "M")]
    pub paths: usize,
    #[serde(rename = "K")]
    pub grid: usize,
    pub seed: u64,
    /// Sample mean and its standard error.
    #[serde(default)]
    pub mean: f64,
    #[serde(default)]
    pub mean_se: f64,
}

/// `K^{-1} sum_k B(t_k)^2` for one path built from Gaussian partial sums.
fn path_statistic<R: Rng>(grid: usize, rng: &mut R) -> f64 {
    let scale = 1.0 / (grid as f64).sqrt();
    let mut b = 0.0;
    let mut acc = 0.0;
    for _ in 0..grid {
        let z: f64 = rng.sample(StandardNormal);
        b += z * scale;
        acc += b * b;
    }
    acc / grid as f64
}

/// Draws of the discretized statistic; path `m` uses its own stream.
pub fn simulate_brownian_cvm(paths: usize, grid: usize, seed: u64) -> Vec<f64> {
    (0..paths)
        .into_par_iter()
        .map(|m| path_statistic(grid, &mut rng::stream(seed, &[m as u64])))
        .collect()
}

/// Empirical quantile: the `ceil(level * M)`-th order statistic.
pub fn order_quantile(sorted: &[f64], level: f64) -> f64 {
    let m = sorted.len();
    let k = ((level * m as f64).ceil() as usize).clamp(1, m);
    sorted[k - 1]
}

pub fn brownian_cvm_quantile(level: f64, paths: usize, grid: usize, seed: u64) -> f64 {
    let mut s = simulate_brownian_cvm(paths, grid, seed);
    s.sort_by(f64::total_cmp);
    order_quantile(&s, level)
}

impl BrownianCvmTable {
    pub fn simulate(paths: usize, grid: usize, seed: u64) -> Result<Self> {
        if paths == 0 || grid == 0 {
            return Err(Error::InvalidInput("Brownian table needs paths and grid points".into()));
        }
        let mut s = simulate_brownian_cvm(paths, grid, seed);
        let mf = paths as f64;
        let mean = s.iter().sum::<f64>() / mf;
        let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (mf - 1.0).max(1.0);
        s.sort_by(f64::total_cmp);
        let levels = table_levels();
        let quantiles = levels.iter().map(|&l| order_quantile(&s, l)).collect();
        Ok(BrownianCvmTable { levels, quantiles, paths, grid, seed, mean, mean_se: (var / mf).sqrt() })
    }

    fn matches(&self, paths: usize, grid: usize, seed: u64) -> bool {
        self.paths == paths && self.grid == grid && self.seed == seed && self.levels == table_levels()
    }

    /// Quantile at `level`, linear between stored levels.
    pub fn quantile(&self, level: f64) -> f64 {
        interpolate(&self.levels, &self.quantiles, level)
    }

    /// Upper-tail probability of `stat`, by inverting the table. Values
    /// beyond the last stored quantile report the last tail level.
    pub fn p_value(&self, stat: f64) -> f64 {
        1.0 - interpolate(&self.quantiles, &self.levels, stat)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Load from `dir` when a table with matching meta exists; otherwise
    /// simulate and write it there.
    pub fn cached_in(dir: &Path, paths: usize, grid: usize, seed: u64) -> Result<Self> {
        let file = dir.join(format!("cvm_table_M{paths}_K{grid}_s{seed}.json"));
        if file.exists() {
            match Self::load(&file) {
                Ok(t) if t.matches(paths, grid, seed) => return Ok(t),
                Ok(_) => info!("cached Brownian table at {} has different meta; regenerating", file.display()),
                Err(e) => warn!("unreadable Brownian table cache {}: {e}", file.display()),
            }
        }
        let t = Self::simulate(paths, grid, seed)?;
        if let Err(e) = t.save(&file) {
            warn!("could not write Brownian table cache {}: {e}", file.display());
        }
        Ok(t)
    }

    /// The default table (`M = 1e5`, `K = 2000`), computed once per process
    /// and cached under `REGCHECK_CACHE_DIR` when that is set.
    pub fn standard() -> &'static BrownianCvmTable {
        static TABLE: OnceLock<BrownianCvmTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            let sim = || Self::simulate(DEFAULT_PATHS, DEFAULT_GRID, DEFAULT_TABLE_SEED).expect("valid defaults");
            match cache_dir() {
                Some(dir) => Self::cached_in(&dir, DEFAULT_PATHS, DEFAULT_GRID, DEFAULT_TABLE_SEED).unwrap_or_else(|e| {
                    warn!("Brownian table cache unusable: {e}");
                    sim()
                }),
                None => sim(),
            }
        })
    }
}

pub fn cache_dir() -> Option<PathBuf> {
    std::env::var_os("REGCHECK_CACHE_DIR").filter(|s| !s.is_empty()).map(PathBuf::from)
}

/// Piecewise-linear interpolation of `ys` over increasing `xs`, clamped at
/// both ends. Flat runs in `xs` resolve to their first entry.
fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let k = xs.partition_point(|&v| v <= x);
    let (x0, x1, y0, y1) = (xs[k - 1], xs[k], ys[k - 1], ys[k]);
    if x1 == x0 {
        return y0;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

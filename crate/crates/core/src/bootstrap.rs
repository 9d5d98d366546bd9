//! Smooth residual bootstrap for the untransformed statistics.
//!
//! Bootstrap errors are drawn from the centered residuals with replacement
//! and perturbed by `v_n Z`, `Z` standard normal. Responses are rebuilt from
//! the fitted null, the model is refitted, and the statistic is recomputed
//! with the original weight vector.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{
    fit_mean_ls_with, fit_variance_ls_with, FitOptions, LinearSolver, MeanFit, VarianceFit,
};
use crate::models::{Dataset, MeanModel, VarianceModel};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    #[serde(rename = "B")]
    pub b: usize,
    pub v_n: f64,
    pub seed: u64,
    /// Plain residual resampling without the smoothing noise. Experimental.
    #[serde(default)]
    pub unsmoothed: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { b: 300, v_n: 0.2, seed: 0, unsmoothed: false }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b == 0 {
            return Err(Error::InvalidInput("bootstrap size B must be at least 1".into()));
        }
        if !(self.v_n >= 0.0) || !self.v_n.is_finite() {
            return Err(Error::InvalidInput(format!("v_n = {} must be >= 0", self.v_n)));
        }
        Ok(())
    }

    fn noise(&self) -> f64 {
        if self.unsmoothed {
            0.0
        } else {
            self.v_n
        }
    }
}

/// Centered residuals in ascending order, so draws do not depend on the
/// order of the observations.
pub fn resampling_pool(residuals: &[f64]) -> Vec<f64> {
    let mut pool = residuals.to_vec();
    pool.sort_by(f64::total_cmp);
    let m = pool.iter().sum::<f64>() / pool.len() as f64;
    pool.iter_mut().for_each(|e| *e -= m);
    pool
}

/// One vector of bootstrap errors from a pool built by [`resampling_pool`].
pub fn draw_errors(pool: &[f64], v_n: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let e = pool[rng.gen_range(0..pool.len())];
            let z: f64 = rng.sample(StandardNormal);
            e + v_n * z
        })
        .collect()
}

pub fn bootstrap_errors(residuals: &[f64], cfg: &BootstrapConfig, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if residuals.len() < 2 {
        return Err(Error::InvalidInput("bootstrap needs at least 2 residuals".into()));
    }
    Ok(draw_errors(&resampling_pool(residuals), cfg.noise(), residuals.len(), rng))
}

/// Refits the mean model to new responses on fixed predictors.
pub enum Refitter<'a> {
    Linear(LinearSolver),
    General { data: &'a Dataset, model: &'a dyn MeanModel, init: Vec<f64>, opts: FitOptions },
}

impl<'a> Refitter<'a> {
    pub fn new(data: &'a Dataset, model: &'a dyn MeanModel, fit: &MeanFit, opts: &FitOptions) -> Result<Self> {
        if model.is_linear() && !opts.force_iterative {
            Ok(Refitter::Linear(LinearSolver::for_model(data, model)?))
        } else {
            Ok(Refitter::General { data, model, init: fit.beta_hat.clone(), opts: opts.clone() })
        }
    }

    /// Residuals of the refit, or the reason it failed.
    pub fn residuals(&self, y: &[f64]) -> std::result::Result<Vec<f64>, String> {
        match self {
            Refitter::Linear(s) => {
                let fitted = s.fitted(&s.solve(y));
                Ok(y.iter().zip(&fitted).map(|(a, b)| a - b).collect())
            }
            Refitter::General { data, model, init, opts } => {
                let d = data.with_response(y.to_vec()).map_err(|e| e.to_string())?;
                let f = fit_mean_ls_with(&d, *model, init, opts).map_err(|e| e.to_string())?;
                if !f.converged {
                    return Err(format!("refit did not converge in {} iterations", f.iterations));
                }
                Ok(f.residuals)
            }
        }
    }

    /// The full refit for a new response vector.
    pub fn fit(&self, data: &Dataset, model: &dyn MeanModel, y: &[f64]) -> std::result::Result<MeanFit, String> {
        match self {
            Refitter::Linear(s) => {
                let beta = s.solve(y);
                let fitted = s.fitted(&beta);
                let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
                let sse = residuals.iter().map(|e| e * e).sum();
                Ok(MeanFit { beta_hat: beta, fitted, residuals, converged: true, iterations: 0, sse, sse_trace: vec![sse] })
            }
            Refitter::General { init, opts, .. } => {
                let d = data.with_response(y.to_vec()).map_err(|e| e.to_string())?;
                let f = fit_mean_ls_with(&d, model, init, opts).map_err(|e| e.to_string())?;
                if f.converged {
                    Ok(f)
                } else {
                    Err(format!("refit did not converge in {} iterations", f.iterations))
                }
            }
        }
    }
}

/// Run `f` with the stream for replicate `b`; a failure is retried once on
/// a fresh stream, a second failure is an error.
pub fn with_retry<T>(
    seed: u64,
    b: usize,
    mut f: impl FnMut(&mut ChaCha8Rng) -> std::result::Result<T, String>,
) -> Result<T> {
    match f(&mut rng::stream(seed, &[b as u64])) {
        Ok(v) => Ok(v),
        Err(first) => {
            log::debug!("bootstrap replicate {b} failed ({first}); resampling");
            f(&mut rng::stream(seed, &[b as u64, 1])).map_err(|reason| Error::Bootstrap { replicate: b, reason })
        }
    }
}

/// Bootstrap residuals of the mean model for one replicate.
pub fn bootstrap_residuals(
    fit: &MeanFit,
    refit: &Refitter<'_>,
    pool: &[f64],
    cfg: &BootstrapConfig,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<Vec<f64>, String> {
    let eps = draw_errors(pool, cfg.noise(), fit.fitted.len(), rng);
    let y: Vec<f64> = fit.fitted.iter().zip(&eps).map(|(m, e)| m + e).collect();
    refit.residuals(&y)
}

/// Replicated values of `stat(residuals*)`, in replicate order.
pub fn bootstrap_distribution<S>(
    data: &Dataset,
    model: &dyn MeanModel,
    fit: &MeanFit,
    cfg: &BootstrapConfig,
    opts: &FitOptions,
    stat: S,
) -> Result<Vec<f64>>
where
    S: Fn(&[f64]) -> Result<f64> + Sync,
{
    cfg.validate()?;
    let refit = Refitter::new(data, model, fit, opts)?;
    let pool = resampling_pool(&fit.residuals);
    (0..cfg.b)
        .into_par_iter()
        .map(|b| {
            with_retry(cfg.seed, b, |r| {
                let res = bootstrap_residuals(fit, &refit, &pool, cfg, r)?;
                stat(&res).map_err(|e| e.to_string())
            })
        })
        .collect()
}

/// Like [`bootstrap_distribution`], but `stat` sees the bootstrap responses
/// and the full refit, so it can rebuild anything estimated from the data.
pub fn bootstrap_refit_distribution<S>(
    data: &Dataset,
    model: &dyn MeanModel,
    fit: &MeanFit,
    cfg: &BootstrapConfig,
    opts: &FitOptions,
    stat: S,
) -> Result<Vec<f64>>
where
    S: Fn(&[f64], &MeanFit) -> Result<f64> + Sync,
{
    cfg.validate()?;
    let refit = Refitter::new(data, model, fit, opts)?;
    let pool = resampling_pool(&fit.residuals);
    let n = data.n();
    (0..cfg.b)
        .into_par_iter()
        .map(|b| {
            with_retry(cfg.seed, b, |r| {
                let eps = draw_errors(&pool, cfg.noise(), n, r);
                let y: Vec<f64> = fit.fitted.iter().zip(&eps).map(|(m, e)| m + e).collect();
                let f = refit.fit(data, model, &y)?;
                stat(&y, &f).map_err(|e| e.to_string())
            })
        })
        .collect()
}

/// Variance-test analogue: `Y* = m_hat + sigma_hat eta*`, refit both the
/// mean and the variance model, and hand the bootstrap sample and both
/// refits to `stat`.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_variance_distribution<S>(
    data: &Dataset,
    model: &dyn MeanModel,
    fit: &MeanFit,
    vmodel: &dyn VarianceModel,
    vfit: &VarianceFit,
    cfg: &BootstrapConfig,
    opts: &FitOptions,
    stat: S,
) -> Result<Vec<f64>>
where
    S: Fn(&Dataset, &MeanFit, &VarianceFit) -> Result<f64> + Sync,
{
    cfg.validate()?;
    let refit = Refitter::new(data, model, fit, opts)?;
    let pool = resampling_pool(&vfit.standardized);
    let n = data.n();
    (0..cfg.b)
        .into_par_iter()
        .map(|b| {
            with_retry(cfg.seed, b, |r| {
                let eta = draw_errors(&pool, cfg.noise(), n, r);
                let y: Vec<f64> = (0..n).map(|i| fit.fitted[i] + vfit.sigma[i] * eta[i]).collect();
                let mf = refit.fit(data, model, &y)?;
                let d = data.with_response(y).map_err(|e| e.to_string())?;
                let vf = fit_variance_ls_with(&d, &mf, vmodel, &vfit.theta_hat, opts).map_err(|e| e.to_string())?;
                if !vf.converged {
                    return Err("variance refit did not converge".into());
                }
                stat(&d, &mf, &vf).map_err(|e| e.to_string())
            })
        })
        .collect()
}

/// Upper `tau` quantile of the replicates: the `ceil((1 - tau) B)`-th order
/// statistic.
pub fn bootstrap_critical_value(replicates: &[f64], tau: f64) -> Result<f64> {
    if replicates.is_empty() {
        return Err(Error::InvalidInput("no bootstrap replicates".into()));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidInput(format!("level {tau} outside (0, 1)")));
    }
    let mut s = replicates.to_vec();
    s.sort_by(f64::total_cmp);
    let b = s.len();
    let k = (((1.0 - tau) * b as f64).ceil() as usize).clamp(1, b);
    Ok(s[k - 1])
}

/// `(1 + #{T*_b >= T}) / (B + 1)`.
pub fn bootstrap_p_value(replicates: &[f64], stat: f64) -> f64 {
    let exceed = replicates.iter().filter(|&&v| v >= stat).count();
    (1 + exceed) as f64 / (replicates.len() + 1) as f64
}

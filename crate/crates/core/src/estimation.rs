//! Least-squares fits of the mean and variance parameters.
//!
//! Models linear in their parameters go through the normal equations.
//! Everything else uses Gauss–Newton with Levenberg–Marquardt damping: the
//! damping factor is divided by 10 after an accepted step and multiplied by 10
//! after a rejected one, so the objective sequence never increases.

use log::debug;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::models::{mean_gradient, variance_gradient, Dataset, MeanModel, VarianceModel};

/// Solver settings.
#[derive(Clone, Debug)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Stationarity: `|grad SSE| <= grad_tol * (1 + SSE)`.
    pub grad_tol: f64,
    pub init_damping: f64,
    /// Skip the closed form even for linear models.
    pub force_iterative: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iter: 200, grad_tol: 1e-10, init_damping: 1e-3, force_iterative: false }
    }
}

#[derive(Clone, Debug)]
pub struct MeanFit {
    pub beta_hat: Vec<f64>,
    pub fitted: Vec<f64>,
    /// `Y_i - m(X_i, beta_hat)`.
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub sse: f64,
    /// Objective after every accepted iterate, starting from the initial value.
    pub sse_trace: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct VarianceFit {
    pub theta_hat: Vec<f64>,
    /// `sigma(X_i, theta_hat)`.
    pub sigma: Vec<f64>,
    /// `e_i / sigma(X_i, theta_hat)`.
    pub standardized: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub sse: f64,
    pub sse_trace: Vec<f64>,
}

/// Relative eigenvalue threshold for declaring a Gram matrix rank deficient.
const RANK_TOL: f64 = 1e-12;

/// Cached normal-equation solver for a fixed design.
///
/// The bootstrap refits the same predictors hundreds of times; factoring
/// `G'G` once makes each refit a pair of matrix–vector products.
#[derive(Clone, Debug)]
pub struct LinearSolver {
    design: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl LinearSolver {
    /// `design` is `n x p` with rows `grad m(X_i)`.
    pub fn new(design: DMatrix<f64>) -> Result<Self> {
        let p = design.ncols();
        if design.nrows() < p {
            return Err(Error::Singular { rank: design.nrows(), dim: p });
        }
        let gram = design.tr_mul(&design);
        let eig = SymmetricEigen::new(gram.clone());
        let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let rank = eig.eigenvalues.iter().filter(|&&l| l > RANK_TOL * lmax.max(f64::MIN_POSITIVE)).count();
        if rank < p {
            return Err(Error::Singular { rank, dim: p });
        }
        let chol = gram.cholesky().ok_or(Error::Singular { rank, dim: p })?;
        Ok(LinearSolver { design, chol })
    }

    pub fn for_model(data: &Dataset, model: &dyn MeanModel) -> Result<Self> {
        Self::new(gradient_matrix(data, model, &vec![0.0; model.dim_param()])?)
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn solve(&self, y: &[f64]) -> Vec<f64> {
        let rhs = self.design.tr_mul(&DVector::from_column_slice(y));
        self.chol.solve(&rhs).as_slice().to_vec()
    }

    pub fn fitted(&self, beta: &[f64]) -> Vec<f64> {
        (&self.design * DVector::from_column_slice(beta)).as_slice().to_vec()
    }
}

/// `n x p` matrix with rows `grad m(X_i, beta)`.
pub fn gradient_matrix(data: &Dataset, model: &dyn MeanModel, beta: &[f64]) -> Result<DMatrix<f64>> {
    let p = model.dim_param();
    let mut g = DMatrix::zeros(data.n(), p);
    for (i, x) in data.rows().enumerate() {
        let row = mean_gradient(model, x, beta)?;
        for j in 0..p {
            g[(i, j)] = row[j];
        }
    }
    Ok(g)
}

fn check_model(data: &Dataset, model: &dyn MeanModel, init: &[f64]) -> Result<()> {
    if init.len() != model.dim_param() {
        return Err(Error::Dimension(format!(
            "init has length {} but {} has {} parameters",
            init.len(),
            model.name(),
            model.dim_param()
        )));
    }
    if init.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial parameter".into()));
    }
    if let Some(d) = model.dim_input() {
        if d != data.d() {
            return Err(Error::Dimension(format!("{} expects {d} predictors, data has {}", model.name(), data.d())));
        }
    }
    Ok(())
}

struct LmOutcome {
    params: Vec<f64>,
    converged: bool,
    iterations: usize,
    sse: f64,
    trace: Vec<f64>,
}

/// Residuals `r = target - model(params)` and Jacobian of the model part, or
/// `None` when `params` is inadmissible.
type Evaluation = Option<(DVector<f64>, DMatrix<f64>)>;

fn levenberg_marquardt<F>(init: &[f64], opts: &FitOptions, mut eval: F) -> Result<LmOutcome>
where
    F: FnMut(&[f64]) -> Result<Evaluation>,
{
    let (mut r, mut jac) = eval(init)?
        .ok_or_else(|| Error::InvalidInput("initial parameter is inadmissible".into()))?;
    let mut params = init.to_vec();
    let mut sse = r.norm_squared();
    let mut trace = vec![sse];
    let mut lambda = opts.init_damping;
    let p = params.len();

    for iter in 0..opts.max_iter {
        let g = jac.tr_mul(&r);
        if 2.0 * g.norm() <= opts.grad_tol * (1.0 + sse) {
            return Ok(LmOutcome { params, converged: true, iterations: iter, sse, trace });
        }
        let jtj = jac.tr_mul(&jac);
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for k in 0..p {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let step = match a.cholesky() {
                Some(c) => c.solve(&g),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let cand: Vec<f64> = params.iter().zip(step.iter()).map(|(b, s)| b + s).collect();
            if let Some((rc, jc)) = eval(&cand)? {
                let sc = rc.norm_squared();
                // near the optimum the objective stops resolving progress;
                // ties are accepted when they shrink the gradient
                let better = sc < sse || (sc == sse && jc.tr_mul(&rc).norm() < g.norm());
                if sc.is_finite() && better {
                    params = cand;
                    r = rc;
                    jac = jc;
                    sse = sc;
                    trace.push(sse);
                    lambda = (lambda / 10.0).max(1e-15);
                    accepted = true;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No descent is representable: we sit at the floating-point
            // minimum. Accept it when the gradient is small in a looser sense.
            let gnorm = 2.0 * jac.tr_mul(&r).norm();
            let ok = gnorm <= 1e-6 * (1.0 + sse);
            debug!("lm stalled at iteration {iter}: |grad| = {gnorm:.3e}, sse = {sse:.6e}");
            return Ok(LmOutcome { params, converged: ok, iterations: iter + 1, sse, trace });
        }
    }
    let g = jac.tr_mul(&r);
    let converged = 2.0 * g.norm() <= opts.grad_tol * (1.0 + sse);
    Ok(LmOutcome { params, converged, iterations: opts.max_iter, sse, trace })
}

fn finish_mean_fit(data: &Dataset, model: &dyn MeanModel, beta: Vec<f64>) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let mut fitted = Vec::with_capacity(data.n());
    for x in data.rows() {
        let v = model.eval(x, &beta);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{} at the fitted parameter", model.name())));
        }
        fitted.push(v);
    }
    let residuals: Vec<f64> = data.y().iter().zip(&fitted).map(|(y, m)| y - m).collect();
    let sse = residuals.iter().map(|e| e * e).sum();
    Ok((fitted, residuals, sse))
}

/// Least-squares estimate of the mean parameters with default options.
pub fn fit_mean_ls(data: &Dataset, model: &dyn MeanModel, init: &[f64]) -> Result<MeanFit> {
    fit_mean_ls_with(data, model, init, &FitOptions::default())
}

pub fn fit_mean_ls_with(data: &Dataset, model: &dyn MeanModel, init: &[f64], opts: &FitOptions) -> Result<MeanFit> {
    check_model(data, model, init)?;
    if model.is_linear() && !opts.force_iterative {
        let solver = LinearSolver::for_model(data, model)?;
        let beta = solver.solve(data.y());
        let init_sse = sse_at(data, model, init);
        let (fitted, residuals, sse) = finish_mean_fit(data, model, beta.clone())?;
        return Ok(MeanFit {
            beta_hat: beta,
            fitted,
            residuals,
            converged: true,
            iterations: 0,
            sse,
            sse_trace: vec![init_sse, sse],
        });
    }
    let y = DVector::from_column_slice(data.y());
    let n = data.n();
    let p = model.dim_param();
    let out = levenberg_marquardt(init, opts, |beta| {
        let mut r = DVector::zeros(n);
        let mut jac = DMatrix::zeros(n, p);
        for (i, x) in data.rows().enumerate() {
            let m = model.eval(x, beta);
            if !m.is_finite() {
                return Ok(None);
            }
            r[i] = y[i] - m;
            let g = match mean_gradient(model, x, beta) {
                Ok(g) => g,
                Err(_) => return Ok(None),
            };
            for j in 0..p {
                jac[(i, j)] = g[j];
            }
        }
        Ok(Some((r, jac)))
    })?;
    let (fitted, residuals, sse) = finish_mean_fit(data, model, out.params.clone())?;
    Ok(MeanFit {
        beta_hat: out.params,
        fitted,
        residuals,
        converged: out.converged,
        iterations: out.iterations,
        sse,
        sse_trace: out.trace,
    })
}

fn sse_at(data: &Dataset, model: &dyn MeanModel, beta: &[f64]) -> f64 {
    data.rows().zip(data.y()).map(|(x, y)| (y - model.eval(x, beta)).powi(2)).sum()
}

/// Initial value for linear-in-parameter null models: ordinary least squares
/// of `Y` on the design. For other models the caller's guess is kept.
pub fn default_init(data: &Dataset, model: &dyn MeanModel) -> Result<Vec<f64>> {
    if model.is_linear() {
        LinearSolver::for_model(data, model).map(|s| s.solve(data.y()))
    } else {
        Ok(vec![0.0; model.dim_param()])
    }
}

/// Least-squares fit of `sigma^2(x, theta)` to the squared residuals of
/// `mean_fit`. Steps that make any `sigma^2(X_i, theta)` non-positive are
/// rejected.
pub fn fit_variance_ls(
    data: &Dataset,
    mean_fit: &MeanFit,
    vmodel: &dyn VarianceModel,
    init: &[f64],
) -> Result<VarianceFit> {
    fit_variance_ls_with(data, mean_fit, vmodel, init, &FitOptions::default())
}

pub fn fit_variance_ls_with(
    data: &Dataset,
    mean_fit: &MeanFit,
    vmodel: &dyn VarianceModel,
    init: &[f64],
    opts: &FitOptions,
) -> Result<VarianceFit> {
    if mean_fit.residuals.len() != data.n() {
        return Err(Error::Dimension("mean fit was computed on different data".into()));
    }
    if init.len() != vmodel.dim_param() {
        return Err(Error::Dimension(format!(
            "init has length {} but {} has {} parameters",
            init.len(),
            vmodel.name(),
            vmodel.dim_param()
        )));
    }
    let n = data.n();
    let q = vmodel.dim_param();
    let target: Vec<f64> = mean_fit.residuals.iter().map(|e| e * e).collect();
    for (i, x) in data.rows().enumerate() {
        let s2 = vmodel.eval_sq(x, init);
        if !(s2 > 0.0) {
            return Err(Error::NonPositiveVariance { index: i, value: s2 });
        }
    }
    let out = levenberg_marquardt(init, opts, |theta| {
        let mut r = DVector::zeros(n);
        let mut jac = DMatrix::zeros(n, q);
        for (i, x) in data.rows().enumerate() {
            let s2 = vmodel.eval_sq(x, theta);
            if !(s2 > 0.0) || !s2.is_finite() {
                return Ok(None);
            }
            r[i] = target[i] - s2;
            let g = match variance_gradient(vmodel, x, theta) {
                Ok(g) => g,
                Err(_) => return Ok(None),
            };
            for j in 0..q {
                jac[(i, j)] = g[j];
            }
        }
        Ok(Some((r, jac)))
    })?;
    let mut sigma = Vec::with_capacity(n);
    for (i, x) in data.rows().enumerate() {
        let s2 = vmodel.eval_sq(x, &out.params);
        if !(s2 > 0.0) {
            return Err(Error::NonPositiveVariance { index: i, value: s2 });
        }
        sigma.push(s2.sqrt());
    }
    let standardized = mean_fit.residuals.iter().zip(&sigma).map(|(e, s)| e / s).collect();
    Ok(VarianceFit {
        theta_hat: out.params,
        sigma,
        standardized,
        converged: out.converged,
        iterations: out.iterations,
        sse: out.sse,
        sse_trace: out.trace,
    })
}

/// `eta_i = e_i / sigma(X_i, theta_hat)`.
pub fn standardized_residuals(mean_fit: &MeanFit, variance_fit: &VarianceFit) -> Result<Vec<f64>> {
    standardize(&mean_fit.residuals, &variance_fit.sigma)
}

pub fn standardize(residuals: &[f64], sigma: &[f64]) -> Result<Vec<f64>> {
    if residuals.len() != sigma.len() {
        return Err(Error::Dimension(format!("{} residuals vs {} scales", residuals.len(), sigma.len())));
    }
    residuals
        .iter()
        .zip(sigma)
        .enumerate()
        .map(|(i, (e, s))| if *s > 0.0 { Ok(e / s) } else { Err(Error::NonPositiveVariance { index: i, value: *s }) })
        .collect()
}

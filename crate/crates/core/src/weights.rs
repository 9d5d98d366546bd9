//! Weight functions `g(X)` for the residual processes.
//!
//! Every weight is of the form `g = G S^- (G' s / n) - s`, where `G` stacks
//! gradient rows of a parametric family at its fitted parameter and `s` is a
//! target function evaluated on the sample. Directional tests take `s` from a
//! fitted alternative class; omnibus tests take `s = m_hat`, a Fourier-type
//! expansion around the null fit along directions from cumulative slicing.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{gradient_matrix, MeanFit, VarianceFit};
use crate::models::{variance_gradient, Dataset, Feature, MeanModel, VarianceModel};
use crate::transform::{pseudo_inverse, DEFAULT_REL_TOL};

/// A weight evaluated on the sample, with its centered version and `rho_hat`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub g: Vec<f64>,
    pub g0: Vec<f64>,
    /// `sqrt(n^{-1} sum g0_i^2)`.
    pub rho_hat: f64,
    /// Magnitude of the inputs the weight was built from; `rho_hat` below
    /// `1e-9 * scale` counts as zero.
    pub scale: f64,
}

const DEGENERATE_REL: f64 = 1e-9;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

impl WeightVector {
    pub fn from_values(g: Vec<f64>) -> Result<Self> {
        let scale = rms(&g);
        Self::with_scale(g, scale)
    }

    pub fn with_scale(g: Vec<f64>, scale: f64) -> Result<Self> {
        if g.is_empty() {
            return Err(Error::InvalidInput("empty weight vector".into()));
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("weight at observation {i}")));
        }
        let m = mean(&g);
        let mut g0: Vec<f64> = g.iter().map(|v| v - m).collect();
        // second pass removes the rounding left by the first
        let m2 = mean(&g0);
        g0.iter_mut().for_each(|v| *v -= m2);
        let rho_hat = rms(&g0);
        Ok(WeightVector { g, g0, rho_hat, scale })
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    /// True when the centered weight is numerically zero.
    pub fn is_degenerate(&self) -> bool {
        self.rho_hat == 0.0 || self.rho_hat <= DEGENERATE_REL * self.scale
    }
}

/// `G S^- (G' s / n) - s` with `S = G'G / n`.
pub fn projected_weight(gmat: &DMatrix<f64>, s: &[f64]) -> Result<Vec<f64>> {
    let n = gmat.nrows();
    if s.len() != n {
        return Err(Error::Dimension(format!("target has {} entries, gradient matrix {} rows", s.len(), n)));
    }
    let nf = n as f64;
    let sigma = gmat.tr_mul(gmat) / nf;
    let (pinv, rank) = pseudo_inverse(&sigma, DEFAULT_REL_TOL);
    if rank < sigma.nrows() {
        warn!("gradient second-moment matrix has rank {rank} < {}; using pseudo-inverse", sigma.nrows());
    }
    let sv = DVector::from_column_slice(s);
    let moment = gmat.tr_mul(&sv) / nf;
    let fitted = gmat * (pinv * moment);
    Ok(fitted.iter().zip(s).map(|(f, t)| f - t).collect())
}

/// Directional weight from a fitted alternative class `s(x, theta)`.
pub fn directional_weight(
    data: &Dataset,
    model: &dyn MeanModel,
    mean_fit: &MeanFit,
    alt_model: &dyn MeanModel,
    alt_fit: &MeanFit,
) -> Result<WeightVector> {
    let gmat = gradient_matrix(data, model, &mean_fit.beta_hat)?;
    let s: Vec<f64> = data.rows().map(|x| alt_model.eval(x, &alt_fit.beta_hat)).collect();
    let g = projected_weight(&gmat, &s)?;
    WeightVector::with_scale(g, rms(&s))
}

/// Variance-test analogue: project a fitted alternative variance function
/// off the span of the null variance gradient.
pub fn directional_variance_weight(
    data: &Dataset,
    vmodel: &dyn VarianceModel,
    vfit: &VarianceFit,
    alt_model: &dyn VarianceModel,
    alt_fit: &VarianceFit,
) -> Result<WeightVector> {
    let gmat = variance_gradient_matrix(data, vmodel, &vfit.theta_hat)?;
    let s: Vec<f64> = data.rows().map(|x| alt_model.eval_sq(x, &alt_fit.theta_hat)).collect();
    let g = projected_weight(&gmat, &s)?;
    WeightVector::with_scale(g, rms(&s))
}

/// The infeasible weight built from the true regression function, for
/// simulation comparisons only (it vanishes under the null).
pub fn optimal_weight(data: &Dataset, model: &dyn MeanModel, beta0: &[f64], m_true: &Feature) -> Result<WeightVector> {
    let gmat = gradient_matrix(data, model, beta0)?;
    let s: Vec<f64> = data.rows().map(|x| m_true(x) - model.eval(x, beta0)).collect();
    let g = projected_weight(&gmat, &s)?;
    let scale = rms(&data.rows().map(|x| m_true(x)).collect::<Vec<_>>());
    WeightVector::with_scale(g, scale)
}

fn inner(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / u.len() as f64
}

/// Relative norm below which a projected vector counts as dependent.
pub const GS_DROP_TOL: f64 = 1e-8;

fn orthonormalize_into(acc: &mut Vec<Vec<f64>>, v: &[f64], tol: f64) -> bool {
    let pre = inner(v, v).sqrt();
    if pre == 0.0 || !pre.is_finite() {
        return false;
    }
    let mut w = v.to_vec();
    // two sweeps of modified Gram-Schmidt
    for _ in 0..2 {
        for q in acc.iter() {
            let c = inner(&w, q);
            w.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
        }
    }
    let post = inner(&w, &w).sqrt();
    if post < tol * pre {
        return false;
    }
    w.iter_mut().for_each(|a| *a /= post);
    acc.push(w);
    true
}

/// Orthonormal extension of `span(base)` by `funcs` under the empirical inner
/// product `<u, v> = n^{-1} sum u_i v_i`. Returns only the new vectors;
/// inputs nearly dependent on what came before are dropped.
pub fn gram_schmidt_empirical(funcs: &[Vec<f64>], base: &[Vec<f64>]) -> Vec<Vec<f64>> {
    gram_schmidt_with_tol(funcs, base, GS_DROP_TOL).0
}

/// As [`gram_schmidt_empirical`], also returning the indices of the kept
/// functions.
pub fn gram_schmidt_with_tol(funcs: &[Vec<f64>], base: &[Vec<f64>], tol: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut acc = Vec::new();
    for b in base {
        orthonormalize_into(&mut acc, b, tol);
    }
    let nbase = acc.len();
    let mut kept = Vec::new();
    for (k, f) in funcs.iter().enumerate() {
        if orthonormalize_into(&mut acc, f, tol) {
            kept.push(k);
        }
    }
    (acc.split_off(nbase), kept)
}

/// Estimated central subspace.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SdrResult {
    /// All `d` directions in the original predictor scale, unit length and
    /// mutually orthogonal, ordered by eigenvalue.
    pub directions: Vec<Vec<f64>>,
    pub s_hat: usize,
    /// Eigenvalues of the cumulative slicing kernel, descending.
    pub eigenvalues: Vec<f64>,
}

impl SdrResult {
    /// The selected `s_hat` leading directions.
    pub fn leading(&self) -> &[Vec<f64>] {
        &self.directions[..self.s_hat]
    }
}

/// Ridge constant multiplier for the eigenvalue-ratio rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdrConfig {
    pub ridge_scale: f64,
}

impl Default for SdrConfig {
    fn default() -> Self {
        SdrConfig { ridge_scale: 1.0 }
    }
}

/// `argmin_{1 <= i <= d-1} (l_{i+1} + c)/(l_i + c)` with
/// `c = scale * (trace/d) * log(n)/sqrt(n)`. Returns 1 when `d = 1`.
pub fn ridge_ratio_dimension(eigenvalues: &[f64], n: usize, ridge_scale: f64) -> usize {
    let d = eigenvalues.len();
    if d <= 1 {
        return 1;
    }
    let nf = n as f64;
    let trace: f64 = eigenvalues.iter().sum();
    let c = ridge_scale * (trace / d as f64) * nf.ln() / nf.sqrt();
    let mut best = 1;
    let mut best_ratio = f64::INFINITY;
    for i in 0..d - 1 {
        let r = (eigenvalues[i + 1] + c) / (eigenvalues[i] + c);
        if r < best_ratio {
            best_ratio = r;
            best = i + 1;
        }
    }
    best
}

pub fn estimate_central_subspace(data: &Dataset) -> Result<SdrResult> {
    estimate_central_subspace_with(data, &SdrConfig::default())
}

/// Cumulative slicing estimate of the central subspace.
pub fn estimate_central_subspace_with(data: &Dataset, cfg: &SdrConfig) -> Result<SdrResult> {
    let n = data.n();
    let d = data.d();
    if n <= d {
        return Err(Error::InvalidInput(format!("cumulative slicing needs n > d, got n={n}, d={d}")));
    }
    let nf = n as f64;
    let x = DMatrix::from_row_slice(n, d, data.x_row_major());
    let means = x.row_mean();
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= &means;
    }
    let cov = xc.tr_mul(&xc) / nf;
    let eig = SymmetricEigen::new(cov.clone());
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let rank = eig.eigenvalues.iter().filter(|&&l| l > 1e-12 * lmax).count();
    if rank < d || lmax <= 0.0 {
        return Err(Error::Singular { rank, dim: d });
    }
    let inv_sqrt = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()))
        * eig.eigenvectors.transpose();
    let z = &xc * &inv_sqrt;

    // cumulative sums of Z in response order give m_hat(Y_j) for every j
    let y = data.y();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    let mut lambda = DMatrix::<f64>::zeros(d, d);
    let mut cum = DVector::<f64>::zeros(d);
    let mut k = 0;
    while k < n {
        let mut end = k;
        while end + 1 < n && y[order[end + 1]] == y[order[k]] {
            end += 1;
        }
        for &i in &order[k..=end] {
            cum += z.row(i).transpose();
        }
        let m = &cum / nf;
        let count = (end - k + 1) as f64;
        lambda += (&m * m.transpose()) * count;
        k = end + 1;
    }
    lambda /= nf;

    let le = SymmetricEigen::new(lambda);
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| le.eigenvalues[b].total_cmp(&le.eigenvalues[a]));
    let eigenvalues: Vec<f64> = idx.iter().map(|&i| le.eigenvalues[i].max(0.0)).collect();
    let s_hat = ridge_ratio_dimension(&eigenvalues, n, cfg.ridge_scale);

    // back to the original scale, then orthonormalize in the given order
    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(d);
    for &i in &idx {
        let v = &inv_sqrt * le.eigenvectors.column(i);
        let mut w: Vec<f64> = v.iter().cloned().collect();
        for _ in 0..2 {
            for q in &directions {
                let c: f64 = w.iter().zip(q).map(|(a, b)| a * b).sum();
                w.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
            }
        }
        let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        w.iter_mut().for_each(|a| *a /= norm);
        directions.push(w);
    }
    Ok(SdrResult { directions, s_hat, eigenvalues })
}

/// Basis powers used by the omnibus weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmnibusConfig {
    pub powers: Vec<i32>,
    pub drop_tol: f64,
}

impl Default for OmnibusConfig {
    fn default() -> Self {
        OmnibusConfig { powers: vec![2, 3, 4], drop_tol: GS_DROP_TOL }
    }
}

/// Omnibus weight plus the pieces it was assembled from.
#[derive(Clone, Debug)]
pub struct OmnibusWeight {
    pub weight: WeightVector,
    /// Orthonormalized basis columns on the sample.
    pub basis: Vec<Vec<f64>>,
    /// `c_i = n^{-1} sum_j e_j g_i(X_j)`.
    pub coefficients: Vec<f64>,
    /// `m_hat(X_i)`.
    pub m_hat: Vec<f64>,
    /// True when every basis function was dropped.
    pub fallback: bool,
}

/// Raw basis functions `(B_i' x)^k` for the selected directions.
pub fn omnibus_basis(data: &Dataset, sdr: &SdrResult, powers: &[i32]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for b in sdr.leading() {
        let index: Vec<f64> = data.rows().map(|x| x.iter().zip(b).map(|(u, v)| u * v).sum()).collect();
        for &k in powers {
            out.push(index.iter().map(|t| t.powi(k)).collect());
        }
    }
    out
}

pub fn omnibus_weight(data: &Dataset, model: &dyn MeanModel, mean_fit: &MeanFit, sdr: &SdrResult) -> Result<OmnibusWeight> {
    omnibus_weight_with(data, model, mean_fit, sdr, &OmnibusConfig::default())
}

pub fn omnibus_weight_with(
    data: &Dataset,
    model: &dyn MeanModel,
    mean_fit: &MeanFit,
    sdr: &SdrResult,
    cfg: &OmnibusConfig,
) -> Result<OmnibusWeight> {
    let raw = omnibus_basis(data, sdr, &cfg.powers);
    omnibus_weight_from_basis(data, model, mean_fit, &raw, cfg.drop_tol)
}

/// Omnibus weight from caller-supplied basis functions on the sample.
pub fn omnibus_weight_from_basis(
    data: &Dataset,
    model: &dyn MeanModel,
    mean_fit: &MeanFit,
    raw_basis: &[Vec<f64>],
    drop_tol: f64,
) -> Result<OmnibusWeight> {
    let gmat = gradient_matrix(data, model, &mean_fit.beta_hat)?;
    omnibus_from_parts(&gmat, &mean_fit.fitted, &mean_fit.residuals, raw_basis, drop_tol)
}

/// Omnibus weight from a gradient matrix, the fitted null values and the
/// residuals of the quantity being modelled.
pub fn omnibus_from_parts(
    gmat: &DMatrix<f64>,
    fitted: &[f64],
    residuals: &[f64],
    raw_basis: &[Vec<f64>],
    drop_tol: f64,
) -> Result<OmnibusWeight> {
    let n = gmat.nrows();
    if raw_basis.iter().any(|b| b.len() != n) {
        return Err(Error::Dimension("basis column length differs from n".into()));
    }
    if fitted.len() != n || residuals.len() != n {
        return Err(Error::Dimension("fitted values or residuals differ in length from n".into()));
    }
    let base: Vec<Vec<f64>> = gmat.column_iter().map(|c| c.iter().cloned().collect()).collect();
    let (basis, _) = gram_schmidt_with_tol(raw_basis, &base, drop_tol);
    let fallback = basis.is_empty();
    if fallback {
        warn!("every omnibus basis function was dependent on the gradient span; weight is zero");
    }
    let nf = n as f64;
    let coefficients: Vec<f64> =
        basis.iter().map(|b| residuals.iter().zip(b).map(|(u, v)| u * v).sum::<f64>() / nf).collect();
    let mut m_hat = fitted.to_vec();
    for (c, b) in coefficients.iter().zip(&basis) {
        m_hat.iter_mut().zip(b).for_each(|(m, v)| *m += c * v);
    }
    let g = projected_weight(gmat, &m_hat)?;
    let weight = WeightVector::with_scale(g, rms(&m_hat).max(rms(residuals)))?;
    Ok(OmnibusWeight { weight, basis, coefficients, m_hat, fallback })
}

/// Variance-test omnibus weight: directions come from cumulative slicing
/// of the squared residuals, the expansion is around `sigma_hat^2` and the
/// projection is onto the variance-gradient span.
pub fn omnibus_variance_weight(
    data: &Dataset,
    mean_fit: &MeanFit,
    vmodel: &dyn VarianceModel,
    vfit: &VarianceFit,
    sdr_cfg: &SdrConfig,
    cfg: &OmnibusConfig,
) -> Result<(OmnibusWeight, SdrResult)> {
    let sq: Vec<f64> = mean_fit.residuals.iter().map(|e| e * e).collect();
    let sdr = estimate_central_subspace_with(&data.with_response(sq.clone())?, sdr_cfg)?;
    let raw = omnibus_basis(data, &sdr, &cfg.powers);
    let gmat = variance_gradient_matrix(data, vmodel, &vfit.theta_hat)?;
    let fitted: Vec<f64> = vfit.sigma.iter().map(|s| s * s).collect();
    let resid: Vec<f64> = sq.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    Ok((omnibus_from_parts(&gmat, &fitted, &resid, &raw, cfg.drop_tol)?, sdr))
}

fn variance_gradient_matrix(data: &Dataset, vmodel: &dyn VarianceModel, theta: &[f64]) -> Result<DMatrix<f64>> {
    let q = vmodel.dim_param();
    let mut gmat = DMatrix::zeros(data.n(), q);
    for (i, x) in data.rows().enumerate() {
        let g = variance_gradient(vmodel, x, theta)?;
        for j in 0..q {
            gmat[(i, j)] = g[j];
        }
    }
    Ok(gmat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::{default_init, fit_mean_ls};
    use crate::models::{Linear, LinearPlusTerm};
    use crate::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;
    use std::sync::Arc;

    fn gaussian_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::stream(seed, &[]);
        (0..n).map(|_| (0..d).map(|_| r.sample(StandardNormal)).collect()).collect()
    }

    fn gram(vs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        vs.iter().map(|u| vs.iter().map(|v| inner(u, v)).collect()).collect()
    }

    #[test]
    fn centering_and_rho() {
        let w = WeightVector::from_values(vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        assert!(w.g0.iter().sum::<f64>().abs() < 1e-14);
        assert!((w.rho_hat - (14.0f64 / 4.0).sqrt()).abs() < 1e-14);
        let c = WeightVector::from_values(vec![2.5; 7]).unwrap();
        assert!(c.is_degenerate());
        assert!(WeightVector::from_values(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn gs_examples() {
        let v = vec![1.0, -2.0, 0.5, 3.0];
        let out = gram_schmidt_empirical(&[v.clone(), v.clone()], &[]);
        assert_eq!(out.len(), 1);
        assert!((inner(&out[0], &out[0]) - 1.0).abs() < 1e-12);

        let x = vec![-1.5, -0.5, 0.5, 1.5];
        let out = gram_schmidt_empirical(&[x.clone()], &[vec![1.0; 4]]);
        let norm = inner(&x, &x).sqrt();
        for (a, b) in out[0].iter().zip(&x) {
            assert!((a - b / norm).abs() < 1e-14);
        }

        let rows = gaussian_rows(3, 30, 1);
        let out = gram_schmidt_empirical(&rows, &[]);
        for (i, r) in gram(&out).iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn gs_orthogonal_to_base() {
        let base = gaussian_rows(3, 50, 2);
        let mut funcs = gaussian_rows(4, 50, 3);
        // a function inside the base span is dropped
        funcs.push(base[0].iter().zip(&base[1]).map(|(a, b)| 2.0 * a - b).collect());
        let (out, kept) = gram_schmidt_with_tol(&funcs, &base, GS_DROP_TOL);
        assert_eq!(kept, vec![0, 1, 2, 3]);
        for q in &out {
            for b in &base {
                assert!(inner(q, b).abs() < 1e-8);
            }
        }
    }

    fn linear_data(n: usize, d: usize, seed: u64, f: impl Fn(&[f64]) -> f64) -> Dataset {
        let rows = gaussian_rows(n, d, seed);
        let mut r = rng::stream(seed, &[1]);
        let y: Vec<f64> = rows.iter().map(|x| f(x) + r.sample::<f64, _>(StandardNormal)).collect();
        Dataset::from_rows(&rows, y).unwrap()
    }

    #[test]
    fn directional_weight_null_class_is_zero() {
        let data = linear_data(80, 3, 4, |x| x[0] - x[2]);
        let m = Linear { dim: 3 };
        let fit = fit_mean_ls(&data, &m, &default_init(&data, &m).unwrap()).unwrap();
        let w = directional_weight(&data, &m, &fit, &m, &fit).unwrap();
        assert!(w.rho_hat < 1e-12 * w.scale.max(1.0), "rho {}", w.rho_hat);
        assert!(w.is_degenerate());
    }

    #[test]
    fn directional_weight_recomputation_and_scaling() {
        let data = linear_data(40, 1, 5, |x| x[0]);
        let m = Linear { dim: 1 };
        let fit = fit_mean_ls(&data, &m, &[0.0]).unwrap();
        let alt = LinearPlusTerm { dim: 1, label: "sq".into(), term: Arc::new(|x: &[f64]| x[0] * x[0]) };
        let alt_fit = fit_mean_ls(&data, &alt, &[0.0, 0.0]).unwrap();
        let w = directional_weight(&data, &m, &fit, &alt, &alt_fit).unwrap();

        let n = data.n() as f64;
        let xs: Vec<f64> = data.rows().map(|r| r[0]).collect();
        let s: Vec<f64> = data.rows().map(|r| alt.eval(r, &alt_fit.beta_hat)).collect();
        let sxx = xs.iter().map(|x| x * x).sum::<f64>() / n;
        let sxs = xs.iter().zip(&s).map(|(x, v)| x * v).sum::<f64>() / n;
        for i in 0..xs.len() {
            let direct = xs[i] * (sxs / sxx) - s[i];
            assert!((w.g[i] - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
        }

        let mut doubled = alt_fit.clone();
        doubled.beta_hat.iter_mut().for_each(|b| *b *= 2.0);
        let w2 = directional_weight(&data, &m, &fit, &alt, &doubled).unwrap();
        for (a, b) in w.g.iter().zip(&w2.g) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn mrer_rule() {
        assert_eq!(ridge_ratio_dimension(&[5.0], 100, 1.0), 1);
        assert_eq!(ridge_ratio_dimension(&[1.0, 0.9, 0.001, 0.001], 1000, 1.0), 2);
        assert_eq!(ridge_ratio_dimension(&[1.0, 0.01, 0.005], 1000, 1.0), 1);
    }

    #[test]
    fn sdr_noise_returns_valid_dimension() {
        let rows = gaussian_rows(500, 4, 6);
        let mut r = rng::stream(6, &[9]);
        let y: Vec<f64> = (0..500).map(|_| r.sample(StandardNormal)).collect();
        let data = Dataset::from_rows(&rows, y).unwrap();
        let sdr = estimate_central_subspace(&data).unwrap();
        assert!((1..=4).contains(&sdr.s_hat));
        assert!(sdr.eigenvalues.iter().all(|&l| l < 0.05), "{:?}", sdr.eigenvalues);
        for (i, u) in sdr.directions.iter().enumerate() {
            for (j, v) in sdr.directions.iter().enumerate() {
                let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn sdr_recovers_single_index() {
        let beta = [1.0, -1.0, 0.5, 0.0, 0.0];
        let bn = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        let mut hits = 0;
        for seed in 0..50 {
            let data = linear_data(1000, 5, 100 + seed, |x| {
                let t: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
                t.powi(3)
            });
            let sdr = estimate_central_subspace(&data).unwrap();
            let b1 = &sdr.directions[0];
            let c: f64 = b1.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() / bn;
            if c.abs() > 0.9 {
                hits += 1;
            }
        }
        assert!(hits >= 45, "{hits}/50");
    }

    #[test]
    fn sdr_singular_predictors() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let data = Dataset::from_rows(&rows, (0..20).map(|i| i as f64).collect()).unwrap();
        assert!(matches!(estimate_central_subspace(&data), Err(Error::Singular { .. })));
    }

    #[test]
    fn omnibus_zero_residuals() {
        let rows = gaussian_rows(60, 3, 7);
        let y: Vec<f64> = rows.iter().map(|x| x[0] + 2.0 * x[1]).collect();
        let data = Dataset::from_rows(&rows, y).unwrap();
        let m = Linear { dim: 3 };
        let fit = fit_mean_ls(&data, &m, &[0.0; 3]).unwrap();
        let sdr = estimate_central_subspace(&data).unwrap();
        let ow = omnibus_weight(&data, &m, &fit, &sdr).unwrap();
        assert!(ow.coefficients.iter().all(|c| c.abs() < 1e-12));
        assert!(ow.weight.g.iter().all(|g| g.abs() < 1e-10));
    }

    #[test]
    fn omnibus_coefficients_and_linear_form() {
        let data = linear_data(200, 3, 8, |x| x[0] + 0.5 * x[0] * x[0]);
        let m = Linear { dim: 3 };
        let fit = fit_mean_ls(&data, &m, &[0.0; 3]).unwrap();
        let sdr = estimate_central_subspace(&data).unwrap();
        let ow = omnibus_weight(&data, &m, &fit, &sdr).unwrap();
        assert!(!ow.fallback);
        let n = data.n() as f64;
        for (c, b) in ow.coefficients.iter().zip(&ow.basis) {
            let direct = fit.residuals.iter().zip(b).map(|(u, v)| u * v).sum::<f64>() / n;
            assert_eq!(*c, direct);
        }
        // for a linear null the weight is minus the fitted correction
        for i in 0..data.n() {
            let corr: f64 = ow.coefficients.iter().zip(&ow.basis).map(|(c, b)| c * b[i]).sum();
            assert!((ow.weight.g[i] + corr).abs() < 1e-8);
        }
    }

    #[test]
    fn optimal_weight_vanishes_under_null() {
        let data = linear_data(50, 2, 9, |x| x[0]);
        let m = Linear { dim: 2 };
        let beta0 = [1.0, 0.0];
        let truth: Feature = Arc::new(|x: &[f64]| x[0]);
        let w = optimal_weight(&data, &m, &beta0, &truth).unwrap();
        assert!(w.g.iter().all(|g| g.abs() < 1e-12));
    }
}

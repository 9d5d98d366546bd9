//! Datasets, parametric mean and variance families, and the simulation
//! data-generating processes.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Real-valued function of a predictor vector.
pub type Feature = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// `n` observations of a predictor vector in `R^d` and a scalar response.
///
/// Predictors are stored row-major so a single observation is a contiguous
/// slice.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    y: Vec<f64>,
    d: usize,
}

impl Dataset {
    /// Build from a row-major predictor buffer of length `n * d`.
    pub fn new(x: Vec<f64>, y: Vec<f64>, d: usize) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 observations, got {n}")));
        }
        if d == 0 {
            return Err(Error::InvalidInput("predictor dimension must be at least 1".into()));
        }
        if x.len() != n * d {
            return Err(Error::Dimension(format!(
                "predictor buffer has {} entries, expected {n}x{d}",
                x.len()
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("predictor row {} column {}", i / d, i % d)));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("response row {i}")));
        }
        Ok(Dataset { x, y, d })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.len() != y.len() {
            return Err(Error::Dimension(format!(
                "{} predictor rows but {} responses",
                rows.len(),
                y.len()
            )));
        }
        if let Some(r) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::Dimension(format!("row {r} has a different length")));
        }
        Dataset::new(rows.concat(), y, d)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.d)
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x_row_major(&self) -> &[f64] {
        &self.x
    }

    /// Same predictors with a different response vector.
    pub fn with_response(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(Error::Dimension(format!("response length {} != {}", y.len(), self.n())));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("response row {i}")));
        }
        Ok(Dataset { x: self.x.clone(), y, d: self.d })
    }

    /// Rows reordered by `perm` (`new[i] = old[perm[i]]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut x = Vec::with_capacity(self.x.len());
        let mut y = Vec::with_capacity(self.n());
        for &i in perm {
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        Dataset { x, y, d: self.d }
    }
}

/// Parametric regression family `m(x, beta)`.
pub trait MeanModel: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    fn dim_param(&self) -> usize;

    /// Required predictor dimension, when the model fixes one.
    fn dim_input(&self) -> Option<usize> {
        None
    }

    fn eval(&self, x: &[f64], beta: &[f64]) -> f64;

    /// Analytic gradient in `beta`; `None` selects central differences.
    fn grad(&self, _x: &[f64], _beta: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// True when `m(x, beta) = grad(x)' beta` with a gradient free of `beta`.
    /// Such models are fitted by the normal equations.
    fn is_linear(&self) -> bool {
        false
    }
}

/// Parametric variance family `sigma^2(x, theta)`.
pub trait VarianceModel: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    fn dim_param(&self) -> usize;

    fn eval_sq(&self, x: &[f64], theta: &[f64]) -> f64;

    fn grad_sq(&self, _x: &[f64], _theta: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Starting value for the variance fit given the mean squared residual.
    fn initial_guess(&self, mean_sq: f64) -> Vec<f64> {
        let mut t = vec![0.0; self.dim_param()];
        t[0] = mean_sq;
        t
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// `m(x, beta) = beta' x`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub dim: usize,
}

impl MeanModel for Linear {
    fn name(&self) -> String {
        "linear".into()
    }
    fn dim_param(&self) -> usize {
        self.dim
    }
    fn dim_input(&self) -> Option<usize> {
        Some(self.dim)
    }
    fn eval(&self, x: &[f64], beta: &[f64]) -> f64 {
        dot(x, beta)
    }
    fn grad(&self, x: &[f64], _beta: &[f64]) -> Option<Vec<f64>> {
        Some(x.to_vec())
    }
    fn is_linear(&self) -> bool {
        true
    }
}

/// `m(x, beta) = (beta' x)^2`.
#[derive(Clone, Debug)]
pub struct SingleIndexQuadratic {
    pub dim: usize,
}

impl MeanModel for SingleIndexQuadratic {
    fn name(&self) -> String {
        "single_index_quadratic".into()
    }
    fn dim_param(&self) -> usize {
        self.dim
    }
    fn dim_input(&self) -> Option<usize> {
        Some(self.dim)
    }
    fn eval(&self, x: &[f64], beta: &[f64]) -> f64 {
        dot(x, beta).powi(2)
    }
    fn grad(&self, x: &[f64], beta: &[f64]) -> Option<Vec<f64>> {
        let u = 2.0 * dot(x, beta);
        Some(x.iter().map(|v| u * v).collect())
    }
}

/// `m(x, beta) = beta[..d]' x + beta[d] * exp(beta[d+1..]' x)`: a linear
/// part plus an exponential index with free direction.
#[derive(Clone, Debug)]
pub struct LinearExpIndex {
    pub dim: usize,
}

impl MeanModel for LinearExpIndex {
    fn name(&self) -> String {
        "linear_exp_index".into()
    }
    fn dim_param(&self) -> usize {
        2 * self.dim + 1
    }
    fn dim_input(&self) -> Option<usize> {
        Some(self.dim)
    }
    fn eval(&self, x: &[f64], beta: &[f64]) -> f64 {
        let d = self.dim;
        dot(x, &beta[..d]) + beta[d] * dot(x, &beta[d + 1..]).exp()
    }
    fn grad(&self, x: &[f64], beta: &[f64]) -> Option<Vec<f64>> {
        let d = self.dim;
        let e = dot(x, &beta[d + 1..]).exp();
        let mut g = Vec::with_capacity(2 * d + 1);
        g.extend_from_slice(x);
        g.push(e);
        g.extend(x.iter().map(|v| beta[d] * e * v));
        Some(g)
    }
}

/// `m(x, theta) = theta[..d]' x + theta[d] * term(x)`: the directional
/// alternative class spanned by the null's linear part and one extra
/// function. Linear in its parameters.
#[derive(Clone)]
pub struct LinearPlusTerm {
    pub dim: usize,
    pub label: String,
    pub term: Feature,
}

impl fmt::Debug for LinearPlusTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearPlusTerm").field("dim", &self.dim).field("label", &self.label).finish()
    }
}

impl MeanModel for LinearPlusTerm {
    fn name(&self) -> String {
        format!("linear+{}", self.label)
    }
    fn dim_param(&self) -> usize {
        self.dim + 1
    }
    fn dim_input(&self) -> Option<usize> {
        Some(self.dim)
    }
    fn eval(&self, x: &[f64], beta: &[f64]) -> f64 {
        dot(x, &beta[..self.dim]) + beta[self.dim] * (self.term)(x)
    }
    fn grad(&self, x: &[f64], _beta: &[f64]) -> Option<Vec<f64>> {
        let mut g = x.to_vec();
        g.push((self.term)(x));
        Some(g)
    }
    fn is_linear(&self) -> bool {
        true
    }
}

/// User-supplied mean model.
#[derive(Clone)]
pub struct ClosureMean {
    pub label: String,
    pub dim_param: usize,
    pub f: Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>,
    pub grad: Option<Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>>,
}

impl fmt::Debug for ClosureMean {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClosureMean").field("label", &self.label).field("dim_param", &self.dim_param).finish()
    }
}

impl MeanModel for ClosureMean {
    fn name(&self) -> String {
        self.label.clone()
    }
    fn dim_param(&self) -> usize {
        self.dim_param
    }
    fn eval(&self, x: &[f64], beta: &[f64]) -> f64 {
        (self.f)(x, beta)
    }
    fn grad(&self, x: &[f64], beta: &[f64]) -> Option<Vec<f64>> {
        self.grad.as_ref().map(|g| g(x, beta))
    }
}

/// `sigma^2(x, theta) = theta`.
#[derive(Clone, Debug, Default)]
pub struct ConstantVariance;

impl VarianceModel for ConstantVariance {
    fn name(&self) -> String {
        "constant".into()
    }
    fn dim_param(&self) -> usize {
        1
    }
    fn eval_sq(&self, _x: &[f64], theta: &[f64]) -> f64 {
        theta[0]
    }
    fn grad_sq(&self, _x: &[f64], _theta: &[f64]) -> Option<Vec<f64>> {
        Some(vec![1.0])
    }
}

/// `sigma^2(x, theta) = exp(theta)`.
#[derive(Clone, Debug, Default)]
pub struct ExpConstantVariance;

impl VarianceModel for ExpConstantVariance {
    fn name(&self) -> String {
        "exp_constant".into()
    }
    fn dim_param(&self) -> usize {
        1
    }
    fn eval_sq(&self, _x: &[f64], theta: &[f64]) -> f64 {
        theta[0].exp()
    }
    fn grad_sq(&self, _x: &[f64], theta: &[f64]) -> Option<Vec<f64>> {
        Some(vec![theta[0].exp()])
    }
    fn initial_guess(&self, mean_sq: f64) -> Vec<f64> {
        vec![mean_sq.max(f64::MIN_POSITIVE).ln()]
    }
}

/// `sigma^2(x, theta) = exp(theta' x)`, optionally with a leading intercept
/// `exp(theta[0] + theta[1..]' x)`.
#[derive(Clone, Debug)]
pub struct LogLinearVariance {
    pub dim: usize,
    pub intercept: bool,
}

impl LogLinearVariance {
    fn index(&self, x: &[f64], theta: &[f64]) -> f64 {
        if self.intercept {
            theta[0] + dot(x, &theta[1..])
        } else {
            dot(x, theta)
        }
    }
}

impl VarianceModel for LogLinearVariance {
    fn name(&self) -> String {
        "log_linear".into()
    }
    fn dim_param(&self) -> usize {
        self.dim + usize::from(self.intercept)
    }
    fn eval_sq(&self, x: &[f64], theta: &[f64]) -> f64 {
        self.index(x, theta).exp()
    }
    fn grad_sq(&self, x: &[f64], theta: &[f64]) -> Option<Vec<f64>> {
        let s = self.index(x, theta).exp();
        let mut g = Vec::with_capacity(self.dim_param());
        if self.intercept {
            g.push(s);
        }
        g.extend(x.iter().map(|v| s * v));
        Some(g)
    }
    fn initial_guess(&self, mean_sq: f64) -> Vec<f64> {
        let mut t = vec![0.0; self.dim_param()];
        if self.intercept {
            t[0] = mean_sq.max(f64::MIN_POSITIVE).ln();
        }
        t
    }
}

/// `sigma^2(x, theta) = theta[0] + theta[1] * term(x)`; linear in `theta`.
#[derive(Clone)]
pub struct AffineVariance {
    pub label: String,
    pub term: Feature,
}

impl fmt::Debug for AffineVariance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AffineVariance").field("label", &self.label).finish()
    }
}

impl VarianceModel for AffineVariance {
    fn name(&self) -> String {
        format!("affine+{}", self.label)
    }
    fn dim_param(&self) -> usize {
        2
    }
    fn eval_sq(&self, x: &[f64], theta: &[f64]) -> f64 {
        theta[0] + theta[1] * (self.term)(x)
    }
    fn grad_sq(&self, x: &[f64], _theta: &[f64]) -> Option<Vec<f64>> {
        Some(vec![1.0, (self.term)(x)])
    }
}

fn check_dims(model: &dyn MeanModel, x: &[f64], beta: &[f64]) -> Result<()> {
    if beta.len() != model.dim_param() {
        return Err(Error::Dimension(format!(
            "{}: parameter length {} != {}",
            model.name(),
            beta.len(),
            model.dim_param()
        )));
    }
    if let Some(d) = model.dim_input() {
        if x.len() != d {
            return Err(Error::Dimension(format!("{}: input length {} != {d}", model.name(), x.len())));
        }
    }
    Ok(())
}

/// Checked evaluation of `m(x, beta)`.
pub fn eval_mean(model: &dyn MeanModel, x: &[f64], beta: &[f64]) -> Result<f64> {
    check_dims(model, x, beta)?;
    let v = model.eval(x, beta);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{} evaluated to {v}", model.name())))
    }
}

/// Default relative step for central differences.
pub const GRAD_STEP: f64 = 1e-6;

/// Central-difference gradient with per-coordinate step
/// `step * max(1, |beta_j|)`.
pub fn numeric_grad_mean(model: &dyn MeanModel, x: &[f64], beta: &[f64], step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::InvalidInput(format!("step must be positive, got {step}")));
    }
    check_dims(model, x, beta)?;
    let mut probe = beta.to_vec();
    let mut out = Vec::with_capacity(beta.len());
    for j in 0..beta.len() {
        let h = step * beta[j].abs().max(1.0);
        probe[j] = beta[j] + h;
        let up = model.eval(x, &probe);
        probe[j] = beta[j] - h;
        let down = model.eval(x, &probe);
        probe[j] = beta[j];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("{} probe along coordinate {j}", model.name())));
        }
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Analytic gradient when the model provides one, central differences
/// otherwise.
pub fn mean_gradient(model: &dyn MeanModel, x: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
    match model.grad(x, beta) {
        Some(g) => {
            if g.len() != model.dim_param() {
                return Err(Error::Dimension(format!("{}: gradient length {}", model.name(), g.len())));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{} gradient", model.name())));
            }
            Ok(g)
        }
        None => numeric_grad_mean(model, x, beta, GRAD_STEP),
    }
}

/// Central-difference gradient of a variance model.
pub fn variance_gradient(model: &dyn VarianceModel, x: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
    if let Some(g) = model.grad_sq(x, theta) {
        return Ok(g);
    }
    let mut probe = theta.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for j in 0..theta.len() {
        let h = GRAD_STEP * theta[j].abs().max(1.0);
        probe[j] = theta[j] + h;
        let up = model.eval_sq(x, &probe);
        probe[j] = theta[j] - h;
        let down = model.eval_sq(x, &probe);
        probe[j] = theta[j];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("{} probe along coordinate {j}", model.name())));
        }
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Named simulation designs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioName {
    H11,
    H12,
    H21,
    H22,
    H23,
    #[serde(rename = "custom")]
    Custom,
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScenarioName::H11 => "H11",
            ScenarioName::H12 => "H12",
            ScenarioName::H21 => "H21",
            ScenarioName::H22 => "H22",
            ScenarioName::H23 => "H23",
            ScenarioName::Custom => "custom",
        };
        f.write_str(s)
    }
}

/// Predictor dimension: `"auto"` applies `p = floor(3 n^{1/3}) - 3`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "PRuleRepr", into = "PRuleRepr")]
pub enum PRule {
    #[default]
    Auto,
    Fixed(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PRuleRepr {
    Fixed(usize),
    Named(String),
}

impl TryFrom<PRuleRepr> for PRule {
    type Error = String;
    fn try_from(r: PRuleRepr) -> std::result::Result<Self, String> {
        match r {
            PRuleRepr::Fixed(p) => Ok(PRule::Fixed(p)),
            PRuleRepr::Named(s) if s == "auto" => Ok(PRule::Auto),
            PRuleRepr::Named(s) => Err(format!("unknown p rule {s:?}")),
        }
    }
}

impl From<PRule> for PRuleRepr {
    fn from(p: PRule) -> Self {
        match p {
            PRule::Auto => PRuleRepr::Named("auto".into()),
            PRule::Fixed(p) => PRuleRepr::Fixed(p),
        }
    }
}

/// `floor(3 n^{1/3}) - 3`, floored at 2.
pub fn dimension_rule(n: usize) -> Result<usize> {
    // floor(3 n^{1/3}) is the largest k with k^3 <= 27 n; integer search
    // avoids 3 * cbrt(1000) = 29.999...
    let target = 27 * n as u128;
    let mut k = (target as f64).cbrt().floor() as u128;
    while (k + 1).pow(3) <= target {
        k += 1;
    }
    while k > 0 && k.pow(3) > target {
        k -= 1;
    }
    let p = k as i64 - 3;
    if p < 2 {
        return Err(Error::InvalidInput(format!("dimension rule gives p = {p} < 2 for n = {n}")));
    }
    Ok(p as usize)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    /// Identity.
    #[default]
    Sigma1,
    /// Entries `0.5^{|i-j|}`.
    Sigma2,
}

impl fmt::Display for CovarianceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CovarianceKind::Sigma1 => "sigma1",
            CovarianceKind::Sigma2 => "sigma2",
        })
    }
}

/// Deviation functions `S(X)` of the named designs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationKind {
    /// `(b0' x)^2`
    Quadratic,
    /// `cos(0.6 pi b0' x)`
    Cosine,
    /// `exp(b1' x)`
    Exponential,
    /// `(b1' x)^3 + sin(0.5 pi b1' x) + (b0' x)(b1' x)`
    Mixed,
    /// `|x2| + x3^3 - x4^2 + x5^3 + x6 x7 + cos(pi x8) + sin(pi x9 x10)`
    Additive,
    /// `S = 0`
    Zero,
}

/// Variance deviation `L(X)` for heteroscedastic designs:
/// `sigma^2(X) = 1 + b r_n L(X)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceDeviationKind {
    /// `1(x1 > 0)`
    StepX1,
    /// `x1^2`
    SquareX1,
}

/// Error law, always scaled to unit variance.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "law")]
pub enum ErrorLaw {
    #[default]
    Normal,
    StudentT { df: f64 },
}

/// A data-generating process.
///
/// Responses are `Y = m0(X) + a r_n S(X) + sigma(X) eps` with `r_n = n^{-alpha}`
/// (`r_n = 1` when `alpha` is unset) and `sigma^2(X) = 1 + b r_n L(X)`.
#[derive(Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub name: ScenarioName,
    pub n: usize,
    #[serde(default)]
    pub p: PRule,
    #[serde(default)]
    pub covariance: CovarianceKind,
    #[serde(default)]
    pub a: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Overrides the design's own deviation function.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deviation: Option<DeviationKind>,
    #[serde(default)]
    pub errors: ErrorLaw,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_deviation: Option<VarianceDeviationKind>,
    #[serde(default)]
    pub b: f64,
    #[serde(skip)]
    pub custom_deviation: Option<Feature>,
    #[serde(skip)]
    pub custom_variance_deviation: Option<Feature>,
}

impl fmt::Debug for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scenario")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("p", &self.p)
            .field("covariance", &self.covariance)
            .field("a", &self.a)
            .field("alpha", &self.alpha)
            .field("deviation", &self.deviation)
            .field("errors", &self.errors)
            .field("variance_deviation", &self.variance_deviation)
            .field("b", &self.b)
            .field("custom_deviation", &self.custom_deviation.is_some())
            .field("custom_variance_deviation", &self.custom_variance_deviation.is_some())
            .finish()
    }
}

impl Scenario {
    pub fn new(name: ScenarioName, n: usize) -> Self {
        Scenario {
            name,
            n,
            p: PRule::Auto,
            covariance: CovarianceKind::Sigma1,
            a: 0.0,
            alpha: None,
            deviation: None,
            errors: ErrorLaw::Normal,
            variance_deviation: None,
            b: 0.0,
            custom_deviation: None,
            custom_variance_deviation: None,
        }
    }

    pub fn with_a(mut self, a: f64) -> Self {
        self.a = a;
        self
    }

    pub fn with_covariance(mut self, c: CovarianceKind) -> Self {
        self.covariance = c;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn with_p(mut self, p: usize) -> Self {
        self.p = PRule::Fixed(p);
        self
    }

    pub fn with_errors(mut self, law: ErrorLaw) -> Self {
        self.errors = law;
        self
    }

    pub fn with_deviation(mut self, s: DeviationKind) -> Self {
        self.deviation = Some(s);
        self
    }

    pub fn with_variance_deviation(mut self, l: VarianceDeviationKind, b: f64) -> Self {
        self.variance_deviation = Some(l);
        self.b = b;
        self
    }

    pub fn dim(&self) -> Result<usize> {
        let p = match self.p {
            PRule::Auto => dimension_rule(self.n)?,
            PRule::Fixed(p) => p,
        };
        if p < 1 {
            return Err(Error::InvalidInput("p must be at least 1".into()));
        }
        if self.name == ScenarioName::H23 && p < 10 {
            return Err(Error::InvalidInput(format!("H23 needs p >= 10, got {p}")));
        }
        Ok(p)
    }

    /// Local rate `r_n = n^{-alpha}`.
    pub fn rate(&self) -> f64 {
        self.alpha.map_or(1.0, |al| (self.n as f64).powf(-al))
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidInput(format!("n = {} < 2", self.n)));
        }
        if !(self.a >= 0.0) || !self.a.is_finite() {
            return Err(Error::InvalidInput(format!("amplitude a = {} must be >= 0", self.a)));
        }
        if let Some(al) = self.alpha {
            if !(0.0..=0.5).contains(&al) {
                return Err(Error::InvalidInput(format!("alpha = {al} outside [0, 1/2]")));
            }
        }
        if let ErrorLaw::StudentT { df } = self.errors {
            if !(df > 2.0) {
                return Err(Error::InvalidInput(format!("t errors need df > 2, got {df}")));
            }
        }
        Ok(())
    }

    /// `beta0` of the null model (`(1,...,1)/sqrt(p)`, or `e1` for H23).
    pub fn true_beta(&self) -> Result<Vec<f64>> {
        let p = self.dim()?;
        Ok(match self.name {
            ScenarioName::H23 => {
                let mut b = vec![0.0; p];
                b[0] = 1.0;
                b
            }
            _ => vec![1.0 / (p as f64).sqrt(); p],
        })
    }

    pub fn deviation_kind(&self) -> DeviationKind {
        self.deviation.unwrap_or(match self.name {
            ScenarioName::H11 => DeviationKind::Quadratic,
            ScenarioName::H12 => DeviationKind::Cosine,
            ScenarioName::H21 => DeviationKind::Exponential,
            ScenarioName::H22 => DeviationKind::Mixed,
            ScenarioName::H23 => DeviationKind::Additive,
            ScenarioName::Custom => DeviationKind::Zero,
        })
    }

    /// The deviation function `S(X)` (without amplitude or rate).
    pub fn deviation_fn(&self) -> Result<Feature> {
        if let Some(f) = &self.custom_deviation {
            return Ok(f.clone());
        }
        let p = self.dim()?;
        Ok(deviation_feature(self.deviation_kind(), p))
    }

    /// Variance deviation `L(X)`, if any.
    pub fn variance_deviation_fn(&self) -> Option<Feature> {
        if let Some(f) = &self.custom_variance_deviation {
            return Some(f.clone());
        }
        self.variance_deviation.map(|k| -> Feature {
            match k {
                VarianceDeviationKind::StepX1 => Arc::new(|x: &[f64]| if x[0] > 0.0 { 1.0 } else { 0.0 }),
                VarianceDeviationKind::SquareX1 => Arc::new(|x: &[f64]| x[0] * x[0]),
            }
        })
    }

    /// Regression function `E(Y | X = x)` of the design.
    pub fn mean_fn(&self) -> Result<Feature> {
        let beta0 = self.true_beta()?;
        let s = self.deviation_fn()?;
        let amp = self.a * self.rate();
        Ok(Arc::new(move |x: &[f64]| {
            let base = dot(&beta0, x);
            if amp == 0.0 {
                base
            } else {
                base + amp * s(x)
            }
        }))
    }

    /// The directional alternative class `theta' x + theta_{p+1} S(x)`.
    pub fn directional_model(&self) -> Result<LinearPlusTerm> {
        Ok(LinearPlusTerm {
            dim: self.dim()?,
            label: format!("{:?}", self.deviation_kind()).to_lowercase(),
            term: self.deviation_fn()?,
        })
    }

    /// Stable identifier used in reports and seed derivation.
    pub fn id(&self) -> String {
        format!("{}", self.name)
    }
}

/// Index vector `b1 = (0,...,0,1,...,1)/sqrt(p1)` with `p1 = floor(p/2)`
/// trailing ones.
pub fn sparse_direction(p: usize) -> Vec<f64> {
    let p1 = (p / 2).max(1);
    let w = 1.0 / (p1 as f64).sqrt();
    (0..p).map(|j| if j >= p - p1 { w } else { 0.0 }).collect()
}

pub fn deviation_feature(kind: DeviationKind, p: usize) -> Feature {
    let b0 = vec![1.0 / (p as f64).sqrt(); p];
    let b1 = sparse_direction(p);
    match kind {
        DeviationKind::Quadratic => Arc::new(move |x: &[f64]| dot(&b0, x).powi(2)),
        DeviationKind::Cosine => Arc::new(move |x: &[f64]| (0.6 * PI * dot(&b0, x)).cos()),
        DeviationKind::Exponential => Arc::new(move |x: &[f64]| dot(&b1, x).exp()),
        DeviationKind::Mixed => Arc::new(move |x: &[f64]| {
            let u = dot(&b0, x);
            let v = dot(&b1, x);
            v.powi(3) + (0.5 * PI * v).sin() + u * v
        }),
        DeviationKind::Additive => Arc::new(|x: &[f64]| {
            x[1].abs() + x[2].powi(3) - x[3].powi(2) + x[4].powi(3) + x[5] * x[6] + (PI * x[7]).cos()
                + (PI * x[8] * x[9]).sin()
        }),
        DeviationKind::Zero => Arc::new(|_: &[f64]| 0.0),
    }
}

fn draw_error(law: ErrorLaw, rng: &mut ChaCha8Rng) -> f64 {
    match law {
        ErrorLaw::Normal => rng.sample(StandardNormal),
        ErrorLaw::StudentT { df } => {
            let t: f64 = StudentT::new(df).expect("df validated").sample(rng);
            t / (df / (df - 2.0)).sqrt()
        }
    }
}

/// Draw a predictor row from `N(0, Sigma)`.
///
/// `Sigma2` is the stationary AR(1) correlation with coefficient 1/2, so a
/// row is generated by the recursion `x_j = x_{j-1}/2 + sqrt(3/4) z_j`.
pub fn draw_predictors(cov: CovarianceKind, p: usize, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
    let mut prev = 0.0;
    for j in 0..p {
        let z: f64 = rng.sample(StandardNormal);
        let v = match cov {
            CovarianceKind::Sigma1 => z,
            CovarianceKind::Sigma2 if j == 0 => z,
            CovarianceKind::Sigma2 => 0.5 * prev + 0.75f64.sqrt() * z,
        };
        out.push(v);
        prev = v;
    }
}

/// Generate a sample from `scenario`, reproducible given `seed`.
pub fn make_dgp(scenario: &Scenario, seed: u64) -> Result<Dataset> {
    scenario.validate()?;
    let p = scenario.dim()?;
    let n = scenario.n;
    let mean = scenario.mean_fn()?;
    let var_dev = scenario.variance_deviation_fn();
    let var_amp = scenario.b * scenario.rate();
    let mut rng = rng::stream(seed, &[]);
    let mut x = Vec::with_capacity(n * p);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        draw_predictors(scenario.covariance, p, &mut rng, &mut x);
        let eps = draw_error(scenario.errors, &mut rng);
        let row = &x[i * p..(i + 1) * p];
        let sigma = match &var_dev {
            Some(l) => {
                let s2 = 1.0 + var_amp * l(row);
                if !(s2 > 0.0) {
                    return Err(Error::NonPositiveVariance { index: i, value: s2 });
                }
                s2.sqrt()
            }
            None => 1.0,
        };
        y.push(mean(row) + sigma * eps);
    }
    Dataset::new(x, y, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn linear_eval_is_dot_product() {
        let m = Linear { dim: 2 };
        assert_eq!(eval_mean(&m, &[1.0, 2.0], &[3.0, -1.0]).unwrap(), 1.0);
        assert_eq!(eval_mean(&m, &[1.0, 2.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(eval_mean(&m, &[1.0], &[3.0, -1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn h11_mean_at_unit_index() {
        let p = 4;
        let sc = Scenario::new(ScenarioName::H11, 100).with_p(p).with_a(0.2);
        let mean = sc.mean_fn().unwrap();
        // b0' x = 1 with b0 = 1/2 * ones
        let x = vec![0.5; p];
        assert!((mean(&x) - 1.2).abs() < 1e-14);
        let alt = sc.directional_model().unwrap();
        let mut theta = sc.true_beta().unwrap();
        theta.push(0.2);
        assert!((eval_mean(&alt, &x, &theta).unwrap() - 1.2).abs() < 1e-14);
    }

    #[test]
    fn non_finite_output_rejected() {
        let m = ClosureMean { label: "bad".into(), dim_param: 1, f: Arc::new(|_, b| 1.0 / b[0]), grad: None };
        assert!(matches!(eval_mean(&m, &[1.0], &[0.0]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn numeric_gradient_of_linear_is_x() {
        let m = Linear { dim: 3 };
        let x = [0.3, -1.2, 2.5];
        let g = numeric_grad_mean(&m, &x, &[0.7, 2.0, -3.0], GRAD_STEP).unwrap();
        for (a, b) in g.iter().zip(&x) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert!(numeric_grad_mean(&m, &x, &[0.0; 3], 0.0).is_err());
    }

    #[test]
    fn numeric_gradient_of_quadratic_index() {
        let m = SingleIndexQuadratic { dim: 2 };
        let x = [2.0, 3.0];
        let beta = [0.5, 0.0]; // b'x = 1
        let g = numeric_grad_mean(&m, &x, &beta, GRAD_STEP).unwrap();
        assert!((g[0] - 4.0).abs() < 1e-6 && (g[1] - 6.0).abs() < 1e-6);
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn builtin_gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = 3;
        let models: Vec<Box<dyn MeanModel>> = vec![
            Box::new(Linear { dim: d }),
            Box::new(SingleIndexQuadratic { dim: d }),
            Box::new(LinearExpIndex { dim: d }),
            Box::new(Scenario::new(ScenarioName::H22, 100).with_p(d).directional_model().unwrap()),
        ];
        for m in &models {
            for _ in 0..100 {
                let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect();
                let b: Vec<f64> = (0..m.dim_param()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let an = m.grad(&x, &b).unwrap();
                let nu = numeric_grad_mean(m.as_ref(), &x, &b, GRAD_STEP).unwrap();
                for (u, v) in an.iter().zip(&nu) {
                    assert!(rel_close(*u, *v, 1e-5), "{}: {u} vs {v}", m.name());
                }
            }
        }
        let vmodels: Vec<Box<dyn VarianceModel>> = vec![
            Box::new(ConstantVariance),
            Box::new(ExpConstantVariance),
            Box::new(LogLinearVariance { dim: d, intercept: true }),
        ];
        for m in &vmodels {
            for _ in 0..100 {
                let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect();
                let t: Vec<f64> = (0..m.dim_param()).map(|_| rng.gen_range(0.1..1.0)).collect();
                let an = m.grad_sq(&x, &t).unwrap();
                let mut probe = t.clone();
                for j in 0..t.len() {
                    let h = 1e-6;
                    probe[j] = t[j] + h;
                    let up = m.eval_sq(&x, &probe);
                    probe[j] = t[j] - h;
                    let dn = m.eval_sq(&x, &probe);
                    probe[j] = t[j];
                    assert!(rel_close(an[j], (up - dn) / (2.0 * h), 1e-5), "{}", m.name());
                }
            }
        }
    }

    #[test]
    fn exp_index_gradient_against_hand_derivative() {
        // m = b'x + a exp(g'x); dm/da = exp(g'x), dm/dg = a exp(g'x) x
        let m = LinearExpIndex { dim: 2 };
        let x = [0.4, -0.3];
        let beta = [1.0, 2.0, 0.5, 0.2, -0.7];
        let e = (0.2 * 0.4 + 0.7 * 0.3f64).exp();
        let expected = [0.4, -0.3, e, 0.5 * e * 0.4, -0.5 * e * 0.3];
        let nu = numeric_grad_mean(&m, &x, &beta, GRAD_STEP).unwrap();
        for (u, v) in nu.iter().zip(&expected) {
            assert!(rel_close(*u, *v, 1e-5));
        }
    }

    #[test]
    fn dimension_rule_matches_table_header() {
        assert_eq!(dimension_rule(100).unwrap(), 10);
        assert_eq!(dimension_rule(200).unwrap(), 14);
        assert_eq!(dimension_rule(400).unwrap(), 19);
        assert_eq!(dimension_rule(600).unwrap(), 22);
        assert_eq!(dimension_rule(1000).unwrap(), 27);
        assert!(dimension_rule(3).is_err());
        let sc = Scenario::new(ScenarioName::H11, 100);
        let d = make_dgp(&sc, 1).unwrap();
        assert_eq!(d.d(), 10);
        assert_eq!(d.n(), 100);
    }

    #[test]
    fn null_residuals_are_centered() {
        let sc = Scenario::new(ScenarioName::H11, 400);
        let beta0 = sc.true_beta().unwrap();
        for seed in 0..5 {
            let d = make_dgp(&sc, seed).unwrap();
            let m: f64 = d.rows().zip(d.y()).map(|(x, y)| y - dot(&beta0, x)).sum::<f64>() / d.n() as f64;
            assert!(m.abs() < 4.0 / (d.n() as f64).sqrt());
        }
    }

    #[test]
    fn sigma2_correlation() {
        let sc = Scenario::new(ScenarioName::Custom, 2000).with_p(3).with_covariance(CovarianceKind::Sigma2);
        let d = make_dgp(&sc, 3).unwrap();
        let n = d.n() as f64;
        let col = |j: usize| d.rows().map(|r| r[j]).collect::<Vec<_>>();
        let (a, b) = (col(0), col(2));
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov = a.iter().zip(&b).map(|(u, v)| (u - ma) * (v - mb)).sum::<f64>() / n;
        let va = a.iter().map(|u| (u - ma).powi(2)).sum::<f64>() / n;
        let vb = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n;
        let r = cov / (va * vb).sqrt();
        assert!((r - 0.25).abs() < 0.1, "corr = {r}");
    }

    #[test]
    fn dgp_is_deterministic_and_null_embeds() {
        let sc = Scenario::new(ScenarioName::H12, 150).with_covariance(CovarianceKind::Sigma2);
        assert_eq!(make_dgp(&sc, 9).unwrap(), make_dgp(&sc, 9).unwrap());
        assert_ne!(make_dgp(&sc, 9).unwrap(), make_dgp(&sc, 10).unwrap());
        let null = make_dgp(&sc.clone().with_a(0.0), 4).unwrap();
        let local_zero = make_dgp(&sc.clone().with_a(1.0).with_alpha(0.5).with_deviation(DeviationKind::Zero), 4).unwrap();
        assert_eq!(null, local_zero);
    }

    #[test]
    fn local_rate_scales_deviation() {
        let base = Scenario::new(ScenarioName::H11, 100).with_a(1.0);
        let local = base.clone().with_alpha(0.5);
        let d0 = make_dgp(&Scenario { a: 0.0, ..base.clone() }, 5).unwrap();
        let d1 = make_dgp(&base, 5).unwrap();
        let d2 = make_dgp(&local, 5).unwrap();
        for i in 0..d0.n() {
            let full = d1.y()[i] - d0.y()[i];
            let scaled = d2.y()[i] - d0.y()[i];
            assert!((scaled - full / 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scenario_json_round_trip() {
        let sc = Scenario::new(ScenarioName::H21, 200)
            .with_covariance(CovarianceKind::Sigma2)
            .with_a(0.1)
            .with_alpha(0.25)
            .with_errors(ErrorLaw::StudentT { df: 8.0 });
        let js = serde_json::to_string(&sc).unwrap();
        let back: Scenario = serde_json::from_str(&js).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), js);
        let parsed: Scenario = serde_json::from_str(r#"{"name":"H11","n":100,"p":"auto","covariance":"sigma2","a":0.15}"#).unwrap();
        assert_eq!(parsed.dim().unwrap(), 10);
        assert_eq!(parsed.covariance, CovarianceKind::Sigma2);
        let fixed: Scenario = serde_json::from_str(r#"{"name":"custom","n":50,"p":3}"#).unwrap();
        assert_eq!(fixed.p, PRule::Fixed(3));
        assert!(serde_json::from_str::<Scenario>(r#"{"name":"H11","n":50,"p":"many"}"#).is_err());
    }

    #[test]
    fn sparse_direction_pattern() {
        let b = sparse_direction(5);
        let w = 1.0 / 2f64.sqrt();
        assert_eq!(b, vec![0.0, 0.0, 0.0, w, w]);
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(vec![1.0], vec![1.0], 1).is_err());
        assert!(Dataset::new(vec![1.0, f64::NAN], vec![1.0, 2.0], 1).is_err());
        assert!(Dataset::new(vec![1.0, 2.0, 3.0], vec![1.0, 2.0], 1).is_err());
        let d = Dataset::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]], vec![0.0, 1.0]).unwrap();
        assert_eq!(d.row(1), &[3.0, 4.0]);
        assert_eq!(d.permuted(&[1, 0]).row(0), &[3.0, 4.0]);
    }
}

//! End-to-end mean and variance tests.
//!
//! fit -> residuals -> weight -> process -> [transform] -> statistic ->
//! critical value and p-value. Everything random is driven by `cfg.seed`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bootstrap::{
    bootstrap_critical_value, bootstrap_distribution, bootstrap_p_value, bootstrap_refit_distribution,
    bootstrap_variance_distribution, BootstrapConfig,
};
use crate::error::{Error, Result};
use crate::estimation::{default_init, fit_mean_ls_with, fit_variance_ls_with, FitOptions, MeanFit, VarianceFit};
use crate::models::{Dataset, MeanModel, VarianceModel};
use crate::process::{build_process, StepProcess};
use crate::smoothing::{score_table, KernelConfig, ScoreKind};
use crate::stats::{cvm_statistic, tcvm_statistic_with, BrownianCvmTable, DEFAULT_TRIM, MIN_TRIM_POINTS};
use crate::transform::{build_machinery_with, transform_process, DEFAULT_REL_TOL};
use crate::weights::{
    directional_variance_weight, directional_weight, estimate_central_subspace_with, omnibus_variance_weight,
    omnibus_weight_with, OmnibusConfig, SdrConfig, WeightVector,
};

/// Raw (`Cvm`) or martingale-transformed and trimmed (`Tcvm`) statistic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatisticKind {
    Cvm,
    Tcvm,
}

impl std::fmt::Display for StatisticKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StatisticKind::Cvm => "CvM",
            StatisticKind::Tcvm => "TCvM",
        })
    }
}

/// How the critical value is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "method")]
pub enum Method {
    Bootstrap {
        #[serde(rename = "B")]
        b: usize,
    },
    /// Quantiles of `int_0^1 B(t)^2 dt`; transformed statistic only.
    Asymptotic,
}

/// Which weight function drives the process.
#[derive(Clone, Debug)]
pub enum WeightSpec {
    /// Cumulative slicing plus a Fourier-type expansion of the regression
    /// (or variance) function around the null fit.
    Omnibus,
    /// Fitted alternative mean class.
    Directional(Arc<dyn MeanModel>),
    /// Fitted alternative variance class.
    DirectionalVariance(Arc<dyn VarianceModel>),
    /// User-supplied `g(X_i)`.
    Fixed(Vec<f64>),
}

impl WeightSpec {
    pub fn label(&self) -> String {
        match self {
            WeightSpec::Omnibus => "omnibus".into(),
            WeightSpec::Directional(m) => format!("directional:{}", m.name()),
            WeightSpec::DirectionalVariance(m) => format!("directional:{}", m.name()),
            WeightSpec::Fixed(_) => "fixed".into(),
        }
    }
}

/// What the bootstrap does with a weight that was estimated from the data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BootstrapWeight {
    /// Rebuild the weight from every bootstrap sample, as it was built from
    /// the original one. User-supplied weights are never rebuilt.
    #[default]
    Reestimated,
    /// Keep the weight of the original sample.
    Original,
}

/// Settings shared by both pipelines.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TestConfig {
    pub statistic: StatisticKind,
    /// Significance level `tau`.
    pub level: f64,
    pub kernel: KernelConfig,
    pub trim: f64,
    pub min_trim_points: usize,
    /// Relative eigenvalue cutoff for the generalized inverse of Gamma.
    pub rel_tol: f64,
    pub v_n: f64,
    pub unsmoothed_bootstrap: bool,
    pub bootstrap_weight: BootstrapWeight,
    pub seed: u64,
    pub sdr: SdrConfig,
    pub omnibus: OmnibusConfig,
    /// Starting value for the mean fit; OLS / zeros when absent.
    pub init: Option<Vec<f64>>,
    pub variance_init: Option<Vec<f64>>,
    #[serde(skip)]
    pub fit: FitOptions,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig {
            statistic: StatisticKind::Cvm,
            level: 0.05,
            kernel: KernelConfig::default(),
            trim: DEFAULT_TRIM,
            min_trim_points: MIN_TRIM_POINTS,
            rel_tol: DEFAULT_REL_TOL,
            v_n: 0.2,
            unsmoothed_bootstrap: false,
            bootstrap_weight: BootstrapWeight::default(),
            seed: 0,
            sdr: SdrConfig::default(),
            omnibus: OmnibusConfig::default(),
            init: None,
            variance_init: None,
            fit: FitOptions::default(),
        }
    }
}

impl TestConfig {
    pub fn with_statistic(mut self, s: StatisticKind) -> Self {
        self.statistic = s;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidInput(format!("level {} outside (0, 1)", self.level)));
        }
        if !(self.trim > 0.0 && self.trim <= 1.0) {
            return Err(Error::InvalidInput(format!("trim {} outside (0, 1]", self.trim)));
        }
        if !(self.kernel.c > 0.0) {
            return Err(Error::InvalidInput(format!("bandwidth constant {} must be positive", self.kernel.c)));
        }
        Ok(())
    }

    pub fn bootstrap(&self, b: usize) -> BootstrapConfig {
        BootstrapConfig { b, v_n: self.v_n, seed: self.seed, unsmoothed: self.unsmoothed_bootstrap }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestTarget {
    Mean,
    Variance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    #[serde(rename = "M")]
    pub paths: usize,
    #[serde(rename = "K")]
    pub grid: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestMeta {
    pub seed: u64,
    pub method: String,
    #[serde(rename = "B")]
    pub bootstrap_size: Option<usize>,
    pub v_n: Option<f64>,
    pub bootstrap_weight: Option<BootstrapWeight>,
    /// Kernel bandwidth of the transform.
    pub bandwidth: Option<f64>,
    pub trim: Option<f64>,
    pub weight: String,
    pub model: String,
    pub variance_model: Option<String>,
    pub n: usize,
    pub d: usize,
    pub rho_hat: f64,
    /// Structural dimension picked for the omnibus weight.
    pub s_hat: Option<usize>,
    /// Sample points whose density estimate hit the floor.
    pub floored_points: Option<usize>,
    pub estimate: Vec<f64>,
    pub variance_estimate: Option<Vec<f64>>,
    pub table: Option<TableMeta>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: TestTarget,
    pub kind: StatisticKind,
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    pub level: f64,
    pub meta: TestMeta,
}

/// A statistic value with the smoothing details that produced it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluated {
    pub value: f64,
    pub bandwidth: Option<f64>,
    pub floored: Option<usize>,
}

/// Statistic of `kind` from residuals and a fixed weight.
pub fn evaluate_statistic(
    residuals: &[f64],
    w: &WeightVector,
    kind: StatisticKind,
    score: ScoreKind,
    cfg: &TestConfig,
) -> Result<Evaluated> {
    let proc = build_process(residuals, w)?;
    match kind {
        StatisticKind::Cvm => Ok(Evaluated { value: cvm_statistic(&proc, w)?, bandwidth: None, floored: None }),
        StatisticKind::Tcvm => {
            let table = score_table(&proc.jump_points, &cfg.kernel, score);
            let mach = build_machinery_with(&proc, &table, cfg.rel_tol)?;
            let tproc = transform_process(&proc, &mach)?;
            let value = tcvm_statistic_with(&tproc, w, cfg.trim, cfg.min_trim_points)?;
            Ok(Evaluated { value, bandwidth: Some(table.bandwidth), floored: Some(table.floored) })
        }
    }
}

/// The process behind a statistic of `kind`, divided by `rho_hat`: the raw
/// process for `Cvm`, the transformed one for `Tcvm`.
pub fn process_path(
    residuals: &[f64],
    w: &WeightVector,
    kind: StatisticKind,
    score: ScoreKind,
    cfg: &TestConfig,
) -> Result<StepProcess> {
    if w.is_degenerate() {
        return Err(Error::DegenerateWeight(w.rho_hat));
    }
    let proc = build_process(residuals, w)?;
    let path = match kind {
        StatisticKind::Cvm => proc,
        StatisticKind::Tcvm => {
            let table = score_table(&proc.jump_points, &cfg.kernel, score);
            let mach = build_machinery_with(&proc, &table, cfg.rel_tol)?;
            transform_process(&proc, &mach)?
        }
    };
    Ok(path.scaled(1.0 / w.rho_hat))
}

/// The weight together with what is worth reporting about it.
#[derive(Clone, Debug)]
pub struct BuiltWeight {
    pub weight: WeightVector,
    pub label: String,
    pub s_hat: Option<usize>,
}

fn checked(w: WeightVector, label: String, s_hat: Option<usize>) -> Result<BuiltWeight> {
    if w.is_degenerate() {
        return Err(Error::DegenerateWeight(w.rho_hat));
    }
    Ok(BuiltWeight { weight: w, label, s_hat })
}

/// Map the null estimate into a parameter space of length `q`: pad with
/// zeros or truncate.
pub fn mapped_init(null_estimate: &[f64], q: usize) -> Vec<f64> {
    let mut v: Vec<f64> = null_estimate.iter().take(q).cloned().collect();
    v.resize(q, 0.0);
    v
}

/// Fit the mean model, failing on non-convergence.
pub fn fit_null_mean(data: &Dataset, model: &dyn MeanModel, cfg: &TestConfig) -> Result<MeanFit> {
    let init = match &cfg.init {
        Some(b) => b.clone(),
        None => default_init(data, model)?,
    };
    let fit = fit_mean_ls_with(data, model, &init, &cfg.fit)?;
    if !fit.converged {
        return Err(Error::NoConvergence { iterations: fit.iterations, sse: fit.sse });
    }
    Ok(fit)
}

/// Weight for the mean test.
pub fn mean_weight(
    data: &Dataset,
    model: &dyn MeanModel,
    fit: &MeanFit,
    spec: &WeightSpec,
    cfg: &TestConfig,
) -> Result<BuiltWeight> {
    match spec {
        WeightSpec::Omnibus => {
            let sdr = estimate_central_subspace_with(data, &cfg.sdr)?;
            let om = omnibus_weight_with(data, model, fit, &sdr, &cfg.omnibus)?;
            checked(om.weight, spec.label(), Some(sdr.s_hat))
        }
        WeightSpec::Directional(alt) => {
            let init = if alt.is_linear() {
                default_init(data, alt.as_ref())?
            } else {
                mapped_init(&fit.beta_hat, alt.dim_param())
            };
            let alt_fit = fit_mean_ls_with(data, alt.as_ref(), &init, &cfg.fit)?;
            if !alt_fit.converged {
                return Err(Error::NoConvergence { iterations: alt_fit.iterations, sse: alt_fit.sse });
            }
            checked(directional_weight(data, model, fit, alt.as_ref(), &alt_fit)?, spec.label(), None)
        }
        WeightSpec::Fixed(g) => fixed_weight(g, data.n()),
        WeightSpec::DirectionalVariance(_) => {
            Err(Error::InvalidInput("a variance-class weight cannot drive the mean test".into()))
        }
    }
}

fn fixed_weight(g: &[f64], n: usize) -> Result<BuiltWeight> {
    if g.len() != n {
        return Err(Error::Dimension(format!("fixed weight has {} entries for {n} observations", g.len())));
    }
    checked(WeightVector::from_values(g.to_vec())?, "fixed".into(), None)
}

/// Fit the variance model to the squared residuals of `fit`.
pub fn fit_null_variance(
    data: &Dataset,
    fit: &MeanFit,
    vmodel: &dyn VarianceModel,
    cfg: &TestConfig,
) -> Result<VarianceFit> {
    let init = match &cfg.variance_init {
        Some(t) => t.clone(),
        None => {
            let ms = fit.residuals.iter().map(|e| e * e).sum::<f64>() / fit.residuals.len() as f64;
            vmodel.initial_guess(ms)
        }
    };
    let vfit = fit_variance_ls_with(data, fit, vmodel, &init, &cfg.fit)?;
    if !vfit.converged {
        return Err(Error::NoConvergence { iterations: vfit.iterations, sse: vfit.sse });
    }
    Ok(vfit)
}

/// Weight for the variance test.
pub fn variance_weight(
    data: &Dataset,
    fit: &MeanFit,
    vmodel: &dyn VarianceModel,
    vfit: &VarianceFit,
    spec: &WeightSpec,
    cfg: &TestConfig,
) -> Result<BuiltWeight> {
    match spec {
        WeightSpec::Omnibus => {
            let (om, sdr) = omnibus_variance_weight(data, fit, vmodel, vfit, &cfg.sdr, &cfg.omnibus)?;
            checked(om.weight, spec.label(), Some(sdr.s_hat))
        }
        WeightSpec::DirectionalVariance(alt) => {
            let init = mapped_init(&vfit.theta_hat, alt.dim_param());
            let alt_fit = fit_variance_ls_with(data, fit, alt.as_ref(), &init, &cfg.fit)?;
            if !alt_fit.converged {
                return Err(Error::NoConvergence { iterations: alt_fit.iterations, sse: alt_fit.sse });
            }
            checked(directional_variance_weight(data, vmodel, vfit, alt.as_ref(), &alt_fit)?, spec.label(), None)
        }
        WeightSpec::Fixed(g) => fixed_weight(g, data.n()),
        WeightSpec::Directional(_) => {
            Err(Error::InvalidInput("a mean-class weight cannot drive the variance test".into()))
        }
    }
}

fn rebuilds(spec: &WeightSpec, cfg: &TestConfig) -> bool {
    cfg.bootstrap_weight == BootstrapWeight::Reestimated && !matches!(spec, WeightSpec::Fixed(_))
}

/// Bootstrap replicates of the mean-test statistic.
#[allow(clippy::too_many_arguments)]
pub fn mean_bootstrap_replicates(
    data: &Dataset,
    model: &dyn MeanModel,
    fit: &MeanFit,
    weight: &WeightVector,
    spec: &WeightSpec,
    kind: StatisticKind,
    bc: &BootstrapConfig,
    cfg: &TestConfig,
) -> Result<Vec<f64>> {
    if rebuilds(spec, cfg) {
        bootstrap_refit_distribution(data, model, fit, bc, &cfg.fit, |y, f| {
            let d = data.with_response(y.to_vec())?;
            let w = mean_weight(&d, model, f, spec, cfg)?;
            evaluate_statistic(&f.residuals, &w.weight, kind, ScoreKind::Mean, cfg).map(|e| e.value)
        })
    } else {
        bootstrap_distribution(data, model, fit, bc, &cfg.fit, |res| {
            evaluate_statistic(res, weight, kind, ScoreKind::Mean, cfg).map(|e| e.value)
        })
    }
}

fn check_method(method: Method, cfg: &TestConfig) -> Result<()> {
    cfg.validate()?;
    if method == Method::Asymptotic && cfg.statistic == StatisticKind::Cvm {
        return Err(Error::Unsupported(
            "the untransformed CvM statistic has a limit that depends on the error law and the design; \
             use the smooth residual bootstrap or the transformed statistic"
                .into(),
        ));
    }
    if let Method::Bootstrap { b } = method {
        if b == 0 {
            return Err(Error::InvalidInput("bootstrap size B must be at least 1".into()));
        }
    }
    Ok(())
}

/// Critical value, p-value and meta for a computed statistic.
fn calibrate<F>(stat: f64, method: Method, cfg: &TestConfig, boot: F) -> Result<(f64, f64, Option<TableMeta>)>
where
    F: FnOnce(&BootstrapConfig) -> Result<Vec<f64>>,
{
    match method {
        Method::Asymptotic => {
            let t = BrownianCvmTable::standard();
            let meta = TableMeta { paths: t.paths, grid: t.grid, seed: t.seed };
            Ok((t.quantile(1.0 - cfg.level), t.p_value(stat), Some(meta)))
        }
        Method::Bootstrap { b } => {
            let reps = boot(&cfg.bootstrap(b))?;
            Ok((bootstrap_critical_value(&reps, cfg.level)?, bootstrap_p_value(&reps, stat), None))
        }
    }
}

struct MethodMeta {
    name: String,
    b: Option<usize>,
    v_n: Option<f64>,
    weight: Option<BootstrapWeight>,
}

fn method_meta(method: Method, spec: &WeightSpec, cfg: &TestConfig) -> MethodMeta {
    match method {
        Method::Asymptotic => MethodMeta { name: "asymptotic".into(), b: None, v_n: None, weight: None },
        Method::Bootstrap { b } => MethodMeta {
            name: "bootstrap".into(),
            b: Some(b),
            v_n: Some(if cfg.unsmoothed_bootstrap { 0.0 } else { cfg.v_n }),
            weight: Some(if rebuilds(spec, cfg) { BootstrapWeight::Reestimated } else { BootstrapWeight::Original }),
        },
    }
}

/// Goodness-of-fit test of the regression function.
pub fn run_mean_test(
    data: &Dataset,
    model: &dyn MeanModel,
    spec: &WeightSpec,
    method: Method,
    cfg: &TestConfig,
) -> Result<TestResult> {
    check_method(method, cfg)?;
    let fit = fit_null_mean(data, model, cfg)?;
    let w = mean_weight(data, model, &fit, spec, cfg)?;
    let kind = cfg.statistic;
    let ev = evaluate_statistic(&fit.residuals, &w.weight, kind, ScoreKind::Mean, cfg)?;
    let (critical_value, p_value, table) = calibrate(ev.value, method, cfg, |bc| {
        mean_bootstrap_replicates(data, model, &fit, &w.weight, spec, kind, bc, cfg)
    })?;
    let mm = method_meta(method, spec, cfg);
    Ok(TestResult {
        test: TestTarget::Mean,
        kind,
        statistic: ev.value,
        critical_value,
        p_value,
        reject: ev.value > critical_value,
        level: cfg.level,
        meta: TestMeta {
            seed: cfg.seed,
            method: mm.name,
            bootstrap_size: mm.b,
            v_n: mm.v_n,
            bootstrap_weight: mm.weight,
            bandwidth: ev.bandwidth,
            trim: (kind == StatisticKind::Tcvm).then_some(cfg.trim),
            weight: w.label,
            model: model.name(),
            variance_model: None,
            n: data.n(),
            d: data.d(),
            rho_hat: w.weight.rho_hat,
            s_hat: w.s_hat,
            floored_points: ev.floored,
            estimate: fit.beta_hat,
            variance_estimate: None,
            table,
        },
    })
}

/// Goodness-of-fit test of the variance function on standardized residuals.
pub fn run_variance_test(
    data: &Dataset,
    model: &dyn MeanModel,
    vmodel: &dyn VarianceModel,
    spec: &WeightSpec,
    method: Method,
    cfg: &TestConfig,
) -> Result<TestResult> {
    check_method(method, cfg)?;
    let fit = fit_null_mean(data, model, cfg)?;
    let vfit = fit_null_variance(data, &fit, vmodel, cfg)?;
    let w = variance_weight(data, &fit, vmodel, &vfit, spec, cfg)?;
    let kind = cfg.statistic;
    let ev = evaluate_statistic(&vfit.standardized, &w.weight, kind, ScoreKind::Variance, cfg)?;
    let (critical_value, p_value, table) = calibrate(ev.value, method, cfg, |bc| {
        let rebuild = rebuilds(spec, cfg);
        bootstrap_variance_distribution(data, model, &fit, vmodel, &vfit, bc, &cfg.fit, |d, mf, vf| {
            let rebuilt;
            let weight = if rebuild {
                rebuilt = variance_weight(d, mf, vmodel, vf, spec, cfg)?;
                &rebuilt.weight
            } else {
                &w.weight
            };
            evaluate_statistic(&vf.standardized, weight, kind, ScoreKind::Variance, cfg).map(|e| e.value)
        })
    })?;
    let mm = method_meta(method, spec, cfg);
    Ok(TestResult {
        test: TestTarget::Variance,
        kind,
        statistic: ev.value,
        critical_value,
        p_value,
        reject: ev.value > critical_value,
        level: cfg.level,
        meta: TestMeta {
            seed: cfg.seed,
            method: mm.name,
            bootstrap_size: mm.b,
            v_n: mm.v_n,
            bootstrap_weight: mm.weight,
            bandwidth: ev.bandwidth,
            trim: (kind == StatisticKind::Tcvm).then_some(cfg.trim),
            weight: w.label,
            model: model.name(),
            variance_model: Some(vmodel.name()),
            n: data.n(),
            d: data.d(),
            rho_hat: w.weight.rho_hat,
            s_hat: w.s_hat,
            floored_points: ev.floored,
            estimate: fit.beta_hat,
            variance_estimate: Some(vfit.theta_hat),
            table,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_dgp, ConstantVariance, Linear, Scenario, ScenarioName};

    fn h11(n: usize, a: f64, seed: u64) -> Dataset {
        make_dgp(&Scenario::new(ScenarioName::H11, n).with_p(4).with_a(a), seed).unwrap()
    }

    #[test]
    fn asymptotic_cvm_is_refused() {
        let data = h11(50, 0.0, 1);
        let err = run_mean_test(&data, &Linear { dim: 4 }, &WeightSpec::Omnibus, Method::Asymptotic, &TestConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::Unsupported(ref m) if m.contains("bootstrap")), "{err}");
    }

    #[test]
    fn affine_weight_invariance() {
        let data = h11(80, 0.3, 2);
        let model = Linear { dim: 4 };
        let cfg = TestConfig::default();
        let fit = fit_null_mean(&data, &model, &cfg).unwrap();
        let g: Vec<f64> = data.rows().map(|x| x[0] * x[1] + x[2].powi(2)).collect();
        let w1 = WeightVector::from_values(g.clone()).unwrap();
        let w2 = WeightVector::from_values(g.iter().map(|v| -3.5 * v + 11.0).collect()).unwrap();
        for kind in [StatisticKind::Cvm, StatisticKind::Tcvm] {
            let a = evaluate_statistic(&fit.residuals, &w1, kind, ScoreKind::Mean, &cfg).unwrap().value;
            let b = evaluate_statistic(&fit.residuals, &w2, kind, ScoreKind::Mean, &cfg).unwrap().value;
            assert!((a - b).abs() <= 1e-10 * a.max(1.0), "{kind}: {a} vs {b}");
        }
    }

    #[test]
    fn result_invariants_and_determinism() {
        let data = h11(60, 0.5, 3);
        let model = Linear { dim: 4 };
        let cfg = TestConfig { seed: 9, ..Default::default() };
        let r = run_mean_test(&data, &model, &WeightSpec::Omnibus, Method::Bootstrap { b: 59 }, &cfg).unwrap();
        assert_eq!(r.reject, r.statistic > r.critical_value);
        assert!(r.p_value > 0.0 && r.p_value <= 1.0);
        assert!(r.statistic >= 0.0);
        assert_eq!(r.meta.bootstrap_size, Some(59));
        let again = run_mean_test(&data, &model, &WeightSpec::Omnibus, Method::Bootstrap { b: 59 }, &cfg).unwrap();
        assert_eq!(r, again);
        let json = serde_json::to_string(&r).unwrap();
        let back: TestResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn tcvm_asymptotic_reports_table_and_bandwidth() {
        let data = h11(120, 0.0, 4);
        let cfg = TestConfig::default().with_statistic(StatisticKind::Tcvm);
        let r = run_mean_test(&data, &Linear { dim: 4 }, &WeightSpec::Omnibus, Method::Asymptotic, &cfg).unwrap();
        assert_eq!(r.meta.bandwidth, Some(120f64.powf(-0.1)));
        assert_eq!(r.meta.trim, Some(DEFAULT_TRIM));
        assert!(r.meta.table.is_some());
        let t = BrownianCvmTable::standard();
        assert_eq!(r.critical_value, t.quantile(0.95));
    }

    #[test]
    fn zero_deviation_matches_null() {
        use crate::models::DeviationKind;
        let base = Scenario::new(ScenarioName::H11, 70).with_p(4);
        let a = make_dgp(&base, 5).unwrap();
        let b = make_dgp(&base.clone().with_a(0.8).with_deviation(DeviationKind::Zero), 5).unwrap();
        let cfg = TestConfig { seed: 1, ..Default::default() };
        let m = Linear { dim: 4 };
        let ra = run_mean_test(&a, &m, &WeightSpec::Omnibus, Method::Bootstrap { b: 39 }, &cfg).unwrap();
        let rb = run_mean_test(&b, &m, &WeightSpec::Omnibus, Method::Bootstrap { b: 39 }, &cfg).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn variance_pipeline_runs() {
        let data = h11(100, 0.0, 6);
        let cfg = TestConfig { seed: 2, ..Default::default() };
        let r = run_variance_test(
            &data,
            &Linear { dim: 4 },
            &ConstantVariance,
            &WeightSpec::Omnibus,
            Method::Bootstrap { b: 29 },
            &cfg,
        )
        .unwrap();
        assert_eq!(r.test, TestTarget::Variance);
        assert!((r.meta.variance_estimate.as_ref().unwrap()[0] - 1.0).abs() < 0.5);
        let t = run_variance_test(
            &data,
            &Linear { dim: 4 },
            &ConstantVariance,
            &WeightSpec::Omnibus,
            Method::Asymptotic,
            &cfg.clone().with_statistic(StatisticKind::Tcvm),
        )
        .unwrap();
        assert!(t.statistic.is_finite());
    }

    #[test]
    fn wrong_weight_family_is_rejected() {
        let data = h11(40, 0.0, 7);
        let m = Linear { dim: 4 };
        let spec = WeightSpec::DirectionalVariance(Arc::new(ConstantVariance));
        assert!(run_mean_test(&data, &m, &spec, Method::Bootstrap { b: 9 }, &TestConfig::default()).is_err());
        let fixed = WeightSpec::Fixed(vec![1.0; 40]);
        assert!(matches!(
            run_mean_test(&data, &m, &fixed, Method::Bootstrap { b: 9 }, &TestConfig::default()),
            Err(Error::DegenerateWeight(_))
        ));
    }
}

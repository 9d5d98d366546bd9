//! Monte Carlo size and power studies.
//!
//! A study crosses scenarios, amplitudes, statistics and bandwidth
//! constants. Each replication draws one dataset from
//! `derive_seed(master, [hash(scenario), rep])` and evaluates every
//! statistic on it, so cells that differ only in statistic, amplitude or
//! bandwidth share their predictors and errors. Untransformed statistics
//! are calibrated by the smooth residual bootstrap, transformed ones by the
//! Brownian table.

use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_critical_value, BootstrapConfig};
use crate::error::{Error, Result};
use crate::models::{make_dgp, Dataset, Linear, MeanModel, Scenario};
use crate::pipeline::{
    evaluate_statistic, fit_null_mean, mean_bootstrap_replicates, mean_weight, BootstrapWeight, BuiltWeight,
    StatisticKind, TestConfig, WeightSpec,
};
use crate::rng::{derive_seed, label_hash};
use crate::smoothing::{KernelConfig, ScoreKind};
use crate::stats::{BrownianCvmTable, DEFAULT_TRIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyStatistic {
    Cvm,
    Tcvm,
    CvmD,
    TcvmD,
}

impl StudyStatistic {
    pub fn kind(self) -> StatisticKind {
        match self {
            StudyStatistic::Cvm | StudyStatistic::CvmD => StatisticKind::Cvm,
            StudyStatistic::Tcvm | StudyStatistic::TcvmD => StatisticKind::Tcvm,
        }
    }

    pub fn directional(self) -> bool {
        matches!(self, StudyStatistic::CvmD | StudyStatistic::TcvmD)
    }

    pub fn label(self) -> &'static str {
        match self {
            StudyStatistic::Cvm => "CvM",
            StudyStatistic::Tcvm => "TCvM",
            StudyStatistic::CvmD => "CvM_d",
            StudyStatistic::TcvmD => "TCvM_d",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub scenarios: Vec<Scenario>,
    pub statistics: Vec<StudyStatistic>,
    /// Overrides each scenario's own `a` when non-empty.
    pub amplitudes: Vec<f64>,
    /// Bandwidth constants `c` in `h = c n^{-1/10}`; used by transformed
    /// statistics only.
    pub bandwidths: Vec<f64>,
    #[serde(rename = "R")]
    pub reps: usize,
    #[serde(rename = "B")]
    pub bootstrap: usize,
    pub level: f64,
    pub seed: u64,
    pub trim: f64,
    pub v_n: f64,
    pub bootstrap_weight: BootstrapWeight,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            scenarios: Vec::new(),
            statistics: vec![StudyStatistic::Cvm, StudyStatistic::Tcvm],
            amplitudes: Vec::new(),
            bandwidths: vec![1.0],
            reps: 500,
            bootstrap: 300,
            level: 0.05,
            seed: 0,
            trim: DEFAULT_TRIM,
            v_n: 0.2,
            bootstrap_weight: BootstrapWeight::default(),
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidInput("R must be at least 1".into()));
        }
        if self.bootstrap == 0 && self.statistics.iter().any(|s| s.kind() == StatisticKind::Cvm) {
            return Err(Error::InvalidInput("B must be at least 1 for CvM statistics".into()));
        }
        if self.scenarios.is_empty() || self.statistics.is_empty() {
            return Err(Error::InvalidInput("study needs at least one scenario and one statistic".into()));
        }
        if self.bandwidths.is_empty() || self.bandwidths.iter().any(|c| !(*c > 0.0)) {
            return Err(Error::InvalidInput("bandwidth constants must be positive".into()));
        }
        if self.amplitudes.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::InvalidInput("amplitudes must be >= 0".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidInput(format!("level {} outside (0, 1)", self.level)));
        }
        for sc in &self.scenarios {
            sc.dim()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: StudyConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One (scenario, statistic, a, c) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub scenario: String,
    pub statistic: String,
    pub covariance: String,
    pub n: usize,
    pub p: usize,
    pub a: f64,
    pub c: Option<f64>,
    /// Rejections over completed replications; NaN for invalid cells.
    pub rate: f64,
    /// `sqrt(rate (1 - rate) / completed)`.
    pub se: f64,
    /// Seconds spent on this cell's statistic and calibration, summed over
    /// replications.
    pub time: f64,
    pub completed: usize,
    pub failed: usize,
    pub invalid: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub cells: Vec<CellResult>,
}

struct CellSpec {
    stat: StudyStatistic,
    c: Option<f64>,
}

fn cell_specs(cfg: &StudyConfig) -> Vec<CellSpec> {
    let mut out = Vec::new();
    for &stat in &cfg.statistics {
        match stat.kind() {
            StatisticKind::Cvm => out.push(CellSpec { stat, c: None }),
            StatisticKind::Tcvm => out.extend(cfg.bandwidths.iter().map(|&c| CellSpec { stat, c: Some(c) })),
        }
    }
    out
}

/// Seed of the dataset for replication `rep` of `scenario` (amplitude
/// excluded, so amplitude grids reuse the same draws).
pub fn replication_seed(master: u64, scenario: &Scenario, rep: usize) -> u64 {
    let mut base = scenario.clone();
    base.a = 0.0;
    let id = serde_json::to_string(&base).unwrap_or_else(|_| scenario.id());
    derive_seed(master, &[label_hash(&id), rep as u64])
}

type Decision = std::result::Result<bool, String>;

fn replicate(
    cfg: &StudyConfig,
    scenario: &Scenario,
    specs: &[CellSpec],
    rep: usize,
    table: Option<&BrownianCvmTable>,
) -> Vec<(Decision, f64)> {
    let seed = replication_seed(cfg.seed, scenario, rep);
    let fail_all = |e: String| specs.iter().map(|_| (Err(e.clone()), 0.0)).collect();
    let data = match make_dgp(scenario, seed) {
        Ok(d) => d,
        Err(e) => return fail_all(e.to_string()),
    };
    let model = Linear { dim: data.d() };
    let tc = TestConfig {
        level: cfg.level,
        trim: cfg.trim,
        v_n: cfg.v_n,
        bootstrap_weight: cfg.bootstrap_weight,
        seed: derive_seed(seed, &[1]),
        ..Default::default()
    };
    let fit = match fit_null_mean(&data, &model, &tc) {
        Ok(f) => f,
        Err(e) => return fail_all(e.to_string()),
    };
    let needs = |d: bool| specs.iter().any(|s| s.stat.directional() == d);
    let omnibus_spec = WeightSpec::Omnibus;
    let omnibus = needs(false).then(|| mean_weight(&data, &model, &fit, &omnibus_spec, &tc));
    let directional = needs(true).then(|| {
        let spec = WeightSpec::Directional(Arc::new(scenario.directional_model()?));
        let w = mean_weight(&data, &model, &fit, &spec, &tc)?;
        Ok::<_, Error>((spec, w))
    });
    specs
        .iter()
        .map(|spec| {
            let start = Instant::now();
            let built = if spec.stat.directional() {
                directional.as_ref().map(|r| r.as_ref().map(|(s, w)| (s, w)))
            } else {
                omnibus.as_ref().map(|r| r.as_ref().map(|w| (&omnibus_spec, w)))
            };
            let decision = match built.expect("weight built for every needed family") {
                Ok((ws, w)) => decide(&data, &model, &fit, ws, w, spec, cfg, &tc, table).map_err(|e| e.to_string()),
                Err(e) => Err(e.to_string()),
            };
            (decision, start.elapsed().as_secs_f64())
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn decide(
    data: &Dataset,
    model: &dyn MeanModel,
    fit: &crate::estimation::MeanFit,
    ws: &WeightSpec,
    w: &BuiltWeight,
    spec: &CellSpec,
    cfg: &StudyConfig,
    tc: &TestConfig,
    table: Option<&BrownianCvmTable>,
) -> Result<bool> {
    match spec.stat.kind() {
        StatisticKind::Cvm => {
            let stat = evaluate_statistic(&fit.residuals, &w.weight, StatisticKind::Cvm, ScoreKind::Mean, tc)?.value;
            let bc = BootstrapConfig { b: cfg.bootstrap, v_n: cfg.v_n, seed: tc.seed, unsmoothed: false };
            let reps = mean_bootstrap_replicates(data, model, fit, &w.weight, ws, StatisticKind::Cvm, &bc, tc)?;
            Ok(stat > bootstrap_critical_value(&reps, cfg.level)?)
        }
        StatisticKind::Tcvm => {
            let c = spec.c.expect("transformed cells carry a bandwidth constant");
            let tcc = TestConfig { kernel: KernelConfig::with_c(c), ..tc.clone() };
            let stat = evaluate_statistic(&fit.residuals, &w.weight, StatisticKind::Tcvm, ScoreKind::Mean, &tcc)?.value;
            let table = table.expect("table loaded for transformed statistics");
            Ok(stat > table.quantile(1.0 - cfg.level))
        }
    }
}

/// Run every cell of the study.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let specs = cell_specs(cfg);
    let table = specs.iter().any(|s| s.stat.kind() == StatisticKind::Tcvm).then(BrownianCvmTable::standard);
    let mut cells = Vec::new();
    for base in &cfg.scenarios {
        let amps = if cfg.amplitudes.is_empty() { vec![base.a] } else { cfg.amplitudes.clone() };
        let p = base.dim()?;
        for &a in &amps {
            let sc = base.clone().with_a(a);
            let outcomes: Vec<Vec<(Decision, f64)>> =
                (0..cfg.reps).into_par_iter().map(|r| replicate(cfg, &sc, &specs, r, table)).collect();
            for (k, spec) in specs.iter().enumerate() {
                cells.push(aggregate(&sc, p, spec, outcomes.iter().map(|o| &o[k])));
            }
        }
    }
    Ok(StudyReport { config: cfg.clone(), cells })
}

fn aggregate<'a>(
    sc: &Scenario,
    p: usize,
    spec: &CellSpec,
    outcomes: impl Iterator<Item = &'a (Decision, f64)>,
) -> CellResult {
    let (mut rejects, mut completed, mut failed, mut time) = (0usize, 0usize, 0usize, 0.0);
    let mut first_error = None;
    for (d, t) in outcomes {
        time += t;
        match d {
            Ok(r) => {
                completed += 1;
                rejects += usize::from(*r);
            }
            Err(e) => {
                failed += 1;
                first_error.get_or_insert_with(|| e.clone());
            }
        }
    }
    let total = completed + failed;
    // more than 1% of replications failing invalidates the cell
    let invalid = (failed * 100 > total || completed == 0)
        .then(|| format!("{failed} of {total} replications failed: {}", first_error.unwrap_or_default()));
    let (rate, se) = if invalid.is_some() {
        (f64::NAN, f64::NAN)
    } else {
        let r = rejects as f64 / completed as f64;
        (r, (r * (1.0 - r) / completed as f64).sqrt())
    };
    CellResult {
        scenario: sc.id(),
        statistic: spec.stat.label().into(),
        covariance: sc.covariance.to_string(),
        n: sc.n,
        p,
        a: sc.a,
        c: spec.c,
        rate,
        se,
        time,
        completed,
        failed,
        invalid,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl FromStr for TableFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            other => Err(Error::InvalidInput(format!("unknown table format {other:?}"))),
        }
    }
}

pub const TABLE_COLUMNS: [&str; 10] = ["scenario", "statistic", "covariance", "n", "p", "a", "c", "rate", "se", "time"];

fn row_fields(c: &CellResult) -> [String; 10] {
    [
        c.scenario.clone(),
        c.statistic.clone(),
        c.covariance.clone(),
        c.n.to_string(),
        c.p.to_string(),
        c.a.to_string(),
        c.c.map(|v| v.to_string()).unwrap_or_default(),
        format!("{:.4}", c.rate),
        format!("{:.4}", c.se),
        format!("{:.3}", c.time),
    ]
}

/// Render the report; rates and standard errors carry four decimals.
pub fn emit_table(report: &StudyReport, format: TableFormat) -> Result<String> {
    match format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(TABLE_COLUMNS).map_err(|e| Error::Csv(e.to_string()))?;
            for c in &report.cells {
                w.write_record(row_fields(c)).map_err(|e| Error::Csv(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Csv(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Error::Csv(e.to_string()))
        }
        TableFormat::Markdown => {
            let mut out = format!("| {} |\n|{}\n", TABLE_COLUMNS.join(" | "), "---|".repeat(TABLE_COLUMNS.len()));
            for c in &report.cells {
                let _ = writeln!(out, "| {} |", row_fields(c).join(" | "));
            }
            Ok(out)
        }
    }
}

/// A parsed line of an emitted CSV table.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct TableRow {
    pub scenario: String,
    pub statistic: String,
    pub covariance: String,
    pub n: usize,
    pub p: usize,
    pub a: f64,
    pub c: Option<f64>,
    pub rate: f64,
    pub se: f64,
    pub time: f64,
}

pub fn parse_table(text: &str) -> Result<Vec<TableRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
    if headers.iter().ne(TABLE_COLUMNS) {
        return Err(Error::Csv(format!("unexpected header {headers:?}")));
    }
    r.deserialize().map(|row| row.map_err(|e| Error::Csv(e.to_string()))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ScenarioName;

    fn small(stats: Vec<StudyStatistic>, reps: usize) -> StudyConfig {
        StudyConfig {
            scenarios: vec![Scenario::new(ScenarioName::H11, 60).with_p(3)],
            statistics: stats,
            amplitudes: vec![0.0, 0.6],
            reps,
            bootstrap: 19,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn single_replication_rate_is_zero_or_one() {
        let rep = run_study(&small(vec![StudyStatistic::Cvm, StudyStatistic::Tcvm], 1)).unwrap();
        assert_eq!(rep.cells.len(), 4);
        assert!(rep.cells.iter().all(|c| c.rate == 0.0 || c.rate == 1.0));
    }

    #[test]
    fn thread_count_does_not_change_rates() {
        let cfg = small(vec![StudyStatistic::Cvm, StudyStatistic::TcvmD], 6);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| run_study(&cfg).unwrap())
        };
        let a = run(1);
        let b = run(3);
        let rates = |r: &StudyReport| r.cells.iter().map(|c| c.rate.to_bits()).collect::<Vec<_>>();
        assert_eq!(rates(&a), rates(&b));
        assert_eq!(rates(&a), rates(&run_study(&cfg).unwrap()));
    }

    #[test]
    fn table_layout_and_round_trip() {
        let empty = StudyReport { config: StudyConfig::default(), cells: vec![] };
        let text = emit_table(&empty, TableFormat::Csv).unwrap();
        assert_eq!(text, "scenario,statistic,covariance,n,p,a,c,rate,se,time\n");

        let rep = run_study(&small(vec![StudyStatistic::Cvm, StudyStatistic::Tcvm], 4)).unwrap();
        let one = StudyReport { config: rep.config.clone(), cells: rep.cells[..1].to_vec() };
        assert_eq!(emit_table(&one, TableFormat::Csv).unwrap().lines().count(), 2);

        let text = emit_table(&rep, TableFormat::Csv).unwrap();
        let rows = parse_table(&text).unwrap();
        assert_eq!(rows.len(), rep.cells.len());
        for (row, cell) in rows.iter().zip(&rep.cells) {
            assert_eq!(format!("{:.4}", row.rate), format!("{:.4}", cell.rate));
            assert_eq!(row.c, cell.c);
            assert_eq!(row.a, cell.a);
        }
        assert!(rows.iter().filter(|r| r.statistic == "CvM").all(|r| r.c.is_none()));
        let md = emit_table(&rep, TableFormat::Markdown).unwrap();
        assert!(md.starts_with("| scenario | statistic |"));
        assert_eq!(md.lines().count(), rep.cells.len() + 2);
    }

    #[test]
    fn se_matches_rate() {
        let rep = run_study(&small(vec![StudyStatistic::Cvm], 8)).unwrap();
        for c in &rep.cells {
            assert!((c.se - (c.rate * (1.0 - c.rate) / 8.0).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn config_json_defaults() {
        let cfg = StudyConfig::from_json(r#"{"scenarios":[{"name":"H12","n":100,"covariance":"sigma2"}],"seed":3}"#)
            .unwrap();
        assert_eq!(cfg.reps, 500);
        assert_eq!(cfg.bootstrap, 300);
        assert_eq!(cfg.scenarios[0].dim().unwrap(), 10);
        assert!(StudyConfig::from_json(r#"{"scenarios":[],"R":0}"#).is_err());
    }

    #[test]
    fn invalid_cell_is_marked() {
        // trimming 12 points at 0.5 keeps 6, below the 10-point minimum
        let mut cfg = small(vec![StudyStatistic::Tcvm], 3);
        cfg.scenarios = vec![Scenario::new(ScenarioName::H11, 12).with_p(2)];
        cfg.trim = 0.5;
        let rep = run_study(&cfg).unwrap();
        assert!(rep.cells.iter().all(|c| c.invalid.is_some() && c.rate.is_nan()));
    }
}

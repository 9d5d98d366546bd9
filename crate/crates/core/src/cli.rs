//! Command-line front end.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::{
    ConstantVariance, Dataset, ExpConstantVariance, Linear, LinearExpIndex, LogLinearVariance, MeanModel, SingleIndexQuadratic,
    VarianceModel,
};
use crate::pipeline::{
    fit_null_mean, fit_null_variance, mean_weight, process_path, run_mean_test, run_variance_test, variance_weight,
    BootstrapWeight, Method, StatisticKind, TestConfig, WeightSpec,
};
use crate::simulation::{emit_table, run_study, StudyConfig, TableFormat};
use crate::smoothing::ScoreKind;
use crate::stats::{BrownianCvmTable, DEFAULT_GRID, DEFAULT_PATHS};

/// Fewer rows than this get a warning on ingest.
pub const SMALL_SAMPLE: usize = 10;

/// A CSV file split into predictors, response and set-aside columns.
#[derive(Clone, Debug)]
pub struct Ingested {
    pub data: Dataset,
    pub response: String,
    pub predictors: Vec<String>,
    /// Columns kept out of the predictors, in request order, unstandardized.
    pub extra: Vec<(String, Vec<f64>)>,
    pub warnings: Vec<String>,
}

/// Read a headed, comma-separated numeric file.
pub fn ingest_csv(path: &Path, response: &str, standardize: bool) -> Result<Ingested> {
    ingest_csv_with(path, response, &[], standardize)
}

/// As [`ingest_csv`], setting the columns named in `exclude` aside.
pub fn ingest_csv_with(path: &Path, response: &str, exclude: &[&str], standardize: bool) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    let header: Vec<String> =
        rdr.headers().map_err(|e| Error::Csv(e.to_string()))?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Csv(format!("no column named '{name}' (header: {})", header.join(","))))
    };
    let y_col = find(response)?;
    let extra_cols = exclude.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let x_cols: Vec<usize> = (0..header.len()).filter(|c| *c != y_col && !extra_cols.contains(c)).collect();
    if x_cols.is_empty() {
        return Err(Error::Csv("no predictor columns".into()));
    }

    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
    for (r, rec) in rdr.records().enumerate() {
        // data rows are numbered from 1, the header is row 0
        let row = r + 1;
        let rec = rec.map_err(|e| Error::Csv(format!("row {row}: {e}")))?;
        if rec.len() != header.len() {
            return Err(Error::Csv(format!("row {row}: {} fields, header has {}", rec.len(), header.len())));
        }
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Csv(format!("row {row}, column {} ('{}'): non-numeric value '{field}'", c + 1, header[c]))
            })?;
            if !v.is_finite() {
                return Err(Error::Csv(format!("row {row}, column {} ('{}'): non-finite value", c + 1, header[c])));
            }
            cols[c].push(v);
        }
    }
    let n = cols[y_col].len();
    if n == 0 {
        return Err(Error::Csv("no data rows".into()));
    }
    let mut warnings = Vec::new();
    if n < SMALL_SAMPLE {
        let msg = format!("only {n} rows; the tests are asymptotic and unreliable at this size");
        warn!("{msg}");
        warnings.push(msg);
    }
    if standardize {
        for c in x_cols.iter().chain(std::iter::once(&y_col)) {
            standardize_column(&mut cols[*c], &header[*c])?;
        }
    }
    let d = x_cols.len();
    let mut x = Vec::with_capacity(n * d);
    for i in 0..n {
        x.extend(x_cols.iter().map(|&c| cols[c][i]));
    }
    let data = Dataset::new(x, cols[y_col].clone(), d)?;
    Ok(Ingested {
        data,
        response: response.to_string(),
        predictors: x_cols.iter().map(|&c| header[c].clone()).collect(),
        extra: extra_cols.iter().map(|&c| (header[c].clone(), cols[c].clone())).collect(),
        warnings,
    })
}

fn standardize_column(v: &mut [f64], name: &str) -> Result<()> {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(Error::Csv(format!("column '{name}' is constant and cannot be standardized")));
    }
    v.iter_mut().for_each(|x| *x = (*x - m) / sd);
    Ok(())
}

#[derive(Parser, Debug)]
#[command(name = "regcheck", version, about = "Goodness-of-fit tests for regression mean and variance functions")]
struct Cli {
    /// Worker threads (default: available parallelism). Never changes results.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Test a parametric regression function.
    TestMean(TestArgs),
    /// Test a parametric variance function.
    TestVariance(VarianceArgs),
    /// Run a simulation study from a JSON config.
    Simulate(SimulateArgs),
    /// Simulate the quantile table of int_0^1 B(t)^2 dt.
    Calibrate(CalibrateArgs),
    /// Write the process behind a statistic as t,value CSV.
    DumpProcess(DumpArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ModelArg {
    Linear,
    SingleIndexQuadratic,
    LinearExpIndex,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum VarianceArg {
    Constant,
    ExpConstant,
    LogLinear,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum MethodArg {
    Bootstrap,
    Asymptotic,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StatArg {
    Cvm,
    Tcvm,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BootWeightArg {
    Reestimated,
    Original,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Csv,
    Markdown,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Headed numeric CSV file.
    #[arg(long)]
    data: PathBuf,
    /// Name of the response column; every other column is a predictor.
    #[arg(long)]
    response: String,
    /// Center and scale every column to mean 0, sd 1.
    #[arg(long)]
    standardize: bool,
    /// Null mean model.
    #[arg(long, value_enum, default_value = "linear")]
    model: ModelArg,
    /// omnibus, directional:<model>, or column:<name> to read g(X) from the file.
    #[arg(long, default_value = "omnibus")]
    weight: String,
}

#[derive(Args, Debug)]
struct TuningArgs {
    #[arg(long, value_enum)]
    statistic: Option<StatArg>,
    #[arg(long)]
    level: Option<f64>,
    /// Bandwidth constant c in h = c n^(-1/10).
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    trim: Option<f64>,
    /// Smoothing scale of the residual bootstrap.
    #[arg(long)]
    v_n: Option<f64>,
    #[arg(long, value_enum)]
    bootstrap_weight: Option<BootWeightArg>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON test configuration; the flags above override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "bootstrap")]
    method: MethodArg,
    /// Bootstrap replications.
    #[arg(long = "B", default_value_t = 300)]
    b: usize,
    #[command(flatten)]
    tuning: TuningArgs,
}

#[derive(Args, Debug)]
struct VarianceArgs {
    #[command(flatten)]
    test: TestArgs,
    /// Null variance model.
    #[arg(long, value_enum, default_value = "constant")]
    variance_model: VarianceArg,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Table output file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Master seed; replaces the one in the config.
    #[arg(long)]
    seed: u64,
    /// Also write the full report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long, default_value_t = DEFAULT_PATHS)]
    paths: usize,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    grid: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DumpArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Dump the variance-test process under this variance model.
    #[arg(long, value_enum)]
    variance_model: Option<VarianceArg>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Pipeline(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Pipeline(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Run the CLI on `argv` (program name first), printing to the process's
/// stdout and stderr. Returns the exit code.
pub fn parse_and_dispatch(argv: &[String]) -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// As [`parse_and_dispatch`] with explicit output streams.
pub fn run(argv: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            let _ = writeln!(err, "error: --threads must be at least 1");
            return 2;
        }
        pool = pool.num_threads(t);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: thread pool: {e}");
            return 1;
        }
    };
    let mut buf = Vec::new();
    let outcome = pool.install(|| dispatch(cli.command, &mut buf));
    let _ = out.write_all(&buf);
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            let _ = writeln!(err, "run 'regcheck --help' for usage");
            2
        }
        Err(Failure::Pipeline(e)) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> CliResult<()> {
    match cmd {
        Command::TestMean(a) => test_mean(a, out),
        Command::TestVariance(a) => test_variance(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::Calibrate(a) => calibrate(a, out),
        Command::DumpProcess(a) => dump_process(a, out),
    }
}

fn print_json<T: Serialize>(value: &T, out: &mut dyn Write) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    writeln!(out, "{text}").map_err(Error::from)?;
    Ok(())
}

fn mean_model(m: ModelArg, d: usize) -> Arc<dyn MeanModel> {
    match m {
        ModelArg::Linear => Arc::new(Linear { dim: d }),
        ModelArg::SingleIndexQuadratic => Arc::new(SingleIndexQuadratic { dim: d }),
        ModelArg::LinearExpIndex => Arc::new(LinearExpIndex { dim: d }),
    }
}

fn variance_model(v: VarianceArg, d: usize) -> Arc<dyn VarianceModel> {
    match v {
        VarianceArg::Constant => Arc::new(ConstantVariance),
        VarianceArg::ExpConstant => Arc::new(ExpConstantVariance),
        VarianceArg::LogLinear => Arc::new(LogLinearVariance { dim: d, intercept: true }),
    }
}

fn parse_value<T: ValueEnum>(s: &str, what: &str) -> CliResult<T> {
    T::from_str(s, true).map_err(|_| {
        let names: Vec<String> =
            T::value_variants().iter().filter_map(|v| v.to_possible_value()).map(|p| p.get_name().to_string()).collect();
        Failure::Usage(format!("unknown {what} '{s}' (expected one of {})", names.join(", ")))
    })
}

enum WeightArg {
    Omnibus,
    Directional(String),
    Column(String),
}

fn parse_weight(s: &str) -> CliResult<WeightArg> {
    if s == "omnibus" {
        return Ok(WeightArg::Omnibus);
    }
    match s.split_once(':') {
        Some(("directional", m)) => Ok(WeightArg::Directional(m.to_string())),
        Some(("column", c)) if !c.is_empty() => Ok(WeightArg::Column(c.to_string())),
        _ => Err(Failure::Usage(format!("unknown weight '{s}' (omnibus, directional:<model>, column:<name>)"))),
    }
}

fn load(data: &DataArgs) -> CliResult<(Ingested, WeightArg)> {
    let w = parse_weight(&data.weight)?;
    let exclude: Vec<&str> = match &w {
        WeightArg::Column(c) => vec![c.as_str()],
        _ => Vec::new(),
    };
    let ing = ingest_csv_with(&data.data, &data.response, &exclude, data.standardize)?;
    Ok((ing, w))
}

fn mean_spec(w: &WeightArg, ing: &Ingested) -> CliResult<WeightSpec> {
    Ok(match w {
        WeightArg::Omnibus => WeightSpec::Omnibus,
        WeightArg::Directional(m) => WeightSpec::Directional(mean_model(parse_value(m, "mean model")?, ing.data.d())),
        WeightArg::Column(_) => WeightSpec::Fixed(ing.extra[0].1.clone()),
    })
}

fn variance_spec(w: &WeightArg, ing: &Ingested) -> CliResult<WeightSpec> {
    Ok(match w {
        WeightArg::Omnibus => WeightSpec::Omnibus,
        WeightArg::Directional(m) => {
            WeightSpec::DirectionalVariance(variance_model(parse_value(m, "variance model")?, ing.data.d()))
        }
        WeightArg::Column(_) => WeightSpec::Fixed(ing.extra[0].1.clone()),
    })
}

fn test_config(t: &TuningArgs) -> CliResult<TestConfig> {
    let mut cfg = match &t.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).map_err(Error::from)?).map_err(Error::from)?,
        None => TestConfig::default(),
    };
    if let Some(s) = t.statistic {
        cfg.statistic = match s {
            StatArg::Cvm => StatisticKind::Cvm,
            StatArg::Tcvm => StatisticKind::Tcvm,
        };
    }
    if let Some(l) = t.level {
        cfg.level = l;
    }
    if let Some(c) = t.bandwidth {
        cfg.kernel.c = c;
    }
    if let Some(tr) = t.trim {
        cfg.trim = tr;
    }
    if let Some(v) = t.v_n {
        cfg.v_n = v;
    }
    if let Some(b) = t.bootstrap_weight {
        cfg.bootstrap_weight = match b {
            BootWeightArg::Reestimated => BootstrapWeight::Reestimated,
            BootWeightArg::Original => BootstrapWeight::Original,
        };
    }
    cfg.seed = t.seed;
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn method(a: &TestArgs) -> CliResult<Method> {
    match a.method {
        MethodArg::Bootstrap if a.b == 0 => Err(Failure::Usage("--B must be at least 1".into())),
        MethodArg::Bootstrap => Ok(Method::Bootstrap { b: a.b }),
        MethodArg::Asymptotic => Ok(Method::Asymptotic),
    }
}

fn test_mean(a: TestArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = test_config(&a.tuning)?;
    let method = method(&a)?;
    let (ing, w) = load(&a.data)?;
    let spec = mean_spec(&w, &ing)?;
    let model = mean_model(a.data.model, ing.data.d());
    let res = run_mean_test(&ing.data, model.as_ref(), &spec, method, &cfg)?;
    print_json(&res, out)
}

fn test_variance(a: VarianceArgs, out: &mut dyn Write) -> CliResult<()> {
    let t = &a.test;
    let cfg = test_config(&t.tuning)?;
    let method = method(t)?;
    let (ing, w) = load(&t.data)?;
    let spec = variance_spec(&w, &ing)?;
    let model = mean_model(t.data.model, ing.data.d());
    let vmodel = variance_model(a.variance_model, ing.data.d());
    let res = run_variance_test(&ing.data, model.as_ref(), vmodel.as_ref(), &spec, method, &cfg)?;
    print_json(&res, out)
}

#[derive(Serialize)]
struct SimulateSummary {
    out: String,
    cells: usize,
    invalid: usize,
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> CliResult<()> {
    let text = fs::read_to_string(&a.config).map_err(Error::from)?;
    let mut cfg: StudyConfig = serde_json::from_str(&text).map_err(Error::from)?;
    cfg.seed = a.seed;
    cfg.validate()?;
    let report = run_study(&cfg)?;
    let format = match a.format {
        FormatArg::Csv => TableFormat::Csv,
        FormatArg::Markdown => TableFormat::Markdown,
    };
    fs::write(&a.out, emit_table(&report, format)?).map_err(Error::from)?;
    if let Some(p) = &a.report {
        fs::write(p, serde_json::to_string_pretty(&report).map_err(Error::from)?).map_err(Error::from)?;
    }
    print_json(
        &SimulateSummary {
            out: a.out.display().to_string(),
            cells: report.cells.len(),
            invalid: report.cells.iter().filter(|c| c.invalid.is_some()).count(),
        },
        out,
    )
}

fn calibrate(a: CalibrateArgs, out: &mut dyn Write) -> CliResult<()> {
    if a.paths == 0 || a.grid == 0 {
        return Err(Failure::Usage("--paths and --grid must be positive".into()));
    }
    let table = BrownianCvmTable::simulate(a.paths, a.grid, a.seed)?;
    table.save(&a.out)?;
    print_json(&table, out)
}

fn dump_process(a: DumpArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = test_config(&a.tuning)?;
    let (ing, w) = load(&a.data)?;
    let data = &ing.data;
    let model = mean_model(a.data.model, data.d());
    let fit = fit_null_mean(data, model.as_ref(), &cfg)?;
    let path = match a.variance_model {
        None => {
            let spec = mean_spec(&w, &ing)?;
            let bw = mean_weight(data, model.as_ref(), &fit, &spec, &cfg)?;
            process_path(&fit.residuals, &bw.weight, cfg.statistic, ScoreKind::Mean, &cfg)?
        }
        Some(v) => {
            let vmodel = variance_model(v, data.d());
            let vfit = fit_null_variance(data, &fit, vmodel.as_ref(), &cfg)?;
            let spec = variance_spec(&w, &ing)?;
            let bw = variance_weight(data, &fit, vmodel.as_ref(), &vfit, &spec, &cfg)?;
            process_path(&vfit.standardized, &bw.weight, cfg.statistic, ScoreKind::Variance, &cfg)?
        }
    };
    match &a.out {
        Some(p) => path.write_csv(fs::File::create(p).map_err(Error::from)?)?,
        None => path.write_csv(out)?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_dgp, Scenario, ScenarioName};
    use crate::pipeline::TestResult;

    fn args(s: &str) -> Vec<String> {
        std::iter::once("regcheck").chain(s.split_whitespace()).map(str::to_string).collect()
    }

    fn call(s: &str) -> (i32, String, String) {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let code = run(&args(s), &mut o, &mut e);
        (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
    }

    fn write_dataset(dir: &Path, data: &Dataset) -> PathBuf {
        let p = dir.join("d.csv");
        let mut text = (0..data.d()).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",") + ",y\n";
        for i in 0..data.n() {
            let row: Vec<String> = data.row(i).iter().map(|v| v.to_string()).collect();
            text += &format!("{},{}\n", row.join(","), data.y()[i]);
        }
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn ingest_small_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(&p, "x,y\n1,2\n2,4.5\n3,5\n").unwrap();
        let ing = ingest_csv(&p, "y", false).unwrap();
        assert_eq!((ing.data.n(), ing.data.d()), (3, 1));
        assert_eq!(ing.predictors, vec!["x"]);
        assert_eq!(ing.data.y(), &[2.0, 4.5, 5.0]);
        assert_eq!(ing.warnings.len(), 1);
    }

    #[test]
    fn ingest_standardizes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let mut text = String::from("a,y,b\n");
        for i in 0..40 {
            let v = i as f64;
            text += &format!("{},{},{}\n", 3.0 * v + 1.0, (v * 0.7).sin() * 5.0, v * v - 4.0);
        }
        fs::write(&p, text).unwrap();
        let ing = ingest_csv(&p, "y", true).unwrap();
        assert!(ing.warnings.is_empty());
        let n = ing.data.n() as f64;
        let check = |v: Vec<f64>| {
            let m = v.iter().sum::<f64>() / n;
            let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            assert!(m.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10, "{m} {sd}");
        };
        check(ing.data.y().to_vec());
        for j in 0..2 {
            check(ing.data.rows().map(|r| r[j]).collect());
        }
    }

    #[test]
    fn ingest_errors_name_the_cell() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(&p, "x,y\n1,2\n2,abc\n").unwrap();
        let e = ingest_csv(&p, "y", false).unwrap_err().to_string();
        assert!(e.contains("row 2") && e.contains("column 2") && e.contains("abc"), "{e}");
        let e = ingest_csv(&p, "z", false).unwrap_err().to_string();
        assert!(e.contains("'z'"), "{e}");
    }

    #[test]
    fn usage_errors_exit_2() {
        let (code, _, err) = call("test-mean --bogus");
        assert_eq!(code, 2);
        assert!(err.contains("Usage"), "{err}");
        assert_eq!(call("frobnicate").0, 2);
        assert_eq!(call("").0, 2);
        assert_eq!(call("--help").0, 0);
    }

    #[test]
    fn pipeline_errors_exit_1() {
        let (code, _, err) = call("test-mean --data /nonexistent/d.csv --response y");
        assert_eq!(code, 1);
        assert!(err.contains("error"), "{err}");
    }

    #[test]
    fn asymptotic_cvm_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let data = make_dgp(&Scenario::new(ScenarioName::H11, 60), 3).unwrap();
        let p = write_dataset(dir.path(), &data);
        let (code, _, err) =
            call(&format!("test-mean --data {} --response y --method asymptotic --statistic cvm", p.display()));
        assert_eq!(code, 1);
        assert!(err.contains("bootstrap"), "{err}");
    }

    #[test]
    fn test_mean_json_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let data = make_dgp(&Scenario::new(ScenarioName::H11, 60), 11).unwrap();
        let p = write_dataset(dir.path(), &data);
        let cmd = format!(
            "--threads 2 test-mean --data {} --response y --model linear --weight omnibus --method bootstrap --B 20 --seed 7",
            p.display()
        );
        let (code, out, err) = call(&cmd);
        assert_eq!(code, 0, "{err}");
        let r: TestResult = serde_json::from_str(&out).unwrap();
        assert_eq!(r.meta.n, 60);
        assert_eq!(r.meta.seed, 7);
        assert_eq!(r.meta.bootstrap_size, Some(20));
        let again = serde_json::to_string_pretty(&r).unwrap();
        assert_eq!(out.trim_end(), again);
        let (_, out1, _) = call(&cmd.replace("--threads 2", "--threads 1"));
        assert_eq!(out, out1);
    }

    #[test]
    fn weight_from_column_and_directional() {
        let dir = tempfile::tempdir().unwrap();
        let data = make_dgp(&Scenario::new(ScenarioName::H11, 50), 5).unwrap();
        let p = dir.path().join("w.csv");
        let d = data.d();
        let mut text = (0..d).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",") + ",y,g\n";
        for i in 0..data.n() {
            let r = data.row(i);
            let xs: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            text += &format!("{},{},{}\n", xs.join(","), data.y()[i], (r[0] + r[1]).cos());
        }
        fs::write(&p, text).unwrap();
        let base = format!("test-mean --data {} --response y --method asymptotic --statistic tcvm", p.display());
        let (code, out, err) = call(&format!("{base} --weight column:g"));
        assert_eq!(code, 0, "{err}");
        let r: TestResult = serde_json::from_str(&out).unwrap();
        assert_eq!((r.meta.d, r.meta.weight.as_str()), (d, "fixed"));
        assert!(r.meta.table.is_some());
        let (code, out, err) = call(&format!("{base} --weight directional:single_index_quadratic"));
        assert_eq!(code, 0, "{err}");
        assert!(out.contains("directional:single_index_quadratic"));
        assert_eq!(call(&format!("{base} --weight directional:spline")).0, 2);
        assert_eq!(call(&format!("{base} --weight column:nope")).0, 1);
    }

    #[test]
    fn variance_test_runs() {
        let dir = tempfile::tempdir().unwrap();
        let data = make_dgp(&Scenario::new(ScenarioName::H11, 80), 2).unwrap();
        let p = write_dataset(dir.path(), &data);
        let (code, out, err) = call(&format!(
            "test-variance --data {} --response y --variance-model exp_constant --B 10 --seed 3",
            p.display()
        ));
        assert_eq!(code, 0, "{err}");
        let r: TestResult = serde_json::from_str(&out).unwrap();
        assert_eq!(r.meta.variance_model.as_deref(), Some("exp_constant"));
    }

    #[test]
    fn calibrate_writes_table() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.json");
        let (code, out, err) = call(&format!("calibrate --paths 500 --grid 50 --seed 1 --out {}", p.display()));
        assert_eq!(code, 0, "{err}");
        let t = BrownianCvmTable::load(&p).unwrap();
        assert_eq!((t.paths, t.grid, t.seed), (500, 50, 1));
        let printed: BrownianCvmTable = serde_json::from_str(&out).unwrap();
        assert_eq!(printed.quantiles, t.quantiles);
    }

    #[test]
    fn simulate_writes_csv() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("s.json");
        let out_csv = dir.path().join("r.csv");
        let study = serde_json::json!({
            "scenarios": [serde_json::to_value(Scenario::new(ScenarioName::H11, 40)).unwrap()],
            "statistics": ["tcvm"],
            "R": 4,
        });
        fs::write(&cfg, study.to_string()).unwrap();
        let (code, _, err) =
            call(&format!("simulate --config {} --out {} --seed 9", cfg.display(), out_csv.display()));
        assert_eq!(code, 0, "{err}");
        let rows = crate::simulation::parse_table(&fs::read_to_string(&out_csv).unwrap()).unwrap();
        assert_eq!(rows.len(), 1);
        // the seed is required
        assert_eq!(call(&format!("simulate --config {} --out {}", cfg.display(), out_csv.display())).0, 2);
    }

    #[test]
    fn dump_process_csv() {
        let dir = tempfile::tempdir().unwrap();
        let data = make_dgp(&Scenario::new(ScenarioName::H11, 50), 8).unwrap();
        let p = write_dataset(dir.path(), &data);
        for stat in ["cvm", "tcvm"] {
            let (code, out, err) =
                call(&format!("dump-process --data {} --response y --statistic {stat}", p.display()));
            assert_eq!(code, 0, "{err}");
            let lines: Vec<&str> = out.lines().collect();
            assert_eq!(lines[0], "t,value");
            assert_eq!(lines.len(), 51);
        }
    }
}

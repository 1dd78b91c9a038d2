//! `geepers` command-line front end.
//!
//! Exit codes: 0 when every requested fit succeeded and converged, 2 when some
//! fits failed (per-item status is in the output), 1 on a fatal error and 64
//! on a usage error. Errors are reported as one line on stderr:
//! `error: <CODE>: <message>`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use geepers::comparators::{fit_mixture, fit_psw_bootstrap, BootstrapOptions, MixtureOptions};
use geepers::data::{load_csv, ColumnSpec, Dataset, MissingPolicy};
use geepers::geepers::{fit_geepers_with, A21Method};
use geepers::logistic::{self, LogisticFit, ScoreDiagnostics};
use geepers::ols::Mode;
use geepers::report::{geepers_report, mixture_report, psw_report, EstimateReport, SCHEMA_VERSION};
use geepers::sim::grid::{parse_flag, GridSpec, Preset};
use geepers::sim::runner::{coverage_table, summary_json, write_tidy_csv};
use geepers::sim::{run_grid, ErrorDist, EstimatorSet, SimReport};

const CV_FOLDS: usize = 5;

#[derive(Parser)]
#[command(name = "geepers", version, about = "Principal stratification effects under one-way noncompliance")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the selected estimators to a CSV file.
    Estimate(EstimateArgs),
    /// Run a Monte-Carlo simulation grid.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct EstimateArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Column-role file (`key = value` lines); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    outcome: Option<String>,
    #[arg(long)]
    treatment: Option<String>,
    /// Binary stratum column; only read for treated rows.
    #[arg(long)]
    strata: Option<String>,
    /// Score-model covariates (comma-separated).
    #[arg(long, value_delimiter = ',')]
    ps_covars: Option<Vec<String>>,
    /// Outcome-model covariates; defaults to the score-model covariates.
    #[arg(long, value_delimiter = ',')]
    out_covars: Option<Vec<String>>,
    /// Cluster column; the bootstrap then resamples whole clusters.
    #[arg(long)]
    cluster: Option<String>,
    /// Extra cell contents read as missing (empty cells always are).
    #[arg(long, value_delimiter = ',')]
    missing: Option<Vec<String>>,
    /// Drop incomplete rows instead of failing.
    #[arg(long)]
    listwise: bool,
    /// `all` or a comma-separated subset of geepers, psw, mixture.
    #[arg(long, default_value = "all")]
    estimator: String,
    #[arg(long, default_value = "plain")]
    mode: Mode,
    /// Bootstrap replicates for PSW standard errors.
    #[arg(long, default_value_t = geepers::comparators::bootstrap::DEFAULT_REPLICATES)]
    boot_b: usize,
    /// Required whenever PSW or the mixture is requested.
    #[arg(long)]
    seed: Option<u64>,
    /// Results file; without it results go to stdout and the table to stderr.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct SimulateArgs {
    /// Grid file or preset name (reference, coverage, n-sweep, alpha-sweep).
    #[arg(long)]
    grid: Option<String>,
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    errdist: Option<Vec<ErrorDist>>,
    #[arg(long, value_delimiter = ',')]
    b1: Option<Vec<f64>>,
    /// Stratum-by-covariate interaction levels (yes/no).
    #[arg(long, value_delimiter = ',')]
    sx_int: Option<Vec<String>>,
    /// Treatment-by-covariate interaction levels (yes/no).
    #[arg(long, value_delimiter = ',')]
    zx_int: Option<Vec<String>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    estimators: Option<String>,
    #[arg(long)]
    boot_b: Option<usize>,
    /// Worker threads (0 = one per core). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Master seed; overrides any seed in the grid file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `csv` writes tidy per-cell rows, `json` the full summary.
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

/// Failure carried to `main`: stable code, message, exit status.
struct Failure {
    code: &'static str,
    message: String,
    status: u8,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: "E_USAGE", message: message.into(), status: 64 }
    }
}

impl From<geepers::Error> for Failure {
    fn from(e: geepers::Error) -> Self {
        Failure { code: e.code(), message: e.to_string(), status: 1 }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        geepers::Error::from(e).into()
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: E_USAGE: {first}");
            return ExitCode::from(64);
        }
    };
    let result = match cli.command {
        Command::Estimate(a) => estimate(&a),
        Command::Simulate(a) => simulate(&a),
    };
    match result {
        Ok(all_ok) => ExitCode::from(if all_ok { 0 } else { 2 }),
        Err(f) => {
            eprintln!("error: {}: {}", f.code, f.message.replace('\n', " "));
            ExitCode::from(f.status)
        }
    }
}

/// Results to `--out` with the table on stdout, or results to stdout with the table on stderr.
fn emit(out: Option<&Path>, body: &[u8], table: &str) -> Result<(), Failure> {
    match out {
        Some(path) => {
            std::fs::write(path, body)?;
            print!("{table}");
        }
        None => {
            eprint!("{table}");
            std::io::stdout().write_all(body)?;
        }
    }
    Ok(())
}

fn column_spec(a: &EstimateArgs) -> Result<ColumnSpec, Failure> {
    let mut spec = match &a.config {
        Some(path) => ColumnSpec::load_config(path)?,
        None => ColumnSpec::default(),
    };
    let overrides = [(&a.outcome, &mut spec.outcome), (&a.treatment, &mut spec.treatment), (&a.strata, &mut spec.strata)];
    for (flag, field) in overrides {
        if let Some(v) = flag {
            *field = v.clone();
        }
    }
    if let Some(v) = &a.ps_covars {
        spec.ps_covars = v.clone();
    }
    match &a.out_covars {
        Some(v) => spec.out_covars = v.clone(),
        None if a.config.is_none() => spec.out_covars = spec.ps_covars.clone(),
        None => {}
    }
    if a.cluster.is_some() {
        spec.cluster = a.cluster.clone();
    }
    if let Some(v) = &a.missing {
        spec.missing_tokens = v.clone();
    }
    Ok(spec)
}

/// Outcome of one estimator: a report or a coded failure.
enum Item {
    Ok(Box<EstimateReport>),
    Failed { estimator: &'static str, code: &'static str, message: String },
}

impl Item {
    fn from_result(estimator: &'static str, r: geepers::Result<EstimateReport>) -> Self {
        match r {
            Ok(rep) => Item::Ok(Box::new(rep)),
            Err(e) => Item::Failed { estimator, code: e.code(), message: e.to_string() },
        }
    }

    fn ok(&self) -> bool {
        matches!(self, Item::Ok(r) if r.diagnostics.converged)
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Item::Ok(r) => {
                let mut v = serde_json::to_value(r).expect("report serializes");
                v["status"] = if r.diagnostics.converged { "ok" } else { "not_converged" }.into();
                v
            }
            Item::Failed { estimator, code, message } => serde_json::json!({
                "schema_version": SCHEMA_VERSION,
                "estimator": estimator,
                "status": "error",
                "error_code": code,
                "message": message,
            }),
        }
    }
}

fn estimate(a: &EstimateArgs) -> Result<bool, Failure> {
    let wanted = EstimatorSet::parse(&a.estimator).map_err(|e| Failure::usage(e.to_string()))?;
    if (wanted.psw || wanted.mixture) && a.seed.is_none() {
        return Err(Failure::usage("--seed is required when psw or mixture is requested"));
    }
    if wanted.psw && a.boot_b < 2 {
        return Err(Failure::usage("--boot-b must be at least 2"));
    }
    let spec = column_spec(a)?;
    let policy = if a.listwise { MissingPolicy::Listwise } else { MissingPolicy::Reject };
    let d = load_csv(&a.data, &spec, policy)?;

    // One score fit shared by every estimator.
    let score = logistic::fit_logistic(&d)?;
    let diag = logistic::diagnostics(&d, &score, a.seed.map(|s| (CV_FOLDS, s)))?;

    let mut items = Vec::new();
    if wanted.geepers {
        let r = fit_geepers_with(&d, score.clone(), a.mode, A21Method::Analytic).map(|g| geepers_report(&d, &g, &diag));
        items.push(Item::from_result("geepers", r));
    }
    if wanted.psw {
        items.push(Item::from_result("psw", run_psw(&d, &score, &diag, a)));
    }
    if wanted.mixture {
        let opts = MixtureOptions::new(a.seed.expect("checked above"));
        let r = fit_mixture(&d, &score.fitted, &opts).map(|m| mixture_report(&d, &score, &diag, &m));
        items.push(Item::from_result("mixture", r));
    }

    let table = comparison_table(&d, &score, &diag, &items);
    let body = match a.format {
        Format::Json => {
            let v = serde_json::json!({
                "schema_version": SCHEMA_VERSION,
                "n": d.n(),
                "n_treated": d.n_treated(),
                "n_control": d.n_control(),
                "mode": a.mode,
                "results": items.iter().map(Item::json).collect::<Vec<_>>(),
            });
            let mut s = serde_json::to_string_pretty(&v).expect("json");
            s.push('\n');
            s.into_bytes()
        }
        Format::Csv => estimate_csv(&items)?,
    };
    emit(a.out.as_deref(), &body, &table)?;
    Ok(score.converged && items.iter().all(Item::ok))
}

fn run_psw(d: &Dataset, score: &LogisticFit, diag: &ScoreDiagnostics, a: &EstimateArgs) -> geepers::Result<EstimateReport> {
    let mut opts = BootstrapOptions::new(a.boot_b, a.seed.expect("checked above"));
    opts.by_cluster = d.cluster().is_some();
    let fit = fit_psw_bootstrap(d, score, &opts)?;
    Ok(psw_report(d, score, diag, &fit))
}

fn estimate_csv(items: &[Item]) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["estimator", "status", "estimand", "estimate", "se", "ci_lower", "ci_upper", "auc", "message"])
        .map_err(geepers::Error::from)?;
    let num = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for item in items {
        match item {
            Item::Ok(r) => {
                let status = if r.diagnostics.converged { "ok" } else { "not_converged" };
                for (name, tau, se, ci) in [("tau0", r.tau0, r.se0, r.ci0), ("tau1", r.tau1, r.se1, r.ci1)] {
                    w.write_record([
                        r.estimator.to_string(),
                        status.into(),
                        name.into(),
                        format!("{tau}"),
                        num(se),
                        num(ci.map(|c| c[0])),
                        num(ci.map(|c| c[1])),
                        format!("{}", r.diagnostics.auc),
                        String::new(),
                    ])
                    .map_err(geepers::Error::from)?;
                }
            }
            Item::Failed { estimator, code, message } => {
                for name in ["tau0", "tau1"] {
                    let row = [*estimator, "error", name, "", "", "", "", "", &format!("{code}: {message}")];
                    w.write_record(row).map_err(geepers::Error::from)?;
                }
            }
        }
    }
    w.into_inner().map_err(|e| Failure { code: "E_IO", message: e.to_string(), status: 1 })
}

fn comparison_table(d: &Dataset, score: &LogisticFit, diag: &ScoreDiagnostics, items: &[Item]) -> String {
    let mut s = format!(
        "n = {} ({} treated, {} control)\nprincipal score: AUC {:.3}{}, {} distinct scores, {} Newton iterations{}\n\n",
        d.n(),
        d.n_treated(),
        d.n_control(),
        diag.auc,
        diag.cv_auc.map(|v| format!(" ({CV_FOLDS}-fold CV {v:.3})")).unwrap_or_default(),
        diag.distinct_scores,
        score.iterations,
        if score.converged { "" } else { " (not converged)" },
    );
    s.push_str(&format!("{:<9} {:<6} {:>9} {:>9} {:>22}  {}\n", "estimator", "effect", "estimate", "se", "2-SE interval", "status"));
    for item in items {
        match item {
            Item::Ok(r) => {
                let status = if r.diagnostics.converged { "ok" } else { "not converged" };
                for (name, tau, se, ci) in [("tau0", r.tau0, r.se0, r.ci0), ("tau1", r.tau1, r.se1, r.ci1)] {
                    let se = se.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
                    let ci = ci.map(|c| format!("[{:.4}, {:.4}]", c[0], c[1])).unwrap_or_else(|| "-".into());
                    s.push_str(&format!("{:<9} {:<6} {:>9.4} {:>9} {:>22}  {status}\n", r.estimator, name, tau, se, ci));
                }
            }
            Item::Failed { estimator, code, message } => {
                s.push_str(&format!("{estimator:<9} failed {code}: {message}\n"));
            }
        }
    }
    s
}

fn grid_spec(a: &SimulateArgs) -> Result<GridSpec, Failure> {
    let mut g = match a.grid.as_deref() {
        None => GridSpec::default(),
        Some(arg) if Path::new(arg).is_file() => GridSpec::parse(&std::fs::read_to_string(arg)?)?,
        Some(arg) => match arg.parse::<Preset>() {
            Ok(p) => GridSpec::preset(p),
            Err(_) => return Err(Failure::usage(format!("`{arg}` is neither a grid file nor a preset"))),
        },
    };
    let flags = |v: &[String], name: &str| -> Result<Vec<bool>, Failure> {
        v.iter()
            .map(|s| parse_flag(s).ok_or_else(|| Failure::usage(format!("invalid value `{s}` for --{name}"))))
            .collect()
    };
    if let Some(v) = &a.n {
        g.n = v.clone();
    }
    if let Some(v) = &a.alpha {
        g.alpha = v.clone();
    }
    if let Some(v) = &a.errdist {
        g.errdist = v.clone();
    }
    if let Some(v) = &a.b1 {
        g.beta1 = v.clone();
    }
    if let Some(v) = &a.sx_int {
        g.sx_int = flags(v, "sx-int")?;
    }
    if let Some(v) = &a.zx_int {
        g.zx_int = flags(v, "zx-int")?;
    }
    if let Some(v) = a.reps {
        g.reps = v;
    }
    if let Some(v) = &a.estimators {
        g.estimators = EstimatorSet::parse(v).map_err(|e| Failure::usage(e.to_string()))?;
    }
    if let Some(v) = a.boot_b {
        g.boot_b = v;
    }
    g.seed = a.seed.ok_or_else(|| Failure::usage("--seed is required for simulate"))?;
    Ok(g)
}

fn simulate(a: &SimulateArgs) -> Result<bool, Failure> {
    let grid = grid_spec(a)?;
    let cells = grid.cells()?;
    let reports: Vec<SimReport> = run_grid(&cells, a.workers)?;
    let failures: usize = reports.iter().flat_map(|r| r.summaries.iter()).map(|s| s.failures).sum();

    let mut table = coverage_table(&reports);
    if failures > 0 {
        table.push_str(&format!("{failures} estimator fits failed; see the failures column\n"));
    }
    let body = match a.format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_tidy_csv(&reports, &mut buf)?;
            buf
        }
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&summary_json(&reports)).expect("json");
            s.push('\n');
            s.into_bytes()
        }
    };
    emit(a.out.as_deref(), &body, &table)?;
    Ok(failures == 0)
}

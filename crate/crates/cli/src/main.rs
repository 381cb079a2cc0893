//! srmi: sequential regression multiple imputation with
//! missingness-model extensions.
//!
//! Subcommands:
//! - impute:   CSV + variable specs in, M completed CSVs + pooled results out
//! - simulate: scenario config or preset in, metrics CSV (+ SVG plots) out
//! - pool:     combine externally produced per-imputation results
//!
//! Exit codes: 0 success, 2 configuration/input error, 3 engine abort.

mod svg;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use srmi_core::config::{parse_scenario_file, parse_var_file, preset, resolve_specs};
use srmi_core::data::StrategyKind;
use srmi_core::engine::{run as engine_run, EngineConfig, VisitOrder};
use srmi_core::glm::DrawMethod;
use srmi_core::pool::{analyze_each, pool, pool_scalar, Analysis};
use srmi_core::sim::{run_grid, MetricsTable, ScenarioConfig};
use srmi_core::{Dataset, Error};

#[derive(Parser)]
#[command(
    name = "srmi",
    version,
    about = "Chained-equations multiple imputation with missingness-model extensions"
)]
struct Cli {
    /// Worker threads for chains/replicates (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Impute a CSV dataset and write completed copies plus pooled results
    Impute(ImputeArgs),
    /// Run a simulation scenario and write a tidy metrics table
    Simulate(SimulateArgs),
    /// Pool per-imputation results produced elsewhere
    Pool(PoolArgs),
}

#[derive(Args)]
struct ImputeArgs {
    /// Input CSV (header row; empty fields or "NA" are missing)
    #[arg(long)]
    data: PathBuf,
    /// Variable spec file (TOML or JSON)
    #[arg(long)]
    spec: PathBuf,
    /// Default imputation method for variables without an explicit one
    #[arg(long, default_value = "srmi-mi")]
    method: String,
    /// Number of imputations
    #[arg(long, default_value_t = 10)]
    m: usize,
    /// Chain iterations
    #[arg(long, default_value_t = 50)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Visit order: most-missing-first or as-given
    #[arg(long, default_value = "most-missing-first")]
    visit_order: String,
    /// Evaluate missingness models at drawn parameters (default: drawn for
    /// srmi-exact, point estimates for srmi-offset)
    #[arg(long)]
    draw_missingness_params: Option<bool>,
    /// Refit missingness models once per iteration instead of per visit
    #[arg(long, default_value_t = false)]
    refit_per_iteration: bool,
    /// Parameter draw method: bootstrap, stratified-bootstrap, normal-approx
    /// (default: bootstrap with automatic stratification for rare classes)
    #[arg(long)]
    draw_method: Option<String>,
    /// Additional pooled analysis, e.g. "x1~x2+x3+x4"
    #[arg(long)]
    linreg: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario preset: paper-normal, paper-binary, desk-normal,
    /// desk-binary, mar-only, smoke
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Scenario config file (TOML or JSON)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Override the number of replicates
    #[arg(long)]
    reps: Option<usize>,
    /// Override the number of imputations
    #[arg(long)]
    m: Option<usize>,
    /// Override the chain iterations
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override the per-replicate sample size
    #[arg(long)]
    n: Option<usize>,
    /// Also emit SVG line charts of bias and relative variance
    #[arg(long, default_value_t = false)]
    plots: bool,
}

#[derive(Args)]
struct PoolArgs {
    /// CSV with columns: estimand, estimate, variance (one row per
    /// imputation per estimand)
    #[arg(long)]
    input: PathBuf,
    /// Output CSV path
    #[arg(long)]
    output: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // build the global pool once; failure only means it was already set
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let result = match cli.command {
        Command::Impute(args) => cmd_impute(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Pool(args) => cmd_pool(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn parse_visit_order(s: &str) -> Result<VisitOrder, Error> {
    match s {
        "most-missing-first" => Ok(VisitOrder::MostMissingFirst),
        "as-given" => Ok(VisitOrder::AsGiven),
        other => Err(Error::Config(format!("unknown visit order '{other}'"))),
    }
}

fn parse_draw_method(s: &str) -> Result<DrawMethod, Error> {
    match s {
        "bootstrap" => Ok(DrawMethod::Bootstrap),
        "stratified-bootstrap" => Ok(DrawMethod::StratifiedBootstrap),
        "normal-approx" => Ok(DrawMethod::NormalApprox),
        other => Err(Error::Config(format!("unknown draw method '{other}'"))),
    }
}

/// "target~cov1+cov2" -> LinReg analysis
fn parse_linreg(s: &str) -> Result<Analysis, Error> {
    let (target, rhs) = s
        .split_once('~')
        .ok_or_else(|| Error::Config(format!("bad linreg spec '{s}'; expected target~c1+c2")))?;
    let covariates: Vec<String> = rhs
        .split('+')
        .map(|c| c.trim().to_string())
        .filter(|c| !c.is_empty())
        .collect();
    if covariates.is_empty() {
        return Err(Error::Config("linreg needs at least one covariate".into()));
    }
    Ok(Analysis::LinReg {
        target: target.trim().to_string(),
        covariates,
    })
}

fn cmd_impute(args: ImputeArgs) -> Result<(), Error> {
    let default_method = StrategyKind::parse(&args.method)?;
    let var_file = parse_var_file(&args.spec)?;
    let specs: HashMap<_, _> = resolve_specs(&var_file, default_method)?;
    let dataset = Dataset::load_csv_path(&args.data, &specs)?;

    if dataset.total_missing() == 0 {
        eprintln!("warning: input has no missing cells; the {} copies will be identical", args.m);
    }

    let config = EngineConfig {
        m_imputations: args.m,
        n_iterations: args.iters,
        seed: args.seed,
        visit_order: parse_visit_order(&args.visit_order)?,
        draw_missingness_params: args.draw_missingness_params,
        refit_missingness_per_iteration: args.refit_per_iteration,
        strategy_overrides: Default::default(),
        draw_method: match &args.draw_method {
            Some(s) => Some(parse_draw_method(s)?),
            None => None,
        },
    };
    let set = engine_run(&dataset, &config)?;

    std::fs::create_dir_all(&args.out)?;
    for (k, ds) in set.completed.iter().enumerate() {
        let path = args.out.join(format!("imp_{:04}.csv", k + 1));
        ds.write_csv_path(path)?;
    }

    // pooled analyses: the mean of every variable, plus an optional
    // regression
    let mut analyses: Vec<Analysis> = dataset
        .columns()
        .iter()
        .map(|c| Analysis::Mean { var: c.name.clone() })
        .collect();
    if let Some(spec) = &args.linreg {
        analyses.push(parse_linreg(spec)?);
    }
    let mut pooled = Vec::new();
    for analysis in &analyses {
        let per = analyze_each(&set.completed, analysis)?;
        pooled.extend(pool(&per)?);
    }
    write_pooled_csv(&args.out.join("pooled.csv"), &pooled)?;

    let log = serde_json::json!({
        "seed": args.seed,
        "m_imputations": args.m,
        "n_iterations": args.iters,
        "events": set.events,
        "traces": set.traces,
    });
    std::fs::write(
        args.out.join("run_log.json"),
        serde_json::to_string_pretty(&log).expect("log serializes"),
    )?;
    Ok(())
}

fn write_pooled_csv(path: &Path, pooled: &[srmi_core::pool::PooledEstimate]) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path).map_err(srmi_core::Error::from)?;
    w.write_record(["analysis", "estimate", "se", "ci_lower", "ci_upper", "m"])
        .map_err(srmi_core::Error::from)?;
    for p in pooled {
        w.write_record([
            p.estimand.as_str(),
            &format!("{}", p.estimate),
            &format!("{}", p.total.sqrt()),
            &format!("{}", p.ci_lower),
            &format!("{}", p.ci_upper),
            &format!("{}", p.m),
        ])
        .map_err(srmi_core::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Error> {
    let mut cfg: ScenarioConfig = match (&args.preset, &args.config) {
        (Some(name), None) => preset(name)?,
        (None, Some(path)) => parse_scenario_file(path)?,
        (None, None) => {
            return Err(Error::Config(
                "simulate needs --preset or --config".into(),
            ))
        }
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    if let Some(reps) = args.reps {
        cfg.n_reps = reps;
    }
    if let Some(m) = args.m {
        cfg.m_imputations = m;
    }
    if let Some(iters) = args.iters {
        cfg.n_iterations = iters;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.n {
        cfg.n = n;
    }
    cfg.validate()?;

    eprintln!(
        "scenario: kind={} n={} reps={} M={} iters={} grid={}x{} methods={}",
        cfg.kind.name(),
        cfg.n,
        cfg.n_reps,
        cfg.m_imputations,
        cfg.n_iterations,
        cfg.phi.len(),
        cfg.rho.len(),
        cfg.methods.len()
    );
    let table = run_grid(
        &cfg,
        Some(&|phi, rho, done, total| {
            eprintln!("grid point phi={phi} rho={rho} done ({done}/{total})");
        }),
    )?;

    std::fs::create_dir_all(&args.out)?;
    let file = std::fs::File::create(args.out.join("metrics.csv"))?;
    table.write_csv(file)?;

    if args.plots {
        write_plots(&args.out.join("plots"), &cfg, &table)?;
    }
    Ok(())
}

fn write_plots(dir: &Path, cfg: &ScenarioConfig, table: &MetricsTable) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    for metric in ["bias", "rel_var"] {
        for &rho in &cfg.rho {
            let mut series = Vec::new();
            for &method in &cfg.methods {
                let points: Vec<(f64, f64)> = cfg
                    .phi
                    .iter()
                    .filter_map(|&phi| {
                        table
                            .get(phi, rho, method.name(), "mean(x1)", metric)
                            .map(|v| (phi, v))
                    })
                    .collect();
                if !points.is_empty() {
                    series.push(svg::Series {
                        name: method.name().to_string(),
                        points,
                    });
                }
            }
            let title = format!(
                "{} of mean(x1), {} covariates, rho = {}",
                metric,
                cfg.kind.name(),
                rho
            );
            let content = svg::line_chart(&title, "phi", metric, &series);
            let path = dir.join(format!(
                "mean_x1_{}_{}_rho{}.svg",
                metric,
                cfg.kind.name(),
                rho
            ));
            std::fs::write(path, content)?;
        }
    }
    Ok(())
}

fn cmd_pool(args: PoolArgs) -> Result<(), Error> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(&args.input)
        .map_err(srmi_core::Error::from)?;
    let headers = rdr.headers().map_err(srmi_core::Error::from)?.clone();
    let idx = |name: &str| -> Result<usize, Error> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("input is missing the '{name}' column")))
    };
    let (ie, iest, ivar) = (idx("estimand")?, idx("estimate")?, idx("variance")?);

    // group rows by estimand, preserving first-seen order
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<(f64, f64)>> = HashMap::new();
    for (row_idx, record) in rdr.records().enumerate() {
        let record = record.map_err(srmi_core::Error::from)?;
        let name = record.get(ie).unwrap_or("").to_string();
        let parse = |field: usize| -> Result<f64, Error> {
            record
                .get(field)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Parse {
                    row: row_idx + 1,
                    col: headers.get(field).unwrap_or("?").to_string(),
                    message: "not numeric".into(),
                })
        };
        let pair = (parse(iest)?, parse(ivar)?);
        if !groups.contains_key(&name) {
            order.push(name.clone());
        }
        groups.entry(name).or_default().push(pair);
    }
    if order.is_empty() {
        return Err(Error::Config("no rows to pool".into()));
    }
    let mut pooled = Vec::new();
    for name in &order {
        pooled.push(pool_scalar(name, &groups[name])?);
    }
    write_pooled_csv(&args.output, &pooled)?;
    Ok(())
}

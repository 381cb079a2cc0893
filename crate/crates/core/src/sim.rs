//! Simulation harness: generate five correlated covariates, impose
//! missingness on the first three through logistic models with strength
//! (phi, rho), impute with each requested method, and aggregate bias,
//! empirical and relative variance, and 95% coverage over replicates.
//!
//! Estimands are the mean of x1 and the coefficients of the linear
//! regression of x1 on x2..x5, pooled with Rubin's rules.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Column, Dataset, ImputationStrategy, StrategyKind, VarKind, VariableSpec};
use crate::engine::{run as engine_run, EngineConfig, VisitOrder};
use crate::error::{Error, Result};
use crate::linalg::cholesky_lower;
use crate::pool::{analyze_each, pool, Analysis, PooledEstimate};
use crate::rng::{derive_seed, stream, LABEL_SIM_DATA, LABEL_SIM_METHOD, LABEL_TRUTH_ORACLE};
use crate::stats::{expit, mean, sample_variance};

pub const N_VARS: usize = 5;
pub const VAR_NAMES: [&str; N_VARS] = ["x1", "x2", "x3", "x4", "x5"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimKind {
    Normal,
    Binary,
}

impl SimKind {
    pub fn name(&self) -> &'static str {
        match self {
            SimKind::Normal => "normal",
            SimKind::Binary => "binary",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub n: usize,
    pub n_reps: usize,
    pub kind: SimKind,
    pub phi: Vec<f64>,
    pub rho: Vec<f64>,
    pub methods: Vec<StrategyKind>,
    pub m_imputations: usize,
    pub n_iterations: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    /// Desk-scale defaults: 50 replicates of n = 2000 with M = 5 and 20
    /// iterations over the full strength grid.
    pub fn desk(kind: SimKind) -> Self {
        ScenarioConfig {
            n: 2000,
            n_reps: 50,
            kind,
            phi: vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.5],
            rho: vec![0.0, 1.0],
            methods: default_methods(kind),
            m_imputations: 5,
            n_iterations: 20,
            seed: 20200528,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 50 {
            return Err(Error::Config("scenario n must be >= 50".into()));
        }
        if self.n_reps < 1 {
            return Err(Error::Config("n_reps must be >= 1".into()));
        }
        if self.phi.is_empty() || self.rho.is_empty() {
            return Err(Error::Config("phi and rho grids must be non-empty".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.m_imputations < 2 {
            return Err(Error::Config("m_imputations must be >= 2".into()));
        }
        Ok(())
    }
}

/// Methods exercised by default for each covariate kind; the tricube
/// (spline) variant applies to continuous covariates.
pub fn default_methods(kind: SimKind) -> Vec<StrategyKind> {
    match kind {
        SimKind::Normal => vec![
            StrategyKind::Srmi,
            StrategyKind::SrmiMi,
            StrategyKind::SrmiInteractionsR,
            StrategyKind::SrmiInteractionsX,
            StrategyKind::SrmiTricube,
            StrategyKind::SrmiOffset,
            StrategyKind::SrmiExact,
        ],
        SimKind::Binary => vec![
            StrategyKind::Srmi,
            StrategyKind::SrmiMi,
            StrategyKind::SrmiInteractionsR,
            StrategyKind::SrmiInteractionsX,
            StrategyKind::SrmiOffset,
            StrategyKind::SrmiExact,
        ],
    }
}

/// Covariance of the five generating variables: unit variances,
/// cov(1,2)=0.4, cov(1,4)=cov(3,5)=0.3, cov(1,3)=cov(2,5)=cov(3,4)=0.2,
/// all remaining 0.1.
pub fn sigma_matrix() -> Array2<f64> {
    let mut s = Array2::<f64>::from_elem((N_VARS, N_VARS), 0.1);
    for i in 0..N_VARS {
        s[[i, i]] = 1.0;
    }
    let pairs = [
        (0, 1, 0.4),
        (0, 3, 0.3),
        (2, 4, 0.3),
        (0, 2, 0.2),
        (1, 4, 0.2),
        (2, 3, 0.2),
    ];
    for (i, j, v) in pairs {
        s[[i, j]] = v;
        s[[j, i]] = v;
    }
    s
}

fn sigma_chol() -> &'static Array2<f64> {
    static CHOL: OnceLock<Array2<f64>> = OnceLock::new();
    CHOL.get_or_init(|| {
        cholesky_lower(&sigma_matrix()).expect("generating covariance must be positive definite")
    })
}

fn var_spec(kind: SimKind, index: usize) -> VariableSpec {
    let vk = match kind {
        SimKind::Normal => VarKind::Continuous,
        SimKind::Binary => {
            if index < 3 {
                VarKind::Binary
            } else {
                VarKind::Continuous
            }
        }
    };
    VariableSpec::new(vk, StrategyKind::Srmi)
}

/// Draw a complete dataset of n rows: multivariate normal with the fixed
/// covariance; for the binary kind x1..x3 are dichotomized at zero.
pub fn gen_covariates<R: Rng + ?Sized>(kind: SimKind, n: usize, rng: &mut R) -> Dataset {
    let l = sigma_chol();
    let mut cols: Vec<Vec<f64>> = (0..N_VARS).map(|_| Vec::with_capacity(n)).collect();
    let mut z = [0.0_f64; N_VARS];
    for _ in 0..n {
        for zi in z.iter_mut() {
            *zi = rand_distr::StandardNormal.sample(rng);
        }
        for (j, col) in cols.iter_mut().enumerate() {
            let mut v = 0.0;
            for k in 0..=j {
                v += l[[j, k]] * z[k];
            }
            if kind == SimKind::Binary && j < 3 {
                v = if v > 0.0 { 1.0 } else { 0.0 };
            }
            col.push(v);
        }
    }
    let columns = cols
        .into_iter()
        .enumerate()
        .map(|(j, values)| Column {
            name: VAR_NAMES[j].to_string(),
            spec: var_spec(kind, j),
            values,
            observed: vec![true; n],
        })
        .collect();
    Dataset::new(columns).expect("generated data is structurally valid")
}

/// Impose missingness on x1..x3 with the paper-grid logistic models
/// (no intercept): logit P(R_1=1) = phi (x2 + x3) + rho (x4 + x5), and
/// cyclically for R_2, R_3. x4 and x5 stay complete.
pub fn impose_mnar<R: Rng + ?Sized>(
    complete: &Dataset,
    phi: f64,
    rho: f64,
    rng: &mut R,
) -> Dataset {
    let n = complete.n_rows();
    let v = |j: usize, i: usize| complete.column(j).values[i];
    let mut columns: Vec<Column> = complete.columns().to_vec();
    for i in 0..n {
        let lps = [
            phi * (v(1, i) + v(2, i)) + rho * (v(3, i) + v(4, i)),
            phi * (v(0, i) + v(2, i)) + rho * (v(3, i) + v(4, i)),
            phi * (v(0, i) + v(1, i)) + rho * (v(3, i) + v(4, i)),
        ];
        for (j, lp) in lps.iter().enumerate() {
            let u: f64 = rng.random();
            if u >= expit(*lp) {
                columns[j].observed[i] = false;
                columns[j].values[i] = f64::NAN;
            }
        }
    }
    Dataset::new(columns).expect("x4 and x5 are always observed")
}

/// Fraction of rows with every variable observed.
pub fn complete_case_fraction(ds: &Dataset) -> f64 {
    let n = ds.n_rows();
    let cc = (0..n)
        .filter(|&i| (0..ds.n_vars()).all(|j| ds.observed(j)[i]))
        .count();
    cc as f64 / n as f64
}

pub fn mean_truth(kind: SimKind) -> f64 {
    match kind {
        SimKind::Normal => 0.0,
        SimKind::Binary => 0.5,
    }
}

/// True coefficients of the linear projection of x1 on (1, x2..x5).
/// Normal kind: closed form beta = Sigma_{cc}^{-1} sigma_{c1} with zero
/// intercept. Binary kind: a fixed-seed 10^7-row Monte Carlo oracle.
pub fn regression_truth(kind: SimKind) -> &'static [f64] {
    match kind {
        SimKind::Normal => {
            static NORMAL: OnceLock<Vec<f64>> = OnceLock::new();
            NORMAL.get_or_init(|| {
                let s = sigma_matrix();
                let mut scc = Array2::<f64>::zeros((4, 4));
                let mut sc1 = Array1::<f64>::zeros(4);
                for a in 0..4 {
                    for b in 0..4 {
                        scc[[a, b]] = s[[a + 1, b + 1]];
                    }
                    sc1[a] = s[[0, a + 1]];
                }
                let chol = crate::linalg::PivotedCholesky::decompose(&scc, 1e-12);
                let beta = chol.solve(&sc1);
                let mut out = vec![0.0];
                out.extend(beta.iter().copied());
                out
            })
        }
        SimKind::Binary => {
            static BINARY: OnceLock<Vec<f64>> = OnceLock::new();
            BINARY.get_or_init(|| monte_carlo_projection_truth(10_000_000))
        }
    }
}

/// The oracle seed is fixed (independent of scenario seeds) so the truth
/// is a constant of the build.
const ORACLE_SEED: u64 = 0x0AC1_E5EE_D001;

/// Streamed OLS of dichotomized x1 on (1, x2b, x3b, x4, x5) over `rows`
/// fresh draws.
fn monte_carlo_projection_truth(rows: usize) -> Vec<f64> {
    let n_chunks = 64usize;
    let per_chunk = rows / n_chunks;
    let partials: Vec<(Array2<f64>, Array1<f64>)> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = stream(ORACLE_SEED, &[LABEL_TRUTH_ORACLE, chunk as u64]);
            let l = sigma_chol();
            let mut gram = Array2::<f64>::zeros((5, 5));
            let mut xty = Array1::<f64>::zeros(5);
            let mut z = [0.0_f64; N_VARS];
            let mut x = [0.0_f64; N_VARS];
            for _ in 0..per_chunk {
                for zi in z.iter_mut() {
                    *zi = rand_distr::StandardNormal.sample(&mut rng);
                }
                for j in 0..N_VARS {
                    let mut v = 0.0;
                    for k in 0..=j {
                        v += l[[j, k]] * z[k];
                    }
                    x[j] = if j < 3 {
                        if v > 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        v
                    };
                }
                let row = [1.0, x[1], x[2], x[3], x[4]];
                let y = x[0];
                for a in 0..5 {
                    for b in a..5 {
                        gram[[a, b]] += row[a] * row[b];
                    }
                    xty[a] += row[a] * y;
                }
            }
            (gram, xty)
        })
        .collect();
    let mut gram = Array2::<f64>::zeros((5, 5));
    let mut xty = Array1::<f64>::zeros(5);
    for (g, b) in partials {
        gram += &g;
        xty += &b;
    }
    for a in 0..5 {
        for b in 0..a {
            gram[[a, b]] = gram[[b, a]];
        }
    }
    let chol = crate::linalg::PivotedCholesky::decompose(&gram, 1e-12);
    chol.solve(&xty).to_vec()
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricRow {
    pub kind: String,
    pub phi: f64,
    pub rho: f64,
    pub method: String,
    pub estimand: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MetricsTable {
    pub rows: Vec<MetricRow>,
}

impl MetricsTable {
    pub fn get(&self, phi: f64, rho: f64, method: &str, estimand: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| {
                r.phi == phi
                    && r.rho == rho
                    && r.method == method
                    && r.estimand == estimand
                    && r.metric == metric
            })
            .map(|r| r.value)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["kind", "phi", "rho", "method", "estimand", "metric", "value"])?;
        for r in &self.rows {
            w.write_record([
                r.kind.as_str(),
                &format!("{}", r.phi),
                &format!("{}", r.rho),
                r.method.as_str(),
                r.estimand.as_str(),
                r.metric.as_str(),
                &format!("{}", r.value),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct RepEstimates {
    /// (estimand, estimate, ci_lower, ci_upper) per estimand
    rows: Vec<(String, f64, f64, f64)>,
}

struct RepOutcome {
    cc_fraction: f64,
    full: RepEstimates,
    per_method: Vec<Option<RepEstimates>>,
}

fn pooled_to_rows(pooled: &[PooledEstimate]) -> Vec<(String, f64, f64, f64)> {
    pooled
        .iter()
        .map(|p| (p.estimand.clone(), p.estimate, p.ci_lower, p.ci_upper))
        .collect()
}

fn analyses() -> [Analysis; 2] {
    [
        Analysis::Mean { var: "x1".into() },
        Analysis::LinReg {
            target: "x1".into(),
            covariates: vec!["x2".into(), "x3".into(), "x4".into(), "x5".into()],
        },
    ]
}

fn analyze_completed(completed: &[Dataset]) -> Result<Vec<PooledEstimate>> {
    let mut out = Vec::new();
    for analysis in analyses() {
        let per = analyze_each(completed, &analysis)?;
        out.extend(pool(&per)?);
    }
    Ok(out)
}

/// Full-data (pre-missingness) estimates with their nominal CIs.
fn analyze_full(ds: &Dataset) -> Result<RepEstimates> {
    use crate::pool::analyze_dataset;
    let z = 1.959963984540054;
    let mut rows = Vec::new();
    for analysis in analyses() {
        for r in analyze_dataset(ds, &analysis)? {
            let half = z * r.variance.sqrt();
            rows.push((r.estimand, r.estimate, r.estimate - half, r.estimate + half));
        }
    }
    Ok(RepEstimates { rows })
}

/// Run the full scenario grid. `on_progress` is called after each
/// completed grid point with (phi, rho, done, total).
pub fn run_grid(
    cfg: &ScenarioConfig,
    on_progress: Option<&(dyn Fn(f64, f64, usize, usize) + Sync)>,
) -> Result<MetricsTable> {
    cfg.validate()?;
    let grid: Vec<(f64, f64)> = cfg
        .phi
        .iter()
        .flat_map(|&p| cfg.rho.iter().map(move |&r| (p, r)))
        .collect();
    let total = grid.len();
    let mut table = MetricsTable::default();

    for (gp_idx, &(phi, rho)) in grid.iter().enumerate() {
        let outcomes: Vec<Result<RepOutcome>> = (0..cfg.n_reps)
            .into_par_iter()
            .map(|rep| run_replicate(cfg, gp_idx, rep, phi, rho))
            .collect();
        let mut ok_outcomes = Vec::with_capacity(cfg.n_reps);
        for o in outcomes {
            ok_outcomes.push(o?);
        }
        aggregate_grid_point(cfg, phi, rho, &ok_outcomes, &mut table);
        if let Some(cb) = on_progress {
            cb(phi, rho, gp_idx + 1, total);
        }
    }
    Ok(table)
}

fn run_replicate(
    cfg: &ScenarioConfig,
    gp_idx: usize,
    rep: usize,
    phi: f64,
    rho: f64,
) -> Result<RepOutcome> {
    let mut rng = stream(cfg.seed, &[LABEL_SIM_DATA, gp_idx as u64, rep as u64]);
    let complete = gen_covariates(cfg.kind, cfg.n, &mut rng);
    let full = analyze_full(&complete)?;
    let masked = impose_mnar(&complete, phi, rho, &mut rng);
    let cc_fraction = complete_case_fraction(&masked);

    let mut per_method = Vec::with_capacity(cfg.methods.len());
    for (mi, &method) in cfg.methods.iter().enumerate() {
        let mut overrides = BTreeMap::new();
        for name in ["x1", "x2", "x3"] {
            overrides.insert(name.to_string(), ImputationStrategy::new(method));
        }
        let engine_cfg = EngineConfig {
            m_imputations: cfg.m_imputations,
            n_iterations: cfg.n_iterations,
            seed: derive_seed(
                cfg.seed,
                &[LABEL_SIM_METHOD, gp_idx as u64, rep as u64, mi as u64],
            ),
            visit_order: VisitOrder::MostMissingFirst,
            draw_missingness_params: None,
            refit_missingness_per_iteration: false,
            strategy_overrides: overrides,
            draw_method: None,
        };
        let result = engine_run(&masked, &engine_cfg)
            .and_then(|set| analyze_completed(&set.completed))
            .map(|pooled| RepEstimates {
                rows: pooled_to_rows(&pooled),
            });
        // A failed replicate/method is recorded and excluded, not fatal.
        per_method.push(result.ok());
    }
    Ok(RepOutcome {
        cc_fraction,
        full,
        per_method,
    })
}

fn aggregate_grid_point(
    cfg: &ScenarioConfig,
    phi: f64,
    rho: f64,
    outcomes: &[RepOutcome],
    table: &mut MetricsTable,
) {
    let kind_name = cfg.kind.name().to_string();
    let mut push = |method: &str, estimand: &str, metric: &str, value: f64| {
        table.rows.push(MetricRow {
            kind: kind_name.clone(),
            phi,
            rho,
            method: method.to_string(),
            estimand: estimand.to_string(),
            metric: metric.to_string(),
            value,
        });
    };

    let cc: Vec<f64> = outcomes.iter().map(|o| o.cc_fraction).collect();
    push("data", "complete_cases", "fraction", mean(&cc));

    // truth per estimand
    let truth_of = |estimand: &str| -> f64 {
        if estimand == "mean(x1)" {
            mean_truth(cfg.kind)
        } else {
            let beta = regression_truth(cfg.kind);
            let names = [
                "beta(intercept)",
                "beta(x2)",
                "beta(x3)",
                "beta(x4)",
                "beta(x5)",
            ];
            let idx = names.iter().position(|&n| n == estimand).unwrap_or(0);
            beta[idx]
        }
    };

    // full-data reference rows
    let estimands: Vec<String> = outcomes[0].full.rows.iter().map(|r| r.0.clone()).collect();
    let mut full_var = BTreeMap::new();
    for (e_idx, estimand) in estimands.iter().enumerate() {
        let ests: Vec<f64> = outcomes.iter().map(|o| o.full.rows[e_idx].1).collect();
        let truth = truth_of(estimand);
        let v = sample_variance(&ests);
        push("full_data", estimand, "bias", mean(&ests) - truth);
        push("full_data", estimand, "emp_var", v);
        let cover = outcomes
            .iter()
            .filter(|o| {
                let r = &o.full.rows[e_idx];
                r.2 <= truth && truth <= r.3
            })
            .count() as f64
            / outcomes.len() as f64;
        push("full_data", estimand, "coverage", cover);
        push("full_data", estimand, "truth", truth);
        full_var.insert(estimand.clone(), v);
    }

    for (mi, &method) in cfg.methods.iter().enumerate() {
        let name = method.name();
        let ok: Vec<&RepEstimates> = outcomes
            .iter()
            .filter_map(|o| o.per_method[mi].as_ref())
            .collect();
        let n_failed = outcomes.len() - ok.len();
        push(name, "-", "n_used", ok.len() as f64);
        push(name, "-", "n_failed", n_failed as f64);
        if ok.is_empty() {
            continue;
        }
        for (e_idx, estimand) in estimands.iter().enumerate() {
            let truth = truth_of(estimand);
            let ests: Vec<f64> = ok.iter().map(|r| r.rows[e_idx].1).collect();
            let bias = mean(&ests) - truth;
            let emp_var = sample_variance(&ests);
            let coverage = ok
                .iter()
                .filter(|r| r.rows[e_idx].2 <= truth && truth <= r.rows[e_idx].3)
                .count() as f64
                / ok.len() as f64;
            push(name, estimand, "bias", bias);
            push(name, estimand, "emp_var", emp_var);
            push(name, estimand, "coverage", coverage);
            push(name, estimand, "truth", truth);
            if let Some(&fv) = full_var.get(estimand) {
                if fv > 0.0 {
                    push(name, estimand, "rel_var", emp_var / fv);
                }
            }
        }
    }
}

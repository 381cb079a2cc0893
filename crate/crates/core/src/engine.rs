//! The chained-equations driver. For each of M chains: hot-deck
//! initialization of every missing cell, then a fixed number of iterations
//! visiting each incomplete variable, refitting its missingness models,
//! drawing imputation-model parameters on all n rows of the current state,
//! and imputing its missing cells. Only the final state of each chain is
//! emitted.
//!
//! Chains are independent (one rng stream per chain derived from the
//! master seed) and run in parallel; within a chain the visits are
//! strictly sequential.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{CompletedView, Dataset, ImputationStrategy};
use crate::error::{Error, Result};
use crate::glm::DrawMethod;
use crate::impute::{impute_variable, ImputationContext};
use crate::missingness::{fit_missingness_models, MissingnessModelSet};
use crate::rng::{stream, LABEL_CHAIN};
use crate::stats::{mean, sample_variance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisitOrder {
    AsGiven,
    MostMissingFirst,
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub m_imputations: usize,
    pub n_iterations: usize,
    pub seed: u64,
    pub visit_order: VisitOrder,
    /// Whether offset/exact strategies evaluate the missingness models at
    /// drawn parameters. None keeps the per-method default: drawn for the
    /// exact strategy, point estimates for the offset strategy.
    pub draw_missingness_params: Option<bool>,
    /// Refit missingness models once per iteration (from the state at the
    /// start of the iteration) instead of at every variable visit.
    pub refit_missingness_per_iteration: bool,
    /// Per-variable strategy overrides by column name.
    pub strategy_overrides: BTreeMap<String, ImputationStrategy>,
    /// Parameter-draw override for imputation models; None = bootstrap,
    /// stratified automatically for rare discrete responses.
    pub draw_method: Option<DrawMethod>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            m_imputations: 10,
            n_iterations: 50,
            seed: 0,
            visit_order: VisitOrder::MostMissingFirst,
            draw_missingness_params: None,
            refit_missingness_per_iteration: false,
            strategy_overrides: BTreeMap::new(),
            draw_method: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_imputations < 2 {
            return Err(Error::Config(format!(
                "m_imputations must be >= 2, got {}",
                self.m_imputations
            )));
        }
        if self.n_iterations < 1 {
            return Err(Error::Config("n_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LogEvent {
    pub chain: usize,
    pub iteration: usize,
    pub variable: String,
    pub kind: &'static str,
    pub message: String,
}

/// Imputed-cell summaries for one chain: `mean[iter][k]` / `sd[iter][k]`
/// track the originally-missing cells of `variables[k]`.
#[derive(Debug, Clone, Serialize)]
pub struct ChainTrace {
    pub chain: usize,
    pub variables: Vec<String>,
    pub mean: Vec<Vec<f64>>,
    pub sd: Vec<Vec<f64>>,
}

#[derive(Debug)]
pub struct ImputedSet {
    pub completed: Vec<Dataset>,
    pub traces: Vec<ChainTrace>,
    pub events: Vec<LogEvent>,
}

impl ImputedSet {
    pub fn m(&self) -> usize {
        self.completed.len()
    }
}

/// Fill every missing cell with a uniform draw from the column's observed
/// values (hot-deck start). Errors if some column has no observed value.
pub fn initialize_missing<R: Rng + ?Sized>(
    dataset: &Dataset,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let mut working = dataset.value_columns();
    for j in 0..dataset.n_vars() {
        let col = dataset.column(j);
        if col.n_missing() == 0 {
            continue;
        }
        let pool = col.observed_values();
        if pool.is_empty() {
            return Err(Error::Config(format!(
                "variable {} has no observed values to initialize from",
                col.name
            )));
        }
        for i in 0..dataset.n_rows() {
            if !col.observed[i] {
                working[j][i] = pool[rng.random_range(0..pool.len())];
            }
        }
    }
    Ok(working)
}

/// Run the chained-equations procedure and produce M completed datasets.
pub fn run(dataset: &Dataset, config: &EngineConfig) -> Result<ImputedSet> {
    config.validate()?;
    let strategies = resolve_strategies(dataset, config)?;
    let incomplete = dataset.incomplete_vars();

    if incomplete.is_empty() {
        let events = vec![LogEvent {
            chain: 0,
            iteration: 0,
            variable: "-".into(),
            kind: "warning",
            message: "input has no missing cells; emitting identical copies".into(),
        }];
        return Ok(ImputedSet {
            completed: (0..config.m_imputations).map(|_| dataset.clone()).collect(),
            traces: Vec::new(),
            events,
        });
    }

    let visit = visit_sequence(dataset, &incomplete, config.visit_order);

    let results: Vec<Result<ChainOutput>> = (0..config.m_imputations)
        .into_par_iter()
        .map(|chain| run_chain(dataset, config, &strategies, &visit, chain))
        .collect();

    let mut completed = Vec::with_capacity(config.m_imputations);
    let mut traces = Vec::with_capacity(config.m_imputations);
    let mut events = Vec::new();
    for out in results {
        let out = out?;
        completed.push(out.completed);
        traces.push(out.trace);
        events.extend(out.events);
    }
    Ok(ImputedSet {
        completed,
        traces,
        events,
    })
}

fn resolve_strategies(
    dataset: &Dataset,
    config: &EngineConfig,
) -> Result<Vec<ImputationStrategy>> {
    for name in config.strategy_overrides.keys() {
        if dataset.column_by_name(name).is_none() {
            return Err(Error::Config(format!(
                "strategy override for unknown variable '{name}'"
            )));
        }
    }
    Ok((0..dataset.n_vars())
        .map(|j| {
            let col = dataset.column(j);
            config
                .strategy_overrides
                .get(&col.name)
                .copied()
                .unwrap_or(col.spec.strategy)
        })
        .collect())
}

fn visit_sequence(dataset: &Dataset, incomplete: &[usize], order: VisitOrder) -> Vec<usize> {
    let mut visit = incomplete.to_vec();
    if order == VisitOrder::MostMissingFirst {
        visit.sort_by_key(|&j| (std::cmp::Reverse(dataset.column(j).n_missing()), j));
    }
    visit
}

struct ChainOutput {
    completed: Dataset,
    trace: ChainTrace,
    events: Vec<LogEvent>,
}

fn run_chain(
    dataset: &Dataset,
    config: &EngineConfig,
    strategies: &[ImputationStrategy],
    visit: &[usize],
    chain: usize,
) -> Result<ChainOutput> {
    let mut rng = stream(config.seed, &[LABEL_CHAIN, chain as u64]);
    let mut working = initialize_missing(dataset, &mut rng)?;
    let mut events = Vec::new();
    let mut trace = ChainTrace {
        chain,
        variables: visit.iter().map(|&j| dataset.name(j).to_string()).collect(),
        mean: Vec::with_capacity(config.n_iterations),
        sd: Vec::with_capacity(config.n_iterations),
    };

    let fail = |iteration: usize, variable: usize, source: Error| Error::ChainAborted {
        chain,
        iteration,
        variable: dataset.name(variable).to_string(),
        source: Box::new(source),
    };

    for iteration in 0..config.n_iterations {
        // Per-iteration refit mode: model sets are built from a snapshot of
        // the state at the start of the iteration.
        let iter_models: Option<BTreeMap<usize, MissingnessModelSet>> =
            if config.refit_missingness_per_iteration {
                let snapshot = working.clone();
                let view = CompletedView::new(dataset, &snapshot);
                let mut map = BTreeMap::new();
                for &target in visit {
                    if strategies[target].kind.needs_missingness_models() {
                        let draw = draw_missingness_flag(config, strategies[target].kind);
                        let (set, warns) = fit_missingness_models(&view, target, draw, &mut rng)
                            .map_err(|e| fail(iteration, target, e))?;
                        log_warnings(&mut events, chain, iteration, dataset.name(target), warns);
                        map.insert(target, set);
                    }
                }
                Some(map)
            } else {
                None
            };

        for &target in visit {
            let strategy = strategies[target];
            let models = if strategy.kind.needs_missingness_models() {
                match &iter_models {
                    Some(map) => map[&target].clone(),
                    None => {
                        let view = CompletedView::new(dataset, &working);
                        let draw = draw_missingness_flag(config, strategy.kind);
                        let (set, warns) = fit_missingness_models(&view, target, draw, &mut rng)
                            .map_err(|e| fail(iteration, target, e))?;
                        log_warnings(&mut events, chain, iteration, dataset.name(target), warns);
                        set
                    }
                }
            } else {
                MissingnessModelSet::empty(target)
            };

            let outcome = {
                let view = CompletedView::new(dataset, &working);
                let ctx = ImputationContext {
                    target,
                    view,
                    models: &models,
                    strategy,
                    delta: dataset.column(target).spec.sensitivity_delta,
                    draw_method: config.draw_method,
                };
                impute_variable(&ctx, &mut rng).map_err(|e| fail(iteration, target, e))?
            };
            log_warnings(
                &mut events,
                chain,
                iteration,
                dataset.name(target),
                outcome.warnings,
            );
            match outcome.values {
                Some(values) => {
                    events.push(LogEvent {
                        chain,
                        iteration,
                        variable: dataset.name(target).to_string(),
                        kind: "visit",
                        message: format!("imputed {} cells", values.len()),
                    });
                    let observed = dataset.observed(target);
                    let mut vi = 0;
                    for i in 0..dataset.n_rows() {
                        if !observed[i] {
                            working[target][i] = values[vi];
                            vi += 1;
                        }
                    }
                    debug_assert_eq!(vi, values.len());
                }
                None => events.push(LogEvent {
                    chain,
                    iteration,
                    variable: dataset.name(target).to_string(),
                    kind: "kept_previous",
                    message: "imputation model unusable; previous values kept".into(),
                }),
            }
        }

        let mut means = Vec::with_capacity(visit.len());
        let mut sds = Vec::with_capacity(visit.len());
        for &j in visit {
            let cells: Vec<f64> = (0..dataset.n_rows())
                .filter(|&i| !dataset.observed(j)[i])
                .map(|i| working[j][i])
                .collect();
            means.push(mean(&cells));
            sds.push(sample_variance(&cells).sqrt());
        }
        trace.mean.push(means);
        trace.sd.push(sds);
    }

    Ok(ChainOutput {
        completed: dataset.completed_with(&working),
        trace,
        events,
    })
}

fn draw_missingness_flag(config: &EngineConfig, kind: crate::data::StrategyKind) -> bool {
    config.draw_missingness_params.unwrap_or(match kind {
        crate::data::StrategyKind::SrmiExact => true,
        _ => false,
    })
}

fn log_warnings(
    events: &mut Vec<LogEvent>,
    chain: usize,
    iteration: usize,
    variable: &str,
    warnings: Vec<String>,
) {
    for message in warnings {
        events.push(LogEvent {
            chain,
            iteration,
            variable: variable.to_string(),
            kind: "warning",
            message,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Column, StrategyKind, VarKind, VariableSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, Normal};

    fn cont(k: StrategyKind) -> VariableSpec {
        VariableSpec::new(VarKind::Continuous, k)
    }

    fn small_dataset(n: usize, seed: u64, strategy: StrategyKind) -> Dataset {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let norm = Normal::new(0.0, 1.0).unwrap();
        let mut x1 = Vec::new();
        let mut x2 = Vec::new();
        let mut x3 = Vec::new();
        let mut m1 = Vec::new();
        let mut m2 = Vec::new();
        for _ in 0..n {
            let b: f64 = norm.sample(&mut rng);
            let c: f64 = norm.sample(&mut rng);
            x1.push(0.6 * b + norm.sample(&mut rng));
            x2.push(b);
            x3.push(c);
            let u1: f64 = rng.random();
            let u2: f64 = rng.random();
            m1.push(u1 > 0.3);
            m2.push(u2 > 0.25);
        }
        Dataset::new(vec![
            Column { name: "x1".into(), spec: cont(strategy), values: x1, observed: m1 },
            Column { name: "x2".into(), spec: cont(strategy), values: x2, observed: m2 },
            Column { name: "x3".into(), spec: cont(StrategyKind::Srmi), values: x3, observed: vec![true; n] },
        ])
        .unwrap()
    }

    fn quick_config(seed: u64) -> EngineConfig {
        EngineConfig {
            m_imputations: 3,
            n_iterations: 4,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn complete_input_yields_identical_copies_and_empty_trace() {
        let n = 30;
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let norm = Normal::new(0.0, 1.0).unwrap();
        let vals: Vec<f64> = (0..n).map(|_| norm.sample(&mut rng)).collect();
        let ds = Dataset::new(vec![Column {
            name: "x".into(),
            spec: cont(StrategyKind::Srmi),
            values: vals.clone(),
            observed: vec![true; n],
        }])
        .unwrap();
        let out = run(&ds, &quick_config(9)).unwrap();
        assert_eq!(out.m(), 3);
        assert!(out.traces.is_empty());
        assert!(out.events.iter().any(|e| e.kind == "warning"));
        for c in &out.completed {
            assert_eq!(c.column(0).values, vals);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let ds = small_dataset(150, 5, StrategyKind::SrmiMi);
        let a = run(&ds, &quick_config(1234)).unwrap();
        let b = run(&ds, &quick_config(1234)).unwrap();
        for (da, db) in a.completed.iter().zip(&b.completed) {
            for j in 0..da.n_vars() {
                for i in 0..da.n_rows() {
                    assert_eq!(
                        da.column(j).values[i].to_bits(),
                        db.column(j).values[i].to_bits()
                    );
                }
            }
        }
        assert_eq!(a.traces.len(), b.traces.len());
        for (ta, tb) in a.traces.iter().zip(&b.traces) {
            assert_eq!(ta.mean, tb.mean);
        }
    }

    #[test]
    fn observed_cells_are_never_touched() {
        let ds = small_dataset(120, 8, StrategyKind::SrmiOffset);
        let out = run(&ds, &quick_config(7)).unwrap();
        for c in &out.completed {
            assert_eq!(c.total_missing(), 0);
            for j in 0..ds.n_vars() {
                for i in 0..ds.n_rows() {
                    if ds.observed(j)[i] {
                        assert_eq!(
                            c.column(j).values[i].to_bits(),
                            ds.column(j).values[i].to_bits()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn hot_deck_initialization_uses_observed_support() {
        let ds = small_dataset(80, 3, StrategyKind::Srmi);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let working = initialize_missing(&ds, &mut rng).unwrap();
        for j in 0..ds.n_vars() {
            let pool = ds.column(j).observed_values();
            for i in 0..ds.n_rows() {
                if !ds.observed(j)[i] {
                    assert!(pool.contains(&working[j][i]));
                }
            }
        }

        // a column with a single observed value initializes to that value
        let ds1 = Dataset::new(vec![
            Column {
                name: "a".into(),
                spec: cont(StrategyKind::Srmi),
                values: vec![7.5, f64::NAN, f64::NAN],
                observed: vec![true, false, false],
            },
            Column {
                name: "b".into(),
                spec: cont(StrategyKind::Srmi),
                values: vec![0.0, 1.0, 2.0],
                observed: vec![true; 3],
            },
        ])
        .unwrap();
        let w = initialize_missing(&ds1, &mut rng).unwrap();
        assert_eq!(w[0][1], 7.5);
        assert_eq!(w[0][2], 7.5);
    }

    #[test]
    fn visit_order_most_missing_first() {
        let ds = small_dataset(100, 11, StrategyKind::Srmi);
        let incomplete = ds.incomplete_vars();
        let visit = visit_sequence(&ds, &incomplete, VisitOrder::MostMissingFirst);
        for w in visit.windows(2) {
            assert!(ds.column(w[0]).n_missing() >= ds.column(w[1]).n_missing());
        }
        let as_given = visit_sequence(&ds, &incomplete, VisitOrder::AsGiven);
        assert_eq!(as_given, incomplete);
    }

    #[test]
    fn chain_abort_names_variable_and_iteration() {
        // 6 rows, 4 incomplete variables with interaction designs: the
        // fit has more columns than rows and must abort structurally.
        let mut cols = Vec::new();
        for (ci, name) in ["a", "b", "c", "d"].iter().enumerate() {
            let values: Vec<f64> = (0..6).map(|i| (i + ci) as f64 * 0.7).collect();
            let mut observed = vec![true; 6];
            observed[ci] = false;
            cols.push(Column {
                name: (*name).into(),
                spec: cont(StrategyKind::SrmiInteractionsX),
                values,
                observed,
            });
        }
        let ds = Dataset::new(cols).unwrap();
        let err = run(&ds, &quick_config(1)).unwrap_err();
        match err {
            Error::ChainAborted { variable, .. } => {
                assert!(["a", "b", "c", "d"].contains(&variable.as_str()));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let ds = small_dataset(50, 2, StrategyKind::Srmi);
        let mut cfg = quick_config(1);
        cfg.m_imputations = 1;
        assert!(run(&ds, &cfg).is_err());
        let mut cfg2 = quick_config(1);
        cfg2.strategy_overrides
            .insert("nope".into(), ImputationStrategy::new(StrategyKind::Srmi));
        assert!(run(&ds, &cfg2).is_err());
    }

    #[test]
    fn strategy_override_applies() {
        let ds = small_dataset(100, 21, StrategyKind::Srmi);
        let mut cfg = quick_config(3);
        cfg.strategy_overrides.insert(
            "x1".into(),
            ImputationStrategy::new(StrategyKind::SrmiExact),
        );
        // runs the exact path without error
        let out = run(&ds, &cfg).unwrap();
        assert_eq!(out.m(), 3);
    }

    #[test]
    fn per_iteration_refit_mode_runs() {
        let ds = small_dataset(100, 23, StrategyKind::SrmiOffset);
        let mut cfg = quick_config(4);
        cfg.refit_missingness_per_iteration = true;
        let out = run(&ds, &cfg).unwrap();
        assert_eq!(out.m(), 3);
    }

    #[test]
    fn two_seeds_agree_on_the_imputed_mean_within_noise() {
        let ds = small_dataset(600, 42, StrategyKind::SrmiMi);
        let mut cfg = quick_config(101);
        cfg.m_imputations = 4;
        cfg.n_iterations = 10;
        let a = run(&ds, &cfg).unwrap();
        cfg.seed = 202;
        let b = run(&ds, &cfg).unwrap();
        let pooled_mean = |set: &ImputedSet| {
            let mut total = 0.0;
            for c in &set.completed {
                total += mean(&c.column(0).values);
            }
            total / set.m() as f64
        };
        let (ma, mb) = (pooled_mean(&a), pooled_mean(&b));
        assert_ne!(ma, mb);
        assert!((ma - mb).abs() < 0.15, "{ma} vs {mb}");
    }
}

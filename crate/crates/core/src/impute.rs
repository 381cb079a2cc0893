//! Per-variable imputers. Each call draws replacement values for one
//! variable's originally-missing cells from the strategy's approximation
//! of the target conditional distribution given the other variables and
//! the missingness indicators:
//!
//! - Srmi: regression on the other variables only
//! - SrmiMi: adds the other variables' missingness indicators
//! - SrmiInteractionsR / SrmiInteractionsX: adds indicator-covariate or
//!   covariate-covariate interactions
//! - SrmiTricube: indicators plus natural cubic splines of the continuous
//!   covariates
//! - SrmiOffset: regression with a fixed offset built from the fitted
//!   missingness models (binary/multinomial log-probability ratios, or
//!   sigma^2-scaled score residuals for a normal target)
//! - SrmiExact: direct draws from the unnormalized product of the target
//!   model and the missingness likelihoods; enumeration for discrete
//!   targets, rejection sampling with a grid fallback for continuous ones.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{CompletedView, ImputationStrategy, StrategyKind, VarKind};
use crate::design::{build_design_matrix, DesignMatrix, DesignSpec, Term};
use crate::error::Result;
use crate::glm::{
    auto_draw_method, draw_linear, draw_logistic, draw_multinomial, fit_linear, fit_logistic,
    fit_multinomial, DrawMethod, FitOptions,
};
use crate::missingness::{
    binary_offset_column, multinomial_offset_columns, normal_offset_column, offset_binary,
    offset_multinomial, MissingnessModelSet,
};

/// Rejection sampling gives up after this many candidates per cell and
/// falls back to grid-based inverse-CDF sampling.
pub const REJECTION_ATTEMPT_CAP: usize = 1000;
/// Grid resolution of the fallback sampler, spanning mean +/- 6 sd.
pub const GRID_POINTS: usize = 512;
/// Minimum rows per missingness pattern for a separate variance estimate.
pub const MIN_PATTERN_ROWS: usize = 5;

pub struct ImputationContext<'a> {
    pub target: usize,
    pub view: CompletedView<'a>,
    pub models: &'a MissingnessModelSet,
    pub strategy: ImputationStrategy,
    /// Sensitivity offset delta for the target's own indicator.
    pub delta: f64,
    /// Parameter draw override; None picks bootstrap, switching to the
    /// stratified variant for rare discrete responses.
    pub draw_method: Option<DrawMethod>,
}

#[derive(Debug)]
pub struct ImputeOutcome {
    /// One replacement per originally-missing row of the target, in row
    /// order. None means the imputation model could not be fit and the
    /// previous iteration's values should be kept.
    pub values: Option<Vec<f64>>,
    pub warnings: Vec<String>,
}

/// Impute the context's target variable; dispatches on its kind.
pub fn impute_variable<R: Rng + ?Sized>(
    ctx: &ImputationContext,
    rng: &mut R,
) -> Result<ImputeOutcome> {
    match ctx.view.dataset.kind(ctx.target) {
        VarKind::Continuous => impute_continuous(ctx, rng),
        VarKind::Binary => impute_binary(ctx, rng),
        VarKind::Categorical { .. } => impute_categorical(ctx, rng),
    }
}

fn missing_rows(ctx: &ImputationContext) -> Vec<usize> {
    ctx.view
        .dataset
        .observed(ctx.target)
        .iter()
        .enumerate()
        .filter_map(|(i, &obs)| (!obs).then_some(i))
        .collect()
}

/// Design terms implied by a strategy, excluding offsets.
pub fn strategy_design(view: &CompletedView, target: usize, kind: StrategyKind) -> DesignSpec {
    let others: Vec<usize> = (0..view.n_vars()).filter(|&v| v != target).collect();
    let incomplete: Vec<usize> = others
        .iter()
        .copied()
        .filter(|&v| !view.dataset.is_complete(v))
        .collect();
    let mut d = DesignSpec::default();
    match kind {
        StrategyKind::Srmi | StrategyKind::SrmiOffset | StrategyKind::SrmiExact => {
            for &v in &others {
                d.push(Term::Main(v));
            }
        }
        StrategyKind::SrmiMi => {
            for &v in &others {
                d.push(Term::Main(v));
            }
            for &k in &incomplete {
                d.push(Term::Indicator(k));
            }
        }
        StrategyKind::SrmiInteractionsR => {
            for &v in &others {
                d.push(Term::Main(v));
            }
            for &k in &incomplete {
                d.push(Term::Indicator(k));
            }
            for &k in &incomplete {
                for &m in &others {
                    if m != k {
                        d.push(Term::IndicatorInteraction { r_var: k, var: m });
                    }
                }
            }
        }
        StrategyKind::SrmiInteractionsX => {
            for &v in &others {
                d.push(Term::Main(v));
            }
            for &k in &incomplete {
                d.push(Term::Indicator(k));
            }
            for (i, &a) in others.iter().enumerate() {
                for &b in &others[i..] {
                    if a == b && view.dataset.kind(a) != VarKind::Continuous {
                        continue; // square of a 0/1 column is the column
                    }
                    d.push(Term::Interaction(a, b));
                }
            }
        }
        StrategyKind::SrmiTricube => {
            for &v in &others {
                if view.dataset.kind(v) == VarKind::Continuous {
                    d.push(Term::Spline { var: v, df: 3 });
                } else {
                    d.push(Term::Main(v));
                }
            }
            for &k in &incomplete {
                d.push(Term::Indicator(k));
            }
        }
    }
    d
}

/// delta * R_target, the only sanctioned use of the target's own indicator.
fn delta_offset(ctx: &ImputationContext) -> Option<Vec<f64>> {
    if ctx.delta == 0.0 {
        return None;
    }
    Some(
        (0..ctx.view.n_rows())
            .map(|i| ctx.delta * ctx.view.indicator(ctx.target, i))
            .collect(),
    )
}

fn combine_offsets(base: Option<Vec<f64>>, extra: Option<Vec<f64>>, n: usize) -> Option<Vec<f64>> {
    match (base, extra) {
        (None, None) => None,
        (Some(b), None) => Some(b),
        (None, Some(e)) => Some(e),
        (Some(b), Some(e)) => Some((0..n).map(|i| b[i] + e[i]).collect()),
    }
}

/// Softmax over linear predictors with an implicit reference level at 0.
/// `lps[s]` is the predictor of level s+1. Shared by the binary and
/// multinomial paths so that a two-level multinomial reproduces the binary
/// decisions bit for bit.
fn categorical_probs(lps: &[f64]) -> Vec<f64> {
    let emax = lps.iter().fold(0.0_f64, |m, &e| m.max(e));
    let mut exps = Vec::with_capacity(lps.len() + 1);
    exps.push((0.0 - emax).exp());
    for &e in lps {
        exps.push((e - emax).exp());
    }
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn draw_level<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut c = 0.0;
    for (s, &p) in probs.iter().enumerate() {
        c += p;
        if u < c {
            return s;
        }
    }
    probs.len() - 1
}

// ---------------------------------------------------------------------------
// Continuous targets
// ---------------------------------------------------------------------------

pub fn impute_continuous<R: Rng + ?Sized>(
    ctx: &ImputationContext,
    rng: &mut R,
) -> Result<ImputeOutcome> {
    let mut warnings = Vec::new();
    let rows = missing_rows(ctx);
    if rows.is_empty() {
        return Ok(ImputeOutcome {
            values: Some(Vec::new()),
            warnings,
        });
    }

    let transform = if ctx.strategy.normal_scores {
        Some(NormalScores::from_observed(
            &ctx.view.dataset.column(ctx.target).observed_values(),
        ))
    } else {
        None
    };
    let raw_y: Vec<f64> = ctx.view.column_values(ctx.target).to_vec();
    let y: Array1<f64> = match &transform {
        Some(t) => raw_y.iter().map(|&v| t.forward(v)).collect(),
        None => Array1::from_vec(raw_y),
    };

    if ctx.strategy.kind == StrategyKind::SrmiExact {
        return impute_continuous_exact(ctx, &y, transform.as_ref(), rng);
    }

    let n = ctx.view.n_rows();
    let mut design = strategy_design(&ctx.view, ctx.target, ctx.strategy.kind);
    let mut offset = delta_offset(ctx);
    if ctx.strategy.kind == StrategyKind::SrmiOffset {
        // sigma^2 from the target-given-others model on the completed data
        let plain = build_design_matrix(&ctx.view, &design, ctx.target)?;
        let base_fit = fit_linear(&plain.x, &y, None, &FitOptions::dropping())?;
        let z = normal_offset_column(ctx.models, &ctx.view);
        if ctx.strategy.offset_as_covariate {
            design.push(Term::Extra {
                name: "sum(Z)".into(),
                values: z,
            });
        } else {
            let scaled: Vec<f64> = z.iter().map(|&v| base_fit.sigma2 * v).collect();
            offset = combine_offsets(offset, Some(scaled), n);
        }
    }
    design.offset = offset;

    let dm = build_design_matrix(&ctx.view, &design, ctx.target)?;
    let fit = fit_linear(&dm.x, &y, Some(&dm.offset), &FitOptions::dropping())?;
    if !fit.dropped.is_empty() {
        warnings.push(format!(
            "collinear columns dropped for {}: {}",
            ctx.view.dataset.name(ctx.target),
            fit.dropped
                .iter()
                .map(|&j| dm.names[j].as_str())
                .collect::<Vec<_>>()
                .join(", ")
        ));
    }
    let method = ctx.draw_method.unwrap_or(DrawMethod::Bootstrap);
    let draw = draw_linear(
        &dm.x,
        &y,
        Some(&dm.offset),
        &fit,
        method,
        &FitOptions::dropping(),
        rng,
    )?;

    // residual variance, optionally split by missingness pattern
    let pattern_vars = if ctx.strategy.variance_by_r_pattern {
        Some(pattern_variances(ctx, &dm, &y, &fit.beta, draw.sigma2 / fit.sigma2, &mut warnings))
    } else {
        None
    };

    let norm = Normal::new(0.0, 1.0).unwrap();
    let mut values = Vec::with_capacity(rows.len());
    for &i in &rows {
        let mut mean = dm.offset[i];
        for c in 0..dm.x.ncols() {
            mean += dm.x[[i, c]] * draw.beta[c];
        }
        let tau2 = match &pattern_vars {
            Some(pv) => pv.variance_for(ctx, i),
            None => draw.sigma2,
        };
        let z: f64 = norm.sample(rng);
        let v = mean + tau2.sqrt() * z;
        values.push(match &transform {
            Some(t) => t.backward(v),
            None => v,
        });
    }
    Ok(ImputeOutcome {
        values: Some(values),
        warnings,
    })
}

struct PatternVariances {
    incomplete_covariates: Vec<usize>,
    variances: BTreeMap<Vec<bool>, f64>,
    pooled: f64,
}

impl PatternVariances {
    fn variance_for(&self, ctx: &ImputationContext, row: usize) -> f64 {
        let key: Vec<bool> = self
            .incomplete_covariates
            .iter()
            .map(|&v| ctx.view.dataset.observed(v)[row])
            .collect();
        *self.variances.get(&key).unwrap_or(&self.pooled)
    }
}

/// Residual variance per observed missingness pattern of the incomplete
/// covariates; patterns with too few rows fall back to the pooled value.
fn pattern_variances(
    ctx: &ImputationContext,
    dm: &DesignMatrix,
    y: &Array1<f64>,
    beta: &Array1<f64>,
    draw_scale: f64,
    warnings: &mut Vec<String>,
) -> PatternVariances {
    let incomplete_covariates: Vec<usize> = (0..ctx.view.n_vars())
        .filter(|&v| v != ctx.target && !ctx.view.dataset.is_complete(v))
        .collect();
    let n = ctx.view.n_rows();
    let mut groups: BTreeMap<Vec<bool>, Vec<f64>> = BTreeMap::new();
    let mut all = Vec::with_capacity(n);
    for i in 0..n {
        let mut fitted = dm.offset[i];
        for c in 0..dm.x.ncols() {
            fitted += dm.x[[i, c]] * beta[c];
        }
        let r = y[i] - fitted;
        let key: Vec<bool> = incomplete_covariates
            .iter()
            .map(|&v| ctx.view.dataset.observed(v)[i])
            .collect();
        groups.entry(key).or_default().push(r * r);
        all.push(r * r);
    }
    let pooled = (all.iter().sum::<f64>() / (all.len().max(2) as f64 - 1.0)) * draw_scale;
    let mut variances = BTreeMap::new();
    let mut sparse = 0usize;
    for (key, sq) in groups {
        if sq.len() < MIN_PATTERN_ROWS {
            sparse += 1;
            continue; // falls back to pooled
        }
        let v = sq.iter().sum::<f64>() / (sq.len() as f64 - 1.0) * draw_scale;
        variances.insert(key, v.max(f64::MIN_POSITIVE));
    }
    if sparse > 0 {
        warnings.push(format!(
            "{sparse} missingness pattern(s) below {MIN_PATTERN_ROWS} rows for {}; pooled variance used",
            ctx.view.dataset.name(ctx.target)
        ));
    }
    PatternVariances {
        incomplete_covariates,
        variances,
        pooled: pooled.max(f64::MIN_POSITIVE),
    }
}

fn impute_continuous_exact<R: Rng + ?Sized>(
    ctx: &ImputationContext,
    y: &Array1<f64>,
    transform: Option<&NormalScores>,
    rng: &mut R,
) -> Result<ImputeOutcome> {
    let mut warnings = Vec::new();
    let rows = missing_rows(ctx);
    let design = strategy_design(&ctx.view, ctx.target, StrategyKind::Srmi);
    let dm = build_design_matrix(&ctx.view, &design, ctx.target)?;
    let fit = fit_linear(&dm.x, y, None, &FitOptions::dropping())?;
    let method = ctx.draw_method.unwrap_or(DrawMethod::Bootstrap);
    let draw = draw_linear(&dm.x, y, None, &fit, method, &FitOptions::dropping(), rng)?;

    let mut fallbacks = 0usize;
    let mut values = Vec::with_capacity(rows.len());
    for &i in &rows {
        let mut mean = 0.0;
        for c in 0..dm.x.ncols() {
            mean += dm.x[[i, c]] * draw.beta[c];
        }
        let (v, grid) = rejection_sample_exact(ctx, i, mean, draw.sigma2, transform, rng);
        if grid {
            fallbacks += 1;
        }
        values.push(match transform {
            Some(t) => t.backward(v),
            None => v,
        });
    }
    if fallbacks > 0 {
        warnings.push(format!(
            "rejection sampler hit the {REJECTION_ATTEMPT_CAP}-attempt cap for {fallbacks} cell(s); grid fallback used"
        ));
    }
    Ok(ImputeOutcome {
        values: Some(values),
        warnings,
    })
}

/// Likelihood of the observed missingness indicators at a candidate target
/// value (on the original scale): prod over models of p^R (1-p)^(1-R).
fn acceptance_probability(ctx: &ImputationContext, row: usize, candidate: f64) -> f64 {
    let mut acc = 1.0;
    for m in &ctx.models.models {
        let p = m.prob(&ctx.view, row, Some((ctx.target, candidate)));
        let r = ctx.view.indicator(m.var, row);
        acc *= if r == 1.0 { p } else { 1.0 - p };
    }
    acc
}

/// One draw of the target for a single row from the distribution
/// proportional to  N(mean, sigma2) * prod_k f(R_k | X, target).
/// Candidates come from the normal; a candidate is accepted when a uniform
/// falls below the missingness likelihood (a product of probabilities, so
/// no envelope constant is needed). After the attempt cap, samples from a
/// 512-point grid over mean +/- 6 sd by inverse CDF. Returns
/// (value, hit_grid_fallback); the value is on the (possibly transformed)
/// modelling scale.
pub fn rejection_sample_exact<R: Rng + ?Sized>(
    ctx: &ImputationContext,
    row: usize,
    mean: f64,
    sigma2: f64,
    transform: Option<&NormalScores>,
    rng: &mut R,
) -> (f64, bool) {
    let sd = sigma2.sqrt().max(1e-12);
    let norm = Normal::new(mean, sd).unwrap();
    let original = |c: f64| match transform {
        Some(t) => t.backward(c),
        None => c,
    };
    for _ in 0..REJECTION_ATTEMPT_CAP {
        let c: f64 = norm.sample(rng);
        let u: f64 = rng.random();
        if u < acceptance_probability(ctx, row, original(c)) {
            return (c, false);
        }
    }
    // grid fallback: unnormalized density on an equally spaced grid
    let lo = mean - 6.0 * sd;
    let hi = mean + 6.0 * sd;
    let step = (hi - lo) / (GRID_POINTS as f64 - 1.0);
    let mut weights = Vec::with_capacity(GRID_POINTS);
    let mut total = 0.0;
    for g in 0..GRID_POINTS {
        let c = lo + g as f64 * step;
        let z = (c - mean) / sd;
        let w = (-0.5 * z * z).exp() * acceptance_probability(ctx, row, original(c));
        total += w;
        weights.push(w);
    }
    let u: f64 = rng.random::<f64>() * total;
    let mut cum = 0.0;
    for g in 0..GRID_POINTS {
        cum += weights[g];
        if u < cum {
            return (lo + g as f64 * step, true);
        }
    }
    (mean, true)
}

/// Root of the derivative of the log exact density in the target:
/// -(x - mean)/sigma2 + sum_k phi_k (R_k - PRk(x)) = 0.
/// The function is strictly decreasing, so safeguarded Newton with a
/// bisection bracket converges; without a sign change in
/// mean +/- 8 sd the candidate-model mean is returned with a warning flag.
pub fn mode_solve(ctx: &ImputationContext, row: usize, mean: f64, sigma2: f64) -> (f64, bool) {
    let g = |x: f64| -> f64 {
        let mut s = -(x - mean) / sigma2;
        for m in &ctx.models.models {
            let phi = m.coefficient_for(ctx.target).unwrap_or(0.0);
            let p = m.prob(&ctx.view, row, Some((ctx.target, x)));
            s += phi * (ctx.view.indicator(m.var, row) - p);
        }
        s
    };
    let gprime = |x: f64| -> f64 {
        let mut s = -1.0 / sigma2;
        for m in &ctx.models.models {
            let phi = m.coefficient_for(ctx.target).unwrap_or(0.0);
            let p = m.prob(&ctx.view, row, Some((ctx.target, x)));
            s -= phi * phi * p * (1.0 - p);
        }
        s
    };
    let sd = sigma2.sqrt();
    let mut lo = mean - 8.0 * sd;
    let mut hi = mean + 8.0 * sd;
    if !(g(lo) > 0.0 && g(hi) < 0.0) {
        return (mean, true);
    }
    let mut x = mean;
    for _ in 0..200 {
        let gx = g(x);
        if gx.abs() < 1e-8 {
            return (x, false);
        }
        if gx > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let mut next = x - gx / gprime(x);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        x = next;
    }
    (x, false)
}

// ---------------------------------------------------------------------------
// Binary targets
// ---------------------------------------------------------------------------

pub fn impute_binary<R: Rng + ?Sized>(
    ctx: &ImputationContext,
    rng: &mut R,
) -> Result<ImputeOutcome> {
    let mut warnings = Vec::new();
    let rows = missing_rows(ctx);
    if rows.is_empty() {
        return Ok(ImputeOutcome {
            values: Some(Vec::new()),
            warnings,
        });
    }
    let n = ctx.view.n_rows();
    let y: Array1<f64> = Array1::from_vec(ctx.view.column_values(ctx.target).to_vec());

    if ctx.strategy.kind == StrategyKind::SrmiExact {
        // candidate model: the plain regression of the target on the others;
        // the exact correction enters through the offsets at drawn phi.
        let design = strategy_design(&ctx.view, ctx.target, StrategyKind::Srmi);
        let dm = build_design_matrix(&ctx.view, &design, ctx.target)?;
        let (fit, used_firth, ok) = logistic_ladder(&dm.x, &y, None, &mut warnings, ctx)?;
        if !ok {
            return Ok(ImputeOutcome {
                values: None,
                warnings,
            });
        }
        let method = ctx
            .draw_method
            .unwrap_or_else(|| auto_draw_method(&y, 2));
        let draw = draw_logistic(
            &dm.x,
            &y,
            None,
            used_firth,
            &fit,
            method,
            &FitOptions::dropping(),
            rng,
        )?;
        let mut values = Vec::with_capacity(rows.len());
        let mut clamps = 0usize;
        for &i in &rows {
            let mut lp = 0.0;
            for c in 0..dm.x.ncols() {
                lp += dm.x[[i, c]] * draw.beta[c];
            }
            let (_, zsum, c) = offset_binary(ctx.models, &ctx.view, i);
            clamps += c;
            let probs = categorical_probs(&[lp + zsum]);
            values.push(draw_level(&probs, rng) as f64);
        }
        if clamps > 0 {
            warnings.push(format!("{clamps} probability clamp(s) in exact binary offsets"));
        }
        return Ok(ImputeOutcome {
            values: Some(values),
            warnings,
        });
    }

    let mut design = strategy_design(&ctx.view, ctx.target, ctx.strategy.kind);
    let mut offset = delta_offset(ctx);
    if ctx.strategy.kind == StrategyKind::SrmiOffset {
        let (z, clamps) = binary_offset_column(ctx.models, &ctx.view);
        if clamps > 0 {
            warnings.push(format!("{clamps} probability clamp(s) in binary offsets"));
        }
        if ctx.strategy.offset_as_covariate {
            design.push(Term::Extra {
                name: "sum(Z)".into(),
                values: z,
            });
        } else {
            offset = combine_offsets(offset, Some(z), n);
        }
    }
    design.offset = offset;
    let dm = build_design_matrix(&ctx.view, &design, ctx.target)?;
    let off = Some(&dm.offset);
    let (fit, used_firth, ok) = logistic_ladder(&dm.x, &y, off, &mut warnings, ctx)?;
    if !ok {
        return Ok(ImputeOutcome {
            values: None,
            warnings,
        });
    }
    let method = ctx
        .draw_method
        .unwrap_or_else(|| auto_draw_method(&y, 2));
    let draw = draw_logistic(
        &dm.x,
        &y,
        off,
        used_firth,
        &fit,
        method,
        &FitOptions::dropping(),
        rng,
    )?;
    let mut values = Vec::with_capacity(rows.len());
    for &i in &rows {
        let mut lp = dm.offset[i];
        for c in 0..dm.x.ncols() {
            lp += dm.x[[i, c]] * draw.beta[c];
        }
        let probs = categorical_probs(&[lp]);
        values.push(draw_level(&probs, rng) as f64);
    }
    Ok(ImputeOutcome {
        values: Some(values),
        warnings,
    })
}

/// Fit, retrying with the Firth penalty on non-convergence. Returns
/// (fit, used_firth, usable); usable=false means both attempts failed and
/// the caller should keep the previous iteration's values.
fn logistic_ladder(
    x: &Array2<f64>,
    y: &Array1<f64>,
    offset: Option<&Array1<f64>>,
    warnings: &mut Vec<String>,
    ctx: &ImputationContext,
) -> Result<(crate::glm::LogisticFit, bool, bool)> {
    let opts = FitOptions::dropping();
    let fit = fit_logistic(x, y, offset, false, &opts)?;
    let name = ctx.view.dataset.name(ctx.target);
    if !fit.dropped.is_empty() {
        warnings.push(format!(
            "{} collinear column(s) dropped for {name}",
            fit.dropped.len()
        ));
    }
    if fit.converged {
        return Ok((fit, false, true));
    }
    warnings.push(format!("imputation model for {name} refit with Firth penalty"));
    let firth_fit = fit_logistic(x, y, offset, true, &opts)?;
    if firth_fit.converged {
        return Ok((firth_fit, true, true));
    }
    warnings.push(format!(
        "imputation model for {name} failed to converge; keeping previous values"
    ));
    Ok((firth_fit, true, false))
}

// ---------------------------------------------------------------------------
// Categorical targets
// ---------------------------------------------------------------------------

pub fn impute_categorical<R: Rng + ?Sized>(
    ctx: &ImputationContext,
    rng: &mut R,
) -> Result<ImputeOutcome> {
    let mut warnings = Vec::new();
    let rows = missing_rows(ctx);
    if rows.is_empty() {
        return Ok(ImputeOutcome {
            values: Some(Vec::new()),
            warnings,
        });
    }
    let n_levels = ctx.view.dataset.kind(ctx.target).n_levels();
    let s_levels = n_levels - 1;
    let y: Array1<f64> = Array1::from_vec(ctx.view.column_values(ctx.target).to_vec());

    if ctx.strategy.kind == StrategyKind::SrmiExact {
        let design = strategy_design(&ctx.view, ctx.target, StrategyKind::Srmi);
        let dm = build_design_matrix(&ctx.view, &design, ctx.target)?;
        let (fit, ok) = multinomial_ladder(&dm.x, &y, n_levels, None, &mut warnings, ctx)?;
        if !ok {
            return Ok(ImputeOutcome {
                values: None,
                warnings,
            });
        }
        let method = ctx
            .draw_method
            .unwrap_or_else(|| auto_draw_method(&y, n_levels));
        let draw = draw_multinomial(
            &dm.x,
            &y,
            n_levels,
            None,
            &fit,
            method,
            &FitOptions::dropping(),
            rng,
        )?;
        let mut values = Vec::with_capacity(rows.len());
        let mut clamps = 0usize;
        for &i in &rows {
            let (_, zsums, c) = offset_multinomial(ctx.models, &ctx.view, i, n_levels);
            clamps += c;
            let mut lps = Vec::with_capacity(s_levels);
            for s in 1..n_levels {
                let mut lp = zsums[s];
                for c in 0..dm.x.ncols() {
                    lp += dm.x[[i, c]] * draw.beta[[s, c]];
                }
                lps.push(lp);
            }
            let probs = categorical_probs(&lps);
            values.push(draw_level(&probs, rng) as f64);
        }
        if clamps > 0 {
            warnings.push(format!(
                "{clamps} probability clamp(s) in exact multinomial offsets"
            ));
        }
        return Ok(ImputeOutcome {
            values: Some(values),
            warnings,
        });
    }

    let mut design = strategy_design(&ctx.view, ctx.target, ctx.strategy.kind);
    let mut offsets: Option<Array2<f64>> = None;
    if ctx.strategy.kind == StrategyKind::SrmiOffset {
        let (z, clamps) = multinomial_offset_columns(ctx.models, &ctx.view, n_levels);
        if clamps > 0 {
            warnings.push(format!(
                "{clamps} probability clamp(s) in multinomial offsets"
            ));
        }
        offsets = Some(z);
    }
    if let Some(d) = delta_offset(ctx) {
        // the delta offset applies to every non-reference level
        let mut o = offsets.unwrap_or_else(|| Array2::zeros((ctx.view.n_rows(), s_levels)));
        for i in 0..ctx.view.n_rows() {
            for s in 0..s_levels {
                o[[i, s]] += d[i];
            }
        }
        offsets = Some(o);
    }
    design.offset = None;
    let dm = build_design_matrix(&ctx.view, &design, ctx.target)?;
    let (fit, ok) = multinomial_ladder(&dm.x, &y, n_levels, offsets.as_ref(), &mut warnings, ctx)?;
    if !ok {
        return Ok(ImputeOutcome {
            values: None,
            warnings,
        });
    }
    let method = ctx
        .draw_method
        .unwrap_or_else(|| auto_draw_method(&y, n_levels));
    let draw = draw_multinomial(
        &dm.x,
        &y,
        n_levels,
        offsets.as_ref(),
        &fit,
        method,
        &FitOptions::dropping(),
        rng,
    )?;
    let mut values = Vec::with_capacity(rows.len());
    for &i in &rows {
        let mut lps = Vec::with_capacity(s_levels);
        for s in 1..n_levels {
            let mut lp = match &offsets {
                Some(o) => o[[i, s - 1]],
                None => 0.0,
            };
            for c in 0..dm.x.ncols() {
                lp += dm.x[[i, c]] * draw.beta[[s, c]];
            }
            lps.push(lp);
        }
        let probs = categorical_probs(&lps);
        values.push(draw_level(&probs, rng) as f64);
    }
    Ok(ImputeOutcome {
        values: Some(values),
        warnings,
    })
}

/// Multinomial analogue of the logistic ladder; the stabilising fallback
/// is a small ridge penalty.
fn multinomial_ladder(
    x: &Array2<f64>,
    y: &Array1<f64>,
    n_levels: usize,
    offsets: Option<&Array2<f64>>,
    warnings: &mut Vec<String>,
    ctx: &ImputationContext,
) -> Result<(crate::glm::MultinomialFit, bool)> {
    let opts = FitOptions::dropping();
    let fit = fit_multinomial(x, y, n_levels, offsets, &opts)?;
    let name = ctx.view.dataset.name(ctx.target);
    if !fit.dropped.is_empty() {
        warnings.push(format!(
            "{} collinear column(s) dropped for {name}",
            fit.dropped.len()
        ));
    }
    if fit.converged {
        return Ok((fit, true));
    }
    warnings.push(format!(
        "imputation model for {name} refit with ridge stabilisation"
    ));
    let mut ridge_opts = FitOptions::dropping();
    ridge_opts.ridge = 1.0;
    let ridged = fit_multinomial(x, y, n_levels, offsets, &ridge_opts)?;
    if ridged.converged {
        return Ok((ridged, true));
    }
    warnings.push(format!(
        "imputation model for {name} failed to converge; keeping previous values"
    ));
    Ok((ridged, false))
}

// ---------------------------------------------------------------------------
// Normal-scores transform (general continuous targets)
// ---------------------------------------------------------------------------

/// Monotone rank-based map between the observed marginal of a variable and
/// the standard normal, built from the originally observed values. Forward
/// and backward are piecewise-linear with linear tail extension, so the
/// round trip is exact on the observed support.
#[derive(Debug, Clone)]
pub struct NormalScores {
    values: Vec<f64>,
    scores: Vec<f64>,
}

impl NormalScores {
    pub fn from_observed(observed: &[f64]) -> Self {
        use statrs::distribution::{ContinuousCDF, Normal as SNormal};
        let mut sorted = observed.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = sorted.len();
        let snorm = SNormal::new(0.0, 1.0).unwrap();
        // Blom plotting positions, averaged over ties
        let mut values = Vec::new();
        let mut scores = Vec::new();
        let mut i = 0;
        while i < m {
            let mut j = i;
            while j + 1 < m && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            let mid = (i + j) as f64 / 2.0;
            let p = (mid + 1.0 - 0.375) / (m as f64 + 0.25);
            values.push(sorted[i]);
            scores.push(snorm.inverse_cdf(p.clamp(1e-12, 1.0 - 1e-12)));
            i = j + 1;
        }
        if values.len() == 1 {
            // degenerate support: make the maps the identity around the point
            let v = values[0];
            values = vec![v - 0.5, v + 0.5];
            scores = vec![-0.5, 0.5];
        }
        NormalScores { values, scores }
    }

    pub fn forward(&self, v: f64) -> f64 {
        interp(&self.values, &self.scores, v)
    }

    pub fn backward(&self, z: f64) -> f64 {
        interp(&self.scores, &self.values, z)
    }
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let k = xs.len();
    if x <= xs[0] {
        let slope = (ys[1] - ys[0]) / (xs[1] - xs[0]);
        return ys[0] + slope * (x - xs[0]);
    }
    if x >= xs[k - 1] {
        let slope = (ys[k - 1] - ys[k - 2]) / (xs[k - 1] - xs[k - 2]);
        return ys[k - 1] + slope * (x - xs[k - 1]);
    }
    let mut lo = 0;
    let mut hi = k - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if xs[mid] <= x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = (x - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + t * (ys[hi] - ys[lo])
}

//! Response-indicator models: per incomplete variable j, a logistic fit of
//! R_j on all other variables, refit on the current imputed data. From
//! these we compute counterfactual observation probabilities PRj(s) (the
//! probability that X_j is observed with the imputation target set to
//! level s, other covariates at their current values) and the derived
//! offset variables Z used by the offset and exact imputation strategies.
//!
//! Two structural rules are enforced by construction: the model for R_j
//! never includes X_j itself, and never includes other R indicators.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::data::{CompletedView, VarKind};
use crate::design::{build_design_matrix, DesignSpec};
use crate::error::Result;
use crate::glm::{auto_draw_method, draw_logistic, fit_logistic, FitOptions};
use crate::stats::expit;

/// Probabilities are clamped to [PROB_CLAMP, 1 - PROB_CLAMP] before any
/// log-ratio; the binary offset diverges as fitted probabilities reach 0/1.
pub const PROB_CLAMP: f64 = 1e-6;

/// Variables with fewer missing or observed rows than this get no model;
/// their offsets are zero.
pub const MIN_GROUP: usize = 10;

#[derive(Debug, Clone)]
pub struct IndicatorModel {
    /// The variable whose observedness this model describes.
    pub var: usize,
    /// Covariates (all variables except `var`), ascending; each paired with
    /// its coefficient range in `coef` (after the intercept at 0).
    pub layout: Vec<(usize, std::ops::Range<usize>)>,
    /// Intercept followed by the expanded covariate coefficients. Holds the
    /// drawn values when the model set was built with `draw`.
    pub coef: Array1<f64>,
    /// Coefficient covariance of the underlying fit.
    pub cov: Array2<f64>,
    pub converged: bool,
    pub used_firth: bool,
}

impl IndicatorModel {
    /// Linear predictor at a row, optionally overriding one variable's
    /// value (used to plug in counterfactual target levels).
    pub fn linear_predictor(
        &self,
        view: &CompletedView,
        row: usize,
        override_var: Option<(usize, f64)>,
    ) -> f64 {
        let mut lp = self.coef[0];
        for (var, range) in &self.layout {
            let v = match override_var {
                Some((ov, val)) if ov == *var => val,
                _ => view.value(*var, row),
            };
            match view.dataset.kind(*var) {
                VarKind::Continuous | VarKind::Binary => {
                    lp += self.coef[range.start] * v;
                }
                VarKind::Categorical { .. } => {
                    let level = v as usize;
                    if level >= 1 {
                        lp += self.coef[range.start + level - 1];
                    }
                }
            }
        }
        lp
    }

    pub fn prob(&self, view: &CompletedView, row: usize, override_var: Option<(usize, f64)>) -> f64 {
        expit(self.linear_predictor(view, row, override_var))
    }

    /// Coefficient on a continuous or binary covariate (phi_{j,var}).
    pub fn coefficient_for(&self, var: usize) -> Option<f64> {
        self.layout
            .iter()
            .find(|(v, _)| *v == var)
            .map(|(_, r)| self.coef[r.start])
    }
}

#[derive(Debug, Clone)]
pub struct MissingnessModelSet {
    pub target: usize,
    /// One model per incomplete variable other than the target, ascending.
    pub models: Vec<IndicatorModel>,
    /// Incomplete variables that were skipped (too few observed or missing
    /// rows); their offsets are zero.
    pub skipped: Vec<usize>,
    pub drawn: bool,
}

impl MissingnessModelSet {
    pub fn empty(target: usize) -> Self {
        MissingnessModelSet {
            target,
            models: Vec::new(),
            skipped: Vec::new(),
            drawn: false,
        }
    }
}

/// Fit one logistic model of R_j on X_(-j) per incomplete variable
/// j != target, on all n rows of the current imputed data. With `draw`,
/// each model's coefficients are replaced by one stochastic draw.
/// Returns the model set plus human-readable warnings.
pub fn fit_missingness_models<R: Rng + ?Sized>(
    view: &CompletedView,
    target: usize,
    draw: bool,
    rng: &mut R,
) -> Result<(MissingnessModelSet, Vec<String>)> {
    let mut set = MissingnessModelSet::empty(target);
    set.drawn = draw;
    let mut warnings = Vec::new();
    let opts = FitOptions::dropping();

    for j in view.dataset.incomplete_vars() {
        if j == target {
            continue;
        }
        let col = view.dataset.column(j);
        let n_missing = col.n_missing();
        let n_observed = view.n_rows() - n_missing;
        if n_missing < MIN_GROUP || n_observed < MIN_GROUP {
            warnings.push(format!(
                "missingness model for {} skipped ({n_observed} observed / {n_missing} missing); offset forced to 0",
                col.name
            ));
            set.skipped.push(j);
            continue;
        }

        let covariates: Vec<usize> = (0..view.n_vars()).filter(|&v| v != j).collect();
        let design = DesignSpec::mains(covariates.iter().copied());
        let dm = build_design_matrix(view, &design, j)?;
        let response: Array1<f64> = (0..view.n_rows()).map(|i| view.indicator(j, i)).collect();

        let mut fit = fit_logistic(&dm.x, &response, None, false, &opts)?;
        let mut used_firth = false;
        if !fit.converged {
            fit = fit_logistic(&dm.x, &response, None, true, &opts)?;
            used_firth = true;
            warnings.push(format!(
                "missingness model for {} refit with Firth penalty",
                col.name
            ));
        }

        let coef = if draw {
            let method = auto_draw_method(&response, 2);
            let d = draw_logistic(&dm.x, &response, None, used_firth, &fit, method, &opts, rng)?;
            d.beta
        } else {
            fit.beta.clone()
        };

        // column ranges: intercept at 0, then each covariate's expansion
        let mut layout = Vec::with_capacity(covariates.len());
        let mut pos = 1usize;
        for &v in &covariates {
            let width = match view.dataset.kind(v) {
                VarKind::Continuous | VarKind::Binary => 1,
                VarKind::Categorical { max_level } => max_level,
            };
            layout.push((v, pos..pos + width));
            pos += width;
        }
        debug_assert_eq!(pos, coef.len());

        set.models.push(IndicatorModel {
            var: j,
            layout,
            coef,
            cov: fit.cov,
            converged: fit.converged,
            used_firth,
        });
    }
    Ok((set, warnings))
}

fn clamp_prob(p: f64, clamps: &mut usize) -> f64 {
    if p < PROB_CLAMP {
        *clamps += 1;
        PROB_CLAMP
    } else if p > 1.0 - PROB_CLAMP {
        *clamps += 1;
        1.0 - PROB_CLAMP
    } else {
        p
    }
}

/// PRj(s) for each model and each requested target level, clamped away
/// from {0, 1}. Returns ([model][level], clamp count).
pub fn counterfactual_probs(
    set: &MissingnessModelSet,
    view: &CompletedView,
    row: usize,
    levels: &[f64],
) -> (Vec<Vec<f64>>, usize) {
    let mut clamps = 0usize;
    let probs = set
        .models
        .iter()
        .map(|m| {
            levels
                .iter()
                .map(|&s| clamp_prob(m.prob(view, row, Some((set.target, s))), &mut clamps))
                .collect()
        })
        .collect();
    (probs, clamps)
}

/// Binary-target offsets for one row:
/// Z_j = R_j log[PRj(1)/PRj(0)] + (1-R_j) log[(1-PRj(1))/(1-PRj(0))].
/// Returns (per-model Z, their sum, clamp count).
pub fn offset_binary(
    set: &MissingnessModelSet,
    view: &CompletedView,
    row: usize,
) -> (Vec<f64>, f64, usize) {
    let (probs, clamps) = counterfactual_probs(set, view, row, &[0.0, 1.0]);
    let mut zs = Vec::with_capacity(set.models.len());
    let mut sum = 0.0;
    for (m, pr) in set.models.iter().zip(&probs) {
        let (p0, p1) = (pr[0], pr[1]);
        let r = view.indicator(m.var, row);
        let z = r * (p1 / p0).ln() + (1.0 - r) * ((1.0 - p1) / (1.0 - p0)).ln();
        sum += z;
        zs.push(z);
    }
    (zs, sum, clamps)
}

/// Categorical-target offsets for one row: Z_js for levels s = 0..=S with
/// Z_j0 = 0. Returns (models x levels matrix, per-level sums, clamp count).
pub fn offset_multinomial(
    set: &MissingnessModelSet,
    view: &CompletedView,
    row: usize,
    n_levels: usize,
) -> (Array2<f64>, Vec<f64>, usize) {
    let levels: Vec<f64> = (0..n_levels).map(|s| s as f64).collect();
    let (probs, clamps) = counterfactual_probs(set, view, row, &levels);
    let mut z = Array2::<f64>::zeros((set.models.len(), n_levels));
    let mut sums = vec![0.0; n_levels];
    for (mi, (m, pr)) in set.models.iter().zip(&probs).enumerate() {
        let p0 = pr[0];
        let r = view.indicator(m.var, row);
        for s in 1..n_levels {
            let ps = pr[s];
            let zjs = r * (ps / p0).ln() + (1.0 - r) * ((1.0 - ps) / (1.0 - p0)).ln();
            z[[mi, s]] = zjs;
            sums[s] += zjs;
        }
    }
    (z, sums, clamps)
}

/// Continuous-target offsets for one row:
/// Z_j = phi_{j,target} (R_j - PRj(X_target_current)).
pub fn offset_normal(
    set: &MissingnessModelSet,
    view: &CompletedView,
    row: usize,
) -> (Vec<f64>, f64) {
    let mut zs = Vec::with_capacity(set.models.len());
    let mut sum = 0.0;
    for m in &set.models {
        let phi = m.coefficient_for(set.target).unwrap_or(0.0);
        let pr = m.prob(view, row, None);
        let z = phi * (view.indicator(m.var, row) - pr);
        sum += z;
        zs.push(z);
    }
    (zs, sum)
}

/// Column of binary offset sums over all rows.
pub fn binary_offset_column(
    set: &MissingnessModelSet,
    view: &CompletedView,
) -> (Vec<f64>, usize) {
    let mut clamps = 0;
    let col = (0..view.n_rows())
        .map(|i| {
            let (_, sum, c) = offset_binary(set, view, i);
            clamps += c;
            sum
        })
        .collect();
    (col, clamps)
}

/// n x S matrix of per-level offset sums (levels 1..=S) over all rows.
pub fn multinomial_offset_columns(
    set: &MissingnessModelSet,
    view: &CompletedView,
    n_levels: usize,
) -> (Array2<f64>, usize) {
    let n = view.n_rows();
    let mut out = Array2::<f64>::zeros((n, n_levels - 1));
    let mut clamps = 0;
    for i in 0..n {
        let (_, sums, c) = offset_multinomial(set, view, i, n_levels);
        clamps += c;
        for s in 1..n_levels {
            out[[i, s - 1]] = sums[s];
        }
    }
    (out, clamps)
}

/// Column of continuous offset sums (unscaled by sigma^2) over all rows.
pub fn normal_offset_column(set: &MissingnessModelSet, view: &CompletedView) -> Vec<f64> {
    (0..view.n_rows())
        .map(|i| offset_normal(set, view, i).1)
        .collect()
}

//! Design-matrix construction for imputation and missingness models:
//! main effects (with dummy coding for categoricals), covariate-covariate
//! interactions, missingness indicators, indicator-covariate interactions,
//! natural cubic spline bases, and an optional fixed offset column.

use ndarray::{Array1, Array2};

use crate::data::{CompletedView, VarKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    /// X_var; categorical variables expand to dummies against level 0.
    Main(usize),
    /// Natural cubic spline of a continuous variable with `df` basis columns.
    Spline { var: usize, df: usize },
    /// X_a * X_b. a == b produces a square term (continuous only).
    Interaction(usize, usize),
    /// Missingness indicator R_var.
    Indicator(usize),
    /// R_r_var * X_var.
    IndicatorInteraction { r_var: usize, var: usize },
    /// A literal column supplied by the caller (e.g. an offset sum entered
    /// as a free covariate).
    Extra { name: String, values: Vec<f64> },
}

impl Term {
    fn group(&self) -> u8 {
        // Fixed layout: intercept, mains, splines, X*X, R, R*X, extras.
        match self {
            Term::Main(_) => 0,
            Term::Spline { .. } => 1,
            Term::Interaction(..) => 2,
            Term::Indicator(_) => 3,
            Term::IndicatorInteraction { .. } => 4,
            Term::Extra { .. } => 5,
        }
    }

    fn touches(&self, var: usize) -> bool {
        match *self {
            Term::Main(v) => v == var,
            Term::Spline { var: v, .. } => v == var,
            Term::Interaction(a, b) => a == var || b == var,
            Term::Indicator(r) => r == var,
            Term::IndicatorInteraction { r_var, var: v } => r_var == var || v == var,
            Term::Extra { .. } => false,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DesignSpec {
    pub terms: Vec<Term>,
    /// Fixed offset added to the linear predictor, one entry per row.
    pub offset: Option<Vec<f64>>,
}

impl DesignSpec {
    pub fn mains(vars: impl IntoIterator<Item = usize>) -> Self {
        DesignSpec {
            terms: vars.into_iter().map(Term::Main).collect(),
            offset: None,
        }
    }

    pub fn push(&mut self, term: Term) {
        self.terms.push(term);
    }
}

/// A built design: row-major matrix, per-row offset (zeros when absent),
/// and one diagnostic name per column.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub x: Array2<f64>,
    pub offset: Array1<f64>,
    pub names: Vec<String>,
}

/// Natural cubic spline basis with `df` columns: the identity plus df-1
/// curvature functions, linear beyond the boundary knots. Interior knots
/// sit at evenly spaced quantiles i/df of the supplied values, boundary
/// knots at the min and max.
#[derive(Debug, Clone)]
pub struct NaturalSplineBasis {
    knots: Vec<f64>,
}

impl NaturalSplineBasis {
    pub fn from_values(values: &[f64], df: usize) -> Result<Self> {
        if df < 3 {
            return Err(Error::Config(format!("spline df must be >= 3, got {df}")));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut knots = Vec::with_capacity(df + 1);
        knots.push(sorted[0]);
        for i in 1..df {
            knots.push(quantile_sorted(&sorted, i as f64 / df as f64));
        }
        knots.push(sorted[sorted.len() - 1]);
        knots.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        if knots.len() < 3 {
            return Err(Error::Config(
                "too few distinct values for a spline basis".into(),
            ));
        }
        Ok(NaturalSplineBasis { knots })
    }

    pub fn from_knots(knots: Vec<f64>) -> Self {
        NaturalSplineBasis { knots }
    }

    pub fn df(&self) -> usize {
        self.knots.len() - 1
    }

    /// Basis values at `x`: [x, N_1(x), ..., N_{K-2}(x)] where
    /// N_k(x) = d_k(x) - d_{K-2}(x) and
    /// d_k(x) = [(x - k_k)_+^3 - (x - k_last)_+^3] / (k_last - k_k).
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let k = &self.knots;
        let last = k.len() - 1;
        let d = |idx: usize| -> f64 {
            (pos_cube(x - k[idx]) - pos_cube(x - k[last])) / (k[last] - k[idx])
        };
        let mut out = Vec::with_capacity(self.df());
        out.push(x);
        let d_penult = d(last - 1);
        for idx in 0..(last - 1) {
            out.push(d(idx) - d_penult);
        }
        out
    }
}

fn pos_cube(u: f64) -> f64 {
    if u > 0.0 {
        u * u * u
    } else {
        0.0
    }
}

/// Type-7 quantile (linear interpolation) of pre-sorted values.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n as f64 - 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Build the design matrix for imputing or modelling `target` from the
/// current fully-populated view. Column order is deterministic:
/// intercept, mains, splines, covariate interactions, indicators,
/// indicator interactions, extras; within a group, terms keep their
/// insertion order.
pub fn build_design_matrix(
    view: &CompletedView,
    design: &DesignSpec,
    target: usize,
) -> Result<DesignMatrix> {
    let n = view.n_rows();
    for term in &design.terms {
        if term.touches(target) {
            return Err(Error::Config(format!(
                "design for '{}' references the target itself",
                view.dataset.name(target)
            )));
        }
    }
    for (i, a) in design.terms.iter().enumerate() {
        if design.terms[i + 1..].contains(a) {
            return Err(Error::Config("duplicate design term".into()));
        }
    }
    if let Some(off) = &design.offset {
        if off.len() != n {
            return Err(Error::Config("offset length != number of rows".into()));
        }
        if off.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("offset contains non-finite values".into()));
        }
    }

    let mut order: Vec<usize> = (0..design.terms.len()).collect();
    order.sort_by_key(|&i| design.terms[i].group());

    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut names: Vec<String> = vec!["(Intercept)".into()];

    for &ti in &order {
        match &design.terms[ti] {
            Term::Main(v) => push_main(view, *v, &mut cols, &mut names),
            Term::Spline { var, df } => {
                if view.dataset.kind(*var) != VarKind::Continuous {
                    return Err(Error::Config(format!(
                        "spline term on non-continuous variable '{}'",
                        view.dataset.name(*var)
                    )));
                }
                let basis = NaturalSplineBasis::from_values(view.column_values(*var), *df)?;
                let name = view.dataset.name(*var);
                let width = basis.df();
                let mut spline_cols: Vec<Vec<f64>> =
                    (0..width).map(|_| Vec::with_capacity(n)).collect();
                for i in 0..n {
                    let b = basis.eval(view.value(*var, i));
                    for (c, &bv) in b.iter().enumerate() {
                        spline_cols[c].push(bv);
                    }
                }
                for (c, col) in spline_cols.into_iter().enumerate() {
                    cols.push(col);
                    names.push(format!("ns({name},{df})[{}]", c + 1));
                }
            }
            Term::Interaction(a, b) => {
                if a == b && view.dataset.kind(*a) != VarKind::Continuous {
                    return Err(Error::Config(format!(
                        "square term on non-continuous variable '{}'",
                        view.dataset.name(*a)
                    )));
                }
                let ca = expanded(view, *a);
                let cb = expanded(view, *b);
                for (na, va) in &ca {
                    for (nb, vb) in &cb {
                        let col: Vec<f64> =
                            (0..n).map(|i| va[i] * vb[i]).collect();
                        cols.push(col);
                        names.push(format!("{na}:{nb}"));
                    }
                }
            }
            Term::Indicator(r) => {
                let col: Vec<f64> = (0..n).map(|i| view.indicator(*r, i)).collect();
                cols.push(col);
                names.push(format!("R({})", view.dataset.name(*r)));
            }
            Term::IndicatorInteraction { r_var, var } => {
                let rname = view.dataset.name(*r_var);
                for (nv, vv) in &expanded(view, *var) {
                    let col: Vec<f64> = (0..n)
                        .map(|i| view.indicator(*r_var, i) * vv[i])
                        .collect();
                    cols.push(col);
                    names.push(format!("R({rname}):{nv}"));
                }
            }
            Term::Extra { name, values } => {
                if values.len() != n {
                    return Err(Error::Config(format!(
                        "extra column '{name}' has wrong length"
                    )));
                }
                cols.push(values.clone());
                names.push(name.clone());
            }
        }
    }

    let q = cols.len();
    let mut x = Array2::<f64>::zeros((n, q));
    for (c, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            x[[i, c]] = v;
        }
    }
    let offset = match &design.offset {
        Some(off) => Array1::from_vec(off.clone()),
        None => Array1::zeros(n),
    };
    Ok(DesignMatrix { x, offset, names })
}

fn push_main(view: &CompletedView, v: usize, cols: &mut Vec<Vec<f64>>, names: &mut Vec<String>) {
    for (name, col) in expanded(view, v) {
        cols.push(col);
        names.push(name);
    }
}

/// Expand a variable into design columns: one column for continuous or
/// binary, S dummy columns against level 0 for categorical(S).
fn expanded(view: &CompletedView, v: usize) -> Vec<(String, Vec<f64>)> {
    let n = view.n_rows();
    let name = view.dataset.name(v);
    match view.dataset.kind(v) {
        VarKind::Continuous | VarKind::Binary => {
            vec![(name.to_string(), view.column_values(v).to_vec())]
        }
        VarKind::Categorical { max_level } => (1..=max_level)
            .map(|s| {
                let col: Vec<f64> = (0..n)
                    .map(|i| if view.value(v, i) == s as f64 { 1.0 } else { 0.0 })
                    .collect();
                (format!("{name}=={s}"), col)
            })
            .collect(),
    }
}

//! Per-imputation analyses (mean of a variable, linear regression of a
//! target on covariates) and Rubin's combining rules.

use ndarray::{Array1, Array2};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::glm::{fit_linear_named, FitOptions};
use crate::stats::{mean, sample_variance};

#[derive(Debug, Clone)]
pub enum Analysis {
    Mean { var: String },
    LinReg { target: String, covariates: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimandResult {
    pub estimand: String,
    pub estimate: f64,
    pub variance: f64,
}

#[derive(Debug, Clone)]
pub struct PooledEstimate {
    pub estimand: String,
    pub estimate: f64,
    pub within: f64,
    pub between: f64,
    pub total: f64,
    pub df: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub m: usize,
}

/// Run one analysis on a single completed dataset.
pub fn analyze_dataset(ds: &Dataset, analysis: &Analysis) -> Result<Vec<EstimandResult>> {
    match analysis {
        Analysis::Mean { var } => {
            let (_, col) = ds
                .column_by_name(var)
                .ok_or_else(|| Error::Config(format!("unknown variable '{var}'")))?;
            let n = col.values.len() as f64;
            let m = mean(&col.values);
            let v = sample_variance(&col.values) / n;
            Ok(vec![EstimandResult {
                estimand: format!("mean({var})"),
                estimate: m,
                variance: v,
            }])
        }
        Analysis::LinReg { target, covariates } => {
            let n = ds.n_rows();
            let (_, tcol) = ds
                .column_by_name(target)
                .ok_or_else(|| Error::Config(format!("unknown variable '{target}'")))?;
            let y = Array1::from_vec(tcol.values.clone());
            let mut x = Array2::<f64>::zeros((n, covariates.len() + 1));
            let mut names = vec!["intercept".to_string()];
            for i in 0..n {
                x[[i, 0]] = 1.0;
            }
            for (c, name) in covariates.iter().enumerate() {
                let (_, col) = ds
                    .column_by_name(name)
                    .ok_or_else(|| Error::Config(format!("unknown variable '{name}'")))?;
                for i in 0..n {
                    x[[i, c + 1]] = col.values[i];
                }
                names.push(name.clone());
            }
            let fit = fit_linear_named(&x, &y, None, &FitOptions::default(), Some(&names))?;
            Ok(names
                .iter()
                .enumerate()
                .map(|(c, name)| EstimandResult {
                    estimand: format!("beta({name})"),
                    estimate: fit.beta[c],
                    variance: fit.cov[[c, c]],
                })
                .collect())
        }
    }
}

/// Run one analysis on each completed dataset; outer index = imputation.
pub fn analyze_each(completed: &[Dataset], analysis: &Analysis) -> Result<Vec<Vec<EstimandResult>>> {
    completed.iter().map(|ds| analyze_dataset(ds, analysis)).collect()
}

/// Rubin's rules for one estimand: Qbar is the mean of the estimates, W
/// the mean within-imputation variance, B the between-imputation variance,
/// T = W + (1 + 1/M) B. The 95% interval uses the t quantile at Rubin's
/// df = (M-1)(1 + W/((1+1/M)B))^2, or the normal quantile when B = 0.
pub fn pool_scalar(estimand: &str, per_imputation: &[(f64, f64)]) -> Result<PooledEstimate> {
    let m = per_imputation.len();
    if m < 2 {
        return Err(Error::TooFewImputations(m));
    }
    let estimates: Vec<f64> = per_imputation.iter().map(|&(e, _)| e).collect();
    let variances: Vec<f64> = per_imputation.iter().map(|&(_, v)| v).collect();
    let qbar = mean(&estimates);
    let within = mean(&variances);
    let between = sample_variance(&estimates);
    let mf = m as f64;
    let total = within + (1.0 + 1.0 / mf) * between;

    let (df, quantile) = if between <= 0.0 || total <= 0.0 {
        let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.975);
        (f64::INFINITY, z)
    } else {
        let df = (mf - 1.0) * (1.0 + within / ((1.0 + 1.0 / mf) * between)).powi(2);
        let q = if df > 1e7 {
            Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.975)
        } else {
            StudentsT::new(0.0, 1.0, df).unwrap().inverse_cdf(0.975)
        };
        (df, q)
    };
    let half = quantile * total.sqrt();
    Ok(PooledEstimate {
        estimand: estimand.to_string(),
        estimate: qbar,
        within,
        between,
        total,
        df,
        ci_lower: qbar - half,
        ci_upper: qbar + half,
        m,
    })
}

/// Pool a per-imputation result table (one inner Vec per imputation, all
/// with the same estimands in the same order).
pub fn pool(per_imputation: &[Vec<EstimandResult>]) -> Result<Vec<PooledEstimate>> {
    let m = per_imputation.len();
    if m < 2 {
        return Err(Error::TooFewImputations(m));
    }
    let k = per_imputation[0].len();
    for rows in per_imputation {
        if rows.len() != k {
            return Err(Error::Config(
                "per-imputation analyses disagree on estimands".into(),
            ));
        }
    }
    (0..k)
        .map(|e| {
            let name = &per_imputation[0][e].estimand;
            let pairs: Vec<(f64, f64)> = per_imputation
                .iter()
                .map(|rows| (rows[e].estimate, rows[e].variance))
                .collect();
            pool_scalar(name, &pairs)
        })
        .collect()
}

//! Regression fitters (linear, logistic, multinomial) and stochastic
//! parameter draws used by both the imputation models and the
//! response-indicator models.
//!
//! Logistic and multinomial models are fit by iteratively reweighted least
//! squares / Newton steps with step halving, tolerance 1e-8 on the largest
//! score component, at most 50 iterations. The Firth penalty (Jeffreys
//! prior) keeps logistic estimates finite on separated data.
//!
//! Collinear columns are detected on the Gram matrix with a relative pivot
//! tolerance; depending on policy they either raise an error or are dropped
//! (their coefficients reported as zero).

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution};

use crate::error::{Error, Result};
use crate::linalg::{mvn_draw, PivotedCholesky, RANK_TOL};
use crate::stats::expit;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankPolicy {
    /// Rank deficiency is an error naming the collinear columns.
    Error,
    /// Collinear columns are excluded; their coefficients come back 0.
    Drop,
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub rank_policy: RankPolicy,
    pub max_iter: usize,
    pub tol: f64,
    /// L2 penalty used only as a stabilising fallback (multinomial).
    pub ridge: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            rank_policy: RankPolicy::Error,
            max_iter: 50,
            tol: 1e-8,
            ridge: 0.0,
        }
    }
}

impl FitOptions {
    pub fn dropping() -> Self {
        FitOptions {
            rank_policy: RankPolicy::Drop,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearFit {
    pub beta: Array1<f64>,
    pub sigma2: f64,
    pub cov: Array2<f64>,
    pub n_used: usize,
    pub rss: f64,
    pub df_resid: usize,
    pub dropped: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub beta: Array1<f64>,
    pub cov: Array2<f64>,
    pub firth: bool,
    pub converged: bool,
    pub n_iter: usize,
    pub dropped: Vec<usize>,
}

impl LogisticFit {
    pub fn linear_predictor(&self, x_row: &[f64]) -> f64 {
        x_row.iter().zip(self.beta.iter()).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone)]
pub struct MultinomialFit {
    /// (S+1) x q coefficient matrix; row 0 (the reference level) is zero.
    pub beta: Array2<f64>,
    /// Covariance of the stacked non-reference coefficients (S*q square).
    pub cov: Array2<f64>,
    pub converged: bool,
    pub n_levels: usize,
    pub dropped: Vec<usize>,
}

fn rank_error(dropped: &[usize], names: Option<&[String]>) -> Error {
    let columns = dropped
        .iter()
        .map(|&j| match names {
            Some(ns) if j < ns.len() => ns[j].clone(),
            _ => format!("column {j}"),
        })
        .collect();
    Error::RankDeficient { columns }
}

/// X'X (or X'WX) accumulated over contiguous row slices.
fn gram(x: &Array2<f64>, w: Option<&Array1<f64>>) -> Array2<f64> {
    let n = x.nrows();
    let q = x.ncols();
    let mut buf = vec![0.0_f64; q * q];
    for i in 0..n {
        let row = x.row(i);
        let xi = row.as_slice().expect("standard layout");
        let wi = w.map(|w| w[i]).unwrap_or(1.0);
        for a in 0..q {
            let wa = wi * xi[a];
            let dst = &mut buf[a * q..a * q + q];
            for (d, &xb) in dst[a..].iter_mut().zip(&xi[a..]) {
                *d += wa * xb;
            }
        }
    }
    for a in 0..q {
        for b in 0..a {
            buf[a * q + b] = buf[b * q + a];
        }
    }
    Array2::from_shape_vec((q, q), buf).expect("shape matches")
}

/// Identify columns to keep, per the rank policy. Returns the
/// factorization of X'X so full-rank callers can reuse it.
fn reduce_columns(
    x: &Array2<f64>,
    opts: &FitOptions,
    names: Option<&[String]>,
) -> Result<(Vec<usize>, Vec<usize>, PivotedCholesky)> {
    let g = gram(x, None);
    let chol = PivotedCholesky::decompose(&g, RANK_TOL);
    if chol.is_full_rank() {
        return Ok(((0..x.ncols()).collect(), Vec::new(), chol));
    }
    let dropped = chol.dropped();
    if opts.rank_policy == RankPolicy::Error {
        return Err(rank_error(&dropped, names));
    }
    let kept = (0..x.ncols()).filter(|j| !dropped.contains(j)).collect();
    Ok((kept, dropped, chol))
}

fn select_columns(x: &Array2<f64>, kept: &[usize]) -> Array2<f64> {
    let n = x.nrows();
    let mut out = Array2::<f64>::zeros((n, kept.len()));
    for (c, &j) in kept.iter().enumerate() {
        for i in 0..n {
            out[[i, c]] = x[[i, j]];
        }
    }
    out
}

fn embed(values: &Array1<f64>, kept: &[usize], dim: usize) -> Array1<f64> {
    let mut out = Array1::<f64>::zeros(dim);
    for (c, &j) in kept.iter().enumerate() {
        out[j] = values[c];
    }
    out
}

fn embed_matrix(m: &Array2<f64>, kept: &[usize], dim: usize) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((dim, dim));
    for (a, &i) in kept.iter().enumerate() {
        for (b, &j) in kept.iter().enumerate() {
            out[[i, j]] = m[[a, b]];
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Linear model
// ---------------------------------------------------------------------------

pub fn fit_linear(
    x: &Array2<f64>,
    y: &Array1<f64>,
    offset: Option<&Array1<f64>>,
    opts: &FitOptions,
) -> Result<LinearFit> {
    fit_linear_named(x, y, offset, opts, None)
}

pub fn fit_linear_named(
    x: &Array2<f64>,
    y: &Array1<f64>,
    offset: Option<&Array1<f64>>,
    opts: &FitOptions,
    names: Option<&[String]>,
) -> Result<LinearFit> {
    let n = x.nrows();
    let q = x.ncols();
    assert_eq!(y.len(), n);
    let (kept, dropped, full_chol) = reduce_columns(x, opts, names)?;
    if n <= kept.len() {
        return Err(Error::Config(format!(
            "linear fit needs more rows ({n}) than columns ({})",
            kept.len()
        )));
    }
    let selected;
    let xk: &Array2<f64> = if dropped.is_empty() {
        x
    } else {
        selected = select_columns(x, &kept);
        &selected
    };
    let yw = match offset {
        Some(o) => y - o,
        None => y.clone(),
    };
    let chol = if dropped.is_empty() {
        full_chol
    } else {
        PivotedCholesky::decompose(&gram(xk, None), RANK_TOL)
    };
    let beta_k = chol.solve(&xk.t().dot(&yw));
    let resid = &yw - &xk.dot(&beta_k);
    let rss: f64 = resid.iter().map(|r| r * r).sum();
    let df_resid = n - kept.len();
    let sigma2 = (rss / df_resid as f64).max(f64::MIN_POSITIVE);
    let cov_k = chol.inverse() * sigma2;
    Ok(LinearFit {
        beta: embed(&beta_k, &kept, q),
        sigma2,
        cov: embed_matrix(&cov_k, &kept, q),
        n_used: n,
        rss,
        df_resid,
        dropped,
    })
}

// ---------------------------------------------------------------------------
// Logistic model
// ---------------------------------------------------------------------------

fn log1p_exp(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

fn logistic_loglik(eta: &Array1<f64>, y: &Array1<f64>) -> f64 {
    eta.iter()
        .zip(y.iter())
        .map(|(&e, &yi)| yi * e - log1p_exp(e))
        .sum()
}

pub fn fit_logistic(
    x: &Array2<f64>,
    y: &Array1<f64>,
    offset: Option<&Array1<f64>>,
    firth: bool,
    opts: &FitOptions,
) -> Result<LogisticFit> {
    fit_logistic_named(x, y, offset, firth, opts, None)
}

pub fn fit_logistic_named(
    x: &Array2<f64>,
    y: &Array1<f64>,
    offset: Option<&Array1<f64>>,
    firth: bool,
    opts: &FitOptions,
    names: Option<&[String]>,
) -> Result<LogisticFit> {
    let n = x.nrows();
    let q = x.ncols();
    assert_eq!(y.len(), n);
    debug_assert!(y.iter().all(|&v| v == 0.0 || v == 1.0));
    let (kept, dropped, _) = reduce_columns(x, opts, names)?;
    let selected;
    let xk: &Array2<f64> = if dropped.is_empty() {
        x
    } else {
        selected = select_columns(x, &kept);
        &selected
    };
    let qk = kept.len();
    let zero_offset = Array1::<f64>::zeros(n);
    let off = offset.unwrap_or(&zero_offset);

    let mut beta = Array1::<f64>::zeros(qk);
    let mut converged = false;
    let mut n_iter = 0;

    // (penalized) log-likelihood and fitted probabilities at a candidate
    let objective = |beta: &Array1<f64>| -> (f64, Array1<f64>) {
        let eta = xk.dot(beta) + off;
        let p = eta.mapv(expit);
        let mut ll = logistic_loglik(&eta, y);
        if firth {
            let w = p.mapv(|pi| (pi * (1.0 - pi)).max(1e-10));
            let g = gram(xk, Some(&w));
            ll += 0.5 * PivotedCholesky::decompose(&g, RANK_TOL).logdet();
        }
        (ll, p)
    };

    let (mut ll, mut p) = objective(&beta);
    for iter in 0..opts.max_iter {
        n_iter = iter + 1;
        let w = p.mapv(|pi| (pi * (1.0 - pi)).max(1e-10));
        let g = gram(xk, Some(&w));
        let chol = PivotedCholesky::decompose(&g, RANK_TOL);
        let score = if firth {
            let inv = chol.inverse();
            let mut s = Array1::<f64>::zeros(qk);
            for i in 0..n {
                let xi = xk.row(i);
                let mut quad = 0.0;
                for a in 0..qk {
                    for b in 0..qk {
                        quad += xi[a] * inv[[a, b]] * xi[b];
                    }
                }
                let h = w[i] * quad;
                let r = y[i] - p[i] + h * (0.5 - p[i]);
                for a in 0..qk {
                    s[a] += xi[a] * r;
                }
            }
            s
        } else {
            let resid = y - &p;
            xk.t().dot(&resid)
        };
        let max_score = score.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
        if max_score < opts.tol {
            converged = true;
            break;
        }
        let delta = chol.solve(&score);
        // Step halving keeps the (penalized) log-likelihood monotone under
        // separation and near-degenerate weights.
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let cand = &beta + &(delta.clone() * step);
            let (cand_ll, cand_p) = objective(&cand);
            // tolerate roundoff-scale decreases near the optimum
            if cand_ll >= ll - 1e-10 * (1.0 + ll.abs()) {
                beta = cand;
                ll = cand_ll;
                p = cand_p;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    // Under complete separation the score goes to zero because every
    // fitted probability saturates at its response value, not because a
    // maximizer exists. Flag that as non-convergence.
    if converged && !firth {
        let saturated = (0..n).all(|i| (y[i] - p[i]).abs() < 1e-6);
        if saturated {
            converged = false;
        }
    }

    let w = p.mapv(|pi| (pi * (1.0 - pi)).max(1e-10));
    let g = gram(xk, Some(&w));
    let cov_k = PivotedCholesky::decompose(&g, RANK_TOL).inverse();
    Ok(LogisticFit {
        beta: embed(&beta, &kept, q),
        cov: embed_matrix(&cov_k, &kept, q),
        firth,
        converged,
        n_iter,
        dropped,
    })
}

// ---------------------------------------------------------------------------
// Multinomial model (baseline-category logit, reference level 0)
// ---------------------------------------------------------------------------

pub fn fit_multinomial(
    x: &Array2<f64>,
    y: &Array1<f64>,
    n_levels: usize,
    offsets: Option<&Array2<f64>>,
    opts: &FitOptions,
) -> Result<MultinomialFit> {
    let n = x.nrows();
    let q = x.ncols();
    assert_eq!(y.len(), n);
    assert!(n_levels >= 2);
    let s_levels = n_levels - 1;

    let mut counts = vec![0usize; n_levels];
    for &yi in y.iter() {
        let lvl = yi as usize;
        assert!(yi.fract() == 0.0 && lvl < n_levels, "bad level {yi}");
        counts[lvl] += 1;
    }
    let missing: Vec<usize> = (0..n_levels).filter(|&s| counts[s] == 0).collect();
    if !missing.is_empty() {
        return Err(Error::MissingLevels {
            missing,
            max_level: n_levels - 1,
        });
    }

    // The binary case is the logistic model; delegate so the two fitters
    // agree exactly.
    if s_levels == 1 {
        let off1 = offsets.map(|o| o.column(0).to_owned());
        let lf = fit_logistic(x, y, off1.as_ref(), false, opts)?;
        let mut beta = Array2::<f64>::zeros((2, q));
        for j in 0..q {
            beta[[1, j]] = lf.beta[j];
        }
        return Ok(MultinomialFit {
            beta,
            cov: lf.cov,
            converged: lf.converged,
            n_levels,
            dropped: lf.dropped,
        });
    }

    let (kept, dropped, _) = reduce_columns(x, opts, None)?;
    let selected;
    let xk: &Array2<f64> = if dropped.is_empty() {
        x
    } else {
        selected = select_columns(x, &kept);
        &selected
    };
    let qk = kept.len();
    let dim = s_levels * qk;

    // theta[s*qk + a] = coefficient a for level s+1
    let mut theta = Array1::<f64>::zeros(dim);
    let ridge = opts.ridge;

    let probs_of = |theta: &Array1<f64>| -> Array2<f64> {
        let mut p = Array2::<f64>::zeros((n, n_levels));
        for i in 0..n {
            let xi = xk.row(i);
            let mut etas = Vec::with_capacity(s_levels);
            let mut emax = 0.0_f64; // eta for level 0 is 0
            for s in 0..s_levels {
                let mut e = 0.0;
                for a in 0..qk {
                    e += xi[a] * theta[s * qk + a];
                }
                if let Some(off) = offsets {
                    e += off[[i, s]];
                }
                etas.push(e);
                emax = emax.max(e);
            }
            let mut denom = (0.0 - emax).exp();
            for &e in &etas {
                denom += (e - emax).exp();
            }
            p[[i, 0]] = (0.0 - emax).exp() / denom;
            for s in 0..s_levels {
                p[[i, s + 1]] = (etas[s] - emax).exp() / denom;
            }
        }
        p
    };

    let loglik_of = |theta: &Array1<f64>| -> f64 {
        let p = probs_of(theta);
        let mut ll = 0.0;
        for i in 0..n {
            ll += p[[i, y[i] as usize]].max(1e-300).ln();
        }
        ll - 0.5 * ridge * theta.iter().map(|t| t * t).sum::<f64>()
    };

    let mut converged = false;
    let mut ll = loglik_of(&theta);
    let mut hess_chol: Option<PivotedCholesky> = None;
    for _ in 0..opts.max_iter {
        let p = probs_of(&theta);
        // score
        let mut score = Array1::<f64>::zeros(dim);
        for i in 0..n {
            let xi = xk.row(i);
            for s in 0..s_levels {
                let r = if y[i] as usize == s + 1 { 1.0 } else { 0.0 } - p[[i, s + 1]];
                for a in 0..qk {
                    score[s * qk + a] += xi[a] * r;
                }
            }
        }
        if ridge > 0.0 {
            for d in 0..dim {
                score[d] -= ridge * theta[d];
            }
        }
        let max_score = score.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
        if max_score < opts.tol {
            converged = true;
            break;
        }
        // Hessian of -loglik: blocks H[(s,a),(t,b)] = sum_i x_ia x_ib p_is (d_st - p_it)
        let mut hess = Array2::<f64>::zeros((dim, dim));
        for i in 0..n {
            let xi = xk.row(i);
            for s in 0..s_levels {
                let ps = p[[i, s + 1]];
                for t in s..s_levels {
                    let pt = p[[i, t + 1]];
                    let wst = if s == t { ps * (1.0 - ps) } else { -ps * pt };
                    for a in 0..qk {
                        for b in 0..qk {
                            hess[[s * qk + a, t * qk + b]] += wst * xi[a] * xi[b];
                        }
                    }
                }
            }
        }
        for r in 0..dim {
            for c in 0..r {
                let upper = hess[[c, r]];
                hess[[r, c]] = upper;
            }
        }
        if ridge > 0.0 {
            for d in 0..dim {
                hess[[d, d]] += ridge;
            }
        }
        let chol = PivotedCholesky::decompose(&hess, RANK_TOL);
        let delta = chol.solve(&score);
        hess_chol = Some(chol);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let cand = &theta + &(delta.clone() * step);
            let cand_ll = loglik_of(&cand);
            if cand_ll >= ll - 1e-10 * (1.0 + ll.abs()) {
                theta = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    // covariance at the optimum
    let cov_k = match hess_chol {
        Some(chol) if converged => chol.inverse(),
        _ => {
            let p = probs_of(&theta);
            let mut hess = Array2::<f64>::zeros((dim, dim));
            for i in 0..n {
                let xi = xk.row(i);
                for s in 0..s_levels {
                    let ps = p[[i, s + 1]];
                    for t in 0..s_levels {
                        let pt = p[[i, t + 1]];
                        let wst = if s == t { ps * (1.0 - ps) } else { -ps * pt };
                        for a in 0..qk {
                            for b in 0..qk {
                                hess[[s * qk + a, t * qk + b]] += wst * xi[a] * xi[b];
                            }
                        }
                    }
                }
            }
            if ridge > 0.0 {
                for d in 0..dim {
                    hess[[d, d]] += ridge;
                }
            }
            PivotedCholesky::decompose(&hess, RANK_TOL).inverse()
        }
    };

    // embed into the full coefficient layout
    let mut beta = Array2::<f64>::zeros((n_levels, q));
    for s in 0..s_levels {
        for (a, &j) in kept.iter().enumerate() {
            beta[[s + 1, j]] = theta[s * qk + a];
        }
    }
    let full_dim = s_levels * q;
    let mut cov = Array2::<f64>::zeros((full_dim, full_dim));
    for s in 0..s_levels {
        for t in 0..s_levels {
            for (a, &ja) in kept.iter().enumerate() {
                for (b, &jb) in kept.iter().enumerate() {
                    cov[[s * q + ja, t * q + jb]] = cov_k[[s * qk + a, t * qk + b]];
                }
            }
        }
    }

    Ok(MultinomialFit {
        beta,
        cov,
        converged,
        n_levels,
        dropped,
    })
}

/// Per-row class probabilities implied by a multinomial fit.
pub fn multinomial_probs(
    fit: &MultinomialFit,
    x_row: &[f64],
    offsets_row: Option<&[f64]>,
) -> Vec<f64> {
    let s_levels = fit.n_levels - 1;
    let mut etas = Vec::with_capacity(fit.n_levels);
    etas.push(0.0);
    for s in 0..s_levels {
        let mut e = 0.0;
        for (a, &xa) in x_row.iter().enumerate() {
            e += xa * fit.beta[[s + 1, a]];
        }
        if let Some(off) = offsets_row {
            e += off[s];
        }
        etas.push(e);
    }
    let emax = etas.iter().fold(f64::NEG_INFINITY, |m, &e| m.max(e));
    let exps: Vec<f64> = etas.iter().map(|&e| (e - emax).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / denom).collect()
}

// ---------------------------------------------------------------------------
// Parameter draws
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DrawMethod {
    Bootstrap,
    StratifiedBootstrap,
    NormalApprox,
}

#[derive(Debug, Clone)]
pub struct LinearDraw {
    pub beta: Array1<f64>,
    pub sigma2: f64,
    pub method: DrawMethod,
}

#[derive(Debug, Clone)]
pub struct LogisticDraw {
    pub beta: Array1<f64>,
    pub method: DrawMethod,
}

#[derive(Debug, Clone)]
pub struct MultinomialDraw {
    pub beta: Array2<f64>,
    pub method: DrawMethod,
}

#[derive(Debug, Clone)]
pub enum ParamDraw {
    Linear(LinearDraw),
    Logistic(LogisticDraw),
    Multinomial(MultinomialDraw),
}

pub enum FitContext<'a> {
    Linear {
        x: &'a Array2<f64>,
        y: &'a Array1<f64>,
        offset: Option<&'a Array1<f64>>,
        fit: &'a LinearFit,
    },
    Logistic {
        x: &'a Array2<f64>,
        y: &'a Array1<f64>,
        offset: Option<&'a Array1<f64>>,
        firth: bool,
        fit: &'a LogisticFit,
    },
    Multinomial {
        x: &'a Array2<f64>,
        y: &'a Array1<f64>,
        n_levels: usize,
        offsets: Option<&'a Array2<f64>>,
        fit: &'a MultinomialFit,
    },
}

/// Choose a draw method for a discrete response: stratified bootstrap when
/// some class is rare (< 5% prevalence), otherwise a plain bootstrap.
pub fn auto_draw_method(y: &Array1<f64>, n_levels: usize) -> DrawMethod {
    let n = y.len();
    let mut counts = vec![0usize; n_levels];
    for &yi in y.iter() {
        let l = yi as usize;
        if l < n_levels {
            counts[l] += 1;
        }
    }
    let min_frac = counts
        .iter()
        .map(|&c| c as f64 / n as f64)
        .fold(1.0_f64, f64::min);
    if min_frac < 0.05 {
        DrawMethod::StratifiedBootstrap
    } else {
        DrawMethod::Bootstrap
    }
}

fn bootstrap_indices<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

fn stratified_indices<R: Rng + ?Sized>(y: &Array1<f64>, rng: &mut R) -> Vec<usize> {
    let mut strata: Vec<(u64, Vec<usize>)> = Vec::new();
    for (i, &yi) in y.iter().enumerate() {
        let key = yi.to_bits();
        match strata.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(i),
            None => strata.push((key, vec![i])),
        }
    }
    strata.sort_by(|a, b| {
        f64::from_bits(a.0)
            .partial_cmp(&f64::from_bits(b.0))
            .unwrap()
    });
    let mut idx = Vec::with_capacity(y.len());
    for (_, members) in &strata {
        for _ in 0..members.len() {
            idx.push(members[rng.random_range(0..members.len())]);
        }
    }
    idx
}

fn gather_matrix(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let q = x.ncols();
    let mut out = Array2::<f64>::zeros((idx.len(), q));
    for (r, &i) in idx.iter().enumerate() {
        for c in 0..q {
            out[[r, c]] = x[[i, c]];
        }
    }
    out
}

fn gather_vector(v: &Array1<f64>, idx: &[usize]) -> Array1<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

/// One stochastic draw of model parameters.
///
/// - bootstrap: refit on a with-replacement resample of all n rows
/// - stratified bootstrap: resample within response strata, preserving the
///   stratum counts (keeps rare classes present)
/// - normal approximation: multivariate normal centered at the estimates
///   with the fit's covariance (for linear fits the residual variance is
///   drawn first as RSS over a chi-square with the residual df)
pub fn draw_parameters<R: Rng + ?Sized>(
    ctx: &FitContext,
    method: DrawMethod,
    opts: &FitOptions,
    rng: &mut R,
) -> Result<ParamDraw> {
    match ctx {
        FitContext::Linear { x, y, offset, fit } => {
            let draw = draw_linear(x, y, *offset, fit, method, opts, rng)?;
            Ok(ParamDraw::Linear(draw))
        }
        FitContext::Logistic {
            x,
            y,
            offset,
            firth,
            fit,
        } => {
            let draw = draw_logistic(x, y, *offset, *firth, fit, method, opts, rng)?;
            Ok(ParamDraw::Logistic(draw))
        }
        FitContext::Multinomial {
            x,
            y,
            n_levels,
            offsets,
            fit,
        } => {
            let draw = draw_multinomial(x, y, *n_levels, *offsets, fit, method, opts, rng)?;
            Ok(ParamDraw::Multinomial(draw))
        }
    }
}

pub fn draw_linear<R: Rng + ?Sized>(
    x: &Array2<f64>,
    y: &Array1<f64>,
    offset: Option<&Array1<f64>>,
    fit: &LinearFit,
    method: DrawMethod,
    opts: &FitOptions,
    rng: &mut R,
) -> Result<LinearDraw> {
    match method {
        DrawMethod::NormalApprox => {
            let df = fit.df_resid.max(1) as f64;
            let chi: f64 = ChiSquared::new(df).unwrap().sample(rng);
            let sigma2 = (fit.rss / chi).max(f64::MIN_POSITIVE);
            let scale = sigma2 / fit.sigma2;
            let cov = fit.cov.mapv(|c| c * scale);
            let beta = mvn_draw(&fit.beta, &cov, rng);
            Ok(LinearDraw {
                beta,
                sigma2,
                method,
            })
        }
        DrawMethod::Bootstrap | DrawMethod::StratifiedBootstrap => {
            // Strata are meaningless for a continuous response; both
            // methods resample all rows.
            let idx = bootstrap_indices(x.nrows(), rng);
            let xb = gather_matrix(x, &idx);
            let yb = gather_vector(y, &idx);
            let ob = offset.map(|o| gather_vector(o, &idx));
            let mut o = FitOptions::dropping();
            o.max_iter = opts.max_iter;
            let refit = fit_linear(&xb, &yb, ob.as_ref(), &o)?;
            Ok(LinearDraw {
                beta: refit.beta,
                sigma2: refit.sigma2,
                method,
            })
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn draw_logistic<R: Rng + ?Sized>(
    x: &Array2<f64>,
    y: &Array1<f64>,
    offset: Option<&Array1<f64>>,
    firth: bool,
    fit: &LogisticFit,
    method: DrawMethod,
    opts: &FitOptions,
    rng: &mut R,
) -> Result<LogisticDraw> {
    match method {
        DrawMethod::NormalApprox => {
            let beta = mvn_draw(&fit.beta, &fit.cov, rng);
            Ok(LogisticDraw { beta, method })
        }
        DrawMethod::Bootstrap | DrawMethod::StratifiedBootstrap => {
            let n = x.nrows();
            let mut used_method = method;
            let mut idx = if method == DrawMethod::StratifiedBootstrap {
                stratified_indices(y, rng)
            } else {
                bootstrap_indices(n, rng)
            };
            if method == DrawMethod::Bootstrap {
                // A degenerate (single-class) resample cannot be fit;
                // redraw a few times, then fall back to the stratified
                // resampler which preserves class counts by construction.
                let mut tries = 0;
                while single_class(y, &idx) && tries < 10 {
                    idx = bootstrap_indices(n, rng);
                    tries += 1;
                }
                if single_class(y, &idx) {
                    idx = stratified_indices(y, rng);
                    used_method = DrawMethod::StratifiedBootstrap;
                }
            }
            let xb = gather_matrix(x, &idx);
            let yb = gather_vector(y, &idx);
            let ob = offset.map(|o| gather_vector(o, &idx));
            let mut o = FitOptions::dropping();
            o.max_iter = opts.max_iter;
            let mut refit = fit_logistic(&xb, &yb, ob.as_ref(), firth, &o)?;
            if !refit.converged && !firth {
                refit = fit_logistic(&xb, &yb, ob.as_ref(), true, &o)?;
            }
            Ok(LogisticDraw {
                beta: refit.beta,
                method: used_method,
            })
        }
    }
}

fn single_class(y: &Array1<f64>, idx: &[usize]) -> bool {
    let first = y[idx[0]];
    idx.iter().all(|&i| y[i] == first)
}

#[allow(clippy::too_many_arguments)]
pub fn draw_multinomial<R: Rng + ?Sized>(
    x: &Array2<f64>,
    y: &Array1<f64>,
    n_levels: usize,
    offsets: Option<&Array2<f64>>,
    fit: &MultinomialFit,
    method: DrawMethod,
    opts: &FitOptions,
    rng: &mut R,
) -> Result<MultinomialDraw> {
    match method {
        DrawMethod::NormalApprox => {
            let q = fit.beta.ncols();
            let s_levels = n_levels - 1;
            let mut mean = Array1::<f64>::zeros(s_levels * q);
            for s in 0..s_levels {
                for a in 0..q {
                    mean[s * q + a] = fit.beta[[s + 1, a]];
                }
            }
            let flat = mvn_draw(&mean, &fit.cov, rng);
            let mut beta = Array2::<f64>::zeros((n_levels, q));
            for s in 0..s_levels {
                for a in 0..q {
                    beta[[s + 1, a]] = flat[s * q + a];
                }
            }
            Ok(MultinomialDraw { beta, method })
        }
        DrawMethod::Bootstrap | DrawMethod::StratifiedBootstrap => {
            let n = x.nrows();
            let mut idx = if method == DrawMethod::StratifiedBootstrap {
                stratified_indices(y, rng)
            } else {
                bootstrap_indices(n, rng)
            };
            if method == DrawMethod::Bootstrap {
                let mut tries = 0;
                while missing_some_level(y, &idx, n_levels) && tries < 10 {
                    idx = bootstrap_indices(n, rng);
                    tries += 1;
                }
                if missing_some_level(y, &idx, n_levels) {
                    idx = stratified_indices(y, rng);
                }
            }
            let xb = gather_matrix(x, &idx);
            let yb = gather_vector(y, &idx);
            let ob = offsets.map(|o| {
                let mut out = Array2::<f64>::zeros((idx.len(), o.ncols()));
                for (r, &i) in idx.iter().enumerate() {
                    for c in 0..o.ncols() {
                        out[[r, c]] = o[[i, c]];
                    }
                }
                out
            });
            let mut o = FitOptions::dropping();
            o.max_iter = opts.max_iter;
            let mut refit = fit_multinomial(&xb, &yb, n_levels, ob.as_ref(), &o)?;
            if !refit.converged {
                o.ridge = 1.0;
                refit = fit_multinomial(&xb, &yb, n_levels, ob.as_ref(), &o)?;
            }
            Ok(MultinomialDraw {
                beta: refit.beta,
                method,
            })
        }
    }
}

fn missing_some_level(y: &Array1<f64>, idx: &[usize], n_levels: usize) -> bool {
    let mut seen = vec![false; n_levels];
    for &i in idx {
        seen[y[i] as usize] = true;
    }
    seen.iter().any(|&s| !s)
}

/// Mean of an array view along rows; convenience for tests.
pub fn column_means(x: &Array2<f64>) -> Array1<f64> {
    x.mean_axis(Axis(0)).unwrap()
}


#[cfg(test)]
mod draw_context_tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn draw_parameters_dispatches_per_family() {
        let x = array![[1.0, 0.0], [1.0, 1.0], [1.0, 2.0], [1.0, 3.0], [1.0, 4.0], [1.0, 5.0]];
        let yl = array![0.1, 1.2, 1.9, 3.1, 4.2, 4.8];
        let yb = array![0.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let opts = FitOptions::default();
        let lin = fit_linear(&x, &yl, None, &opts).unwrap();
        let log = fit_logistic(&x, &yb, None, false, &opts).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);

        let d1 = draw_parameters(
            &FitContext::Linear { x: &x, y: &yl, offset: None, fit: &lin },
            DrawMethod::NormalApprox,
            &opts,
            &mut rng,
        )
        .unwrap();
        match d1 {
            ParamDraw::Linear(d) => {
                assert_eq!(d.beta.len(), 2);
                assert!(d.sigma2 > 0.0);
            }
            _ => panic!("wrong variant"),
        }

        let d2 = draw_parameters(
            &FitContext::Logistic { x: &x, y: &yb, offset: None, firth: false, fit: &log },
            DrawMethod::Bootstrap,
            &opts,
            &mut rng,
        )
        .unwrap();
        match d2 {
            ParamDraw::Logistic(d) => assert!(d.beta.iter().all(|b| b.is_finite())),
            _ => panic!("wrong variant"),
        }

        let ym = array![0.0, 1.0, 2.0, 0.0, 1.0, 2.0];
        let mf = fit_multinomial(&x, &ym, 3, None, &opts).unwrap();
        let d3 = draw_parameters(
            &FitContext::Multinomial { x: &x, y: &ym, n_levels: 3, offsets: None, fit: &mf },
            DrawMethod::StratifiedBootstrap,
            &opts,
            &mut rng,
        )
        .unwrap();
        match d3 {
            ParamDraw::Multinomial(d) => {
                assert_eq!(d.beta.nrows(), 3);
                assert_eq!(d.beta.row(0).iter().copied().sum::<f64>(), 0.0);
            }
            _ => panic!("wrong variant"),
        }
    }
}

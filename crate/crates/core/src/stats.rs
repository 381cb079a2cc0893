//! Scalar statistics helpers shared across modules and tests.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (ddof = 1).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (n as f64 - 1.0)
}

pub fn expit(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Sample skewness (biased, moment form); used for distribution checks.
pub fn skewness(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = mean(xs);
    let m2 = xs.iter().map(|&x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|&x| (x - m).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

/// Two-sample Kolmogorov-Smirnov test. Returns (D, p) with the usual
/// asymptotic p-value approximation.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.partial_cmp(q).unwrap());
    y.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (n, m) = (x.len(), y.len());
    let mut i = 0usize;
    let mut j = 0usize;
    let mut d = 0.0_f64;
    while i < n && j < m {
        let xv = x[i];
        let yv = y[j];
        if xv <= yv {
            i += 1;
        }
        if yv <= xv {
            j += 1;
        }
        let diff = (i as f64 / n as f64 - j as f64 / m as f64).abs();
        if diff > d {
            d = diff;
        }
    }
    let ne = (n as f64 * m as f64) / (n as f64 + m as f64);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_sf(lambda))
}

/// Survival function of the Kolmogorov distribution,
/// Q(λ) = 2 Σ_{k≥1} (-1)^{k-1} exp(-2 k² λ²).
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-12 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn expit_symmetry() {
        assert_abs_diff_eq!(expit(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(expit(3.0) + expit(-3.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn ks_same_distribution_accepts() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let norm = Normal::new(0.0, 1.0).unwrap();
        let a: Vec<f64> = (0..3000).map(|_| norm.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..3000).map(|_| norm.sample(&mut rng)).collect();
        let (_, p) = ks_two_sample(&a, &b);
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn ks_shifted_distribution_rejects() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let n0 = Normal::new(0.0, 1.0).unwrap();
        let n1 = Normal::new(0.8, 1.0).unwrap();
        let a: Vec<f64> = (0..2000).map(|_| n0.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..2000).map(|_| n1.sample(&mut rng)).collect();
        let (_, p) = ks_two_sample(&a, &b);
        assert!(p < 1e-6, "p = {p}");
    }
}

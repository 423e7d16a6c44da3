//! Summary statistics for Monte Carlo output.

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Standard error of the mean.
pub fn standard_error(xs: &[f64]) -> f64 {
    sample_sd(xs) / (xs.len() as f64).sqrt()
}

/// Sample covariance of row vectors.
pub fn covariance(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let p = rows.first().map_or(0, Vec::len);
    let n = rows.len() as f64;
    let means: Vec<f64> = (0..p).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut c = DMatrix::zeros(p, p);
    for r in rows {
        for i in 0..p {
            for j in i..p {
                c[(i, j)] += (r[i] - means[i]) * (r[j] - means[j]);
            }
        }
    }
    for i in 0..p {
        for j in i..p {
            c[(i, j)] /= n - 1.0;
            c[(j, i)] = c[(i, j)];
        }
    }
    c
}

/// Linear-interpolated quantile, `q ∈ [0, 1]`.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// One-sample Kolmogorov–Smirnov distance `sup |F_emp − F|`.
pub fn ks_statistic<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    v.iter().enumerate().fold(0.0_f64, |acc, (i, &x)| {
        let f = cdf(x);
        let above = (i as f64 + 1.0) / n - f;
        let below = f - i as f64 / n;
        acc.max(above).max(below)
    })
}

/// KS distance of `xs` against `N(0, variance)`.
pub fn ks_normal(xs: &[f64], variance: f64) -> f64 {
    let normal = Normal::new(0.0, variance.sqrt()).expect("positive variance");
    ks_statistic(xs, |x| normal.cdf(x))
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut acc = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        acc += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * acc).clamp(0.0, 1.0)
}

fn stephens(m: usize) -> f64 {
    let sm = (m as f64).sqrt();
    sm + 0.12 + 0.11 / sm
}

/// Critical KS distance at level `alpha` for sample size `m` (Stephens' correction).
pub fn ks_critical_value(m: usize, alpha: f64) -> f64 {
    let (mut lo, mut hi) = (0.1, 5.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_survival(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi) / stephens(m)
}

pub fn ks_p_value(distance: f64, m: usize) -> f64 {
    kolmogorov_survival(distance * stephens(m))
}

/// Least-squares slope of `y` on `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kolmogorov_critical_values() {
        // tabulated asymptotic quantiles of the Kolmogorov distribution
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 1e-4);
        let c = ks_critical_value(1000, 0.01);
        assert!((c - 1.6276 / stephens(1000)).abs() < 1e-4);
        assert!((ks_p_value(c, 1000) - 0.01).abs() < 1e-9);
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let m = 999;
        let normal = Normal::new(0.0, 1.0).unwrap();
        let xs: Vec<f64> = (1..=m).map(|i| normal.inverse_cdf(i as f64 / (m + 1) as f64)).collect();
        assert!(ks_normal(&xs, 1.0) <= 1.0 / m as f64 + 1e-12);
        let shifted: Vec<f64> = xs.iter().map(|x| x + 1.0).collect();
        assert!(ks_normal(&shifted, 1.0) > 0.3);
    }

    #[test]
    fn basic_moments() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((sample_sd(&xs) - (5.0_f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(median(&xs), 2.5);
        assert_eq!(quantile(&xs, 1.0), 4.0);
        let c = covariance(&[vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 10.0]]);
        assert_eq!(c[(0, 0)], 4.0);
        assert_eq!(c[(0, 1)], 8.0);
        assert_eq!(c[(1, 1)], 16.0);
        assert!((ls_slope(&[0.0, 1.0, 2.0], &[1.0, -0.5, -2.0]) + 1.5).abs() < 1e-15);
    }
}

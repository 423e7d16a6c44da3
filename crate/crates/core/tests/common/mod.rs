#![allow(dead_code)]

use perlan::signal::{Affine, BasisFunction, BasisTerm, FourierTerm, Signal, SignalSpec};

pub const FD_STEP: f64 = 1e-6;

/// Central difference of step `h`, Richardson-extrapolated with `h/2` to
/// remove the `h²` truncation term.
pub fn central<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    let d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    (4.0 * d(0.5 * h) - d(h)) / 3.0
}

/// Worst scaled gap between exact derivatives and central differences at one
/// point; each gap is divided by `1 + |value| + |exact|`.
pub fn fd_gap(signal: &Signal, theta: &[f64], period: f64, s: f64) -> f64 {
    let exact = signal.derivatives(theta, period, s).unwrap();
    let scaled = |fd: f64, ex: f64| (fd - ex).abs() / (1.0 + exact.value.abs() + ex.abs());
    let mut worst = 0.0_f64;
    for i in 0..theta.len() {
        let at = |x: f64| {
            let mut t = theta.to_vec();
            t[i] = x;
            signal.eval(&t, period, s).unwrap()
        };
        worst = worst.max(scaled(central(at, theta[i], FD_STEP), exact.grad_theta[i]));
    }
    let h = FD_STEP * period;
    let fd_t = central(|p| signal.eval(theta, p, s).unwrap(), period, h);
    worst = worst.max(scaled(fd_t, exact.d_t));
    let fd_tt = central(|p| signal.derivatives(theta, p, s).unwrap().d_t, period, h);
    worst.max(scaled(fd_tt, exact.d2_t))
}

pub fn affine(offset: f64, coeffs: Vec<f64>) -> Affine {
    Affine { offset, coeffs }
}

/// A Fourier family with cross-coupled affine coefficients.
pub fn mixed_fourier() -> SignalSpec {
    SignalSpec::Fourier {
        d: 2,
        terms: vec![
            FourierTerm { sin: affine(0.3, vec![1.0, 0.5]), cos: affine(0.0, vec![0.0, -1.0]) },
            FourierTerm { sin: affine(0.0, vec![0.25, 0.0]), cos: affine(-0.2, vec![0.0, 0.75]) },
            FourierTerm { sin: affine(0.1, vec![0.0, 0.0]), cos: affine(0.0, vec![0.5, 0.5]) },
        ],
    }
}

pub fn mixed_basis() -> SignalSpec {
    SignalSpec::LinearBasis {
        basis: vec![
            BasisFunction { terms: vec![BasisTerm { k: 1, sin: 1.0, cos: 0.5 }, BasisTerm { k: 3, sin: 0.0, cos: -0.25 }] },
            BasisFunction { terms: vec![BasisTerm { k: 2, sin: 0.7, cos: 0.0 }] },
            BasisFunction { terms: vec![BasisTerm { k: 1, sin: 0.0, cos: 1.0 }, BasisTerm { k: 4, sin: 0.2, cos: 0.2 }] },
        ],
    }
}

/// Every built-in family plus the two mixed fixtures.
pub fn all_families() -> Vec<(&'static str, SignalSpec)> {
    vec![
        ("sine", SignalSpec::sine()),
        ("diagonal_sines(3)", SignalSpec::diagonal_sines(3)),
        ("orthonormal_sines(2)", SignalSpec::orthonormal_sines(2)),
        ("mixed_fourier", mixed_fourier()),
        ("mixed_basis", mixed_basis()),
    ]
}

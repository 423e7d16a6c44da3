//! Weighted time averages along a path and the ν-functionals they converge to.
//!
//! For a 1-periodic bounded `f` and `k ∈ {0, 1, 2}`,
//!
//! ```text
//! (k+1) t^{-(k+1)} ∫₀ᵗ s^k f(s/T) / σ²(η_s) ds  →  ν[f]
//! ```
//!
//! When σ ≡ c the measure ν is `c^{-2}` times Lebesgue measure on (0, 1).

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::sde::{PathRecord, Volatility};
use crate::signal::{PeriodicFn, Signal, TrigPoly};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NuMethod {
    ClosedForm,
    PathAverage { k: u32, t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NuFunctional {
    pub value: f64,
    pub method: NuMethod,
}

/// One factor of a ν inner product.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NuArg {
    /// `∂_{θ_i} S_θ`
    ThetaPartial(usize),
    /// `S'_θ`
    ShapeDerivative,
}

impl NuArg {
    fn poly(self, signal: &Signal, theta: &[f64]) -> Result<TrigPoly> {
        match self {
            NuArg::ThetaPartial(i) => {
                if i >= signal.dim() {
                    return Err(invalid(format!("partial index {i} out of range for d = {}", signal.dim())));
                }
                Ok(signal.partial_poly(i))
            }
            NuArg::ShapeDerivative => signal.shape_derivative_poly(theta),
        }
    }
}

/// Running version of [`weighted_time_average`] over `[0, t)`.
pub fn weighted_time_average_until(path: &PathRecord, f: &dyn PeriodicFn, k: u32, t: f64) -> Result<f64> {
    if k > 2 {
        return Err(invalid(format!("weight exponent k must be in {{0,1,2}}, got {k}")));
    }
    if !(t > 0.0) || t > path.horizon() * (1.0 + 1e-12) {
        return Err(invalid(format!("averaging time {t} outside (0, {}]", path.horizon())));
    }
    let m = path.steps_until(t);
    let sigma = &path.diffusion.sigma;
    let mut acc = 0.0;
    for i in 0..m {
        let s = path.time(i);
        let sig = sigma.eval(path.xi[i]);
        acc += s.powi(k as i32) * f.eval(s / path.period) / (sig * sig);
    }
    let kp1 = (k + 1) as f64;
    Ok(kp1 * t.powi(-(k as i32 + 1)) * acc * path.dt)
}

/// Left-point Riemann sum of the weighted average over the whole path.
pub fn weighted_time_average(path: &PathRecord, f: &dyn PeriodicFn, k: u32) -> Result<f64> {
    weighted_time_average_until(path, f, k, path.horizon())
}

/// `⟨a, b⟩_ν`. Closed form for constant σ; otherwise a `k = 0` path average
/// over the supplied path, which must then be present.
pub fn nu_inner_product(
    signal: &Signal,
    theta: &[f64],
    period: f64,
    pair: (NuArg, NuArg),
    sigma: &Volatility,
    path: Option<&PathRecord>,
) -> Result<NuFunctional> {
    signal.check_args(theta, period)?;
    let a = pair.0.poly(signal, theta)?;
    let b = pair.1.poly(signal, theta)?;
    match sigma.constant_value() {
        Some(c) => {
            let (integral, _) = a.inner_product(&b);
            Ok(NuFunctional { value: integral / (c * c), method: NuMethod::ClosedForm })
        }
        None => {
            let path = path.ok_or(Error::NeedsPathEstimate)?;
            let t = path.horizon();
            let value = weighted_time_average(path, &a.product(&b), 0)?;
            Ok(NuFunctional { value, method: NuMethod::PathAverage { k: 0, t } })
        }
    }
}

/// The `k`-weighted path average of `a·b` over the whole path.
pub fn nu_path_average(signal: &Signal, theta: &[f64], pair: (NuArg, NuArg), path: &PathRecord, k: u32) -> Result<NuFunctional> {
    signal.check_args(theta, path.period)?;
    let a = pair.0.poly(signal, theta)?;
    let b = pair.1.poly(signal, theta)?;
    let t = path.horizon();
    let value = weighted_time_average(path, &a.product(&b), k)?;
    Ok(NuFunctional { value, method: NuMethod::PathAverage { k, t } })
}

/// Every unordered pair of the stacked derivative `(∂_θ S, S')`.
pub fn stacked_pairs(d: usize) -> Vec<(NuArg, NuArg)> {
    let arg = |i: usize| if i < d { NuArg::ThetaPartial(i) } else { NuArg::ShapeDerivative };
    (0..=d).flat_map(|i| (i..=d).map(move |j| (arg(i), arg(j)))).collect()
}

impl std::fmt::Display for NuArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NuArg::ThetaPartial(i) => write!(f, "theta{}", i + 1),
            NuArg::ShapeDerivative => write!(f, "T"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{simulate_path, DiffusionSpec, Drift, Noise};
    use crate::signal::SignalSpec;
    use std::f64::consts::PI;

    fn sine() -> Signal {
        Signal::new(&SignalSpec::sine()).unwrap()
    }

    fn sin_squared() -> TrigPoly {
        // sin²(2πu) = ½ − ½ cos(4πu)
        TrigPoly { terms: vec![(0.0, 0.0, 0.5), (2.0, 0.0, -0.5)] }
    }

    #[test]
    fn constant_function_averages_to_one() {
        let p = simulate_path(&DiffusionSpec::white_noise(), &sine(), &[1.0], 1.0, 20.0, 1e-3, Noise::seeded(1)).unwrap();
        let one = TrigPoly::constant(1.0);
        for k in 0..=2 {
            let v = weighted_time_average(&p, &one, k).unwrap();
            assert!((v - 1.0).abs() < 5e-3 * (k as f64 + 1.0), "k={k}: {v}");
        }
        assert!(weighted_time_average(&p, &one, 3).is_err());
    }

    #[test]
    fn sin_squared_average_matches_period_integral() {
        let p = simulate_path(&DiffusionSpec::white_noise(), &sine(), &[1.0], 1.0, 10.0, 1e-3, Noise::seeded(2)).unwrap();
        let v = weighted_time_average(&p, &sin_squared(), 0).unwrap();
        assert!((v - 0.5).abs() < 1e-3, "{v}");
    }

    #[test]
    fn constant_shift_is_exactly_linear() {
        let d = DiffusionSpec {
            drift: Drift::MeanReverting { beta: 1.0 },
            sigma: Volatility::BoundedPerturbation { c0: 1.0, amplitude: 0.5 },
            x0: 0.0,
        };
        let p = simulate_path(&d, &sine(), &[1.0], 1.0, 20.0, 1e-3, Noise::seeded(5)).unwrap();
        let f = sin_squared();
        let c = 0.75;
        let shifted = |u: f64| f.eval(u) + c;
        for k in 0..=2 {
            let base = weighted_time_average(&p, &f, k).unwrap();
            let weight = weighted_time_average(&p, &TrigPoly::constant(1.0), k).unwrap();
            let got = weighted_time_average(&p, &shifted, k).unwrap();
            assert!((got - (base + c * weight)).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn closed_form_inner_products() {
        let s = sine();
        let one = Volatility::Constant { c: 1.0 };
        let p = NuArg::ThetaPartial(0);
        let sp = NuArg::ShapeDerivative;
        let pp = nu_inner_product(&s, &[1.0], 1.0, (p, p), &one, None).unwrap();
        assert_eq!(pp, NuFunctional { value: 0.5, method: NuMethod::ClosedForm });
        assert_eq!(nu_inner_product(&s, &[1.0], 1.0, (p, sp), &one, None).unwrap().value, 0.0);
        let ss = nu_inner_product(&s, &[1.0], 1.0, (sp, sp), &one, None).unwrap().value;
        // quadrature oracle for ∫₀¹ (2π cos 2πu)² du
        let oracle = crate::signal::simpson_unit(|u| (2.0 * PI * (2.0 * PI * u).cos()).powi(2), 256);
        assert!((ss - oracle).abs() < 1e-10);
        assert!((ss - 2.0 * PI * PI).abs() < 1e-12);
        let half = Volatility::Constant { c: 2.0 };
        assert_eq!(nu_inner_product(&s, &[1.0], 1.0, (p, p), &half, None).unwrap().value, 0.125);
    }

    #[test]
    fn non_constant_sigma_needs_a_path() {
        let s = sine();
        let v = Volatility::BoundedPerturbation { c0: 1.0, amplitude: 0.3 };
        let pair = (NuArg::ThetaPartial(0), NuArg::ThetaPartial(0));
        assert!(matches!(nu_inner_product(&s, &[1.0], 1.0, pair, &v, None), Err(Error::NeedsPathEstimate)));
        let d = DiffusionSpec { drift: Drift::MeanReverting { beta: 1.0 }, sigma: v.clone(), x0: 0.0 };
        let p = simulate_path(&d, &s, &[1.0], 1.0, 50.0, 1e-3, Noise::seeded(3)).unwrap();
        let est = nu_inner_product(&s, &[1.0], 1.0, pair, &v, Some(&p)).unwrap();
        assert!(matches!(est.method, NuMethod::PathAverage { k: 0, .. }));
        // σ ∈ (1, 1.3] so ν[sin²] lies in (0.5/1.69, 0.5)
        assert!(est.value > 0.5 / 1.69 && est.value < 0.5, "{}", est.value);
        assert!(nu_inner_product(&s, &[1.0], 1.0, (NuArg::ThetaPartial(1), NuArg::ShapeDerivative), &v, Some(&p)).is_err());
    }
}

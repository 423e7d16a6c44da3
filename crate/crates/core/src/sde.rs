//! Euler–Maruyama simulation of
//!
//! ```text
//! dξ_t = [S_(θ,T)(t) + b(ξ_t)] dt + σ(ξ_t) dW_t
//! ```
//!
//! on a uniform grid `t_i = i·dt`. Paths keep the Brownian increments that
//! produced them so likelihood diagnostics can reuse the exact noise.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::signal::Signal;

/// Upper bound on the number of Euler steps in a single path.
pub const MAX_STEPS: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Drift {
    Zero,
    /// `b(x) = −β x`.
    MeanReverting { beta: f64 },
    /// `b(x) = slope_i·x + intercept_i` on the i-th interval cut by `breakpoints`.
    PiecewiseAffine { breakpoints: Vec<f64>, pieces: Vec<[f64; 2]> },
}

impl Drift {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Drift::Zero => 0.0,
            Drift::MeanReverting { beta } => -beta * x,
            Drift::PiecewiseAffine { breakpoints, pieces } => {
                let i = breakpoints.partition_point(|&b| b <= x);
                let [slope, intercept] = pieces[i];
                slope * x + intercept
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Drift::Zero => Ok(()),
            Drift::MeanReverting { beta } => {
                if *beta > 0.0 && beta.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidModel(format!("mean reversion speed must be positive, got {beta}")))
                }
            }
            Drift::PiecewiseAffine { breakpoints, pieces } => {
                if pieces.len() != breakpoints.len() + 1 {
                    return Err(Error::InvalidModel(format!(
                        "piecewise drift needs {} pieces for {} breakpoints, got {}",
                        breakpoints.len() + 1,
                        breakpoints.len(),
                        pieces.len()
                    )));
                }
                if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::InvalidModel("breakpoints must be strictly increasing".into()));
                }
                if breakpoints.iter().chain(pieces.iter().flatten()).any(|v| !v.is_finite()) {
                    return Err(Error::InvalidModel("non-finite piecewise drift entry".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Volatility {
    Constant { c: f64 },
    /// `σ(x) = c0 + amplitude / (1 + x²)`.
    BoundedPerturbation { c0: f64, amplitude: f64 },
}

impl Volatility {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Volatility::Constant { c } => c,
            Volatility::BoundedPerturbation { c0, amplitude } => c0 + amplitude / (1.0 + x * x),
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match *self {
            Volatility::Constant { c } => Some(c),
            Volatility::BoundedPerturbation { .. } => None,
        }
    }

    /// `inf σ`, which must be positive.
    pub fn lower_bound(&self) -> f64 {
        match *self {
            Volatility::Constant { c } => c,
            Volatility::BoundedPerturbation { c0, amplitude } => c0 + amplitude.min(0.0),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Volatility::Constant { c } => c > 0.0 && c.is_finite(),
            Volatility::BoundedPerturbation { c0, amplitude } => {
                c0.is_finite() && amplitude.is_finite() && c0 > 0.0 && c0 - amplitude.abs() > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!("volatility {self:?} is not bounded away from zero")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSpec {
    pub drift: Drift,
    pub sigma: Volatility,
    #[serde(default)]
    pub x0: f64,
}

impl DiffusionSpec {
    /// `b ≡ 0`, `σ ≡ 1`, started at zero.
    pub fn white_noise() -> Self {
        DiffusionSpec { drift: Drift::Zero, sigma: Volatility::Constant { c: 1.0 }, x0: 0.0 }
    }

    pub fn ornstein_uhlenbeck(beta: f64) -> Self {
        DiffusionSpec { drift: Drift::MeanReverting { beta }, sigma: Volatility::Constant { c: 1.0 }, x0: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        self.drift.validate()?;
        self.sigma.validate()?;
        if !self.x0.is_finite() {
            return Err(Error::InvalidModel("start point must be finite".into()));
        }
        Ok(())
    }
}

/// Source of the Gaussian increments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    /// Independent stream `stream` of a ChaCha8 generator keyed by `seed`.
    Seeded { seed: u64, stream: u64 },
    /// All increments zero; the path solves the drift ODE.
    Silent,
}

impl Noise {
    pub fn seeded(seed: u64) -> Self {
        Noise::Seeded { seed, stream: 0 }
    }

    pub fn replication(seed: u64, r: u64) -> Self {
        Noise::Seeded { seed, stream: r }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub dt: f64,
    pub xi: Vec<f64>,
    pub dw: Vec<f64>,
    pub theta: Vec<f64>,
    pub period: f64,
    pub noise: Noise,
    pub diffusion: DiffusionSpec,
}

impl PathRecord {
    pub fn steps(&self) -> usize {
        self.dw.len()
    }

    pub fn horizon(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    /// Number of grid steps with `t_i < t` (left-point sums over `[0, t)`).
    pub fn steps_until(&self, t: f64) -> usize {
        let k = (t / self.dt - 1e-9).ceil().max(0.0) as usize;
        k.min(self.steps())
    }

    /// True iff every step satisfies the Euler update bit-for-bit.
    pub fn satisfies_reconstruction(&self, signal: &Signal) -> bool {
        let shape = signal.shape_unchecked(&self.theta);
        (0..self.steps()).all(|i| {
            let next = euler_step(&self.diffusion, &shape, self.period, self.time(i), self.xi[i], self.dt, self.dw[i]);
            next.to_bits() == self.xi[i + 1].to_bits()
        })
    }

    /// CSV with columns `t,xi,dW`; the final row has an empty `dW`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,xi,dW")?;
        for (i, x) in self.xi.iter().enumerate() {
            match self.dw.get(i) {
                Some(dw) => writeln!(out, "{},{},{}", self.time(i), x, dw)?,
                None => writeln!(out, "{},{},", self.time(i), x)?,
            }
        }
        Ok(())
    }
}

#[inline]
fn euler_step(
    dspec: &DiffusionSpec,
    shape: &crate::signal::Shape<'_>,
    period: f64,
    t: f64,
    x: f64,
    dt: f64,
    dw: f64,
) -> f64 {
    let drift = shape.value(t / period) + dspec.drift.eval(x);
    x + drift * dt + dspec.sigma.eval(x) * dw
}

fn check_grid(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("dt must be positive, got {dt}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid(format!("horizon must be positive, got {horizon}")));
    }
    let steps = (horizon / dt).round();
    if steps > MAX_STEPS {
        return Err(Error::ResourceLimit(format!("{steps:.3e} Euler steps exceed the budget of {MAX_STEPS:.0e}")));
    }
    Ok((steps as usize).max(1))
}

/// Simulates on `[0, horizon]` with `round(horizon/dt)` Euler steps.
pub fn simulate_path(
    dspec: &DiffusionSpec,
    signal: &Signal,
    theta: &[f64],
    period: f64,
    horizon: f64,
    dt: f64,
    noise: Noise,
) -> Result<PathRecord> {
    dspec.validate()?;
    signal.check_args(theta, period)?;
    let steps = check_grid(horizon, dt)?;
    let dw = match noise {
        Noise::Silent => vec![0.0; steps],
        Noise::Seeded { seed, stream } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            let scale = dt.sqrt();
            (0..steps)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * scale
                })
                .collect()
        }
    };
    integrate(dspec, signal, theta, period, dt, dw, noise)
}

/// Simulates with caller-supplied increments, e.g. for coupled refinement.
pub fn simulate_with_increments(
    dspec: &DiffusionSpec,
    signal: &Signal,
    theta: &[f64],
    period: f64,
    dt: f64,
    dw: Vec<f64>,
) -> Result<PathRecord> {
    dspec.validate()?;
    signal.check_args(theta, period)?;
    check_grid(dw.len().max(1) as f64 * dt, dt)?;
    integrate(dspec, signal, theta, period, dt, dw, Noise::Silent)
}

fn integrate(
    dspec: &DiffusionSpec,
    signal: &Signal,
    theta: &[f64],
    period: f64,
    dt: f64,
    dw: Vec<f64>,
    noise: Noise,
) -> Result<PathRecord> {
    let shape = signal.shape_unchecked(theta);
    let mut xi = Vec::with_capacity(dw.len() + 1);
    let mut x = dspec.x0;
    xi.push(x);
    for (i, &w) in dw.iter().enumerate() {
        x = euler_step(dspec, &shape, period, i as f64 * dt, x, dt, w);
        xi.push(x);
    }
    Ok(PathRecord { dt, xi, dw, theta: theta.to_vec(), period, noise, diffusion: dspec.clone() })
}

/// The path sampled at the grid index nearest to `k·T`, `k = 0..⌊horizon/T⌋`.
pub fn grid_chain(path: &PathRecord) -> Result<Vec<f64>> {
    let horizon = path.horizon();
    let period = path.period;
    if period > horizon * (1.0 + 1e-12) {
        return Err(invalid(format!("period {period} exceeds path horizon {horizon}")));
    }
    let count = (horizon / period + 1e-9).floor() as usize;
    Ok((0..=count)
        .map(|k| {
            let idx = ((k as f64 * period) / path.dt + 0.5).floor() as usize;
            path.xi[idx.min(path.steps())]
        })
        .collect())
}

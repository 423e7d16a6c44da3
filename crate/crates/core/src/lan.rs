//! Log-likelihood ratios, the score, and Monte Carlo checks of the quadratic
//! expansion
//!
//! ```text
//! Λ_n = hᵀΔ_n − ½ hᵀF_n(1)h + R_n(1) − ½U_n(1) − V_n(1)
//! ```
//!
//! at the localized alternative `(θ_n, T_n) = (θ, T) + δ_n h`.
//!
//! Every stochastic integral is a left-point sum against the path's own
//! increments, so the decomposition above holds as a discrete identity.

use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::fisher::{check_s7, fisher_matrix, fisher_path_estimate, s7_ratio, spectral_norm, FisherMatrix, S7_TOLERANCE};
use crate::replicate::replicate;
use crate::sde::{simulate_path, DiffusionSpec, Noise, PathRecord};
use crate::signal::{GridPhases, Signal};
use crate::stats;

/// Significance level of the per-component KS tests.
pub const KS_LEVEL: f64 = 0.01;

/// `δ_n = diag(n^{-1/2}, …, n^{-1/2}, n^{-3/2})`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalScale {
    pub n: u64,
    pub diag: Vec<f64>,
}

impl LocalScale {
    pub fn new(n: u64, d: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n must be a positive integer"));
        }
        let nf = n as f64;
        let mut diag = vec![nf.powf(-0.5); d];
        diag.push(nf.powf(-1.5));
        Ok(LocalScale { n, diag })
    }

    /// `(θ_n, T_n) = (θ, T) + δ_n h`.
    pub fn perturb(&self, theta: &[f64], period: f64, h: &[f64]) -> (Vec<f64>, f64) {
        let d = theta.len();
        let th = theta.iter().zip(h).zip(&self.diag).map(|((t, hi), s)| t + s * hi).collect();
        (th, period + self.diag[d] * h[d])
    }
}

/// The two sums making up a log-likelihood ratio: `Σ D/σ dW` and `Σ (D/σ)² dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LlrParts {
    pub stochastic: f64,
    pub quadratic: f64,
}

impl LlrParts {
    pub fn value(&self) -> f64 {
        self.stochastic - 0.5 * self.quadratic
    }
}

fn check_candidate(signal: &Signal, candidate: (&[f64], f64)) -> Result<()> {
    signal.check_args(candidate.0, candidate.1)
}

/// Both sums of `Λ^{candidate/truth}` over the whole path, using stored `dW`.
pub fn llr_parts_sim(path: &PathRecord, signal: &Signal, candidate: (&[f64], f64)) -> Result<LlrParts> {
    check_candidate(signal, candidate)?;
    let base = signal.shape(&path.theta)?;
    let cand = signal.shape(candidate.0)?;
    let (mut stochastic, mut quadratic) = (0.0, 0.0);
    for i in 0..path.steps() {
        let t = path.time(i);
        let diff = cand.value(t / candidate.1) - base.value(t / path.period);
        let sig = path.diffusion.sigma.eval(path.xi[i]);
        stochastic += diff / sig * path.dw[i];
        quadratic += (diff / sig).powi(2) * path.dt;
    }
    Ok(LlrParts { stochastic, quadratic })
}

/// `Λ_t^{candidate/truth}` from the stored Brownian increments.
pub fn log_likelihood_ratio_sim(path: &PathRecord, signal: &Signal, candidate: (&[f64], f64)) -> Result<f64> {
    Ok(llr_parts_sim(path, signal, candidate)?.value())
}

/// `Λ_t^{candidate/base}` from the observed increments only, recovering
/// `dW = (dη − (S_base + b) dt) / σ`.
pub fn log_likelihood_ratio_obs(
    path: &PathRecord,
    dspec: &DiffusionSpec,
    signal: &Signal,
    base: (&[f64], f64),
    candidate: (&[f64], f64),
) -> Result<f64> {
    check_candidate(signal, base)?;
    check_candidate(signal, candidate)?;
    let b = signal.shape(base.0)?;
    let c = signal.shape(candidate.0)?;
    let (mut stochastic, mut quadratic) = (0.0, 0.0);
    for i in 0..path.steps() {
        let t = path.time(i);
        let x = path.xi[i];
        let sb = b.value(t / base.1);
        let diff = c.value(t / candidate.1) - sb;
        let sig = dspec.sigma.eval(x);
        let dw = (path.xi[i + 1] - x - (sb + dspec.drift.eval(x)) * path.dt) / sig;
        stochastic += diff / sig * dw;
        quadratic += (diff / sig).powi(2) * path.dt;
    }
    Ok(stochastic - 0.5 * quadratic)
}

/// `Δ_n = δ_n ∫₀ⁿ Ṡ_(θ,T)(s) / σ(η_s) dW_s` at the path's true parameters.
pub fn score(path: &PathRecord, signal: &Signal, n: u64) -> Result<Vec<f64>> {
    let nf = n as f64;
    if n == 0 || nf > path.horizon() * (1.0 + 1e-12) {
        return Err(invalid(format!("path horizon {} shorter than n = {n}", path.horizon())));
    }
    let d = signal.dim();
    let scale = LocalScale::new(n, d)?;
    let shape = signal.shape(&path.theta)?;
    let mut sdot = vec![0.0; d + 1];
    let mut acc = vec![0.0; d + 1];
    let mut phases = GridPhases::new(&signal.frequencies(), path.period, path.dt);
    for i in 0..path.steps_until(nf) {
        shape.stacked_at(path.period, path.time(i), phases.advance(), &mut sdot);
        let w = path.dw[i] / path.diffusion.sigma.eval(path.xi[i]);
        for (a, s) in acc.iter_mut().zip(&sdot) {
            *a += s * w;
        }
    }
    Ok(acc.iter().zip(&scale.diag).map(|(a, s)| a * s).collect())
}

/// Per-path terms of the quadratic expansion at t = 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathDecomposition {
    pub score: Vec<f64>,
    pub lambda: f64,
    /// `hᵀΔ_n − ½ hᵀF h` with the reference F.
    pub quad: f64,
    pub h_delta: f64,
    /// `hᵀF_n(1)h`.
    pub h_fn_h: f64,
    /// `R_n(1)` in residual form.
    pub r: f64,
    /// `R_n(1)` from its defining stochastic integral.
    pub r_direct: f64,
    pub u: f64,
    pub v: f64,
}

impl PathDecomposition {
    /// Relative defect of `Λ = hᵀΔ − ½hᵀF_n h + R − ½U − V` with `R` from its integral.
    pub fn identity_error(&self) -> f64 {
        let rhs = self.h_delta - 0.5 * self.h_fn_h + self.r_direct - 0.5 * self.u - self.v;
        let scale = [self.lambda, self.h_delta, 0.5 * self.h_fn_h, self.r_direct, 0.5 * self.u, self.v]
            .iter()
            .map(|x| x.abs())
            .fold(0.0, f64::max);
        if scale == 0.0 {
            (self.lambda - rhs).abs()
        } else {
            (self.lambda - rhs).abs() / scale
        }
    }
}

/// Runs the expansion along one path of horizon ≥ n.
pub fn decompose(path: &PathRecord, signal: &Signal, h: &[f64], n: u64, f_ref: &DMatrix<f64>) -> Result<PathDecomposition> {
    let d = signal.dim();
    if h.len() != d + 1 {
        return Err(invalid(format!("h has length {}, expected {}", h.len(), d + 1)));
    }
    let nf = n as f64;
    if n == 0 || nf > path.horizon() * (1.0 + 1e-12) {
        return Err(invalid(format!("path horizon {} shorter than n = {n}", path.horizon())));
    }
    let scale = LocalScale::new(n, d)?;
    let (theta_n, period_n) = scale.perturb(&path.theta, path.period, h);
    signal.check_args(&theta_n, period_n)?;
    let dh: Vec<f64> = h.iter().zip(&scale.diag).map(|(a, b)| a * b).collect();
    let base = signal.shape(&path.theta)?;
    let alt = signal.shape(&theta_n)?;

    let freqs = signal.frequencies();
    let mut base_phases = GridPhases::new(&freqs, path.period, path.dt);
    let mut alt_phases = GridPhases::new(&freqs, period_n, path.dt);
    let mut sdot = vec![0.0; d + 1];
    let mut score_acc = vec![0.0; d + 1];
    let (mut l_stoch, mut l_quad, mut hfh, mut r_dir, mut u, mut v) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..path.steps_until(nf) {
        let t = path.time(i);
        let s0 = base.stacked_at(path.period, t, base_phases.advance(), &mut sdot);
        let diff = alt.value_at(alt_phases.advance()) - s0;
        let lin: f64 = dh.iter().zip(&sdot).map(|(a, b)| a * b).sum();
        let rem = diff - lin;
        let sig = path.diffusion.sigma.eval(path.xi[i]);
        let dw = path.dw[i] / sig;
        let w = path.dt / (sig * sig);
        for (a, s) in score_acc.iter_mut().zip(&sdot) {
            *a += s * dw;
        }
        l_stoch += diff * dw;
        l_quad += diff * diff * w;
        hfh += lin * lin * w;
        r_dir += rem * dw;
        u += rem * rem * w;
        v += rem * lin * w;
    }
    let score: Vec<f64> = score_acc.iter().zip(&scale.diag).map(|(a, s)| a * s).collect();
    let lambda = l_stoch - 0.5 * l_quad;
    let h_delta: f64 = h.iter().zip(&score).map(|(a, b)| a * b).sum();
    let hf_ref_h = quadratic_form(f_ref, h);
    let r = lambda - h_delta + 0.5 * hfh + 0.5 * u + v;
    Ok(PathDecomposition {
        score,
        lambda,
        quad: h_delta - 0.5 * hf_ref_h,
        h_delta,
        h_fn_h: hfh,
        r,
        r_direct: r_dir,
        u,
        v,
    })
}

fn quadratic_form(m: &DMatrix<f64>, h: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..h.len() {
        for j in 0..h.len() {
            acc += h[i] * m[(i, j)] * h[j];
        }
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsResult {
    pub distance: f64,
    pub critical: f64,
    pub p_value: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LanTests {
    /// `‖Cov(Δ_n) − F‖₂ / ‖F‖₂`.
    pub cov_rel_error: f64,
    pub empirical_cov: Vec<Vec<f64>>,
    pub ks: Vec<KsResult>,
    pub score_mean: Vec<f64>,
    pub score_se: Vec<f64>,
    pub residual_median: f64,
    pub residual_q90: f64,
    pub residual_max: f64,
    pub mean_u: f64,
    pub identity_max_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanReport {
    pub n: u64,
    pub replications: usize,
    pub h: Vec<f64>,
    pub f_ref: FisherMatrix,
    pub paths: Vec<PathDecomposition>,
    pub tests: LanTests,
}

/// Horizon of the auxiliary path used for F when σ is not constant.
pub fn reference_horizon(n: u64) -> f64 {
    (20 * n).max(2000) as f64
}

/// F(1) for the model: closed form when σ is constant, otherwise a long-path
/// estimate on a stream disjoint from the replications.
pub fn reference_fisher(dspec: &DiffusionSpec, signal: &Signal, theta: &[f64], period: f64, n: u64, dt: f64, seed: u64) -> Result<FisherMatrix> {
    match dspec.sigma.constant_value() {
        Some(c) => fisher_matrix(signal, theta, period, 1.0, c),
        None => {
            let horizon = reference_horizon(n);
            let path = simulate_path(dspec, signal, theta, period, horizon, dt, Noise::replication(seed, u64::MAX))?;
            fisher_path_estimate(&path, signal, theta, period, 1.0, horizon)
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn lan_report(
    dspec: &DiffusionSpec,
    signal: &Signal,
    theta: &[f64],
    period: f64,
    h: &[f64],
    n: u64,
    replications: usize,
    dt: f64,
    seed: u64,
) -> Result<LanReport> {
    dspec.validate()?;
    signal.check_args(theta, period)?;
    let d = signal.dim();
    if h.len() != d + 1 {
        return Err(invalid(format!("h has length {}, expected {}", h.len(), d + 1)));
    }
    if replications == 0 {
        return Err(invalid("replications must be positive"));
    }
    LocalScale::new(n, d)?;
    let f_ref = reference_fisher(dspec, signal, theta, period, n, dt, seed)?;
    if !check_s7(&f_ref, S7_TOLERANCE) {
        return Err(Error::S7Violation { ratio: s7_ratio(&f_ref) });
    }
    let paths = replicate(replications, |r| -> Result<PathDecomposition> {
        let path = simulate_path(dspec, signal, theta, period, n as f64, dt, Noise::replication(seed, r))?;
        decompose(&path, signal, h, n, &f_ref.f)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let tests = summarize(&paths, &f_ref.f);
    Ok(LanReport { n, replications, h: h.to_vec(), f_ref, paths, tests })
}

fn summarize(paths: &[PathDecomposition], f_ref: &DMatrix<f64>) -> LanTests {
    let p = f_ref.nrows();
    let m = paths.len();
    let scores: Vec<Vec<f64>> = paths.iter().map(|x| x.score.clone()).collect();
    let cov = stats::covariance(&scores);
    let cov_rel_error = if m > 1 { spectral_norm(&(&cov - f_ref)) / spectral_norm(f_ref) } else { f64::NAN };
    let critical = stats::ks_critical_value(m, KS_LEVEL);
    let ks = (0..p)
        .map(|j| {
            let col: Vec<f64> = scores.iter().map(|s| s[j]).collect();
            let distance = stats::ks_normal(&col, f_ref[(j, j)]);
            KsResult { distance, critical, p_value: stats::ks_p_value(distance, m), pass: distance < critical }
        })
        .collect();
    let column = |j: usize| scores.iter().map(|s| s[j]).collect::<Vec<_>>();
    let residuals: Vec<f64> = paths.iter().map(|x| (x.lambda - x.quad).abs()).collect();
    let us: Vec<f64> = paths.iter().map(|x| x.u).collect();
    LanTests {
        cov_rel_error,
        empirical_cov: (0..p).map(|i| (0..p).map(|j| cov[(i, j)]).collect()).collect(),
        ks,
        score_mean: (0..p).map(|j| stats::mean(&column(j))).collect(),
        score_se: (0..p).map(|j| stats::standard_error(&column(j))).collect(),
        residual_median: stats::median(&residuals),
        residual_q90: stats::quantile(&residuals, 0.9),
        residual_max: residuals.iter().copied().fold(0.0, f64::max),
        mean_u: stats::mean(&us),
        identity_max_error: paths.iter().map(PathDecomposition::identity_error).fold(0.0, f64::max),
    }
}

impl LanReport {
    /// One row per replication: scores, Λ, quad, residual, R, R_direct, U, V.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let p = self.h.len();
        let mut header: Vec<String> = vec!["replication".into()];
        header.extend((1..=p).map(|i| format!("score{i}")));
        header.extend(["lambda", "quad", "residual", "R", "R_direct", "U", "V"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        for (r, x) in self.paths.iter().enumerate() {
            let mut row = vec![r.to_string()];
            row.extend(x.score.iter().map(|s| s.to_string()));
            row.extend([x.lambda, x.quad, x.lambda - x.quad, x.r, x.r_direct, x.u, x.v].map(|v| (v + 0.0).to_string()));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{simulate_with_increments, Drift, Volatility};
    use crate::signal::SignalSpec;
    use std::f64::consts::PI;

    fn sine() -> Signal {
        Signal::new(&SignalSpec::sine()).unwrap()
    }

    #[test]
    fn local_scale_pattern() {
        let s = LocalScale::new(100, 2).unwrap();
        assert_eq!(s.diag, vec![0.1, 0.1, 0.001]);
        assert!(LocalScale::new(0, 1).is_err());
        let (th, t) = s.perturb(&[1.0, 2.0], 1.0, &[1.0, -1.0, 2.0]);
        assert_eq!(th, vec![1.1, 1.9]);
        assert_eq!(t, 1.002);
    }

    #[test]
    fn llr_at_truth_is_zero() {
        let s = sine();
        let d = DiffusionSpec::ornstein_uhlenbeck(1.0);
        let p = simulate_path(&d, &s, &[1.0], 1.0, 5.0, 1e-3, Noise::seeded(1)).unwrap();
        assert_eq!(log_likelihood_ratio_sim(&p, &s, (&[1.0], 1.0)).unwrap(), 0.0);
        assert_eq!(log_likelihood_ratio_obs(&p, &d, &s, (&[1.0], 1.0), (&[1.0], 1.0)).unwrap(), 0.0);
        assert!(log_likelihood_ratio_sim(&p, &s, (&[1.0], 0.0)).is_err());
    }

    #[test]
    fn reversed_difference_sums_to_minus_quadratic() {
        let s = sine();
        let p = simulate_path(&DiffusionSpec::white_noise(), &s, &[1.0], 1.0, 5.0, 1e-3, Noise::seeded(4)).unwrap();
        let parts = llr_parts_sim(&p, &s, (&[1.3], 1.02)).unwrap();
        let forward = parts.stochastic - 0.5 * parts.quadratic;
        let backward = -parts.stochastic - 0.5 * parts.quadratic;
        assert!((forward + backward + parts.quadratic).abs() < 1e-12);
    }

    #[test]
    fn observed_form_matches_simulated_form() {
        let s = sine();
        let models = [
            DiffusionSpec::white_noise(),
            DiffusionSpec::ornstein_uhlenbeck(1.0),
            DiffusionSpec {
                drift: Drift::PiecewiseAffine { breakpoints: vec![0.0], pieces: vec![[-2.0, 0.5], [-0.5, -0.5]] },
                sigma: Volatility::BoundedPerturbation { c0: 1.0, amplitude: 0.4 },
                x0: 1.0,
            },
        ];
        for (k, d) in models.iter().enumerate() {
            let p = simulate_path(d, &s, &[1.0], 1.0, 20.0, 1e-3, Noise::seeded(k as u64)).unwrap();
            let cand: (&[f64], f64) = (&[0.8], 1.01);
            let sim = log_likelihood_ratio_sim(&p, &s, cand).unwrap();
            let obs = log_likelihood_ratio_obs(&p, d, &s, (&[1.0], 1.0), cand).unwrap();
            assert!((sim - obs).abs() <= 1e-10 * (1.0 + sim.abs()), "model {k}: {sim} vs {obs}");
        }
    }

    #[test]
    fn score_vanishes_without_noise() {
        let s = sine();
        let p = simulate_path(&DiffusionSpec::white_noise(), &s, &[1.0], 1.0, 10.0, 1e-3, Noise::Silent).unwrap();
        assert_eq!(score(&p, &s, 10).unwrap(), vec![0.0, 0.0]);
        assert!(score(&p, &s, 11).is_err());
    }

    #[test]
    fn score_uses_only_the_first_n_time_units() {
        let s = sine();
        let dt = 1e-2;
        let mut dw = vec![0.0; 1000];
        dw[150] = 1.0; // inside [0, 2)
        dw[700] = 5.0; // outside
        let p = simulate_with_increments(&DiffusionSpec::white_noise(), &s, &[1.0], 1.0, dt, dw).unwrap();
        let sc = score(&p, &s, 2).unwrap();
        let t = 1.5;
        assert!((sc[0] - (2.0 * PI * t).sin() / 2f64.sqrt()).abs() < 1e-12);
        let dts = -t * 2.0 * PI * (2.0 * PI * t).cos();
        assert!((sc[1] - dts / 2f64.powf(1.5)).abs() < 1e-12);
    }

    #[test]
    fn decomposition_is_an_identity() {
        let s = sine();
        let d = DiffusionSpec {
            drift: Drift::MeanReverting { beta: 1.0 },
            sigma: Volatility::BoundedPerturbation { c0: 1.0, amplitude: 0.5 },
            x0: 0.0,
        };
        let f = fisher_matrix(&s, &[1.0], 1.0, 1.0, 1.0).unwrap().f;
        for (k, h) in [[1.0, 1.0], [-2.0, 3.0], [0.0, 0.0], [0.5, -7.0]].iter().enumerate() {
            let p = simulate_path(&d, &s, &[1.0], 1.0, 30.0, 1e-3, Noise::seeded(k as u64)).unwrap();
            let x = decompose(&p, &s, h, 30, &f).unwrap();
            assert!(x.identity_error() < 1e-8, "h={h:?}: {}", x.identity_error());
            assert!((x.r - x.r_direct).abs() <= 1e-8 * (1.0 + x.lambda.abs()));
            assert!(x.u >= 0.0);
            assert!(x.v.abs() <= (x.u * x.h_fn_h).sqrt() * (1.0 + 1e-12) + 1e-300);
            let (th, tn) = LocalScale::new(30, 1).unwrap().perturb(&[1.0], 1.0, h);
            let llr = log_likelihood_ratio_sim(&p, &s, (&th, tn)).unwrap();
            assert!((llr - x.lambda).abs() <= 1e-12 * (1.0 + llr.abs()));
        }
    }

    #[test]
    fn zero_direction_gives_zero_everything() {
        let s = sine();
        let r = lan_report(&DiffusionSpec::ornstein_uhlenbeck(1.0), &s, &[1.0], 1.0, &[0.0, 0.0], 5, 4, 1e-3, 3).unwrap();
        for p in &r.paths {
            assert_eq!((p.lambda, p.quad, p.lambda - p.quad), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn singular_model_is_rejected() {
        let s = sine();
        let r = lan_report(&DiffusionSpec::white_noise(), &s, &[0.0], 1.0, &[1.0, 1.0], 5, 2, 1e-3, 3);
        assert!(matches!(r, Err(Error::S7Violation { .. })));
    }

    #[test]
    fn llr_mean_matches_quadratic_drift() {
        // h = (1, 0) at n = 100: Λ is exactly Gaussian with mean −½·0.01·50 = −0.25
        let s = sine();
        let d = DiffusionSpec::white_noise();
        let lambdas = replicate(500, |r| {
            let p = simulate_path(&d, &s, &[1.0], 1.0, 100.0, 1e-3, Noise::replication(11, r)).unwrap();
            log_likelihood_ratio_sim(&p, &s, (&[1.1], 1.0)).unwrap()
        });
        let m = stats::mean(&lambdas);
        let se = stats::standard_error(&lambdas);
        assert!((m + 0.25).abs() < 3.0 * se, "mean {m}, se {se}");
    }

    #[test]
    fn csv_has_header_and_rows() {
        let s = sine();
        let r = lan_report(&DiffusionSpec::white_noise(), &s, &[1.0], 1.0, &[1.0, 1.0], 2, 3, 1e-2, 1).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("replication,score1,score2,lambda,quad,residual,R,R_direct,U,V\n"));
        assert_eq!(text.lines().count(), 4);
    }
}

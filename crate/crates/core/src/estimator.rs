//! Joint maximum-likelihood estimation of (θ, T) by profiling out θ.
//!
//! For a signal affine in θ, `S_θ = S_0 + Σ θ_i φ_i`, the quasi-log-likelihood
//!
//! ```text
//! ℓ(θ, T) = Σ S(t_j)/σ²(ξ_j) (Δξ_j − b(ξ_j) dt) − ½ Σ S(t_j)²/σ²(ξ_j) dt
//! ```
//!
//! is quadratic in θ, so `θ̂(T)` solves `G(T) θ = v(T)` exactly and the
//! search reduces to one dimension. The profiled objective oscillates in T
//! with ripple spacing of order `T²/n`; it is scanned on a grid fine enough
//! to resolve that and refined by golden-section search.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::fisher::fisher_path_estimate;
use crate::replicate::replicate;
use crate::sde::{simulate_path, DiffusionSpec, Noise, PathRecord};
use crate::signal::Signal;
use crate::stats;

/// Normal equations with a larger condition number are treated as singular.
pub const MAX_CONDITION: f64 = 1e10;

const LANES: usize = 8;
const REANCHOR: usize = 1024;

/// `ℓ(θ, T)` by left-point sums over the whole path.
pub fn quasi_log_likelihood(path: &PathRecord, dspec: &DiffusionSpec, signal: &Signal, theta: &[f64], period: f64) -> Result<f64> {
    signal.check_args(theta, period)?;
    let shape = signal.shape(theta)?;
    let mut acc = 0.0;
    for i in 0..path.steps() {
        let x = path.xi[i];
        let sig2 = dspec.sigma.eval(x).powi(2);
        let s = shape.value(path.time(i) / period);
        acc += s / sig2 * (path.xi[i + 1] - x - dspec.drift.eval(x) * path.dt) - 0.5 * s * s / sig2 * path.dt;
    }
    Ok(acc)
}

/// Per-step sufficient data `y_j = (Δξ_j − b dt)/σ²` and `w_j = dt/σ²`.
#[derive(Debug, Clone)]
pub struct ProfileData {
    dt: f64,
    y: Vec<f64>,
    w: Vec<f64>,
}

impl ProfileData {
    pub fn new(path: &PathRecord, dspec: &DiffusionSpec) -> Self {
        let steps = path.steps();
        let mut y = Vec::with_capacity(steps);
        let mut w = Vec::with_capacity(steps);
        for i in 0..steps {
            let x = path.xi[i];
            let sig2 = dspec.sigma.eval(x).powi(2);
            y.push((path.xi[i + 1] - x - dspec.drift.eval(x) * path.dt) / sig2);
            w.push(path.dt / sig2);
        }
        ProfileData { dt: path.dt, y, w }
    }

    pub fn horizon(&self) -> f64 {
        self.y.len() as f64 * self.dt
    }
}

/// The signal split into harmonics: `φ_i` and `S_0` coefficients per frequency.
struct Design {
    d: usize,
    freqs: Vec<f64>,
    basis_sin: Vec<Vec<f64>>,
    basis_cos: Vec<Vec<f64>>,
    off_sin: Vec<f64>,
    off_cos: Vec<f64>,
    has_offset: bool,
}

impl Design {
    fn new(signal: &Signal) -> Self {
        let d = signal.dim();
        let freqs = signal.frequencies();
        let partials: Vec<_> = (0..d).map(|i| signal.partial_poly(i)).collect();
        let offset = signal.offset_poly();
        let h = freqs.len();
        let basis_sin = (0..h).map(|k| partials.iter().map(|p| p.terms[k].1).collect()).collect();
        let basis_cos = (0..h).map(|k| partials.iter().map(|p| p.terms[k].2).collect()).collect();
        let off_sin: Vec<f64> = offset.terms.iter().map(|t| t.1).collect();
        let off_cos: Vec<f64> = offset.terms.iter().map(|t| t.2).collect();
        let has_offset = off_sin.iter().chain(&off_cos).any(|&c| c != 0.0);
        Design { d, freqs, basis_sin, basis_cos, off_sin, off_cos, has_offset }
    }
}

/// Normal-equation moments at one candidate period.
#[derive(Debug, Clone)]
struct Moments {
    g: DMatrix<f64>,
    /// `v − Σ φ S_0 w`
    v: DVector<f64>,
    /// `Σ S_0 y − ½ Σ S_0² w`
    z0: f64,
}

/// Accumulates moments for up to `LANES` periods in one pass over the path.
fn moments_batch(data: &ProfileData, design: &Design, periods: &[f64]) -> Vec<Moments> {
    debug_assert!(!periods.is_empty() && periods.len() <= LANES);
    let d = design.d;
    let nh = design.freqs.len();
    let lane_period = |l: usize| periods[l.min(periods.len() - 1)];
    let omega: Vec<[f64; LANES]> = design
        .freqs
        .iter()
        .map(|&f| std::array::from_fn(|l| 2.0 * PI * f / lane_period(l)))
        .collect();
    let mut rot_s = vec![[0.0; LANES]; nh];
    let mut rot_c = vec![[0.0; LANES]; nh];
    for h in 0..nh {
        for l in 0..LANES {
            let (s, c) = (omega[h][l] * data.dt).sin_cos();
            rot_s[h][l] = s;
            rot_c[h][l] = c;
        }
    }
    let mut sn = vec![[0.0; LANES]; nh];
    let mut cs = vec![[0.0; LANES]; nh];
    let npairs = d * (d + 1) / 2;
    let mut g = vec![[0.0; LANES]; npairs];
    let mut v = vec![[0.0; LANES]; d];
    let mut q = vec![[0.0; LANES]; d];
    let mut z0 = [0.0; LANES];
    let mut phi = vec![[0.0; LANES]; d];

    for (j, (&yj, &wj)) in data.y.iter().zip(&data.w).enumerate() {
        if j.is_multiple_of(REANCHOR) {
            let t = j as f64 * data.dt;
            for h in 0..nh {
                for l in 0..LANES {
                    let (s, c) = (omega[h][l] * t).sin_cos();
                    sn[h][l] = s;
                    cs[h][l] = c;
                }
            }
        }
        for (i, p) in phi.iter_mut().enumerate() {
            *p = [0.0; LANES];
            for h in 0..nh {
                let (a, b) = (design.basis_sin[h][i], design.basis_cos[h][i]);
                for l in 0..LANES {
                    p[l] += a * sn[h][l] + b * cs[h][l];
                }
            }
        }
        let mut k = 0;
        for i in 0..d {
            for l in 0..LANES {
                v[i][l] += phi[i][l] * yj;
            }
            for m in i..d {
                for l in 0..LANES {
                    g[k][l] += phi[i][l] * phi[m][l] * wj;
                }
                k += 1;
            }
        }
        if design.has_offset {
            let mut s0 = [0.0; LANES];
            for h in 0..nh {
                for l in 0..LANES {
                    s0[l] += design.off_sin[h] * sn[h][l] + design.off_cos[h] * cs[h][l];
                }
            }
            for l in 0..LANES {
                z0[l] += s0[l] * yj - 0.5 * s0[l] * s0[l] * wj;
            }
            for i in 0..d {
                for l in 0..LANES {
                    q[i][l] += phi[i][l] * s0[l] * wj;
                }
            }
        }
        for h in 0..nh {
            for l in 0..LANES {
                let (s, c) = (sn[h][l], cs[h][l]);
                sn[h][l] = s * rot_c[h][l] + c * rot_s[h][l];
                cs[h][l] = c * rot_c[h][l] - s * rot_s[h][l];
            }
        }
    }

    (0..periods.len())
        .map(|l| {
            let mut gm = DMatrix::zeros(d, d);
            let mut k = 0;
            for i in 0..d {
                for m in i..d {
                    gm[(i, m)] = g[k][l];
                    gm[(m, i)] = g[k][l];
                    k += 1;
                }
            }
            let vv = DVector::from_iterator(d, (0..d).map(|i| v[i][l] - q[i][l]));
            Moments { g: gm, v: vv, z0: z0[l] }
        })
        .collect()
}

/// Solves the normal equations; returns `(θ̂, profiled ℓ)`.
fn solve_profile(m: &Moments) -> Result<(Vec<f64>, f64)> {
    let eig = SymmetricEigen::new(m.g.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) || max / min > MAX_CONDITION {
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        return Err(Error::SingularNormalEquations { condition });
    }
    let inv_diag = eig.eigenvalues.map(|l| 1.0 / l);
    let theta = &eig.eigenvectors * DMatrix::from_diagonal(&inv_diag) * eig.eigenvectors.transpose() * &m.v;
    let value = m.z0 + 0.5 * theta.dot(&m.v);
    Ok((theta.iter().copied().collect(), value))
}

const TAYLOR_TERMS: usize = 20;
const MIN_BLOCK: usize = 32;

/// Block-wise Taylor moments of `Σ x_j e^{i g ω t_j}` around a reference
/// frequency `ω0`: `Σ_{j∈b} x_j e^{i g ω0 τ_j} (τ_j/h)^m` with `τ_j` measured
/// from the block centre.
struct Expansion {
    g: f64,
    on_y: bool,
    moments: Vec<[Complex<f64>; TAYLOR_TERMS]>,
}

struct Blocks {
    omega0: f64,
    half: f64,
    centers: Vec<f64>,
    expansions: Vec<Expansion>,
}

/// Evaluates the profiled objective at arbitrary periods inside a bracket.
pub struct ProfileEngine<'a> {
    data: &'a ProfileData,
    design: Design,
    blocks: Option<Blocks>,
}

impl<'a> ProfileEngine<'a> {
    pub fn new(data: &'a ProfileData, signal: &Signal, bracket: (f64, f64)) -> Result<Self> {
        let (lo, hi) = bracket;
        if !(lo > 0.0 && lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(invalid(format!("invalid period bracket ({lo}, {hi})")));
        }
        let design = Design::new(signal);
        let mut keys: Vec<(f64, bool)> = design.freqs.iter().map(|&f| (f, true)).collect();
        for &f1 in &design.freqs {
            for &f2 in &design.freqs {
                keys.push(((f1 - f2).abs(), false));
                keys.push((f1 + f2, false));
            }
        }
        let mut uniq: Vec<(f64, bool)> = Vec::new();
        for k in keys {
            if !uniq.contains(&k) {
                uniq.push(k);
            }
        }
        let g_max = uniq.iter().map(|k| k.0).fold(0.0, f64::max);
        let (w_lo, w_hi) = (2.0 * PI / lo, 2.0 * PI / hi);
        let spread = 0.5 * (w_lo - w_hi);
        let steps = data.y.len();
        let block = if spread * g_max > 0.0 {
            ((1.0 / (g_max * spread * data.dt)).floor() as usize + 1).min(steps)
        } else {
            steps
        };
        let blocks = (block >= MIN_BLOCK && steps > 0).then(|| Blocks::new(data, 0.5 * (w_lo + w_hi), block, &uniq));
        Ok(ProfileEngine { data, design, blocks })
    }

    /// Profiled objective and `θ̂(T)` at each of `periods`.
    pub fn values(&self, periods: &[f64]) -> Result<Vec<(Vec<f64>, f64)>> {
        if let Some(bad) = periods.iter().find(|&&p| !(p > 0.0 && p.is_finite())) {
            return Err(invalid(format!("period must be positive, got {bad}")));
        }
        match &self.blocks {
            Some(b) => periods.iter().map(|&t| solve_profile(&b.moments(&self.design, t))).collect(),
            None => {
                let mut out = Vec::with_capacity(periods.len());
                for chunk in periods.chunks(LANES) {
                    for m in moments_batch(self.data, &self.design, chunk) {
                        out.push(solve_profile(&m)?);
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn value(&self, period: f64) -> Result<(Vec<f64>, f64)> {
        Ok(self.values(&[period])?.remove(0))
    }
}

impl Blocks {
    fn new(data: &ProfileData, omega0: f64, block: usize, keys: &[(f64, bool)]) -> Self {
        let steps = data.y.len();
        let half = 0.5 * (block - 1).max(1) as f64 * data.dt;
        let starts: Vec<usize> = (0..steps).step_by(block).collect();
        let centers: Vec<f64> = starts
            .iter()
            .map(|&s| {
                let len = block.min(steps - s);
                (s as f64 + 0.5 * (len - 1) as f64) * data.dt
            })
            .collect();
        let expansions = keys
            .iter()
            .map(|&(g, on_y)| {
                let x = if on_y { &data.y } else { &data.w };
                let moments = starts
                    .iter()
                    .zip(&centers)
                    .map(|(&s, &c)| {
                        let mut acc = [Complex::new(0.0, 0.0); TAYLOR_TERMS];
                        let end = (s + block).min(steps);
                        for (j, &xj) in x[s..end].iter().enumerate().map(|(o, v)| (s + o, v)) {
                            let tau = j as f64 * data.dt - c;
                            let (sn, cs) = (g * omega0 * tau).sin_cos();
                            let mut z = Complex::new(cs, sn) * xj;
                            let u = tau / half;
                            for a in acc.iter_mut() {
                                *a += z;
                                z *= u;
                            }
                        }
                        acc
                    })
                    .collect();
                Expansion { g, on_y, moments }
            })
            .collect();
        Blocks { omega0, half, centers, expansions }
    }

    /// `Σ x_j e^{i g ω t_j}` for `ω = 2π/period`.
    fn sum(&self, e: &Expansion, omega: f64) -> Complex<f64> {
        let c = Complex::new(0.0, e.g * (omega - self.omega0) * self.half);
        let coef: Vec<Complex<f64>> = (0..TAYLOR_TERMS)
            .scan(Complex::new(1.0, 0.0), |acc, m| {
                let out = *acc;
                *acc = *acc * c / (m + 1) as f64;
                Some(out)
            })
            .collect();
        let mut total = Complex::new(0.0, 0.0);
        for (mom, &center) in e.moments.iter().zip(&self.centers) {
            let (sn, cs) = (e.g * omega * center).sin_cos();
            let inner: Complex<f64> = mom.iter().zip(&coef).map(|(m, k)| m * k).sum();
            total += Complex::new(cs, sn) * inner;
        }
        total
    }

    fn moments(&self, design: &Design, period: f64) -> Moments {
        let omega = 2.0 * PI / period;
        let sums: Vec<Complex<f64>> = self.expansions.iter().map(|e| self.sum(e, omega)).collect();
        let lookup = |g: f64, on_y: bool| -> Complex<f64> {
            let k = self.expansions.iter().position(|e| e.g == g.abs() && e.on_y == on_y).expect("precomputed frequency");
            if g < 0.0 { sums[k].conj() } else { sums[k] }
        };
        let nh = design.freqs.len();
        // Σ (a1 sin f1 + b1 cos f1)(a2 sin f2 + b2 cos f2) w over harmonic pairs
        let pair = |c1: &dyn Fn(usize) -> (f64, f64), c2: &dyn Fn(usize) -> (f64, f64)| -> f64 {
            let mut acc = 0.0;
            for h1 in 0..nh {
                let (a1, b1) = c1(h1);
                for h2 in 0..nh {
                    let (a2, b2) = c2(h2);
                    let (f1, f2) = (design.freqs[h1], design.freqs[h2]);
                    let dif = lookup(f1 - f2, false);
                    let sum = lookup(f1 + f2, false);
                    acc += 0.5
                        * (a1 * a2 * (dif.re - sum.re)
                            + b1 * b2 * (dif.re + sum.re)
                            + a1 * b2 * (sum.im + dif.im)
                            + b1 * a2 * (sum.im - dif.im));
                }
            }
            acc
        };
        let linear = |c: &dyn Fn(usize) -> (f64, f64)| -> f64 {
            (0..nh)
                .map(|h| {
                    let (a, b) = c(h);
                    let e = lookup(design.freqs[h], true);
                    a * e.im + b * e.re
                })
                .sum()
        };
        let d = design.d;
        let basis = |i: usize| move |h: usize| (design.basis_sin[h][i], design.basis_cos[h][i]);
        let offset = |h: usize| (design.off_sin[h], design.off_cos[h]);
        let mut g = DMatrix::zeros(d, d);
        for i in 0..d {
            for k in i..d {
                let val = pair(&basis(i), &basis(k));
                g[(i, k)] = val;
                g[(k, i)] = val;
            }
        }
        let (v, z0) = if design.has_offset {
            let v = DVector::from_iterator(d, (0..d).map(|i| linear(&basis(i)) - pair(&basis(i), &offset)));
            (v, linear(&offset) - 0.5 * pair(&offset, &offset))
        } else {
            (DVector::from_iterator(d, (0..d).map(|i| linear(&basis(i)))), 0.0)
        };
        Moments { g, v, z0 }
    }
}

/// Profiled objective and `θ̂(T)` at each of `periods`.
pub fn profile_values(data: &ProfileData, signal: &Signal, periods: &[f64]) -> Result<Vec<(Vec<f64>, f64)>> {
    if periods.is_empty() {
        return Ok(Vec::new());
    }
    let lo = periods.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = periods.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo > 0.0 && hi.is_finite()) {
        return Err(invalid(format!("periods must be positive and finite, got range ({lo}, {hi})")));
    }
    ProfileEngine::new(data, signal, (lo, hi))?.values(periods)
}

/// Direct single-pass evaluation, without block expansions.
pub fn profile_values_direct(data: &ProfileData, signal: &Signal, periods: &[f64]) -> Result<Vec<(Vec<f64>, f64)>> {
    let engine = ProfileEngine { data, design: Design::new(signal), blocks: None };
    engine.values(periods)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationResult {
    pub theta_hat: Vec<f64>,
    pub period_hat: f64,
    /// Profiled log-likelihood at the estimate.
    pub log_likelihood: f64,
    /// Coarse-grid samples `(T, ℓ(θ̂(T), T))`.
    pub profile_curve: Vec<(f64, f64)>,
    /// `δ_n diag(F_n(1)^{-1})^{1/2}` at the estimate, if F_n(1) is invertible.
    pub stderr: Option<Vec<f64>>,
}

impl EstimationResult {
    pub fn write_profile_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "T,profile")?;
        for (t, v) in &self.profile_curve {
            writeln!(out, "{t},{v}")?;
        }
        Ok(())
    }
}

/// Number of coarse grid cells for a bracket and horizon.
pub fn grid_cells(bracket: (f64, f64), n: f64, grid_points: usize) -> usize {
    grid_points.max((4.0 * n / bracket.0).ceil() as usize).max(2)
}

fn golden_max<F: FnMut(f64) -> Result<f64>>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64)> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while (b - a) > tol {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2)?;
        }
    }
    Ok(if f1 >= f2 { (x1, f1) } else { (x2, f2) })
}

/// Profile-likelihood MLE of (θ, T) with T searched in `bracket`.
///
/// A collapsed bracket (`lo == hi`) estimates θ with T known.
pub fn profile_mle(
    path: &PathRecord,
    dspec: &DiffusionSpec,
    signal: &Signal,
    bracket: (f64, f64),
    grid_points: usize,
) -> Result<EstimationResult> {
    let (lo, hi) = bracket;
    if !(lo > 0.0 && lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(invalid(format!("invalid period bracket ({lo}, {hi})")));
    }
    let data = ProfileData::new(path, dspec);
    let n = data.horizon();
    let engine = ProfileEngine::new(&data, signal, bracket)?;
    let eval = |t: f64| engine.value(t);

    let (theta_hat, period_hat, log_likelihood, profile_curve) = if lo == hi {
        let (th, v) = eval(lo)?;
        (th, lo, v, vec![(lo, v)])
    } else {
        let cells = grid_cells(bracket, n, grid_points);
        let step = (hi - lo) / cells as f64;
        let grid: Vec<f64> = (0..=cells).map(|k| if k == cells { hi } else { lo + k as f64 * step }).collect();
        let values = engine.values(&grid)?;
        let mut best = 0;
        for (k, (_, v)) in values.iter().enumerate() {
            if *v > values[best].1 {
                best = k;
            }
        }
        if best == 0 || best == cells {
            return Err(Error::BoundaryMaximum { period: grid[best] });
        }
        let tol = (1e-6 * n.powf(-1.5) * (hi - lo)).max(1e-10);
        let (t_star, v_star) = golden_max(|t| Ok(eval(t)?.1), grid[best - 1], grid[best + 1], tol)?;
        let curve = grid.iter().zip(&values).map(|(t, (_, v))| (*t, *v)).collect();
        if v_star >= values[best].1 {
            let (th, v) = eval(t_star)?;
            (th, t_star, v, curve)
        } else {
            (values[best].0.clone(), grid[best], values[best].1, curve)
        }
    };

    let stderr = fisher_path_estimate(path, signal, &theta_hat, period_hat, 1.0, n).ok().and_then(|fm| {
        let inv = fm.f.clone().try_inverse()?;
        let d = theta_hat.len();
        (0..=d)
            .map(|i| {
                let var = inv[(i, i)];
                let scale = if i < d { n.powf(-0.5) } else { n.powf(-1.5) };
                (var > 0.0).then(|| scale * var.sqrt())
            })
            .collect()
    });
    Ok(EstimationResult { theta_hat, period_hat, log_likelihood, profile_curve, stderr })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateSettings {
    pub n_list: Vec<u64>,
    pub replications: usize,
    pub dt: f64,
    pub seed: u64,
    pub bracket: (f64, f64),
    pub grid_points: usize,
    /// Drive every path with zero noise.
    pub silent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub n: u64,
    pub component: String,
    pub sd: f64,
    pub mean_error: f64,
    pub kept: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateSlope {
    pub component: String,
    /// Least-squares slope of log(sd) on log(n); absent when degenerate.
    pub slope: Option<f64>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    pub slopes: Vec<RateSlope>,
}

/// Standard deviations below this are treated as zero in the slope fit.
pub const DEGENERATE_SD: f64 = 1e-8;

impl RateTable {
    pub fn slope(&self, component: &str) -> Option<&RateSlope> {
        self.slopes.iter().find(|s| s.component == component)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "n,component,sd,mean_error,kept,dropped,slope,degenerate")?;
        for r in &self.rows {
            let s = self.slope(&r.component).expect("slope for every component");
            let slope = s.slope.map_or(String::new(), |v| v.to_string());
            writeln!(out, "{},{},{},{},{},{},{},{}", r.n, r.component, r.sd, r.mean_error, r.kept, r.dropped, slope, s.degenerate)?;
        }
        Ok(())
    }
}

pub fn component_names(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("theta{i}")).chain(std::iter::once("T".to_string())).collect()
}

/// Monte Carlo spread of the joint MLE across horizons `n_list`, with paired
/// noise streams across horizons.
pub fn rate_experiment(
    dspec: &DiffusionSpec,
    signal: &Signal,
    theta: &[f64],
    period: f64,
    settings: &RateSettings,
) -> Result<RateTable> {
    dspec.validate()?;
    signal.check_args(theta, period)?;
    let ns = &settings.n_list;
    if ns.len() < 3 {
        return Err(invalid(format!("n_list needs at least 3 entries, got {}", ns.len())));
    }
    if ns[0] == 0 || ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("n_list must be positive and strictly increasing"));
    }
    if settings.replications < 2 {
        return Err(invalid("rate experiment needs at least 2 replications"));
    }
    let d = signal.dim();
    let names = component_names(d);
    let mut rows = Vec::new();
    let mut sds: Vec<Vec<f64>> = vec![Vec::new(); d + 1];
    for &n in ns {
        let errors: Vec<Option<Vec<f64>>> = replicate(settings.replications, |r| {
            let noise = if settings.silent { Noise::Silent } else { Noise::replication(settings.seed, r) };
            let path = simulate_path(dspec, signal, theta, period, n as f64, settings.dt, noise).ok()?;
            let est = profile_mle(&path, dspec, signal, settings.bracket, settings.grid_points).ok()?;
            let mut e: Vec<f64> = est.theta_hat.iter().zip(theta).map(|(a, b)| a - b).collect();
            e.push(est.period_hat - period);
            Some(e)
        });
        let kept: Vec<Vec<f64>> = errors.iter().flatten().cloned().collect();
        let dropped = errors.len() - kept.len();
        for (c, name) in names.iter().enumerate() {
            let col: Vec<f64> = kept.iter().map(|e| e[c]).collect();
            let sd = stats::sample_sd(&col);
            sds[c].push(sd);
            rows.push(RateRow {
                n,
                component: name.clone(),
                sd,
                mean_error: if col.is_empty() { f64::NAN } else { stats::mean(&col) },
                kept: kept.len(),
                dropped,
            });
        }
    }
    let log_n: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let slopes = names
        .iter()
        .zip(&sds)
        .map(|(name, sd)| {
            let degenerate = sd.iter().any(|&s| !(s > DEGENERATE_SD));
            let slope = (!degenerate).then(|| stats::ls_slope(&log_n, &sd.iter().map(|s| s.ln()).collect::<Vec<_>>()));
            RateSlope { component: name.clone(), slope, degenerate }
        })
        .collect();
    Ok(RateTable { rows, slopes })
}

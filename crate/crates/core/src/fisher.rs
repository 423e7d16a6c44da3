//! The block Fisher matrix `F_(θ,T)(t)` and its time derivative.
//!
//! With `A_ij = ⟨∂_{θ_i}S_θ, ∂_{θ_j}S_θ⟩_ν`, `c_i = ⟨∂_{θ_i}S_θ, S'_θ⟩_ν`
//! and `e = ⟨S'_θ, S'_θ⟩_ν`:
//!
//! ```text
//! F(t)  = [ t A              −t²/(2T²) c ]     F'(t) = [ A          −t/T² c  ]
//!         [ −t²/(2T²) cᵀ     t³/(3T⁴) e  ]             [ −t/T² cᵀ    t²/T⁴ e ]
//! ```

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::ergodic::{nu_inner_product, NuArg};
use crate::error::{invalid, Result};
use crate::sde::{PathRecord, Volatility};
use crate::signal::{GridPhases, Signal};

/// Relative eigenvalue threshold separating singular F' from conditioning noise.
pub const S7_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ClosedForm,
    Quadrature,
    PathEstimate,
}

/// The ν inner products `A`, `c`, `e` that determine F(t) for every t.
#[derive(Debug, Clone, PartialEq)]
pub struct NuBlock {
    pub a: DMatrix<f64>,
    pub c: Vec<f64>,
    pub e: f64,
}

impl NuBlock {
    pub fn closed_form(signal: &Signal, theta: &[f64], period: f64, sigma_const: f64) -> Result<(Self, Provenance)> {
        if !(sigma_const > 0.0) {
            return Err(invalid(format!("sigma must be positive, got {sigma_const}")));
        }
        let d = signal.dim();
        let vol = Volatility::Constant { c: sigma_const };
        let mut a = DMatrix::zeros(d, d);
        let mut c = vec![0.0; d];
        for i in 0..d {
            for j in i..d {
                let v = nu_inner_product(signal, theta, period, (NuArg::ThetaPartial(i), NuArg::ThetaPartial(j)), &vol, None)?
                    .value;
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
            c[i] = nu_inner_product(signal, theta, period, (NuArg::ThetaPartial(i), NuArg::ShapeDerivative), &vol, None)?
                .value;
        }
        let e = nu_inner_product(signal, theta, period, (NuArg::ShapeDerivative, NuArg::ShapeDerivative), &vol, None)?
            .value;
        let exact = signal.frequencies().iter().all(|f| f.fract() == 0.0);
        let provenance = if exact { Provenance::ClosedForm } else { Provenance::Quadrature };
        Ok((NuBlock { a, c, e }, provenance))
    }

    /// Reads `A`, `c`, `e` off an empirical `F_n(t)` by undoing the t, T prefactors.
    fn from_fisher(f: &DMatrix<f64>, period: f64, t: f64) -> Self {
        let d = f.nrows() - 1;
        let a = f.view((0, 0), (d, d)).into_owned() / t;
        let scale = -2.0 * period * period / (t * t);
        let c = (0..d).map(|i| f[(i, d)] * scale).collect();
        let e = f[(d, d)] * 3.0 * period.powi(4) / t.powi(3);
        NuBlock { a, c, e }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherMatrix {
    pub t: f64,
    pub f: DMatrix<f64>,
    pub f_prime: DMatrix<f64>,
    pub provenance: Provenance,
}

impl FisherMatrix {
    pub fn assemble(block: &NuBlock, period: f64, t: f64, provenance: Provenance) -> Self {
        let d = block.c.len();
        let mut f = DMatrix::zeros(d + 1, d + 1);
        let mut fp = DMatrix::zeros(d + 1, d + 1);
        let t2 = period * period;
        for i in 0..d {
            for j in 0..d {
                f[(i, j)] = t * block.a[(i, j)];
                fp[(i, j)] = block.a[(i, j)];
            }
            let cross = -t * t / (2.0 * t2) * block.c[i];
            f[(i, d)] = cross;
            f[(d, i)] = cross;
            let cross_p = -t / t2 * block.c[i];
            fp[(i, d)] = cross_p;
            fp[(d, i)] = cross_p;
        }
        f[(d, d)] = t.powi(3) / (3.0 * t2 * t2) * block.e;
        fp[(d, d)] = t * t / (t2 * t2) * block.e;
        FisherMatrix { t, f, f_prime: fp, provenance }
    }

    pub fn dim(&self) -> usize {
        self.f.nrows()
    }

    /// CSV with one row per matrix row; columns are labelled `theta1..thetad, T`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.dim();
        let labels: Vec<String> = (1..n).map(|i| format!("theta{i}")).chain(std::iter::once("T".to_string())).collect();
        writeln!(out, "matrix,row,{}", labels.join(","))?;
        for (name, m) in [("F", &self.f), ("Fprime", &self.f_prime)] {
            for (i, label) in labels.iter().enumerate() {
                // adding 0.0 prints negative zero as 0
                let row: Vec<String> = (0..n).map(|j| format!("{}", m[(i, j)] + 0.0)).collect();
                writeln!(out, "{name},{label},{}", row.join(","))?;
            }
        }
        Ok(())
    }
}

/// `F_(θ,T)(t)` for constant σ from exact trigonometric integrals.
pub fn fisher_matrix(signal: &Signal, theta: &[f64], period: f64, t: f64, sigma_const: f64) -> Result<FisherMatrix> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid(format!("time argument t must be positive, got {t}")));
    }
    let (block, provenance) = NuBlock::closed_form(signal, theta, period, sigma_const)?;
    Ok(FisherMatrix::assemble(&block, period, t, provenance))
}

fn eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Ratio of smallest to largest eigenvalue of F'(t) (0 for the zero matrix).
pub fn s7_ratio(fm: &FisherMatrix) -> f64 {
    let ev = eigenvalues(&fm.f_prime);
    let max = *ev.last().unwrap_or(&0.0);
    if max <= 0.0 {
        0.0
    } else {
        ev[0] / max
    }
}

/// True iff the smallest eigenvalue of F'(t) exceeds `tol` times the largest.
pub fn check_s7(fm: &FisherMatrix, tol: f64) -> bool {
    let ev = eigenvalues(&fm.f_prime);
    match (ev.first(), ev.last()) {
        (Some(&lo), Some(&hi)) => hi > 0.0 && lo > tol * hi,
        _ => false,
    }
}

/// Symmetric square root of a positive semidefinite matrix.
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Spectral norm of a symmetric matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().fold(0.0_f64, |acc, l| acc.max(l.abs()))
}

/// Empirical `F_n(t) = δ_n (∫₀^{tn} Ṡ Ṡᵀ / σ²(η_s) ds) δ_n` by left-point sums.
pub fn fisher_path_estimate(
    path: &PathRecord,
    signal: &Signal,
    theta: &[f64],
    period: f64,
    t: f64,
    n: f64,
) -> Result<FisherMatrix> {
    signal.check_args(theta, period)?;
    if !(t > 0.0) || !(n > 0.0) {
        return Err(invalid("t and n must be positive"));
    }
    if t * n > path.horizon() * (1.0 + 1e-12) {
        return Err(invalid(format!("path horizon {} shorter than t·n = {}", path.horizon(), t * n)));
    }
    let d = signal.dim();
    let shape = signal.shape(theta)?;
    let m = path.steps_until(t * n);
    let mut acc = DMatrix::<f64>::zeros(d + 1, d + 1);
    let mut sdot = vec![0.0; d + 1];
    let mut phases = GridPhases::new(&signal.frequencies(), period, path.dt);
    for i in 0..m {
        let s = path.time(i);
        shape.stacked_at(period, s, phases.advance(), &mut sdot);
        let sig = path.diffusion.sigma.eval(path.xi[i]);
        let w = path.dt / (sig * sig);
        for a in 0..=d {
            let wa = w * sdot[a];
            for b in a..=d {
                acc[(a, b)] += wa * sdot[b];
            }
        }
    }
    let scale: Vec<f64> = (0..=d).map(|i| if i < d { n.powf(-0.5) } else { n.powf(-1.5) }).collect();
    let mut f = DMatrix::zeros(d + 1, d + 1);
    for a in 0..=d {
        for b in a..=d {
            let v = acc[(a, b)] * scale[a] * scale[b];
            f[(a, b)] = v;
            f[(b, a)] = v;
        }
    }
    let block = NuBlock::from_fisher(&f, period, t);
    let mut fm = FisherMatrix::assemble(&block, period, t, Provenance::PathEstimate);
    fm.f = f;
    Ok(fm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{simulate_path, DiffusionSpec, Noise};
    use crate::signal::{BasisFunction, BasisTerm, SignalSpec};
    use std::f64::consts::{PI, SQRT_2};

    fn sine() -> Signal {
        Signal::new(&SignalSpec::sine()).unwrap()
    }

    #[test]
    fn sine_fisher_at_one() {
        let fm = fisher_matrix(&sine(), &[1.0], 1.0, 1.0, 1.0).unwrap();
        assert_eq!(fm.provenance, Provenance::ClosedForm);
        // oracle: integrate F'(t) = diag(0.5, 2π² t²) over t ∈ (0, 1) by Simpson
        let corner = crate::signal::simpson_unit(|t| 2.0 * PI * PI * t * t, 256);
        assert!((fm.f[(0, 0)] - 0.5).abs() < 1e-14);
        assert_eq!(fm.f[(0, 1)], 0.0);
        assert!((fm.f[(1, 1)] - corner).abs() < 1e-10);
        assert!((fm.f[(1, 1)] - 6.57974).abs() < 1e-5);
        assert!((fm.f_prime[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((fm.f_prime[(1, 1)] - 2.0 * PI * PI).abs() < 1e-12);
        assert!((fm.f_prime[(1, 1)] - 19.7392).abs() < 1e-4);
    }

    #[test]
    fn zero_amplitude_has_empty_corner() {
        let fm = fisher_matrix(&sine(), &[0.0], 1.0, 1.0, 1.0).unwrap();
        assert_eq!(fm.f[(1, 1)], 0.0);
        assert!(!check_s7(&fm, S7_TOLERANCE));
        assert!(check_s7(&fisher_matrix(&sine(), &[1.0], 1.0, 1.0, 1.0).unwrap(), S7_TOLERANCE));
    }

    #[test]
    fn rejects_nonpositive_time() {
        assert!(fisher_matrix(&sine(), &[1.0], 1.0, 0.0, 1.0).is_err());
        assert!(fisher_matrix(&sine(), &[1.0], 1.0, -2.0, 1.0).is_err());
    }

    #[test]
    fn time_scaling_of_blocks() {
        // a family with non-zero cross terms: g_1 = θ_1, h_1 = 0.5 + θ_2, g_2 = θ_2
        let spec = SignalSpec::Fourier {
            d: 2,
            terms: vec![
                crate::signal::FourierTerm {
                    sin: crate::signal::Affine { offset: 0.0, coeffs: vec![1.0, 0.0] },
                    cos: crate::signal::Affine { offset: 0.5, coeffs: vec![0.0, 1.0] },
                },
                crate::signal::FourierTerm {
                    sin: crate::signal::Affine { offset: 0.0, coeffs: vec![0.0, 1.0] },
                    cos: crate::signal::Affine { offset: 0.0, coeffs: vec![0.0, 0.0] },
                },
            ],
        };
        let s = Signal::new(&spec).unwrap();
        let theta = [0.7, -0.4];
        let f1 = fisher_matrix(&s, &theta, 1.3, 1.5, 1.0).unwrap();
        let f2 = fisher_matrix(&s, &theta, 1.3, 3.0, 1.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((f1.f[(i, j)] - f1.f[(j, i)]).abs() < 1e-12);
                let expected = match (i < 2, j < 2) {
                    (true, true) => 2.0,
                    (false, false) => 8.0,
                    _ => 4.0,
                };
                if f1.f[(i, j)].abs() > 1e-12 {
                    assert!((f2.f[(i, j)] / f1.f[(i, j)] - expected).abs() < 1e-12, "({i},{j})");
                }
            }
        }
        assert!(f1.f[(0, 2)].abs() > 1e-3, "fixture should have a cross term");
        assert!(eigenvalues(&f1.f_prime)[0] >= -1e-10);
        let unit = fisher_matrix(&s, &theta, 1.3, 1.0, 1.0).unwrap();
        assert!((f2.f[(2, 2)] / unit.f[(2, 2)] - 27.0).abs() < 1e-12);
    }

    #[test]
    fn paper_example_cross_term() {
        // closed-form cross entry −π t T^{-2} Σ k (g_k h_k^{(j)} − g_k^{(j)} h_k) for g = θ, h = 0.5
        let spec = SignalSpec::Fourier {
            d: 1,
            terms: vec![crate::signal::FourierTerm {
                sin: crate::signal::Affine { offset: 0.0, coeffs: vec![1.0] },
                cos: crate::signal::Affine { offset: 0.5, coeffs: vec![0.0] },
            }],
        };
        let s = Signal::new(&spec).unwrap();
        let (theta, period, t) = (1.2, 0.8, 2.0);
        let fm = fisher_matrix(&s, &[theta], period, t, 1.0).unwrap();
        let expected = -PI * t / (period * period) * (theta * 0.0 - 1.0 * 0.5);
        assert!((fm.f_prime[(1, 0)] - expected).abs() < 1e-12);
        let corner = 2.0 * PI * PI * t * t / period.powi(4) * (theta * theta + 0.25);
        assert!((fm.f_prime[(1, 1)] - corner).abs() < 1e-10);
    }

    #[test]
    fn linear_basis_sin_cos_is_singular() {
        let spec = SignalSpec::LinearBasis {
            basis: vec![
                BasisFunction { terms: vec![BasisTerm { k: 1, sin: SQRT_2, cos: 0.0 }] },
                BasisFunction { terms: vec![BasisTerm { k: 1, sin: 0.0, cos: SQRT_2 }] },
            ],
        };
        let s = Signal::new(&spec).unwrap();
        let theta = [1.0, 0.0];
        // both sides of Σθ_iθ_j⟨φ_i',φ_j'⟩ ≠ Σ_i(Σ_j θ_j⟨φ_i,φ_j'⟩)² by quadrature
        let phi = |i: usize, u: f64| if i == 0 { SQRT_2 * (2.0 * PI * u).sin() } else { SQRT_2 * (2.0 * PI * u).cos() };
        let dphi = |i: usize, u: f64| {
            if i == 0 {
                SQRT_2 * 2.0 * PI * (2.0 * PI * u).cos()
            } else {
                -SQRT_2 * 2.0 * PI * (2.0 * PI * u).sin()
            }
        };
        let q = |f: &dyn Fn(f64) -> f64| crate::signal::simpson_unit(f, 256);
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for i in 0..2 {
            let mut inner = 0.0;
            for j in 0..2 {
                lhs += theta[i] * theta[j] * q(&|u| dphi(i, u) * dphi(j, u));
                inner += theta[j] * q(&|u| phi(i, u) * dphi(j, u));
            }
            rhs += inner * inner;
        }
        assert!((lhs - 4.0 * PI * PI).abs() < 1e-9);
        assert!((rhs - 4.0 * PI * PI).abs() < 1e-9);
        let fm = fisher_matrix(&s, &theta, 1.0, 1.0, 1.0).unwrap();
        assert!(!check_s7(&fm, S7_TOLERANCE));
        // S'_θ = 2π φ_2 for this θ, so linear dependence is genuine; a generic θ is fine
        let generic = fisher_matrix(&s, &[1.0, 0.5], 1.0, 1.0, 1.0).unwrap();
        assert!(!check_s7(&generic, S7_TOLERANCE));
        let three = Signal::new(&SignalSpec::orthonormal_sines(2)).unwrap();
        assert!(check_s7(&fisher_matrix(&three, &[1.0, 0.0], 1.0, 1.0, 1.0).unwrap(), S7_TOLERANCE));
    }

    #[test]
    fn s7_matches_eigen_computation_under_scaling() {
        let s = Signal::new(&SignalSpec::orthonormal_sines(2)).unwrap();
        for scale in [0.1, 1.0, 10.0] {
            let fm = fisher_matrix(&s, &[scale, 0.5 * scale], 1.0, 1.0, 1.0).unwrap();
            let ev = eigenvalues(&fm.f_prime);
            assert_eq!(check_s7(&fm, S7_TOLERANCE), ev[0] > S7_TOLERANCE * ev[2]);
            assert!(check_s7(&fm, S7_TOLERANCE));
        }
    }

    #[test]
    fn path_estimate_matches_closed_form() {
        let s = sine();
        let p = simulate_path(&DiffusionSpec::white_noise(), &s, &[1.0], 1.0, 50.0, 1e-3, Noise::Silent).unwrap();
        let est = fisher_path_estimate(&p, &s, &[1.0], 1.0, 1.0, 50.0).unwrap();
        let exact = fisher_matrix(&s, &[1.0], 1.0, 1.0, 1.0).unwrap();
        assert_eq!(est.provenance, Provenance::PathEstimate);
        for i in 0..2 {
            assert!((est.f[(i, i)] - exact.f[(i, i)]).abs() < 1e-2 * exact.f[(i, i)]);
        }
        // the cross term vanishes only asymptotically, at rate 1/n
        assert!(est.f[(0, 1)].abs() < 1e-2 * (exact.f[(0, 0)] * exact.f[(1, 1)]).sqrt());
        assert!((est.f_prime[(1, 1)] - exact.f_prime[(1, 1)]).abs() < 1e-2 * exact.f_prime[(1, 1)]);
        assert!(fisher_path_estimate(&p, &s, &[1.0], 1.0, 1.0, 60.0).is_err());
    }

    #[test]
    fn sqrt_psd_squares_back() {
        let fm = fisher_matrix(&sine(), &[1.0], 1.0, 1.0, 1.0).unwrap();
        let r = sqrt_psd(&fm.f);
        assert!((&r * &r - &fm.f).abs().max() < 1e-12);
    }

    #[test]
    fn csv_labels() {
        let fm = fisher_matrix(&Signal::new(&SignalSpec::diagonal_sines(2)).unwrap(), &[1.0, 1.0], 1.0, 1.0, 1.0).unwrap();
        let mut buf = Vec::new();
        fm.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("matrix,row,theta1,theta2,T\nF,theta1,"));
        assert_eq!(text.lines().count(), 7);
    }
}

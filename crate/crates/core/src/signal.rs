//! Parametric 1-periodic signal families and their period rescaling.
//!
//! Every family is a trigonometric polynomial whose coefficients are affine
//! in the shape parameter θ:
//!
//! ```text
//! S_θ(u) = Σ_k g_k(θ) sin(2πku) + h_k(θ) cos(2πku)
//! S_(θ,T)(s) = S_θ(s / T)
//! ```
//!
//! so value, first and second derivatives in `u`, and the θ-gradient are all
//! available in closed form.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const TAU: f64 = 2.0 * PI;

/// Affine map θ ↦ offset + slope·θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    #[serde(default)]
    pub offset: f64,
    pub coeffs: Vec<f64>,
}

impl Affine {
    pub fn eval(&self, theta: &[f64]) -> f64 {
        self.offset + self.coeffs.iter().zip(theta).map(|(a, t)| a * t).sum::<f64>()
    }

    fn zero(d: usize) -> Self {
        Self { offset: 0.0, coeffs: vec![0.0; d] }
    }
}

/// Coefficient pair (g_k, h_k) for harmonic k, where k is the 1-based
/// position in [`SignalSpec::Fourier::terms`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierTerm {
    pub sin: Affine,
    pub cos: Affine,
}

/// One summand `sin_coef·sin(2πku) + cos_coef·cos(2πku)` of a basis function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisTerm {
    pub k: u32,
    #[serde(default)]
    pub sin: f64,
    #[serde(default)]
    pub cos: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisFunction {
    pub terms: Vec<BasisTerm>,
}

/// Serializable description of a signal family, as read from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SignalSpec {
    Fourier { d: usize, terms: Vec<FourierTerm> },
    LinearBasis { basis: Vec<BasisFunction> },
}

impl SignalSpec {
    /// `S_θ(u) = θ sin(2πu)`, the running example throughout the crate.
    pub fn sine() -> Self {
        SignalSpec::Fourier {
            d: 1,
            terms: vec![FourierTerm {
                sin: Affine { offset: 0.0, coeffs: vec![1.0] },
                cos: Affine::zero(1),
            }],
        }
    }

    /// `S_θ(u) = Σ_k θ_k sin(2πku)` for k = 1..d.
    pub fn diagonal_sines(d: usize) -> Self {
        let terms = (0..d)
            .map(|k| {
                let mut coeffs = vec![0.0; d];
                coeffs[k] = 1.0;
                FourierTerm { sin: Affine { offset: 0.0, coeffs }, cos: Affine::zero(d) }
            })
            .collect();
        SignalSpec::Fourier { d, terms }
    }

    /// Orthonormal sine basis `φ_k(u) = √2 sin(2πku)`, k = 1..d.
    pub fn orthonormal_sines(d: usize) -> Self {
        let basis = (1..=d as u32)
            .map(|k| BasisFunction {
                terms: vec![BasisTerm { k, sin: std::f64::consts::SQRT_2, cos: 0.0 }],
            })
            .collect();
        SignalSpec::LinearBasis { basis }
    }
}

/// A trigonometric polynomial `Σ s_j sin(2π f_j u) + c_j cos(2π f_j u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigPoly {
    pub terms: Vec<(f64, f64, f64)>,
}

/// A function of the rescaled time `u = s/T`, typically 1-periodic.
pub trait PeriodicFn: Sync {
    fn eval(&self, u: f64) -> f64;
}

impl<F: Fn(f64) -> f64 + Sync> PeriodicFn for F {
    fn eval(&self, u: f64) -> f64 {
        self(u)
    }
}

impl PeriodicFn for TrigPoly {
    fn eval(&self, u: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(f, s, c)| {
                let (sn, cs) = (TAU * f * u).sin_cos();
                s * sn + c * cs
            })
            .sum()
    }
}

impl TrigPoly {
    pub fn constant(c: f64) -> Self {
        TrigPoly { terms: vec![(0.0, 0.0, c)] }
    }

    pub fn derivative(&self) -> TrigPoly {
        TrigPoly {
            terms: self.terms.iter().map(|&(f, s, c)| (f, -TAU * f * c, TAU * f * s)).collect(),
        }
    }

    /// Pointwise product, e.g. `sin²(2πu)` for ergodic checks.
    pub fn product<'a>(&'a self, other: &'a TrigPoly) -> impl PeriodicFn + 'a {
        move |u: f64| self.eval(u) * other.eval(u)
    }

    fn has_integer_frequencies(&self) -> bool {
        self.terms.iter().all(|&(f, _, _)| f.fract() == 0.0 && f >= 0.0)
    }

    /// `∫₀¹ self·other du`; exact for integer frequencies, composite Simpson
    /// with 256 panels otherwise. Returns the value and whether it was exact.
    pub fn inner_product(&self, other: &TrigPoly) -> (f64, bool) {
        if self.has_integer_frequencies() && other.has_integer_frequencies() {
            let mut acc = 0.0;
            for &(f1, s1, c1) in &self.terms {
                for &(f2, s2, c2) in &other.terms {
                    if f1 != f2 {
                        continue;
                    }
                    if f1 == 0.0 {
                        acc += c1 * c2;
                    } else {
                        acc += 0.5 * (s1 * s2 + c1 * c2);
                    }
                }
            }
            (acc, true)
        } else {
            (simpson_unit(|u| self.eval(u) * other.eval(u), 256), false)
        }
    }
}

/// Composite Simpson rule on [0, 1] with `panels` (even) subintervals.
pub fn simpson_unit<F: Fn(f64) -> f64>(f: F, panels: usize) -> f64 {
    let m = panels + panels % 2;
    let h = 1.0 / m as f64;
    let mut acc = f(0.0) + f(1.0);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * h);
    }
    acc * h / 3.0
}

#[derive(Debug, Clone, PartialEq)]
struct Harmonic {
    freq: f64,
    sin: Affine,
    cos: Affine,
}

/// Value and parameter derivatives of `S_(θ,T)(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalDerivatives {
    pub value: f64,
    pub grad_theta: Vec<f64>,
    pub d_t: f64,
    pub d2_t: f64,
}

impl SignalDerivatives {
    /// The stacked derivative vector `(∇_θ S, ∂_T S)`.
    pub fn stacked(&self) -> Vec<f64> {
        let mut v = self.grad_theta.clone();
        v.push(self.d_t);
        v
    }
}

/// A compiled, immutable signal family.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    d: usize,
    harmonics: Vec<Harmonic>,
    spec: Option<SignalSpec>,
}

impl Signal {
    pub fn new(spec: &SignalSpec) -> Result<Self> {
        let (d, harmonics) = match spec {
            SignalSpec::Fourier { d, terms } => {
                if *d == 0 {
                    return Err(invalid("signal dimension d must be positive"));
                }
                let mut hs = Vec::with_capacity(terms.len());
                for (idx, term) in terms.iter().enumerate() {
                    for a in [&term.sin, &term.cos] {
                        if a.coeffs.len() != *d {
                            return Err(invalid(format!(
                                "fourier term {} has {} coefficients, expected d = {}",
                                idx + 1,
                                a.coeffs.len(),
                                d
                            )));
                        }
                        if !a.offset.is_finite() || a.coeffs.iter().any(|c| !c.is_finite()) {
                            return Err(invalid("non-finite fourier coefficient"));
                        }
                    }
                    hs.push(Harmonic {
                        freq: (idx + 1) as f64,
                        sin: term.sin.clone(),
                        cos: term.cos.clone(),
                    });
                }
                (*d, hs)
            }
            SignalSpec::LinearBasis { basis } => {
                let d = basis.len();
                if d == 0 {
                    return Err(invalid("linear basis needs at least one function"));
                }
                let mut by_k: BTreeMap<u32, Harmonic> = BTreeMap::new();
                for (j, phi) in basis.iter().enumerate() {
                    for term in &phi.terms {
                        if !term.sin.is_finite() || !term.cos.is_finite() {
                            return Err(invalid("non-finite basis coefficient"));
                        }
                        let h = by_k.entry(term.k).or_insert_with(|| Harmonic {
                            freq: term.k as f64,
                            sin: Affine::zero(d),
                            cos: Affine::zero(d),
                        });
                        h.sin.coeffs[j] += term.sin;
                        h.cos.coeffs[j] += term.cos;
                    }
                }
                (d, by_k.into_values().collect())
            }
        };
        Ok(Signal { d, harmonics, spec: Some(spec.clone()) })
    }

    /// Builds a signal from raw `(frequency, sin affine, cos affine)` triples
    /// without requiring integer frequencies. Used for non-periodic test
    /// fixtures.
    #[doc(hidden)]
    pub fn from_raw_harmonics(d: usize, raw: Vec<(f64, Affine, Affine)>) -> Self {
        let harmonics = raw.into_iter().map(|(freq, sin, cos)| Harmonic { freq, sin, cos }).collect();
        Signal { d, harmonics, spec: None }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn spec(&self) -> Option<&SignalSpec> {
        self.spec.as_ref()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.harmonics.iter().map(|h| h.freq).collect()
    }

    pub fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.d {
            return Err(invalid(format!("theta has dimension {}, expected {}", theta.len(), self.d)));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(invalid("theta contains non-finite entries"));
        }
        Ok(())
    }

    pub(crate) fn check_args(&self, theta: &[f64], period: f64) -> Result<()> {
        self.check_theta(theta)?;
        if !(period > 0.0 && period.is_finite()) {
            return Err(invalid(format!("period T must be positive, got {period}")));
        }
        Ok(())
    }

    /// Binds θ, producing the coefficient values `(g_k(θ), h_k(θ))`.
    pub fn shape(&self, theta: &[f64]) -> Result<Shape<'_>> {
        self.check_theta(theta)?;
        Ok(self.shape_unchecked(theta))
    }

    pub(crate) fn shape_unchecked(&self, theta: &[f64]) -> Shape<'_> {
        let coefs = self
            .harmonics
            .iter()
            .map(|h| (h.freq, h.sin.eval(theta), h.cos.eval(theta)))
            .collect();
        Shape { signal: self, coefs }
    }

    /// `S_(θ,T)(s) = S_θ(s/T)`.
    pub fn eval(&self, theta: &[f64], period: f64, s: f64) -> Result<f64> {
        self.check_args(theta, period)?;
        Ok(self.shape_unchecked(theta).value(s / period))
    }

    pub fn derivatives(&self, theta: &[f64], period: f64, s: f64) -> Result<SignalDerivatives> {
        self.check_args(theta, period)?;
        let shape = self.shape_unchecked(theta);
        Ok(shape.rescaled(period, s))
    }

    /// True iff `|S_θ(s+1) − S_θ(s)| ≤ 1e-12` on a uniform grid of [0, 1).
    pub fn check_periodicity(&self, theta: &[f64], grid_size: usize) -> bool {
        if self.check_theta(theta).is_err() {
            return false;
        }
        let shape = self.shape_unchecked(theta);
        let m = grid_size.max(2);
        (0..m).all(|i| {
            let s = i as f64 / m as f64;
            (shape.value(s + 1.0) - shape.value(s)).abs() <= 1e-12
        })
    }

    /// `∂_{θ_i} S_θ` as a trigonometric polynomial (θ-free for affine families).
    pub fn partial_poly(&self, i: usize) -> TrigPoly {
        TrigPoly {
            terms: self.harmonics.iter().map(|h| (h.freq, h.sin.coeffs[i], h.cos.coeffs[i])).collect(),
        }
    }

    /// θ-independent part `S_0` in `S_θ = S_0 + Σ θ_i ∂_{θ_i} S_θ`.
    pub fn offset_poly(&self) -> TrigPoly {
        TrigPoly { terms: self.harmonics.iter().map(|h| (h.freq, h.sin.offset, h.cos.offset)).collect() }
    }

    pub fn value_poly(&self, theta: &[f64]) -> Result<TrigPoly> {
        Ok(self.shape(theta)?.poly())
    }

    /// `S'_θ` as a trigonometric polynomial.
    pub fn shape_derivative_poly(&self, theta: &[f64]) -> Result<TrigPoly> {
        Ok(self.shape(theta)?.poly().derivative())
    }
}

/// `2π f u`, with `u` reduced mod 1 first when `f` is an integer.
#[inline]
fn phase(f: f64, u: f64) -> f64 {
    if f.fract() == 0.0 {
        TAU * f * u.fract()
    } else {
        TAU * f * u
    }
}

/// `(sin, cos)` of `2π f_h i·dt / T` for consecutive grid indices `i`, by
/// rotation with an exact re-anchor every `GridPhases::REANCHOR` steps.
#[derive(Debug, Clone)]
pub struct GridPhases {
    freqs: Vec<f64>,
    rot: Vec<(f64, f64)>,
    cur: Vec<(f64, f64)>,
    period: f64,
    dt: f64,
    next: usize,
}

impl GridPhases {
    pub const REANCHOR: usize = 1024;

    pub fn new(freqs: &[f64], period: f64, dt: f64) -> Self {
        let rot = freqs.iter().map(|&f| (TAU * f * dt / period).sin_cos()).collect();
        GridPhases { freqs: freqs.to_vec(), rot, cur: vec![(0.0, 1.0); freqs.len()], period, dt, next: 0 }
    }

    /// Phases at the next grid index, starting from 0.
    #[inline]
    pub fn advance(&mut self) -> &[(f64, f64)] {
        let i = self.next;
        if i.is_multiple_of(Self::REANCHOR) {
            let u = i as f64 * self.dt / self.period;
            for (c, &f) in self.cur.iter_mut().zip(&self.freqs) {
                *c = phase(f, u).sin_cos();
            }
        } else {
            for (c, &(rs, rc)) in self.cur.iter_mut().zip(&self.rot) {
                let (sn, cs) = *c;
                *c = (sn * rc + cs * rs, cs * rc - sn * rs);
            }
        }
        self.next += 1;
        &self.cur
    }
}

/// A signal with θ bound.
#[derive(Debug, Clone)]
pub struct Shape<'a> {
    signal: &'a Signal,
    coefs: Vec<(f64, f64, f64)>,
}

impl Shape<'_> {
    pub fn poly(&self) -> TrigPoly {
        TrigPoly { terms: self.coefs.clone() }
    }

    /// `S_θ(u)`.
    #[inline]
    pub fn value(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for &(f, g, h) in &self.coefs {
            let x = phase(f, u);
            acc += match (g == 0.0, h == 0.0) {
                (_, true) => g * x.sin(),
                (true, false) => h * x.cos(),
                _ => {
                    let (sn, cs) = x.sin_cos();
                    g * sn + h * cs
                }
            };
        }
        acc
    }

    /// `(S_θ(u), S'_θ(u), S''_θ(u))` and `∇_θ S_θ(u)` written into `grad`.
    #[inline]
    pub fn jet(&self, u: f64, grad: &mut [f64]) -> (f64, f64, f64) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (mut v, mut d1, mut d2) = (0.0, 0.0, 0.0);
        for (&(f, g, h), harm) in self.coefs.iter().zip(&self.signal.harmonics) {
            let w = TAU * f;
            let (sn, cs) = phase(f, u).sin_cos();
            v += g * sn + h * cs;
            d1 += w * (g * cs - h * sn);
            d2 -= w * w * (g * sn + h * cs);
            for (i, gi) in grad.iter_mut().enumerate() {
                *gi += harm.sin.coeffs[i] * sn + harm.cos.coeffs[i] * cs;
            }
        }
        (v, d1, d2)
    }

    /// [`Shape::value`] from precomputed harmonic phases.
    #[inline]
    pub fn value_at(&self, phases: &[(f64, f64)]) -> f64 {
        self.coefs.iter().zip(phases).map(|(&(_, g, h), &(sn, cs))| g * sn + h * cs).sum()
    }

    /// [`Shape::stacked_into`] from precomputed phases at time `s`.
    #[inline]
    pub fn stacked_at(&self, period: f64, s: f64, phases: &[(f64, f64)], out: &mut [f64]) -> f64 {
        let d = self.signal.d;
        out.iter_mut().for_each(|g| *g = 0.0);
        let (mut v, mut d1) = (0.0, 0.0);
        for ((&(f, g, h), harm), &(sn, cs)) in self.coefs.iter().zip(&self.signal.harmonics).zip(phases) {
            v += g * sn + h * cs;
            d1 += TAU * f * (g * cs - h * sn);
            for (i, gi) in out[..d].iter_mut().enumerate() {
                *gi += harm.sin.coeffs[i] * sn + harm.cos.coeffs[i] * cs;
            }
        }
        out[d] = -(s / (period * period)) * d1;
        v
    }

    pub fn rescaled(&self, period: f64, s: f64) -> SignalDerivatives {
        let mut grad = vec![0.0; self.signal.d];
        let (value, d1, d2) = self.jet(s / period, &mut grad);
        SignalDerivatives {
            value,
            grad_theta: grad,
            d_t: -(s / (period * period)) * d1,
            d2_t: (s * s / period.powi(4)) * d2 + (2.0 * s / period.powi(3)) * d1,
        }
    }

    /// Writes `Ṡ_(θ,T)(s) = (∇_θ S, ∂_T S)` into `out` (length d+1) and
    /// returns the signal value.
    #[inline]
    pub fn stacked_into(&self, period: f64, s: f64, out: &mut [f64]) -> f64 {
        let d = self.signal.d;
        let (value, d1, _) = self.jet(s / period, &mut out[..d]);
        out[d] = -(s / (period * period)) * d1;
        value
    }
}

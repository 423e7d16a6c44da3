//! TOML experiment configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sde::DiffusionSpec;
use crate::signal::{Signal, SignalSpec};

fn default_model() -> DiffusionSpec {
    DiffusionSpec::ornstein_uhlenbeck(1.0)
}
fn default_theta() -> Vec<f64> {
    vec![1.0]
}
fn default_period() -> f64 {
    1.0
}
fn default_n() -> u64 {
    200
}
fn default_n_list() -> Vec<u64> {
    vec![50, 100, 200, 400]
}
fn default_replications() -> usize {
    200
}
fn default_dt() -> f64 {
    1e-3
}
fn default_seed() -> u64 {
    20240601
}
fn default_output_dir() -> String {
    "output".into()
}
fn default_grid_points() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_model")]
    pub model: DiffusionSpec,
    #[serde(default = "SignalSpec::sine")]
    pub signal: SignalSpec,
    #[serde(default = "default_theta")]
    pub theta: Vec<f64>,
    #[serde(rename = "T", default = "default_period")]
    pub period: f64,
    /// Local direction; all ones when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<f64>>,
    #[serde(default = "default_n")]
    pub n: u64,
    #[serde(default = "default_n_list")]
    pub n_list: Vec<u64>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    /// Search bracket for the period; `T·(0.95, 1.05)` when absent.
    #[serde(rename = "T_bracket", default, skip_serializing_if = "Option::is_none")]
    pub t_bracket: Option<[f64; 2]>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Time weight `s^k` for ergodic checks.
    #[serde(default)]
    pub k: u32,
}

impl Default for ExperimentConfig {
    /// Sine signal, `σ ≡ 1`, `b(x) = −x`.
    fn default() -> Self {
        toml::from_str("").expect("empty config takes every default")
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Compiles and checks the signal against `theta`.
    pub fn compiled_signal(&self) -> Result<Signal> {
        let s = Signal::new(&self.signal)?;
        s.check_args(&self.theta, self.period)?;
        Ok(s)
    }

    pub fn direction(&self) -> Vec<f64> {
        self.h.clone().unwrap_or_else(|| vec![1.0; self.theta.len() + 1])
    }

    pub fn bracket(&self) -> (f64, f64) {
        self.t_bracket.map_or((0.95 * self.period, 1.05 * self.period), |[a, b]| (a, b))
    }

    /// Copy with every optional field made explicit.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.h = Some(self.direction());
        let (a, b) = self.bracket();
        c.t_bracket = Some([a, b]);
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let s = self.compiled_signal()?;
        if let Some(h) = &self.h {
            if h.len() != s.dim() + 1 {
                return Err(invalid(format!("h has length {}, expected {}", h.len(), s.dim() + 1)));
            }
            if h.iter().any(|x| !x.is_finite()) {
                return Err(invalid("h must be finite"));
            }
        }
        if self.n == 0 {
            return Err(invalid("n must be positive"));
        }
        if self.replications == 0 {
            return Err(invalid("replications must be positive"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if self.dt >= self.period {
            return Err(invalid("dt must be smaller than the period"));
        }
        if self.grid_points < 2 {
            return Err(invalid("grid_points must be at least 2"));
        }
        if self.k > 2 {
            return Err(invalid(format!("k must be 0, 1 or 2, got {}", self.k)));
        }
        let (a, b) = self.bracket();
        if !(a > 0.0 && a <= b && b.is_finite()) {
            return Err(invalid(format!("invalid T_bracket ({a}, {b})")));
        }
        if self.n_list.contains(&0) {
            return Err(invalid("n_list entries must be positive"));
        }
        Ok(())
    }
}

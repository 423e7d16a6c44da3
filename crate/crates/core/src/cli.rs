//! Command-line experiment runner.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::ergodic::{nu_inner_product, nu_path_average, stacked_pairs};
use crate::error::{Error, Result};
use crate::estimator::{profile_mle, rate_experiment, RateSettings};
use crate::fisher::{check_s7, fisher_matrix, fisher_path_estimate, s7_ratio, FisherMatrix, S7_TOLERANCE};
use crate::lan::lan_report;
use crate::sde::{simulate_path, Noise, PathRecord};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_NO_INPUT: i32 = 66;
pub const EXIT_IO: i32 = 74;

/// Environment variable overriding the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "PERLAN_OUTPUT_DIR";

/// Ergodic averages must match their limits within this fraction of scale.
pub const ERGODIC_TOLERANCE: f64 = 0.05;
pub const COVARIANCE_TOLERANCE: f64 = 0.15;
pub const IDENTITY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(name = "perlan", version, about = "Monte Carlo checks of local asymptotic normality for periodic-signal diffusions")]
pub struct Cli {
    /// TOML experiment config; built-in defaults when omitted
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Worker threads (default: available parallelism)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Exit with status 3 when a statistical check fails
    #[arg(long = "assert", global = true)]
    pub assert_checks: bool,
    #[arg(long, global = true)]
    pub n: Option<u64>,
    #[arg(long, global = true)]
    pub replications: Option<usize>,
    /// Comma-separated local direction; a single value is broadcast
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub h: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate one path and write t, xi, dW
    Simulate,
    /// Compare weighted time averages with their limits
    ErgodicCheck,
    /// Fisher matrix F(1) and F'(1)
    Fisher,
    /// Score, log-likelihood ratio and remainder terms over replications
    LanCheck,
    /// Joint (theta, T) estimate on one path
    Estimate,
    /// Estimator spread across horizons
    Rates,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::ErgodicCheck => "ergodic-check",
            Command::Fisher => "fisher",
            Command::LanCheck => "lan-check",
            Command::Estimate => "estimate",
            Command::Rates => "rates",
        }
    }
}

struct Outcome {
    summary: String,
    results: Value,
    /// `None` when the command has no statistical check.
    pass: Option<bool>,
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let cfg = match &cli.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(text) => ExperimentConfig::from_toml(&text),
            Err(e) => {
                eprintln!("error: cannot read config {}: {e}", path.display());
                return EXIT_NO_INPUT;
            }
        },
        None => Ok(ExperimentConfig::default()),
    };
    let cfg = match cfg.and_then(|c| apply_overrides(c, &cli)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_VALIDATION;
        }
    };
    let out_dir = cli
        .output_dir
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&cfg.output_dir));

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        pool = pool.num_threads(t);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_VALIDATION;
        }
    };
    let result = pool.install(|| execute(cli.command, &cfg, &out_dir));
    match result {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            if cli.assert_checks && outcome.pass == Some(false) {
                eprintln!("check failed");
                EXIT_CHECK_FAILED
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io(_) => EXIT_IO,
                _ => EXIT_VALIDATION,
            }
        }
    }
}

fn apply_overrides(mut cfg: ExperimentConfig, cli: &Cli) -> Result<ExperimentConfig> {
    if let Some(n) = cli.n {
        cfg.n = n;
    }
    if let Some(r) = cli.replications {
        cfg.replications = r;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(h) = &cli.h {
        cfg.h = Some(if h.len() == 1 { vec![h[0]; cfg.theta.len() + 1] } else { h.clone() });
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(command: Command, cfg: &ExperimentConfig, out_dir: &Path) -> Result<Outcome> {
    std::fs::create_dir_all(out_dir)?;
    let outcome = match command {
        Command::Simulate => simulate(cfg, out_dir)?,
        Command::ErgodicCheck => ergodic_check(cfg, out_dir)?,
        Command::Fisher => fisher(cfg, out_dir)?,
        Command::LanCheck => lan_check(cfg, out_dir)?,
        Command::Estimate => estimate(cfg, out_dir)?,
        Command::Rates => rates(cfg, out_dir)?,
    };
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let summary = json!({
        "metadata": {
            "timestamp_unix": timestamp,
            "version": env!("CARGO_PKG_VERSION"),
            "output_dir": out_dir.display().to_string(),
        },
        "command": command.name(),
        "config": serde_json::to_value(cfg.resolved()).map_err(|e| Error::Config(e.to_string()))?,
        "pass": outcome.pass,
        "results": outcome.results,
    });
    write_file(out_dir, "summary.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &summary).map_err(std::io::Error::from)?;
        writeln!(w)?;
        Ok(())
    })?;
    Ok(outcome)
}

fn write_file<F>(dir: &Path, name: &str, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn fisher_json(fm: &FisherMatrix) -> Value {
    json!({ "t": fm.t, "provenance": fm.provenance, "F": rows(&fm.f), "F_prime": rows(&fm.f_prime) })
}

fn simulate_main_path(cfg: &ExperimentConfig) -> Result<PathRecord> {
    let signal = cfg.compiled_signal()?;
    simulate_path(&cfg.model, &signal, &cfg.theta, cfg.period, cfg.n as f64, cfg.dt, Noise::seeded(cfg.seed))
}

fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let path = simulate_main_path(cfg)?;
    write_file(out, "path.csv", |w| path.write_csv(w))?;
    let last = *path.xi.last().expect("path has a start point");
    Ok(Outcome {
        summary: format!("simulate: {} steps to t={}, final xi={last:.6}, wrote path.csv", path.steps(), path.horizon()),
        results: json!({ "steps": path.steps(), "horizon": path.horizon(), "final_xi": last }),
        pass: None,
    })
}

fn ergodic_check(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let signal = cfg.compiled_signal()?;
    let path = simulate_main_path(cfg)?;
    let d = signal.dim();
    let pairs = stacked_pairs(d);
    let mut ks = vec![0, 2];
    if !ks.contains(&cfg.k) {
        ks.push(cfg.k);
    }
    let closed = cfg.model.sigma.constant_value().is_some();
    // limit of each functional: closed form, or the k = 0 average
    let reference: Vec<f64> = pairs
        .iter()
        .map(|&p| {
            if closed {
                nu_inner_product(&signal, &cfg.theta, cfg.period, p, &cfg.model.sigma, None).map(|f| f.value)
            } else {
                nu_path_average(&signal, &cfg.theta, p, &path, 0).map(|f| f.value)
            }
        })
        .collect::<Result<_>>()?;
    let diag = |a| pairs.iter().position(|&(x, y)| x == a && y == a).map(|i| reference[i].abs()).unwrap_or(0.0);
    let mut table = Vec::new();
    let mut pass = true;
    for (i, &p) in pairs.iter().enumerate() {
        let scale = (diag(p.0) * diag(p.1)).sqrt();
        for &k in &ks {
            let value = nu_path_average(&signal, &cfg.theta, p, &path, k)?.value;
            let err = (value - reference[i]).abs();
            let ok = err <= ERGODIC_TOLERANCE * scale;
            pass &= ok;
            table.push((format!("{}*{}", p.0, p.1), k, value, reference[i], err, scale, ok));
        }
    }
    write_file(out, "ergodic.csv", |w| {
        writeln!(w, "functional,k,t,value,reference,abs_error,scale,pass")?;
        for (name, k, v, r, e, s, ok) in &table {
            writeln!(w, "{name},{k},{},{v},{r},{e},{s},{ok}", path.horizon())?;
        }
        Ok(())
    })?;
    let worst = table.iter().map(|r| if r.5 > 0.0 { r.4 / r.5 } else { r.4 }).fold(0.0, f64::max);
    Ok(Outcome {
        summary: format!(
            "ergodic-check: {} averages at t={}, reference={}, worst scaled error={worst:.3e}, {}",
            table.len(),
            path.horizon(),
            if closed { "closed form" } else { "k=0 average" },
            if pass { "PASS" } else { "FAIL" }
        ),
        results: json!({
            "reference": if closed { "closed_form" } else { "k0_average" },
            "rows": table.iter().map(|(name, k, v, r, e, s, ok)| json!({
                "functional": name, "k": k, "value": v, "reference": r, "abs_error": e, "scale": s, "pass": ok
            })).collect::<Vec<_>>(),
        }),
        pass: Some(pass),
    })
}

fn fisher(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let signal = cfg.compiled_signal()?;
    let fm = match cfg.model.sigma.constant_value() {
        Some(c) => fisher_matrix(&signal, &cfg.theta, cfg.period, 1.0, c)?,
        None => {
            let path = simulate_main_path(cfg)?;
            fisher_path_estimate(&path, &signal, &cfg.theta, cfg.period, 1.0, cfg.n as f64)?
        }
    };
    write_file(out, "fisher.csv", |w| fm.write_csv(w))?;
    let ratio = s7_ratio(&fm);
    let holds = check_s7(&fm, S7_TOLERANCE);
    Ok(Outcome {
        summary: format!(
            "fisher: {:?} F(1) of size {}, eigenvalue ratio of F'(1) {ratio:.3e}, nondegenerate={holds}",
            fm.provenance,
            fm.dim()
        ),
        results: json!({ "fisher": fisher_json(&fm), "s7_ratio": ratio, "s7_holds": holds }),
        pass: Some(holds),
    })
}

fn lan_check(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let signal = cfg.compiled_signal()?;
    let h = cfg.direction();
    let report = lan_report(&cfg.model, &signal, &cfg.theta, cfg.period, &h, cfg.n, cfg.replications, cfg.dt, cfg.seed)?;
    write_file(out, "lan.csv", |w| report.write_csv(w))?;
    let t = &report.tests;
    let pass = t.ks.iter().all(|k| k.pass) && t.cov_rel_error < COVARIANCE_TOLERANCE && t.identity_max_error < IDENTITY_TOLERANCE;
    Ok(Outcome {
        summary: format!(
            "lan-check: n={} replications={} cov error={:.4} KS pass={}/{} median residual={:.4e} identity error={:.2e}, {}",
            report.n,
            report.replications,
            t.cov_rel_error,
            t.ks.iter().filter(|k| k.pass).count(),
            t.ks.len(),
            t.residual_median,
            t.identity_max_error,
            if pass { "PASS" } else { "FAIL" }
        ),
        results: json!({ "n": report.n, "h": report.h, "f_ref": fisher_json(&report.f_ref), "tests": t }),
        pass: Some(pass),
    })
}

fn estimate(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let signal = cfg.compiled_signal()?;
    let path = simulate_main_path(cfg)?;
    let est = profile_mle(&path, &cfg.model, &signal, cfg.bracket(), cfg.grid_points)?;
    write_file(out, "profile.csv", |w| est.write_profile_csv(w))?;
    Ok(Outcome {
        summary: format!("estimate: theta_hat={:?} T_hat={} (truth {:?}, {})", est.theta_hat, est.period_hat, cfg.theta, cfg.period),
        results: json!({
            "theta_hat": est.theta_hat,
            "T_hat": est.period_hat,
            "log_likelihood": est.log_likelihood,
            "stderr": est.stderr,
        }),
        pass: None,
    })
}

fn rates(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let signal = cfg.compiled_signal()?;
    let settings = RateSettings {
        n_list: cfg.n_list.clone(),
        replications: cfg.replications,
        dt: cfg.dt,
        seed: cfg.seed,
        bracket: cfg.bracket(),
        grid_points: cfg.grid_points,
        silent: false,
    };
    let table = rate_experiment(&cfg.model, &signal, &cfg.theta, cfg.period, &settings)?;
    write_file(out, "rates.csv", |w| table.write_csv(w))?;
    let pass = table.slopes.iter().all(|s| {
        let (target, tol) = if s.component == "T" { (-1.5, 0.15) } else { (-0.5, 0.1) };
        s.slope.is_some_and(|v| (v - target).abs() <= tol)
    });
    let desc: Vec<String> = table
        .slopes
        .iter()
        .map(|s| format!("{}={}", s.component, s.slope.map_or("degenerate".into(), |v| format!("{v:.3}"))))
        .collect();
    Ok(Outcome {
        summary: format!("rates: slopes {}, {}", desc.join(" "), if pass { "PASS" } else { "FAIL" }),
        results: serde_json::to_value(&table).map_err(|e| Error::Config(e.to_string()))?,
        pass: Some(pass),
    })
}

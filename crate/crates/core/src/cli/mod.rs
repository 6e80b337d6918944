//! Command-line front end: `params`, `simulate`, `compare`, `sweep` and
//! `validate`.
//!
//! Exit status is 0 on success, 1 for configuration errors, 2 for runtime
//! failures and 3 when a validation check fails.

pub mod config;
pub mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::conditioning::Strategy;
use crate::error::Error;
use crate::model::{law_under_q, LawSpec};
use crate::montecarlo::{
    htransform_check, run_compare, run_sweep, validate_martingale, validate_optimality,
    validate_pn, ExperimentConfig, SweepParam, SweepRow,
};
use crate::simulator::{path_rng, simulate_path_with, Measure, SimConfig, XiSampler};
use config::{ConfigError, RunConfig};
use output::{fmt_sig, jsonl, path_csv, results_csv, write_file};

#[derive(Debug, Parser)]
#[command(
    name = "resistance",
    version,
    about = "Resistance-level price model: simulation and strategy experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the derived model quantities.
    Params(Common),
    /// Simulate one conditioned path and write its time series.
    Simulate(Common),
    /// Compare the optimal and classic strategies over many paths.
    Compare(Common),
    /// Repeat the comparison over values of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        param: Option<SweepParam>,
        /// Comma-separated list of values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Run the statistical checks of the model.
    Validate(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed; required by every command that draws random numbers.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub paths: Option<u64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure of a command, classified by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("validation failed: {0}")]
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Validation(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Invalid(inner) => inner.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInputs(_)
            | Error::DriftRegime { .. }
            | Error::DegenerateGeometry { .. }
            | Error::InvalidLaw(_)
            | Error::InvalidSimConfig(_)
            | Error::InvalidExperiment(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn io_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

struct Loaded {
    cfg: RunConfig,
    seed: Option<u64>,
}

impl Loaded {
    fn new(c: &Common) -> Result<Self, CliError> {
        let mut cfg = RunConfig::load(&c.config)?;
        if let Some(n) = c.paths {
            cfg.experiment.paths = n;
        }
        if let Some(dt) = c.dt {
            cfg.sim.dt = dt;
        }
        if let Some(dir) = &c.out {
            cfg.output.dir = dir.clone();
        }
        cfg.validate()?;
        Ok(Self { cfg, seed: c.seed })
    }

    fn seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Config("--seed is required for this command".into()))
    }

    fn digits(&self) -> usize {
        self.cfg.output.precision
    }

    fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        let dir = &self.cfg.output.dir;
        let path = write_file(dir, name, contents).map_err(|e| io_err(&dir.join(name), e))?;
        println!("wrote {}", path.display());
        Ok(())
    }
}

/// Parses the process arguments, runs the command and returns its status.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Params(c) => cmd_params(&Loaded::new(&c)?),
        Command::Simulate(c) => cmd_simulate(&Loaded::new(&c)?),
        Command::Compare(c) => cmd_compare(&Loaded::new(&c)?),
        Command::Sweep {
            common,
            param,
            values,
        } => cmd_sweep(&Loaded::new(&common)?, param, values),
        Command::Validate(c) => cmd_validate(&Loaded::new(&c)?),
    }
}

fn list(values: &[f64], digits: usize) -> String {
    let items: Vec<String> = values.iter().map(|v| fmt_sig(*v, digits)).collect();
    format!("[{}]", items.join(", "))
}

fn cmd_params(l: &Loaded) -> Result<(), CliError> {
    let prm = l.cfg.params()?;
    let law = l.cfg.law.resolve(prm.p)?;
    let d = l.digits();
    let f = |v: f64| fmt_sig(v, d);
    println!("mu = {}", f(prm.mu));
    println!("alpha = {}", f(prm.alpha));
    println!("epsilon = {}", f(prm.epsilon));
    println!("p = {}", f(prm.p));
    println!("pi_classic = {}", f(prm.classic_fraction()));
    println!("prob_a_xi = {}", f(law.prob_axi(prm.p)));
    let shown = law.support_max().unwrap_or(9).min(64);
    let alphas: Vec<f64> = (0..=shown).map(|n| law.weight(n)).collect();
    println!("alpha_weights = {}", list(&alphas, d));
    if let LawSpec::FiniteQ { .. } | LawSpec::FiniteP { .. } = l.cfg.law {
        println!("beta_weights = {}", list(&law_under_q(&law, prm.p)?, d));
    }
    Ok(())
}

fn cmd_simulate(l: &Loaded) -> Result<(), CliError> {
    let seed = l.seed()?;
    let prm = l.cfg.params()?;
    let law = l.cfg.law.resolve(prm.p)?;
    let sim = l.cfg.sim.to_sim(seed);
    let mut rng = path_rng(seed, 0);
    let n_forced = match l.cfg.experiment.n_forced {
        Some(n) => n,
        None => XiSampler::new(&law, prm.p, Measure::Q)?.sample(&mut rng),
    };
    let path = simulate_path_with(&prm, n_forced, &sim, &mut rng)?;
    let csv = path_csv(
        &path,
        &Strategy::Mixture(law),
        &prm,
        l.cfg.experiment.w0,
        l.digits(),
    )?;
    println!("n_forced = {n_forced}");
    l.write("path.csv", &csv)
}

fn finish_experiment(
    l: &Loaded,
    kind: &str,
    param: &str,
    rows: &[SweepRow],
    seed: u64,
) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Record<'a> {
        experiment: &'a str,
        param: &'a str,
        seed: u64,
        #[serde(flatten)]
        row: &'a SweepRow,
    }
    let d = l.digits();
    for r in rows {
        println!(
            "{param} = {}: mean = {}, std_err = {}, n = {}",
            fmt_sig(r.param_value, d),
            fmt_sig(r.summary.mean, d),
            fmt_sig(r.summary.std_err, d),
            r.summary.n
        );
    }
    let records: Vec<Record> = rows
        .iter()
        .map(|row| Record {
            experiment: kind,
            param,
            seed,
            row,
        })
        .collect();
    l.write("results.csv", &results_csv(rows, d))?;
    l.write("summary.jsonl", &jsonl(&records))
}

fn cmd_compare(l: &Loaded) -> Result<(), CliError> {
    let seed = l.seed()?;
    let exp = l.cfg.experiment(seed)?;
    let prm = l.cfg.params()?;
    let summary = run_compare(&exp)?;
    let row = SweepRow {
        param_value: prm.inputs.mu0,
        summary,
        p: prm.p,
        mu: prm.mu,
    };
    finish_experiment(l, "compare", "mu0", &[row], seed)
}

fn cmd_sweep(
    l: &Loaded,
    param: Option<SweepParam>,
    values: Option<Vec<f64>>,
) -> Result<(), CliError> {
    let seed = l.seed()?;
    let from_cfg = l.cfg.experiment.sweep.as_ref();
    let param = param
        .or(from_cfg.map(|s| s.param))
        .ok_or_else(|| CliError::Config("sweep needs --param or experiment.sweep.param".into()))?;
    let values = values
        .or(from_cfg.map(|s| s.values.clone()))
        .ok_or_else(|| {
            CliError::Config("sweep needs --values or experiment.sweep.values".into())
        })?;
    let rows = run_sweep(&l.cfg.experiment(seed)?, param, &values)?;
    finish_experiment(l, "sweep", param.name(), &rows, seed)
}

#[derive(Serialize)]
struct CheckRecord {
    check: &'static str,
    pass: bool,
    report: serde_json::Value,
}

fn check<T: Serialize>(name: &'static str, pass: bool, report: &T) -> CheckRecord {
    println!("{} {name}", if pass { "PASS" } else { "FAIL" });
    CheckRecord {
        check: name,
        pass,
        report: serde_json::to_value(report).expect("report serializes"),
    }
}

fn cmd_validate(l: &Loaded) -> Result<(), CliError> {
    let seed = l.seed()?;
    let prm = l.cfg.params()?;
    let v = &l.cfg.validation;
    let sim = |horizon: f64, stream: u64| SimConfig {
        horizon,
        ..l.cfg.sim.to_sim(seed.wrapping_add(stream))
    };

    let mut records = Vec::new();
    let pn = validate_pn(&prm, &sim(v.pn_horizon, 1), v.pn_paths, v.pn_max)?;
    records.push(check("p_an", pn.pass(), &pn));
    let ht_sim = SimConfig {
        dt: v.htransform_dt,
        ..sim(v.htransform_horizon, 2)
    };
    let ht = htransform_check(&prm, &ht_sim, v.htransform_samples, false)?;
    records.push(check("h_transform", ht.pass(), &ht));
    let mg = validate_martingale(
        &prm,
        &sim(l.cfg.sim.horizon, 3),
        v.martingale_n,
        &v.martingale_times,
        v.martingale_paths,
    )?;
    records.push(check("martingale", mg.iter().all(|r| r.pass), &mg));
    let exp = ExperimentConfig {
        sim: sim(l.cfg.sim.horizon, 4),
        ..l.cfg.experiment(seed)?
    };
    let opt = validate_optimality(&exp, v.optimality_delta)?;
    records.push(check("optimality", opt.pass(), &opt));

    l.write("validate.jsonl", &jsonl(&records))?;
    let failed: Vec<&str> = records
        .iter()
        .filter(|r| !r.pass)
        .map(|r| r.check)
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(failed.join(", ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(CliError::from(Error::InvalidLaw("x".into())).exit_code(), 1);
        assert_eq!(
            CliError::from(Error::DriftRegime { mu: -1.0 }).exit_code(),
            1
        );
        assert_eq!(CliError::from(Error::NonFinite("wealth")).exit_code(), 2);
        assert_eq!(CliError::from(Error::OracleInfeasible(1e-6)).exit_code(), 2);
        assert_eq!(CliError::Validation("martingale".into()).exit_code(), 3);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}

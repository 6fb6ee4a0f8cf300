//! `plugplay` command line: `run`, `verify` and `demo`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::sim::{build_load_transport_scenario, run_scenario, LoadTransportConfig, Scenario, ScenarioParams};
use crate::verify::{self, Suite};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Parser)]
#[command(name = "plugplay", version, about = "Plug-and-play output-feedback control simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario file and write trace.csv, events.csv and summary.json.
    Run {
        scenario: PathBuf,
        #[arg(short, long, default_value = "out")]
        output: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the randomized certificate suites.
    Verify {
        #[arg(default_value = "all")]
        suite: Suite,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Also write the full report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run the built-in load transport scenario.
    Demo {
        #[arg(short, long, default_value = "out")]
        output: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Write the scenario file instead of running it.
        #[arg(long)]
        export: Option<PathBuf>,
    },
}

#[derive(Debug, Default, Clone, clap::Args)]
pub struct Overrides {
    /// Step size.
    #[arg(long)]
    pub h: Option<f64>,
    /// Final time.
    #[arg(long = "T-end", alias = "t-end")]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub record_every: Option<usize>,
    /// Controller parameter, e.g. `--set beta=0.5` or `--set gamma_c=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Overrides {
    pub fn apply(&self, s: &mut Scenario) -> Result<()> {
        if let Some(h) = self.h {
            s.solver.h = h;
        }
        if let Some(t) = self.t_end {
            s.solver.t_end = t;
            s.events.retain(|e| e.time < t);
        }
        if let Some(r) = self.record_every {
            s.solver.record_every = r;
        }
        if !self.set.is_empty() {
            s.params = set_params(&s.params, &self.set)?;
        }
        s.validate()
    }
}

fn set_params(params: &ScenarioParams, pairs: &[String]) -> Result<ScenarioParams> {
    let mut value = serde_json::to_value(params)?;
    for pair in pairs {
        let (key, raw) = pair
            .split_once('=')
            .ok_or_else(|| Error::config("set", format!("`{pair}` is not KEY=VALUE")))?;
        let v: f64 = raw
            .trim()
            .parse()
            .map_err(|_| Error::config(key, format!("`{raw}` is not a number")))?;
        match value.get_mut(key) {
            Some(slot) => *slot = serde_json::json!(v),
            None => return Err(Error::config(key, "unknown parameter")),
        }
    }
    serde_json::from_value(value).map_err(|e| Error::config("set", e.to_string()))
}

/// Exit status for an error: failures of the computation itself give 1,
/// everything the user can fix in the input gives 2.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Integration { .. } | Error::NumericFailure(_) | Error::Singular { .. } | Error::NoUniqueSolution { .. } => {
            EXIT_FAILURE
        }
        _ => EXIT_USAGE,
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    if !path.is_file() {
        return Err(Error::config("scenario", format!("scenario not found: {}", path.display())));
    }
    Scenario::load(path)
}

pub fn cmd_run(path: &Path, output: &Path, overrides: &Overrides) -> Result<()> {
    let mut s = load_scenario(path)?;
    overrides.apply(&mut s)?;
    simulate(&s, output)
}

pub fn cmd_demo(output: &Path, overrides: &Overrides) -> Result<()> {
    let mut s = build_load_transport_scenario(&LoadTransportConfig::default())?;
    overrides.apply(&mut s)?;
    simulate(&s, output)
}

fn simulate(s: &Scenario, output: &Path) -> Result<()> {
    log::info!("simulating `{}` to t = {} with h = {}", s.name, s.solver.t_end, s.solver.h);
    let trace = run_scenario(s)?;
    trace.write_all(output)?;
    let summary = trace.summary();
    println!("{}: {} samples written to {}", s.name, summary.samples, output.display());
    println!("|x(0)| = {:.6e}  |x(T)| = {:.6e}", summary.x_norm_initial, summary.x_norm_final);
    if let (Some(a), Some(b)) = (summary.position_error_initial, summary.position_error_final) {
        println!("|p(0) - p_d| = {a:.6e}  |p(T) - p_d| = {b:.6e}");
    }
    Ok(())
}

/// Returns whether every check passed.
pub fn cmd_verify(suite: Suite, seed: u64, json: Option<&Path>) -> Result<bool> {
    let report = verify::with_threads(verify::thread_count(), || verify::run_suite(suite, seed))?;
    print!("{}", report.table());
    for c in report.checks.iter().filter(|c| !c.ok()) {
        println!("\n{} failed on {} instance(s); first:", c.name, c.failures.len());
        if let Some(f) = c.failures.first() {
            println!("{}", serde_json::to_string_pretty(f)?);
        }
    }
    if let Some(path) = json {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report.ok())
}

pub fn execute(cli: Cli) -> u8 {
    let outcome = match cli.command {
        Command::Run {
            scenario,
            output,
            overrides,
        } => cmd_run(&scenario, &output, &overrides).map(|_| true),
        Command::Verify { suite, seed, json } => cmd_verify(suite, seed, json.as_deref()),
        Command::Demo {
            output,
            overrides,
            export,
        } => match export {
            Some(path) => build_load_transport_scenario(&LoadTransportConfig::default())
                .and_then(|mut s| {
                    overrides.apply(&mut s)?;
                    Ok(std::fs::write(path, s.to_json()? + "\n")?)
                })
                .map(|_| true),
            None => cmd_demo(&output, &overrides).map(|_| true),
        },
    };
    match outcome {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    ExitCode::from(execute(Cli::parse()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_type_check_parameters() {
        let p = set_params(&ScenarioParams::default(), &["beta=0.5".into(), "k_c=2".into()]).unwrap();
        assert_eq!(p.beta, 0.5);
        assert_eq!(p.k_c, 2.0);
        assert!(set_params(&ScenarioParams::default(), &["bogus=1".into()]).is_err());
        assert!(set_params(&ScenarioParams::default(), &["beta=x".into()]).is_err());
        assert!(set_params(&ScenarioParams::default(), &["beta".into()]).is_err());
    }

    #[test]
    fn missing_scenario_is_a_usage_error() {
        let e = load_scenario(Path::new("/nonexistent/scenario.json")).unwrap_err();
        assert!(e.to_string().contains("scenario not found"));
        assert_eq!(exit_code(&e), EXIT_USAGE);
    }

    #[test]
    fn integration_failure_exits_one() {
        let e = Error::Integration { t: 1.0, reason: "nan".into() };
        assert_eq!(exit_code(&e), EXIT_FAILURE);
    }

    #[test]
    fn cli_parses() {
        let c = Cli::try_parse_from(["plugplay", "run", "s.json", "-o", "x", "--T-end", "5", "--set", "beta=1"]).unwrap();
        match c.command {
            Command::Run { overrides, .. } => assert_eq!(overrides.t_end, Some(5.0)),
            _ => panic!(),
        }
        let c = Cli::try_parse_from(["plugplay", "verify", "bass", "--seed", "7"]).unwrap();
        assert!(matches!(c.command, Command::Verify { suite: Suite::Bass, seed: 7, .. }));
        assert!(Cli::try_parse_from(["plugplay", "verify", "nope"]).is_err());
    }
}

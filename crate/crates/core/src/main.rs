use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ussf_boost::harness::{
    benchmark_step_latency, compare, run_scenario, sweep_initial_conditions, write_trace_csv, OrderingCheck,
    PlantModel, Role, Scenario, Summary,
};
use ussf_boost::ussf::{certify_epsilon, verify_axioms, UssfKind};
use ussf_boost::{Result, SimError};

/// Exit code for a failed acceptance check.
const REGRESSION: u8 = 3;
/// MSE ceiling for the FTC run in `compare --ci` (V²).
const FTC_MSE_BAR: f64 = 0.05;

#[derive(Parser)]
#[command(name = "ussf-boost", version, about = "Fixed-time boost converter regulation with USSF gains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON; the reference scenario when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the horizon (s).
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Enable the disturbance observer and its compensation in the FTC law.
    #[arg(long)]
    dob: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Measurement noise standard deviation.
    #[arg(long)]
    noise: Option<f64>,
    /// Leave samples before this time out of the metrics (s).
    #[arg(long)]
    t_skip: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Averaged,
    Switched,
}

impl ScenarioArgs {
    fn load(&self) -> Result<Scenario> {
        let mut sc = match &self.config {
            Some(path) => Scenario::load(path)?,
            None => Scenario::reference(),
        };
        if let Some(t) = self.t_end {
            sc.sim.t_end = t;
        }
        if let Some(m) = self.model {
            sc.sim.model = match m {
                ModelArg::Averaged => PlantModel::Averaged,
                ModelArg::Switched => PlantModel::Switched,
            };
        }
        if let Some(s) = self.seed {
            sc.sim.seed = s;
        }
        if let Some(n) = self.noise {
            sc.sim.noise_sigma = n;
        }
        if let Some(t) = self.t_skip {
            sc.sim.t_skip = t;
        }
        if self.dob {
            sc.dob.enabled = true;
            for c in std::iter::once(&mut sc.controller).chain(sc.methods.values_mut()) {
                if let ussf_boost::harness::ControllerConfig::Ftc(f) = c {
                    f.use_dob = true;
                }
            }
        }
        sc.validate()?;
        Ok(sc)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write the trace and summary.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// CSV trace output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Summary JSON output; printed to stdout when omitted.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Keep one record every N steps.
        #[arg(long)]
        decimation: Option<usize>,
    },
    /// Run FTC, baseline and PID on the same scenario and check the MSE ordering.
    Compare {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit with code 3 if the ordering or the FTC MSE bar fails.
        #[arg(long)]
        ci: bool,
    },
    /// Certify the slope-limit constant and check the USSF axioms.
    VerifyUssf {
        /// tanh, atan, alg, erf, or all.
        #[arg(long, default_value = "all")]
        kind: String,
        #[arg(long, default_value_t = 1e3)]
        span: f64,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Startup settling time over a list of initial output voltages.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Comma-separated initial voltages.
        #[arg(long, value_delimiter = ',', default_value = "2,6,10")]
        v0: Vec<f64>,
        /// Settling-time bound for the fixed-time check (s).
        #[arg(long, default_value_t = 0.05)]
        bound: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit with code 3 if the fixed-time check fails.
        #[arg(long)]
        ci: bool,
    },
    /// Per-step latency of the configured controller loop.
    Bench {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 100_000)]
        iters: usize,
    },
}

fn emit<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct UssfReport {
    certificate: ussf_boost::ussf::UssfCertificate,
    axioms: ussf_boost::ussf::AxiomReport,
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Simulate {
            scenario,
            out,
            summary,
            decimation,
        } => {
            let mut sc = scenario.load()?;
            if let Some(d) = decimation {
                sc.sim.decimation = d;
                sc.validate()?;
            }
            let res = run_scenario(&sc)?;
            if let Some(path) = &out {
                write_trace_csv(&res.trace, BufWriter::new(File::create(path)?))?;
            }
            emit(&Summary::from(&res), summary.as_deref())?;
            if let Some(f) = res.faults.first() {
                eprintln!("fault: {}", f.message);
                return Ok(2);
            }
            Ok(0)
        }
        Command::Compare { scenario, out, ci } => {
            let sc = scenario.load()?;
            let methods: Vec<(Role, _)> = sc.methods.iter().map(|(r, c)| (*r, c.clone())).collect();
            let report = compare(&sc, &methods)?;
            emit(&report, out.as_deref())?;
            let mut err = std::io::stderr().lock();
            for role in Role::ALL {
                writeln!(err, "{role:>8}  mse {:.9e}", report.mse(role))?;
            }
            writeln!(err, "ordering ftc < baseline < pid: {:?}", report.ordering)?;
            let faulted = report.methods.values().any(|s| !s.faults.is_empty());
            if faulted {
                return Ok(2);
            }
            let pass = report.ordering == OrderingCheck::Holds && report.mse(Role::Ftc) < FTC_MSE_BAR;
            Ok(if ci && !pass { REGRESSION } else { 0 })
        }
        Command::VerifyUssf {
            kind,
            span,
            tol,
            samples,
        } => {
            let kinds: Vec<UssfKind> = if kind == "all" {
                UssfKind::BUILT_IN.to_vec()
            } else {
                vec![kind.parse()?]
            };
            if samples < 1000 {
                return Err(SimError::Validation(format!("need at least 1000 samples, got {samples}")));
            }
            let mut reports = Vec::new();
            let mut all_pass = true;
            for k in &kinds {
                let certificate = certify_epsilon(k, span, tol)?;
                let axioms = verify_axioms(k, samples, span);
                all_pass &= axioms.all_pass();
                reports.push(UssfReport { certificate, axioms });
            }
            emit(&reports, None)?;
            Ok(if all_pass { 0 } else { REGRESSION })
        }
        Command::Sweep {
            scenario,
            v0,
            bound,
            out,
            ci,
        } => {
            let sc = scenario.load()?;
            let table = sweep_initial_conditions(&sc, &v0)?;
            emit(&table, out.as_deref())?;
            if table.rows.iter().any(|r| !r.faults.is_empty()) {
                return Ok(2);
            }
            Ok(if ci && !table.fixed_time_holds(bound) { REGRESSION } else { 0 })
        }
        Command::Bench { scenario, iters } => {
            let sc = scenario.load()?;
            emit(&benchmark_step_latency(&sc, iters)?, None)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

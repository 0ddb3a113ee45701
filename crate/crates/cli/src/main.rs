use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use nnmon_core::milp::MilpOptions;
use nnmon_core::pipeline::{nn_bounds, BoundingMethod};
use nnmon_core::scenario::run::{certificate, load_network, prepare, run_scenario, RunSummary};
use nnmon_core::scenario::{ExitStatus, ScenarioConfig};
use nnmon_core::synthesis::{verify_certificate, ObserverCertificate};
use nnmon_core::{Error, IntervalVector, Result};

/// Environment variable holding the log filter (e.g. `info`, `nnmon_core=debug`).
const LOG_ENV: &str = "NNMON_LOG";

/// Interval observers with NN-controller bounding and fault alarms.
#[derive(Debug, Parser)]
#[command(name = "nnmon", version, about, after_help = "Exit codes: 0 success, 1 unsound, 2 infeasible synthesis, 3 node budget exhausted, 4 config error. Log level via NNMON_LOG.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario: synthesize, simulate, monitor, write outputs.
    Run {
        config: PathBuf,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the horizon.
        #[arg(long)]
        horizon: Option<usize>,
        /// Skip SVG plots.
        #[arg(long)]
        no_plots: bool,
    },
    /// Synthesize the observer certificate only and print or write it as JSON.
    Synth {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bound a network's output over an input box with both methods.
    Bounds {
        /// `builtin:acc`, `builtin:small` or a network JSON file.
        network: String,
        /// Input box as comma-separated `lo:hi` pairs, e.g. `0:1,-1:2`.
        #[arg(value_name = "BOX", allow_hyphen_values = true)]
        input: String,
        #[arg(long, value_enum, default_value_t = Which::Both)]
        method: Which,
        #[arg(long, default_value_t = 100_000)]
        node_budget: usize,
        #[arg(long)]
        time_budget_ms: Option<u64>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Recompute a certificate's residuals against a scenario model.
    Verify {
        certificate: PathBuf,
        /// Scenario providing the model; defaults to the built-in ACC model.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Which {
    An,
    Op,
    Both,
}

impl Which {
    fn methods(self) -> Vec<BoundingMethod> {
        match self {
            Which::An => vec![BoundingMethod::An],
            Which::Op => vec![BoundingMethod::Op],
            Which::Both => vec![BoundingMethod::An, BoundingMethod::Op],
        }
    }
}

const DEFAULT_ACC: &str = "name = \"acc\"\nhorizon = 1\nt_s = 0.1\n";

fn load_config(path: &Path) -> Result<(ScenarioConfig, Option<PathBuf>)> {
    let cfg = ScenarioConfig::load(path)?;
    Ok((cfg, path.parent().map(Path::to_path_buf)))
}

fn parse_box(text: &str) -> Result<IntervalVector> {
    let bad = || Error::Config(format!("malformed box {text:?}; expected lo:hi,lo:hi,..."));
    let (mut lo, mut hi) = (Vec::new(), Vec::new());
    for pair in text.split(',') {
        let (l, h) = pair.trim().split_once(':').ok_or_else(bad)?;
        lo.push(l.trim().parse::<f64>().map_err(|_| bad())?);
        hi.push(h.trim().parse::<f64>().map_err(|_| bad())?);
    }
    IntervalVector::from_slices(&lo, &hi).map_err(|e| Error::Config(e.to_string()))
}

fn print_summary(s: &RunSummary) {
    println!("scenario {} seed {} horizon {} rho {:.6} ({:?})", s.name, s.seed, s.horizon, s.rho, s.certificate);
    for o in &s.observers {
        println!(
            "  {:<2} unsound {:>3}  actuator alarms {:>3}  output alarms {:?}  budget hits {:>3}  nodes {}",
            o.method.label(),
            o.unsound_steps,
            o.actuator_alarm_steps,
            o.output_alarm_steps,
            o.budget_exhausted_steps,
            o.total_nodes
        );
    }
    if let Some(d) = &s.dominance {
        println!(
            "  op within an on {}/{} steps, strictly tighter on {}",
            d.control_within, d.steps, d.control_strictly_tighter
        );
    }
    println!("exit {:?} ({})", s.exit_status, s.exit_code);
}

fn run(cli: Cli) -> Result<ExitStatus> {
    match cli.command {
        Command::Run { config, out, seed, horizon, no_plots } => {
            let (mut cfg, base) = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(h) = horizon {
                cfg.horizon = h;
            }
            if no_plots {
                cfg.output.plots = false;
            }
            cfg.validate()?;
            let outcome = run_scenario(&cfg, base.as_deref(), out.as_deref())?;
            print_summary(&outcome.summary);
            if let Some(dir) = outcome.files.first().and_then(|f| f.parent()) {
                println!("wrote {} files to {}", outcome.files.len(), dir.display());
            }
            Ok(outcome.summary.exit_status)
        }
        Command::Synth { config, out } => {
            let (cfg, base) = load_config(&config)?;
            let prepared = prepare(&cfg, base.as_deref())?;
            let (cert, _) = certificate(&prepared)?;
            let json = cert.to_json()?;
            match out {
                Some(path) => {
                    std::fs::write(&path, json)?;
                    eprintln!("rho {:.6}; certificate written to {}", cert.rho, path.display());
                }
                None => println!("{json}"),
            }
            Ok(ExitStatus::Success)
        }
        Command::Bounds { network, input, method, node_budget, time_budget_ms, json } => {
            let net = load_network(&network, None)?;
            let input = parse_box(&input)?;
            if input.dim() != net.input_dim() {
                return Err(Error::Config(format!(
                    "box has {} components but the network takes {}",
                    input.dim(),
                    net.input_dim()
                )));
            }
            let opts = MilpOptions { node_budget, time_budget: time_budget_ms.map(Duration::from_millis) };
            let mut status = ExitStatus::Success;
            let mut report = Vec::new();
            for m in method.methods() {
                let b = nn_bounds(&net, &input, m, &opts)?;
                if b.budget_exhausted {
                    status = ExitStatus::BudgetExhausted;
                }
                report.push((m, b));
            }
            if json {
                let items: Vec<_> = report
                    .iter()
                    .map(|(m, b)| {
                        serde_json::json!({
                            "method": m.label(),
                            "lower": b.bounds.lower().as_slice(),
                            "upper": b.bounds.upper().as_slice(),
                            "nodes": b.nodes,
                            "budget_exhausted": b.budget_exhausted,
                        })
                    })
                    .collect();
                println!("{}", serde_json::to_string_pretty(&items)?);
            } else {
                for (m, b) in &report {
                    for i in 0..b.bounds.dim() {
                        let (lo, hi) = b.bounds.component(i);
                        println!("{} u{i} [{lo:.9}, {hi:.9}]", m.label());
                    }
                    if *m == BoundingMethod::Op {
                        println!("op nodes {}{}", b.nodes, if b.budget_exhausted { " (budget exhausted)" } else { "" });
                    }
                }
            }
            Ok(status)
        }
        Command::Verify { certificate: path, config } => {
            let (cfg, base) = match config {
                Some(p) => load_config(&p)?,
                None => (ScenarioConfig::from_toml(DEFAULT_ACC)?, None),
            };
            let prepared = prepare(&cfg, base.as_deref())?;
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let cert = ObserverCertificate::from_json(&text).map_err(|e| Error::Config(e.to_string()))?;
            let report = verify_certificate(&prepared.model, &cert).map_err(|e| Error::Config(e.to_string()))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            let violations = report.violations(cert.eps);
            if violations.is_empty() {
                println!("certificate valid (eps {:.1e})", cert.eps);
                Ok(ExitStatus::Success)
            } else {
                for v in &violations {
                    println!("violated: {v}");
                }
                Ok(ExitStatus::SynthesisInfeasible)
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage errors are config errors; help and version are not errors.
            return ExitCode::from(if e.use_stderr() { ExitStatus::ConfigError.code() as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(status) => ExitCode::from(status.code() as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(ExitStatus::for_error(&err).code() as u8)
        }
    }
}

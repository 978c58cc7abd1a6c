use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hpcsim::harness::config::{self, ScenarioConfig, ScenarioKind};
use hpcsim::harness::scenarios::{describe_trace, parse_param, run_scenario, sweep, RunManifest};
use hpcsim::harness::HarnessError;

#[derive(Parser)]
#[command(name = "hpcsim", version, about = "Backfill broker and pilot runtime simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario file.
    Run { config: PathBuf },
    /// Run a scenario over every combination of parameter values.
    Sweep {
        config: PathBuf,
        /// Dotted key and values, e.g. `broker.n_brokers=4,20`. Repeatable.
        #[arg(long = "param", required = true)]
        params: Vec<String>,
    },
    /// Resolve and check a scenario file without running it.
    Validate { config: PathBuf },
    /// Print the full default config for a scenario kind as TOML.
    PrintDefaults {
        #[arg(long, value_enum, default_value = "fleet")]
        scenario: Kind,
    },
    /// Summarize a poll trace (`.csv`) or an SWF job trace.
    IngestStats { trace: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Fleet,
    FleetReplay,
    WeakScaling,
    MultiGeneration,
    StrongScaling,
    ModeComparison,
}

impl From<Kind> for ScenarioKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Fleet => ScenarioKind::Fleet,
            Kind::FleetReplay => ScenarioKind::FleetReplay,
            Kind::WeakScaling => ScenarioKind::WeakScaling,
            Kind::MultiGeneration => ScenarioKind::MultiGeneration,
            Kind::StrongScaling => ScenarioKind::StrongScaling,
            Kind::ModeComparison => ScenarioKind::ModeComparison,
        }
    }
}

fn print_manifest(m: &RunManifest) {
    println!(
        "{} seed={} config={} -> {}",
        m.scenario,
        m.seed,
        &m.config_sha256[..16],
        m.output_dir.display()
    );
    for f in &m.outputs {
        println!("  {:<20} {:>10} B  {}", f.name, f.bytes, &f.sha256[..16]);
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.cmd {
        Cmd::Run { config } => {
            let cfg = config::load(&config)?;
            print_manifest(&run_scenario(&cfg)?);
        }
        Cmd::Sweep { config, params } => {
            let params = params
                .iter()
                .map(|p| parse_param(p))
                .collect::<Result<Vec<_>, _>>()?;
            for m in sweep(&config, &params)? {
                print_manifest(&m);
            }
        }
        Cmd::Validate { config } => {
            let cfg = config::load(&config)?;
            println!("{}: ok ({})", config.display(), cfg.scenario);
        }
        Cmd::PrintDefaults { scenario } => {
            print!("{}", ScenarioConfig::defaults_for(scenario.into()).to_toml());
        }
        Cmd::IngestStats { trace } => println!("{}", describe_trace(&trace)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

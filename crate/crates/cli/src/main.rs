use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qnetsim_core::config::{ExperimentConfig, OutputFormat};
use qnetsim_core::runner::{self, RunError};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "qnetsim", version, about = "Two-node heralded entanglement simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run trials and report counts, fidelities and rates.
    Simulate(Args),
    /// Repeat the simulation over the values of the sweep section.
    Sweep(Args),
    /// Error budget, link efficiency table and rate bookkeeping.
    Budget(Args),
}

#[derive(clap::Args)]
struct Args {
    /// TOML experiment file.
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Shipped experiment; see `--preset list`.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<u64>,
    /// Output directory; overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn load(args: &Args) -> Result<ExperimentConfig, Failure> {
    let mut doc = match (&args.config, &args.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_toml(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
        (None, Some(name)) if name == "list" => {
            return Err(Failure::Config(format!("presets: {}", qnetsim_core::config::preset_names().join(", "))));
        }
        (None, Some(name)) => ExperimentConfig::preset(name).map_err(|e| Failure::Config(e.to_string()))?,
        (None, None) => return Err(Failure::Config("give --config or --preset".into())),
    };
    if let Some(seed) = args.seed {
        doc.seed = seed;
    }
    if let Some(n) = args.trials {
        doc.protocol.trials = n;
        if let Some(b) = doc.budget.as_mut() {
            b.mc_trials = n;
        }
    }
    doc.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(doc)
}

fn out_dir(args: &Args, doc: &ExperimentConfig) -> PathBuf {
    args.out.clone().or_else(|| doc.output.directory.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("."))
}

struct Writer<'a> {
    dir: &'a Path,
    doc: &'a ExperimentConfig,
}

impl Writer<'_> {
    fn wants(&self, f: OutputFormat) -> bool {
        self.doc.output.formats.contains(&f)
    }

    fn write(&self, name: &str, body: &str) -> Result<(), Failure> {
        let path = self.dir.join(name);
        fs::write(&path, body).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
    }

    fn json(&self, name: &str, value: serde_json::Result<serde_json::Value>) -> Result<(), Failure> {
        if !self.wants(OutputFormat::Json) {
            return Ok(());
        }
        let value = value.map_err(|e| Failure::Runtime(e.to_string()))?;
        let mut text = serde_json::to_string_pretty(&value).map_err(|e| Failure::Runtime(e.to_string()))?;
        text.push('\n');
        self.write(name, &text)
    }
}

fn run(command: &Command) -> Result<String, Failure> {
    let args = match command {
        Command::Simulate(a) | Command::Sweep(a) | Command::Budget(a) => a,
    };
    let doc = load(args)?;
    let dir = out_dir(args, &doc);
    fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    let w = Writer { dir: &dir, doc: &doc };
    let csv = w.wants(OutputFormat::Csv);
    let text = match command {
        Command::Simulate(_) => {
            let report = runner::simulate(&doc)?;
            if csv {
                w.write("counts.csv", &report.counts_csv())?;
                w.write("fidelity.csv", &report.fidelity_csv())?;
            }
            if doc.output.per_trial_records {
                w.write("trials.csv", &runner::trial_records_csv(&runner::trial_records(&doc)?))?;
            }
            w.json("report.json", serde_json::to_value(&report))?;
            report.to_text()
        }
        Command::Sweep(_) => {
            let report = runner::sweep(&doc)?;
            if csv {
                w.write("sweep.csv", &report.to_csv())?;
            }
            w.json("sweep.json", serde_json::to_value(&report))?;
            report.to_text()
        }
        Command::Budget(_) => {
            let report = runner::budget(&doc)?;
            if csv {
                w.write("budget.csv", &report.error_budget.to_csv())?;
                w.write("link_budget.csv", &report.link_csv())?;
                w.write("rates.csv", &report.rates_csv())?;
            }
            w.json("budget.json", serde_json::to_value(&report))?;
            report.to_text()
        }
    };
    if w.wants(OutputFormat::Text) {
        w.write("summary.txt", &text)?;
    }
    Ok(text)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("runtime error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

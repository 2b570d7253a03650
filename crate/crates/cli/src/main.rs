use std::path::PathBuf;
use std::process::ExitCode;

use attention::scenario::{
    emit_results, format_summary, must_succeed_failures, read_summary, run_scenario, run_sweep,
    ScenarioConfig, ScenarioError,
};
use clap::{Args, Parser, Subcommand};

const ENV_PREFIX: &str = "ATTENTION_";

#[derive(Parser)]
#[command(name = "attention", about = "MANET attacker traceback experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// JSON scenario config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset name instead of a config file.
    #[arg(long)]
    preset: Option<String>,
    /// Base seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Repetitions; overrides the config.
    #[arg(long)]
    reps: Option<u32>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write metrics.
    Run {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a scenario once per value of a config key.
    Sweep {
        #[command(flatten)]
        source: Source,
        /// Dotted config key, e.g. `background_fraction` or `matching.alpha`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the summary table of a results directory.
    Report {
        #[arg(long = "in")]
        dir: PathBuf,
    },
    /// List built-in presets.
    Presets,
}

fn load(source: &Source) -> Result<ScenarioConfig, ScenarioError> {
    let mut config = match (&source.config, &source.preset) {
        (Some(path), _) => ScenarioConfig::load(path)?,
        (None, Some(name)) => ScenarioConfig::preset(name)?,
        (None, None) => ScenarioConfig::default(),
    };
    if let Some(seed) = source.seed {
        config.seed = seed;
    }
    if let Some(reps) = source.reps {
        config.repetitions = reps;
    }
    config.with_env(ENV_PREFIX, std::env::vars())
}

fn is_config_error(e: &ScenarioError) -> bool {
    matches!(
        e,
        ScenarioError::Config { .. } | ScenarioError::UnknownPreset(_) | ScenarioError::Json(_)
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Presets => {
            for p in attention::scenario::PRESETS {
                println!("{p}");
            }
            return ExitCode::SUCCESS;
        }
        Command::Report { dir } => read_summary(&dir).map(|rows| {
            print!("{}", format_summary(&rows));
            0
        }),
        Command::Run { source, out } => load(&source).and_then(|config| {
            let records = run_scenario(&config)?;
            let summary = emit_results(&records, &out)?;
            print!("{}", format_summary(&summary));
            Ok(must_succeed_failures(&config, &records))
        }),
        Command::Sweep {
            source,
            param,
            values,
            out,
        } => load(&source).and_then(|config| {
            let records = run_sweep(&config, &param, &values)?;
            let summary = emit_results(&records, &out)?;
            print!("{}", format_summary(&summary));
            Ok(must_succeed_failures(&config, &records))
        }),
    };
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(failures) => {
            eprintln!(
                "error: {failures} run(s) of a must-succeed preset failed to trace the attacker"
            );
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            if is_config_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

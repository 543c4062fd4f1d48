use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use groupseg_cli::config::Preset;
use groupseg_cli::{run, CliError, Command, Options};

#[derive(Parser, Debug)]
#[command(name = "groupseg", version, about = "Group-segment Shapley attribution for multivariate time series")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Run config (or synth config) JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Replaces every seed in the config.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Dataset preset supplying `l_min` and the expected `T`.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    quiet: bool,
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("ERROR {}: {e}", e.exit_code());
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            return fail(&CliError::Validation(first.to_string()));
        }
    };
    let Some(config) = cli.config else {
        let names: Vec<_> = Command::value_variants()
            .iter()
            .filter_map(|c| c.to_possible_value().map(|v| v.get_name().to_string()))
            .collect();
        return fail(&CliError::Validation(format!("--config is required for {}", names.join("|"))));
    };
    let opts = Options {
        command: cli.command,
        config,
        output_dir: cli.output_dir,
        seed_override: cli.seed_override,
        preset: cli.preset,
        quiet: cli.quiet,
    };
    match run(&opts) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

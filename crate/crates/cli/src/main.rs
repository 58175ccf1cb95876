use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use liebflux_cli::{parse_config, plot_file, run, Experiment, RunError, RunOptions};

#[derive(Parser)]
#[command(name = "liebflux", version, about = "Lieb-lattice flat-band experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for parallel sweeps.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Spectrum sweep over flux (butterfly).
    Spectrum(Common),
    /// Time evolution of a localized state under a flux ramp.
    Evolve {
        #[command(flatten)]
        common: Common,
        /// Use the faster CI-scale ramp rate.
        #[arg(long)]
        fast: bool,
    },
    /// Three-level model dynamics.
    Toy(Common),
    /// Flat-band coupling rate versus gauge center.
    Rates(Common),
    /// Two-plaquette localized state.
    Localized(Common),
    /// Render a CSV produced by a run as SVG.
    Plot {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> Result<Vec<String>, RunError> {
    let (experiment, common, fast) = match cli.command {
        Command::Spectrum(c) => (Experiment::Spectrum, c, false),
        Command::Evolve { common, fast } => (Experiment::Evolve, common, fast),
        Command::Toy(c) => (Experiment::Toy, c, false),
        Command::Rates(c) => (Experiment::Rates, c, false),
        Command::Localized(c) => (Experiment::Localized, c, false),
        Command::Plot { input, out } => {
            let path = plot_file(&input, out.as_deref())?;
            return Ok(vec![format!("wrote {}", path.display())]);
        }
    };
    let text = std::fs::read_to_string(&common.config).map_err(|source| RunError::Read {
        path: common.config.clone(),
        source,
    })?;
    let config = parse_config(&text, Some(experiment))?;
    let options = RunOptions {
        out_dir: common.out,
        fast,
        threads: common.threads,
    };
    let report = run(&config, &options)?;
    let mut lines = report.summary;
    for f in &report.files {
        lines.push(format!("wrote {}", report.out_dir.join(f).display()));
    }
    Ok(lines)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

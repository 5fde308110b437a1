use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use triplet_sec::commands::{self, Options, Outcome};
use triplet_sec::config::{parse_config, GeometrySetting};
use triplet_sec::{Error, FieldPosition};

/// Spin-electric coupling simulator for photogenerated triplets.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides paths.output_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Restrict to one field position; `auto` runs all three.
    #[arg(long, global = true, value_enum)]
    position: Option<PositionArg>,

    /// E-field geometry relative to B0 (overrides experiment.geometry).
    #[arg(long, global = true, value_enum)]
    geometry: Option<GeometryArg>,

    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Echo-detected field-swept spectrum.
    Spectrum,
    /// Orientation distributions, effective-field profiles and the resonance map.
    Orientations {
        /// Explicit B0 in mT instead of the named positions.
        #[arg(long)]
        field: Option<f64>,
    },
    /// E-field modulated echo curves.
    Echo,
    /// Fit kappa and sigma_kappa to the curves listed in paths.inputs.
    Fit,
    /// Sensitivity and minimum detectable field.
    Sensitivity,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PositionArg {
    #[value(name = "Z", alias = "z")]
    Z,
    #[value(name = "Int", alias = "int")]
    Int,
    #[value(name = "XY", alias = "xy")]
    Xy,
    #[value(name = "auto")]
    Auto,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GeometryArg {
    Par,
    Perp,
    Both,
}

fn run(cli: Cli) -> Result<Outcome, Error> {
    let path = cli.config.ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let cfg = parse_config(&path)?;
    let mut opts = Options {
        out_dir: cli.out,
        position: match cli.position {
            Some(PositionArg::Z) => Some(FieldPosition::Z),
            Some(PositionArg::Int) => Some(FieldPosition::Int),
            Some(PositionArg::Xy) => Some(FieldPosition::XY),
            Some(PositionArg::Auto) | None => None,
        },
        geometry: cli.geometry.map(|g| match g {
            GeometryArg::Par => GeometrySetting::Par,
            GeometryArg::Perp => GeometrySetting::Perp,
            GeometryArg::Both => GeometrySetting::Both,
        }),
        field: None,
    };
    match cli.command {
        Command::Spectrum => commands::run_spectrum(&cfg, &opts),
        Command::Orientations { field } => {
            opts.field = field;
            commands::run_orientations(&cfg, &opts)
        }
        Command::Echo => commands::run_echo(&cfg, &opts),
        Command::Fit => commands::run_fit(&cfg, &opts),
        Command::Sensitivity => commands::run_sensitivity(&cfg, &opts),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    env_logger::Builder::new().filter_level(level).format_target(false).init();
    match run(cli) {
        Ok(outcome) => {
            for m in &outcome.messages {
                println!("{m}");
            }
            for f in &outcome.files {
                log::info!("wrote {}", f.display());
            }
            match outcome.failure {
                Some(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

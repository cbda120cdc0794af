//! `bfa`: train models, run attacks and studies, and draw decision geometry
//! from a single JSON experiment document.

mod config;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, Overrides};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("empty study: {0}")]
    Empty(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Empty(_) => 3,
        }
    }
}

impl From<bfa_core::Error> for CliError {
    fn from(e: bfa_core::Error) -> Self {
        use bfa_core::Error as E;
        match e {
            E::InvalidInput(_) | E::InvalidConfig(_) | E::Parse { .. } | E::Shape { .. } => {
                CliError::Validation(e.to_string())
            }
            E::EmptyStudy(_) => CliError::Empty(e.to_string()),
            E::Contract(_) | E::Io { .. } => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "bfa", version, about = "Boundary fitting attack laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train every model in the document and write the model files.
    Train(Common),
    /// Attack the selected inputs on every pair; `--kind` picks one attack.
    Attack(Common),
    /// Run one study: transfer, cosine, distance, robustness or ablation.
    Study(Common),
    /// Sweep gamma or n_points; `--kind` picks the parameter.
    Ablate(Common),
    /// Draw the decision geometry around one input as SVG.
    Plot(Common),
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct Common {
    /// Experiment document (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Subcommand-specific selector (study kind, attack kind, ablation parameter).
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long = "n-points")]
    n_points: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Absolute boundary sigma (replaces the data-relative default).
    #[arg(long)]
    sigma: Option<f64>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            eps: self.eps,
            iters: self.iters,
            n_points: self.n_points,
            gamma: self.gamma,
            sigma: self.sigma,
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("BF_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Validation(format!("BF_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(format!("cannot size worker pool: {e}")))
}

type Action = fn(&run::Context, Option<&str>) -> Result<Vec<output::Artifact>, CliError>;

fn execute(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let (common, action): (&Common, Action) = match &cli.command {
        Command::Train(c) => (c, run::train),
        Command::Attack(c) => (c, run::attack),
        Command::Study(c) => (c, run::study),
        Command::Ablate(c) => (c, run::ablate),
        Command::Plot(c) => (c, run::plot),
    };
    let mut cfg = ExperimentConfig::load(&common.config)?;
    cfg.apply(&common.overrides());
    cfg.validate()?;
    let ctx = run::Context::new(cfg)?;
    let artifacts = action(&ctx, common.kind.as_deref())?;
    for path in output::write_all(&ctx.config.output_dir, &artifacts)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bfa: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

//! `xgate` command line: gradient checks, training runs, fixed-α sweeps,
//! range ablations and α export, all writing versioned CSV.

use std::ffi::OsString;
use std::io::Write;

use clap::{Parser, Subcommand};

pub mod commands;
pub mod opts;
pub mod report;
pub mod runs;

pub use commands::{
    ablation_variants, cmd_ablate, cmd_export_alpha, cmd_gradcheck, cmd_sweep_alpha, cmd_train, sweep_block,
    AblateArgs, ExportArgs, GradcheckArgs, SweepArgs, TrainArgs, DEFAULT_FIXED_ALPHA,
};
pub use opts::NetArgs;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] xgate::Error),
    #[error("{0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Run(xgate::Error::Config(_)) => EXIT_USAGE,
            CliError::Run(_) | CliError::Check(_) => EXIT_FAILURE,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "xgate", version, about = "Expanded gating ranges for self-gated activations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Compare analytic gradients with central differences on the default grids
    Gradcheck(GradcheckArgs),
    /// Train one model per seed with trainable α
    Train(TrainArgs),
    /// Train with α frozen at each listed value
    SweepAlpha(SweepArgs),
    /// Train every range parameterization of one activation
    Ablate(AblateArgs),
    /// Dump the range parameters of a checkpoint
    ExportAlpha(ExportArgs),
}

pub fn dispatch(command: &Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::SweepAlpha(a) => cmd_sweep_alpha(a, out),
        Command::Ablate(a) => cmd_ablate(a, out),
        Command::ExportAlpha(a) => cmd_export_alpha(a, out),
    }
}

/// Parses `args` (program name first) and runs the command. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    match dispatch(&cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

//! `deltactl` — decide bounded first-order sentences over the reals up to a
//! slack, and check the certificates those decisions emit.

use clap::{Args, Parser, Subcommand, ValueEnum};
use deltactl::problem::CliError;
use deltactl::run::{self, exit_code_for, render_error, Flags, OutputFormat, Report};
use deltactl_core::rational::parse_rat;
use deltactl_core::Rat;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "deltactl",
    version,
    about = "Decision procedures over the reals with a numerical slack",
    after_help = "Exit codes: 0 verdict reached, 2 error, 3 inconclusive search."
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a problem file and print its report.
    Run {
        /// Problem file (S-expression syntax).
        file: PathBuf,
        #[command(flatten)]
        common: CommonFlags,
        /// Write the emitted certificate here when the verdict carries one.
        #[arg(long, value_name = "PATH")]
        certificate: Option<String>,
    },
    /// Check a certificate against the sentence a problem file encodes.
    Verify {
        /// Certificate file produced by `run --certificate`.
        cert: PathBuf,
        /// Problem file the certificate was emitted for.
        problem: PathBuf,
        #[command(flatten)]
        common: CommonFlags,
    },
}

#[derive(Args)]
struct CommonFlags {
    /// Decision slack as an exact rational, e.g. `1/100` or `0.01`.
    #[arg(long, value_parser = parse_rat_arg)]
    delta: Option<Rat>,
    /// Split-depth limit per quantifier block.
    #[arg(long)]
    max_depth: Option<u32>,
    /// Wall-clock budget for the solve, in milliseconds.
    #[arg(long)]
    timeout_ms: Option<u64>,
    /// Worker threads (default: $DELTACTL_WORKERS, then 1).
    #[arg(long)]
    workers: Option<usize>,
    /// Report format.
    #[arg(long, value_enum, default_value_t = OutputArg::Text)]
    output: OutputArg,
    /// Require Lyapunov candidates to dominate a quadratic outside a small
    /// ball (`on`, the default) or accept merely nonnegative ones (`off`).
    #[arg(long, value_enum, value_name = "on|off")]
    strict_lyapunov: Option<OnOff>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputArg {
    Text,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

fn parse_rat_arg(text: &str) -> Result<Rat, String> {
    parse_rat(text)
}

impl CommonFlags {
    fn to_flags(&self, certificate: Option<String>) -> (Flags, OutputFormat) {
        let flags = Flags {
            delta: self.delta.clone(),
            max_depth: self.max_depth,
            timeout_ms: self.timeout_ms,
            workers: self.workers,
            certificate,
            strict_lyapunov: self.strict_lyapunov.map(|s| s == OnOff::On),
        };
        let format = match self.output {
            OutputArg::Text => OutputFormat::Text,
            OutputArg::Json => OutputFormat::Json,
        };
        (flags, format)
    }
}

fn main() {
    let cli = Cli::parse();
    let (outcome, format): (Result<Report, CliError>, OutputFormat) = match &cli.command {
        Cmd::Run {
            file,
            common,
            certificate,
        } => {
            let (flags, format) = common.to_flags(certificate.clone());
            (run::run_file(file, &flags), format)
        }
        Cmd::Verify {
            cert,
            problem,
            common,
        } => {
            let (flags, format) = common.to_flags(None);
            (run::verify_file(cert, problem, &flags), format)
        }
    };
    match outcome {
        Ok(report) => {
            print!("{}", report.render(format));
            std::process::exit(0);
        }
        Err(e) => {
            print!("{}", render_error(&e, format));
            std::process::exit(exit_code_for(&e));
        }
    }
}

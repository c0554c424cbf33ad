//! Library surface of the `deltactl` binary: the problem-file parser, the
//! command driver, and the report renderers, exposed for integration tests
//! and embedding.

pub mod problem;
pub mod run;
pub mod sexp;

pub use problem::{parse_problem, pretty, CliError, Command, ErrorCode, ProblemFile, SolveOpts};
pub use run::{render_error, run_file, verify_file, Flags, OutputFormat, Report};

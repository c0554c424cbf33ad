pub mod boxes;
pub mod certificate;
pub mod control;
pub mod diff;
pub mod eval;
pub mod formula;
pub mod interval;
pub mod ode;
pub mod rational;
pub mod solver;
pub mod term;

pub use boxes::IntervalBox;
pub use certificate::{
    emit_certificate, formula_digest, parse_certificate, verify_certificate, AtomFact, CertError,
    CertNode, Certificate, CheckResult,
};
pub use control::{
    closed_loop_name, encode_delta_stability, encode_lyapunov_check, encode_lyapunov_synthesis,
    encode_pid_tuning, encode_reachability, goal_var, init_var, pid_reference_error, reach_goal_ball,
    reach_init_ball, solve_delta_stability, synthesize_lyapunov, tune_pid, ControlError,
    LyapunovOptions, LyapunovTemplate, PidSpecAtom, PidTemplate, StabilitySpec,
};
pub use eval::{EvalCtx, EvalError, Mode, TruthValue};
pub use formula::{classify_prefix, Atom, Binding, CmpOp, Formula, PrefixClass, QuantKind, RawFormula};
pub use interval::Interval;
pub use ode::{FlowTrace, OdeError, OdeRegistry, OdeSystem};
pub use rational::Rat;
pub use solver::{
    grid_oracle, solve_exists_forall, solve_prenex, solve_sigma1, SolveError, SolveResult,
    SolveStats, SolverConfig, Verdict,
};
pub use term::{Fun, Term};

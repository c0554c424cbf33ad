//! Command driver: load a problem file, resolve configuration, dispatch to
//! the solver, and render the deterministic text or JSON report.

use crate::problem::{
    parse_problem, CliError, Command, ErrorCode, OdeDecl, ProblemFile, SolveOpts,
};
use deltactl_core::rational::rat_to_f64_floor;
use deltactl_core::{
    classify_prefix, emit_certificate, encode_delta_stability, encode_lyapunov_check,
    encode_lyapunov_synthesis, encode_pid_tuning, encode_reachability, parse_certificate,
    reach_goal_ball, reach_init_ball, solve_exists_forall, solve_prenex, tune_pid, verify_certificate,
    Binding, CheckResult, ControlError, EvalCtx, Formula, Interval, LyapunovOptions,
    LyapunovTemplate, OdeRegistry, PidSpecAtom, PidTemplate, Rat, SolveError, SolveResult,
    SolveStats, SolverConfig, StabilitySpec, Verdict,
};
use serde_json::json;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Text,
    Json,
}

/// Command-line options that override file keywords and built-in defaults.
#[derive(Clone, Debug, Default)]
pub struct Flags {
    pub delta: Option<Rat>,
    pub max_depth: Option<u32>,
    pub timeout_ms: Option<u64>,
    pub workers: Option<usize>,
    pub certificate: Option<String>,
    pub strict_lyapunov: Option<bool>,
}

/// Environment variable consulted for `--workers` when the flag is absent.
pub const WORKERS_ENV: &str = "DELTACTL_WORKERS";

type Result<T> = std::result::Result<T, CliError>;

// ---------------------------------------------------------------------------
// Configuration resolution: flag > environment > file keyword > default
// ---------------------------------------------------------------------------

fn env_workers() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok())
}

pub fn resolve_config(flags: &Flags, opts: &SolveOpts) -> SolverConfig {
    let defaults = SolverConfig::default();
    SolverConfig {
        delta: flags
            .delta
            .clone()
            .or_else(|| opts.delta.clone())
            .unwrap_or(defaults.delta),
        max_depth: flags.max_depth.or(opts.max_depth).unwrap_or(defaults.max_depth),
        timeout_ms: flags
            .timeout_ms
            .or(opts.timeout_ms)
            .unwrap_or(defaults.timeout_ms),
        workers: flags
            .workers
            .or_else(env_workers)
            .or(opts.workers)
            .unwrap_or(defaults.workers),
        ode_step: opts.step.as_ref().map(rat_to_f64_floor),
        ..defaults
    }
}

fn resolve_strict(flags: &Flags, file: Option<bool>) -> bool {
    flags.strict_lyapunov.or(file).unwrap_or(true)
}

// ---------------------------------------------------------------------------
// Error mapping
// ---------------------------------------------------------------------------

fn map_solve(e: SolveError) -> CliError {
    let code = match &e {
        SolveError::Inconclusive { .. } => ErrorCode::Inconclusive,
        _ => ErrorCode::Unsupported,
    };
    CliError::new(code, e.to_string())
}

fn map_control(e: ControlError) -> CliError {
    match e {
        ControlError::Solve(inner) => map_solve(inner),
        other => CliError::new(ErrorCode::Unsupported, other.to_string()),
    }
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::new(ErrorCode::Io, format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Formula construction shared by `run` and `verify`
// ---------------------------------------------------------------------------

pub fn build_registry(problem: &ProblemFile) -> Result<OdeRegistry> {
    let mut registry = OdeRegistry::new();
    for ode in &problem.odes {
        register_ode(&mut registry, ode)?;
    }
    Ok(registry)
}

fn register_ode(registry: &mut OdeRegistry, ode: &OdeDecl) -> Result<()> {
    let domain: Vec<Interval> = ode
        .domain
        .iter()
        .map(|(lo, hi)| Interval::from_rats(lo, hi))
        .collect();
    registry
        .register(ode.name.clone(), ode.states.clone(), ode.rhs.clone(), domain)
        .map_err(|e| CliError::new(ErrorCode::Unsupported, e.to_string()))
}

/// The conjunction of all assertions, with free declared variables bound by
/// an outermost existential block in declaration order.
fn assertion_sentence(problem: &ProblemFile) -> Result<Formula> {
    if problem.assertions.is_empty() {
        return Err(CliError::new(
            ErrorCode::Syntax,
            "problem file has no assertions",
        ));
    }
    let lowered: Vec<Formula> = problem
        .assertions
        .iter()
        .map(|raw| {
            raw.lower()
                .map_err(|e| CliError::new(ErrorCode::Syntax, e.to_string()))
        })
        .collect::<Result<_>>()?;
    let matrix = Formula::and(lowered);
    let free = matrix.free_vars();
    let binders: Vec<Binding> = problem
        .vars
        .iter()
        .filter(|(n, _, _)| free.contains(n))
        .map(|(n, lo, hi)| Binding::new(n.clone(), lo.clone(), hi.clone()))
        .collect();
    Ok(if binders.is_empty() {
        matrix
    } else {
        Formula::exists(binders, matrix)
    })
}

/// State-box bindings for a Lyapunov check: each system state must have a
/// declared variable of the same name supplying its range.
fn lyapunov_states(problem: &ProblemFile, system: &str) -> Result<Vec<Binding>> {
    let ode = problem
        .odes
        .iter()
        .find(|o| o.name == system)
        .expect("system checked during parsing");
    ode.states
        .iter()
        .map(|s| {
            problem
                .vars
                .iter()
                .find(|(n, _, _)| n == s)
                .map(|(n, lo, hi)| Binding::new(n.clone(), lo.clone(), hi.clone()))
                .ok_or_else(|| {
                    CliError::new(
                        ErrorCode::Undeclared,
                        format!("state `{s}` of system `{system}` needs a declared variable for the check box"),
                    )
                })
        })
        .collect()
}

fn lyapunov_pieces(
    problem: &ProblemFile,
    system: &str,
    candidate: &deltactl_core::Term,
    params: &[(String, Rat, Rat)],
    strict: bool,
) -> Result<(LyapunovTemplate, LyapunovOptions)> {
    let tmpl = LyapunovTemplate {
        params: params
            .iter()
            .map(|(n, lo, hi)| Binding::new(n.clone(), lo.clone(), hi.clone()))
            .collect(),
        v: candidate.clone(),
        states: lyapunov_states(problem, system)?,
    };
    let opts = LyapunovOptions {
        strict,
        ..LyapunovOptions::default()
    };
    Ok((tmpl, opts))
}

fn stability_spec(
    problem: &ProblemFile,
    registry: &OdeRegistry,
    system: &str,
    eps: &Option<Rat>,
    horizon: &Option<Rat>,
    margin: &Option<Rat>,
    state_box: &Option<Vec<(Rat, Rat)>>,
) -> StabilitySpec {
    let _ = problem;
    let sys = registry.get(system).expect("system checked during parsing");
    let mut spec = StabilitySpec::with_defaults(sys.clone());
    if let Some(e) = eps {
        spec.eps_bound = e.clone();
    }
    if let Some(h) = horizon {
        spec.horizon = h.clone();
    }
    if let Some(m) = margin {
        spec.margin = m.clone();
    }
    if let Some(b) = state_box {
        spec.state_box = b.clone();
    }
    spec
}

fn pid_pieces(cmd: &Command) -> (PidTemplate, Vec<PidSpecAtom>) {
    let Command::PidTune {
        name,
        states,
        rhs,
        domain,
        input,
        output,
        reference,
        init,
        kp,
        ki,
        kd,
        spec,
        ..
    } = cmd
    else {
        unreachable!("callers match on PidTune first")
    };
    let tmpl = PidTemplate {
        name: name.clone(),
        plant_states: states.clone(),
        plant_rhs: rhs.clone(),
        plant_domain: domain.clone(),
        input: input.clone(),
        output: output.clone(),
        reference: reference.clone(),
        init: init.clone(),
        kp: kp.clone(),
        ki: ki.clone(),
        kd: kd.clone(),
    };
    let spec = spec
        .iter()
        .map(|(tol, t_lo, t_hi)| PidSpecAtom {
            tol: tol.clone(),
            t_lo: t_lo.clone(),
            t_hi: t_hi.clone(),
        })
        .collect();
    (tmpl, spec)
}

/// Rebuild the sentence a command decides. For `pid-tune` the closed-loop
/// system is registered into `registry` as a side effect, so flow terms in
/// the sentence evaluate against it.
pub fn encode_command(
    problem: &ProblemFile,
    cfg: &SolverConfig,
    strict: bool,
    registry: &mut OdeRegistry,
) -> Result<Formula> {
    match &problem.command {
        Command::CheckSat { .. } | Command::Classify => assertion_sentence(problem),
        Command::LyapunovCheck {
            system,
            candidate,
            strict: file_strict,
            ..
        } => {
            let _ = file_strict;
            let (tmpl, opts) = lyapunov_pieces(problem, system, candidate, &[], strict)?;
            let sys = registry.get(system).expect("system checked during parsing");
            encode_lyapunov_check(&tmpl, sys, &opts).map_err(map_control)
        }
        Command::LyapunovSynth {
            system,
            candidate,
            params,
            ..
        } => {
            let (tmpl, opts) = lyapunov_pieces(problem, system, candidate, params, strict)?;
            let sys = registry.get(system).expect("system checked during parsing");
            encode_lyapunov_synthesis(&tmpl, sys, &opts).map_err(map_control)
        }
        Command::Stability {
            system,
            eps,
            horizon,
            margin,
            state_box,
            ..
        } => {
            let spec = stability_spec(problem, registry, system, eps, horizon, margin, state_box);
            encode_delta_stability(&spec).map_err(map_control)
        }
        Command::Reach {
            system,
            init,
            goal,
            d1,
            d2,
            d3,
            horizon,
            ..
        } => {
            let sys = registry.get(system).expect("system checked during parsing");
            let init_atoms = reach_init_ball(sys, init);
            let goal_atoms = reach_goal_ball(sys, goal);
            let d1 = d1.clone().unwrap_or_else(|| cfg.delta.clone());
            let d2 = d2.clone().unwrap_or_else(|| cfg.delta.clone());
            let d3 = d3.clone().unwrap_or_else(|| cfg.delta.clone());
            encode_reachability(sys, &init_atoms, &goal_atoms, &d1, &d2, &d3, horizon)
                .map_err(map_control)
        }
        Command::PidTune { .. } => {
            let (tmpl, spec) = pid_pieces(&problem.command);
            encode_pid_tuning(&tmpl, &spec, registry).map_err(map_control)
        }
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Everything a finished command prints; rendered as text or JSON.
#[derive(Debug)]
pub enum Report {
    Solve {
        verdict: Verdict,
        witness_label: &'static str,
        witness: Option<Vec<(String, Rat)>>,
        stats: SolveStats,
        certificate_path: Option<String>,
    },
    Classify {
        class: String,
        label: String,
    },
    VerifyOutcome(CheckResult),
}

impl Report {
    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Text => self.render_text(),
            OutputFormat::Json => self.render_json(),
        }
    }

    fn render_text(&self) -> String {
        let mut out = String::new();
        match self {
            Report::Solve {
                verdict,
                witness_label,
                witness,
                stats,
                certificate_path,
            } => {
                let _ = writeln!(out, "{verdict}");
                if let Some(w) = witness {
                    let _ = writeln!(out, "{witness_label}:");
                    for (name, value) in w {
                        let _ = writeln!(out, "  {name} = {value}");
                    }
                }
                let _ = writeln!(
                    out,
                    "stats: boxes={} max-depth={} unknown={}",
                    stats.boxes_explored, stats.max_depth, stats.unknown_leaves
                );
                if let Some(path) = certificate_path {
                    let _ = writeln!(out, "certificate: {path}");
                }
            }
            Report::Classify { class, label } => {
                let _ = writeln!(out, "{class}  {label}");
            }
            Report::VerifyOutcome(result) => match result {
                CheckResult::Accepted => out.push_str("accepted\n"),
                CheckResult::Rejected(reason) => {
                    let _ = writeln!(out, "rejected: {reason}");
                }
            },
        }
        out
    }

    fn render_json(&self) -> String {
        let value = match self {
            Report::Solve {
                verdict,
                witness,
                stats,
                certificate_path,
                ..
            } => {
                let mut obj = serde_json::Map::new();
                obj.insert("verdict".into(), json!(verdict.to_string()));
                if let Some(w) = witness {
                    let items: Vec<serde_json::Value> = w
                        .iter()
                        .map(|(name, value)| {
                            json!({"name": name, "value": value.to_string()})
                        })
                        .collect();
                    obj.insert("witness".into(), json!(items));
                }
                obj.insert(
                    "stats".into(),
                    json!({
                        "boxes_explored": stats.boxes_explored,
                        "max_depth": stats.max_depth,
                        "unknown_leaves": stats.unknown_leaves,
                        "wall_ms": stats.wall_ms,
                    }),
                );
                if let Some(path) = certificate_path {
                    obj.insert("certificate_path".into(), json!(path));
                }
                serde_json::Value::Object(obj)
            }
            Report::Classify { class, label } => json!({"class": class, "label": label}),
            Report::VerifyOutcome(result) => match result {
                CheckResult::Accepted => json!({"verdict": "accepted"}),
                CheckResult::Rejected(reason) => {
                    json!({"verdict": "rejected", "reason": reason})
                }
            },
        };
        let mut text = serde_json::to_string_pretty(&value).expect("report values serialize");
        text.push('\n');
        text
    }
}

/// Error report: verdict line `error`, then the coded message.
pub fn render_error(e: &CliError, format: OutputFormat) -> String {
    match format {
        OutputFormat::Text => format!("error\n{}: {}\n", e.code.as_str(), e.message),
        OutputFormat::Json => {
            let value = json!({
                "verdict": "error",
                "error": {"code": e.code.as_str(), "message": e.message},
            });
            let mut text = serde_json::to_string_pretty(&value).expect("report values serialize");
            text.push('\n');
            text
        }
    }
}

pub fn exit_code_for(e: &CliError) -> i32 {
    match e.code {
        ErrorCode::Inconclusive => 3,
        _ => 2,
    }
}

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

/// Execute a problem file and return the finished report.
pub fn run_file(path: &Path, flags: &Flags) -> Result<Report> {
    let text = read_file(path)?;
    let problem = parse_problem(&text)?;
    let mut registry = build_registry(&problem)?;
    let cfg = resolve_config(flags, &problem.command.opts());
    let strict = resolve_strict(
        flags,
        match &problem.command {
            Command::LyapunovCheck { strict, .. } | Command::LyapunovSynth { strict, .. } => {
                *strict
            }
            _ => None,
        },
    );

    if matches!(problem.command, Command::Classify) {
        let sentence = assertion_sentence(&problem)?;
        let class = classify_prefix(&sentence)
            .map_err(|e| CliError::new(ErrorCode::Unsupported, e.to_string()))?;
        return Ok(Report::Classify {
            class: class.to_string(),
            label: class.complexity(),
        });
    }

    // The sentence is rebuilt exactly as `verify` will rebuild it; for
    // pid-tune that means over a throwaway registry, because `tune_pid`
    // registers the closed loop into the live one itself.
    let (sentence, result) = match &problem.command {
        Command::PidTune { .. } => {
            let (tmpl, spec) = pid_pieces(&problem.command);
            let sentence = {
                let mut scratch = build_registry(&problem)?;
                encode_pid_tuning(&tmpl, &spec, &mut scratch).map_err(map_control)?
            };
            let result = tune_pid(&tmpl, &spec, &cfg, &mut registry).map_err(map_control)?;
            (sentence, result)
        }
        _ => {
            let sentence = encode_command(&problem, &cfg, strict, &mut registry)?;
            let result = dispatch_solve(&problem.command, &sentence, &cfg, &registry)?;
            (sentence, result)
        }
    };

    let certificate_path = write_certificate(flags, &result, &sentence, &cfg)?;
    Ok(finish_report(result, certificate_path))
}

fn dispatch_solve(
    cmd: &Command,
    sentence: &Formula,
    cfg: &SolverConfig,
    registry: &OdeRegistry,
) -> Result<SolveResult> {
    let use_cegis = match cmd {
        Command::LyapunovSynth { params, .. } => params.len() > 1,
        Command::PidTune { .. } => true,
        _ => false,
    };
    if use_cegis {
        solve_exists_forall(sentence, cfg, registry).map_err(map_solve)
    } else {
        solve_prenex(sentence, cfg, registry).map_err(map_solve)
    }
}

fn write_certificate(
    flags: &Flags,
    result: &SolveResult,
    sentence: &Formula,
    cfg: &SolverConfig,
) -> Result<Option<String>> {
    let Some(path) = &flags.certificate else {
        return Ok(None);
    };
    if result.certificate.is_none() {
        return Ok(None);
    }
    let text = emit_certificate(result, sentence, &cfg.delta, &[])
        .map_err(|e| CliError::new(ErrorCode::Unsupported, e.to_string()))?;
    std::fs::write(path, text).map_err(|e| CliError::new(ErrorCode::Io, format!("{path}: {e}")))?;
    Ok(Some(path.clone()))
}

fn finish_report(result: SolveResult, certificate_path: Option<String>) -> Report {
    let witness_label = match result.verdict {
        Verdict::DeltaFalse => "counterexample",
        _ => "witness",
    };
    Report::Solve {
        verdict: result.verdict,
        witness_label,
        witness: result.witness,
        stats: result.stats,
        certificate_path,
    }
}

/// Check a certificate file against the sentence its problem file encodes.
pub fn verify_file(cert_path: &Path, problem_path: &Path, flags: &Flags) -> Result<Report> {
    let cert_text = read_file(cert_path)?;
    let cert = parse_certificate(&cert_text)
        .map_err(|e| CliError::new(ErrorCode::Syntax, format!("{}: {e}", cert_path.display())))?;
    let text = read_file(problem_path)?;
    let problem = parse_problem(&text)?;
    if matches!(problem.command, Command::Classify) {
        return Err(CliError::new(
            ErrorCode::Unsupported,
            "classify produces no certificate to verify",
        ));
    }
    let mut registry = build_registry(&problem)?;
    let cfg = resolve_config(flags, &problem.command.opts());
    let strict = resolve_strict(
        flags,
        match &problem.command {
            Command::LyapunovCheck { strict, .. } | Command::LyapunovSynth { strict, .. } => {
                *strict
            }
            _ => None,
        },
    );
    let sentence = encode_command(&problem, &cfg, strict, &mut registry)?;
    let ctx = match cfg.ode_step {
        Some(s) => EvalCtx::with_step(&registry, s),
        None => EvalCtx::new(&registry),
    };
    let outcome = verify_certificate(&cert, &sentence, &cfg.delta, &[], &ctx);
    Ok(Report::VerifyOutcome(outcome))
}

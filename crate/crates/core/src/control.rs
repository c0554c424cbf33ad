//! Control-theoretic encodings on top of the decision procedure: Lyapunov
//! function validation and template synthesis, stability up to a slack,
//! bounded reachability, and PID gain tuning.
//!
//! Every `encode_*` function is pure — the same inputs produce syntactically
//! identical formulas — and the solvers are driven through the public solver
//! entry points, so every answer carries the usual certificate.

use crate::boxes::IntervalBox;
use crate::diff::{partial, simplify};
use crate::eval::{eval_term, eval_term_point, EvalCtx, EvalError};
use crate::formula::{classify_prefix, Atom, Binding, Formula, FormulaError, PrefixClass};
use crate::interval::Interval;
use crate::ode::{flow_enclosure, OdeError, OdeRegistry, OdeSystem};
use crate::rational::{rat_to_f64_ceil, Rat};
use crate::solver::{
    solve_exists_forall, solve_prenex, SolveError, SolveResult, SolverConfig,
};
use crate::term::Term;
use num_traits::Zero;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("invalid template: {0}")]
    BadTemplate(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("closed loop escapes its domain at gains {gains}")]
    DomainEscape { gains: String },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn rat(n: i64, d: i64) -> Rat {
    Rat::new(n.into(), d.into())
}

fn domain_bounds(sys: &OdeSystem) -> Result<Vec<(Rat, Rat)>, ControlError> {
    sys.domain()
        .iter()
        .map(|iv| {
            if iv.lo().is_finite() && iv.hi().is_finite() {
                Ok((iv.lo_rat(), iv.hi_rat()))
            } else {
                Err(ControlError::Unsupported(format!(
                    "system `{}` has an unbounded state domain",
                    sys.name()
                )))
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Lyapunov validation and synthesis
// ---------------------------------------------------------------------------

/// A candidate function `V(p̄, x̄)` with parameter ranges and the state box
/// the conditions are required on.
#[derive(Clone, Debug)]
pub struct LyapunovTemplate {
    /// Parameters with their search ranges; empty when `v` is fully
    /// instantiated.
    pub params: Vec<Binding>,
    /// The candidate function, over parameter and state variables.
    pub v: Term,
    /// State box the decrease condition is checked on.
    pub states: Vec<Binding>,
}

/// Options for the positivity side condition.
#[derive(Clone, Debug)]
pub struct LyapunovOptions {
    /// In strict mode `V` must dominate `coeff * Σ xᵢ²` outside the
    /// `radius`-ball, ruling out the degenerate `V ≡ 0` answer.
    pub strict: bool,
    pub coeff: Rat,
    pub radius: Rat,
}

impl Default for LyapunovOptions {
    fn default() -> LyapunovOptions {
        LyapunovOptions {
            strict: true,
            coeff: rat(1, 1000),
            radius: rat(1, 10),
        }
    }
}

fn check_template(
    tmpl: &LyapunovTemplate,
    sys: &OdeSystem,
    opts: &LyapunovOptions,
) -> Result<(), ControlError> {
    let bad = |m: String| Err(ControlError::BadTemplate(m));
    if tmpl.states.len() != sys.dim() {
        return bad(format!(
            "template has {} state binding(s) but system `{}` has {}",
            tmpl.states.len(),
            sys.name(),
            sys.dim()
        ));
    }
    for (b, s) in tmpl.states.iter().zip(sys.states()) {
        if &b.name != s {
            return bad(format!(
                "state binding `{}` does not match system state `{s}`",
                b.name
            ));
        }
    }
    let allowed: Vec<&str> = tmpl
        .params
        .iter()
        .map(|b| b.name.as_str())
        .chain(sys.states().iter().map(|s| s.as_str()))
        .collect();
    for v in tmpl.v.vars() {
        if !allowed.contains(&v.as_str()) {
            return bad(format!("candidate function uses unknown variable `{v}`"));
        }
    }
    if opts.strict && (opts.coeff <= Rat::zero() || opts.radius <= Rat::zero()) {
        return bad("strict mode needs positive coefficient and radius".into());
    }
    // V(p̄, 0) = 0, checked by interval evaluation at the origin point with
    // parameters ranging over their full boxes.
    let mut zero_box = IntervalBox::new();
    for b in &tmpl.params {
        zero_box = zero_box.with(b.name.clone(), Interval::from_rats(&b.lo, &b.hi));
    }
    for s in sys.states() {
        zero_box = zero_box.with(s.clone(), Interval::from_rat(&Rat::zero()));
    }
    let registry = OdeRegistry::new();
    let ctx = EvalCtx::new(&registry);
    let enc = eval_term(&simplify(&tmpl.v), &zero_box, &ctx)?;
    if enc.lo() != 0.0 || enc.hi() != 0.0 {
        return bad(format!(
            "candidate function must vanish at the origin (got [{}, {}])",
            enc.lo(),
            enc.hi()
        ));
    }
    Ok(())
}

/// The quantifier-free Lyapunov conditions on one state cell: `V ≥ 0`,
/// `⟨∇V, f⟩ ≤ 0`, and in strict mode `V ≥ coeff·Σxᵢ²` outside the
/// `radius`-ball around the origin.
fn lyapunov_matrix(
    v: &Term,
    sys: &OdeSystem,
    opts: &LyapunovOptions,
) -> Result<Formula, ControlError> {
    let mut lie = Term::int(0);
    for (state, rhs) in sys.states().iter().zip(sys.rhs()) {
        let dv = partial(v, state)
            .map_err(|e| ControlError::BadTemplate(format!("candidate not differentiable: {e}")))?;
        lie = lie.add(dv.mul(rhs.clone()));
    }
    let mut conjuncts = vec![
        Formula::Atom(Atom::ge(simplify(v))),
        Formula::Atom(Atom::ge(simplify(&lie.neg()))),
    ];
    if opts.strict {
        let inside_ball: Vec<Formula> = sys
            .states()
            .iter()
            .map(|s| {
                Formula::Atom(Atom::gt(
                    Term::konst(opts.radius.clone()).sub(Term::var(s.clone()).abs()),
                ))
            })
            .collect();
        let mut dominated = v.clone();
        for s in sys.states() {
            dominated = dominated.sub(Term::konst(opts.coeff.clone()).mul(Term::var(s.clone()).pow(2)));
        }
        conjuncts.push(Formula::or(vec![
            Formula::and(inside_ball),
            Formula::Atom(Atom::ge(simplify(&dominated))),
        ]));
    }
    Ok(Formula::and(conjuncts))
}

/// Build the validation sentence for an instantiated candidate:
/// `∀x̄∈X. (V ≥ 0 ∧ ⟨∇V,f⟩ ≤ 0 [∧ strict domination])`.
pub fn encode_lyapunov_check(
    tmpl: &LyapunovTemplate,
    sys: &OdeSystem,
    opts: &LyapunovOptions,
) -> Result<Formula, ControlError> {
    if !tmpl.params.is_empty() {
        return Err(ControlError::BadTemplate(
            "parameters must be instantiated before validation".into(),
        ));
    }
    check_template(tmpl, sys, opts)?;
    let matrix = lyapunov_matrix(&tmpl.v, sys, opts)?;
    Ok(Formula::forall(tmpl.states.clone(), matrix))
}

/// Build the synthesis sentence `∃p̄∈D ∀x̄∈X. conditions(V(p̄,·))`.
pub fn encode_lyapunov_synthesis(
    tmpl: &LyapunovTemplate,
    sys: &OdeSystem,
    opts: &LyapunovOptions,
) -> Result<Formula, ControlError> {
    if tmpl.params.is_empty() {
        return Err(ControlError::BadTemplate(
            "synthesis needs at least one parameter".into(),
        ));
    }
    check_template(tmpl, sys, opts)?;
    let matrix = lyapunov_matrix(&tmpl.v, sys, opts)?;
    Ok(Formula::exists(
        tmpl.params.clone(),
        Formula::forall(tmpl.states.clone(), matrix),
    ))
}

/// Search the parameter box for gains that make the candidate a certified
/// Lyapunov function. A single parameter is decided by the alternation
/// engine directly (interval bisection over the parameter with universal
/// subcalls); a parameter vector goes through the counterexample-guided
/// loop. A `DeltaSat` answer carries the gains and a certificate whose
/// universal part is an accepted cover at those gains.
pub fn synthesize_lyapunov(
    tmpl: &LyapunovTemplate,
    sys: &OdeSystem,
    opts: &LyapunovOptions,
    cfg: &SolverConfig,
    registry: &OdeRegistry,
) -> Result<SolveResult, ControlError> {
    let f = encode_lyapunov_synthesis(tmpl, sys, opts)?;
    let result = if tmpl.params.len() == 1 {
        solve_prenex(&f, cfg, registry)?
    } else {
        solve_exists_forall(&f, cfg, registry)?
    };
    Ok(result)
}

// ---------------------------------------------------------------------------
// Stability up to a slack
// ---------------------------------------------------------------------------

/// Inflation applied to the response bound so that a certifiably stable
/// system keeps a working margin over the enclosure widths.
const STABILITY_GAMMA: (i64, i64) = (11, 10);

/// Bounded stability query: for every response level ε there must be an
/// excitation level δ such that trajectories starting δ-close to the origin
/// stay within the (inflated) margin-plus-ε tube over the horizon.
#[derive(Clone, Debug)]
pub struct StabilitySpec {
    pub system: OdeSystem,
    /// Upper bound `e` on the response levels quantified over.
    pub eps_bound: Rat,
    /// Time horizon `T`.
    pub horizon: Rat,
    /// Initial-state box `X` (must contain the origin).
    pub state_box: Vec<(Rat, Rat)>,
    /// Radius `r` of the ball around the origin excluded from the decay
    /// requirement; the response bound is `γ·r + ε` with `γ` slightly
    /// above one.
    pub margin: Rat,
}

impl StabilitySpec {
    /// Spec with the library defaults: ε ≤ 1/4, horizon 2, margin 1/2, and
    /// the state box `[-1, 1]` in every dimension.
    pub fn with_defaults(system: OdeSystem) -> StabilitySpec {
        let dim = system.dim();
        StabilitySpec {
            system,
            eps_bound: rat(1, 4),
            horizon: rat(2, 1),
            state_box: vec![(rat(-1, 1), rat(1, 1)); dim],
            margin: rat(1, 2),
        }
    }

    fn validate(&self) -> Result<(), ControlError> {
        let bad = |m: String| Err(ControlError::BadTemplate(m));
        if self.eps_bound <= Rat::zero() || self.horizon <= Rat::zero() || self.margin <= Rat::zero()
        {
            return bad("stability spec needs positive bound, horizon, and margin".into());
        }
        if self.state_box.len() != self.system.dim() {
            return bad(format!(
                "state box has {} dimension(s) but system `{}` has {}",
                self.state_box.len(),
                self.system.name(),
                self.system.dim()
            ));
        }
        for (lo, hi) in &self.state_box {
            if lo > hi {
                return bad("inverted state box".into());
            }
            if *lo > Rat::zero() || *hi < Rat::zero() {
                return bad("state box must contain the origin".into());
            }
        }
        Ok(())
    }
}

/// Name of the initial-state variable the stability and reachability
/// encodings use for a system state.
pub fn init_var(state: &str) -> String {
    format!("{state}_0")
}

/// Name of the end-state variable the reachability encoding uses.
pub fn goal_var(state: &str) -> String {
    format!("{state}_t")
}

/// Build the bounded stability sentence
///
/// `∀ε∈[0,e] ∃δ∈[0,e] ( ε−δ ≥ 0  ∧  ∀t∈[0,T] ∀x₀∈X.
///     (some |x₀ᵢ| ≥ δ+r)  ∨  (every |flowᵢ(x₀,t)| < γ·r + ε) )`.
///
/// The inner δ ranges over the full `[0, e]` with the explicit `ε−δ ≥ 0`
/// conjunct (rather than a δ∈[0,ε] binder, which the bounded language cannot
/// express), and the trajectory bound carries the `γ·r` inflation so that a
/// genuinely contracting system admits a certificate with nonzero margin.
/// Its quantifier prefix classifies as `Pi(3)`.
pub fn encode_delta_stability(spec: &StabilitySpec) -> Result<Formula, ControlError> {
    spec.validate()?;
    let sys = &spec.system;
    let gamma_r = rat(STABILITY_GAMMA.0, STABILITY_GAMMA.1) * &spec.margin;

    let eps = Term::var("eps");
    let del = Term::var("del");
    let hoist = Formula::Atom(Atom::ge(eps.clone().sub(del.clone())));

    let x0_terms: Vec<Term> = sys.states().iter().map(|s| Term::var(init_var(s))).collect();
    let mut disjuncts: Vec<Formula> = Vec::new();
    for s in sys.states() {
        disjuncts.push(Formula::Atom(Atom::ge(
            Term::var(init_var(s))
                .abs()
                .sub(del.clone())
                .sub(Term::konst(spec.margin.clone())),
        )));
    }
    let response: Vec<Formula> = (0..sys.dim())
        .map(|i| {
            Formula::Atom(Atom::gt(
                Term::konst(gamma_r.clone())
                    .add(eps.clone())
                    .sub(
                        Term::flow(sys.name(), i, x0_terms.clone(), Term::var("t")).abs(),
                    ),
            ))
        })
        .collect();
    disjuncts.push(Formula::and(response));

    let mut inner_bindings = vec![Binding::new("t", Rat::zero(), spec.horizon.clone())];
    for (s, (lo, hi)) in sys.states().iter().zip(&spec.state_box) {
        inner_bindings.push(Binding::new(init_var(s), lo.clone(), hi.clone()));
    }
    let inner = Formula::forall(inner_bindings, Formula::or(disjuncts));

    Ok(Formula::forall(
        vec![Binding::new("eps", Rat::zero(), spec.eps_bound.clone())],
        Formula::exists(
            vec![Binding::new("del", Rat::zero(), spec.eps_bound.clone())],
            Formula::and(vec![hoist, inner]),
        ),
    ))
}

/// Convenience wrapper: encode and decide a stability spec.
pub fn solve_delta_stability(
    spec: &StabilitySpec,
    cfg: &SolverConfig,
    registry: &OdeRegistry,
) -> Result<SolveResult, ControlError> {
    let f = encode_delta_stability(spec)?;
    debug_assert_eq!(classify_prefix(&f)?, PrefixClass::Pi(3));
    Ok(solve_prenex(&f, cfg, registry)?)
}

// ---------------------------------------------------------------------------
// Bounded reachability
// ---------------------------------------------------------------------------

/// Idealized ball conditions `x₀ = center` over the initial-state variables,
/// one atom `-|x₀ᵢ - cᵢ| ≥ 0` per component, to be relaxed by the encoder.
pub fn reach_init_ball(sys: &OdeSystem, center: &[Rat]) -> Vec<Atom> {
    sys.states()
        .iter()
        .zip(center)
        .map(|(s, c)| {
            Atom::ge(
                Term::var(init_var(s))
                    .sub(Term::konst(c.clone()))
                    .abs()
                    .neg(),
            )
        })
        .collect()
}

/// Idealized ball conditions `x_t = center` over the end-state variables.
pub fn reach_goal_ball(sys: &OdeSystem, center: &[Rat]) -> Vec<Atom> {
    sys.states()
        .iter()
        .zip(center)
        .map(|(s, c)| {
            Atom::ge(
                Term::var(goal_var(s))
                    .sub(Term::konst(c.clone()))
                    .abs()
                    .neg(),
            )
        })
        .collect()
}

/// Build the bounded reachability sentence
///
/// `∃x₀ ∃t∈[0,T] ∃x_t. init⁻ᵈ¹(x₀) ∧ (|x_tᵢ − flowᵢ(x₀,t)| ≤ δ₂) ∧
///  goal⁻ᵈ³(x_t)`
///
/// where the caller's idealized `init` and `goal` atoms are relaxed by δ₁
/// and δ₃ and the dynamics conjunct carries δ₂. State variables range over
/// the system domain; all three variable groups sit in one existential
/// block.
pub fn encode_reachability(
    sys: &OdeSystem,
    init: &[Atom],
    goal: &[Atom],
    d1: &Rat,
    d2: &Rat,
    d3: &Rat,
    horizon: &Rat,
) -> Result<Formula, ControlError> {
    let bad = |m: String| Err(ControlError::BadTemplate(m));
    if d1 <= &Rat::zero() || d2 <= &Rat::zero() || d3 <= &Rat::zero() {
        return bad("the three slack bounds must be positive".into());
    }
    if horizon <= &Rat::zero() {
        return bad("the time horizon must be positive".into());
    }
    let bounds = domain_bounds(sys)?;

    let mut bindings: Vec<Binding> = Vec::new();
    for (s, (lo, hi)) in sys.states().iter().zip(&bounds) {
        bindings.push(Binding::new(init_var(s), lo.clone(), hi.clone()));
    }
    bindings.push(Binding::new("t", Rat::zero(), horizon.clone()));
    for (s, (lo, hi)) in sys.states().iter().zip(&bounds) {
        bindings.push(Binding::new(goal_var(s), lo.clone(), hi.clone()));
    }
    let allowed: Vec<String> = bindings.iter().map(|b| b.name.clone()).collect();
    for a in init.iter().chain(goal) {
        for v in a.term.vars() {
            if !allowed.contains(&v) {
                return bad(format!("condition atom uses unknown variable `{v}`"));
            }
        }
    }

    let relax = |atoms: &[Atom], d: &Rat| -> Vec<Formula> {
        atoms
            .iter()
            .map(|a| {
                Formula::Atom(Atom {
                    term: a.term.clone(),
                    strict: a.strict,
                    shift: &a.shift - d,
                })
            })
            .collect()
    };
    let x0_terms: Vec<Term> = sys.states().iter().map(|s| Term::var(init_var(s))).collect();
    let mut conjuncts = relax(init, d1);
    for (i, s) in sys.states().iter().enumerate() {
        conjuncts.push(Formula::Atom(
            Atom::ge(
                Term::var(goal_var(s))
                    .sub(Term::flow(sys.name(), i, x0_terms.clone(), Term::var("t")))
                    .abs()
                    .neg(),
            )
            .with_shift(-d2.clone()),
        ));
    }
    conjuncts.extend(relax(goal, d3));
    Ok(Formula::exists(bindings, Formula::and(conjuncts)))
}

// ---------------------------------------------------------------------------
// PID tuning
// ---------------------------------------------------------------------------

/// Proportional-integral-derivative tuning problem: a plant with an input,
/// a reference signal, gain search ranges, and a fixed initial state.
///
/// The plant is given as raw fields rather than a registered system because
/// its right-hand sides mention the input variable; `tune_pid` closes the
/// loop and registers the resulting autonomous system.
#[derive(Clone, Debug)]
pub struct PidTemplate {
    /// Base name for the registered closed-loop system (`<name>__closed`).
    pub name: String,
    pub plant_states: Vec<String>,
    /// Right-hand sides over the plant states and the input variable.
    pub plant_rhs: Vec<Term>,
    pub plant_domain: Vec<(Rat, Rat)>,
    /// Input variable substituted by the control law.
    pub input: String,
    /// Measured state; the error is `reference − output`.
    pub output: String,
    /// Reference signal; a constant or a term over the time variable `t`.
    pub reference: Term,
    /// Plant initial state, one value per state.
    pub init: Vec<Rat>,
    /// Gain search ranges; a degenerate range pins the gain to a constant,
    /// and `(0, 0)` disables the corresponding term entirely.
    pub kp: (Rat, Rat),
    pub ki: (Rat, Rat),
    pub kd: (Rat, Rat),
}

/// One performance requirement: `|reference − output| ≤ tol` for every time
/// in `[t_lo, t_hi]`.
#[derive(Clone, Debug)]
pub struct PidSpecAtom {
    pub tol: Rat,
    pub t_lo: Rat,
    pub t_hi: Rat,
}

/// Name the closed-loop system `tune_pid` registers for a template.
pub fn closed_loop_name(tmpl: &PidTemplate) -> String {
    format!("{}__closed", tmpl.name)
}

struct GainPlan {
    /// `(state name, range)` for each searched gain, in kp/ki/kd order.
    searched: Vec<(String, (Rat, Rat))>,
    /// Control law with pinned gains inlined and searched gains referring
    /// to their frozen-state variables.
    u_expr: Term,
    need_integrator: bool,
    need_clock: bool,
}

impl PidTemplate {
    fn validate(&self, spec: &[PidSpecAtom]) -> Result<(), ControlError> {
        let bad = |m: String| Err(ControlError::BadTemplate(m));
        if self.plant_states.is_empty() {
            return bad("plant has no states".into());
        }
        if self.plant_rhs.len() != self.plant_states.len()
            || self.plant_domain.len() != self.plant_states.len()
            || self.init.len() != self.plant_states.len()
        {
            return bad("plant fields must all have one entry per state".into());
        }
        for (i, s) in self.plant_states.iter().enumerate() {
            if self.plant_states[..i].contains(s) {
                return bad(format!("duplicate plant state `{s}`"));
            }
        }
        let reserved = ["ie", "clk", "kp", "ki", "kd", "t"];
        for s in &self.plant_states {
            if reserved.contains(&s.as_str()) {
                return bad(format!("plant state `{s}` collides with a reserved name"));
            }
        }
        if self.plant_states.contains(&self.input) || reserved.contains(&self.input.as_str()) {
            return bad(format!("input `{}` collides with another name", self.input));
        }
        if !self.plant_states.contains(&self.output) {
            return bad(format!("output `{}` is not a plant state", self.output));
        }
        for ((lo, hi), v) in self.plant_domain.iter().zip(&self.init) {
            if lo > hi {
                return bad("inverted plant domain".into());
            }
            if v < lo || v > hi {
                return bad("initial state outside the plant domain".into());
            }
        }
        for t in &self.plant_rhs {
            for v in t.vars() {
                if v != self.input && !self.plant_states.contains(&v) {
                    return bad(format!("plant right-hand side uses unknown variable `{v}`"));
                }
            }
        }
        for v in self.reference.vars() {
            if v != "t" {
                return bad(format!("reference may only depend on `t`, found `{v}`"));
            }
        }
        for g in [&self.kp, &self.ki, &self.kd] {
            if g.0 > g.1 {
                return bad("inverted gain range".into());
            }
        }
        if [&self.kp, &self.ki, &self.kd].iter().all(|g| g.0 == g.1) {
            return bad("at least one gain range must be non-degenerate".into());
        }
        if spec.is_empty() {
            return bad("no performance requirements given".into());
        }
        for a in spec {
            if a.tol <= Rat::zero() {
                return bad("performance tolerance must be positive".into());
            }
            if a.t_lo < Rat::zero() || a.t_lo > a.t_hi {
                return bad("performance window must satisfy 0 ≤ t_lo ≤ t_hi".into());
            }
        }
        Ok(())
    }

    /// Error over the internal closed-loop states (`clk` standing in for
    /// time when the reference varies).
    fn error_state_term(&self) -> Term {
        self.reference
            .subst("t", &Term::var("clk"))
            .sub(Term::var(self.output.clone()))
    }

    fn gain_plan(&self) -> Result<GainPlan, ControlError> {
        let out_idx = self
            .plant_states
            .iter()
            .position(|s| s == &self.output)
            .expect("validated");
        let e_state = self.error_state_term();
        let mut searched: Vec<(String, (Rat, Rat))> = Vec::new();
        let mut terms: Vec<Term> = Vec::new();
        let mut need_integrator = false;
        let mut need_clock = !self.reference.vars().is_empty();

        let gain_term = |name: &str, range: &(Rat, Rat), searched: &mut Vec<(String, (Rat, Rat))>| {
            if range.0 == range.1 {
                Term::konst(range.0.clone())
            } else {
                searched.push((name.to_string(), range.clone()));
                Term::var(name)
            }
        };

        let kp_active = !(self.kp.0.is_zero() && self.kp.1.is_zero());
        let ki_active = !(self.ki.0.is_zero() && self.ki.1.is_zero());
        let kd_active = !(self.kd.0.is_zero() && self.kd.1.is_zero());
        if kp_active {
            let k = gain_term("kp", &self.kp, &mut searched);
            terms.push(k.mul(e_state.clone()));
        }
        if ki_active {
            need_integrator = true;
            let k = gain_term("ki", &self.ki, &mut searched);
            terms.push(k.mul(Term::var("ie")));
        }
        if kd_active {
            // de/dt = r'(t) − f_output; the output's dynamics must not
            // depend on the input or the law would refer to itself.
            let d_out = partial(&self.plant_rhs[out_idx], &self.input)
                .map_err(|e| ControlError::BadTemplate(format!("plant not differentiable: {e}")))?;
            let dependent = !matches!(simplify(&d_out), Term::Const(c) if c.is_zero());
            if dependent {
                return Err(ControlError::Unsupported(
                    "derivative gain needs an output whose dynamics are independent of the input"
                        .into(),
                ));
            }
            let dref = partial(&self.reference, "t")
                .map_err(|e| ControlError::BadTemplate(format!("reference not differentiable: {e}")))?
                .subst("t", &Term::var("clk"));
            if !matches!(simplify(&dref), Term::Const(ref c) if c.is_zero()) {
                need_clock = true;
            }
            let k = gain_term("kd", &self.kd, &mut searched);
            terms.push(k.mul(dref.sub(self.plant_rhs[out_idx].clone())));
        }

        let u_expr = match terms.len() {
            0 => Term::int(0),
            _ => {
                let mut it = terms.into_iter();
                let first = it.next().expect("nonempty");
                it.fold(first, |acc, t| acc.add(t))
            }
        };
        Ok(GainPlan {
            searched,
            u_expr,
            need_integrator,
            need_clock,
        })
    }
}

/// Close the loop, register the autonomous closed system, and search the
/// gain box for values meeting every performance requirement:
/// Register the closed-loop system for a template and build the tuning
/// sentence `∃gains ∀t∈[min t_lo, max t_hi]. requirements(e(t))` without
/// solving it. Returns the gain plan, the closed-loop initial terms, and
/// the sentence; `tune_pid` is the solving front end, and certificate
/// checking re-derives the same sentence through this function.
fn assemble_pid_tuning(
    tmpl: &PidTemplate,
    spec: &[PidSpecAtom],
    registry: &mut OdeRegistry,
) -> Result<(GainPlan, Vec<Term>, Formula), ControlError> {
    tmpl.validate(spec)?;
    let plan = tmpl.gain_plan()?;
    let closed = closed_loop_name(tmpl);
    if registry.get(&closed).is_some() {
        return Err(ControlError::BadTemplate(format!(
            "system `{closed}` is already registered"
        )));
    }

    let t_max = spec
        .iter()
        .map(|a| a.t_hi.clone())
        .max()
        .expect("spec nonempty");
    let t_min = spec
        .iter()
        .map(|a| a.t_lo.clone())
        .min()
        .expect("spec nonempty");

    // Assemble the closed-loop system.
    let mut states: Vec<String> = tmpl.plant_states.clone();
    let mut rhs: Vec<Term> = tmpl
        .plant_rhs
        .iter()
        .map(|t| t.subst(&tmpl.input, &plan.u_expr))
        .collect();
    let mut domain: Vec<Interval> = tmpl
        .plant_domain
        .iter()
        .map(|(lo, hi)| Interval::from_rats(lo, hi))
        .collect();
    let mut init_terms: Vec<Term> = tmpl.init.iter().map(|v| Term::konst(v.clone())).collect();

    if plan.need_integrator {
        // Worst-case integral of the error over the horizon, padded.
        let mut probe = IntervalBox::new();
        for (s, (lo, hi)) in tmpl.plant_states.iter().zip(&tmpl.plant_domain) {
            probe = probe.with(s.clone(), Interval::from_rats(lo, hi));
        }
        probe = probe.with("clk", Interval::from_rats(&Rat::zero(), &t_max));
        let scratch = OdeRegistry::new();
        let ctx = EvalCtx::new(&scratch);
        let e_mag = eval_term(&tmpl.error_state_term(), &probe, &ctx)?.mag();
        if !e_mag.is_finite() {
            return Err(ControlError::BadTemplate(
                "cannot bound the error over the plant domain".into(),
            ));
        }
        let bound = e_mag * rat_to_f64_ceil(&t_max) + 1.0;
        states.push("ie".into());
        rhs.push(tmpl.error_state_term());
        domain.push(Interval::point(-bound).hull(&Interval::point(bound)));
        init_terms.push(Term::int(0));
    }
    if plan.need_clock {
        states.push("clk".into());
        rhs.push(Term::int(1));
        domain.push(Interval::from_rats(&Rat::zero(), &(&t_max + rat(1, 1))));
        init_terms.push(Term::int(0));
    }
    for (name, (lo, hi)) in &plan.searched {
        states.push(name.clone());
        rhs.push(Term::int(0));
        domain.push(Interval::from_rats(lo, hi));
        init_terms.push(Term::var(name.clone()));
    }
    registry.register(closed.clone(), states, rhs, domain)?;

    // Performance formula over the closed-loop flow.
    let out_idx = tmpl
        .plant_states
        .iter()
        .position(|s| s == &tmpl.output)
        .expect("validated");
    let flow_term = Term::flow(closed.clone(), out_idx, init_terms.clone(), Term::var("t"));
    let error_t = tmpl.reference.clone().sub(flow_term);
    let mut conjuncts: Vec<Formula> = Vec::new();
    for a in spec {
        let main = Formula::Atom(
            Atom::ge(error_t.clone().abs().neg()).with_shift(-a.tol.clone()),
        );
        if a.t_lo == t_min && a.t_hi == t_max {
            conjuncts.push(main);
        } else {
            conjuncts.push(Formula::or(vec![
                Formula::Atom(Atom::gt(Term::konst(a.t_lo.clone()).sub(Term::var("t")))),
                Formula::Atom(Atom::gt(Term::var("t").sub(Term::konst(a.t_hi.clone())))),
                main,
            ]));
        }
    }
    let gain_bindings: Vec<Binding> = plan
        .searched
        .iter()
        .map(|(n, (lo, hi))| Binding::new(n.clone(), lo.clone(), hi.clone()))
        .collect();
    let f = Formula::exists(
        gain_bindings,
        Formula::forall(
            vec![Binding::new("t", t_min, t_max)],
            Formula::and(conjuncts),
        ),
    );
    Ok((plan, init_terms, f))
}

/// Build the tuning sentence for a template, registering its closed-loop
/// system as a side effect. The sentence can be handed to the certificate
/// checker or inspected without running the search.
pub fn encode_pid_tuning(
    tmpl: &PidTemplate,
    spec: &[PidSpecAtom],
    registry: &mut OdeRegistry,
) -> Result<Formula, ControlError> {
    let (_, _, f) = assemble_pid_tuning(tmpl, spec, registry)?;
    Ok(f)
}

/// Search the gain box for controller gains meeting every requirement,
/// via the counterexample-guided loop over the tuning sentence.
pub fn tune_pid(
    tmpl: &PidTemplate,
    spec: &[PidSpecAtom],
    cfg: &SolverConfig,
    registry: &mut OdeRegistry,
) -> Result<SolveResult, ControlError> {
    let (plan, init_terms, f) = assemble_pid_tuning(tmpl, spec, registry)?;
    let closed = closed_loop_name(tmpl);
    let sys = registry.get(&closed).expect("just registered");
    let t_max = spec
        .iter()
        .map(|a| a.t_hi.clone())
        .max()
        .expect("spec nonempty");

    // Escape probe at the gain-box midpoints: if even the central gains
    // drive the loop out of its domain, surface that instead of a wash of
    // indeterminate enclosures.
    {
        let ctx = match cfg.ode_step {
            Some(s) => EvalCtx::with_step(registry, s),
            None => EvalCtx::new(registry),
        };
        let mid_box: Vec<Interval> = init_terms
            .iter()
            .map(|t| {
                let empty = IntervalBox::new();
                eval_term(t, &empty, &ctx).ok().unwrap_or(Interval::ENTIRE)
            })
            .collect();
        let mid_box: Vec<Interval> = mid_box
            .iter()
            .zip(plan_mid_overrides(&plan, sys))
            .map(|(iv, over)| over.unwrap_or(*iv))
            .collect();
        let t_enc = Interval::from_rats(&Rat::zero(), &t_max);
        if flow_enclosure(&ctx, sys, &mid_box, t_enc).is_err() {
            let gains = plan
                .searched
                .iter()
                .map(|(n, (lo, hi))| {
                    let mid = (lo + hi) / rat(2, 1);
                    format!("({n} {mid})")
                })
                .collect::<Vec<_>>()
                .join(" ");
            return Err(ControlError::DomainEscape { gains });
        }
    }

    Ok(solve_exists_forall(&f, cfg, registry)?)
}

/// Midpoint intervals for the searched-gain components of the closed-loop
/// initial box (the other components keep their evaluated constants).
fn plan_mid_overrides(plan: &GainPlan, sys: &OdeSystem) -> Vec<Option<Interval>> {
    sys.states()
        .iter()
        .map(|s| {
            plan.searched.iter().find(|(n, _)| n == s).map(|(_, (lo, hi))| {
                let mid = (lo + hi) / rat(2, 1);
                Interval::from_rat(&mid)
            })
        })
        .collect()
}

/// Evaluate the tracking error of a tuned loop at one time with the
/// non-validated reference integrator — the independent cross-check used by
/// the acceptance suite.
pub fn pid_reference_error(
    tmpl: &PidTemplate,
    gains: &[(String, Rat)],
    t: f64,
    registry: &OdeRegistry,
) -> Result<f64, ControlError> {
    let closed = closed_loop_name(tmpl);
    let sys = registry
        .get(&closed)
        .ok_or_else(|| ControlError::BadTemplate(format!("system `{closed}` is not registered")))?;
    let mut x0: Vec<f64> = Vec::with_capacity(sys.dim());
    for s in sys.states() {
        if let Some(i) = tmpl.plant_states.iter().position(|p| p == s) {
            x0.push(crate::rational::rat_to_f64_floor(&tmpl.init[i]));
        } else if s == "ie" || s == "clk" {
            x0.push(0.0);
        } else if let Some((_, v)) = gains.iter().find(|(n, _)| n == s) {
            x0.push(crate::rational::rat_to_f64_floor(v));
        } else {
            return Err(ControlError::BadTemplate(format!(
                "no value for closed-loop state `{s}`"
            )));
        }
    }
    let out_idx = tmpl
        .plant_states
        .iter()
        .position(|s| s == &tmpl.output)
        .expect("validated template");
    let end = crate::ode::rk4_reference(sys, &x0, t, registry);
    let mut env: HashMap<String, f64> = HashMap::new();
    env.insert("t".into(), t);
    let r = eval_term_point(&tmpl.reference, &env, registry);
    Ok((r - end[out_idx]).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificate::{emit_certificate, parse_certificate, verify_certificate, CheckResult};
    use crate::solver::Verdict;

    fn cfg(delta: Rat) -> SolverConfig {
        SolverConfig {
            delta,
            ..SolverConfig::default()
        }
    }

    fn register_1d(registry: &mut OdeRegistry, name: &str, rhs: Term, lo: f64, hi: f64) {
        registry
            .register(
                name,
                vec!["x".into()],
                vec![rhs],
                vec![Interval::point(lo).hull(&Interval::point(hi))],
            )
            .unwrap();
    }

    fn unit_template(v: Term) -> LyapunovTemplate {
        LyapunovTemplate {
            params: vec![],
            v,
            states: vec![Binding::new("x", rat(-1, 1), rat(1, 1))],
        }
    }

    #[test]
    fn cubic_decay_is_certified() {
        let mut registry = OdeRegistry::new();
        register_1d(&mut registry, "cubic", Term::var("x").pow(3).neg(), -2.0, 2.0);
        let sys = registry.get("cubic").unwrap();
        let tmpl = unit_template(Term::var("x").pow(2));
        let f = encode_lyapunov_check(&tmpl, sys, &LyapunovOptions::default()).unwrap();
        let res = solve_prenex(&f, &cfg(rat(1, 1000)), &registry).unwrap();
        assert_eq!(res.verdict, Verdict::Valid);
    }

    #[test]
    fn growth_is_rejected_with_a_violating_point() {
        let mut registry = OdeRegistry::new();
        register_1d(&mut registry, "grow", Term::var("x"), -2.0, 2.0);
        let sys = registry.get("grow").unwrap();
        let tmpl = unit_template(Term::var("x").pow(2));
        let delta = rat(1, 1000);
        let f = encode_lyapunov_check(&tmpl, sys, &LyapunovOptions::default()).unwrap();
        let res = solve_prenex(&f, &cfg(delta.clone()), &registry).unwrap();
        assert_eq!(res.verdict, Verdict::DeltaFalse);
        let witness = res.witness.expect("counterexample");
        let x = crate::rational::rat_to_f64_floor(&witness[0].1);
        // The reported point must genuinely break the decrease condition:
        // its Lie derivative 2x^2 exceeds the slack.
        let lie = 2.0 * x * x;
        assert!(
            lie > crate::rational::rat_to_f64_floor(&delta),
            "Lie derivative {lie} at x = {x} does not exceed the slack"
        );
    }

    #[test]
    fn zero_candidate_passes_only_non_strict() {
        let mut registry = OdeRegistry::new();
        register_1d(&mut registry, "any", Term::var("x"), -2.0, 2.0);
        let sys = registry.get("any").unwrap();
        let tmpl = unit_template(Term::int(0));
        let lax = LyapunovOptions {
            strict: false,
            ..LyapunovOptions::default()
        };
        let f = encode_lyapunov_check(&tmpl, sys, &lax).unwrap();
        let res = solve_prenex(&f, &cfg(rat(1, 100)), &registry).unwrap();
        assert_eq!(res.verdict, Verdict::Valid);

        let strict = encode_lyapunov_check(&tmpl, sys, &LyapunovOptions::default()).unwrap();
        let res = solve_prenex(&strict, &cfg(rat(1, 100)), &registry).unwrap();
        assert_eq!(res.verdict, Verdict::DeltaFalse);
    }

    #[test]
    fn candidates_must_vanish_at_the_origin() {
        let mut registry = OdeRegistry::new();
        register_1d(&mut registry, "sys", Term::var("x").neg(), -2.0, 2.0);
        let sys = registry.get("sys").unwrap();
        let tmpl = unit_template(Term::var("x").pow(2).add(Term::int(1)));
        let err = encode_lyapunov_check(&tmpl, sys, &LyapunovOptions::default()).unwrap_err();
        assert!(matches!(err, ControlError::BadTemplate(_)));
    }

    #[test]
    fn validation_requires_instantiated_parameters() {
        let mut registry = OdeRegistry::new();
        register_1d(&mut registry, "sys2", Term::var("x").neg(), -2.0, 2.0);
        let sys = registry.get("sys2").unwrap();
        let tmpl = LyapunovTemplate {
            params: vec![Binding::new("p", rat(1, 2), rat(2, 1))],
            v: Term::var("p").mul(Term::var("x").pow(2)),
            states: vec![Binding::new("x", rat(-1, 1), rat(1, 1))],
        };
        let err = encode_lyapunov_check(&tmpl, sys, &LyapunovOptions::default()).unwrap_err();
        assert!(matches!(err, ControlError::BadTemplate(_)));
    }

    #[test]
    fn single_parameter_synthesis_and_reverification() {
        let mut registry = OdeRegistry::new();
        register_1d(&mut registry, "decay", Term::var("x").neg(), -2.0, 2.0);
        let sys = registry.get("decay").unwrap().clone();
        let tmpl = LyapunovTemplate {
            params: vec![Binding::new("p", rat(1, 2), rat(2, 1))],
            v: Term::var("p").mul(Term::var("x").pow(2)),
            states: vec![Binding::new("x", rat(-1, 1), rat(1, 1))],
        };
        let opts = LyapunovOptions::default();
        let delta = rat(1, 100);
        let res = synthesize_lyapunov(&tmpl, &sys, &opts, &cfg(delta.clone()), &registry).unwrap();
        assert_eq!(res.verdict, Verdict::DeltaSat);
        let gains = res.witness.clone().expect("gains");
        assert_eq!(gains[0].0, "p");

        // The certificate's universal part re-verifies against the
        // synthesis sentence.
        let f = encode_lyapunov_synthesis(&tmpl, &sys, &opts).unwrap();
        let text = emit_certificate(&res, &f, &delta, &[]).unwrap();
        let cert = parse_certificate(&text).unwrap();
        let ctx = EvalCtx::new(&registry);
        assert_eq!(verify_certificate(&cert, &f, &delta, &[], &ctx), CheckResult::Accepted);

        // And the instantiated candidate passes validation outright.
        let fixed = LyapunovTemplate {
            params: vec![],
            v: tmpl.v.subst("p", &Term::konst(gains[0].1.clone())),
            states: tmpl.states.clone(),
        };
        let check = encode_lyapunov_check(&fixed, &sys, &opts).unwrap();
        let res = solve_prenex(&check, &cfg(rat(1, 1000)), &registry).unwrap();
        assert_eq!(res.verdict, Verdict::Valid);
    }

    #[test]
    fn diagonal_two_parameter_synthesis() {
        let mut registry = OdeRegistry::new();
        registry
            .register(
                "diag",
                vec!["x1".into(), "x2".into()],
                vec![
                    Term::var("x1").neg(),
                    Term::int(-2).mul(Term::var("x2")),
                ],
                vec![
                    Interval::point(-2.0).hull(&Interval::point(2.0)),
                    Interval::point(-2.0).hull(&Interval::point(2.0)),
                ],
            )
            .unwrap();
        let sys = registry.get("diag").unwrap().clone();
        let tmpl = LyapunovTemplate {
            params: vec![
                Binding::new("p1", rat(1, 10), rat(10, 1)),
                Binding::new("p2", rat(1, 10), rat(10, 1)),
            ],
            v: Term::var("p1")
                .mul(Term::var("x1").pow(2))
                .add(Term::var("p2").mul(Term::var("x2").pow(2))),
            states: vec![
                Binding::new("x1", rat(-1, 1), rat(1, 1)),
                Binding::new("x2", rat(-1, 1), rat(1, 1)),
            ],
        };
        let opts = LyapunovOptions::default();
        let res = synthesize_lyapunov(&tmpl, &sys, &opts, &cfg(rat(1, 100)), &registry).unwrap();
        assert_eq!(res.verdict, Verdict::DeltaSat);
        let gains = res.witness.clone().expect("gains");

        let mut v = tmpl.v.clone();
        for (name, val) in &gains {
            v = v.subst(name, &Term::konst(val.clone()));
        }
        let fixed = LyapunovTemplate {
            params: vec![],
            v,
            states: tmpl.states.clone(),
        };
        let check = encode_lyapunov_check(&fixed, &sys, &opts).unwrap();
        let res = solve_prenex(&check, &cfg(rat(1, 1000)), &registry).unwrap();
        assert_eq!(res.verdict, Verdict::Valid);
    }

    #[test]
    fn strict_mode_rejects_the_unstable_plant() {
        let mut registry = OdeRegistry::new();
        register_1d(&mut registry, "unstable", Term::var("x"), -2.0, 2.0);
        let sys = registry.get("unstable").unwrap().clone();
        let tmpl = LyapunovTemplate {
            params: vec![Binding::new("p", rat(1, 10), rat(10, 1))],
            v: Term::var("p").mul(Term::var("x").pow(2)),
            states: vec![Binding::new("x", rat(-1, 1), rat(1, 1))],
        };
        let res = synthesize_lyapunov(
            &tmpl,
            &sys,
            &LyapunovOptions::default(),
            &cfg(rat(1, 1000)),
            &registry,
        )
        .unwrap();
        assert_eq!(res.verdict, Verdict::Unsat);
    }

    #[test]
    fn stability_sentence_is_pi3_and_encoding_is_pure() {
        let mut registry = OdeRegistry::new();
        register_1d(&mut registry, "s", Term::var("x").neg(), -2.0, 2.0);
        let spec = StabilitySpec::with_defaults(registry.get("s").unwrap().clone());
        let f1 = encode_delta_stability(&spec).unwrap();
        let f2 = encode_delta_stability(&spec).unwrap();
        assert_eq!(f1, f2);
        assert_eq!(classify_prefix(&f1).unwrap(), PrefixClass::Pi(3));
    }

    #[test]
    fn contraction_is_stable_and_growth_is_not() {
        let mut registry = OdeRegistry::new();
        register_1d(&mut registry, "contract", Term::var("x").neg(), -2.0, 2.0);
        register_1d(&mut registry, "expand", Term::var("x"), -2.0, 2.0);
        let config = SolverConfig {
            delta: rat(1, 100),
            ode_step: Some(1.0 / 2048.0),
            ..SolverConfig::default()
        };

        let spec = StabilitySpec::with_defaults(registry.get("contract").unwrap().clone());
        let res = solve_delta_stability(&spec, &config, &registry).unwrap();
        assert_eq!(res.verdict, Verdict::Valid);

        let spec = StabilitySpec::with_defaults(registry.get("expand").unwrap().clone());
        let res = solve_delta_stability(&spec, &config, &registry).unwrap();
        assert_eq!(res.verdict, Verdict::DeltaFalse);
    }

    #[test]
    fn constant_drift_reaches_the_target() {
        let mut registry = OdeRegistry::new();
        register_1d(&mut registry, "drift", Term::int(1), -2.0, 2.0);
        let sys = registry.get("drift").unwrap().clone();
        let d = rat(1, 100);
        let f = encode_reachability(
            &sys,
            &reach_init_ball(&sys, &[rat(0, 1)]),
            &reach_goal_ball(&sys, &[rat(1, 1)]),
            &d,
            &d,
            &d,
            &rat(2, 1),
        )
        .unwrap();
        let res = solve_prenex(&f, &cfg(rat(1, 100)), &registry).unwrap();
        assert_eq!(res.verdict, Verdict::DeltaSat);
        let witness = res.witness.expect("witness");
        let t = witness
            .iter()
            .find(|(n, _)| n == "t")
            .map(|(_, v)| crate::rational::rat_to_f64_floor(v))
            .expect("time");
        assert!((t - 1.0).abs() <= 0.02, "reached at t = {t}");
    }

    #[test]
    fn decay_cannot_reach_the_target() {
        let mut registry = OdeRegistry::new();
        register_1d(&mut registry, "fade", Term::var("x").neg(), -2.0, 2.0);
        let sys = registry.get("fade").unwrap().clone();
        let d = rat(1, 100);
        let f = encode_reachability(
            &sys,
            &reach_init_ball(&sys, &[rat(0, 1)]),
            &reach_goal_ball(&sys, &[rat(1, 1)]),
            &d,
            &d,
            &d,
            &rat(2, 1),
        )
        .unwrap();
        let res = solve_prenex(&f, &cfg(rat(1, 100)), &registry).unwrap();
        assert_eq!(res.verdict, Verdict::Unsat);
    }

    #[test]
    fn identity_reach_at_time_zero() {
        let mut registry = OdeRegistry::new();
        register_1d(&mut registry, "idsys", Term::var("x").neg(), -2.0, 2.0);
        let sys = registry.get("idsys").unwrap().clone();
        let d = rat(1, 100);
        // Goal: end where you started.
        let goal = vec![Atom::ge(
            Term::var(goal_var("x"))
                .sub(Term::var(init_var("x")))
                .abs()
                .neg(),
        )];
        let f = encode_reachability(
            &sys,
            &reach_init_ball(&sys, &[rat(0, 1)]),
            &goal,
            &d,
            &d,
            &d,
            &rat(1, 1),
        )
        .unwrap();
        let res = solve_prenex(&f, &cfg(rat(1, 100)), &registry).unwrap();
        assert_eq!(res.verdict, Verdict::DeltaSat);
    }

    fn first_order_template(name: &str, kp: (Rat, Rat)) -> PidTemplate {
        PidTemplate {
            name: name.into(),
            plant_states: vec!["y".into()],
            plant_rhs: vec![Term::var("y").neg().add(Term::var("u"))],
            plant_domain: vec![(rat(-2, 1), rat(2, 1))],
            input: "u".into(),
            output: "y".into(),
            reference: Term::int(1),
            init: vec![rat(0, 1)],
            kp,
            ki: (rat(0, 1), rat(0, 1)),
            kd: (rat(0, 1), rat(0, 1)),
        }
    }

    #[test]
    fn proportional_gain_meets_steady_state_spec() {
        let mut registry = OdeRegistry::new();
        let tmpl = first_order_template("servo", (rat(0, 1), rat(20, 1)));
        let spec = vec![PidSpecAtom {
            tol: rat(3, 20),
            t_lo: rat(5, 1),
            t_hi: rat(6, 1),
        }];
        let res = tune_pid(&tmpl, &spec, &cfg(rat(1, 100)), &mut registry).unwrap();
        assert_eq!(res.verdict, Verdict::DeltaSat);
        let gains = res.witness.expect("gains");
        assert_eq!(gains[0].0, "kp");
        // Steady-state error 1/(1+kp) must be within the band, so kp >= 6
        // up to the slack.
        let kp = crate::rational::rat_to_f64_floor(&gains[0].1);
        assert!(kp >= 5.0, "kp = {kp}");

        // Independent fixed-step integration agrees.
        let err = pid_reference_error(&tmpl, &gains, 5.5, &registry).unwrap();
        assert!(err <= 0.15 + 0.01, "tracking error {err}");
    }

    #[test]
    fn impossible_transient_spec_is_unsat() {
        let mut registry = OdeRegistry::new();
        let tmpl = first_order_template("hasty", (rat(0, 1), rat(20, 1)));
        // Zero-time convergence to one part in a thousand cannot happen
        // from y(0) = 0.
        let spec = vec![PidSpecAtom {
            tol: rat(1, 1000),
            t_lo: rat(0, 1),
            t_hi: rat(1, 1),
        }];
        let res = tune_pid(&tmpl, &spec, &cfg(rat(1, 100)), &mut registry).unwrap();
        assert_eq!(res.verdict, Verdict::Unsat);
    }

    #[test]
    fn integrator_plant_decays_under_any_gain() {
        let mut registry = OdeRegistry::new();
        let tmpl = PidTemplate {
            name: "leak".into(),
            plant_states: vec!["y".into()],
            plant_rhs: vec![Term::var("u")],
            plant_domain: vec![(rat(-2, 1), rat(2, 1))],
            input: "u".into(),
            output: "y".into(),
            reference: Term::int(0),
            init: vec![rat(1, 1)],
            kp: (rat(1, 2), rat(5, 1)),
            ki: (rat(0, 1), rat(0, 1)),
            kd: (rat(0, 1), rat(0, 1)),
        };
        let spec = vec![PidSpecAtom {
            tol: rat(1, 10),
            t_lo: rat(6, 1),
            t_hi: rat(6, 1),
        }];
        let res = tune_pid(&tmpl, &spec, &cfg(rat(1, 100)), &mut registry).unwrap();
        assert_eq!(res.verdict, Verdict::DeltaSat);
    }

    #[test]
    fn derivative_gain_requires_input_free_output_dynamics() {
        let mut registry = OdeRegistry::new();
        let mut tmpl = first_order_template("dterm", (rat(0, 1), rat(20, 1)));
        tmpl.kd = (rat(0, 1), rat(1, 1));
        let spec = vec![PidSpecAtom {
            tol: rat(3, 20),
            t_lo: rat(5, 1),
            t_hi: rat(6, 1),
        }];
        let err = tune_pid(&tmpl, &spec, &cfg(rat(1, 100)), &mut registry).unwrap_err();
        assert!(matches!(err, ControlError::Unsupported(_)));
    }

    #[test]
    fn all_pinned_gains_are_rejected() {
        let mut registry = OdeRegistry::new();
        let mut tmpl = first_order_template("frozen", (rat(2, 1), rat(2, 1)));
        tmpl.ki = (rat(1, 1), rat(1, 1));
        tmpl.kd = (rat(0, 1), rat(0, 1));
        let spec = vec![PidSpecAtom {
            tol: rat(3, 20),
            t_lo: rat(5, 1),
            t_hi: rat(6, 1),
        }];
        let err = tune_pid(&tmpl, &spec, &cfg(rat(1, 100)), &mut registry).unwrap_err();
        assert!(matches!(err, ControlError::BadTemplate(_)));
    }
}

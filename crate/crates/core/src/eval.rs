//! Certified evaluation of terms and quantifier-free formulas over boxes.
//!
//! Terms evaluate to intervals that are guaranteed to enclose every value
//! the term takes on the box; atoms then compare those enclosures against
//! exact rational thresholds, yielding a three-valued answer that is only
//! ever decisive when the inequality holds (or fails) at *every* point of
//! the box. `Mode` perturbs atom thresholds uniformly, which is how the
//! solver builds the relaxed and tightened variants of a formula.

use crate::boxes::IntervalBox;
use crate::formula::{Atom, Formula};
use crate::interval::{DomainIssue, Interval};
use crate::ode::{FlowTrace, OdeRegistry};
use crate::rational::{rat_to_f64_floor, Rat};
use crate::term::{Fun, Term};
use num_traits::Zero;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use thiserror::Error;

/// Three-valued verdict for a formula on a box.
///
/// `CertTrue`/`CertFalse` mean the formula is certifiably true/false at
/// **every** point of the box; `Unknown` means the enclosure was too coarse
/// to decide either way.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TruthValue {
    CertTrue,
    CertFalse,
    Unknown,
}

/// Uniform perturbation applied to every atom threshold during evaluation.
///
/// Atoms have the shape `term >= shift` (or strict). `Weakened(d)` lowers
/// every threshold by `d` (easier to satisfy); `Strengthened(d)` raises it
/// by `d` (easier to refute the original once this variant fails).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Mode {
    Original,
    Weakened(Rat),
    Strengthened(Rat),
}

impl Mode {
    pub fn threshold_offset(&self) -> Rat {
        match self {
            Mode::Original => Rat::zero(),
            Mode::Weakened(d) => -d.clone(),
            Mode::Strengthened(d) => d.clone(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    /// A partial operation was applied to an interval that leaves its
    /// domain. Splitting the box may shrink the argument enclosure back
    /// inside the domain, so this error is soft.
    #[error("{issue} while evaluating `{context}`")]
    Domain { issue: DomainIssue, context: String },
    /// The time argument of a flow may be negative on this box.
    #[error("flow time can be negative in `{0}`")]
    NegativeTime(String),
    #[error("variable `{0}` is not bound")]
    UnboundVar(String),
    #[error("unknown ode system `{0}`")]
    UnknownSystem(String),
    #[error("flow over `{system}` expects {expected} initial values, got {got}")]
    FlowArity {
        system: String,
        expected: usize,
        got: usize,
    },
    #[error("flow component {component} out of range for `{system}` (dimension {dim})")]
    BadComponent {
        system: String,
        component: usize,
        dim: usize,
    },
}

impl EvalError {
    /// Soft errors can disappear when the box is split into smaller cells;
    /// hard errors are structural and abort the solve.
    pub fn is_resolvable_by_splitting(&self) -> bool {
        matches!(
            self,
            EvalError::Domain { .. } | EvalError::NegativeTime(_)
        )
    }
}

/// Cache key for flow traces: system name, initial-state bounds (bit
/// patterns, so the key is exact), and step size (bit pattern).
pub(crate) type TraceKey = (String, Vec<(u64, u64)>, u64);

/// Shared evaluation context: the ODE registry plus a cache of validated
/// integrations keyed by (system, initial box, step). The cache makes
/// repeated flow queries over the same initial box (at different times)
/// cost one integration instead of one per atom per box.
pub struct EvalCtx<'a> {
    pub registry: &'a OdeRegistry,
    /// Overrides the automatically chosen integration step when set.
    pub step_override: Option<f64>,
    cache: Mutex<HashMap<TraceKey, Arc<FlowTrace>>>,
}

impl<'a> EvalCtx<'a> {
    pub fn new(registry: &'a OdeRegistry) -> Self {
        EvalCtx {
            registry,
            step_override: None,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_step(registry: &'a OdeRegistry, step: f64) -> Self {
        EvalCtx {
            registry,
            step_override: Some(step),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub(crate) fn lookup_trace(&self, key: &TraceKey) -> Option<Arc<FlowTrace>> {
        self.cache.lock().unwrap().get(key).cloned()
    }

    pub(crate) fn store_trace(&self, key: TraceKey, trace: Arc<FlowTrace>) {
        self.cache.lock().unwrap().insert(key, trace);
    }
}

/// Evaluate a term to an interval enclosing its range over `env`.
pub fn eval_term(t: &Term, env: &IntervalBox, ctx: &EvalCtx) -> Result<Interval, EvalError> {
    match t {
        Term::Const(r) => Ok(Interval::from_rat(r)),
        Term::Var(v) => env
            .get(v)
            .copied()
            .ok_or_else(|| EvalError::UnboundVar(v.clone())),
        Term::App(fun, args) => {
            // A product of two structurally identical factors is a square,
            // and the square enclosure is tighter (never negative).
            if *fun == Fun::Mul && args[0] == args[1] {
                return Ok(eval_term(&args[0], env, ctx)?.sqr());
            }
            let mut vals = Vec::with_capacity(args.len());
            for a in args {
                vals.push(eval_term(a, env, ctx)?);
            }
            let dom = |issue: DomainIssue| EvalError::Domain {
                issue,
                context: t.to_string(),
            };
            Ok(match fun {
                Fun::Neg => vals[0].neg(),
                Fun::Add => vals[0].add(&vals[1]),
                Fun::Sub => vals[0].sub(&vals[1]),
                Fun::Mul => vals[0].mul(&vals[1]),
                Fun::Div => vals[0].div(&vals[1]).map_err(dom)?,
                Fun::Pow(n) => vals[0].powi(*n).map_err(dom)?,
                Fun::Sqrt => vals[0].sqrt().map_err(dom)?,
                Fun::Exp => vals[0].exp(),
                Fun::Log => vals[0].ln().map_err(dom)?,
                Fun::Sin => vals[0].sin(),
                Fun::Cos => vals[0].cos(),
                Fun::Abs => vals[0].abs(),
                Fun::Min => vals[0].min_i(&vals[1]),
                Fun::Max => vals[0].max_i(&vals[1]),
            })
        }
        Term::Flow { .. } => eval_flow(t, env, ctx),
    }
}

fn eval_flow(t: &Term, env: &IntervalBox, ctx: &EvalCtx) -> Result<Interval, EvalError> {
    let Term::Flow {
        system,
        component,
        init,
        time,
    } = t
    else {
        unreachable!("eval_flow called on a non-flow term")
    };
    let sys = ctx
        .registry
        .get(system)
        .ok_or_else(|| EvalError::UnknownSystem(system.clone()))?;
    if init.len() != sys.dim() {
        return Err(EvalError::FlowArity {
            system: system.clone(),
            expected: sys.dim(),
            got: init.len(),
        });
    }
    if *component >= sys.dim() {
        return Err(EvalError::BadComponent {
            system: system.clone(),
            component: *component,
            dim: sys.dim(),
        });
    }
    let mut x0 = Vec::with_capacity(init.len());
    for te in init {
        x0.push(eval_term(te, env, ctx)?);
    }
    let t_enc = eval_term(time, env, ctx)?;
    if t_enc.lo() < 0.0 {
        return Err(EvalError::NegativeTime(t.to_string()));
    }
    // Integration failures (step too coarse, trajectory may leave the
    // declared domain) are not structural errors: the enclosure simply
    // degrades to "anything", which keeps every atom over it Unknown and
    // lets the solver split or give up honestly.
    match crate::ode::flow_enclosure(ctx, sys, &x0, t_enc) {
        Ok(vals) => Ok(vals[*component]),
        Err(_) => Ok(Interval::ENTIRE),
    }
}

/// Decide an atom on a box under the given threshold mode.
pub fn eval_atom(
    atom: &Atom,
    env: &IntervalBox,
    ctx: &EvalCtx,
    mode: &Mode,
) -> Result<TruthValue, EvalError> {
    let enc = eval_term(&atom.term, env, ctx)?;
    if enc.is_empty() {
        return Ok(TruthValue::Unknown);
    }
    let theta = &atom.shift + mode.threshold_offset();
    if enc.lo().is_finite() {
        let lo = enc.lo_rat();
        let holds = if atom.strict { lo > theta } else { lo >= theta };
        if holds {
            return Ok(TruthValue::CertTrue);
        }
    }
    if enc.hi().is_finite() {
        let hi = enc.hi_rat();
        let fails = if atom.strict { hi <= theta } else { hi < theta };
        if fails {
            return Ok(TruthValue::CertFalse);
        }
    }
    Ok(TruthValue::Unknown)
}

/// Decide a quantifier-free formula on a box.
///
/// Every child is inspected before errors propagate: a decisive refutation
/// of one conjunct falsifies the conjunction no matter what the other
/// conjuncts do on the box (dually for disjunctions), so a soft domain
/// error in a sibling must not mask it.
pub fn eval_qf(
    f: &Formula,
    env: &IntervalBox,
    ctx: &EvalCtx,
    mode: &Mode,
) -> Result<TruthValue, EvalError> {
    match f {
        Formula::Atom(a) => eval_atom(a, env, ctx, mode),
        Formula::And(children) => {
            let mut saw_unknown = false;
            let mut first_err = None;
            for c in children {
                match eval_qf(c, env, ctx, mode) {
                    Ok(TruthValue::CertFalse) => return Ok(TruthValue::CertFalse),
                    Ok(TruthValue::Unknown) => saw_unknown = true,
                    Ok(TruthValue::CertTrue) => {}
                    Err(e) => {
                        if first_err.is_none() {
                            first_err = Some(e);
                        }
                    }
                }
            }
            match first_err {
                Some(e) => Err(e),
                None if saw_unknown => Ok(TruthValue::Unknown),
                None => Ok(TruthValue::CertTrue),
            }
        }
        Formula::Or(children) => {
            let mut saw_unknown = false;
            let mut first_err = None;
            for c in children {
                match eval_qf(c, env, ctx, mode) {
                    Ok(TruthValue::CertTrue) => return Ok(TruthValue::CertTrue),
                    Ok(TruthValue::Unknown) => saw_unknown = true,
                    Ok(TruthValue::CertFalse) => {}
                    Err(e) => {
                        if first_err.is_none() {
                            first_err = Some(e);
                        }
                    }
                }
            }
            match first_err {
                Some(e) => Err(e),
                None if saw_unknown => Ok(TruthValue::Unknown),
                None => Ok(TruthValue::CertFalse),
            }
        }
        Formula::Quant(..) => {
            panic!("eval_qf requires a quantifier-free formula; strip the prefix first")
        }
    }
}

/// Plain floating-point evaluation at a point (non-validated).
///
/// Used by sampling oracles and reference checks. Undefined operations
/// yield NaN rather than an error; callers treat NaN as "no conclusion".
pub fn eval_term_point(
    t: &Term,
    env: &HashMap<String, f64>,
    registry: &OdeRegistry,
) -> f64 {
    match t {
        Term::Const(r) => rat_to_f64_floor(r),
        Term::Var(v) => env.get(v).copied().unwrap_or(f64::NAN),
        Term::App(fun, args) => {
            let mut v = [0.0f64; 2];
            for (i, a) in args.iter().enumerate() {
                v[i] = eval_term_point(a, env, registry);
                if v[i].is_nan() {
                    return f64::NAN;
                }
            }
            match fun {
                Fun::Neg => -v[0],
                Fun::Add => v[0] + v[1],
                Fun::Sub => v[0] - v[1],
                Fun::Mul => v[0] * v[1],
                Fun::Div => {
                    if v[1] == 0.0 {
                        f64::NAN
                    } else {
                        v[0] / v[1]
                    }
                }
                Fun::Pow(n) => {
                    if v[0] == 0.0 && *n < 0 {
                        f64::NAN
                    } else {
                        v[0].powi(*n)
                    }
                }
                Fun::Sqrt => {
                    if v[0] < 0.0 {
                        f64::NAN
                    } else {
                        v[0].sqrt()
                    }
                }
                Fun::Exp => v[0].exp(),
                Fun::Log => {
                    if v[0] <= 0.0 {
                        f64::NAN
                    } else {
                        v[0].ln()
                    }
                }
                Fun::Sin => v[0].sin(),
                Fun::Cos => v[0].cos(),
                Fun::Abs => v[0].abs(),
                Fun::Min => v[0].min(v[1]),
                Fun::Max => v[0].max(v[1]),
            }
        }
        Term::Flow {
            system,
            component,
            init,
            time,
        } => {
            let Some(sys) = registry.get(system) else {
                return f64::NAN;
            };
            if init.len() != sys.dim() || *component >= sys.dim() {
                return f64::NAN;
            }
            let mut x0 = Vec::with_capacity(init.len());
            for te in init {
                let v = eval_term_point(te, env, registry);
                if v.is_nan() {
                    return f64::NAN;
                }
                x0.push(v);
            }
            let tt = eval_term_point(time, env, registry);
            if tt.is_nan() || tt < 0.0 {
                return f64::NAN;
            }
            crate::ode::rk4_reference(sys, &x0, tt, registry)[*component]
        }
    }
}

/// Product guard for bound arithmetic: a factor that is identically zero
/// kills the term even when the other factor is unbounded.
fn mul_bound(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

/// Cheap upper bound on the rate of change of `t` along any single
/// coordinate over `env`. Used to size the minimum useful cell width; it
/// only affects how long the solver keeps splitting, never soundness.
/// Returns infinity when no finite bound is available.
pub fn lipschitz_bound(t: &Term, env: &IntervalBox, ctx: &EvalCtx) -> f64 {
    match t {
        Term::Const(_) => 0.0,
        Term::Var(_) => 1.0,
        Term::App(fun, args) => {
            let l0 = lipschitz_bound(&args[0], env, ctx);
            match fun {
                Fun::Neg | Fun::Abs => l0,
                Fun::Add | Fun::Sub => l0 + lipschitz_bound(&args[1], env, ctx),
                Fun::Min | Fun::Max => l0.max(lipschitz_bound(&args[1], env, ctx)),
                Fun::Mul => {
                    let (Ok(ea), Ok(eb)) = (
                        eval_term(&args[0], env, ctx),
                        eval_term(&args[1], env, ctx),
                    ) else {
                        return f64::INFINITY;
                    };
                    let l1 = lipschitz_bound(&args[1], env, ctx);
                    mul_bound(ea.mag(), l1) + mul_bound(eb.mag(), l0)
                }
                Fun::Div => {
                    let (Ok(ea), Ok(eb)) = (
                        eval_term(&args[0], env, ctx),
                        eval_term(&args[1], env, ctx),
                    ) else {
                        return f64::INFINITY;
                    };
                    let m = eb.mig();
                    if m <= 0.0 {
                        return f64::INFINITY;
                    }
                    let l1 = lipschitz_bound(&args[1], env, ctx);
                    (mul_bound(l0, eb.mag()) + mul_bound(ea.mag(), l1)) / (m * m)
                }
                Fun::Pow(n) => {
                    if *n == 0 {
                        return 0.0;
                    }
                    let Ok(ea) = eval_term(&args[0], env, ctx) else {
                        return f64::INFINITY;
                    };
                    let k = (*n as i64).unsigned_abs() as u32;
                    if *n > 0 {
                        mul_bound(ea.mag().powi(k as i32 - 1), l0) * k as f64
                    } else {
                        let m = ea.mig();
                        if m <= 0.0 {
                            return f64::INFINITY;
                        }
                        mul_bound(1.0 / m.powi(k as i32 + 1), l0) * k as f64
                    }
                }
                Fun::Sqrt => {
                    let Ok(ea) = eval_term(&args[0], env, ctx) else {
                        return f64::INFINITY;
                    };
                    if ea.lo() <= 0.0 {
                        return f64::INFINITY;
                    }
                    l0 / (2.0 * ea.lo().sqrt())
                }
                Fun::Exp => {
                    let Ok(ea) = eval_term(&args[0], env, ctx) else {
                        return f64::INFINITY;
                    };
                    mul_bound(ea.exp().mag(), l0)
                }
                Fun::Log => {
                    let Ok(ea) = eval_term(&args[0], env, ctx) else {
                        return f64::INFINITY;
                    };
                    if ea.lo() <= 0.0 {
                        return f64::INFINITY;
                    }
                    l0 / ea.lo()
                }
                Fun::Sin => {
                    let Ok(ea) = eval_term(&args[0], env, ctx) else {
                        return f64::INFINITY;
                    };
                    mul_bound(ea.cos().mag(), l0)
                }
                Fun::Cos => {
                    let Ok(ea) = eval_term(&args[0], env, ctx) else {
                        return f64::INFINITY;
                    };
                    mul_bound(ea.sin().mag(), l0)
                }
            }
        }
        Term::Flow {
            system,
            component,
            init,
            time,
        } => {
            let Some(sys) = ctx.registry.get(system) else {
                return f64::INFINITY;
            };
            let t_max = match eval_term(time, env, ctx) {
                Ok(i) if i.hi().is_finite() => i.hi(),
                _ => return f64::INFINITY,
            };
            let g = crate::ode::gronwall_lipschitz(sys, t_max, ctx);
            let mut init_sum = 0.0;
            for te in init {
                init_sum += lipschitz_bound(te, env, ctx);
            }
            let fmag = crate::ode::rhs_mag_over_domain(sys, *component, ctx);
            mul_bound(g, init_sum)
                + mul_bound(fmag, lipschitz_bound(time, env, ctx))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{rat, rat_int};

    fn registry() -> OdeRegistry {
        OdeRegistry::new()
    }

    #[test]
    fn square_rule_tightens_products() {
        let reg = registry();
        let ctx = EvalCtx::new(&reg);
        let env = IntervalBox::new().with("x", Interval::new(-1.0, 1.0));
        let t = Term::var("x").mul(Term::var("x"));
        let enc = eval_term(&t, &env, &ctx).unwrap();
        assert_eq!(enc.lo(), 0.0, "square of a sign-crossing interval starts at zero");
        assert!(enc.hi() >= 1.0 && enc.hi() < 1.0 + 1e-12);
    }

    #[test]
    fn atom_modes_shift_the_threshold() {
        let reg = registry();
        let ctx = EvalCtx::new(&reg);
        let env = IntervalBox::new().with("x", Interval::new(0.25, 0.5));
        let atom = Atom::ge(Term::var("x")); // x >= 0
        assert_eq!(
            eval_atom(&atom, &env, &ctx, &Mode::Original).unwrap(),
            TruthValue::CertTrue
        );
        // Raising the threshold by 1 makes it x >= 1, false on the box.
        assert_eq!(
            eval_atom(&atom, &env, &ctx, &Mode::Strengthened(rat_int(1))).unwrap(),
            TruthValue::CertFalse
        );
        // Lowering it keeps it true.
        assert_eq!(
            eval_atom(&atom, &env, &ctx, &Mode::Weakened(rat_int(1))).unwrap(),
            TruthValue::CertTrue
        );
        // A threshold inside the box is undecidable on the whole box.
        assert_eq!(
            eval_atom(&atom, &env, &ctx, &Mode::Strengthened(rat(3, 8))).unwrap(),
            TruthValue::Unknown
        );
    }

    #[test]
    fn strict_and_nonstrict_at_the_exact_boundary() {
        let reg = registry();
        let ctx = EvalCtx::new(&reg);
        let env = IntervalBox::new().with("x", Interval::point(1.0));
        let ge = Atom::ge(Term::var("x")).with_shift(rat_int(1)); // x >= 1
        let gt = Atom::gt(Term::var("x")).with_shift(rat_int(1)); // x > 1
        assert_eq!(
            eval_atom(&ge, &env, &ctx, &Mode::Original).unwrap(),
            TruthValue::CertTrue
        );
        assert_eq!(
            eval_atom(&gt, &env, &ctx, &Mode::Original).unwrap(),
            TruthValue::CertFalse
        );
    }

    #[test]
    fn domain_errors_are_soft_and_structural_errors_hard() {
        let reg = registry();
        let ctx = EvalCtx::new(&reg);
        let env = IntervalBox::new().with("x", Interval::new(-2.0, -1.0));
        let err = eval_term(&Term::var("x").sqrt(), &env, &ctx).unwrap_err();
        assert!(matches!(err, EvalError::Domain { .. }));
        assert!(err.is_resolvable_by_splitting());

        let err = eval_term(&Term::var("y"), &env, &ctx).unwrap_err();
        assert_eq!(err, EvalError::UnboundVar("y".into()));
        assert!(!err.is_resolvable_by_splitting());

        let spanning = IntervalBox::new().with("x", Interval::new(-1.0, 1.0));
        let err = eval_term(&Term::int(1).div(Term::var("x")), &spanning, &ctx).unwrap_err();
        assert!(matches!(
            err,
            EvalError::Domain {
                issue: DomainIssue::DivisionByZero,
                ..
            }
        ));
    }

    #[test]
    fn decisive_children_beat_sibling_domain_errors() {
        let reg = registry();
        let ctx = EvalCtx::new(&reg);
        let env = IntervalBox::new().with("x", Interval::new(-2.0, -1.0));
        let bad = Formula::Atom(Atom::ge(Term::var("x").sqrt()));
        let false_atom = Formula::Atom(Atom::ge(Term::var("x")).with_shift(rat_int(5)));
        let true_atom = Formula::Atom(Atom::ge(Term::var("x").neg()));

        // x in [-2,-1]: sqrt errors, x >= 5 is certainly false.
        let conj = Formula::and(vec![bad.clone(), false_atom.clone()]);
        assert_eq!(
            eval_qf(&conj, &env, &ctx, &Mode::Original).unwrap(),
            TruthValue::CertFalse
        );
        // -x >= 0 is certainly true, which settles the disjunction.
        let disj = Formula::or(vec![bad.clone(), true_atom.clone()]);
        assert_eq!(
            eval_qf(&disj, &env, &ctx, &Mode::Original).unwrap(),
            TruthValue::CertTrue
        );
        // Without a decisive sibling the error propagates.
        let conj = Formula::and(vec![bad, true_atom]);
        assert!(eval_qf(&conj, &env, &ctx, &Mode::Original).is_err());
    }

    #[test]
    fn point_eval_matches_interval_eval_at_points() {
        let reg = registry();
        let ctx = EvalCtx::new(&reg);
        let t = Term::var("x")
            .pow(2)
            .add(Term::var("x").sin())
            .mul(Term::var("x").exp());
        let mut env_pt = HashMap::new();
        env_pt.insert("x".to_string(), 0.7);
        let p = eval_term_point(&t, &env_pt, &reg);
        let env_iv = IntervalBox::new().with("x", Interval::point(0.7));
        let enc = eval_term(&t, &env_iv, &ctx).unwrap();
        assert!(enc.contains(p) || (p - enc.midpoint()).abs() < 1e-12);
        assert!(enc.width() < 1e-12);
    }

    #[test]
    fn rate_bounds_match_hand_calculations() {
        let reg = registry();
        let ctx = EvalCtx::new(&reg);
        let env = IntervalBox::new().with("x", Interval::new(-2.0, 2.0));
        // d/dx x^2 = 2x, |2x| <= 4 on [-2,2].
        assert_eq!(
            lipschitz_bound(&Term::var("x").pow(2), &env, &ctx),
            4.0
        );
        // d/dx 1/x = -1/x^2, sup on [1,2] is 1.
        let pos = IntervalBox::new().with("x", Interval::new(1.0, 2.0));
        assert_eq!(
            lipschitz_bound(&Term::int(1).div(Term::var("x")), &pos, &ctx),
            1.0
        );
        // sqrt over a zero-touching interval has no finite bound.
        let touching = IntervalBox::new().with("x", Interval::new(0.0, 1.0));
        assert_eq!(
            lipschitz_bound(&Term::var("x").sqrt(), &touching, &ctx),
            f64::INFINITY
        );
        // exp on [0,1] is its own derivative; bound is about e.
        let unit = IntervalBox::new().with("x", Interval::new(0.0, 1.0));
        let l = lipschitz_bound(&Term::var("x").exp(), &unit, &ctx);
        assert!((l - std::f64::consts::E).abs() < 1e-6);
    }
}

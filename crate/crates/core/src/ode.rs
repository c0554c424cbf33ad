//! Validated enclosures for flows of autonomous ODE systems.
//!
//! Systems are registered once (with their state names, right-hand sides,
//! and a bounding domain) and then queried through flow terms. Enclosures
//! come from an interval Euler method with a rigorous local error term:
//!
//! * each step first constructs an *a priori* bound `B` with
//!   `X_k + [0,h]·f(B) ⊆ B`, which encloses every trajectory over the whole
//!   step (and doubles as the over-the-segment enclosure);
//! * the step endpoint is `X_k + h·f(X_k) ± r` with
//!   `r = h²/2 · L(B) · max|f(B)|`, the standard bound on the Euler
//!   truncation error via the mean value theorem;
//! * a parallel mean-value march (center trajectory plus a deviation
//!   vector contracted by `I + h·J(B)`) removes the wrapping growth that
//!   plain interval iteration suffers on contracting systems.
//!
//! Failures are graceful: if no step size in the retry ladder yields a
//! contracting bound, or the bound cannot be kept strictly inside the
//! declared domain, the query reports an error and the caller falls back
//! to the trivial enclosure.

use crate::boxes::IntervalBox;
use crate::diff;
use crate::eval::{eval_term, eval_term_point, EvalCtx, EvalError, TraceKey};
use crate::interval::Interval;
use crate::term::Term;
use std::collections::HashMap;
use std::sync::Arc;
use thiserror::Error;

/// Hard ceiling on integration steps for a single trace.
const MAX_STEPS: usize = 1 << 22;
/// Maximum number of step halvings before giving up.
const MAX_HALVINGS: u32 = 12;
/// Iterations allowed for the a priori bound construction.
const BOUND_TRIES: u32 = 30;
/// Smallest step the automatic chooser will pick.
const MIN_AUTO_STEP: f64 = 5.9604644775390625e-8; // 2^-24

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("no integration step small enough to contract the enclosure")]
    StepTooLarge,
    #[error("trajectory enclosure cannot be kept strictly inside the domain")]
    DomainEscape,
    #[error("invalid ode system `{name}`: {reason}")]
    BadSystem { name: String, reason: String },
    #[error("right-hand side evaluation failed: {0}")]
    Eval(EvalError),
}

/// An autonomous ODE system `x' = f(x)` on a box domain.
#[derive(Debug, Clone)]
pub struct OdeSystem {
    name: String,
    states: Vec<String>,
    rhs: Vec<Term>,
    domain: Vec<Interval>,
    /// jacobian[i][j] = ∂ rhs_i / ∂ states_j, simplified.
    jacobian: Vec<Vec<Term>>,
}

impl OdeSystem {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn rhs(&self) -> &[Term] {
        &self.rhs
    }

    pub fn domain(&self) -> &[Interval] {
        &self.domain
    }

    fn env(&self, vals: &[Interval]) -> IntervalBox {
        let mut env = IntervalBox::new();
        for (name, v) in self.states.iter().zip(vals) {
            env.set(name.clone(), *v);
        }
        env
    }
}

/// Registry of ODE systems, validated at registration time.
#[derive(Debug, Default)]
pub struct OdeRegistry {
    systems: HashMap<String, Arc<OdeSystem>>,
}

impl OdeRegistry {
    pub fn new() -> OdeRegistry {
        OdeRegistry::default()
    }

    pub fn get(&self, name: &str) -> Option<&OdeSystem> {
        self.systems.get(name).map(|s| s.as_ref())
    }

    pub fn names(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.systems.keys().map(|s| s.as_str()).collect();
        v.sort_unstable();
        v
    }

    /// Register a system after checking it is well formed: state names
    /// unique, one right-hand side and one domain interval per state, every
    /// right-hand side built only from the state variables (no flows), and
    /// differentiable so the integrator can bound its Jacobian.
    pub fn register(
        &mut self,
        name: impl Into<String>,
        states: Vec<String>,
        rhs: Vec<Term>,
        domain: Vec<Interval>,
    ) -> Result<(), OdeError> {
        let name = name.into();
        let bad = |reason: &str| OdeError::BadSystem {
            name: name.clone(),
            reason: reason.to_string(),
        };
        if states.is_empty() {
            return Err(bad("system has no state variables"));
        }
        for (i, s) in states.iter().enumerate() {
            if states[..i].contains(s) {
                return Err(bad(&format!("duplicate state variable `{s}`")));
            }
        }
        if rhs.len() != states.len() {
            return Err(bad(&format!(
                "{} state(s) but {} right-hand side(s)",
                states.len(),
                rhs.len()
            )));
        }
        if domain.len() != states.len() {
            return Err(bad(&format!(
                "{} state(s) but {} domain interval(s)",
                states.len(),
                domain.len()
            )));
        }
        for d in &domain {
            if d.is_empty() {
                return Err(bad("empty domain interval"));
            }
        }
        for (i, t) in rhs.iter().enumerate() {
            if t.contains_flow() {
                return Err(bad(&format!(
                    "right-hand side of `{}` contains a nested flow",
                    states[i]
                )));
            }
            for v in t.vars() {
                if !states.contains(&v) {
                    return Err(bad(&format!(
                        "right-hand side of `{}` uses `{v}`, which is not a state",
                        states[i]
                    )));
                }
            }
        }
        // The integrator needs Jacobian enclosures for its error term, so
        // the right-hand sides must be differentiable.
        let mut jacobian = Vec::with_capacity(rhs.len());
        for (i, t) in rhs.iter().enumerate() {
            let mut row = Vec::with_capacity(states.len());
            for s in &states {
                match diff::partial(t, s) {
                    Ok(d) => row.push(d),
                    Err(e) => {
                        return Err(bad(&format!(
                            "right-hand side of `{}` is not differentiable: {e}",
                            states[i]
                        )))
                    }
                }
            }
            jacobian.push(row);
        }
        if self.systems.contains_key(&name) {
            return Err(bad("a system with this name is already registered"));
        }
        self.systems.insert(
            name.clone(),
            Arc::new(OdeSystem {
                name,
                states,
                rhs,
                domain,
                jacobian,
            }),
        );
        Ok(())
    }
}

/// A completed validated integration on the uniform grid `t_k = k·step`.
#[derive(Debug, Clone)]
pub struct FlowTrace {
    /// Step actually used (a power of two, possibly halved from the request).
    pub step: f64,
    /// `ends[k]` encloses the state exactly at `t = k·step`.
    pub ends: Vec<Vec<Interval>>,
    /// `segments[k]` encloses the state for every `t ∈ [k·step, (k+1)·step]`.
    pub segments: Vec<Vec<Interval>>,
    /// Last grid time: `(ends.len() - 1) · step`.
    pub t_end: f64,
    /// True when integration stopped at `t_end` because the enclosure could
    /// no longer be kept inside the domain; the trace is still sound up to
    /// `t_end`, but nothing is known beyond it.
    pub escaped: bool,
}

impl FlowTrace {
    /// Enclosure of all states over the queried time range.
    ///
    /// A point query that falls exactly on a grid time returns the tight
    /// step-end enclosure; anything else hulls the covering segments.
    pub fn enclosure_at(&self, t: Interval) -> Vec<Interval> {
        let dim = self.ends[0].len();
        debug_assert!(t.lo() >= 0.0 && t.hi() <= self.t_end);
        if t.is_point() {
            let k = (t.lo() / self.step).round();
            if k >= 0.0 && (k as usize) < self.ends.len() && k * self.step == t.lo() {
                return self.ends[k as usize].clone();
            }
        }
        if self.segments.is_empty() {
            return self.ends[0].clone();
        }
        let last = self.segments.len() - 1;
        let i0 = ((t.lo() / self.step).floor() as usize).min(last);
        let i1_raw = (t.hi() / self.step).ceil() as usize;
        let i1 = i1_raw.saturating_sub(1).clamp(i0, last);
        let mut out = vec![Interval::EMPTY; dim];
        for seg in &self.segments[i0..=i1] {
            for (o, s) in out.iter_mut().zip(seg) {
                *o = o.hull(s);
            }
        }
        out
    }
}

/// Enclose `flow(sys, x0, ·)` over the time range `t_enc`.
///
/// Results are cached per (system, initial box, requested step) in the
/// evaluation context, so repeated queries at different times reuse one
/// integration.
pub fn flow_enclosure(
    ctx: &EvalCtx,
    sys: &OdeSystem,
    x0: &[Interval],
    t_enc: Interval,
) -> Result<Vec<Interval>, OdeError> {
    debug_assert_eq!(x0.len(), sys.dim());
    let h0 = match ctx.step_override {
        Some(s) => snap_pow2(s),
        None => default_step(sys, ctx),
    };
    if !(h0 > 0.0) {
        return Err(OdeError::StepTooLarge);
    }
    let key: TraceKey = (
        sys.name().to_string(),
        x0.iter().map(|i| (i.lo().to_bits(), i.hi().to_bits())).collect(),
        h0.to_bits(),
    );
    let needed = t_enc.hi();
    if !needed.is_finite() {
        return Err(OdeError::StepTooLarge);
    }
    if let Some(trace) = ctx.lookup_trace(&key) {
        if trace.t_end >= needed {
            return Ok(trace.enclosure_at(t_enc));
        }
        if trace.escaped {
            return Err(OdeError::DomainEscape);
        }
    }
    let trace = integrate(ctx, sys, x0, needed, h0)?;
    let covered = trace.t_end >= needed;
    let out = if covered {
        Some(trace.enclosure_at(t_enc))
    } else {
        None
    };
    ctx.store_trace(key, Arc::new(trace));
    match out {
        Some(enc) => Ok(enc),
        None => Err(OdeError::DomainEscape),
    }
}

/// Round down to the nearest power of two.
fn snap_pow2(h: f64) -> f64 {
    if !(h > 0.0) || !h.is_finite() {
        return 0.0;
    }
    let e = h.log2().floor() as i32;
    let snapped = 2.0f64.powi(e);
    // Guard against log2 rounding up across a power of two.
    if snapped > h {
        snapped * 0.5
    } else {
        snapped
    }
}

/// Automatic step choice: 2⁻⁸ scaled down by the domain-wide Lipschitz
/// constant when the dynamics are fast, snapped to a power of two so the
/// time grid is exact in floating point.
fn default_step(sys: &OdeSystem, ctx: &EvalCtx) -> f64 {
    let l = lipschitz_over_domain(sys, ctx);
    let scale = if l.is_finite() && l > 1.0 { 1.0 / l } else { 1.0 };
    snap_pow2((3.90625e-3 * scale).max(MIN_AUTO_STEP)) // 2^-8 · scale
}

/// Upper bound on the ∞-norm of the Jacobian over a box, or infinity.
fn jacobian_norm_bound(sys: &OdeSystem, vals: &[Interval], ctx: &EvalCtx) -> f64 {
    let env = sys.env(vals);
    let mut worst: f64 = 0.0;
    for row in &sys.jacobian {
        let mut sum = Interval::point(0.0);
        for term in row {
            match eval_term(term, &env, ctx) {
                Ok(e) => {
                    let m = e.mag();
                    if !m.is_finite() {
                        return f64::INFINITY;
                    }
                    sum = sum.add(&Interval::point(m));
                }
                Err(_) => return f64::INFINITY,
            }
        }
        worst = worst.max(sum.hi());
    }
    worst
}

/// Rigorous Lipschitz bound for the right-hand side over the whole domain.
pub fn lipschitz_over_domain(sys: &OdeSystem, ctx: &EvalCtx) -> f64 {
    jacobian_norm_bound(sys, sys.domain(), ctx)
}

/// Upper bound on |rhs component| over the whole domain, or infinity.
pub fn rhs_mag_over_domain(sys: &OdeSystem, component: usize, ctx: &EvalCtx) -> f64 {
    let env = sys.env(sys.domain());
    match eval_term(&sys.rhs[component], &env, ctx) {
        Ok(e) => e.mag(),
        Err(_) => f64::INFINITY,
    }
}

/// Bound on how strongly the flow up to `t_max` can amplify a perturbation
/// of the initial state: `exp(L · t_max)` rounded up.
pub fn gronwall_lipschitz(sys: &OdeSystem, t_max: f64, ctx: &EvalCtx) -> f64 {
    let l = lipschitz_over_domain(sys, ctx);
    if !l.is_finite() || !t_max.is_finite() {
        return f64::INFINITY;
    }
    Interval::point(l)
        .mul(&Interval::point(t_max.max(0.0)))
        .exp()
        .hi()
}

fn eval_rhs(sys: &OdeSystem, vals: &[Interval], ctx: &EvalCtx) -> Result<Vec<Interval>, OdeError> {
    let env = sys.env(vals);
    let mut out = Vec::with_capacity(sys.dim());
    for t in &sys.rhs {
        out.push(eval_term(t, &env, ctx).map_err(OdeError::Eval)?);
    }
    Ok(out)
}

/// Jacobian enclosure over a box; `None` when any entry fails to evaluate
/// (the caller then skips the mean-value branch for the step).
fn eval_jacobian(sys: &OdeSystem, vals: &[Interval], ctx: &EvalCtx) -> Option<Vec<Vec<Interval>>> {
    let env = sys.env(vals);
    let mut out = Vec::with_capacity(sys.dim());
    for row in &sys.jacobian {
        let mut r = Vec::with_capacity(sys.dim());
        for term in row {
            r.push(eval_term(term, &env, ctx).ok()?);
        }
        out.push(r);
    }
    Some(out)
}

fn ball(r: f64) -> Interval {
    Interval::new(-r, r)
}

/// Outward-rounded `h²/2 · l · m`.
fn truncation_radius(h: f64, l: f64, m: f64) -> f64 {
    Interval::point(0.5)
        .mul(&Interval::point(h))
        .mul(&Interval::point(h))
        .mul(&Interval::point(l))
        .mul(&Interval::point(m))
        .hi()
}

/// Closed containment: the Picard containment argument works on closed
/// boxes, and requiring strict interiority would make every initial set
/// touching the domain boundary (frozen parameter states in particular)
/// unintegrable.
fn inside(inner: &Interval, outer: &Interval) -> bool {
    outer.lo() <= inner.lo() && inner.hi() <= outer.hi()
}

/// Construct the a priori bound for one step: a box `B ⊆ D` with
/// `X_k + [0,h]·f(B)` strictly inside `B`. Returns that (tighter) image,
/// which encloses every trajectory point of the step.
fn a_priori_bound(
    ctx: &EvalCtx,
    sys: &OdeSystem,
    xk: &[Interval],
    h: f64,
) -> Result<Vec<Interval>, OdeError> {
    let dom = sys.domain();
    let step_iv = Interval::new(0.0, h);
    let mut cand: Vec<Interval> = xk
        .iter()
        .zip(dom)
        .map(|(x, d)| x.inflate(1e-9 + 0.01 * x.mag().min(1.0)).intersect(d))
        .collect();
    for _ in 0..BOUND_TRIES {
        let fb = eval_rhs(sys, &cand, ctx)?;
        let image: Vec<Interval> = xk
            .iter()
            .zip(&fb)
            .map(|(x, f)| x.add(&step_iv.mul(f)))
            .collect();
        // An image poking out of the domain only grows with the candidate,
        // so the step is an escape no matter how the iteration continues.
        if !image.iter().zip(dom).all(|(im, d)| inside(im, d)) {
            return Err(OdeError::DomainEscape);
        }
        let contracted = image
            .iter()
            .zip(&cand)
            .all(|(im, c)| inside(im, c));
        if contracted {
            return Ok(image);
        }
        cand = image
            .iter()
            .zip(&cand)
            .zip(dom)
            .map(|((im, c), d)| {
                c.hull(im)
                    .inflate(1e-9 + 0.05 * im.mag().min(1.0))
                    .intersect(d)
            })
            .collect();
    }
    Err(OdeError::StepTooLarge)
}

/// Validated march producing the full trace, halving the step (up to a
/// fixed number of times) when the a-priori bound refuses it. The returned
/// trace may stop early (`escaped`) when the enclosure leaves the domain.
pub fn integrate(
    ctx: &EvalCtx,
    sys: &OdeSystem,
    x0: &[Interval],
    t_needed: f64,
    mut h: f64,
) -> Result<FlowTrace, OdeError> {
    let mut last_err = OdeError::StepTooLarge;
    for _ in 0..=MAX_HALVINGS {
        match integrate_once(ctx, sys, x0, t_needed, h) {
            Ok(trace) => return Ok(trace),
            Err(e @ OdeError::StepTooLarge) => {
                last_err = e;
            }
            Err(OdeError::Eval(e)) if e.is_resolvable_by_splitting() => {
                last_err = OdeError::Eval(e);
            }
            Err(e) => return Err(e),
        }
        h *= 0.5;
    }
    Err(last_err)
}

fn integrate_once(
    ctx: &EvalCtx,
    sys: &OdeSystem,
    x0: &[Interval],
    t_needed: f64,
    h: f64,
) -> Result<FlowTrace, OdeError> {
    let dim = sys.dim();
    let dom = sys.domain();
    for (x, d) in x0.iter().zip(dom) {
        if !d.contains_interval(x) {
            return Err(OdeError::DomainEscape);
        }
    }
    // t/h is exact for power-of-two h, so n·h ≥ t_needed exactly.
    let n_steps = if t_needed <= 0.0 {
        0
    } else {
        (t_needed / h).ceil() as usize
    };
    if n_steps > MAX_STEPS {
        return Err(OdeError::StepTooLarge);
    }

    let mut ends: Vec<Vec<Interval>> = Vec::with_capacity(n_steps + 1);
    let mut segments: Vec<Vec<Interval>> = Vec::with_capacity(n_steps);
    let mut xk: Vec<Interval> = x0.to_vec();
    ends.push(xk.clone());

    // Mean-value companion: a point re-centered every step, plus a deviation
    // box with x(t) ∈ c + d. Keeping the point part exact means every width
    // source (initial spread, truncation, drift) lives in the deviation,
    // which the `I + h·J` factor contracts whenever the dynamics do, so the
    // enclosure does not inherit the naive march's exponential growth.
    let mut center: Option<(Vec<Interval>, Vec<Interval>)> = {
        let c: Vec<Interval> = x0.iter().map(|i| Interval::point(i.midpoint())).collect();
        let d: Vec<Interval> = x0.iter().zip(&c).map(|(x, c)| x.sub(c)).collect();
        Some((c, d))
    };

    let h_iv = Interval::point(h);
    let mut escaped = false;
    for _ in 0..n_steps {
        let bp = match a_priori_bound(ctx, sys, &xk, h) {
            Ok(bp) => bp,
            Err(OdeError::DomainEscape) => {
                escaped = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let f_bp = eval_rhs(sys, &bp, ctx)?;
        let l_bp = jacobian_norm_bound(sys, &bp, ctx);
        let mag_f = f_bp.iter().fold(0.0f64, |a, i| a.max(i.mag()));
        let r = truncation_radius(h, l_bp, mag_f);
        let rb = ball(r);

        // Naive Euler endpoint with rigorous remainder.
        let f_xk = eval_rhs(sys, &xk, ctx)?;
        let mut next: Vec<Interval> = xk
            .iter()
            .zip(&f_xk)
            .map(|(x, f)| x.add(&h_iv.mul(f)).add(&rb))
            .collect();
        for (n, b) in next.iter_mut().zip(&bp) {
            *n = n.intersect(b);
        }

        // Mean-value branch: contract the deviation through I + h·J(B).
        center = match center.take() {
            Some((ck, dk)) => {
                let jac = eval_jacobian(sys, &bp, ctx);
                let f_ck = eval_rhs(sys, &ck, ctx);
                match (jac, f_ck) {
                    (Some(jac), Ok(f_ck)) => {
                        let two_rb = ball(Interval::point(2.0).mul(&Interval::point(r)).hi());
                        let mut cn: Vec<Interval> = ck
                            .iter()
                            .zip(&f_ck)
                            .map(|(c, f)| c.add(&h_iv.mul(f)).add(&rb))
                            .collect();
                        for (c, b) in cn.iter_mut().zip(&bp) {
                            *c = c.intersect(b);
                        }
                        let mut dn: Vec<Interval> = Vec::with_capacity(dim);
                        for i in 0..dim {
                            let mut acc = two_rb;
                            for (j, dkj) in dk.iter().enumerate() {
                                let mut m = h_iv.mul(&jac[i][j]);
                                if i == j {
                                    m = m.add(&Interval::point(1.0));
                                }
                                acc = acc.add(&m.mul(dkj));
                            }
                            dn.push(acc);
                        }
                        // x ∈ (c + d), so intersect the naive endpoint.
                        for i in 0..dim {
                            next[i] = next[i].intersect(&cn[i].add(&dn[i]));
                        }
                        // And d ∈ x - c, which tightens the deviation.
                        for i in 0..dim {
                            dn[i] = dn[i].intersect(&next[i].sub(&cn[i]));
                        }
                        // Re-center: move the point part's accumulated width
                        // into the deviation so the Jacobian factor keeps
                        // acting on all of it.
                        for i in 0..dim {
                            let m = Interval::point(cn[i].midpoint());
                            dn[i] = dn[i].add(&cn[i].sub(&m));
                            cn[i] = m;
                        }
                        Some((cn, dn))
                    }
                    // Lost the companion (evaluation failure); continue
                    // with the naive march alone, still sound.
                    _ => None,
                }
            }
            None => None,
        };

        if next.iter().any(|i| i.is_empty()) {
            // Intersections of valid enclosures cannot be empty; treat
            // defensively as a failed step rather than panic.
            return Err(OdeError::StepTooLarge);
        }
        segments.push(bp);
        ends.push(next.clone());
        xk = next;
    }

    Ok(FlowTrace {
        step: h,
        t_end: segments.len() as f64 * h,
        ends,
        segments,
        escaped,
    })
}

/// Non-validated fixed-step RK4 integration, for sampling oracles and
/// cross-checks. Uses about 1024 steps per unit time.
pub fn rk4_reference(sys: &OdeSystem, x0: &[f64], t: f64, registry: &OdeRegistry) -> Vec<f64> {
    let dim = sys.dim();
    if t <= 0.0 {
        return x0.to_vec();
    }
    let n = ((t * 1024.0).ceil() as usize).clamp(1, 4_000_000);
    let h = t / n as f64;
    let eval_f = |x: &[f64]| -> Vec<f64> {
        let mut env = HashMap::with_capacity(dim);
        for (name, v) in sys.states.iter().zip(x) {
            env.insert(name.clone(), *v);
        }
        sys.rhs
            .iter()
            .map(|term| eval_term_point(term, &env, registry))
            .collect()
    };
    let mut x = x0.to_vec();
    for _ in 0..n {
        let k1 = eval_f(&x);
        let x2: Vec<f64> = x.iter().zip(&k1).map(|(x, k)| x + 0.5 * h * k).collect();
        let k2 = eval_f(&x2);
        let x3: Vec<f64> = x.iter().zip(&k2).map(|(x, k)| x + 0.5 * h * k).collect();
        let k3 = eval_f(&x3);
        let x4: Vec<f64> = x.iter().zip(&k3).map(|(x, k)| x + h * k).collect();
        let k4 = eval_f(&x4);
        for i in 0..dim {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::term::Term;

    fn decay_registry() -> OdeRegistry {
        // x' = -x on [-2, 2].
        let mut reg = OdeRegistry::new();
        reg.register(
            "decay",
            vec!["x".into()],
            vec![Term::var("x").neg()],
            vec![Interval::new(-2.0, 2.0)],
        )
        .unwrap();
        reg
    }

    #[test]
    fn registration_rejects_malformed_systems() {
        let mut reg = OdeRegistry::new();
        // Unknown variable in the right-hand side.
        let err = reg
            .register(
                "bad",
                vec!["x".into()],
                vec![Term::var("y")],
                vec![Interval::new(-1.0, 1.0)],
            )
            .unwrap_err();
        assert!(matches!(err, OdeError::BadSystem { .. }));
        // Arity mismatch.
        assert!(reg
            .register(
                "bad2",
                vec!["x".into(), "y".into()],
                vec![Term::var("x")],
                vec![Interval::new(-1.0, 1.0), Interval::new(-1.0, 1.0)],
            )
            .is_err());
        // Non-differentiable right-hand side.
        assert!(reg
            .register(
                "bad3",
                vec!["x".into()],
                vec![Term::var("x").abs()],
                vec![Interval::new(-1.0, 1.0)],
            )
            .is_err());
        // Duplicate state names.
        assert!(reg
            .register(
                "bad4",
                vec!["x".into(), "x".into()],
                vec![Term::var("x"), Term::var("x")],
                vec![Interval::new(-1.0, 1.0), Interval::new(-1.0, 1.0)],
            )
            .is_err());
    }

    #[test]
    fn exponential_decay_enclosure_is_tight_and_correct() {
        let reg = decay_registry();
        let ctx = EvalCtx::new(&reg);
        let sys = reg.get("decay").unwrap();
        let x0 = [Interval::point(1.0)];
        let enc = flow_enclosure(&ctx, sys, &x0, Interval::point(1.0)).unwrap();
        let truth = (-1.0f64).exp();
        assert!(
            enc[0].contains(truth),
            "enclosure {:?} misses e^-1 = {truth}",
            enc[0]
        );
        assert!(
            enc[0].width() < 1e-2,
            "enclosure too wide: {}",
            enc[0].width()
        );
    }

    #[test]
    fn reference_integration_lands_inside_the_enclosure() {
        let reg = decay_registry();
        let ctx = EvalCtx::new(&reg);
        let sys = reg.get("decay").unwrap();
        let x0 = [Interval::point(1.0)];
        // Check containment at several grid-aligned times.
        for t in [0.25, 0.5, 0.75, 1.0] {
            let enc = flow_enclosure(&ctx, sys, &x0, Interval::point(t)).unwrap();
            let rk = rk4_reference(sys, &[1.0], t, &reg);
            assert!(
                enc[0].contains(rk[0]),
                "t={t}: rk4 value {} outside {:?}",
                rk[0],
                enc[0]
            );
        }
    }

    #[test]
    fn wide_initial_sets_contract_via_the_mean_value_branch() {
        let reg = decay_registry();
        let ctx = EvalCtx::new(&reg);
        let sys = reg.get("decay").unwrap();
        let x0 = [Interval::new(-1.0, 1.0)];
        let enc = flow_enclosure(&ctx, sys, &x0, Interval::point(2.0)).unwrap();
        // True image is [-e^-2, e^-2] ≈ [-0.135, 0.135]; plain interval
        // Euler would instead *grow* the width by e^{+2}.
        assert!(enc[0].contains((-2.0f64).exp()));
        assert!(enc[0].contains(-(-2.0f64).exp()));
        assert!(
            enc[0].width() < 0.4,
            "deviation contraction failed: width {}",
            enc[0].width()
        );
    }

    #[test]
    fn time_range_queries_cover_whole_segments() {
        let reg = decay_registry();
        let ctx = EvalCtx::new(&reg);
        let sys = reg.get("decay").unwrap();
        let x0 = [Interval::point(1.0)];
        let enc = flow_enclosure(&ctx, sys, &x0, Interval::new(0.0, 1.0)).unwrap();
        // Over t ∈ [0,1] the trajectory spans [e^-1, 1].
        assert!(enc[0].contains(1.0));
        assert!(enc[0].contains((-1.0f64).exp()));
        assert!(enc[0].lo() > 0.3 && enc[0].hi() < 1.1);
    }

    #[test]
    fn growth_beyond_the_domain_is_flagged() {
        let mut reg = OdeRegistry::new();
        reg.register(
            "growth",
            vec!["x".into()],
            vec![Term::var("x")],
            vec![Interval::new(-2.0, 2.0)],
        )
        .unwrap();
        let ctx = EvalCtx::new(&reg);
        let sys = reg.get("growth").unwrap();
        // Starting at 1, x(t) = e^t crosses 2 before t = 0.75.
        let err = flow_enclosure(&ctx, sys, &[Interval::point(1.0)], Interval::point(1.0))
            .unwrap_err();
        assert!(matches!(
            err,
            OdeError::DomainEscape | OdeError::StepTooLarge
        ));
        // Within the domain the same system is fine.
        let ok = flow_enclosure(&ctx, sys, &[Interval::point(1.0)], Interval::point(0.5));
        assert!(ok.is_ok());
        assert!(ok.unwrap()[0].contains(0.5f64.exp()));
    }

    #[test]
    fn trace_cache_reuses_integrations() {
        let reg = decay_registry();
        let ctx = EvalCtx::new(&reg);
        let sys = reg.get("decay").unwrap();
        let x0 = [Interval::point(1.0)];
        let a = flow_enclosure(&ctx, sys, &x0, Interval::point(1.0)).unwrap();
        let b = flow_enclosure(&ctx, sys, &x0, Interval::point(1.0)).unwrap();
        assert_eq!(a[0].lo(), b[0].lo());
        assert_eq!(a[0].hi(), b[0].hi());
    }

    #[test]
    fn two_dimensional_rotation_stays_on_the_circle() {
        // x' = y, y' = -x: solutions rotate on circles; from (1, 0) at
        // t = π/2 the state is (0, -1)... with our sign convention
        // x(t) = cos t, y(t) = -sin t.
        let mut reg = OdeRegistry::new();
        reg.register(
            "rot",
            vec!["x".into(), "y".into()],
            vec![Term::var("y"), Term::var("x").neg()],
            vec![Interval::new(-3.0, 3.0), Interval::new(-3.0, 3.0)],
        )
        .unwrap();
        let ctx = EvalCtx::new(&reg);
        let sys = reg.get("rot").unwrap();
        let enc = flow_enclosure(
            &ctx,
            sys,
            &[Interval::point(1.0), Interval::point(0.0)],
            Interval::point(1.0),
        )
        .unwrap();
        assert!(enc[0].contains(1.0f64.cos()));
        assert!(enc[1].contains(-(1.0f64.sin())));
        assert!(enc[0].width() < 2e-2 && enc[1].width() < 2e-2);
    }
}

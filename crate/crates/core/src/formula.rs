//! Formulas over the term language.
//!
//! The solver works on a negation-free core: atoms are one-sided
//! constraints `term > shift` or `term >= shift` with an exact rational
//! shift, connected by conjunction/disjunction under blocks of bounded
//! quantifiers. A richer surface form ([`RawFormula`]) with negation,
//! implication, and two-sided comparisons lowers into the core by pushing
//! negations to the atoms.
//!
//! Quantifier prefixes are normalized by hoisting binders left to right
//! (preorder) without reordering, which is sound for bounded, nonempty
//! domains and keeps the alternation count canonical for classification.

use crate::rational::{display_rat, Rat};
use crate::term::Term;
use num_traits::Zero;
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

/// One-sided atomic constraint: `term > shift` (strict) or `term >= shift`.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub term: Term,
    pub strict: bool,
    pub shift: Rat,
}

impl Atom {
    pub fn ge(term: Term) -> Atom {
        Atom {
            term,
            strict: false,
            shift: Rat::zero(),
        }
    }

    pub fn gt(term: Term) -> Atom {
        Atom {
            term,
            strict: true,
            shift: Rat::zero(),
        }
    }

    pub fn with_shift(mut self, shift: Rat) -> Atom {
        self.shift = shift;
        self
    }

    /// Logical negation: `not (t > s)` is `-t >= -s`, and dually.
    pub fn negated(&self) -> Atom {
        Atom {
            term: self.term.clone().neg(),
            strict: !self.strict,
            shift: -self.shift.clone(),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = if self.strict { ">" } else { ">=" };
        write!(f, "({op} {} {})", self.term, display_rat(&self.shift))
    }
}

/// Quantifier kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantKind {
    Exists,
    Forall,
}

impl QuantKind {
    pub fn dual(self) -> QuantKind {
        match self {
            QuantKind::Exists => QuantKind::Forall,
            QuantKind::Forall => QuantKind::Exists,
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            QuantKind::Exists => "exists",
            QuantKind::Forall => "forall",
        }
    }
}

/// A bounded variable binding `name in [lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Binding {
    pub name: String,
    pub lo: Rat,
    pub hi: Rat,
}

impl Binding {
    pub fn new(name: impl Into<String>, lo: Rat, hi: Rat) -> Binding {
        Binding {
            name: name.into(),
            lo,
            hi,
        }
    }
}

impl fmt::Display for Binding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({} {} {})",
            self.name,
            display_rat(&self.lo),
            display_rat(&self.hi)
        )
    }
}

/// Negation-free formula.
#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    Atom(Atom),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Quant(QuantKind, Vec<Binding>, Box<Formula>),
}

/// Prefix classification of a formula after prenexing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrefixClass {
    QuantifierFree,
    Sigma(usize),
    Pi(usize),
}

impl PrefixClass {
    /// Complexity annotation for the decision problem of bounded sentences
    /// in this prefix class, relative to an oracle C for the term
    /// arithmetic.
    pub fn complexity(&self) -> String {
        match self {
            PrefixClass::QuantifierFree => "P^C".to_string(),
            PrefixClass::Sigma(n) => format!("((Sigma_{n})^P)^C"),
            PrefixClass::Pi(n) => format!("((Pi_{n})^P)^C"),
        }
    }
}

impl fmt::Display for PrefixClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrefixClass::QuantifierFree => f.write_str("QF"),
            PrefixClass::Sigma(n) => write!(f, "Sigma({n})"),
            PrefixClass::Pi(n) => write!(f, "Pi({n})"),
        }
    }
}

/// A maximal block of equally-flavored quantifiers in a prenex prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct PrenexBlock {
    pub kind: QuantKind,
    pub bindings: Vec<Binding>,
}

#[derive(Debug, Error, PartialEq)]
pub enum FormulaError {
    #[error("inverted bounds on {name}: [{lo}, {hi}]")]
    InvertedBounds {
        name: String,
        lo: String,
        hi: String,
    },
    #[error("binder name {0:?} is used more than once; binder names must be unique")]
    DuplicateBinder(String),
}

impl Formula {
    /// Conjunction with flattening; a single conjunct collapses.
    pub fn and(mut parts: Vec<Formula>) -> Formula {
        let mut flat = Vec::with_capacity(parts.len());
        for p in parts.drain(..) {
            match p {
                Formula::And(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        if flat.len() == 1 {
            flat.pop().unwrap()
        } else {
            Formula::And(flat)
        }
    }

    /// Disjunction with flattening; a single disjunct collapses.
    pub fn or(mut parts: Vec<Formula>) -> Formula {
        let mut flat = Vec::with_capacity(parts.len());
        for p in parts.drain(..) {
            match p {
                Formula::Or(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        if flat.len() == 1 {
            flat.pop().unwrap()
        } else {
            Formula::Or(flat)
        }
    }

    pub fn exists(bindings: Vec<Binding>, body: Formula) -> Formula {
        Formula::Quant(QuantKind::Exists, bindings, Box::new(body))
    }

    pub fn forall(bindings: Vec<Binding>, body: Formula) -> Formula {
        Formula::Quant(QuantKind::Forall, bindings, Box::new(body))
    }

    pub fn is_quantifier_free(&self) -> bool {
        match self {
            Formula::Atom(_) => true,
            Formula::And(parts) | Formula::Or(parts) => {
                parts.iter().all(Formula::is_quantifier_free)
            }
            Formula::Quant(..) => false,
        }
    }

    /// Logical negation in negation normal form. Sound for any formula;
    /// used on quantifier-free matrices during synthesis verification.
    pub fn negate_nnf(&self) -> Formula {
        match self {
            Formula::Atom(a) => Formula::Atom(a.negated()),
            Formula::And(parts) => {
                Formula::Or(parts.iter().map(Formula::negate_nnf).collect())
            }
            Formula::Or(parts) => {
                Formula::And(parts.iter().map(Formula::negate_nnf).collect())
            }
            Formula::Quant(kind, bindings, body) => Formula::Quant(
                kind.dual(),
                bindings.clone(),
                Box::new(body.negate_nnf()),
            ),
        }
    }

    /// Replaces a free variable by a term; does not descend under a binder
    /// of the same name.
    pub fn subst(&self, var: &str, replacement: &Term) -> Formula {
        match self {
            Formula::Atom(a) => Formula::Atom(Atom {
                term: a.term.subst(var, replacement),
                strict: a.strict,
                shift: a.shift.clone(),
            }),
            Formula::And(parts) => {
                Formula::And(parts.iter().map(|p| p.subst(var, replacement)).collect())
            }
            Formula::Or(parts) => {
                Formula::Or(parts.iter().map(|p| p.subst(var, replacement)).collect())
            }
            Formula::Quant(kind, bindings, body) => {
                if bindings.iter().any(|b| b.name == var) {
                    self.clone()
                } else {
                    Formula::Quant(
                        *kind,
                        bindings.clone(),
                        Box::new(body.subst(var, replacement)),
                    )
                }
            }
        }
    }

    /// Variables that occur free (not bound by any enclosing quantifier).
    pub fn free_vars(&self) -> BTreeSet<String> {
        fn walk(f: &Formula, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
            match f {
                Formula::Atom(a) => {
                    for v in a.term.vars() {
                        if !bound.iter().any(|b| *b == v) {
                            out.insert(v);
                        }
                    }
                }
                Formula::And(parts) | Formula::Or(parts) => {
                    for p in parts {
                        walk(p, bound, out);
                    }
                }
                Formula::Quant(_, bindings, body) => {
                    let n = bindings.len();
                    for b in bindings {
                        bound.push(b.name.clone());
                    }
                    walk(body, bound, out);
                    bound.truncate(bound.len() - n);
                }
            }
        }
        let mut out = BTreeSet::new();
        walk(self, &mut Vec::new(), &mut out);
        out
    }

    /// Atoms of a quantifier-free formula in preorder. Quantified bodies
    /// are included too; certificate ground nodes index into this.
    pub fn atoms(&self) -> Vec<&Atom> {
        let mut out = Vec::new();
        fn walk<'a>(f: &'a Formula, out: &mut Vec<&'a Atom>) {
            match f {
                Formula::Atom(a) => out.push(a),
                Formula::And(parts) | Formula::Or(parts) => {
                    for p in parts {
                        walk(p, out);
                    }
                }
                Formula::Quant(_, _, body) => walk(body, out),
            }
        }
        walk(self, &mut out);
        out
    }

    /// True if any atom's term references an ODE flow.
    pub fn contains_flow(&self) -> bool {
        self.atoms().iter().any(|a| a.term.contains_flow())
    }

    /// Hoists all quantifiers into a prenex prefix (preorder, no
    /// reordering), merging adjacent equally-flavored blocks. Fails when a
    /// binder name repeats or bounds are inverted.
    pub fn prenex(&self) -> Result<(Vec<PrenexBlock>, Formula), FormulaError> {
        let mut seen = BTreeSet::new();
        let mut ordered: Vec<(QuantKind, Binding)> = Vec::new();
        let matrix = hoist(self, &mut seen, &mut ordered)?;
        let mut blocks: Vec<PrenexBlock> = Vec::new();
        for (kind, binding) in ordered {
            match blocks.last_mut() {
                Some(last) if last.kind == kind => last.bindings.push(binding),
                _ => blocks.push(PrenexBlock {
                    kind,
                    bindings: vec![binding],
                }),
            }
        }
        Ok((blocks, matrix))
    }

    /// Prefix class after prenexing.
    pub fn classify(&self) -> Result<PrefixClass, FormulaError> {
        let (blocks, _) = self.prenex()?;
        Ok(match blocks.first() {
            None => PrefixClass::QuantifierFree,
            Some(first) => match first.kind {
                QuantKind::Exists => PrefixClass::Sigma(blocks.len()),
                QuantKind::Forall => PrefixClass::Pi(blocks.len()),
            },
        })
    }

    /// The δ-strengthening: every atom's threshold is raised by `delta`,
    /// making the sentence harder to satisfy. Binder bounds are untouched.
    /// All atoms sit in positive position (the core carries no negation),
    /// so the uniform shift is the whole operation.
    pub fn strengthen(&self, delta: &Rat) -> Formula {
        self.map_atoms(&mut |_, a| a.clone().with_shift(&a.shift + delta))
    }

    /// The δ-weakening: thresholds lowered by `delta`, the dual relaxation.
    /// `f.weaken(d).strengthen(d)` is `f` again — the shifts are exact
    /// rationals.
    pub fn weaken(&self, delta: &Rat) -> Formula {
        self.map_atoms(&mut |_, a| a.clone().with_shift(&a.shift - delta))
    }

    /// Rebuilds the formula with every atom passed through `rewrite`
    /// together with its preorder index (the indexing `atoms()` uses).
    pub fn map_atoms<F: FnMut(usize, &Atom) -> Atom>(&self, rewrite: &mut F) -> Formula {
        fn walk<F: FnMut(usize, &Atom) -> Atom>(
            g: &Formula,
            idx: &mut usize,
            rewrite: &mut F,
        ) -> Formula {
            match g {
                Formula::Atom(a) => {
                    let out = Formula::Atom(rewrite(*idx, a));
                    *idx += 1;
                    out
                }
                Formula::And(parts) => {
                    Formula::And(parts.iter().map(|p| walk(p, idx, rewrite)).collect())
                }
                Formula::Or(parts) => {
                    Formula::Or(parts.iter().map(|p| walk(p, idx, rewrite)).collect())
                }
                Formula::Quant(kind, bindings, body) => Formula::Quant(
                    *kind,
                    bindings.clone(),
                    Box::new(walk(body, idx, rewrite)),
                ),
            }
        }
        let mut idx = 0;
        walk(self, &mut idx, rewrite)
    }
}

/// Prefix class of a formula after prenexing; free-function form of
/// [`Formula::classify`].
pub fn classify_prefix(f: &Formula) -> Result<PrefixClass, FormulaError> {
    f.classify()
}

fn hoist(
    f: &Formula,
    seen: &mut BTreeSet<String>,
    ordered: &mut Vec<(QuantKind, Binding)>,
) -> Result<Formula, FormulaError> {
    match f {
        Formula::Atom(_) => Ok(f.clone()),
        Formula::And(parts) => {
            let mut out = Vec::with_capacity(parts.len());
            for p in parts {
                out.push(hoist(p, seen, ordered)?);
            }
            Ok(Formula::And(out))
        }
        Formula::Or(parts) => {
            let mut out = Vec::with_capacity(parts.len());
            for p in parts {
                out.push(hoist(p, seen, ordered)?);
            }
            Ok(Formula::Or(out))
        }
        Formula::Quant(kind, bindings, body) => {
            for b in bindings {
                if b.lo > b.hi {
                    return Err(FormulaError::InvertedBounds {
                        name: b.name.clone(),
                        lo: display_rat(&b.lo),
                        hi: display_rat(&b.hi),
                    });
                }
                if !seen.insert(b.name.clone()) {
                    return Err(FormulaError::DuplicateBinder(b.name.clone()));
                }
                ordered.push((*kind, b.clone()));
            }
            hoist(body, seen, ordered)
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Atom(a) => write!(f, "{a}"),
            Formula::And(parts) => {
                f.write_str("(and")?;
                for p in parts {
                    write!(f, " {p}")?;
                }
                f.write_str(")")
            }
            Formula::Or(parts) => {
                f.write_str("(or")?;
                for p in parts {
                    write!(f, " {p}")?;
                }
                f.write_str(")")
            }
            Formula::Quant(kind, bindings, body) => {
                write!(f, "({} (", kind.keyword())?;
                for (i, b) in bindings.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{b}")?;
                }
                write!(f, ") {body})")
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Surface formulas.
// ---------------------------------------------------------------------------

/// Comparison operators of the surface language.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    fn negated(self) -> CmpOp {
        match self {
            CmpOp::Lt => CmpOp::Ge,
            CmpOp::Le => CmpOp::Gt,
            CmpOp::Gt => CmpOp::Le,
            CmpOp::Ge => CmpOp::Lt,
            CmpOp::Eq => CmpOp::Ne,
            CmpOp::Ne => CmpOp::Eq,
        }
    }
}

/// Surface formula with negation, implication, and two-sided comparisons.
/// Lowers to the negation-free core via [`RawFormula::lower`].
#[derive(Debug, Clone, PartialEq)]
pub enum RawFormula {
    Cmp(Term, CmpOp, Term),
    Not(Box<RawFormula>),
    And(Vec<RawFormula>),
    Or(Vec<RawFormula>),
    Implies(Box<RawFormula>, Box<RawFormula>),
    Exists(Vec<Binding>, Box<RawFormula>),
    Forall(Vec<Binding>, Box<RawFormula>),
}

impl RawFormula {
    /// Lowers into the negation-free core, pushing negations to atoms.
    pub fn lower(&self) -> Result<Formula, FormulaError> {
        let lowered = lower_with(self, false)?;
        // Surface-level validation of bounds and binder uniqueness.
        lowered.prenex()?;
        Ok(lowered)
    }
}

fn lower_with(f: &RawFormula, negate: bool) -> Result<Formula, FormulaError> {
    Ok(match f {
        RawFormula::Cmp(lhs, op, rhs) => {
            let op = if negate { op.negated() } else { *op };
            lower_cmp(lhs, op, rhs)
        }
        RawFormula::Not(inner) => lower_with(inner, !negate)?,
        RawFormula::And(parts) => {
            let lowered = parts
                .iter()
                .map(|p| lower_with(p, negate))
                .collect::<Result<Vec<_>, _>>()?;
            if negate {
                Formula::or(lowered)
            } else {
                Formula::and(lowered)
            }
        }
        RawFormula::Or(parts) => {
            let lowered = parts
                .iter()
                .map(|p| lower_with(p, negate))
                .collect::<Result<Vec<_>, _>>()?;
            if negate {
                Formula::and(lowered)
            } else {
                Formula::or(lowered)
            }
        }
        RawFormula::Implies(a, b) => {
            if negate {
                // not (a -> b)  ==  a and (not b)
                Formula::and(vec![lower_with(a, false)?, lower_with(b, true)?])
            } else {
                Formula::or(vec![lower_with(a, true)?, lower_with(b, false)?])
            }
        }
        RawFormula::Exists(bindings, body) => {
            let kind = if negate {
                QuantKind::Forall
            } else {
                QuantKind::Exists
            };
            Formula::Quant(kind, bindings.clone(), Box::new(lower_with(body, negate)?))
        }
        RawFormula::Forall(bindings, body) => {
            let kind = if negate {
                QuantKind::Exists
            } else {
                QuantKind::Forall
            };
            Formula::Quant(kind, bindings.clone(), Box::new(lower_with(body, negate)?))
        }
    })
}

fn lower_cmp(lhs: &Term, op: CmpOp, rhs: &Term) -> Formula {
    let diff = |a: &Term, b: &Term| a.clone().sub(b.clone());
    match op {
        // lhs < rhs  ==  rhs - lhs > 0
        CmpOp::Lt => Formula::Atom(Atom::gt(diff(rhs, lhs))),
        CmpOp::Le => Formula::Atom(Atom::ge(diff(rhs, lhs))),
        CmpOp::Gt => Formula::Atom(Atom::gt(diff(lhs, rhs))),
        CmpOp::Ge => Formula::Atom(Atom::ge(diff(lhs, rhs))),
        CmpOp::Eq => Formula::and(vec![
            Formula::Atom(Atom::ge(diff(lhs, rhs))),
            Formula::Atom(Atom::ge(diff(rhs, lhs))),
        ]),
        CmpOp::Ne => Formula::or(vec![
            Formula::Atom(Atom::gt(diff(lhs, rhs))),
            Formula::Atom(Atom::gt(diff(rhs, lhs))),
        ]),
    }
}

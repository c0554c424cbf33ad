//! Emission, parsing, and independent checking of solver answers.
//!
//! A positive answer (`delta-sat` / `valid`) is a **witness** certificate; a
//! negative answer (`unsat` / `delta-false`) is a **refutation** certificate.
//! Both share one node grammar: `point` nodes bind a quantifier block to exact
//! rational coordinates, `split` nodes cut one variable of a covered block in
//! two, and `leaf` nodes record the interval enclosures that decide the
//! matrix on a cell.
//!
//! The checker is deliberately a separate code path from the search: it walks
//! the tree, re-derives every enclosure with `eval_term`, and combines the
//! recorded atom facts itself. It never calls any `solve_*` entry point, so a
//! bug in the search heuristics cannot leak into certificate acceptance.
//!
//! Wire format: UTF-8 text S-expressions with LF line endings. Every number
//! is an exact rational printed as `numerator/denominator`; floats never
//! appear, so certificates are portable across platforms and the checker can
//! re-derive float enclosures locally.

use crate::boxes::IntervalBox;
use crate::eval::{eval_term, EvalCtx, Mode, TruthValue};
use crate::formula::{Binding, Formula, PrenexBlock, QuantKind};
use crate::interval::Interval;
use crate::rational::Rat;
use crate::solver::Verdict;
use num_bigint::BigInt;
use num_traits::One;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use thiserror::Error;

/// Recorded enclosure of one matrix atom's term on a cell. `None` bounds mean
/// the recorded enclosure was unbounded on that side (printed `-inf`/`inf`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AtomFact {
    /// Index of the atom in preorder over the matrix.
    pub atom: usize,
    pub lo: Option<Rat>,
    pub hi: Option<Rat>,
}

/// One node of a certificate tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CertNode {
    /// Binds every variable of the current quantifier block to a rational
    /// coordinate, then continues with the remaining blocks.
    Point {
        bindings: Vec<(String, Rat)>,
        child: Box<CertNode>,
    },
    /// Cuts the current cell at `at` along `var`; the two children together
    /// cover the cell exactly.
    Split {
        var: String,
        at: Rat,
        below: Box<CertNode>,
        above: Box<CertNode>,
    },
    /// Ground facts that decide the matrix on the current cell.
    Facts { facts: Vec<AtomFact> },
}

/// A parsed or freshly built certificate.
#[derive(Clone, Debug, PartialEq)]
pub struct Certificate {
    pub format: u32,
    pub verdict: Verdict,
    pub delta: Rat,
    /// Per-atom threshold overrides, sorted by atom index.
    pub atom_deltas: Vec<(usize, Rat)>,
    /// Hex SHA-256 of the canonical formula text.
    pub formula_digest: String,
    /// For refutation certificates: the domain box of the outermost block,
    /// which the split tree must partition exactly. Empty for witnesses.
    pub domain: Vec<Binding>,
    pub root: CertNode,
}

/// Outcome of checking a certificate against a formula.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CheckResult {
    Accepted,
    Rejected(String),
}

impl CheckResult {
    pub fn is_accepted(&self) -> bool {
        matches!(self, CheckResult::Accepted)
    }
}

#[derive(Debug, Error)]
pub enum CertError {
    #[error("certificate parse error: {0}")]
    Parse(String),
    #[error("result carries no certificate")]
    Missing,
    #[error("formula error: {0}")]
    Formula(#[from] crate::formula::FormulaError),
}

/// Hex SHA-256 digest of the canonical printed form of a formula.
pub fn formula_digest(f: &Formula) -> String {
    let mut hasher = Sha256::new();
    hasher.update(f.to_string().as_bytes());
    let out = hasher.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

fn cert_rat(r: &Rat) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

fn bound_str(b: &Option<Rat>, lower: bool) -> String {
    match b {
        Some(r) => cert_rat(r),
        None if lower => "-inf".to_string(),
        None => "inf".to_string(),
    }
}

impl Certificate {
    fn is_witness(&self) -> bool {
        matches!(self.verdict, Verdict::DeltaSat | Verdict::DeltaFalse)
    }

    /// Canonical deterministic serialization: fixed field order, one header
    /// field per line, one space of indentation per tree depth, LF endings.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push('(');
        s.push_str(if self.is_witness() { "witness" } else { "refutation" });
        s.push('\n');
        s.push_str(&format!(" (format {})\n", self.format));
        s.push_str(&format!(" (verdict {})\n", self.verdict));
        s.push_str(&format!(" (delta {})\n", cert_rat(&self.delta)));
        if !self.atom_deltas.is_empty() {
            s.push_str(" (atom-delta");
            for (idx, d) in &self.atom_deltas {
                s.push_str(&format!(" ({} {})", idx, cert_rat(d)));
            }
            s.push_str(")\n");
        }
        s.push_str(&format!(" (formula {})\n", self.formula_digest));
        if !self.is_witness() {
            s.push_str(" (box");
            for b in &self.domain {
                s.push_str(&format!(" ({} {} {})", b.name, cert_rat(&b.lo), cert_rat(&b.hi)));
            }
            s.push_str(")\n");
        }
        write_node(&self.root, 1, &mut s);
        s.push_str(")\n");
        s
    }

    pub fn parse(text: &str) -> Result<Certificate, CertError> {
        parse_certificate(text)
    }
}

fn write_node(node: &CertNode, depth: usize, out: &mut String) {
    let pad = " ".repeat(depth);
    match node {
        CertNode::Facts { facts } => {
            out.push_str(&pad);
            out.push_str("(leaf");
            for f in facts {
                out.push_str(&format!(
                    " (atom {} {} {})",
                    f.atom,
                    bound_str(&f.lo, true),
                    bound_str(&f.hi, false)
                ));
            }
            out.push(')');
        }
        CertNode::Point { bindings, child } => {
            out.push_str(&pad);
            out.push_str("(point");
            for (name, v) in bindings {
                out.push_str(&format!(" ({name} {})", cert_rat(v)));
            }
            out.push('\n');
            write_node(child, depth + 1, out);
            out.push(')');
        }
        CertNode::Split { var, at, below, above } => {
            out.push_str(&format!("{pad}(split {var} {}\n", cert_rat(at)));
            write_node(below, depth + 1, out);
            out.push('\n');
            write_node(above, depth + 1, out);
            out.push(')');
        }
    }
}

/// Build the canonical certificate text for a solve result, or an error if
/// the result carries no certificate tree.
pub fn emit_certificate(
    result: &crate::solver::SolveResult,
    f: &Formula,
    delta: &Rat,
    atom_deltas: &[(usize, Rat)],
) -> Result<String, CertError> {
    let root = result.certificate.clone().ok_or(CertError::Missing)?;
    let (blocks, _) = f.prenex()?;
    // The domain echo travels with covers only: a root acts as a cover tree
    // exactly when the outermost block's polarity disagrees with the verdict
    // (unsat covers an ∃ block, valid covers a ∀ block); point-rooted
    // certificates (delta-sat witnesses, delta-false counterexamples) carry
    // no cover and hence no domain.
    let positive = matches!(result.verdict, Verdict::DeltaSat | Verdict::Valid);
    let cover_root = blocks
        .first()
        .map(|b| (b.kind == QuantKind::Exists) != positive)
        .unwrap_or(false);
    let domain = if cover_root {
        blocks.first().map(|b| b.bindings.clone()).unwrap_or_default()
    } else {
        Vec::new()
    };
    let mut deltas: Vec<(usize, Rat)> = atom_deltas.to_vec();
    deltas.sort_by_key(|(i, _)| *i);
    let cert = Certificate {
        format: 1,
        verdict: result.verdict,
        delta: delta.clone(),
        atom_deltas: deltas,
        formula_digest: formula_digest(f),
        domain,
        root,
    };
    Ok(cert.to_text())
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

fn tokenize(text: &str) -> Result<Vec<String>, CertError> {
    let mut toks = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        match ch {
            '(' | ')' => {
                if !cur.is_empty() {
                    toks.push(std::mem::take(&mut cur));
                }
                toks.push(ch.to_string());
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    toks.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        toks.push(cur);
    }
    if toks.is_empty() {
        return Err(CertError::Parse("empty input".into()));
    }
    Ok(toks)
}

fn parse_sexp(toks: &[String], pos: &mut usize) -> Result<Sexp, CertError> {
    match toks.get(*pos) {
        None => Err(CertError::Parse("unexpected end of input".into())),
        Some(t) if t == "(" => {
            *pos += 1;
            let mut items = Vec::new();
            loop {
                match toks.get(*pos) {
                    None => return Err(CertError::Parse("unbalanced parentheses".into())),
                    Some(t) if t == ")" => {
                        *pos += 1;
                        return Ok(Sexp::List(items));
                    }
                    _ => items.push(parse_sexp(toks, pos)?),
                }
            }
        }
        Some(t) if t == ")" => Err(CertError::Parse("unexpected ')'".into())),
        Some(t) => {
            *pos += 1;
            Ok(Sexp::Atom(t.clone()))
        }
    }
}

fn expect_atom(s: &Sexp, what: &str) -> Result<String, CertError> {
    match s {
        Sexp::Atom(a) => Ok(a.clone()),
        Sexp::List(_) => Err(CertError::Parse(format!("expected {what}, found a list"))),
    }
}

fn parse_rat_token(tok: &str) -> Result<Rat, CertError> {
    let bad = || CertError::Parse(format!("malformed rational '{tok}'"));
    if let Some((n, d)) = tok.split_once('/') {
        let num: BigInt = n.parse().map_err(|_| bad())?;
        let den: BigInt = d.parse().map_err(|_| bad())?;
        if den == BigInt::from(0) {
            return Err(bad());
        }
        Ok(Rat::new(num, den))
    } else {
        let num: BigInt = tok.parse().map_err(|_| bad())?;
        Ok(Rat::new(num, BigInt::one()))
    }
}

fn parse_bound(tok: &str) -> Result<Option<Rat>, CertError> {
    match tok {
        "-inf" | "inf" => Ok(None),
        _ => Ok(Some(parse_rat_token(tok)?)),
    }
}

fn parse_node(s: &Sexp) -> Result<CertNode, CertError> {
    let Sexp::List(items) = s else {
        return Err(CertError::Parse("expected a node list".into()));
    };
    let head = items
        .first()
        .ok_or_else(|| CertError::Parse("empty node".into()))
        .and_then(|h| expect_atom(h, "node keyword"))?;
    match head.as_str() {
        "leaf" => {
            let mut facts = Vec::new();
            for item in &items[1..] {
                let Sexp::List(parts) = item else {
                    return Err(CertError::Parse("leaf entries must be lists".into()));
                };
                if parts.len() != 4 || expect_atom(&parts[0], "atom keyword")? != "atom" {
                    return Err(CertError::Parse("leaf entry must be (atom idx lo hi)".into()));
                }
                let idx: usize = expect_atom(&parts[1], "atom index")?
                    .parse()
                    .map_err(|_| CertError::Parse("malformed atom index".into()))?;
                let lo = parse_bound(&expect_atom(&parts[2], "lower bound")?)?;
                let hi = parse_bound(&expect_atom(&parts[3], "upper bound")?)?;
                facts.push(AtomFact { atom: idx, lo, hi });
            }
            Ok(CertNode::Facts { facts })
        }
        "point" => {
            if items.len() < 2 {
                return Err(CertError::Parse("point node needs a child".into()));
            }
            let mut bindings = Vec::new();
            for item in &items[1..items.len() - 1] {
                let Sexp::List(parts) = item else {
                    return Err(CertError::Parse("point bindings must be lists".into()));
                };
                if parts.len() != 2 {
                    return Err(CertError::Parse("point binding must be (name value)".into()));
                }
                let name = expect_atom(&parts[0], "binding name")?;
                let v = parse_rat_token(&expect_atom(&parts[1], "binding value")?)?;
                bindings.push((name, v));
            }
            let child = parse_node(items.last().unwrap())?;
            Ok(CertNode::Point { bindings, child: Box::new(child) })
        }
        "split" => {
            if items.len() != 5 {
                return Err(CertError::Parse("split node must be (split var at below above)".into()));
            }
            let var = expect_atom(&items[1], "split variable")?;
            let at = parse_rat_token(&expect_atom(&items[2], "split point")?)?;
            let below = parse_node(&items[3])?;
            let above = parse_node(&items[4])?;
            Ok(CertNode::Split {
                var,
                at,
                below: Box::new(below),
                above: Box::new(above),
            })
        }
        other => Err(CertError::Parse(format!("unknown node keyword '{other}'"))),
    }
}

/// Parse the canonical text form back into a structured certificate.
///
/// Header fields must appear in their fixed order: `format`, `verdict`,
/// `delta`, optional `atom-delta`, `formula`, then `box` for refutations,
/// then exactly one node.
pub fn parse_certificate(text: &str) -> Result<Certificate, CertError> {
    let toks = tokenize(text)?;
    let mut pos = 0;
    let top = parse_sexp(&toks, &mut pos)?;
    if pos != toks.len() {
        return Err(CertError::Parse("trailing content after certificate".into()));
    }
    let Sexp::List(items) = top else {
        return Err(CertError::Parse("expected a top-level list".into()));
    };
    let mut it = items.iter();
    let form = it
        .next()
        .ok_or_else(|| CertError::Parse("empty certificate".into()))
        .and_then(|h| expect_atom(h, "certificate kind"))?;
    if form != "witness" && form != "refutation" {
        return Err(CertError::Parse(format!("unknown certificate kind '{form}'")));
    }

    let mut field = |key: &str| -> Result<Vec<Sexp>, CertError> {
        match it.next() {
            Some(Sexp::List(parts))
                if parts.first().map(|h| matches!(h, Sexp::Atom(a) if a == key)) == Some(true) =>
            {
                Ok(parts[1..].to_vec())
            }
            _ => Err(CertError::Parse(format!("expected ({key} ...) field"))),
        }
    };

    let fmt_parts = field("format")?;
    if fmt_parts.len() != 1 {
        return Err(CertError::Parse("format field must hold one number".into()));
    }
    let format: u32 = expect_atom(&fmt_parts[0], "format number")?
        .parse()
        .map_err(|_| CertError::Parse("malformed format number".into()))?;

    let verdict_parts = field("verdict")?;
    if verdict_parts.len() != 1 {
        return Err(CertError::Parse("verdict field must hold one word".into()));
    }
    let verdict: Verdict = expect_atom(&verdict_parts[0], "verdict")?
        .parse()
        .map_err(|e: String| CertError::Parse(e))?;

    let delta_parts = field("delta")?;
    if delta_parts.len() != 1 {
        return Err(CertError::Parse("delta field must hold one rational".into()));
    }
    let delta = parse_rat_token(&expect_atom(&delta_parts[0], "delta")?)?;

    // Optional atom-delta, then formula; peek by cloning the iterator.
    let mut rest: Vec<&Sexp> = it.collect();
    let mut atom_deltas = Vec::new();
    let mut cursor = 0;
    if let Some(Sexp::List(parts)) = rest.first().copied() {
        if parts.first().map(|h| matches!(h, Sexp::Atom(a) if a == "atom-delta")) == Some(true) {
            for entry in &parts[1..] {
                let Sexp::List(kv) = entry else {
                    return Err(CertError::Parse("atom-delta entries must be lists".into()));
                };
                if kv.len() != 2 {
                    return Err(CertError::Parse("atom-delta entry must be (idx delta)".into()));
                }
                let idx: usize = expect_atom(&kv[0], "atom index")?
                    .parse()
                    .map_err(|_| CertError::Parse("malformed atom index".into()))?;
                let d = parse_rat_token(&expect_atom(&kv[1], "atom delta")?)?;
                atom_deltas.push((idx, d));
            }
            cursor = 1;
        }
    }

    let take_field = |rest: &mut Vec<&Sexp>, cursor: &mut usize, key: &str| -> Result<Vec<Sexp>, CertError> {
        match rest.get(*cursor) {
            Some(Sexp::List(parts))
                if parts.first().map(|h| matches!(h, Sexp::Atom(a) if a == key)) == Some(true) =>
            {
                *cursor += 1;
                Ok(parts[1..].to_vec())
            }
            _ => Err(CertError::Parse(format!("expected ({key} ...) field"))),
        }
    };

    let formula_parts = take_field(&mut rest, &mut cursor, "formula")?;
    if formula_parts.len() != 1 {
        return Err(CertError::Parse("formula field must hold one digest".into()));
    }
    let formula_digest = expect_atom(&formula_parts[0], "formula digest")?;

    let mut domain = Vec::new();
    if form == "refutation" {
        let box_parts = take_field(&mut rest, &mut cursor, "box")?;
        for entry in &box_parts {
            let Sexp::List(kv) = entry else {
                return Err(CertError::Parse("box entries must be lists".into()));
            };
            if kv.len() != 3 {
                return Err(CertError::Parse("box entry must be (name lo hi)".into()));
            }
            let name = expect_atom(&kv[0], "variable name")?;
            let lo = parse_rat_token(&expect_atom(&kv[1], "lower bound")?)?;
            let hi = parse_rat_token(&expect_atom(&kv[2], "upper bound")?)?;
            domain.push(Binding { name, lo, hi });
        }
    }

    if rest.len() != cursor + 1 {
        return Err(CertError::Parse("certificate must end with exactly one node".into()));
    }
    let root = parse_node(rest[cursor])?;

    let is_witness_verdict = matches!(verdict, Verdict::DeltaSat | Verdict::DeltaFalse);
    if is_witness_verdict != (form == "witness") {
        return Err(CertError::Parse("certificate kind does not match verdict".into()));
    }

    Ok(Certificate {
        format,
        verdict,
        delta,
        atom_deltas,
        formula_digest,
        domain,
        root,
    })
}

// ---------------------------------------------------------------------------
// Checking
// ---------------------------------------------------------------------------

/// Check a certificate against a formula, threshold, and overrides.
///
/// The checker re-derives every enclosure with `eval_term` on exact rational
/// cells and judges decisiveness from the *recorded* bounds, so a certificate
/// is accepted only when the recorded facts both cover the true enclosures
/// and decide the matrix at the claimed thresholds.
pub fn verify_certificate(
    cert: &Certificate,
    f: &Formula,
    delta: &Rat,
    atom_deltas: &[(usize, Rat)],
    ctx: &EvalCtx,
) -> CheckResult {
    match check(cert, f, delta, atom_deltas, ctx) {
        Ok(()) => CheckResult::Accepted,
        Err(msg) => CheckResult::Rejected(msg),
    }
}

struct Checker<'a> {
    blocks: Vec<PrenexBlock>,
    matrix: Formula,
    atoms_strict: Vec<bool>,
    atoms_shift: Vec<Rat>,
    atom_terms: Vec<crate::term::Term>,
    positive: bool,
    modes: Vec<Mode>,
    ctx: &'a EvalCtx<'a>,
}

fn check(
    cert: &Certificate,
    f: &Formula,
    delta: &Rat,
    atom_deltas: &[(usize, Rat)],
    ctx: &EvalCtx,
) -> Result<(), String> {
    if cert.format != 1 {
        return Err(format!("unsupported format {}", cert.format));
    }
    if cert.formula_digest != formula_digest(f) {
        return Err("formula mismatch".to_string());
    }
    if cert.delta != *delta {
        return Err("delta mismatch".to_string());
    }
    let mut expected_deltas: Vec<(usize, Rat)> = atom_deltas.to_vec();
    expected_deltas.sort_by_key(|(i, _)| *i);
    let mut recorded = cert.atom_deltas.clone();
    recorded.sort_by_key(|(i, _)| *i);
    if recorded != expected_deltas {
        return Err("per-atom delta mismatch".to_string());
    }

    let (blocks, matrix) = f.prenex().map_err(|e| e.to_string())?;
    let atoms = matrix.atoms();
    let n_atoms = atoms.len();
    let flavor_exists = blocks.first().map(|b| b.kind == QuantKind::Exists).unwrap_or(true);
    let positive = matches!(cert.verdict, Verdict::DeltaSat | Verdict::Valid);
    let vocab_ok = match cert.verdict {
        Verdict::DeltaSat | Verdict::Unsat => flavor_exists,
        Verdict::Valid | Verdict::DeltaFalse => !flavor_exists,
    };
    if !vocab_ok {
        return Err("verdict does not match the quantifier prefix".to_string());
    }

    let overrides: BTreeMap<usize, Rat> = expected_deltas.into_iter().collect();
    if let Some((&idx, _)) = overrides.iter().next_back() {
        if idx >= n_atoms {
            return Err(format!("per-atom delta index {idx} out of range"));
        }
    }
    let mut modes = Vec::with_capacity(n_atoms);
    for i in 0..n_atoms {
        let d = overrides.get(&i).cloned().unwrap_or_else(|| delta.clone());
        let mode = match (flavor_exists, positive) {
            (true, true) => Mode::Weakened(d),
            (true, false) => Mode::Original,
            (false, true) => Mode::Original,
            (false, false) => Mode::Strengthened(d),
        };
        modes.push(mode);
    }

    // Mirror of the emission rule: covers carry the outermost block's box as
    // an integrity echo, point-rooted certificates carry none.
    let cover_root = blocks
        .first()
        .map(|b| (b.kind == QuantKind::Exists) != positive)
        .unwrap_or(false);
    let expected_domain = if cover_root {
        blocks.first().map(|b| b.bindings.clone()).unwrap_or_default()
    } else {
        Vec::new()
    };
    if cert.domain != expected_domain {
        return Err("domain box does not match the formula".to_string());
    }

    let checker = Checker {
        atoms_strict: atoms.iter().map(|a| a.strict).collect(),
        atoms_shift: atoms.iter().map(|a| a.shift.clone()).collect(),
        atom_terms: atoms.iter().map(|a| a.term.clone()).collect(),
        blocks,
        matrix,
        positive,
        modes,
        ctx,
    };
    checker.walk(0, &IntervalBox::new(), &cert.root)
}

impl Checker<'_> {
    fn walk(&self, k: usize, env: &IntervalBox, node: &CertNode) -> Result<(), String> {
        if k == self.blocks.len() {
            let CertNode::Facts { facts } = node else {
                return Err("expected ground facts once all blocks are bound".to_string());
            };
            return self.check_facts(env, facts);
        }
        let block = &self.blocks[k];
        let point_role = (block.kind == QuantKind::Exists) == self.positive;
        if point_role {
            let CertNode::Point { bindings, child } = node else {
                return Err(format!(
                    "expected a point binding for quantifier block {}",
                    k + 1
                ));
            };
            if bindings.len() != block.bindings.len() {
                return Err(format!(
                    "point binds {} variables, block has {}",
                    bindings.len(),
                    block.bindings.len()
                ));
            }
            let mut env2 = env.clone();
            for ((name, v), b) in bindings.iter().zip(&block.bindings) {
                if *name != b.name {
                    return Err(format!("binding name '{name}' does not match block variable '{}'", b.name));
                }
                if *v < b.lo || *v > b.hi {
                    return Err(format!("witness coordinate {name} = {} lies outside its domain", cert_rat(v)));
                }
                env2 = env2.with(name.clone(), Interval::from_rat(v));
            }
            self.walk(k + 1, &env2, child)
        } else {
            let rect: Vec<(String, Rat, Rat)> = block
                .bindings
                .iter()
                .map(|b| (b.name.clone(), b.lo.clone(), b.hi.clone()))
                .collect();
            self.cover(k, rect, env, node)
        }
    }

    fn cover(
        &self,
        k: usize,
        rect: Vec<(String, Rat, Rat)>,
        env: &IntervalBox,
        node: &CertNode,
    ) -> Result<(), String> {
        match node {
            CertNode::Split { var, at, below, above } => {
                let i = rect
                    .iter()
                    .position(|(name, _, _)| name == var)
                    .ok_or_else(|| format!("split variable '{var}' is not bound by this block"))?;
                if !(*at > rect[i].1 && *at < rect[i].2) {
                    return Err(format!(
                        "cover gap: split of {var} at {} lies outside the cell",
                        cert_rat(at)
                    ));
                }
                let mut lo_rect = rect.clone();
                lo_rect[i].2 = at.clone();
                let mut hi_rect = rect;
                hi_rect[i].1 = at.clone();
                self.cover(k, lo_rect, env, below)?;
                self.cover(k, hi_rect, env, above)
            }
            leaf => {
                let mut env2 = env.clone();
                for (name, lo, hi) in &rect {
                    env2 = env2.with(name.clone(), Interval::from_rats(lo, hi));
                }
                self.walk(k + 1, &env2, leaf)
            }
        }
    }

    fn check_facts(&self, env: &IntervalBox, facts: &[AtomFact]) -> Result<(), String> {
        let mut status: BTreeMap<usize, TruthValue> = BTreeMap::new();
        for fact in facts {
            if fact.atom >= self.atom_terms.len() {
                return Err(format!("atom index {} out of range", fact.atom));
            }
            if status.contains_key(&fact.atom) {
                return Err(format!("duplicate fact for atom {}", fact.atom));
            }
            let own = eval_term(&self.atom_terms[fact.atom], env, self.ctx)
                .map_err(|e| format!("atom {} enclosure failed on this cell: {e}", fact.atom))?;
            if own.is_empty() {
                return Err(format!("atom {} has an empty enclosure on this cell", fact.atom));
            }
            if let Some(lo) = &fact.lo {
                if !own.lo().is_finite() || own.lo_rat() < *lo {
                    return Err(format!(
                        "cover gap: recorded bounds for atom {} do not contain the cell enclosure",
                        fact.atom
                    ));
                }
            }
            if let Some(hi) = &fact.hi {
                if !own.hi().is_finite() || own.hi_rat() > *hi {
                    return Err(format!(
                        "cover gap: recorded bounds for atom {} do not contain the cell enclosure",
                        fact.atom
                    ));
                }
            }
            let strict = self.atoms_strict[fact.atom];
            let theta = &self.atoms_shift[fact.atom] + self.modes[fact.atom].threshold_offset();
            let tv = if let Some(lo) = &fact.lo {
                if (strict && *lo > theta) || (!strict && *lo >= theta) {
                    Some(TruthValue::CertTrue)
                } else {
                    None
                }
            } else {
                None
            };
            let tv = tv.or_else(|| {
                fact.hi.as_ref().and_then(|hi| {
                    if (strict && *hi <= theta) || (!strict && *hi < theta) {
                        Some(TruthValue::CertFalse)
                    } else {
                        None
                    }
                })
            });
            let Some(tv) = tv else {
                return Err(format!("recorded bounds for atom {} decide nothing", fact.atom));
            };
            status.insert(fact.atom, tv);
        }
        let want = if self.positive { TruthValue::CertTrue } else { TruthValue::CertFalse };
        let mut idx = 0;
        let combined = combine(&self.matrix, &status, &mut idx);
        if combined == want {
            Ok(())
        } else {
            Err("recorded facts do not decide the formula on this cell".to_string())
        }
    }
}

/// Three-valued combination of recorded atom statuses over the matrix
/// structure; atoms without a recorded fact count as unknown.
fn combine(f: &Formula, status: &BTreeMap<usize, TruthValue>, idx: &mut usize) -> TruthValue {
    match f {
        Formula::Atom(_) => {
            let tv = status.get(idx).copied().unwrap_or(TruthValue::Unknown);
            *idx += 1;
            tv
        }
        Formula::And(children) => {
            let mut any_unknown = false;
            let mut any_false = false;
            for c in children {
                match combine(c, status, idx) {
                    TruthValue::CertFalse => any_false = true,
                    TruthValue::Unknown => any_unknown = true,
                    TruthValue::CertTrue => {}
                }
            }
            if any_false {
                TruthValue::CertFalse
            } else if any_unknown {
                TruthValue::Unknown
            } else {
                TruthValue::CertTrue
            }
        }
        Formula::Or(children) => {
            let mut any_unknown = false;
            let mut any_true = false;
            for c in children {
                match combine(c, status, idx) {
                    TruthValue::CertTrue => any_true = true,
                    TruthValue::Unknown => any_unknown = true,
                    TruthValue::CertFalse => {}
                }
            }
            if any_true {
                TruthValue::CertTrue
            } else if any_unknown {
                TruthValue::Unknown
            } else {
                TruthValue::CertFalse
            }
        }
        Formula::Quant(..) => TruthValue::Unknown,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::Atom;
    use crate::ode::OdeRegistry;
    use crate::term::Term;

    fn rat(n: i64, d: i64) -> Rat {
        Rat::new(BigInt::from(n), BigInt::from(d))
    }

    fn exists(name: &str, lo: Rat, hi: Rat, body: Formula) -> Formula {
        Formula::Quant(
            QuantKind::Exists,
            vec![Binding::new(name, lo, hi)],
            Box::new(body),
        )
    }

    fn forall(name: &str, lo: Rat, hi: Rat, body: Formula) -> Formula {
        Formula::Quant(
            QuantKind::Forall,
            vec![Binding::new(name, lo, hi)],
            Box::new(body),
        )
    }

    // ∃x ∈ [0, 2]. x ≥ 1, witnessed at x = 3/2.
    fn simple_exists() -> Formula {
        exists("x", rat(0, 1), rat(2, 1), Formula::Atom(Atom::ge(Term::var("x")).with_shift(rat(1, 1))))
    }

    fn witness_cert(f: &Formula, x: Rat, lo: Rat, hi: Rat) -> Certificate {
        Certificate {
            format: 1,
            verdict: Verdict::DeltaSat,
            delta: rat(1, 100),
            atom_deltas: vec![],
            formula_digest: formula_digest(f),
            domain: vec![],
            root: CertNode::Point {
                bindings: vec![("x".into(), x)],
                child: Box::new(CertNode::Facts {
                    facts: vec![AtomFact { atom: 0, lo: Some(lo), hi: Some(hi) }],
                }),
            },
        }
    }

    #[test]
    fn witness_certificate_is_accepted() {
        let registry = OdeRegistry::new();
        let ctx = EvalCtx::new(&registry);
        let f = simple_exists();
        let cert = witness_cert(&f, rat(3, 2), rat(3, 2), rat(3, 2));
        let res = verify_certificate(&cert, &f, &rat(1, 100), &[], &ctx);
        assert_eq!(res, CheckResult::Accepted);
    }

    #[test]
    fn witness_outside_domain_is_rejected() {
        let registry = OdeRegistry::new();
        let ctx = EvalCtx::new(&registry);
        let f = simple_exists();
        let cert = witness_cert(&f, rat(5, 2), rat(5, 2), rat(5, 2));
        let res = verify_certificate(&cert, &f, &rat(1, 100), &[], &ctx);
        assert!(matches!(res, CheckResult::Rejected(m) if m.contains("outside its domain")));
    }

    #[test]
    fn perturbed_witness_fails_containment() {
        let registry = OdeRegistry::new();
        let ctx = EvalCtx::new(&registry);
        let f = simple_exists();
        // Enclosure recorded for x = 3/2 but the point moved to 1/2: the
        // re-derived enclosure is no longer inside the recorded bounds.
        let cert = witness_cert(&f, rat(1, 2), rat(3, 2), rat(3, 2));
        let res = verify_certificate(&cert, &f, &rat(1, 100), &[], &ctx);
        assert!(matches!(res, CheckResult::Rejected(m) if m.contains("cover gap")));
    }

    #[test]
    fn digest_mismatch_is_reported_exactly() {
        let registry = OdeRegistry::new();
        let ctx = EvalCtx::new(&registry);
        let f = simple_exists();
        let other = exists(
            "x",
            rat(0, 1),
            rat(2, 1),
            Formula::Atom(Atom::ge(Term::var("x")).with_shift(rat(1, 2))),
        );
        let cert = witness_cert(&f, rat(3, 2), rat(3, 2), rat(3, 2));
        let res = verify_certificate(&cert, &other, &rat(1, 100), &[], &ctx);
        assert_eq!(res, CheckResult::Rejected("formula mismatch".to_string()));
    }

    // ∃x ∈ [0, 1]. x − 2 > 0 is unsatisfiable; one leaf covers the whole box.
    #[test]
    fn refutation_single_leaf_is_accepted() {
        let registry = OdeRegistry::new();
        let ctx = EvalCtx::new(&registry);
        let f = exists(
            "x",
            rat(0, 1),
            rat(1, 1),
            Formula::Atom(Atom::gt(Term::var("x").sub(Term::int(2)))),
        );
        let cert = Certificate {
            format: 1,
            verdict: Verdict::Unsat,
            delta: rat(1, 100),
            atom_deltas: vec![],
            formula_digest: formula_digest(&f),
            domain: vec![Binding::new("x", rat(0, 1), rat(1, 1))],
            root: CertNode::Facts {
                facts: vec![AtomFact { atom: 0, lo: Some(rat(-2, 1)), hi: Some(rat(-1, 1)) }],
            },
        };
        let res = verify_certificate(&cert, &f, &rat(1, 100), &[], &ctx);
        assert_eq!(res, CheckResult::Accepted);
    }

    // ∃x ∈ [0, 1]. x ≥ 3/4 ∧ 1/4 − x ≥ 0 refuted by a two-leaf split at 1/2.
    fn contradictory_conjunction() -> Formula {
        exists(
            "x",
            rat(0, 1),
            rat(1, 1),
            Formula::and(vec![
                Formula::Atom(Atom::ge(Term::var("x")).with_shift(rat(3, 4))),
                Formula::Atom(Atom::ge(Term::konst(rat(1, 4)).sub(Term::var("x")))),
            ]),
        )
    }

    fn split_refutation(at: Rat) -> Certificate {
        let f = contradictory_conjunction();
        Certificate {
            format: 1,
            verdict: Verdict::Unsat,
            delta: rat(1, 100),
            atom_deltas: vec![],
            formula_digest: formula_digest(&f),
            domain: vec![Binding::new("x", rat(0, 1), rat(1, 1))],
            root: CertNode::Split {
                var: "x".into(),
                at,
                below: Box::new(CertNode::Facts {
                    facts: vec![AtomFact { atom: 0, lo: Some(rat(0, 1)), hi: Some(rat(1, 2)) }],
                }),
                above: Box::new(CertNode::Facts {
                    facts: vec![AtomFact { atom: 1, lo: Some(rat(-3, 4)), hi: Some(rat(-1, 4)) }],
                }),
            },
        }
    }

    #[test]
    fn refutation_with_split_is_accepted() {
        let registry = OdeRegistry::new();
        let ctx = EvalCtx::new(&registry);
        let f = contradictory_conjunction();
        let res = verify_certificate(&split_refutation(rat(1, 2)), &f, &rat(1, 100), &[], &ctx);
        assert_eq!(res, CheckResult::Accepted);
    }

    #[test]
    fn shifted_split_is_rejected() {
        let registry = OdeRegistry::new();
        let ctx = EvalCtx::new(&registry);
        let f = contradictory_conjunction();
        // Moving the cut to 3/4 widens the lower cell beyond its recorded
        // enclosure, so containment fails there.
        let res = verify_certificate(&split_refutation(rat(3, 4)), &f, &rat(1, 100), &[], &ctx);
        assert!(matches!(res, CheckResult::Rejected(m) if m.contains("cover gap")));
    }

    #[test]
    fn spliced_out_split_leaves_a_gap() {
        let registry = OdeRegistry::new();
        let ctx = EvalCtx::new(&registry);
        let f = contradictory_conjunction();
        let mut cert = split_refutation(rat(1, 2));
        // Replace the split by its lower child: the single leaf now claims
        // the whole domain with bounds derived on only half of it.
        let CertNode::Split { below, .. } = cert.root.clone() else { unreachable!() };
        cert.root = *below;
        let res = verify_certificate(&cert, &f, &rat(1, 100), &[], &ctx);
        assert!(matches!(res, CheckResult::Rejected(m) if m.contains("cover gap")));
    }

    #[test]
    fn indecisive_facts_are_rejected() {
        let registry = OdeRegistry::new();
        let ctx = EvalCtx::new(&registry);
        let f = simple_exists();
        // Recorded bounds contain the enclosure but stay on the wrong side of
        // the weakened threshold.
        let cert = witness_cert(&f, rat(1, 2), rat(0, 1), rat(1, 1));
        let res = verify_certificate(&cert, &f, &rat(1, 100), &[], &ctx);
        assert!(matches!(res, CheckResult::Rejected(m) if m.contains("decide nothing")));
    }

    #[test]
    fn text_round_trip_preserves_structure() {
        let cert = split_refutation(rat(1, 2));
        let text = cert.to_text();
        let back = parse_certificate(&text).expect("reparse");
        assert_eq!(back, cert);
        assert_eq!(back.to_text(), text);
        assert!(text.ends_with(")\n"));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn witness_text_round_trip() {
        let f = simple_exists();
        let cert = witness_cert(&f, rat(3, 2), rat(3, 2), rat(3, 2));
        let text = cert.to_text();
        assert!(text.starts_with("(witness\n (format 1)\n (verdict delta-sat)\n (delta 1/100)\n"));
        let back = parse_certificate(&text).expect("reparse");
        assert_eq!(back, cert);
    }

    #[test]
    fn valid_cover_for_universal_formula() {
        let registry = OdeRegistry::new();
        let ctx = EvalCtx::new(&registry);
        // ∀x ∈ [−1, 1]. x² ≥ 0 with a single covering leaf.
        let f = forall(
            "x",
            rat(-1, 1),
            rat(1, 1),
            Formula::Atom(Atom::ge(Term::var("x").pow(2))),
        );
        let cert = Certificate {
            format: 1,
            verdict: Verdict::Valid,
            delta: rat(1, 1000),
            atom_deltas: vec![],
            formula_digest: formula_digest(&f),
            domain: vec![Binding::new("x", rat(-1, 1), rat(1, 1))],
            root: CertNode::Facts {
                facts: vec![AtomFact { atom: 0, lo: Some(rat(0, 1)), hi: Some(rat(1, 1)) }],
            },
        };
        let res = verify_certificate(&cert, &f, &rat(1, 1000), &[], &ctx);
        assert_eq!(res, CheckResult::Accepted);
    }

    #[test]
    fn vocabulary_must_match_prefix() {
        let registry = OdeRegistry::new();
        let ctx = EvalCtx::new(&registry);
        let f = simple_exists();
        let mut cert = witness_cert(&f, rat(3, 2), rat(3, 2), rat(3, 2));
        cert.verdict = Verdict::Valid;
        cert.domain = vec![Binding::new("x", rat(0, 1), rat(2, 1))];
        let res = verify_certificate(&cert, &f, &rat(1, 100), &[], &ctx);
        assert!(matches!(res, CheckResult::Rejected(m) if m.contains("quantifier prefix")));
    }

    #[test]
    fn per_atom_override_changes_threshold() {
        let registry = OdeRegistry::new();
        let ctx = EvalCtx::new(&registry);
        let f = simple_exists();
        // At x = 1/2 the atom x ≥ 1 only passes when its own threshold is
        // weakened by 1/2.
        let cert = Certificate {
            atom_deltas: vec![(0, rat(1, 2))],
            ..witness_cert(&f, rat(1, 2), rat(1, 2), rat(1, 2))
        };
        let res = verify_certificate(&cert, &f, &rat(1, 100), &[(0, rat(1, 2))], &ctx);
        assert_eq!(res, CheckResult::Accepted);
        // The same certificate without the override must fail.
        let plain = witness_cert(&f, rat(1, 2), rat(1, 2), rat(1, 2));
        let res = verify_certificate(&plain, &f, &rat(1, 100), &[], &ctx);
        assert!(matches!(res, CheckResult::Rejected(_)));
    }
}

//! Problem-file model: declarations, assertions, and exactly one command,
//! parsed from the S-expression surface syntax.

use crate::sexp::{read_all, Pos, Sexp, SyntaxError};
use deltactl_core::rational::parse_rat;
use deltactl_core::{Binding, CmpOp, Rat, RawFormula, Term};
use std::collections::BTreeMap;
use std::fmt;

/// Stable machine-readable error codes; one per failure family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorCode {
    Syntax,
    Undeclared,
    Arity,
    Io,
    Unsupported,
    Inconclusive,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Syntax => "E_SYNTAX",
            ErrorCode::Undeclared => "E_UNDECLARED",
            ErrorCode::Arity => "E_ARITY",
            ErrorCode::Io => "E_IO",
            ErrorCode::Unsupported => "E_UNSUPPORTED",
            ErrorCode::Inconclusive => "E_INCONCLUSIVE",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub code: ErrorCode,
    pub message: String,
}

impl CliError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> CliError {
        CliError {
            code,
            message: message.into(),
        }
    }

    fn at(code: ErrorCode, pos: Pos, message: impl fmt::Display) -> CliError {
        CliError::new(code, format!("{pos}: {message}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code.as_str(), self.message)
    }
}

impl std::error::Error for CliError {}

impl From<SyntaxError> for CliError {
    fn from(e: SyntaxError) -> CliError {
        CliError::at(ErrorCode::Syntax, e.pos, e.message)
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Clone, Debug, PartialEq)]
pub struct OdeDecl {
    pub name: String,
    pub states: Vec<String>,
    pub rhs: Vec<Term>,
    pub domain: Vec<(Rat, Rat)>,
    pub horizon: Option<Rat>,
}

/// Options shared by every solving command; `None` defers to flag, then
/// environment, then built-in default.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveOpts {
    pub delta: Option<Rat>,
    pub max_depth: Option<u32>,
    pub timeout_ms: Option<u64>,
    pub workers: Option<usize>,
    pub step: Option<Rat>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    CheckSat {
        opts: SolveOpts,
    },
    Classify,
    LyapunovCheck {
        system: String,
        candidate: Term,
        strict: Option<bool>,
        opts: SolveOpts,
    },
    LyapunovSynth {
        system: String,
        candidate: Term,
        params: Vec<(String, Rat, Rat)>,
        strict: Option<bool>,
        opts: SolveOpts,
    },
    Stability {
        system: String,
        eps: Option<Rat>,
        horizon: Option<Rat>,
        margin: Option<Rat>,
        state_box: Option<Vec<(Rat, Rat)>>,
        opts: SolveOpts,
    },
    Reach {
        system: String,
        init: Vec<Rat>,
        goal: Vec<Rat>,
        d1: Option<Rat>,
        d2: Option<Rat>,
        d3: Option<Rat>,
        horizon: Rat,
        opts: SolveOpts,
    },
    PidTune {
        name: String,
        states: Vec<String>,
        rhs: Vec<Term>,
        domain: Vec<(Rat, Rat)>,
        input: String,
        output: String,
        reference: Term,
        init: Vec<Rat>,
        kp: (Rat, Rat),
        ki: (Rat, Rat),
        kd: (Rat, Rat),
        spec: Vec<(Rat, Rat, Rat)>,
        opts: SolveOpts,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::CheckSat { .. } => "check-sat",
            Command::Classify => "classify",
            Command::LyapunovCheck { .. } => "lyapunov-check",
            Command::LyapunovSynth { .. } => "lyapunov-synth",
            Command::Stability { .. } => "stability",
            Command::Reach { .. } => "reach",
            Command::PidTune { .. } => "pid-tune",
        }
    }

    pub fn opts(&self) -> SolveOpts {
        match self {
            Command::CheckSat { opts }
            | Command::LyapunovCheck { opts, .. }
            | Command::LyapunovSynth { opts, .. }
            | Command::Stability { opts, .. }
            | Command::Reach { opts, .. }
            | Command::PidTune { opts, .. } => opts.clone(),
            Command::Classify => SolveOpts::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemFile {
    pub vars: Vec<(String, Rat, Rat)>,
    pub consts: Vec<(String, Rat)>,
    pub odes: Vec<OdeDecl>,
    pub assertions: Vec<RawFormula>,
    pub command: Command,
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

struct Parser {
    vars: Vec<(String, Rat, Rat)>,
    consts: Vec<(String, Rat)>,
    odes: Vec<OdeDecl>,
    assertions: Vec<RawFormula>,
    command: Option<Command>,
}

/// Variables a term may mention: each entry is a visible name.
struct Scope<'p> {
    parser: &'p Parser,
    /// When set, only these names (plus constants) resolve — used for
    /// command payloads over their own variables (ODE states, gains, `t`).
    restricted: Option<Vec<String>>,
    /// Quantifier binders currently in scope.
    bound: Vec<String>,
}

impl<'p> Scope<'p> {
    fn declared(parser: &'p Parser) -> Scope<'p> {
        Scope {
            parser,
            restricted: None,
            bound: Vec::new(),
        }
    }

    fn names(parser: &'p Parser, names: Vec<String>) -> Scope<'p> {
        Scope {
            parser,
            restricted: Some(names),
            bound: Vec::new(),
        }
    }

    fn lookup_const(&self, name: &str) -> Option<&Rat> {
        self.parser
            .consts
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
    }

    fn resolves_var(&self, name: &str) -> bool {
        if self.bound.iter().any(|b| b == name) {
            return true;
        }
        match &self.restricted {
            Some(names) => names.iter().any(|n| n == name),
            None => self.parser.vars.iter().any(|(n, _, _)| n == name),
        }
    }
}

fn err_syntax(pos: Pos, msg: impl fmt::Display) -> CliError {
    CliError::at(ErrorCode::Syntax, pos, msg)
}

fn expect_sym<'a>(s: &'a Sexp, what: &str) -> Result<(&'a str, Pos)> {
    match s {
        Sexp::Sym(text, pos) => Ok((text, *pos)),
        other => Err(err_syntax(other.pos(), format!("expected {what}"))),
    }
}

fn parse_number(s: &Sexp) -> Result<Rat> {
    let (text, pos) = expect_sym(s, "a number")?;
    parse_rat(text).map_err(|e| err_syntax(pos, e))
}

fn parse_range(s: &Sexp) -> Result<(Rat, Rat)> {
    match s {
        Sexp::Bracket(items, pos) => {
            if items.len() != 2 {
                return Err(err_syntax(*pos, "range must be `[lo hi]`"));
            }
            let lo = parse_number(&items[0])?;
            let hi = parse_number(&items[1])?;
            if lo > hi {
                return Err(err_syntax(*pos, "range has lo > hi"));
            }
            Ok((lo, hi))
        }
        other => Err(err_syntax(other.pos(), "expected a `[lo hi]` range")),
    }
}

fn is_name(text: &str) -> bool {
    let mut chars = text.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn parse_name(s: &Sexp) -> Result<String> {
    let (text, pos) = expect_sym(s, "a name")?;
    if !is_name(text) {
        return Err(err_syntax(pos, format!("invalid name `{text}`")));
    }
    Ok(text.to_string())
}

fn parse_term(s: &Sexp, scope: &mut Scope<'_>) -> Result<Term> {
    match s {
        Sexp::Sym(text, pos) => {
            if let Ok(r) = parse_rat(text) {
                return Ok(Term::konst(r));
            }
            if !is_name(text) {
                return Err(err_syntax(*pos, format!("invalid token `{text}`")));
            }
            if scope.resolves_var(text) {
                return Ok(Term::var(text.clone()));
            }
            if let Some(v) = scope.lookup_const(text) {
                return Ok(Term::konst(v.clone()));
            }
            Err(CliError::at(
                ErrorCode::Undeclared,
                *pos,
                format!("undeclared identifier `{text}`"),
            ))
        }
        Sexp::Paren(items, pos) => {
            let (head, head_pos) = match items.first() {
                Some(h) => expect_sym(h, "an operator")?,
                None => return Err(err_syntax(*pos, "empty term")),
            };
            let args = &items[1..];
            let arity = |want: usize| -> Result<()> {
                if args.len() != want {
                    return Err(CliError::at(
                        ErrorCode::Arity,
                        *pos,
                        format!("`{head}` takes {want} argument(s), got {}", args.len()),
                    ));
                }
                Ok(())
            };
            let unary = |scope: &mut Scope<'_>, f: fn(Term) -> Term| -> Result<Term> {
                arity(1)?;
                Ok(f(parse_term(&args[0], scope)?))
            };
            match head {
                "+" | "*" => {
                    if args.len() < 2 {
                        return Err(CliError::at(
                            ErrorCode::Arity,
                            *pos,
                            format!("`{head}` takes at least 2 arguments, got {}", args.len()),
                        ));
                    }
                    let mut acc = parse_term(&args[0], scope)?;
                    for a in &args[1..] {
                        let rhs = parse_term(a, scope)?;
                        acc = if head == "+" { acc.add(rhs) } else { acc.mul(rhs) };
                    }
                    Ok(acc)
                }
                "-" => match args.len() {
                    1 => Ok(parse_term(&args[0], scope)?.neg()),
                    2 => Ok(parse_term(&args[0], scope)?.sub(parse_term(&args[1], scope)?)),
                    n => Err(CliError::at(
                        ErrorCode::Arity,
                        *pos,
                        format!("`-` takes 1 or 2 arguments, got {n}"),
                    )),
                },
                "/" => {
                    arity(2)?;
                    Ok(parse_term(&args[0], scope)?.div(parse_term(&args[1], scope)?))
                }
                "min" | "max" => {
                    arity(2)?;
                    let a = parse_term(&args[0], scope)?;
                    let b = parse_term(&args[1], scope)?;
                    Ok(if head == "min" { a.min(b) } else { a.max(b) })
                }
                "neg" => unary(scope, Term::neg),
                "abs" => unary(scope, Term::abs),
                "sqrt" => unary(scope, Term::sqrt),
                "exp" => unary(scope, Term::exp),
                "log" => unary(scope, Term::log),
                "sin" => unary(scope, Term::sin),
                "cos" => unary(scope, Term::cos),
                "pow" => {
                    arity(2)?;
                    let base = parse_term(&args[0], scope)?;
                    let (etext, epos) = expect_sym(&args[1], "an integer exponent")?;
                    let e: i32 = etext
                        .parse()
                        .map_err(|_| err_syntax(epos, format!("bad integer exponent `{etext}`")))?;
                    Ok(base.pow(e))
                }
                "flow" => {
                    arity(4)?;
                    let sys_name = parse_name(&args[0])?;
                    let ode = scope
                        .parser
                        .odes
                        .iter()
                        .find(|o| o.name == sys_name)
                        .ok_or_else(|| {
                            CliError::at(
                                ErrorCode::Undeclared,
                                args[0].pos(),
                                format!("undeclared ode system `{sys_name}`"),
                            )
                        })?;
                    let dim = ode.states.len();
                    let init_items = match &args[1] {
                        Sexp::Paren(items, _) => items,
                        other => {
                            return Err(err_syntax(
                                other.pos(),
                                "flow initial state must be `(term ...)`",
                            ))
                        }
                    };
                    if init_items.len() != dim {
                        return Err(CliError::at(
                            ErrorCode::Arity,
                            args[1].pos(),
                            format!(
                                "system `{sys_name}` has {dim} state(s), got {} initial term(s)",
                                init_items.len()
                            ),
                        ));
                    }
                    let init: Vec<Term> = init_items
                        .iter()
                        .map(|i| parse_term(i, scope))
                        .collect::<Result<_>>()?;
                    let time = parse_term(&args[2], scope)?;
                    let (ctext, cpos) = expect_sym(&args[3], "a component index")?;
                    let comp: usize = ctext
                        .parse()
                        .map_err(|_| err_syntax(cpos, format!("bad component index `{ctext}`")))?;
                    if comp >= dim {
                        return Err(CliError::at(
                            ErrorCode::Arity,
                            cpos,
                            format!("component {comp} out of range for `{sys_name}` (dim {dim})"),
                        ));
                    }
                    Ok(Term::flow(sys_name, comp, init, time))
                }
                _ => Err(err_syntax(
                    Pos {
                        line: head_pos.line,
                        col: head_pos.col,
                    },
                    format!("unknown operator `{head}`"),
                )),
            }
        }
        Sexp::Bracket(_, pos) => Err(err_syntax(*pos, "unexpected range in term position")),
    }
}

fn parse_binders(s: &Sexp, scope: &mut Scope<'_>) -> Result<Vec<Binding>> {
    let items = match s {
        Sexp::Paren(items, _) => items,
        other => return Err(err_syntax(other.pos(), "expected a binder list `((x [lo hi]) ...)`")),
    };
    if items.is_empty() {
        return Err(err_syntax(s.pos(), "binder list cannot be empty"));
    }
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        let pair = match item {
            Sexp::Paren(pair, _) => pair,
            other => return Err(err_syntax(other.pos(), "expected a binder `(x [lo hi])`")),
        };
        if pair.len() != 2 {
            return Err(err_syntax(item.pos(), "binder must be `(x [lo hi])`"));
        }
        let name = parse_name(&pair[0])?;
        let (lo, hi) = parse_range(&pair[1])?;
        scope.bound.push(name.clone());
        out.push(Binding::new(name, lo, hi));
    }
    Ok(out)
}

fn parse_formula(s: &Sexp, scope: &mut Scope<'_>) -> Result<RawFormula> {
    let (items, pos) = match s {
        Sexp::Paren(items, pos) => (items, *pos),
        other => return Err(err_syntax(other.pos(), "expected a formula")),
    };
    let (head, _) = match items.first() {
        Some(h) => expect_sym(h, "a connective or comparison")?,
        None => return Err(err_syntax(pos, "empty formula")),
    };
    let args = &items[1..];
    let cmp = |op: CmpOp, scope: &mut Scope<'_>| -> Result<RawFormula> {
        if args.len() != 2 {
            return Err(CliError::at(
                ErrorCode::Arity,
                pos,
                format!("`{head}` takes 2 arguments, got {}", args.len()),
            ));
        }
        let lhs = parse_term(&args[0], scope)?;
        let rhs = parse_term(&args[1], scope)?;
        Ok(RawFormula::Cmp(lhs, op, rhs))
    };
    match head {
        "=" => cmp(CmpOp::Eq, scope),
        "!=" => cmp(CmpOp::Ne, scope),
        "<" => cmp(CmpOp::Lt, scope),
        "<=" => cmp(CmpOp::Le, scope),
        ">" => cmp(CmpOp::Gt, scope),
        ">=" => cmp(CmpOp::Ge, scope),
        "and" | "or" => {
            if args.is_empty() {
                return Err(CliError::at(
                    ErrorCode::Arity,
                    pos,
                    format!("`{head}` needs at least one argument"),
                ));
            }
            let parts: Vec<RawFormula> = args
                .iter()
                .map(|a| parse_formula(a, scope))
                .collect::<Result<_>>()?;
            Ok(if head == "and" {
                RawFormula::And(parts)
            } else {
                RawFormula::Or(parts)
            })
        }
        "not" => {
            if args.len() != 1 {
                return Err(CliError::at(ErrorCode::Arity, pos, "`not` takes 1 argument"));
            }
            Ok(RawFormula::Not(Box::new(parse_formula(&args[0], scope)?)))
        }
        "=>" => {
            if args.len() != 2 {
                return Err(CliError::at(ErrorCode::Arity, pos, "`=>` takes 2 arguments"));
            }
            Ok(RawFormula::Implies(
                Box::new(parse_formula(&args[0], scope)?),
                Box::new(parse_formula(&args[1], scope)?),
            ))
        }
        "exists" | "forall" => {
            if args.len() != 2 {
                return Err(CliError::at(
                    ErrorCode::Arity,
                    pos,
                    format!("`{head}` takes a binder list and a body"),
                ));
            }
            let depth = scope.bound.len();
            let binders = parse_binders(&args[0], scope)?;
            let body = parse_formula(&args[1], scope)?;
            scope.bound.truncate(depth);
            Ok(if head == "exists" {
                RawFormula::Exists(binders, Box::new(body))
            } else {
                RawFormula::Forall(binders, Box::new(body))
            })
        }
        _ => Err(err_syntax(pos, format!("unknown formula head `{head}`"))),
    }
}

/// Keyword-option map: `:kw value :kw value ...` from a tail of items.
struct KwArgs<'a> {
    pairs: BTreeMap<&'a str, &'a Sexp>,
    pos: Pos,
}

impl<'a> KwArgs<'a> {
    fn parse(items: &'a [Sexp], pos: Pos, allowed: &[&str]) -> Result<KwArgs<'a>> {
        let mut pairs = BTreeMap::new();
        let mut i = 0;
        while i < items.len() {
            let (kw, kw_pos) = expect_sym(&items[i], "a `:keyword`")?;
            let Some(name) = kw.strip_prefix(':') else {
                return Err(err_syntax(kw_pos, format!("expected a `:keyword`, got `{kw}`")));
            };
            if !allowed.contains(&name) {
                return Err(err_syntax(kw_pos, format!("unknown option `:{name}`")));
            }
            let value = items
                .get(i + 1)
                .ok_or_else(|| err_syntax(kw_pos, format!("option `:{name}` needs a value")))?;
            if pairs.insert(name, value).is_some() {
                return Err(err_syntax(kw_pos, format!("duplicate option `:{name}`")));
            }
            i += 2;
        }
        Ok(KwArgs { pairs, pos })
    }

    fn get(&self, name: &str) -> Option<&'a Sexp> {
        self.pairs.get(name).copied()
    }

    fn require(&self, name: &str) -> Result<&'a Sexp> {
        self.get(name)
            .ok_or_else(|| err_syntax(self.pos, format!("missing required option `:{name}`")))
    }

    fn rat(&self, name: &str) -> Result<Option<Rat>> {
        self.get(name).map(parse_number).transpose()
    }

    fn on_off(&self, name: &str) -> Result<Option<bool>> {
        match self.get(name) {
            None => Ok(None),
            Some(v) => {
                let (text, pos) = expect_sym(v, "`on` or `off`")?;
                match text {
                    "on" => Ok(Some(true)),
                    "off" => Ok(Some(false)),
                    _ => Err(err_syntax(pos, format!("`:{name}` must be `on` or `off`"))),
                }
            }
        }
    }

    fn uint<T: std::str::FromStr>(&self, name: &str) -> Result<Option<T>> {
        match self.get(name) {
            None => Ok(None),
            Some(v) => {
                let (text, pos) = expect_sym(v, "an integer")?;
                text.parse::<T>()
                    .map(Some)
                    .map_err(|_| err_syntax(pos, format!("`:{name}` must be a non-negative integer")))
            }
        }
    }

    fn solve_opts(&self) -> Result<SolveOpts> {
        Ok(SolveOpts {
            delta: self.rat("delta")?,
            max_depth: self.uint("max-depth")?,
            timeout_ms: self.uint("timeout-ms")?,
            workers: self.uint("workers")?,
            step: self.rat("step")?,
        })
    }
}

const SOLVE_KW: [&str; 5] = ["delta", "max-depth", "timeout-ms", "workers", "step"];

fn with_solve_kw(extra: &[&str]) -> Vec<&'static str> {
    // Lifetimes: every keyword here is a literal.
    let mut all: Vec<&'static str> = SOLVE_KW.to_vec();
    for e in extra {
        for lit in [
            "system",
            "candidate",
            "strict",
            "params",
            "eps",
            "horizon",
            "margin",
            "box",
            "init",
            "goal",
            "d1",
            "d2",
            "d3",
            "name",
            "states",
            "rhs",
            "domain",
            "input",
            "output",
            "reference",
            "kp",
            "ki",
            "kd",
            "spec",
        ] {
            if lit == *e {
                all.push(lit);
            }
        }
    }
    all
}

fn parse_rat_list(s: &Sexp, what: &str) -> Result<Vec<Rat>> {
    match s {
        Sexp::Paren(items, _) => items.iter().map(parse_number).collect(),
        other => Err(err_syntax(other.pos(), format!("{what} must be `(num ...)`"))),
    }
}

fn parse_range_list(s: &Sexp, what: &str) -> Result<Vec<(Rat, Rat)>> {
    match s {
        Sexp::Paren(items, _) => items.iter().map(parse_range).collect(),
        other => Err(err_syntax(other.pos(), format!("{what} must be `([lo hi] ...)`"))),
    }
}

impl Parser {
    fn new() -> Parser {
        Parser {
            vars: Vec::new(),
            consts: Vec::new(),
            odes: Vec::new(),
            assertions: Vec::new(),
            command: None,
        }
    }

    fn name_taken(&self, name: &str) -> bool {
        self.vars.iter().any(|(n, _, _)| n == name)
            || self.consts.iter().any(|(n, _)| n == name)
            || self.odes.iter().any(|o| o.name == name)
    }

    fn declare_var(&mut self, args: &[Sexp], pos: Pos) -> Result<()> {
        if args.len() != 2 {
            return Err(err_syntax(pos, "usage: (declare-var NAME [lo hi])"));
        }
        let name = parse_name(&args[0])?;
        if self.name_taken(&name) {
            return Err(err_syntax(args[0].pos(), format!("`{name}` is already declared")));
        }
        let (lo, hi) = parse_range(&args[1])?;
        self.vars.push((name, lo, hi));
        Ok(())
    }

    fn declare_const(&mut self, args: &[Sexp], pos: Pos) -> Result<()> {
        if args.len() != 2 {
            return Err(err_syntax(pos, "usage: (declare-const NAME VALUE)"));
        }
        let name = parse_name(&args[0])?;
        if self.name_taken(&name) {
            return Err(err_syntax(args[0].pos(), format!("`{name}` is already declared")));
        }
        let value = parse_number(&args[1])?;
        self.consts.push((name, value));
        Ok(())
    }

    fn declare_ode(&mut self, args: &[Sexp], pos: Pos) -> Result<()> {
        if args.len() < 2 {
            return Err(err_syntax(
                pos,
                "usage: (declare-ode NAME ((state term) ...) :domain ([lo hi] ...) [:horizon T])",
            ));
        }
        let name = parse_name(&args[0])?;
        if self.name_taken(&name) {
            return Err(err_syntax(args[0].pos(), format!("`{name}` is already declared")));
        }
        let field_items = match &args[1] {
            Sexp::Paren(items, _) => items,
            other => return Err(err_syntax(other.pos(), "expected `((state term) ...)`")),
        };
        if field_items.is_empty() {
            return Err(err_syntax(args[1].pos(), "ode system needs at least one state"));
        }
        let mut states = Vec::with_capacity(field_items.len());
        let mut rhs_forms = Vec::with_capacity(field_items.len());
        for item in field_items {
            let pair = match item {
                Sexp::Paren(pair, _) if pair.len() == 2 => pair,
                other => return Err(err_syntax(other.pos(), "expected `(state term)`")),
            };
            let state = parse_name(&pair[0])?;
            if states.contains(&state) {
                return Err(err_syntax(pair[0].pos(), format!("duplicate state `{state}`")));
            }
            states.push(state);
            rhs_forms.push(&pair[1]);
        }
        let kw = KwArgs::parse(&args[2..], pos, &["domain", "horizon"])?;
        let domain = parse_range_list(kw.require("domain")?, ":domain")?;
        if domain.len() != states.len() {
            return Err(CliError::at(
                ErrorCode::Arity,
                pos,
                format!("{} state(s) but {} domain range(s)", states.len(), domain.len()),
            ));
        }
        let horizon = kw.rat("horizon")?;
        let mut scope = Scope::names(self, states.clone());
        let rhs: Vec<Term> = rhs_forms
            .iter()
            .map(|f| parse_term(f, &mut scope))
            .collect::<Result<_>>()?;
        self.odes.push(OdeDecl {
            name,
            states,
            rhs,
            domain,
            horizon,
        });
        Ok(())
    }

    fn ode_named(&self, s: &Sexp) -> Result<&OdeDecl> {
        let name = parse_name(s)?;
        self.odes.iter().find(|o| o.name == name).ok_or_else(|| {
            CliError::at(
                ErrorCode::Undeclared,
                s.pos(),
                format!("undeclared ode system `{name}`"),
            )
        })
    }

    fn parse_command(&mut self, head: &str, args: &[Sexp], pos: Pos) -> Result<Command> {
        match head {
            "check-sat" => {
                let kw = KwArgs::parse(args, pos, &SOLVE_KW)?;
                Ok(Command::CheckSat {
                    opts: kw.solve_opts()?,
                })
            }
            "classify" => {
                KwArgs::parse(args, pos, &[])?;
                Ok(Command::Classify)
            }
            "lyapunov-check" | "lyapunov-synth" => {
                let allowed = with_solve_kw(&["system", "candidate", "strict", "params"]);
                let kw = KwArgs::parse(args, pos, &allowed)?;
                let system = self.ode_named(kw.require("system")?)?.clone();
                let strict = kw.on_off("strict")?;
                let opts = kw.solve_opts()?;
                let params: Vec<(String, Rat, Rat)> = match kw.get("params") {
                    None => Vec::new(),
                    Some(s) => {
                        let items = match s {
                            Sexp::Paren(items, _) => items,
                            other => {
                                return Err(err_syntax(
                                    other.pos(),
                                    ":params must be `((p [lo hi]) ...)`",
                                ))
                            }
                        };
                        items
                            .iter()
                            .map(|item| {
                                let pair = match item {
                                    Sexp::Paren(pair, _) if pair.len() == 2 => pair,
                                    other => {
                                        return Err(err_syntax(other.pos(), "expected `(p [lo hi])`"))
                                    }
                                };
                                let name = parse_name(&pair[0])?;
                                let (lo, hi) = parse_range(&pair[1])?;
                                Ok((name, lo, hi))
                            })
                            .collect::<Result<_>>()?
                    }
                };
                let mut names: Vec<String> = params.iter().map(|(n, _, _)| n.clone()).collect();
                names.extend(system.states.iter().cloned());
                let mut scope = Scope::names(self, names);
                let candidate = parse_term(kw.require("candidate")?, &mut scope)?;
                if head == "lyapunov-check" {
                    if !params.is_empty() {
                        return Err(err_syntax(pos, "lyapunov-check takes no :params"));
                    }
                    Ok(Command::LyapunovCheck {
                        system: system.name,
                        candidate,
                        strict,
                        opts,
                    })
                } else {
                    if params.is_empty() {
                        return Err(err_syntax(pos, "lyapunov-synth requires :params"));
                    }
                    Ok(Command::LyapunovSynth {
                        system: system.name,
                        candidate,
                        params,
                        strict,
                        opts,
                    })
                }
            }
            "stability" => {
                let allowed = with_solve_kw(&["system", "eps", "horizon", "margin", "box"]);
                let kw = KwArgs::parse(args, pos, &allowed)?;
                let system = self.ode_named(kw.require("system")?)?.name.clone();
                Ok(Command::Stability {
                    system,
                    eps: kw.rat("eps")?,
                    horizon: kw.rat("horizon")?,
                    margin: kw.rat("margin")?,
                    state_box: kw
                        .get("box")
                        .map(|s| parse_range_list(s, ":box"))
                        .transpose()?,
                    opts: kw.solve_opts()?,
                })
            }
            "reach" => {
                let allowed = with_solve_kw(&["system", "init", "goal", "d1", "d2", "d3", "horizon"]);
                let kw = KwArgs::parse(args, pos, &allowed)?;
                let ode = self.ode_named(kw.require("system")?)?;
                let dim = ode.states.len();
                let system = ode.name.clone();
                let init = parse_rat_list(kw.require("init")?, ":init")?;
                let goal = parse_rat_list(kw.require("goal")?, ":goal")?;
                for (what, v) in [("init", &init), ("goal", &goal)] {
                    if v.len() != dim {
                        return Err(CliError::at(
                            ErrorCode::Arity,
                            pos,
                            format!("`:{what}` needs {dim} value(s), got {}", v.len()),
                        ));
                    }
                }
                let horizon = parse_number(kw.require("horizon")?)?;
                Ok(Command::Reach {
                    system,
                    init,
                    goal,
                    d1: kw.rat("d1")?,
                    d2: kw.rat("d2")?,
                    d3: kw.rat("d3")?,
                    horizon,
                    opts: kw.solve_opts()?,
                })
            }
            "pid-tune" => {
                let allowed = with_solve_kw(&[
                    "name", "states", "rhs", "domain", "input", "output", "reference", "init",
                    "kp", "ki", "kd", "spec",
                ]);
                let kw = KwArgs::parse(args, pos, &allowed)?;
                let name = parse_name(kw.require("name")?)?;
                let states: Vec<String> = match kw.require("states")? {
                    Sexp::Paren(items, _) => {
                        items.iter().map(parse_name).collect::<Result<_>>()?
                    }
                    other => return Err(err_syntax(other.pos(), ":states must be `(name ...)`")),
                };
                let input = parse_name(kw.require("input")?)?;
                let output = parse_name(kw.require("output")?)?;
                let rhs_forms = match kw.require("rhs")? {
                    Sexp::Paren(items, _) => items,
                    other => return Err(err_syntax(other.pos(), ":rhs must be `(term ...)`")),
                };
                if rhs_forms.len() != states.len() {
                    return Err(CliError::at(
                        ErrorCode::Arity,
                        pos,
                        format!("{} state(s) but {} rhs term(s)", states.len(), rhs_forms.len()),
                    ));
                }
                let mut plant_names = states.clone();
                plant_names.push(input.clone());
                let rhs: Vec<Term> = {
                    let mut scope = Scope::names(self, plant_names);
                    rhs_forms
                        .iter()
                        .map(|f| parse_term(f, &mut scope))
                        .collect::<Result<_>>()?
                };
                let domain = parse_range_list(kw.require("domain")?, ":domain")?;
                let init = parse_rat_list(kw.require("init")?, ":init")?;
                let reference = {
                    let mut scope = Scope::names(self, vec!["t".to_string()]);
                    parse_term(kw.require("reference")?, &mut scope)?
                };
                let gain = |key: &str| -> Result<(Rat, Rat)> {
                    match kw.get(key) {
                        Some(s) => parse_range(s),
                        None => Ok((Rat::from_integer(0.into()), Rat::from_integer(0.into()))),
                    }
                };
                let spec_items = match kw.require("spec")? {
                    Sexp::Paren(items, _) => items,
                    other => {
                        return Err(err_syntax(other.pos(), ":spec must be `((tol t_lo t_hi) ...)`"))
                    }
                };
                let spec: Vec<(Rat, Rat, Rat)> = spec_items
                    .iter()
                    .map(|item| {
                        let trip = match item {
                            Sexp::Paren(t, _) if t.len() == 3 => t,
                            other => {
                                return Err(err_syntax(other.pos(), "expected `(tol t_lo t_hi)`"))
                            }
                        };
                        Ok((
                            parse_number(&trip[0])?,
                            parse_number(&trip[1])?,
                            parse_number(&trip[2])?,
                        ))
                    })
                    .collect::<Result<_>>()?;
                Ok(Command::PidTune {
                    name,
                    states,
                    rhs,
                    domain,
                    input,
                    output,
                    reference,
                    init,
                    kp: gain("kp")?,
                    ki: gain("ki")?,
                    kd: gain("kd")?,
                    spec,
                    opts: kw.solve_opts()?,
                })
            }
            _ => Err(err_syntax(pos, format!("unknown form `{head}`"))),
        }
    }
}

/// Parse a whole problem file.
pub fn parse_problem(text: &str) -> Result<ProblemFile> {
    let forms = read_all(text)?;
    let mut p = Parser::new();
    for form in &forms {
        let (items, pos) = match form {
            Sexp::Paren(items, pos) => (items, *pos),
            other => return Err(err_syntax(other.pos(), "expected a `(...)` form")),
        };
        let (head, _) = match items.first() {
            Some(h) => expect_sym(h, "a form head")?,
            None => return Err(err_syntax(pos, "empty form")),
        };
        let args = &items[1..];
        match head {
            "declare-var" => p.declare_var(args, pos)?,
            "declare-const" => p.declare_const(args, pos)?,
            "declare-ode" => p.declare_ode(args, pos)?,
            "assert" => {
                if args.len() != 1 {
                    return Err(err_syntax(pos, "usage: (assert FORMULA)"));
                }
                let raw = {
                    let mut scope = Scope::declared(&p);
                    parse_formula(&args[0], &mut scope)?
                };
                p.assertions.push(raw);
            }
            _ => {
                let cmd = p.parse_command(head, args, pos)?;
                if p.command.is_some() {
                    return Err(err_syntax(pos, "a problem file may contain only one command"));
                }
                p.command = Some(cmd);
            }
        }
    }
    let command = p
        .command
        .ok_or_else(|| CliError::new(ErrorCode::Syntax, "no command in problem file"))?;
    Ok(ProblemFile {
        vars: p.vars,
        consts: p.consts,
        odes: p.odes,
        assertions: p.assertions,
        command,
    })
}

// ---------------------------------------------------------------------------
// Pretty-printing (canonical surface form; reparses structurally identical)
// ---------------------------------------------------------------------------

fn fmt_formula(f: &RawFormula, out: &mut String) {
    match f {
        RawFormula::Cmp(lhs, op, rhs) => {
            let sym = match op {
                CmpOp::Lt => "<",
                CmpOp::Le => "<=",
                CmpOp::Gt => ">",
                CmpOp::Ge => ">=",
                CmpOp::Eq => "=",
                CmpOp::Ne => "!=",
            };
            out.push_str(&format!("({sym} {lhs} {rhs})"));
        }
        RawFormula::Not(inner) => {
            out.push_str("(not ");
            fmt_formula(inner, out);
            out.push(')');
        }
        RawFormula::And(parts) | RawFormula::Or(parts) => {
            out.push_str(if matches!(f, RawFormula::And(_)) {
                "(and"
            } else {
                "(or"
            });
            for part in parts {
                out.push(' ');
                fmt_formula(part, out);
            }
            out.push(')');
        }
        RawFormula::Implies(a, b) => {
            out.push_str("(=> ");
            fmt_formula(a, out);
            out.push(' ');
            fmt_formula(b, out);
            out.push(')');
        }
        RawFormula::Exists(binders, body) | RawFormula::Forall(binders, body) => {
            out.push_str(if matches!(f, RawFormula::Exists(..)) {
                "(exists ("
            } else {
                "(forall ("
            });
            for (i, b) in binders.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                out.push_str(&format!("({} [{} {}])", b.name, b.lo, b.hi));
            }
            out.push_str(") ");
            fmt_formula(body, out);
            out.push(')');
        }
    }
}

fn fmt_opts(opts: &SolveOpts, out: &mut String) {
    if let Some(d) = &opts.delta {
        out.push_str(&format!(" :delta {d}"));
    }
    if let Some(m) = opts.max_depth {
        out.push_str(&format!(" :max-depth {m}"));
    }
    if let Some(t) = opts.timeout_ms {
        out.push_str(&format!(" :timeout-ms {t}"));
    }
    if let Some(w) = opts.workers {
        out.push_str(&format!(" :workers {w}"));
    }
    if let Some(s) = &opts.step {
        out.push_str(&format!(" :step {s}"));
    }
}

fn fmt_ranges(ranges: &[(Rat, Rat)]) -> String {
    let inner: Vec<String> = ranges.iter().map(|(lo, hi)| format!("[{lo} {hi}]")).collect();
    format!("({})", inner.join(" "))
}

fn fmt_strict(strict: &Option<bool>, out: &mut String) {
    if let Some(s) = strict {
        out.push_str(&format!(" :strict {}", if *s { "on" } else { "off" }));
    }
}

/// Canonical text for a problem file; `parse_problem(pretty(p)) == p`.
pub fn pretty(p: &ProblemFile) -> String {
    let mut out = String::new();
    for (name, lo, hi) in &p.vars {
        out.push_str(&format!("(declare-var {name} [{lo} {hi}])\n"));
    }
    for (name, value) in &p.consts {
        out.push_str(&format!("(declare-const {name} {value})\n"));
    }
    for ode in &p.odes {
        out.push_str(&format!("(declare-ode {} (", ode.name));
        for (i, (s, r)) in ode.states.iter().zip(&ode.rhs).enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&format!("({s} {r})"));
        }
        out.push_str(&format!(") :domain {}", fmt_ranges(&ode.domain)));
        if let Some(h) = &ode.horizon {
            out.push_str(&format!(" :horizon {h}"));
        }
        out.push_str(")\n");
    }
    for a in &p.assertions {
        out.push_str("(assert ");
        fmt_formula(a, &mut out);
        out.push_str(")\n");
    }
    match &p.command {
        Command::CheckSat { opts } => {
            out.push_str("(check-sat");
            fmt_opts(opts, &mut out);
            out.push_str(")\n");
        }
        Command::Classify => out.push_str("(classify)\n"),
        Command::LyapunovCheck {
            system,
            candidate,
            strict,
            opts,
        } => {
            out.push_str(&format!("(lyapunov-check :system {system} :candidate {candidate}"));
            fmt_strict(strict, &mut out);
            fmt_opts(opts, &mut out);
            out.push_str(")\n");
        }
        Command::LyapunovSynth {
            system,
            candidate,
            params,
            strict,
            opts,
        } => {
            out.push_str(&format!("(lyapunov-synth :system {system} :candidate {candidate} :params ("));
            for (i, (n, lo, hi)) in params.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                out.push_str(&format!("({n} [{lo} {hi}])"));
            }
            out.push(')');
            fmt_strict(strict, &mut out);
            fmt_opts(opts, &mut out);
            out.push_str(")\n");
        }
        Command::Stability {
            system,
            eps,
            horizon,
            margin,
            state_box,
            opts,
        } => {
            out.push_str(&format!("(stability :system {system}"));
            if let Some(e) = eps {
                out.push_str(&format!(" :eps {e}"));
            }
            if let Some(h) = horizon {
                out.push_str(&format!(" :horizon {h}"));
            }
            if let Some(m) = margin {
                out.push_str(&format!(" :margin {m}"));
            }
            if let Some(b) = state_box {
                out.push_str(&format!(" :box {}", fmt_ranges(b)));
            }
            fmt_opts(opts, &mut out);
            out.push_str(")\n");
        }
        Command::Reach {
            system,
            init,
            goal,
            d1,
            d2,
            d3,
            horizon,
            opts,
        } => {
            let nums = |v: &[Rat]| -> String {
                let inner: Vec<String> = v.iter().map(|r| r.to_string()).collect();
                format!("({})", inner.join(" "))
            };
            out.push_str(&format!(
                "(reach :system {system} :init {} :goal {}",
                nums(init),
                nums(goal)
            ));
            for (k, v) in [("d1", d1), ("d2", d2), ("d3", d3)] {
                if let Some(d) = v {
                    out.push_str(&format!(" :{k} {d}"));
                }
            }
            out.push_str(&format!(" :horizon {horizon}"));
            fmt_opts(opts, &mut out);
            out.push_str(")\n");
        }
        Command::PidTune {
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
            opts,
        } => {
            let terms = |v: &[Term]| -> String {
                let inner: Vec<String> = v.iter().map(|t| t.to_string()).collect();
                format!("({})", inner.join(" "))
            };
            let nums = |v: &[Rat]| -> String {
                let inner: Vec<String> = v.iter().map(|r| r.to_string()).collect();
                format!("({})", inner.join(" "))
            };
            out.push_str(&format!(
                "(pid-tune :name {name} :states ({}) :rhs {} :domain {} :input {input} :output {output} :reference {reference} :init {}",
                states.join(" "),
                terms(rhs),
                fmt_ranges(domain),
                nums(init),
            ));
            for (k, (lo, hi)) in [("kp", kp), ("ki", ki), ("kd", kd)] {
                out.push_str(&format!(" :{k} [{lo} {hi}]"));
            }
            out.push_str(" :spec (");
            for (i, (tol, lo, hi)) in spec.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                out.push_str(&format!("({tol} {lo} {hi})"));
            }
            out.push(')');
            fmt_opts(opts, &mut out);
            out.push_str(")\n");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQRT2: &str = "(declare-var x [0 2])\n(assert (exists ((x [0 2])) (= (* x x) 2)))\n(check-sat :delta 1/100)\n";

    #[test]
    fn parses_the_square_root_example() {
        let p = parse_problem(SQRT2).unwrap();
        assert_eq!(p.vars.len(), 1);
        assert_eq!(p.assertions.len(), 1);
        assert!(matches!(&p.command, Command::CheckSat { opts } if opts.delta == Some(Rat::new(1.into(), 100.into()))));
    }

    #[test]
    fn decimals_parse_as_exact_rationals() {
        let p = parse_problem("(declare-var x [0 0.25])\n(check-sat)").unwrap();
        assert_eq!(p.vars[0].2, Rat::new(1.into(), 4.into()));
    }

    #[test]
    fn missing_pieces_are_syntax_errors() {
        let e = parse_problem("(declare-var x)").unwrap_err();
        assert_eq!(e.code, ErrorCode::Syntax);
        let e = parse_problem("(declare-var x [0 1])").unwrap_err();
        assert_eq!(e.code, ErrorCode::Syntax); // no command
    }

    #[test]
    fn undeclared_names_have_their_own_code() {
        let e = parse_problem("(assert (> y 0))\n(check-sat)").unwrap_err();
        assert_eq!(e.code, ErrorCode::Undeclared);
        assert!(e.message.contains('y'));
    }

    #[test]
    fn arity_mistakes_have_their_own_code() {
        let e = parse_problem("(declare-var x [0 1])\n(assert (> (abs x 3) 0))\n(check-sat)")
            .unwrap_err();
        assert_eq!(e.code, ErrorCode::Arity);
    }

    #[test]
    fn flow_terms_check_system_and_dimensions() {
        let base = "(declare-ode s ((x (neg x))) :domain ([-2 2]))\n(declare-var t [0 1])\n";
        let ok = format!("{base}(assert (> (flow s (1) t 0) 0))\n(check-sat)");
        assert!(parse_problem(&ok).is_ok());
        let bad_sys = format!("{base}(assert (> (flow nosys (1) t 0) 0))\n(check-sat)");
        assert_eq!(parse_problem(&bad_sys).unwrap_err().code, ErrorCode::Undeclared);
        let bad_dim = format!("{base}(assert (> (flow s (1 2) t 0) 0))\n(check-sat)");
        assert_eq!(parse_problem(&bad_dim).unwrap_err().code, ErrorCode::Arity);
        let bad_comp = format!("{base}(assert (> (flow s (1) t 3) 0))\n(check-sat)");
        assert_eq!(parse_problem(&bad_comp).unwrap_err().code, ErrorCode::Arity);
    }

    #[test]
    fn constants_inline_into_terms() {
        let p = parse_problem("(declare-const c 3/4)\n(declare-var x [0 1])\n(assert (> x c))\n(check-sat)")
            .unwrap();
        let RawFormula::Cmp(_, _, rhs) = &p.assertions[0] else {
            panic!("expected comparison")
        };
        assert_eq!(rhs, &Term::konst(Rat::new(3.into(), 4.into())));
    }

    #[test]
    fn one_command_per_file() {
        let e = parse_problem("(check-sat)\n(classify)").unwrap_err();
        assert_eq!(e.code, ErrorCode::Syntax);
    }

    #[test]
    fn pretty_round_trips_structurally() {
        let srcs = [
            SQRT2.to_string(),
            "(declare-ode s ((x (neg (pow x 3)))) :domain ([-2 2]) :horizon 10)\n(declare-var t [0 10])\n(assert (exists ((t [0 10])) (<= (abs (- (flow s (1) t 0) 1)) 1/100)))\n(check-sat :delta 1/1000)".to_string(),
            "(declare-ode s ((x (neg x))) :domain ([-2 2]))\n(declare-var x [-1 1])\n(lyapunov-check :system s :candidate (pow x 2) :strict on :delta 1/1000)".to_string(),
            "(declare-ode s ((x (neg x))) :domain ([-2 2]))\n(stability :system s :eps 1/4 :horizon 2 :margin 1/2 :box ([-1 1]) :step 1/2048)".to_string(),
            "(declare-ode s ((x 1)) :domain ([-2 4]))\n(reach :system s :init (0) :goal (1) :d1 1/100 :horizon 2)".to_string(),
            "(pid-tune :name servo :states (y) :rhs ((+ (neg y) u)) :domain ([-2 2]) :input u :output y :reference 1 :init (0) :kp [0 20] :spec ((3/20 5 6)))".to_string(),
        ];
        for src in srcs {
            let p1 = parse_problem(&src).unwrap();
            let printed = pretty(&p1);
            let p2 = parse_problem(&printed)
                .unwrap_or_else(|e| panic!("reparse failed for {printed:?}: {e}"));
            assert_eq!(p1, p2, "round trip changed structure for {src:?}");
        }
    }
}

//! The term language: real-valued expressions over declared variables,
//! exact rational constants, a fixed function library, and references to
//! solutions of declared ODE systems (`flow` terms).
//!
//! Terms print in a canonical S-expression form; that text is the basis
//! for formula digests in certificates, so `Display` must stay stable.

use crate::rational::{display_rat, Rat};
use std::collections::BTreeSet;
use std::fmt;

/// Function symbols of the fixed library.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fun {
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
    Abs,
    Sqrt,
    Exp,
    Log,
    Sin,
    Cos,
    /// Integer power with a fixed literal exponent.
    Pow(i32),
}

impl Fun {
    pub fn arity(&self) -> usize {
        match self {
            Fun::Neg
            | Fun::Abs
            | Fun::Sqrt
            | Fun::Exp
            | Fun::Log
            | Fun::Sin
            | Fun::Cos
            | Fun::Pow(_) => 1,
            Fun::Add | Fun::Sub | Fun::Mul | Fun::Div | Fun::Min | Fun::Max => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Fun::Neg => "neg",
            Fun::Add => "+",
            Fun::Sub => "-",
            Fun::Mul => "*",
            Fun::Div => "/",
            Fun::Min => "min",
            Fun::Max => "max",
            Fun::Abs => "abs",
            Fun::Sqrt => "sqrt",
            Fun::Exp => "exp",
            Fun::Log => "log",
            Fun::Sin => "sin",
            Fun::Cos => "cos",
            Fun::Pow(_) => "pow",
        }
    }
}

/// A real-valued term.
#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    /// Exact rational constant.
    Const(Rat),
    /// Named variable, bound by a quantifier or declared free.
    Var(String),
    /// Function application from the fixed library.
    App(Fun, Vec<Term>),
    /// Component `component` of the solution of the named ODE system,
    /// started at `init` (one term per state variable) and evaluated at
    /// `time`.
    Flow {
        system: String,
        component: usize,
        init: Vec<Term>,
        time: Box<Term>,
    },
}

impl Term {
    pub fn var(name: impl Into<String>) -> Term {
        Term::Var(name.into())
    }

    pub fn konst(r: Rat) -> Term {
        Term::Const(r)
    }

    pub fn int(n: i64) -> Term {
        Term::Const(Rat::from_integer(n.into()))
    }

    pub fn neg(self) -> Term {
        Term::App(Fun::Neg, vec![self])
    }

    pub fn add(self, other: Term) -> Term {
        Term::App(Fun::Add, vec![self, other])
    }

    pub fn sub(self, other: Term) -> Term {
        Term::App(Fun::Sub, vec![self, other])
    }

    pub fn mul(self, other: Term) -> Term {
        Term::App(Fun::Mul, vec![self, other])
    }

    pub fn div(self, other: Term) -> Term {
        Term::App(Fun::Div, vec![self, other])
    }

    pub fn min(self, other: Term) -> Term {
        Term::App(Fun::Min, vec![self, other])
    }

    pub fn max(self, other: Term) -> Term {
        Term::App(Fun::Max, vec![self, other])
    }

    pub fn abs(self) -> Term {
        Term::App(Fun::Abs, vec![self])
    }

    pub fn sqrt(self) -> Term {
        Term::App(Fun::Sqrt, vec![self])
    }

    pub fn exp(self) -> Term {
        Term::App(Fun::Exp, vec![self])
    }

    pub fn log(self) -> Term {
        Term::App(Fun::Log, vec![self])
    }

    pub fn sin(self) -> Term {
        Term::App(Fun::Sin, vec![self])
    }

    pub fn cos(self) -> Term {
        Term::App(Fun::Cos, vec![self])
    }

    pub fn pow(self, n: i32) -> Term {
        Term::App(Fun::Pow(n), vec![self])
    }

    pub fn flow(
        system: impl Into<String>,
        component: usize,
        init: Vec<Term>,
        time: Term,
    ) -> Term {
        Term::Flow {
            system: system.into(),
            component,
            init,
            time: Box::new(time),
        }
    }

    /// Collects every variable occurring in the term.
    pub fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Term::Const(_) => {}
            Term::Var(v) => {
                out.insert(v.clone());
            }
            Term::App(_, args) => {
                for a in args {
                    a.collect_vars(out);
                }
            }
            Term::Flow { init, time, .. } => {
                for a in init {
                    a.collect_vars(out);
                }
                time.collect_vars(out);
            }
        }
    }

    pub fn vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    /// Replaces every occurrence of `var` by `replacement`.
    pub fn subst(&self, var: &str, replacement: &Term) -> Term {
        match self {
            Term::Const(_) => self.clone(),
            Term::Var(v) => {
                if v == var {
                    replacement.clone()
                } else {
                    self.clone()
                }
            }
            Term::App(f, args) => Term::App(
                *f,
                args.iter().map(|a| a.subst(var, replacement)).collect(),
            ),
            Term::Flow {
                system,
                component,
                init,
                time,
            } => Term::Flow {
                system: system.clone(),
                component: *component,
                init: init.iter().map(|a| a.subst(var, replacement)).collect(),
                time: Box::new(time.subst(var, replacement)),
            },
        }
    }

    /// True if any subterm is a `flow` reference.
    pub fn contains_flow(&self) -> bool {
        match self {
            Term::Const(_) | Term::Var(_) => false,
            Term::App(_, args) => args.iter().any(Term::contains_flow),
            Term::Flow { .. } => true,
        }
    }

    /// Number of nodes, used by tests and budget heuristics.
    pub fn size(&self) -> usize {
        match self {
            Term::Const(_) | Term::Var(_) => 1,
            Term::App(_, args) => 1 + args.iter().map(Term::size).sum::<usize>(),
            Term::Flow { init, time, .. } => {
                1 + init.iter().map(Term::size).sum::<usize>() + time.size()
            }
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Const(r) => f.write_str(&display_rat(r)),
            Term::Var(v) => f.write_str(v),
            Term::App(Fun::Pow(n), args) => write!(f, "(pow {} {})", args[0], n),
            Term::App(fun, args) => {
                write!(f, "({}", fun.name())?;
                for a in args {
                    write!(f, " {a}")?;
                }
                f.write_str(")")
            }
            Term::Flow {
                system,
                component,
                init,
                time,
            } => {
                write!(f, "(flow {system} (")?;
                for (i, a) in init.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ") {time} {component})")
            }
        }
    }
}

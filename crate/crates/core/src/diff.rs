//! Symbolic partial derivatives of algebraic terms, with a light
//! simplifier to keep the results small.
//!
//! Differentiation is used to form Lie derivatives of candidate Lyapunov
//! functions and the Jacobians that drive the mean-value form of the ODE
//! enclosures. Non-smooth operators (`abs`, `min`, `max`) and `flow`
//! references are rejected rather than differentiated piecewise.

use crate::rational::Rat;
use crate::term::{Fun, Term};
use num_traits::{One, Signed, Zero};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DiffError {
    #[error("cannot differentiate through {0}")]
    NotDifferentiable(&'static str),
}

/// Partial derivative of `t` with respect to `var`, simplified.
pub fn partial(t: &Term, var: &str) -> Result<Term, DiffError> {
    Ok(simplify(&raw_partial(t, var)?))
}

fn raw_partial(t: &Term, var: &str) -> Result<Term, DiffError> {
    Ok(match t {
        Term::Const(_) => Term::int(0),
        Term::Var(v) => {
            if v == var {
                Term::int(1)
            } else {
                Term::int(0)
            }
        }
        Term::App(fun, args) => {
            let a = || args[0].clone();
            let da = raw_partial(&args[0], var)?;
            match fun {
                Fun::Neg => da.neg(),
                Fun::Add => da.add(raw_partial(&args[1], var)?),
                Fun::Sub => da.sub(raw_partial(&args[1], var)?),
                Fun::Mul => {
                    let b = args[1].clone();
                    let db = raw_partial(&args[1], var)?;
                    da.mul(b).add(a().mul(db))
                }
                Fun::Div => {
                    let b = args[1].clone();
                    let db = raw_partial(&args[1], var)?;
                    da.mul(b.clone())
                        .sub(a().mul(db))
                        .div(b.pow(2))
                }
                Fun::Pow(n) => {
                    if *n == 0 {
                        Term::int(0)
                    } else {
                        Term::int(*n as i64).mul(a().pow(n - 1)).mul(da)
                    }
                }
                Fun::Sqrt => da.div(Term::int(2).mul(a().sqrt())),
                Fun::Exp => da.mul(a().exp()),
                Fun::Log => da.div(a()),
                Fun::Sin => da.mul(a().cos()),
                Fun::Cos => da.mul(a().sin()).neg(),
                Fun::Abs => return Err(DiffError::NotDifferentiable("abs")),
                Fun::Min => return Err(DiffError::NotDifferentiable("min")),
                Fun::Max => return Err(DiffError::NotDifferentiable("max")),
            }
        }
        Term::Flow { .. } => return Err(DiffError::NotDifferentiable("flow")),
    })
}

/// Bottom-up simplification: exact constant folding, unit/zero rules, and a
/// light polynomial normal form. Products are flattened so repeated factors
/// merge into powers (`x·x³ → x⁴`) and signs/constants collect into one
/// leading rational coefficient; sums are flattened so like monomials merge
/// their coefficients (`(3/2)x² − (1/2)x² → x²`). Even powers have exact
/// nonnegative interval enclosures, so this normalization is what lets the
/// evaluator certify polynomial sign conditions on boxes astride the origin.
pub fn simplify(t: &Term) -> Term {
    match t {
        Term::Const(_) | Term::Var(_) => t.clone(),
        Term::Flow {
            system,
            component,
            init,
            time,
        } => Term::Flow {
            system: system.clone(),
            component: *component,
            init: init.iter().map(simplify).collect(),
            time: Box::new(simplify(time)),
        },
        Term::App(fun, args) => {
            let args: Vec<Term> = args.iter().map(simplify).collect();
            fold_app(*fun, args)
        }
    }
}

fn as_const(t: &Term) -> Option<&Rat> {
    match t {
        Term::Const(r) => Some(r),
        _ => None,
    }
}

fn is_zero(t: &Term) -> bool {
    as_const(t).map(Rat::is_zero).unwrap_or(false)
}

fn is_one(t: &Term) -> bool {
    as_const(t).map(Rat::is_one).unwrap_or(false)
}

fn fold_app(fun: Fun, mut args: Vec<Term>) -> Term {
    match fun {
        Fun::Neg | Fun::Add | Fun::Sub => normal_sum(fun, args),
        Fun::Mul => normal_product(args),
        Fun::Div => {
            if let (Some(a), Some(b)) = (as_const(&args[0]), as_const(&args[1])) {
                if !b.is_zero() {
                    return Term::Const(a / b);
                }
            }
            if is_zero(&args[0]) && !is_zero(&args[1]) {
                return Term::int(0);
            }
            if is_one(&args[1]) {
                return args.swap_remove(0);
            }
            Term::App(fun, args)
        }
        Fun::Pow(n) => {
            if n == 0 {
                return Term::int(1);
            }
            if n == 1 {
                return args.swap_remove(0);
            }
            if let Some(r) = as_const(&args[0]) {
                if n > 0 {
                    let mut acc = Rat::one();
                    for _ in 0..n {
                        acc *= r;
                    }
                    return Term::Const(acc);
                }
                if !r.is_zero() {
                    let mut acc = Rat::one();
                    for _ in 0..(-(n as i64)) {
                        acc *= r;
                    }
                    return Term::Const(Rat::one() / acc);
                }
            }
            if let Term::App(Fun::Pow(m), inner) = &args[0] {
                let merged = (n as i64) * (*m as i64);
                if let Ok(e) = i32::try_from(merged) {
                    return fold_app(Fun::Pow(e), inner.clone());
                }
            }
            if let Term::App(Fun::Neg, inner) = &args[0] {
                let body = fold_app(Fun::Pow(n), inner.clone());
                return if n % 2 == 0 {
                    body
                } else {
                    normal_sum(Fun::Neg, vec![body])
                };
            }
            Term::App(fun, args)
        }
        Fun::Abs => {
            if let Some(r) = as_const(&args[0]) {
                return Term::Const(r.abs());
            }
            if let Term::App(Fun::Neg, inner) = &args[0] {
                return fold_app(Fun::Abs, inner.clone());
            }
            if let Term::App(Fun::Pow(m), _) = &args[0] {
                if *m > 0 && m % 2 == 0 {
                    return args.swap_remove(0);
                }
            }
            Term::App(fun, args)
        }
        Fun::Min => {
            if let (Some(a), Some(b)) = (as_const(&args[0]), as_const(&args[1])) {
                return Term::Const(a.min(b).clone());
            }
            Term::App(fun, args)
        }
        Fun::Max => {
            if let (Some(a), Some(b)) = (as_const(&args[0]), as_const(&args[1])) {
                return Term::Const(a.max(b).clone());
            }
            Term::App(fun, args)
        }
        // Transcendental values are irrational in general; never folded.
        Fun::Sqrt | Fun::Exp | Fun::Log | Fun::Sin | Fun::Cos => Term::App(fun, args),
    }
}

/// Flatten a product into one rational coefficient times merged factors,
/// with factor order fixed by first appearance (left to right).
fn normal_product(args: Vec<Term>) -> Term {
    let mut coeff = Rat::one();
    let mut factors: Vec<(Term, i64)> = Vec::new();
    for arg in args {
        collect_factors(arg, &mut coeff, &mut factors);
    }
    if coeff.is_zero() {
        return Term::int(0);
    }
    let parts: Vec<Term> = factors
        .into_iter()
        .map(|(base, exp)| {
            if exp == 1 {
                base
            } else {
                let e = i32::try_from(exp).expect("factor exponent out of range");
                fold_app(Fun::Pow(e), vec![base])
            }
        })
        .collect();
    let body = parts
        .into_iter()
        .reduce(|a, b| Term::App(Fun::Mul, vec![a, b]));
    match body {
        None => Term::Const(coeff),
        Some(b) if coeff.is_one() => b,
        Some(b) if coeff == -Rat::one() => Term::App(Fun::Neg, vec![b]),
        Some(b) => Term::App(Fun::Mul, vec![Term::Const(coeff), b]),
    }
}

fn collect_factors(t: Term, coeff: &mut Rat, factors: &mut Vec<(Term, i64)>) {
    match t {
        Term::Const(r) => *coeff *= r,
        Term::App(Fun::Mul, args) => {
            for a in args {
                collect_factors(a, coeff, factors);
            }
        }
        Term::App(Fun::Neg, mut args) => {
            *coeff = -coeff.clone();
            collect_factors(args.swap_remove(0), coeff, factors);
        }
        Term::App(Fun::Pow(n), mut args) if n > 0 => {
            push_factor(factors, args.swap_remove(0), n as i64);
        }
        other => push_factor(factors, other, 1),
    }
}

fn push_factor(factors: &mut Vec<(Term, i64)>, base: Term, exp: i64) {
    if let Some(slot) = factors.iter_mut().find(|(b, _)| *b == base) {
        slot.1 += exp;
    } else {
        factors.push((base, exp));
    }
}

/// Flatten a sum (`add`/`sub`/`neg` spine) into monomials keyed by their
/// non-constant part, merging rational coefficients of like monomials; the
/// folded constant, if nonzero, becomes the last addend.
fn normal_sum(fun: Fun, args: Vec<Term>) -> Term {
    let mut constant = Rat::zero();
    let mut monos: Vec<(Rat, Term)> = Vec::new();
    let mut it = args.into_iter();
    match fun {
        Fun::Neg => collect_addends(it.next().unwrap(), true, &mut constant, &mut monos),
        Fun::Add => {
            collect_addends(it.next().unwrap(), false, &mut constant, &mut monos);
            collect_addends(it.next().unwrap(), false, &mut constant, &mut monos);
        }
        Fun::Sub => {
            collect_addends(it.next().unwrap(), false, &mut constant, &mut monos);
            collect_addends(it.next().unwrap(), true, &mut constant, &mut monos);
        }
        _ => unreachable!("normal_sum on non-sum operator"),
    }
    let mut parts: Vec<Term> = Vec::new();
    for (c, core) in monos {
        if c.is_zero() {
            continue;
        }
        parts.push(if c.is_one() {
            core
        } else if c == -Rat::one() {
            Term::App(Fun::Neg, vec![core])
        } else {
            Term::App(Fun::Mul, vec![Term::Const(c), core])
        });
    }
    if !constant.is_zero() || parts.is_empty() {
        parts.push(Term::Const(constant));
    }
    parts
        .into_iter()
        .reduce(|a, b| Term::App(Fun::Add, vec![a, b]))
        .expect("sum has at least one part")
}

fn collect_addends(t: Term, negate: bool, constant: &mut Rat, monos: &mut Vec<(Rat, Term)>) {
    match t {
        Term::Const(r) => {
            if negate {
                *constant -= r;
            } else {
                *constant += r;
            }
        }
        Term::App(Fun::Add, args) => {
            for a in args {
                collect_addends(a, negate, constant, monos);
            }
        }
        Term::App(Fun::Sub, mut args) => {
            let rhs = args.pop().unwrap();
            let lhs = args.pop().unwrap();
            collect_addends(lhs, negate, constant, monos);
            collect_addends(rhs, !negate, constant, monos);
        }
        Term::App(Fun::Neg, mut args) => {
            collect_addends(args.swap_remove(0), !negate, constant, monos);
        }
        other => {
            let (mut c, core) = split_coefficient(other);
            if negate {
                c = -c;
            }
            if let Some(slot) = monos.iter_mut().find(|(_, u)| *u == core) {
                slot.0 += c;
            } else {
                monos.push((c, core));
            }
        }
    }
}

/// Split a (product-normalized) term into its rational coefficient and the
/// remaining non-constant core.
fn split_coefficient(t: Term) -> (Rat, Term) {
    if let Term::App(Fun::Mul, args) = &t {
        if let Term::Const(c) = &args[0] {
            return (c.clone(), args[1].clone());
        }
    }
    (Rat::one(), t)
}

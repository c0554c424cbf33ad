//! Outward-rounded interval arithmetic over `f64`.
//!
//! Every operation returns an interval that contains the exact real-number
//! image of its operands. Directed rounding is realized by one-ULP nudging
//! of the nearest-rounded result, guided by an exactly computed residual:
//! when the residual shows the rounded result already errs in the safe
//! direction (or the operation was exact) no nudge is applied, so integer
//! and dyadic arithmetic stays exact. Transcendental functions are built
//! from argument reduction plus Taylor expansions whose truncation error is
//! added as an explicit interval remainder.
//!
//! Partial operations (`div`, `sqrt`, `ln`, negative powers) report domain
//! violations instead of producing empty or silently clamped results. The
//! empty interval exists only as an explicit sentinel produced by
//! `intersect`; no operation here returns NaN bounds.

use crate::rational::{rat_from_f64, rat_to_f64_ceil, rat_to_f64_floor, Rat};
use std::fmt;

/// Reason a partial interval operation is undefined on its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainIssue {
    /// Division by an interval containing zero.
    DivisionByZero,
    /// Square root of an interval reaching below zero.
    SqrtOfNegative,
    /// Logarithm of an interval reaching zero or below.
    LogOfNonPositive,
    /// Negative integer power of an interval containing zero.
    NegativePowerOfZero,
}

impl fmt::Display for DomainIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match self {
            DomainIssue::DivisionByZero => "division by an interval containing zero",
            DomainIssue::SqrtOfNegative => "square root of an interval reaching below zero",
            DomainIssue::LogOfNonPositive => "logarithm of an interval reaching zero or below",
            DomainIssue::NegativePowerOfZero => "negative power of an interval containing zero",
        };
        f.write_str(msg)
    }
}

// ---------------------------------------------------------------------------
// Directed scalar helpers.
// ---------------------------------------------------------------------------

/// Residual-guided rounding can misjudge exactness once the residual itself
/// underflows into the subnormal range. Below this magnitude we nudge
/// unconditionally (exact zeros are short-circuited before this applies).
const SUBNORMAL_GUARD: f64 = 1e-280;

#[inline]
fn sum_residual(a: f64, b: f64, s: f64) -> f64 {
    // Two-sum residual; exact for any finite s in round-to-nearest.
    let ap = s - b;
    let bp = s - ap;
    (a - ap) + (b - bp)
}

#[inline]
fn add_down(a: f64, b: f64) -> f64 {
    let s = a + b;
    if s.is_infinite() {
        if s < 0.0 || a.is_infinite() || b.is_infinite() {
            return s;
        }
        return f64::MAX; // overflowed upward from finite operands
    }
    if sum_residual(a, b, s) < 0.0 {
        s.next_down()
    } else {
        s
    }
}

#[inline]
fn add_up(a: f64, b: f64) -> f64 {
    let s = a + b;
    if s.is_infinite() {
        if s > 0.0 || a.is_infinite() || b.is_infinite() {
            return s;
        }
        return f64::MIN;
    }
    if sum_residual(a, b, s) > 0.0 {
        s.next_up()
    } else {
        s
    }
}

#[inline]
fn sub_down(a: f64, b: f64) -> f64 {
    add_down(a, -b)
}

#[inline]
fn sub_up(a: f64, b: f64) -> f64 {
    add_up(a, -b)
}

#[inline]
fn mul_down(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        // Exact zero, even against an infinite partner (limit bound).
        return 0.0;
    }
    let p = a * b;
    if p.is_infinite() {
        if p < 0.0 || a.is_infinite() || b.is_infinite() {
            return p;
        }
        return f64::MAX;
    }
    if p.abs() < SUBNORMAL_GUARD {
        return p.next_down();
    }
    if a.mul_add(b, -p) < 0.0 {
        p.next_down()
    } else {
        p
    }
}

#[inline]
fn mul_up(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        return 0.0;
    }
    let p = a * b;
    if p.is_infinite() {
        if p > 0.0 || a.is_infinite() || b.is_infinite() {
            return p;
        }
        return f64::MIN;
    }
    if p.abs() < SUBNORMAL_GUARD {
        return p.next_up();
    }
    if a.mul_add(b, -p) > 0.0 {
        p.next_up()
    } else {
        p
    }
}

#[inline]
fn div_down(a: f64, b: f64) -> f64 {
    debug_assert!(b != 0.0 && !a.is_nan() && !b.is_nan());
    if a == 0.0 {
        return 0.0;
    }
    if b.is_infinite() {
        if a.is_infinite() {
            // Only reachable through saturated bounds; zero is a valid
            // candidate because a finite extremum exists on another corner.
            return 0.0;
        }
        return if (a > 0.0) == (b > 0.0) {
            0.0
        } else {
            0.0_f64.next_down()
        };
    }
    let q = a / b;
    if q.is_infinite() {
        if q < 0.0 || a.is_infinite() {
            return q;
        }
        return f64::MAX;
    }
    if q.abs() < SUBNORMAL_GUARD || a.abs() < SUBNORMAL_GUARD {
        return q.next_down();
    }
    let residual = q.mul_add(b, -a); // q*b - a, single rounding
    // true quotient = q - residual / b
    if residual == 0.0 {
        q
    } else if (residual > 0.0) == (b > 0.0) {
        q.next_down()
    } else {
        q
    }
}

#[inline]
fn div_up(a: f64, b: f64) -> f64 {
    -div_down(-a, b)
}

fn sqrt_down(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x == 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return f64::MAX;
    }
    let s = x.sqrt();
    if x < SUBNORMAL_GUARD {
        // The squared residual may underflow; nudge unconditionally.
        return s.next_down().max(0.0);
    }
    if s.mul_add(s, -x) > 0.0 {
        s.next_down()
    } else {
        s
    }
}

fn sqrt_up(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x == 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return f64::INFINITY;
    }
    let s = x.sqrt();
    if x < SUBNORMAL_GUARD {
        return s.next_up();
    }
    if s.mul_add(s, -x) < 0.0 {
        s.next_up()
    } else {
        s
    }
}

// ---------------------------------------------------------------------------
// The interval type.
// ---------------------------------------------------------------------------

/// Closed interval of reals with `f64` bounds.
///
/// Invariants: bounds are never NaN; `lo <= hi` unless the value is the
/// empty sentinel (`lo = +inf`, `hi = -inf`). `lo` may be `-inf` and `hi`
/// may be `+inf` for half-unbounded enclosures produced by overflow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            write!(f, "[empty]")
        } else {
            write!(f, "[{:?}, {:?}]", self.lo, self.hi)
        }
    }
}

impl Interval {
    /// The empty interval sentinel.
    pub const EMPTY: Interval = Interval {
        lo: f64::INFINITY,
        hi: f64::NEG_INFINITY,
    };

    /// The whole real line.
    pub const ENTIRE: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    /// Interval from exact bounds. Panics on NaN or inverted bounds.
    pub fn new(lo: f64, hi: f64) -> Interval {
        assert!(!lo.is_nan() && !hi.is_nan(), "NaN interval bound");
        assert!(lo <= hi, "inverted interval bounds {lo} > {hi}");
        Interval { lo, hi }
    }

    /// Degenerate interval holding a single point.
    pub fn point(v: f64) -> Interval {
        Interval::new(v, v)
    }

    /// Tightest f64 interval containing the rational range `[lo, hi]`.
    pub fn from_rats(lo: &Rat, hi: &Rat) -> Interval {
        assert!(lo <= hi, "inverted rational bounds");
        Interval::new(rat_to_f64_floor(lo), rat_to_f64_ceil(hi))
    }

    /// Tightest f64 interval containing the rational point `r`.
    pub fn from_rat(r: &Rat) -> Interval {
        Interval::from_rats(r, r)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    /// Upper bound on the width (rounded up).
    pub fn width(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            sub_up(self.hi, self.lo)
        }
    }

    /// A point inside the interval, halfway between the bounds.
    pub fn midpoint(&self) -> f64 {
        debug_assert!(!self.is_empty());
        if self.lo == f64::NEG_INFINITY && self.hi == f64::INFINITY {
            return 0.0;
        }
        if self.lo == f64::NEG_INFINITY {
            return f64::MIN;
        }
        if self.hi == f64::INFINITY {
            return f64::MAX;
        }
        let m = 0.5 * self.lo + 0.5 * self.hi;
        m.clamp(self.lo, self.hi)
    }

    /// Magnitude: max |x| over the interval.
    pub fn mag(&self) -> f64 {
        debug_assert!(!self.is_empty());
        self.lo.abs().max(self.hi.abs())
    }

    /// Mignitude: min |x| over the interval (0 when it contains 0).
    pub fn mig(&self) -> f64 {
        debug_assert!(!self.is_empty());
        if self.lo <= 0.0 && self.hi >= 0.0 {
            0.0
        } else {
            self.lo.abs().min(self.hi.abs())
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        other.is_empty() || (self.lo <= other.lo && other.hi <= self.hi)
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        if lo > hi {
            Interval::EMPTY
        } else {
            Interval { lo, hi }
        }
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        if self.is_empty() {
            return *other;
        }
        if other.is_empty() {
            return *self;
        }
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    /// Widens both bounds outward by `r` (rounded outward).
    pub fn inflate(&self, r: f64) -> Interval {
        debug_assert!(r >= 0.0 && !self.is_empty());
        Interval {
            lo: sub_down(self.lo, r),
            hi: add_up(self.hi, r),
        }
    }

    /// Splits at the midpoint; both halves share the split bound.
    pub fn split(&self) -> (Interval, Interval) {
        let m = self.midpoint();
        (Interval::new(self.lo, m), Interval::new(m, self.hi))
    }

    pub fn neg(&self) -> Interval {
        if self.is_empty() {
            return *self;
        }
        Interval {
            lo: -self.hi,
            hi: -self.lo,
        }
    }

    pub fn add(&self, other: &Interval) -> Interval {
        if self.is_empty() || other.is_empty() {
            return Interval::EMPTY;
        }
        Interval {
            lo: add_down(self.lo, other.lo),
            hi: add_up(self.hi, other.hi),
        }
    }

    pub fn sub(&self, other: &Interval) -> Interval {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Interval) -> Interval {
        if self.is_empty() || other.is_empty() {
            return Interval::EMPTY;
        }
        let (a, b, c, d) = (self.lo, self.hi, other.lo, other.hi);
        let lo = mul_down(a, c)
            .min(mul_down(a, d))
            .min(mul_down(b, c))
            .min(mul_down(b, d));
        let hi = mul_up(a, c)
            .max(mul_up(a, d))
            .max(mul_up(b, c))
            .max(mul_up(b, d));
        Interval { lo, hi }
    }

    /// Dedicated square rule: tight even when the interval straddles zero.
    pub fn sqr(&self) -> Interval {
        if self.is_empty() {
            return *self;
        }
        let mig = self.mig();
        let mag = self.mag();
        Interval {
            lo: mul_down(mig, mig).max(0.0),
            hi: mul_up(mag, mag),
        }
    }

    pub fn div(&self, other: &Interval) -> Result<Interval, DomainIssue> {
        if self.is_empty() || other.is_empty() {
            return Ok(Interval::EMPTY);
        }
        if other.lo <= 0.0 && other.hi >= 0.0 {
            return Err(DomainIssue::DivisionByZero);
        }
        let (a, b, c, d) = (self.lo, self.hi, other.lo, other.hi);
        let lo = div_down(a, c)
            .min(div_down(a, d))
            .min(div_down(b, c))
            .min(div_down(b, d));
        let hi = div_up(a, c)
            .max(div_up(a, d))
            .max(div_up(b, c))
            .max(div_up(b, d));
        Ok(Interval { lo, hi })
    }

    pub fn abs(&self) -> Interval {
        if self.is_empty() {
            return *self;
        }
        if self.lo >= 0.0 {
            *self
        } else if self.hi <= 0.0 {
            self.neg()
        } else {
            Interval {
                lo: 0.0,
                hi: self.mag(),
            }
        }
    }

    pub fn min_i(&self, other: &Interval) -> Interval {
        if self.is_empty() || other.is_empty() {
            return Interval::EMPTY;
        }
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.min(other.hi),
        }
    }

    pub fn max_i(&self, other: &Interval) -> Interval {
        if self.is_empty() || other.is_empty() {
            return Interval::EMPTY;
        }
        Interval {
            lo: self.lo.max(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    /// Integer power with the even/odd sign rule; `n == 0` yields `[1, 1]`.
    pub fn powi(&self, n: i32) -> Result<Interval, DomainIssue> {
        if self.is_empty() {
            return Ok(*self);
        }
        if n >= 0 {
            return Ok(self.pow_nonneg(n as u32));
        }
        if self.lo <= 0.0 && self.hi >= 0.0 {
            return Err(DomainIssue::NegativePowerOfZero);
        }
        let recip = Interval::point(1.0).div(self)?;
        Ok(recip.pow_nonneg((n as i64).unsigned_abs() as u32))
    }

    fn pow_nonneg(&self, n: u32) -> Interval {
        if n == 0 {
            return Interval::point(1.0);
        }
        if n == 1 {
            return *self;
        }
        if n % 2 == 0 {
            Interval {
                lo: point_pow(self.mig(), n, Dir::Down).max(0.0),
                hi: point_pow(self.mag(), n, Dir::Up),
            }
        } else {
            Interval {
                lo: point_pow_signed(self.lo, n, Dir::Down),
                hi: point_pow_signed(self.hi, n, Dir::Up),
            }
        }
    }

    pub fn sqrt(&self) -> Result<Interval, DomainIssue> {
        if self.is_empty() {
            return Ok(*self);
        }
        if self.lo < 0.0 {
            return Err(DomainIssue::SqrtOfNegative);
        }
        Ok(Interval {
            lo: sqrt_down(self.lo),
            hi: sqrt_up(self.hi),
        })
    }

    pub fn exp(&self) -> Interval {
        if self.is_empty() {
            return *self;
        }
        Interval {
            lo: exp_point(self.lo).lo.max(0.0),
            hi: exp_point(self.hi).hi,
        }
    }

    pub fn ln(&self) -> Result<Interval, DomainIssue> {
        if self.is_empty() {
            return Ok(*self);
        }
        if self.lo <= 0.0 {
            return Err(DomainIssue::LogOfNonPositive);
        }
        Ok(Interval {
            lo: ln_point(self.lo).lo,
            hi: ln_point(self.hi).hi,
        })
    }

    pub fn sin(&self) -> Interval {
        if self.is_empty() {
            return *self;
        }
        sin_interval(*self)
    }

    pub fn cos(&self) -> Interval {
        if self.is_empty() {
            return *self;
        }
        cos_interval(*self)
    }

    /// Exact rational lower bound (finite bounds are dyadic rationals).
    pub fn lo_rat(&self) -> Rat {
        debug_assert!(self.lo.is_finite());
        rat_from_f64(self.lo)
    }

    /// Exact rational upper bound.
    pub fn hi_rat(&self) -> Rat {
        debug_assert!(self.hi.is_finite());
        rat_from_f64(self.hi)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Dir {
    Down,
    Up,
}

/// Directed n-th power of a nonnegative value by binary exponentiation on
/// degenerate intervals (every step outward-rounded).
fn point_pow(v: f64, n: u32, dir: Dir) -> f64 {
    debug_assert!(v >= 0.0);
    let mut acc = Interval::point(1.0);
    let mut sq = Interval::point(v);
    let mut exp = n;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc.mul(&sq);
        }
        exp >>= 1;
        if exp > 0 {
            sq = sq.sqr();
        }
    }
    match dir {
        Dir::Down => acc.lo,
        Dir::Up => acc.hi,
    }
}

/// Directed odd power of a value of either sign.
fn point_pow_signed(v: f64, n: u32, dir: Dir) -> f64 {
    debug_assert!(n % 2 == 1);
    if v >= 0.0 {
        match dir {
            Dir::Down => point_pow(v, n, Dir::Down).max(0.0),
            Dir::Up => point_pow(v, n, Dir::Up),
        }
    } else {
        match dir {
            Dir::Down => -point_pow(-v, n, Dir::Up),
            Dir::Up => -point_pow(-v, n, Dir::Down).max(0.0),
        }
    }
}

// ---------------------------------------------------------------------------
// Transcendental enclosures.
// ---------------------------------------------------------------------------

/// Two-ULP enclosure of a mathematical constant from its nearest-rounded
/// f64 representation.
fn const_enclosure(nearest: f64) -> Interval {
    Interval::new(nearest.next_down(), nearest.next_up())
}

fn pi_interval() -> Interval {
    const_enclosure(std::f64::consts::PI)
}

fn two_pi_interval() -> Interval {
    pi_interval().mul(&Interval::point(2.0))
}

fn ln2_interval() -> Interval {
    const_enclosure(std::f64::consts::LN_2)
}

/// Multiplies by 2^k. The factor is an exact power of two (or a saturated
/// 0/inf for extreme k); over- and underflow are handled soundly per bound.
fn scale_pow2(v: Interval, k: i32) -> Interval {
    let f = (k as f64).exp2();
    let lo = {
        let y = v.lo * f;
        if y.is_infinite() {
            if y > 0.0 {
                f64::MAX
            } else {
                y
            }
        } else if v.lo != 0.0 && y.abs() < SUBNORMAL_GUARD {
            y.next_down()
        } else {
            y
        }
    };
    let hi = {
        let y = v.hi * f;
        if y.is_infinite() {
            if y < 0.0 {
                f64::MIN
            } else {
                y
            }
        } else if v.hi != 0.0 && y.abs() < SUBNORMAL_GUARD {
            y.next_up()
        } else {
            y
        }
    };
    Interval::new(lo, hi)
}

/// Rigorous enclosure of exp(x) for a single point.
fn exp_point(x: f64) -> Interval {
    if x == 0.0 {
        return Interval::point(1.0);
    }
    if x >= 710.0 {
        return Interval::new(f64::MAX, f64::INFINITY);
    }
    if x <= -746.0 {
        return Interval::new(0.0, f64::MIN_POSITIVE);
    }
    // Reduce: x = n*ln2 + r with |r| <= ln2/2 + reduction slack.
    let n = (x / std::f64::consts::LN_2).round();
    let r = Interval::point(x).sub(&ln2_interval().mul(&Interval::point(n)));
    debug_assert!(r.mag() < 0.35);
    // exp(r) by Taylor with explicit tail: sum_{k<=N} r^k/k! + R,
    // |R| <= |r|^{N+1}/(N+1)! * 1/(1 - |r|/(N+2)) < 2 |r|^{N+1}/(N+1)!.
    const N: u32 = 21;
    let mut sum = Interval::point(1.0);
    let mut term = Interval::point(1.0);
    for k in 1..=N {
        term = term.mul(&r).div(&Interval::point(k as f64)).expect("k > 0");
        sum = sum.add(&term);
    }
    let tail = 2.0 * taylor_tail(r.mag(), N + 1);
    let series = sum.add(&Interval::new(-tail, tail));
    scale_pow2(series, n as i32)
}

/// Rigorous enclosure of ln(x) for a single positive finite point.
fn ln_point(x: f64) -> Interval {
    debug_assert!(x > 0.0);
    if x == 1.0 {
        return Interval::point(0.0);
    }
    if x.is_infinite() {
        return Interval::new(f64::MAX, f64::INFINITY);
    }
    // Normalize subnormals so exponent extraction is exact.
    let (x, bias) = if x < f64::MIN_POSITIVE {
        (x * 2f64.powi(108), -108i64)
    } else {
        (x, 0i64)
    };
    // x = m * 2^k with m in [1, 2); fold once so m lands in [2/3, 4/3].
    let bits = x.to_bits();
    let mut k = ((bits >> 52) & 0x7ff) as i64 - 1023;
    let mut m = f64::from_bits((bits & 0x000f_ffff_ffff_ffff) | (1023u64 << 52));
    if m > 4.0 / 3.0 {
        m /= 2.0; // exact
        k += 1;
    }
    let k = k + bias;
    // ln(m) with u = m - 1 in [-1/3, 1/3]:
    // ln(1+u) = sum_{j<=N} (-1)^{j+1} u^j / j + R,
    // |R| <= |u|^{N+1} / ((N+1)(1 - |u|)).
    let u = Interval::point(m - 1.0); // Sterbenz: exact
    const N: u32 = 40;
    let mut sum = Interval::point(0.0);
    let mut upow = Interval::point(1.0);
    for j in 1..=N {
        upow = upow.mul(&u);
        let term = upow.div(&Interval::point(j as f64)).expect("j > 0");
        if j % 2 == 1 {
            sum = sum.add(&term);
        } else {
            sum = sum.sub(&term);
        }
    }
    let umag = u.mag();
    let tail = {
        let mut p = 1.0f64;
        for _ in 0..=N {
            p = mul_up(p, umag);
        }
        div_up(p, (N + 1) as f64 * (1.0 - umag) * 0.999)
    };
    let ln_m = sum.add(&Interval::new(-tail, tail));
    ln_m.add(&ln2_interval().mul(&Interval::point(k as f64)))
}

/// Taylor enclosure of sin over a reduced argument with |y| <= pi + slack.
fn sin_point_reduced(y: Interval) -> Interval {
    debug_assert!(y.mag() < 3.5);
    // sin(y) = sum_{k<=K} (-1)^k y^{2k+1}/(2k+1)! + R, |R| <= |y|^{2K+3}/(2K+3)!.
    const K: u32 = 16;
    let y2 = y.sqr();
    let mut term = y;
    let mut sum = y;
    for k in 1..=K {
        let denom = ((2 * k) * (2 * k + 1)) as f64;
        term = term
            .mul(&y2)
            .div(&Interval::point(denom))
            .expect("denom > 0")
            .neg();
        sum = sum.add(&term);
    }
    let tail = taylor_tail(y.mag(), 2 * K + 3);
    sum.add(&Interval::new(-tail, tail))
        .intersect(&Interval::new(-1.0, 1.0))
}

fn cos_point_reduced(y: Interval) -> Interval {
    debug_assert!(y.mag() < 3.5);
    const K: u32 = 16;
    let y2 = y.sqr();
    let mut term = Interval::point(1.0);
    let mut sum = Interval::point(1.0);
    for k in 1..=K {
        let denom = ((2 * k - 1) * (2 * k)) as f64;
        term = term
            .mul(&y2)
            .div(&Interval::point(denom))
            .expect("denom > 0")
            .neg();
        sum = sum.add(&term);
    }
    let tail = taylor_tail(y.mag(), 2 * K + 2);
    sum.add(&Interval::new(-tail, tail))
        .intersect(&Interval::new(-1.0, 1.0))
}

/// Upper bound on m^p / p! (a first-omitted-term Taylor tail).
fn taylor_tail(m: f64, p: u32) -> f64 {
    let mut num = 1.0f64;
    for _ in 0..p {
        num = mul_up(num, m);
    }
    let mut fact = 1.0f64;
    for j in 2..=p {
        fact *= j as f64;
    }
    // The factorial is rounded to nearest; shrinking the divisor slightly
    // keeps the quotient an upper bound.
    div_up(num, fact * 0.999)
}

/// Reduces a point into roughly [-pi, pi] as an interval, accounting for
/// the enclosure width of 2*pi times the reduction count.
fn reduce_mod_2pi(x: f64) -> Interval {
    let n = (x / (2.0 * std::f64::consts::PI)).round();
    Interval::point(x).sub(&two_pi_interval().mul(&Interval::point(n)))
}

fn sin_point(x: f64) -> Interval {
    if x == 0.0 {
        return Interval::point(0.0);
    }
    if x.abs() > 1e15 {
        // Reduction slack would dominate; fall back to the trivial range.
        return Interval::new(-1.0, 1.0);
    }
    sin_point_reduced(reduce_mod_2pi(x))
}

fn cos_point(x: f64) -> Interval {
    if x == 0.0 {
        return Interval::point(1.0);
    }
    if x.abs() > 1e15 {
        return Interval::new(-1.0, 1.0);
    }
    cos_point_reduced(reduce_mod_2pi(x))
}

/// True if some point of `[lo, hi]` may equal `target + 2*pi*k` for an
/// integer k. Conservative: any enclosure overlap counts.
fn may_contain_shifted(lo: f64, hi: f64, target: &Interval) -> bool {
    if hi - lo >= 2.0 * std::f64::consts::PI * 0.999 {
        return true;
    }
    let two_pi = two_pi_interval();
    let k_lo = ((lo - target.hi()) / (2.0 * std::f64::consts::PI)).floor() as i64 - 1;
    let k_hi = ((hi - target.lo()) / (2.0 * std::f64::consts::PI)).ceil() as i64 + 1;
    for k in k_lo..=k_hi {
        let shifted = target.add(&two_pi.mul(&Interval::point(k as f64)));
        if shifted.lo() <= hi && shifted.hi() >= lo {
            return true;
        }
    }
    false
}

fn sin_interval(x: Interval) -> Interval {
    if x.width() >= 2.0 * std::f64::consts::PI || x.lo.abs() > 1e15 || x.hi.abs() > 1e15 {
        return Interval::new(-1.0, 1.0);
    }
    let mut out = sin_point(x.lo).hull(&sin_point(x.hi));
    let half_pi = pi_interval().mul(&Interval::point(0.5));
    if may_contain_shifted(x.lo, x.hi, &half_pi) {
        out = out.hull(&Interval::point(1.0));
    }
    if may_contain_shifted(x.lo, x.hi, &half_pi.neg()) {
        out = out.hull(&Interval::point(-1.0));
    }
    out.intersect(&Interval::new(-1.0, 1.0))
}

fn cos_interval(x: Interval) -> Interval {
    if x.width() >= 2.0 * std::f64::consts::PI || x.lo.abs() > 1e15 || x.hi.abs() > 1e15 {
        return Interval::new(-1.0, 1.0);
    }
    let mut out = cos_point(x.lo).hull(&cos_point(x.hi));
    if may_contain_shifted(x.lo, x.hi, &Interval::point(0.0)) {
        out = out.hull(&Interval::point(1.0));
    }
    if may_contain_shifted(x.lo, x.hi, &pi_interval()) {
        out = out.hull(&Interval::point(-1.0));
    }
    out.intersect(&Interval::new(-1.0, 1.0))
}

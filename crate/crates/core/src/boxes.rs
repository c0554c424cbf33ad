//! Axis-aligned boxes over named variables, used as evaluation
//! environments and as the unit of branch-and-prune search.
//!
//! Dimensions keep insertion order (binding order), which the solver
//! relies on for deterministic splitting and candidate enumeration.

use crate::formula::Binding;
use crate::interval::Interval;
use crate::rational::{rat_from_f64, Rat};
use num_traits::One;
use std::fmt;

/// A box: ordered list of `(variable, interval)` pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntervalBox {
    dims: Vec<(String, Interval)>,
}

impl IntervalBox {
    pub fn new() -> IntervalBox {
        IntervalBox { dims: Vec::new() }
    }

    /// Box spanned by quantifier bindings, bounds rounded outward.
    pub fn from_bindings(bindings: &[Binding]) -> IntervalBox {
        let mut dims = Vec::with_capacity(bindings.len());
        for b in bindings {
            dims.push((b.name.clone(), Interval::from_rats(&b.lo, &b.hi)));
        }
        IntervalBox { dims }
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Interval> {
        self.dims
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, iv)| iv)
    }

    /// Replaces an existing dimension or appends a new one.
    pub fn set(&mut self, name: impl Into<String>, iv: Interval) {
        let name = name.into();
        match self.dims.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = iv,
            None => self.dims.push((name, iv)),
        }
    }

    pub fn with(mut self, name: impl Into<String>, iv: Interval) -> IntervalBox {
        self.set(name, iv);
        self
    }

    /// Appends all dimensions of `other`, overriding same-named ones.
    pub fn extended(&self, other: &IntervalBox) -> IntervalBox {
        let mut out = self.clone();
        for (n, iv) in &other.dims {
            out.set(n.clone(), *iv);
        }
        out
    }

    pub fn iter(&self) -> std::slice::Iter<'_, (String, Interval)> {
        self.dims.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.dims.iter().map(|(n, _)| n.as_str())
    }

    /// Maximum width over all dimensions.
    pub fn max_width(&self) -> f64 {
        self.dims
            .iter()
            .map(|(_, iv)| iv.width())
            .fold(0.0, f64::max)
    }

    /// Index of the widest dimension (first on ties); None when empty.
    pub fn widest_dim(&self) -> Option<usize> {
        if self.dims.is_empty() {
            return None;
        }
        let mut best = 0;
        let mut best_w = self.dims[0].1.width();
        for (i, (_, iv)) in self.dims.iter().enumerate().skip(1) {
            let w = iv.width();
            if w > best_w {
                best = i;
                best_w = w;
            }
        }
        Some(best)
    }

    /// Splits dimension `idx` at its midpoint.
    pub fn split_dim(&self, idx: usize) -> (IntervalBox, IntervalBox) {
        let (lo_half, hi_half) = self.dims[idx].1.split();
        let mut a = self.clone();
        let mut b = self.clone();
        a.dims[idx].1 = lo_half;
        b.dims[idx].1 = hi_half;
        (a, b)
    }

    /// The midpoint of every dimension, as a degenerate box.
    pub fn midpoint_box(&self) -> IntervalBox {
        IntervalBox {
            dims: self
                .dims
                .iter()
                .map(|(n, iv)| (n.clone(), Interval::point(iv.midpoint())))
                .collect(),
        }
    }

    /// All corner points as degenerate boxes, in lexicographic order over
    /// (lo, hi) choices per dimension (lo = 0 bit first, low dim = most
    /// significant). 2^d entries.
    pub fn corner_boxes(&self) -> Vec<IntervalBox> {
        let d = self.dims.len();
        let count = 1usize << d;
        let mut out = Vec::with_capacity(count);
        for mask in 0..count {
            let dims = self
                .dims
                .iter()
                .enumerate()
                .map(|(i, (n, iv))| {
                    let take_hi = (mask >> (d - 1 - i)) & 1 == 1;
                    let v = if take_hi { iv.hi() } else { iv.lo() };
                    (n.clone(), Interval::point(v))
                })
                .collect();
            out.push(IntervalBox { dims });
        }
        out
    }

    /// True when every dimension of `other` (same names, any order) is
    /// contained in this box's corresponding dimension.
    pub fn contains_box(&self, other: &IntervalBox) -> bool {
        other.dims.iter().all(|(n, iv)| {
            self.get(n)
                .map(|mine| mine.contains_interval(iv))
                .unwrap_or(false)
        })
    }

    /// Exact volume: the product of dimension widths as rationals
    /// (bounds are dyadic). Zero-dimensional boxes have volume 1.
    pub fn volume(&self) -> Rat {
        let mut v = Rat::one();
        for (_, iv) in &self.dims {
            v *= rat_from_f64(iv.hi()) - rat_from_f64(iv.lo());
        }
        v
    }
}

impl fmt::Display for IntervalBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, (n, iv)) in self.dims.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "({n} {iv})")?;
        }
        f.write_str(")")
    }
}

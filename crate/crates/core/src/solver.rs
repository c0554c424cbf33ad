//! Branch-and-prune decision procedure for bounded first-order sentences
//! over the reals, decided up to a rational slack `delta`.
//!
//! The procedure keeps two rewrites of the matrix: an *acceptance* copy whose
//! thresholds are relaxed by `delta` on the side that may answer positively,
//! and a *refutation* copy kept at (or strengthened beyond) the original
//! thresholds. A sentence whose outermost block is existential is answered
//! `delta-sat` (with a witness satisfying the relaxed matrix) or `unsat`
//! (with a box cover on which the original matrix is certifiably false); a
//! universally quantified sentence is answered `valid` (original matrix
//! certifiably true on a cover) or `delta-false` (with a counterexample for
//! the strengthened matrix). Acceptance is always tried before refutation,
//! so marginal instances resolve to the affirmative side.
//!
//! Search is organized per quantifier block over a worklist of cells keyed by
//! their split path. Cells are evaluated in canonical depth-first,
//! left-to-right order and the first conclusive cell in that order wins, so
//! results — including every serialized certificate byte — are identical for
//! any worker count.

use crate::boxes::IntervalBox;
use crate::certificate::{AtomFact, CertNode};
use crate::diff::{partial, simplify};
use crate::eval::{
    eval_qf, eval_term, eval_term_point, lipschitz_bound, EvalCtx, Mode, TruthValue,
};
use crate::formula::{Atom, Formula, FormulaError, PrenexBlock, QuantKind};
use crate::interval::Interval;
use crate::ode::OdeRegistry;
use crate::rational::{rat_to_f64_floor, Rat};
use crate::term::Term;
use num_traits::Zero;
use rayon::prelude::*;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::time::{Duration, Instant};
use thiserror::Error;

/// Answer vocabulary. `DeltaSat`/`Unsat` answer existential sentences,
/// `Valid`/`DeltaFalse` universal ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    DeltaSat,
    Unsat,
    Valid,
    DeltaFalse,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::DeltaSat => "delta-sat",
            Verdict::Unsat => "unsat",
            Verdict::Valid => "valid",
            Verdict::DeltaFalse => "delta-false",
        })
    }
}

impl std::str::FromStr for Verdict {
    type Err = String;
    fn from_str(s: &str) -> Result<Verdict, String> {
        match s {
            "delta-sat" => Ok(Verdict::DeltaSat),
            "unsat" => Ok(Verdict::Unsat),
            "valid" => Ok(Verdict::Valid),
            "delta-false" => Ok(Verdict::DeltaFalse),
            _ => Err(format!("unknown verdict '{s}'")),
        }
    }
}

/// Tuning knobs for a solve call.
#[derive(Clone, Debug)]
pub struct SolverConfig {
    /// Decision slack; must be positive.
    pub delta: Rat,
    /// Maximum split depth per quantifier block.
    pub max_depth: u32,
    /// Wall-clock budget for the whole call, in milliseconds.
    pub timeout_ms: u64,
    /// Worker threads for evaluating cells of the outermost block.
    pub workers: usize,
    /// When set (the default), reported wall time is zeroed so that output
    /// and serialized certificates are byte-identical across runs.
    pub deterministic: bool,
    /// Per-atom slack overrides as `(atom index, slack)` pairs; atoms are
    /// numbered in preorder over the matrix.
    pub atom_deltas: Vec<(usize, Rat)>,
    /// Override for the flow integrator step size.
    pub ode_step: Option<f64>,
    /// How many cells may stay undecided at the refinement limits before the
    /// block attempt gives up.
    pub unknown_budget: u32,
    /// Round limit for the counterexample-guided parameter search.
    pub max_cegis_iters: u32,
}

impl Default for SolverConfig {
    fn default() -> SolverConfig {
        SolverConfig {
            delta: Rat::new(1.into(), 100.into()),
            max_depth: 64,
            timeout_ms: 60_000,
            workers: 1,
            deterministic: true,
            atom_deltas: Vec::new(),
            ode_step: None,
            unknown_budget: 32,
            max_cegis_iters: 64,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        if self.delta <= Rat::zero() {
            return Err(SolveError::Config("delta must be positive".into()));
        }
        if self.max_depth == 0 {
            return Err(SolveError::Config("max_depth must be at least 1".into()));
        }
        if self.timeout_ms == 0 {
            return Err(SolveError::Config("timeout_ms must be positive".into()));
        }
        if self.workers == 0 {
            return Err(SolveError::Config("workers must be at least 1".into()));
        }
        if self.unknown_budget == 0 {
            return Err(SolveError::Config("unknown_budget must be at least 1".into()));
        }
        if self.max_cegis_iters == 0 {
            return Err(SolveError::Config("max_cegis_iters must be at least 1".into()));
        }
        for (idx, d) in &self.atom_deltas {
            if *d <= Rat::zero() {
                return Err(SolveError::Config(format!(
                    "per-atom slack for atom {idx} must be positive"
                )));
            }
        }
        Ok(())
    }
}

/// Search effort counters. With `deterministic` set, `wall_ms` is zero.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SolveStats {
    pub boxes_explored: u64,
    pub max_depth: u32,
    pub unknown_leaves: u64,
    pub wall_ms: u64,
}

impl SolveStats {
    fn absorb(&mut self, other: &SolveStats) {
        self.boxes_explored += other.boxes_explored;
        self.unknown_leaves += other.unknown_leaves;
        self.max_depth = self.max_depth.max(other.max_depth);
    }
}

/// A decided sentence: the verdict, the witness point when the verdict is of
/// witness kind, the certificate tree when one could be built, and counters.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub verdict: Verdict,
    pub witness: Option<Vec<(String, Rat)>>,
    pub certificate: Option<CertNode>,
    pub stats: SolveStats,
}

#[derive(Debug, Error)]
pub enum SolveError {
    /// The search exhausted its budgets without reaching a verdict. This is
    /// an error, never a verdict: callers must treat it as "no answer".
    #[error("inconclusive: {reason} (best box: {best_box})")]
    Inconclusive { reason: String, best_box: String },
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid solver configuration: {0}")]
    Config(String),
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

/// Outcome of deciding one (sub)problem on one cell.
enum Decision {
    True(CertNode),
    False(CertNode),
    Unknown { reason: String, cell: String },
}

/// Outcome of evaluating one worklist cell.
enum TaskOut {
    /// The whole block is decided; propagate immediately.
    Decided(Decision),
    /// This cell joined the cover; keep going.
    Piece(CertNode),
    /// Undecidable at the refinement limits.
    Undecided,
    Split {
        dim: usize,
        at: Rat,
    },
}

enum Rec {
    Leaf(CertNode),
    Split { dim: usize, at: Rat },
}

#[derive(Clone)]
struct Cell {
    rect: Vec<(Rat, Rat)>,
    depth: u32,
}

type Path = Vec<u8>;

struct Engine<'a> {
    blocks: Vec<PrenexBlock>,
    matrix_accept: Formula,
    matrix_refute: Formula,
    accept_mode: Mode,
    refute_mode: Mode,
    cfg: &'a SolverConfig,
    ctx: EvalCtx<'a>,
    deadline: Instant,
}

fn half_sum(lo: &Rat, hi: &Rat) -> Rat {
    (lo + hi) / Rat::new(2.into(), 1.into())
}

fn width_f64(lo: &Rat, hi: &Rat) -> f64 {
    let w = rat_to_f64_floor(hi) - rat_to_f64_floor(lo);
    if w.is_finite() {
        w.max(0.0)
    } else {
        f64::INFINITY
    }
}

impl<'a> Engine<'a> {
    fn new(
        f: &Formula,
        accept_mode: Mode,
        refute_mode: Mode,
        cfg: &'a SolverConfig,
        registry: &'a OdeRegistry,
    ) -> Result<Engine<'a>, SolveError> {
        cfg.validate()?;
        let (blocks, matrix) = f.prenex()?;
        let n_atoms = matrix.atoms().len();
        let mut overrides: BTreeMap<usize, Rat> = BTreeMap::new();
        for (idx, d) in &cfg.atom_deltas {
            if *idx >= n_atoms {
                return Err(SolveError::Config(format!(
                    "per-atom slack index {idx} out of range (matrix has {n_atoms} atoms)"
                )));
            }
            overrides.insert(*idx, d.clone());
        }
        let matrix_accept = pre_shift(&matrix, &overrides, &accept_mode, &cfg.delta);
        let matrix_refute = pre_shift(&matrix, &overrides, &refute_mode, &cfg.delta);
        let ctx = match cfg.ode_step {
            Some(step) => EvalCtx::with_step(registry, step),
            None => EvalCtx::new(registry),
        };
        Ok(Engine {
            blocks,
            matrix_accept,
            matrix_refute,
            accept_mode,
            refute_mode,
            cfg,
            ctx,
            deadline: Instant::now() + Duration::from_millis(cfg.timeout_ms),
        })
    }

    fn run(&self) -> Result<(Decision, SolveStats), SolveError> {
        let mut stats = SolveStats::default();
        let start = Instant::now();
        let decision = if self.cfg.workers > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.cfg.workers)
                .build()
                .map_err(|e| SolveError::Config(format!("cannot build worker pool: {e}")))?;
            pool.install(|| self.solve_rest(0, &IntervalBox::new(), true, &mut stats))?
        } else {
            self.solve_rest(0, &IntervalBox::new(), true, &mut stats)?
        };
        stats.wall_ms = if self.cfg.deterministic {
            0
        } else {
            start.elapsed().as_millis() as u64
        };
        Ok((decision, stats))
    }

    fn solve_rest(
        &self,
        k: usize,
        env: &IntervalBox,
        top: bool,
        stats: &mut SolveStats,
    ) -> Result<Decision, SolveError> {
        if k == self.blocks.len() {
            return self.eval_matrix(env);
        }
        self.solve_block(k, env, top, stats)
    }

    fn solve_block(
        &self,
        k: usize,
        env: &IntervalBox,
        top: bool,
        stats: &mut SolveStats,
    ) -> Result<Decision, SolveError> {
        let block = &self.blocks[k];
        let is_exists = block.kind == QuantKind::Exists;
        let names: Vec<String> = block.bindings.iter().map(|b| b.name.clone()).collect();
        let root_rect: Vec<(Rat, Rat)> = block
            .bindings
            .iter()
            .map(|b| (b.lo.clone(), b.hi.clone()))
            .collect();

        // Hull environment (this block and all inner blocks at full range)
        // for sensitivity estimates.
        let mut hull = env.clone();
        for inner in &self.blocks[k..] {
            for b in &inner.bindings {
                hull = hull.with(b.name.clone(), Interval::from_rats(&b.lo, &b.hi));
            }
        }
        let (w_min, scales) = self.block_metrics(&hull, &names);

        let mut work: BTreeMap<Path, Cell> = BTreeMap::new();
        work.insert(Vec::new(), Cell { rect: root_rect, depth: 0 });
        let mut records: BTreeMap<Path, Rec> = BTreeMap::new();
        let mut resolved: BTreeMap<Path, Result<(TaskOut, SolveStats), SolveError>> =
            BTreeMap::new();
        let mut unknowns: u64 = 0;
        let mut first_unknown: Option<String> = None;

        let parallel = top && self.cfg.workers > 1;
        let chunk = if parallel { (2 * self.cfg.workers).max(64) } else { 1 };

        while !work.is_empty() {
            if Instant::now() >= self.deadline {
                let cell = work
                    .values()
                    .next()
                    .map(|c| self.cell_str(&names, &c.rect))
                    .unwrap_or_default();
                return Err(SolveError::Inconclusive {
                    reason: format!("timed out after {} ms", self.cfg.timeout_ms),
                    best_box: cell,
                });
            }

            let batch: Vec<(Path, Cell)> = work
                .iter()
                .take(chunk)
                .map(|(p, c)| (p.clone(), c.clone()))
                .collect();
            for (p, _) in &batch {
                work.remove(p);
            }

            // Evaluate the batch, reusing results stashed from interrupted
            // rounds so no cell is ever evaluated twice.
            let mut slots: Vec<Option<Result<(TaskOut, SolveStats), SolveError>>> =
                Vec::with_capacity(batch.len());
            let mut fresh: Vec<usize> = Vec::new();
            for (i, (p, _)) in batch.iter().enumerate() {
                match resolved.remove(p) {
                    Some(hit) => slots.push(Some(hit)),
                    None => {
                        slots.push(None);
                        fresh.push(i);
                    }
                }
            }
            let outputs: Vec<Result<(TaskOut, SolveStats), SolveError>> =
                if parallel && fresh.len() > 1 {
                    fresh
                        .par_iter()
                        .map(|&i| self.eval_cell(k, env, is_exists, &names, &batch[i].1, w_min, &scales))
                        .collect()
                } else {
                    fresh
                        .iter()
                        .map(|&i| self.eval_cell(k, env, is_exists, &names, &batch[i].1, w_min, &scales))
                        .collect()
                };
            for (slot_idx, out) in fresh.into_iter().zip(outputs) {
                slots[slot_idx] = Some(out);
            }

            // Commit in canonical (lexicographic path) order. The first
            // conclusive cell in that order decides, regardless of which
            // worker evaluated it.
            let mut interrupted: Option<usize> = None;
            for (i, (path, cell)) in batch.iter().enumerate() {
                let (out, st) = slots[i].take().expect("slot filled")?;
                stats.absorb(&st);
                match out {
                    TaskOut::Decided(d) => return Ok(d),
                    TaskOut::Piece(node) => {
                        stats.boxes_explored += 1;
                        stats.max_depth = stats.max_depth.max(cell.depth);
                        records.insert(path.clone(), Rec::Leaf(node));
                    }
                    TaskOut::Undecided => {
                        stats.boxes_explored += 1;
                        stats.max_depth = stats.max_depth.max(cell.depth);
                        stats.unknown_leaves += 1;
                        unknowns += 1;
                        if first_unknown.is_none() {
                            first_unknown = Some(self.cell_str(&names, &cell.rect));
                        }
                        if unknowns > u64::from(self.cfg.unknown_budget) {
                            return Ok(Decision::Unknown {
                                reason: "undecided-cell budget exhausted".into(),
                                cell: first_unknown.unwrap_or_default(),
                            });
                        }
                    }
                    TaskOut::Split { dim, at } => {
                        stats.boxes_explored += 1;
                        stats.max_depth = stats.max_depth.max(cell.depth);
                        records.insert(path.clone(), Rec::Split { dim, at: at.clone() });
                        let mut lo_rect = cell.rect.clone();
                        lo_rect[dim].1 = at.clone();
                        let mut hi_rect = cell.rect.clone();
                        hi_rect[dim].0 = at;
                        let mut lo_path = path.clone();
                        lo_path.push(0);
                        let mut hi_path = path.clone();
                        hi_path.push(1);
                        work.insert(lo_path, Cell { rect: lo_rect, depth: cell.depth + 1 });
                        work.insert(hi_path, Cell { rect: hi_rect, depth: cell.depth + 1 });
                        interrupted = Some(i);
                        break;
                    }
                }
            }
            if let Some(i) = interrupted {
                // The children of the split sort before the rest of the
                // batch; requeue the uncommitted cells and stash their
                // finished evaluations.
                for (j, (path, _)) in batch.iter().enumerate().skip(i + 1) {
                    if let Some(r) = slots[j].take() {
                        resolved.insert(path.clone(), r);
                    }
                }
                for (path, cell) in batch.into_iter().skip(i + 1) {
                    work.insert(path, cell);
                }
            }
        }

        if unknowns == 0 {
            let cover = assemble(&records, &mut Vec::new(), &names)?;
            return Ok(if is_exists {
                Decision::False(cover)
            } else {
                Decision::True(cover)
            });
        }
        Ok(Decision::Unknown {
            reason: format!("{unknowns} cells undecided at the refinement limits"),
            cell: first_unknown.unwrap_or_default(),
        })
    }

    fn eval_cell(
        &self,
        k: usize,
        env: &IntervalBox,
        is_exists: bool,
        names: &[String],
        cell: &Cell,
        w_min: f64,
        scales: &[f64],
    ) -> Result<(TaskOut, SolveStats), SolveError> {
        let mut st = SolveStats::default();
        let last = k + 1 == self.blocks.len();
        let mut env_cell = env.clone();
        for (i, name) in names.iter().enumerate() {
            env_cell = env_cell.with(name.clone(), Interval::from_rats(&cell.rect[i].0, &cell.rect[i].1));
        }

        // Whole-cell decision first: certainty over the box transfers to the
        // midpoint (for a witness) or settles the cell of the cover. A
        // refuted existential cell is *held back* rather than committed: a
        // point in the slack margin may still accept, and the affirmative
        // answer is preferred whenever both are sound.
        let mut held_piece: Option<CertNode> = None;
        let whole = self.solve_rest(k + 1, &env_cell, false, &mut st)?;
        match (is_exists, whole) {
            (true, Decision::True(sub)) => {
                let bindings = mid_bindings(names, &cell.rect);
                return Ok((
                    TaskOut::Decided(Decision::True(CertNode::Point {
                        bindings,
                        child: Box::new(sub),
                    })),
                    st,
                ));
            }
            (true, Decision::False(sub)) => held_piece = Some(sub),
            (false, Decision::True(sub)) => return Ok((TaskOut::Piece(sub), st)),
            (false, Decision::False(sub)) => {
                // The whole cell breaks the condition, so any point in it is
                // a counterexample; report the most violating candidate
                // rather than the blind midpoint (which may sit exactly on
                // the marginal locus, e.g. an equilibrium).
                let bindings = self
                    .candidates(names, &cell.rect, env, false, last)
                    .into_iter()
                    .next()
                    .unwrap_or_else(|| mid_bindings(names, &cell.rect));
                return Ok((
                    TaskOut::Decided(Decision::False(CertNode::Point {
                        bindings,
                        child: Box::new(sub),
                    })),
                    st,
                ));
            }
            (_, Decision::Unknown { .. }) => {}
        }

        // Point probes: the midpoint, then the corners (in lexicographic
        // order) for low-dimensional cells. For the innermost universal
        // block the probes are reordered by how strongly they violate the
        // strengthened matrix, so reported counterexamples are the most
        // violating candidates, not merely the first.
        for cand in self.candidates(names, &cell.rect, env, is_exists, last) {
            let mut env_pt = env.clone();
            for (name, v) in &cand {
                env_pt = env_pt.with(name.clone(), Interval::from_rat(v));
            }
            match self.solve_rest(k + 1, &env_pt, false, &mut st)? {
                Decision::True(sub) if is_exists => {
                    return Ok((
                        TaskOut::Decided(Decision::True(CertNode::Point {
                            bindings: cand,
                            child: Box::new(sub),
                        })),
                        st,
                    ));
                }
                Decision::False(sub) if !is_exists => {
                    return Ok((
                        TaskOut::Decided(Decision::False(CertNode::Point {
                            bindings: cand,
                            child: Box::new(sub),
                        })),
                        st,
                    ));
                }
                _ => {}
            }
        }

        if let Some(sub) = held_piece {
            return Ok((TaskOut::Piece(sub), st));
        }

        let widest = cell
            .rect
            .iter()
            .map(|(lo, hi)| width_f64(lo, hi))
            .fold(0.0f64, f64::max);
        if cell.depth >= self.cfg.max_depth || widest <= w_min {
            return Ok((TaskOut::Undecided, st));
        }
        match split_choice(&cell.rect, scales) {
            Some((dim, at)) => Ok((TaskOut::Split { dim, at }, st)),
            None => Ok((TaskOut::Undecided, st)),
        }
    }

    fn candidates(
        &self,
        names: &[String],
        rect: &[(Rat, Rat)],
        env: &IntervalBox,
        is_exists: bool,
        last: bool,
    ) -> Vec<Vec<(String, Rat)>> {
        let d = rect.len();
        let mut points: Vec<Vec<Rat>> = Vec::new();
        points.push(rect.iter().map(|(lo, hi)| half_sum(lo, hi)).collect());
        if d <= 4 {
            for mask in 0..(1u32 << d) {
                let corner: Vec<Rat> = rect
                    .iter()
                    .enumerate()
                    .map(|(i, (lo, hi))| if mask >> i & 1 == 1 { hi.clone() } else { lo.clone() })
                    .collect();
                if !points.contains(&corner) {
                    points.push(corner);
                }
            }
        }
        let cands: Vec<Vec<(String, Rat)>> = points
            .into_iter()
            .map(|pt| names.iter().cloned().zip(pt).collect())
            .collect();
        if !is_exists && last {
            // Rank by violation margin, largest first; candidates that
            // cannot refute (non-positive margin) are dropped outright.
            let mut scored: Vec<(f64, usize)> = Vec::new();
            for (i, cand) in cands.iter().enumerate() {
                let mut env_pt = env.clone();
                for (name, v) in cand {
                    env_pt = env_pt.with(name.clone(), Interval::from_rat(v));
                }
                let v = self.violation(&self.matrix_refute, &env_pt);
                if v.is_finite() && v > 0.0 {
                    scored.push((v, i));
                }
            }
            scored.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.1.cmp(&b.1))
            });
            return scored.into_iter().map(|(_, i)| cands[i].clone()).collect();
        }
        cands
    }

    /// How far the point is on the false side of the matrix thresholds:
    /// positive iff the enclosure at the point could certify falsity.
    fn violation(&self, f: &Formula, env: &IntervalBox) -> f64 {
        match f {
            Formula::Atom(a) => match eval_term(&a.term, env, &self.ctx) {
                Ok(enc) if !enc.is_empty() && enc.hi().is_finite() => {
                    let theta = &a.shift + self.refute_mode.threshold_offset();
                    rat_to_f64_floor(&theta) - enc.hi()
                }
                _ => f64::NEG_INFINITY,
            },
            Formula::And(cs) => cs
                .iter()
                .map(|c| self.violation(c, env))
                .fold(f64::NEG_INFINITY, f64::max),
            Formula::Or(cs) => cs
                .iter()
                .map(|c| self.violation(c, env))
                .fold(f64::INFINITY, f64::min),
            Formula::Quant(..) => f64::NEG_INFINITY,
        }
    }

    fn block_metrics(&self, hull: &IntervalBox, names: &[String]) -> (f64, Vec<f64>) {
        let atoms = self.matrix_refute.atoms();
        let mut l_max = 0.0f64;
        for a in &atoms {
            let l = lipschitz_bound(&a.term, hull, &self.ctx);
            if l.is_finite() {
                l_max = l_max.max(l);
            }
        }
        let delta = rat_to_f64_floor(&self.cfg.delta);
        let w_min = (delta / (4.0 * l_max.max(1e-9))).max(1e-12);
        let mut scales = Vec::with_capacity(names.len());
        for name in names {
            let mut s = 0.0f64;
            for a in &atoms {
                let l = match partial(&a.term, name) {
                    Ok(dt) => match eval_term(&simplify(&dt), hull, &self.ctx) {
                        Ok(enc) if !enc.is_empty() => enc.mag(),
                        _ => lipschitz_bound(&a.term, hull, &self.ctx),
                    },
                    Err(_) => lipschitz_bound(&a.term, hull, &self.ctx),
                };
                if l.is_finite() {
                    s = s.max(l);
                }
            }
            if !s.is_finite() || s <= 0.0 {
                s = 1.0;
            }
            scales.push(s);
        }
        (w_min, scales)
    }

    fn eval_matrix(&self, env: &IntervalBox) -> Result<Decision, SolveError> {
        let acc = match eval_qf(&self.matrix_accept, env, &self.ctx, &self.accept_mode) {
            Ok(tv) => tv,
            Err(e) if e.is_resolvable_by_splitting() => TruthValue::Unknown,
            Err(e) => return Err(e.into()),
        };
        if acc == TruthValue::CertTrue {
            if let Some(facts) = support(
                &self.matrix_accept,
                env,
                &self.ctx,
                &self.accept_mode,
                TruthValue::CertTrue,
            ) {
                return Ok(Decision::True(CertNode::Facts { facts }));
            }
        }
        let refu = match eval_qf(&self.matrix_refute, env, &self.ctx, &self.refute_mode) {
            Ok(tv) => tv,
            Err(e) if e.is_resolvable_by_splitting() => TruthValue::Unknown,
            Err(e) => return Err(e.into()),
        };
        if refu == TruthValue::CertFalse {
            if let Some(facts) = support(
                &self.matrix_refute,
                env,
                &self.ctx,
                &self.refute_mode,
                TruthValue::CertFalse,
            ) {
                return Ok(Decision::False(CertNode::Facts { facts }));
            }
        }
        Ok(Decision::Unknown {
            reason: "matrix undecided on this cell".into(),
            cell: String::new(),
        })
    }

    fn cell_str(&self, names: &[String], rect: &[(Rat, Rat)]) -> String {
        let mut s = String::new();
        for (i, name) in names.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            s.push_str(&format!("({} [{} {}])", name, rect[i].0, rect[i].1));
        }
        s
    }
}

fn mid_bindings(names: &[String], rect: &[(Rat, Rat)]) -> Vec<(String, Rat)> {
    names
        .iter()
        .cloned()
        .zip(rect.iter().map(|(lo, hi)| half_sum(lo, hi)))
        .collect()
}

fn split_choice(rect: &[(Rat, Rat)], scales: &[f64]) -> Option<(usize, Rat)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (lo, hi)) in rect.iter().enumerate() {
        let w = width_f64(lo, hi);
        if w <= 0.0 {
            continue;
        }
        let score = w * scales[i];
        match best {
            Some((_, s)) if score <= s => {}
            _ => best = Some((i, score)),
        }
    }
    let (dim, _) = best?;
    let at = half_sum(&rect[dim].0, &rect[dim].1);
    if at <= rect[dim].0 || at >= rect[dim].1 {
        return None;
    }
    Some((dim, at))
}

fn assemble(
    records: &BTreeMap<Path, Rec>,
    path: &mut Path,
    names: &[String],
) -> Result<CertNode, SolveError> {
    match records.get(path) {
        Some(Rec::Leaf(node)) => Ok(node.clone()),
        Some(Rec::Split { dim, at }) => {
            let var = names[*dim].clone();
            let at = at.clone();
            path.push(0);
            let below = assemble(records, path, names)?;
            path.pop();
            path.push(1);
            let above = assemble(records, path, names)?;
            path.pop();
            Ok(CertNode::Split {
                var,
                at,
                below: Box::new(below),
                above: Box::new(above),
            })
        }
        None => Err(SolveError::Unsupported(
            "internal error: incomplete cover record".into(),
        )),
    }
}

/// Shift atom thresholds so that evaluating the result under the *global*
/// mode applies each atom's own slack instead: under weakening,
/// `shift - d_i + d == (shift + adj) - d`; dually under strengthening.
fn pre_shift(
    matrix: &Formula,
    overrides: &BTreeMap<usize, Rat>,
    mode: &Mode,
    global: &Rat,
) -> Formula {
    if overrides.is_empty() {
        return matrix.clone();
    }
    matrix.map_atoms(&mut |idx, atom| match overrides.get(&idx) {
        None => atom.clone(),
        Some(di) => {
            let adj = match mode {
                Mode::Original => Rat::zero(),
                Mode::Weakened(_) => global - di,
                Mode::Strengthened(_) => di - global,
            };
            Atom {
                term: atom.term.clone(),
                strict: atom.strict,
                shift: &atom.shift + adj,
            }
        }
    })
}

/// Collect the atom enclosures that justify `want` for the formula on this
/// cell: every conjunct for a true conjunction, one decisive disjunct for a
/// false disjunction, and dually. Indices follow matrix preorder.
fn support(
    f: &Formula,
    env: &IntervalBox,
    ctx: &EvalCtx,
    mode: &Mode,
    want: TruthValue,
) -> Option<Vec<AtomFact>> {
    fn rec(
        f: &Formula,
        env: &IntervalBox,
        ctx: &EvalCtx,
        mode: &Mode,
        want: TruthValue,
        idx: usize,
        out: &mut Vec<AtomFact>,
    ) -> bool {
        match f {
            Formula::Atom(a) => {
                let Ok(enc) = eval_term(&a.term, env, ctx) else {
                    return false;
                };
                if enc.is_empty() {
                    return false;
                }
                let theta = &a.shift + mode.threshold_offset();
                let decided = match want {
                    TruthValue::CertTrue => {
                        enc.lo().is_finite()
                            && if a.strict { enc.lo_rat() > theta } else { enc.lo_rat() >= theta }
                    }
                    TruthValue::CertFalse => {
                        enc.hi().is_finite()
                            && if a.strict { enc.hi_rat() <= theta } else { enc.hi_rat() < theta }
                    }
                    TruthValue::Unknown => false,
                };
                if !decided {
                    return false;
                }
                let lo = enc.lo().is_finite().then(|| enc.lo_rat());
                let hi = enc.hi().is_finite().then(|| enc.hi_rat());
                out.push(AtomFact { atom: idx, lo, hi });
                true
            }
            Formula::And(cs) => {
                let all_needed = want == TruthValue::CertTrue;
                rec_children(cs, env, ctx, mode, want, idx, out, all_needed)
            }
            Formula::Or(cs) => {
                let all_needed = want == TruthValue::CertFalse;
                rec_children(cs, env, ctx, mode, want, idx, out, all_needed)
            }
            Formula::Quant(..) => false,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn rec_children(
        cs: &[Formula],
        env: &IntervalBox,
        ctx: &EvalCtx,
        mode: &Mode,
        want: TruthValue,
        idx: usize,
        out: &mut Vec<AtomFact>,
        all_needed: bool,
    ) -> bool {
        let mut j = idx;
        if all_needed {
            for c in cs {
                if !rec(c, env, ctx, mode, want, j, out) {
                    return false;
                }
                j += c.atoms().len();
            }
            true
        } else {
            for c in cs {
                let mark = out.len();
                if rec(c, env, ctx, mode, want, j, out) {
                    return true;
                }
                out.truncate(mark);
                j += c.atoms().len();
            }
            false
        }
    }

    let mut out = Vec::new();
    rec(f, env, ctx, mode, want, 0, &mut out).then_some(out)
}

fn root_point_bindings(c: &CertNode) -> Option<Vec<(String, Rat)>> {
    match c {
        CertNode::Point { bindings, .. } => Some(bindings.clone()),
        _ => None,
    }
}

fn finish(flavor_exists: bool, d: Decision, stats: SolveStats) -> Result<SolveResult, SolveError> {
    match d {
        Decision::True(cert) => {
            let witness = if flavor_exists { root_point_bindings(&cert) } else { None };
            Ok(SolveResult {
                verdict: if flavor_exists { Verdict::DeltaSat } else { Verdict::Valid },
                witness,
                certificate: Some(cert),
                stats,
            })
        }
        Decision::False(cert) => {
            let witness = if flavor_exists { None } else { root_point_bindings(&cert) };
            Ok(SolveResult {
                verdict: if flavor_exists { Verdict::Unsat } else { Verdict::DeltaFalse },
                witness,
                certificate: Some(cert),
                stats,
            })
        }
        Decision::Unknown { reason, cell } => Err(SolveError::Inconclusive {
            reason,
            best_box: cell,
        }),
    }
}

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

/// Decide a prenex sentence with any quantifier alternation. An existential
/// outermost block yields `delta-sat`/`unsat`; a universal one yields
/// `valid`/`delta-false`. Quantifier-free sentences count as existential.
pub fn solve_prenex(
    f: &Formula,
    cfg: &SolverConfig,
    registry: &OdeRegistry,
) -> Result<SolveResult, SolveError> {
    let (blocks, _) = f.prenex()?;
    let flavor_exists = blocks.first().map(|b| b.kind == QuantKind::Exists).unwrap_or(true);
    let (accept, refute) = if flavor_exists {
        (Mode::Weakened(cfg.delta.clone()), Mode::Original)
    } else {
        (Mode::Original, Mode::Strengthened(cfg.delta.clone()))
    };
    let engine = Engine::new(f, accept, refute, cfg, registry)?;
    let (d, stats) = engine.run()?;
    finish(flavor_exists, d, stats)
}

/// Decide a sentence with a single existential block (or none at all).
pub fn solve_sigma1(
    f: &Formula,
    cfg: &SolverConfig,
    registry: &OdeRegistry,
) -> Result<SolveResult, SolveError> {
    let (blocks, _) = f.prenex()?;
    let ok = match blocks.as_slice() {
        [] => true,
        [only] => only.kind == QuantKind::Exists,
        _ => false,
    };
    if !ok {
        return Err(SolveError::Unsupported(
            "expected at most one quantifier block, existential".into(),
        ));
    }
    solve_prenex(f, cfg, registry)
}

/// Decide an exists-forall sentence by counterexample-guided search over the
/// leading (parameter) block.
///
/// Candidates are found on a growing sample of inner instantiations with the
/// thresholds weakened by `delta/2`; each candidate is then checked against
/// a negated inner matrix whose acceptance is *strengthened* by `delta/2`,
/// so an accepted counterexample genuinely violates the candidate, and a
/// refuted negation certifies the candidate up to `delta/2` everywhere.
pub fn solve_exists_forall(
    f: &Formula,
    cfg: &SolverConfig,
    registry: &OdeRegistry,
) -> Result<SolveResult, SolveError> {
    cfg.validate()?;
    if !cfg.atom_deltas.is_empty() {
        return Err(SolveError::Unsupported(
            "per-atom slack overrides are not supported by the counterexample-guided search".into(),
        ));
    }
    let (blocks, matrix) = f.prenex()?;
    if blocks.len() != 2
        || blocks[0].kind != QuantKind::Exists
        || blocks[1].kind != QuantKind::Forall
    {
        return Err(SolveError::Unsupported(
            "expected an exists block followed by a forall block".into(),
        ));
    }
    let p_block = blocks[0].clone();
    let x_block = blocks[1].clone();
    let half = &cfg.delta / Rat::new(2.into(), 1.into());
    let mut cfg_half = cfg.clone();
    cfg_half.delta = half.clone();

    let n_atoms = matrix.atoms().len();
    let mut samples: Vec<Vec<(String, Rat)>> = vec![x_block
        .bindings
        .iter()
        .map(|b| (b.name.clone(), half_sum(&b.lo, &b.hi)))
        .collect()];
    let mut total = SolveStats::default();
    let mut last_candidate: Option<Vec<(String, Rat)>> = None;

    for _ in 0..cfg.max_cegis_iters {
        // Candidate step: parameters satisfying every sampled instance.
        let conjuncts: Vec<Formula> = samples
            .iter()
            .map(|pt| {
                let mut g = matrix.clone();
                for (name, v) in pt {
                    g = g.subst(name, &Term::konst(v.clone()));
                }
                g
            })
            .collect();
        let cand_f = Formula::Quant(
            QuantKind::Exists,
            p_block.bindings.clone(),
            Box::new(Formula::and(conjuncts)),
        );
        let cand = match solve_prenex(&cand_f, &cfg_half, registry) {
            Ok(r) => r,
            Err(SolveError::Inconclusive { reason, best_box }) => {
                return Err(SolveError::Inconclusive {
                    reason: format!("candidate search inconclusive: {reason}"),
                    best_box,
                })
            }
            Err(e) => return Err(e),
        };
        total.absorb(&cand.stats);
        if cand.verdict == Verdict::Unsat {
            // Even the sampled instances admit no parameters, so the full
            // sentence is unsatisfiable. Rebuild the refutation in terms of
            // the original matrix: each leaf's facts come from a single
            // sampled instance, which becomes a point binding for the
            // universal block.
            let certificate = cand
                .certificate
                .as_ref()
                .and_then(|c| convert_sample_refutation(c, n_atoms, &samples));
            return Ok(SolveResult {
                verdict: Verdict::Unsat,
                witness: None,
                certificate,
                stats: total,
            });
        }
        let p_star = cand
            .witness
            .clone()
            .ok_or_else(|| SolveError::Unsupported("internal error: candidate without witness".into()))?;
        last_candidate = Some(p_star.clone());

        // Verification step. Substituting the candidate leaves terms like
        // `3/2*x - x` whose naive enclosure never closes near a marginal
        // point, so atom terms are brought to polynomial normal form first;
        // this run's certificate is discarded, so the rewrite cannot leak
        // into anything the checker re-derives.
        let mut neg = matrix.negate_nnf();
        for (name, v) in &p_star {
            neg = neg.subst(name, &Term::konst(v.clone()));
        }
        let neg = neg.map_atoms(&mut |_, a| Atom {
            term: simplify(&a.term),
            strict: a.strict,
            shift: a.shift.clone(),
        });
        let verify_f = Formula::Quant(QuantKind::Exists, x_block.bindings.clone(), Box::new(neg));
        let engine = Engine::new(
            &verify_f,
            Mode::Strengthened(half.clone()),
            Mode::Original,
            &cfg_half,
            registry,
        )?;
        let (vd, vstats) = engine.run()?;
        total.absorb(&vstats);
        match vd {
            Decision::False(_) => {
                let certificate =
                    witness_cover_certificate(&matrix, &x_block, &p_star, cfg, registry, &mut total);
                return Ok(SolveResult {
                    verdict: Verdict::DeltaSat,
                    witness: Some(p_star),
                    certificate,
                    stats: total,
                });
            }
            Decision::True(cex_node) => {
                let Some(cex) = root_point_bindings(&cex_node) else {
                    return Err(SolveError::Unsupported(
                        "internal error: counterexample without a point".into(),
                    ));
                };
                if samples.contains(&cex) {
                    return Err(SolveError::Inconclusive {
                        reason: "counterexample sample repeated without progress".into(),
                        best_box: format_point(&cex),
                    });
                }
                samples.push(cex);
            }
            Decision::Unknown { reason, cell } => {
                return Err(SolveError::Inconclusive {
                    reason: format!("verification step inconclusive: {reason}"),
                    best_box: cell,
                })
            }
        }
    }
    Err(SolveError::Inconclusive {
        reason: format!("no decision after {} refinement rounds", cfg.max_cegis_iters),
        best_box: last_candidate.map(|p| format_point(&p)).unwrap_or_default(),
    })
}

fn format_point(pt: &[(String, Rat)]) -> String {
    pt.iter()
        .map(|(n, v)| format!("({n} {v})"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Rewrite a refutation of the sampled-conjunction into a refutation of the
/// original sentence: leaf facts indexed into `sample-count x matrix` are
/// mapped back to matrix indices, and the owning sample becomes the point
/// binding for the universal block.
fn convert_sample_refutation(
    node: &CertNode,
    n_atoms: usize,
    samples: &[Vec<(String, Rat)>],
) -> Option<CertNode> {
    match node {
        CertNode::Split { var, at, below, above } => {
            let b = convert_sample_refutation(below, n_atoms, samples)?;
            let a = convert_sample_refutation(above, n_atoms, samples)?;
            Some(CertNode::Split {
                var: var.clone(),
                at: at.clone(),
                below: Box::new(b),
                above: Box::new(a),
            })
        }
        CertNode::Facts { facts } => {
            if n_atoms == 0 {
                return None;
            }
            let first = facts.first()?;
            let j = first.atom / n_atoms;
            let sample = samples.get(j)?;
            let mut remapped = Vec::with_capacity(facts.len());
            for fact in facts {
                if fact.atom / n_atoms != j {
                    return None;
                }
                remapped.push(AtomFact {
                    atom: fact.atom % n_atoms,
                    lo: fact.lo.clone(),
                    hi: fact.hi.clone(),
                });
            }
            Some(CertNode::Point {
                bindings: sample.clone(),
                child: Box::new(CertNode::Facts { facts: remapped }),
            })
        }
        CertNode::Point { .. } => None,
    }
}

/// For an accepted candidate, derive the universal cover certificate at the
/// full slack so its facts match what the certificate checker assumes for a
/// positive existential answer.
fn witness_cover_certificate(
    matrix: &Formula,
    x_block: &PrenexBlock,
    p_star: &[(String, Rat)],
    cfg: &SolverConfig,
    registry: &OdeRegistry,
    total: &mut SolveStats,
) -> Option<CertNode> {
    let mut inst = matrix.clone();
    for (name, v) in p_star {
        inst = inst.subst(name, &Term::konst(v.clone()));
    }
    let cover_f = Formula::Quant(
        QuantKind::Forall,
        x_block.bindings.clone(),
        Box::new(inst),
    );
    let engine = Engine::new(
        &cover_f,
        Mode::Weakened(cfg.delta.clone()),
        Mode::Strengthened(cfg.delta.clone()),
        cfg,
        registry,
    )
    .ok()?;
    let (d, st) = engine.run().ok()?;
    total.absorb(&st);
    match d {
        Decision::True(cover) => Some(CertNode::Point {
            bindings: p_star.to_vec(),
            child: Box::new(cover),
        }),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Grid oracle
// ---------------------------------------------------------------------------

/// Pointwise ground truth by exhaustive grid enumeration (up to three
/// variables): quantifiers range over `lo, lo+res, lo+2*res, ...` plus the
/// upper endpoint, and atoms are evaluated in floating point at original
/// thresholds. Undefined terms (NaN) count as false.
pub fn grid_oracle(
    f: &Formula,
    resolution: &Rat,
    registry: &OdeRegistry,
) -> Result<bool, SolveError> {
    if *resolution <= Rat::zero() {
        return Err(SolveError::Config("grid resolution must be positive".into()));
    }
    let (blocks, matrix) = f.prenex()?;
    let nvars: usize = blocks.iter().map(|b| b.bindings.len()).sum();
    if nvars > 3 {
        return Err(SolveError::Unsupported(
            "the grid oracle only enumerates up to three variables".into(),
        ));
    }
    let mut env: HashMap<String, f64> = HashMap::new();
    Ok(grid_rec(&blocks, 0, 0, &matrix, resolution, registry, &mut env))
}

fn grid_rec(
    blocks: &[PrenexBlock],
    k: usize,
    v: usize,
    matrix: &Formula,
    res: &Rat,
    registry: &OdeRegistry,
    env: &mut HashMap<String, f64>,
) -> bool {
    if k == blocks.len() {
        return matrix_at_point(matrix, env, registry);
    }
    let block = &blocks[k];
    if v == block.bindings.len() {
        return grid_rec(blocks, k + 1, 0, matrix, res, registry, env);
    }
    let b = &block.bindings[v];
    let exists = block.kind == QuantKind::Exists;
    for p in grid_points(&b.lo, &b.hi, res) {
        env.insert(b.name.clone(), rat_to_f64_floor(&p));
        let r = grid_rec(blocks, k, v + 1, matrix, res, registry, env);
        if exists == r {
            env.remove(&b.name);
            return r;
        }
    }
    env.remove(&b.name);
    !exists
}

fn grid_points(lo: &Rat, hi: &Rat, res: &Rat) -> Vec<Rat> {
    let mut pts = Vec::new();
    let mut v = lo.clone();
    while v <= *hi {
        pts.push(v.clone());
        v = &v + res;
    }
    if pts.last() != Some(hi) {
        pts.push(hi.clone());
    }
    pts
}

fn matrix_at_point(f: &Formula, env: &HashMap<String, f64>, registry: &OdeRegistry) -> bool {
    match f {
        Formula::Atom(a) => {
            let v = eval_term_point(&a.term, env, registry);
            if v.is_nan() {
                return false;
            }
            let theta = rat_to_f64_floor(&a.shift);
            if a.strict {
                v > theta
            } else {
                v >= theta
            }
        }
        Formula::And(cs) => cs.iter().all(|c| matrix_at_point(c, env, registry)),
        Formula::Or(cs) => cs.iter().any(|c| matrix_at_point(c, env, registry)),
        Formula::Quant(..) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificate::{emit_certificate, parse_certificate, verify_certificate, CheckResult};
    use crate::formula::Binding;
    use num_bigint::BigInt;

    fn rat(n: i64, d: i64) -> Rat {
        Rat::new(BigInt::from(n), BigInt::from(d))
    }

    fn cfg_with_delta(n: i64, d: i64) -> SolverConfig {
        SolverConfig {
            delta: rat(n, d),
            ..SolverConfig::default()
        }
    }

    // |x^2 - 2| <= slack, expressed as -(|x^2 - 2|) >= 0.
    fn sqrt2_formula() -> Formula {
        let residual = Term::var("x").pow(2).sub(Term::int(2)).abs().neg();
        Formula::exists(
            vec![Binding::new("x", rat(0, 1), rat(2, 1))],
            Formula::Atom(Atom::ge(residual)),
        )
    }

    #[test]
    fn square_root_of_two_is_delta_sat_with_a_dyadic_witness() {
        let registry = OdeRegistry::new();
        let res = solve_sigma1(&sqrt2_formula(), &cfg_with_delta(1, 100), &registry).unwrap();
        assert_eq!(res.verdict, Verdict::DeltaSat);
        // First conclusive midpoint in canonical order: 181/128 = 1.4140625.
        assert_eq!(res.witness, Some(vec![("x".to_string(), rat(181, 128))]));
        let w = 181.0 / 128.0;
        assert!((w * w - 2.0f64).abs() <= 0.01);
    }

    #[test]
    fn universal_failure_reports_the_most_violating_corner() {
        let registry = OdeRegistry::new();
        // forall x in [0,1]. x >= 1/2 fails most strongly at x = 0.
        let f = Formula::forall(
            vec![Binding::new("x", rat(0, 1), rat(1, 1))],
            Formula::Atom(Atom::ge(Term::var("x")).with_shift(rat(1, 2))),
        );
        let res = solve_prenex(&f, &cfg_with_delta(1, 100), &registry).unwrap();
        assert_eq!(res.verdict, Verdict::DeltaFalse);
        assert_eq!(res.witness, Some(vec![("x".to_string(), rat(0, 1))]));
    }

    #[test]
    fn boundary_witness_found_by_corner_probe() {
        let registry = OdeRegistry::new();
        let f = Formula::exists(
            vec![Binding::new("x", rat(0, 1), rat(1, 1))],
            Formula::Atom(Atom::ge(Term::var("x")).with_shift(rat(1, 1))),
        );
        let res = solve_sigma1(&f, &cfg_with_delta(1, 10), &registry).unwrap();
        assert_eq!(res.verdict, Verdict::DeltaSat);
        assert_eq!(res.witness, Some(vec![("x".to_string(), rat(1, 1))]));
    }

    #[test]
    fn unsat_refutation_certificate_round_trips() {
        let registry = OdeRegistry::new();
        // x >= 3/4 and x <= 1/4 cannot hold together.
        let f = Formula::exists(
            vec![Binding::new("x", rat(0, 1), rat(1, 1))],
            Formula::and(vec![
                Formula::Atom(Atom::ge(Term::var("x")).with_shift(rat(3, 4))),
                Formula::Atom(Atom::ge(Term::konst(rat(1, 4)).sub(Term::var("x")))),
            ]),
        );
        let delta = rat(1, 100);
        let cfg = cfg_with_delta(1, 100);
        let res = solve_sigma1(&f, &cfg, &registry).unwrap();
        assert_eq!(res.verdict, Verdict::Unsat);
        assert!(res.witness.is_none());
        let text = emit_certificate(&res, &f, &delta, &[]).unwrap();
        let cert = parse_certificate(&text).unwrap();
        let ctx = EvalCtx::new(&registry);
        assert_eq!(verify_certificate(&cert, &f, &delta, &[], &ctx), CheckResult::Accepted);
    }

    #[test]
    fn alternating_quantifiers_yield_a_checkable_validity_cover() {
        let registry = OdeRegistry::new();
        // forall x in [0,1] exists y in [0,1]. |y - x| <= 1/4.
        let body = Formula::Atom(Atom::ge(
            Term::var("y").sub(Term::var("x")).abs().neg(),
        )
        .with_shift(rat(-1, 4)));
        let f = Formula::forall(
            vec![Binding::new("x", rat(0, 1), rat(1, 1))],
            Formula::exists(vec![Binding::new("y", rat(0, 1), rat(1, 1))], body),
        );
        let delta = rat(1, 100);
        let cfg = cfg_with_delta(1, 100);
        let res = solve_prenex(&f, &cfg, &registry).unwrap();
        assert_eq!(res.verdict, Verdict::Valid);
        let text = emit_certificate(&res, &f, &delta, &[]).unwrap();
        let cert = parse_certificate(&text).unwrap();
        let ctx = EvalCtx::new(&registry);
        assert_eq!(verify_certificate(&cert, &f, &delta, &[], &ctx), CheckResult::Accepted);
    }

    #[test]
    fn exhausted_budgets_surface_as_inconclusive() {
        let registry = OdeRegistry::new();
        // x(1-x) >= 1/4 only holds exactly at x = 1/2; with the midpoint out
        // of reach, depth 1 and a one-cell budget cannot decide it.
        let f = Formula::exists(
            vec![Binding::new("x", rat(0, 1), rat(3, 4))],
            Formula::Atom(Atom::ge(
                Term::var("x").mul(Term::int(1).sub(Term::var("x"))),
            )
            .with_shift(rat(1, 4))),
        );
        let cfg = SolverConfig {
            delta: rat(1, 1_000_000_000),
            max_depth: 1,
            unknown_budget: 1,
            ..SolverConfig::default()
        };
        let err = solve_sigma1(&f, &cfg, &registry).unwrap_err();
        assert!(matches!(err, SolveError::Inconclusive { .. }));
    }

    #[test]
    fn per_atom_slack_overrides_the_global_threshold() {
        let registry = OdeRegistry::new();
        let f = Formula::exists(
            vec![Binding::new("x", rat(0, 1), rat(1, 1))],
            Formula::Atom(Atom::ge(Term::var("x")).with_shift(rat(1, 1))),
        );
        let delta = rat(1, 100);
        let overrides = vec![(0usize, rat(1, 2))];
        let cfg = SolverConfig {
            delta: delta.clone(),
            atom_deltas: overrides.clone(),
            ..SolverConfig::default()
        };
        let res = solve_sigma1(&f, &cfg, &registry).unwrap();
        assert_eq!(res.verdict, Verdict::DeltaSat);
        // With the atom's own slack of 1/2 the midpoint already qualifies.
        assert_eq!(res.witness, Some(vec![("x".to_string(), rat(1, 2))]));
        let text = emit_certificate(&res, &f, &delta, &overrides).unwrap();
        let cert = parse_certificate(&text).unwrap();
        let ctx = EvalCtx::new(&registry);
        assert_eq!(
            verify_certificate(&cert, &f, &delta, &overrides, &ctx),
            CheckResult::Accepted
        );
    }

    #[test]
    fn results_are_identical_across_worker_counts() {
        let registry = OdeRegistry::new();
        let f = sqrt2_formula();
        let delta = rat(1, 100);
        let mut reference: Option<(SolveResult, String)> = None;
        for workers in [1usize, 4, 8] {
            let cfg = SolverConfig {
                delta: delta.clone(),
                workers,
                ..SolverConfig::default()
            };
            let res = solve_sigma1(&f, &cfg, &registry).unwrap();
            let text = emit_certificate(&res, &f, &delta, &[]).unwrap();
            match &reference {
                None => reference = Some((res, text)),
                Some((r0, t0)) => {
                    assert_eq!(&res, r0, "workers={workers} changed the result");
                    assert_eq!(&text, t0, "workers={workers} changed the certificate bytes");
                }
            }
        }
    }

    #[test]
    fn cegis_accepts_scalable_parameters() {
        let registry = OdeRegistry::new();
        // exists p in [1,2] forall x in [0,1]. p*x - x >= 0.
        let f = Formula::exists(
            vec![Binding::new("p", rat(1, 1), rat(2, 1))],
            Formula::forall(
                vec![Binding::new("x", rat(0, 1), rat(1, 1))],
                Formula::Atom(Atom::ge(
                    Term::var("p").mul(Term::var("x")).sub(Term::var("x")),
                )),
            ),
        );
        let delta = rat(1, 10);
        let cfg = cfg_with_delta(1, 10);
        let res = solve_exists_forall(&f, &cfg, &registry).unwrap();
        assert_eq!(res.verdict, Verdict::DeltaSat);
        assert_eq!(res.witness, Some(vec![("p".to_string(), rat(3, 2))]));
        let text = emit_certificate(&res, &f, &delta, &[]).unwrap();
        let cert = parse_certificate(&text).unwrap();
        let ctx = EvalCtx::new(&registry);
        assert_eq!(verify_certificate(&cert, &f, &delta, &[], &ctx), CheckResult::Accepted);
    }

    #[test]
    fn cegis_refutes_with_a_sample_backed_certificate() {
        let registry = OdeRegistry::new();
        // exists p in [0,1] forall x in [0,1]. p - x >= 1/2 is false: x = 1
        // forces p >= 3/2.
        let f = Formula::exists(
            vec![Binding::new("p", rat(0, 1), rat(1, 1))],
            Formula::forall(
                vec![Binding::new("x", rat(0, 1), rat(1, 1))],
                Formula::Atom(Atom::ge(Term::var("p").sub(Term::var("x"))).with_shift(rat(1, 2))),
            ),
        );
        let delta = rat(1, 10);
        let cfg = cfg_with_delta(1, 10);
        let res = solve_exists_forall(&f, &cfg, &registry).unwrap();
        assert_eq!(res.verdict, Verdict::Unsat);
        let text = emit_certificate(&res, &f, &delta, &[]).unwrap();
        let cert = parse_certificate(&text).unwrap();
        let ctx = EvalCtx::new(&registry);
        assert_eq!(verify_certificate(&cert, &f, &delta, &[], &ctx), CheckResult::Accepted);
    }

    #[test]
    fn cegis_handles_conjunctive_bodies() {
        let registry = OdeRegistry::new();
        // exists p in [1/10,10] forall x in [-1,1]. p*x^2 >= 0 and 2*p*x^2 >= 0.
        let f = Formula::exists(
            vec![Binding::new("p", rat(1, 10), rat(10, 1))],
            Formula::forall(
                vec![Binding::new("x", rat(-1, 1), rat(1, 1))],
                Formula::and(vec![
                    Formula::Atom(Atom::ge(Term::var("p").mul(Term::var("x").pow(2)))),
                    Formula::Atom(Atom::ge(
                        Term::int(2).mul(Term::var("p")).mul(Term::var("x").pow(2)),
                    )),
                ]),
            ),
        );
        let res = solve_exists_forall(&f, &cfg_with_delta(1, 100), &registry).unwrap();
        assert_eq!(res.verdict, Verdict::DeltaSat);
        assert_eq!(res.witness, Some(vec![("p".to_string(), rat(101, 20))]));
    }

    #[test]
    fn cegis_rejects_per_atom_overrides() {
        let registry = OdeRegistry::new();
        let f = Formula::exists(
            vec![Binding::new("p", rat(0, 1), rat(1, 1))],
            Formula::forall(
                vec![Binding::new("x", rat(0, 1), rat(1, 1))],
                Formula::Atom(Atom::ge(Term::var("p").sub(Term::var("x")))),
            ),
        );
        let cfg = SolverConfig {
            atom_deltas: vec![(0, rat(1, 10))],
            ..SolverConfig::default()
        };
        assert!(matches!(
            solve_exists_forall(&f, &cfg, &registry),
            Err(SolveError::Unsupported(_))
        ));
    }

    #[test]
    fn sigma1_rejects_universal_sentences() {
        let registry = OdeRegistry::new();
        let f = Formula::forall(
            vec![Binding::new("x", rat(0, 1), rat(1, 1))],
            Formula::Atom(Atom::ge(Term::var("x"))),
        );
        assert!(matches!(
            solve_sigma1(&f, &SolverConfig::default(), &registry),
            Err(SolveError::Unsupported(_))
        ));
    }

    #[test]
    fn grid_oracle_matches_pointwise_truth() {
        let registry = OdeRegistry::new();
        let res = rat(1, 100);
        // exists x in [0,2]. x^2 >= 2 is true at grid points near 2.
        let f1 = Formula::exists(
            vec![Binding::new("x", rat(0, 1), rat(2, 1))],
            Formula::Atom(Atom::ge(Term::var("x").pow(2)).with_shift(rat(2, 1))),
        );
        assert!(grid_oracle(&f1, &res, &registry).unwrap());
        // forall x in [0,1]. x > 0 fails at the grid point 0.
        let f2 = Formula::forall(
            vec![Binding::new("x", rat(0, 1), rat(1, 1))],
            Formula::Atom(Atom::gt(Term::var("x"))),
        );
        assert!(!grid_oracle(&f2, &res, &registry).unwrap());
        // Equality-style atoms are false at every float grid point even
        // though the sentence is delta-satisfiable.
        assert!(!grid_oracle(&sqrt2_formula(), &res, &registry).unwrap());
    }

    #[test]
    fn grid_oracle_refuses_high_dimension() {
        let registry = OdeRegistry::new();
        let bindings = vec![
            Binding::new("a", rat(0, 1), rat(1, 1)),
            Binding::new("b", rat(0, 1), rat(1, 1)),
            Binding::new("c", rat(0, 1), rat(1, 1)),
            Binding::new("d", rat(0, 1), rat(1, 1)),
        ];
        let f = Formula::exists(
            bindings,
            Formula::Atom(Atom::ge(Term::var("a").add(Term::var("b")))),
        );
        assert!(matches!(
            grid_oracle(&f, &rat(1, 2), &registry),
            Err(SolveError::Unsupported(_))
        ));
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let bad_delta = SolverConfig { delta: rat(0, 1), ..SolverConfig::default() };
        assert!(matches!(bad_delta.validate(), Err(SolveError::Config(_))));
        let bad_workers = SolverConfig { workers: 0, ..SolverConfig::default() };
        assert!(matches!(bad_workers.validate(), Err(SolveError::Config(_))));
        let bad_override = SolverConfig {
            atom_deltas: vec![(0, rat(-1, 2))],
            ..SolverConfig::default()
        };
        assert!(matches!(bad_override.validate(), Err(SolveError::Config(_))));
        assert!(SolverConfig::default().validate().is_ok());
    }

    #[test]
    fn delta_monotonicity_on_a_marginal_instance() {
        let registry = OdeRegistry::new();
        // exists x in [0,1]. x >= 1 + 1/20: false, but within a coarse slack.
        let f = Formula::exists(
            vec![Binding::new("x", rat(0, 1), rat(1, 1))],
            Formula::Atom(Atom::ge(Term::var("x")).with_shift(rat(21, 20))),
        );
        let coarse = solve_sigma1(&f, &cfg_with_delta(1, 10), &registry).unwrap();
        assert_eq!(coarse.verdict, Verdict::DeltaSat);
        let fine = solve_sigma1(&f, &cfg_with_delta(1, 100), &registry).unwrap();
        assert_eq!(fine.verdict, Verdict::Unsat);
    }
}

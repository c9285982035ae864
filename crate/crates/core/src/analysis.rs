//! Leak decisions for individual memory events.
//!
//! For a secret-related event of a regular state the non-speculative
//! behavior is first resolved to a constant where possible. Optimized mode
//! then asks one question (can speculation flip it?), base mode asks whether
//! speculation always flips it and otherwise whether two inputs on the path
//! see different behavior. Every model is replayed on the concrete cache
//! simulator before it becomes a witness.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::Serialize;

use crate::cache::{replay, CacheConfig, Verdict};
use crate::config::{AnalysisConfig, Mode};
use crate::engine::{EngineError, Machine, MemoryEvent, SymbolicState};
use crate::expr::{Builder, Expr, Symbol};
use crate::formula::{build_eta_prime, div_of, build_mu, build_opp, build_theta_prime, TraceView};
use crate::solver::{eval, Model, SolveResult, Solver};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Behavior {
    /// Two inputs on one path see different behavior under speculation.
    Divergent,
    /// Speculation flips the behavior the input has without it.
    Opposite,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LeakWitness {
    /// Source line.
    pub location: usize,
    /// Trace index of the event.
    pub seq: usize,
    pub var: String,
    pub behavior: Behavior,
    /// One input for opposite leaks, two for divergent ones.
    pub inputs: Vec<BTreeMap<String, u64>>,
    /// Merged-world verdict per input.
    pub speculative: Vec<Verdict>,
    /// Non-speculative verdict per input.
    pub nonspeculative: Vec<Verdict>,
    /// Concrete trace under the first input: `(address, speculative)`.
    pub trace: Vec<(u64, bool)>,
}

#[derive(Debug, Clone)]
pub struct AnalysisReport {
    pub program: String,
    pub cache: CacheConfig,
    pub mode: Mode,
    pub paths: u64,
    pub spec_states: u64,
    pub witnesses: Vec<LeakWitness>,
    pub warnings: Vec<String>,
    pub queries: u64,
    /// Constraint nodes allocated while building leak formulas.
    pub nodes: u64,
    pub elapsed: Duration,
}

impl AnalysisReport {
    pub fn divergent(&self) -> usize {
        self.witnesses
            .iter()
            .filter(|w| w.behavior == Behavior::Divergent)
            .count()
    }

    pub fn opposite(&self) -> usize {
        self.witnesses.len() - self.divergent()
    }

    /// Distinct leaking source lines.
    pub fn leak_locations(&self) -> std::collections::BTreeSet<usize> {
        self.witnesses.iter().map(|w| w.location).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MustBehavior {
    Hit,
    Miss,
    Unknown,
}

/// Formula construction state for one exploration session.
#[derive(Debug)]
pub struct Ctx {
    cache: CacheConfig,
    mode: Mode,
    max_bits: u32,
    fb: Builder,
    pub warnings: Vec<String>,
}

impl Ctx {
    pub fn new(cfg: &AnalysisConfig) -> Self {
        let fb = match cfg.mode {
            Mode::Base => Builder::plain(),
            Mode::Opt => Builder::reducing(),
        };
        Ctx {
            cache: cfg.cache,
            mode: cfg.mode,
            max_bits: cfg.limits.solver_bits,
            fb,
            warnings: Vec::new(),
        }
    }

    pub fn nodes(&self) -> u64 {
        self.fb.allocated()
    }
}

/// The event's address, or its stored value, mentions a secret symbol.
pub fn taint_related(event: &MemoryEvent, state: &SymbolicState) -> bool {
    state.is_regular()
        && (event.addr.is_symbolic() || event.value.as_ref().is_some_and(|v| v.is_symbolic()))
}

pub fn view_of(trace: &[MemoryEvent]) -> TraceView {
    TraceView::new(
        trace.iter().map(|e| e.addr.clone()).collect(),
        trace.iter().map(|e| e.org).collect(),
        trace.len() - 1,
    )
}

/// Non-speculative behavior of the view's target under `pc`.
pub fn must_behavior(
    b: &mut Builder,
    solver: &mut Solver,
    view: &TraceView,
    cache: &CacheConfig,
    pc: &Expr,
) -> MustBehavior {
    let etap = build_eta_prime(b, view, cache);
    if solver.check(&etap, std::slice::from_ref(pc)).is_unsat() {
        return MustBehavior::Miss;
    }
    let miss = b.not(etap);
    if solver.check(&miss, std::slice::from_ref(pc)).is_unsat() {
        return MustBehavior::Hit;
    }
    MustBehavior::Unknown
}

enum Found {
    Opposite(Model),
    Divergent(Model, Model),
}

/// Leak check for the last event of `trace` under `pc`.
pub fn analyze_cache(
    ctx: &mut Ctx,
    m: &mut Machine<'_>,
    pc: &Expr,
    trace: &[MemoryEvent],
) -> Result<Option<LeakWitness>, EngineError> {
    let view = view_of(trace);
    let ev = trace.last().expect("non-empty trace");
    let cache = ctx.cache;
    let must = must_behavior(&mut ctx.fb, &mut m.solver, &view, &cache, pc);
    let c = match must {
        MustBehavior::Hit => Some(Verdict::Hit),
        MustBehavior::Miss => Some(Verdict::Miss),
        MustBehavior::Unknown => {
            ctx.warnings.push(format!(
                "line {}: non-speculative behavior depends on the secret{}",
                ev.location,
                if ctx.mode == Mode::Opt { "; event skipped" } else { "" }
            ));
            None
        }
    };
    let found = match (ctx.mode, c) {
        (Mode::Opt, None) => None,
        (Mode::Opt, Some(c)) => opt_query(ctx, &mut m.solver, &view, pc, c, ev.location),
        (Mode::Base, c) => base_query(ctx, &mut m.solver, &view, pc, c, ev.location),
    };
    let Some(found) = found else {
        return Ok(None);
    };
    witness(m, trace, found).map(Some)
}

fn note_unknown(ctx: &mut Ctx, r: &SolveResult, location: usize) {
    if let SolveResult::Unknown(why) = r {
        ctx.warnings.push(format!("line {location}: solver gave up ({why})"));
    }
}

fn opt_query(
    ctx: &mut Ctx,
    solver: &mut Solver,
    view: &TraceView,
    pc: &Expr,
    c: Verdict,
    location: usize,
) -> Option<Found> {
    let theta = build_theta_prime(&mut ctx.fb, view, &ctx.cache, c);
    let r = solver.check(&theta, std::slice::from_ref(pc));
    note_unknown(ctx, &r, location);
    let lambda = r.model()?.clone();
    // Any input keeping the non-speculative behavior makes the pair divergent.
    let mu = build_mu(&mut ctx.fb, view, &ctx.cache);
    let same = match c {
        Verdict::Hit => mu,
        Verdict::Miss => ctx.fb.not(mu),
    };
    match solver.check(&same, std::slice::from_ref(pc)) {
        SolveResult::Sat(other) => Some(Found::Divergent(lambda, other)),
        _ => Some(Found::Opposite(lambda)),
    }
}

fn base_query(
    ctx: &mut Ctx,
    solver: &mut Solver,
    view: &TraceView,
    pc: &Expr,
    c: Option<Verdict>,
    location: usize,
) -> Option<Found> {
    if let Some(c) = c {
        let agree = build_opp(&mut ctx.fb, view, &ctx.cache, c);
        let r = solver.check(&agree, std::slice::from_ref(pc));
        note_unknown(ctx, &r, location);
        if r.is_unsat() {
            // Every input flips; any model of the path is a witness.
            let flip = ctx.fb.not(agree);
            if let SolveResult::Sat(l) = solver.check(&flip, std::slice::from_ref(pc)) {
                return Some(Found::Opposite(l));
            }
        }
    }
    let mu = build_mu(&mut ctx.fb, view, &ctx.cache);
    let mut syms = mu.symbols();
    syms.extend(pc.symbols());
    if 16 * syms.len() as u32 <= ctx.max_bits {
        let div = div_of(&mut ctx.fb, mu, pc);
        let r = solver.check(&div, &[]);
        note_unknown(ctx, &r, location);
        let m = r.model()?;
        let (a, b): (Model, Model) = m.iter().map(|(k, v)| (k.clone(), *v)).partition(|(k, _)| !k.primed);
        let b = b.into_iter().map(|(k, v)| (k.unprimed(), v)).collect();
        Some(Found::Divergent(a, b))
    } else {
        // Two single-copy queries decide the same question within budget.
        let miss = ctx.fb.not(mu.clone());
        let r1 = solver.check(&miss, std::slice::from_ref(pc));
        note_unknown(ctx, &r1, location);
        let l1 = r1.model()?.clone();
        let r2 = solver.check(&mu, std::slice::from_ref(pc));
        note_unknown(ctx, &r2, location);
        let l2 = r2.model()?.clone();
        Some(Found::Divergent(l1, l2))
    }
}

/// Completes a partial model with zeros for every secret byte.
fn complete(secrets: &[Symbol], m: &Model) -> Model {
    secrets
        .iter()
        .map(|s| (s.clone(), m.get(s).copied().unwrap_or(0)))
        .collect()
}

fn concretize(trace: &[MemoryEvent], m: &Model) -> Result<Vec<(u64, bool)>, EngineError> {
    trace
        .iter()
        .map(|e| {
            eval(&e.addr, m)
                .map(|a| (a, e.org))
                .map_err(|err| EngineError::Soundness(err.to_string()))
        })
        .collect()
}

/// Replays the model(s) and builds the witness, or reports a soundness failure.
fn witness(m: &Machine<'_>, trace: &[MemoryEvent], found: Found) -> Result<LeakWitness, EngineError> {
    let ev = trace.last().expect("non-empty trace");
    let i = trace.len() - 1;
    let cache = m.cfg.cache;
    let (behavior, models) = match found {
        Found::Opposite(l) => (Behavior::Opposite, vec![l]),
        Found::Divergent(a, b) => (Behavior::Divergent, vec![a, b]),
    };
    let models: Vec<Model> = models.iter().map(|x| complete(&m.secrets, x)).collect();
    let mut spec = Vec::new();
    let mut nonspec = Vec::new();
    let mut first_trace = Vec::new();
    for (k, model) in models.iter().enumerate() {
        let t = concretize(trace, model)?;
        spec.push(replay(&t, cache, true)[i].expect("included"));
        nonspec.push(replay(&t, cache, false)[i].expect("regular event"));
        if k == 0 {
            first_trace = t;
        }
    }
    let ok = match behavior {
        Behavior::Opposite => spec[0] != nonspec[0],
        Behavior::Divergent => spec[0] != spec[1],
    };
    if !ok {
        return Err(EngineError::Soundness(format!(
            "line {}: {:?} witness does not replay (speculative {:?}, non-speculative {:?})",
            ev.location, behavior, spec, nonspec
        )));
    }
    Ok(LeakWitness {
        location: ev.location,
        seq: ev.seq,
        var: ev.var.clone(),
        behavior,
        inputs: models
            .iter()
            .map(|x| x.iter().map(|(s, v)| (s.name.to_string(), *v)).collect())
            .collect(),
        speculative: spec,
        nonspeculative: nonspec,
        trace: first_trace,
    })
}

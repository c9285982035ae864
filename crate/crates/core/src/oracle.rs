//! Brute-force reference for the symbolic analysis.
//!
//! Every secret assignment is executed concretely. Inputs that agree on all
//! branch decisions so far form one group, which plays the role of a path
//! condition: the exploration order, forks, speculation windows and budgets
//! follow the symbolic engine step by step, but feasibility is decided by
//! looking at the group and leak questions by replaying each member's trace
//! on the cache simulator. Taint and load provenance are syntactic and
//! therefore shared by the whole group.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::analysis::{Behavior, LeakWitness};
use crate::cache::{replay, CacheConfig, Verdict};
use crate::config::{AnalysisConfig, Mode};
use crate::engine::{self, BudgetUse, EngineError, StateKind};
use crate::expr::{apply_bin, apply_cmp, mask, BinOp, CmpOp};
use crate::ir::{self, layout_memory, AddressMap, ArithOp, InstKind, Program, RelOp};

/// Largest total secret width the oracle enumerates.
pub const MAX_SECRET_BITS: u32 = 20;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("{bits} secret bits exceed the enumeration limit of {MAX_SECRET_BITS}")]
    TooLarge { bits: u32 },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// A location the oracle flags, with the inputs that show it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleFlag {
    pub location: usize,
    pub seq: usize,
    pub behavior: Behavior,
    pub inputs: Vec<BTreeMap<String, u64>>,
}

#[derive(Debug, Clone, Default)]
pub struct OracleReport {
    pub paths: u64,
    pub spec_states: u64,
    /// First flag per location, in discovery order.
    pub flags: Vec<OracleFlag>,
}

impl OracleReport {
    pub fn locations(&self) -> BTreeSet<usize> {
        self.flags.iter().map(|f| f.location).collect()
    }
}

/// Syntactic facts about a value: whether its expression would be
/// symbolic, and the loads it derives from.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Meta {
    sym: bool,
    src: BTreeSet<usize>,
}

impl Meta {
    fn join(mut self, other: Meta) -> Meta {
        self.sym |= other.sym;
        self.src.extend(other.src);
        self
    }
}

/// One concrete input and its machine state.
#[derive(Debug, Clone)]
struct Lam {
    secrets: Vec<u64>,
    regs: Vec<u64>,
    mem: Vec<u64>,
    addrs: Vec<u64>,
}

#[derive(Debug, Clone)]
struct Event {
    org: bool,
    location: usize,
    addr_sym: bool,
}

#[derive(Debug, Clone)]
struct State {
    lams: Vec<Lam>,
    regs: Vec<Meta>,
    mem: Vec<Meta>,
    trace: Vec<Event>,
    ip: usize,
    kind: StateKind,
    revisits: HashMap<usize, usize>,
    window_start: usize,
    budget: BudgetUse,
}

impl State {
    fn regular(&self) -> bool {
        self.kind == StateKind::Regular
    }

    fn with_lams(&self, lams: Vec<Lam>) -> State {
        State {
            lams,
            regs: self.regs.clone(),
            mem: self.mem.clone(),
            trace: self.trace.clone(),
            ip: self.ip,
            kind: self.kind,
            revisits: self.revisits.clone(),
            window_start: self.window_start,
            budget: self.budget,
        }
    }

    fn concrete(&self, lam: &Lam) -> Vec<(u64, bool)> {
        lam.addrs.iter().zip(&self.trace).map(|(&a, e)| (a, e.org)).collect()
    }

    /// The trace when every address is input-independent.
    fn fixed_trace(&self, upto: usize) -> Option<Vec<(u64, bool)>> {
        if self.trace[..upto].iter().any(|e| e.addr_sym) {
            return None;
        }
        let lam = &self.lams[0];
        Some(lam.addrs[..upto].iter().zip(&self.trace).map(|(&a, e)| (a, e.org)).collect())
    }
}

enum End {
    Counted,
    Infeasible,
}

enum Access {
    Done(State),
    End(End),
}

struct Oracle<'p> {
    prog: &'p Program,
    cfg: &'p AnalysisConfig,
    amap: AddressMap,
    names: Vec<String>,
    reg_index: HashMap<String, usize>,
    spec_states: u64,
}

impl<'p> Oracle<'p> {
    fn initial(&self) -> State {
        let bits = 8 * self.names.len() as u32;
        let total = self.amap.total_bytes as usize;
        let mut lams = Vec::with_capacity(1 << bits);
        let mut regs_meta = Vec::new();
        let mut mem_meta = vec![Meta::default(); total];
        for idx in 0..(1usize << bits) {
            let secrets: Vec<u64> = (0..self.names.len())
                .map(|p| ((idx >> (8 * (self.names.len() - 1 - p))) & 0xff) as u64)
                .collect();
            let mut regs = Vec::new();
            let mut mem = vec![0u64; total];
            for d in &self.prog.decls {
                let init = self.prog.public_init.get(&d.name).copied().unwrap_or(0) as u64;
                let cells = d.size().max(1);
                let mut vals = Vec::with_capacity(cells);
                let mut metas = Vec::with_capacity(cells);
                for k in 0..cells {
                    let name = match d.kind {
                        ir::VarKind::Array(_) => format!("{}[{k}]", d.name),
                        _ => d.name.clone(),
                    };
                    let secret = self
                        .prog
                        .sensitive
                        .contains(&d.name)
                        .then(|| self.names.iter().position(|n| *n == name))
                        .flatten();
                    match secret {
                        Some(p) => {
                            vals.push(secrets[p]);
                            metas.push(Meta {
                                sym: true,
                                src: BTreeSet::new(),
                            });
                        }
                        None => {
                            vals.push(init);
                            metas.push(Meta::default());
                        }
                    }
                }
                if d.is_register() {
                    regs.extend(vals);
                    if idx == 0 {
                        regs_meta.extend(metas);
                    }
                } else {
                    let base = (self.amap.addr(&d.name).unwrap() - self.amap.start) as usize;
                    for (k, v) in vals.into_iter().enumerate() {
                        mem[base + k] = v;
                    }
                    if idx == 0 {
                        for (k, m) in metas.into_iter().enumerate() {
                            mem_meta[base + k] = m;
                        }
                    }
                }
            }
            lams.push(Lam {
                secrets,
                regs,
                mem,
                addrs: Vec::new(),
            });
        }
        State {
            lams,
            regs: regs_meta,
            mem: mem_meta,
            trace: Vec::new(),
            ip: 0,
            kind: StateKind::Regular,
            revisits: HashMap::new(),
            window_start: 0,
            budget: BudgetUse::default(),
        }
    }

    fn inputs(&self, lam: &Lam) -> BTreeMap<String, u64> {
        self.names.iter().cloned().zip(lam.secrets.iter().copied()).collect()
    }

    fn meta(&self, st: &State, e: &ir::Expr) -> Meta {
        match e {
            ir::Expr::Lit(_) => Meta::default(),
            ir::Expr::Var(n) => st.regs[self.reg_index[n]].clone(),
            ir::Expr::Arith(_, a, b)
            | ir::Expr::Rel(_, a, b)
            | ir::Expr::LogicAnd(a, b)
            | ir::Expr::LogicOr(a, b) => self.meta(st, a).join(self.meta(st, b)),
            ir::Expr::BitNot(a) | ir::Expr::LogicNot(a) => self.meta(st, a),
        }
    }

    /// Concrete value and width.
    fn value(&self, lam: &Lam, e: &ir::Expr) -> (u64, u8) {
        match e {
            ir::Expr::Lit(v) => (*v as u64, 8),
            ir::Expr::Var(n) => (lam.regs[self.reg_index[n]], 8),
            ir::Expr::Arith(op, a, b) => {
                let op = match op {
                    ArithOp::Add => BinOp::Add,
                    ArithOp::Sub => BinOp::Sub,
                    ArithOp::Mul => BinOp::Mul,
                    ArithOp::And => BinOp::And,
                    ArithOp::Or => BinOp::Or,
                    ArithOp::Xor => BinOp::Xor,
                    ArithOp::Shl => BinOp::Shl,
                    ArithOp::Shr => BinOp::Lshr,
                };
                let (a, b) = (self.value(lam, a).0, self.value(lam, b).0);
                (apply_bin(op, 8, a, b), 8)
            }
            ir::Expr::Rel(op, a, b) => {
                let op = match op {
                    RelOp::Eq => CmpOp::Eq,
                    RelOp::Ne => CmpOp::Ne,
                    RelOp::Lt => CmpOp::Ult,
                    RelOp::Le => CmpOp::Ule,
                    RelOp::Gt => CmpOp::Ugt,
                    RelOp::Ge => CmpOp::Uge,
                };
                let (a, b) = (self.value(lam, a).0, self.value(lam, b).0);
                (apply_cmp(op, a, b) as u64, 1)
            }
            ir::Expr::BitNot(a) | ir::Expr::LogicNot(a) => {
                let (v, w) = self.value(lam, a);
                (!v & mask(w), w)
            }
            ir::Expr::LogicAnd(a, b) => {
                let (a, b) = (self.value(lam, a).0, self.value(lam, b).0);
                ((a != 0 && b != 0) as u64, 1)
            }
            ir::Expr::LogicOr(a, b) => {
                let (a, b) = (self.value(lam, a).0, self.value(lam, b).0);
                ((a != 0 || b != 0) as u64, 1)
            }
        }
    }

    fn offset(&self, addr: u64) -> Option<usize> {
        match addr.checked_sub(self.amap.start) {
            Some(off) if off < self.amap.total_bytes => Some(off as usize),
            _ => None,
        }
    }

    fn cell_value(&self, lam: &Lam, addr: u64) -> u64 {
        self.offset(addr).map_or(0, |o| lam.mem[o])
    }

    fn cell_meta(&self, st: &State, addr: u64) -> Meta {
        self.offset(addr).map_or_else(Meta::default, |o| st.mem[o].clone())
    }

    /// Executes the load or store at `st.ip`, analyzing it first when it is
    /// a secret-related event of a regular state.
    fn access(&self, mut st: State, flagged: Option<&mut Flagger<'_>>) -> Access {
        let inst = &self.prog.insts[st.ip];
        let (base_name, index, dst, value) = match &inst.kind {
            InstKind::Load { dst, base, index } => (base, index, Some(self.reg_index[dst]), None),
            InstKind::Store { base, index, value } => (base, index, None, Some(value)),
            _ => unreachable!(),
        };
        let stored = value.map(|v| self.meta(&st, v));
        let len = self.prog.decl(base_name).expect("validated").size() as u64;
        let base = self.amap.addr(base_name).expect("memory variable");
        let idx = self.meta(&st, index);
        let regular = st.regular();
        if !idx.sym {
            let k = self.value(&st.lams[0], index).0;
            if k >= len && regular {
                return Access::End(End::Counted);
            }
        } else if regular && len < 256 {
            let lams: Vec<Lam> = st.lams.drain(..).filter(|l| self.value(l, index).0 < len).collect();
            if lams.is_empty() {
                return Access::End(End::Infeasible);
            }
            st.lams = lams;
        }
        let seq = st.trace.len();
        for lam in &mut st.lams {
            let k = self.value(lam, index).0;
            lam.addrs.push(base.wrapping_add(k));
        }
        st.trace.push(Event {
            org: !regular,
            location: inst.location,
            addr_sym: idx.sym,
        });
        let related = regular && (idx.sym || stored.as_ref().is_some_and(|m| m.sym));
        if related {
            if let Some(f) = flagged {
                f.analyze(self, &st);
            }
        }
        let reach = if regular { len.min(256) } else { 256 };
        match (dst, value) {
            (Some(dst), None) => {
                if !idx.sym {
                    let k = self.value(&st.lams[0], index).0;
                    let mut m = self.cell_meta(&st, base + k);
                    m.src.insert(seq);
                    for lam in &mut st.lams {
                        lam.regs[dst] = self.cell_value(lam, base + k);
                    }
                    st.regs[dst] = m;
                } else {
                    let mut m = Meta {
                        sym: reach >= 2 || self.cell_meta(&st, base).sym,
                        src: idx.src.clone(),
                    };
                    m.src.insert(seq);
                    for k in 0..reach {
                        m.src.extend(self.cell_meta(&st, base + k).src);
                    }
                    for lam in &mut st.lams {
                        let k = self.value(lam, index).0.min(reach - 1);
                        lam.regs[dst] = self.cell_value(lam, base + k);
                    }
                    st.regs[dst] = m;
                }
            }
            (None, Some(value)) => {
                let vm = stored.expect("store value");
                if !idx.sym {
                    let k = self.value(&st.lams[0], index).0;
                    if let Some(o) = self.offset(base + k) {
                        for lam in &mut st.lams {
                            lam.mem[o] = self.value(lam, value).0;
                        }
                        st.mem[o] = vm;
                    }
                } else {
                    for k in 0..reach {
                        let Some(o) = self.offset(base + k) else {
                            continue;
                        };
                        let mut m = st.mem[o].clone();
                        m.sym = true;
                        m.src.extend(vm.src.iter().copied());
                        m.src.extend(idx.src.iter().copied());
                        st.mem[o] = m;
                    }
                    for lam in &mut st.lams {
                        let k = self.value(lam, index).0;
                        if k < reach {
                            if let Some(o) = self.offset(base + k) {
                                lam.mem[o] = self.value(lam, value).0;
                            }
                        }
                    }
                }
            }
            _ => unreachable!(),
        }
        st.ip += 1;
        Access::Done(st)
    }

    fn cond_sources(&self, st: &State, cond: &ir::Expr) -> BTreeSet<usize> {
        cond.vars()
            .into_iter()
            .flat_map(|v| st.regs[self.reg_index[v]].src.iter().copied())
            .collect()
    }

    fn should_speculate(&self, st: &State, cond: &ir::Expr) -> bool {
        if !self.cfg.budget.enabled() {
            return false;
        }
        let feeding = self.cond_sources(st, cond);
        let Some(&last) = feeding.iter().next_back() else {
            return false;
        };
        if self.cfg.mode == Mode::Opt {
            let cached = feeding.iter().all(|&f| f >= st.window_start)
                && st.fixed_trace(last + 1).is_some_and(|t| {
                    let v = replay(&t, self.cfg.cache, true);
                    feeding.iter().all(|&f| v[f] == Some(Verdict::Hit))
                });
            if cached {
                return false;
            }
        }
        true
    }

    fn split(&self, st: &State, cond: &ir::Expr) -> (Vec<Lam>, Vec<Lam>) {
        st.lams.iter().cloned().partition(|l| self.value(l, cond).0 != 0)
    }

    /// Regular children at a branch with an input-dependent condition.
    fn fork(&mut self, st: &State, cond: &ir::Expr, then_target: usize, else_target: usize) -> Vec<State> {
        let (t, e) = self.split(st, cond);
        let both = !t.is_empty() && !e.is_empty();
        let speculate = both && self.should_speculate(st, cond);
        let mut out = Vec::new();
        for (lams, target, other) in [(t, then_target, else_target), (e, else_target, then_target)] {
            if lams.is_empty() {
                continue;
            }
            let mut child = st.with_lams(lams);
            child.ip = target;
            child.window_start = child.trace.len();
            if speculate {
                let mut s = child.clone();
                s.kind = StateKind::Speculative;
                s.ip = other;
                s.budget = BudgetUse::default();
                self.spec_states += 1;
                for o in self.run(s, 1) {
                    let mut c = child.clone();
                    // Keep the child's machine state for the surviving inputs.
                    let keep: Vec<Lam> = o
                        .lams
                        .iter()
                        .map(|l| {
                            let mut orig = child
                                .lams
                                .iter()
                                .find(|x| x.secrets == l.secrets)
                                .expect("speculative input comes from the child")
                                .clone();
                            orig.addrs = l.addrs.clone();
                            orig
                        })
                        .collect();
                    c.lams = keep;
                    c.trace = o.trace;
                    out.push(c);
                }
            } else {
                out.push(child);
            }
        }
        out
    }

    fn certain_miss(&self, st: &State) -> bool {
        match st.fixed_trace(st.trace.len()) {
            Some(t) => replay(&t, self.cfg.cache, true).last() == Some(&Some(Verdict::Miss)),
            None => false,
        }
    }

    fn run(&mut self, mut st: State, level: u32) -> Vec<State> {
        let budget = self.cfg.budget;
        loop {
            if st.budget.stopped || st.budget.events >= budget.max_events {
                return vec![st];
            }
            let Some(inst) = self.prog.insts.get(st.ip) else {
                return vec![st];
            };
            st.budget.events += 1;
            match &inst.kind {
                InstKind::Halt => {
                    st.budget.events -= 1;
                    return vec![st];
                }
                InstKind::Assign { dst, value } => {
                    let r = self.reg_index[dst];
                    let m = self.meta(&st, value);
                    for lam in &mut st.lams {
                        lam.regs[r] = self.value(lam, value).0;
                    }
                    st.regs[r] = m;
                    st.ip += 1;
                }
                InstKind::Jump(t) => st.ip = *t,
                InstKind::Load { .. } | InstKind::Store { .. } => match self.access(st, None) {
                    Access::Done(s) => {
                        st = s;
                        if budget.stop_on_miss && self.certain_miss(&st) {
                            st.budget.stopped = true;
                        }
                    }
                    Access::End(_) => unreachable!("speculative accesses never end a path"),
                },
                InstKind::Branch {
                    cond,
                    then_target,
                    else_target,
                } => {
                    if st.budget.branches >= budget.max_branch_depth {
                        return vec![st];
                    }
                    st.budget.branches += 1;
                    if !self.meta(&st, cond).sym {
                        let b = self.value(&st.lams[0], cond).0 != 0;
                        st.ip = if b { *then_target } else { *else_target };
                        continue;
                    }
                    let (cond, t, e) = (cond.clone(), *then_target, *else_target);
                    return self.branch(st, &cond, t, e, level);
                }
            }
        }
    }

    fn branch(&mut self, st: State, cond: &ir::Expr, then_target: usize, else_target: usize, level: u32) -> Vec<State> {
        let (t, e) = self.split(&st, cond);
        let both = !t.is_empty() && !e.is_empty();
        let nest = both && level < self.cfg.budget.max_branch_depth;
        let mut out = Vec::new();
        for (lams, target, other) in [(t, then_target, else_target), (e, else_target, then_target)] {
            if lams.is_empty() {
                continue;
            }
            let mut sub = st.with_lams(lams);
            sub.ip = target;
            if both {
                self.spec_states += 1;
            }
            if nest {
                let mut inner = sub.clone();
                inner.ip = other;
                for n in self.run(inner, level + 1) {
                    // Resume with the nested path's inputs, trace and budget
                    // but the machine state from before the nested window.
                    let mut resumed = sub.clone();
                    resumed.lams = n
                        .lams
                        .iter()
                        .map(|l| {
                            let mut orig = sub
                                .lams
                                .iter()
                                .find(|x| x.secrets == l.secrets)
                                .expect("nested input comes from the parent")
                                .clone();
                            orig.addrs = l.addrs.clone();
                            orig
                        })
                        .collect();
                    resumed.trace = n.trace;
                    resumed.budget = n.budget;
                    out.extend(self.run(resumed, level));
                }
            } else {
                out.extend(self.run(sub, level));
            }
        }
        out
    }
}

/// Leak decisions per event, with per-location deduplication.
struct Flagger<'r> {
    mode: Mode,
    cache: CacheConfig,
    all_paths: bool,
    report: &'r mut OracleReport,
    /// Witnesses to confirm by replay, and whether each has been.
    probes: &'r [LeakWitness],
    confirmed: &'r mut [bool],
}

impl Flagger<'_> {
    fn probe(&mut self, o: &Oracle<'_>, st: &State) {
        let ev = st.trace.last().expect("event appended");
        let i = st.trace.len() - 1;
        for (w, done) in self.probes.iter().zip(self.confirmed.iter_mut()) {
            if *done || w.location != ev.location || w.seq != i {
                continue;
            }
            let lams: Option<Vec<&Lam>> = w
                .inputs
                .iter()
                .map(|m| st.lams.iter().find(|l| o.inputs(l) == *m))
                .collect();
            let Some(lams) = lams else { continue };
            let (spec, nonspec): (Vec<Verdict>, Vec<Verdict>) = lams
                .iter()
                .map(|l| {
                    let t = st.concrete(l);
                    (
                        replay(&t, self.cache, true)[i].expect("included"),
                        replay(&t, self.cache, false)[i].expect("regular event"),
                    )
                })
                .unzip();
            let differs = match w.behavior {
                Behavior::Opposite => spec[0] != nonspec[0],
                Behavior::Divergent => spec[0] != spec[1],
            };
            *done = differs && spec == w.speculative && nonspec == w.nonspeculative;
        }
    }

    fn analyze(&mut self, o: &Oracle<'_>, st: &State) {
        if !self.probes.is_empty() {
            self.probe(o, st);
        }
        let ev = st.trace.last().expect("event appended");
        if !self.all_paths && self.report.flags.iter().any(|f| f.location == ev.location) {
            return;
        }
        let i = st.trace.len() - 1;
        let verdicts: Vec<(Verdict, Verdict)> = st
            .lams
            .iter()
            .map(|l| {
                let t = st.concrete(l);
                let s = replay(&t, self.cache, true)[i].expect("included");
                let n = replay(&t, self.cache, false)[i].expect("regular event");
                (s, n)
            })
            .collect();
        let must = if verdicts.iter().all(|v| v.1 == Verdict::Miss) {
            Some(Verdict::Miss)
        } else if verdicts.iter().all(|v| v.1 == Verdict::Hit) {
            Some(Verdict::Hit)
        } else {
            None
        };
        let flip = |c: Verdict| verdicts.iter().position(|v| v.0 != c);
        let found = match (self.mode, must) {
            (Mode::Opt, None) => None,
            (Mode::Opt, Some(c)) => flip(c).map(|k| match verdicts.iter().position(|v| v.0 == c) {
                Some(j) => (Behavior::Divergent, vec![k, j]),
                None => (Behavior::Opposite, vec![k]),
            }),
            (Mode::Base, c) => {
                let all_flip = c.is_some_and(|c| verdicts.iter().all(|v| v.0 != c));
                if all_flip {
                    Some((Behavior::Opposite, vec![0]))
                } else {
                    let miss = verdicts.iter().position(|v| v.0 == Verdict::Miss);
                    let hit = verdicts.iter().position(|v| v.0 == Verdict::Hit);
                    miss.zip(hit).map(|(a, b)| (Behavior::Divergent, vec![a, b]))
                }
            }
        };
        if let Some((behavior, ks)) = found {
            self.report.flags.push(OracleFlag {
                location: ev.location,
                seq: i,
                behavior,
                inputs: ks.into_iter().map(|k| o.inputs(&st.lams[k])).collect(),
            });
        }
    }
}

/// Runs the brute-force reference on `prog`.
pub fn oracle(prog: &Program, cfg: &AnalysisConfig) -> Result<OracleReport, OracleError> {
    enumerate(prog, cfg, &[]).map(|(r, _)| r)
}

/// Re-executes `prog` concretely and reports, per witness, whether its
/// inputs reach the claimed event on one path and replay to the claimed
/// hit/miss verdicts.
pub fn confirm_witnesses(
    prog: &Program,
    cfg: &AnalysisConfig,
    witnesses: &[LeakWitness],
) -> Result<Vec<bool>, OracleError> {
    enumerate(prog, cfg, witnesses).map(|(_, c)| c)
}

fn enumerate(
    prog: &Program,
    cfg: &AnalysisConfig,
    probes: &[LeakWitness],
) -> Result<(OracleReport, Vec<bool>), OracleError> {
    let mut confirmed = vec![false; probes.len()];
    let names = prog.secret_bytes();
    let bits = 8 * names.len() as u32;
    if bits > MAX_SECRET_BITS {
        return Err(OracleError::TooLarge { bits });
    }
    let mut o = Oracle {
        prog,
        cfg,
        amap: layout_memory(prog, cfg.base_address),
        names,
        reg_index: prog.registers().enumerate().map(|(i, d)| (d.name.clone(), i)).collect(),
        spec_states: 0,
    };
    let mut report = OracleReport::default();
    let mut stack = vec![o.initial()];
    while let Some(mut st) = stack.pop() {
        let end = loop {
            let Some(inst) = prog.insts.get(st.ip) else {
                break Some(End::Counted);
            };
            match &inst.kind {
                InstKind::Load { .. } | InstKind::Store { .. } => {
                    if st.trace.len() >= cfg.limits.max_path_events {
                        break Some(End::Counted);
                    }
                    let mut f = Flagger {
                        mode: cfg.mode,
                        cache: cfg.cache,
                        all_paths: cfg.all_paths,
                        report: &mut report,
                        probes,
                        confirmed: &mut confirmed,
                    };
                    match o.access(st, Some(&mut f)) {
                        Access::Done(s) => st = s,
                        Access::End(e) => break Some(e),
                    }
                }
                InstKind::Branch {
                    cond,
                    then_target,
                    else_target,
                } => {
                    let visits = st.revisits.entry(st.ip).or_insert(0);
                    *visits += 1;
                    if *visits > cfg.limits.branch_revisit_cap {
                        break Some(End::Counted);
                    }
                    if !o.meta(&st, cond).sym {
                        let b = o.value(&st.lams[0], cond).0 != 0;
                        st.ip = if b { *then_target } else { *else_target };
                        st.window_start = st.trace.len();
                        continue;
                    }
                    let children = o.fork(&st, cond, *then_target, *else_target);
                    stack.extend(children.into_iter().rev());
                    break None;
                }
                InstKind::Assign { dst, value } => {
                    let r = o.reg_index[dst];
                    let m = o.meta(&st, value);
                    for lam in &mut st.lams {
                        lam.regs[r] = o.value(lam, value).0;
                    }
                    st.regs[r] = m;
                    st.ip += 1;
                }
                InstKind::Jump(t) => st.ip = *t,
                InstKind::Halt => break Some(End::Counted),
            }
        };
        if let Some(End::Counted) = end {
            report.paths += 1;
        }
    }
    report.spec_states = o.spec_states;
    Ok((report, confirmed))
}

/// A location flagged by exactly one side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Discrepancy {
    pub location: usize,
    /// True when only the symbolic analysis flags it.
    pub symbolic_only: bool,
    pub reproducer: String,
}

#[derive(Debug, Clone)]
pub struct Crosscheck {
    pub program: String,
    pub cache: CacheConfig,
    pub mode: Mode,
    pub symbolic: BTreeSet<usize>,
    pub oracle: BTreeSet<usize>,
    pub paths: (u64, u64),
    pub spec_states: (u64, u64),
    pub discrepancies: Vec<Discrepancy>,
}

impl Crosscheck {
    pub fn agrees(&self) -> bool {
        self.discrepancies.is_empty()
    }
}

/// Runs the symbolic analysis and the oracle and compares flagged locations.
pub fn crosscheck(prog: &Program, cfg: &AnalysisConfig) -> Result<Crosscheck, OracleError> {
    let reference = oracle(prog, cfg)?;
    let report = engine::explore(prog, cfg)?;
    let symbolic = report.leak_locations();
    let flagged = reference.locations();
    let mut discrepancies = Vec::new();
    for &loc in symbolic.difference(&flagged) {
        let w = report.witnesses.iter().find(|w| w.location == loc).expect("witness");
        discrepancies.push(Discrepancy {
            location: loc,
            symbolic_only: true,
            reproducer: format!(
                "line {loc}: analysis reports {:?} at event {} with inputs {:?}; enumeration finds no leak",
                w.behavior, w.seq, w.inputs
            ),
        });
    }
    for &loc in flagged.difference(&symbolic) {
        let f = reference.flags.iter().find(|f| f.location == loc).expect("flag");
        discrepancies.push(Discrepancy {
            location: loc,
            symbolic_only: false,
            reproducer: format!(
                "line {loc}: enumeration finds {:?} at event {} with inputs {:?}; analysis reports nothing",
                f.behavior, f.seq, f.inputs
            ),
        });
    }
    discrepancies.sort_by_key(|d| d.location);
    Ok(Crosscheck {
        program: prog.name.clone(),
        cache: cfg.cache,
        mode: cfg.mode,
        symbolic,
        oracle: flagged,
        paths: (report.paths, reference.paths),
        spec_states: (report.spec_states, reference.spec_states),
        discrepancies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SpeculationBudget;
    use crate::ir::parse_program;

    const MOTIVATING: &str = include_str!("../corpus/motivating.ir");

    fn cfg(cache: &str, mode: Mode) -> AnalysisConfig {
        AnalysisConfig::new(CacheConfig::preset(cache).unwrap(), mode)
    }

    #[test]
    fn motivating_example_matches() {
        let p = parse_program(MOTIVATING).unwrap();
        for mode in [Mode::Base, Mode::Opt] {
            let c = crosscheck(&p, &cfg("M0", mode)).unwrap();
            assert!(c.agrees(), "{:?}", c.discrepancies);
            assert_eq!(c.oracle.len(), 1);
            assert_eq!(c.paths.0, c.paths.1);
            assert_eq!(c.spec_states.0, c.spec_states.1);
        }
    }

    #[test]
    fn witnesses_replay_and_tampered_ones_do_not() {
        let p = parse_program(MOTIVATING).unwrap();
        let c = cfg("M0", Mode::Opt);
        let r = engine::explore(&p, &c).unwrap();
        assert_eq!(confirm_witnesses(&p, &c, &r.witnesses).unwrap(), vec![true]);
        let mut bad = r.witnesses[0].clone();
        bad.speculative.reverse();
        let mut moved = r.witnesses[0].clone();
        moved.seq -= 1;
        assert_eq!(confirm_witnesses(&p, &c, &[bad, moved]).unwrap(), vec![false, false]);
    }

    #[test]
    fn no_speculation_no_flags() {
        let p = parse_program(MOTIVATING).unwrap();
        let c = cfg("M0", Mode::Base).with_budget(SpeculationBudget::disabled());
        let r = oracle(&p, &c).unwrap();
        assert!(r.flags.is_empty());
        assert_eq!(r.spec_states, 0);
    }

    #[test]
    fn refuses_wide_secrets() {
        let src = "program wide\nvar K : u8[3]\nvar i : reg u8\nsecret K\nhalt\n";
        let p = parse_program(src).unwrap();
        assert!(matches!(
            oracle(&p, &cfg("C1S", Mode::Base)),
            Err(OracleError::TooLarge { bits: 24 })
        ));
    }
}

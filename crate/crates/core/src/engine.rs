//! Depth-first symbolic execution of a [`Program`].
//!
//! A state holds the path condition, registers, a flat byte memory and the
//! memory-event trace. Secret bytes are symbols; every other input is a
//! fixed constant. Loads and stores append one event each; branches fork on
//! feasibility and, when the condition depends on loaded data, hand the
//! taken side to the speculation module before regular execution resumes.

use std::collections::{BTreeSet, HashMap};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::analysis::{self, AnalysisReport, Ctx, LeakWitness};
use crate::config::AnalysisConfig;
use crate::expr::{BinOp, Builder, CmpOp, Expr, Symbol};
use crate::ir::{self, layout_memory, AddressMap, ArithOp, InstKind, Program, RelOp, VarKind};
use crate::solver::{SmtBackend, SolveResult, Solver};
use crate::speculation;

#[derive(Debug, Error)]
pub enum EngineError {
    /// A witness failed concrete replay: the constraint encoding is wrong.
    #[error("soundness failure: {0}")]
    Soundness(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessKind {
    Load,
    Store,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    Regular,
    Speculative,
}

/// A byte value and the trace indices of the loads it was derived from.
#[derive(Debug, Clone)]
pub struct Value {
    pub expr: Expr,
    pub sources: BTreeSet<usize>,
}

impl Value {
    fn plain(expr: Expr) -> Self {
        Value {
            expr,
            sources: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MemoryEvent {
    pub seq: usize,
    /// 64-bit byte address.
    pub addr: Expr,
    pub kind: AccessKind,
    /// Emitted by a speculative state.
    pub org: bool,
    /// Source line of the instruction.
    pub location: usize,
    pub var: String,
    /// Stored value, for stores.
    pub value: Option<Expr>,
}

/// Budget consumed along one speculative path.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BudgetUse {
    pub events: u32,
    pub branches: u32,
    pub stopped: bool,
}

#[derive(Debug, Clone)]
pub struct SymbolicState {
    pub pc: Expr,
    pub ip: usize,
    pub regs: Vec<Value>,
    pub mem: Vec<Value>,
    pub trace: Vec<MemoryEvent>,
    pub kind: StateKind,
    /// Visits per branch instruction on this path.
    pub revisits: HashMap<usize, usize>,
    /// Trace length when the path last passed a branch.
    pub window_start: usize,
    pub budget: BudgetUse,
}

impl SymbolicState {
    pub fn is_regular(&self) -> bool {
        self.kind == StateKind::Regular
    }
}

/// Why a path stopped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PathEnd {
    Halted,
    OutOfBounds { location: usize, var: String, index: u64 },
    Infeasible,
    EventCap,
    RevisitCap { location: usize },
}

/// Result of one non-branch instruction.
#[derive(Debug)]
pub enum Step {
    Continue,
    Branch { cond: Expr, then_target: usize, else_target: usize },
    End(PathEnd),
}

/// A memory access resolved against the current state but not yet applied.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub event: MemoryEvent,
    /// Path condition including the bounds clause of a symbolic index.
    pub pc: Expr,
    base: u64,
    len: u64,
    index: Value,
    dst: Option<usize>,
    stored: Option<Value>,
}

/// Interpretation context shared by regular and speculative execution.
pub struct Machine<'p> {
    pub prog: &'p Program,
    pub cfg: AnalysisConfig,
    pub amap: AddressMap,
    /// Builder for state values; plain so that taint is syntactic.
    pub sb: Builder,
    pub solver: Solver,
    pub secrets: Vec<Symbol>,
    reg_index: HashMap<String, usize>,
    zero: Expr,
    pub spec_states: u64,
    pub warnings: Vec<String>,
}

impl<'p> Machine<'p> {
    pub fn new(prog: &'p Program, cfg: &AnalysisConfig) -> Self {
        let amap = layout_memory(prog, cfg.base_address);
        let secrets = prog
            .secret_bytes()
            .iter()
            .enumerate()
            .map(|(i, n)| Symbol::new(i as u32, n))
            .collect();
        let reg_index = prog
            .registers()
            .enumerate()
            .map(|(i, d)| (d.name.clone(), i))
            .collect();
        let mut sb = Builder::plain();
        let zero = sb.constant(8, 0);
        Machine {
            prog,
            cfg: cfg.clone(),
            amap,
            sb,
            zero,
            solver: match &cfg.limits.smt_command {
                Some(cmd) => Solver::new(Box::new(SmtBackend::new(cmd)), cfg.limits.solver_timeout),
                None => Solver::enumeration(cfg.limits.solver_bits, cfg.limits.solver_timeout),
            },
            secrets,
            reg_index,
            spec_states: 0,
            warnings: Vec::new(),
        }
    }

    fn secret_symbol(&self, name: &str) -> Option<Symbol> {
        self.secrets.iter().find(|s| &*s.name == name).cloned()
    }

    pub fn initial_state(&mut self) -> SymbolicState {
        let mut regs = Vec::new();
        let mut mem = vec![Value::plain(self.sb.constant(8, 0)); self.amap.total_bytes as usize];
        for d in &self.prog.decls {
            let init = self.prog.public_init.get(&d.name).copied().unwrap_or(0);
            let cells = d.size().max(1);
            let mut vals = Vec::with_capacity(cells);
            for k in 0..cells {
                let name = match d.kind {
                    VarKind::Array(_) => format!("{}[{k}]", d.name),
                    _ => d.name.clone(),
                };
                let e = match self.secret_symbol(&name) {
                    Some(s) if self.prog.sensitive.contains(&d.name) => self.sb.sym(s),
                    _ => self.sb.constant(8, init as u64),
                };
                vals.push(Value::plain(e));
            }
            if d.is_register() {
                regs.extend(vals);
            } else {
                let base = (self.amap.addr(&d.name).unwrap() - self.amap.start) as usize;
                for (k, v) in vals.into_iter().enumerate() {
                    mem[base + k] = v;
                }
            }
        }
        SymbolicState {
            pc: self.sb.tru(),
            ip: 0,
            regs,
            mem,
            trace: Vec::new(),
            kind: StateKind::Regular,
            revisits: HashMap::new(),
            window_start: 0,
            budget: BudgetUse::default(),
        }
    }

    pub fn reg(&self, name: &str) -> usize {
        self.reg_index[name]
    }

    /// Symbolic value of an IR expression over the state's registers.
    pub fn eval(&mut self, st: &SymbolicState, e: &ir::Expr) -> Value {
        match e {
            ir::Expr::Lit(v) => Value::plain(self.sb.constant(8, *v as u64)),
            ir::Expr::Var(n) => st.regs[self.reg(n)].clone(),
            ir::Expr::Arith(op, a, b) => {
                let (a, b) = (self.eval(st, a), self.eval(st, b));
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
                join(self.sb.bin(op, a.expr, b.expr), a.sources, b.sources)
            }
            ir::Expr::Rel(op, a, b) => {
                let (a, b) = (self.eval(st, a), self.eval(st, b));
                let op = match op {
                    RelOp::Eq => CmpOp::Eq,
                    RelOp::Ne => CmpOp::Ne,
                    RelOp::Lt => CmpOp::Ult,
                    RelOp::Le => CmpOp::Ule,
                    RelOp::Gt => CmpOp::Ugt,
                    RelOp::Ge => CmpOp::Uge,
                };
                join(self.sb.cmp(op, a.expr, b.expr), a.sources, b.sources)
            }
            ir::Expr::BitNot(a) | ir::Expr::LogicNot(a) => {
                let a = self.eval(st, a);
                Value {
                    expr: self.sb.not(a.expr),
                    sources: a.sources,
                }
            }
            ir::Expr::LogicAnd(a, b) | ir::Expr::LogicOr(a, b) => {
                let (a, b) = (self.eval(st, a), self.eval(st, b));
                let e = if matches!(e, ir::Expr::LogicAnd(..)) {
                    self.sb.and2(a.expr, b.expr)
                } else {
                    self.sb.or2(a.expr, b.expr)
                };
                join(e, a.sources, b.sources)
            }
        }
    }

    /// `pc ∧ c`, skipping constant conjuncts.
    pub fn conjoin(&mut self, pc: &Expr, c: &Expr) -> Expr {
        if c.is_true() || pc.is_false() {
            pc.clone()
        } else if pc.is_true() || c.is_false() {
            c.clone()
        } else {
            self.sb.and2(pc.clone(), c.clone())
        }
    }

    /// Satisfiability of `pc ∧ c`; undecided queries count as feasible.
    pub fn feasible(&mut self, pc: &Expr, c: &Expr) -> bool {
        if let Some(b) = c.as_bool() {
            return b && !pc.is_false();
        }
        match self.solver.check(c, std::slice::from_ref(pc)) {
            SolveResult::Sat(_) => true,
            SolveResult::Unsat => false,
            SolveResult::Unknown(why) => {
                self.warnings.push(format!("feasibility undecided ({why}); assuming feasible"));
                true
            }
        }
    }

    fn cell(&self, st: &SymbolicState, addr: u64) -> Value {
        match addr.checked_sub(self.amap.start) {
            Some(off) if off < self.amap.total_bytes => st.mem[off as usize].clone(),
            _ => Value::plain(self.zero()),
        }
    }

    fn zero(&self) -> Expr {
        self.zero.clone()
    }

    /// Resolves a load or store in `st` without changing it.
    pub fn prepare(&mut self, st: &SymbolicState, inst: &ir::Instruction) -> Result<Prepared, PathEnd> {
        let (base_name, index, dst, stored, kind) = match &inst.kind {
            InstKind::Load { dst, base, index } => (base, index, Some(self.reg(dst)), None, AccessKind::Load),
            InstKind::Store { base, index, value } => {
                let v = self.eval(st, value);
                (base, index, None, Some(v), AccessKind::Store)
            }
            _ => unreachable!("prepare on a non-memory instruction"),
        };
        let decl = self.prog.decl(base_name).expect("validated");
        let len = decl.size() as u64;
        let base = self.amap.addr(base_name).expect("memory variable");
        let idx = self.eval(st, index);
        let mut pc = st.pc.clone();
        let addr = match idx.expr.as_const() {
            Some(k) => {
                if k >= len && st.is_regular() {
                    return Err(PathEnd::OutOfBounds {
                        location: inst.location,
                        var: base_name.clone(),
                        index: k,
                    });
                }
                self.sb.constant(64, base + k)
            }
            None => {
                if st.is_regular() && len < 256 {
                    let lim = self.sb.constant(8, len);
                    let clause = self.sb.cmp(CmpOp::Ult, idx.expr.clone(), lim);
                    if !self.feasible(&st.pc, &clause) {
                        return Err(PathEnd::Infeasible);
                    }
                    pc = self.conjoin(&st.pc, &clause);
                }
                let b = self.sb.constant(64, base);
                let wide = self.sb.cast(64, idx.expr.clone());
                self.sb.bin(BinOp::Add, b, wide)
            }
        };
        let event = MemoryEvent {
            seq: st.trace.len(),
            addr,
            kind,
            org: !st.is_regular(),
            location: inst.location,
            var: base_name.clone(),
            value: stored.as_ref().map(|v| v.expr.clone()),
        };
        Ok(Prepared {
            event,
            pc,
            base,
            len,
            index: idx,
            dst,
            stored,
        })
    }

    /// Cells a symbolic index may reach: the array in regular states, the
    /// full byte range past the base in speculative ones.
    fn reach(&self, st: &SymbolicState, p: &Prepared) -> u64 {
        if st.is_regular() {
            p.len.min(256)
        } else {
            256
        }
    }

    /// Applies a prepared access: appends the event and updates registers or memory.
    pub fn commit(&mut self, st: &mut SymbolicState, p: Prepared) {
        let seq = p.event.seq;
        st.pc = p.pc.clone();
        match (p.dst, &p.stored) {
            (Some(dst), None) => {
                let v = match p.index.expr.as_const() {
                    Some(k) => {
                        let c = self.cell(st, p.base + k);
                        let mut sources = c.sources;
                        sources.insert(seq);
                        Value { expr: c.expr, sources }
                    }
                    None => {
                        let n = self.reach(st, &p);
                        let mut sources: BTreeSet<usize> = p.index.sources.clone();
                        sources.insert(seq);
                        let mut acc = self.cell(st, p.base + n - 1);
                        sources.extend(acc.sources.iter().copied());
                        for k in (0..n - 1).rev() {
                            let c = self.cell(st, p.base + k);
                            sources.extend(c.sources.iter().copied());
                            let kc = self.sb.constant(8, k);
                            let hit = self.sb.eq(p.index.expr.clone(), kc);
                            acc.expr = self.sb.ite(hit, c.expr, acc.expr);
                        }
                        Value {
                            expr: acc.expr,
                            sources,
                        }
                    }
                };
                st.regs[dst] = v;
            }
            (None, Some(val)) => match p.index.expr.as_const() {
                Some(k) => {
                    if let Some(off) = (p.base + k).checked_sub(self.amap.start) {
                        if off < self.amap.total_bytes {
                            st.mem[off as usize] = val.clone();
                        }
                    }
                }
                None => {
                    let n = self.reach(st, &p);
                    for k in 0..n {
                        let Some(off) = (p.base + k).checked_sub(self.amap.start) else {
                            continue;
                        };
                        if off >= self.amap.total_bytes {
                            continue;
                        }
                        let old = st.mem[off as usize].clone();
                        let kc = self.sb.constant(8, k);
                        let hit = self.sb.eq(p.index.expr.clone(), kc);
                        let expr = self.sb.ite(hit, val.expr.clone(), old.expr);
                        let mut sources = old.sources;
                        sources.extend(val.sources.iter().copied());
                        sources.extend(p.index.sources.iter().copied());
                        st.mem[off as usize] = Value { expr, sources };
                    }
                }
            },
            _ => unreachable!("access is either a load or a store"),
        }
        st.trace.push(p.event);
    }

    /// Executes the instruction at `st.ip` unless it is a memory access that
    /// needs analysis first (callers handle those through `prepare`/`commit`).
    pub fn step(&mut self, st: &mut SymbolicState) -> Step {
        let Some(inst) = self.prog.insts.get(st.ip) else {
            return Step::End(PathEnd::Halted);
        };
        match &inst.kind {
            InstKind::Assign { dst, value } => {
                let v = self.eval(st, value);
                let r = self.reg(dst);
                st.regs[r] = v;
                st.ip += 1;
                Step::Continue
            }
            InstKind::Jump(t) => {
                st.ip = *t;
                Step::Continue
            }
            InstKind::Halt => Step::End(PathEnd::Halted),
            InstKind::Branch {
                cond,
                then_target,
                else_target,
            } => {
                let c = self.eval(st, cond);
                Step::Branch {
                    cond: c.expr,
                    then_target: *then_target,
                    else_target: *else_target,
                }
            }
            InstKind::Load { .. } | InstKind::Store { .. } => {
                let inst = inst.clone();
                match self.prepare(st, &inst) {
                    Ok(p) => {
                        self.commit(st, p);
                        st.ip += 1;
                        Step::Continue
                    }
                    Err(end) => Step::End(end),
                }
            }
        }
    }

    /// Registers read by the branch condition at `ip`.
    pub fn cond_sources(&self, st: &SymbolicState, ip: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        if let Some(InstKind::Branch { cond, .. }) = self.prog.insts.get(ip).map(|i| &i.kind) {
            for v in cond.vars() {
                out.extend(st.regs[self.reg(v)].sources.iter().copied());
            }
        }
        out
    }
}

fn join(expr: Expr, mut a: BTreeSet<usize>, b: BTreeSet<usize>) -> Value {
    a.extend(b);
    Value { expr, sources: a }
}

/// Children of a regular state at a branch, then side first. Each child
/// already carries the merged trace of any speculative window it triggered.
pub fn fork_branch(
    m: &mut Machine<'_>,
    st: &SymbolicState,
    cond: &Expr,
    then_target: usize,
    else_target: usize,
) -> Vec<SymbolicState> {
    let neg = m.sb.not(cond.clone());
    let ft = m.feasible(&st.pc, cond);
    let fe = m.feasible(&st.pc, &neg);
    let both = ft && fe;
    let speculate = both && speculation::should_speculate(m, st);
    let mut out = Vec::new();
    for (taken, c, target, other) in [
        (ft, cond, then_target, else_target),
        (fe, &neg, else_target, then_target),
    ] {
        if !taken {
            continue;
        }
        let mut child = st.clone();
        child.pc = m.conjoin(&st.pc, c);
        child.ip = target;
        child.window_start = child.trace.len();
        if speculate {
            for o in speculation::speculative_explore(m, &child, other) {
                let mut c2 = child.clone();
                c2.pc = o.pc;
                c2.trace = o.trace;
                out.push(c2);
            }
        } else {
            out.push(child);
        }
    }
    out
}

/// Explores every feasible path of `prog` and analyzes each secret-related
/// memory event of a regular state.
pub fn explore(prog: &Program, cfg: &AnalysisConfig) -> Result<AnalysisReport, EngineError> {
    let start = Instant::now();
    let mut m = Machine::new(prog, cfg);
    let mut ctx = Ctx::new(cfg);
    let mut paths = 0u64;
    let mut witnesses: Vec<LeakWitness> = Vec::new();
    let mut flagged: BTreeSet<usize> = BTreeSet::new();
    let init = m.initial_state();
    let mut stack = vec![init];
    while let Some(mut st) = stack.pop() {
        // None when the path was handed over to its children at a fork.
        let end = loop {
            let Some(inst) = prog.insts.get(st.ip) else {
                break Some(PathEnd::Halted);
            };
            match &inst.kind {
                InstKind::Load { .. } | InstKind::Store { .. } => {
                    if st.trace.len() >= cfg.limits.max_path_events {
                        break Some(PathEnd::EventCap);
                    }
                    let inst = inst.clone();
                    let p = match m.prepare(&st, &inst) {
                        Ok(p) => p,
                        Err(e) => break Some(e),
                    };
                    let related = analysis::taint_related(&p.event, &st);
                    if related && (cfg.all_paths || !flagged.contains(&p.event.location)) {
                        let mut trace = st.trace.clone();
                        trace.push(p.event.clone());
                        let found = analysis::analyze_cache(&mut ctx, &mut m, &p.pc, &trace)?;
                        if let Some(w) = found {
                            flagged.insert(w.location);
                            witnesses.push(w);
                        }
                    }
                    m.commit(&mut st, p);
                    st.ip += 1;
                }
                InstKind::Branch { .. } => {
                    let visits = st.revisits.entry(st.ip).or_insert(0);
                    *visits += 1;
                    if *visits > cfg.limits.branch_revisit_cap {
                        break Some(PathEnd::RevisitCap {
                            location: inst.location,
                        });
                    }
                    let Step::Branch {
                        cond,
                        then_target,
                        else_target,
                    } = m.step(&mut st)
                    else {
                        unreachable!()
                    };
                    if let Some(b) = cond.as_bool() {
                        st.ip = if b { then_target } else { else_target };
                        st.window_start = st.trace.len();
                        continue;
                    }
                    let children = fork_branch(&mut m, &st, &cond, then_target, else_target);
                    stack.extend(children.into_iter().rev());
                    break None;
                }
                _ => match m.step(&mut st) {
                    Step::Continue => {}
                    Step::End(e) => break Some(e),
                    Step::Branch { .. } => unreachable!(),
                },
            }
        };
        let Some(end) = end else {
            continue;
        };
        match &end {
            PathEnd::Halted => {}
            PathEnd::Infeasible => continue,
            PathEnd::OutOfBounds { location, var, index } => {
                m.warnings.push(format!("line {location}: index {index} out of bounds for `{var}`; path terminated"));
            }
            PathEnd::EventCap => m.warnings.push(format!(
                "path cut after {} memory events",
                cfg.limits.max_path_events
            )),
            PathEnd::RevisitCap { location } => m.warnings.push(format!(
                "line {location}: branch revisit cap {} reached; path cut",
                cfg.limits.branch_revisit_cap
            )),
        }
        paths += 1;
    }
    let mut warnings = std::mem::take(&mut m.warnings);
    warnings.append(&mut ctx.warnings);
    warnings.dedup();
    Ok(AnalysisReport {
        program: prog.name.clone(),
        cache: cfg.cache,
        mode: cfg.mode,
        paths,
        spec_states: m.spec_states,
        witnesses,
        warnings,
        queries: m.solver.stats().queries,
        nodes: ctx.nodes(),
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::Behavior;
    use crate::cache::CacheConfig;
    use crate::config::{Mode, SpeculationBudget};
    use crate::ir::parse_program;

    const MOTIVATING: &str = include_str!("../corpus/motivating.ir");

    fn run(src: &str, cache: &str, mode: Mode, budget: SpeculationBudget) -> AnalysisReport {
        let p = parse_program(src).unwrap();
        let cfg = AnalysisConfig::new(CacheConfig::preset(cache).unwrap(), mode).with_budget(budget);
        explore(&p, &cfg).unwrap()
    }

    #[test]
    fn motivating_example_leaks_once_in_both_modes() {
        for mode in [Mode::Base, Mode::Opt] {
            let r = run(MOTIVATING, "M0", mode, SpeculationBudget::default());
            assert_eq!(r.paths, 2, "{mode}");
            assert_eq!(r.witnesses.len(), 1, "{mode}: {:?}", r.witnesses);
            let w = &r.witnesses[0];
            assert_eq!(w.behavior, Behavior::Divergent);
            assert_eq!(w.seq, 257);
            assert_eq!(w.var, "S");
            assert_eq!(w.inputs[0]["x"], 0);
            assert_ne!(w.inputs[1]["x"], 0);
        }
    }

    #[test]
    fn no_speculation_no_leak() {
        for mode in [Mode::Base, Mode::Opt] {
            let r = run(MOTIVATING, "M0", mode, SpeculationBudget::disabled());
            assert!(r.witnesses.is_empty(), "{mode}: {:?}", r.witnesses);
            assert_eq!(r.paths, 2);
            assert_eq!(r.spec_states, 0);
        }
    }

    #[test]
    fn straight_line_program_has_one_path() {
        let src = "var a : u8[4]\nvar r : reg u8\nload r = a[1]\nstore a[2] = r\nhalt\n";
        let r = run(src, "C1", Mode::Base, SpeculationBudget::default());
        assert_eq!(r.paths, 1);
        assert_eq!(r.spec_states, 0);
        assert!(r.witnesses.is_empty());
    }

    #[test]
    fn symbolic_index_gets_bounds_clause() {
        let src = "var a : u8[10]\nvar s : u8\nvar k : reg u8\nvar r : reg u8\nsecret s\nload k = s\nload r = a[k]\nhalt\n";
        let p = parse_program(src).unwrap();
        let cfg = AnalysisConfig::new(CacheConfig::preset("M0").unwrap(), Mode::Base);
        let mut m = Machine::new(&p, &cfg);
        let mut st = m.initial_state();
        assert!(matches!(m.step(&mut st), Step::Continue));
        assert!(matches!(m.step(&mut st), Step::Continue));
        assert_eq!(st.trace.len(), 2);
        assert!(st.trace[1].addr.is_symbolic());
        assert!(!st.trace[0].addr.is_symbolic());
        let over = m.sb.constant(8, 10);
        let s = m.sb.sym(Symbol::new(0, "s"));
        let oob = m.sb.cmp(CmpOp::Uge, s, over);
        assert!(!m.feasible(&st.pc, &oob));
    }

    #[test]
    fn concrete_out_of_bounds_ends_path() {
        let src = "var a : u8[4]\nvar r : reg u8\nload r = a[9]\nhalt\n";
        let r = run(src, "C1", Mode::Base, SpeculationBudget::default());
        assert_eq!(r.paths, 1);
        assert!(r.warnings.iter().any(|w| w.contains("out of bounds")));
    }

    #[test]
    fn register_branch_does_not_speculate() {
        let src = "var s : reg u8\nvar a : u8[2]\nsecret s\nbr s > 3 ? t : e\nt: store a[0] = 1\nhalt\ne: store a[1] = 1\nhalt\n";
        let r = run(src, "M0", Mode::Base, SpeculationBudget::default());
        assert_eq!(r.paths, 2);
        assert_eq!(r.spec_states, 0);
    }

    #[test]
    fn deterministic_reports() {
        let a = run(MOTIVATING, "M0", Mode::Opt, SpeculationBudget::default());
        let b = run(MOTIVATING, "M0", Mode::Opt, SpeculationBudget::default());
        assert_eq!(a.witnesses, b.witnesses);
        assert_eq!(a.nodes, b.nodes);
        assert_eq!(a.queries, b.queries);
    }
}

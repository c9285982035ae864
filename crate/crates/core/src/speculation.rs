//! Branch misprediction modeling.
//!
//! At a branch whose condition depends on loaded data, the regular child
//! about to take one side first runs a speculative copy of itself down the
//! other side. The copy executes under a reorder-buffer budget, may nest one
//! more misprediction, and stops early after a guaranteed cache miss. Its
//! memory and registers are thrown away; only its memory events survive,
//! merged into the child's trace with the speculative origin flag set.

use std::collections::BTreeSet;

use crate::cache::{replay, CacheConfig, Verdict};
use crate::config::Mode;
use crate::engine::{BudgetUse, Machine, MemoryEvent, Step, StateKind, SymbolicState};
use crate::expr::Expr;
use crate::ir::InstKind;

/// Path condition refinement and merged trace of one speculative path.
#[derive(Debug, Clone)]
pub struct SpecOutcome {
    pub pc: Expr,
    pub trace: Vec<MemoryEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assumption {
    Cached,
    NotProvedCached,
}

/// Whether the branch at `st.ip` is worth mispredicting: speculation is
/// enabled, the condition reads a loaded value, and (in optimized mode) that
/// value is not proved to come from a cache hit.
pub fn should_speculate(m: &Machine<'_>, st: &SymbolicState) -> bool {
    if !m.cfg.budget.enabled() {
        return false;
    }
    let feeding = m.cond_sources(st, st.ip);
    if feeding.is_empty() {
        return false;
    }
    if m.cfg.mode == Mode::Opt
        && assumption_check(&st.trace, st.window_start, &feeding, &m.cfg.cache) == Assumption::Cached
    {
        return false;
    }
    true
}

/// Cached iff every load in `feeding` lies in the window since the previous
/// branch, the trace up to it is fully concrete, and the load itself hits.
pub fn assumption_check(
    trace: &[MemoryEvent],
    window_start: usize,
    feeding: &BTreeSet<usize>,
    cache: &CacheConfig,
) -> Assumption {
    let Some(&last) = feeding.iter().next_back() else {
        return Assumption::NotProvedCached;
    };
    if feeding.iter().any(|&f| f < window_start) || last >= trace.len() {
        return Assumption::NotProvedCached;
    }
    let mut prefix = Vec::with_capacity(last + 1);
    for e in &trace[..=last] {
        match e.addr.as_const() {
            Some(a) => prefix.push((a, e.org)),
            None => return Assumption::NotProvedCached,
        }
    }
    let verdicts = replay(&prefix, *cache, true);
    if feeding.iter().all(|&f| verdicts[f] == Some(Verdict::Hit)) {
        Assumption::Cached
    } else {
        Assumption::NotProvedCached
    }
}

/// Runs `child` speculatively from `target` (the side it is not taking).
/// Returns one outcome per speculative path; the child's memory is untouched.
pub fn speculative_explore(m: &mut Machine<'_>, child: &SymbolicState, target: usize) -> Vec<SpecOutcome> {
    let mut s = child.clone();
    s.kind = StateKind::Speculative;
    s.ip = target;
    s.budget = BudgetUse::default();
    m.spec_states += 1;
    run(m, s, 1)
        .into_iter()
        .map(|st| SpecOutcome {
            pc: st.pc,
            trace: st.trace,
        })
        .collect()
}

/// True when the last event is a miss in a fully concrete trace.
fn certain_miss(trace: &[MemoryEvent], cache: &CacheConfig) -> bool {
    let mut t = Vec::with_capacity(trace.len());
    for e in trace {
        match e.addr.as_const() {
            Some(a) => t.push((a, e.org)),
            None => return false,
        }
    }
    replay(&t, *cache, true).last() == Some(&Some(Verdict::Miss))
}

fn run(m: &mut Machine<'_>, mut st: SymbolicState, level: u32) -> Vec<SymbolicState> {
    let budget = m.cfg.budget;
    loop {
        if st.budget.stopped || st.budget.events >= budget.max_events {
            return vec![st];
        }
        let Some(inst) = m.prog.insts.get(st.ip) else {
            return vec![st];
        };
        if matches!(inst.kind, InstKind::Halt) {
            return vec![st];
        }
        st.budget.events += 1;
        let is_access = matches!(inst.kind, InstKind::Load { .. } | InstKind::Store { .. });
        match m.step(&mut st) {
            Step::Continue => {
                if is_access && budget.stop_on_miss && certain_miss(&st.trace, &m.cfg.cache) {
                    st.budget.stopped = true;
                }
            }
            Step::End(_) => return vec![st],
            Step::Branch {
                cond,
                then_target,
                else_target,
            } => {
                if st.budget.branches >= budget.max_branch_depth {
                    return vec![st];
                }
                st.budget.branches += 1;
                if let Some(b) = cond.as_bool() {
                    st.ip = if b { then_target } else { else_target };
                    continue;
                }
                return branch(m, st, &cond, then_target, else_target, level);
            }
        }
    }
}

fn branch(
    m: &mut Machine<'_>,
    st: SymbolicState,
    cond: &Expr,
    then_target: usize,
    else_target: usize,
    level: u32,
) -> Vec<SymbolicState> {
    let neg = m.sb.not(cond.clone());
    let ft = m.feasible(&st.pc, cond);
    let fe = m.feasible(&st.pc, &neg);
    let both = ft && fe;
    let nest = both && level < m.cfg.budget.max_branch_depth;
    let mut out = Vec::new();
    for (taken, c, target, other) in [
        (ft, cond, then_target, else_target),
        (fe, &neg, else_target, then_target),
    ] {
        if !taken {
            continue;
        }
        let mut sub = st.clone();
        sub.pc = m.conjoin(&st.pc, c);
        sub.ip = target;
        if both {
            m.spec_states += 1;
        }
        if nest {
            let mut inner = sub.clone();
            inner.ip = other;
            for n in run(m, inner, level + 1) {
                let mut resumed = sub.clone();
                resumed.pc = n.pc;
                resumed.trace = n.trace;
                resumed.budget = n.budget;
                out.extend(run(m, resumed, level));
            }
        } else {
            out.extend(run(m, sub, level));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AnalysisConfig;
    use crate::engine::AccessKind;
    use crate::expr::Builder;

    fn event(b: &mut Builder, seq: usize, addr: Option<u64>) -> MemoryEvent {
        let addr = match addr {
            Some(a) => b.constant(64, a),
            None => {
                let s = b.sym(crate::expr::Symbol::new(0, "x"));
                b.cast(64, s)
            }
        };
        MemoryEvent {
            seq,
            addr,
            kind: AccessKind::Load,
            org: false,
            location: 1,
            var: "v".into(),
            value: None,
        }
    }

    #[test]
    fn reloaded_value_is_cached() {
        let mut b = Builder::plain();
        let cfg = CacheConfig::preset("C1").unwrap();
        let t = vec![event(&mut b, 0, Some(64)), event(&mut b, 1, Some(64))];
        let feeding: BTreeSet<usize> = [1].into();
        assert_eq!(assumption_check(&t, 1, &feeding, &cfg), Assumption::Cached);
        // the first load of a block is a miss
        let feeding: BTreeSet<usize> = [0].into();
        assert_eq!(assumption_check(&t, 0, &feeding, &cfg), Assumption::NotProvedCached);
    }

    #[test]
    fn empty_or_symbolic_windows_are_not_proved() {
        let mut b = Builder::plain();
        let cfg = CacheConfig::preset("C1").unwrap();
        let t = vec![event(&mut b, 0, None), event(&mut b, 1, Some(64)), event(&mut b, 2, Some(64))];
        assert_eq!(
            assumption_check(&t, 0, &BTreeSet::new(), &cfg),
            Assumption::NotProvedCached
        );
        let feeding: BTreeSet<usize> = [2].into();
        assert_eq!(assumption_check(&t, 1, &feeding, &cfg), Assumption::NotProvedCached);
        // feeding load before the window
        let t = vec![event(&mut b, 0, Some(0)), event(&mut b, 1, Some(0))];
        let feeding: BTreeSet<usize> = [1].into();
        assert_eq!(assumption_check(&t, 2, &feeding, &cfg), Assumption::NotProvedCached);
    }

    fn motivating_trace(cfg: AnalysisConfig) -> Vec<Vec<(u64, bool)>> {
        let p = crate::ir::parse_program(include_str!("../corpus/motivating.ir")).unwrap();
        let mut m = Machine::new(&p, &cfg);
        let mut st = m.initial_state();
        // run to the secret-dependent branch
        loop {
            match m.step(&mut st) {
                Step::Continue => {}
                Step::Branch {
                    cond,
                    then_target,
                    else_target,
                } => match cond.as_bool() {
                    Some(c) => st.ip = if c { then_target } else { else_target },
                    None => break,
                },
                Step::End(e) => panic!("{e:?}"),
            }
        }
        let InstKind::Branch {
            then_target,
            else_target,
            ..
        } = p.insts[st.ip].kind
        else {
            unreachable!()
        };
        // the else child mispredicts into the then side
        let mut child = st.clone();
        child.ip = else_target;
        let target = then_target;
        speculative_explore(&mut m, &child, target)
            .into_iter()
            .map(|o| {
                o.trace
                    .iter()
                    .map(|e| (e.addr.as_const().unwrap_or(u64::MAX), e.org))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn misprediction_appends_one_speculative_store() {
        let cfg = AnalysisConfig::new(CacheConfig::preset("M0").unwrap(), Mode::Base);
        let outs = motivating_trace(cfg);
        assert_eq!(outs.len(), 1);
        let t = &outs[0];
        assert_eq!(t.len(), 256);
        assert_eq!(t[255], (255, true));
        assert!(t[..255].iter().all(|e| !e.1));
    }
}

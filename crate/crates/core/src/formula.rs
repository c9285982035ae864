//! Cache-behavior constraints over a memory-event trace.
//!
//! Every builder here produces a boolean [`Expr`] that is true iff the
//! target event hits in an LRU cache of the given geometry. Which
//! simplifications happen depends on the [`Builder`]: a plain builder yields
//! the literal encoding (cubic in the trace length), a reducing one the
//! shared, short-circuited form.

use rustc_hash::FxHashMap;
use std::fmt::Write as _;

use crate::cache::{CacheConfig, Verdict};
use crate::expr::{BinOp, Builder, Expr, Kind, Symbol};

/// The trace prefix `0..=target` seen from the event under analysis.
#[derive(Debug, Clone)]
pub struct TraceView {
    pub addrs: Vec<Expr>,
    pub orgs: Vec<bool>,
    pub target: usize,
}

impl TraceView {
    pub fn new(addrs: Vec<Expr>, orgs: Vec<bool>, target: usize) -> Self {
        assert_eq!(addrs.len(), orgs.len());
        assert!(target < addrs.len(), "target outside the trace");
        TraceView {
            addrs,
            orgs,
            target,
        }
    }

    /// The same trace without speculative events. The target keeps its
    /// position relative to the surviving events.
    pub fn filtered(&self) -> TraceView {
        let mut addrs = Vec::new();
        let mut orgs = Vec::new();
        let mut target = 0;
        for k in 0..=self.target {
            if k == self.target {
                target = addrs.len();
            }
            if !self.orgs[k] || k == self.target {
                addrs.push(self.addrs[k].clone());
                orgs.push(false);
            }
        }
        TraceView {
            addrs,
            orgs,
            target,
        }
    }
}

/// Per-event block and set index expressions.
struct Geometry {
    block: Vec<Expr>,
    set: Vec<Expr>,
}

fn geometry(b: &mut Builder, addrs: &[Expr], cfg: &CacheConfig) -> Geometry {
    let mut block = Vec::with_capacity(addrs.len());
    let mut set = Vec::with_capacity(addrs.len());
    for a in addrs {
        let w = a.width();
        let line = b.constant(w, cfg.line_size);
        let blk = b.bin(BinOp::Udiv, a.clone(), line);
        let sets = b.constant(w, cfg.num_sets());
        let s = b.bin(BinOp::Urem, blk.clone(), sets);
        block.push(blk);
        set.push(s);
    }
    Geometry { block, set }
}

/// How two events are compared: by block number alone, or by the
/// tag/set pair.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Compare {
    Block,
    TagSet,
}

struct Enc<'b> {
    b: &'b mut Builder,
    g: Geometry,
    cmp: Compare,
}

impl Enc<'_> {
    fn same(&mut self, z: usize, y: usize) -> Expr {
        let tag = self.b.eq(self.g.block[z].clone(), self.g.block[y].clone());
        match self.cmp {
            Compare::Block => tag,
            Compare::TagSet => {
                let set = self.b.eq(self.g.set[z].clone(), self.g.set[y].clone());
                self.b.and2(tag, set)
            }
        }
    }

    fn differ(&mut self, z: usize, y: usize) -> Expr {
        let tag = self.b.ne(self.g.block[z].clone(), self.g.block[y].clone());
        match self.cmp {
            Compare::Block => tag,
            Compare::TagSet => {
                let set = self.b.ne(self.g.set[z].clone(), self.g.set[y].clone());
                self.b.or2(tag, set)
            }
        }
    }

    fn same_set(&mut self, y: usize, i: usize) -> Expr {
        self.b.eq(self.g.set[y].clone(), self.g.set[i].clone())
    }

    /// Every `(j, i)` window term built from scratch.
    fn literal(&mut self, i: usize, assoc: u32) -> Expr {
        let mut terms = Vec::with_capacity(i);
        for j in 0..i {
            let m = self.same(j, i);
            let near: Vec<Expr> = (j + 1..i).map(|z| self.differ(z, i)).collect();
            let near = self.b.and(near);
            let mut guards = Vec::with_capacity(i - j);
            for y in j + 1..i {
                let ss = self.same_set(y, i);
                let first: Vec<Expr> = (j + 1..y).map(|z| self.differ(z, y)).collect();
                let first = self.b.and(first);
                guards.push(self.b.and2(ss, first));
            }
            let count = self.b.count_lt(guards, assoc);
            terms.push(self.b.and(vec![m, near, count]));
        }
        self.b.or(terms)
    }

    /// Scans candidates nearest first, reusing the previous window's
    /// nearness and first-occurrence terms.
    fn shared(&mut self, i: usize, assoc: u32) -> Expr {
        let mut terms = Vec::new();
        let mut near = self.b.tru();
        // first[y]: no event strictly between the current j and y shares y's block.
        let mut first: Vec<Option<Expr>> = vec![None; i];
        for j in (0..i).rev() {
            let m = self.same(j, i);
            if !m.is_false() {
                let mut guards = Vec::with_capacity(i - j);
                for y in j + 1..i {
                    let ss = self.same_set(y, i);
                    let f = first[y].clone().expect("window term");
                    guards.push(self.b.and2(ss, f));
                }
                let count = self.b.count_lt(guards, assoc);
                let t = self.b.and(vec![m.clone(), near.clone(), count]);
                let done = t.is_true();
                terms.push(t);
                if done {
                    break;
                }
            }
            let nm = self.b.not(m);
            near = self.b.and2(nm, near);
            if near.is_false() {
                break;
            }
            for y in j + 1..i {
                let d = self.differ(j, y);
                let f = first[y].take().expect("window term");
                first[y] = Some(self.b.and2(d, f));
            }
            first[j] = Some(self.b.tru());
        }
        self.b.or(terms)
    }
}

fn hit_formula(b: &mut Builder, addrs: &[Expr], i: usize, cfg: &CacheConfig, cmp: Compare) -> Expr {
    if i == 0 {
        return b.fals();
    }
    let assoc = u32::try_from(cfg.assoc).unwrap_or(u32::MAX);
    let g = geometry(b, &addrs[..=i], cfg);
    let reducing = b.is_reducing();
    let mut enc = Enc { b, g, cmp };
    if reducing {
        enc.shared(i, assoc)
    } else {
        enc.literal(i, assoc)
    }
}

/// Hit condition in the merged world, comparing block numbers.
pub fn build_eta(b: &mut Builder, view: &TraceView, cfg: &CacheConfig) -> Expr {
    hit_formula(b, &view.addrs, view.target, cfg, Compare::Block)
}

/// Hit condition in the non-speculative world: speculative events are
/// dropped from every range.
pub fn build_eta_prime(b: &mut Builder, view: &TraceView, cfg: &CacheConfig) -> Expr {
    let f = view.filtered();
    hit_formula(b, &f.addrs, f.target, cfg, Compare::Block)
}

/// Hit condition in the merged world, comparing tag and set separately.
pub fn build_mu(b: &mut Builder, view: &TraceView, cfg: &CacheConfig) -> Expr {
    hit_formula(b, &view.addrs, view.target, cfg, Compare::TagSet)
}

fn verdict_formula(b: &mut Builder, hit: Expr, c: Verdict) -> Expr {
    match c {
        Verdict::Hit => hit,
        Verdict::Miss => b.not(hit),
    }
}

/// Satisfiable iff some input makes the merged world agree with the
/// non-speculative must-behavior `c`; opposite behavior holds iff this is
/// unsatisfiable under the path condition.
pub fn build_opp(b: &mut Builder, view: &TraceView, cfg: &CacheConfig, c: Verdict) -> Expr {
    let eta = build_eta(b, view, cfg);
    verdict_formula(b, eta, c)
}

/// Two distinct inputs on the same path with different merged-world
/// behavior. `pc` is instantiated for both copies.
pub fn build_div(b: &mut Builder, view: &TraceView, cfg: &CacheConfig, pc: &Expr) -> Expr {
    let mu = build_mu(b, view, cfg);
    div_of(b, mu, pc)
}

/// `build_div` over an already built merged-world hit condition.
pub fn div_of(b: &mut Builder, mu: Expr, pc: &Expr) -> Expr {
    let mu2 = b.primed(&mu);
    let pc2 = b.primed(pc);
    let mut syms: Vec<Symbol> = mu.symbols().into_iter().collect();
    syms.extend(pc.symbols());
    syms.sort();
    syms.dedup();
    let mut differs = Vec::new();
    for s in syms {
        let x = b.sym(s.clone());
        let y = b.sym(s.primed());
        differs.push(b.ne(x, y));
    }
    let distinct = b.or(differs);
    let split = b.ne(mu, mu2);
    b.and(vec![pc.clone(), pc2, distinct, split])
}

/// Merged-world behavior differs from the constant non-speculative
/// behavior `c`.
pub fn build_theta_prime(b: &mut Builder, view: &TraceView, cfg: &CacheConfig, c: Verdict) -> Expr {
    let mu = build_mu(b, view, cfg);
    let opposite = match c {
        Verdict::Hit => Verdict::Miss,
        Verdict::Miss => Verdict::Hit,
    };
    verdict_formula(b, mu, opposite)
}

/// Top-down simplification through a reducing builder. Conjunctions stop at
/// the first false conjunct and disjunctions at the first true disjunct
/// without visiting the remaining children. Returns the reduced formula and
/// the number of nodes visited.
pub fn reduce(f: &Expr, b: &mut Builder) -> (Expr, usize) {
    let mut r = Reducer {
        b,
        done: FxHashMap::default(),
        visited: 0,
    };
    let out = r.go(f);
    (out, r.visited)
}

struct Reducer<'a> {
    b: &'a mut Builder,
    done: FxHashMap<usize, Expr>,
    visited: usize,
}

impl Reducer<'_> {
    fn go(&mut self, e: &Expr) -> Expr {
        if let Some(r) = self.done.get(&e.id()) {
            return r.clone();
        }
        self.visited += 1;
        let out = match e.kind() {
            Kind::Const(v) => self.b.constant(e.width(), *v),
            Kind::Sym(s) => self.b.sym(s.clone()),
            Kind::Bin(op, x, y) => {
                let (x, y) = (self.go(x), self.go(y));
                self.b.bin(*op, x, y)
            }
            Kind::Cmp(op, x, y) => {
                let (x, y) = (self.go(x), self.go(y));
                self.b.cmp(*op, x, y)
            }
            Kind::Not(x) => {
                let x = self.go(x);
                self.b.not(x)
            }
            Kind::Cast(x) => {
                let x = self.go(x);
                self.b.cast(e.width(), x)
            }
            Kind::Ite(c, t, f) => {
                let c = self.go(c);
                match c.as_bool() {
                    Some(true) => self.go(t),
                    Some(false) => self.go(f),
                    None => {
                        let (t, f) = (self.go(t), self.go(f));
                        self.b.ite(c, t, f)
                    }
                }
            }
            Kind::And(xs) | Kind::Or(xs) => {
                let is_and = matches!(e.kind(), Kind::And(_));
                let mut kept = Vec::with_capacity(xs.len());
                let mut absorbed = false;
                for x in xs {
                    let r = self.go(x);
                    if r.as_bool() == Some(!is_and) {
                        absorbed = true;
                        break;
                    }
                    kept.push(r);
                }
                if absorbed {
                    self.b.boolean(!is_and)
                } else if is_and {
                    self.b.and(kept)
                } else {
                    self.b.or(kept)
                }
            }
            Kind::CountLt(xs, n) => {
                let xs = xs.iter().map(|x| self.go(x)).collect();
                self.b.count_lt(xs, *n)
            }
        };
        self.done.insert(e.id(), out.clone());
        out
    }
}

/// SMT-LIB identifier of a symbol.
pub fn smt_name(s: &Symbol) -> String {
    if s.primed {
        format!("s{}p", s.index)
    } else {
        format!("s{}", s.index)
    }
}

fn smt_sort(width: u8) -> String {
    if width == 1 {
        "Bool".into()
    } else {
        format!("(_ BitVec {width})")
    }
}

/// A QF_BV script asserting the conjunction of `roots`, followed by
/// `check-sat` and `get-model`. Each shared node becomes one `define-fun`.
pub fn smtlib_script(roots: &[Expr]) -> String {
    let mut out = String::from("(set-logic QF_BV)\n(set-option :produce-models true)\n");
    let mut syms = std::collections::BTreeSet::new();
    for r in roots {
        syms.extend(r.symbols());
    }
    for s in &syms {
        let _ = writeln!(out, "; {s}");
        let _ = writeln!(out, "(declare-fun {} () (_ BitVec 8))", smt_name(s));
    }
    let mut names: FxHashMap<usize, String> = FxHashMap::default();
    let mut counter = 0usize;
    for r in roots {
        for n in r.topo() {
            if names.contains_key(&n.id()) {
                continue;
            }
            let name = |x: &Expr| names[&x.id()].clone();
            let as_bv = |x: &Expr| {
                if x.width() == 1 {
                    format!("(ite {} #b1 #b0)", name(x))
                } else {
                    name(x)
                }
            };
            let body = match n.kind() {
                Kind::Const(v) => {
                    let text = if n.width() == 1 {
                        (if *v != 0 { "true" } else { "false" }).to_string()
                    } else {
                        format!("(_ bv{v} {})", n.width())
                    };
                    names.insert(n.id(), text);
                    continue;
                }
                Kind::Sym(s) => {
                    names.insert(n.id(), smt_name(s));
                    continue;
                }
                Kind::Bin(op, a, b) => {
                    let f = match op {
                        BinOp::Add => "bvadd",
                        BinOp::Sub => "bvsub",
                        BinOp::Mul => "bvmul",
                        BinOp::And => "bvand",
                        BinOp::Or => "bvor",
                        BinOp::Xor => "bvxor",
                        BinOp::Shl => "bvshl",
                        BinOp::Lshr => "bvlshr",
                        BinOp::Udiv => "bvudiv",
                        BinOp::Urem => "bvurem",
                    };
                    let t = format!("({f} {} {})", as_bv(a), as_bv(b));
                    if n.width() == 1 {
                        format!("(= {t} #b1)")
                    } else {
                        t
                    }
                }
                Kind::Cmp(op, a, b) => {
                    use crate::expr::CmpOp::*;
                    match op {
                        Eq => format!("(= {} {})", name(a), name(b)),
                        Ne => format!("(distinct {} {})", name(a), name(b)),
                        _ => {
                            let f = match op {
                                Ult => "bvult",
                                Ule => "bvule",
                                Ugt => "bvugt",
                                _ => "bvuge",
                            };
                            format!("({f} {} {})", as_bv(a), as_bv(b))
                        }
                    }
                }
                Kind::Not(a) => {
                    if n.width() == 1 {
                        format!("(not {})", name(a))
                    } else {
                        format!("(bvnot {})", name(a))
                    }
                }
                Kind::Cast(a) => {
                    let (from, to) = (a.width(), n.width());
                    if to == 1 {
                        format!("(= ((_ extract 0 0) {}) #b1)", name(a))
                    } else if from == 1 {
                        format!("(ite {} (_ bv1 {to}) (_ bv0 {to}))", name(a))
                    } else if to > from {
                        format!("((_ zero_extend {}) {})", to - from, name(a))
                    } else {
                        format!("((_ extract {} 0) {})", to - 1, name(a))
                    }
                }
                Kind::Ite(c, t, e) => format!("(ite {} {} {})", name(c), name(t), name(e)),
                Kind::And(xs) | Kind::Or(xs) => {
                    let is_and = matches!(n.kind(), Kind::And(_));
                    if xs.is_empty() {
                        (if is_and { "true" } else { "false" }).to_string()
                    } else {
                        let parts: Vec<String> = xs.iter().map(name).collect();
                        format!("({} {})", if is_and { "and" } else { "or" }, parts.join(" "))
                    }
                }
                Kind::CountLt(xs, bound) => {
                    if xs.is_empty() {
                        (if *bound > 0 { "true" } else { "false" }).to_string()
                    } else {
                        let parts: Vec<String> = xs
                            .iter()
                            .map(|x| format!("(ite {} (_ bv1 32) (_ bv0 32))", name(x)))
                            .collect();
                        let sum = if parts.len() == 1 {
                            parts[0].clone()
                        } else {
                            format!("(bvadd {})", parts.join(" "))
                        };
                        format!("(bvult {sum} (_ bv{bound} 32))")
                    }
                }
            };
            let id = format!("n{counter}");
            counter += 1;
            let _ = writeln!(out, "(define-fun {id} () {} {body})", smt_sort(n.width()));
            names.insert(n.id(), id);
        }
    }
    for r in roots {
        let _ = writeln!(out, "(assert {})", names[&r.id()]);
    }
    out.push_str("(check-sat)\n(get-model)\n");
    out
}

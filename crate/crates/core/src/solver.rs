//! Satisfiability checking over [`Expr`] formulas.
//!
//! The reference backend enumerates the joint domain of the query's symbols,
//! lowest value first, evaluating on demand with short-circuiting. Subterms
//! over a strict subset of the symbols are tabulated, so a two-copy query over
//! one secret byte costs one pass over 2^16 assignments of the few nodes that
//! mention both copies.

use std::collections::BTreeMap;

use rustc_hash::FxHashMap;
use std::io::Write;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::expr::{apply_bin, apply_cmp, mask, Expr, Kind, Symbol};
use crate::formula::{smt_name, smtlib_script};

pub type Model = BTreeMap<Symbol, u64>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SolveResult {
    Sat(Model),
    Unsat,
    Unknown(String),
}

impl SolveResult {
    pub fn is_sat(&self) -> bool {
        matches!(self, SolveResult::Sat(_))
    }

    pub fn is_unsat(&self) -> bool {
        matches!(self, SolveResult::Unsat)
    }

    pub fn model(&self) -> Option<&Model> {
        match self {
            SolveResult::Sat(m) => Some(m),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("no value for symbol `{0}`")]
    MissingSymbol(String),
}

/// Concrete evaluation under `model`. Booleans evaluate to 0 or 1.
pub fn eval(e: &Expr, model: &Model) -> Result<u64, EvalError> {
    let mut val: FxHashMap<usize, u64> = FxHashMap::default();
    for n in e.topo() {
        let get = |x: &Expr| val[&x.id()];
        let w = n.width();
        let v = match n.kind() {
            Kind::Const(c) => *c,
            Kind::Sym(s) => match model.get(s) {
                Some(v) => v & mask(w),
                None => return Err(EvalError::MissingSymbol(s.to_string())),
            },
            Kind::Bin(op, a, b) => apply_bin(*op, w, get(a), get(b)),
            Kind::Cmp(op, a, b) => apply_cmp(*op, get(a), get(b)) as u64,
            Kind::Not(a) => !get(a) & mask(w),
            Kind::Cast(a) => get(a) & mask(w),
            Kind::Ite(c, t, f) => {
                if get(c) != 0 {
                    get(t)
                } else {
                    get(f)
                }
            }
            Kind::And(xs) => xs.iter().all(|x| get(x) != 0) as u64,
            Kind::Or(xs) => xs.iter().any(|x| get(x) != 0) as u64,
            Kind::CountLt(xs, bound) => {
                ((xs.iter().filter(|x| get(x) != 0).count() as u64) < *bound as u64) as u64
            }
        };
        val.insert(n.id(), v);
    }
    Ok(val[&e.id()])
}

pub fn eval_bool(e: &Expr, model: &Model) -> Result<bool, EvalError> {
    eval(e, model).map(|v| v != 0)
}

/// Solving strategy behind [`Solver`].
pub trait Backend {
    fn name(&self) -> &str;
    /// Satisfiability of the conjunction of `roots`.
    fn solve(&mut self, roots: &[Expr], deadline: Instant) -> SolveResult;
}

/// Exhaustive enumeration over at most `max_bits` bits of symbols.
#[derive(Debug, Clone)]
pub struct EnumBackend {
    pub max_bits: u32,
}

impl Default for EnumBackend {
    fn default() -> Self {
        EnumBackend { max_bits: 24 }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Const(u64),
    Sym(usize),
    Bin(crate::expr::BinOp, usize, usize),
    Cmp(crate::expr::CmpOp, usize, usize),
    Not(usize),
    Cast(usize),
    Ite(usize, usize, usize),
    And(Vec<usize>),
    Or(Vec<usize>),
    CountLt(Vec<usize>, u32),
}

struct Compiled {
    ops: Vec<Op>,
    width: Vec<u8>,
    support: Vec<u32>,
    roots: Vec<usize>,
    syms: Vec<Symbol>,
}

fn compile(roots: &[Expr]) -> Compiled {
    let mut index: FxHashMap<usize, usize> = FxHashMap::default();
    let mut syms_pos: BTreeMap<Symbol, usize> = BTreeMap::new();
    for r in roots {
        for s in r.symbols() {
            syms_pos.insert(s, 0);
        }
    }
    for (i, v) in syms_pos.values_mut().enumerate() {
        *v = i;
    }
    let mut c = Compiled {
        ops: Vec::new(),
        width: Vec::new(),
        support: Vec::new(),
        roots: Vec::new(),
        syms: syms_pos.keys().cloned().collect(),
    };
    for r in roots {
        for n in r.topo() {
            if index.contains_key(&n.id()) {
                continue;
            }
            let ix = |x: &Expr| index[&x.id()];
            let op = match n.kind() {
                Kind::Const(v) => Op::Const(*v),
                Kind::Sym(s) => Op::Sym(syms_pos[s]),
                Kind::Bin(op, a, b) => Op::Bin(*op, ix(a), ix(b)),
                Kind::Cmp(op, a, b) => Op::Cmp(*op, ix(a), ix(b)),
                Kind::Not(a) => Op::Not(ix(a)),
                Kind::Cast(a) => Op::Cast(ix(a)),
                Kind::Ite(x, y, z) => Op::Ite(ix(x), ix(y), ix(z)),
                Kind::And(xs) => Op::And(xs.iter().map(ix).collect()),
                Kind::Or(xs) => Op::Or(xs.iter().map(ix).collect()),
                Kind::CountLt(xs, b) => Op::CountLt(xs.iter().map(ix).collect(), *b),
            };
            let support = match &op {
                Op::Sym(p) => 1u32 << p,
                _ => n
                    .children()
                    .iter()
                    .fold(0, |acc, ch| acc | c.support[ix(ch)]),
            };
            index.insert(n.id(), c.ops.len());
            c.ops.push(op);
            c.width.push(n.width());
            c.support.push(support);
        }
        c.roots.push(index[&r.id()]);
    }
    c
}

/// Demand-driven evaluator. Each node caches its value for the current
/// assignment of its own support, so subterms over fewer symbols than the
/// query are not recomputed while the other symbols vary. Subterms feeding a
/// node of strictly larger support keep a table over their single symbol.
struct Evaluator<'a> {
    c: &'a Compiled,
    vals: Vec<u64>,
    key: Vec<usize>,
    val: Vec<u64>,
    tables: Vec<Option<Vec<u64>>>,
}

const UNSET: u64 = u64::MAX;

impl<'a> Evaluator<'a> {
    fn new(c: &'a Compiled) -> Self {
        let n = c.ops.len();
        let full = c.support.iter().fold(0, |a, s| a | s);
        let mut frontier = vec![false; n];
        for (p, op) in c.ops.iter().enumerate() {
            for ch in op_children(op) {
                if c.support[ch] != c.support[p] && c.support[ch] != 0 {
                    frontier[ch] = true;
                }
            }
        }
        for &r in &c.roots {
            frontier[r] = true;
        }
        let tables = (0..n)
            .map(|k| {
                let s = c.support[k];
                // Wide values cannot use the sentinel; they are simply recomputed.
                (frontier[k] && s != full && s.count_ones() == 1 && c.width[k] < 64)
                    .then(|| vec![UNSET; 1usize << (8 * s.count_ones())])
            })
            .collect();
        Evaluator {
            c,
            vals: vec![0; c.syms.len()],
            key: vec![usize::MAX; n],
            val: vec![0; n],
            tables,
        }
    }

    fn get(&mut self, n: usize) -> u64 {
        let idx = table_index(self.c.support[n], &self.vals);
        if self.key[n] == idx {
            return self.val[n];
        }
        if let Some(t) = &self.tables[n] {
            if t[idx] != UNSET {
                let v = t[idx];
                self.key[n] = idx;
                self.val[n] = v;
                return v;
            }
        }
        let v = self.compute(n);
        self.key[n] = idx;
        self.val[n] = v;
        if let Some(t) = &mut self.tables[n] {
            t[idx] = v;
        }
        v
    }

    fn compute(&mut self, n: usize) -> u64 {
        let c = self.c;
        let w = c.width[n];
        match &c.ops[n] {
            Op::Const(v) => *v,
            Op::Sym(p) => self.vals[*p] & mask(w),
            Op::Bin(op, a, b) => {
                let (a, b) = (self.get(*a), self.get(*b));
                apply_bin(*op, w, a, b)
            }
            Op::Cmp(op, a, b) => {
                let (a, b) = (self.get(*a), self.get(*b));
                apply_cmp(*op, a, b) as u64
            }
            Op::Not(a) => !self.get(*a) & mask(w),
            Op::Cast(a) => self.get(*a) & mask(w),
            Op::Ite(x, y, z) => {
                if self.get(*x) != 0 {
                    self.get(*y)
                } else {
                    self.get(*z)
                }
            }
            Op::And(xs) => xs.iter().all(|&x| self.get(x) != 0) as u64,
            Op::Or(xs) => xs.iter().any(|&x| self.get(x) != 0) as u64,
            Op::CountLt(xs, b) => {
                let bound = *b as usize;
                let mut count = 0usize;
                for (k, &x) in xs.iter().enumerate() {
                    if self.get(x) != 0 {
                        count += 1;
                        if count >= bound {
                            return 0;
                        }
                    }
                    if count + (xs.len() - k - 1) < bound {
                        return 1;
                    }
                }
                (count < bound) as u64
            }
        }
    }
}

fn op_children(op: &Op) -> Vec<usize> {
    match op {
        Op::Const(_) | Op::Sym(_) => vec![],
        Op::Bin(_, a, b) | Op::Cmp(_, a, b) => vec![*a, *b],
        Op::Not(a) | Op::Cast(a) => vec![*a],
        Op::Ite(x, y, z) => vec![*x, *y, *z],
        Op::And(xs) | Op::Or(xs) | Op::CountLt(xs, _) => xs.clone(),
    }
}

fn table_index(support: u32, vals: &[u64]) -> usize {
    let mut idx = 0usize;
    let mut s = support;
    while s != 0 {
        let p = s.trailing_zeros() as usize;
        idx = (idx << 8) | vals[p] as usize;
        s &= s - 1;
    }
    idx
}

/// Writes assignment number `idx` into `vals`; the lowest symbol position is
/// the most significant byte, so enumeration is lexicographic.
fn decode(n: usize, mut idx: usize, vals: &mut [u64]) {
    for p in (0..n).rev() {
        vals[p] = (idx & 0xff) as u64;
        idx >>= 8;
    }
}

impl Backend for EnumBackend {
    fn name(&self) -> &str {
        "enumeration"
    }

    fn solve(&mut self, roots: &[Expr], deadline: Instant) -> SolveResult {
        if roots.iter().any(|r| r.is_false()) {
            return SolveResult::Unsat;
        }
        let c = compile(roots);
        let bits = 8 * c.syms.len() as u32;
        if bits > self.max_bits || c.syms.len() > 8 {
            return SolveResult::Unknown(format!(
                "{bits} symbol bits exceed the enumeration budget of {}",
                self.max_bits
            ));
        }
        let mut ev = Evaluator::new(&c);
        let n = c.syms.len();
        for idx in 0..(1usize << bits) {
            decode(n, idx, &mut ev.vals);
            if c.roots.iter().all(|&r| ev.get(r) != 0) {
                let model = c.syms.iter().cloned().zip(ev.vals.iter().copied()).collect();
                return SolveResult::Sat(model);
            }
            if idx % 4096 == 4095 && Instant::now() > deadline {
                return SolveResult::Unknown("timeout".into());
            }
        }
        SolveResult::Unsat
    }
}

/// External solver speaking SMT-LIB 2 over stdin/stdout, e.g. `z3 -in`.
#[derive(Debug, Clone)]
pub struct SmtBackend {
    pub program: String,
    pub args: Vec<String>,
}

impl SmtBackend {
    pub fn new(command: &str) -> Self {
        let mut parts = command.split_whitespace().map(str::to_string);
        SmtBackend {
            program: parts.next().unwrap_or_default(),
            args: parts.collect(),
        }
    }
}

impl Backend for SmtBackend {
    fn name(&self) -> &str {
        &self.program
    }

    fn solve(&mut self, roots: &[Expr], deadline: Instant) -> SolveResult {
        let script = smtlib_script(roots);
        let child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn();
        let mut child = match child {
            Ok(c) => c,
            Err(e) => return SolveResult::Unknown(format!("cannot start {}: {e}", self.program)),
        };
        if let Some(mut stdin) = child.stdin.take() {
            if let Err(e) = stdin.write_all(script.as_bytes()) {
                return SolveResult::Unknown(format!("write to solver failed: {e}"));
            }
        }
        // The deadline is advisory here; external solvers take their own timeout flag.
        let _ = deadline;
        let out = match child.wait_with_output() {
            Ok(o) => o,
            Err(e) => return SolveResult::Unknown(format!("solver failed: {e}")),
        };
        let mut syms = BTreeMap::new();
        for r in roots {
            for s in r.symbols() {
                syms.insert(smt_name(&s), s);
            }
        }
        parse_smt_output(&String::from_utf8_lossy(&out.stdout), &syms)
    }
}

/// Parses `sat`/`unsat`/`unknown` followed by an optional `(model ...)` or
/// bare list of `define-fun` entries.
pub fn parse_smt_output(text: &str, syms: &BTreeMap<String, Symbol>) -> SolveResult {
    let mut toks = sexp_tokens(text).into_iter().peekable();
    match toks.next().as_deref() {
        Some("unsat") => return SolveResult::Unsat,
        Some("sat") => {}
        Some("unknown") => return SolveResult::Unknown("solver returned unknown".into()),
        other => return SolveResult::Unknown(format!("unexpected solver output {other:?}")),
    }
    let toks: Vec<String> = toks.collect();
    let mut model = Model::new();
    let mut i = 0;
    while i + 1 < toks.len() {
        if toks[i] != "define-fun" {
            i += 1;
            continue;
        }
        let name = &toks[i + 1];
        // define-fun NAME () SORT VALUE
        let args = i + 2;
        let sort = skip_sexp(&toks, args);
        let value = skip_sexp(&toks, sort);
        if let (Some(s), Some(v)) = (syms.get(name), toks.get(value).and_then(|t| parse_bv_literal(t, &toks[value..]))) {
            model.insert(s.clone(), v);
        }
        i = value;
    }
    for s in syms.values() {
        model.entry(s.clone()).or_insert(0);
    }
    SolveResult::Sat(model)
}

/// Index just past the s-expression starting at `i`.
fn skip_sexp(toks: &[String], i: usize) -> usize {
    if toks.get(i).map(String::as_str) != Some("(") {
        return i + 1;
    }
    let mut depth = 0;
    let mut j = i;
    while j < toks.len() {
        match toks[j].as_str() {
            "(" => depth += 1,
            ")" => {
                depth -= 1;
                if depth == 0 {
                    return j + 1;
                }
            }
            _ => {}
        }
        j += 1;
    }
    j
}

/// A literal token, or the `(` opening `(_ bvN W)`.
fn parse_bv_literal(t: &str, rest: &[String]) -> Option<u64> {
    if let Some(h) = t.strip_prefix("#x") {
        return u64::from_str_radix(h, 16).ok();
    }
    if let Some(b) = t.strip_prefix("#b") {
        return u64::from_str_radix(b, 2).ok();
    }
    if t == "(" && rest.get(1).map(String::as_str) == Some("_") {
        return rest.get(2)?.strip_prefix("bv")?.parse().ok();
    }
    match t {
        "true" => Some(1),
        "false" => Some(0),
        _ => None,
    }
}

fn sexp_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        match ch {
            '(' | ')' => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolverStats {
    pub queries: u64,
    pub elapsed: Duration,
}

/// Query front end: deadline handling, statistics and model self-checking.
pub struct Solver {
    backend: Box<dyn Backend>,
    timeout: Duration,
    stats: SolverStats,
}

impl std::fmt::Debug for Solver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Solver")
            .field("backend", &self.backend.name())
            .field("timeout", &self.timeout)
            .field("stats", &self.stats)
            .finish()
    }
}

impl Solver {
    pub fn new(backend: Box<dyn Backend>, timeout: Duration) -> Self {
        Solver {
            backend,
            timeout,
            stats: SolverStats::default(),
        }
    }

    pub fn enumeration(max_bits: u32, timeout: Duration) -> Self {
        Self::new(Box::new(EnumBackend { max_bits }), timeout)
    }

    pub fn stats(&self) -> SolverStats {
        self.stats
    }

    /// Satisfiability of `f` under `assumptions`. Every returned model
    /// assigns all query symbols and has been re-evaluated to true.
    pub fn check(&mut self, f: &Expr, assumptions: &[Expr]) -> SolveResult {
        let start = Instant::now();
        self.stats.queries += 1;
        let mut roots = Vec::with_capacity(assumptions.len() + 1);
        roots.push(f.clone());
        roots.extend(assumptions.iter().cloned());
        let r = self.backend.solve(&roots, start + self.timeout);
        let r = match r {
            SolveResult::Sat(m) => {
                if roots.iter().all(|x| eval_bool(x, &m) == Ok(true)) {
                    SolveResult::Sat(m)
                } else {
                    SolveResult::Unknown("self-check failed".into())
                }
            }
            other => other,
        };
        self.stats.elapsed += start.elapsed();
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{BinOp, Builder, CmpOp};

    fn x(b: &mut Builder) -> Expr {
        b.sym(Symbol::new(0, "x"))
    }

    fn solver() -> Solver {
        Solver::enumeration(24, Duration::from_secs(30))
    }

    #[test]
    fn finds_equality_model() {
        let mut b = Builder::plain();
        let xe = x(&mut b);
        let five = b.constant(8, 5);
        let f = b.eq(xe, five);
        let r = solver().check(&f, &[]);
        assert_eq!(r.model().unwrap().values().copied().collect::<Vec<_>>(), vec![5]);
    }

    #[test]
    fn unsigned_less_than_zero_is_unsat() {
        let mut b = Builder::plain();
        let xe = x(&mut b);
        let zero = b.constant(8, 0);
        let f = b.cmp(CmpOp::Ult, xe, zero);
        assert_eq!(solver().check(&f, &[]), SolveResult::Unsat);
    }

    #[test]
    fn eval_wraps_and_counts() {
        let mut b = Builder::plain();
        let xe = x(&mut b);
        let one = b.constant(8, 1);
        let f = b.bin(BinOp::Add, xe, one);
        let m: Model = [(Symbol::new(0, "x"), 255)].into_iter().collect();
        assert_eq!(eval(&f, &m), Ok(0));
        let t = b.tru();
        let fl = b.fals();
        let xe = x(&mut b);
        let zero = b.constant(8, 0);
        let sym_true = b.cmp(CmpOp::Uge, xe, zero);
        let c = b.count_lt(vec![t, fl, sym_true], 3);
        assert_eq!(eval(&c, &m), Ok(1));
        assert_eq!(
            eval(&c, &Model::new()),
            Err(EvalError::MissingSymbol("x".into()))
        );
    }

    #[test]
    fn two_copy_query_is_lexicographic() {
        let mut b = Builder::plain();
        let xe = x(&mut b);
        let xp = b.sym(Symbol::new(0, "x").primed());
        let zero = b.constant(8, 0);
        let a = b.eq(xe.clone(), zero.clone());
        let c = b.ne(xp.clone(), zero);
        let d = b.ne(xe, xp);
        let f = b.and(vec![a, c, d]);
        let m = solver().check(&f, &[]).model().cloned().unwrap();
        assert_eq!(m.values().copied().collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn over_budget_is_unknown() {
        let mut b = Builder::plain();
        let syms: Vec<Expr> = (0..4).map(|i| b.sym(Symbol::new(i, &format!("s{i}")))).collect();
        let zero = b.constant(8, 0);
        let eqs: Vec<Expr> = syms.into_iter().map(|s| b.eq(s, zero.clone())).collect();
        let f = b.and(eqs);
        assert!(matches!(solver().check(&f, &[]), SolveResult::Unknown(_)));
    }

    #[test]
    fn assumptions_are_conjoined() {
        let mut b = Builder::plain();
        let xe = x(&mut b);
        let ten = b.constant(8, 10);
        let f = b.cmp(CmpOp::Ugt, xe.clone(), ten);
        let twenty = b.constant(8, 20);
        let g = b.cmp(CmpOp::Ult, xe, twenty);
        let m = solver().check(&f, &[g]).model().cloned().unwrap();
        assert_eq!(m.values().copied().collect::<Vec<_>>(), vec![11]);
    }

    #[test]
    fn ground_queries() {
        let mut b = Builder::plain();
        let t = b.tru();
        let f = b.fals();
        assert_eq!(solver().check(&t, &[]), SolveResult::Sat(Model::new()));
        assert_eq!(solver().check(&f, &[]), SolveResult::Unsat);
    }

    #[test]
    fn parses_smt_models() {
        let syms: BTreeMap<String, Symbol> =
            [("s0".to_string(), Symbol::new(0, "x")), ("s0p".to_string(), Symbol::new(0, "x").primed())]
                .into_iter()
                .collect();
        let out = "sat\n(model\n  (define-fun s0 () (_ BitVec 8)\n    #x00)\n  (define-fun s0p () (_ BitVec 8) (_ bv7 8))\n)\n";
        let r = parse_smt_output(out, &syms);
        let m = r.model().unwrap();
        assert_eq!(m[&Symbol::new(0, "x")], 0);
        assert_eq!(m[&Symbol::new(0, "x").primed()], 7);
        assert_eq!(parse_smt_output("unsat\n", &syms), SolveResult::Unsat);
        assert!(matches!(parse_smt_output("", &syms), SolveResult::Unknown(_)));
    }

    #[test]
    fn exhaustive_agreement_on_random_byte_formulas() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let mut b = Builder::plain();
            let xe = x(&mut b);
            let k = b.constant(8, rng.gen_range(0..256));
            let m = b.constant(8, rng.gen_range(1..8));
            let sum = b.bin(BinOp::Mul, xe.clone(), m);
            let f1 = b.cmp(CmpOp::Ult, sum, k.clone());
            let f2 = b.cmp(CmpOp::Ugt, xe, k);
            let f = b.and2(f1, f2);
            let truth = (0..256u64).find(|&v| {
                let m: Model = [(Symbol::new(0, "x"), v)].into_iter().collect();
                eval_bool(&f, &m).unwrap()
            });
            match solver().check(&f, &[]) {
                SolveResult::Sat(m) => assert_eq!(Some(m[&Symbol::new(0, "x")]), truth),
                SolveResult::Unsat => assert_eq!(truth, None),
                SolveResult::Unknown(r) => panic!("{r}"),
            }
        }
    }
}

//! Quantifier-free expression algebra shared by symbolic values and cache
//! constraints.
//!
//! Expressions are immutable DAGs behind `Rc`. Width 1 is boolean; all other
//! widths are unsigned fixed-width integers with modular arithmetic. Every
//! node is created through a [`Builder`], which folds ground subterms and, in
//! reducing mode, applies short-circuit simplification and hash-consing.

use std::collections::{BTreeSet, HashMap};

use rustc_hash::FxHashMap;
use std::fmt;
use std::rc::Rc;

/// A secret input byte, or its primed copy used in two-input constraints.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Symbol {
    pub index: u32,
    pub primed: bool,
    pub name: Rc<str>,
}

impl Symbol {
    pub fn new(index: u32, name: &str) -> Self {
        Symbol {
            index,
            primed: false,
            name: Rc::from(name),
        }
    }

    pub fn primed(&self) -> Self {
        Symbol {
            primed: true,
            ..self.clone()
        }
    }

    pub fn unprimed(&self) -> Self {
        Symbol {
            primed: false,
            ..self.clone()
        }
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.primed {
            write!(f, "{}'", self.name)
        } else {
            write!(f, "{}", self.name)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Shl,
    Lshr,
    Udiv,
    Urem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Ult,
    Ule,
    Ugt,
    Uge,
}

#[derive(Debug)]
pub enum Kind {
    Const(u64),
    Sym(Symbol),
    Bin(BinOp, Expr, Expr),
    Not(Expr),
    Ite(Expr, Expr, Expr),
    Cmp(CmpOp, Expr, Expr),
    /// Zero-extension or truncation to the node width.
    Cast(Expr),
    And(Vec<Expr>),
    Or(Vec<Expr>),
    /// True iff fewer than `bound` of the boolean terms hold.
    CountLt(Vec<Expr>, u32),
}

#[derive(Debug)]
pub struct Node {
    pub width: u8,
    pub symbolic: bool,
    pub kind: Kind,
}

#[derive(Debug, Clone)]
pub struct Expr(Rc<Node>);

pub fn mask(width: u8) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

pub fn apply_bin(op: BinOp, width: u8, a: u64, b: u64) -> u64 {
    let r = match op {
        BinOp::Add => a.wrapping_add(b),
        BinOp::Sub => a.wrapping_sub(b),
        BinOp::Mul => a.wrapping_mul(b),
        BinOp::And => a & b,
        BinOp::Or => a | b,
        BinOp::Xor => a ^ b,
        BinOp::Shl => {
            if b >= width as u64 {
                0
            } else {
                a << b
            }
        }
        BinOp::Lshr => {
            if b >= width as u64 {
                0
            } else {
                a >> b
            }
        }
        // SMT-LIB convention: x / 0 = all ones, x % 0 = x.
        BinOp::Udiv => a.checked_div(b).unwrap_or(u64::MAX),
        BinOp::Urem => {
            if b == 0 {
                a
            } else {
                a % b
            }
        }
    };
    r & mask(width)
}

pub fn apply_cmp(op: CmpOp, a: u64, b: u64) -> bool {
    match op {
        CmpOp::Eq => a == b,
        CmpOp::Ne => a != b,
        CmpOp::Ult => a < b,
        CmpOp::Ule => a <= b,
        CmpOp::Ugt => a > b,
        CmpOp::Uge => a >= b,
    }
}

impl Expr {
    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn kind(&self) -> &Kind {
        &self.0.kind
    }

    pub fn width(&self) -> u8 {
        self.0.width
    }

    pub fn is_symbolic(&self) -> bool {
        self.0.symbolic
    }

    pub fn as_const(&self) -> Option<u64> {
        match self.0.kind {
            Kind::Const(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        if self.width() != 1 {
            return None;
        }
        self.as_const().map(|v| v != 0)
    }

    pub fn is_true(&self) -> bool {
        self.as_bool() == Some(true)
    }

    pub fn is_false(&self) -> bool {
        self.as_bool() == Some(false)
    }

    /// Identity of the shared node; stable while any clone is alive.
    pub fn id(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    pub fn ptr_eq(&self, other: &Expr) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    pub fn children(&self) -> Vec<&Expr> {
        match &self.0.kind {
            Kind::Const(_) | Kind::Sym(_) => vec![],
            Kind::Bin(_, a, b) | Kind::Cmp(_, a, b) => vec![a, b],
            Kind::Not(a) | Kind::Cast(a) => vec![a],
            Kind::Ite(c, t, e) => vec![c, t, e],
            Kind::And(xs) | Kind::Or(xs) | Kind::CountLt(xs, _) => xs.iter().collect(),
        }
    }

    /// Distinct nodes in post-order (children before parents).
    pub fn topo(&self) -> Vec<Expr> {
        let mut seen = rustc_hash::FxHashSet::default();
        let mut out = Vec::new();
        let mut stack: Vec<(Expr, bool)> = vec![(self.clone(), false)];
        while let Some((e, expanded)) = stack.pop() {
            if expanded {
                out.push(e);
                continue;
            }
            if !seen.insert(e.id()) {
                continue;
            }
            stack.push((e.clone(), true));
            for c in e.children().into_iter().rev() {
                if !seen.contains(&c.id()) {
                    stack.push((c.clone(), false));
                }
            }
        }
        out
    }

    pub fn dag_size(&self) -> usize {
        self.topo().len()
    }

    pub fn symbols(&self) -> BTreeSet<Symbol> {
        if !self.is_symbolic() {
            return BTreeSet::new();
        }
        self.topo()
            .into_iter()
            .filter_map(|e| match e.kind() {
                Kind::Sym(s) => Some(s.clone()),
                _ => None,
            })
            .collect()
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |f: &mut fmt::Formatter<'_>, name: &str, xs: &[Expr]| -> fmt::Result {
            write!(f, "({name}")?;
            for x in xs {
                write!(f, " {x}")?;
            }
            write!(f, ")")
        };
        match self.kind() {
            Kind::Const(v) => {
                if self.width() == 1 {
                    write!(f, "{}", *v != 0)
                } else {
                    write!(f, "{v}")
                }
            }
            Kind::Sym(s) => write!(f, "{s}"),
            Kind::Bin(op, a, b) => write!(f, "({op:?} {a} {b})"),
            Kind::Cmp(op, a, b) => write!(f, "({op:?} {a} {b})"),
            Kind::Not(a) => write!(f, "(not {a})"),
            Kind::Cast(a) => write!(f, "(cast{} {a})", self.width()),
            Kind::Ite(c, t, e) => write!(f, "(ite {c} {t} {e})"),
            Kind::And(xs) => list(f, "and", xs),
            Kind::Or(xs) => list(f, "or", xs),
            Kind::CountLt(xs, n) => list(f, &format!("count<{n}"), xs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Key {
    Const(u8, u64),
    Sym(Symbol),
    Op(u8, u8, u32, Vec<usize>),
}

/// Hash-consing table and allocation counter for one analysis session.
#[derive(Debug, Default)]
pub struct MemoTable {
    table: FxHashMap<Key, Expr>,
    pub allocated: u64,
    pub hits: u64,
}

impl MemoTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

/// Node factory.
///
/// Plain builders fold a node only when every child is ground. Reducing
/// builders additionally short-circuit `and`/`or`/`count` on constant
/// children, cancel double negation, and share structurally equal nodes
/// through the memo table.
#[derive(Debug)]
pub struct Builder {
    reduce: bool,
    memo: MemoTable,
}

impl Default for Builder {
    fn default() -> Self {
        Self::plain()
    }
}

impl Builder {
    pub fn plain() -> Self {
        Builder {
            reduce: false,
            memo: MemoTable::new(),
        }
    }

    pub fn reducing() -> Self {
        Builder {
            reduce: true,
            memo: MemoTable::new(),
        }
    }

    pub fn is_reducing(&self) -> bool {
        self.reduce
    }

    pub fn allocated(&self) -> u64 {
        self.memo.allocated
    }

    pub fn memo(&self) -> &MemoTable {
        &self.memo
    }

    fn make(&mut self, key: Option<Key>, width: u8, kind: Kind) -> Expr {
        if self.reduce {
            if let Some(k) = &key {
                if let Some(e) = self.memo.table.get(k) {
                    self.memo.hits += 1;
                    return e.clone();
                }
            }
        }
        let symbolic = match &kind {
            Kind::Const(_) => false,
            Kind::Sym(_) => true,
            Kind::Bin(_, a, b) | Kind::Cmp(_, a, b) => a.is_symbolic() || b.is_symbolic(),
            Kind::Not(a) | Kind::Cast(a) => a.is_symbolic(),
            Kind::Ite(c, t, e) => c.is_symbolic() || t.is_symbolic() || e.is_symbolic(),
            Kind::And(xs) | Kind::Or(xs) | Kind::CountLt(xs, _) => {
                xs.iter().any(|x| x.is_symbolic())
            }
        };
        let e = Expr(Rc::new(Node {
            width,
            symbolic,
            kind,
        }));
        self.memo.allocated += 1;
        if self.reduce {
            if let Some(k) = key {
                self.memo.table.insert(k, e.clone());
            }
        }
        e
    }

    pub fn constant(&mut self, width: u8, value: u64) -> Expr {
        let v = value & mask(width);
        let key = self.reduce.then_some(Key::Const(width, v));
        self.make(key, width, Kind::Const(v))
    }

    pub fn boolean(&mut self, b: bool) -> Expr {
        self.constant(1, b as u64)
    }

    pub fn tru(&mut self) -> Expr {
        self.boolean(true)
    }

    pub fn fals(&mut self) -> Expr {
        self.boolean(false)
    }

    pub fn sym(&mut self, s: Symbol) -> Expr {
        let key = self.reduce.then(|| Key::Sym(s.clone()));
        self.make(key, 8, Kind::Sym(s))
    }

    /// Interning key; plain builders never intern.
    fn op_key(&self, tag: u8, width: u8, extra: u32, xs: &[&Expr]) -> Option<Key> {
        if !self.reduce {
            return None;
        }
        Some(Key::Op(tag, width, extra, xs.iter().map(|x| x.id()).collect()))
    }

    pub fn bin(&mut self, op: BinOp, a: Expr, b: Expr) -> Expr {
        assert_eq!(a.width(), b.width(), "operand width mismatch in {op:?}");
        let w = a.width();
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            return self.constant(w, apply_bin(op, w, x, y));
        }
        let key = self.op_key(1, w, op as u32, &[&a, &b]);
        self.make(key, w, Kind::Bin(op, a, b))
    }

    pub fn cmp(&mut self, op: CmpOp, a: Expr, b: Expr) -> Expr {
        assert_eq!(a.width(), b.width(), "operand width mismatch in {op:?}");
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            return self.boolean(apply_cmp(op, x, y));
        }
        if self.reduce && a.ptr_eq(&b) {
            return self.boolean(matches!(op, CmpOp::Eq | CmpOp::Ule | CmpOp::Uge));
        }
        let key = self.op_key(2, 1, op as u32, &[&a, &b]);
        self.make(key, 1, Kind::Cmp(op, a, b))
    }

    pub fn eq(&mut self, a: Expr, b: Expr) -> Expr {
        self.cmp(CmpOp::Eq, a, b)
    }

    pub fn ne(&mut self, a: Expr, b: Expr) -> Expr {
        self.cmp(CmpOp::Ne, a, b)
    }

    pub fn not(&mut self, a: Expr) -> Expr {
        let w = a.width();
        if let Some(x) = a.as_const() {
            return self.constant(w, !x);
        }
        if self.reduce {
            if let Kind::Not(inner) = a.kind() {
                return inner.clone();
            }
        }
        let key = self.op_key(3, w, 0, &[&a]);
        self.make(key, w, Kind::Not(a))
    }

    pub fn ite(&mut self, c: Expr, t: Expr, e: Expr) -> Expr {
        assert_eq!(c.width(), 1, "ite condition must be boolean");
        assert_eq!(t.width(), e.width(), "ite arm width mismatch");
        if let Some(b) = c.as_bool() {
            return if b { t } else { e };
        }
        if self.reduce && t.ptr_eq(&e) {
            return t;
        }
        let w = t.width();
        let key = self.op_key(4, w, 0, &[&c, &t, &e]);
        self.make(key, w, Kind::Ite(c, t, e))
    }

    pub fn cast(&mut self, width: u8, a: Expr) -> Expr {
        if a.width() == width {
            return a;
        }
        if let Some(x) = a.as_const() {
            return self.constant(width, x);
        }
        let key = self.op_key(5, width, 0, &[&a]);
        self.make(key, width, Kind::Cast(a))
    }

    pub fn and(&mut self, xs: Vec<Expr>) -> Expr {
        self.junction(true, xs)
    }

    pub fn or(&mut self, xs: Vec<Expr>) -> Expr {
        self.junction(false, xs)
    }

    pub fn and2(&mut self, a: Expr, b: Expr) -> Expr {
        self.and(vec![a, b])
    }

    pub fn or2(&mut self, a: Expr, b: Expr) -> Expr {
        self.or(vec![a, b])
    }

    fn junction(&mut self, is_and: bool, xs: Vec<Expr>) -> Expr {
        // Identity element: true for and, false for or.
        let unit = is_and;
        if xs.iter().all(|x| x.as_bool().is_some()) {
            let v = if is_and {
                xs.iter().all(|x| x.is_true())
            } else {
                xs.iter().any(|x| x.is_true())
            };
            return self.boolean(v);
        }
        let xs = if self.reduce {
            let mut kept: Vec<Expr> = Vec::with_capacity(xs.len());
            for x in xs {
                match x.as_bool() {
                    Some(b) if b == unit => continue,
                    Some(_) => return self.boolean(!unit),
                    None => {
                        if !kept.iter().any(|k| k.ptr_eq(&x)) {
                            kept.push(x)
                        }
                    }
                }
            }
            match kept.len() {
                0 => return self.boolean(unit),
                1 => return kept.pop().unwrap(),
                _ => kept,
            }
        } else {
            xs
        };
        let refs: Vec<&Expr> = xs.iter().collect();
        let key = self.op_key(if is_and { 6 } else { 7 }, 1, 0, &refs);
        let kind = if is_and { Kind::And(xs) } else { Kind::Or(xs) };
        self.make(key, 1, kind)
    }

    pub fn count_lt(&mut self, xs: Vec<Expr>, bound: u32) -> Expr {
        if xs.iter().all(|x| x.as_bool().is_some()) {
            let n = xs.iter().filter(|x| x.is_true()).count();
            return self.boolean((n as u64) < bound as u64);
        }
        let (xs, bound) = if self.reduce {
            let mut ones = 0u32;
            let mut open = Vec::new();
            for x in xs {
                match x.as_bool() {
                    Some(true) => ones += 1,
                    Some(false) => {}
                    None => open.push(x),
                }
            }
            if ones >= bound {
                return self.fals();
            }
            let rest = bound - ones;
            if (open.len() as u64) < rest as u64 {
                return self.tru();
            }
            (open, rest)
        } else {
            (xs, bound)
        };
        let refs: Vec<&Expr> = xs.iter().collect();
        let key = self.op_key(8, 1, bound, &refs);
        self.make(key, 1, Kind::CountLt(xs, bound))
    }

    /// Rebuilds `e` bottom-up through this builder, replacing symbols via `f`.
    pub fn rebuild(&mut self, e: &Expr, f: &dyn Fn(&Symbol) -> Option<Expr>) -> Expr {
        let mut done: FxHashMap<usize, Expr> = FxHashMap::default();
        for n in e.topo() {
            let get = |x: &Expr| done[&x.id()].clone();
            let out = match n.kind() {
                Kind::Const(v) => self.constant(n.width(), *v),
                Kind::Sym(s) => match f(s) {
                    Some(r) => r,
                    None => self.sym(s.clone()),
                },
                Kind::Bin(op, a, b) => {
                    let (a, b) = (get(a), get(b));
                    self.bin(*op, a, b)
                }
                Kind::Cmp(op, a, b) => {
                    let (a, b) = (get(a), get(b));
                    self.cmp(*op, a, b)
                }
                Kind::Not(a) => {
                    let a = get(a);
                    self.not(a)
                }
                Kind::Cast(a) => {
                    let a = get(a);
                    self.cast(n.width(), a)
                }
                Kind::Ite(c, t, el) => {
                    let (c, t, el) = (get(c), get(t), get(el));
                    self.ite(c, t, el)
                }
                Kind::And(xs) => {
                    let xs = xs.iter().map(get).collect();
                    self.and(xs)
                }
                Kind::Or(xs) => {
                    let xs = xs.iter().map(get).collect();
                    self.or(xs)
                }
                Kind::CountLt(xs, b) => {
                    let xs = xs.iter().map(get).collect();
                    self.count_lt(xs, *b)
                }
            };
            done.insert(n.id(), out);
        }
        done[&e.id()].clone()
    }

    /// Copy of `e` with every symbol replaced by its primed twin.
    pub fn primed(&mut self, e: &Expr) -> Expr {
        let syms: HashMap<Symbol, Expr> = e
            .symbols()
            .into_iter()
            .map(|s| {
                let p = self.sym(s.primed());
                (s, p)
            })
            .collect();
        self.rebuild(e, &|s| syms.get(s).cloned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Symbol {
        Symbol::new(0, "x")
    }

    #[test]
    fn ground_terms_fold_in_plain_mode() {
        let mut b = Builder::plain();
        let a = b.constant(8, 250);
        let c = b.constant(8, 10);
        let s = b.bin(BinOp::Add, a, c);
        assert_eq!(s.as_const(), Some(4));
        let sh = b.constant(8, 9);
        let one = b.constant(8, 1);
        assert_eq!(b.bin(BinOp::Shl, one, sh).as_const(), Some(0));
    }

    #[test]
    fn plain_and_keeps_constant_children_when_symbolic() {
        let mut b = Builder::plain();
        let s = b.sym(x());
        let z = b.constant(8, 0);
        let p = b.eq(s, z);
        let f = b.fals();
        let conj = b.and2(f, p);
        assert!(conj.as_bool().is_none());
        let mut r = Builder::reducing();
        let s = r.sym(x());
        let z = r.constant(8, 0);
        let p = r.eq(s, z);
        let f = r.fals();
        assert!(r.and2(f, p).is_false());
    }

    #[test]
    fn reducing_builder_shares_nodes() {
        let mut r = Builder::reducing();
        let a = r.sym(x());
        let b = r.sym(x());
        assert!(a.ptr_eq(&b));
        let k = r.constant(8, 3);
        let e1 = r.eq(a.clone(), k.clone());
        let before = r.allocated();
        let e2 = r.eq(b, k);
        assert!(e1.ptr_eq(&e2));
        assert_eq!(r.allocated(), before);
        let n = r.not(e1.clone());
        assert!(r.not(n).ptr_eq(&e1));
    }

    #[test]
    fn count_lt_reduction() {
        let mut r = Builder::reducing();
        let s = r.sym(x());
        let z = r.constant(8, 0);
        let p = r.eq(s, z);
        let t = r.tru();
        let f = r.fals();
        assert!(r.count_lt(vec![t.clone(), t.clone(), p.clone()], 2).is_false());
        assert!(r.count_lt(vec![t.clone(), f.clone(), p.clone()], 3).is_true());
        let c = r.count_lt(vec![t, f, p], 2);
        match c.kind() {
            Kind::CountLt(xs, 1) => assert_eq!(xs.len(), 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn symbolic_flag_tracks_symbol_occurrence() {
        let mut b = Builder::plain();
        let s = b.sym(x());
        let e = b.bin(BinOp::Sub, s.clone(), s);
        assert!(e.is_symbolic());
        assert_eq!(e.symbols().len(), 1);
        let p = b.primed(&e);
        assert!(p.symbols().iter().all(|s| s.primed));
    }
}

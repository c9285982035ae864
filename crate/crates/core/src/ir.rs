//! The mini intermediate language: declarations, instructions, a line-oriented
//! text parser, a pretty-printer, and the static memory layout.
//!
//! ```text
//! program motivating
//! var S : u8[254]
//! var x : u8
//! var i : reg u8
//! secret x
//! init i = 0
//! head: br i < 254 ? body : done
//! body: load t = S[i]
//!       assign i = i + 1
//!       jmp head
//! done: halt
//! ```
//!
//! Expressions only mention registers and literals. Memory is touched solely
//! through `load` and `store`, so every memory event is explicit.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IrError {
    #[error("parse error at {line}:{column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("validation error at line {line}: {message}")]
    Validation { line: usize, message: String },
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> IrError {
    IrError::Parse {
        line,
        column,
        message: message.into(),
    }
}

fn invalid(line: usize, message: impl Into<String>) -> IrError {
    IrError::Validation {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Scalar,
    Array(usize),
    Register,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarDecl {
    pub name: String,
    pub kind: VarKind,
    pub line: usize,
}

impl VarDecl {
    /// Bytes of memory the variable occupies; registers occupy none.
    pub fn size(&self) -> usize {
        match self.kind {
            VarKind::Scalar => 1,
            VarKind::Array(n) => n,
            VarKind::Register => 0,
        }
    }

    pub fn is_register(&self) -> bool {
        self.kind == VarKind::Register
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Shl,
    Shr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Lit(u8),
    Var(String),
    Arith(ArithOp, Box<Expr>, Box<Expr>),
    Rel(RelOp, Box<Expr>, Box<Expr>),
    /// Bitwise complement of a byte.
    BitNot(Box<Expr>),
    LogicNot(Box<Expr>),
    LogicAnd(Box<Expr>, Box<Expr>),
    LogicOr(Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ty {
    Byte,
    Bool,
}

impl Expr {
    /// Registers mentioned by the expression, in first-occurrence order.
    pub fn vars(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Lit(_) => {}
            Expr::Var(v) => {
                if !out.contains(&v.as_str()) {
                    out.push(v)
                }
            }
            Expr::Arith(_, a, b)
            | Expr::Rel(_, a, b)
            | Expr::LogicAnd(a, b)
            | Expr::LogicOr(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Expr::BitNot(a) | Expr::LogicNot(a) => a.collect_vars(out),
        }
    }

    fn ty(&self, line: usize) -> Result<Ty, IrError> {
        let want = |e: &Expr, t: Ty| -> Result<(), IrError> {
            let got = e.ty(line)?;
            if got != t {
                return Err(invalid(line, format!("expected {t:?} operand in `{e}`")));
            }
            Ok(())
        };
        match self {
            Expr::Lit(_) | Expr::Var(_) => Ok(Ty::Byte),
            Expr::Arith(_, a, b) => {
                want(a, Ty::Byte)?;
                want(b, Ty::Byte)?;
                Ok(Ty::Byte)
            }
            Expr::Rel(_, a, b) => {
                want(a, Ty::Byte)?;
                want(b, Ty::Byte)?;
                Ok(Ty::Bool)
            }
            Expr::BitNot(a) => {
                want(a, Ty::Byte)?;
                Ok(Ty::Byte)
            }
            Expr::LogicNot(a) => {
                want(a, Ty::Bool)?;
                Ok(Ty::Bool)
            }
            Expr::LogicAnd(a, b) | Expr::LogicOr(a, b) => {
                want(a, Ty::Bool)?;
                want(b, Ty::Bool)?;
                Ok(Ty::Bool)
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Lit(v) => write!(f, "{v}"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Arith(op, a, b) => {
                let s = match op {
                    ArithOp::Add => "+",
                    ArithOp::Sub => "-",
                    ArithOp::Mul => "*",
                    ArithOp::And => "&",
                    ArithOp::Or => "|",
                    ArithOp::Xor => "^",
                    ArithOp::Shl => "<<",
                    ArithOp::Shr => ">>",
                };
                write!(f, "({a} {s} {b})")
            }
            Expr::Rel(op, a, b) => {
                let s = match op {
                    RelOp::Eq => "==",
                    RelOp::Ne => "!=",
                    RelOp::Lt => "<",
                    RelOp::Le => "<=",
                    RelOp::Gt => ">",
                    RelOp::Ge => ">=",
                };
                write!(f, "({a} {s} {b})")
            }
            Expr::BitNot(a) => write!(f, "~{a}"),
            Expr::LogicNot(a) => write!(f, "!{a}"),
            Expr::LogicAnd(a, b) => write!(f, "({a} && {b})"),
            Expr::LogicOr(a, b) => write!(f, "({a} || {b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InstKind {
    Assign {
        dst: String,
        value: Expr,
    },
    Load {
        dst: String,
        base: String,
        index: Expr,
    },
    Store {
        base: String,
        index: Expr,
        value: Expr,
    },
    Branch {
        cond: Expr,
        then_target: usize,
        else_target: usize,
    },
    Jump(usize),
    Halt,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub kind: InstKind,
    /// Source line (1-based).
    pub location: usize,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub name: String,
    pub decls: Vec<VarDecl>,
    pub insts: Vec<Instruction>,
    pub sensitive: BTreeSet<String>,
    pub public_init: BTreeMap<String, u8>,
}

impl Program {
    pub fn decl(&self, name: &str) -> Option<&VarDecl> {
        self.decls.iter().find(|d| d.name == name)
    }

    /// Registers in declaration order.
    pub fn registers(&self) -> impl Iterator<Item = &VarDecl> {
        self.decls.iter().filter(|d| d.is_register())
    }

    pub fn register_index(&self, name: &str) -> Option<usize> {
        self.registers().position(|d| d.name == name)
    }

    /// Secret input bytes in declaration order: `(name, address-or-register)`.
    /// Array secrets contribute one byte per cell, named `A[k]`.
    pub fn secret_bytes(&self) -> Vec<String> {
        let mut out = Vec::new();
        for d in &self.decls {
            if !self.sensitive.contains(&d.name) {
                continue;
            }
            match d.kind {
                VarKind::Array(n) => out.extend((0..n).map(|k| format!("{}[{k}]", d.name))),
                _ => out.push(d.name.clone()),
            }
        }
        out
    }

    /// Equality ignoring source locations and labels.
    pub fn same_structure(&self, other: &Program) -> bool {
        let strip = |p: &Program| -> Vec<InstKind> { p.insts.iter().map(|i| i.kind.clone()).collect() };
        let decls = |p: &Program| -> Vec<(String, VarKind)> {
            p.decls.iter().map(|d| (d.name.clone(), d.kind)).collect()
        };
        self.name == other.name
            && decls(self) == decls(other)
            && strip(self) == strip(other)
            && self.sensitive == other.sensitive
            && self.public_init == other.public_init
    }
}

/// Concrete base address of every memory-resident variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddressMap {
    pub base: BTreeMap<String, u64>,
    pub start: u64,
    pub total_bytes: u64,
}

impl AddressMap {
    pub fn addr(&self, name: &str) -> Option<u64> {
        self.base.get(name).copied()
    }

    /// Variable and offset owning `addr`, if any.
    pub fn owner<'a>(&self, p: &'a Program, addr: u64) -> Option<(&'a VarDecl, u64)> {
        p.decls.iter().find_map(|d| {
            let b = self.addr(&d.name)?;
            (addr >= b && addr < b + d.size() as u64).then(|| (d, addr - b))
        })
    }
}

/// Sequential allocation in declaration order starting at `start`.
pub fn layout_memory(p: &Program, start: u64) -> AddressMap {
    let mut base = BTreeMap::new();
    let mut next = start;
    for d in p.decls.iter().filter(|d| !d.is_register()) {
        base.insert(d.name.clone(), next);
        next += d.size() as u64;
    }
    AddressMap {
        base,
        start,
        total_bytes: next - start,
    }
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(u64),
    Sym(&'static str),
}

const SYMBOLS: &[&str] = &[
    "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+", "-", "*", "&", "|", "^", "<", ">", "!",
    "~", "(", ")", "[", "]", "=", "?", ":",
];

fn lex(line_no: usize, text: &str) -> Result<Vec<(usize, Tok)>, IrError> {
    let bytes = text.as_bytes();
    let mut i = 0;
    let mut out = Vec::new();
    'outer: while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '#' || text[i..].starts_with("//") {
            break;
        }
        let col = i + 1;
        if c.is_ascii_digit() {
            let start = i;
            let hex = text[i..].starts_with("0x");
            if hex {
                i += 2;
            }
            while i < bytes.len() && (bytes[i] as char).is_ascii_alphanumeric() {
                i += 1;
            }
            let s = &text[start..i];
            let v = if hex {
                u64::from_str_radix(&s[2..], 16)
            } else {
                s.parse::<u64>()
            }
            .map_err(|_| parse_err(line_no, col, format!("bad integer `{s}`")))?;
            out.push((col, Tok::Int(v)));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' || c == '.' {
            let start = i;
            while i < bytes.len() {
                let d = bytes[i] as char;
                if d.is_ascii_alphanumeric() || d == '_' || d == '.' {
                    i += 1;
                } else {
                    break;
                }
            }
            out.push((col, Tok::Ident(text[start..i].to_string())));
            continue;
        }
        for s in SYMBOLS {
            if text[i..].starts_with(s) {
                out.push((col, Tok::Sym(s)));
                i += s.len();
                continue 'outer;
            }
        }
        return Err(parse_err(line_no, col, format!("unexpected character `{c}`")));
    }
    Ok(out)
}

struct Cursor<'a> {
    line: usize,
    toks: &'a [(usize, Tok)],
    pos: usize,
    end_col: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map(|(c, _)| *c).unwrap_or(self.end_col)
    }

    fn err(&self, msg: impl Into<String>) -> IrError {
        parse_err(self.line, self.col(), msg)
    }


    fn eat(&mut self, s: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Sym(x)) if *x == s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, s: &str) -> Result<(), IrError> {
        if self.eat(s) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{s}`")))
        }
    }

    fn keyword(&mut self, k: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Ident(x)) if x == k) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<String, IrError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.err("expected identifier")),
        }
    }

    fn int(&mut self) -> Result<u64, IrError> {
        match self.peek() {
            Some(Tok::Int(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(v)
            }
            _ => Err(self.err("expected integer")),
        }
    }

    fn done(&self) -> Result<(), IrError> {
        if self.pos < self.toks.len() {
            Err(self.err("unexpected trailing tokens"))
        } else {
            Ok(())
        }
    }

    // Precedence climbing: || < && < relational < | < ^ < & < shifts < +- < * < unary.
    fn expr(&mut self) -> Result<Expr, IrError> {
        self.logic_or()
    }

    fn logic_or(&mut self) -> Result<Expr, IrError> {
        let mut lhs = self.logic_and()?;
        while self.eat("||") || self.keyword("or") {
            let rhs = self.logic_and()?;
            lhs = Expr::LogicOr(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn logic_and(&mut self) -> Result<Expr, IrError> {
        let mut lhs = self.relational()?;
        while self.eat("&&") || self.keyword("and") {
            let rhs = self.relational()?;
            lhs = Expr::LogicAnd(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn relational(&mut self) -> Result<Expr, IrError> {
        let lhs = self.arith(0)?;
        let op = match self.peek() {
            Some(Tok::Sym("==")) => RelOp::Eq,
            Some(Tok::Sym("!=")) => RelOp::Ne,
            Some(Tok::Sym("<")) => RelOp::Lt,
            Some(Tok::Sym("<=")) => RelOp::Le,
            Some(Tok::Sym(">")) => RelOp::Gt,
            Some(Tok::Sym(">=")) => RelOp::Ge,
            _ => return Ok(lhs),
        };
        self.pos += 1;
        let rhs = self.arith(0)?;
        Ok(Expr::Rel(op, Box::new(lhs), Box::new(rhs)))
    }

    fn arith(&mut self, level: usize) -> Result<Expr, IrError> {
        const LEVELS: &[&[(&str, ArithOp)]] = &[
            &[("|", ArithOp::Or)],
            &[("^", ArithOp::Xor)],
            &[("&", ArithOp::And)],
            &[("<<", ArithOp::Shl), (">>", ArithOp::Shr)],
            &[("+", ArithOp::Add), ("-", ArithOp::Sub)],
            &[("*", ArithOp::Mul)],
        ];
        if level == LEVELS.len() {
            return self.unary();
        }
        let mut lhs = self.arith(level + 1)?;
        'again: loop {
            for (s, op) in LEVELS[level] {
                if self.eat(s) {
                    let rhs = self.arith(level + 1)?;
                    lhs = Expr::Arith(*op, Box::new(lhs), Box::new(rhs));
                    continue 'again;
                }
            }
            return Ok(lhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, IrError> {
        if self.eat("!") || self.keyword("not") {
            return Ok(Expr::LogicNot(Box::new(self.unary()?)));
        }
        if self.eat("~") {
            return Ok(Expr::BitNot(Box::new(self.unary()?)));
        }
        if self.eat("(") {
            let e = self.expr()?;
            self.expect(")")?;
            return Ok(e);
        }
        match self.peek() {
            Some(Tok::Int(_)) => {
                let col = self.col();
                let v = self.int()?;
                if v > 255 {
                    return Err(parse_err(self.line, col, format!("literal {v} exceeds u8")));
                }
                Ok(Expr::Lit(v as u8))
            }
            Some(Tok::Ident(_)) => Ok(Expr::Var(self.ident()?)),
            _ => Err(self.err("expected expression")),
        }
    }

    /// `base[idx]` or bare scalar `base` (index 0).
    fn place(&mut self) -> Result<(String, Expr), IrError> {
        let base = self.ident()?;
        if self.eat("[") {
            let idx = self.expr()?;
            self.expect("]")?;
            Ok((base, idx))
        } else {
            Ok((base, Expr::Lit(0)))
        }
    }
}

enum RawTarget {
    Label(String, usize, usize),
}

enum RawInst {
    Assign(String, Expr),
    Load(String, String, Expr),
    Store(String, Expr, Expr),
    Branch(Expr, RawTarget, RawTarget),
    Jump(RawTarget),
    Halt,
}

const KEYWORDS: &[&str] = &[
    "var", "secret", "init", "program", "assign", "load", "store", "br", "jmp", "halt", "reg",
    "and", "or", "not",
];

pub fn parse_program(text: &str) -> Result<Program, IrError> {
    let mut name = String::from("main");
    let mut decls: Vec<VarDecl> = Vec::new();
    let mut sensitive = BTreeSet::new();
    let mut init_lines: Vec<(usize, String, u64)> = Vec::new();
    let mut secret_lines: Vec<(usize, String)> = Vec::new();
    let mut raw: Vec<(usize, Option<String>, RawInst)> = Vec::new();
    let mut labels: HashMap<String, usize> = HashMap::new();
    let mut pending: Vec<String> = Vec::new();

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let toks = lex(line_no, line)?;
        if toks.is_empty() {
            continue;
        }
        let mut c = Cursor {
            line: line_no,
            toks: &toks,
            pos: 0,
            end_col: line.len() + 1,
        };
        if c.keyword("program") {
            name = c.ident()?;
            c.done()?;
            continue;
        }
        if c.keyword("var") {
            let n = c.ident()?;
            c.expect(":")?;
            let reg = c.keyword("reg");
            let ty_col = c.col();
            let ty = c.ident()?;
            let arr = if c.eat("[") {
                let len = c.int()?;
                c.expect("]")?;
                Some(len)
            } else {
                None
            };
            c.done()?;
            if ty != "u8" {
                return Err(invalid(
                    line_no,
                    format!("unsupported element type `{ty}` (col {ty_col}); only u8 is allowed"),
                ));
            }
            let kind = match (reg, arr) {
                (true, Some(_)) => return Err(invalid(line_no, "register arrays are not allowed")),
                (true, None) => VarKind::Register,
                (false, Some(0)) => return Err(invalid(line_no, "array length must be at least 1")),
                (false, Some(n)) => VarKind::Array(n as usize),
                (false, None) => VarKind::Scalar,
            };
            if KEYWORDS.contains(&n.as_str()) {
                return Err(invalid(line_no, format!("`{n}` is a reserved word")));
            }
            if decls.iter().any(|d| d.name == n) {
                return Err(invalid(line_no, format!("duplicate declaration of `{n}`")));
            }
            decls.push(VarDecl {
                name: n,
                kind,
                line: line_no,
            });
            continue;
        }
        if c.keyword("secret") {
            let n = c.ident()?;
            c.done()?;
            secret_lines.push((line_no, n));
            continue;
        }
        if c.keyword("init") {
            let n = c.ident()?;
            c.expect("=")?;
            let v = c.int()?;
            c.done()?;
            init_lines.push((line_no, n, v));
            continue;
        }
        // Optional `label:` prefix; a line may carry only a label.
        if let (Some(Tok::Ident(l)), Some(Tok::Sym(":"))) = (c.toks.first().map(|t| &t.1), c.toks.get(1).map(|t| &t.1)) {
            if !KEYWORDS.contains(&l.as_str()) {
                pending.push(l.clone());
                c.pos = 2;
            }
        }
        if c.pos == c.toks.len() {
            continue;
        }
        let target = |c: &mut Cursor| -> Result<RawTarget, IrError> {
            let col = c.col();
            Ok(RawTarget::Label(c.ident()?, line_no, col))
        };
        let inst = if c.keyword("assign") {
            let dst = c.ident()?;
            c.expect("=")?;
            RawInst::Assign(dst, c.expr()?)
        } else if c.keyword("load") {
            let dst = c.ident()?;
            c.expect("=")?;
            let (base, idx) = c.place()?;
            RawInst::Load(dst, base, idx)
        } else if c.keyword("store") {
            let (base, idx) = c.place()?;
            c.expect("=")?;
            RawInst::Store(base, idx, c.expr()?)
        } else if c.keyword("br") {
            let cond = c.expr()?;
            c.expect("?")?;
            let t = target(&mut c)?;
            c.expect(":")?;
            let e = target(&mut c)?;
            RawInst::Branch(cond, t, e)
        } else if c.keyword("jmp") {
            RawInst::Jump(target(&mut c)?)
        } else if c.keyword("halt") {
            RawInst::Halt
        } else {
            return Err(c.err("expected instruction"));
        };
        c.done()?;
        let idx = raw.len();
        let mut label = None;
        for l in pending.drain(..) {
            if labels.insert(l.clone(), idx).is_some() {
                return Err(invalid(line_no, format!("duplicate label `{l}`")));
            }
            label.get_or_insert(l);
        }
        raw.push((line_no, label, inst));
    }

    let resolve = |t: &RawTarget| -> Result<usize, IrError> {
        let RawTarget::Label(l, line, col) = t;
        labels
            .get(l)
            .copied()
            .filter(|&i| i < raw.len())
            .ok_or_else(|| invalid(*line, format!("unknown branch target `{l}` (col {col})")))
    };
    let mut insts = Vec::with_capacity(raw.len());
    for (line, label, r) in &raw {
        let kind = match r {
            RawInst::Assign(d, e) => InstKind::Assign {
                dst: d.clone(),
                value: e.clone(),
            },
            RawInst::Load(d, b, i) => InstKind::Load {
                dst: d.clone(),
                base: b.clone(),
                index: i.clone(),
            },
            RawInst::Store(b, i, v) => InstKind::Store {
                base: b.clone(),
                index: i.clone(),
                value: v.clone(),
            },
            RawInst::Branch(c, t, e) => InstKind::Branch {
                cond: c.clone(),
                then_target: resolve(t)?,
                else_target: resolve(e)?,
            },
            RawInst::Jump(t) => InstKind::Jump(resolve(t)?),
            RawInst::Halt => InstKind::Halt,
        };
        insts.push(Instruction {
            kind,
            location: *line,
            label: label.clone(),
        });
    }

    let mut public_init = BTreeMap::new();
    for (line, n) in &secret_lines {
        if !decls.iter().any(|d| &d.name == n) {
            return Err(invalid(*line, format!("secret `{n}` is not declared")));
        }
        sensitive.insert(n.clone());
    }
    for (line, n, v) in init_lines {
        if !decls.iter().any(|d| d.name == n) {
            return Err(invalid(line, format!("init of undeclared `{n}`")));
        }
        if sensitive.contains(&n) {
            return Err(invalid(line, format!("`{n}` is secret and cannot be initialised")));
        }
        if v > 255 {
            return Err(invalid(line, format!("init value {v} exceeds u8")));
        }
        public_init.insert(n, v as u8);
    }

    let p = Program {
        name,
        decls,
        insts,
        sensitive,
        public_init,
    };
    validate(&p)?;
    Ok(p)
}

/// Checks declaration, typing and target invariants.
pub fn validate(p: &Program) -> Result<(), IrError> {
    let decl = |line: usize, n: &str| -> Result<&VarDecl, IrError> {
        p.decl(n)
            .ok_or_else(|| invalid(line, format!("undeclared variable `{n}`")))
    };
    let reg = |line: usize, n: &str| -> Result<(), IrError> {
        if !decl(line, n)?.is_register() {
            return Err(invalid(
                line,
                format!("`{n}` is a memory variable; load it into a register first"),
            ));
        }
        Ok(())
    };
    let byte_expr = |line: usize, e: &Expr| -> Result<(), IrError> {
        for v in e.vars() {
            reg(line, v)?;
        }
        if e.ty(line)? != Ty::Byte {
            return Err(invalid(line, format!("`{e}` must be a byte expression")));
        }
        Ok(())
    };
    let mem = |line: usize, n: &str| -> Result<(), IrError> {
        if decl(line, n)?.is_register() {
            return Err(invalid(line, format!("`{n}` is a register and has no address")));
        }
        Ok(())
    };
    let n = p.insts.len();
    for inst in &p.insts {
        let line = inst.location;
        match &inst.kind {
            InstKind::Assign { dst, value } => {
                reg(line, dst)?;
                byte_expr(line, value)?;
            }
            InstKind::Load { dst, base, index } => {
                reg(line, dst)?;
                mem(line, base)?;
                byte_expr(line, index)?;
            }
            InstKind::Store { base, index, value } => {
                mem(line, base)?;
                byte_expr(line, index)?;
                byte_expr(line, value)?;
            }
            InstKind::Branch {
                cond,
                then_target,
                else_target,
            } => {
                for v in cond.vars() {
                    reg(line, v)?;
                }
                if cond.ty(line)? != Ty::Bool {
                    return Err(invalid(line, format!("branch condition `{cond}` is not boolean")));
                }
                if *then_target >= n || *else_target >= n {
                    return Err(invalid(line, "branch target out of range"));
                }
            }
            InstKind::Jump(t) => {
                if *t >= n {
                    return Err(invalid(line, "jump target out of range"));
                }
            }
            InstKind::Halt => {}
        }
    }
    for s in &p.sensitive {
        decl(0, s)?;
    }
    Ok(())
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "program {}", self.name)?;
        for d in &self.decls {
            match d.kind {
                VarKind::Scalar => writeln!(f, "var {} : u8", d.name)?,
                VarKind::Array(n) => writeln!(f, "var {} : u8[{n}]", d.name)?,
                VarKind::Register => writeln!(f, "var {} : reg u8", d.name)?,
            }
        }
        for s in &self.sensitive {
            writeln!(f, "secret {s}")?;
        }
        for (k, v) in &self.public_init {
            writeln!(f, "init {k} = {v}")?;
        }
        let label = |i: usize| -> String {
            self.insts[i]
                .label
                .clone()
                .unwrap_or_else(|| format!("L{i}"))
        };
        let targets: BTreeSet<usize> = self
            .insts
            .iter()
            .flat_map(|i| match &i.kind {
                InstKind::Branch {
                    then_target,
                    else_target,
                    ..
                } => vec![*then_target, *else_target],
                InstKind::Jump(t) => vec![*t],
                _ => vec![],
            })
            .collect();
        for (i, inst) in self.insts.iter().enumerate() {
            if inst.label.is_some() || targets.contains(&i) {
                write!(f, "{}: ", label(i))?;
            }
            match &inst.kind {
                InstKind::Assign { dst, value } => writeln!(f, "assign {dst} = {value}")?,
                InstKind::Load { dst, base, index } => writeln!(f, "load {dst} = {base}[{index}]")?,
                InstKind::Store { base, index, value } => {
                    writeln!(f, "store {base}[{index}] = {value}")?
                }
                InstKind::Branch {
                    cond,
                    then_target,
                    else_target,
                } => writeln!(f, "br {cond} ? {} : {}", label(*then_target), label(*else_target))?,
                InstKind::Jump(t) => writeln!(f, "jmp {}", label(*t))?,
                InstKind::Halt => writeln!(f, "halt")?,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MOTIVATING: &str = include_str!("../corpus/motivating.ir");

    #[test]
    fn parses_motivating_example() {
        let p = parse_program(MOTIVATING).unwrap();
        let memory: Vec<_> = p.decls.iter().filter(|d| !d.is_register()).collect();
        assert_eq!(memory.len(), 4);
        let branches = p
            .insts
            .iter()
            .filter(|i| matches!(i.kind, InstKind::Branch { .. }))
            .count();
        // while-loop head plus the if/else
        assert_eq!(branches, 2);
        assert!(p.sensitive.contains("x"));
    }

    #[test]
    fn layout_is_sequential_in_declaration_order() {
        let p = parse_program(MOTIVATING).unwrap();
        let m = layout_memory(&p, 0);
        assert_eq!(m.addr("S"), Some(0));
        assert_eq!(m.addr("x"), Some(254));
        assert_eq!(m.addr("v1"), Some(255));
        assert_eq!(m.addr("v2"), Some(256));
        assert_eq!(m.addr("i"), None);
        assert_eq!(m.total_bytes, 257);
        let again = layout_memory(&parse_program(MOTIVATING).unwrap(), 0);
        assert_eq!(m, again);
    }

    #[test]
    fn single_scalar_layout() {
        let p = parse_program("var a : u8\nhalt").unwrap();
        let m = layout_memory(&p, 0);
        assert_eq!(m.addr("a"), Some(0));
        assert_eq!(m.total_bytes, 1);
        let m = layout_memory(&p, 4096);
        assert_eq!(m.addr("a"), Some(4096));
    }

    #[test]
    fn empty_instruction_list() {
        let p = parse_program("var a : u8\n").unwrap();
        assert!(p.insts.is_empty());
        assert_eq!(p.decls.len(), 1);
    }

    #[test]
    fn undeclared_variable_is_rejected() {
        let err = parse_program("var t : reg u8\nassign t = y + 1\n").unwrap_err();
        assert!(matches!(err, IrError::Validation { line: 2, .. }), "{err}");
    }

    #[test]
    fn non_byte_arrays_are_rejected() {
        let err = parse_program("var a : u16[4]\n").unwrap_err();
        assert!(matches!(err, IrError::Validation { .. }));
    }

    #[test]
    fn bad_target_and_parse_errors() {
        let err = parse_program("var t : reg u8\njmp nowhere\n").unwrap_err();
        assert!(matches!(err, IrError::Validation { .. }));
        let err = parse_program("var t : reg u8\nassign t = (1 + \n").unwrap_err();
        assert!(matches!(err, IrError::Parse { line: 2, .. }), "{err}");
        let err = parse_program("var t : reg u8\nassign t = 1 $ 2\n").unwrap_err();
        assert!(matches!(err, IrError::Parse { line: 2, column: 14, .. }), "{err}");
    }

    #[test]
    fn memory_variables_need_explicit_loads() {
        let err = parse_program("var x : u8\nvar t : reg u8\nbr x > 1 ? a : a\na: halt\n").unwrap_err();
        assert!(matches!(err, IrError::Validation { .. }));
        let err = parse_program("var t : reg u8\nbr t + 1 ? a : a\na: halt\n").unwrap_err();
        assert!(matches!(err, IrError::Validation { .. }));
    }

    #[test]
    fn precedence() {
        let p = parse_program("var t : reg u8\nassign t = 1 + 2 * 3 & 7\n").unwrap();
        match &p.insts[0].kind {
            InstKind::Assign { value, .. } => assert_eq!(value.to_string(), "((1 + (2 * 3)) & 7)"),
            _ => unreachable!(),
        }
    }

    #[test]
    fn pretty_print_reparses() {
        let p = parse_program(MOTIVATING).unwrap();
        let q = parse_program(&p.to_string()).unwrap();
        assert!(p.same_structure(&q));
    }
}

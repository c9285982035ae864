//! Seeded random programs for cross-checking.
//!
//! Programs read one secret byte into a register, then run a few blocks of
//! loads, stores and assignments separated by at most three if/else
//! diamonds. There are no loops, and the number of memory instructions is
//! capped so that a path trace, speculative windows included, stays within
//! 64 events.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ir::{parse_program, Program};

/// Most memory instructions in a generated program.
pub const MAX_ACCESSES: usize = 16;
pub const MAX_BRANCHES: usize = 3;

const REGS: [&str; 4] = ["r0", "r1", "r2", "r3"];
const RELS: [&str; 6] = ["==", "!=", "<", "<=", ">", ">="];
const OPS: [&str; 6] = ["+", "-", "&", "|", "^", "*"];

struct Gen {
    rng: ChaCha8Rng,
    arrays: Vec<(&'static str, usize)>,
    lines: Vec<String>,
    labels: usize,
    accesses: usize,
    branches: usize,
}

impl Gen {
    fn reg(&mut self) -> &'static str {
        REGS.choose(&mut self.rng).copied().unwrap()
    }

    fn label(&mut self, stem: &str) -> String {
        self.labels += 1;
        format!("{stem}{}", self.labels)
    }

    fn index(&mut self, len: usize) -> String {
        let r = self.reg();
        match self.rng.gen_range(0..10) {
            0..=2 => self.rng.gen_range(0..len).to_string(),
            3..=6 if len.is_power_of_two() => format!("({r} & {})", len - 1),
            3..=6 => {
                let c: u8 = self.rng.gen();
                format!("(({r} + {c}) & {})", len.next_power_of_two() / 2 - 1)
            }
            // may leave the array; the bounds clause prunes such inputs
            _ => r.to_string(),
        }
    }

    fn value(&mut self) -> String {
        let r = self.reg();
        match self.rng.gen_range(0..4) {
            0 => self.rng.gen::<u8>().to_string(),
            1 => r.to_string(),
            _ => {
                let op = OPS.choose(&mut self.rng).unwrap();
                let c: u8 = self.rng.gen_range(1..8);
                format!("({r} {op} {c})")
            }
        }
    }

    fn cond(&mut self) -> String {
        let r = self.reg();
        let rel = RELS.choose(&mut self.rng).unwrap();
        if self.rng.gen_bool(0.25) {
            let s = self.reg();
            format!("{r} {rel} {s}")
        } else {
            let c: u8 = self.rng.gen();
            format!("{r} {rel} {c}")
        }
    }

    fn place(&mut self) -> String {
        let (name, len) = *self.arrays.choose(&mut self.rng).unwrap();
        if len == 1 {
            return name.to_string();
        }
        let i = self.index(len);
        format!("{name}[{i}]")
    }

    fn inst(&mut self) -> String {
        if self.accesses >= MAX_ACCESSES {
            let r = self.reg();
            let v = self.value();
            return format!("assign {r} = {v}");
        }
        match self.rng.gen_range(0..10) {
            0..=4 => {
                self.accesses += 1;
                let r = self.reg();
                let place = self.place();
                format!("load {r} = {place}")
            }
            5..=7 => {
                self.accesses += 1;
                let place = self.place();
                let v = self.value();
                format!("store {place} = {v}")
            }
            _ => {
                let r = self.reg();
                let v = self.value();
                format!("assign {r} = {v}")
            }
        }
    }

    fn block(&mut self, label: Option<String>, n: usize) {
        let mut label = label;
        for _ in 0..n {
            let i = self.inst();
            match label.take() {
                Some(l) => self.lines.push(format!("{l}: {i}")),
                None => self.lines.push(format!("       {i}")),
            }
        }
        if let Some(l) = label {
            let r = self.reg();
            self.lines.push(format!("{l}: assign {r} = {r}"));
        }
    }

    /// A diamond; its arms may nest another one while branches remain.
    fn diamond(&mut self, label: Option<String>, depth: usize) -> Option<String> {
        self.branches += 1;
        let (t, e, j) = (self.label("t"), self.label("e"), self.label("j"));
        let c = self.cond();
        let br = format!("br {c} ? {t} : {e}");
        match label {
            Some(l) => self.lines.push(format!("{l}: {br}")),
            None => self.lines.push(format!("       {br}")),
        }
        for arm in [t, e] {
            if depth < 1 && self.branches < MAX_BRANCHES && self.rng.gen_bool(0.3) {
                let n = self.rng.gen_range(0..3);
                if n == 0 {
                    let pending = self.diamond(Some(arm), depth + 1);
                    self.block(pending, 1);
                } else {
                    self.block(Some(arm), n);
                    let pending = self.diamond(None, depth + 1);
                    self.block(pending, 1);
                }
            } else {
                let n = self.rng.gen_range(0..4);
                self.block(Some(arm), n.max(1));
            }
            self.lines.push(format!("       jmp {j}"));
        }
        Some(j)
    }
}

/// Source text of the program for `seed`.
pub fn generate_source(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = [4usize, 8, 16, 48, 64, 100, 130];
    let a = *sizes.choose(&mut rng).unwrap();
    let b = *sizes.choose(&mut rng).unwrap();
    let mut g = Gen {
        rng,
        arrays: vec![("A", a), ("B", b), ("p", 1)],
        lines: Vec::new(),
        labels: 0,
        accesses: 1,
        branches: 0,
    };
    let mut head = vec![
        format!("program gen{seed}"),
        format!("var A : u8[{a}]"),
        "var x : u8".into(),
        format!("var B : u8[{b}]"),
        "var p : u8".into(),
    ];
    for r in REGS {
        head.push(format!("var {r} : reg u8"));
    }
    head.push("secret x".into());
    for name in ["A", "B", "p"] {
        if g.rng.gen_bool(0.5) {
            head.push(format!("init {name} = {}", g.rng.gen::<u8>()));
        }
    }
    g.lines.push("       load r0 = x".into());
    let n = g.rng.gen_range(0..4);
    g.block(None, n);
    let mut pending = None;
    let diamonds = g.rng.gen_range(1..=MAX_BRANCHES);
    while g.branches < diamonds {
        pending = g.diamond(pending, 0);
        let n = g.rng.gen_range(0..4);
        if n > 0 {
            g.block(pending.take(), n);
        }
    }
    match pending {
        Some(l) => g.lines.push(format!("{l}: halt")),
        None => g.lines.push("       halt".into()),
    }
    head.extend(g.lines);
    head.join("\n") + "\n"
}

/// The program for `seed`.
pub fn generate(seed: u64) -> Program {
    parse_program(&generate_source(seed)).expect("generated programs parse")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::InstKind;

    #[test]
    fn generation_is_deterministic_and_bounded() {
        for seed in 0..300 {
            let s = generate_source(seed);
            assert_eq!(s, generate_source(seed));
            let p = generate(seed);
            let accesses = p
                .insts
                .iter()
                .filter(|i| matches!(i.kind, InstKind::Load { .. } | InstKind::Store { .. }))
                .count();
            let branches = p.insts.iter().filter(|i| matches!(i.kind, InstKind::Branch { .. })).count();
            assert!(accesses <= MAX_ACCESSES, "{s}");
            assert!((1..=MAX_BRANCHES).contains(&branches), "{s}");
            assert_eq!(p.secret_bytes(), vec!["x".to_string()]);
        }
    }
}

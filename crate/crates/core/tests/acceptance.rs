//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use speccache::analysis::{Behavior, LeakWitness};
use speccache::cache::{replay, CacheConfig, CacheSim, Verdict};
use speccache::config::{AnalysisConfig, Mode, SpeculationBudget};
use speccache::corpus::{programs, read_sidecar};
use speccache::engine::explore;
use speccache::expr::{Builder, Expr, Symbol};
use speccache::formula::{build_eta_prime, build_mu, TraceView};
use speccache::gen::generate;
use speccache::ir::{parse_program, InstKind, Program};
use speccache::oracle::{confirm_witnesses, crosscheck};
use speccache::solver::{eval_bool, Model};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

/// Witnesses collected by the other criteria, replayed by criterion 4.
type Emitted = Vec<(Program, AnalysisConfig, Vec<LeakWitness>)>;

fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("corpus")
}

fn cfg(preset: &str, mode: Mode) -> AnalysisConfig {
    AnalysisConfig::new(CacheConfig::preset(preset).unwrap(), mode)
}

fn motivating(emitted: &mut Emitted) -> Outcome {
    let text = std::fs::read_to_string(corpus_dir().join("motivating.ir")).unwrap();
    let prog = parse_program(&text).unwrap();
    let last_load = prog
        .insts
        .iter()
        .rfind(|i| matches!(i.kind, InstKind::Load { .. }))
        .unwrap()
        .location;
    let mut problems = Vec::new();
    let mut times = Vec::new();
    for mode in [Mode::Base, Mode::Opt] {
        let c = cfg("M0", mode);
        let start = Instant::now();
        let r = explore(&prog, &c).unwrap();
        let t = start.elapsed();
        times.push(format!("{mode} {:.2}s", t.as_secs_f64()));
        if t >= Duration::from_secs(5) {
            problems.push(format!("{mode} took {t:?}"));
        }
        if r.leak_locations() != BTreeSet::from([last_load]) {
            problems.push(format!("{mode} leaks at {:?}", r.leak_locations()));
        }
        let good = r.witnesses.iter().any(|w| {
            let xs: Vec<u64> = w.inputs.iter().map(|m| m["x"]).collect();
            w.behavior == Behavior::Divergent && xs.contains(&0) && xs.iter().any(|&x| x != 0)
        });
        if !good {
            problems.push(format!("{mode} lacks a divergent x=0 / x'!=0 witness"));
        }
        emitted.push((prog.clone(), c.clone(), r.witnesses.clone()));
        let off = explore(&prog, &c.clone().with_budget(SpeculationBudget::disabled())).unwrap();
        if !off.witnesses.is_empty() {
            problems.push(format!("{mode} with speculation off leaks at {:?}", off.leak_locations()));
        }
    }
    let detail = format!("line {last_load}, {}", times.join(", "));
    Outcome::new(problems.is_empty(), if problems.is_empty() { detail } else { problems.join("; ") })
}

/// View whose addresses are free symbols, with the model assigning `trace`.
fn symbolic_view(b: &mut Builder, trace: &[(u64, bool)], target: usize) -> (TraceView, Model) {
    let mut model = Model::new();
    let mut addrs: Vec<Expr> = Vec::with_capacity(trace.len());
    for (k, &(a, _)) in trace.iter().enumerate() {
        let s = Symbol::new(k as u32, &format!("a{k}"));
        model.insert(s.clone(), a);
        let x = b.sym(s);
        addrs.push(b.cast(64, x));
    }
    let orgs = trace.iter().map(|&(_, o)| o).collect();
    (TraceView::new(addrs, orgs, target), model)
}

fn worked_trace() -> Outcome {
    // m1 m2 m1 m3 m3 m4 m5 m4 m1 over one set of one-byte lines
    let blocks = [1u64, 2, 1, 3, 3, 4, 5, 4, 1];
    let trace: Vec<(u64, bool)> = blocks.iter().map(|&m| (m, false)).collect();
    let mut seen = Vec::new();
    let mut pass = true;
    for (assoc, expect) in [(4u64, Verdict::Hit), (3, Verdict::Miss)] {
        let c = CacheConfig::new(assoc, 1, assoc).unwrap();
        let sim = replay(&trace, c, true)[8];
        let mut b = Builder::plain();
        let mut model = Model::new();
        let addrs: Vec<Expr> = blocks
            .iter()
            .map(|&m| {
                let s = Symbol::new(m as u32, &format!("m{m}"));
                model.insert(s.clone(), m);
                let x = b.sym(s);
                b.cast(64, x)
            })
            .collect();
        let view = TraceView::new(addrs, vec![false; 9], 8);
        let mu = build_mu(&mut b, &view, &c);
        let formula = eval_bool(&mu, &model).map(Verdict::from_hit);
        pass &= sim == Some(expect) && formula == Ok(expect);
        seen.push(format!("assoc {assoc}: replay {sim:?}, mu {formula:?}"));
    }
    Outcome::new(pass, seen.join("; "))
}

fn oracle_equivalence(emitted: &mut Emitted) -> Outcome {
    let start = Instant::now();
    let mut runs = 0;
    let mut discrepancies = Vec::new();
    for seed in 0..100 {
        let prog = generate(seed);
        for preset in ["M0", "C1S"] {
            let c = cfg(preset, Mode::Base);
            let x = crosscheck(&prog, &c).unwrap();
            runs += 1;
            for d in x.discrepancies {
                discrepancies.push(format!("seed {seed} {preset}: {}", d.reproducer));
            }
            let r = explore(&prog, &c).unwrap();
            emitted.push((prog.clone(), c, r.witnesses));
        }
    }
    let t = start.elapsed();
    let pass = discrepancies.is_empty() && t < Duration::from_secs(600);
    let detail = if discrepancies.is_empty() {
        format!("{runs} crosschecks, 0 discrepancies, {:.1}s", t.as_secs_f64())
    } else {
        discrepancies.join("; ")
    };
    Outcome::new(pass, detail)
}

fn witness_soundness(emitted: &Emitted) -> Outcome {
    let mut total = 0;
    let mut failed = Vec::new();
    for (prog, c, ws) in emitted {
        if ws.is_empty() {
            continue;
        }
        total += ws.len();
        let ok = confirm_witnesses(prog, c, ws).unwrap();
        for (w, ok) in ws.iter().zip(ok) {
            if !ok {
                failed.push(format!("{} {} {} line {}", prog.name, c.cache, c.mode, w.location));
            }
        }
    }
    let pass = failed.is_empty() && total > 0;
    let detail = if failed.is_empty() {
        format!("{total} witnesses replayed")
    } else {
        format!("{} of {total} fail: {}", failed.len(), failed.join("; "))
    };
    Outcome::new(pass, detail)
}

fn formula_ground_truth() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let per_assoc = 2_500;
    let mut mismatches = Vec::new();
    let mut n = 0;
    for assoc in [1u64, 2, 4, 8] {
        for k in 0..per_assoc {
            let sets = [1u64, 2, 8][rng.gen_range(0..3)];
            // two-byte lines keep every address within one symbol byte
            let c = CacheConfig::new(assoc * sets * 2, 2, assoc).unwrap();
            let span = 2 * sets * (assoc + 2);
            let len = rng.gen_range(1..=12);
            let mut trace: Vec<(u64, bool)> =
                (0..len).map(|_| (rng.gen_range(0..span), rng.gen_bool(0.3))).collect();
            let target = len - 1;
            trace[target].1 = false;
            let spec = replay(&trace, c, true)[target];
            let nonspec = replay(&trace, c, false)[target];
            let mut b = if k % 2 == 0 { Builder::plain() } else { Builder::reducing() };
            let (view, model) = symbolic_view(&mut b, &trace, target);
            let mu = build_mu(&mut b, &view, &c);
            let etap = build_eta_prime(&mut b, &view, &c);
            let mu_v = eval_bool(&mu, &model).ok().map(Verdict::from_hit);
            let etap_v = eval_bool(&etap, &model).ok().map(Verdict::from_hit);
            n += 1;
            if mu_v != spec || etap_v != nonspec {
                mismatches.push(format!("assoc {assoc} trace {trace:?}"));
            }
        }
    }
    let detail = if mismatches.is_empty() {
        format!("{n} traces, assoc 1/2/4/8, sets 1/2/8")
    } else {
        format!("{} mismatches, first {}", mismatches.len(), mismatches[0])
    };
    Outcome::new(mismatches.is_empty() && n >= 10_000, detail)
}

fn optimization_effect(emitted: &mut Emitted) -> Outcome {
    let mut problems = Vec::new();
    let mut lines = Vec::new();
    for preset in ["C1", "M0", "C1S"] {
        let mut strictly = 0;
        let (mut base_total, mut opt_total) = (0u64, 0u64);
        for path in programs(&corpus_dir()).unwrap() {
            let prog = parse_program(&std::fs::read_to_string(&path).unwrap()).unwrap();
            let sidecar = read_sidecar(&path).unwrap();
            let mut nodes = BTreeMap::new();
            let mut leaks = BTreeMap::new();
            for mode in [Mode::Base, Mode::Opt] {
                let c = cfg(preset, mode);
                let r = explore(&prog, &c).unwrap();
                nodes.insert(mode, r.nodes);
                leaks.insert(mode, r.leak_locations());
                let expected = sidecar.as_ref().and_then(|s| s.expected(preset, mode));
                if expected.as_ref() != Some(&r.leak_locations()) {
                    problems.push(format!("{} {preset} {mode}: not confirmed by oracle", prog.name));
                }
                emitted.push((prog.clone(), c, r.witnesses));
            }
            let (b, o) = (nodes[&Mode::Base], nodes[&Mode::Opt]);
            base_total += b;
            opt_total += o;
            if o > b {
                problems.push(format!("{} {preset}: opt {o} > base {b} nodes", prog.name));
            }
            if o < b {
                strictly += 1;
            }
            if leaks[&Mode::Base] != leaks[&Mode::Opt] {
                problems.push(format!("{} {preset}: leak sets differ", prog.name));
            }
        }
        if strictly < 3 {
            problems.push(format!("{preset}: only {strictly} programs shrink"));
        }
        lines.push(format!("{preset} {strictly} smaller, {opt_total}/{base_total} nodes"));
    }
    let detail = if problems.is_empty() { lines.join("; ") } else { problems.join("; ") };
    Outcome::new(problems.is_empty(), detail)
}

fn property_one() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut counterexamples = 0;
    let line = 8;
    let runs = 100_000;
    for _ in 0..runs {
        let assoc = [1u64, 2, 4, 8][rng.gen_range(0..4)];
        let sets = [1u64, 2, 4][rng.gen_range(0..3)];
        let c = CacheConfig::new(assoc * sets * line, line, assoc).unwrap();
        let pool = sets * (assoc + 3);
        let mut sim = CacheSim::new(c);
        for _ in 0..rng.gen_range(0..20) {
            sim.access(rng.gen_range(0..pool) * line);
        }
        let a = rng.gen_range(0..pool) * line;
        sim.access(a);
        let mut fresh = BTreeSet::new();
        for _ in 0..rng.gen_range(1..4 * assoc + 4) {
            let b = rng.gen_range(0..pool) * line;
            if b == a {
                break;
            }
            sim.access(b);
            if c.set_index(b) == c.set_index(a) {
                fresh.insert(c.block(b));
            }
            let survives = sim.contains(a);
            let expected = (fresh.len() as u64) < assoc;
            if survives != expected {
                counterexamples += 1;
                break;
            }
        }
    }
    Outcome::new(
        counterexamples == 0,
        format!("{runs} sequences, {counterexamples} counterexamples"),
    )
}

fn main() -> ExitCode {
    let mut emitted = Emitted::new();
    let results = [
        ("motivating example", motivating(&mut emitted)),
        ("worked trace", worked_trace()),
        ("oracle equivalence", oracle_equivalence(&mut emitted)),
        ("formula vs simulator", formula_ground_truth()),
        ("optimization effect", optimization_effect(&mut emitted)),
        ("property 1 fuzz", property_one()),
    ];
    let soundness = witness_soundness(&emitted);
    let mut ordered: Vec<(usize, &str, &Outcome)> = Vec::new();
    for (n, (name, o)) in [1, 2, 3, 5, 6, 7].into_iter().zip(&results) {
        ordered.push((n, name, o));
    }
    ordered.push((4, "witness soundness", &soundness));
    ordered.sort_by_key(|e| e.0);
    let mut all = true;
    for (n, name, o) in ordered {
        all &= o.pass;
        println!("criterion {n} {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

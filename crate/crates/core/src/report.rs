//! Text and JSON renderings of analysis results.
//!
//! JSON output is deterministic: maps are ordered and wall-clock time is
//! only included on request.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::analysis::{AnalysisReport, Behavior, LeakWitness};
use crate::cache::{CacheConfig, Verdict};
use crate::config::Mode;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CacheJson {
    pub capacity: u64,
    pub line: u64,
    pub assoc: u64,
    pub sets: u64,
}

impl From<&CacheConfig> for CacheJson {
    fn from(c: &CacheConfig) -> Self {
        CacheJson {
            capacity: c.capacity,
            line: c.line_size,
            assoc: c.assoc,
            sets: c.num_sets(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerdictsJson {
    pub speculative: Vec<Verdict>,
    pub nonspeculative: Vec<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WitnessJson {
    pub location: usize,
    pub event: usize,
    pub var: String,
    pub behavior: Behavior,
    pub inputs: Vec<BTreeMap<String, u64>>,
    pub verdicts: VerdictsJson,
}

impl From<&LeakWitness> for WitnessJson {
    fn from(w: &LeakWitness) -> Self {
        WitnessJson {
            location: w.location,
            event: w.seq,
            var: w.var.clone(),
            behavior: w.behavior,
            inputs: w.inputs.clone(),
            verdicts: VerdictsJson {
                speculative: w.speculative.clone(),
                nonspeculative: w.nonspeculative.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SolverJson {
    pub queries: u64,
    pub nodes: u64,
    /// Wall-clock milliseconds; null unless timings were requested.
    pub ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReportJson {
    pub program: String,
    pub cache: CacheJson,
    pub mode: Mode,
    pub paths: u64,
    pub spec_states: u64,
    pub witnesses: Vec<WitnessJson>,
    pub warnings: Vec<String>,
    pub solver: SolverJson,
}

impl ReportJson {
    pub fn new(r: &AnalysisReport, timings: bool) -> Self {
        ReportJson {
            program: r.program.clone(),
            cache: (&r.cache).into(),
            mode: r.mode,
            paths: r.paths,
            spec_states: r.spec_states,
            witnesses: r.witnesses.iter().map(WitnessJson::from).collect(),
            warnings: r.warnings.clone(),
            solver: SolverJson {
                queries: r.queries,
                nodes: r.nodes,
                ms: timings.then_some(r.elapsed.as_millis() as u64),
            },
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report types serialize") + "\n"
}

fn inputs_text(m: &BTreeMap<String, u64>) -> String {
    let parts: Vec<String> = m.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("{{{}}}", parts.join(", "))
}

fn verdict_word(v: Verdict) -> &'static str {
    match v {
        Verdict::Hit => "hit",
        Verdict::Miss => "miss",
    }
}

/// Human-readable summary.
pub fn text(r: &AnalysisReport, timings: bool) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "program {} | cache {} | mode {}", r.program, r.cache, r.mode);
    let _ = writeln!(
        s,
        "paths {} | speculative states {} | solver queries {} | formula nodes {}",
        r.paths, r.spec_states, r.queries, r.nodes
    );
    if timings {
        let _ = writeln!(s, "time {:.3}s", r.elapsed.as_secs_f64());
    }
    for w in &r.witnesses {
        let _ = write!(s, "leak line {} ({}, event {}): {:?}", w.location, w.var, w.seq, w.behavior);
        for (k, m) in w.inputs.iter().enumerate() {
            let _ = write!(
                s,
                "{} {} speculative {} / non-speculative {}",
                if k == 0 { " |" } else { ";" },
                inputs_text(m),
                verdict_word(w.speculative[k]),
                verdict_word(w.nonspeculative[k])
            );
        }
        s.push('\n');
    }
    for w in &r.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    let _ = writeln!(
        s,
        "{} leak(s): {} divergent, {} opposite",
        r.witnesses.len(),
        r.divergent(),
        r.opposite()
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::CacheConfig;
    use crate::config::AnalysisConfig;
    use crate::engine::explore;
    use crate::ir::parse_program;

    #[test]
    fn json_has_stable_schema() {
        let p = parse_program(include_str!("../corpus/motivating.ir")).unwrap();
        let cfg = AnalysisConfig::new(CacheConfig::preset("M0").unwrap(), Mode::Opt);
        let a = to_json(&ReportJson::new(&explore(&p, &cfg).unwrap(), false));
        let b = to_json(&ReportJson::new(&explore(&p, &cfg).unwrap(), false));
        assert_eq!(a, b);
        let v: serde_json::Value = serde_json::from_str(&a).unwrap();
        for key in ["program", "cache", "mode", "paths", "spec_states", "witnesses", "solver"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["cache"]["sets"], 1);
        assert_eq!(v["cache"]["assoc"], 256);
        assert_eq!(v["mode"], "opt");
        assert_eq!(v["witnesses"][0]["behavior"], "divergent");
        assert_eq!(v["witnesses"][0]["inputs"][0]["x"], 0);
        assert!(v["solver"]["ms"].is_null());
    }
}

//! Program directories with oracle-generated expectations.
//!
//! Each `name.ir` may have a `name.expect.json` sidecar listing, per cache
//! preset and mode, the source lines the brute-force oracle flags:
//!
//! ```json
//! {"expectations": {"M0": {"base": [26], "opt": [26]}}}
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{AnalysisConfig, Mode};
use crate::engine::{explore, EngineError};
use crate::ir::parse_program;
use crate::oracle::oracle;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    /// Preset name → mode → flagged lines.
    pub expectations: BTreeMap<String, BTreeMap<Mode, Vec<usize>>>,
}

impl Sidecar {
    pub fn expected(&self, preset: &str, mode: Mode) -> Option<BTreeSet<usize>> {
        self.expectations
            .get(preset)
            .and_then(|m| m.get(&mode))
            .map(|v| v.iter().copied().collect())
    }
}

pub fn sidecar_path(program: &Path) -> PathBuf {
    program.with_extension("expect.json")
}

pub fn read_sidecar(program: &Path) -> io::Result<Option<Sidecar>> {
    let p = sidecar_path(program);
    if !p.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&p)?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", p.display())))
}

/// `.ir` files of `dir`, sorted by name.
pub fn programs(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ir"))
        .collect();
    out.sort();
    Ok(out)
}

/// Oracle expectations for one program under each named configuration.
pub fn build_sidecar(text: &str, configs: &[(String, AnalysisConfig)]) -> Result<Sidecar, String> {
    let prog = parse_program(text).map_err(|e| e.to_string())?;
    let mut s = Sidecar::default();
    for (name, cfg) in configs {
        for mode in [Mode::Base, Mode::Opt] {
            let mut c = cfg.clone();
            c.mode = mode;
            let r = oracle(&prog, &c).map_err(|e| e.to_string())?;
            s.expectations
                .entry(name.clone())
                .or_default()
                .insert(mode, r.locations().into_iter().collect());
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Match,
    Mismatch,
    Unchecked,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Row {
    pub file: String,
    pub program: String,
    pub status: Status,
    pub paths: u64,
    pub divergent: usize,
    pub opposite: usize,
    pub leaks: Vec<usize>,
    pub expected: Option<Vec<usize>>,
    pub queries: u64,
    pub nodes: u64,
    pub ms: Option<u64>,
    pub error: Option<String>,
}

impl Row {
    fn error(file: String, message: String) -> Row {
        Row {
            file,
            program: String::new(),
            status: Status::Error,
            paths: 0,
            divergent: 0,
            opposite: 0,
            leaks: Vec::new(),
            expected: None,
            queries: 0,
            nodes: 0,
            ms: None,
            error: Some(message),
        }
    }
}

/// Analyzes every program of `dir` and checks it against its sidecar entry
/// for `preset`. A soundness failure aborts the run.
pub fn run_corpus(dir: &Path, preset: &str, cfg: &AnalysisConfig, timings: bool) -> Result<Vec<Row>, CorpusError> {
    let mut rows = Vec::new();
    for path in programs(dir)? {
        let file = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let start = Instant::now();
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => {
                rows.push(Row::error(file, e.to_string()));
                continue;
            }
        };
        let prog = match parse_program(&text) {
            Ok(p) => p,
            Err(e) => {
                rows.push(Row::error(file, e.to_string()));
                continue;
            }
        };
        let sidecar = match read_sidecar(&path) {
            Ok(s) => s,
            Err(e) => {
                rows.push(Row::error(file, e.to_string()));
                continue;
            }
        };
        let r = explore(&prog, cfg)?;
        let leaks = r.leak_locations();
        let expected = sidecar.and_then(|s| s.expected(preset, cfg.mode));
        let status = match &expected {
            None => Status::Unchecked,
            Some(e) if *e == leaks => Status::Match,
            Some(_) => Status::Mismatch,
        };
        rows.push(Row {
            file,
            program: prog.name.clone(),
            status,
            paths: r.paths,
            divergent: r.divergent(),
            opposite: r.opposite(),
            leaks: leaks.into_iter().collect(),
            expected: expected.map(|e| e.into_iter().collect()),
            queries: r.queries,
            nodes: r.nodes,
            ms: timings.then(|| start.elapsed().as_millis() as u64),
            error: None,
        });
    }
    Ok(rows)
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

pub fn table(rows: &[Row]) -> String {
    let mut s = format!(
        "{:<28} {:>7} {:>9} {:>6} {:>10}  {}\n",
        "program", "paths", "#.D/O", "ms", "nodes", "status"
    );
    for r in rows {
        let ms = r.ms.map_or("-".into(), |m| m.to_string());
        let status = match r.status {
            Status::Match => "match".to_string(),
            Status::Unchecked => "unchecked".to_string(),
            Status::Mismatch => format!(
                "MISMATCH leaks {:?} expected {:?}",
                r.leaks,
                r.expected.clone().unwrap_or_default()
            ),
            Status::Error => format!("error: {}", r.error.clone().unwrap_or_default()),
        };
        s.push_str(&format!(
            "{:<28} {:>7} {:>9} {:>6} {:>10}  {}\n",
            r.file,
            r.paths,
            format!("{}/{}", r.divergent, r.opposite),
            ms,
            r.nodes,
            status
        ));
    }
    s
}

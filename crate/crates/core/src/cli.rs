//! Command-line front end.
//!
//! Exit codes: 0 analyzed without leaks (or everything matched), 1 leaks
//! found or expectations mismatched, 2 usage or parse error, 3 internal
//! soundness failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::cache::CacheConfig;
use crate::config::{AnalysisConfig, Mode, SpeculationBudget};
use crate::corpus::{self, Status};
use crate::engine::{explore, EngineError};
use crate::gen;
use crate::ir::{parse_program, Program};
use crate::oracle::{crosscheck, Crosscheck, OracleError};
use crate::report::{self, ReportJson};

pub const EXIT_CLEAN: i32 = 0;
pub const EXIT_LEAKS: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SOUNDNESS: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "speccache", version, about = "Cache timing leak detection under branch misprediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Analyze one program.
    Run {
        file: PathBuf,
        #[command(flatten)]
        opts: Opts,
        /// Also enumerate all secrets and compare flagged locations.
        #[arg(long)]
        oracle_check: bool,
    },
    /// Analyze every `.ir` file of a directory and check sidecar expectations.
    Corpus {
        dir: PathBuf,
        #[command(flatten)]
        opts: Opts,
    },
    /// Compare the analysis against brute-force enumeration.
    Crosscheck {
        /// Program to check; omit with --random.
        file: Option<PathBuf>,
        /// Check this many generated programs instead.
        #[arg(long)]
        random: Option<u64>,
        /// First generator seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cache presets to check under.
        #[arg(long, value_delimiter = ',', default_value = "M0,C1S")]
        caches: Vec<String>,
        #[command(flatten)]
        opts: Opts,
    },
    /// Write oracle expectation sidecars for a directory of programs.
    Sidecar {
        dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "M0,C1S")]
        caches: Vec<String>,
        #[command(flatten)]
        opts: Opts,
    },
    /// Print the generated program for a seed.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Args)]
struct Opts {
    /// Cache preset (C1-C4, C1S, M0) or capacity:line:assoc.
    #[arg(long, default_value = "C1")]
    cache: String,
    #[arg(long, default_value_t = Mode::Opt)]
    mode: Mode,
    /// Speculative instructions per window; 0 disables speculation.
    #[arg(long, default_value_t = 32)]
    rob: u32,
    /// Branches a speculative path may pass.
    #[arg(long, default_value_t = 2)]
    nest_depth: u32,
    #[arg(long)]
    no_stop_on_miss: bool,
    /// Report every leaking path, not only the first per location.
    #[arg(long)]
    all_paths: bool,
    #[arg(long, default_value_t = 10_000)]
    max_path_events: usize,
    #[arg(long, default_value_t = 512)]
    revisit_cap: usize,
    /// Seconds per solver query.
    #[arg(long, default_value_t = 30)]
    solver_timeout: u64,
    /// Largest joint symbol width for the enumeration solver.
    #[arg(long, default_value_t = 24)]
    solver_bits: u32,
    /// External SMT-LIB solver command, e.g. "z3 -in".
    #[arg(long)]
    smt: Option<String>,
    #[arg(long, default_value_t = 0)]
    base_address: u64,
    #[arg(long)]
    json: bool,
    /// Include wall-clock times (makes output nondeterministic).
    #[arg(long)]
    timings: bool,
}

impl Opts {
    fn config(&self, cache: CacheConfig) -> AnalysisConfig {
        let mut cfg = AnalysisConfig::new(cache, self.mode).with_budget(SpeculationBudget {
            max_events: self.rob,
            max_branch_depth: self.nest_depth,
            stop_on_miss: !self.no_stop_on_miss,
        });
        cfg.limits.max_path_events = self.max_path_events;
        cfg.limits.branch_revisit_cap = self.revisit_cap;
        cfg.limits.solver_timeout = Duration::from_secs(self.solver_timeout);
        cfg.limits.solver_bits = self.solver_bits;
        cfg.limits.smt_command = self.smt.clone();
        cfg.base_address = self.base_address;
        cfg.all_paths = self.all_paths;
        cfg
    }
}

struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

fn cache_of(name: &str, io: &mut Io<'_>) -> Option<CacheConfig> {
    match name.parse() {
        Ok(c) => Some(c),
        Err(e) => {
            let _ = writeln!(io.err, "error: {e}");
            None
        }
    }
}

fn load(path: &Path, io: &mut Io<'_>) -> Option<Program> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(io.err, "error: {}: {e}", path.display());
            return None;
        }
    };
    match parse_program(&text) {
        Ok(p) => Some(p),
        Err(e) => {
            let _ = writeln!(io.err, "error: {}: {e}", path.display());
            None
        }
    }
}

fn soundness(e: &EngineError, io: &mut Io<'_>) -> i32 {
    let _ = writeln!(io.err, "internal error: {e}");
    EXIT_SOUNDNESS
}

/// Parses `args` (program name first) and runs the command.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut io = Io { out, err };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_CLEAN };
            let _ = if e.use_stderr() {
                write!(io.err, "{e}")
            } else {
                write!(io.out, "{e}")
            };
            return code;
        }
    };
    match cli.command {
        Command::Run {
            file,
            opts,
            oracle_check,
        } => cmd_run(&file, &opts, oracle_check, &mut io),
        Command::Corpus { dir, opts } => cmd_corpus(&dir, &opts, &mut io),
        Command::Crosscheck {
            file,
            random,
            seed,
            caches,
            opts,
        } => cmd_crosscheck(file.as_deref(), random, seed, &caches, &opts, &mut io),
        Command::Sidecar { dir, caches, opts } => cmd_sidecar(&dir, &caches, &opts, &mut io),
        Command::Gen { seed } => {
            let _ = write!(io.out, "{}", gen::generate_source(seed));
            EXIT_CLEAN
        }
    }
}

fn cmd_run(file: &Path, opts: &Opts, oracle_check: bool, io: &mut Io<'_>) -> i32 {
    let Some(cache) = cache_of(&opts.cache, io) else {
        return EXIT_USAGE;
    };
    let Some(prog) = load(file, io) else {
        return EXIT_USAGE;
    };
    let cfg = opts.config(cache);
    let r = match explore(&prog, &cfg) {
        Ok(r) => r,
        Err(e) => return soundness(&e, io),
    };
    if opts.json {
        let _ = write!(io.out, "{}", report::to_json(&ReportJson::new(&r, opts.timings)));
    } else {
        let _ = write!(io.out, "{}", report::text(&r, opts.timings));
    }
    if oracle_check {
        match crosscheck(&prog, &cfg) {
            Ok(c) => {
                if !c.agrees() {
                    for d in &c.discrepancies {
                        let _ = writeln!(io.err, "oracle disagrees: {}", d.reproducer);
                    }
                    return EXIT_SOUNDNESS;
                }
                let _ = writeln!(io.err, "oracle check: flagged locations agree");
            }
            Err(OracleError::TooLarge { bits }) => {
                let _ = writeln!(io.err, "oracle check skipped: {bits} secret bits");
            }
            Err(OracleError::Engine(e)) => return soundness(&e, io),
        }
    }
    if r.witnesses.is_empty() {
        EXIT_CLEAN
    } else {
        EXIT_LEAKS
    }
}

fn cmd_corpus(dir: &Path, opts: &Opts, io: &mut Io<'_>) -> i32 {
    let Some(cache) = cache_of(&opts.cache, io) else {
        return EXIT_USAGE;
    };
    let cfg = opts.config(cache);
    let rows = match corpus::run_corpus(dir, &opts.cache.to_ascii_uppercase(), &cfg, opts.timings) {
        Ok(r) => r,
        Err(corpus::CorpusError::Engine(e)) => return soundness(&e, io),
        Err(e) => {
            let _ = writeln!(io.err, "error: {}: {e}", dir.display());
            return EXIT_USAGE;
        }
    };
    if opts.json {
        let _ = write!(io.out, "{}", report::to_json(&rows));
    } else {
        let _ = write!(io.out, "{}", corpus::table(&rows));
    }
    if rows.iter().any(|r| r.status == Status::Mismatch) {
        EXIT_LEAKS
    } else if rows.iter().any(|r| r.status == Status::Error) {
        EXIT_USAGE
    } else {
        EXIT_CLEAN
    }
}

#[derive(Serialize)]
struct CrosscheckJson {
    program: String,
    cache: String,
    mode: Mode,
    symbolic: Vec<usize>,
    oracle: Vec<usize>,
    agrees: bool,
    discrepancies: Vec<String>,
}

fn cmd_crosscheck(
    file: Option<&Path>,
    random: Option<u64>,
    seed: u64,
    caches: &[String],
    opts: &Opts,
    io: &mut Io<'_>,
) -> i32 {
    let mut programs: Vec<(String, Program)> = Vec::new();
    match (file, random) {
        (Some(f), None) => match load(f, io) {
            Some(p) => programs.push((f.display().to_string(), p)),
            None => return EXIT_USAGE,
        },
        (None, Some(n)) => {
            for s in seed..seed + n {
                programs.push((format!("seed {s}"), gen::generate(s)));
            }
        }
        _ => {
            let _ = writeln!(io.err, "error: give either a program file or --random N");
            return EXIT_USAGE;
        }
    }
    let mut configs = Vec::new();
    for c in caches {
        let Some(cache) = cache_of(c, io) else {
            return EXIT_USAGE;
        };
        configs.push((c.to_ascii_uppercase(), opts.config(cache)));
    }
    let mut rows = Vec::new();
    let mut bad = 0;
    for (label, prog) in &programs {
        for (name, cfg) in &configs {
            let c: Crosscheck = match crosscheck(prog, cfg) {
                Ok(c) => c,
                Err(OracleError::TooLarge { bits }) => {
                    let _ = writeln!(io.err, "error: {label}: {bits} secret bits exceed the enumeration limit");
                    return EXIT_USAGE;
                }
                Err(OracleError::Engine(e)) => return soundness(&e, io),
            };
            if !c.agrees() {
                bad += 1;
                let _ = writeln!(io.err, "discrepancy in {label} under {name}:");
                for d in &c.discrepancies {
                    let _ = writeln!(io.err, "  {}", d.reproducer);
                }
                if random.is_some() {
                    let _ = writeln!(io.err, "  reproduce with: speccache gen --seed {}", &label[5..]);
                }
            }
            rows.push(CrosscheckJson {
                program: label.clone(),
                cache: name.clone(),
                mode: cfg.mode,
                symbolic: c.symbolic.iter().copied().collect(),
                oracle: c.oracle.iter().copied().collect(),
                agrees: c.agrees(),
                discrepancies: c.discrepancies.iter().map(|d| d.reproducer.clone()).collect(),
            });
        }
    }
    if opts.json {
        let _ = write!(io.out, "{}", report::to_json(&rows));
    } else {
        for r in &rows {
            let _ = writeln!(
                io.out,
                "{:<24} {:<5} {:<4} analysis {:?} oracle {:?} {}",
                r.program,
                r.cache,
                r.mode,
                r.symbolic,
                r.oracle,
                if r.agrees { "ok" } else { "DISCREPANCY" }
            );
        }
        let _ = writeln!(io.out, "{} check(s), {bad} discrepanc{}", rows.len(), if bad == 1 { "y" } else { "ies" });
    }
    if bad > 0 {
        EXIT_LEAKS
    } else {
        EXIT_CLEAN
    }
}

fn cmd_sidecar(dir: &Path, caches: &[String], opts: &Opts, io: &mut Io<'_>) -> i32 {
    let mut configs = Vec::new();
    for c in caches {
        let Some(cache) = cache_of(c, io) else {
            return EXIT_USAGE;
        };
        configs.push((c.to_ascii_uppercase(), opts.config(cache)));
    }
    let files = match corpus::programs(dir) {
        Ok(f) => f,
        Err(e) => {
            let _ = writeln!(io.err, "error: {}: {e}", dir.display());
            return EXIT_USAGE;
        }
    };
    let mut code = EXIT_CLEAN;
    for f in files {
        let result = fs::read_to_string(&f)
            .map_err(|e| e.to_string())
            .and_then(|text| corpus::build_sidecar(&text, &configs));
        match result {
            Ok(s) => {
                let path = corpus::sidecar_path(&f);
                if let Err(e) = fs::write(&path, report::to_json(&s)) {
                    let _ = writeln!(io.err, "error: {}: {e}", path.display());
                    code = EXIT_USAGE;
                } else {
                    let _ = writeln!(io.out, "wrote {}", path.display());
                }
            }
            Err(e) => {
                let _ = writeln!(io.err, "skipped {}: {e}", f.display());
            }
        }
    }
    code
}

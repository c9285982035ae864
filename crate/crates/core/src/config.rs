//! Analysis knobs shared by the engine, the oracle and the command line.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::cache::CacheConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Must-behavior, then opposite, then divergent queries.
    Base,
    /// Single θ' query, assumption filtering and formula reduction.
    Opt,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Base => "base",
            Mode::Opt => "opt",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(Mode::Base),
            "opt" => Ok(Mode::Opt),
            _ => Err(format!("unknown mode `{s}` (expected base or opt)")),
        }
    }
}

/// Limits of one speculative window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeculationBudget {
    /// Reorder-buffer size in interpreted instructions; 0 disables speculation.
    pub max_events: u32,
    pub max_branch_depth: u32,
    pub stop_on_miss: bool,
}

impl Default for SpeculationBudget {
    fn default() -> Self {
        SpeculationBudget {
            max_events: 32,
            max_branch_depth: 2,
            stop_on_miss: true,
        }
    }
}

impl SpeculationBudget {
    pub fn disabled() -> Self {
        SpeculationBudget {
            max_events: 0,
            ..Self::default()
        }
    }

    pub fn enabled(&self) -> bool {
        self.max_events > 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Limits {
    /// Memory events per regular path before it is cut off.
    pub max_path_events: usize,
    /// Visits of one branch instruction per path.
    pub branch_revisit_cap: usize,
    pub solver_timeout: Duration,
    /// Largest joint symbol width the enumeration backend accepts.
    pub solver_bits: u32,
    /// External SMT-LIB solver command; the enumeration backend when unset.
    pub smt_command: Option<String>,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_path_events: 10_000,
            branch_revisit_cap: 512,
            solver_timeout: Duration::from_secs(30),
            solver_bits: 24,
            smt_command: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalysisConfig {
    pub cache: CacheConfig,
    pub mode: Mode,
    pub budget: SpeculationBudget,
    pub limits: Limits,
    /// Address of the first memory variable.
    pub base_address: u64,
    /// Report every leaking path instead of the first per location.
    pub all_paths: bool,
}

impl AnalysisConfig {
    pub fn new(cache: CacheConfig, mode: Mode) -> Self {
        AnalysisConfig {
            cache,
            mode,
            budget: SpeculationBudget::default(),
            limits: Limits::default(),
            base_address: 0,
            all_paths: false,
        }
    }

    pub fn with_budget(mut self, budget: SpeculationBudget) -> Self {
        self.budget = budget;
        self
    }
}

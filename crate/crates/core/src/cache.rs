//! Cache geometry, address mapping and a concrete N-way LRU simulator.
//!
//! The simulator is the ground truth that every constraint encoding is
//! checked against.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CacheConfigError {
    #[error("cache parameters must be at least 1")]
    Zero,
    #[error("capacity {capacity} is not divisible by line size {line_size} x associativity {assoc}")]
    Indivisible {
        capacity: u64,
        line_size: u64,
        assoc: u64,
    },
    #[error("unknown cache preset `{0}`")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Policy {
    Lru,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheConfig {
    pub capacity: u64,
    pub line_size: u64,
    pub assoc: u64,
    pub policy: Policy,
}

impl CacheConfig {
    pub fn new(capacity: u64, line_size: u64, assoc: u64) -> Result<Self, CacheConfigError> {
        if capacity == 0 || line_size == 0 || assoc == 0 {
            return Err(CacheConfigError::Zero);
        }
        if !capacity.is_multiple_of(line_size * assoc) {
            return Err(CacheConfigError::Indivisible {
                capacity,
                line_size,
                assoc,
            });
        }
        Ok(CacheConfig {
            capacity,
            line_size,
            assoc,
            policy: Policy::Lru,
        })
    }

    /// Named presets: C1-C4 are 64-byte-line L1-like caches, C1S a 1 KB
    /// scaled-down C1, M0 the 256-line byte-granular fully associative cache.
    pub fn preset(name: &str) -> Result<Self, CacheConfigError> {
        let (cap, line, assoc) = match name.to_ascii_uppercase().as_str() {
            "C1" => (32 * 1024, 64, 4),
            "C2" => (32 * 1024, 64, 8),
            "C3" => (64 * 1024, 64, 8),
            "C4" => (32 * 1024, 64, 512),
            "C1S" => (1024, 64, 4),
            "M0" => (256, 1, 256),
            _ => return Err(CacheConfigError::UnknownPreset(name.to_string())),
        };
        Self::new(cap, line, assoc)
    }

    pub fn num_sets(&self) -> u64 {
        self.capacity / (self.line_size * self.assoc)
    }

    pub fn lines(&self) -> u64 {
        self.capacity / self.line_size
    }

    pub fn is_fully_associative(&self) -> bool {
        self.num_sets() == 1
    }

    pub fn block(&self, addr: u64) -> u64 {
        addr / self.line_size
    }

    pub fn set_index(&self, addr: u64) -> u64 {
        self.block(addr) % self.num_sets()
    }

    /// The global block number; equal tags imply equal sets.
    pub fn tag(&self, addr: u64) -> u64 {
        self.block(addr)
    }
}

impl FromStr for CacheConfig {
    type Err = CacheConfigError;

    /// A preset name or `capacity:line:assoc` in bytes.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if let [c, l, a] = parts[..] {
            let num = |x: &str| x.trim().parse::<u64>().map_err(|_| CacheConfigError::UnknownPreset(s.to_string()));
            return Self::new(num(c)?, num(l)?, num(a)?);
        }
        Self::preset(s)
    }
}

impl fmt::Display for CacheConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}B/{}-way/{}B lines ({} set{})",
            self.capacity,
            self.assoc,
            self.line_size,
            self.num_sets(),
            if self.num_sets() == 1 { "" } else { "s" }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Hit,
    Miss,
}

impl Verdict {
    pub fn is_hit(self) -> bool {
        self == Verdict::Hit
    }

    pub fn from_hit(hit: bool) -> Self {
        if hit {
            Verdict::Hit
        } else {
            Verdict::Miss
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Hit => "hit",
            Verdict::Miss => "miss",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Hit,
    Miss { evicted: Option<u64> },
}

impl Access {
    pub fn verdict(self) -> Verdict {
        match self {
            Access::Hit => Verdict::Hit,
            Access::Miss { .. } => Verdict::Miss,
        }
    }
}

/// Per-set recency lists, most recently used tag at the front.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheSim {
    cfg: CacheConfig,
    sets: Vec<VecDeque<u64>>,
}

impl CacheSim {
    pub fn new(cfg: CacheConfig) -> Self {
        CacheSim {
            cfg,
            sets: vec![VecDeque::new(); cfg.num_sets() as usize],
        }
    }

    pub fn config(&self) -> &CacheConfig {
        &self.cfg
    }

    pub fn contains(&self, addr: u64) -> bool {
        let set = &self.sets[self.cfg.set_index(addr) as usize];
        set.contains(&self.cfg.tag(addr))
    }

    /// Loads and stores allocate identically.
    pub fn access(&mut self, addr: u64) -> Access {
        let tag = self.cfg.tag(addr);
        let assoc = self.cfg.assoc as usize;
        let set = &mut self.sets[self.cfg.set_index(addr) as usize];
        if let Some(pos) = set.iter().position(|&t| t == tag) {
            set.remove(pos);
            set.push_front(tag);
            return Access::Hit;
        }
        let evicted = if set.len() == assoc { set.pop_back() } else { None };
        set.push_front(tag);
        Access::Miss { evicted }
    }

    pub fn set_contents(&self, set: u64) -> impl Iterator<Item = u64> + '_ {
        self.sets[set as usize].iter().copied()
    }
}

/// Left-to-right simulation of `(addr, speculative)` pairs. With
/// `include_speculative = false`, speculative events are skipped entirely and
/// their slot holds `None`.
pub fn replay(trace: &[(u64, bool)], cfg: CacheConfig, include_speculative: bool) -> Vec<Option<Verdict>> {
    let mut sim = CacheSim::new(cfg);
    trace
        .iter()
        .map(|&(addr, spec)| {
            if spec && !include_speculative {
                None
            } else {
                Some(sim.access(addr).verdict())
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn presets() {
        let c1 = CacheConfig::preset("C1").unwrap();
        assert_eq!(c1.num_sets(), 128);
        let c4 = CacheConfig::preset("C4").unwrap();
        assert!(c4.is_fully_associative());
        let m0 = CacheConfig::preset("M0").unwrap();
        assert_eq!(m0.lines(), 256);
        assert!(m0.is_fully_associative());
        assert_eq!(CacheConfig::preset("C3").unwrap().num_sets(), 128);
        assert_eq!(CacheConfig::preset("C2").unwrap().num_sets(), 64);
        assert_eq!(CacheConfig::preset("c1s").unwrap().num_sets(), 4);
        assert!(CacheConfig::preset("L9").is_err());
        let custom: CacheConfig = "2048:32:2".parse().unwrap();
        assert_eq!(custom.num_sets(), 32);
        assert_eq!("m0".parse::<CacheConfig>().unwrap(), m0);
    }

    #[test]
    fn invalid_geometry() {
        assert_eq!(CacheConfig::new(0, 1, 1), Err(CacheConfigError::Zero));
        assert!(matches!(
            CacheConfig::new(100, 64, 4),
            Err(CacheConfigError::Indivisible { .. })
        ));
    }

    #[test]
    fn address_mapping() {
        let m0 = CacheConfig::preset("M0").unwrap();
        for a in 0..300 {
            assert_eq!(m0.set_index(a), 0);
        }
        let tags: std::collections::BTreeSet<_> = (0..254).map(|a| m0.tag(a)).collect();
        assert_eq!(tags.len(), 254);
        assert_eq!(m0.tag(254), 254);
        let c1 = CacheConfig::preset("C1").unwrap();
        assert_eq!(c1.set_index(8192), 0);
        assert_eq!(c1.tag(8192), 128);
    }

    #[test]
    fn motivating_eviction() {
        let m0 = CacheConfig::preset("M0").unwrap();
        let mut sim = CacheSim::new(m0);
        for a in 0..254 {
            assert_eq!(sim.access(a), Access::Miss { evicted: None });
        }
        sim.access(254); // x
        sim.access(255); // v1, speculative
        assert_eq!(sim.access(256), Access::Miss { evicted: Some(0) });
        assert_eq!(sim.access(256), Access::Hit);
    }

    #[test]
    fn property_one_boundary() {
        let cfg = CacheConfig::new(4 * 8, 8, 4).unwrap();
        // all blocks in one set; a, then k distinct others, then a
        for k in 0..=4u64 {
            let mut sim = CacheSim::new(cfg);
            sim.access(0);
            for b in 1..=k {
                sim.access(b * 8);
            }
            let expect = if k < 4 { Access::Hit } else { Access::Miss { evicted: Some(1) } };
            assert_eq!(sim.access(0), expect, "k = {k}");
        }
    }

    fn worked_trace() -> Vec<(u64, bool)> {
        // m1 m2 m1 m3 m3 m4 m5 m4 m1, one line per m_k, same set
        [1, 2, 1, 3, 3, 4, 5, 4, 1].iter().map(|&m| (m, false)).collect()
    }

    #[test]
    fn worked_trace_verdicts() {
        let four = CacheConfig::new(4, 1, 4).unwrap();
        assert_eq!(replay(&worked_trace(), four, true)[8], Some(Verdict::Hit));
        let three = CacheConfig::new(3, 1, 3).unwrap();
        assert_eq!(replay(&worked_trace(), three, true)[8], Some(Verdict::Miss));
        assert!(replay(&[], four, true).is_empty());
    }

    proptest! {
        #[test]
        fn speculative_filter_equals_regular_subsequence(
            trace in proptest::collection::vec((0u64..64, any::<bool>()), 0..60),
            assoc in prop::sample::select(vec![1u64, 2, 4]),
        ) {
            let cfg = CacheConfig::new(8 * 4 * assoc, 4, assoc).unwrap();
            let filtered: Vec<_> = replay(&trace, cfg, false).into_iter().flatten().collect();
            let regular: Vec<_> = trace.iter().filter(|e| !e.1).cloned().collect();
            let direct: Vec<_> = replay(&regular, cfg, true).into_iter().flatten().collect();
            prop_assert_eq!(filtered, direct);
        }

        #[test]
        fn verdicts_depend_only_on_blocks(
            trace in proptest::collection::vec(0u64..32, 0..60),
            offset in 0u64..4,
        ) {
            let cfg = CacheConfig::new(32, 4, 2).unwrap();
            let a: Vec<_> = trace.iter().map(|&b| (b * 4, false)).collect();
            // same blocks, shifted by whole multiples of the set stride plus an intra-line offset
            let stride = cfg.line_size * cfg.num_sets();
            let b: Vec<_> = trace.iter().map(|&b| (b * 4 + 64 * stride + offset, false)).collect();
            prop_assert_eq!(replay(&a, cfg, true), replay(&b, cfg, true));
        }
    }
}

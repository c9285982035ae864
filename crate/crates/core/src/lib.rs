//! Speculative symbolic execution for cache timing leak detection.

pub mod cache;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod expr;
pub mod formula;
pub mod gen;
pub mod ir;
pub mod solver;
pub mod analysis;
pub mod engine;
pub mod speculation;
pub mod oracle;
pub mod report;

//! Core library for the Boolean structural-causal-model benchmark.

pub mod dsl;
pub mod enumerate;
pub mod fixtures;
pub mod generator;
pub mod metrics;
pub mod scm;
pub mod worlds;
pub mod harness;
pub mod solvers;

//! Runtime-behavior reasoning benchmark harness.
//!
//! Adapts executable code benchmarks into four aligned question sets (code
//! coverage, program state, execution path, output), queries models on them
//! and scores per-task accuracy together with the Incremental Consistency
//! score across the four tasks.

pub mod analyzer;
pub mod builder;
pub mod corpus;
pub mod gateway;
pub mod grader;
pub mod harness;
pub mod literal;
pub mod metrics;
pub mod promptkit;
pub mod pysrc;
pub mod sandbox;
pub mod tracer;

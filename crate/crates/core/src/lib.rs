//! Algorithms and domain types for knowledge-constrained root-cause
//! diagnostics of staged manufacturing processes.
//!
//! Everything here is `no_std` (with `alloc`) and free of IO; the `rcdiag`
//! crate carries transport, file formats and the CLI.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod anomaly;
pub mod discovery;
pub mod domain;
pub mod iforest;
pub mod metrics;
pub mod planner;
pub mod prep;
pub mod rca;
pub mod rules;
pub mod stats;
pub mod synth;

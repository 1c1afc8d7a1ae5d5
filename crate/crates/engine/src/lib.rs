//! Agent registry, workflow engine, HTTP surface and CLI.

pub mod events;
pub mod protocol;
pub mod registry;
pub mod agents;
pub mod io;
pub mod cpa;
pub mod cache;
pub mod engine;
pub mod config;
pub mod service;
pub mod server;
pub mod eval;

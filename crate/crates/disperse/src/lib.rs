//! Deterministic round-synchronous simulator and verification harness for
//! mobile-robot dispersion on anonymous port-labeled graphs.
//!
//! The crate is organized around the layers of the artifact:
//!
//! * [`graphcore`] — port-labeled graphs, grid generators, serialization;
//! * [`engine`] — the Communicate-Compute-Move round loop, robot memory with
//!   bit accounting, traces and metrics;
//! * [`algo_arbitrary`] — single-source DFS dispersion and the pass/stage
//!   algorithm for arbitrary graphs;
//! * [`algo_grid`] — the five-stage grid algorithm plus its small-`k` and
//!   rectangular variants;
//! * [`verify`] — global-view checkers: the dispersion predicate, structural
//!   invariant monitors, round/memory bound auditors, and the exhaustive
//!   small-instance oracle;
//! * [`cli`] — run configuration, batch execution, and exports.

pub mod algo_arbitrary;
pub mod algo_grid;
pub mod cli;
pub mod engine;
pub mod graphcore;
pub mod verify;

//! Plan execution over hierarchical error-corrective graphs.
//!
//! A plan is compiled into a [`graph::TaskGraph`] whose edges are typed as
//! nominal (`main`), alternative (`opt`), local correction (`corr`) or
//! fallback (`fb`). The [`traversal`] loop executes nodes against the
//! deterministic household simulator in [`env`], measures the predicate
//! mismatch of each step, routes it through the threshold guards and the
//! multi-term softmax in [`policy`], and dispatches failures through the
//! four correction levels in [`correction`].
//!
//! The crate is `no_std` (with `alloc`); file formats, the CLI and network
//! clients live in the companion `hecg` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod ccgr;
pub mod correction;
pub mod env;
pub mod error_engine;
pub mod graph;
pub mod math;
pub mod metrics;
pub mod planner;
pub mod policy;
pub mod scenario;
pub mod suite;
pub mod traversal;

pub use env::{ActionScript, Predicate, Verb, WorldState};
pub use error_engine::{CorrectionLevel, ErrorClass, ErrorKind, ErrorValue};
pub use graph::{EdgeKind, NodeId, TaskEdge, TaskGraph, TaskNode};
pub use policy::{PolicyCoefficients, Variant};

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

//! Agent-based case studies built on the `ebdevs` kernel.
//!
//! Each model module exposes its atomic and macro behaviours, a typed
//! parameter set, a builder and a `run` function sampling its observables on
//! a uniform time grid. [`scenario`] dispatches on a model name for the
//! experiment harness.

pub mod culture;
pub mod epidemic;
pub mod minimal;
pub mod network;
pub mod params;
pub mod scenario;
pub mod segregation;
pub mod sugarscape;

pub use params::{ParamError, RunOptions, RunResult};
pub use scenario::{run_model, ModelKind, RunError};

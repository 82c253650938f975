//! Discrete-event simulation with micro-macro feedback.
//!
//! The [`kernel`] is a Classic DEVS abstract simulator. [`macrolevel`] adds
//! macro states to coupled models, fed by upward causation values from
//! their atomic children and read back through downward queries. Structure
//! can change at run time through [`dynstruct`]. Every model draws from its
//! own deterministic [`rng`] stream, so a run is a pure function of its seed
//! and configuration.

pub mod dynstruct;
pub mod error;
pub mod kernel;
pub mod macrolevel;
pub mod rng;
pub mod stats;
pub mod time;

pub use dynstruct::{AppliedReport, StructureChange};
pub use error::{HookResult, ModelError, QueryError, SimError};
pub use kernel::{
    Atomic, Context, CoupledSpec, Direction, EventReport, Family, Input, ModelId, Outbox, Port, PortRef, Simulation,
    TraceKind, TraceRecord, TraceSummary,
};
pub use macrolevel::{ClassicMacro, GlobalContext, MacroBehaviour, MacroView};
pub use rng::{RngError, RngStream, StreamId};
pub use time::SimTime;

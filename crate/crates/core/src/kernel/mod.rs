//! Classic DEVS abstract simulator.
//!
//! Atomic models implement [`Atomic`]; they are composed into a tree of
//! coupled models described by a [`CoupledSpec`] and executed by a
//! [`Simulation`]. One imminent atomic is processed per [`Simulation::step`]:
//! its output is routed along the couplings, it undergoes its internal
//! transition, and every receiver undergoes an external transition. Ties are
//! broken by component insertion order.

mod couplings;
mod sim;
mod spec;

use std::any::Any;
use std::fmt;
use std::rc::Rc;

pub use couplings::Couplings;
pub use sim::{EventReport, Simulation, TraceKind, TraceRecord, TraceSummary};
pub use spec::CoupledSpec;

use crate::error::{HookResult, QueryError};
use crate::macrolevel::MacroView;
use crate::rng::RngStream;
use crate::time::SimTime;

/// The value types exchanged inside one simulation.
///
/// `Msg` travels along couplings, `Up` is an upward causation value sent to
/// the parent's global transition, and `Query`/`Answer` form the downward
/// information channel.
pub trait Family: 'static {
    type Msg: fmt::Debug;
    type Up: fmt::Debug;
    type Query: fmt::Debug;
    type Answer;
}

/// Stable handle of an atomic or coupled model. Ids are never reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelId(pub u32);

impl ModelId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Port name, optionally indexed so a model can expose one port per peer
/// (`Port::indexed("to", 7)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Port {
    name: &'static str,
    index: u32,
}

impl Port {
    const UNINDEXED: u32 = u32::MAX;

    pub const fn new(name: &'static str) -> Self {
        Self {
            name,
            index: Self::UNINDEXED,
        }
    }

    pub const fn indexed(name: &'static str, index: u32) -> Self {
        Self { name, index }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn index(&self) -> Option<u32> {
        (self.index != Self::UNINDEXED).then_some(self.index)
    }

    pub(crate) const MIN: Port = Port { name: "", index: 0 };
}

impl fmt::Display for Port {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index() {
            Some(i) => write!(f, "{}[{}]", self.name, i),
            None => f.write_str(self.name),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Input,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PortRef {
    pub model: ModelId,
    pub direction: Direction,
    pub port: Port,
}

impl PortRef {
    pub fn input(model: ModelId, port: Port) -> Self {
        Self {
            model,
            direction: Direction::Input,
            port,
        }
    }

    pub fn output(model: ModelId, port: Port) -> Self {
        Self {
            model,
            direction: Direction::Output,
            port,
        }
    }

    /// Smallest port reference belonging to `model`, for range scans.
    pub(crate) fn lowest(model: ModelId) -> Self {
        Self::input(model, Port::MIN)
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dir = match self.direction {
            Direction::Input => "in",
            Direction::Output => "out",
        };
        write!(f, "{}.{}:{}", self.model, dir, self.port)
    }
}

/// A message as seen by its receiver.
#[derive(Debug, Clone)]
pub struct Input<M> {
    /// Input port of the receiving atomic.
    pub port: Port,
    /// Output port of the emitting atomic (or a root input port).
    pub source: PortRef,
    pub payload: Rc<M>,
}

/// Collects the messages produced by one call to [`Atomic::output`].
#[derive(Debug)]
pub struct Outbox<M> {
    messages: Vec<(Port, Rc<M>)>,
}

impl<M> Default for Outbox<M> {
    fn default() -> Self {
        Self { messages: Vec::new() }
    }
}

impl<M> Outbox<M> {
    pub fn send(&mut self, port: Port, payload: M) {
        self.messages.push((port, Rc::new(payload)));
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub(crate) fn drain(&mut self) -> std::vec::Drain<'_, (Port, Rc<M>)> {
        self.messages.drain(..)
    }
}

/// Helper so trait objects can be downcast to their concrete model type.
pub trait AsAny: Any {
    fn as_any(&self) -> &dyn Any;
}

impl<T: Any> AsAny for T {
    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Behaviour of an atomic model.
///
/// `time_advance` returns a raw `f64`: negative or NaN values are rejected by
/// the kernel with a legitimacy error rather than clamped. `output` is called
/// exactly once immediately before each `delta_int`.
pub trait Atomic<F: Family>: AsAny {
    /// Called once when the model enters the simulation, before its first
    /// time advance is read.
    fn initialize(&mut self, _ctx: &mut Context<'_, F>) -> HookResult {
        Ok(())
    }

    fn delta_int(&mut self, ctx: &mut Context<'_, F>) -> HookResult;

    fn delta_ext(&mut self, elapsed: SimTime, inputs: &[Input<F::Msg>], ctx: &mut Context<'_, F>) -> HookResult;

    fn output(&mut self, _ctx: &mut Context<'_, F>, _out: &mut Outbox<F::Msg>) -> HookResult {
        Ok(())
    }

    fn time_advance(&self) -> f64;

    /// Pending upward causation value, cleared by the call.
    fn take_yup(&mut self) -> Option<F::Up> {
        None
    }

    /// Asks the parent coupled model to run its structure transition.
    fn wants_structure_change(&self) -> bool {
        false
    }
}

/// What a transition hook can see: the clock, its own random stream and a
/// read-only view of the parent's macro state. The view borrows the parent
/// for the duration of the call only.
pub struct Context<'a, F: Family> {
    now: SimTime,
    model: ModelId,
    rng: &'a mut RngStream,
    view: Result<MacroView<'a, F>, QueryError>,
}

impl<'a, F: Family> Context<'a, F> {
    pub(crate) fn new(
        now: SimTime,
        model: ModelId,
        rng: &'a mut RngStream,
        view: Result<MacroView<'a, F>, QueryError>,
    ) -> Self {
        Self { now, model, rng, view }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn model_id(&self) -> ModelId {
        self.model
    }

    pub fn rng(&mut self) -> &mut RngStream {
        self.rng
    }

    /// Downward information from the parent coupled model.
    pub fn v_down(&mut self, query: &F::Query) -> Result<F::Answer, QueryError> {
        match &mut self.view {
            Ok(view) => view.query(query),
            Err(e) => Err(e.clone()),
        }
    }
}

/// Picks the member of `imminent` ranked first by `order`.
///
/// Returns `None` for an empty set. Members missing from `order` rank last,
/// in their given order.
pub fn select_imminent<T: PartialEq + Copy>(imminent: &[T], order: &[T]) -> Option<T> {
    imminent
        .iter()
        .copied()
        .min_by_key(|id| order.iter().position(|o| o == id).unwrap_or(usize::MAX))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_singleton() {
        assert_eq!(select_imminent(&['a'], &['a', 'b']), Some('a'));
    }

    #[test]
    fn select_follows_order() {
        assert_eq!(select_imminent(&['b', 'a'], &['a', 'b']), Some('a'));
        assert_eq!(select_imminent(&['c', 'b'], &['a', 'b', 'c']), Some('b'));
    }

    #[test]
    fn select_empty_is_none() {
        assert_eq!(select_imminent::<char>(&[], &['a']), None);
    }

    #[test]
    fn port_display() {
        assert_eq!(Port::new("out").to_string(), "out");
        assert_eq!(Port::indexed("to", 3).to_string(), "to[3]");
        assert_eq!(PortRef::input(ModelId(2), Port::new("in")).to_string(), "#2.in:in");
    }
}

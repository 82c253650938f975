//! Macro-level state of coupled models.
//!
//! A coupled model may carry a macro state with a global transition. Atomic
//! children feed it through upward causation values (`take_yup`); the values
//! collected during one step form the mailbox that triggers exactly one
//! global transition at the end of that step. Children read the macro state
//! back through downward queries (`v_down`), which take `&self` and so cannot
//! mutate it. Randomised answers draw from the coupled model's own query
//! stream.

use std::rc::Rc;

use crate::dynstruct::StructureChange;
use crate::error::{HookResult, ModelError, QueryError};
use crate::kernel::{Atomic, Family, ModelId, PortRef};
use crate::kernel::AsAny;
use crate::rng::RngStream;
use crate::time::SimTime;

pub trait MacroBehaviour<F: Family>: AsAny {
    /// Consumes one nonempty mailbox. The returned value, if any, is
    /// forwarded to the parent coupled model's mailbox.
    fn global_transition(
        &mut self,
        elapsed: SimTime,
        batch: Vec<F::Up>,
        ctx: &mut GlobalContext<'_, F>,
    ) -> Result<Option<F::Up>, ModelError>;

    fn v_down(&self, query: &F::Query, rng: &mut RngStream) -> Result<F::Answer, QueryError>;

    /// Runs when children flagged `wants_structure_change` during the step.
    fn structure_transition(&mut self, _requests: &[ModelId], _ctx: &mut GlobalContext<'_, F>) -> HookResult {
        Ok(())
    }
}

/// Macro behaviour of a plain Classic DEVS coupled model: identity global
/// transition, no queryable properties.
#[derive(Debug, Default, Clone, Copy)]
pub struct ClassicMacro;

impl<F: Family> MacroBehaviour<F> for ClassicMacro {
    fn global_transition(
        &mut self,
        _elapsed: SimTime,
        _batch: Vec<F::Up>,
        _ctx: &mut GlobalContext<'_, F>,
    ) -> Result<Option<F::Up>, ModelError> {
        Ok(None)
    }

    fn v_down(&self, query: &F::Query, _rng: &mut RngStream) -> Result<F::Answer, QueryError> {
        Err(QueryError::UnknownProperty(format!("{query:?}")))
    }
}

/// Read-only access to a coupled model's macro state, valid for one call.
pub struct MacroView<'a, F: Family> {
    behaviour: &'a dyn MacroBehaviour<F>,
    rng: &'a mut RngStream,
}

impl<'a, F: Family> MacroView<'a, F> {
    pub fn new(behaviour: &'a dyn MacroBehaviour<F>, rng: &'a mut RngStream) -> Self {
        Self { behaviour, rng }
    }

    pub fn query(&mut self, query: &F::Query) -> Result<F::Answer, QueryError> {
        self.behaviour.v_down(query, self.rng)
    }
}

/// Macro state of one coupled model together with its mailbox.
pub struct MacroState<F: Family> {
    behaviour: Box<dyn MacroBehaviour<F>>,
    last_global_time: SimTime,
    mailbox: Vec<(Rc<[u32]>, F::Up)>,
}

impl<F: Family> MacroState<F> {
    pub fn new(behaviour: Box<dyn MacroBehaviour<F>>) -> Self {
        Self {
            behaviour,
            last_global_time: SimTime::ZERO,
            mailbox: Vec::new(),
        }
    }

    pub fn classic() -> Self {
        Self::new(Box::new(ClassicMacro))
    }

    pub fn behaviour(&self) -> &dyn MacroBehaviour<F> {
        self.behaviour.as_ref()
    }

    pub fn last_global_time(&self) -> SimTime {
        self.last_global_time
    }

    pub fn mailbox_len(&self) -> usize {
        self.mailbox.len()
    }

    /// `order` is the emitter's Select rank; the batch handed to the global
    /// transition is sorted by it (stable, so one emitter keeps its order).
    pub(crate) fn post(&mut self, order: Rc<[u32]>, value: F::Up) {
        self.mailbox.push((order, value));
    }

    pub(crate) fn take_mailbox(&mut self) -> Vec<F::Up> {
        let mut batch = std::mem::take(&mut self.mailbox);
        batch.sort_by(|a, b| a.0.cmp(&b.0));
        batch.into_iter().map(|(_, v)| v).collect()
    }

    /// Runs the global transition on `batch` at `ctx.now()`.
    pub fn deliver_yup(&mut self, batch: Vec<F::Up>, ctx: &mut GlobalContext<'_, F>) -> Result<Option<F::Up>, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::Invalid("global transition invoked with an empty mailbox".into()));
        }
        let elapsed = ctx.now() - self.last_global_time;
        let up = self.behaviour.global_transition(elapsed, batch, ctx)?;
        self.last_global_time = ctx.now();
        Ok(up)
    }

    pub fn query_down(&self, query: &F::Query, rng: &mut RngStream) -> Result<F::Answer, QueryError> {
        self.behaviour.v_down(query, rng)
    }

    pub(crate) fn behaviour_mut(&mut self) -> &mut dyn MacroBehaviour<F> {
        self.behaviour.as_mut()
    }
}

/// Hands out fresh model ids; shared by the kernel and global transitions so
/// ids reserved for pending additions never collide.
#[derive(Debug, Clone, Copy)]
pub struct IdAllocator {
    next: u32,
}

impl IdAllocator {
    pub fn starting_at(next: u32) -> Self {
        Self { next }
    }

    pub fn reserve(&mut self) -> ModelId {
        let id = ModelId(self.next);
        self.next += 1;
        id
    }

    pub fn peek(&self) -> u32 {
        self.next
    }
}

/// What a global transition can see and do: the clock, the coupled model's
/// own random stream, the parent's macro state, and a queue of structure
/// changes applied when the current step ends.
pub struct GlobalContext<'a, F: Family> {
    now: SimTime,
    coupled: ModelId,
    rng: &'a mut RngStream,
    parent: Option<MacroView<'a, F>>,
    changes: &'a mut Vec<StructureChange<F>>,
    ids: &'a mut IdAllocator,
}

impl<'a, F: Family> GlobalContext<'a, F> {
    pub fn new(
        now: SimTime,
        coupled: ModelId,
        rng: &'a mut RngStream,
        parent: Option<MacroView<'a, F>>,
        changes: &'a mut Vec<StructureChange<F>>,
        ids: &'a mut IdAllocator,
    ) -> Self {
        Self {
            now,
            coupled,
            rng,
            parent,
            changes,
            ids,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn coupled_id(&self) -> ModelId {
        self.coupled
    }

    pub fn rng(&mut self) -> &mut RngStream {
        self.rng
    }

    /// Queries the parent coupled model's macro state.
    pub fn parent_v_down(&mut self, query: &F::Query) -> Result<F::Answer, QueryError> {
        match &mut self.parent {
            Some(view) => view.query(query),
            None => Err(QueryError::NoMacro),
        }
    }

    /// Queues a new atomic inside this coupled model; the id is usable in
    /// further queued changes right away.
    pub fn add_atomic(&mut self, name: impl Into<String>, behaviour: impl Atomic<F>) -> ModelId {
        let id = self.ids.reserve();
        self.changes.push(StructureChange::AddAtomic {
            id,
            parent: self.coupled,
            name: name.into(),
            behaviour: Box::new(behaviour),
        });
        id
    }

    pub fn remove_atomic(&mut self, id: ModelId) {
        self.changes.push(StructureChange::RemoveAtomic(id));
    }

    pub fn connect(&mut self, from: PortRef, to: PortRef) {
        self.changes.push(StructureChange::Connect(from, to));
    }

    pub fn disconnect(&mut self, from: PortRef, to: PortRef) {
        self.changes.push(StructureChange::Disconnect(from, to));
    }

    pub fn request(&mut self, change: StructureChange<F>) {
        self.changes.push(change);
    }

    pub fn pending_changes(&self) -> usize {
        self.changes.len()
    }
}

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use super::spec::{validate_coupling, NodeInfo, SpecNode};
use super::{Atomic, Context, CoupledSpec, Couplings, Direction, Family, Input, ModelId, Outbox, Port, PortRef};
use crate::dynstruct::{AppliedReport, StructureChange};
use crate::error::{ModelError, QueryError, SimError};
use crate::macrolevel::{GlobalContext, IdAllocator, MacroBehaviour, MacroState, MacroView};
use crate::rng::{RngStream, StreamId};
use crate::time::SimTime;

pub(crate) const LANE_ATOMIC: u64 = 0;
const LANE_QUERY: u64 = 1;
const LANE_GLOBAL: u64 = 2;

/// Path of insertion positions from the root; lexicographic order on it is
/// the Select order across the whole hierarchy.
pub(crate) type SelectKey = Rc<[u32]>;

pub(crate) struct AtomicNode<F: Family> {
    pub name: String,
    pub parent: ModelId,
    pub key: SelectKey,
    pub behaviour: Box<dyn Atomic<F>>,
    pub rng: RngStream,
    pub last_event: SimTime,
    pub t_next: SimTime,
}

pub(crate) struct CoupledNode<F: Family> {
    pub name: String,
    pub parent: Option<ModelId>,
    pub key: SelectKey,
    pub depth: usize,
    pub children: Vec<ModelId>,
    pub next_position: u32,
    pub child_names: HashMap<String, ModelId>,
    pub macro_state: MacroState<F>,
    pub query_rng: RngStream,
    pub global_rng: RngStream,
    pub requests: Vec<ModelId>,
}

pub(crate) enum Node<F: Family> {
    Atomic(AtomicNode<F>),
    Coupled(CoupledNode<F>),
}

#[derive(Debug, Clone, Copy)]
enum Route {
    Atomic(PortRef),
    RootOut(Port),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Internal,
    External,
}

/// One transition in the event-trace log.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub model: String,
    pub kind: TraceKind,
    pub yup: bool,
}

impl fmt::Display for TraceRecord {
    /// Tab-separated: time, model id, `INT`/`EXT`, y_up flag.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            TraceKind::Internal => "INT",
            TraceKind::External => "EXT",
        };
        write!(f, "{}\t{}\t{}\t{}", self.time, self.model, kind, u8::from(self.yup))
    }
}

/// Outcome of one [`Simulation::step`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventReport {
    pub time: SimTime,
    pub quiescent: bool,
    /// The imminent model, absent for injected inputs and quiescence.
    pub internal: Option<ModelId>,
    /// Receivers of external transitions, in delivery order.
    pub external: Vec<ModelId>,
    pub messages_routed: usize,
    pub yup_count: usize,
    pub global_transitions: usize,
    pub structure: Option<AppliedReport>,
}

impl EventReport {
    pub fn transitions(&self) -> usize {
        usize::from(self.internal.is_some()) + self.external.len()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TraceSummary {
    pub steps: usize,
    pub internal: usize,
    pub external: usize,
    pub yups: usize,
    pub global_transitions: usize,
    pub final_clock: SimTime,
}

impl TraceSummary {
    fn absorb(&mut self, report: &EventReport) {
        self.steps += 1;
        self.internal += usize::from(report.internal.is_some());
        self.external += report.external.len();
        self.yups += report.yup_count;
        self.global_transitions += report.global_transitions;
    }
}

/// A running simulation. Single-threaded; independent simulations share
/// nothing and may run on separate threads.
pub struct Simulation<F: Family> {
    seed: u64,
    clock: SimTime,
    pub(crate) nodes: Vec<Option<Node<F>>>,
    pub(crate) removed: HashSet<ModelId>,
    pub(crate) couplings: Couplings,
    schedule: BTreeSet<(SimTime, SelectKey, ModelId)>,
    pub(crate) deferred: HashMap<ModelId, Vec<Input<F::Msg>>>,
    injected: BTreeMap<(SimTime, u64), (Port, Rc<F::Msg>)>,
    injected_seq: u64,
    route_cache: HashMap<PortRef, Rc<[Route]>>,
    pub(crate) ids: IdAllocator,
    macro_enabled: bool,
    trace: Option<Vec<TraceRecord>>,
    root_outputs: Vec<(SimTime, Port, Rc<F::Msg>)>,
    pending: Vec<StructureChange<F>>,
    alive: usize,
}

impl<F: Family> Simulation<F> {
    /// Builds the simulation at clock 0: every atomic is initialized and
    /// scheduled at `ta(initial state)`.
    pub fn initialize(spec: CoupledSpec<F>, seed: u64) -> Result<Self, SimError> {
        Self::initialize_with(spec, seed, true)
    }

    /// Like [`initialize`](Self::initialize); with `macrolevel == false`
    /// upward causation values are discarded and downward queries fail, which
    /// reduces the run to Classic DEVS.
    pub fn initialize_with(spec: CoupledSpec<F>, seed: u64, macrolevel: bool) -> Result<Self, SimError> {
        let CoupledSpec { nodes: spec_nodes, couplings, .. } = spec;
        let count = spec_nodes.len();
        let mut sim = Simulation {
            seed,
            clock: SimTime::ZERO,
            nodes: Vec::with_capacity(count),
            removed: HashSet::new(),
            couplings,
            schedule: BTreeSet::new(),
            deferred: HashMap::new(),
            injected: BTreeMap::new(),
            injected_seq: 0,
            route_cache: HashMap::new(),
            ids: IdAllocator::starting_at(count as u32),
            macro_enabled: macrolevel,
            trace: None,
            root_outputs: Vec::new(),
            pending: Vec::new(),
            alive: 0,
        };

        // Parents always precede children in the spec, so keys can be
        // assigned in one pass.
        let mut atomics = Vec::new();
        for (index, spec_node) in spec_nodes.into_iter().enumerate() {
            let id = ModelId(index as u32);
            let node = match spec_node {
                SpecNode::Coupled {
                    name,
                    parent,
                    children: _,
                    behaviour,
                } => {
                    let (key, depth) = match parent {
                        Some(p) => {
                            let parent = sim.coupled_mut(p)?;
                            (child_key(parent), parent.depth + 1)
                        }
                        None => (Rc::from(Vec::new()), 0),
                    };
                    if let Some(p) = parent {
                        sim.coupled_mut(p)?.adopt(id, &name)?;
                    }
                    Node::Coupled(CoupledNode {
                        name,
                        parent,
                        key,
                        depth,
                        children: Vec::new(),
                        next_position: 0,
                        child_names: HashMap::new(),
                        macro_state: behaviour.map(MacroState::new).unwrap_or_else(MacroState::classic),
                        query_rng: RngStream::new(seed, StreamId::new(id.0 as u64, LANE_QUERY)),
                        global_rng: RngStream::new(seed, StreamId::new(id.0 as u64, LANE_GLOBAL)),
                        requests: Vec::new(),
                    })
                }
                SpecNode::Atomic { name, parent, behaviour } => {
                    let p = sim.coupled_mut(parent)?;
                    let key = child_key(p);
                    p.adopt(id, &name)?;
                    atomics.push(id);
                    Node::Atomic(AtomicNode {
                        name,
                        parent,
                        key,
                        behaviour,
                        rng: RngStream::new(seed, StreamId::new(id.0 as u64, LANE_ATOMIC)),
                        last_event: SimTime::ZERO,
                        t_next: SimTime::INFINITY,
                    })
                }
            };
            sim.nodes.push(Some(node));
        }

        for id in atomics {
            sim.enter(id)?;
        }
        Ok(sim)
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn take_root_outputs(&mut self) -> Vec<(SimTime, Port, Rc<F::Msg>)> {
        std::mem::take(&mut self.root_outputs)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn clock(&self) -> SimTime {
        self.clock
    }

    pub fn root(&self) -> ModelId {
        ModelId(0)
    }

    pub fn macrolevel_enabled(&self) -> bool {
        self.macro_enabled
    }

    pub fn next_event_time(&self) -> SimTime {
        let internal = self.schedule.first().map_or(SimTime::INFINITY, |(t, _, _)| *t);
        let injected = self.injected.first_key_value().map_or(SimTime::INFINITY, |((t, _), _)| *t);
        internal.min(injected)
    }

    pub fn schedule_len(&self) -> usize {
        self.schedule.len()
    }

    pub fn alive_atomics(&self) -> usize {
        self.alive
    }

    pub fn coupling_count(&self) -> usize {
        self.couplings.len()
    }

    pub fn couplings(&self) -> &Couplings {
        &self.couplings
    }

    pub fn contains(&self, id: ModelId) -> bool {
        matches!(self.nodes.get(id.index()), Some(Some(_)))
    }

    pub fn is_atomic(&self, id: ModelId) -> bool {
        matches!(self.nodes.get(id.index()), Some(Some(Node::Atomic(_))))
    }

    pub fn model_name(&self, id: ModelId) -> Option<&str> {
        self.nodes.get(id.index())?.as_ref().map(|n| match n {
            Node::Atomic(a) => a.name.as_str(),
            Node::Coupled(c) => c.name.as_str(),
        })
    }

    pub fn parent(&self, id: ModelId) -> Option<ModelId> {
        match self.nodes.get(id.index())?.as_ref()? {
            Node::Atomic(a) => Some(a.parent),
            Node::Coupled(c) => c.parent,
        }
    }

    /// Children of a coupled model in Select order.
    pub fn children(&self, coupled: ModelId) -> &[ModelId] {
        match self.nodes.get(coupled.index()) {
            Some(Some(Node::Coupled(c))) => &c.children,
            _ => &[],
        }
    }

    pub fn t_next(&self, id: ModelId) -> Option<SimTime> {
        self.atomic_node(id).map(|a| a.t_next)
    }

    pub fn last_event_time(&self, id: ModelId) -> Option<SimTime> {
        self.atomic_node(id).map(|a| a.last_event)
    }

    /// Downcasts an atomic model's behaviour to its concrete type.
    pub fn atomic_state<T: 'static>(&self, id: ModelId) -> Option<&T> {
        self.atomic_node(id)?.behaviour.as_any().downcast_ref()
    }

    /// Downcasts a coupled model's macro behaviour to its concrete type.
    pub fn macro_state<T: 'static>(&self, coupled: ModelId) -> Option<&T> {
        match self.nodes.get(coupled.index())?.as_ref()? {
            Node::Coupled(c) => c.macro_state.behaviour().as_any().downcast_ref(),
            Node::Atomic(_) => None,
        }
    }

    pub fn last_global_time(&self, coupled: ModelId) -> Option<SimTime> {
        match self.nodes.get(coupled.index())?.as_ref()? {
            Node::Coupled(c) => Some(c.macro_state.last_global_time()),
            Node::Atomic(_) => None,
        }
    }

    /// Downward query issued from outside the model tree (e.g. an observer).
    pub fn query(&mut self, coupled: ModelId, query: &F::Query) -> Result<F::Answer, QueryError> {
        view_in(&mut self.nodes, true, coupled)?.query(query)
    }

    /// Schedules an input event on one of the root model's input ports.
    pub fn inject(&mut self, at: SimTime, port: Port, payload: F::Msg) -> Result<(), SimError> {
        if at < self.clock {
            return Err(SimError::Config(format!("cannot inject at {at}, clock is already {}", self.clock)));
        }
        self.injected.insert((at, self.injected_seq), (port, Rc::new(payload)));
        self.injected_seq += 1;
        Ok(())
    }

    /// Reserves a fresh id for a [`StructureChange::AddAtomic`].
    pub fn reserve_id(&mut self) -> ModelId {
        self.ids.reserve()
    }

    /// Processes the next event. With nothing scheduled the report is marked
    /// quiescent and the clock does not move.
    pub fn step(&mut self) -> Result<EventReport, SimError> {
        let t_internal = self.schedule.first().map_or(SimTime::INFINITY, |(t, _, _)| *t);
        let t_injected = self.injected.first_key_value().map_or(SimTime::INFINITY, |((t, _), _)| *t);
        if t_internal.is_infinite() && t_injected.is_infinite() {
            return Ok(EventReport {
                time: self.clock,
                quiescent: true,
                ..EventReport::default()
            });
        }

        let mut report = EventReport::default();
        // Internal events win ties against injected inputs.
        if t_internal <= t_injected {
            let (t, _, id) = self.schedule.first().cloned().expect("nonempty schedule");
            self.clock = t;
            report.time = t;
            self.internal_event(id, &mut report)?;
        } else {
            let ((t, _), (port, payload)) = self.injected.pop_first().expect("nonempty injection queue");
            self.clock = t;
            report.time = t;
            self.injected_event(port, payload, &mut report)?;
        }
        self.flush_mailboxes(&mut report)?;
        self.structure_phase(&mut report)?;
        Ok(report)
    }

    /// Steps while the next event time is `<= t_end`. The clock ends at
    /// `t_end`, or at the last event time if the model went quiescent.
    pub fn run_until(&mut self, t_end: SimTime) -> Result<TraceSummary, SimError> {
        self.run_until_with(t_end, |_, _| {})
    }

    /// [`run_until`](Self::run_until) with an observer called after every step.
    pub fn run_until_with(
        &mut self,
        t_end: SimTime,
        mut observer: impl FnMut(&Self, &EventReport),
    ) -> Result<TraceSummary, SimError> {
        if t_end < self.clock {
            return Err(SimError::Config(format!("t_end {t_end} is before the clock {}", self.clock)));
        }
        let mut summary = TraceSummary::default();
        loop {
            let next = self.next_event_time();
            if next > t_end {
                if next.is_finite() {
                    self.clock = t_end;
                }
                break;
            }
            let report = self.step()?;
            summary.absorb(&report);
            observer(self, &report);
        }
        summary.final_clock = self.clock;
        Ok(summary)
    }

    fn internal_event(&mut self, id: ModelId, report: &mut EventReport) -> Result<(), SimError> {
        report.internal = Some(id);
        let mut outbox = Outbox::default();
        self.call_atomic(id, |m, ctx| m.output(ctx, &mut outbox))?;

        let mut receivers: BTreeMap<(SelectKey, ModelId), Vec<Input<F::Msg>>> = BTreeMap::new();
        for (port, payload) in outbox.drain() {
            let source = PortRef::output(id, port);
            self.route(source, &payload, Some(id), &mut receivers, report)?;
        }

        self.call_atomic(id, |m, ctx| m.delta_int(ctx))?;
        self.after_transition(id, TraceKind::Internal, report)?;

        // Messages that hit a model at its own event time wait for its
        // internal transition, then arrive with zero elapsed time.
        if let Some(inputs) = self.deferred.remove(&id) {
            self.call_atomic(id, |m, ctx| m.delta_ext(SimTime::ZERO, &inputs, ctx))?;
            self.after_transition(id, TraceKind::External, report)?;
            report.external.push(id);
        }

        self.deliver(receivers, report)
    }

    fn injected_event(&mut self, port: Port, payload: Rc<F::Msg>, report: &mut EventReport) -> Result<(), SimError> {
        let mut receivers = BTreeMap::new();
        let source = PortRef::input(self.root(), port);
        self.route(source, &payload, None, &mut receivers, report)?;
        self.deliver(receivers, report)
    }

    fn route(
        &mut self,
        source: PortRef,
        payload: &Rc<F::Msg>,
        imminent: Option<ModelId>,
        receivers: &mut BTreeMap<(SelectKey, ModelId), Vec<Input<F::Msg>>>,
        report: &mut EventReport,
    ) -> Result<(), SimError> {
        let routes = self.routes_from(source)?;
        for route in routes.iter() {
            match *route {
                Route::Atomic(dest) => {
                    report.messages_routed += 1;
                    let input = Input {
                        port: dest.port,
                        source,
                        payload: Rc::clone(payload),
                    };
                    let node = self
                        .atomic_node(dest.model)
                        .ok_or_else(|| SimError::Routing(format!("{dest} does not exist")))?;
                    if Some(dest.model) == imminent || node.t_next == self.clock {
                        self.deferred.entry(dest.model).or_default().push(input);
                    } else {
                        receivers.entry((Rc::clone(&node.key), dest.model)).or_default().push(input);
                    }
                }
                Route::RootOut(port) => self.root_outputs.push((self.clock, port, Rc::clone(payload))),
            }
        }
        Ok(())
    }

    fn deliver(
        &mut self,
        receivers: BTreeMap<(SelectKey, ModelId), Vec<Input<F::Msg>>>,
        report: &mut EventReport,
    ) -> Result<(), SimError> {
        for ((_, rid), inputs) in receivers {
            let last = self.atomic_node(rid).map(|a| a.last_event).unwrap_or(self.clock);
            let elapsed = self.clock - last;
            self.call_atomic(rid, |m, ctx| m.delta_ext(elapsed, &inputs, ctx))?;
            self.after_transition(rid, TraceKind::External, report)?;
            report.external.push(rid);
        }
        Ok(())
    }

    /// Bookkeeping shared by every transition: legitimacy check,
    /// rescheduling, upward causation and structure requests.
    fn after_transition(&mut self, id: ModelId, kind: TraceKind, report: &mut EventReport) -> Result<(), SimError> {
        let clock = self.clock;
        let macro_enabled = self.macro_enabled;
        let node = atomic_in(&mut self.nodes, id)?;
        let ta = node.behaviour.time_advance();
        let ta = SimTime::new(ta).ok_or_else(|| SimError::Legitimacy {
            model: node.name.clone(),
            time: clock,
            ta,
        })?;
        self.schedule.remove(&(node.t_next, Rc::clone(&node.key), id));
        node.last_event = clock;
        node.t_next = clock + ta;
        self.schedule.insert((node.t_next, Rc::clone(&node.key), id));

        let up = node.behaviour.take_yup();
        let wants_change = node.behaviour.wants_structure_change();
        let parent = node.parent;
        let order = Rc::clone(&node.key);
        let yup = up.is_some() && macro_enabled;
        if let Some(trace) = &mut self.trace {
            trace.push(TraceRecord {
                time: clock,
                model: node.name.clone(),
                kind,
                yup,
            });
        }
        let parent = self.coupled_mut(parent)?;
        if let (Some(up), true) = (up, macro_enabled) {
            parent.macro_state.post(order, up);
            report.yup_count += 1;
        }
        if wants_change {
            parent.requests.push(id);
        }
        Ok(())
    }

    /// Runs one global transition per nonempty mailbox, deepest coupled
    /// models first so cascaded values reach their parents in the same step.
    fn flush_mailboxes(&mut self, report: &mut EventReport) -> Result<(), SimError> {
        let mut order: Vec<(usize, SelectKey, ModelId)> = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n {
                Some(Node::Coupled(c)) => Some((c.depth, Rc::clone(&c.key), ModelId(i as u32))),
                _ => None,
            })
            .collect();
        order.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));

        for (_, _, cid) in order {
            let mut node = take_coupled(&mut self.nodes, cid)?;
            if node.macro_state.mailbox_len() == 0 {
                self.nodes[cid.index()] = Some(Node::Coupled(node));
                continue;
            }
            let batch = node.macro_state.take_mailbox();
            let result = {
                let parent = match node.parent {
                    Some(p) if self.macro_enabled => view_in(&mut self.nodes, true, p).ok(),
                    _ => None,
                };
                let mut ctx = GlobalContext::new(
                    self.clock,
                    cid,
                    &mut node.global_rng,
                    parent,
                    &mut self.pending,
                    &mut self.ids,
                );
                node.macro_state.deliver_yup(batch, &mut ctx)
            };
            let parent = node.parent;
            let order = Rc::clone(&node.key);
            let name = node.name.clone();
            self.nodes[cid.index()] = Some(Node::Coupled(node));
            let up = result.map_err(|source| SimError::Model {
                model: name,
                time: self.clock,
                source,
            })?;
            report.global_transitions += 1;
            if let (Some(up), Some(p)) = (up, parent) {
                self.coupled_mut(p)?.macro_state.post(order, up);
            }
        }
        Ok(())
    }

    fn structure_phase(&mut self, report: &mut EventReport) -> Result<(), SimError> {
        let requesting: Vec<ModelId> = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n {
                Some(Node::Coupled(c)) if !c.requests.is_empty() => Some(ModelId(i as u32)),
                _ => None,
            })
            .collect();
        for cid in requesting {
            let mut node = take_coupled(&mut self.nodes, cid)?;
            let requests = std::mem::take(&mut node.requests);
            let result = {
                let parent = match node.parent {
                    Some(p) if self.macro_enabled => view_in(&mut self.nodes, true, p).ok(),
                    _ => None,
                };
                let mut ctx = GlobalContext::new(
                    self.clock,
                    cid,
                    &mut node.global_rng,
                    parent,
                    &mut self.pending,
                    &mut self.ids,
                );
                node.macro_state.behaviour_mut().structure_transition(&requests, &mut ctx)
            };
            let name = node.name.clone();
            self.nodes[cid.index()] = Some(Node::Coupled(node));
            result.map_err(|source| SimError::Model {
                model: name,
                time: self.clock,
                source,
            })?;
        }

        if !self.pending.is_empty() {
            let changes = std::mem::take(&mut self.pending);
            report.structure = Some(self.apply_changes(changes)?);
        }
        Ok(())
    }

    fn routes_from(&mut self, source: PortRef) -> Result<Rc<[Route]>, SimError> {
        if let Some(routes) = self.route_cache.get(&source) {
            return Ok(Rc::clone(routes));
        }
        let mut routes = Vec::new();
        self.resolve(source, &mut routes, 0)?;
        let routes: Rc<[Route]> = routes.into();
        self.route_cache.insert(source, Rc::clone(&routes));
        Ok(routes)
    }

    /// Follows couplings through coupled-model boundaries down to atomic
    /// input ports.
    fn resolve(&self, from: PortRef, out: &mut Vec<Route>, depth: usize) -> Result<(), SimError> {
        if depth > self.nodes.len() {
            return Err(SimError::Routing(format!("coupling cycle through {from}")));
        }
        for dest in self.couplings.destinations(from) {
            match self.nodes.get(dest.model.index()) {
                Some(Some(Node::Atomic(_))) if dest.direction == Direction::Input => out.push(Route::Atomic(dest)),
                Some(Some(Node::Atomic(_))) => {
                    return Err(SimError::Routing(format!("{from} feeds the output port {dest}")));
                }
                Some(Some(Node::Coupled(c))) if c.parent.is_none() && dest.direction == Direction::Output => {
                    out.push(Route::RootOut(dest.port))
                }
                Some(Some(Node::Coupled(_))) => self.resolve(dest, out, depth + 1)?,
                _ => return Err(SimError::Routing(format!("{from} is coupled to missing model {}", dest.model))),
            }
        }
        Ok(())
    }

    pub(crate) fn invalidate_routes(&mut self) {
        self.route_cache.clear();
    }

    /// Initializes a freshly inserted atomic and schedules it.
    pub(crate) fn enter(&mut self, id: ModelId) -> Result<(), SimError> {
        self.call_atomic(id, |m, ctx| m.initialize(ctx))?;
        let clock = self.clock;
        let node = atomic_in(&mut self.nodes, id)?;
        let ta = node.behaviour.time_advance();
        let ta = SimTime::new(ta).ok_or_else(|| SimError::Legitimacy {
            model: node.name.clone(),
            time: clock,
            ta,
        })?;
        node.last_event = clock;
        node.t_next = clock + ta;
        self.schedule.insert((node.t_next, Rc::clone(&node.key), id));
        self.alive += 1;
        Ok(())
    }

    pub(crate) fn insert_atomic(
        &mut self,
        id: ModelId,
        parent: ModelId,
        name: String,
        behaviour: Box<dyn Atomic<F>>,
    ) -> Result<(), SimError> {
        if id.0 >= self.ids.peek() || self.removed.contains(&id) || self.contains(id) {
            return Err(SimError::Structure(format!("id {id} was not reserved or is already used")));
        }
        let p = self
            .coupled_mut(parent)
            .map_err(|_| SimError::Structure(format!("parent {parent} is not a live coupled model")))?;
        let key = child_key(p);
        p.adopt(id, &name).map_err(|e| SimError::Structure(e.to_string()))?;
        if self.nodes.len() <= id.index() {
            self.nodes.resize_with(id.index() + 1, || None);
        }
        self.nodes[id.index()] = Some(Node::Atomic(AtomicNode {
            name,
            parent,
            key,
            behaviour,
            rng: RngStream::new(self.seed, StreamId::new(id.0 as u64, LANE_ATOMIC)),
            last_event: self.clock,
            t_next: SimTime::INFINITY,
        }));
        self.enter(id)
    }

    /// Drops an atomic, its schedule entry, pending inputs and couplings.
    /// Returns the number of couplings purged.
    pub(crate) fn drop_atomic(&mut self, id: ModelId) -> Result<usize, SimError> {
        let node = match self.nodes.get_mut(id.index()).and_then(Option::take) {
            Some(Node::Atomic(a)) => a,
            Some(other) => {
                self.nodes[id.index()] = Some(other);
                return Err(SimError::Structure(format!("{id} is not an atomic model")));
            }
            None => return Err(SimError::Structure(format!("{id} does not exist"))),
        };
        self.schedule.remove(&(node.t_next, Rc::clone(&node.key), id));
        self.deferred.remove(&id);
        self.removed.insert(id);
        self.alive -= 1;
        if let Ok(parent) = self.coupled_mut(node.parent) {
            parent.children.retain(|c| *c != id);
            parent.child_names.remove(&node.name);
            parent.requests.retain(|c| *c != id);
        }
        Ok(self.couplings.purge(id))
    }

    pub(crate) fn node_info(&self, id: ModelId) -> Option<NodeInfo> {
        match self.nodes.get(id.index())?.as_ref()? {
            Node::Atomic(a) => Some(NodeInfo {
                parent: Some(a.parent),
                coupled: false,
            }),
            Node::Coupled(c) => Some(NodeInfo {
                parent: c.parent,
                coupled: true,
            }),
        }
    }

    pub(crate) fn validate(&self, from: PortRef, to: PortRef) -> Result<ModelId, SimError> {
        validate_coupling(from, to, |id| self.node_info(id))
    }

    fn call_atomic(
        &mut self,
        id: ModelId,
        f: impl FnOnce(&mut dyn Atomic<F>, &mut Context<'_, F>) -> Result<(), ModelError>,
    ) -> Result<(), SimError> {
        let clock = self.clock;
        let mut node = match self.nodes.get_mut(id.index()).and_then(Option::take) {
            Some(Node::Atomic(a)) => a,
            Some(other) => {
                self.nodes[id.index()] = Some(other);
                return Err(SimError::Internal(format!("{id} is not an atomic model")));
            }
            None => return Err(SimError::Internal(format!("{id} does not exist"))),
        };
        let result = {
            let view = view_in(&mut self.nodes, self.macro_enabled, node.parent);
            let mut ctx = Context::new(clock, id, &mut node.rng, view);
            f(node.behaviour.as_mut(), &mut ctx)
        };
        let name = node.name.clone();
        self.nodes[id.index()] = Some(Node::Atomic(node));
        result.map_err(|source| SimError::Model {
            model: name,
            time: clock,
            source,
        })
    }

    fn atomic_node(&self, id: ModelId) -> Option<&AtomicNode<F>> {
        match self.nodes.get(id.index())?.as_ref()? {
            Node::Atomic(a) => Some(a),
            Node::Coupled(_) => None,
        }
    }

    pub(crate) fn coupled_mut(&mut self, id: ModelId) -> Result<&mut CoupledNode<F>, SimError> {
        match self.nodes.get_mut(id.index()) {
            Some(Some(Node::Coupled(c))) => Ok(c),
            _ => Err(SimError::Config(format!("{id} is not a coupled model"))),
        }
    }
}

impl<F: Family> CoupledNode<F> {
    fn adopt(&mut self, id: ModelId, name: &str) -> Result<(), SimError> {
        if self.child_names.contains_key(name) {
            return Err(SimError::Config(format!("duplicate model id {name:?} in {}", self.name)));
        }
        self.child_names.insert(name.to_owned(), id);
        self.children.push(id);
        self.next_position += 1;
        Ok(())
    }
}

fn child_key<F: Family>(parent: &CoupledNode<F>) -> SelectKey {
    let mut key = parent.key.to_vec();
    key.push(parent.next_position);
    key.into()
}

fn atomic_in<F: Family>(nodes: &mut [Option<Node<F>>], id: ModelId) -> Result<&mut AtomicNode<F>, SimError> {
    match nodes.get_mut(id.index()) {
        Some(Some(Node::Atomic(a))) => Ok(a),
        _ => Err(SimError::Internal(format!("{id} is not a live atomic model"))),
    }
}

fn take_coupled<F: Family>(nodes: &mut [Option<Node<F>>], id: ModelId) -> Result<CoupledNode<F>, SimError> {
    match nodes.get_mut(id.index()).and_then(Option::take) {
        Some(Node::Coupled(c)) => Ok(c),
        other => {
            nodes[id.index()] = other;
            Err(SimError::Internal(format!("{id} is not a coupled model")))
        }
    }
}

fn view_in<F: Family>(
    nodes: &mut [Option<Node<F>>],
    enabled: bool,
    coupled: ModelId,
) -> Result<MacroView<'_, F>, QueryError> {
    if !enabled {
        return Err(QueryError::Disabled);
    }
    match nodes.get_mut(coupled.index()) {
        Some(Some(Node::Coupled(c))) => {
            let behaviour: &dyn MacroBehaviour<F> = c.macro_state.behaviour();
            Ok(MacroView::new(behaviour, &mut c.query_rng))
        }
        _ => Err(QueryError::NoMacro),
    }
}

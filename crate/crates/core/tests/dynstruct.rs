mod common;

use common::*;
use ebdevs::{
    AppliedReport, CoupledSpec, GlobalContext, MacroBehaviour, ModelError, PortRef, QueryError, RngStream, SimError,
    SimTime, Simulation, StructureChange,
};

/// Adds one node per batch and wires it to `hub`.
struct Grower {
    hub: ebdevs::ModelId,
    created: Vec<ebdevs::ModelId>,
}

impl MacroBehaviour<Fam> for Grower {
    fn global_transition(
        &mut self,
        _elapsed: SimTime,
        _batch: Vec<String>,
        ctx: &mut GlobalContext<'_, Fam>,
    ) -> Result<Option<String>, ModelError> {
        let name = format!("n{}", self.created.len());
        let id = ctx.add_atomic(name.clone(), Probe::new(&name, vec![0.5], false).silent());
        ctx.connect(PortRef::output(id, OUT), PortRef::input(self.hub, IN));
        self.created.push(id);
        Ok(None)
    }

    fn v_down(&self, _query: &&'static str, _rng: &mut RngStream) -> Result<usize, QueryError> {
        Ok(self.created.len())
    }
}

fn grower_sim() -> (Simulation<Fam>, ebdevs::ModelId, ebdevs::ModelId) {
    let mut spec = CoupledSpec::<Fam>::new("root");
    let root = spec.root();
    let hub = spec.add_atomic(root, "hub", Probe::passive("hub")).unwrap();
    let _clock = spec.add_atomic(root, "tick", Probe::periodic("tick", 1.0).with_yup().silent()).unwrap();
    spec.set_macro(root, Grower { hub, created: vec![] }).unwrap();
    (Simulation::initialize(spec, 1).unwrap(), root, hub)
}

#[test]
fn global_transition_adds_and_connects() {
    let (mut sim, root, hub) = grower_sim();
    let components = sim.alive_atomics();
    let couplings = sim.coupling_count();
    let report = sim.step().unwrap();
    let applied = report.structure.unwrap();
    assert_eq!(applied.added.len(), 1);
    assert_eq!(applied.connected, 1);
    assert_eq!(sim.alive_atomics(), components + 1);
    assert_eq!(sim.coupling_count(), couplings + 1);
    assert_eq!(sim.schedule_len(), sim.alive_atomics());

    let new = applied.added[0];
    assert_eq!(sim.last_event_time(new), Some(t(1.0)));
    assert_eq!(sim.t_next(new), Some(t(1.5)));
    assert_eq!(sim.children(root).last(), Some(&new));

    sim.run_until(t(1.5)).unwrap();
    let hub_log = &sim.atomic_state::<Probe>(hub).unwrap().log;
    assert_eq!(hub_log.len(), 0, "silent nodes send nothing");
}

#[test]
fn changes_visible_from_next_step_only() {
    struct Wire {
        from: ebdevs::ModelId,
        to: ebdevs::ModelId,
        done: bool,
    }
    impl MacroBehaviour<Fam> for Wire {
        fn global_transition(
            &mut self,
            _elapsed: SimTime,
            _batch: Vec<String>,
            ctx: &mut GlobalContext<'_, Fam>,
        ) -> Result<Option<String>, ModelError> {
            if !self.done {
                ctx.connect(PortRef::output(self.from, OUT), PortRef::input(self.to, IN));
                self.done = true;
            }
            Ok(None)
        }
        fn v_down(&self, _q: &&'static str, _rng: &mut RngStream) -> Result<usize, QueryError> {
            Ok(0)
        }
    }

    let mut spec = CoupledSpec::<Fam>::new("root");
    let root = spec.root();
    let a = spec.add_atomic(root, "a", Probe::periodic("a", 1.0).with_yup()).unwrap();
    let b = spec.add_atomic(root, "b", Probe::passive("b")).unwrap();
    spec.set_macro(root, Wire { from: a, to: b, done: false }).unwrap();
    let mut sim = Simulation::initialize(spec, 1).unwrap();

    let first = sim.step().unwrap();
    assert_eq!(first.messages_routed, 0);
    assert!(sim.atomic_state::<Probe>(b).unwrap().log.is_empty());
    let second = sim.step().unwrap();
    assert_eq!(second.messages_routed, 1);
    assert_eq!(sim.atomic_state::<Probe>(b).unwrap().log.len(), 1);
}

#[test]
fn removal_purges_couplings_and_schedule() {
    let mut spec = CoupledSpec::<Fam>::new("root");
    let root = spec.root();
    let hub = spec.add_atomic(root, "hub", Probe::periodic("hub", 1.0)).unwrap();
    let others: Vec<_> = (0..3)
        .map(|i| spec.add_atomic(root, format!("o{i}"), Probe::passive("o")).unwrap())
        .collect();
    spec.connect(PortRef::output(hub, OUT), PortRef::input(others[0], IN)).unwrap();
    spec.connect(PortRef::output(hub, OUT), PortRef::input(others[1], IN)).unwrap();
    spec.connect(PortRef::output(others[2], OUT), PortRef::input(hub, IN)).unwrap();
    spec.connect(PortRef::output(others[0], OUT), PortRef::input(others[1], IN)).unwrap();
    let mut sim = Simulation::initialize(spec, 1).unwrap();
    let schedule = sim.schedule_len();

    let report = sim.apply_changes(vec![StructureChange::RemoveAtomic(hub)]).unwrap();
    assert_eq!(report.removed, vec![hub]);
    assert_eq!(sim.coupling_count(), 1);
    assert_eq!(sim.schedule_len(), schedule - 1);
    assert!(sim.couplings().iter().all(|(a, b)| sim.contains(a.model) && sim.contains(b.model)));
    assert_eq!(sim.next_event_time(), SimTime::INFINITY);
}

#[test]
fn empty_change_sequence_is_noop() {
    let (mut sim, _, _) = grower_sim();
    let before = (sim.alive_atomics(), sim.coupling_count(), sim.schedule_len());
    let report = sim.apply_changes(Vec::new()).unwrap();
    assert_eq!(report, AppliedReport::default());
    assert!(report.is_empty());
    assert_eq!(before, (sim.alive_atomics(), sim.coupling_count(), sim.schedule_len()));
}

#[test]
fn invalid_changes_rejected() {
    let (mut sim, root, hub) = grower_sim();
    let ghost = ebdevs::ModelId(99);
    assert!(matches!(
        sim.apply_changes(vec![StructureChange::RemoveAtomic(ghost)]),
        Err(SimError::Structure(_))
    ));
    assert!(matches!(
        sim.apply_changes(vec![StructureChange::Connect(
            PortRef::output(ghost, OUT),
            PortRef::input(hub, IN)
        )]),
        Err(SimError::Structure(_))
    ));
    let tick = sim.children(root)[1];
    assert!(matches!(
        sim.apply_changes(vec![StructureChange::Connect(PortRef::input(tick, IN), PortRef::input(hub, IN))]),
        Err(SimError::Coupling(_))
    ));
    assert!(matches!(
        sim.apply_changes(vec![StructureChange::MoveModel {
            model: hub,
            new_parent: root
        }]),
        Err(SimError::Structure(_))
    ));
    // Ids must come from the allocator and are never reused.
    assert!(sim
        .apply_changes(vec![StructureChange::AddAtomic {
            id: ghost,
            parent: root,
            name: "x".into(),
            behaviour: Box::new(Probe::passive("x")),
        }])
        .is_err());
    sim.apply_changes(vec![StructureChange::RemoveAtomic(hub)]).unwrap();
    assert!(sim
        .apply_changes(vec![StructureChange::AddAtomic {
            id: hub,
            parent: root,
            name: "hub2".into(),
            behaviour: Box::new(Probe::passive("x")),
        }])
        .is_err());
}

#[test]
fn external_additions_use_reserved_ids() {
    let (mut sim, root, _) = grower_sim();
    sim.run_until(t(0.5)).unwrap();
    let id = sim.reserve_id();
    let report = sim
        .apply_changes(vec![StructureChange::AddAtomic {
            id,
            parent: root,
            name: "late".into(),
            behaviour: Box::new(Probe::new("late", vec![0.25], false)),
        }])
        .unwrap();
    assert_eq!(report.added, vec![id]);
    assert_eq!(sim.t_next(id), Some(t(0.75)));
    assert_eq!(sim.model_name(id), Some("late"));
}

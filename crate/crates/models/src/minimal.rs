//! The smallest EB-DEVS system: one coupled model holding one atomic model.
//!
//! The atomic starts in `S1`, undergoes an internal transition to `S2` after
//! `ta(S1)`, then two external transitions `S2 → S3 → S4` on inputs `x1` and
//! `x2`. The first two transitions raise upward causation values; the macro
//! state counts global transitions (`s_g1`, `s_g2`, ...).

use ebdevs::{
    Atomic, Context, CoupledSpec, Family, GlobalContext, HookResult, Input, MacroBehaviour, ModelError, ModelId,
    Outbox, Port, PortRef, QueryError, RngStream, SimError, SimTime, Simulation, TraceRecord,
};

pub struct MinimalFamily;

impl Family for MinimalFamily {
    type Msg = &'static str;
    type Up = State;
    type Query = ();
    /// Index `k` of the current macro state `s_gk`.
    type Answer = u32;
}

pub const IN: Port = Port::new("in");
pub const OUT: Port = Port::new("out");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum State {
    S1,
    S2,
    S3,
    S4,
}

pub struct MinimalAtomic {
    pub state: State,
    pub ta_s1: f64,
    pub history: Vec<(f64, State)>,
    /// Macro state index seen through the downward channel at each transition.
    pub seen: Vec<Result<u32, QueryError>>,
    pending: Option<State>,
}

impl MinimalAtomic {
    pub fn new(ta_s1: f64) -> Self {
        Self {
            state: State::S1,
            ta_s1,
            history: vec![(0.0, State::S1)],
            seen: Vec::new(),
            pending: None,
        }
    }
}

impl Atomic<MinimalFamily> for MinimalAtomic {
    fn delta_int(&mut self, ctx: &mut Context<'_, MinimalFamily>) -> HookResult {
        self.seen.push(ctx.v_down(&()));
        if self.state == State::S1 {
            self.state = State::S2;
            self.pending = Some(State::S2);
        }
        self.history.push((ctx.now().value(), self.state));
        Ok(())
    }

    fn delta_ext(
        &mut self,
        _elapsed: SimTime,
        inputs: &[Input<&'static str>],
        ctx: &mut Context<'_, MinimalFamily>,
    ) -> HookResult {
        self.seen.push(ctx.v_down(&()));
        for input in inputs {
            self.state = match (self.state, *input.payload) {
                (State::S2, "x1") => {
                    self.pending = Some(State::S3);
                    State::S3
                }
                (State::S3, "x2") => State::S4,
                (s, _) => s,
            };
        }
        self.history.push((ctx.now().value(), self.state));
        Ok(())
    }

    fn output(&mut self, _ctx: &mut Context<'_, MinimalFamily>, out: &mut Outbox<&'static str>) -> HookResult {
        if self.state == State::S1 {
            out.send(OUT, "y1");
        }
        Ok(())
    }

    fn time_advance(&self) -> f64 {
        match self.state {
            State::S1 => self.ta_s1,
            _ => f64::INFINITY,
        }
    }

    fn take_yup(&mut self) -> Option<State> {
        self.pending.take()
    }
}

/// Macro state `s_gk`: `k` starts at 1 and grows by one per global transition.
pub struct MinimalMacro {
    pub index: u32,
    pub deliveries: Vec<(f64, f64, Vec<State>)>,
}

impl Default for MinimalMacro {
    fn default() -> Self {
        Self {
            index: 1,
            deliveries: Vec::new(),
        }
    }
}

impl MacroBehaviour<MinimalFamily> for MinimalMacro {
    fn global_transition(
        &mut self,
        elapsed: SimTime,
        batch: Vec<State>,
        ctx: &mut GlobalContext<'_, MinimalFamily>,
    ) -> Result<Option<State>, ModelError> {
        self.index += 1;
        self.deliveries.push((ctx.now().value(), elapsed.value(), batch));
        Ok(None)
    }

    fn v_down(&self, _query: &(), _rng: &mut RngStream) -> Result<u32, QueryError> {
        Ok(self.index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimalOutcome {
    pub history: Vec<(f64, State)>,
    pub outputs: Vec<(f64, &'static str)>,
    pub seen: Vec<Result<u32, QueryError>>,
    /// `(time, elapsed, batch)` of every global transition.
    pub global_transitions: Vec<(f64, f64, Vec<State>)>,
    pub trace: Vec<TraceRecord>,
}

pub fn build(ta_s1: f64) -> Result<(CoupledSpec<MinimalFamily>, ModelId), SimError> {
    let mut spec = CoupledSpec::new("c1");
    let root = spec.root();
    let m1 = spec.add_atomic(root, "m1", MinimalAtomic::new(ta_s1))?;
    spec.connect(PortRef::input(root, IN), PortRef::input(m1, IN))?;
    spec.connect(PortRef::output(m1, OUT), PortRef::output(root, OUT))?;
    spec.set_macro(root, MinimalMacro::default())?;
    Ok((spec, m1))
}

/// Runs the trajectory with inputs `x1` at `x1_at` and `x2` at `x2_at`.
pub fn run(ta_s1: f64, x1_at: f64, x2_at: f64, t_end: f64, macrolevel: bool) -> Result<MinimalOutcome, SimError> {
    let (spec, m1) = build(ta_s1)?;
    let mut sim = Simulation::initialize_with(spec, 0, macrolevel)?;
    sim.enable_trace();
    let at = |x: f64| SimTime::new(x).ok_or_else(|| SimError::Config(format!("invalid input time {x}")));
    sim.inject(at(x1_at)?, IN, "x1")?;
    sim.inject(at(x2_at)?, IN, "x2")?;
    sim.run_until(at(t_end)?)?;

    let atomic = sim
        .atomic_state::<MinimalAtomic>(m1)
        .ok_or_else(|| SimError::Internal("minimal atomic missing".into()))?;
    let history = atomic.history.clone();
    let seen = atomic.seen.clone();
    let global_transitions = sim
        .macro_state::<MinimalMacro>(sim.root())
        .map(|m| m.deliveries.clone())
        .unwrap_or_default();
    let outputs = sim
        .take_root_outputs()
        .into_iter()
        .map(|(t, _, payload)| (t.value(), *payload))
        .collect();
    Ok(MinimalOutcome {
        history,
        outputs,
        seen,
        global_transitions,
        trace: sim.take_trace(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_and_macro_states() {
        let out = run(2.0, 3.0, 4.5, 10.0, true).unwrap();
        assert_eq!(
            out.history,
            vec![(0.0, State::S1), (2.0, State::S2), (3.0, State::S3), (4.5, State::S4)]
        );
        assert_eq!(out.outputs, vec![(2.0, "y1")]);
        assert_eq!(out.seen, vec![Ok(1), Ok(2), Ok(3)]);
        assert_eq!(
            out.global_transitions,
            vec![(2.0, 2.0, vec![State::S2]), (3.0, 1.0, vec![State::S3])]
        );
    }

    #[test]
    fn classic_run_has_same_states() {
        let eb = run(2.0, 3.0, 4.5, 10.0, true).unwrap();
        let classic = run(2.0, 3.0, 4.5, 10.0, false).unwrap();
        assert_eq!(eb.history, classic.history);
        assert!(classic.global_transitions.is_empty());
    }
}

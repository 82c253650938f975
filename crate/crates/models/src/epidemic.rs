//! SIR contagion over a configuration-model network revealed on the fly.
//!
//! Every agent owns a Poisson number of half-edges. Nothing is wired at the
//! start: when an agent becomes infectious the environment pairs all of its
//! free half-edges with other agents' half-edges, drawn size-biased, and
//! adds the couplings. An infectious agent runs an exponential race between
//! recovery and infecting one of its susceptible neighbours. With a
//! quarantine threshold set, susceptible agents may refuse infections while
//! the infectious share exceeds it.

pub mod ode;

use ebdevs::{
    Atomic, Context, CoupledSpec, Family, GlobalContext, HookResult, Input, MacroBehaviour, ModelError, ModelId,
    Outbox, Port, PortRef, QueryError, RngStream, SimError, SimTime, Simulation,
};

use self::ode::{integrate_ode, OdeParams, OdeState};
use crate::params::{
    ensure, grid_times, parse, parse_optional, sample_on_grid, setup_stream, unknown, ModelParams, ParamError,
    RunOptions, RunResult,
};

pub struct SirFamily;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Compartment {
    S,
    I,
    R,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SirMsg {
    Infect,
    State { agent: u32, compartment: Compartment },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SirUp {
    pub agent: u32,
    pub compartment: Compartment,
    pub new_infected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SirQuery {
    QuarantineCondition,
    Neighbours(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SirAnswer {
    Quarantine(bool),
    Neighbours(Vec<(u32, Compartment)>),
}

impl Family for SirFamily {
    type Msg = SirMsg;
    type Up = SirUp;
    type Query = SirQuery;
    type Answer = SirAnswer;
}

pub const IN: Port = Port::new("in");

/// Output port towards neighbour `agent`.
pub fn to_port(agent: u32) -> Port {
    Port::indexed("to", agent)
}

/// Model id of agent `agent`; the root coupled model holds id 0.
pub fn model_of(agent: u32) -> ModelId {
    ModelId(agent + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SirParams {
    pub agents: usize,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Quarantine threshold on the infectious share; `None` disables it.
    pub quarantine_threshold: Option<f64>,
    pub quarantine_acceptance: f64,
    pub ode_dt: f64,
}

impl Default for SirParams {
    fn default() -> Self {
        Self {
            agents: 1000,
            beta: 3.0,
            gamma: 1.0,
            lambda: 8.0,
            quarantine_threshold: None,
            quarantine_acceptance: 1.0,
            ode_dt: 1e-3,
        }
    }
}

impl SirParams {
    pub fn ode_params(&self) -> OdeParams {
        OdeParams {
            beta: self.beta,
            gamma: self.gamma,
            lambda: self.lambda,
        }
    }
}

impl ModelParams for SirParams {
    const MODEL: &'static str = "epidemic";
    const KEYS: &'static [&'static str] = &["n", "beta", "gamma", "lambda", "qt", "qa", "ode_dt"];

    fn set(&mut self, key: &str, value: &str) -> Result<(), ParamError> {
        match key {
            "n" | "agents" => self.agents = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "qt" | "quarantine_threshold" => self.quarantine_threshold = parse_optional(key, value)?,
            "qa" | "quarantine_acceptance" => self.quarantine_acceptance = parse(key, value)?,
            "ode_dt" => self.ode_dt = parse(key, value)?,
            _ => return Err(unknown(Self::MODEL, key)),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ParamError> {
        ensure(self.agents >= 1, "n", self.agents, "need at least one agent")?;
        ensure(self.beta >= 0.0 && self.beta.is_finite(), "beta", self.beta, "must be non-negative")?;
        ensure(self.gamma > 0.0 && self.gamma.is_finite(), "gamma", self.gamma, "must be positive")?;
        ensure(self.lambda >= 0.0 && self.lambda.is_finite(), "lambda", self.lambda, "must be non-negative")?;
        if let Some(qt) = self.quarantine_threshold {
            ensure((0.0..=1.0).contains(&qt), "qt", qt, "must lie in [0, 1]")?;
        }
        ensure(
            (0.0..=1.0).contains(&self.quarantine_acceptance),
            "qa",
            self.quarantine_acceptance,
            "must lie in [0, 1]",
        )?;
        ensure(self.ode_dt > 0.0, "ode_dt", self.ode_dt, "must be positive")
    }
}

/// Exponential race between recovery (rate `γ`) and infecting one of
/// `susceptible` neighbours (rate `β` each). Returns the waiting time and
/// whether recovery wins.
pub fn sir_time_advance(susceptible: usize, beta: f64, gamma: f64, rng: &mut RngStream) -> Result<(f64, bool), ModelError> {
    let total = susceptible as f64 * beta + gamma;
    let ta = rng.exponential(1.0 / total)?;
    let recover = susceptible == 0 || rng.uniform() < gamma / total;
    Ok((ta, recover))
}

/// An agent that accepts isolation discards the infection: with the
/// quarantine active, infection needs `coin ≥ acceptance`.
pub fn infection_proceeds(quarantined: bool, coin: f64, acceptance: f64) -> bool {
    !quarantined || coin >= acceptance
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Seed agent about to report its own infection.
    Announce,
    /// Zero-time transition telling neighbours about a state change.
    Share,
    Idle,
}

pub struct SirAgent {
    pub id: u32,
    pub compartment: Compartment,
    /// Known neighbour states, sorted by neighbour id.
    pub neighbours: Vec<(u32, Compartment)>,
    pub free_degree: u64,
    pub to_recover: bool,
    pub phase: Phase,
    /// Neighbour to infect when the race is won by contagion.
    target: Option<u32>,
    beta: f64,
    gamma: f64,
    quarantine_acceptance: f64,
    ta: f64,
    pending: Option<SirUp>,
}

impl SirAgent {
    pub fn new(id: u32, free_degree: u64, params: &SirParams) -> Self {
        let seed = id == 0;
        Self {
            id,
            compartment: if seed { Compartment::I } else { Compartment::S },
            neighbours: Vec::new(),
            free_degree,
            to_recover: false,
            phase: if seed { Phase::Announce } else { Phase::Idle },
            target: None,
            beta: params.beta,
            gamma: params.gamma,
            quarantine_acceptance: params.quarantine_acceptance,
            ta: if seed { 0.0 } else { f64::INFINITY },
            pending: None,
        }
    }

    pub fn susceptible_neighbours(&self) -> impl Iterator<Item = u32> + '_ {
        self.neighbours
            .iter()
            .filter(|(_, c)| *c == Compartment::S)
            .map(|(id, _)| *id)
    }

    fn learn(&mut self, agent: u32, compartment: Compartment) {
        match self.neighbours.binary_search_by_key(&agent, |(id, _)| *id) {
            Ok(i) => self.neighbours[i].1 = compartment,
            Err(i) => self.neighbours.insert(i, (agent, compartment)),
        }
    }

    fn race(&mut self, rng: &mut RngStream) -> HookResult {
        let susceptible: Vec<u32> = self.susceptible_neighbours().collect();
        let (ta, recover) = sir_time_advance(susceptible.len(), self.beta, self.gamma, rng)?;
        self.ta = ta;
        self.to_recover = recover;
        self.target = if recover {
            None
        } else {
            Some(susceptible[rng.index(susceptible.len())])
        };
        Ok(())
    }

    fn neighbours_from_macro(&self, ctx: &mut Context<'_, SirFamily>) -> Result<Vec<(u32, Compartment)>, ModelError> {
        match ctx.v_down(&SirQuery::Neighbours(self.id))? {
            SirAnswer::Neighbours(list) => Ok(list),
            other => Err(ModelError::Invalid(format!("unexpected answer {other:?}"))),
        }
    }

    fn become_infected(&mut self) {
        self.compartment = Compartment::I;
        self.phase = Phase::Share;
        self.ta = 0.0;
        self.pending = Some(SirUp {
            agent: self.id,
            compartment: Compartment::I,
            new_infected: true,
        });
    }
}

impl Atomic<SirFamily> for SirAgent {
    fn delta_int(&mut self, ctx: &mut Context<'_, SirFamily>) -> HookResult {
        match self.phase {
            Phase::Announce => self.become_infected(),
            Phase::Share => {
                for (agent, compartment) in self.neighbours_from_macro(ctx)? {
                    self.learn(agent, compartment);
                }
                self.phase = Phase::Idle;
                self.race(ctx.rng())?;
            }
            Phase::Idle if self.compartment == Compartment::I && self.to_recover => {
                self.compartment = Compartment::R;
                self.ta = f64::INFINITY;
                self.target = None;
                self.pending = Some(SirUp {
                    agent: self.id,
                    compartment: Compartment::R,
                    new_infected: false,
                });
            }
            Phase::Idle if self.compartment == Compartment::I => self.race(ctx.rng())?,
            Phase::Idle => self.ta = f64::INFINITY,
        }
        Ok(())
    }

    fn delta_ext(&mut self, elapsed: SimTime, inputs: &[Input<SirMsg>], ctx: &mut Context<'_, SirFamily>) -> HookResult {
        let mut changed = false;
        for input in inputs {
            match *input.payload {
                SirMsg::State { agent, compartment } => {
                    self.learn(agent, compartment);
                    changed = true;
                }
                SirMsg::Infect if self.compartment == Compartment::S => {
                    let quarantined = match ctx.v_down(&SirQuery::QuarantineCondition)? {
                        SirAnswer::Quarantine(q) => q,
                        other => return Err(ModelError::Invalid(format!("unexpected answer {other:?}"))),
                    };
                    let coin = ctx.rng().uniform();
                    if infection_proceeds(quarantined, coin, self.quarantine_acceptance) {
                        self.become_infected();
                    }
                }
                SirMsg::Infect => {}
            }
        }
        if self.compartment == Compartment::I && self.phase == Phase::Idle && self.ta.is_finite() {
            if changed {
                // Memoryless clocks: redrawing with the new rates is exact.
                self.race(ctx.rng())?;
            } else {
                self.ta = (self.ta - elapsed.value()).max(0.0);
            }
        }
        Ok(())
    }

    fn output(&mut self, ctx: &mut Context<'_, SirFamily>, out: &mut Outbox<SirMsg>) -> HookResult {
        match self.phase {
            Phase::Share => {
                let state = SirMsg::State {
                    agent: self.id,
                    compartment: self.compartment,
                };
                for (agent, _) in self.neighbours_from_macro(ctx)? {
                    out.send(to_port(agent), state);
                }
            }
            Phase::Idle if self.compartment == Compartment::I && !self.to_recover => {
                if let Some(target) = self.target {
                    out.send(to_port(target), SirMsg::Infect);
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn time_advance(&self) -> f64 {
        match self.compartment {
            Compartment::I => self.ta,
            _ if self.phase == Phase::Share => 0.0,
            _ => f64::INFINITY,
        }
    }

    fn take_yup(&mut self) -> Option<SirUp> {
        self.pending.take()
    }
}

/// Free half-edges, revealed adjacency, compartments and quarantine policy.
pub struct SirMacro {
    pub free_degree: Vec<u64>,
    pub adjacency: Vec<Vec<u32>>,
    pub compartments: Vec<Compartment>,
    pub counts: [usize; 3],
    pub quarantine_threshold: Option<f64>,
    pub ever_infected: Vec<u32>,
}

impl SirMacro {
    pub fn new(free_degree: Vec<u64>, quarantine_threshold: Option<f64>) -> Self {
        let n = free_degree.len();
        let mut compartments = vec![Compartment::S; n];
        let mut counts = [n, 0, 0];
        if n > 0 {
            compartments[0] = Compartment::I;
            counts = [n - 1, 1, 0];
        }
        Self {
            free_degree,
            adjacency: vec![Vec::new(); n],
            compartments,
            counts,
            quarantine_threshold,
            ever_infected: vec![0],
        }
    }

    pub fn len(&self) -> usize {
        self.compartments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.compartments.is_empty()
    }

    pub fn fraction(&self, c: Compartment) -> f64 {
        self.counts[c as usize] as f64 / self.len() as f64
    }

    pub fn quarantine_condition(&self) -> bool {
        self.quarantine_threshold
            .is_some_and(|qt| qt < self.fraction(Compartment::I))
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    fn set_compartment(&mut self, agent: u32, c: Compartment) {
        let slot = &mut self.compartments[agent as usize];
        self.counts[*slot as usize] -= 1;
        self.counts[c as usize] += 1;
        *slot = c;
    }

    /// Pairs the free half-edges of `agent` with half-edges of other agents
    /// drawn size-biased by free degree. Already adjacent agents are left
    /// out so no pair is coupled twice.
    pub fn reveal_edges(&mut self, agent: u32, rng: &mut RngStream) -> Result<Vec<u32>, ModelError> {
        let own = self.free_degree[agent as usize] as usize;
        if own == 0 {
            return Ok(Vec::new());
        }
        let known = &self.adjacency[agent as usize];
        let pool: Vec<(u32, f64)> = self
            .free_degree
            .iter()
            .enumerate()
            .filter(|&(j, &f)| f > 0 && j as u32 != agent && !known.contains(&(j as u32)))
            .map(|(j, &f)| (j as u32, f as f64))
            .collect();
        let count = own.min(pool.len());
        let targets = rng.weighted_sample_without_replacement(&pool, count)?;
        for &t in &targets {
            self.free_degree[agent as usize] -= 1;
            self.free_degree[t as usize] -= 1;
            self.adjacency[agent as usize].push(t);
            self.adjacency[t as usize].push(agent);
        }
        Ok(targets)
    }
}

impl MacroBehaviour<SirFamily> for SirMacro {
    fn global_transition(
        &mut self,
        _elapsed: SimTime,
        batch: Vec<SirUp>,
        ctx: &mut GlobalContext<'_, SirFamily>,
    ) -> Result<Option<SirUp>, ModelError> {
        for up in batch {
            if self.compartments[up.agent as usize] != up.compartment {
                self.set_compartment(up.agent, up.compartment);
                if up.compartment == Compartment::I && up.agent != 0 {
                    self.ever_infected.push(up.agent);
                }
            }
            if up.new_infected {
                for target in self.reveal_edges(up.agent, ctx.rng())? {
                    ctx.connect(
                        PortRef::output(model_of(up.agent), to_port(target)),
                        PortRef::input(model_of(target), IN),
                    );
                    ctx.connect(
                        PortRef::output(model_of(target), to_port(up.agent)),
                        PortRef::input(model_of(up.agent), IN),
                    );
                }
            }
        }
        Ok(None)
    }

    fn v_down(&self, query: &SirQuery, _rng: &mut RngStream) -> Result<SirAnswer, QueryError> {
        match *query {
            SirQuery::QuarantineCondition => Ok(SirAnswer::Quarantine(self.quarantine_condition())),
            SirQuery::Neighbours(agent) => {
                let list = self
                    .adjacency
                    .get(agent as usize)
                    .ok_or_else(|| QueryError::Undefined {
                        property: "NEIGHBOURS".into(),
                        reason: format!("unknown agent {agent}"),
                    })?
                    .iter()
                    .map(|&j| (j, self.compartments[j as usize]))
                    .collect();
                Ok(SirAnswer::Neighbours(list))
            }
        }
    }
}

pub fn build(params: &SirParams, seed: u64, macrolevel: bool) -> Result<Simulation<SirFamily>, SimError> {
    let mut setup = setup_stream(seed);
    let free = (0..params.agents)
        .map(|_| setup.poisson(params.lambda))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| SimError::Config(e.to_string()))?;
    let mut spec = CoupledSpec::new("population");
    let root = spec.root();
    for (i, &f) in free.iter().enumerate() {
        let id = spec.add_atomic(root, format!("agent{i}"), SirAgent::new(i as u32, f, params))?;
        debug_assert_eq!(id, model_of(i as u32));
    }
    spec.set_macro(root, SirMacro::new(free, params.quarantine_threshold))?;
    Simulation::initialize_with(spec, seed, macrolevel)
}

pub fn population(sim: &Simulation<SirFamily>) -> Option<&SirMacro> {
    sim.macro_state::<SirMacro>(sim.root())
}

pub fn run(params: &SirParams, seed: u64, opts: &RunOptions) -> Result<RunResult, SimError> {
    let mut sim = build(params, seed, opts.macrolevel)?;
    if opts.trace {
        sim.enable_trace();
    }
    let grid = opts.grid();
    let [s, i, r] = sample_on_grid(&mut sim, &grid, |sim| {
        population(sim).map_or([f64::NAN; 3], |p| {
            [
                p.fraction(Compartment::S),
                p.fraction(Compartment::I),
                p.fraction(Compartment::R),
            ]
        })
    })?;
    let times = grid_times(&grid);
    let reference = integrate_ode(OdeState::seeded(params.agents), &params.ode_params(), &times, params.ode_dt)
        .map_err(|e| SimError::Internal(format!("reference integration: {e}")))?;
    let pop = population(&sim).ok_or_else(|| SimError::Internal("population macro state missing".into()))?;

    let mut result = RunResult {
        times,
        ..RunResult::default()
    };
    result.summary.insert("peak_I".into(), i.iter().copied().fold(0.0, f64::max));
    result.summary.insert("final_R".into(), *r.last().unwrap_or(&f64::NAN));
    result.summary.insert("edges".into(), pop.edge_count() as f64);
    result.extra.insert(
        "infected_degrees".into(),
        pop.ever_infected
            .iter()
            .filter(|&&a| a != 0)
            .map(|&a| pop.adjacency[a as usize].len() as f64)
            .collect(),
    );
    result.series.push(("S_frac".into(), s));
    result.series.push(("I_frac".into(), i));
    result.series.push(("R_frac".into(), r));
    result.series.push(("ode_S".into(), reference.s));
    result.series.push(("ode_I".into(), reference.i));
    result.series.push(("ode_R".into(), reference.r));
    result.trace = sim.take_trace();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovery_probability() {
        let mut rng = RngStream::from_seed(11);
        let draws = 100_000;
        let hits = (0..draws)
            .filter(|_| sir_time_advance(2, 3.0, 1.0, &mut rng).unwrap().1)
            .count();
        assert!((hits as f64 / draws as f64 - 1.0 / 7.0).abs() < 0.01);
        assert!((0..100).all(|_| sir_time_advance(0, 3.0, 1.0, &mut rng).unwrap().1));
    }

    #[test]
    fn quarantine_coin() {
        let mut rng = RngStream::from_seed(5);
        assert!((0..1000).all(|_| infection_proceeds(false, rng.uniform(), 1.0)));
        assert!((0..1000).all(|_| !infection_proceeds(true, rng.uniform(), 1.0)));
        let draws = 100_000;
        let hits = (0..draws).filter(|_| infection_proceeds(true, rng.uniform(), 0.5)).count();
        assert!((hits as f64 / draws as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn recovered_agents_never_fire() {
        let mut a = SirAgent::new(3, 2, &SirParams::default());
        a.compartment = Compartment::R;
        assert_eq!(a.time_advance(), f64::INFINITY);
    }

    #[test]
    fn quarantine_condition_examples() {
        let mut m = SirMacro::new(vec![1; 100], Some(0.15));
        m.set_compartment(0, Compartment::S);
        assert!(!m.quarantine_condition());
        for a in 0..20 {
            m.set_compartment(a, Compartment::I);
        }
        assert!(m.quarantine_condition());
        m.quarantine_threshold = Some(1.0);
        assert!(!m.quarantine_condition());
    }

    #[test]
    fn reveal_examples() {
        let mut rng = RngStream::from_seed(2);
        let mut none = SirMacro::new(vec![0, 4, 4], None);
        assert!(none.reveal_edges(0, &mut rng).unwrap().is_empty());

        let mut hits = 0;
        for _ in 0..100_000 {
            let mut m = SirMacro::new(vec![1, 1, 3], None);
            if m.reveal_edges(0, &mut rng).unwrap() == [2] {
                hits += 1;
            }
        }
        assert!((f64::from(hits) / 100_000.0 - 0.75).abs() < 0.01);

        let mut exhaust = SirMacro::new(vec![2, 1, 1], None);
        let mut t = exhaust.reveal_edges(0, &mut rng).unwrap();
        t.sort_unstable();
        assert_eq!(t, vec![1, 2]);
        assert_eq!(exhaust.free_degree, vec![0, 0, 0]);
        assert_eq!(exhaust.edge_count(), 2);
    }
}

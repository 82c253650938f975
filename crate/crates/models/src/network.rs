//! Preferential attachment growth driven by upward causation.
//!
//! Every node fires a single internal transition one time unit after its
//! creation. Its report makes the environment add one new node wired to
//! `connect_to` existing nodes drawn with probability proportional to their
//! degree, so the network gains one node per time unit.

use ebdevs::{
    Atomic, Context, CoupledSpec, Family, GlobalContext, HookResult, Input, MacroBehaviour, ModelError, ModelId,
    Outbox, Port, PortRef, QueryError, RngStream, SimError, SimTime, Simulation,
};

use crate::params::{ensure, grid_times, parse, sample_on_grid, unknown, ModelParams, ParamError, RunOptions, RunResult};

pub struct NetworkFamily;

impl Family for NetworkFamily {
    type Msg = ();
    /// `(node id, degree at creation)`.
    type Up = (u32, u64);
    type Query = ();
    type Answer = ();
}

pub const IN: Port = Port::new("in");
pub const OUT: Port = Port::new("out");

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub connect_to: usize,
}

impl Default for NetworkParams {
    fn default() -> Self {
        Self { connect_to: 1 }
    }
}

impl ModelParams for NetworkParams {
    const MODEL: &'static str = "network";
    const KEYS: &'static [&'static str] = &["connect_to"];

    fn set(&mut self, key: &str, value: &str) -> Result<(), ParamError> {
        match key {
            "connect_to" | "m" => self.connect_to = parse(key, value)?,
            _ => return Err(unknown(Self::MODEL, key)),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ParamError> {
        ensure(self.connect_to >= 1, "connect_to", self.connect_to, "must be at least 1")
    }
}

pub struct Node {
    pub id: u32,
    pub outdegree: u64,
    pub fired: bool,
    pending: Option<(u32, u64)>,
}

impl Node {
    /// A node that fires one time unit after it enters the simulation.
    pub fn new(id: u32, outdegree: u64) -> Self {
        Self {
            id,
            outdegree,
            fired: false,
            pending: None,
        }
    }

    /// A node that never fires.
    pub fn dormant(id: u32, outdegree: u64) -> Self {
        Self {
            fired: true,
            ..Self::new(id, outdegree)
        }
    }
}

impl Atomic<NetworkFamily> for Node {
    fn delta_int(&mut self, _ctx: &mut Context<'_, NetworkFamily>) -> HookResult {
        self.fired = true;
        self.pending = Some((self.id, self.outdegree));
        Ok(())
    }

    fn delta_ext(&mut self, _e: SimTime, _inputs: &[Input<()>], _ctx: &mut Context<'_, NetworkFamily>) -> HookResult {
        Ok(())
    }

    fn output(&mut self, _ctx: &mut Context<'_, NetworkFamily>, _out: &mut Outbox<()>) -> HookResult {
        Ok(())
    }

    fn time_advance(&self) -> f64 {
        if self.fired {
            f64::INFINITY
        } else {
            1.0
        }
    }

    fn take_yup(&mut self) -> Option<(u32, u64)> {
        self.pending.take()
    }
}

/// Authoritative topology: degrees by node id, the edge list and the model
/// id of every node.
pub struct NetworkMacro {
    pub connect_to: usize,
    pub degrees: Vec<u64>,
    pub edges: Vec<(u32, u32)>,
    pub models: Vec<ModelId>,
}

impl NetworkMacro {
    /// Two seed nodes joined by one edge.
    pub fn seeded(connect_to: usize, seed_models: [ModelId; 2]) -> Self {
        Self {
            connect_to,
            degrees: vec![1, 1],
            edges: vec![(0, 1)],
            models: seed_models.to_vec(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.degrees.len()
    }

    pub fn average_degree(&self) -> f64 {
        2.0 * self.edges.len() as f64 / self.degrees.len() as f64
    }

    /// Distinct node ids drawn size-biased by degree; all nodes while fewer
    /// than `connect_to` exist.
    pub fn sample_targets(&self, rng: &mut RngStream) -> Result<Vec<u32>, ModelError> {
        let pool: Vec<(u32, f64)> = self
            .degrees
            .iter()
            .enumerate()
            .map(|(id, &d)| (id as u32, d as f64))
            .collect();
        let available = pool.iter().filter(|(_, w)| *w > 0.0).count();
        let count = self.connect_to.min(available);
        Ok(rng.weighted_sample_without_replacement(&pool, count)?)
    }

    fn grow(&mut self, ctx: &mut GlobalContext<'_, NetworkFamily>) -> Result<(), ModelError> {
        let targets = self.sample_targets(ctx.rng())?;
        let id = self.degrees.len() as u32;
        let model = ctx.add_atomic(format!("node{id}"), Node::new(id, targets.len() as u64));
        for &target in &targets {
            ctx.connect(
                PortRef::output(model, OUT),
                PortRef::input(self.models[target as usize], IN),
            );
            self.degrees[target as usize] += 1;
            self.edges.push((id, target));
        }
        self.degrees.push(targets.len() as u64);
        self.models.push(model);
        Ok(())
    }
}

impl MacroBehaviour<NetworkFamily> for NetworkMacro {
    fn global_transition(
        &mut self,
        _elapsed: SimTime,
        batch: Vec<(u32, u64)>,
        ctx: &mut GlobalContext<'_, NetworkFamily>,
    ) -> Result<Option<(u32, u64)>, ModelError> {
        for _report in batch {
            self.grow(ctx)?;
        }
        Ok(None)
    }

    fn v_down(&self, query: &(), _rng: &mut RngStream) -> Result<(), QueryError> {
        Err(QueryError::UnknownProperty(format!("{query:?}")))
    }
}

pub fn build(params: &NetworkParams, seed: u64, macrolevel: bool) -> Result<Simulation<NetworkFamily>, SimError> {
    let mut spec = CoupledSpec::new("network");
    let root = spec.root();
    let n0 = spec.add_atomic(root, "node0", Node::dormant(0, 1))?;
    let n1 = spec.add_atomic(root, "node1", Node::new(1, 1))?;
    spec.connect(PortRef::output(n1, OUT), PortRef::input(n0, IN))?;
    spec.set_macro(root, NetworkMacro::seeded(params.connect_to, [n0, n1]))?;
    Simulation::initialize_with(spec, seed, macrolevel)
}

pub fn topology(sim: &Simulation<NetworkFamily>) -> Option<&NetworkMacro> {
    sim.macro_state::<NetworkMacro>(sim.root())
}

pub fn run(params: &NetworkParams, seed: u64, opts: &RunOptions) -> Result<RunResult, SimError> {
    let mut sim = build(params, seed, opts.macrolevel)?;
    if opts.trace {
        sim.enable_trace();
    }
    let grid = opts.grid();
    let [average] = sample_on_grid(&mut sim, &grid, |s| [topology(s).map_or(f64::NAN, NetworkMacro::average_degree)])?;
    let net = topology(&sim).ok_or_else(|| SimError::Internal("network macro state missing".into()))?;
    let mut result = RunResult {
        times: grid_times(&grid),
        ..RunResult::default()
    };
    result.summary.insert("nodes".into(), net.node_count() as f64);
    result.summary.insert("edges".into(), net.edges.len() as f64);
    result.summary.insert(
        "max_degree".into(),
        net.degrees.iter().copied().max().unwrap_or(0) as f64,
    );
    result
        .extra
        .insert("degrees".into(), net.degrees.iter().map(|&d| d as f64).collect());
    result.series.push(("average_degree".into(), average));
    result.trace = sim.take_trace();
    Ok(result)
}

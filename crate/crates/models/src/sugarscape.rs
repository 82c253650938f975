//! Sugarscape with a Gini-index feedback loop.
//!
//! Agents and cells are separate atomic models with independent clocks.
//! Agents move to the richest visible free cell, consume sugar and report
//! their wealth upwards; cells regrow sugar and report their stock. The
//! environment keeps the occupancy and sugar grids plus every agent's
//! wealth, and answers Gini queries. While the Gini index is at or above the
//! cutoff, agents only eat what their metabolism needs.

use ebdevs::stats::gini;
use ebdevs::{
    Atomic, Context, CoupledSpec, Family, GlobalContext, HookResult, Input, MacroBehaviour, ModelError, ModelId,
    Outbox, Port, PortRef, QueryError, RngStream, SimError, SimTime, Simulation,
};

use crate::params::{
    ensure, grid_times, last_quartile_mean, parse, sample_on_grid, setup_stream, unknown, ModelParams, ParamError,
    RunOptions, RunResult,
};

pub struct SugarFamily;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SugarUp {
    Moved {
        slot: usize,
        last: usize,
        new: usize,
        wealth: f64,
        alive: bool,
    },
    Died {
        slot: usize,
    },
    Cell {
        cell: usize,
        sugar: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SugarQuery {
    MaxSugarNextCell { position: usize, vision: usize },
    Gini,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SugarAnswer {
    Cell { cell: usize, sugar: f64 },
    Gini(f64),
}

impl Family for SugarFamily {
    /// Sugar consumed from the receiving cell.
    type Msg = f64;
    type Up = SugarUp;
    type Query = SugarQuery;
    type Answer = SugarAnswer;
}

pub const CELL_IN: Port = Port::new("consume");

fn consume_port(cell: usize) -> Port {
    Port::indexed("consume", cell as u32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SugarParams {
    pub agents: usize,
    pub side: usize,
    pub gini_cutoff: f64,
}

impl Default for SugarParams {
    fn default() -> Self {
        Self {
            agents: 50,
            side: 30,
            gini_cutoff: 1.0,
        }
    }
}

impl ModelParams for SugarParams {
    const MODEL: &'static str = "sugarscape";
    const KEYS: &'static [&'static str] = &["agents", "side", "gini_cutoff"];

    fn set(&mut self, key: &str, value: &str) -> Result<(), ParamError> {
        match key {
            "agents" | "n" => self.agents = parse(key, value)?,
            "side" | "grid_side" => self.side = parse(key, value)?,
            "gini_cutoff" | "cutoff" => self.gini_cutoff = parse(key, value)?,
            _ => return Err(unknown(Self::MODEL, key)),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ParamError> {
        ensure(self.side >= 1, "side", self.side, "grid side must be positive")?;
        ensure(self.agents >= 1, "agents", self.agents, "need at least one agent")?;
        ensure(
            self.agents <= self.side * self.side,
            "agents",
            self.agents,
            "more agents than grid cells",
        )?;
        ensure(
            (0.0..=1.0).contains(&self.gini_cutoff),
            "gini_cutoff",
            self.gini_cutoff,
            "must lie in [0, 1]",
        )
    }
}

pub const PEAKS: [(f64, f64); 2] = [(7.0, 7.0), (22.0, 22.0)];
pub const PEAK_WIDTH: f64 = 6.0;

/// Two Gaussian plateaus of capacity 4 joined by a low valley, with desert
/// corners. Row-major.
pub fn generate_terrain(side: usize) -> Vec<u32> {
    let mut capacity = Vec::with_capacity(side * side);
    for r in 0..side {
        for c in 0..side {
            let height = PEAKS
                .iter()
                .map(|&(pr, pc)| {
                    let d2 = (r as f64 - pr).powi(2) + (c as f64 - pc).powi(2);
                    (-d2 / (2.0 * PEAK_WIDTH * PEAK_WIDTH)).exp()
                })
                .fold(0.0, f64::max);
            capacity.push((4.0 * height).round().clamp(0.0, 4.0) as u32);
        }
    }
    capacity
}

/// Fresh agent attributes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Endowment {
    pub vision: usize,
    pub metabolic_rate: f64,
    pub wealth: f64,
    pub max_age: f64,
}

impl Endowment {
    pub fn draw(rng: &mut RngStream) -> Self {
        Self {
            vision: rng.int_inclusive(1, 6) as usize,
            metabolic_rate: rng.uniform_range(1.0, 2.0),
            wealth: rng.uniform_range(5.0, 25.0),
            max_age: rng.uniform_range(5.0, 25.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Waiting for the next move.
    Move,
    /// Zero-time transition that tells the cell what was eaten.
    Report,
    Dead,
}

pub struct SugarAgent {
    pub slot: usize,
    pub position: usize,
    pub endowment: Endowment,
    pub wealth: f64,
    pub age: f64,
    pub last_consumed: f64,
    pub alive: bool,
    pub phase: Phase,
    gini_cutoff: f64,
    last_time: f64,
    ta: f64,
    pending: Option<SugarUp>,
}

impl SugarAgent {
    pub fn new(slot: usize, position: usize, endowment: Endowment, gini_cutoff: f64) -> Self {
        Self {
            slot,
            position,
            endowment,
            wealth: endowment.wealth,
            age: 0.0,
            last_consumed: 0.0,
            alive: true,
            phase: Phase::Move,
            gini_cutoff,
            last_time: f64::NAN,
            ta: f64::INFINITY,
            pending: None,
        }
    }

    /// Sugar taken from a cell holding `sugar` when the index reads `gini`.
    pub fn consumption(gini: f64, cutoff: f64, sugar: f64, metabolic_rate: f64) -> f64 {
        if gini < cutoff {
            sugar
        } else {
            sugar.min(metabolic_rate)
        }
    }

    fn step(&mut self, ctx: &mut Context<'_, SugarFamily>) -> HookResult {
        let now = ctx.now().value();
        let last = self.position;
        let (cell, sugar) = match ctx.v_down(&SugarQuery::MaxSugarNextCell {
            position: self.position,
            vision: self.endowment.vision,
        })? {
            SugarAnswer::Cell { cell, sugar } => (cell, sugar),
            other => return Err(ModelError::Invalid(format!("unexpected answer {other:?}"))),
        };
        self.position = cell;
        let gini = match ctx.v_down(&SugarQuery::Gini)? {
            SugarAnswer::Gini(g) => g,
            other => return Err(ModelError::Invalid(format!("unexpected answer {other:?}"))),
        };
        self.last_consumed = Self::consumption(gini, self.gini_cutoff, sugar, self.endowment.metabolic_rate);
        self.wealth += self.last_consumed - self.endowment.metabolic_rate;
        self.age += now - self.last_time;
        self.last_time = now;
        self.alive = !(self.wealth < 0.0 || self.age > self.endowment.max_age);
        self.pending = Some(SugarUp::Moved {
            slot: self.slot,
            last,
            new: cell,
            wealth: self.wealth,
            alive: self.alive,
        });
        self.phase = Phase::Report;
        self.ta = 0.0;
        Ok(())
    }
}

impl Atomic<SugarFamily> for SugarAgent {
    fn initialize(&mut self, ctx: &mut Context<'_, SugarFamily>) -> HookResult {
        self.last_time = ctx.now().value();
        self.ta = ctx.rng().exponential(0.5)?;
        Ok(())
    }

    fn delta_int(&mut self, ctx: &mut Context<'_, SugarFamily>) -> HookResult {
        match self.phase {
            Phase::Move => self.step(ctx),
            Phase::Report if self.alive => {
                self.phase = Phase::Move;
                self.ta = ctx.rng().exponential(0.5)?;
                Ok(())
            }
            Phase::Report => {
                self.phase = Phase::Dead;
                self.ta = f64::INFINITY;
                self.pending = Some(SugarUp::Died { slot: self.slot });
                Ok(())
            }
            Phase::Dead => Ok(()),
        }
    }

    fn delta_ext(&mut self, _e: SimTime, _inputs: &[Input<f64>], _ctx: &mut Context<'_, SugarFamily>) -> HookResult {
        Ok(())
    }

    fn output(&mut self, _ctx: &mut Context<'_, SugarFamily>, out: &mut Outbox<f64>) -> HookResult {
        if self.phase == Phase::Report && self.last_consumed > 0.0 {
            out.send(consume_port(self.position), self.last_consumed);
        }
        Ok(())
    }

    fn time_advance(&self) -> f64 {
        self.ta
    }

    fn take_yup(&mut self) -> Option<SugarUp> {
        self.pending.take()
    }
}

pub struct SugarCell {
    pub cell: usize,
    pub sugar: f64,
    pub capacity: u32,
    ta: f64,
    pending: Option<SugarUp>,
}

impl SugarCell {
    /// Starts full.
    pub fn new(cell: usize, capacity: u32) -> Self {
        Self {
            cell,
            sugar: f64::from(capacity),
            capacity,
            ta: f64::INFINITY,
            pending: None,
        }
    }

    pub fn regrow(sugar: f64, capacity: u32) -> f64 {
        (sugar + 1.0).min(f64::from(capacity))
    }

    pub fn consume(sugar: f64, amount: f64) -> f64 {
        (sugar - amount).max(0.0)
    }

    fn report(&mut self) {
        self.pending = Some(SugarUp::Cell {
            cell: self.cell,
            sugar: self.sugar,
        });
    }
}

impl Atomic<SugarFamily> for SugarCell {
    fn initialize(&mut self, ctx: &mut Context<'_, SugarFamily>) -> HookResult {
        self.ta = ctx.rng().exponential(0.5)?;
        Ok(())
    }

    fn delta_int(&mut self, ctx: &mut Context<'_, SugarFamily>) -> HookResult {
        self.sugar = Self::regrow(self.sugar, self.capacity);
        self.ta = ctx.rng().exponential(0.5)?;
        self.report();
        Ok(())
    }

    fn delta_ext(&mut self, e: SimTime, inputs: &[Input<f64>], _ctx: &mut Context<'_, SugarFamily>) -> HookResult {
        for input in inputs {
            self.sugar = Self::consume(self.sugar, *input.payload);
        }
        // The regrowth clock keeps running.
        self.ta = (self.ta - e.value()).max(0.0);
        self.report();
        Ok(())
    }

    fn output(&mut self, _ctx: &mut Context<'_, SugarFamily>, _out: &mut Outbox<f64>) -> HookResult {
        Ok(())
    }

    fn time_advance(&self) -> f64 {
        self.ta
    }

    fn take_yup(&mut self) -> Option<SugarUp> {
        self.pending.take()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentRecord {
    pub model: ModelId,
    pub position: usize,
    /// `None` once the agent has died.
    pub wealth: Option<f64>,
}

/// Occupancy and sugar grids, agent wealth and the cell model ids.
pub struct SugarMacro {
    pub side: usize,
    pub gini_cutoff: f64,
    pub sugar: Vec<f64>,
    pub occupant: Vec<Option<usize>>,
    pub agents: Vec<AgentRecord>,
    pub cells: Vec<ModelId>,
    pub deaths: usize,
}

impl SugarMacro {
    pub fn occupied(&self, cell: usize) -> bool {
        self.occupant[cell].is_some()
    }

    /// Richest free cell along the four axes within `vision`, the current
    /// cell included. Ties go to the nearest, then to a uniform pick.
    pub fn max_sugar_next_cell(&self, position: usize, vision: usize, rng: &mut RngStream) -> (usize, f64) {
        let side = self.side as isize;
        let (r, c) = ((position / self.side) as isize, (position % self.side) as isize);
        let mut best = vec![position];
        let mut best_sugar = self.sugar[position];
        let mut best_distance = 0;
        for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
            for step in 1..=vision as isize {
                let (nr, nc) = (r + dr * step, c + dc * step);
                if nr < 0 || nc < 0 || nr >= side || nc >= side {
                    break;
                }
                let cell = (nr * side + nc) as usize;
                if self.occupied(cell) {
                    continue;
                }
                let sugar = self.sugar[cell];
                let distance = step as usize;
                if sugar > best_sugar || (sugar == best_sugar && distance < best_distance) {
                    best = vec![cell];
                    best_sugar = sugar;
                    best_distance = distance;
                } else if sugar == best_sugar && distance == best_distance {
                    best.push(cell);
                }
            }
        }
        let pick = if best.len() == 1 { best[0] } else { best[rng.index(best.len())] };
        (pick, best_sugar)
    }

    /// Gini index of the living agents' wealth; 0 when nobody owns anything.
    pub fn gini(&self) -> f64 {
        let wealth: Vec<f64> = self.agents.iter().filter_map(|a| a.wealth).map(|w| w.max(0.0)).collect();
        gini(&wealth).unwrap_or(0.0)
    }

    fn random_free_cell(&self, rng: &mut RngStream) -> Option<usize> {
        let free: Vec<usize> = (0..self.occupant.len()).filter(|&c| !self.occupied(c)).collect();
        rng.choose(&free).copied()
    }

    fn respawn(&mut self, slot: usize, ctx: &mut GlobalContext<'_, SugarFamily>) -> Result<(), ModelError> {
        let old = self.agents[slot];
        ctx.remove_atomic(old.model);
        if self.occupant[old.position] == Some(slot) {
            self.occupant[old.position] = None;
        }
        self.deaths += 1;
        let position = self
            .random_free_cell(ctx.rng())
            .ok_or_else(|| ModelError::Invalid("no free cell for a new agent".into()))?;
        let endowment = Endowment::draw(ctx.rng());
        let model = ctx.add_atomic(
            format!("agent{slot}.{}", self.deaths),
            SugarAgent::new(slot, position, endowment, self.gini_cutoff),
        );
        for (cell, &cell_model) in self.cells.iter().enumerate() {
            ctx.connect(
                PortRef::output(model, consume_port(cell)),
                PortRef::input(cell_model, CELL_IN),
            );
        }
        self.occupant[position] = Some(slot);
        self.agents[slot] = AgentRecord {
            model,
            position,
            wealth: Some(endowment.wealth),
        };
        Ok(())
    }
}

impl MacroBehaviour<SugarFamily> for SugarMacro {
    fn global_transition(
        &mut self,
        _elapsed: SimTime,
        batch: Vec<SugarUp>,
        ctx: &mut GlobalContext<'_, SugarFamily>,
    ) -> Result<Option<SugarUp>, ModelError> {
        for up in batch {
            match up {
                SugarUp::Moved {
                    slot,
                    last,
                    new,
                    wealth,
                    alive,
                } => {
                    if self.occupant[last] == Some(slot) {
                        self.occupant[last] = None;
                    }
                    // A dead agent holds its cell until it is replaced.
                    self.occupant[new] = Some(slot);
                    let record = &mut self.agents[slot];
                    record.position = new;
                    record.wealth = alive.then_some(wealth);
                }
                SugarUp::Died { slot } => self.respawn(slot, ctx)?,
                SugarUp::Cell { cell, sugar } => self.sugar[cell] = sugar,
            }
        }
        Ok(None)
    }

    fn v_down(&self, query: &SugarQuery, rng: &mut RngStream) -> Result<SugarAnswer, QueryError> {
        match *query {
            SugarQuery::MaxSugarNextCell { position, vision } => {
                if position >= self.sugar.len() {
                    return Err(QueryError::Undefined {
                        property: "MAX_SUGAR_NEXT_CELL".into(),
                        reason: format!("position {position} off the grid"),
                    });
                }
                let (cell, sugar) = self.max_sugar_next_cell(position, vision, rng);
                Ok(SugarAnswer::Cell { cell, sugar })
            }
            SugarQuery::Gini => Ok(SugarAnswer::Gini(self.gini())),
        }
    }
}

pub fn build(params: &SugarParams, seed: u64, macrolevel: bool) -> Result<Simulation<SugarFamily>, SimError> {
    let cells_n = params.side * params.side;
    let terrain = generate_terrain(params.side);
    let mut setup = setup_stream(seed);
    let mut spec = CoupledSpec::new("sugarscape");
    let root = spec.root();

    let cells = (0..cells_n)
        .map(|i| spec.add_atomic(root, format!("cell{i}"), SugarCell::new(i, terrain[i])))
        .collect::<Result<Vec<_>, _>>()?;
    let mut positions: Vec<usize> = (0..cells_n).collect();
    setup.shuffle(&mut positions);
    let mut occupant = vec![None; cells_n];
    let mut agents = Vec::with_capacity(params.agents);
    for (slot, &position) in positions.iter().take(params.agents).enumerate() {
        let endowment = Endowment::draw(&mut setup);
        let model = spec.add_atomic(
            root,
            format!("agent{slot}"),
            SugarAgent::new(slot, position, endowment, params.gini_cutoff),
        )?;
        for (cell, &cell_model) in cells.iter().enumerate() {
            spec.connect(
                PortRef::output(model, consume_port(cell)),
                PortRef::input(cell_model, CELL_IN),
            )?;
        }
        occupant[position] = Some(slot);
        agents.push(AgentRecord {
            model,
            position,
            wealth: Some(endowment.wealth),
        });
    }
    spec.set_macro(
        root,
        SugarMacro {
            side: params.side,
            gini_cutoff: params.gini_cutoff,
            sugar: terrain.iter().map(|&c| f64::from(c)).collect(),
            occupant,
            agents,
            cells,
            deaths: 0,
        },
    )?;
    Simulation::initialize_with(spec, seed, macrolevel)
}

pub fn environment(sim: &Simulation<SugarFamily>) -> Option<&SugarMacro> {
    sim.macro_state::<SugarMacro>(sim.root())
}

pub fn run(params: &SugarParams, seed: u64, opts: &RunOptions) -> Result<RunResult, SimError> {
    let mut sim = build(params, seed, opts.macrolevel)?;
    if opts.trace {
        sim.enable_trace();
    }
    let grid = opts.grid();
    let [series] = sample_on_grid(&mut sim, &grid, |s| [environment(s).map_or(f64::NAN, SugarMacro::gini)])?;
    let deaths = environment(&sim).map_or(0, |e| e.deaths);
    let mut result = RunResult {
        times: grid_times(&grid),
        ..RunResult::default()
    };
    result.summary.insert("final_gini".into(), *series.last().unwrap_or(&f64::NAN));
    result.summary.insert("late_mean_gini".into(), last_quartile_mean(&series));
    result.summary.insert("deaths".into(), deaths as f64);
    result.series.push(("gini".into(), series));
    result.trace = sim.take_trace();
    Ok(result)
}

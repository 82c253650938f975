//! Schelling segregation on a square grid with implicit communication.
//!
//! Agents never talk to each other. Each one asks its environment whether
//! it is happy where it stands and, if not, for a random empty cell to move
//! to. The environment's macro state is the colour grid, refreshed from the
//! agents' `(last, new)` position reports.

use ebdevs::stats::TimeSeries;
use ebdevs::{
    Atomic, Context, CoupledSpec, Family, GlobalContext, HookResult, Input, MacroBehaviour, ModelError, ModelId,
    Outbox, QueryError, RngStream, SimError, SimTime, Simulation,
};

use crate::params::{ensure, grid_times, parse, setup_stream, unknown, ModelParams, ParamError, RunOptions, RunResult};

pub struct SegregationFamily;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Colour {
    Red,
    Green,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegQuery {
    Happiness { position: usize, colour: Colour },
    RandomEmptyCell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegAnswer {
    Happy(bool),
    /// `None` when the grid is full.
    Empty(Option<usize>),
}

impl Family for SegregationFamily {
    type Msg = ();
    /// `(last position, new position)` as row-major cell indices.
    type Up = (usize, usize);
    type Query = SegQuery;
    type Answer = SegAnswer;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegregationParams {
    pub agents: usize,
    /// Required share of same-colour neighbours (HT).
    pub happiness_threshold: f64,
    pub side: usize,
    /// Interval between unhappy-fraction samples.
    pub sample_every: f64,
}

impl Default for SegregationParams {
    fn default() -> Self {
        Self {
            agents: 266,
            happiness_threshold: 0.5,
            side: 20,
            sample_every: 0.5,
        }
    }
}

impl SegregationParams {
    /// Largest tolerated share of different-colour neighbours.
    pub fn tolerance(&self) -> f64 {
        1.0 - self.happiness_threshold
    }
}

impl ModelParams for SegregationParams {
    const MODEL: &'static str = "segregation";
    const KEYS: &'static [&'static str] = &["n", "ht", "side", "sample_every"];

    fn set(&mut self, key: &str, value: &str) -> Result<(), ParamError> {
        match key {
            "n" | "agents" => self.agents = parse(key, value)?,
            "ht" | "threshold" | "happiness_threshold" => self.happiness_threshold = parse(key, value)?,
            "side" | "grid_side" => self.side = parse(key, value)?,
            "sample_every" => self.sample_every = parse(key, value)?,
            _ => return Err(unknown(Self::MODEL, key)),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ParamError> {
        ensure(self.side >= 1, "side", self.side, "grid side must be positive")?;
        ensure(
            self.agents <= self.side * self.side,
            "n",
            self.agents,
            "more agents than grid cells",
        )?;
        ensure(
            (0.0..=1.0).contains(&self.happiness_threshold),
            "ht",
            self.happiness_threshold,
            "must lie in [0, 1]",
        )?;
        ensure(self.sample_every > 0.0, "sample_every", self.sample_every, "must be positive")
    }
}

/// Occupied Moore neighbours of `position`: `(different colour, occupied)`.
pub fn neighbour_counts(grid: &[Option<Colour>], side: usize, position: usize, colour: Colour) -> (usize, usize) {
    let (r, c) = ((position / side) as isize, (position % side) as isize);
    let mut different = 0;
    let mut occupied = 0;
    for dr in -1..=1 {
        for dc in -1..=1 {
            if dr == 0 && dc == 0 {
                continue;
            }
            let (nr, nc) = (r + dr, c + dc);
            if nr < 0 || nc < 0 || nr >= side as isize || nc >= side as isize {
                continue;
            }
            if let Some(other) = grid[nr as usize * side + nc as usize] {
                occupied += 1;
                different += usize::from(other != colour);
            }
        }
    }
    (different, occupied)
}

/// Happy iff no occupied neighbours or `different / occupied ≤ tolerance`.
pub fn happiness(
    grid: &[Option<Colour>],
    side: usize,
    position: usize,
    colour: Colour,
    tolerance: f64,
) -> Result<bool, QueryError> {
    if position >= grid.len() {
        return Err(QueryError::Undefined {
            property: "HAPPINESS".into(),
            reason: format!("position {position} outside a grid of {} cells", grid.len()),
        });
    }
    let (different, occupied) = neighbour_counts(grid, side, position, colour);
    // The slack absorbs rounding in `1 - HT` for thresholds such as 0.8.
    Ok(occupied == 0 || different as f64 <= tolerance * occupied as f64 + 1e-9)
}

pub struct SegAgent {
    pub colour: Colour,
    pub position: usize,
    ta: f64,
    pending: Option<(usize, usize)>,
}

impl SegAgent {
    pub fn new(colour: Colour, position: usize) -> Self {
        Self {
            colour,
            position,
            ta: f64::INFINITY,
            pending: None,
        }
    }
}

impl Atomic<SegregationFamily> for SegAgent {
    fn initialize(&mut self, ctx: &mut Context<'_, SegregationFamily>) -> HookResult {
        self.ta = ctx.rng().exponential(0.5)?;
        Ok(())
    }

    fn delta_int(&mut self, ctx: &mut Context<'_, SegregationFamily>) -> HookResult {
        self.ta = ctx.rng().exponential(0.5)?;
        let happy = match ctx.v_down(&SegQuery::Happiness {
            position: self.position,
            colour: self.colour,
        })? {
            SegAnswer::Happy(h) => h,
            other => return Err(ModelError::Invalid(format!("unexpected answer {other:?}"))),
        };
        if happy {
            return Ok(());
        }
        if let SegAnswer::Empty(Some(cell)) = ctx.v_down(&SegQuery::RandomEmptyCell)? {
            self.pending = Some((self.position, cell));
            self.position = cell;
        }
        Ok(())
    }

    fn delta_ext(&mut self, _e: SimTime, _inputs: &[Input<()>], _ctx: &mut Context<'_, SegregationFamily>) -> HookResult {
        Ok(())
    }

    fn output(&mut self, _ctx: &mut Context<'_, SegregationFamily>, _out: &mut Outbox<()>) -> HookResult {
        Ok(())
    }

    fn time_advance(&self) -> f64 {
        self.ta
    }

    fn take_yup(&mut self) -> Option<(usize, usize)> {
        self.pending.take()
    }
}

/// Colour grid with an index of empty cells for O(1) random picks.
pub struct SegMacro {
    pub side: usize,
    pub tolerance: f64,
    grid: Vec<Option<Colour>>,
    empties: Vec<usize>,
    /// Position of each cell in `empties`, `usize::MAX` when occupied.
    slot: Vec<usize>,
}

impl SegMacro {
    pub fn new(side: usize, tolerance: f64, grid: Vec<Option<Colour>>) -> Self {
        let mut slot = vec![usize::MAX; grid.len()];
        let empties: Vec<usize> = (0..grid.len()).filter(|&i| grid[i].is_none()).collect();
        for (k, &i) in empties.iter().enumerate() {
            slot[i] = k;
        }
        Self {
            side,
            tolerance,
            grid,
            empties,
            slot,
        }
    }

    pub fn grid(&self) -> &[Option<Colour>] {
        &self.grid
    }

    pub fn empty_count(&self) -> usize {
        self.empties.len()
    }

    pub fn happy(&self, position: usize, colour: Colour) -> Result<bool, QueryError> {
        happiness(&self.grid, self.side, position, colour, self.tolerance)
    }

    fn mark_empty(&mut self, cell: usize) {
        if self.slot[cell] == usize::MAX {
            self.slot[cell] = self.empties.len();
            self.empties.push(cell);
        }
    }

    fn mark_occupied(&mut self, cell: usize) {
        let k = self.slot[cell];
        if k != usize::MAX {
            self.empties.swap_remove(k);
            if let Some(&moved) = self.empties.get(k) {
                self.slot[moved] = k;
            }
            self.slot[cell] = usize::MAX;
        }
    }

    pub fn apply_move(&mut self, last: usize, new: usize) -> Result<(), ModelError> {
        let colour = self.grid[last].ok_or_else(|| ModelError::Invalid(format!("move from empty cell {last}")))?;
        if self.grid[new].is_some() {
            return Err(ModelError::Invalid(format!("move onto occupied cell {new}")));
        }
        self.grid[last] = None;
        self.grid[new] = Some(colour);
        self.mark_empty(last);
        self.mark_occupied(new);
        Ok(())
    }
}

impl MacroBehaviour<SegregationFamily> for SegMacro {
    fn global_transition(
        &mut self,
        _elapsed: SimTime,
        batch: Vec<(usize, usize)>,
        _ctx: &mut GlobalContext<'_, SegregationFamily>,
    ) -> Result<Option<(usize, usize)>, ModelError> {
        for (last, new) in batch {
            self.apply_move(last, new)?;
        }
        Ok(None)
    }

    fn v_down(&self, query: &SegQuery, rng: &mut RngStream) -> Result<SegAnswer, QueryError> {
        match *query {
            SegQuery::Happiness { position, colour } => self.happy(position, colour).map(SegAnswer::Happy),
            SegQuery::RandomEmptyCell => Ok(SegAnswer::Empty(rng.choose(&self.empties).copied())),
        }
    }
}

pub struct SegregationModel {
    pub sim: Simulation<SegregationFamily>,
    pub agents: Vec<ModelId>,
}

/// Places the first `⌈N/2⌉` agents as red and the rest as green on
/// shuffled cells drawn from a setup stream.
pub fn build(params: &SegregationParams, seed: u64, macrolevel: bool) -> Result<SegregationModel, SimError> {
    let cells = params.side * params.side;
    let mut setup = setup_stream(seed);
    let mut positions: Vec<usize> = (0..cells).collect();
    setup.shuffle(&mut positions);
    let reds = params.agents.div_ceil(2);
    let mut grid = vec![None; cells];
    let mut spec = CoupledSpec::new("environment");
    let root = spec.root();
    let mut agents = Vec::with_capacity(params.agents);
    for (i, &position) in positions.iter().take(params.agents).enumerate() {
        let colour = if i < reds { Colour::Red } else { Colour::Green };
        grid[position] = Some(colour);
        agents.push(spec.add_atomic(root, format!("agent{i}"), SegAgent::new(colour, position))?);
    }
    spec.set_macro(root, SegMacro::new(params.side, params.tolerance(), grid))?;
    let sim = Simulation::initialize_with(spec, seed, macrolevel)?;
    Ok(SegregationModel { sim, agents })
}

/// Share of agents that are unhappy on the current grid.
pub fn unhappy_fraction(sim: &Simulation<SegregationFamily>, agents: &[ModelId]) -> Result<f64, QueryError> {
    let env = sim
        .macro_state::<SegMacro>(sim.root())
        .ok_or(QueryError::NoMacro)?;
    if agents.is_empty() {
        return Ok(0.0);
    }
    let mut unhappy = 0usize;
    for &a in agents {
        let agent = sim.atomic_state::<SegAgent>(a).ok_or(QueryError::NoMacro)?;
        unhappy += usize::from(!env.happy(agent.position, agent.colour)?);
    }
    Ok(unhappy as f64 / agents.len() as f64)
}

pub fn run(params: &SegregationParams, seed: u64, opts: &RunOptions) -> Result<RunResult, SimError> {
    let SegregationModel { mut sim, agents } = build(params, seed, opts.macrolevel)?;
    if opts.trace {
        sim.enable_trace();
    }
    let query_err = |e: QueryError| SimError::Internal(format!("unhappy fraction: {e}"));
    let mut series = TimeSeries::new("unhappy_fraction");
    let samples = (opts.t_end / params.sample_every).floor() as usize;
    for k in 0..=samples {
        let t = SimTime::new(k as f64 * params.sample_every).expect("non-negative sample time");
        sim.run_until(t)?;
        series
            .push(t, unhappy_fraction(&sim, &agents).map_err(query_err)?)
            .map_err(|e| SimError::Internal(e.to_string()))?;
    }
    let end = SimTime::new(opts.t_end).ok_or_else(|| SimError::Config("invalid t_end".into()))?;
    sim.run_until(end)?;

    let grid = opts.grid();
    let values: Vec<f64> = series.resample(&grid).into_iter().map(|v| v.unwrap_or(0.0)).collect();
    let mut result = RunResult {
        times: grid_times(&grid),
        ..RunResult::default()
    };
    let converged_at = series.points().iter().find(|(_, v)| *v == 0.0).map(|(t, _)| t.value());
    result
        .summary
        .insert("final_unhappy_fraction".into(), series.points().last().map_or(0.0, |p| p.1));
    result.summary.insert("converged".into(), f64::from(u8::from(converged_at.is_some())));
    result
        .summary
        .insert("convergence_time".into(), converged_at.unwrap_or(f64::NAN));
    result.series.push(("unhappy_fraction".into(), values));
    result.trace = sim.take_trace();
    Ok(result)
}

//! Dissemination of culture on a square lattice, with an optional fashion
//! feedback through the society's macro state.
//!
//! Agents hold a culture vector of `F` traits in `[1, Q]`. Once per time unit
//! an agent either adopts the current fashion (probability `fashion_rate`)
//! or mixes with a random known neighbour: if `u < similarity < 1` it copies
//! one differing trait. Any change is broadcast to the lattice neighbours in
//! a zero-time transition.

use ebdevs::stats::distinct_cultures;
use ebdevs::{
    Atomic, Context, CoupledSpec, Family, GlobalContext, HookResult, Input, MacroBehaviour, ModelError, ModelId,
    Outbox, Port, PortRef, QueryError, RngStream, SimError, SimTime, Simulation,
};
use thiserror::Error;

use crate::params::{ensure, grid_times, parse, sample_on_grid, unknown, ModelParams, ParamError, RunOptions, RunResult};

pub struct CultureFamily;

#[derive(Debug, Clone, PartialEq)]
pub struct CultureMsg {
    pub agent: u32,
    pub culture: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CultureQuery {
    FashionFeature,
}

impl Family for CultureFamily {
    type Msg = CultureMsg;
    type Up = (u32, Vec<u32>);
    type Query = CultureQuery;
    /// `(feature index, fashionable trait value)`.
    type Answer = (usize, u32);
}

pub const IN: Port = Port::new("in");
pub const OUT: Port = Port::new("out");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("culture vectors of lengths {0} and {1}")]
pub struct ShapeError(pub usize, pub usize);

/// Share of positions holding equal traits.
pub fn similarity(a: &[u32], b: &[u32]) -> Result<f64, ShapeError> {
    if a.len() != b.len() {
        return Err(ShapeError(a.len(), b.len()));
    }
    if a.is_empty() {
        return Ok(1.0);
    }
    let matches = a.iter().zip(b).filter(|(x, y)| x == y).count();
    Ok(matches as f64 / a.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CultureParams {
    pub features: usize,
    pub traits: u32,
    pub fashion_rate: f64,
    pub side: usize,
}

impl Default for CultureParams {
    fn default() -> Self {
        Self {
            features: 5,
            traits: 5,
            fashion_rate: 0.0,
            side: 10,
        }
    }
}

impl ModelParams for CultureParams {
    const MODEL: &'static str = "culture";
    const KEYS: &'static [&'static str] = &["f", "q", "fashion_rate", "side"];

    fn set(&mut self, key: &str, value: &str) -> Result<(), ParamError> {
        match key {
            "f" | "features" => self.features = parse(key, value)?,
            "q" | "traits" => self.traits = parse(key, value)?,
            "fashion_rate" => self.fashion_rate = parse(key, value)?,
            "side" | "grid_side" => self.side = parse(key, value)?,
            _ => return Err(unknown(Self::MODEL, key)),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ParamError> {
        ensure(self.features >= 1, "f", self.features, "need at least one feature")?;
        ensure(self.traits >= 1, "q", self.traits, "need at least one trait value")?;
        ensure(
            (0.0..=1.0).contains(&self.fashion_rate),
            "fashion_rate",
            self.fashion_rate,
            "must lie in [0, 1]",
        )?;
        ensure(self.side >= 2, "side", self.side, "lattice side must be at least 2")
    }
}

pub struct CultureAgent {
    pub id: u32,
    pub culture: Vec<u32>,
    /// Known neighbour cultures, sorted by neighbour id.
    pub neighbours: Vec<(u32, Vec<u32>)>,
    pub share_culture: bool,
    traits: u32,
    fashion_rate: f64,
    pending: Option<(u32, Vec<u32>)>,
}

impl CultureAgent {
    /// The culture is drawn on entry to the simulation.
    pub fn new(id: u32, features: usize, traits: u32, fashion_rate: f64) -> Self {
        Self {
            id,
            culture: vec![0; features],
            neighbours: Vec::new(),
            share_culture: true,
            traits,
            fashion_rate,
            pending: None,
        }
    }

    pub fn with_culture(mut self, culture: Vec<u32>) -> Self {
        self.culture = culture;
        self
    }

    fn learn(&mut self, agent: u32, culture: &[u32]) {
        match self.neighbours.binary_search_by_key(&agent, |(id, _)| *id) {
            Ok(i) => self.neighbours[i].1 = culture.to_vec(),
            Err(i) => self.neighbours.insert(i, (agent, culture.to_vec())),
        }
    }

    /// One mixing attempt; returns whether the culture changed.
    fn mix(&mut self, ctx: &mut Context<'_, CultureFamily>) -> Result<bool, ModelError> {
        let do_fashion = ctx.rng().uniform() < self.fashion_rate;
        if do_fashion {
            let fashion = ctx.v_down(&CultureQuery::FashionFeature)?;
            return Ok(adopt_fashion(&mut self.culture, fashion));
        }
        if self.neighbours.is_empty() {
            return Ok(false);
        }
        let pick = ctx.rng().index(self.neighbours.len());
        let u = ctx.rng().uniform();
        let (culture, other) = (&mut self.culture, &self.neighbours[pick].1);
        homophily_step(culture, other, u, |n| ctx.rng().index(n)).map_err(|e| ModelError::Invalid(e.to_string()))
    }
}

/// Sets `culture[feature] = value`; returns whether anything changed.
pub fn adopt_fashion(culture: &mut [u32], (feature, value): (usize, u32)) -> bool {
    let changed = culture[feature] != value;
    culture[feature] = value;
    changed
}

/// Copies one differing trait of `other`, chosen by `pick(count)`, when
/// `u < similarity < 1`. Returns whether `own` changed.
pub fn homophily_step(
    own: &mut [u32],
    other: &[u32],
    u: f64,
    pick: impl FnOnce(usize) -> usize,
) -> Result<bool, ShapeError> {
    let sim = similarity(own, other)?;
    if !(u < sim && sim < 1.0) {
        return Ok(false);
    }
    let differing: Vec<usize> = (0..own.len()).filter(|&i| own[i] != other[i]).collect();
    let i = differing[pick(differing.len())];
    own[i] = other[i];
    Ok(true)
}

impl Atomic<CultureFamily> for CultureAgent {
    fn initialize(&mut self, ctx: &mut Context<'_, CultureFamily>) -> HookResult {
        if self.culture.contains(&0) {
            let q = i64::from(self.traits);
            for trait_value in &mut self.culture {
                *trait_value = ctx.rng().int_inclusive(1, q) as u32;
            }
        }
        Ok(())
    }

    fn delta_int(&mut self, ctx: &mut Context<'_, CultureFamily>) -> HookResult {
        if self.share_culture {
            // The broadcast went out through `output`.
            self.share_culture = false;
        } else {
            self.share_culture = self.mix(ctx)?;
        }
        self.pending = Some((self.id, self.culture.clone()));
        Ok(())
    }

    fn delta_ext(
        &mut self,
        _elapsed: SimTime,
        inputs: &[Input<CultureMsg>],
        _ctx: &mut Context<'_, CultureFamily>,
    ) -> HookResult {
        for input in inputs {
            self.learn(input.payload.agent, &input.payload.culture);
        }
        Ok(())
    }

    fn output(&mut self, _ctx: &mut Context<'_, CultureFamily>, out: &mut Outbox<CultureMsg>) -> HookResult {
        if self.share_culture {
            out.send(
                OUT,
                CultureMsg {
                    agent: self.id,
                    culture: self.culture.clone(),
                },
            );
        }
        Ok(())
    }

    fn time_advance(&self) -> f64 {
        if self.share_culture {
            0.0
        } else {
            1.0
        }
    }

    fn take_yup(&mut self) -> Option<(u32, Vec<u32>)> {
        self.pending.take()
    }
}

/// Latest culture of every agent, with per-feature trait counts.
pub struct CultureMacro {
    traits: u32,
    cultures: Vec<Option<Vec<u32>>>,
    /// `counts[f][q]`: agents whose feature `f` holds trait `q`.
    counts: Vec<Vec<u32>>,
    known: usize,
}

impl CultureMacro {
    pub fn new(agents: usize, features: usize, traits: u32) -> Self {
        Self {
            traits,
            cultures: vec![None; agents],
            counts: vec![vec![0; traits as usize + 1]; features],
            known: 0,
        }
    }

    pub fn update(&mut self, agent: u32, culture: &[u32]) {
        let slot = &mut self.cultures[agent as usize];
        match slot {
            Some(old) => {
                for (f, &q) in old.iter().enumerate() {
                    self.counts[f][q as usize] -= 1;
                }
            }
            None => self.known += 1,
        }
        for (f, &q) in culture.iter().enumerate() {
            self.counts[f][q as usize] += 1;
        }
        *slot = Some(culture.to_vec());
    }

    pub fn culture_of(&self, agent: u32) -> Option<&[u32]> {
        self.cultures.get(agent as usize)?.as_deref()
    }

    /// Most frequent value of `feature`; ties go to the smallest value.
    pub fn mode(&self, feature: usize) -> Option<u32> {
        if self.known == 0 {
            return None;
        }
        let column = &self.counts[feature];
        (1..=self.traits).max_by(|a, b| column[*a as usize].cmp(&column[*b as usize]).then(b.cmp(a)))
    }

    pub fn fashion_feature(&self, rng: &mut RngStream) -> Result<(usize, u32), QueryError> {
        if self.known == 0 {
            return Err(QueryError::Undefined {
                property: "FASHION_FEATURE".into(),
                reason: "no cultures reported yet".into(),
            });
        }
        let feature = rng.index(self.counts.len());
        Ok((feature, self.mode(feature).expect("known cultures")))
    }
}

impl MacroBehaviour<CultureFamily> for CultureMacro {
    fn global_transition(
        &mut self,
        _elapsed: SimTime,
        batch: Vec<(u32, Vec<u32>)>,
        _ctx: &mut GlobalContext<'_, CultureFamily>,
    ) -> Result<Option<(u32, Vec<u32>)>, ModelError> {
        for (agent, culture) in batch {
            self.update(agent, &culture);
        }
        Ok(None)
    }

    fn v_down(&self, query: &CultureQuery, rng: &mut RngStream) -> Result<(usize, u32), QueryError> {
        match query {
            CultureQuery::FashionFeature => self.fashion_feature(rng),
        }
    }
}

/// Von Neumann neighbours on a non-periodic `side × side` lattice.
pub fn lattice_neighbours(index: usize, side: usize) -> Vec<usize> {
    let (r, c) = (index / side, index % side);
    let mut out = Vec::with_capacity(4);
    if r > 0 {
        out.push(index - side);
    }
    if c > 0 {
        out.push(index - 1);
    }
    if c + 1 < side {
        out.push(index + 1);
    }
    if r + 1 < side {
        out.push(index + side);
    }
    out
}

pub struct CultureModel {
    pub sim: Simulation<CultureFamily>,
    pub agents: Vec<ModelId>,
}

pub fn build(params: &CultureParams, seed: u64, macrolevel: bool) -> Result<CultureModel, SimError> {
    let n = params.side * params.side;
    let mut spec = CoupledSpec::new("society");
    let root = spec.root();
    let agents = (0..n)
        .map(|i| {
            spec.add_atomic(
                root,
                format!("agent{i}"),
                CultureAgent::new(i as u32, params.features, params.traits, params.fashion_rate),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    for (i, &a) in agents.iter().enumerate() {
        for j in lattice_neighbours(i, params.side) {
            spec.connect(PortRef::output(a, OUT), PortRef::input(agents[j], IN))?;
        }
    }
    spec.set_macro(root, CultureMacro::new(n, params.features, params.traits))?;
    let sim = Simulation::initialize_with(spec, seed, macrolevel)?;
    Ok(CultureModel { sim, agents })
}

pub fn cultures(sim: &Simulation<CultureFamily>, agents: &[ModelId]) -> Vec<Vec<u32>> {
    agents
        .iter()
        .filter_map(|&a| sim.atomic_state::<CultureAgent>(a).map(|s| s.culture.clone()))
        .collect()
}

pub fn run(params: &CultureParams, seed: u64, opts: &RunOptions) -> Result<RunResult, SimError> {
    let CultureModel { mut sim, agents } = build(params, seed, opts.macrolevel)?;
    if opts.trace {
        sim.enable_trace();
    }
    let grid = opts.grid();
    let [distinct] = sample_on_grid(&mut sim, &grid, |s| {
        [distinct_cultures(&cultures(s, &agents)).unwrap_or(0) as f64]
    })?;
    let mut result = RunResult {
        times: grid_times(&grid),
        ..RunResult::default()
    };
    result.summary.insert("final_distinct_cultures".into(), *distinct.last().unwrap_or(&0.0));
    result.series.push(("distinct_cultures".into(), distinct));
    result.trace = sim.take_trace();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn similarity_examples() {
        assert_eq!(similarity(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(similarity(&[1, 2, 3, 4, 5], &[1, 2, 9, 9, 9]).unwrap(), 0.4);
        assert_eq!(similarity(&[1, 2], &[3, 4]).unwrap(), 0.0);
        assert!(similarity(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn mode_with_ties() {
        let mut m = CultureMacro::new(3, 1, 5);
        m.update(0, &[1]);
        m.update(1, &[1]);
        m.update(2, &[2]);
        assert_eq!(m.mode(0), Some(1));
        let mut tie = CultureMacro::new(2, 1, 5);
        tie.update(0, &[2]);
        tie.update(1, &[1]);
        assert_eq!(tie.mode(0), Some(1));
        tie.update(1, &[2]);
        assert_eq!(tie.mode(0), Some(2));
    }

    #[test]
    fn unanimous_fashion() {
        let mut m = CultureMacro::new(4, 5, 5);
        for a in 0..4 {
            m.update(a, &[2; 5]);
        }
        let mut rng = RngStream::from_seed(1);
        for _ in 0..20 {
            assert_eq!(m.fashion_feature(&mut rng).unwrap().1, 2);
        }
        assert!(CultureMacro::new(1, 5, 5).fashion_feature(&mut rng).is_err());
    }

    #[test]
    fn identical_neighbour_changes_nothing() {
        let mut own = vec![1, 2, 3, 4, 5];
        assert!(!homophily_step(&mut own, &[1, 2, 3, 4, 5], 0.0, |_| 0).unwrap());
        assert_eq!(own, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn single_difference_is_copied() {
        let mut own = vec![1, 2, 3, 4, 5];
        assert!(homophily_step(&mut own, &[1, 2, 9, 4, 5], 0.0, |n| n - 1).unwrap());
        assert_eq!(own, vec![1, 2, 9, 4, 5]);
        let mut other = vec![1, 2, 3, 4, 5];
        assert!(!homophily_step(&mut other, &[1, 2, 9, 4, 5], 0.9, |_| 0).unwrap());
    }

    #[test]
    fn fashion_overwrites_one_trait() {
        let mut own = vec![1, 1, 1, 1, 1];
        assert!(adopt_fashion(&mut own, (3, 7)));
        assert_eq!(own, vec![1, 1, 1, 7, 1]);
        assert!(!adopt_fashion(&mut own, (3, 7)));
    }

    #[test]
    fn lattice_degrees() {
        assert_eq!(lattice_neighbours(0, 10), vec![1, 10]);
        assert_eq!(lattice_neighbours(55, 10).len(), 4);
        assert_eq!(lattice_neighbours(99, 10), vec![89, 98]);
    }
}

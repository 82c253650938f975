use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use ebdevs::stats::uniform_grid;
use ebdevs::{Family, SimError, SimTime, Simulation, TraceRecord};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("unknown parameter {key:?} for model {model}")]
    Unknown { model: &'static str, key: String },
    #[error("invalid value {value:?} for {key}: {reason}")]
    Invalid { key: String, value: String, reason: String },
}

/// Parameter set of one model, settable from `key = value` strings.
pub trait ModelParams: Default + Clone + Send + Sync {
    const MODEL: &'static str;
    const KEYS: &'static [&'static str];

    fn set(&mut self, key: &str, value: &str) -> Result<(), ParamError>;

    fn validate(&self) -> Result<(), ParamError>;

    fn from_map(map: &BTreeMap<String, String>) -> Result<Self, ParamError> {
        let mut params = Self::default();
        for (k, v) in map {
            params.set(&k.to_ascii_lowercase(), v)?;
        }
        params.validate()?;
        Ok(params)
    }
}

pub(crate) fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ParamError>
where
    T::Err: Display,
{
    value.trim().parse().map_err(|e: T::Err| ParamError::Invalid {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

/// Parses an optional real; `none`, `off` and empty strings give `None`.
pub(crate) fn parse_optional(key: &str, value: &str) -> Result<Option<f64>, ParamError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "" | "none" | "off" | "disabled" => Ok(None),
        _ => parse(key, value).map(Some),
    }
}

pub(crate) fn ensure(ok: bool, key: &str, value: impl Display, reason: &str) -> Result<(), ParamError> {
    if ok {
        Ok(())
    } else {
        Err(ParamError::Invalid {
            key: key.into(),
            value: value.to_string(),
            reason: reason.into(),
        })
    }
}

pub(crate) fn unknown(model: &'static str, key: &str) -> ParamError {
    ParamError::Unknown {
        model,
        key: key.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub t_end: f64,
    /// Number of grid intervals; the grid has `grid_steps + 1` points.
    pub grid_steps: usize,
    pub trace: bool,
    /// `false` runs with macro-level hooks disabled.
    pub macrolevel: bool,
}

impl RunOptions {
    pub fn new(t_end: f64) -> Self {
        Self {
            t_end,
            grid_steps: 200,
            trace: false,
            macrolevel: true,
        }
    }

    pub fn grid(&self) -> Vec<SimTime> {
        uniform_grid(self.t_end, self.grid_steps)
    }
}

/// Observables of one realisation, already on the uniform grid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunResult {
    pub times: Vec<f64>,
    pub series: Vec<(String, Vec<f64>)>,
    pub summary: BTreeMap<String, f64>,
    /// Non-temporal outputs such as a final degree sequence.
    pub extra: BTreeMap<String, Vec<f64>>,
    pub trace: Vec<TraceRecord>,
}

impl RunResult {
    pub fn series(&self, name: &str) -> Option<&[f64]> {
        self.series.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }
}

/// Advances `sim` through every grid time and records `observe` after all
/// events at or before that time (last observation carried forward).
pub(crate) fn sample_on_grid<F: Family, const K: usize>(
    sim: &mut Simulation<F>,
    grid: &[SimTime],
    mut observe: impl FnMut(&mut Simulation<F>) -> [f64; K],
) -> Result<[Vec<f64>; K], SimError> {
    let mut columns: [Vec<f64>; K] = std::array::from_fn(|_| Vec::with_capacity(grid.len()));
    for &t in grid {
        if t >= sim.clock() {
            sim.run_until(t)?;
        }
        let values = observe(sim);
        for (col, v) in columns.iter_mut().zip(values) {
            col.push(v);
        }
    }
    Ok(columns)
}

pub(crate) fn grid_times(grid: &[SimTime]) -> Vec<f64> {
    grid.iter().map(|t| t.value()).collect()
}

/// Mean over the last quarter of `values` (at least one point).
pub fn last_quartile_mean(values: &[f64]) -> f64 {
    let start = values.len() - (values.len() / 4).max(1);
    let tail = &values[start..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// Stream for building initial configurations, disjoint from every model's
/// own streams.
pub(crate) fn setup_stream(seed: u64) -> ebdevs::RngStream {
    ebdevs::RngStream::new(seed, ebdevs::StreamId::new(u64::MAX - 1, 0))
}

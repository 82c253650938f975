use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ebdevs::SimError;
use thiserror::Error;

use crate::culture::CultureParams;
use crate::epidemic::SirParams;
use crate::network::NetworkParams;
use crate::params::{ModelParams, ParamError, RunOptions, RunResult};
use crate::segregation::SegregationParams;
use crate::sugarscape::SugarParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Culture,
    Segregation,
    Network,
    Sugarscape,
    Epidemic,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Culture,
        ModelKind::Segregation,
        ModelKind::Network,
        ModelKind::Sugarscape,
        ModelKind::Epidemic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Culture => CultureParams::MODEL,
            ModelKind::Segregation => SegregationParams::MODEL,
            ModelKind::Network => NetworkParams::MODEL,
            ModelKind::Sugarscape => SugarParams::MODEL,
            ModelKind::Epidemic => SirParams::MODEL,
        }
    }

    /// Canonical parameter keys (aliases are accepted too).
    pub fn keys(self) -> &'static [&'static str] {
        match self {
            ModelKind::Culture => CultureParams::KEYS,
            ModelKind::Segregation => SegregationParams::KEYS,
            ModelKind::Network => NetworkParams::KEYS,
            ModelKind::Sugarscape => SugarParams::KEYS,
            ModelKind::Epidemic => SirParams::KEYS,
        }
    }

    /// Horizon used when none is configured.
    pub fn default_t_end(self) -> f64 {
        match self {
            ModelKind::Culture => 10_000.0,
            ModelKind::Segregation => 40.0,
            ModelKind::Network => 2_000.0,
            ModelKind::Sugarscape => 200.0,
            ModelKind::Epidemic => 4.0,
        }
    }

    /// Checks a parameter map without running anything.
    pub fn validate(self, params: &BTreeMap<String, String>) -> Result<(), ParamError> {
        match self {
            ModelKind::Culture => CultureParams::from_map(params).map(drop),
            ModelKind::Segregation => SegregationParams::from_map(params).map(drop),
            ModelKind::Network => NetworkParams::from_map(params).map(drop),
            ModelKind::Sugarscape => SugarParams::from_map(params).map(drop),
            ModelKind::Epidemic => SirParams::from_map(params).map(drop),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown model {0:?}; expected culture, segregation, network, sugarscape or epidemic")]
pub struct UnknownModel(pub String);

impl FromStr for ModelKind {
    type Err = UnknownModel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "culture" | "axelrod" => Ok(ModelKind::Culture),
            "segregation" | "schelling" => Ok(ModelKind::Segregation),
            "network" | "preferential" | "pa" => Ok(ModelKind::Network),
            "sugarscape" | "sugar" => Ok(ModelKind::Sugarscape),
            "epidemic" | "sir" => Ok(ModelKind::Epidemic),
            other => Err(UnknownModel(other.into())),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ParamError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Runs one realisation of `kind` with string parameters.
pub fn run_model(
    kind: ModelKind,
    params: &BTreeMap<String, String>,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunResult, RunError> {
    if !(opts.t_end >= 0.0) || !opts.t_end.is_finite() {
        return Err(RunError::Sim(SimError::Config(format!("t_end must be finite and non-negative, got {}", opts.t_end))));
    }
    if opts.grid_steps == 0 {
        return Err(RunError::Sim(SimError::Config("the time grid needs at least one step".into())));
    }
    let result = match kind {
        ModelKind::Culture => crate::culture::run(&CultureParams::from_map(params)?, seed, opts)?,
        ModelKind::Segregation => crate::segregation::run(&SegregationParams::from_map(params)?, seed, opts)?,
        ModelKind::Network => crate::network::run(&NetworkParams::from_map(params)?, seed, opts)?,
        ModelKind::Sugarscape => crate::sugarscape::run(&SugarParams::from_map(params)?, seed, opts)?,
        ModelKind::Epidemic => crate::epidemic::run(&SirParams::from_map(params)?, seed, opts)?,
    };
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for kind in ModelKind::ALL {
            assert_eq!(kind.name().parse::<ModelKind>().unwrap(), kind);
        }
        assert!("boids".parse::<ModelKind>().is_err());
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let mut params = BTreeMap::new();
        params.insert("nope".to_string(), "1".to_string());
        let err = run_model(ModelKind::Network, &params, 1, &RunOptions::new(5.0)).unwrap_err();
        assert!(matches!(err, RunError::Config(ParamError::Unknown { .. })));
    }
}

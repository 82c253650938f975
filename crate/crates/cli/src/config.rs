//! Experiment configuration: an INI-style `key = value` file with optional
//! `[section]` headers, overridable key by key from the command line.
//!
//! Keys in the `[params]` section are model parameters. Elsewhere the keys
//! `model`, `seed`, `realisations`, `t_end`, `out_dir`, `sweep`,
//! `grid_steps` and `threads` configure the experiment and everything else
//! is a model parameter too.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ebdevs_models::ModelKind;
use ini::Ini;

use crate::error::CliError;

/// One parameter swept over a list of values.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub key: String,
    pub values: Vec<String>,
}

impl Sweep {
    /// Parses `key: v1, v2, ...`.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let (key, values) = text
            .split_once(':')
            .ok_or_else(|| CliError::Config(format!("sweep {text:?} is not of the form `key: v1, v2, ...`")))?;
        let key = key.trim().to_ascii_lowercase();
        let values: Vec<String> = values
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if key.is_empty() || values.is_empty() {
            return Err(CliError::Config(format!("sweep {text:?} needs a key and at least one value")));
        }
        Ok(Self { key, values })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub params: BTreeMap<String, String>,
    pub seed: u64,
    pub realisations: usize,
    pub sweep: Option<Sweep>,
    pub t_end: f64,
    pub grid_steps: usize,
    pub out_dir: PathBuf,
    /// Worker threads; `None` uses every core.
    pub threads: Option<usize>,
}

const EXPERIMENT_KEYS: [&str; 8] = [
    "model",
    "seed",
    "realisations",
    "t_end",
    "grid_steps",
    "out_dir",
    "sweep",
    "threads",
];

fn normalise(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| CliError::Config(format!("invalid {key} {value:?}: {e}")))
}

/// Raw settings before validation, in file order then override order.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    experiment: BTreeMap<String, String>,
    params: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn from_ini_str(text: &str) -> Result<Self, CliError> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::Config(format!("config syntax: {e}")))?;
        let mut raw = Self::default();
        for (section, props) in ini.iter() {
            let params_section = section.is_some_and(|s| {
                let s = s.trim().to_ascii_lowercase();
                s == "params" || s == "parameters" || s == "model"
            });
            for (k, v) in props.iter() {
                if params_section {
                    raw.params.insert(normalise(k), v.trim().to_string());
                } else {
                    raw.set(k, v);
                }
            }
        }
        Ok(raw)
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_ini_str(&text)
    }

    /// Routes `key` to the experiment settings or the model parameters.
    pub fn set(&mut self, key: &str, value: &str) {
        let key = normalise(key);
        let value = value.trim().to_string();
        if EXPERIMENT_KEYS.contains(&key.as_str()) {
            self.experiment.insert(key, value);
        } else {
            self.params.insert(key, value);
        }
    }

    pub fn resolve(self) -> Result<ExperimentConfig, CliError> {
        let model: ModelKind = self
            .experiment
            .get("model")
            .ok_or_else(|| CliError::Config("no model given".into()))?
            .parse()
            .map_err(|e: ebdevs_models::scenario::UnknownModel| CliError::Config(e.to_string()))?;
        let get = |k: &str| self.experiment.get(k).map(String::as_str);
        let seed = get("seed").map(|v| parse_value("seed", v)).transpose()?.unwrap_or(0);
        let realisations = get("realisations")
            .map(|v| parse_value("realisations", v))
            .transpose()?
            .unwrap_or(1);
        let t_end = get("t_end")
            .map(|v| parse_value("t_end", v))
            .transpose()?
            .unwrap_or_else(|| model.default_t_end());
        let grid_steps = get("grid_steps")
            .map(|v| parse_value("grid_steps", v))
            .transpose()?
            .unwrap_or(200);
        let threads = get("threads").map(|v| parse_value("threads", v)).transpose()?;
        let out_dir = PathBuf::from(get("out_dir").unwrap_or("out"));
        let sweep = get("sweep").map(Sweep::parse).transpose()?;
        let config = ExperimentConfig {
            model,
            params: self.params,
            seed,
            realisations,
            sweep,
            t_end,
            grid_steps,
            out_dir,
            threads,
        };
        config.validate()?;
        Ok(config)
    }
}

impl ExperimentConfig {
    pub fn new(model: ModelKind) -> Self {
        Self {
            model,
            params: BTreeMap::new(),
            seed: 0,
            realisations: 1,
            sweep: None,
            t_end: model.default_t_end(),
            grid_steps: 200,
            out_dir: PathBuf::from("out"),
            threads: None,
        }
    }

    pub fn with_param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(normalise(key), value.to_string());
        self
    }

    pub fn with_sweep(mut self, key: &str, values: &[&str]) -> Self {
        self.sweep = Some(Sweep {
            key: normalise(key),
            values: values.iter().map(|v| v.to_string()).collect(),
        });
        self
    }

    /// Parameter maps of every sweep point, in sweep order.
    pub fn points(&self) -> Vec<(Option<String>, BTreeMap<String, String>)> {
        match &self.sweep {
            None => vec![(None, self.params.clone())],
            Some(sweep) => sweep
                .values
                .iter()
                .map(|v| {
                    let mut p = self.params.clone();
                    p.insert(sweep.key.clone(), v.clone());
                    (Some(v.clone()), p)
                })
                .collect(),
        }
    }

    /// Rejects bad settings before anything runs.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.realisations == 0 {
            return Err(CliError::Config("realisations must be at least 1".into()));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(CliError::Config(format!("t_end must be finite and non-negative, got {}", self.t_end)));
        }
        if self.grid_steps == 0 {
            return Err(CliError::Config("grid_steps must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        if let Some(sweep) = &self.sweep {
            if !self.model.keys().contains(&sweep.key.as_str()) {
                let mut probe = self.params.clone();
                probe.insert(sweep.key.clone(), sweep.values[0].clone());
                self.model
                    .validate(&probe)
                    .map_err(|e| CliError::Config(format!("sweep key: {e}")))?;
            }
        }
        for (_, params) in self.points() {
            self.model.validate(&params).map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_route_keys() {
        let raw = RawConfig::from_ini_str(
            "model = segregation\nseed = 7\n\n[experiment]\nrealisations = 10\nsweep = ht: 0.2, 0.35\n\n[params]\nN = 200\n",
        )
        .unwrap();
        let c = raw.resolve().unwrap();
        assert_eq!(c.model, ModelKind::Segregation);
        assert_eq!((c.seed, c.realisations, c.t_end), (7, 10, 40.0));
        assert_eq!(c.params.get("n").map(String::as_str), Some("200"));
        assert_eq!(
            c.sweep,
            Some(Sweep {
                key: "ht".into(),
                values: vec!["0.2".into(), "0.35".into()]
            })
        );
        assert_eq!(c.points().len(), 2);
    }

    #[test]
    fn overrides_win() {
        let mut raw = RawConfig::from_ini_str("model = network\nconnect_to = 1\nseed = 1\n").unwrap();
        raw.set("--connect-to".trim_start_matches('-'), "2");
        raw.set("seed", "9");
        let c = raw.resolve().unwrap();
        assert_eq!(c.params["connect_to"], "2");
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn invalid_settings_are_config_errors() {
        for text in [
            "seed = 1",
            "model = boids",
            "model = network\nrealisations = 0",
            "model = network\nbogus = 1",
            "model = segregation\nsweep = nope: 1, 2",
            "model = segregation\nsweep = ht: 0.2, 7",
            "model = network\nt_end = -1",
            "model = network\nseed = x",
        ] {
            let err = RawConfig::from_ini_str(text).and_then(RawConfig::resolve).unwrap_err();
            assert!(matches!(err, CliError::Config(_)), "{text}: {err:?}");
        }
    }
}

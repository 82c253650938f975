//! Runs every (sweep point, realisation) pair, aggregates the grid series
//! and writes the results to disk.
//!
//! Each run's seed depends only on the master seed and its two indices, so
//! results do not depend on scheduling; the worker pool only changes wall
//! time. Output files:
//!
//! * `<label>_r<k>.csv`: `time,<observable>...` for realisation `k`
//! * `<label>_r<k>_<name>.csv`: non-temporal vectors such as degree lists
//! * `<label>_aggregate.csv`: `time,<observable>_mean,<observable>_std...`
//! * `summary.json`: per-run summaries, per-point means, failures, wall time
//!
//! `<label>` is `run` without a sweep and `<key>_<value>` with one.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ebdevs::rng::derive_seed;
use ebdevs::stats::mean_std;
use ebdevs_models::{run_model, RunOptions, RunResult};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub realisation: usize,
    pub seed: u64,
    /// The error message when the run aborted.
    pub outcome: Result<RunResult, String>,
    pub wall_time: f64,
}

/// Grid-aligned mean and sample standard deviation over successful runs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Aggregate {
    pub times: Vec<f64>,
    /// `(observable, mean, std)` in the models' column order.
    pub columns: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl Aggregate {
    pub fn mean(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().find(|(n, _, _)| n == name).map(|(_, m, _)| m.as_slice())
    }

    pub fn std(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().find(|(n, _, _)| n == name).map(|(_, _, s)| s.as_slice())
    }
}

#[derive(Debug, Clone)]
pub struct PointResult {
    pub label: String,
    /// Swept value, `None` without a sweep.
    pub value: Option<String>,
    pub params: BTreeMap<String, String>,
    pub runs: Vec<RunRecord>,
    /// `None` when every run failed.
    pub aggregate: Option<Aggregate>,
}

impl PointResult {
    pub fn successes(&self) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().filter_map(|r| r.outcome.as_ref().ok())
    }

    /// Mean of a summary entry over successful runs.
    pub fn summary_mean(&self, key: &str) -> Option<f64> {
        mean_std(self.successes().map(|r| r.summary.get(key).copied())).map(|(m, _)| m)
    }
}

#[derive(Debug, Clone)]
pub struct ResultBundle {
    pub config: ExperimentConfig,
    pub points: Vec<PointResult>,
    pub wall_time: f64,
}

impl ResultBundle {
    pub fn failures(&self) -> usize {
        self.points
            .iter()
            .flat_map(|p| &p.runs)
            .filter(|r| r.outcome.is_err())
            .count()
    }

    pub fn total_runs(&self) -> usize {
        self.points.iter().map(|p| p.runs.len()).sum()
    }
}

/// Seed of realisation `realisation` at sweep point `point`.
pub fn run_seed(master: u64, point: usize, realisation: usize) -> u64 {
    derive_seed(&[master, point as u64, realisation as u64])
}

fn sanitise(text: &str) -> String {
    text.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect()
}

pub fn point_label(key: Option<&str>, value: Option<&str>) -> String {
    match (key, value) {
        (Some(k), Some(v)) => format!("{}_{}", sanitise(k), sanitise(v)),
        _ => "run".to_string(),
    }
}

pub fn run_options(config: &ExperimentConfig) -> RunOptions {
    RunOptions {
        grid_steps: config.grid_steps,
        ..RunOptions::new(config.t_end)
    }
}

/// Runs the whole experiment in memory. Invalid configurations fail before
/// any run starts; a failing run is recorded and the others continue.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultBundle, CliError> {
    config.validate()?;
    let started = Instant::now();
    let points = config.points();
    let opts = run_options(config);
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..config.realisations).map(move |r| (p, r)))
        .collect();
    let execute = || -> Vec<RunRecord> {
        jobs.par_iter()
            .map(|&(p, r)| {
                let seed = run_seed(config.seed, p, r);
                let clock = Instant::now();
                let outcome = run_model(config.model, &points[p].1, seed, &opts).map_err(|e| e.to_string());
                RunRecord {
                    realisation: r,
                    seed,
                    outcome,
                    wall_time: clock.elapsed().as_secs_f64(),
                }
            })
            .collect()
    };
    let records = match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {n} worker threads: {e}")))?
            .install(execute),
        None => execute(),
    };

    let sweep_key = config.sweep.as_ref().map(|s| s.key.as_str());
    let mut records = records.into_iter();
    let points = points
        .into_iter()
        .map(|(value, params)| {
            let runs: Vec<RunRecord> = records.by_ref().take(config.realisations).collect();
            let aggregate = aggregate(runs.iter().filter_map(|r| r.outcome.as_ref().ok()));
            PointResult {
                label: point_label(sweep_key, value.as_deref()),
                value,
                params,
                runs,
                aggregate,
            }
        })
        .collect();
    Ok(ResultBundle {
        config: config.clone(),
        points,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

/// Column-wise mean and standard deviation; every run shares the grid.
pub fn aggregate<'a>(runs: impl IntoIterator<Item = &'a RunResult>) -> Option<Aggregate> {
    let runs: Vec<&RunResult> = runs.into_iter().collect();
    let first = runs.first()?;
    let columns = first
        .series
        .iter()
        .map(|(name, _)| {
            let (mean, std) = (0..first.times.len())
                .map(|k| {
                    mean_std(runs.iter().map(|r| r.series(name).and_then(|s| s.get(k).copied())))
                        .unwrap_or((f64::NAN, f64::NAN))
                })
                .unzip();
            (name.clone(), mean, std)
        })
        .collect();
    Some(Aggregate {
        times: first.times.clone(),
        columns,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

/// Writes one run's grid series as `time,<observable>...`.
pub fn write_run_csv(path: &Path, run: &RunResult) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["time".to_string()];
    header.extend(run.series.iter().map(|(n, _)| n.clone()));
    w.write_record(&header)?;
    for (k, t) in run.times.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(run.series.iter().map(|(_, s)| s[k].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregate_csv(path: &Path, agg: &Aggregate) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["time".to_string()];
    for (name, _, _) in &agg.columns {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_std"));
    }
    w.write_record(&header)?;
    for (k, t) in agg.times.iter().enumerate() {
        let mut row = vec![t.to_string()];
        for (_, mean, std) in &agg.columns {
            row.push(mean[k].to_string());
            row.push(std[k].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_vector_csv(path: &Path, name: &str, values: &[f64]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record([name])?;
    for v in values {
        w.write_record([v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn summary_json(bundle: &ResultBundle) -> Value {
    let config = &bundle.config;
    let points: Vec<Value> = bundle
        .points
        .iter()
        .map(|p| {
            let keys: Vec<&String> = p.successes().flat_map(|r| r.summary.keys()).collect();
            let mut means = BTreeMap::new();
            for key in keys {
                if let Some((mean, std)) = mean_std(p.successes().map(|r| r.summary.get(key).copied())) {
                    means.insert(key.clone(), json!({ "mean": mean, "std": std }));
                }
            }
            let runs: Vec<Value> = p
                .runs
                .iter()
                .map(|r| match &r.outcome {
                    Ok(res) => json!({
                        "realisation": r.realisation,
                        "seed": r.seed,
                        "status": "ok",
                        "summary": res.summary,
                        "wall_time": r.wall_time,
                    }),
                    Err(e) => json!({
                        "realisation": r.realisation,
                        "seed": r.seed,
                        "status": "error",
                        "error": e,
                        "wall_time": r.wall_time,
                    }),
                })
                .collect();
            json!({
                "label": p.label,
                "value": p.value,
                "params": p.params,
                "summary": means,
                "runs": runs,
            })
        })
        .collect();
    json!({
        "model": config.model.name(),
        "seed": config.seed,
        "realisations": config.realisations,
        "t_end": config.t_end,
        "grid_steps": config.grid_steps,
        "sweep": config.sweep.as_ref().map(|s| json!({ "key": s.key, "values": s.values })),
        "params": config.params,
        "failures": bundle.failures(),
        "wall_time": bundle.wall_time,
        "points": points,
    })
}

/// Writes every output file into `dir` and returns the CSV paths in
/// order: per point, its run files then its aggregate.
pub fn write_bundle(bundle: &ResultBundle, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for point in &bundle.points {
        for run in &point.runs {
            let Ok(result) = &run.outcome else { continue };
            let path = dir.join(format!("{}_r{}.csv", point.label, run.realisation));
            write_run_csv(&path, result)?;
            written.push(path);
            for (name, values) in &result.extra {
                let path = dir.join(format!("{}_r{}_{}.csv", point.label, run.realisation, sanitise(name)));
                write_vector_csv(&path, name, values)?;
            }
        }
        if let Some(agg) = &point.aggregate {
            let path = dir.join(format!("{}_aggregate.csv", point.label));
            write_aggregate_csv(&path, agg)?;
            written.push(path);
        }
    }
    let text = serde_json::to_string_pretty(&summary_json(bundle)).map_err(std::io::Error::other)?;
    fs::write(dir.join("summary.json"), text + "\n")?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ebdevs_models::ModelKind;

    #[test]
    fn seeds_are_distinct_per_index() {
        let seeds: std::collections::BTreeSet<u64> =
            (0..5).flat_map(|p| (0..5).map(move |r| run_seed(1, p, r))).collect();
        assert_eq!(seeds.len(), 25);
        assert_ne!(run_seed(1, 0, 1), run_seed(1, 1, 0));
    }

    #[test]
    fn labels_are_file_safe() {
        assert_eq!(point_label(None, None), "run");
        assert_eq!(point_label(Some("ht"), Some("0.35")), "ht_0.35");
        assert_eq!(point_label(Some("qt"), Some("a/b c")), "qt_a_b_c");
    }

    #[test]
    fn aggregate_of_two_runs() {
        let run = |v: f64| RunResult {
            times: vec![0.0, 1.0],
            series: vec![("x".into(), vec![v, 2.0 * v])],
            ..RunResult::default()
        };
        let (a, b) = (run(1.0), run(3.0));
        let agg = aggregate([&a, &b]).unwrap();
        assert_eq!(agg.mean("x").unwrap(), &[2.0, 4.0]);
        assert!((agg.std("x").unwrap()[0] - 2f64.sqrt()).abs() < 1e-15);
        assert!(aggregate(std::iter::empty()).is_none());
    }

    #[test]
    fn invalid_config_fails_before_running() {
        let mut config = ExperimentConfig::new(ModelKind::Network);
        config.t_end = 3.0;
        config.realisations = 2;
        let bundle = run_experiment(&config).unwrap();
        assert_eq!(bundle.failures(), 0);
        assert_eq!(bundle.points[0].runs.len(), 2);
        config.realisations = 0;
        assert!(matches!(run_experiment(&config), Err(CliError::Config(_))));
    }

    fn csv_files(dir: &Path) -> Vec<String> {
        let mut names: Vec<String> = fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".csv"))
            .collect();
        names.sort();
        names
    }

    fn read_columns(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
        let mut reader = csv::Reader::from_path(path).unwrap();
        let headers = reader.headers().unwrap().iter().map(String::from).collect();
        let rows = reader
            .records()
            .map(|r| r.unwrap().iter().map(|f| f.parse().unwrap()).collect())
            .collect();
        (headers, rows)
    }

    #[test]
    fn singleton_run_writes_one_run_csv() {
        let dir = tempfile::tempdir().unwrap();
        let config = ExperimentConfig {
            t_end: 50.0,
            ..ExperimentConfig::new(ModelKind::Network)
        };
        write_bundle(&run_experiment(&config).unwrap(), dir.path()).unwrap();
        assert_eq!(
            csv_files(dir.path()),
            vec!["run_aggregate.csv", "run_r0.csv", "run_r0_degrees.csv"]
        );
        let (headers, rows) = read_columns(&dir.path().join("run_r0.csv"));
        assert_eq!(headers, vec!["time", "average_degree"]);
        assert_eq!(rows.len(), 201);
        assert!(dir.path().join("summary.json").exists());
    }

    #[test]
    fn segregation_sweep_layout_and_aggregate_means() {
        let dir = tempfile::tempdir().unwrap();
        let values = ["0.20", "0.35", "0.50", "0.65", "0.80", "0.95"];
        let config = ExperimentConfig {
            realisations: 10,
            seed: 11,
            ..ExperimentConfig::new(ModelKind::Segregation).with_sweep("ht", &values)
        };
        write_bundle(&run_experiment(&config).unwrap(), dir.path()).unwrap();
        let files = csv_files(dir.path());
        assert_eq!(files.iter().filter(|f| !f.ends_with("_aggregate.csv")).count(), 60);
        assert_eq!(files.iter().filter(|f| f.ends_with("_aggregate.csv")).count(), 6);

        for value in values {
            let label = format!("ht_{value}");
            let (agg_headers, agg) = read_columns(&dir.path().join(format!("{label}_aggregate.csv")));
            assert_eq!(agg_headers, vec!["time", "unhappy_fraction_mean", "unhappy_fraction_std"]);
            let runs: Vec<Vec<Vec<f64>>> = (0..10)
                .map(|r| read_columns(&dir.path().join(format!("{label}_r{r}.csv"))).1)
                .collect();
            for (k, row) in agg.iter().enumerate() {
                let mean = runs.iter().map(|run| run[k][1]).sum::<f64>() / 10.0;
                assert!((row[1] - mean).abs() <= 1e-12, "{label} row {k}");
                assert!(runs.iter().all(|run| run[k][0] == row[0]));
            }
        }
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let base = ExperimentConfig {
            realisations: 6,
            seed: 5,
            ..ExperimentConfig::new(ModelKind::Epidemic).with_param("n", 300)
        };
        let outputs: Vec<BTreeMap<String, Vec<u8>>> = [Some(1), Some(3), None]
            .into_iter()
            .map(|threads| {
                let dir = tempfile::tempdir().unwrap();
                let config = ExperimentConfig { threads, ..base.clone() };
                write_bundle(&run_experiment(&config).unwrap(), dir.path()).unwrap();
                csv_files(dir.path())
                    .into_iter()
                    .map(|n| (n.clone(), fs::read(dir.path().join(&n)).unwrap()))
                    .collect()
            })
            .collect();
        assert_eq!(outputs[0], outputs[1]);
        assert_eq!(outputs[0], outputs[2]);
    }

    #[test]
    fn csv_uses_lf_and_full_precision() {
        let dir = tempfile::tempdir().unwrap();
        let config = ExperimentConfig {
            t_end: 2.0,
            ..ExperimentConfig::new(ModelKind::Epidemic).with_param("n", 200)
        };
        let bundle = run_experiment(&config).unwrap();
        write_bundle(&bundle, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("run_r0.csv")).unwrap();
        assert!(!text.contains('\r'));
        let (_, rows) = read_columns(&dir.path().join("run_r0.csv"));
        let result = bundle.points[0].runs[0].outcome.as_ref().unwrap();
        for (k, row) in rows.iter().enumerate() {
            for (c, (_, series)) in result.series.iter().enumerate() {
                assert_eq!(row[c + 1], series[k]);
            }
        }
    }
}

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ebdevs_runner::harness::{run_options, run_seed};
use ebdevs_runner::{plot, run_experiment, write_bundle, CliError, ExperimentConfig, RawConfig};
use ebdevs_models::{run_model, RunError};

/// Runs the agent-based case studies and plots their output.
#[derive(Parser)]
#[command(name = "ebdevs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Runs every realisation of a configuration without a sweep.
    Run(ExperimentArgs),
    /// Runs every realisation at each value of the configured sweep.
    Sweep(ExperimentArgs),
    /// Draws CSV series sharing a time column as one SVG line chart.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Prints the kernel event log of the first realisation to stdout.
    Trace(ExperimentArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    realisations: Option<usize>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    grid_steps: Option<usize>,
    /// Worker threads; defaults to one per core.
    #[arg(long)]
    threads: Option<usize>,
    /// Also draw each aggregate CSV as an SVG.
    #[arg(long)]
    plot: bool,
    /// Any other config key as `--key value` or `--key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

/// Splits trailing `--key value` tokens into pairs. `--plot` may appear
/// among them once clap has switched to collecting overrides.
fn parse_overrides(tokens: &[String]) -> Result<(Vec<(String, String)>, bool), CliError> {
    let mut pairs = Vec::new();
    let mut plot = false;
    let mut iter = tokens.iter();
    while let Some(token) = iter.next() {
        let key = token
            .strip_prefix("--")
            .ok_or_else(|| CliError::Config(format!("expected `--key value`, got {token:?}")))?;
        if key == "plot" {
            plot = true;
            continue;
        }
        match key.split_once('=') {
            Some((k, v)) => pairs.push((k.to_string(), v.to_string())),
            None => {
                let value = iter
                    .next()
                    .ok_or_else(|| CliError::Config(format!("missing value for --{key}")))?;
                pairs.push((key.to_string(), value.clone()));
            }
        }
    }
    Ok((pairs, plot))
}

impl ExperimentArgs {
    fn wants_plot(&self) -> bool {
        self.plot || parse_overrides(&self.overrides).is_ok_and(|(_, plot)| plot)
    }

    fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut raw = RawConfig::from_file(&self.config)?;
        for (k, v) in parse_overrides(&self.overrides)?.0 {
            raw.set(&k, &v);
        }
        let flags = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("realisations", self.realisations.map(|v| v.to_string())),
            ("t_end", self.t_end.map(|v| v.to_string())),
            ("out_dir", self.out_dir.as_ref().map(|p| p.display().to_string())),
            ("grid_steps", self.grid_steps.map(|v| v.to_string())),
            ("threads", self.threads.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(value) = value {
                raw.set(key, &value);
            }
        }
        raw.resolve()
    }
}

fn experiment(args: &ExperimentArgs, want_sweep: bool) -> Result<(), CliError> {
    let config = args.resolve()?;
    match (want_sweep, config.sweep.is_some()) {
        (true, false) => return Err(CliError::Config("`sweep` needs a `sweep = key: v1, v2, ...` setting".into())),
        (false, true) => return Err(CliError::Config("this config has a sweep; use the `sweep` subcommand".into())),
        _ => {}
    }
    let bundle = run_experiment(&config)?;
    let written = write_bundle(&bundle, &config.out_dir)?;
    if args.wants_plot() {
        for path in written.iter().filter(|p| p.to_string_lossy().ends_with("_aggregate.csv")) {
            plot::plot(&[path.as_path()], &path.with_extension("svg"))?;
        }
    }
    eprintln!(
        "{} runs, {} CSV files in {} ({:.2} s)",
        bundle.total_runs(),
        written.len(),
        config.out_dir.display(),
        bundle.wall_time
    );
    for point in &bundle.points {
        for run in &point.runs {
            if let Err(e) = &run.outcome {
                eprintln!("{} realisation {} (seed {}): {e}", point.label, run.realisation, run.seed);
            }
        }
    }
    match bundle.failures() {
        0 => Ok(()),
        failed => Err(CliError::Sim {
            failed,
            total: bundle.total_runs(),
        }),
    }
}

fn trace(args: &ExperimentArgs, out: &mut impl Write) -> Result<(), CliError> {
    let config = args.resolve()?;
    let (_, params) = config.points().swap_remove(0);
    let opts = ebdevs_models::RunOptions {
        trace: true,
        ..run_options(&config)
    };
    let result = run_model(config.model, &params, run_seed(config.seed, 0, 0), &opts).map_err(|e| match e {
        RunError::Config(e) => CliError::Config(e.to_string()),
        RunError::Sim(e) => {
            eprintln!("{e}");
            CliError::Sim { failed: 1, total: 1 }
        }
    })?;
    let written = writeln!(out, "time\tmodel\tkind\ty_up")
        .and_then(|()| result.trace.iter().try_for_each(|record| writeln!(out, "{record}")))
        .and_then(|()| out.flush());
    match written {
        // A closed pipe (e.g. `| head`) is not a failure.
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => experiment(&args, false),
        Command::Sweep(args) => experiment(&args, true),
        Command::Trace(args) => trace(&args, &mut BufWriter::new(std::io::stdout().lock())),
        Command::Plot { csv, output } => {
            let inputs: Vec<&Path> = csv.iter().map(PathBuf::as_path).collect();
            plot::plot(&inputs, &output)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use std::fs;

    use super::*;

    fn call(args: &[&str]) -> Result<(), CliError> {
        let mut argv = vec!["ebdevs"];
        argv.extend_from_slice(args);
        dispatch(Cli::try_parse_from(argv).expect("arguments parse"))
    }

    fn csv_names(dir: &Path) -> Vec<String> {
        let mut names: Vec<String> = fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".csv"))
            .collect();
        names.sort();
        names
    }

    #[test]
    fn overrides_accept_both_forms() {
        let tokens: Vec<String> = ["--ht", "0.3", "--plot", "--side=12"].map(String::from).to_vec();
        let (pairs, plot) = parse_overrides(&tokens).unwrap();
        assert!(plot);
        assert_eq!(pairs, vec![("ht".into(), "0.3".into()), ("side".into(), "12".into())]);
        assert!(parse_overrides(&["ht".to_string()]).is_err());
        assert!(parse_overrides(&["--ht".to_string()]).is_err());
    }

    #[test]
    fn run_and_sweep_write_expected_files() {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("seg.ini");
        fs::write(&config, "model = segregation\nrealisations = 2\n\n[params]\nht = 0.5\n").unwrap();
        let config = config.to_str().unwrap();

        let out = dir.path().join("out");
        let out_s = out.to_str().unwrap();
        call(&["run", config, "--seed", "3", "--t-end", "10", "--out-dir", out_s, "--ht", "0.3", "--plot"]).unwrap();
        assert_eq!(csv_names(&out), vec!["run_aggregate.csv", "run_r0.csv", "run_r1.csv"]);
        assert!(out.join("run_aggregate.svg").exists());
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["params"]["ht"], "0.3");
        assert_eq!(summary["t_end"], 10.0);
        assert_eq!(summary["seed"], 3);

        let swept = dir.path().join("swept");
        let swept_s = swept.to_str().unwrap();
        call(&["sweep", config, "--realisations", "1", "--out-dir", swept_s, "--sweep=ht: 0.2, 0.95"]).unwrap();
        assert_eq!(
            csv_names(&swept),
            vec!["ht_0.2_aggregate.csv", "ht_0.2_r0.csv", "ht_0.95_aggregate.csv", "ht_0.95_r0.csv"]
        );
    }

    #[test]
    fn config_errors_exit_with_two_before_running() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("never");
        let cases: [(&str, &[&str]); 8] = [
            ("model = boids\n", &["run"]),
            ("model = network\nrealisations = 0\n", &["run"]),
            ("model = network\n", &["run", "--bogus", "1"]),
            ("model = segregation\nsweep = nope: 1, 2\n", &["sweep"]),
            ("model = segregation\nsweep = ht: 0.2, 7\n", &["sweep"]),
            ("model = segregation\n", &["sweep"]),
            ("model = segregation\nsweep = ht: 0.2\n", &["run"]),
            ("model = segregation\n", &["run", "--t-end=-3"]),
        ];
        for (text, args) in cases {
            let config = dir.path().join("c.ini");
            fs::write(&config, text).unwrap();
            let mut argv = vec![args[0], config.to_str().unwrap(), "--out-dir", out.to_str().unwrap()];
            argv.extend_from_slice(&args[1..]);
            let err = call(&argv).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text:?} {args:?}: {err}");
            assert!(!out.exists(), "nothing runs on a config error");
        }
        assert_eq!(call(&["run", "/definitely/not/here.ini"]).unwrap_err().exit_code(), 2);
        let empty = dir.path().join("empty.csv");
        fs::write(&empty, "").unwrap();
        let svg = dir.path().join("x.svg");
        let err = call(&["plot", empty.to_str().unwrap(), "-o", svg.to_str().unwrap()]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(!svg.exists());
    }

    #[test]
    fn simulation_failures_exit_with_three() {
        assert_eq!(CliError::Sim { failed: 1, total: 4 }.exit_code(), 3);
    }

    #[test]
    fn trace_is_a_deterministic_transition_log() {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("net.ini");
        fs::write(&config, "model = network\nt_end = 3\n").unwrap();
        let cli = || Cli::try_parse_from(["ebdevs", "trace", config.to_str().unwrap()]).unwrap();
        let log = |cli: Cli| {
            let Command::Trace(args) = cli.command else { unreachable!() };
            let mut out = Vec::new();
            trace(&args, &mut out).unwrap();
            String::from_utf8(out).unwrap()
        };
        let text = log(cli());
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("time\tmodel\tkind\ty_up"));
        let events: Vec<Vec<&str>> = lines.map(|l| l.split('\t').collect()).collect();
        assert!(!events.is_empty());
        assert!(events.iter().all(|e| e.len() == 4 && (e[2] == "INT" || e[2] == "EXT")));
        assert_eq!(text, log(cli()));
    }
}

//! `locoman`: batch runner for loco-manipulation scenarios.
//!
//! Exit codes: 0 on success, 1 on configuration or usage errors, 2 when a
//! simulation aborts or a static pose solve fails.

mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use locoman::config::{load_config, ScenarioConfig};
use locoman::experiments::{self, sweep_csv, sweep_target, ExperimentError};
use locoman::sim::{comparison_table, run_scenario, ScenarioError, ScenarioRun};

use plot::{line_plot, pose_schematic, Series};

#[derive(Parser)]
#[command(name = "locoman", version, about = "Run loco-manipulation scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trace.csv and summary.txt.
    Run(CommonArgs),
    /// Run the scenario once per controller in `compare_kinds`.
    Compare(CommonArgs),
    /// Solve static poses over a list of weight values.
    Sweep(CommonArgs),
    /// Check a config and print it with defaults filled in.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Override a config value, e.g. `--set lift.mass=8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Also write SVG plots.
    #[arg(long)]
    plot: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

/// Error with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(msg: impl ToString) -> Self {
        Self {
            code: 1,
            message: msg.to_string(),
        }
    }

    fn sim(msg: impl ToString) -> Self {
        Self {
            code: 2,
            message: msg.to_string(),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::config(e)
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Pose { .. } => Failure::sim(e),
            _ => Failure::config(e),
        }
    }
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))
}

fn prepare(args: &CommonArgs) -> Result<ScenarioConfig, Failure> {
    let cfg = load_config(&args.config, &args.overrides).map_err(Failure::config)?;
    fs::create_dir_all(&args.out)
        .map_err(|e| Failure::config(format!("cannot create {}: {e}", args.out.display())))?;
    Ok(cfg)
}

fn series(run: &ScenarioRun, col: &str, label: String, dashed: bool) -> Series {
    let t = run.trace.column("time").unwrap_or_default();
    let y = run.trace.column(col).unwrap_or_default();
    Series {
        label,
        points: t.into_iter().zip(y).collect(),
        dashed,
    }
}

fn write_plots(out: &Path, runs: &[ScenarioRun]) -> Result<(), Failure> {
    let mut height = Vec::new();
    let mut pitch = Vec::new();
    for run in runs {
        let kind = run.metrics.controller;
        height.push(series(run, "pz", format!("{kind} CoM height"), false));
        height.push(series(run, "ref_pz", format!("{kind} reference"), true));
        pitch.push(series(run, "pitch", format!("{kind} pitch"), false));
        pitch.push(series(run, "ref_pitch", format!("{kind} reference"), true));
    }
    write(
        &out.join("plot_height.svg"),
        &line_plot("Robot CoM height", "time [s]", "height [m]", &height),
    )?;
    write(
        &out.join("plot_pitch.svg"),
        &line_plot("Robot pitch", "time [s]", "pitch [rad]", &pitch),
    )
}

fn abort_check(runs: &[ScenarioRun]) -> Result<(), Failure> {
    for run in runs {
        if let Some(msg) = &run.metrics.aborted {
            return Err(Failure::sim(format!(
                "{} run aborted: {msg}",
                run.metrics.controller
            )));
        }
    }
    Ok(())
}

fn cmd_run(args: &CommonArgs) -> Result<(), Failure> {
    let cfg = prepare(args)?;
    let run = run_scenario(&cfg)?;
    write(&args.out.join("trace.csv"), &run.trace.to_csv())?;
    write(&args.out.join("summary.txt"), &run.metrics.to_summary())?;
    if args.plot {
        write_plots(&args.out, std::slice::from_ref(&run))?;
    }
    print!("{}", run.metrics.to_summary());
    abort_check(std::slice::from_ref(&run))
}

fn cmd_compare(args: &CommonArgs) -> Result<(), Failure> {
    let cfg = prepare(args)?;
    let runs = experiments::compare(&cfg)?;
    let metrics: Vec<_> = runs.iter().map(|r| r.metrics.clone()).collect();
    let table = comparison_table(&metrics);
    write(&args.out.join("trace.csv"), &experiments::joined_csv(&runs))?;
    write(&args.out.join("comparison.csv"), &table)?;
    let mut summary = String::new();
    for m in &metrics {
        summary.push_str(&format!("[{}]\n", m.controller));
        summary.push_str(&m.to_summary());
        summary.push('\n');
    }
    write(&args.out.join("summary.txt"), &summary)?;
    if args.plot {
        write_plots(&args.out, &runs)?;
    }
    print!("{table}");
    let mut order: Vec<_> = metrics.iter().collect();
    order.sort_by(|a, b| a.pitch_rmse.total_cmp(&b.pitch_rmse));
    let names: Vec<String> = order.iter().map(|m| m.controller.to_string()).collect();
    println!("pitch_rmse order (best first): {}", names.join(" < "));
    abort_check(&runs)
}

fn cmd_sweep(args: &CommonArgs) -> Result<(), Failure> {
    let cfg = prepare(args)?;
    let points = experiments::sweep(&cfg)?;
    let csv = sweep_csv(&points);
    write(&args.out.join("sweep.csv"), &csv)?;
    if args.plot {
        let grip = sweep_target(&cfg).grip.position;
        for (i, p) in points.iter().enumerate() {
            let title = format!("{} = {}", cfg.sweep.key, p.value);
            write(
                &args.out.join(format!("pose_{i}.svg")),
                &pose_schematic(&title, &p.pose, &grip, &cfg.robot),
            )?;
        }
    }
    print!("{csv}");
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.config, &args.overrides).map_err(Failure::config)?;
    print!("{}", cfg.to_toml());
    Ok(())
}

fn main() -> ExitCode {
    // usage errors share exit code 1 with config errors; 2 is reserved for aborts
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(u8::from(e.use_stderr()));
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

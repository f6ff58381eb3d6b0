//! `didim`: run identification scenarios against the synthetic SCARA robot.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use didim::error::{Error, Result};
use didim::estimators::EstimationReport;
use didim::experiment::{
    compare_reports, run_scenario, summarize, sweep, verify_bundle, ScenarioConfig, ScenarioOutcome, Summary,
    SweepPoint,
};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "didim", version, about = "Dynamic identification experiments: IDIM, DIDIM and output error")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the noise seed of every scenario.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parent directory for bundles (default: the config's output_dir, then ./runs).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Threads for scenarios, Monte Carlo runs and sweep points.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its bundle.
    Run { config: PathBuf },
    /// Compare report files (`*_report.json`) side by side.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Run every `*.cfg` scenario in a directory.
    Suite {
        #[arg(long, default_value = "configs")]
        config_dir: PathBuf,
    },
    /// Grid of simulated-bandwidth fractions and noise levels for one scenario.
    Sweep {
        config: PathBuf,
        /// Simulated bandwidth fractions.
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 0.5, 0.33, 0.25])]
        scales: Vec<f64>,
        /// Torque noise fractions.
        #[arg(long, value_delimiter = ',', default_values_t = [0.02])]
        noise: Vec<f64>,
    },
    /// Re-hash the files listed in a bundle's manifest.
    Verify { bundle: PathBuf },
}

#[derive(Serialize)]
struct ErrorOut<'a> {
    error: &'a str,
    message: String,
}

fn load(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig> {
    ScenarioConfig::from_file_with_seed(path, seed)
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn summary_csv(summaries: &[Summary]) -> String {
    let mut s = String::from("scenario,method,status,iterations,rel_error,max_abs_pct_error\n");
    for sum in summaries {
        for m in &sum.methods {
            let maxpct = m.pct_error_vs_truth.map(|p| p.iter().fold(0.0f64, |a, x| a.max(x.abs())));
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                sum.scenario,
                m.method,
                m.status,
                m.iterations.map_or(String::new(), |i| i.to_string()),
                m.rel_error.map_or(String::new(), |e| format!("{e:.6e}")),
                maxpct.map_or(String::new(), |e| format!("{e:.4}")),
            ));
        }
    }
    s
}

fn print_summaries(outcomes: &[(ScenarioOutcome, PathBuf)], format: Format) {
    let summaries: Vec<Summary> = outcomes.iter().map(|(o, _)| summarize(o)).collect();
    match format {
        Format::Json => println!("{}", to_json(&summaries)),
        Format::Csv => print!("{}", summary_csv(&summaries)),
    }
    for (_, dir) in outcomes {
        eprintln!("bundle written to {}", dir.display());
    }
}

fn read_report(path: &Path) -> Result<EstimationReport> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    // Iterative methods store the report inside their outcome.
    let inner = value.get("report").cloned().unwrap_or(value);
    serde_json::from_value(inner).map_err(|e| Error::InvalidInput(format!("{}: not a report: {e}", path.display())))
}

fn sweep_csv(points: &[SweepPoint]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6e}"));
    let mut s = String::from(
        "simulated_scale,torque_fraction,idim_rel_error,didim_status,didim_iterations,didim_rel_error,didim_joint_error,didim_max_param_error\n",
    );
    for p in points {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            p.simulated_scale,
            p.torque_fraction,
            opt(p.idim_rel_error),
            p.didim_status.clone().unwrap_or_default(),
            p.didim_iterations.map_or(String::new(), |i| i.to_string()),
            opt(p.didim_rel_error),
            opt(p.didim_joint_error),
            opt(p.didim_max_param_error),
        ));
    }
    s
}

fn scenario_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::ConfigInvalid(format!("cannot list {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "cfg"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::ConfigInvalid(format!("no .cfg files in {}", dir.display())));
    }
    Ok(files)
}

fn execute(cli: &Cli) -> Result<()> {
    let out = cli.out_dir.as_deref();
    match &cli.command {
        Command::Run { config } => {
            let cfg = load(config, cli.seed)?;
            let done = run_scenario(&cfg, out, cli.workers)?;
            print_summaries(&[done], cli.format);
        }
        Command::Suite { config_dir } => {
            let configs = scenario_files(config_dir)?.iter().map(|p| load(p, cli.seed)).collect::<Result<Vec<_>>>()?;
            // Scenarios run concurrently; each one's Monte Carlo stays sequential.
            let workers = cli.workers.max(1);
            let mut done = Vec::with_capacity(configs.len());
            for batch in configs.chunks(workers) {
                let results: Vec<Result<_>> = std::thread::scope(|s| {
                    let hs: Vec<_> = batch.iter().map(|c| s.spawn(move || run_scenario(c, out, 1))).collect();
                    hs.into_iter().map(|h| h.join().expect("scenario thread panicked")).collect()
                });
                for r in results {
                    done.push(r?);
                }
            }
            print_summaries(&done, cli.format);
        }
        Command::Compare { reports } => {
            let loaded = reports.iter().map(|p| read_report(p)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&EstimationReport> = loaded.iter().collect();
            let table = compare_reports(&refs)?;
            match cli.format {
                Format::Json => println!("{}", to_json(&table)),
                Format::Csv => print!("{}", table.to_csv()),
            }
            eprint!("{}", table.to_text());
        }
        Command::Sweep { config, scales, noise } => {
            let cfg = load(config, cli.seed)?;
            let points = sweep(&cfg, scales, noise, cli.workers)?;
            match cli.format {
                Format::Json => println!("{}", to_json(&points)),
                Format::Csv => print!("{}", sweep_csv(&points)),
            }
        }
        Command::Verify { bundle } => {
            let m = verify_bundle(bundle)?;
            eprintln!("{}: {} files verified", m.scenario, m.files.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = ErrorOut { error: e.kind(), message: e.to_string() };
            eprintln!("{}", serde_json::to_string(&record).expect("serializable"));
            ExitCode::from(if e.kind() == "ConfigInvalid" { 2 } else { 1 })
        }
    }
}

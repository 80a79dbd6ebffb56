use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use citune::domain::{ConfigGrid, FailurePlan, ProfilingMatrix, WorkloadTrace};
use citune::error::{Error, Result};
use citune::experiment::{
    normalized_report, run_experiment, write_bundle, write_normalized_csv, ExperimentBundle,
    Scenario,
};
use citune::modeling::{fit, ModelTarget};
use citune::pipeline_sim::{InjectionReference, PipelineSpec};
use citune::profiler::{run_profiling, ProfilingOptions};
use citune::workload::{
    extract_failure_points, generate_trace, smooth, ExtractionMode, TraceKind,
    DEFAULT_SMOOTHING_WINDOW,
};

/// Checkpoint-interval tuning for stream processing jobs: record a
/// workload, profile recovery under injected failures, then pick intervals
/// that hold the latency and recovery bounds.
#[derive(Parser)]
#[command(name = "citune", version)]
struct Cli {
    /// Root seed; every randomized step derives its own sub-seed from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory that output paths are resolved against.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

const DEFAULT_SEED: u64 = 7;

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic workload trace CSV.
    GenerateTrace {
        /// sinusoidal | diurnal | random-walk | constant
        #[arg(long)]
        kind: String,
        /// Recording length in seconds.
        #[arg(long, default_value_t = 21_600)]
        duration: usize,
        #[arg(long, default_value_t = 1000.0)]
        base_rate: f64,
        #[arg(long, default_value_t = 500.0)]
        amplitude: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Smooth a recorded trace and extract failure points spanning the
    /// observed throughput range.
    Phase1 {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 12)]
        m: usize,
        /// rate | time
        #[arg(long, default_value = "rate")]
        mode: String,
        /// Centered smoothing window in seconds (odd).
        #[arg(long, default_value_t = DEFAULT_SMOOTHING_WINDOW)]
        window: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay the trace into one deployment per grid value, inject
    /// worst-case failures, and write the profiling matrix.
    Profile {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        /// Grid as min:max:z, e.g. 10:120:5.
        #[arg(long, default_value = "10:120:5")]
        grid: String,
        /// Pipeline parameters JSON; defaults to twice the trace peak.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Seconds before the checkpoint boundary at which to inject.
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        /// Anchor injections to checkpoint completions or scheduled starts.
        #[arg(long, default_value = "completion")]
        reference: String,
        /// Replay-window margin before each failure point, seconds.
        #[arg(long)]
        margin_before: Option<f64>,
        /// Replay-window margin after each failure point, seconds.
        #[arg(long)]
        margin_after: Option<f64>,
    },
    /// Fit a latency or recovery regression model from a profiling matrix.
    Fit {
        #[arg(long)]
        matrix: PathBuf,
        /// latency | recovery
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 2)]
        degree: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a full scenario: record, profile, fit, then the adaptive run
    /// against static baselines; writes the report bundle into --out-dir.
    RunExperiment {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Emit the normalized violation summary for a report bundle.
    Report {
        /// Bundle directory containing report.json.
        #[arg(long)]
        bundle: PathBuf,
        /// Output CSV; defaults to <bundle>/normalized.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn resolve(out_dir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        out_dir.join(path)
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    std::fs::create_dir_all(&cli.out_dir)?;
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    match cli.command {
        Command::GenerateTrace {
            kind,
            duration,
            base_rate,
            amplitude,
            out,
        } => {
            let kind: TraceKind = kind.parse()?;
            let trace = generate_trace(kind, duration, base_rate, amplitude, seed)?;
            let path = resolve(&cli.out_dir, &out);
            trace.write_csv(&path)?;
            eprintln!("wrote {} seconds of trace to {}", duration, path.display());
        }
        Command::Phase1 {
            trace,
            m,
            mode,
            window,
            out,
        } => {
            let mode: ExtractionMode = mode.parse()?;
            let trace = WorkloadTrace::read_csv(&resolve(&cli.out_dir, &trace))?;
            let smoothed = smooth(&trace, window)?;
            let plan = extract_failure_points(&smoothed, m, mode)?;
            let path = resolve(&cli.out_dir, &out);
            plan.save_json(&path)?;
            eprintln!("wrote {} failure points to {}", plan.m, path.display());
        }
        Command::Profile {
            trace,
            plan,
            grid,
            spec,
            out,
            epsilon,
            reference,
            margin_before,
            margin_after,
        } => {
            let trace = WorkloadTrace::read_csv(&resolve(&cli.out_dir, &trace))?;
            let plan = FailurePlan::load_json(&resolve(&cli.out_dir, &plan))?;
            let grid = ConfigGrid::parse(&grid)?;
            let spec = match spec {
                Some(p) => citune::domain::read_json::<PipelineSpec>(&resolve(&cli.out_dir, &p))?,
                None => PipelineSpec::for_peak_rate(trace.peak_rate()),
            };
            let reference = match reference.as_str() {
                "completion" => InjectionReference::Completion,
                "start" => InjectionReference::Start,
                other => {
                    return Err(Error::Parameter(format!(
                        "unknown injection reference '{other}' (expected completion|start)"
                    )))
                }
            };
            let margins = match (margin_before, margin_after) {
                (None, None) => None,
                (b, a) => Some((b.unwrap_or(0.0), a.unwrap_or(0.0))),
            };
            let opts = ProfilingOptions {
                epsilon,
                reference,
                margins,
                ..ProfilingOptions::default()
            };
            let matrix = run_profiling(&trace, &plan, &grid, &spec, &opts, seed)?;
            let path = resolve(&cli.out_dir, &out);
            matrix.save_json(&path)?;
            let csv_path = path.with_extension("csv");
            matrix.write_csv(&csv_path)?;
            eprintln!(
                "wrote {}x{} profiling matrix ({} valid cells) to {} and {}",
                matrix.plan.m,
                matrix.grid.z,
                matrix.valid_cells(),
                path.display(),
                csv_path.display()
            );
        }
        Command::Fit {
            matrix,
            target,
            degree,
            out,
        } => {
            let matrix = ProfilingMatrix::load_json(&resolve(&cli.out_dir, &matrix))?;
            let target: ModelTarget = target.parse()?;
            let samples: Vec<(f64, f64, f64)> = matrix
                .flat_rows()
                .iter()
                .map(|(rate, ci, l, r)| match target {
                    ModelTarget::Latency => (*ci, *rate, *l),
                    ModelTarget::Recovery => (*ci, *rate, *r),
                })
                .collect();
            let model = fit(&samples, target, degree)?;
            let path = resolve(&cli.out_dir, &out);
            model.save_json(&path)?;
            eprintln!(
                "fitted {:?} model on {} samples (rmse {:.3}) to {}",
                target,
                model.training_summary.samples,
                model.training_summary.residual_rmse,
                path.display()
            );
        }
        Command::RunExperiment { scenario } => {
            let mut scenario = Scenario::load_json(&resolve(&cli.out_dir, &scenario))?;
            if let Some(s) = cli.seed {
                scenario.seed = s;
            }
            let output = run_experiment(&scenario)?;
            write_bundle(&output, &cli.out_dir)?;
            eprintln!(
                "experiment '{}' complete: {} runs, {} decisions, bundle in {}",
                scenario.name,
                output.bundle.runs.len(),
                output.bundle.decisions.len(),
                cli.out_dir.display()
            );
        }
        Command::Report { bundle, out } => {
            let dir = resolve(&cli.out_dir, &bundle);
            let report: ExperimentBundle = citune::domain::read_json(&dir.join("report.json"))?;
            let (rows, warnings) = normalized_report(&report);
            for w in warnings {
                eprintln!("warning: {w}");
            }
            let path = out
                .map(|p| resolve(&cli.out_dir, &p))
                .unwrap_or_else(|| dir.join("normalized.csv"));
            write_normalized_csv(&rows, &path)?;
            eprintln!("wrote normalized summary for {} runs to {}", rows.len(), path.display());
        }
    }
    Ok(())
}

//! Command-line front end: load a model file, compute its reach tube, emit
//! the tube plus tightness metrics as JSON or CSV, and exit with a verdict
//! code (0 safe, 1 unsafe, 2 unknown, 3 error).

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Parser, ValueEnum};
use serde::Serialize;

use lipreach::model::{load_model, LoadedModel};
use lipreach::oracle::{grid_clouds, hull_area, project_cloud, SampleCloud};
use lipreach::reach::{check_safety, reach_tube, ReachOptions, ReachTube, Verdict, WitnessSearch};
use lipreach::LipStrategy;

/// Reachability verifier for neural-network controlled systems.
///
/// Computes a per-time bounding box of the reachable states over a time
/// horizon by deterministic Lipschitzian optimisation, compares it against
/// the avoid and goal regions in the model file, and reports a verdict.
#[derive(Parser, Debug)]
#[command(name = "lipreach", version, disable_help_subcommand = true)]
struct Cli {
    /// Model file (JSON: plant, controller, init_set, control_step, safety).
    #[arg(long)]
    model: PathBuf,

    /// Time horizon in seconds; output times never exceed it.
    #[arg(long)]
    horizon: f64,

    /// Explicit comma-separated output times (sorted, deduplicated).
    #[arg(long, conflicts_with = "per_step", value_delimiter = ',')]
    times: Option<Vec<f64>>,

    /// Output points per control step when --times is not given.
    #[arg(long, default_value_t = 1)]
    per_step: usize,

    /// Optimiser tolerance: convergence when best - bound <= eps.
    #[arg(long, default_value_t = 5e-4)]
    eps: f64,

    /// Iteration cap for each one-dimensional optimiser run.
    #[arg(long = "kmax", default_value_t = 10_000)]
    k_max: usize,

    /// Safety multiplier for the dynamic Lipschitz estimates (must be > 1).
    #[arg(long, default_value_t = 1.5)]
    r: f64,

    /// Slope strategy: "local", "global", or "fixed:<L>".
    #[arg(long, default_value = "local")]
    strategy: String,

    /// RK4 substeps per control step.
    #[arg(long, default_value_t = 20)]
    substeps: u32,

    /// Grid points for the sampling oracle behind the hull-area metrics;
    /// 0 disables the oracle.
    #[arg(long = "oracle-grid", default_value_t = 1000)]
    oracle_grid: usize,

    /// Worker threads for the per-time bound tasks; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,

    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Report format.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum Format {
    Json,
    Csv,
}

impl Format {
    fn name(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

/// Settings echoed into every report so a run can be reproduced from its
/// output alone.
#[derive(Serialize)]
struct ConfigEcho {
    model: String,
    horizon: f64,
    times: Vec<f64>,
    /// None when the grid came from --times.
    per_step: Option<usize>,
    eps: f64,
    k_max: usize,
    r: f64,
    strategy: String,
    substeps: u32,
    oracle_grid: usize,
    threads: usize,
    format: &'static str,
    out: Option<String>,
}

#[derive(Serialize)]
struct ProjectionSample {
    time: f64,
    box_area: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    hull_area: Option<f64>,
    /// box_area / hull_area; absent when the sampled hull is degenerate.
    #[serde(skip_serializing_if = "Option::is_none")]
    tightness: Option<f64>,
}

#[derive(Serialize)]
struct ProjectionMetrics {
    dims: [usize; 2],
    per_time: Vec<ProjectionSample>,
}

#[derive(Serialize)]
struct Metrics {
    projections: Vec<ProjectionMetrics>,
}

#[derive(Serialize)]
struct Report<'a> {
    config: &'a ConfigEcho,
    tube: &'a ReachTube,
    metrics: &'a Metrics,
    verdict: &'a Verdict,
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err)
            if matches!(
                err.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            ) =>
        {
            print!("{err}");
            return 0;
        }
        Err(err) => {
            eprint!("{err}");
            return 3;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            3
        }
    }
}

fn execute(cli: &Cli) -> Result<i32> {
    validate(cli)?;
    let strategy = parse_strategy(&cli.strategy, cli.r)?;
    let loaded = load_model(&cli.model, cli.substeps)?;
    let times = output_times(cli, &loaded)?;

    let options = ReachOptions {
        eps: cli.eps,
        k_max: cli.k_max,
        strategy,
        threads: cli.threads,
    };
    let tube = reach_tube(&loaded.model, &loaded.init_set, &times, &options)?;

    let clouds = if cli.oracle_grid > 0 {
        Some(
            grid_clouds(&loaded.model, &loaded.init_set, &times, cli.oracle_grid)
                .context("sampling oracle failed")?,
        )
    } else {
        None
    };
    let metrics = compute_metrics(&tube, clouds.as_deref());

    let verdict = match &loaded.safety {
        Some(regions) => check_safety(
            &loaded.model,
            &loaded.init_set,
            &regions.with_horizon(cli.horizon),
            &tube,
            &WitnessSearch::default(),
        )?,
        // No safety section: nothing to violate, nothing to reach.
        None => Verdict::Safe,
    };

    let config = ConfigEcho {
        model: cli.model.display().to_string(),
        horizon: cli.horizon,
        times,
        per_step: if cli.times.is_some() {
            None
        } else {
            Some(cli.per_step)
        },
        eps: cli.eps,
        k_max: cli.k_max,
        r: cli.r,
        strategy: cli.strategy.clone(),
        substeps: cli.substeps,
        oracle_grid: cli.oracle_grid,
        threads: cli.threads,
        format: cli.format.name(),
        out: cli.out.as_ref().map(|p| p.display().to_string()),
    };

    let report = match cli.format {
        Format::Json => {
            let mut text = serde_json::to_string_pretty(&Report {
                config: &config,
                tube: &tube,
                metrics: &metrics,
                verdict: &verdict,
            })?;
            text.push('\n');
            text
        }
        Format::Csv => render_csv(&config, &tube, &verdict),
    };

    let verdict_line = match &verdict {
        Verdict::Safe => "verdict: safe".to_string(),
        Verdict::Unsafe(w) => format!("verdict: unsafe (witness from {:?} at t={})", w.x0, w.time),
        Verdict::Unknown {
            first_conflict_time,
        } => format!("verdict: unknown (unconfirmed conflict at t={first_conflict_time})"),
    };

    match &cli.out {
        Some(path) => {
            std::fs::write(path, report)
                .with_context(|| format!("cannot write {}", path.display()))?;
            println!("{verdict_line}");
        }
        None => {
            print!("{report}");
            eprintln!("{verdict_line}");
        }
    }

    Ok(match verdict {
        Verdict::Safe => 0,
        Verdict::Unsafe(_) => 1,
        Verdict::Unknown { .. } => 2,
    })
}

fn validate(cli: &Cli) -> Result<()> {
    if !(cli.horizon.is_finite() && cli.horizon > 0.0) {
        bail!("--horizon must be positive and finite, got {}", cli.horizon);
    }
    if !(cli.eps.is_finite() && cli.eps > 0.0) {
        bail!("--eps must be positive and finite, got {}", cli.eps);
    }
    if cli.k_max == 0 {
        bail!("--kmax must be at least 1");
    }
    if !(cli.r.is_finite() && cli.r > 1.0) {
        bail!("--r must be greater than 1, got {}", cli.r);
    }
    if cli.per_step == 0 {
        bail!("--per-step must be at least 1");
    }
    Ok(())
}

fn parse_strategy(name: &str, r: f64) -> Result<LipStrategy> {
    match name {
        "local" => Ok(LipStrategy::local_tuning(r)),
        "global" => Ok(LipStrategy::global_dynamic(r)),
        other => {
            let Some(raw) = other.strip_prefix("fixed:") else {
                bail!("unknown strategy '{other}' (expected local, global, or fixed:<L>)");
            };
            let slope: f64 = raw
                .parse()
                .with_context(|| format!("bad fixed slope '{raw}'"))?;
            if !(slope.is_finite() && slope > 0.0) {
                bail!("fixed slope must be positive and finite, got {slope}");
            }
            Ok(LipStrategy::fixed(slope))
        }
    }
}

/// The output time grid: either the explicit --times list (sorted, exact
/// duplicates removed) or multiples of delta/per_step up to the horizon.
/// Control-step boundaries are computed as whole multiples of delta so the
/// grid hits them exactly.
fn output_times(cli: &Cli, loaded: &LoadedModel) -> Result<Vec<f64>> {
    if let Some(times) = &cli.times {
        let mut times = times.clone();
        if times.is_empty() {
            bail!("--times must list at least one time");
        }
        times.sort_by(|a, b| a.partial_cmp(b).expect("clap rejects NaN times already"));
        times.dedup();
        for &t in &times {
            if !(t.is_finite() && t > 0.0) {
                bail!("output times must be positive and finite, got {t}");
            }
            if t > cli.horizon {
                bail!("output time {t} exceeds the horizon {}", cli.horizon);
            }
        }
        return Ok(times);
    }

    let delta = loaded.model.delta();
    let dt = delta / cli.per_step as f64;
    let count = (cli.horizon / dt * (1.0 + 1e-12)).floor() as usize;
    if count == 0 {
        bail!(
            "horizon {} is shorter than one output interval {dt}; raise --horizon or --per-step",
            cli.horizon
        );
    }
    Ok((1..=count)
        .map(|q| {
            if q % cli.per_step == 0 {
                (q / cli.per_step) as f64 * delta
            } else {
                q as f64 * dt
            }
        })
        .collect())
}

fn compute_metrics(tube: &ReachTube, clouds: Option<&[SampleCloud]>) -> Metrics {
    let dim = tube
        .slices
        .first()
        .map(|s| s.rect.dim())
        .unwrap_or_default();
    let mut projections = Vec::new();
    for i in 0..dim {
        for j in i + 1..dim {
            let per_time = tube
                .slices
                .iter()
                .enumerate()
                .map(|(idx, slice)| {
                    let box_area = slice.rect.projected_area(i, j);
                    let hull = clouds.map(|clouds| hull_area(&project_cloud(&clouds[idx], i, j)));
                    ProjectionSample {
                        time: slice.time,
                        box_area,
                        hull_area: hull,
                        tightness: hull.filter(|&h| h > 0.0).map(|h| box_area / h),
                    }
                })
                .collect();
            projections.push(ProjectionMetrics {
                dims: [i, j],
                per_time,
            });
        }
    }
    Metrics { projections }
}

/// One row per (time, dimension); configuration and verdict ride along as
/// comment lines so a CSV file is self-describing.
fn render_csv(config: &ConfigEcho, tube: &ReachTube, verdict: &Verdict) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# model: {}", config.model);
    let _ = writeln!(out, "# horizon: {}", config.horizon);
    if let Some(per_step) = config.per_step {
        let _ = writeln!(out, "# per_step: {per_step}");
    } else {
        let _ = writeln!(
            out,
            "# times: {}",
            config
                .times
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(",")
        );
    }
    let _ = writeln!(out, "# eps: {}", config.eps);
    let _ = writeln!(out, "# kmax: {}", config.k_max);
    let _ = writeln!(out, "# r: {}", config.r);
    let _ = writeln!(out, "# strategy: {}", config.strategy);
    let _ = writeln!(out, "# substeps: {}", config.substeps);
    let _ = writeln!(out, "# oracle_grid: {}", config.oracle_grid);
    let _ = writeln!(out, "# threads: {}", config.threads);
    match verdict {
        Verdict::Safe => {
            let _ = writeln!(out, "# verdict: safe");
        }
        Verdict::Unsafe(w) => {
            let _ = writeln!(out, "# verdict: unsafe");
            let _ = writeln!(
                out,
                "# witness_x0: {}",
                w.x0.iter()
                    .map(f64::to_string)
                    .collect::<Vec<_>>()
                    .join(",")
            );
            let _ = writeln!(out, "# witness_time: {}", w.time);
        }
        Verdict::Unknown {
            first_conflict_time,
        } => {
            let _ = writeln!(out, "# verdict: unknown");
            let _ = writeln!(out, "# first_conflict_time: {first_conflict_time}");
        }
    }
    out.push_str("time,dim,lower,upper,converged_min,converged_max\n");
    for slice in &tube.slices {
        for d in 0..slice.rect.dim() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                slice.time,
                d + 1,
                slice.rect.lower[d],
                slice.rect.upper[d],
                slice.converged_min[d],
                slice.converged_max[d],
            );
        }
    }
    out
}

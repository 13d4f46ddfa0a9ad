use std::fs;
use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;
use waterline::scenario::{channel_gains, generate, realization_problem};
use waterline::{ScenarioObjective, ScenarioSpec, Solution, SolverConfig};

use crate::io::{emit, to_json};
use crate::{Failure, ScenarioArgs};

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Comma-separated SNR points in dB.
    #[arg(long, value_delimiter = ',', default_value = "0,5,10,15,20")]
    pub snr_list: Vec<f64>,
    /// CSV of the mean objective per SNR; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV of the first realization's allocation at `--dump-snr`.
    #[arg(long)]
    pub dump: Option<PathBuf>,
    /// SNR of the allocation dump; the last SNR point by default.
    #[arg(long)]
    pub dump_snr: Option<f64>,
    /// Worker threads for the realizations; all cores when absent.
    #[arg(long)]
    pub jobs: Option<usize>,
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<(), Failure> {
    let spec = args.scenario.resolve()?;
    let instances = generate(&spec).map_err(|e| Failure::Input(e.to_string()))?;
    fs::create_dir_all(&args.out_dir).map_err(|e| Failure::Input(format!("{}: {e}", args.out_dir.display())))?;
    for (r, inst) in instances.iter().enumerate() {
        let path = args.out_dir.join(format!("realization_{r:04}.json"));
        emit(Some(&path), &to_json(inst))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub snr_db: f64,
    /// Mean summed MSE (minimized) or summed capacity over solved realizations.
    pub mean_value: f64,
    pub solved: usize,
    pub failed: usize,
    /// Fraction of solved realizations with some power on a box bound.
    pub bound_active_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DumpRow {
    pub subcarrier: usize,
    pub eigenmode: usize,
    pub gain: f64,
    pub power: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    pub dump: Vec<DumpRow>,
}

struct Outcome {
    value: f64,
    bound_active: bool,
}

fn solve_realization(spec: &ScenarioSpec, r: usize) -> Result<(Outcome, Vec<f64>), String> {
    let problem = realization_problem(spec, r).map_err(|e| e.to_string())?;
    let solution = problem.solve(&SolverConfig::default()).map_err(|e| e.to_string())?;
    let Solution::Single(a) = solution else {
        return Err("scenario problems are single-budget".into());
    };
    let has_boxes = spec.gamma.is_some() || spec.tau.is_some();
    let value = match spec.objective {
        ScenarioObjective::InverseMse => -a.objective_value,
        ScenarioObjective::LogCapacity => a.objective_value,
    };
    let outcome = Outcome {
        value,
        bound_active: has_boxes && (!a.lower_set.is_empty() || !a.upper_set.is_empty()),
    };
    Ok((outcome, a.powers))
}

/// Solves every realization at every SNR point; realizations run in
/// parallel and are reduced in index order, so results do not depend on
/// the thread count.
pub fn run_sweep(spec: &ScenarioSpec, snrs: &[f64], dump_snr: Option<f64>) -> SweepReport {
    let mut points = Vec::with_capacity(snrs.len());
    for &snr in snrs {
        let at = ScenarioSpec {
            snr_db: snr,
            ..spec.clone()
        };
        let outcomes: Vec<Result<Outcome, String>> = (0..at.realizations)
            .into_par_iter()
            .map(|r| solve_realization(&at, r).map(|o| o.0))
            .collect();
        let solved: Vec<&Outcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
        let n = solved.len();
        let mean_value = solved.iter().map(|o| o.value).sum::<f64>() / n as f64;
        let active = solved.iter().filter(|o| o.bound_active).count();
        points.push(SweepPoint {
            snr_db: snr,
            mean_value,
            solved: n,
            failed: outcomes.len() - n,
            bound_active_fraction: if n == 0 { 0.0 } else { active as f64 / n as f64 },
        });
    }
    let dump = dump_snr
        .map(|snr| {
            let at = ScenarioSpec {
                snr_db: snr,
                ..spec.clone()
            };
            dump_rows(&at)
        })
        .unwrap_or_default();
    SweepReport { points, dump }
}

fn dump_rows(spec: &ScenarioSpec) -> Vec<DumpRow> {
    let Ok((_, powers)) = solve_realization(spec, 0) else {
        return Vec::new();
    };
    let gains = channel_gains(spec, 0);
    let unit = spec.budget() / spec.box_denominator.unwrap_or(spec.channels() as f64);
    let lower = spec.gamma.unwrap_or(0.0) * unit;
    let upper = spec.tau.map_or(f64::INFINITY, |t| t * unit);
    powers
        .iter()
        .zip(&gains)
        .enumerate()
        .map(|(k, (&power, &gain))| DumpRow {
            subcarrier: k / spec.antennas,
            eigenmode: k % spec.antennas,
            gain,
            power,
            lower,
            upper,
        })
        .collect()
}

fn csv_text<I, R>(header: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory CSV");
    for row in rows {
        w.write_record(row).expect("in-memory CSV");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("CSV is UTF-8")
}

pub fn render_points(spec: &ScenarioSpec, points: &[SweepPoint]) -> String {
    let metric = match spec.objective {
        ScenarioObjective::InverseMse => "mean_mse",
        ScenarioObjective::LogCapacity => "mean_capacity",
    };
    let bound = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    csv_text(
        &["snr_db", "gamma", "tau", metric, "solved", "failed", "bound_active_fraction"],
        points.iter().map(|p| {
            vec![
                p.snr_db.to_string(),
                bound(spec.gamma),
                bound(spec.tau),
                format!("{:.16e}", p.mean_value),
                p.solved.to_string(),
                p.failed.to_string(),
                p.bound_active_fraction.to_string(),
            ]
        }),
    )
}

pub fn render_dump(rows: &[DumpRow]) -> String {
    csv_text(
        &["subcarrier", "eigenmode", "gain", "power", "lower", "upper"],
        rows.iter().map(|r| {
            vec![
                r.subcarrier.to_string(),
                r.eigenmode.to_string(),
                format!("{:.16e}", r.gain),
                format!("{:.16e}", r.power),
                format!("{:.16e}", r.lower),
                if r.upper.is_finite() { format!("{:.16e}", r.upper) } else { "inf".into() },
            ]
        }),
    )
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<(), Failure> {
    let spec = args.scenario.resolve()?;
    if args.snr_list.is_empty() {
        return Err(Failure::Input("--snr-list is empty".into()));
    }
    let dump_snr = args.dump.as_ref().map(|_| args.dump_snr.unwrap_or(*args.snr_list.last().unwrap()));
    let report = match args.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| Failure::Input(format!("--jobs: {e}")))?
            .install(|| run_sweep(&spec, &args.snr_list, dump_snr)),
        None => run_sweep(&spec, &args.snr_list, dump_snr),
    };
    emit(args.out.as_deref(), &render_points(&spec, &report.points))?;
    if let Some(path) = &args.dump {
        emit(Some(path), &render_dump(&report.dump))?;
    }
    let failed: usize = report.points.iter().map(|p| p.failed).sum();
    if failed > 0 {
        eprintln!("{failed} realizations failed to solve and were left out of the means");
    }
    Ok(())
}

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use waterline::oracle::{enumerate_box, BOX_ENUMERATION_LIMIT};
use waterline::{solve_box, BoxProblem, BoxStrategy, Problem, SolverConfig, Status};

use crate::io::emit;
use crate::solve::load_problem;
use crate::Failure;

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Box instance file (JSON).
    pub instance: PathBuf,
    /// Comma-separated strategy names, or `all`.
    #[arg(long, default_value = "all")]
    pub strategies: String,
    /// CSV output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub name: String,
    pub status: String,
    pub powers: Option<Vec<f64>>,
    pub objective: f64,
    pub iterations: Option<usize>,
    pub time_s: f64,
}

fn status_name(s: Status) -> String {
    serde_json::to_value(s).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Runs the strategies in name order, then the enumeration oracle, or an
/// `out_of_range` row when the instance is too large for it.
pub fn compare_strategies(problem: &BoxProblem, strategies: &[BoxStrategy]) -> Vec<CompareRow> {
    let mut sorted = strategies.to_vec();
    sorted.sort_by_key(|s| s.name());
    sorted.dedup();
    let mut rows: Vec<CompareRow> = sorted
        .into_iter()
        .map(|s| {
            let start = Instant::now();
            let out = solve_box(problem, &SolverConfig::with_strategy(s));
            let time_s = start.elapsed().as_secs_f64();
            match out {
                Ok(a) => CompareRow {
                    name: s.name().into(),
                    status: status_name(a.status),
                    objective: a.objective_value,
                    iterations: Some(a.iterations),
                    powers: Some(a.powers),
                    time_s,
                },
                Err(e) => CompareRow {
                    name: s.name().into(),
                    status: format!("error: {e}"),
                    powers: None,
                    objective: f64::NAN,
                    iterations: None,
                    time_s,
                },
            }
        })
        .collect();
    let start = Instant::now();
    rows.push(if problem.len() <= BOX_ENUMERATION_LIMIT {
        match enumerate_box(problem) {
            Ok(r) => CompareRow {
                name: "oracle".into(),
                status: "certified".into(),
                objective: r.objective,
                iterations: Some(r.evaluations),
                powers: Some(r.powers),
                time_s: start.elapsed().as_secs_f64(),
            },
            Err(e) => CompareRow {
                name: "oracle".into(),
                status: format!("error: {e}"),
                powers: None,
                objective: f64::NAN,
                iterations: None,
                time_s: 0.0,
            },
        }
    } else {
        CompareRow {
            name: "oracle".into(),
            status: "out_of_range".into(),
            powers: None,
            objective: f64::NAN,
            iterations: None,
            time_s: 0.0,
        }
    });
    rows
}

/// CSV with, per row, the largest L-infinity distance to any other row and
/// the objective gap to the best row.
pub fn render_csv(rows: &[CompareRow]) -> String {
    let best = rows.iter().map(|r| r.objective).filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["strategy", "status", "objective", "objective_gap", "linf_max", "iterations", "time_s"])
        .expect("in-memory CSV");
    for r in rows {
        let (objective, gap, spread) = match &r.powers {
            Some(p) => {
                let spread = rows
                    .iter()
                    .filter(|o| o.name != r.name)
                    .filter_map(|o| o.powers.as_ref())
                    .map(|q| linf(p, q))
                    .fold(0.0, f64::max);
                let gap = (best - r.objective) / best.abs().max(1.0);
                (format!("{:.16e}", r.objective), format!("{gap:.3e}"), format!("{spread:.3e}"))
            }
            None => (String::new(), String::new(), String::new()),
        };
        let iterations = r.iterations.map_or(String::new(), |i| i.to_string());
        w.write_record([
            r.name.as_str(),
            r.status.as_str(),
            &objective,
            &gap,
            &spread,
            &iterations,
            &format!("{:.3e}", r.time_s),
        ])
        .expect("in-memory CSV");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("CSV is UTF-8")
}

pub fn cmd_compare(args: &CompareArgs) -> Result<(), Failure> {
    let Problem::Box(problem) = load_problem(&args.instance)? else {
        return Err(Failure::Input("compare needs a box instance".into()));
    };
    let strategies: Vec<BoxStrategy> = if args.strategies == "all" {
        BoxStrategy::ALL.to_vec()
    } else {
        args.strategies
            .split(',')
            .map(|s| crate::parse_strategy(s.trim()).map_err(Failure::Input))
            .collect::<Result<_, _>>()?
    };
    let rows = compare_strategies(&problem, &strategies);
    emit(args.out.as_deref(), &render_csv(&rows))?;
    let failed: Vec<&str> = rows
        .iter()
        .filter(|r| r.name != "oracle" && r.powers.is_none())
        .map(|r| r.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Solver(format!("strategies failed: {}", failed.join(", "))))
    }
}

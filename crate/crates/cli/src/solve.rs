use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use serde::{Deserialize, Serialize};
use waterline::oracle::check_conditions;
use waterline::{
    BoxStrategy, KktReport, Problem, ProblemClass, ProblemInstance, Solution, SolverConfig, Status,
};

use crate::io::{emit, read_json, to_json};
use crate::{parse_strategy, Failure};

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Instance file (JSON).
    pub instance: PathBuf,
    /// Box strategy: set_based_a, set_based_b, bisection or order_based.
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<BoxStrategy>,
    /// Tolerance of the embedded optimality report.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Result file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub instance: PathBuf,
    pub result: PathBuf,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Also write the report as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultFile {
    pub problem_class: ProblemClass,
    pub solver: String,
    pub config: SolverConfig,
    pub status: Status,
    /// Flattened in group order for group problems.
    pub powers: Vec<f64>,
    pub water_levels: Vec<Option<f64>>,
    pub objective: f64,
    pub iterations: usize,
    pub solution: Solution,
    pub conditions: KktReport,
    pub wall_time_s: f64,
}

pub fn load_problem(path: &Path) -> Result<Problem, Failure> {
    let instance: ProblemInstance = read_json(path)?;
    instance
        .to_problem()
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn solver_name(problem: &Problem, cfg: &SolverConfig) -> String {
    match problem {
        Problem::Box(_) => format!("box/{}", cfg.box_strategy.name()),
        Problem::Fair(p) if p.has_boxes() => "maxmin_boxed".into(),
        _ => problem.class().name().into(),
    }
}

pub fn solve_problem(problem: &Problem, cfg: &SolverConfig, tol: f64) -> Result<ResultFile, Failure> {
    let start = Instant::now();
    let solution = problem.solve(cfg).map_err(|e| Failure::Solver(e.to_string()))?;
    let wall_time_s = start.elapsed().as_secs_f64();
    let powers = solution.powers();
    Ok(ResultFile {
        problem_class: problem.class(),
        solver: solver_name(problem, cfg),
        config: cfg.clone(),
        status: solution.status(),
        water_levels: solution.water_levels(),
        objective: solution.objective_value(),
        iterations: solution.iterations(),
        conditions: check_conditions(problem, &powers, tol),
        powers,
        solution,
        wall_time_s,
    })
}

pub fn cmd_solve(args: &SolveArgs) -> Result<(), Failure> {
    let problem = load_problem(&args.instance)?;
    let mut cfg = SolverConfig::default();
    if let Some(s) = args.strategy {
        cfg.box_strategy = s;
    }
    let result = solve_problem(&problem, &cfg, args.tol)?;
    emit(args.out.as_deref(), &to_json(&result))
}

pub fn render_report(report: &KktReport) -> String {
    let mut out = String::new();
    for r in &report.residuals {
        let verdict = match (r.applicable, r.passed) {
            (false, _) => "n/a",
            (true, true) => "PASS",
            (true, false) => "FAIL",
        };
        let worst = r.worst.map_or(String::new(), |k| format!("  worst={k}"));
        out.push_str(&format!("{:<20} {:>12.3e}  tol={:.1e}  {verdict}{worst}\n", r.name, r.value, r.tolerance));
    }
    out.push_str(if report.passed { "conditions: PASS\n" } else { "conditions: FAIL\n" });
    out
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<(), Failure> {
    let problem = load_problem(&args.instance)?;
    let result: ResultFile = read_json(&args.result)?;
    if result.problem_class != problem.class() {
        return Err(Failure::Input(format!(
            "result is for a {} problem, instance is {}",
            result.problem_class.name(),
            problem.class().name()
        )));
    }
    if result.powers.len() != problem.len() {
        return Err(Failure::Input(format!(
            "result has {} powers, instance has {} subchannels",
            result.powers.len(),
            problem.len()
        )));
    }
    let report = check_conditions(&problem, &result.powers, args.tol);
    print!("{}", render_report(&report));
    if let Some(out) = &args.out {
        emit(Some(out), &to_json(&report))?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Check("verification failed".into()))
    }
}

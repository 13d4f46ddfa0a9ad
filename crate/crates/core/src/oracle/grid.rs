use super::{OracleMethod, OracleResult};
use crate::allocation::SolverConfig;
use crate::error::{Error, Result};
use crate::problem::Problem;
use crate::simplex::water_fill;

pub const GRID_DIMENSION_LIMIT: usize = 4;

/// Points allowed in the first, uniform pass.
const FIRST_PASS_POINTS: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptions {
    /// Spacing of the first pass, before the point cap.
    pub resolution: f64,
    /// Zoom rounds, each ten times finer than the last.
    pub refinements: usize,
}

impl GridOptions {
    pub fn for_budget(budget: f64) -> Self {
        Self {
            resolution: 1e-3 * budget,
            refinements: 4,
        }
    }
}

/// Maximizes `objective` over a lattice on `[lower, upper]`, then zooms in
/// around the best point. `objective` returns `None` outside the feasible
/// region.
pub fn grid_search<F>(lower: &[f64], upper: &[f64], opts: &GridOptions, objective: F) -> Result<OracleResult>
where
    F: Fn(&[f64]) -> Option<f64>,
{
    let d = lower.len();
    if d > GRID_DIMENSION_LIMIT {
        return Err(Error::SizeLimit {
            size: d,
            limit: GRID_DIMENSION_LIMIT,
        });
    }
    let mut evaluations = 0;
    let mut best: Option<(Vec<f64>, f64)> = None;
    if d == 0 {
        let value = objective(&[]).unwrap_or(f64::NEG_INFINITY);
        return Ok(finish(Vec::new(), value, 1));
    }

    let cap = (FIRST_PASS_POINTS as f64).powf(1.0 / d as f64).floor() as usize;
    let mut counts: Vec<usize> = (0..d)
        .map(|i| (((upper[i] - lower[i]) / opts.resolution).ceil() as usize + 1).clamp(2, cap.max(2)))
        .collect();
    let mut lo = lower.to_vec();
    let mut hi = upper.to_vec();
    for round in 0..=opts.refinements {
        let cells: Vec<f64> = (0..d).map(|i| (hi[i] - lo[i]) / (counts[i] - 1) as f64).collect();
        let mut index = vec![0usize; d];
        let mut point = vec![0.0; d];
        loop {
            for i in 0..d {
                point[i] = if index[i] + 1 == counts[i] { hi[i] } else { lo[i] + index[i] as f64 * cells[i] };
            }
            evaluations += 1;
            if let Some(v) = objective(&point) {
                if best.as_ref().is_none_or(|b| v > b.1) {
                    best = Some((point.clone(), v));
                }
            }
            let mut i = 0;
            while i < d {
                index[i] += 1;
                if index[i] < counts[i] {
                    break;
                }
                index[i] = 0;
                i += 1;
            }
            if i == d {
                break;
            }
        }
        let Some((center, _)) = &best else {
            return Err(Error::InvalidProblem("no feasible grid point".into()));
        };
        if round == opts.refinements {
            break;
        }
        for i in 0..d {
            lo[i] = (center[i] - 3.0 * cells[i]).max(lower[i]);
            hi[i] = (center[i] + 3.0 * cells[i]).min(upper[i]);
            counts[i] = (((hi[i] - lo[i]) / (cells[i] / 10.0)).round() as usize + 1).max(2);
        }
    }
    let (x, v) = best.expect("checked above");
    Ok(finish(x, v, evaluations))
}

fn finish(powers: Vec<f64>, objective: f64, evaluations: usize) -> OracleResult {
    OracleResult {
        powers,
        objective,
        method: OracleMethod::GridSearch,
        evaluations,
        certified: false,
    }
}

/// Grid oracle for any problem class with at most five power variables:
/// the last power takes whatever budget the others leave. Unboxed
/// two-group problems of any size are searched over the split of the budget
/// instead, with each group water-filled at its share.
pub fn grid_problem(problem: &Problem, opts: &GridOptions) -> Result<OracleResult> {
    if let Problem::Fair(p) = problem {
        if p.groups().len() == 2 && !p.has_boxes() && problem.len() > 2 {
            return grid_group_split(problem, opts);
        }
    }
    let n = problem.len();
    if n > GRID_DIMENSION_LIMIT + 1 {
        return Err(Error::SizeLimit {
            size: n,
            limit: GRID_DIMENSION_LIMIT + 1,
        });
    }
    let budget = problem.budget();
    let (lower, upper, prefix): (Vec<f64>, Vec<f64>, Vec<f64>) = match problem {
        Problem::Simplex(p) => (p.lower_bounds().to_vec(), vec![f64::INFINITY; n], vec![]),
        Problem::Box(p) => (p.lower().to_vec(), p.upper().to_vec(), vec![]),
        Problem::Ascending(p) => (p.lower().to_vec(), p.upper().to_vec(), p.prefix_budgets().to_vec()),
        Problem::Fair(p) => p.groups().iter().fold((vec![], vec![], vec![]), |mut acc, g| {
            acc.0.extend(&g.lower);
            acc.1.extend(&g.upper);
            acc
        }),
    };
    let free_hi: Vec<f64> = (0..n - 1).map(|i| upper[i].min(budget)).collect();
    let slack = 1e-12 * budget.max(1.0);
    let r = grid_search(&lower[..n - 1], &free_hi, opts, |x| {
        let used: f64 = x.iter().sum();
        let last = (budget - used).min(upper[n - 1]);
        if last < lower[n - 1] - slack {
            return None;
        }
        let mut p = x.to_vec();
        p.push(last.max(lower[n - 1]));
        let mut cum = 0.0;
        for (v, cap) in p.iter().zip(&prefix) {
            cum += v;
            if cum > cap + slack {
                return None;
            }
        }
        Some(problem.objective(&p))
    })?;
    let mut powers = r.powers;
    let used: f64 = powers.iter().sum();
    powers.push((budget - used).min(upper[n - 1]).max(lower[n - 1]));
    Ok(OracleResult { powers, ..r })
}

fn grid_group_split(problem: &Problem, opts: &GridOptions) -> Result<OracleResult> {
    let Problem::Fair(p) = problem else { unreachable!() };
    let budget = p.budget();
    let cfg = SolverConfig::default();
    let fill = |j: usize, pc: f64| -> Option<Vec<f64>> {
        let g = &p.groups()[j];
        let views: Vec<_> = g.objectives.iter().map(|o| o.at_cluster_power(pc)).collect();
        water_fill(&views, &vec![0.0; g.len()], pc, &cfg).ok().map(|a| a.powers)
    };
    let split = |x: &[f64]| -> Option<Vec<f64>> {
        let mut powers = fill(0, x[0])?;
        powers.extend(fill(1, budget - x[0])?);
        Some(powers)
    };
    let r = grid_search(&[0.0], &[budget], opts, |x| split(x).map(|q| problem.objective(&q)))?;
    let powers = split(&r.powers).ok_or_else(|| Error::InvalidProblem("group split failed".into()))?;
    Ok(OracleResult { powers, ..r })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fair::FairProblem;
    use crate::objective::SubchannelObjective;

    fn log(a: f64) -> SubchannelObjective {
        SubchannelObjective::log_capacity(1.0, a, 1.0).unwrap()
    }

    #[test]
    fn maxmin_pair_target() {
        let p = Problem::Fair(FairProblem::maxmin(vec![vec![log(2.0)], vec![log(1.0)]], 3.0).unwrap());
        let coarse = grid_problem(&p, &GridOptions { resolution: 3e-3, refinements: 0 }).unwrap();
        assert!((coarse.objective - 3f64.ln()).abs() < 2e-3);
        let fine = grid_problem(&p, &GridOptions::for_budget(3.0)).unwrap();
        assert!((fine.objective - 3f64.ln()).abs() < 1e-5);
    }

    #[test]
    fn maxmin_split_matches_solver() {
        let mse = |w: f64, a: f64| SubchannelObjective::inverse_mse(w, a, 1.5).unwrap();
        let fair = FairProblem::maxmin(vec![vec![mse(1.7, 1.5), mse(1.4, 1.5)], vec![mse(0.9, 3.0), mse(0.9, 3.2)]], 3.1)
            .unwrap();
        let exact = crate::fair::solve_maxmin(&fair, &SolverConfig::default()).unwrap();
        let r = grid_problem(&Problem::Fair(fair), &GridOptions::for_budget(3.1)).unwrap();
        assert!((r.objective - exact.objective_value).abs() < 1e-7);
    }

    #[test]
    fn too_many_variables() {
        let p = Problem::Simplex(crate::simplex::SimplexProblem::new(vec![log(1.0); 6], 1.0).unwrap());
        assert!(matches!(grid_problem(&p, &GridOptions::for_budget(1.0)), Err(Error::SizeLimit { .. })));
    }
}

use super::{OracleMethod, OracleResult};
use crate::error::{Error, Result};
use crate::fair::FairMode;
use crate::objective::Utility;
use crate::problem::Problem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientOptions {
    /// Stop when the unit-step gradient mapping falls below this (max norm).
    pub tolerance: f64,
    pub max_iter: usize,
    /// Alternating-projection rounds for prefix constraints.
    pub projection_rounds: usize,
}

impl Default for GradientOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iter: 100_000,
            projection_rounds: 100,
        }
    }
}

/// Euclidean projection onto `{lower <= p <= upper, sum p <= budget}`.
pub fn project_box_sum(y: &[f64], lower: &[f64], upper: &[f64], budget: f64) -> Vec<f64> {
    let clamp = |nu: f64| -> Vec<f64> {
        y.iter()
            .zip(lower.iter().zip(upper))
            .map(|(&v, (&lo, &hi))| (v - nu).max(lo).min(hi))
            .collect()
    };
    let x = clamp(0.0);
    if x.iter().sum::<f64>() <= budget {
        return x;
    }
    let mut lo = 0.0;
    let mut hi = y.iter().zip(lower).map(|(v, l)| v - l).fold(0.0, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if clamp(mid).iter().sum::<f64>() > budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi.max(1.0) {
            break;
        }
    }
    // Finish exactly on the free coordinates of the bracketed shift.
    let x = clamp(hi);
    let free: Vec<usize> = (0..y.len()).filter(|&k| x[k] > lower[k] && x[k] < upper[k]).collect();
    if free.is_empty() {
        return x;
    }
    let fixed: f64 = (0..y.len()).filter(|k| !free.contains(k)).map(|k| x[k]).sum();
    let nu = (free.iter().map(|&k| y[k]).sum::<f64>() - (budget - fixed)) / free.len() as f64;
    let exact = clamp(nu);
    if exact.iter().sum::<f64>() <= budget * (1.0 + 1e-14) {
        exact
    } else {
        x
    }
}

/// Approximate projection onto the box and every prefix budget by Dykstra's
/// alternating projections, then a repair pass that makes the result
/// strictly feasible.
pub fn project_prefix(y: &[f64], prefix: &[f64], lower: &[f64], upper: &[f64], rounds: usize) -> Vec<f64> {
    let k = y.len();
    let mut x = y.to_vec();
    let mut inc = vec![vec![0.0; k]; k + 1];
    for _ in 0..rounds {
        let before = x.clone();
        for set in 0..=k {
            let z: Vec<f64> = x.iter().zip(&inc[set]).map(|(a, b)| a + b).collect();
            let mut p = z.clone();
            if set == k {
                for i in 0..k {
                    p[i] = p[i].max(lower[i]).min(upper[i]);
                }
            } else {
                let s: f64 = z[..=set].iter().sum();
                if s > prefix[set] {
                    let d = (s - prefix[set]) / (set + 1) as f64;
                    p[..=set].iter_mut().for_each(|v| *v -= d);
                }
            }
            inc[set] = z.iter().zip(&p).map(|(a, b)| a - b).collect();
            x = p;
        }
        let moved = x.iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if moved <= 1e-15 {
            break;
        }
    }
    for i in 0..k {
        x[i] = x[i].max(lower[i]).min(upper[i]);
    }
    // Remove any prefix excess from the latest subchannels first.
    let mut cum = 0.0;
    for j in 0..k {
        cum += x[j];
        let mut excess = cum - prefix[j];
        let mut i = j + 1;
        while excess > 0.0 && i > 0 {
            i -= 1;
            let cut = excess.min(x[i] - lower[i]);
            x[i] -= cut;
            excess -= cut;
            cum -= cut;
        }
    }
    x
}

enum Region<'a> {
    Sum {
        lower: Vec<f64>,
        upper: Vec<f64>,
        budget: f64,
    },
    Prefix {
        prefix: &'a [f64],
        lower: &'a [f64],
        upper: &'a [f64],
    },
}

/// Armijo projected-gradient ascent. Max-min classes are not smooth and are
/// left to the grid oracle.
pub fn projected_gradient(problem: &Problem, opts: &GradientOptions) -> Result<OracleResult> {
    let n = problem.len();
    let region = match problem {
        Problem::Simplex(p) => Region::Sum {
            lower: p.lower_bounds().to_vec(),
            upper: vec![f64::INFINITY; n],
            budget: p.budget(),
        },
        Problem::Box(p) => Region::Sum {
            lower: p.lower().to_vec(),
            upper: p.upper().to_vec(),
            budget: p.budget(),
        },
        Problem::Ascending(p) => Region::Prefix {
            prefix: p.prefix_budgets(),
            lower: p.lower(),
            upper: p.upper(),
        },
        Problem::Fair(p) if p.mode() == FairMode::Cluster => Region::Sum {
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
            budget: p.budget(),
        },
        Problem::Fair(_) => {
            return Err(Error::InvalidProblem(
                "max-min objectives are not differentiable; use the grid oracle".into(),
            ))
        }
    };
    let project = |y: &[f64]| -> Vec<f64> {
        match &region {
            Region::Sum { lower, upper, budget } => project_box_sum(y, lower, upper, *budget),
            Region::Prefix { prefix, lower, upper } => project_prefix(y, prefix, lower, upper, opts.projection_rounds),
        }
    };
    let gradient = |x: &[f64]| -> Vec<f64> { objective_gradient(problem, x) };
    let value = |x: &[f64]| problem.objective(x);

    let share = problem.budget() / n as f64;
    let mut x = project(&vec![share; n]);
    let mut fx = value(&x);
    let mut step = 1.0;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let g = gradient(&x);
        let unit: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + b).collect();
        let mapped = project(&unit);
        let norm = x.iter().zip(&mapped).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if norm <= opts.tolerance {
            break;
        }
        let mut accepted = false;
        while step > 1e-20 {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + step * b).collect();
            let y = project(&trial);
            let fy = value(&y);
            let ascent: f64 = g.iter().zip(y.iter().zip(&x)).map(|(gi, (yi, xi))| gi * (yi - xi)).sum();
            if fy >= fx + 1e-4 * ascent && fy.is_finite() {
                x = y;
                fx = fy;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        step = (step * 2.0).min(1e6);
    }
    Ok(OracleResult {
        powers: x,
        objective: fx,
        method: OracleMethod::ProjectedGradient,
        evaluations: iterations,
        certified: false,
    })
}

fn objective_gradient(problem: &Problem, x: &[f64]) -> Vec<f64> {
    let cap = |r: f64| if r.is_nan() { 0.0 } else { r.min(1e12) };
    let rates = |objs: &[crate::objective::SubchannelObjective]| -> Vec<f64> {
        objs.iter().zip(x).map(|(o, &p)| cap(o.rate(p).unwrap_or(f64::INFINITY))).collect()
    };
    match problem {
        Problem::Simplex(p) => rates(p.objectives()),
        Problem::Box(p) => rates(p.objectives()),
        Problem::Ascending(p) => rates(p.objectives()),
        Problem::Fair(p) => {
            let mut out = Vec::with_capacity(x.len());
            for (g, powers) in p.groups().iter().zip(problem.unflatten(x)) {
                let pc: f64 = powers.iter().sum();
                let shared: f64 = g.objectives.iter().zip(&powers).map(|(o, &q)| o.cluster_partial(q, pc)).sum();
                for (o, &q) in g.objectives.iter().zip(&powers) {
                    out.push(cap(o.at_cluster_power(pc).rate(q).unwrap_or(f64::INFINITY)) + shared);
                }
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::SubchannelObjective;
    use crate::simplex::SimplexProblem;

    #[test]
    fn box_sum_projection_meets_the_budget() {
        let x = project_box_sum(&[3.0, 1.0, -1.0], &[0.0; 3], &[2.5, 5.0, 5.0], 3.0);
        assert!((x.iter().sum::<f64>() - 3.0).abs() < 1e-14);
        assert!((x[0] - 2.5).abs() < 1e-14 && (x[1] - 0.5).abs() < 1e-14 && x[2] == 0.0);
    }

    #[test]
    fn prefix_projection_is_feasible() {
        let x = project_prefix(&[1.0, 1.0, 1.0], &[0.5, 1.0, 3.0], &[0.0; 3], &[f64::INFINITY; 3], 100);
        let mut cum = 0.0;
        for (v, cap) in x.iter().zip([0.5, 1.0, 3.0]) {
            cum += v;
            assert!(cum <= cap + 1e-15);
        }
    }

    #[test]
    fn symmetric_pair() {
        let o = SubchannelObjective::log_capacity(1.0, 1.0, 1.0).unwrap();
        let p = Problem::Simplex(SimplexProblem::new(vec![o.clone(), o], 2.0).unwrap());
        let r = projected_gradient(&p, &GradientOptions::default()).unwrap();
        assert!((r.powers[0] - 1.0).abs() < 1e-6 && (r.powers[1] - 1.0).abs() < 1e-6);
        assert!(!r.certified);
    }
}

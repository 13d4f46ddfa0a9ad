use super::{OracleMethod, OracleResult};
use crate::boxed::BoxProblem;
use crate::error::{Error, Result};
use crate::objective::{SubchannelObjective, Utility};
use crate::simplex::{solve_water_level, SimplexProblem};

pub const P1_ENUMERATION_LIMIT: usize = 15;
pub const BOX_ENUMERATION_LIMIT: usize = 8;

struct Best {
    powers: Vec<f64>,
    objective: f64,
    count: usize,
}

impl Best {
    fn new() -> Self {
        Self {
            powers: Vec::new(),
            objective: f64::NEG_INFINITY,
            count: 0,
        }
    }

    fn offer(&mut self, objs: &[SubchannelObjective], powers: Vec<f64>) {
        self.count += 1;
        let value: f64 = objs.iter().zip(&powers).map(|(o, &p)| o.eval(p).unwrap_or(f64::NEG_INFINITY)).sum();
        if value > self.objective {
            self.objective = value;
            self.powers = powers;
        }
    }
}

/// Fills `active` to the remaining budget and places the result, or `None`
/// when the water level pushes some power outside `[lower, upper]`.
fn place_active(
    objs: &[SubchannelObjective],
    lower: &[f64],
    upper: &[f64],
    budget: f64,
    active: &[usize],
    mut powers: Vec<f64>,
) -> Option<Vec<f64>> {
    let fixed: f64 = (0..objs.len()).filter(|k| !active.contains(k)).map(|k| powers[k]).sum();
    let mu = solve_water_level(objs, active, fixed, budget).ok()?;
    let slack = 1e-12 * budget.max(1.0);
    for &k in active {
        let p = objs[k].inverse_rate(mu).ok()?.signed();
        if !(p >= lower[k] - slack && p <= upper[k] + slack) {
            return None;
        }
        powers[k] = p.max(lower[k]).min(upper[k]);
    }
    Some(powers)
}

/// Exhaustive search over every nonempty active set, with the remaining
/// subchannels on their lower bounds.
pub fn enumerate_p1(problem: &SimplexProblem) -> Result<OracleResult> {
    let k = problem.len();
    if k > P1_ENUMERATION_LIMIT {
        return Err(Error::SizeLimit {
            size: k,
            limit: P1_ENUMERATION_LIMIT,
        });
    }
    let objs = problem.objectives();
    let lower = problem.lower_bounds();
    let upper = vec![f64::INFINITY; k];
    let mut best = Best::new();
    best.offer(objs, lower.to_vec());
    for mask in 1u32..(1 << k) {
        let active: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        if let Some(p) = place_active(objs, lower, &upper, problem.budget(), &active, lower.to_vec()) {
            best.offer(objs, p);
        }
    }
    Ok(OracleResult {
        powers: best.powers,
        objective: best.objective,
        method: OracleMethod::EnumerateP1,
        evaluations: best.count,
        certified: true,
    })
}

/// Exhaustive search over all assignments of each subchannel to its lower
/// bound, its upper bound, or the common water level.
pub fn enumerate_box(problem: &BoxProblem) -> Result<OracleResult> {
    let k = problem.len();
    if k > BOX_ENUMERATION_LIMIT {
        return Err(Error::SizeLimit {
            size: k,
            limit: BOX_ENUMERATION_LIMIT,
        });
    }
    let objs = problem.objectives();
    let (lower, upper, budget) = (problem.lower(), problem.upper(), problem.budget());
    let mut best = Best::new();
    let total = 3usize.pow(k as u32);
    'assign: for code in 0..total {
        let mut c = code;
        let mut powers = vec![0.0; k];
        let mut active = Vec::new();
        for i in 0..k {
            match c % 3 {
                0 => powers[i] = lower[i],
                1 if upper[i].is_finite() => powers[i] = upper[i],
                1 => continue 'assign,
                _ => active.push(i),
            }
            c /= 3;
        }
        if active.is_empty() {
            if powers.iter().sum::<f64>() <= budget * (1.0 + 1e-12) {
                best.offer(objs, powers);
            }
        } else if let Some(p) = place_active(objs, lower, upper, budget, &active, powers) {
            best.offer(objs, p);
        }
    }
    Ok(OracleResult {
        powers: best.powers,
        objective: best.objective,
        method: OracleMethod::EnumerateBox,
        evaluations: best.count,
        certified: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(b: f64) -> SubchannelObjective {
        SubchannelObjective::log_capacity(1.0, 1.0, b).unwrap()
    }

    #[test]
    fn weak_channel_is_left_out() {
        let p = SimplexProblem::new(vec![log(1.0), log(3.0)], 1.0).unwrap();
        let r = enumerate_p1(&p).unwrap();
        assert!((r.powers[0] - 1.0).abs() < 1e-14 && r.powers[1] == 0.0);
        assert!(r.certified);
    }

    #[test]
    fn single_channel_takes_the_budget() {
        let p = SimplexProblem::new(vec![log(1.0)], 2.5).unwrap();
        let r = enumerate_p1(&p).unwrap();
        assert_eq!(r.powers, vec![2.5]);
        assert_eq!(r.evaluations, 2);
    }

    #[test]
    fn box_example() {
        let p = BoxProblem::new(vec![log(1.0); 3], 6.0, vec![0.0; 3], vec![1.0, 3.0, 3.0]).unwrap();
        let r = enumerate_box(&p).unwrap();
        let want = [1.0, 2.5, 2.5];
        for (x, y) in r.powers.iter().zip(want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_boxes_force_the_upper_assignment() {
        let p = BoxProblem::new(vec![log(1.0); 2], 3.0, vec![0.0; 2], vec![1.0, 2.0]).unwrap();
        assert_eq!(enumerate_box(&p).unwrap().powers, vec![1.0, 2.0]);
    }

    #[test]
    fn size_limits() {
        let p = BoxProblem::new(vec![log(1.0); 9], 1.0, vec![0.0; 9], vec![1.0; 9]).unwrap();
        assert!(matches!(enumerate_box(&p), Err(Error::SizeLimit { size: 9, limit: 8 })));
    }
}

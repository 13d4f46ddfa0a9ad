//! Single sum-constraint water-filling with optional lower bounds.
//!
//! The solver keeps an index per subchannel. Every round solves the water
//! level over the active indices, evaluates the signed inverse rates, and
//! drops every subchannel whose power lands on or below its lower bound.
//! Dropped subchannels are pinned at the bound and their power is charged
//! against the budget before the next round.

use std::cell::RefCell;

use crate::allocation::{Allocation, KktReport, SolverConfig, Status};
use crate::conditions;
use crate::error::{Error, Result};
use crate::objective::{ClosedForm, Demand, SubchannelObjective, Utility};
use crate::roots::{decreasing_root, RootOptions};

/// Maximize `sum f_k(p_k)` subject to `sum p_k <= P` and `p_k >= gamma_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexProblem {
    objectives: Vec<SubchannelObjective>,
    budget: f64,
    lower_bounds: Vec<f64>,
}

impl SimplexProblem {
    pub fn new(objectives: Vec<SubchannelObjective>, budget: f64) -> Result<Self> {
        let k = objectives.len();
        Self::with_lower_bounds(objectives, budget, vec![0.0; k])
    }

    pub fn with_lower_bounds(objectives: Vec<SubchannelObjective>, budget: f64, lower_bounds: Vec<f64>) -> Result<Self> {
        let problem = Self {
            objectives,
            budget,
            lower_bounds,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<()> {
        validate_channels(&self.objectives, self.budget)?;
        if self.lower_bounds.len() != self.objectives.len() {
            return Err(Error::InvalidProblem(format!(
                "{} lower bounds for {} subchannels",
                self.lower_bounds.len(),
                self.objectives.len()
            )));
        }
        check_lower_bounds(&self.lower_bounds, self.budget)
    }

    pub fn objectives(&self) -> &[SubchannelObjective] {
        &self.objectives
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn lower_bounds(&self) -> &[f64] {
        &self.lower_bounds
    }

    pub fn len(&self) -> usize {
        self.objectives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objectives.is_empty()
    }
}

pub(crate) fn validate_channels(objectives: &[SubchannelObjective], budget: f64) -> Result<()> {
    if objectives.is_empty() {
        return Err(Error::InvalidProblem("at least one subchannel is required".into()));
    }
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(Error::InvalidProblem(format!("budget must be positive and finite, got {budget}")));
    }
    for (k, o) in objectives.iter().enumerate() {
        o.validate()?;
        if o.is_cluster_aware() {
            return Err(Error::InvalidProblem(format!(
                "subchannel {k}: {} objectives need a cluster problem",
                o.family()
            )));
        }
    }
    Ok(())
}

pub(crate) fn check_lower_bounds(lower: &[f64], budget: f64) -> Result<()> {
    if let Some(k) = lower.iter().position(|g| !(*g >= 0.0) || !g.is_finite()) {
        return Err(Error::InvalidProblem(format!(
            "lower bound {k} must be finite and nonnegative, got {}",
            lower[k]
        )));
    }
    let lower_sum: f64 = lower.iter().sum();
    if lower_sum > budget * (1.0 + 1e-12) {
        return Err(Error::InfeasibleBudget { lower_sum, budget });
    }
    Ok(())
}

/// Solves `sum_{k in active} g_k(mu) = budget - fixed_consumption` for `mu`.
///
/// Homogeneous `LogCapacity` or `InverseMse` sets use the closed form;
/// anything else runs a safeguarded Newton iteration in `ln mu`.
pub fn solve_water_level<U: Utility>(objs: &[U], active: &[usize], fixed_consumption: f64, budget: f64) -> Result<f64> {
    let target = budget - fixed_consumption;
    if active.is_empty() {
        return Err(Error::InvalidProblem("water level needs at least one active subchannel".into()));
    }
    if !(target > 0.0) {
        return Err(Error::InvalidProblem(format!(
            "water level needs a positive remaining budget, got {target}"
        )));
    }
    water_level(objs, active, target)
}

pub(crate) fn water_level<U: Utility>(objs: &[U], active: &[usize], target: f64) -> Result<f64> {
    if let Some(mu) = closed_form_level(objs, active, target) {
        return Ok(mu);
    }
    numeric_level(objs, active, target)
}

fn closed_form_level<U: Utility>(objs: &[U], active: &[usize], target: f64) -> Option<f64> {
    let forms: Vec<ClosedForm> = active.iter().map(|&k| objs[k].closed_form()).collect::<Option<_>>()?;
    match forms[0] {
        ClosedForm::Log { .. } => {
            let (mut w_sum, mut offset) = (0.0, 0.0);
            for f in &forms {
                let ClosedForm::Log { w, b_over_a } = *f else { return None };
                w_sum += w;
                offset += b_over_a;
            }
            let denom = target + offset;
            (denom > 0.0).then(|| w_sum / denom)
        }
        ClosedForm::Mse { .. } => {
            let (mut root_sum, mut offset) = (0.0, 0.0);
            for f in &forms {
                let ClosedForm::Mse { sqrt_w_over_a, b_over_a } = *f else { return None };
                root_sum += sqrt_w_over_a;
                offset += b_over_a;
            }
            let denom = target + offset;
            (denom > 0.0).then(|| (root_sum / denom).powi(2))
        }
    }
}

fn numeric_level<U: Utility>(objs: &[U], active: &[usize], target: f64) -> Result<f64> {
    let failure = RefCell::new(None);
    let residual = |x: f64| -> (f64, Option<f64>) {
        let mu = x.exp();
        let mut total = 0.0;
        let mut slope = Some(0.0);
        for &k in active {
            match objs[k].inverse_rate(mu) {
                Ok(Demand::Power(p)) => {
                    total += p;
                    slope = match (slope, objs[k].rate_slope(p)) {
                        (Some(acc), Some(s)) if s < 0.0 => Some(acc + mu / s),
                        _ => None,
                    };
                }
                Ok(Demand::BelowDomain) => {}
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    return (f64::NAN, None);
                }
            }
        }
        (total - target, slope)
    };

    let share = target / active.len() as f64;
    let log_rates: Vec<f64> = active
        .iter()
        .filter_map(|&k| objs[k].rate(share).ok())
        .filter(|r| r.is_finite() && *r > 0.0)
        .map(f64::ln)
        .collect();
    let x0 = if log_rates.is_empty() {
        0.0
    } else {
        log_rates.iter().sum::<f64>() / log_rates.len() as f64
    };

    const X_LIMIT: f64 = 700.0;
    let (v0, _) = residual(x0);
    if let Some(e) = failure.borrow_mut().take() {
        return Err(e);
    }
    if v0 == 0.0 {
        return Ok(x0.exp());
    }
    let (mut lo, mut hi) = (x0, x0);
    let mut step = 1.0;
    loop {
        let probe = if v0 > 0.0 { x0 + step } else { x0 - step };
        if probe.abs() > X_LIMIT {
            return Err(Error::BracketFailure { budget: target });
        }
        let (v, _) = residual(probe);
        if let Some(e) = failure.borrow_mut().take() {
            return Err(e);
        }
        if v.is_nan() {
            return Err(Error::BracketFailure { budget: target });
        }
        if v0 > 0.0 {
            if v <= 0.0 {
                hi = probe;
                break;
            }
            lo = probe;
        } else {
            if v >= 0.0 {
                lo = probe;
                break;
            }
            hi = probe;
        }
        step *= 2.0;
    }
    let root = decreasing_root(residual, lo, hi, 0.5 * (lo + hi), RootOptions::default());
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(root.x.exp())
}

/// Outcome of the lower-bounded loop over a subset of subchannels.
#[derive(Debug, Clone)]
pub(crate) struct Fill {
    /// Powers in subset order.
    pub powers: Vec<f64>,
    /// `true` where the subchannel stayed active.
    pub active: Vec<bool>,
    pub water_level: Option<f64>,
    pub rounds: usize,
    pub trace: Vec<f64>,
    pub capped: bool,
}

/// The lower-bounded water-filling loop on `subset` with budget `budget`.
///
/// Requires `sum_{k in subset} lower[k] <= budget`.
pub(crate) fn fill_lower<U: Utility>(
    objs: &[U],
    lower: &[f64],
    subset: &[usize],
    budget: f64,
    cap: usize,
) -> Result<Fill> {
    let n = subset.len();
    let mut fill = Fill {
        powers: subset.iter().map(|&k| lower[k]).collect(),
        active: vec![true; n],
        water_level: None,
        rounds: 0,
        trace: Vec::new(),
        capped: false,
    };
    loop {
        let active: Vec<usize> = (0..n).filter(|&i| fill.active[i]).map(|i| subset[i]).collect();
        let fixed: f64 = (0..n).filter(|&i| !fill.active[i]).map(|i| lower[subset[i]]).sum();
        let floor: f64 = active.iter().map(|&k| lower[k]).sum();
        let target = budget - fixed;
        if active.is_empty() || target - floor <= 0.0 {
            for i in 0..n {
                fill.active[i] = false;
                fill.powers[i] = lower[subset[i]];
            }
            fill.water_level = None;
            return Ok(fill);
        }
        let mu = water_level(objs, &active, target)?;
        fill.trace.push(mu);
        fill.water_level = Some(mu);
        let mut dropped = Vec::new();
        for i in (0..n).filter(|&i| fill.active[i]) {
            let k = subset[i];
            let p = objs[k].inverse_rate(mu)?.signed();
            fill.powers[i] = p;
            if p <= lower[k] {
                dropped.push(i);
            }
        }
        if dropped.is_empty() {
            return Ok(fill);
        }
        if fill.rounds >= cap {
            fill.capped = true;
            let lo: Vec<f64> = subset.iter().map(|&k| lower[k]).collect();
            repair(&mut fill.powers, &lo, budget);
            return Ok(fill);
        }
        fill.rounds += 1;
        for i in dropped {
            fill.active[i] = false;
            fill.powers[i] = lower[subset[i]];
        }
    }
}

/// Pulls powers back into `p >= lower`, `sum p <= budget`.
pub(crate) fn repair(powers: &mut [f64], lower: &[f64], budget: f64) {
    for (p, g) in powers.iter_mut().zip(lower) {
        if !(*p >= *g) {
            *p = *g;
        }
    }
    let total: f64 = powers.iter().sum();
    if total > budget {
        let floor: f64 = lower.iter().sum();
        let excess: f64 = total - floor;
        let scale = if excess > 0.0 { ((budget - floor) / excess).max(0.0) } else { 0.0 };
        for (p, g) in powers.iter_mut().zip(lower) {
            *p = g + (*p - g) * scale;
        }
    }
}

/// Where a subchannel ended up relative to its box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Place {
    Active,
    Lower,
    Upper,
}

pub(crate) fn objective_value<U: Utility>(objs: &[U], powers: &[f64]) -> f64 {
    objs.iter()
        .zip(powers)
        .map(|(u, &p)| u.eval(p).unwrap_or(f64::NEG_INFINITY))
        .sum()
}

pub(crate) fn assemble<U: Utility>(
    objs: &[U],
    powers: Vec<f64>,
    places: &[Place],
    water_level: Option<f64>,
    iterations: usize,
    water_level_trace: Vec<f64>,
    status: Status,
) -> Allocation {
    let pick = |want: Place| -> Vec<usize> { (0..places.len()).filter(|&k| places[k] == want).collect() };
    let active_set = pick(Place::Active);
    Allocation {
        objective_value: objective_value(objs, &powers),
        water_level: if active_set.is_empty() { None } else { water_level },
        active_set,
        lower_set: pick(Place::Lower),
        upper_set: pick(Place::Upper),
        powers,
        iterations,
        water_level_trace,
        status,
    }
}

/// Lower-bounded water-filling over any slice of utilities.
pub fn water_fill<U: Utility>(objs: &[U], lower: &[f64], budget: f64, cfg: &SolverConfig) -> Result<Allocation> {
    cfg.validate()?;
    if objs.len() != lower.len() {
        return Err(Error::InvalidProblem("one lower bound per subchannel is required".into()));
    }
    check_lower_bounds(lower, budget)?;
    let subset: Vec<usize> = (0..objs.len()).collect();
    let fill = fill_lower(objs, lower, &subset, budget, cfg.outer_cap(objs.len()))?;
    let places: Vec<Place> = fill
        .active
        .iter()
        .map(|&a| if a { Place::Active } else { Place::Lower })
        .collect();
    let status = if fill.capped { Status::IterationCap } else { Status::Optimal };
    Ok(assemble(objs, fill.powers, &places, fill.water_level, fill.rounds, fill.trace, status))
}

/// Water-filling for `sum p_k <= P`, `p_k >= 0`. Lower bounds stored on the
/// problem are ignored.
pub fn solve_p1(problem: &SimplexProblem, cfg: &SolverConfig) -> Result<Allocation> {
    water_fill(problem.objectives(), &vec![0.0; problem.len()], problem.budget(), cfg)
}

/// Water-filling with the problem's lower bounds.
pub fn solve_p1_lower(problem: &SimplexProblem, cfg: &SolverConfig) -> Result<Allocation> {
    water_fill(problem.objectives(), problem.lower_bounds(), problem.budget(), cfg)
}

/// Optimality residuals of `allocation` for the problem: rate spread on the
/// active set, lower-bound rate excess over the water level, and the relative
/// budget gap.
pub fn kkt_residual_p1(problem: &SimplexProblem, allocation: &Allocation, tolerance: f64) -> KktReport {
    let upper = vec![f64::INFINITY; problem.len()];
    conditions::box_conditions(
        problem.objectives(),
        problem.lower_bounds(),
        &upper,
        problem.budget(),
        &allocation.powers,
        tolerance,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(b: f64) -> SubchannelObjective {
        SubchannelObjective::log_capacity(1.0, 1.0, b).unwrap()
    }

    fn mse(b: f64) -> SubchannelObjective {
        SubchannelObjective::inverse_mse(1.0, 1.0, b).unwrap()
    }

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn water_level_closed_forms() {
        let objs = vec![log(1.0), log(1.0)];
        assert!((solve_water_level(&objs, &[0, 1], 0.0, 2.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((solve_water_level(&objs[..1], &[0], 0.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(solve_water_level(&objs, &[0], 1.0, 1.0).is_err());
        assert!(solve_water_level(&objs, &[], 0.0, 1.0).is_err());
    }

    #[test]
    fn numeric_level_matches_closed_form() {
        let objs = vec![log(1.0), log(2.5), log(0.3)];
        let closed = solve_water_level(&objs, &[0, 1, 2], 0.0, 3.0).unwrap();
        let numeric = numeric_level(&objs, &[0, 1, 2], 3.0).unwrap();
        assert!((closed - numeric).abs() < 1e-13 * closed);
        let mse = vec![mse(1.0), mse(1.5)];
        let closed = solve_water_level(&mse, &[0, 1], 0.0, 1.0).unwrap();
        let numeric = numeric_level(&mse, &[0, 1], 1.0).unwrap();
        assert!((closed - numeric).abs() < 1e-13 * closed);
    }

    #[test]
    fn sum_log_level_meets_budget() {
        let objs = vec![
            SubchannelObjective::sum_log(vec![1.0, 0.5], 1.0, 2.0, vec![1.0, 2.0], vec![1.0, 0.3]).unwrap(),
            SubchannelObjective::sum_log(vec![0.7], 0.5, 1.0, vec![1.5], vec![2.0]).unwrap(),
            SubchannelObjective::log_capacity(2.0, 3.0, 1.0).unwrap(),
        ];
        let mu = solve_water_level(&objs, &[0, 1, 2], 0.0, 4.0).unwrap();
        let total: f64 = objs.iter().map(|o| o.inverse_rate(mu).unwrap().signed()).sum();
        assert!((total - 4.0).abs() <= 1e-9 * 4.0, "{total}");
    }

    #[test]
    fn symmetric_log_pair() {
        let p = SimplexProblem::new(vec![log(1.0), log(1.0)], 2.0).unwrap();
        let a = solve_p1(&p, &cfg()).unwrap();
        assert_eq!(a.powers, vec![1.0, 1.0]);
        assert_eq!(a.water_level, Some(0.5));
        assert_eq!(a.status, Status::Optimal);
        assert_eq!(a.iterations, 0);
    }

    #[test]
    fn weak_channel_is_deactivated() {
        let p = SimplexProblem::new(vec![log(1.0), log(3.0)], 1.0).unwrap();
        let a = solve_p1(&p, &cfg()).unwrap();
        assert!((a.powers[0] - 1.0).abs() < 1e-15);
        assert_eq!(a.powers[1], 0.0);
        assert!((a.water_level.unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(a.lower_set, vec![1]);
        assert_eq!(a.iterations, 1);
        assert!(a.water_level_trace[0] < a.water_level_trace[1]);
        assert!(p.objectives()[1].rate(0.0).unwrap() <= a.water_level.unwrap());
    }

    #[test]
    fn inverse_mse_pair() {
        let p = SimplexProblem::new(vec![mse(1.0), mse(1.5)], 1.0).unwrap();
        let a = solve_p1(&p, &cfg()).unwrap();
        assert!((a.powers[0] - 0.75).abs() < 1e-14);
        assert!((a.powers[1] - 0.25).abs() < 1e-14);
        assert!((a.water_level.unwrap() - (2.0f64 / 3.5).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn zero_lower_bounds_reduce_to_p1() {
        let p = SimplexProblem::with_lower_bounds(vec![log(1.0), log(3.0)], 1.0, vec![0.0, 0.0]).unwrap();
        assert_eq!(solve_p1_lower(&p, &cfg()).unwrap(), solve_p1(&p, &cfg()).unwrap());
    }

    #[test]
    fn lower_bound_consuming_budget() {
        let p = SimplexProblem::with_lower_bounds(vec![log(1.0), log(1.0)], 2.0, vec![2.0, 0.0]).unwrap();
        let a = solve_p1_lower(&p, &cfg()).unwrap();
        assert_eq!(a.powers, vec![2.0, 0.0]);
        assert_eq!(a.water_level, None);
    }

    #[test]
    fn slack_lower_bound() {
        let p = SimplexProblem::with_lower_bounds(vec![log(1.0), log(1.0)], 2.0, vec![0.5, 0.0]).unwrap();
        let a = solve_p1_lower(&p, &cfg()).unwrap();
        assert_eq!(a.powers, vec![1.0, 1.0]);
        assert_eq!(a.active_set, vec![0, 1]);
    }

    #[test]
    fn infeasible_lower_bounds_rejected() {
        let err = SimplexProblem::with_lower_bounds(vec![log(1.0), log(1.0)], 1.0, vec![0.7, 0.7]).unwrap_err();
        assert!(matches!(err, Error::InfeasibleBudget { .. }));
        assert!(SimplexProblem::new(vec![], 1.0).is_err());
        assert!(SimplexProblem::new(vec![log(1.0)], 0.0).is_err());
    }

    #[test]
    fn zero_offset_channel_never_deactivated() {
        let p = SimplexProblem::new(vec![log(0.5), SubchannelObjective::log_capacity(1.0, 0.01, 0.0).unwrap()], 0.1).unwrap();
        let a = solve_p1(&p, &cfg()).unwrap();
        assert!(a.powers[1] > 0.0);
        assert!((a.total_power() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn kkt_report_on_solver_output_and_perturbation() {
        let p = SimplexProblem::new(vec![log(1.0), log(2.0)], 2.0).unwrap();
        let a = solve_p1(&p, &cfg()).unwrap();
        let report = kkt_residual_p1(&p, &a, 1e-8);
        assert!(report.passed, "{report:?}");

        let mut bent = a.clone();
        bent.powers[0] += 0.1;
        bent.powers[1] -= 0.1;
        let report = kkt_residual_p1(&p, &bent, 1e-8);
        assert!(report.get("rate_spread").unwrap().value > 0.0);
        assert!(!report.passed);
    }

    #[test]
    fn uniform_powers_flag_the_weak_channel() {
        let p = SimplexProblem::new(vec![log(1.0), log(3.0)], 1.0).unwrap();
        let mut a = solve_p1(&p, &cfg()).unwrap();
        a.powers = vec![0.5, 0.5];
        let report = kkt_residual_p1(&p, &a, 1e-8);
        assert!(!report.passed);
        let spread = report.get("rate_spread").unwrap();
        assert!(!spread.passed);
        assert_eq!(spread.worst, Some(1));
    }

    #[test]
    fn repair_restores_feasibility() {
        let mut p = vec![-0.2, 3.0, 1.0];
        repair(&mut p, &[0.0, 0.5, 0.0], 2.0);
        assert!(p.iter().zip([0.0, 0.5, 0.0]).all(|(x, g)| *x >= g));
        assert!((p.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    }
}

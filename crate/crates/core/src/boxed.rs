//! Water-filling under per-subchannel boxes `gamma_k <= p_k <= tau_k`.
//!
//! Four interchangeable algorithms share one entry point, [`solve_box`]:
//! two that grow the bound sets around repeated lower-bounded solves, one
//! that bisects on the final water level, and one that sweeps upper-bound
//! cases in the order of the rates at the upper bounds.

use crate::allocation::{Allocation, BoxStrategy, KktReport, SolverConfig, Status};
use crate::conditions;
use crate::error::{Error, Result};
use crate::objective::{Demand, SubchannelObjective, Utility};
use crate::simplex::{assemble, check_lower_bounds, fill_lower, validate_channels, water_level, Place};

#[derive(Debug, Clone, PartialEq)]
pub struct BoxProblem {
    objectives: Vec<SubchannelObjective>,
    budget: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxProblem {
    /// `upper` entries may be `f64::INFINITY`.
    pub fn new(objectives: Vec<SubchannelObjective>, budget: f64, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        validate_channels(&objectives, budget)?;
        check_boxes(objectives.len(), &lower, &upper)?;
        check_lower_bounds(&lower, budget)?;
        Ok(Self {
            objectives,
            budget,
            lower,
            upper,
        })
    }

    pub fn objectives(&self) -> &[SubchannelObjective] {
        &self.objectives
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn len(&self) -> usize {
        self.objectives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objectives.is_empty()
    }

    pub fn conditions(&self, powers: &[f64], tolerance: f64) -> KktReport {
        conditions::box_conditions(&self.objectives, &self.lower, &self.upper, self.budget, powers, tolerance)
    }
}

pub(crate) fn check_boxes(k: usize, lower: &[f64], upper: &[f64]) -> Result<()> {
    if lower.len() != k || upper.len() != k {
        return Err(Error::InvalidProblem(format!(
            "{k} subchannels need {k} lower and upper bounds, got {} and {}",
            lower.len(),
            upper.len()
        )));
    }
    for j in 0..k {
        if !(lower[j] >= 0.0) || !lower[j].is_finite() {
            return Err(Error::InvalidProblem(format!("lower bound {j} must be finite and nonnegative")));
        }
        if !(upper[j] >= lower[j]) {
            return Err(Error::InvalidProblem(format!(
                "subchannel {j}: upper bound {} is below lower bound {}",
                upper[j], lower[j]
            )));
        }
    }
    Ok(())
}

/// Solves the box-constrained problem with `cfg.box_strategy`.
pub fn solve_box(problem: &BoxProblem, cfg: &SolverConfig) -> Result<Allocation> {
    box_fill(&problem.objectives, &problem.lower, &problem.upper, problem.budget, cfg)
}

pub fn solve_box_set_a(problem: &BoxProblem, cfg: &SolverConfig) -> Result<Allocation> {
    with_strategy(problem, cfg, BoxStrategy::SetBasedA)
}

pub fn solve_box_set_b(problem: &BoxProblem, cfg: &SolverConfig) -> Result<Allocation> {
    with_strategy(problem, cfg, BoxStrategy::SetBasedB)
}

pub fn solve_box_bisect(problem: &BoxProblem, cfg: &SolverConfig) -> Result<Allocation> {
    with_strategy(problem, cfg, BoxStrategy::Bisection)
}

pub fn solve_box_ordered(problem: &BoxProblem, cfg: &SolverConfig) -> Result<Allocation> {
    with_strategy(problem, cfg, BoxStrategy::OrderBased)
}

fn with_strategy(problem: &BoxProblem, cfg: &SolverConfig, strategy: BoxStrategy) -> Result<Allocation> {
    let cfg = SolverConfig {
        box_strategy: strategy,
        ..cfg.clone()
    };
    solve_box(problem, &cfg)
}

/// Box-constrained water-filling over any slice of utilities.
pub fn box_fill<U: Utility>(objs: &[U], lower: &[f64], upper: &[f64], budget: f64, cfg: &SolverConfig) -> Result<Allocation> {
    cfg.validate()?;
    check_boxes(objs.len(), lower, upper)?;
    check_lower_bounds(lower, budget)?;
    let cap_total: f64 = upper.iter().sum();
    if cap_total <= budget {
        let places = vec![Place::Upper; objs.len()];
        return Ok(assemble(objs, upper.to_vec(), &places, None, 0, Vec::new(), Status::Feasible));
    }
    match cfg.box_strategy {
        BoxStrategy::SetBasedA => set_a(objs, lower, upper, budget, cfg),
        BoxStrategy::SetBasedB => set_b(objs, lower, upper, budget, cfg),
        BoxStrategy::Bisection => bisection(objs, lower, upper, budget),
        BoxStrategy::OrderBased => ordered(objs, lower, upper, budget, cfg),
    }
}

fn set_a<U: Utility>(objs: &[U], lower: &[f64], upper: &[f64], budget: f64, cfg: &SolverConfig) -> Result<Allocation> {
    let k = objs.len();
    let cap = cfg.outer_cap(k);
    let mut places = vec![Place::Active; k];
    let mut powers = lower.to_vec();
    let mut remaining: Vec<usize> = (0..k).collect();
    let mut left = budget;
    let mut trace = Vec::new();
    let mut calls = 0;
    loop {
        let fill = fill_lower(objs, lower, &remaining, left, cap)?;
        calls += 1;
        trace.extend_from_slice(&fill.trace);
        let mut clamped = Vec::new();
        for (i, &j) in remaining.iter().enumerate() {
            powers[j] = fill.powers[i];
            places[j] = if fill.active[i] { Place::Active } else { Place::Lower };
            if fill.powers[i] >= upper[j] {
                clamped.push(j);
            }
        }
        if clamped.is_empty() || fill.capped {
            let status = if fill.capped { Status::IterationCap } else { Status::Optimal };
            return Ok(assemble(objs, powers, &places, fill.water_level, calls, trace, status));
        }
        if calls > cap {
            for &j in &clamped {
                powers[j] = upper[j];
            }
            crate::simplex::repair(&mut powers, lower, budget);
            return Ok(assemble(objs, powers, &places, fill.water_level, calls, trace, Status::IterationCap));
        }
        for &j in &clamped {
            powers[j] = upper[j];
            places[j] = Place::Upper;
            left -= upper[j];
        }
        remaining.retain(|j| places[*j] != Place::Upper);
        if remaining.is_empty() {
            return Ok(assemble(objs, powers, &places, None, calls, trace, Status::Optimal));
        }
        let floor: f64 = remaining.iter().map(|&j| lower[j]).sum();
        left = left.max(floor);
    }
}

/// Powers and water level implied by a fixed assignment of every
/// subchannel to the active, lower or upper set.
fn evaluate_places<U: Utility>(
    objs: &[U],
    lower: &[f64],
    upper: &[f64],
    budget: f64,
    places: &mut [Place],
    powers: &mut [f64],
) -> Result<Option<f64>> {
    let mut fixed = 0.0;
    let mut floor = 0.0;
    let mut active = Vec::new();
    for k in 0..objs.len() {
        match places[k] {
            Place::Lower => {
                powers[k] = lower[k];
                fixed += lower[k];
            }
            Place::Upper => {
                powers[k] = upper[k];
                fixed += upper[k];
            }
            Place::Active => {
                floor += lower[k];
                active.push(k);
            }
        }
    }
    if active.is_empty() {
        return Ok(None);
    }
    let target = budget - fixed;
    if target - floor <= 0.0 {
        for &k in &active {
            places[k] = Place::Lower;
            powers[k] = lower[k];
        }
        return Ok(None);
    }
    let mu = water_level(objs, &active, target)?;
    for &k in &active {
        powers[k] = objs[k].inverse_rate(mu)?.signed();
    }
    Ok(Some(mu))
}

fn set_b<U: Utility>(objs: &[U], lower: &[f64], upper: &[f64], budget: f64, cfg: &SolverConfig) -> Result<Allocation> {
    let k = objs.len();
    let cap = cfg.outer_cap(k);
    let mut places = vec![Place::Active; k];
    let mut powers = vec![0.0; k];
    let mut trace = Vec::new();
    let mut mu = evaluate_places(objs, lower, upper, budget, &mut places, &mut powers)?;
    trace.extend(mu);
    let violated = |places: &[Place], powers: &[f64], below: bool, above: bool| -> bool {
        (0..k).any(|j| {
            places[j] == Place::Active && ((below && powers[j] < lower[j]) || (above && powers[j] > upper[j]))
        })
    };
    let mut rounds = 0;
    while violated(&places, &powers, true, true) {
        if rounds >= cap {
            let mut fallback = set_a(objs, lower, upper, budget, cfg)?;
            fallback.iterations += rounds;
            return Ok(fallback);
        }
        rounds += 1;
        for j in 0..k {
            if places[j] == Place::Active && powers[j] <= lower[j] {
                places[j] = Place::Lower;
            }
        }
        mu = evaluate_places(objs, lower, upper, budget, &mut places, &mut powers)?;
        trace.extend(mu);
        if !violated(&places, &powers, true, false) && violated(&places, &powers, false, true) {
            for j in 0..k {
                if places[j] == Place::Active && powers[j] >= upper[j] {
                    places[j] = Place::Upper;
                }
            }
            for p in places.iter_mut() {
                if *p == Place::Lower {
                    *p = Place::Active;
                }
            }
            mu = evaluate_places(objs, lower, upper, budget, &mut places, &mut powers)?;
            trace.extend(mu);
        }
    }
    Ok(assemble(objs, powers, &places, mu, rounds, trace, Status::Optimal))
}

fn clamped_demand<U: Utility>(u: &U, mu: f64, lo: f64, hi: f64) -> Result<(f64, Place)> {
    let p = match u.inverse_rate(mu)? {
        Demand::Power(p) => p,
        Demand::BelowDomain => f64::NEG_INFINITY,
    };
    Ok(if p <= lo {
        (lo, Place::Lower)
    } else if p >= hi {
        (hi, Place::Upper)
    } else {
        (p, Place::Active)
    })
}

fn bisection<U: Utility>(objs: &[U], lower: &[f64], upper: &[f64], budget: f64) -> Result<Allocation> {
    let k = objs.len();
    let mut mu_max: f64 = 0.0;
    let mut mu_min = f64::INFINITY;
    for j in 0..k {
        let mut r = objs[j].rate(lower[j])?;
        if !r.is_finite() {
            r = objs[j].rate(lower[j] + 1e-12)?;
        }
        mu_max = mu_max.max(r);
        mu_min = mu_min.min(objs[j].rate(upper[j].min(budget))?);
    }
    let sigma = 1e-9 * budget;
    let mut places = vec![Place::Active; k];
    let mut powers = vec![0.0; k];
    let total_at = |mu: f64, places: &mut [Place], powers: &mut [f64]| -> Result<f64> {
        for j in 0..k {
            let (p, place) = clamped_demand(&objs[j], mu, lower[j], upper[j])?;
            powers[j] = p;
            places[j] = place;
        }
        Ok(powers.iter().sum())
    };

    let mut trace = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    let mut steps = 0;
    let mut mu = 0.5 * (mu_min + mu_max);
    let status = loop {
        steps += 1;
        let total = total_at(mu, &mut places, &mut powers)?;
        trace.push(mu);
        let gap = total - budget;
        if best.is_none_or(|(_, g)| gap.abs() < g.abs()) {
            best = Some((mu, gap));
        }
        if (-sigma..=0.0).contains(&gap) {
            break Status::Optimal;
        }
        if gap > 0.0 {
            mu_min = mu;
        } else {
            mu_max = mu;
        }
        let next = 0.5 * (mu_min + mu_max);
        if next == mu_min || next == mu_max || steps >= 300 {
            break Status::Feasible;
        }
        mu = next;
    };
    let mu = match (status, best) {
        (Status::Feasible, Some((m, _))) => {
            total_at(m, &mut places, &mut powers)?;
            if powers.iter().sum::<f64>() > budget {
                crate::simplex::repair(&mut powers, lower, budget);
            }
            m
        }
        _ => polish(objs, lower, upper, budget, &mut places, &mut powers)?.unwrap_or(mu),
    };
    Ok(assemble(objs, powers, &places, Some(mu), steps, trace, status))
}

/// Re-solves the water level exactly on the sets found by bisection, keeping
/// the bisection point when the exact one leaves a box.
fn polish<U: Utility>(
    objs: &[U],
    lower: &[f64],
    upper: &[f64],
    budget: f64,
    places: &mut [Place],
    powers: &mut [f64],
) -> Result<Option<f64>> {
    let mut exact_places = places.to_vec();
    let mut exact = powers.to_vec();
    let Some(mu) = evaluate_places(objs, lower, upper, budget, &mut exact_places, &mut exact)? else {
        return Ok(None);
    };
    if (0..objs.len()).all(|k| exact[k] >= lower[k] && exact[k] <= upper[k]) {
        places.copy_from_slice(&exact_places);
        powers.copy_from_slice(&exact);
        return Ok(Some(mu));
    }
    Ok(None)
}

fn ordered<U: Utility>(objs: &[U], lower: &[f64], upper: &[f64], budget: f64, cfg: &SolverConfig) -> Result<Allocation> {
    let k = objs.len();
    let mut keys = Vec::with_capacity(k);
    for j in 0..k {
        keys.push(if upper[j].is_finite() { objs[j].rate(upper[j])? } else { 0.0 });
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| keys[y].total_cmp(&keys[x]));

    let mut fixed_upper = 0.0;
    let mut case = None;
    for i in 0..k {
        let mu = keys[order[i]];
        let trial = if mu > 0.0 {
            let mut t = fixed_upper + upper[order[i]];
            for &j in &order[i + 1..] {
                t += match objs[j].inverse_rate(mu)? {
                    Demand::Power(p) => p.max(lower[j]),
                    Demand::BelowDomain => lower[j],
                };
            }
            t
        } else {
            f64::INFINITY
        };
        if trial >= budget {
            case = Some(i);
            break;
        }
        fixed_upper += upper[order[i]];
    }

    let mut places = vec![Place::Upper; k];
    let mut powers = upper.to_vec();
    let Some(i) = case else {
        return Ok(assemble(objs, powers, &places, None, k, Vec::new(), Status::Feasible));
    };
    let pinned: f64 = order[..i].iter().map(|&j| upper[j]).sum();
    let rest = &order[i..];
    let floor: f64 = rest.iter().map(|&j| lower[j]).sum();
    let left = (budget - pinned).max(floor);
    let fill = fill_lower(objs, lower, rest, left, cfg.outer_cap(k))?;
    for (n, &j) in rest.iter().enumerate() {
        powers[j] = fill.powers[n];
        places[j] = if fill.active[n] { Place::Active } else { Place::Lower };
    }
    let status = if fill.capped { Status::IterationCap } else { Status::Optimal };
    Ok(assemble(objs, powers, &places, fill.water_level, i + 1, fill.trace, status))
}

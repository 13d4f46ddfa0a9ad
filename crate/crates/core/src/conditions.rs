//! Residuals of the optimality conditions shared by the single-budget,
//! box-constrained and prefix-constrained problems.

use crate::allocation::{KktReport, Residual};
use crate::objective::Utility;

/// Relative tolerance used to decide whether a power sits on a bound.
pub(crate) const ON_BOUND: f64 = 1e-10;

/// Rate conditions over one set of subchannels sharing a water level.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LevelCheck {
    pub mu: Option<f64>,
    /// `(value, worst)` for the rate spread on the active part.
    pub spread: (f64, Option<usize>),
    /// Largest `rate(gamma) - mu` over subchannels at their lower bound.
    pub lower: (f64, Option<usize>),
    /// Largest `mu - rate(tau)` over subchannels at their upper bound.
    pub upper: (f64, Option<usize>),
}

pub(crate) fn level_check<U: Utility>(
    objs: &[U],
    lower: &[f64],
    upper: &[f64],
    powers: &[f64],
    members: &[usize],
    eps: f64,
) -> LevelCheck {
    let rate = |k: usize, p: f64| objs[k].rate(p).unwrap_or(f64::NAN);
    let mut active = Vec::new();
    let mut at_lower = Vec::new();
    let mut at_upper = Vec::new();
    for &k in members {
        let lo = powers[k] - lower[k] <= eps;
        let hi = upper[k] - powers[k] <= eps;
        match (lo, hi) {
            (true, true) => {}
            (true, false) => at_lower.push(k),
            (false, true) => at_upper.push(k),
            (false, false) => active.push(k),
        }
    }

    // The water level is read off the subchannel furthest inside its box.
    let mut anchor: Option<(usize, f64)> = None;
    for &k in &active {
        let room = (powers[k] - lower[k]).min(upper[k] - powers[k]);
        if anchor.is_none_or(|(_, r)| room > r) {
            anchor = Some((k, room));
        }
    }
    let Some((a, _)) = anchor else {
        // Some common level must separate the two bound sets.
        let top_lower = at_lower
            .iter()
            .map(|&k| (k, rate(k, lower[k])))
            .max_by(|x, y| x.1.total_cmp(&y.1));
        let bottom_upper = at_upper
            .iter()
            .map(|&k| (k, rate(k, upper[k])))
            .min_by(|x, y| x.1.total_cmp(&y.1));
        let gap = match (top_lower, bottom_upper) {
            (Some((k, l)), Some((_, u))) => (nan_to_inf((l - u).max(0.0) / l.abs().max(1.0)), Some(k)),
            _ => (0.0, None),
        };
        return LevelCheck {
            mu: None,
            spread: (0.0, None),
            lower: gap,
            upper: gap,
        };
    };
    let mu = rate(a, powers[a]);
    let norm = mu.abs().max(1.0);
    let rates: Vec<(usize, f64)> = active.iter().map(|&k| (k, rate(k, powers[k]))).collect();
    let hi = rates.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let lo = rates.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let worst = rates
        .iter()
        .max_by(|x, y| (x.1 - mu).abs().total_cmp(&(y.1 - mu).abs()))
        .map(|r| r.0);
    let (lv, lw) = worst_excess(at_lower.iter().map(|&k| (k, rate(k, lower[k]) - mu)));
    let (uv, uw) = worst_excess(at_upper.iter().map(|&k| (k, mu - rate(k, upper[k]))));
    LevelCheck {
        mu: Some(mu),
        spread: (nan_to_inf((hi - lo) / norm), worst),
        lower: (nan_to_inf(lv / norm), lw),
        upper: (nan_to_inf(uv / norm), uw),
    }
}

/// Checks a box-constrained single-budget allocation: equal rates on the
/// active set, `rate(gamma) <= mu` on the lower set, `rate(tau) >= mu` on
/// the upper set, the budget equality, and feasibility.
///
/// Zero lower bounds and infinite upper bounds reduce this to the plain
/// simplex conditions.
pub fn box_conditions<U: Utility>(
    objs: &[U],
    lower: &[f64],
    upper: &[f64],
    budget: f64,
    powers: &[f64],
    tolerance: f64,
) -> KktReport {
    let scale = budget.abs().max(1.0);
    let members: Vec<usize> = (0..powers.len()).collect();
    let check = level_check(objs, lower, upper, powers, &members, ON_BOUND * scale);

    let mut residuals = Vec::new();
    if check.mu.is_some() {
        residuals.push(Residual::new("rate_spread", check.spread.0, tolerance, check.spread.1));
    } else {
        residuals.push(Residual::not_applicable("rate_spread", tolerance));
    }
    residuals.push(Residual::new("lower_rates", check.lower.0, tolerance, check.lower.1));
    residuals.push(Residual::new("upper_rates", check.upper.0, tolerance, check.upper.1));

    let total: f64 = powers.iter().sum();
    let cap: f64 = upper.iter().sum();
    if cap <= budget {
        let (v, w) = worst_excess((0..powers.len()).map(|k| (k, upper[k] - powers[k])));
        residuals.push(Residual::not_applicable("budget", tolerance));
        residuals.push(Residual::new("saturation", v / scale, tolerance, w));
    } else {
        residuals.push(Residual::new("budget", (total - budget).abs() / budget, tolerance, None));
    }
    let (v, w) = box_excess(lower, upper, powers);
    let excess = (total - budget).max(v);
    residuals.push(Residual::new("feasibility", nan_to_inf(excess.max(0.0) / scale), tolerance, w));
    KktReport::new(residuals, vec![check.mu])
}

/// Largest violation of `lower <= p <= upper`.
pub(crate) fn box_excess(lower: &[f64], upper: &[f64], powers: &[f64]) -> (f64, Option<usize>) {
    worst_excess((0..powers.len()).map(|k| (k, (lower[k] - powers[k]).max(powers[k] - upper[k]))))
}

/// Largest positive entry and its index; `(0, None)` when nothing is positive.
pub(crate) fn worst_excess(values: impl Iterator<Item = (usize, f64)>) -> (f64, Option<usize>) {
    let mut best = (0.0, None);
    for (k, v) in values {
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if v > best.0 {
            best = (v, Some(k));
        }
    }
    best
}

pub(crate) fn nan_to_inf(x: f64) -> f64 {
    if x.is_nan() {
        f64::INFINITY
    } else {
        x
    }
}

//! Ascending prefix budgets: `sum_{k<=J} p_k <= P_J` for every `J`.
//!
//! The solver first ignores every prefix but the last. If the box solution
//! breaks a prefix, the range is split at the smallest broken prefix: the
//! left part is solved against that prefix budget and kept, and the right
//! part is solved again with the prefix budgets shifted by what the left
//! part was granted. A work-list of channel ranges replaces in-place index
//! bookkeeping.

use serde::{Deserialize, Serialize};

use crate::allocation::{Allocation, KktReport, Residual, SolverConfig, Status};
use crate::boxed::{box_fill, check_boxes};
use crate::conditions::{box_excess, level_check, nan_to_inf, worst_excess, ON_BOUND};
use crate::error::{Error, Result};
use crate::objective::{SubchannelObjective, Utility};
use crate::simplex::{objective_value, validate_channels};

#[derive(Debug, Clone, PartialEq)]
pub struct AscendingProblem {
    objectives: Vec<SubchannelObjective>,
    prefix_budgets: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl AscendingProblem {
    pub fn new(
        objectives: Vec<SubchannelObjective>,
        prefix_budgets: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self> {
        let k = objectives.len();
        let last = prefix_budgets.last().copied().unwrap_or(f64::NAN);
        validate_channels(&objectives, last)?;
        if prefix_budgets.len() != k {
            return Err(Error::InvalidProblem(format!(
                "{k} subchannels need {k} prefix budgets, got {}",
                prefix_budgets.len()
            )));
        }
        for j in 0..k {
            if !(prefix_budgets[j] > 0.0) || !prefix_budgets[j].is_finite() {
                return Err(Error::InvalidProblem(format!("prefix budget {j} must be positive and finite")));
            }
            if j > 0 && prefix_budgets[j] < prefix_budgets[j - 1] {
                return Err(Error::InvalidProblem(format!("prefix budgets must be nondecreasing (index {j})")));
            }
        }
        check_boxes(k, &lower, &upper)?;
        let mut floor = 0.0;
        for j in 0..k {
            floor += lower[j];
            if floor > prefix_budgets[j] * (1.0 + 1e-12) {
                return Err(Error::InfeasibleBudget {
                    lower_sum: floor,
                    budget: prefix_budgets[j],
                });
            }
        }
        Ok(Self {
            objectives,
            prefix_budgets,
            lower,
            upper,
        })
    }

    /// Prefix budgets with unbounded boxes `0 <= p_k`.
    pub fn unboxed(objectives: Vec<SubchannelObjective>, prefix_budgets: Vec<f64>) -> Result<Self> {
        let k = objectives.len();
        Self::new(objectives, prefix_budgets, vec![0.0; k], vec![f64::INFINITY; k])
    }

    pub fn objectives(&self) -> &[SubchannelObjective] {
        &self.objectives
    }

    pub fn prefix_budgets(&self) -> &[f64] {
        &self.prefix_budgets
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
        ascending_conditions(
            &self.objectives,
            &self.prefix_budgets,
            &self.lower,
            &self.upper,
            powers,
            tolerance,
        )
    }
}

/// A contiguous range of subchannels solved against one budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    pub budget: f64,
    pub water_level: Option<f64>,
}

/// One decomposition step: the relaxed solution on `start..=end` broke the
/// prefix ending at `at`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub start: usize,
    pub at: usize,
    /// Relaxed powers on `start..=at`, before the split.
    pub relaxed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AscendingSolution {
    pub allocation: Allocation,
    pub segments: Vec<Segment>,
    pub splits: Vec<Split>,
}

/// Solves the prefix-budget problem by recursive decomposition.
///
/// The result is always feasible. With no split it is the global optimum;
/// with exactly one split it is also optimal. Deeper decompositions are
/// reported with status `Feasible`.
pub fn solve_ascending(problem: &AscendingProblem, cfg: &SolverConfig) -> Result<AscendingSolution> {
    cfg.validate()?;
    let objs = &problem.objectives;
    let prefix = &problem.prefix_budgets;
    let k = objs.len();
    let tol = cfg.power_tolerance * prefix[k - 1];

    let mut powers = vec![0.0; k];
    let mut active_set = Vec::new();
    let mut lower_set = Vec::new();
    let mut upper_set = Vec::new();
    let mut trace = Vec::new();
    let mut segments = Vec::new();
    let mut splits = Vec::new();
    let mut solves = 0;
    let mut degraded = false;

    let solve_range = |start: usize, end: usize, budget: f64, solves: &mut usize| -> Result<Allocation> {
        *solves += 1;
        let objs_r: Vec<&SubchannelObjective> = objs[start..=end].iter().collect();
        box_fill(&objs_r, &problem.lower[start..=end], &problem.upper[start..=end], budget, cfg)
    };

    // Each entry is a range and the prefix budget already granted to its left.
    let mut work = vec![(0usize, k - 1, 0.0f64)];
    while let Some((start, end, base)) = work.pop() {
        let relaxed = solve_range(start, end, prefix[end] - base, &mut solves)?;
        let mut cum = 0.0;
        let mut broken = None;
        for j in start..end {
            cum += relaxed.powers[j - start];
            if cum > prefix[j] - base + tol {
                broken = Some(j);
                break;
            }
        }
        let (keep, kept_end) = match broken {
            None => (relaxed, end),
            Some(at) => {
                splits.push(Split {
                    start,
                    at,
                    relaxed: relaxed.powers[..=at - start].to_vec(),
                });
                let left = solve_range(start, at, prefix[at] - base, &mut solves)?;
                work.push((at + 1, end, prefix[at]));
                (left, at)
            }
        };
        degraded |= keep.status == Status::IterationCap;
        for (i, p) in keep.powers.iter().enumerate() {
            powers[start + i] = *p;
        }
        active_set.extend(keep.active_set.iter().map(|i| i + start));
        lower_set.extend(keep.lower_set.iter().map(|i| i + start));
        upper_set.extend(keep.upper_set.iter().map(|i| i + start));
        trace.extend_from_slice(&keep.water_level_trace);
        segments.push(Segment {
            start,
            end: kept_end,
            budget: prefix[kept_end] - base,
            water_level: keep.water_level,
        });
    }
    active_set.sort_unstable();
    lower_set.sort_unstable();
    upper_set.sort_unstable();

    let status = if degraded {
        Status::IterationCap
    } else if splits.len() <= 1 {
        Status::Optimal
    } else {
        Status::Feasible
    };
    let water_level = if segments.len() == 1 { segments[0].water_level } else { None };
    let allocation = Allocation {
        objective_value: objective_value(objs, &powers),
        powers,
        water_level,
        active_set,
        lower_set,
        upper_set,
        iterations: solves,
        water_level_trace: trace,
        status,
    };
    Ok(AscendingSolution {
        allocation,
        segments,
        splits,
    })
}

/// Optimality conditions for prefix budgets.
///
/// Tight prefixes cut the subchannels into segments. Each segment must
/// satisfy the box conditions around its own level, the levels must not
/// increase from one segment to the next, and a last segment whose budget
/// is slack must sit entirely on upper bounds.
pub fn ascending_conditions<U: Utility>(
    objs: &[U],
    prefix: &[f64],
    lower: &[f64],
    upper: &[f64],
    powers: &[f64],
    tolerance: f64,
) -> KktReport {
    let k = powers.len();
    let scale = prefix[k - 1].abs().max(1.0);
    let eps = ON_BOUND * scale;

    let mut cum = 0.0;
    let mut cuts = Vec::new();
    let mut prefix_excess = Vec::with_capacity(k);
    for j in 0..k {
        cum += powers[j];
        prefix_excess.push((j, cum - prefix[j]));
        if (cum - prefix[j]).abs() <= 1e-9 * scale && j + 1 < k {
            cuts.push(j);
        }
    }
    let last_slack = prefix[k - 1] - cum > 1e-9 * scale;
    cuts.push(k - 1);

    let mut spread = (0.0, None);
    let mut low = (0.0, None);
    let mut up = (0.0, None);
    let mut order = (0.0, None);
    let mut levels = Vec::new();
    let mut previous: Option<f64> = None;
    let mut start = 0;
    for &end in &cuts {
        let members: Vec<usize> = (start..=end).collect();
        let check = level_check(objs, lower, upper, powers, &members, eps);
        spread = max_pair(spread, check.spread);
        low = max_pair(low, check.lower);
        up = max_pair(up, check.upper);
        if let (Some(prev), Some(mu)) = (previous, check.mu) {
            order = max_pair(order, (nan_to_inf((mu - prev) / prev.abs().max(1.0)), Some(start)));
        }
        if check.mu.is_some() {
            previous = check.mu;
        }
        levels.push(check.mu);
        start = end + 1;
    }

    let mut residuals = vec![
        Residual::new("rate_spread", spread.0, tolerance, spread.1),
        Residual::new("lower_rates", low.0, tolerance, low.1),
        Residual::new("upper_rates", up.0, tolerance, up.1),
        Residual::new("level_order", order.0.max(0.0), tolerance, order.1),
    ];
    if last_slack {
        let first = cuts.len().checked_sub(2).map_or(0, |i| cuts[i] + 1);
        let (v, w) = worst_excess((first..k).map(|j| (j, upper[j] - powers[j])));
        residuals.push(Residual::new("saturation", v / scale, tolerance, w));
    } else {
        residuals.push(Residual::not_applicable("saturation", tolerance));
    }
    let (v, w) = worst_excess(prefix_excess.into_iter());
    residuals.push(Residual::new("prefix_feasibility", v / scale, tolerance, w));
    let (v, w) = box_excess(lower, upper, powers);
    residuals.push(Residual::new("box_feasibility", v / scale, tolerance, w));
    KktReport::new(residuals, levels)
}

fn max_pair(a: (f64, Option<usize>), b: (f64, Option<usize>)) -> (f64, Option<usize>) {
    if b.0 > a.0 {
        b
    } else {
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_logs(k: usize) -> Vec<SubchannelObjective> {
        (0..k).map(|_| SubchannelObjective::log_capacity(1.0, 1.0, 1.0).unwrap()).collect()
    }

    #[test]
    fn single_split_example() {
        let p = AscendingProblem::unboxed(unit_logs(2), vec![0.5, 2.0]).unwrap();
        let s = solve_ascending(&p, &SolverConfig::default()).unwrap();
        assert_eq!(s.allocation.powers, vec![0.5, 1.5]);
        assert_eq!(s.splits.len(), 1);
        assert_eq!(s.splits[0].at, 0);
        assert_eq!(s.splits[0].relaxed, vec![1.0]);
        assert_eq!(s.allocation.status, Status::Optimal);
        assert!(p.conditions(&s.allocation.powers, 1e-8).passed);
    }

    #[test]
    fn relaxed_solution_is_flagged_by_prefix_check() {
        let p = AscendingProblem::unboxed(unit_logs(2), vec![0.5, 2.0]).unwrap();
        let report = p.conditions(&[1.0, 1.0], 1e-8);
        let prefix = report.get("prefix_feasibility").unwrap();
        assert!(!prefix.passed);
        assert_eq!(prefix.worst, Some(0));
    }

    #[test]
    fn slack_prefixes_reduce_to_box_solver() {
        let objs = vec![
            SubchannelObjective::log_capacity(1.0, 2.0, 1.0).unwrap(),
            SubchannelObjective::log_capacity(1.0, 1.0, 1.0).unwrap(),
            SubchannelObjective::log_capacity(2.0, 0.5, 1.0).unwrap(),
        ];
        let lower = vec![0.1, 0.0, 0.2];
        let upper = vec![1.0, 4.0, 4.0];
        let p = AscendingProblem::new(objs.clone(), vec![5.0; 3], lower.clone(), upper.clone()).unwrap();
        let s = solve_ascending(&p, &SolverConfig::default()).unwrap();
        let b = crate::boxed::BoxProblem::new(objs, 5.0, lower, upper).unwrap();
        let reference = crate::boxed::solve_box(&b, &SolverConfig::default()).unwrap();
        assert_eq!(s.allocation.powers, reference.powers);
        assert!(s.splits.is_empty());
    }

    #[test]
    fn deeper_splits_stay_feasible() {
        let objs: Vec<_> = (0..4)
            .map(|i| SubchannelObjective::log_capacity(1.0, 1.0 + i as f64, 0.5).unwrap())
            .collect();
        let p = AscendingProblem::unboxed(objs, vec![0.2, 0.5, 0.9, 4.0]).unwrap();
        let s = solve_ascending(&p, &SolverConfig::default()).unwrap();
        let report = p.conditions(&s.allocation.powers, 1e-8);
        assert!(report.get("prefix_feasibility").unwrap().passed, "{report:?}");
        for split in &s.splits {
            let kept = &s.allocation.powers[split.start..=split.at];
            assert!(kept.iter().zip(&split.relaxed).all(|(a, b)| *a <= b + 1e-12));
        }
    }

    #[test]
    fn rejects_decreasing_or_infeasible_prefixes() {
        assert!(AscendingProblem::unboxed(unit_logs(2), vec![2.0, 1.0]).is_err());
        assert!(matches!(
            AscendingProblem::new(unit_logs(2), vec![0.5, 2.0], vec![0.6, 0.0], vec![1.0, 1.0]),
            Err(Error::InfeasibleBudget { .. })
        ));
    }
}

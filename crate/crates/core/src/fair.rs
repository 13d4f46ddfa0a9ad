//! Multiple water levels: max-min fairness across groups, clustered groups
//! whose utilities depend on their total power, and the combination.
//!
//! Max-min runs an index loop like the single-budget solver. For a fixed
//! index set every group's level is a function of the common utility
//! target `t`, obtained in closed form for homogeneous log and MSE groups.
//! The total demand is increasing in `t` with slope `sum_j 1 / mu_j`, so
//! `t` is found by safeguarded Newton.
//!
//! Cluster problems decouple into one single-budget problem per group once
//! the group totals are fixed; the totals are set by equalizing the total
//! derivative of each group's optimal value.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::allocation::{KktReport, Residual, SolverConfig, Status};
use crate::boxed::check_boxes;
use crate::conditions::{level_check, nan_to_inf, worst_excess, ON_BOUND};
use crate::error::{Error, Result};
use crate::objective::{ClosedForm, ClusterView, Demand, SubchannelObjective, Utility};
use crate::roots::{bisect_decreasing, decreasing_root, RootOptions};
use crate::simplex::water_fill;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FairMode {
    /// Maximize the smallest group utility.
    MaxMin,
    /// Maximize the summed utility of clusters.
    Cluster,
    /// Maximize the smallest cluster utility.
    ClusterMaxMin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub objectives: Vec<SubchannelObjective>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Group {
    pub fn new(objectives: Vec<SubchannelObjective>) -> Self {
        let k = objectives.len();
        Self {
            objectives,
            lower: vec![0.0; k],
            upper: vec![f64::INFINITY; k],
        }
    }

    pub fn boxed(objectives: Vec<SubchannelObjective>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_boxes(objectives.len(), &lower, &upper)?;
        Ok(Self {
            objectives,
            lower,
            upper,
        })
    }

    pub fn len(&self) -> usize {
        self.objectives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objectives.is_empty()
    }

    fn has_boxes(&self) -> bool {
        self.lower.iter().any(|g| *g != 0.0) || self.upper.iter().any(|t| t.is_finite())
    }

    fn views(&self, cluster_power: f64) -> Vec<ClusterView<'_>> {
        self.objectives.iter().map(|o| o.at_cluster_power(cluster_power)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairProblem {
    groups: Vec<Group>,
    budget: f64,
    mode: FairMode,
}

impl FairProblem {
    pub fn new(mode: FairMode, groups: Vec<Group>, budget: f64) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidProblem("at least one group is required".into()));
        }
        if !(budget > 0.0) || !budget.is_finite() {
            return Err(Error::InvalidProblem(format!("budget must be positive and finite, got {budget}")));
        }
        let mut floor = 0.0;
        for (j, g) in groups.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::InvalidProblem(format!("group {j} has no subchannels")));
            }
            check_boxes(g.len(), &g.lower, &g.upper)?;
            for o in &g.objectives {
                o.validate()?;
                if mode == FairMode::MaxMin && o.is_cluster_aware() {
                    return Err(Error::InvalidProblem(format!(
                        "group {j}: {} objectives need a cluster mode",
                        o.family()
                    )));
                }
            }
            if mode != FairMode::MaxMin && g.has_boxes() {
                return Err(Error::InvalidProblem(format!("group {j}: boxes are only supported in max-min mode")));
            }
            floor += g.lower.iter().sum::<f64>();
        }
        if floor > budget * (1.0 + 1e-12) {
            return Err(Error::InfeasibleBudget {
                lower_sum: floor,
                budget,
            });
        }
        Ok(Self { groups, budget, mode })
    }

    pub fn maxmin(groups: Vec<Vec<SubchannelObjective>>, budget: f64) -> Result<Self> {
        Self::new(FairMode::MaxMin, groups.into_iter().map(Group::new).collect(), budget)
    }

    pub fn cluster(groups: Vec<Vec<SubchannelObjective>>, budget: f64) -> Result<Self> {
        Self::new(FairMode::Cluster, groups.into_iter().map(Group::new).collect(), budget)
    }

    pub fn cluster_maxmin(groups: Vec<Vec<SubchannelObjective>>, budget: f64) -> Result<Self> {
        Self::new(FairMode::ClusterMaxMin, groups.into_iter().map(Group::new).collect(), budget)
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn mode(&self) -> FairMode {
        self.mode
    }

    pub fn has_boxes(&self) -> bool {
        self.groups.iter().any(Group::has_boxes)
    }

    /// Utility of every group at the given powers; cluster modes evaluate
    /// each group at its own total power.
    pub fn group_utilities(&self, powers: &[Vec<f64>]) -> Vec<f64> {
        self.groups
            .iter()
            .zip(powers)
            .map(|(g, p)| {
                let pc = if self.mode == FairMode::MaxMin { 0.0 } else { p.iter().sum() };
                group_value(&g.views(pc), p)
            })
            .collect()
    }

    pub fn conditions(&self, powers: &[Vec<f64>], tolerance: f64) -> KktReport {
        fair_conditions(self, powers, tolerance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FairSolution {
    /// `powers[j][k]` is the power of subchannel `k` in group `j`.
    pub powers: Vec<Vec<f64>>,
    pub water_levels: Vec<Option<f64>>,
    pub group_powers: Vec<f64>,
    pub group_utilities: Vec<f64>,
    /// Common utility target in the max-min modes.
    pub t: Option<f64>,
    /// `true` where a subchannel is active (strictly inside its box).
    pub indices: Vec<Vec<bool>>,
    pub iterations: usize,
    /// Smallest group utility in the max-min modes, their sum otherwise.
    pub objective_value: f64,
    pub status: Status,
}

impl FairSolution {
    pub fn total_power(&self) -> f64 {
        self.group_powers.iter().sum()
    }
}

fn ext_value<U: Utility>(u: &U, p: f64) -> f64 {
    u.eval_extended(p).unwrap_or_else(|| u.eval(p).unwrap_or(f64::NEG_INFINITY))
}

fn group_value<U: Utility>(objs: &[U], powers: &[f64]) -> f64 {
    objs.iter()
        .zip(powers)
        .map(|(u, &p)| u.eval(p).unwrap_or(f64::NEG_INFINITY))
        .sum()
}

fn take_failure(cell: &RefCell<Option<Error>>) -> Result<()> {
    match cell.borrow_mut().take() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Level `mu` at which the active subchannels of a group, placed at
/// `g(mu)`, bring the group utility to `t`. `fixed` is the utility of the
/// inactive subchannels.
fn level_for_target<U: Utility>(objs: &[U], active: &[usize], fixed: f64, t: f64) -> Result<f64> {
    let forms: Option<Vec<ClosedForm>> = active.iter().map(|&k| objs[k].closed_form()).collect();
    if let Some(forms) = forms {
        if forms.iter().all(|f| matches!(f, ClosedForm::Log { .. })) {
            // U(mu) = U(1) - W ln mu
            let w: f64 = forms
                .iter()
                .map(|f| match f {
                    ClosedForm::Log { w, .. } => *w,
                    ClosedForm::Mse { .. } => 0.0,
                })
                .sum();
            let mut at_one = fixed;
            for &k in active {
                at_one += ext_value(&objs[k], objs[k].inverse_rate(1.0)?.signed());
            }
            return Ok(((at_one - t) / w).exp());
        }
        if forms.iter().all(|f| matches!(f, ClosedForm::Mse { .. })) {
            // U(mu) = fixed - sqrt(mu) * sum sqrt(w / a)
            let s: f64 = forms
                .iter()
                .map(|f| match f {
                    ClosedForm::Mse { sqrt_w_over_a, .. } => *sqrt_w_over_a,
                    ClosedForm::Log { .. } => 0.0,
                })
                .sum();
            if !(fixed > t) {
                return Err(Error::InfeasibleTarget(format!("target {t} is not below the group supremum {fixed}")));
            }
            return Ok(((fixed - t) / s).powi(2));
        }
    }

    let failure = RefCell::new(None);
    let f = |x: f64| -> (f64, Option<f64>) {
        let mu = x.exp();
        let mut total = fixed;
        let mut slope = Some(0.0);
        for &k in active {
            match objs[k].inverse_rate(mu) {
                Ok(Demand::Power(p)) => {
                    total += ext_value(&objs[k], p);
                    slope = match (slope, objs[k].rate_slope(p)) {
                        (Some(acc), Some(s)) if s < 0.0 => Some(acc + mu * mu / s),
                        _ => None,
                    };
                }
                Ok(Demand::BelowDomain) => total += objs[k].eval(0.0).unwrap_or(f64::NEG_INFINITY),
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    return (f64::NAN, None);
                }
            }
        }
        (total - t, slope)
    };
    let (lo, hi) = expand_bracket(&f, 0.0, &failure)?;
    let root = decreasing_root(&f, lo, hi, 0.5 * (lo + hi), RootOptions::default());
    take_failure(&failure)?;
    Ok(root.x.exp())
}

/// Brackets the root of a decreasing `f` by doubling steps from `x0`.
fn expand_bracket<F>(f: &F, x0: f64, failure: &RefCell<Option<Error>>) -> Result<(f64, f64)>
where
    F: Fn(f64) -> (f64, Option<f64>),
{
    let (v0, _) = f(x0);
    take_failure(failure)?;
    if v0 == 0.0 {
        return Ok((x0, x0));
    }
    let mut step = 1.0;
    let mut inner = x0;
    for _ in 0..64 {
        let probe = if v0 > 0.0 { x0 + step } else { x0 - step };
        let (v, _) = f(probe);
        take_failure(failure)?;
        if v.is_nan() {
            break;
        }
        if (v0 > 0.0 && v <= 0.0) || (v0 < 0.0 && v >= 0.0) {
            return Ok(if v0 > 0.0 { (inner, probe) } else { (probe, inner) });
        }
        inner = probe;
        step *= 2.0;
        if probe.abs() > 700.0 {
            break;
        }
    }
    Err(Error::InfeasibleTarget("no level reaches the requested utility".into()))
}

/// Solves the max-min problem without boxes by the index loop.
pub fn solve_maxmin(problem: &FairProblem, cfg: &SolverConfig) -> Result<FairSolution> {
    cfg.validate()?;
    if problem.mode != FairMode::MaxMin {
        return Err(Error::InvalidProblem("solve_maxmin needs a max-min problem".into()));
    }
    if problem.has_boxes() {
        return Err(Error::InvalidProblem("boxed groups need solve_maxmin_boxed".into()));
    }
    let groups = &problem.groups;
    let budget = problem.budget;
    let total: usize = groups.iter().map(Group::len).sum();
    let cap = cfg.outer_cap(total);
    let mut active: Vec<Vec<bool>> = groups.iter().map(|g| vec![true; g.len()]).collect();
    let mut rounds = 0;
    loop {
        let (t, levels) = maxmin_target(groups, &active, budget)?;
        let mut powers: Vec<Vec<f64>> = groups.iter().map(|g| vec![0.0; g.len()]).collect();
        let mut dropped = false;
        for (j, g) in groups.iter().enumerate() {
            let Some(mu) = levels[j] else { continue };
            for k in 0..g.len() {
                if !active[j][k] {
                    continue;
                }
                let p = g.objectives[k].inverse_rate(mu)?.signed();
                if p <= 0.0 {
                    dropped = true;
                } else {
                    powers[j][k] = p;
                }
            }
        }
        if !dropped || rounds >= cap {
            let status = if dropped { Status::IterationCap } else { Status::Optimal };
            if dropped {
                scale_to_budget(&mut powers, budget);
            }
            return Ok(finish(problem, powers, levels, Some(t), rounds, status));
        }
        rounds += 1;
        for (j, g) in groups.iter().enumerate() {
            let Some(mu) = levels[j] else { continue };
            for k in 0..g.len() {
                if active[j][k] && g.objectives[k].inverse_rate(mu)?.signed() <= 0.0 {
                    active[j][k] = false;
                }
            }
        }
    }
}

fn scale_to_budget(powers: &mut [Vec<f64>], budget: f64) {
    let total: f64 = powers.iter().flatten().sum();
    if total > budget {
        let s = budget / total;
        powers.iter_mut().flatten().for_each(|p| *p *= s);
    }
}

/// For a fixed index set, the common target `t` and each group's level.
/// Groups with no active subchannel get `None` and take no power.
fn maxmin_target(groups: &[Group], active: &[Vec<bool>], budget: f64) -> Result<(f64, Vec<Option<f64>>)> {
    struct Part<'a> {
        objs: &'a [SubchannelObjective],
        active: Vec<usize>,
        fixed: f64,
        sup: f64,
    }
    let mut parts = Vec::new();
    for (j, g) in groups.iter().enumerate() {
        let idx: Vec<usize> = (0..g.len()).filter(|&k| active[j][k]).collect();
        if idx.is_empty() {
            continue;
        }
        let fixed: f64 = (0..g.len())
            .filter(|&k| !active[j][k])
            .map(|k| g.objectives[k].eval(0.0).unwrap_or(f64::NEG_INFINITY))
            .sum();
        let sup = fixed + idx.iter().map(|&k| g.objectives[k].supremum()).sum::<f64>();
        parts.push((
            j,
            Part {
                objs: &g.objectives,
                active: idx,
                fixed,
                sup,
            },
        ));
    }
    if parts.is_empty() {
        return Err(Error::InfeasibleTarget("every subchannel was deactivated".into()));
    }
    let n_active: usize = parts.iter().map(|(_, p)| p.active.len()).sum();
    let share = budget / n_active as f64;
    let t0 = parts
        .iter()
        .map(|(_, p)| {
            p.fixed
                + p.active
                    .iter()
                    .map(|&k| p.objs[k].eval(share).unwrap_or(f64::NEG_INFINITY))
                    .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    let t_sup = parts.iter().map(|(_, p)| p.sup).fold(f64::INFINITY, f64::min);

    let failure = RefCell::new(None);
    let levels_at = |t: f64| -> Result<Vec<f64>> {
        parts
            .iter()
            .map(|(_, p)| level_for_target(p.objs, &p.active, p.fixed, t))
            .collect()
    };
    let f = |t: f64| -> (f64, Option<f64>) {
        if t >= t_sup {
            return (f64::NEG_INFINITY, None);
        }
        let levels = match levels_at(t) {
            Ok(l) => l,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                return (f64::NAN, None);
            }
        };
        let mut demand = 0.0;
        let mut slope = 0.0;
        for ((_, p), mu) in parts.iter().zip(&levels) {
            for &k in &p.active {
                match p.objs[k].inverse_rate(*mu) {
                    Ok(d) => demand += d.signed().max(f64::MIN),
                    Err(e) => {
                        failure.borrow_mut().get_or_insert(e);
                        return (f64::NAN, None);
                    }
                }
            }
            slope += 1.0 / mu;
        }
        (budget - demand, Some(-slope))
    };

    let (v0, _) = f(t0);
    take_failure(&failure)?;
    let (lo, hi) = if v0 <= 0.0 {
        (t0, t0)
    } else if t_sup.is_finite() {
        (t0, t_sup)
    } else {
        let mut step = t0.abs().max(1.0);
        let mut lo = t0;
        let mut hi = t0 + step;
        let mut found = false;
        for _ in 0..200 {
            let (v, _) = f(hi);
            take_failure(&failure)?;
            if v <= 0.0 {
                found = true;
                break;
            }
            lo = hi;
            step *= 2.0;
            hi = t0 + step;
        }
        if !found {
            return Err(Error::InfeasibleTarget("total demand never reaches the budget".into()));
        }
        (lo, hi)
    };
    let t = if lo == hi {
        lo
    } else {
        let opts = RootOptions {
            f_tol: 1e-14 * budget,
            ..RootOptions::default()
        };
        decreasing_root(&f, lo, hi, 0.5 * (lo + hi), opts).x
    };
    take_failure(&failure)?;
    let levels = levels_at(t)?;
    let mut out = vec![None; groups.len()];
    for ((j, _), mu) in parts.iter().zip(levels) {
        out[*j] = Some(mu);
    }
    Ok((t, out))
}

/// Per-group powers and water levels at one target.
type GroupPoints = Vec<(Vec<f64>, Option<f64>)>;

/// Solves the max-min problem with per-subchannel boxes.
///
/// The outer search is on the common target `t`. For a given `t` each group
/// spends the least power that lifts its utility to `t`; that allocation
/// clamps `g(mu)` into the boxes for the group's own level `mu`. A group
/// already at `t` on its lower bounds takes exactly those, and `t` is capped
/// where the weakest group saturates its upper bounds.
pub fn solve_maxmin_boxed(problem: &FairProblem, cfg: &SolverConfig) -> Result<FairSolution> {
    cfg.validate()?;
    if problem.mode != FairMode::MaxMin {
        return Err(Error::InvalidProblem("solve_maxmin_boxed needs a max-min problem".into()));
    }
    let groups = &problem.groups;
    let budget = problem.budget;

    let floor_utility: Vec<f64> = groups.iter().map(|g| group_value(&g.objectives, &g.lower)).collect();
    let cap_utility: Vec<f64> = groups
        .iter()
        .map(|g| {
            if g.upper.iter().all(|t| t.is_finite()) {
                group_value(&g.objectives, &g.upper)
            } else {
                let fixed: f64 = (0..g.len())
                    .filter(|&k| g.upper[k].is_finite())
                    .map(|k| g.objectives[k].eval(g.upper[k]).unwrap_or(f64::NEG_INFINITY))
                    .sum();
                fixed
                    + (0..g.len())
                        .filter(|&k| !g.upper[k].is_finite())
                        .map(|k| g.objectives[k].supremum())
                        .sum::<f64>()
            }
        })
        .collect();
    let t_cap = cap_utility.iter().copied().fold(f64::INFINITY, f64::min);
    let t_floor = floor_utility.iter().copied().fold(f64::INFINITY, f64::min);

    let demand_at = |t: f64| -> Result<(f64, GroupPoints)> {
        let mut total = 0.0;
        let mut out = Vec::with_capacity(groups.len());
        for (j, g) in groups.iter().enumerate() {
            let (p, mu) = if t <= floor_utility[j] {
                (g.lower.clone(), None)
            } else {
                boxed_group_demand(g, t)?
            };
            total += p.iter().sum::<f64>();
            out.push((p, mu));
        }
        Ok((total, out))
    };

    let mut steps = 0;
    let saturated = if t_cap.is_finite() {
        let (need, _) = demand_at(t_cap)?;
        need <= budget
    } else {
        false
    };
    let (t, status) = if saturated {
        (t_cap, Status::Feasible)
    } else {
        let lo = t_floor;
        let hi = if t_cap.is_finite() {
            t_cap
        } else {
            let mut step = lo.abs().max(1.0);
            let mut hi = lo + step;
            loop {
                steps += 1;
                let (need, _) = demand_at(hi)?;
                if need >= budget {
                    break hi;
                }
                if steps > 200 {
                    return Err(Error::InfeasibleTarget("total demand never reaches the budget".into()));
                }
                step *= 2.0;
                hi = lo + step;
            }
        };
        let failure = RefCell::new(None);
        let root = bisect_decreasing(
            |t| match demand_at(t) {
                Ok((need, _)) => budget - need,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    -1.0
                }
            },
            lo,
            hi,
            1e-15,
            400,
        );
        take_failure(&failure)?;
        steps += root.iterations;
        (root.x, Status::Optimal)
    };
    let (_, parts) = demand_at(t)?;
    let mut powers = Vec::with_capacity(groups.len());
    let mut levels = Vec::with_capacity(groups.len());
    for (p, mu) in parts {
        powers.push(p);
        levels.push(mu);
    }
    let total: f64 = powers.iter().flatten().sum();
    if total > budget {
        let floor: Vec<Vec<f64>> = groups.iter().map(|g| g.lower.clone()).collect();
        let excess: f64 = total - floor.iter().flatten().sum::<f64>();
        let s = (budget - floor.iter().flatten().sum::<f64>()) / excess;
        for (p, g) in powers.iter_mut().zip(&floor) {
            for (x, lo) in p.iter_mut().zip(g) {
                *x = lo + (*x - lo) * s;
            }
        }
    }
    Ok(finish(problem, powers, levels, Some(t), steps, status))
}

/// Least-power allocation lifting a boxed group to utility `t`.
fn boxed_group_demand(g: &Group, t: f64) -> Result<(Vec<f64>, Option<f64>)> {
    let objs = &g.objectives;
    let place = |mu: f64| -> Result<Vec<f64>> {
        (0..g.len())
            .map(|k| {
                let p = objs[k].inverse_rate(mu)?.signed();
                Ok(p.max(g.lower[k]).min(g.upper[k]))
            })
            .collect()
    };
    let failure = RefCell::new(None);
    let f = |x: f64| -> (f64, Option<f64>) {
        let mu = x.exp();
        match place(mu) {
            Ok(p) => {
                let mut slope = Some(0.0);
                for k in 0..g.len() {
                    if p[k] > g.lower[k] && p[k] < g.upper[k] {
                        slope = match (slope, objs[k].rate_slope(p[k])) {
                            (Some(acc), Some(s)) if s < 0.0 => Some(acc + mu * mu / s),
                            _ => None,
                        };
                    }
                }
                (group_value(objs, &p) - t, slope)
            }
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                (f64::NAN, None)
            }
        }
    };
    let x0 = {
        let r: Vec<f64> = (0..g.len())
            .filter_map(|k| objs[k].rate(g.lower[k] + 1.0).ok())
            .filter(|r| r.is_finite() && *r > 0.0)
            .map(f64::ln)
            .collect();
        if r.is_empty() {
            0.0
        } else {
            r.iter().sum::<f64>() / r.len() as f64
        }
    };
    let (lo, hi) = expand_bracket(&f, x0, &failure)?;
    let root = decreasing_root(&f, lo, hi, 0.5 * (lo + hi), RootOptions::default());
    take_failure(&failure)?;
    let mu = root.x.exp();
    Ok((place(mu)?, Some(mu)))
}

/// Optimal value, level and powers of one cluster at total power `pc`.
struct ClusterPoint {
    value: f64,
    level: Option<f64>,
    powers: Vec<f64>,
    /// Total derivative of the optimal value with respect to `pc`.
    slope: f64,
}

fn cluster_point(g: &Group, pc: f64, cfg: &SolverConfig) -> Result<ClusterPoint> {
    let views = g.views(pc);
    let a = water_fill(&views, &vec![0.0; g.len()], pc, cfg)?;
    let level = match a.water_level {
        Some(mu) => mu,
        None => views
            .iter()
            .map(|v| v.rate(0.0).unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max),
    };
    let partial: f64 = g
        .objectives
        .iter()
        .zip(&a.powers)
        .map(|(o, &p)| o.cluster_partial(p, pc))
        .sum();
    Ok(ClusterPoint {
        value: a.objective_value,
        level: a.water_level,
        powers: a.powers,
        slope: level + partial,
    })
}

/// Largest `P_j` in `[0, budget]` whose value slope is at least `lambda`.
fn cluster_share(g: &Group, lambda: f64, budget: f64, cfg: &SolverConfig) -> Result<f64> {
    if cluster_point(g, 0.0, cfg)?.slope <= lambda {
        return Ok(0.0);
    }
    if cluster_point(g, budget, cfg)?.slope >= lambda {
        return Ok(budget);
    }
    let failure = RefCell::new(None);
    let root = bisect_decreasing(
        |pc| match cluster_point(g, pc, cfg) {
            Ok(pt) => pt.slope - lambda,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                -1.0
            }
        },
        0.0,
        budget,
        1e-15,
        200,
    );
    take_failure(&failure)?;
    Ok(root.x)
}

/// Solves the cluster problem: the group totals equalize the derivative of
/// each group's optimal value; inside a group the allocation is the
/// single-budget water-filling at that total.
pub fn solve_cluster(problem: &FairProblem, cfg: &SolverConfig) -> Result<FairSolution> {
    cfg.validate()?;
    if problem.mode != FairMode::Cluster {
        return Err(Error::InvalidProblem("solve_cluster needs a cluster problem".into()));
    }
    let groups = &problem.groups;
    let budget = problem.budget;
    let mut steps = 0;
    let totals = if groups.len() == 1 {
        vec![budget]
    } else {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for g in groups {
            hi = hi.max(cluster_point(g, 0.0, cfg)?.slope);
            lo = lo.min(cluster_point(g, budget, cfg)?.slope);
        }
        let failure = RefCell::new(None);
        let shares = |lambda: f64| -> Result<Vec<f64>> {
            groups.iter().map(|g| cluster_share(g, lambda, budget, cfg)).collect()
        };
        let root = bisect_decreasing(
            |lambda| match shares(lambda) {
                Ok(s) => s.iter().sum::<f64>() - budget,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    -1.0
                }
            },
            lo,
            hi,
            1e-15,
            200,
        );
        take_failure(&failure)?;
        steps = root.iterations;
        normalize(shares(root.x)?, budget)
    };
    let mut powers = Vec::with_capacity(groups.len());
    let mut levels = Vec::with_capacity(groups.len());
    for (g, &pc) in groups.iter().zip(&totals) {
        let pt = cluster_point(g, pc, cfg)?;
        powers.push(pt.powers);
        levels.push(pt.level);
    }
    Ok(finish(problem, powers, levels, None, steps, Status::Optimal))
}

fn normalize(mut shares: Vec<f64>, budget: f64) -> Vec<f64> {
    let s: f64 = shares.iter().sum();
    if s > 0.0 {
        shares.iter_mut().for_each(|x| *x *= budget / s);
    }
    shares
}

/// Solves the cluster max-min problem: bisection on the common target,
/// with each group's total set to the least power whose optimal value
/// reaches it.
pub fn solve_cluster_maxmin(problem: &FairProblem, cfg: &SolverConfig) -> Result<FairSolution> {
    cfg.validate()?;
    if problem.mode != FairMode::ClusterMaxMin {
        return Err(Error::InvalidProblem("solve_cluster_maxmin needs a cluster max-min problem".into()));
    }
    let groups = &problem.groups;
    let budget = problem.budget;
    let mut at_zero = Vec::with_capacity(groups.len());
    let mut at_full = Vec::with_capacity(groups.len());
    for g in groups {
        at_zero.push(cluster_point(g, 0.0, cfg)?.value);
        at_full.push(cluster_point(g, budget, cfg)?.value);
    }
    let t_lo = at_zero.iter().copied().fold(f64::INFINITY, f64::min);
    let t_hi = at_full.iter().copied().fold(f64::INFINITY, f64::min);

    let demand = |j: usize, t: f64| -> Result<f64> {
        if at_zero[j] >= t {
            return Ok(0.0);
        }
        if at_full[j] <= t {
            return Ok(budget);
        }
        let failure = RefCell::new(None);
        let root = bisect_decreasing(
            |pc| match cluster_point(&groups[j], pc, cfg) {
                Ok(pt) => t - pt.value,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    -1.0
                }
            },
            0.0,
            budget,
            1e-15,
            200,
        );
        take_failure(&failure)?;
        Ok(root.x)
    };
    let totals_at = |t: f64| -> Result<Vec<f64>> { (0..groups.len()).map(|j| demand(j, t)).collect() };
    let failure = RefCell::new(None);
    let root = bisect_decreasing(
        |t| match totals_at(t) {
            Ok(d) => budget - d.iter().sum::<f64>(),
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                -1.0
            }
        },
        t_lo,
        t_hi,
        1e-15,
        200,
    );
    take_failure(&failure)?;
    let totals = normalize(totals_at(root.x)?, budget);
    let mut powers = Vec::with_capacity(groups.len());
    let mut levels = Vec::with_capacity(groups.len());
    for (g, &pc) in groups.iter().zip(&totals) {
        let pt = cluster_point(g, pc, cfg)?;
        powers.push(pt.powers);
        levels.push(pt.level);
    }
    Ok(finish(problem, powers, levels, Some(root.x), root.iterations, Status::Optimal))
}

/// Dispatches on the problem's mode (and boxes for max-min).
pub fn solve_fair(problem: &FairProblem, cfg: &SolverConfig) -> Result<FairSolution> {
    match problem.mode {
        FairMode::MaxMin if problem.has_boxes() => solve_maxmin_boxed(problem, cfg),
        FairMode::MaxMin => solve_maxmin(problem, cfg),
        FairMode::Cluster => solve_cluster(problem, cfg),
        FairMode::ClusterMaxMin => solve_cluster_maxmin(problem, cfg),
    }
}

fn finish(
    problem: &FairProblem,
    powers: Vec<Vec<f64>>,
    water_levels: Vec<Option<f64>>,
    t: Option<f64>,
    iterations: usize,
    status: Status,
) -> FairSolution {
    let group_utilities = problem.group_utilities(&powers);
    let group_powers: Vec<f64> = powers.iter().map(|p| p.iter().sum()).collect();
    let eps = ON_BOUND * problem.budget.max(1.0);
    let indices = problem
        .groups
        .iter()
        .zip(&powers)
        .map(|(g, p)| {
            (0..g.len())
                .map(|k| p[k] - g.lower[k] > eps && g.upper[k] - p[k] > eps)
                .collect()
        })
        .collect();
    let objective_value = match problem.mode {
        FairMode::Cluster => group_utilities.iter().sum(),
        _ => group_utilities.iter().copied().fold(f64::INFINITY, f64::min),
    };
    FairSolution {
        powers,
        water_levels,
        group_powers,
        group_utilities,
        t,
        indices,
        iterations,
        objective_value,
        status,
    }
}

/// Optimality residuals for the group problems.
///
/// Every mode checks the per-group water-filling conditions (each group's
/// allocation is optimal for its own total), the total budget and
/// feasibility. Max-min modes add the utility equalization, where a group
/// whose powers all sit on their lower bounds may exceed the common level.
/// The cluster mode adds the equalization of the value slopes across groups.
pub fn fair_conditions(problem: &FairProblem, powers: &[Vec<f64>], tolerance: f64) -> KktReport {
    let budget = problem.budget;
    let scale = budget.max(1.0);
    let eps = ON_BOUND * scale;
    let mut spread = (0.0, None);
    let mut low = (0.0, None);
    let mut up = (0.0, None);
    let mut levels = Vec::new();
    let mut feas = (0.0, None);
    for (j, (g, p)) in problem.groups.iter().zip(powers).enumerate() {
        let pc = if problem.mode == FairMode::MaxMin { 0.0 } else { p.iter().sum() };
        let views = g.views(pc);
        let members: Vec<usize> = (0..g.len()).collect();
        let c = level_check(&views, &g.lower, &g.upper, p, &members, eps);
        if c.spread.0 > spread.0 {
            spread = (c.spread.0, Some(j));
        }
        if c.lower.0 > low.0 {
            low = (c.lower.0, Some(j));
        }
        if c.upper.0 > up.0 {
            up = (c.upper.0, Some(j));
        }
        levels.push(c.mu);
        let (v, _) = worst_excess((0..g.len()).map(|k| (k, (g.lower[k] - p[k]).max(p[k] - g.upper[k]))));
        if v > feas.0 {
            feas = (v, Some(j));
        }
    }
    let total: f64 = powers.iter().flatten().sum();
    let mut residuals = vec![
        Residual::new("rate_spread", spread.0, tolerance, spread.1),
        Residual::new("lower_rates", low.0, tolerance, low.1),
        Residual::new("upper_rates", up.0, tolerance, up.1),
    ];

    let utilities = problem.group_utilities(powers);
    let mut saturated = false;
    match problem.mode {
        FairMode::MaxMin | FairMode::ClusterMaxMin => {
            let t = utilities.iter().copied().fold(f64::INFINITY, f64::min);
            let (v, w) = worst_excess(utilities.iter().enumerate().map(|(j, u)| {
                let g = &problem.groups[j];
                let floored = (0..g.len()).all(|k| powers[j][k] - g.lower[k] <= eps);
                let gap = if floored { 0.0 } else { u - t };
                (j, nan_to_inf(gap / (1.0 + t.abs())))
            }));
            residuals.push(Residual::new("utility_spread", v, tolerance, w));
            // The common level cannot rise once the weakest group is on its upper bounds.
            saturated = utilities.iter().enumerate().any(|(j, u)| {
                let g = &problem.groups[j];
                (u - t).abs() <= tolerance * (1.0 + t.abs()) && (0..g.len()).all(|k| g.upper[k] - powers[j][k] <= eps)
            });
        }
        FairMode::Cluster => {
            let cfg = SolverConfig::default();
            let slopes: Vec<(usize, f64, f64)> = problem
                .groups
                .iter()
                .zip(powers)
                .enumerate()
                .filter_map(|(j, (g, p))| {
                    let pc: f64 = p.iter().sum();
                    cluster_point(g, pc, &cfg).ok().map(|pt| (j, pc, pt.slope))
                })
                .collect();
            let lambda = slopes
                .iter()
                .filter(|s| s.1 > eps)
                .map(|s| s.2)
                .fold(f64::NEG_INFINITY, f64::max);
            let (v, w) = worst_excess(slopes.iter().map(|&(j, pc, s)| {
                let gap = if pc > eps { (s - lambda).abs() } else { (s - lambda).max(0.0) };
                (j, nan_to_inf(gap / lambda.abs().max(1.0)))
            }));
            let value = if lambda.is_finite() { v } else { 0.0 };
            residuals.push(Residual::new("outer_stationarity", value, tolerance, w));
        }
    }
    if saturated {
        residuals.push(Residual::not_applicable("budget", tolerance));
    } else {
        residuals.push(Residual::new("budget", (total - budget).abs() / budget, tolerance, None));
    }
    let excess = feas.0.max(total - budget);
    residuals.push(Residual::new("feasibility", excess.max(0.0) / scale, tolerance, feas.1));
    KktReport::new(residuals, levels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(w: f64, a: f64, b: f64) -> SubchannelObjective {
        SubchannelObjective::log_capacity(w, a, b).unwrap()
    }

    fn mse(w: f64, a: f64, b: f64) -> SubchannelObjective {
        SubchannelObjective::inverse_mse(w, a, b).unwrap()
    }

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn symmetric_pair() {
        let p = FairProblem::maxmin(vec![vec![log(1.0, 1.0, 1.0)], vec![log(1.0, 1.0, 1.0)]], 2.0).unwrap();
        let s = solve_maxmin(&p, &cfg()).unwrap();
        assert!((s.powers[0][0] - 1.0).abs() < 1e-12);
        assert!((s.powers[1][0] - 1.0).abs() < 1e-12);
        assert!((s.t.unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_closed_form_pair() {
        let p = FairProblem::maxmin(vec![vec![log(1.0, 2.0, 1.0)], vec![log(1.0, 1.0, 1.0)]], 3.0).unwrap();
        let s = solve_maxmin(&p, &cfg()).unwrap();
        assert!((s.powers[0][0] - 1.0).abs() < 1e-10, "{s:?}");
        assert!((s.powers[1][0] - 2.0).abs() < 1e-10);
        assert!((s.t.unwrap() - 3f64.ln()).abs() < 1e-8);
        assert!(p.conditions(&s.powers, 1e-8).passed);
    }

    #[test]
    fn uniform_powers_fail_equalization() {
        let p = FairProblem::maxmin(vec![vec![log(1.0, 2.0, 1.0)], vec![log(1.0, 1.0, 1.0)]], 3.0).unwrap();
        let report = p.conditions(&[vec![1.5], vec![1.5]], 1e-8);
        let r = report.get("utility_spread").unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst, Some(0));
    }

    #[test]
    fn mse_groups_equalize_and_deactivate() {
        let groups = vec![
            vec![mse(1.0, 2.0, 1.0), mse(0.5, 0.1, 1.0)],
            vec![mse(2.0, 1.0, 1.0), mse(1.0, 3.0, 1.0)],
        ];
        let p = FairProblem::maxmin(groups, 1.0).unwrap();
        let s = solve_maxmin(&p, &cfg()).unwrap();
        let t = s.t.unwrap();
        // Group 0 already beats the common level with no power at all.
        assert_eq!(s.group_powers[0], 0.0);
        assert!(s.group_utilities[0] > t);
        assert!((s.group_utilities[1] - t).abs() <= 1e-8 * (1.0 + t.abs()));
        assert!((s.total_power() - 1.0).abs() <= 1e-9);
        assert!(p.conditions(&s.powers, 1e-8).passed, "{:?}", p.conditions(&s.powers, 1e-8));
    }

    #[test]
    fn boxed_agrees_with_index_loop_when_boxes_are_slack() {
        let groups = vec![
            vec![mse(1.0, 2.0, 1.0), mse(0.5, 0.1, 1.0)],
            vec![log(1.0, 1.0, 1.0), log(2.0, 0.5, 1.0)],
        ];
        let p = FairProblem::maxmin(groups.clone(), 2.0).unwrap();
        let loose = FairProblem::new(
            FairMode::MaxMin,
            groups
                .into_iter()
                .map(|o| Group::boxed(o, vec![0.0, 0.0], vec![100.0, 100.0]).unwrap())
                .collect(),
            2.0,
        )
        .unwrap();
        let a = solve_maxmin(&p, &cfg()).unwrap();
        let b = solve_maxmin_boxed(&loose, &cfg()).unwrap();
        for (x, y) in a.powers.iter().flatten().zip(b.powers.iter().flatten()) {
            assert!((x - y).abs() < 1e-8, "{a:?}\n{b:?}");
        }
        assert!((a.t.unwrap() - b.t.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn single_boxed_group_matches_box_solver() {
        let objs = vec![log(1.0, 1.0, 1.0), log(1.0, 1.0, 1.0), log(1.0, 1.0, 1.0)];
        let lower = vec![0.0; 3];
        let upper = vec![1.0, 3.0, 3.0];
        let p = FairProblem::new(
            FairMode::MaxMin,
            vec![Group::boxed(objs.clone(), lower.clone(), upper.clone()).unwrap()],
            6.0,
        )
        .unwrap();
        let s = solve_maxmin_boxed(&p, &cfg()).unwrap();
        let b = crate::boxed::solve_box(&crate::boxed::BoxProblem::new(objs, 6.0, lower, upper).unwrap(), &cfg()).unwrap();
        for (x, y) in s.powers[0].iter().zip(&b.powers) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn tight_upper_bounds_cap_the_target() {
        let groups = vec![
            Group::boxed(vec![mse(1.0, 1.0, 1.0)], vec![0.0], vec![0.5]).unwrap(),
            Group::boxed(vec![mse(1.0, 2.0, 1.0)], vec![0.0], vec![5.0]).unwrap(),
        ];
        let p = FairProblem::new(FairMode::MaxMin, groups, 4.0).unwrap();
        let s = solve_maxmin_boxed(&p, &cfg()).unwrap();
        assert_eq!(s.status, Status::Feasible);
        assert_eq!(s.powers[0][0], 0.5);
        assert!((s.t.unwrap() - (-1.0 / 1.5)).abs() < 1e-12);
        assert!(s.total_power() <= 4.0);
        assert!(p.conditions(&s.powers, 1e-8).passed, "{:?}", p.conditions(&s.powers, 1e-8));
    }

    #[test]
    fn single_cluster_is_plain_water_filling() {
        let objs = vec![
            SubchannelObjective::cluster_log_capacity(1.0, 2.0, 0.1, 1.0).unwrap(),
            SubchannelObjective::cluster_log_capacity(1.0, 0.5, 0.1, 1.0).unwrap(),
        ];
        let p = FairProblem::cluster(vec![objs.clone()], 3.0).unwrap();
        let s = solve_cluster(&p, &cfg()).unwrap();
        let views: Vec<_> = objs.iter().map(|o| o.at_cluster_power(3.0)).collect();
        let reference = water_fill(&views, &[0.0, 0.0], 3.0, &cfg()).unwrap();
        assert_eq!(s.powers[0], reference.powers);
    }

    #[test]
    fn error_free_clusters_pool_their_channels() {
        let a = [2.0, 0.5, 1.0, 3.0];
        let cl: Vec<SubchannelObjective> = a
            .iter()
            .map(|&a| SubchannelObjective::cluster_log_capacity(1.0, a, 0.0, 1.0).unwrap())
            .collect();
        let p = FairProblem::cluster(vec![cl[..2].to_vec(), cl[2..].to_vec()], 2.0).unwrap();
        let s = solve_cluster(&p, &cfg()).unwrap();
        let pooled: Vec<_> = a.iter().map(|&a| log(1.0, a, 1.0)).collect();
        let r = crate::simplex::solve_p1(&crate::simplex::SimplexProblem::new(pooled, 2.0).unwrap(), &cfg()).unwrap();
        for (x, y) in s.powers.iter().flatten().zip(&r.powers) {
            assert!((x - y).abs() < 1e-8, "{s:?} {r:?}");
        }
        assert!(p.conditions(&s.powers, 1e-6).passed);
    }

    #[test]
    fn symmetric_cluster_maxmin_splits_evenly() {
        let g = vec![
            SubchannelObjective::cluster_log_capacity(1.0, 1.0, 0.1, 1.0).unwrap(),
            SubchannelObjective::cluster_log_capacity(0.5, 2.0, 0.1, 1.0).unwrap(),
        ];
        let p = FairProblem::cluster_maxmin(vec![g.clone(), g], 4.0).unwrap();
        let s = solve_cluster_maxmin(&p, &cfg()).unwrap();
        assert!((s.group_powers[0] - 2.0).abs() < 1e-9);
        assert!((s.group_utilities[0] - s.group_utilities[1]).abs() < 1e-9);
    }

    #[test]
    fn mode_checks() {
        let cl = SubchannelObjective::cluster_log_capacity(1.0, 1.0, 0.1, 1.0).unwrap();
        assert!(FairProblem::maxmin(vec![vec![cl.clone()]], 1.0).is_err());
        let p = FairProblem::cluster(vec![vec![cl]], 1.0).unwrap();
        assert!(solve_maxmin(&p, &cfg()).is_err());
    }
}

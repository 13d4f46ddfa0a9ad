//! One type over every problem class, with a solver dispatch.

use serde::{Deserialize, Serialize};

use crate::allocation::{Allocation, KktReport, SolverConfig, Status};
use crate::boxed::{solve_box, BoxProblem};
use crate::error::Result;
use crate::fair::{solve_fair, FairMode, FairProblem, FairSolution};
use crate::nested::{solve_ascending, AscendingProblem, AscendingSolution};
use crate::objective::{SubchannelObjective, Utility};
use crate::simplex::{solve_p1, solve_p1_lower, SimplexProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemClass {
    P1,
    P1Lower,
    Box,
    Ascending,
    Maxmin,
    Cluster,
    ClusterMaxmin,
}

impl ProblemClass {
    pub fn name(self) -> &'static str {
        match self {
            Self::P1 => "p1",
            Self::P1Lower => "p1_lower",
            Self::Box => "box",
            Self::Ascending => "ascending",
            Self::Maxmin => "maxmin",
            Self::Cluster => "cluster",
            Self::ClusterMaxmin => "cluster_maxmin",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Problem {
    Simplex(SimplexProblem),
    Box(BoxProblem),
    Ascending(AscendingProblem),
    Fair(FairProblem),
}

impl Problem {
    pub fn class(&self) -> ProblemClass {
        match self {
            Self::Simplex(p) if p.lower_bounds().iter().all(|g| *g == 0.0) => ProblemClass::P1,
            Self::Simplex(_) => ProblemClass::P1Lower,
            Self::Box(_) => ProblemClass::Box,
            Self::Ascending(_) => ProblemClass::Ascending,
            Self::Fair(p) => match p.mode() {
                FairMode::MaxMin => ProblemClass::Maxmin,
                FairMode::Cluster => ProblemClass::Cluster,
                FairMode::ClusterMaxMin => ProblemClass::ClusterMaxmin,
            },
        }
    }

    /// Number of power variables, counting every group's subchannels.
    pub fn len(&self) -> usize {
        match self {
            Self::Simplex(p) => p.len(),
            Self::Box(p) => p.len(),
            Self::Ascending(p) => p.len(),
            Self::Fair(p) => p.groups().iter().map(|g| g.len()).sum(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total budget; the last prefix budget for ascending problems.
    pub fn budget(&self) -> f64 {
        match self {
            Self::Simplex(p) => p.budget(),
            Self::Box(p) => p.budget(),
            Self::Ascending(p) => *p.prefix_budgets().last().unwrap_or(&0.0),
            Self::Fair(p) => p.budget(),
        }
    }

    /// Objective at flattened powers: the sum of utilities, or the smallest
    /// group utility for max-min problems.
    pub fn objective(&self, powers: &[f64]) -> f64 {
        let sum = |objs: &[SubchannelObjective]| -> f64 {
            objs.iter()
                .zip(powers)
                .map(|(o, &p)| o.eval(p).unwrap_or(f64::NEG_INFINITY))
                .sum()
        };
        match self {
            Self::Simplex(p) => sum(p.objectives()),
            Self::Box(p) => sum(p.objectives()),
            Self::Ascending(p) => sum(p.objectives()),
            Self::Fair(p) => {
                let u = p.group_utilities(&self.unflatten(powers));
                match p.mode() {
                    FairMode::Cluster => u.iter().sum(),
                    _ => u.iter().copied().fold(f64::INFINITY, f64::min),
                }
            }
        }
    }

    /// Splits flattened powers into groups; one group for single-budget classes.
    pub fn unflatten(&self, powers: &[f64]) -> Vec<Vec<f64>> {
        match self {
            Self::Fair(p) => {
                let mut out = Vec::with_capacity(p.groups().len());
                let mut at = 0;
                for g in p.groups() {
                    let end = (at + g.len()).min(powers.len());
                    out.push(powers[at..end].to_vec());
                    at = end;
                }
                out
            }
            _ => vec![powers.to_vec()],
        }
    }

    pub fn solve(&self, cfg: &SolverConfig) -> Result<Solution> {
        Ok(match self {
            Self::Simplex(p) if self.class() == ProblemClass::P1 => Solution::Single(solve_p1(p, cfg)?),
            Self::Simplex(p) => Solution::Single(solve_p1_lower(p, cfg)?),
            Self::Box(p) => Solution::Single(solve_box(p, cfg)?),
            Self::Ascending(p) => Solution::Ascending(solve_ascending(p, cfg)?),
            Self::Fair(p) => Solution::Fair(solve_fair(p, cfg)?),
        })
    }

    /// Optimality residuals of flattened powers for this problem.
    pub fn conditions(&self, powers: &[f64], tolerance: f64) -> KktReport {
        crate::oracle::check_conditions(self, powers, tolerance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "solution", rename_all = "snake_case")]
pub enum Solution {
    Single(Allocation),
    Ascending(AscendingSolution),
    Fair(FairSolution),
}

impl Solution {
    pub fn powers(&self) -> Vec<f64> {
        match self {
            Self::Single(a) => a.powers.clone(),
            Self::Ascending(s) => s.allocation.powers.clone(),
            Self::Fair(s) => s.powers.iter().flatten().copied().collect(),
        }
    }

    pub fn status(&self) -> Status {
        match self {
            Self::Single(a) => a.status,
            Self::Ascending(s) => s.allocation.status,
            Self::Fair(s) => s.status,
        }
    }

    pub fn iterations(&self) -> usize {
        match self {
            Self::Single(a) => a.iterations,
            Self::Ascending(s) => s.allocation.iterations,
            Self::Fair(s) => s.iterations,
        }
    }

    pub fn objective_value(&self) -> f64 {
        match self {
            Self::Single(a) => a.objective_value,
            Self::Ascending(s) => s.allocation.objective_value,
            Self::Fair(s) => s.objective_value,
        }
    }

    pub fn water_levels(&self) -> Vec<Option<f64>> {
        match self {
            Self::Single(a) => vec![a.water_level],
            Self::Ascending(s) => s.segments.iter().map(|g| g.water_level).collect(),
            Self::Fair(s) => s.water_levels.clone(),
        }
    }
}

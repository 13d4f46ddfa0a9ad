//! Reference solvers for certifying the fast algorithms on small instances.
//!
//! Enumeration is exhaustive over active sets or bound assignments and is
//! certified on in-range sizes. Projected gradient and grid search are
//! generic and uncertified; agreement between the three is the check.

mod enumerate;
mod gradient;
mod grid;

use serde::{Deserialize, Serialize};

use crate::allocation::KktReport;
use crate::conditions::box_conditions;
use crate::fair::fair_conditions;
use crate::nested::ascending_conditions;
use crate::problem::Problem;

pub use enumerate::{enumerate_box, enumerate_p1, BOX_ENUMERATION_LIMIT, P1_ENUMERATION_LIMIT};
pub use gradient::{project_box_sum, project_prefix, projected_gradient, GradientOptions};
pub use grid::{grid_problem, grid_search, GridOptions, GRID_DIMENSION_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    EnumerateP1,
    EnumerateBox,
    ProjectedGradient,
    GridSearch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub powers: Vec<f64>,
    pub objective: f64,
    pub method: OracleMethod,
    /// Candidates enumerated, iterations taken, or grid points evaluated.
    pub evaluations: usize,
    pub certified: bool,
}

/// Evaluates every optimality condition that applies to the problem class.
/// Group problems take their powers flattened in group order.
pub fn check_conditions(problem: &Problem, powers: &[f64], tolerance: f64) -> KktReport {
    match problem {
        Problem::Simplex(p) => {
            let upper = vec![f64::INFINITY; p.len()];
            box_conditions(p.objectives(), p.lower_bounds(), &upper, p.budget(), powers, tolerance)
        }
        Problem::Box(p) => p.conditions(powers, tolerance),
        Problem::Ascending(p) => {
            ascending_conditions(p.objectives(), p.prefix_budgets(), p.lower(), p.upper(), powers, tolerance)
        }
        Problem::Fair(p) => fair_conditions(p, &problem.unflatten(powers), tolerance),
    }
}

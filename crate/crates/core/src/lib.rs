//! Water-filling power allocation.
//!
//! Solvers for concave utility maximization over a power budget: a single
//! sum constraint with optional lower bounds, per-subchannel boxes,
//! ascending prefix budgets, max-min fairness across groups, and clustered
//! groups whose utilities depend on the group's total power. Every solver
//! works from the same three primitives of a [`Utility`]: its value, its
//! rate of increase, and the inverse of that rate.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod boxed;
pub mod conditions;
pub mod error;
pub mod fair;
pub mod instance;
pub mod objective;
pub mod nested;
pub mod oracle;
pub mod problem;
pub mod scenario;
mod roots;
pub mod simplex;

pub use allocation::{Allocation, BoxStrategy, KktReport, Residual, SolverConfig, Status};
pub use boxed::{box_fill, solve_box, solve_box_bisect, solve_box_ordered, solve_box_set_a, solve_box_set_b, BoxProblem};
pub use error::{Error, Result};
pub use fair::{
    fair_conditions, solve_cluster, solve_cluster_maxmin, solve_fair, solve_maxmin, solve_maxmin_boxed, FairMode,
    FairProblem, FairSolution, Group,
};
pub use instance::{GroupRecord, ProblemInstance};
pub use nested::{ascending_conditions, solve_ascending, AscendingProblem, AscendingSolution, Segment, Split};
pub use problem::{Problem, ProblemClass, Solution};
pub use objective::{bisect_inverse_rate, ClusterView, CustomUtility, Demand, Family, SubchannelObjective, Utility};
pub use scenario::{ScenarioObjective, ScenarioSpec};
pub use simplex::{kkt_residual_p1, solve_p1, solve_p1_lower, solve_water_level, water_fill, SimplexProblem};

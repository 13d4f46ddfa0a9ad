use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    /// All optimality conditions of the problem class hold.
    Optimal,
    /// Feasible but the sum constraint is slack or a tolerance floor was hit.
    Feasible,
    /// The outer loop hit `max_outer_iterations`; the powers were repaired
    /// to the nearest feasible point.
    IterationCap,
}

/// Which of the four box-constrained algorithms `solve_box` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxStrategy {
    /// Lower bounds first, then clamp upper violators and repeat.
    SetBasedA,
    /// Balanced lower/upper index families.
    SetBasedB,
    /// Bisection on the final water level.
    Bisection,
    /// Sweep of upper-bound cases ordered by the rate at the upper bound.
    OrderBased,
}

impl BoxStrategy {
    pub const ALL: [BoxStrategy; 4] = [
        BoxStrategy::SetBasedA,
        BoxStrategy::SetBasedB,
        BoxStrategy::Bisection,
        BoxStrategy::OrderBased,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoxStrategy::SetBasedA => "set_based_a",
            BoxStrategy::SetBasedB => "set_based_b",
            BoxStrategy::Bisection => "bisection",
            BoxStrategy::OrderBased => "order_based",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Relative tolerance on water levels.
    pub mu_tolerance: f64,
    /// Absolute power tolerance as a fraction of the budget.
    pub power_tolerance: f64,
    /// Cap on outer iterations; `None` means `4 * K`.
    pub max_outer_iterations: Option<usize>,
    pub box_strategy: BoxStrategy,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mu_tolerance: 1e-10,
            power_tolerance: 1e-9,
            max_outer_iterations: None,
            box_strategy: BoxStrategy::OrderBased,
        }
    }
}

impl SolverConfig {
    pub fn with_strategy(strategy: BoxStrategy) -> Self {
        Self {
            box_strategy: strategy,
            ..Self::default()
        }
    }

    pub(crate) fn outer_cap(&self, k: usize) -> usize {
        self.max_outer_iterations.unwrap_or(4 * k.max(1))
    }

    pub fn validate(&self) -> crate::Result<()> {
        if !(self.mu_tolerance > 0.0) || !(self.power_tolerance > 0.0) {
            return Err(crate::Error::InvalidProblem("solver tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Solved powers for a single-budget problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Allocation {
    pub powers: Vec<f64>,
    /// Common rate of the active subchannels; `None` when every subchannel
    /// sits on a bound.
    pub water_level: Option<f64>,
    pub active_set: Vec<usize>,
    pub lower_set: Vec<usize>,
    pub upper_set: Vec<usize>,
    /// Outer-loop count of the algorithm that produced this allocation:
    /// deactivation rounds for the simplex solvers, lower-bounded solves
    /// for the first box algorithm, bisection steps or ordered cases for
    /// the last two.
    pub iterations: usize,
    /// Water level after every solve of the outer loop, in order.
    pub water_level_trace: Vec<f64>,
    #[serde(deserialize_with = "null_as_neg_infinity")]
    pub objective_value: f64,
    pub status: Status,
}

impl Allocation {
    pub fn total_power(&self) -> f64 {
        self.powers.iter().sum()
    }
}

// JSON has no infinities; serializers write them as `null`.
fn null_as_infinity<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

fn null_as_neg_infinity<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
}

/// One line of an optimality-condition report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Residual {
    pub name: String,
    /// Infinite when the allocation leaves the domain; JSON writes it as `null`.
    #[serde(deserialize_with = "null_as_infinity")]
    pub value: f64,
    pub tolerance: f64,
    pub applicable: bool,
    pub passed: bool,
    /// Channel (or group) contributing the largest violation.
    pub worst: Option<usize>,
}

impl Residual {
    pub fn new(name: &str, value: f64, tolerance: f64, worst: Option<usize>) -> Self {
        Self {
            name: name.to_string(),
            value,
            tolerance,
            applicable: true,
            passed: value <= tolerance,
            worst,
        }
    }

    pub fn not_applicable(name: &str, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            value: 0.0,
            tolerance,
            applicable: false,
            passed: true,
            worst: None,
        }
    }
}

/// Residuals of the optimality conditions of one problem class, plus the
/// multiplier (water level) estimates they were measured against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KktReport {
    pub residuals: Vec<Residual>,
    pub water_levels: Vec<Option<f64>>,
    pub passed: bool,
}

impl KktReport {
    pub fn new(residuals: Vec<Residual>, water_levels: Vec<Option<f64>>) -> Self {
        let passed = residuals.iter().all(|r| r.passed);
        Self {
            residuals,
            water_levels,
            passed,
        }
    }

    pub fn get(&self, name: &str) -> Option<&Residual> {
        self.residuals.iter().find(|r| r.name == name)
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals
            .iter()
            .filter(|r| r.applicable)
            .map(|r| r.value)
            .fold(0.0, f64::max)
    }
}

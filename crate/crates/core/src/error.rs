use thiserror::Error;

use crate::objective::Family;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{family} objective evaluated outside its domain at {value}")]
    Domain { family: Family, value: f64 },

    #[error("invalid {family} parameters: {reason}")]
    InvalidParameter { family: Family, reason: String },

    #[error("numeric inversion of the {family} rate failed for mu = {mu}: no bracket below 2^60")]
    InversionFailure { family: Family, mu: f64 },

    #[error("water-level search found no bracket (budget {budget})")]
    BracketFailure { budget: f64 },

    #[error("lower bounds sum to {lower_sum}, exceeding the budget {budget}")]
    InfeasibleBudget { lower_sum: f64, budget: f64 },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("instance has {size} variables, oracle limit is {limit}")]
    SizeLimit { size: usize, limit: usize },

    #[error("common utility target cannot be bracketed: {0}")]
    InfeasibleTarget(String),
}

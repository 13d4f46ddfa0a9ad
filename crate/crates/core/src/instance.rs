//! The JSON instance schema shared by the command line and the scenario
//! generator.
//!
//! One flat record covers every class; `problem_class` decides which fields
//! are required. Upper bounds are written as `null` when infinite.

use serde::{Deserialize, Serialize};

use crate::boxed::BoxProblem;
use crate::error::{Error, Result};
use crate::fair::{FairMode, FairProblem, Group};
use crate::nested::AscendingProblem;
use crate::objective::SubchannelObjective;
use crate::problem::{Problem, ProblemClass};
use crate::simplex::SimplexProblem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupRecord {
    pub objectives: Vec<SubchannelObjective>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemInstance {
    pub problem_class: ProblemClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefix_budgets: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objectives: Option<Vec<SubchannelObjective>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<GroupRecord>>,
    /// Free-form provenance, e.g. how a generated instance was scaled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

fn upper_to_json(upper: &[f64]) -> Vec<Option<f64>> {
    upper.iter().map(|&t| t.is_finite().then_some(t)).collect()
}

fn upper_from_json(upper: &[Option<f64>]) -> Vec<f64> {
    upper.iter().map(|t| t.unwrap_or(f64::INFINITY)).collect()
}

impl ProblemInstance {
    fn empty(problem_class: ProblemClass) -> Self {
        Self {
            problem_class,
            budget: None,
            prefix_budgets: None,
            objectives: None,
            lower: None,
            upper: None,
            groups: None,
            notes: None,
        }
    }

    pub fn with_notes(mut self, notes: impl Into<String>) -> Self {
        self.notes = Some(notes.into());
        self
    }

    /// Builds the validated problem, naming the first missing or stray field.
    pub fn to_problem(&self) -> Result<Problem> {
        let class = self.problem_class;
        let need = |present: bool, field: &str| -> Result<()> {
            if present {
                Ok(())
            } else {
                Err(Error::InvalidProblem(format!("{} instances need `{field}`", class.name())))
            }
        };
        let forbid = |present: bool, field: &str| -> Result<()> {
            if present {
                Err(Error::InvalidProblem(format!("`{field}` does not apply to {} instances", class.name())))
            } else {
                Ok(())
            }
        };
        let objectives = || self.objectives.clone().unwrap_or_default();
        let budget = self.budget.unwrap_or(f64::NAN);
        match class {
            ProblemClass::P1 | ProblemClass::P1Lower | ProblemClass::Box | ProblemClass::Ascending => {
                need(self.objectives.is_some(), "objectives")?;
                forbid(self.groups.is_some(), "groups")?;
            }
            _ => {
                need(self.groups.is_some(), "groups")?;
                forbid(self.objectives.is_some(), "objectives")?;
                forbid(self.lower.is_some(), "lower")?;
                forbid(self.upper.is_some(), "upper")?;
            }
        }
        if class == ProblemClass::Ascending {
            need(self.prefix_budgets.is_some(), "prefix_budgets")?;
            forbid(self.budget.is_some(), "budget")?;
        } else {
            need(self.budget.is_some(), "budget")?;
            forbid(self.prefix_budgets.is_some(), "prefix_budgets")?;
        }
        let k = self.objectives.as_ref().map_or(0, Vec::len);
        let lower = || self.lower.clone().unwrap_or_else(|| vec![0.0; k]);
        let upper = || {
            self.upper
                .as_deref()
                .map(upper_from_json)
                .unwrap_or_else(|| vec![f64::INFINITY; k])
        };
        Ok(match class {
            ProblemClass::P1 => {
                forbid(self.lower.is_some(), "lower")?;
                forbid(self.upper.is_some(), "upper")?;
                Problem::Simplex(SimplexProblem::new(objectives(), budget)?)
            }
            ProblemClass::P1Lower => {
                need(self.lower.is_some(), "lower")?;
                forbid(self.upper.is_some(), "upper")?;
                Problem::Simplex(SimplexProblem::with_lower_bounds(objectives(), budget, lower())?)
            }
            ProblemClass::Box => Problem::Box(BoxProblem::new(objectives(), budget, lower(), upper())?),
            ProblemClass::Ascending => Problem::Ascending(AscendingProblem::new(
                objectives(),
                self.prefix_budgets.clone().unwrap_or_default(),
                lower(),
                upper(),
            )?),
            ProblemClass::Maxmin | ProblemClass::Cluster | ProblemClass::ClusterMaxmin => {
                let mode = match class {
                    ProblemClass::Maxmin => FairMode::MaxMin,
                    ProblemClass::Cluster => FairMode::Cluster,
                    _ => FairMode::ClusterMaxMin,
                };
                let groups = self
                    .groups
                    .iter()
                    .flatten()
                    .map(|g| {
                        let k = g.objectives.len();
                        Group::boxed(
                            g.objectives.clone(),
                            g.lower.clone().unwrap_or_else(|| vec![0.0; k]),
                            g.upper
                                .as_deref()
                                .map(upper_from_json)
                                .unwrap_or_else(|| vec![f64::INFINITY; k]),
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                Problem::Fair(FairProblem::new(mode, groups, budget)?)
            }
        })
    }

    /// The instance record of a problem. Default bounds are left out.
    pub fn from_problem(problem: &Problem) -> Self {
        let mut out = Self::empty(problem.class());
        let nonzero = |v: &[f64]| v.iter().any(|x| *x != 0.0).then(|| v.to_vec());
        let finite = |v: &[f64]| v.iter().any(|x| x.is_finite()).then(|| upper_to_json(v));
        match problem {
            Problem::Simplex(p) => {
                out.budget = Some(p.budget());
                out.objectives = Some(p.objectives().to_vec());
                if out.problem_class == ProblemClass::P1Lower {
                    out.lower = Some(p.lower_bounds().to_vec());
                }
            }
            Problem::Box(p) => {
                out.budget = Some(p.budget());
                out.objectives = Some(p.objectives().to_vec());
                out.lower = Some(p.lower().to_vec());
                out.upper = Some(upper_to_json(p.upper()));
            }
            Problem::Ascending(p) => {
                out.prefix_budgets = Some(p.prefix_budgets().to_vec());
                out.objectives = Some(p.objectives().to_vec());
                out.lower = nonzero(p.lower());
                out.upper = finite(p.upper());
            }
            Problem::Fair(p) => {
                out.budget = Some(p.budget());
                out.groups = Some(
                    p.groups()
                        .iter()
                        .map(|g| GroupRecord {
                            objectives: g.objectives.clone(),
                            lower: nonzero(&g.lower),
                            upper: finite(&g.upper),
                        })
                        .collect(),
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_record_round_trips() {
        let json = r#"{
            "problem_class": "box",
            "budget": 6,
            "objectives": [
                {"family": "log_capacity", "w": 1, "a": 1, "b": 1},
                {"family": "log_capacity", "w": 1, "a": 1, "b": 1},
                {"family": "log_capacity", "w": 1, "a": 1, "b": 1}
            ],
            "lower": [0, 0, 0],
            "upper": [1, 3, null]
        }"#;
        let inst: ProblemInstance = serde_json::from_str(json).unwrap();
        let problem = inst.to_problem().unwrap();
        let Problem::Box(b) = &problem else { panic!() };
        assert_eq!(b.upper()[2], f64::INFINITY);
        let again = ProblemInstance::from_problem(&problem);
        assert_eq!(again, inst);
        let text = serde_json::to_string(&again).unwrap();
        assert_eq!(serde_json::from_str::<ProblemInstance>(&text).unwrap(), inst);
    }

    #[test]
    fn fields_are_checked_per_class() {
        let json = r#"{"problem_class": "p1", "budget": 1, "groups": []}"#;
        let inst: ProblemInstance = serde_json::from_str(json).unwrap();
        let err = inst.to_problem().unwrap_err().to_string();
        assert!(err.contains("objectives"), "{err}");
        let stray = r#"{"problem_class": "p1", "budget": 1, "objectives": [], "extra": 0}"#;
        assert!(serde_json::from_str::<ProblemInstance>(stray).is_err());
    }

    #[test]
    fn groups_round_trip() {
        let o = SubchannelObjective::inverse_mse(1.0, 2.0, 1.0).unwrap();
        let p = Problem::Fair(FairProblem::maxmin(vec![vec![o.clone()], vec![o.clone(), o]], 2.0).unwrap());
        let inst = ProblemInstance::from_problem(&p);
        assert_eq!(inst.to_problem().unwrap(), p);
    }
}

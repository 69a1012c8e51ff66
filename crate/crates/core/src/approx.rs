//! Analytic probability-of-satisfaction evaluators.
//!
//! * [`Semantics::NaiveCi`] works in probability space: negation is `1 - p`,
//!   conjunction multiplies, disjunction is `1 - prod(1 - p_i)`.
//! * [`Semantics::LogOddsCi`] works in log-odds: disjunction is
//!   `log(prod(1 + e^L_i) - 1)` (equal to the power-set sum over all
//!   non-empty subsets), conjunction is its De Morgan dual.
//! * [`Semantics::LogOddsMe`] replaces that disjunction with log-sum-exp,
//!   dropping joint-satisfaction terms, so it never exceeds the CI value.
//!
//! All operands of a connective are treated as independent, including
//! repeated occurrences of the same `(predicate, step)` leaf.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Scalar;
use crate::dynamics::Trajectory;
use crate::fields::{EventField, PredicateTable, PROB_EPS};
use crate::formula::{GroundedFormula, Plan, PlanNode, UnknownPredicate};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("leaf step {step} outside trajectory of length {len}")]
    Step { step: usize, len: usize },
    #[error("probability {0} outside [{PROB_EPS}, 1 - {PROB_EPS}]")]
    Probability(f64),
    #[error("empty list")]
    Empty,
    #[error("power-set enumeration limited to 20 elements (got {0})")]
    TooLong(usize),
}

impl From<UnknownPredicate> for EvalError {
    fn from(e: UnknownPredicate) -> Self {
        EvalError::UnknownPredicate(e.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Semantics {
    #[serde(rename = "naive-ci")]
    NaiveCi,
    #[serde(rename = "ci")]
    LogOddsCi,
    #[serde(rename = "me")]
    LogOddsMe,
}

impl Semantics {
    pub const ALL: [Semantics; 3] = [Semantics::NaiveCi, Semantics::LogOddsCi, Semantics::LogOddsMe];

    pub fn as_str(&self) -> &'static str {
        match self {
            Semantics::NaiveCi => "naive-ci",
            Semantics::LogOddsCi => "ci",
            Semantics::LogOddsMe => "me",
        }
    }

    pub fn is_log_odds(&self) -> bool {
        !matches!(self, Semantics::NaiveCi)
    }
}

impl fmt::Display for Semantics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Semantics {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive-ci" | "naive" => Ok(Semantics::NaiveCi),
            "ci" => Ok(Semantics::LogOddsCi),
            "me" => Ok(Semantics::LogOddsMe),
            other => Err(format!("unknown semantics `{other}` (expected naive-ci, ci, me)")),
        }
    }
}

/// Log-odds `log(p / (1 - p))` of a probability.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LogOdds(pub f64);

impl LogOdds {
    pub fn prob(self) -> f64 {
        prob_of(self)
    }
}

pub fn logodds_of(p: f64) -> Result<LogOdds, EvalError> {
    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        return Err(EvalError::Probability(p));
    }
    Ok(LogOdds(Scalar::logit(p)))
}

pub fn prob_of(l: LogOdds) -> f64 {
    Scalar::sigmoid(l.0)
}

/// Max-shifted log-sum-exp.
pub fn lse(values: &[f64]) -> Result<f64, EvalError> {
    if values.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(Scalar::lse(values))
}

/// CI disjunction `log(prod(1 + e^L_i) - 1)`, accumulated as a sum of
/// softplus terms so the product never underflows or overflows.
pub fn ci_or_logodds<S: Scalar>(ls: &[S]) -> S {
    debug_assert!(!ls.is_empty());
    if ls.len() == 1 {
        return ls[0];
    }
    let terms: Vec<S> = ls.iter().map(|l| l.softplus()).collect();
    S::sum(&terms).ln_expm1()
}

pub fn ci_and_logodds<S: Scalar>(ls: &[S]) -> S {
    if ls.len() == 1 {
        return ls[0];
    }
    let neg: Vec<S> = ls.iter().map(|&l| -l).collect();
    -ci_or_logodds(&neg)
}

pub fn me_or_logodds<S: Scalar>(ls: &[S]) -> S {
    S::lse(ls)
}

pub fn me_and_logodds<S: Scalar>(ls: &[S]) -> S {
    if ls.len() == 1 {
        return ls[0];
    }
    let neg: Vec<S> = ls.iter().map(|&l| -l).collect();
    -S::lse(&neg)
}

/// Power-set form of the CI disjunction: `log sum_{J non-empty} exp(sum_{j in J} L_j)`.
/// Exponential in the list length; meant as a reference.
pub fn brute_force_or_logodds(ls: &[f64]) -> Result<f64, EvalError> {
    if ls.is_empty() {
        return Err(EvalError::Empty);
    }
    if ls.len() > 20 {
        return Err(EvalError::TooLong(ls.len()));
    }
    let n = ls.len();
    let sums: Vec<f64> = (1u32..(1 << n))
        .map(|mask| {
            (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| ls[i])
                .sum()
        })
        .collect();
    lse(&sums)
}

/// Fold a compiled plan given one value per distinct leaf (a probability for
/// `NaiveCi`, a log-odds otherwise).
pub fn evaluate_plan<S: Scalar>(plan: &Plan, leaf_values: &[S], sem: Semantics) -> S {
    let mut vals: Vec<S> = Vec::with_capacity(plan.nodes.len());
    let mut buf: Vec<S> = Vec::new();
    for node in &plan.nodes {
        let v = match *node {
            PlanNode::Leaf(i) => leaf_values[i as usize],
            PlanNode::Not(c) => {
                let x = vals[c as usize];
                match sem {
                    Semantics::NaiveCi => -x + 1.0,
                    _ => -x,
                }
            }
            PlanNode::And { start, len } | PlanNode::Or { start, len } => {
                buf.clear();
                buf.extend(plan.child_ids(start, len).iter().map(|&c| vals[c as usize]));
                let is_and = matches!(node, PlanNode::And { .. });
                match (sem, is_and) {
                    (Semantics::NaiveCi, true) => S::product(&buf),
                    (Semantics::NaiveCi, false) => {
                        let comp: Vec<S> = buf.iter().map(|&p| -p + 1.0).collect();
                        -S::product(&comp) + 1.0
                    }
                    (Semantics::LogOddsCi, false) => ci_or_logodds(&buf),
                    (Semantics::LogOddsCi, true) => ci_and_logodds(&buf),
                    (Semantics::LogOddsMe, false) => me_or_logodds(&buf),
                    (Semantics::LogOddsMe, true) => me_and_logodds(&buf),
                }
            }
        };
        vals.push(v);
    }
    vals[plan.root()]
}

/// Per-leaf field values along `traj`: probabilities for `NaiveCi`,
/// log-odds otherwise.
pub fn leaf_values<S: Scalar>(
    plan: &Plan,
    traj: &Trajectory<S>,
    table: &PredicateTable,
    sem: Semantics,
) -> Result<Vec<S>, EvalError> {
    plan.leaves
        .iter()
        .map(|&(p, step)| {
            if step < 1 || step > traj.len() {
                return Err(EvalError::Step {
                    step,
                    len: traj.len(),
                });
            }
            let field = table.field(p);
            let pos = traj.position(step);
            Ok(if sem.is_log_odds() {
                field.logodds(pos, step)
            } else {
                field.prob(pos, step)
            })
        })
        .collect()
}

pub fn compile(g: &GroundedFormula, table: &PredicateTable) -> Result<Plan, EvalError> {
    Ok(Plan::compile(g, |n| table.index_of(n))?)
}

/// Evaluate a grounded formula along a trajectory. Returns a probability for
/// `NaiveCi` and a log-odds value otherwise.
pub fn evaluate<S: Scalar>(
    g: &GroundedFormula,
    traj: &Trajectory<S>,
    table: &PredicateTable,
    sem: Semantics,
) -> Result<S, EvalError> {
    let plan = compile(g, table)?;
    let leaves = leaf_values(&plan, traj, table, sem)?;
    Ok(evaluate_plan(&plan, &leaves, sem))
}

/// [`evaluate`] mapped to a probability for every semantics.
pub fn probability(
    g: &GroundedFormula,
    traj: &Trajectory,
    table: &PredicateTable,
    sem: Semantics,
) -> Result<f64, EvalError> {
    let v = evaluate(g, traj, table, sem)?;
    Ok(if sem.is_log_odds() {
        prob_of(LogOdds(v))
    } else {
        v
    })
}

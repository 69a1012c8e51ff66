//! Monte-Carlo estimate of the probability of satisfaction.
//!
//! Each distinct `(predicate, step)` leaf is sampled once per draw, so
//! repeated occurrences of a leaf within a formula see the same outcome.
//! Draw `d` of leaf `(name, step)` uses the uniform keyed by
//! `(seed, name, step, d)`; estimates therefore do not depend on how draws
//! are split across threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::{compile, EvalError};
use crate::dynamics::Trajectory;
use crate::fields::{EventField, PredicateTable};
use crate::formula::{GroundedFormula, Plan, PlanNode};
use crate::rng::{name_key, uniform};

const CHUNK: u64 = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n_samples: u64,
}

impl McEstimate {
    pub fn from_count(hits: u64, n: u64) -> Self {
        let mean = hits as f64 / n as f64;
        McEstimate {
            mean,
            std_err: (mean * (1.0 - mean) / n as f64).sqrt(),
            n_samples: n,
        }
    }
}

/// A compiled formula with leaf probabilities fixed along one trajectory.
#[derive(Debug, Clone)]
pub struct LeafSampler<'a> {
    plan: &'a Plan,
    probs: Vec<f64>,
    keys: Vec<(u64, u64)>,
}

impl<'a> LeafSampler<'a> {
    pub fn new(
        plan: &'a Plan,
        traj: &Trajectory,
        table: &PredicateTable,
    ) -> Result<Self, EvalError> {
        let mut probs = Vec::with_capacity(plan.leaves.len());
        let mut keys = Vec::with_capacity(plan.leaves.len());
        for &(p, step) in &plan.leaves {
            if step < 1 || step > traj.len() {
                return Err(EvalError::Step {
                    step,
                    len: traj.len(),
                });
            }
            probs.push(table.field(p).prob(traj.position(step), step));
            keys.push((name_key(table.name(p)), step as u64));
        }
        Ok(LeafSampler { plan, probs, keys })
    }

    pub fn leaf_probs(&self) -> &[f64] {
        &self.probs
    }

    /// Boolean satisfaction of draw `draw`. `leaf_buf` and `node_buf` are
    /// scratch space reused across calls.
    pub fn draw(
        &self,
        seed: u64,
        draw: u64,
        leaf_buf: &mut Vec<bool>,
        node_buf: &mut Vec<bool>,
    ) -> bool {
        leaf_buf.clear();
        leaf_buf.extend(
            self.keys
                .iter()
                .zip(&self.probs)
                .map(|(&(name, step), &p)| uniform(&[seed, name, step, draw]) < p),
        );
        node_buf.clear();
        for node in &self.plan.nodes {
            let v = match *node {
                PlanNode::Leaf(i) => leaf_buf[i as usize],
                PlanNode::Not(c) => !node_buf[c as usize],
                PlanNode::And { start, len } => self
                    .plan
                    .child_ids(start, len)
                    .iter()
                    .all(|&c| node_buf[c as usize]),
                PlanNode::Or { start, len } => self
                    .plan
                    .child_ids(start, len)
                    .iter()
                    .any(|&c| node_buf[c as usize]),
            };
            node_buf.push(v);
        }
        node_buf[self.plan.root()]
    }

    pub fn estimate(&self, n: u64, seed: u64) -> McEstimate {
        assert!(n >= 1, "Monte-Carlo needs at least one draw");
        let chunks = n.div_ceil(CHUNK);
        let hits: u64 = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut leaf_buf = Vec::new();
                let mut node_buf = Vec::new();
                (c * CHUNK..((c + 1) * CHUNK).min(n))
                    .filter(|&d| self.draw(seed, d, &mut leaf_buf, &mut node_buf))
                    .count() as u64
            })
            .sum();
        McEstimate::from_count(hits, n)
    }
}

pub fn mc_satisfaction(
    g: &GroundedFormula,
    traj: &Trajectory,
    table: &PredicateTable,
    n: u64,
    seed: u64,
) -> Result<McEstimate, EvalError> {
    if n == 0 {
        return Err(EvalError::Empty);
    }
    let plan = compile(g, table)?;
    Ok(LeafSampler::new(&plan, traj, table)?.estimate(n, seed))
}

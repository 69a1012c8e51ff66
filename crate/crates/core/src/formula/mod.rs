//! Formula syntax tree, text form, and grounding over a discrete horizon.
//!
//! Steps are 1-indexed. Interval bounds are step offsets relative to the
//! anchor step at which an operator is evaluated.

mod parser;

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

pub use parser::{parse, ParseError};

/// Closed step-offset window `[lo, hi]`, `lo <= hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Interval {
    pub lo: u32,
    pub hi: u32,
}

impl Interval {
    pub fn new(lo: u32, hi: u32) -> Option<Self> {
        (lo <= hi).then_some(Interval { lo, hi })
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.lo, self.hi)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Formula {
    Pred(String),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Until {
        interval: Interval,
        left: Box<Formula>,
        right: Box<Formula>,
    },
    Eventually {
        interval: Interval,
        body: Box<Formula>,
    },
    Globally {
        interval: Interval,
        body: Box<Formula>,
    },
}

impl Formula {
    /// Predicate names in first-occurrence order, without duplicates.
    pub fn predicates(&self) -> Vec<&str> {
        fn walk<'a>(f: &'a Formula, out: &mut Vec<&'a str>) {
            match f {
                Formula::Pred(p) => {
                    if !out.contains(&p.as_str()) {
                        out.push(p);
                    }
                }
                Formula::Not(x) => walk(x, out),
                Formula::And(xs) | Formula::Or(xs) => xs.iter().for_each(|x| walk(x, out)),
                Formula::Until { left, right, .. } => {
                    walk(left, out);
                    walk(right, out);
                }
                Formula::Eventually { body, .. } | Formula::Globally { body, .. } => walk(body, out),
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }
}

/// Fully parenthesized text form; `parse(&pretty(f))` reproduces `f`.
pub fn pretty(f: &Formula) -> String {
    f.to_string()
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |f: &mut fmt::Formatter<'_>, xs: &[Formula], sep: &str| {
            f.write_str("(")?;
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    f.write_str(sep)?;
                }
                write!(f, "{x}")?;
            }
            f.write_str(")")
        };
        match self {
            Formula::Pred(p) => f.write_str(p),
            Formula::Not(x) => write!(f, "(!{x})"),
            Formula::And(xs) => join(f, xs, " & "),
            Formula::Or(xs) => join(f, xs, " | "),
            Formula::Until {
                interval,
                left,
                right,
            } => write!(f, "({left} U{interval} {right})"),
            Formula::Eventually { interval, body } => write!(f, "(F{interval} {body})"),
            Formula::Globally { interval, body } => write!(f, "(G{interval} {body})"),
        }
    }
}

/// Temporal operators expanded into connectives over `(predicate, step)`
/// leaves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GroundedFormula {
    Leaf { pred: String, step: usize },
    Not(Box<GroundedFormula>),
    And(Vec<GroundedFormula>),
    Or(Vec<GroundedFormula>),
}

impl GroundedFormula {
    pub fn leaf(pred: &str, step: usize) -> Self {
        GroundedFormula::Leaf {
            pred: pred.to_string(),
            step,
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            GroundedFormula::Leaf { .. } => 1,
            GroundedFormula::Not(x) => x.leaf_count(),
            GroundedFormula::And(xs) | GroundedFormula::Or(xs) => {
                xs.iter().map(|x| x.leaf_count()).sum()
            }
        }
    }

    pub fn max_step(&self) -> usize {
        match self {
            GroundedFormula::Leaf { step, .. } => *step,
            GroundedFormula::Not(x) => x.max_step(),
            GroundedFormula::And(xs) | GroundedFormula::Or(xs) => {
                xs.iter().map(|x| x.max_step()).max().unwrap_or(0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroundError {
    #[error("anchor step {anchor} outside horizon 1..={horizon}")]
    Anchor { anchor: usize, horizon: usize },
    #[error("`{op}` at step {anchor}: window {first}..={last} extends beyond horizon {horizon}")]
    BeyondHorizon {
        op: String,
        anchor: usize,
        first: usize,
        last: usize,
        horizon: usize,
    },
}

/// Result of [`ground`]: the expanded tree plus any clipping warnings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grounding {
    pub formula: GroundedFormula,
    /// One message per `F`/`G` window that was clipped at the horizon.
    pub warnings: Vec<String>,
}

impl Grounding {
    pub fn clipped(&self) -> bool {
        !self.warnings.is_empty()
    }
}

fn collapse(mut xs: Vec<GroundedFormula>, and: bool) -> GroundedFormula {
    if xs.len() == 1 {
        xs.pop().unwrap()
    } else if and {
        GroundedFormula::And(xs)
    } else {
        GroundedFormula::Or(xs)
    }
}

/// Expand `f` at anchor step `anchor` against horizon `horizon`.
///
/// `F` and `G` windows are clipped at the horizon and reported in
/// [`Grounding::warnings`]. An `U` window past the horizon is an error.
pub fn ground(f: &Formula, anchor: usize, horizon: usize) -> Result<Grounding, GroundError> {
    if anchor < 1 || anchor > horizon {
        return Err(GroundError::Anchor { anchor, horizon });
    }
    let mut warnings = Vec::new();
    let formula = ground_at(f, anchor, horizon, &mut warnings)?;
    Ok(Grounding { formula, warnings })
}

fn ground_at(
    f: &Formula,
    t: usize,
    horizon: usize,
    warnings: &mut Vec<String>,
) -> Result<GroundedFormula, GroundError> {
    Ok(match f {
        Formula::Pred(p) => GroundedFormula::leaf(p, t),
        Formula::Not(x) => GroundedFormula::Not(Box::new(ground_at(x, t, horizon, warnings)?)),
        Formula::And(xs) => GroundedFormula::And(
            xs.iter()
                .map(|x| ground_at(x, t, horizon, warnings))
                .collect::<Result<_, _>>()?,
        ),
        Formula::Or(xs) => GroundedFormula::Or(
            xs.iter()
                .map(|x| ground_at(x, t, horizon, warnings))
                .collect::<Result<_, _>>()?,
        ),
        Formula::Eventually { interval, body } | Formula::Globally { interval, body } => {
            let is_globally = matches!(f, Formula::Globally { .. });
            let op = if is_globally { "G" } else { "F" };
            let first = t + interval.lo as usize;
            let last = t + interval.hi as usize;
            if first > horizon {
                return Err(GroundError::BeyondHorizon {
                    op: format!("{op}{interval}"),
                    anchor: t,
                    first,
                    last,
                    horizon,
                });
            }
            if last > horizon {
                warnings.push(format!(
                    "{op}{interval} at step {t}: window {first}..={last} clipped to {first}..={horizon}"
                ));
            }
            let items = (first..=last.min(horizon))
                .map(|tau| ground_at(body, tau, horizon, warnings))
                .collect::<Result<Vec<_>, _>>()?;
            collapse(items, is_globally)
        }
        Formula::Until {
            interval,
            left,
            right,
        } => {
            let first = t + interval.lo as usize;
            let last = t + interval.hi as usize;
            if last > horizon {
                return Err(GroundError::BeyondHorizon {
                    op: format!("U{interval}"),
                    anchor: t,
                    first,
                    last,
                    horizon,
                });
            }
            let lefts = (t..last)
                .map(|tau| ground_at(left, tau, horizon, warnings))
                .collect::<Result<Vec<_>, _>>()?;
            let mut disjuncts = Vec::with_capacity(last - first + 1);
            for tau in first..=last {
                let mut conj = vec![ground_at(right, tau, horizon, warnings)?];
                conj.extend(lefts[..tau - t].iter().cloned());
                disjuncts.push(collapse(conj, true));
            }
            collapse(disjuncts, false)
        }
    })
}

/// Node of a [`Plan`]. Children always precede their parent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanNode {
    Leaf(u32),
    Not(u32),
    And { start: u32, len: u32 },
    Or { start: u32, len: u32 },
}

/// A grounded formula flattened into a post-order arena with distinct
/// `(predicate, step)` leaves interned.
///
/// Evaluators fold over `nodes` in order; the last node is the root.
#[derive(Debug, Clone)]
pub struct Plan {
    pub nodes: Vec<PlanNode>,
    pub children: Vec<u32>,
    /// Distinct leaves as `(predicate index, step)`.
    pub leaves: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown predicate `{0}`")]
pub struct UnknownPredicate(pub String);

impl Plan {
    /// `lookup` resolves a predicate name to its index in the caller's table.
    pub fn compile(
        g: &GroundedFormula,
        lookup: impl Fn(&str) -> Option<usize>,
    ) -> Result<Self, UnknownPredicate> {
        let mut plan = Plan {
            nodes: Vec::new(),
            children: Vec::new(),
            leaves: Vec::new(),
        };
        let mut interned: HashMap<(usize, usize), u32> = HashMap::new();
        plan.emit(g, &lookup, &mut interned)?;
        Ok(plan)
    }

    fn emit(
        &mut self,
        g: &GroundedFormula,
        lookup: &impl Fn(&str) -> Option<usize>,
        interned: &mut HashMap<(usize, usize), u32>,
    ) -> Result<u32, UnknownPredicate> {
        let node = match g {
            GroundedFormula::Leaf { pred, step } => {
                let p = lookup(pred).ok_or_else(|| UnknownPredicate(pred.clone()))?;
                let next = self.leaves.len() as u32;
                let id = *interned.entry((p, *step)).or_insert(next);
                if id == next {
                    self.leaves.push((p, *step));
                }
                PlanNode::Leaf(id)
            }
            GroundedFormula::Not(x) => PlanNode::Not(self.emit(x, lookup, interned)?),
            GroundedFormula::And(xs) | GroundedFormula::Or(xs) => {
                let ids = xs
                    .iter()
                    .map(|x| self.emit(x, lookup, interned))
                    .collect::<Result<Vec<_>, _>>()?;
                let start = self.children.len() as u32;
                self.children.extend(ids);
                let len = xs.len() as u32;
                if matches!(g, GroundedFormula::And(_)) {
                    PlanNode::And { start, len }
                } else {
                    PlanNode::Or { start, len }
                }
            }
        };
        self.nodes.push(node);
        Ok(self.nodes.len() as u32 - 1)
    }

    pub fn root(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn child_ids(&self, start: u32, len: u32) -> &[u32] {
        &self.children[start as usize..(start + len) as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn leaf(p: &str, s: usize) -> GroundedFormula {
        GroundedFormula::leaf(p, s)
    }

    fn pred(p: &str) -> Box<Formula> {
        Box::new(Formula::Pred(p.into()))
    }

    #[test]
    fn eventually_expands_to_disjunction() {
        let f = Formula::Eventually {
            interval: Interval { lo: 0, hi: 2 },
            body: pred("a"),
        };
        let g = ground(&f, 1, 3).unwrap();
        assert_eq!(
            g.formula,
            GroundedFormula::Or(vec![leaf("a", 1), leaf("a", 2), leaf("a", 3)])
        );
        assert!(!g.clipped());
    }

    #[test]
    fn globally_expands_to_conjunction() {
        let f = Formula::Globally {
            interval: Interval { lo: 0, hi: 1 },
            body: pred("a"),
        };
        let g = ground(&f, 1, 5).unwrap();
        assert_eq!(g.formula, GroundedFormula::And(vec![leaf("a", 1), leaf("a", 2)]));
    }

    #[test]
    fn until_expands_to_standard_discrete_until() {
        let f = Formula::Until {
            interval: Interval { lo: 0, hi: 1 },
            left: pred("a"),
            right: pred("b"),
        };
        let g = ground(&f, 1, 5).unwrap();
        assert_eq!(
            g.formula,
            GroundedFormula::Or(vec![
                leaf("b", 1),
                GroundedFormula::And(vec![leaf("b", 2), leaf("a", 1)]),
            ])
        );
    }

    #[test]
    fn until_with_offset_window_requires_left_from_anchor() {
        let f = Formula::Until {
            interval: Interval { lo: 2, hi: 2 },
            left: pred("a"),
            right: pred("b"),
        };
        let g = ground(&f, 1, 5).unwrap();
        assert_eq!(
            g.formula,
            GroundedFormula::And(vec![leaf("b", 3), leaf("a", 1), leaf("a", 2)])
        );
    }

    #[test]
    fn eventually_clips_with_warning() {
        let f = parse("F[0,10] a").unwrap();
        let g = ground(&f, 1, 4).unwrap();
        assert_eq!(g.formula.leaf_count(), 4);
        assert_eq!(g.warnings.len(), 1);
        assert!(g.warnings[0].contains("F[0,10]"));
    }

    #[test]
    fn until_beyond_horizon_is_an_error() {
        let f = parse("a U[0,10] b").unwrap();
        match ground(&f, 1, 4) {
            Err(GroundError::BeyondHorizon { op, .. }) => assert_eq!(op, "U[0,10]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn window_starting_past_horizon_is_an_error() {
        let f = parse("G[5,6] a").unwrap();
        assert!(matches!(ground(&f, 1, 4), Err(GroundError::BeyondHorizon { .. })));
    }

    #[test]
    fn pretty_examples() {
        assert_eq!(pretty(&Formula::Pred("a".into())), "a");
        assert_eq!(
            pretty(&Formula::And(vec![Formula::Pred("a".into()), Formula::Pred("b".into())])),
            "(a & b)"
        );
        let f = parse("!(rob | bob) U[0,30] san").unwrap();
        assert_eq!(pretty(&f), "((!(rob | bob)) U[0,30] san)");
    }

    #[test]
    fn plan_interns_shared_leaves() {
        let g = GroundedFormula::Or(vec![
            leaf("a", 1),
            GroundedFormula::Not(Box::new(leaf("a", 1))),
            leaf("b", 2),
        ]);
        let names = ["a", "b"];
        let plan = Plan::compile(&g, |n| names.iter().position(|x| *x == n)).unwrap();
        assert_eq!(plan.leaves, vec![(0, 1), (1, 2)]);
        assert_eq!(plan.nodes.len(), 5);
        assert!(matches!(plan.nodes[plan.root()], PlanNode::Or { len: 3, .. }));
        let err = Plan::compile(&leaf("zz", 1), |n| names.iter().position(|x| *x == n));
        assert_eq!(err.unwrap_err(), UnknownPredicate("zz".into()));
    }

    pub(crate) fn arb_formula() -> impl Strategy<Value = Formula> {
        let name = prop::sample::select(vec!["a", "b", "tom", "jerry", "x_1", "San"]);
        let leaf = name.prop_map(|n| Formula::Pred(n.to_string()));
        let interval = (0u32..20, 0u32..20).prop_map(|(a, b)| Interval {
            lo: a.min(b),
            hi: a.max(b),
        });
        leaf.prop_recursive(6, 64, 4, move |inner| {
            prop_oneof![
                inner.clone().prop_map(|x| Formula::Not(Box::new(x))),
                prop::collection::vec(inner.clone(), 2..4).prop_map(Formula::And),
                prop::collection::vec(inner.clone(), 2..4).prop_map(Formula::Or),
                (interval.clone(), inner.clone(), inner.clone()).prop_map(|(i, l, r)| {
                    Formula::Until {
                        interval: i,
                        left: Box::new(l),
                        right: Box::new(r),
                    }
                }),
                (interval.clone(), inner.clone()).prop_map(|(i, b)| Formula::Eventually {
                    interval: i,
                    body: Box::new(b)
                }),
                (interval.clone(), inner).prop_map(|(i, b)| Formula::Globally {
                    interval: i,
                    body: Box::new(b)
                }),
            ]
        })
    }

    proptest! {
        #[test]
        fn pretty_parse_round_trip(f in arb_formula()) {
            prop_assert_eq!(parse(&pretty(&f)).unwrap(), f);
        }

        #[test]
        fn ground_is_pure(f in arb_formula()) {
            let a = ground(&f, 1, 4);
            let b = ground(&f, 1, 4);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn eventually_leaf_count(a in 0u32..30, len in 0u32..30, t in 1usize..20, horizon in 20usize..60) {
            let f = Formula::Eventually { interval: Interval { lo: a, hi: a + len }, body: pred("p") };
            let first = t + a as usize;
            match ground(&f, t, horizon) {
                Ok(g) => {
                    let expect = (t + (a + len) as usize).min(horizon) - first + 1;
                    prop_assert_eq!(g.formula.leaf_count(), expect);
                }
                Err(_) => prop_assert!(first > horizon),
            }
        }

        #[test]
        fn leaf_steps_stay_in_horizon(f in arb_formula(), horizon in 1usize..5) {
            if let Ok(g) = ground(&f, 1, horizon) {
                prop_assert!(g.formula.max_step() <= horizon);
            }
        }
    }
}

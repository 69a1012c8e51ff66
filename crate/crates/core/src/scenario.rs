//! Scenario files: a versioned JSON description of a mission.
//!
//! ```json
//! {
//!   "schema": 1,
//!   "name": "demo",
//!   "dt": 1.0,
//!   "horizon": 20,
//!   "start": { "x": 0.0, "y": 0.0, "theta": 0.0 },
//!   "formula": "F[0,19] goal",
//!   "sigma_u": 0.05,
//!   "predicates": {
//!     "goal": { "kind": "static_target", "position": [5.0, 0.0],
//!               "covariance": [[0.1, 0.0], [0.0, 0.1]], "r_d": 1.5, "p_d": 0.9 }
//!   },
//!   "prior": { "v_scale": 2.0, "sigma_v": 0.5, "sigma_omega": 0.3 }
//! }
//! ```
//!
//! Errors carry a JSON pointer to the offending value.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix2, Matrix4};
use serde::{Deserialize, Serialize};
use serde_path_to_error::Segment;
use thiserror::Error;

use crate::approx::Semantics;
use crate::dynamics::RobotState;
use crate::fields::{
    predict_belief, ConstantField, Field, FieldError, OccupancyGrid, PredicateTable, TargetBelief, TargetField,
};
use crate::formula::{parse, Formula, ParseError};
use crate::synth::{Prior, Problem, SynthConfig, SynthError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub struct ScenarioError {
    /// JSON pointer into the scenario document; empty for whole-file errors.
    pub pointer: String,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.pointer.is_empty() {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.pointer, self.message)
        }
    }
}

impl ScenarioError {
    fn at(pointer: impl Into<String>, message: impl fmt::Display) -> Self {
        ScenarioError {
            pointer: pointer.into(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSpec {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PredicateSpec {
    /// Moving target with a linear-Gaussian belief over `(position, velocity)`.
    Target {
        z0: [f64; 2],
        #[serde(default)]
        v0: [f64; 2],
        /// 4x4 initial covariance of `(px, py, vx, vy)`.
        sigma0: [[f64; 4]; 4],
        q: f64,
        r_d: f64,
        p_d: f64,
        #[serde(default = "yes")]
        peak_in_marginal: bool,
    },
    /// Target with a fixed Gaussian position belief.
    StaticTarget {
        position: [f64; 2],
        #[serde(default)]
        covariance: [[f64; 2]; 2],
        r_d: f64,
        p_d: f64,
        #[serde(default = "yes")]
        peak_in_marginal: bool,
    },
    /// Occupancy grid CSV, relative to the scenario file.
    Occupancy { grid: PathBuf },
    Constant { p: f64 },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    /// Nominal speed; the speed prior mean defaults to half of it.
    #[serde(default = "one")]
    pub v_scale: f64,
    pub v_mean: Option<f64>,
    #[serde(default)]
    pub omega_mean: f64,
    pub sigma_v: f64,
    pub sigma_omega: f64,
}

fn one() -> f64 {
    1.0
}

impl PriorSpec {
    pub fn prior(&self) -> Prior {
        Prior {
            v_mean: self.v_mean.unwrap_or(0.5 * self.v_scale),
            omega_mean: self.omega_mean,
            sigma_v: self.sigma_v,
            sigma_omega: self.sigma_omega,
        }
    }
}

/// Optional synthesis defaults; command-line flags override them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub ns: Option<usize>,
    pub nu: Option<usize>,
    pub iters: Option<usize>,
    pub step_size: Option<f64>,
    pub prior_weight: Option<f64>,
    pub semantics: Option<Semantics>,
    pub mc_samples: Option<u64>,
    pub fixed_noise: Option<bool>,
}

/// The scenario document as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub schema: u32,
    pub name: String,
    #[serde(default = "one")]
    pub dt: f64,
    pub horizon: usize,
    pub start: StartSpec,
    pub formula: String,
    #[serde(default)]
    pub sigma_u: f64,
    pub predicates: BTreeMap<String, PredicateSpec>,
    pub prior: PriorSpec,
    #[serde(default)]
    pub synth: SynthSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub description: String,
}

/// A validated scenario with every cross-reference resolved.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub formula: Formula,
    pub table: PredicateTable,
    /// Directory that relative paths resolve against.
    pub base_dir: PathBuf,
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    let mut s = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => s.push_str(&format!("/{index}")),
            Segment::Map { key } => s.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => s.push_str(&format!("/{variant}")),
            Segment::Unknown => s.push_str("/?"),
        }
    }
    s
}

fn field_err(pointer: &str, e: FieldError) -> ScenarioError {
    ScenarioError::at(pointer, e)
}

fn positive(pointer: &str, v: f64) -> Result<(), ScenarioError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ScenarioError::at(pointer, format!("must be positive and finite (got {v})")))
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::at("", format!("reading {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json_str(&text, &base)
    }

    pub fn from_json_str(text: &str, base_dir: &Path) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let spec: ScenarioSpec = serde_path_to_error::deserialize(de)
            .map_err(|e| ScenarioError::at(pointer_of(e.path()), e.inner()))?;
        Self::from_spec(spec, base_dir)
    }

    pub fn from_spec(spec: ScenarioSpec, base_dir: &Path) -> Result<Self, ScenarioError> {
        if spec.schema != SCHEMA_VERSION {
            return Err(ScenarioError::at(
                "/schema",
                format!("unsupported schema version {} (expected {SCHEMA_VERSION})", spec.schema),
            ));
        }
        positive("/dt", spec.dt)?;
        if spec.horizon == 0 {
            return Err(ScenarioError::at("/horizon", "must be >= 1"));
        }
        if !(spec.sigma_u >= 0.0 && spec.sigma_u.is_finite()) {
            return Err(ScenarioError::at("/sigma_u", "must be >= 0"));
        }
        let s = &spec.start;
        if !(s.x.is_finite() && s.y.is_finite() && s.theta.is_finite()) {
            return Err(ScenarioError::at("/start", "must be finite"));
        }
        positive("/prior/sigma_v", spec.prior.sigma_v)?;
        positive("/prior/sigma_omega", spec.prior.sigma_omega)?;

        let formula = parse(&spec.formula).map_err(|e: ParseError| ScenarioError::at("/formula", e))?;
        for name in formula.predicates() {
            if !spec.predicates.contains_key(name) {
                return Err(ScenarioError::at(
                    "/formula",
                    format!("predicate `{name}` is not declared under /predicates"),
                ));
            }
        }

        let mut table = PredicateTable::new();
        for (name, p) in &spec.predicates {
            let ptr = format!("/predicates/{name}");
            let field = build_field(p, &ptr, spec.horizon, spec.dt, base_dir)?;
            table.insert(name.clone(), field);
        }
        Ok(Scenario {
            spec,
            formula,
            table,
            base_dir: base_dir.to_path_buf(),
        })
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn horizon(&self) -> usize {
        self.spec.horizon
    }

    pub fn start(&self) -> RobotState {
        RobotState::new(self.spec.start.x, self.spec.start.y, self.spec.start.theta)
    }

    pub fn prior(&self) -> Prior {
        self.spec.prior.prior()
    }

    /// The mission with a different formula, e.g. for comparison studies.
    pub fn problem_for(&self, formula: &Formula) -> Result<Problem, SynthError> {
        Problem::new(
            formula,
            self.table.clone(),
            self.start(),
            self.spec.dt,
            self.spec.horizon,
            self.spec.sigma_u,
        )
    }

    pub fn problem(&self) -> Result<Problem, SynthError> {
        self.problem_for(&self.formula)
    }

    /// Library defaults overlaid with the scenario's `synth` block.
    pub fn synth_config(&self) -> SynthConfig {
        let d = SynthConfig::new(self.prior());
        let s = &self.spec.synth;
        SynthConfig {
            ns: s.ns.unwrap_or(d.ns),
            nu: s.nu.unwrap_or(d.nu),
            iters: s.iters.unwrap_or(d.iters),
            step_size: s.step_size.unwrap_or(d.step_size),
            prior_weight: s.prior_weight.unwrap_or(d.prior_weight),
            semantics: s.semantics.unwrap_or(d.semantics),
            mc_samples: s.mc_samples.unwrap_or(d.mc_samples),
            fixed_noise: s.fixed_noise.unwrap_or(d.fixed_noise),
            seed: self.spec.seed,
            ..d
        }
    }

    /// The occupancy grid behind predicate `name`, if it is one.
    pub fn grid(&self, name: &str) -> Option<&OccupancyGrid> {
        match self.table.get(name) {
            Some(Field::Occupancy(g)) => Some(g),
            _ => None,
        }
    }
}

fn build_field(
    p: &PredicateSpec,
    ptr: &str,
    horizon: usize,
    dt: f64,
    base_dir: &Path,
) -> Result<Field, ScenarioError> {
    Ok(match p {
        PredicateSpec::Constant { p } => {
            Field::Constant(ConstantField::new(*p).map_err(|e| field_err(&format!("{ptr}/p"), e))?)
        }
        PredicateSpec::StaticTarget {
            position,
            covariance,
            r_d,
            p_d,
            peak_in_marginal,
        } => {
            let cov = Matrix2::from_fn(|i, j| covariance[i][j]);
            let belief = TargetBelief::stationary(*position, cov, horizon);
            Field::Target(
                TargetField::new(belief, *r_d, *p_d, *peak_in_marginal).map_err(|e| field_err(ptr, e))?,
            )
        }
        PredicateSpec::Target {
            z0,
            v0,
            sigma0,
            q,
            r_d,
            p_d,
            peak_in_marginal,
        } => {
            let s0 = Matrix4::from_fn(|i, j| sigma0[i][j]);
            let belief = predict_belief(*z0, *v0, s0, *q, dt, horizon).map_err(|e| field_err(ptr, e))?;
            Field::Target(
                TargetField::new(belief, *r_d, *p_d, *peak_in_marginal).map_err(|e| field_err(ptr, e))?,
            )
        }
        PredicateSpec::Occupancy { grid } => {
            let path = base_dir.join(grid);
            Field::Occupancy(OccupancyGrid::from_csv_file(&path).map_err(|e| field_err(&format!("{ptr}/grid"), e))?)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::EventField;

    fn doc(predicates: &str, formula: &str) -> String {
        format!(
            r#"{{
              "schema": 1, "name": "t", "horizon": 5,
              "start": {{ "x": 0, "y": 0 }},
              "formula": "{formula}",
              "predicates": {{ {predicates} }},
              "prior": {{ "sigma_v": 0.5, "sigma_omega": 0.2 }}
            }}"#
        )
    }

    fn load(text: &str) -> Result<Scenario, ScenarioError> {
        Scenario::from_json_str(text, Path::new("."))
    }

    #[test]
    fn minimal_scenario_loads() {
        let s = load(&doc(r#""a": {"kind": "constant", "p": 0.3}"#, "F[0,4] a")).unwrap();
        assert_eq!(s.horizon(), 5);
        assert_eq!(s.spec.dt, 1.0);
        assert_eq!(s.prior().v_mean, 0.5);
        assert_eq!(s.table.get("a").unwrap().prob([0.0, 0.0], 1), 0.3);
        let p = s.problem().unwrap();
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn undeclared_predicate_is_named() {
        let e = load(&doc(r#""a": {"kind": "constant", "p": 0.3}"#, "a & ghost")).unwrap_err();
        assert_eq!(e.pointer, "/formula");
        assert!(e.message.contains("`ghost`"), "{e}");
    }

    #[test]
    fn unknown_kind_has_pointer() {
        let e = load(&doc(r#""a": {"kind": "laser", "p": 0.3}"#, "a")).unwrap_err();
        assert_eq!(e.pointer, "/predicates/a/kind");
        assert!(e.message.contains("laser"), "{e}");
    }

    #[test]
    fn bad_parameter_has_pointer() {
        let e = load(&doc(
            r#""a": {"kind": "static_target", "position": [0, 0], "r_d": -1, "p_d": 0.5}"#,
            "a",
        ))
        .unwrap_err();
        assert_eq!(e.pointer, "/predicates/a");
        let e = load(&doc(r#""a": {"kind": "constant", "p": "high"}"#, "a")).unwrap_err();
        assert!(e.pointer.starts_with("/predicates/a"), "{e}");
    }

    #[test]
    fn unknown_field_is_rejected() {
        let e = load(&doc(r#""a": {"kind": "constant", "p": 0.3, "extra": 1}"#, "a")).unwrap_err();
        assert!(e.message.contains("extra"), "{e}");
    }

    #[test]
    fn wrong_schema_version() {
        let text = doc(r#""a": {"kind": "constant", "p": 0.3}"#, "a").replace("\"schema\": 1", "\"schema\": 7");
        assert_eq!(load(&text).unwrap_err().pointer, "/schema");
    }

    #[test]
    fn formula_syntax_error_is_positioned() {
        let e = load(&doc(r#""a": {"kind": "constant", "p": 0.3}"#, "a &")).unwrap_err();
        assert_eq!(e.pointer, "/formula");
        assert!(e.message.starts_with("1:4:"), "{e}");
    }

    #[test]
    fn missing_grid_file_is_reported() {
        let e = load(&doc(r#""o": {"kind": "occupancy", "grid": "nope.csv"}"#, "G[0,4] !o")).unwrap_err();
        assert_eq!(e.pointer, "/predicates/o/grid");
    }

    #[test]
    fn synth_block_overrides_defaults() {
        let text = doc(r#""a": {"kind": "constant", "p": 0.3}"#, "a")
            .replace("\"horizon\": 5", "\"horizon\": 5, \"seed\": 8, \"synth\": {\"ns\": 7, \"semantics\": \"me\"}");
        let c = load(&text).unwrap().synth_config();
        assert_eq!((c.ns, c.seed, c.semantics, c.iters), (7, 8, Semantics::LogOddsMe, 2000));
    }
}

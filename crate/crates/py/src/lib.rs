//! Python bindings: formula parsing, scenario loading, evaluation under
//! every semantics, Monte-Carlo checks and control synthesis.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use rstl::approx::{self, LogOdds, Semantics};
use rstl::dynamics::{RobotState, Trajectory};
use rstl::formula::{ground, parse, pretty};
use rstl::mc::mc_satisfaction;
use rstl::scenario::Scenario;
use rstl::synth::{ascend, Problem};

create_exception!(rstl_py, RstlError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    RstlError::new_err(e.to_string())
}

fn semantics(name: &str) -> PyResult<Semantics> {
    name.parse().map_err(err)
}

fn to_py_json<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// Canonical, fully parenthesised form of a formula.
#[pyfunction]
fn parse_formula(text: &str) -> PyResult<String> {
    Ok(pretty(&parse(text).map_err(err)?))
}

/// Predicate names in order of first appearance.
#[pyfunction]
fn predicates(text: &str) -> PyResult<Vec<String>> {
    let f = parse(text).map_err(err)?;
    Ok(f.predicates().into_iter().map(String::from).collect())
}

/// Number of leaves after grounding over `horizon` steps from `anchor`.
#[pyfunction]
#[pyo3(signature = (text, horizon, anchor = 1))]
fn grounded_leaf_count(text: &str, horizon: usize, anchor: usize) -> PyResult<usize> {
    let f = parse(text).map_err(err)?;
    Ok(ground(&f, anchor, horizon).map_err(err)?.formula.leaf_count())
}

/// Log-odds of a disjunction of independent events under CI.
#[pyfunction]
fn ci_or_logodds(values: Vec<f64>) -> PyResult<f64> {
    if values.is_empty() {
        return Err(err("empty list"));
    }
    Ok(approx::ci_or_logodds(&values))
}

/// Log-odds of a conjunction of independent events under CI.
#[pyfunction]
fn ci_and_logodds(values: Vec<f64>) -> PyResult<f64> {
    if values.is_empty() {
        return Err(err("empty list"));
    }
    Ok(approx::ci_and_logodds(&values))
}

/// Log-sum-exp disjunction used by the ME semantics.
#[pyfunction]
fn me_or_logodds(values: Vec<f64>) -> PyResult<f64> {
    approx::lse(&values).map_err(err)
}

/// Exact power-set disjunction, for checking the CI form on short lists.
#[pyfunction]
fn brute_force_or_logodds(values: Vec<f64>) -> PyResult<f64> {
    approx::brute_force_or_logodds(&values).map_err(err)
}

#[pyfunction]
fn sigmoid(l: f64) -> f64 {
    LogOdds(l).prob()
}

/// A loaded and validated scenario file.
#[pyclass(name = "Scenario", module = "rstl_py")]
struct PyScenario {
    inner: Scenario,
    problem: Problem,
}

impl PyScenario {
    fn trajectory(&self, states: Vec<(f64, f64, f64)>) -> PyResult<Trajectory> {
        if states.len() != self.inner.horizon() {
            return Err(err(format!(
                "trajectory has {} steps but the scenario horizon is {}",
                states.len(),
                self.inner.horizon()
            )));
        }
        Ok(Trajectory {
            states: states
                .into_iter()
                .map(|(x, y, t)| RobotState::new(x, y, t))
                .collect(),
            dt: self.inner.spec.dt,
        })
    }

    fn problem_for(&self, formula: Option<&str>) -> PyResult<Problem> {
        match formula {
            None => Ok(self.problem.clone()),
            Some(text) => self
                .inner
                .problem_for(&parse(text).map_err(err)?)
                .map_err(err),
        }
    }
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = Scenario::load(&path).map_err(err)?;
        let problem = inner.problem().map_err(err)?;
        Ok(PyScenario { inner, problem })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.spec.dt
    }

    #[getter]
    fn sigma_u(&self) -> f64 {
        self.inner.spec.sigma_u
    }

    #[getter]
    fn formula(&self) -> String {
        pretty(&self.inner.formula)
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.problem.warnings.clone()
    }

    /// Noise-free rollout of `(v, omega)` controls from the start state.
    fn rollout(&self, controls: Vec<(f64, f64)>) -> PyResult<Vec<(f64, f64, f64)>> {
        let c: Vec<[f64; 2]> = controls.into_iter().map(|(v, w)| [v, w]).collect();
        let traj = self.problem.nominal(&c).map_err(err)?;
        Ok(traj.states.iter().map(|s| (s.x, s.y, s.theta)).collect())
    }

    /// Probability of satisfaction along `trajectory` (a list of
    /// `(x, y, theta)` states, one per step).
    #[pyo3(signature = (trajectory, semantics = "ci", formula = None))]
    fn probability(
        &self,
        trajectory: Vec<(f64, f64, f64)>,
        semantics: &str,
        formula: Option<&str>,
    ) -> PyResult<f64> {
        let sem = self::semantics(semantics)?;
        let traj = self.trajectory(trajectory)?;
        let problem = self.problem_for(formula)?;
        approx::probability(&problem.grounded, &traj, &self.inner.table, sem).map_err(err)
    }

    /// Monte-Carlo estimate as `(mean, std_err)`.
    #[pyo3(signature = (trajectory, n = 1000, seed = 0, formula = None))]
    fn monte_carlo(
        &self,
        trajectory: Vec<(f64, f64, f64)>,
        n: u64,
        seed: u64,
        formula: Option<&str>,
    ) -> PyResult<(f64, f64)> {
        let traj = self.trajectory(trajectory)?;
        let problem = self.problem_for(formula)?;
        let e = mc_satisfaction(&problem.grounded, &traj, &self.inner.table, n, seed).map_err(err)?;
        Ok((e.mean, e.std_err))
    }

    /// Run multi-restart synthesis and return the report as a dict.
    /// Unset arguments fall back to the scenario's `synth` block.
    #[pyo3(signature = (
        ns = None, nu = None, iters = None, step_size = None, semantics = None,
        seed = None, sigma_u = None, prior_weight = None, fixed_noise = None,
        mc_samples = None, workers = None
    ))]
    #[allow(clippy::too_many_arguments)]
    fn synthesize<'py>(
        &self,
        py: Python<'py>,
        ns: Option<usize>,
        nu: Option<usize>,
        iters: Option<usize>,
        step_size: Option<f64>,
        semantics: Option<&str>,
        seed: Option<u64>,
        sigma_u: Option<f64>,
        prior_weight: Option<f64>,
        fixed_noise: Option<bool>,
        mc_samples: Option<u64>,
        workers: Option<usize>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let mut config = self.inner.synth_config();
        config.ns = ns.unwrap_or(config.ns);
        config.nu = nu.unwrap_or(config.nu);
        config.iters = iters.unwrap_or(config.iters);
        config.step_size = step_size.unwrap_or(config.step_size);
        if let Some(s) = semantics {
            config.semantics = self::semantics(s)?;
        }
        config.seed = seed.unwrap_or(config.seed);
        config.prior_weight = prior_weight.unwrap_or(config.prior_weight);
        config.fixed_noise = fixed_noise.unwrap_or(config.fixed_noise);
        config.mc_samples = mc_samples.unwrap_or(config.mc_samples);
        config.workers = workers.or(config.workers);
        let mut problem = self.problem.clone();
        if let Some(s) = sigma_u {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(err(format!("sigma_u must be >= 0 (got {s})")));
            }
            problem = problem.with_sigma_u(s);
        }
        let report = py
            .detach(|| ascend(&problem, &config))
            .map_err(err)?;
        to_py_json(py, &serde_json::to_string(&report).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(name={:?}, horizon={}, formula={:?})",
            self.inner.name(),
            self.inner.horizon(),
            pretty(&self.inner.formula)
        )
    }
}

#[pymodule]
fn rstl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RstlError", m.py().get_type::<RstlError>())?;
    m.add("SEMANTICS", Semantics::ALL.iter().map(|s| s.as_str()).collect::<Vec<_>>())?;
    m.add_class::<PyScenario>()?;
    m.add_function(wrap_pyfunction!(parse_formula, m)?)?;
    m.add_function(wrap_pyfunction!(predicates, m)?)?;
    m.add_function(wrap_pyfunction!(grounded_leaf_count, m)?)?;
    m.add_function(wrap_pyfunction!(ci_or_logodds, m)?)?;
    m.add_function(wrap_pyfunction!(ci_and_logodds, m)?)?;
    m.add_function(wrap_pyfunction!(me_or_logodds, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_or_logodds, m)?)?;
    m.add_function(wrap_pyfunction!(sigmoid, m)?)?;
    Ok(())
}

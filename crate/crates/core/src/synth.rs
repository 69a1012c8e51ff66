//! MAP control synthesis by sample-averaged gradient ascent.
//!
//! The ascended objective is
//! `mean_j S(phi | rollout(U, noise_j)) + w * log P(U)`
//! where `S` is `log P` under [`Semantics::NaiveCi`] and the log-odds value
//! under the log-odds semantics, and `P(U)` is an independent Gaussian prior
//! on every speed and turn-rate entry.
//!
//! Every trajectory sample is differentiated on its own tape. Per-sample
//! gradients are reduced in sample order, so results do not depend on the
//! number of worker threads.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approx::{evaluate_plan, leaf_values, EvalError, Semantics};
use crate::autodiff::{AutodiffError, Scalar, Tape, Var};
use crate::dynamics::{rollout, sample_noise, DynamicsError, NoiseDraw, RobotState, Trajectory};
use crate::fields::PredicateTable;
use crate::formula::{ground, Formula, GroundError, GroundedFormula, Plan};
use crate::mc::{LeafSampler, McEstimate};
use crate::rng::mix;

const TAG_INIT: u64 = 0x1417;
const TAG_NOISE: u64 = 0x2b0d;
const TAG_MC: u64 = 0x3c55;
/// Consecutive step halvings before a restart gives up.
const MAX_HALVINGS: u32 = 40;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Ground(#[from] GroundError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite objective {value} at iteration {iteration}")]
    NonFinite { iteration: usize, value: f64 },
}

/// Independent Gaussian prior on each `(V_t, omega_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub v_mean: f64,
    pub omega_mean: f64,
    pub sigma_v: f64,
    pub sigma_omega: f64,
}

impl Prior {
    fn validate(&self) -> Result<(), SynthError> {
        let ok = self.v_mean.is_finite()
            && self.omega_mean.is_finite()
            && self.sigma_v > 0.0
            && self.sigma_omega > 0.0
            && self.sigma_v.is_finite()
            && self.sigma_omega.is_finite();
        if ok {
            Ok(())
        } else {
            Err(SynthError::Config(format!("prior needs finite means and positive stds, got {self:?}")))
        }
    }

    /// Log-density up to an additive constant.
    pub fn log_density<S: Scalar>(&self, controls: &[[S; 2]]) -> S {
        let terms: Vec<S> = controls
            .iter()
            .map(|u| {
                let dv = (u[0] - self.v_mean) / self.sigma_v;
                let dw = (u[1] - self.omega_mean) / self.sigma_omega;
                -(dv.pow2() + dw.pow2()) * 0.5
            })
            .collect();
        S::sum(&terms)
    }

    /// Gradient of [`Prior::log_density`], flattened as `[V_1, omega_1, V_2, ...]`.
    pub fn log_density_gradient(&self, controls: &[[f64; 2]]) -> Vec<f64> {
        controls
            .iter()
            .flat_map(|u| {
                [
                    -(u[0] - self.v_mean) / self.sigma_v.powi(2),
                    -(u[1] - self.omega_mean) / self.sigma_omega.powi(2),
                ]
            })
            .collect()
    }

    pub fn sample(&self, steps: usize, seed: u64) -> Vec<[f64; 2]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..steps)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                [self.v_mean + self.sigma_v * a, self.omega_mean + self.sigma_omega * b]
            })
            .collect()
    }

    pub fn mean_controls(&self, steps: usize) -> Vec<[f64; 2]> {
        vec![[self.v_mean, self.omega_mean]; steps]
    }
}

/// Everything the objective needs about a mission, with the formula already
/// grounded over `horizon` and compiled against `table`.
#[derive(Debug, Clone)]
pub struct Problem {
    pub table: PredicateTable,
    pub grounded: GroundedFormula,
    pub plan: Plan,
    pub start: RobotState,
    pub dt: f64,
    pub horizon: usize,
    pub sigma_u: f64,
    /// Messages from grounding, e.g. windows clipped at the horizon.
    pub warnings: Vec<String>,
}

impl Problem {
    pub fn new(
        formula: &Formula,
        table: PredicateTable,
        start: RobotState,
        dt: f64,
        horizon: usize,
        sigma_u: f64,
    ) -> Result<Self, SynthError> {
        if !(sigma_u >= 0.0 && sigma_u.is_finite()) {
            return Err(SynthError::Config(format!("sigma_u must be >= 0, got {sigma_u}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SynthError::Dynamics(DynamicsError::Dt(dt)));
        }
        let grounding = ground(formula, 1, horizon)?;
        let plan = crate::approx::compile(&grounding.formula, &table)?;
        Ok(Problem {
            table,
            grounded: grounding.formula,
            plan,
            start,
            dt,
            horizon,
            sigma_u,
            warnings: grounding.warnings,
        })
    }

    /// Same mission under a different actuation noise level.
    pub fn with_sigma_u(mut self, sigma_u: f64) -> Self {
        self.sigma_u = sigma_u;
        self
    }

    pub fn nominal(&self, controls: &[[f64; 2]]) -> Result<Trajectory, SynthError> {
        Ok(rollout(self.start, controls, &NoiseDraw::zeros(controls.len()), self.dt)?)
    }

    /// Monte-Carlo satisfaction of the noise-free rollout of `controls`.
    pub fn validate(&self, controls: &[[f64; 2]], n: u64, seed: u64) -> Result<McEstimate, SynthError> {
        let traj = self.nominal(controls)?;
        Ok(LeafSampler::new(&self.plan, &traj, &self.table)?.estimate(n, seed))
    }

    fn check_controls<S>(&self, controls: &[[S; 2]]) -> Result<(), SynthError> {
        if controls.len() != self.horizon {
            return Err(SynthError::Config(format!(
                "expected {} controls, got {}",
                self.horizon,
                controls.len()
            )));
        }
        Ok(())
    }
}

/// Satisfaction term of one trajectory sample.
pub fn satisfaction<S: Scalar>(
    problem: &Problem,
    controls: &[[S; 2]],
    noise: &NoiseDraw,
    sem: Semantics,
) -> Result<S, SynthError> {
    problem.check_controls(controls)?;
    let traj = rollout(problem.start, controls, noise, problem.dt)?;
    let leaves = leaf_values(&problem.plan, &traj, &problem.table, sem)?;
    let v = evaluate_plan(&problem.plan, &leaves, sem);
    Ok(match sem {
        Semantics::NaiveCi => v.ln(),
        _ => v,
    })
}

/// Sample-averaged objective. Generic so the same code serves plain values
/// and tape-recorded values.
pub fn objective<S: Scalar>(
    problem: &Problem,
    controls: &[[S; 2]],
    noises: &[NoiseDraw],
    sem: Semantics,
    prior: &Prior,
    prior_weight: f64,
) -> Result<S, SynthError> {
    if noises.is_empty() {
        return Err(SynthError::Config("at least one trajectory sample is required".into()));
    }
    let terms = noises
        .iter()
        .map(|n| satisfaction(problem, controls, n, sem))
        .collect::<Result<Vec<S>, _>>()?;
    Ok(S::sum(&terms) / noises.len() as f64 + prior.log_density(controls) * prior_weight)
}

/// Value and flattened gradient of one sample's satisfaction term.
pub fn satisfaction_gradient(
    problem: &Problem,
    controls: &[[f64; 2]],
    noise: &NoiseDraw,
    sem: Semantics,
) -> Result<(f64, Vec<f64>), SynthError> {
    let tape = Tape::with_capacity(64 * controls.len() * (1 + problem.plan.leaves.len() / controls.len().max(1)));
    let vars: Vec<[Var<'_>; 2]> = controls
        .iter()
        .map(|u| [tape.var(u[0]), tape.var(u[1])])
        .collect();
    let out = satisfaction(problem, &vars, noise, sem)?;
    let flat: Vec<Var<'_>> = vars.iter().flatten().copied().collect();
    let grad = tape.gradient(out, &flat)?;
    Ok((out.value(), grad))
}

/// Objective value and gradient, reducing samples in order.
pub fn objective_gradient(
    problem: &Problem,
    controls: &[[f64; 2]],
    noises: &[NoiseDraw],
    sem: Semantics,
    prior: &Prior,
    prior_weight: f64,
) -> Result<(f64, Vec<f64>), SynthError> {
    problem.check_controls(controls)?;
    if noises.is_empty() {
        return Err(SynthError::Config("at least one trajectory sample is required".into()));
    }
    let per_sample = noises
        .par_iter()
        .map(|n| satisfaction_gradient(problem, controls, n, sem))
        .collect::<Result<Vec<_>, _>>()?;
    let inv = 1.0 / noises.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; 2 * controls.len()];
    for (v, g) in &per_sample {
        value += v;
        for (acc, x) in grad.iter_mut().zip(g) {
            *acc += x;
        }
    }
    value *= inv;
    grad.iter_mut().for_each(|g| *g *= inv);
    value += prior_weight * prior.log_density(controls);
    for (acc, x) in grad.iter_mut().zip(prior.log_density_gradient(controls)) {
        *acc += prior_weight * x;
    }
    Ok((value, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub ns: usize,
    pub nu: usize,
    pub iters: usize,
    pub step_size: f64,
    pub prior: Prior,
    pub prior_weight: f64,
    pub semantics: Semantics,
    pub seed: u64,
    /// Reuse the same noise draws at every iteration (common random numbers).
    pub fixed_noise: bool,
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
    pub mc_samples: u64,
    /// Record an MC-validated probability every this many iterations (0: never).
    pub mc_every: usize,
}

impl SynthConfig {
    pub fn new(prior: Prior) -> Self {
        SynthConfig {
            ns: 1,
            nu: 1,
            iters: 2000,
            step_size: 0.05,
            prior,
            prior_weight: 1.0,
            semantics: Semantics::LogOddsCi,
            seed: 0,
            fixed_noise: false,
            workers: None,
            mc_samples: 1000,
            mc_every: 100,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        self.prior.validate()?;
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.ns == 0 {
            return bad("ns must be >= 1");
        }
        if self.nu == 0 {
            return bad("nu must be >= 1");
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step_size must be positive");
        }
        if !(self.prior_weight >= 0.0 && self.prior_weight.is_finite()) {
            return bad("prior_weight must be >= 0");
        }
        if self.mc_samples == 0 {
            return bad("mc_samples must be >= 1");
        }
        if self.workers == Some(0) {
            return bad("workers must be >= 1");
        }
        Ok(())
    }

    fn mc_seed(&self) -> u64 {
        mix(&[self.seed, TAG_MC])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McPoint {
    pub iteration: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartResult {
    pub restart: usize,
    pub initial_controls: Vec<[f64; 2]>,
    pub controls: Vec<[f64; 2]>,
    /// Objective at every iterate, starting with the prior sample.
    pub objective_trace: Vec<f64>,
    pub mc_trace: Vec<McPoint>,
    pub final_mc: McEstimate,
    pub final_step_size: f64,
    pub iterations: usize,
    pub seconds_per_step: f64,
    /// Why the restart stopped early, if it did.
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub config: SynthConfig,
    pub horizon: usize,
    pub dt: f64,
    pub sigma_u: f64,
    pub best_restart: usize,
    pub best_controls: Vec<[f64; 2]>,
    pub best_mc: McEstimate,
    pub mean_seconds_per_step: f64,
    pub warnings: Vec<String>,
    pub restarts: Vec<RestartResult>,
}

impl SynthReport {
    pub fn best(&self) -> &RestartResult {
        &self.restarts[self.best_restart]
    }

    pub fn final_probabilities(&self) -> Vec<f64> {
        self.restarts.iter().map(|r| r.final_mc.mean).collect()
    }
}

fn noise_draws(problem: &Problem, config: &SynthConfig, restart: usize, iteration: usize) -> Vec<NoiseDraw> {
    let it = if config.fixed_noise { 0 } else { iteration as u64 };
    (0..config.ns)
        .map(|j| {
            let idx = mix(&[TAG_NOISE, restart as u64, it, j as u64]);
            sample_noise(problem.sigma_u, problem.horizon, config.seed, idx)
        })
        .collect()
}

fn initial_controls(problem: &Problem, config: &SynthConfig, restart: usize) -> Vec<[f64; 2]> {
    config
        .prior
        .sample(problem.horizon, mix(&[config.seed, TAG_INIT, restart as u64]))
}

fn stepped(u: &[[f64; 2]], grad: &[f64], eta: f64) -> Vec<[f64; 2]> {
    u.iter()
        .enumerate()
        .map(|(t, c)| [c[0] + eta * grad[2 * t], c[1] + eta * grad[2 * t + 1]])
        .collect()
}

fn finite(value: f64, grad: &[f64]) -> bool {
    value.is_finite() && grad.iter().all(|g| g.is_finite())
}

/// Gradient ascent from a single prior sample. Depends only on
/// `(config, restart)`, never on how many other restarts run.
pub fn run_restart(problem: &Problem, config: &SynthConfig, restart: usize) -> Result<RestartResult, SynthError> {
    let sem = config.semantics;
    let deterministic = config.fixed_noise || problem.sigma_u == 0.0;
    let eval = |u: &[[f64; 2]], iteration: usize| {
        let noises = noise_draws(problem, config, restart, iteration);
        objective_gradient(problem, u, &noises, sem, &config.prior, config.prior_weight)
    };
    let validate = |u: &[[f64; 2]]| problem.validate(u, config.mc_samples, config.mc_seed());

    let init = initial_controls(problem, config, restart);
    let mut u = init.clone();
    let mut eta = config.step_size;
    let mut trace = Vec::with_capacity(config.iters + 1);
    let mut mc_trace = Vec::new();
    let mut aborted = None;
    let mut iterations = 0;
    let started = Instant::now();

    let (mut f, mut g) = eval(&u, 0)?;
    trace.push(f);
    if !finite(f, &g) {
        aborted = Some(SynthError::NonFinite { iteration: 0, value: f }.to_string());
    }

    while aborted.is_none() && iterations < config.iters {
        let i = iterations;
        if config.mc_every > 0 && i % config.mc_every == 0 {
            mc_trace.push(McPoint {
                iteration: i,
                probability: validate(&u)?.mean,
            });
        }
        let mut halvings = 0;
        loop {
            let cand = stepped(&u, &g, eta);
            let (f2, g2) = eval(&cand, i + 1)?;
            let ok = finite(f2, &g2) && (!deterministic || f2 >= f);
            if ok {
                u = cand;
                f = f2;
                g = g2;
                break;
            }
            halvings += 1;
            eta *= 0.5;
            if halvings >= MAX_HALVINGS {
                aborted = Some(if finite(f2, &g2) {
                    format!("no ascent after {MAX_HALVINGS} step halvings at iteration {}", i + 1)
                } else {
                    SynthError::NonFinite {
                        iteration: i + 1,
                        value: f2,
                    }
                    .to_string()
                });
                break;
            }
        }
        if aborted.is_some() {
            break;
        }
        trace.push(f);
        iterations += 1;
    }

    let elapsed = started.elapsed().as_secs_f64();
    let final_mc = validate(&u)?;
    if mc_trace.last().is_none_or(|p| p.iteration != iterations) {
        mc_trace.push(McPoint {
            iteration: iterations,
            probability: final_mc.mean,
        });
    }
    Ok(RestartResult {
        restart,
        initial_controls: init,
        controls: u,
        objective_trace: trace,
        mc_trace,
        final_mc,
        final_step_size: eta,
        iterations,
        seconds_per_step: elapsed / iterations.max(1) as f64,
        aborted,
    })
}

fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R, SynthError> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| SynthError::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Multi-restart ascent. The best restart maximizes the MC-validated
/// probability of its nominal trajectory (ties go to the lower index).
pub fn ascend(problem: &Problem, config: &SynthConfig) -> Result<SynthReport, SynthError> {
    config.validate()?;
    let restarts = with_workers(config.workers, || {
        (0..config.nu)
            .into_par_iter()
            .map(|r| run_restart(problem, config, r))
            .collect::<Result<Vec<_>, _>>()
    })??;
    let best_restart = restarts
        .iter()
        .enumerate()
        .fold(0, |best, (i, r)| {
            if r.final_mc.mean > restarts[best].final_mc.mean {
                i
            } else {
                best
            }
        });
    let best = &restarts[best_restart];
    assert!(restarts.iter().all(|r| r.final_mc.mean <= best.final_mc.mean));
    Ok(SynthReport {
        config: config.clone(),
        horizon: problem.horizon,
        dt: problem.dt,
        sigma_u: problem.sigma_u,
        best_restart,
        best_controls: best.controls.clone(),
        best_mc: best.final_mc,
        mean_seconds_per_step: restarts.iter().map(|r| r.seconds_per_step).sum::<f64>()
            / restarts.len() as f64,
        warnings: problem.warnings.clone(),
        restarts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub ns: usize,
    pub nu: usize,
    pub workers: usize,
    pub mean_seconds: f64,
    pub var_seconds: f64,
}

/// Wall-clock seconds per gradient-ascent step over all `nu` restarts with
/// `ns` samples each, averaged over `steps` steps.
pub fn bench_cell(
    problem: &Problem,
    config: &SynthConfig,
    ns: usize,
    nu: usize,
    workers: usize,
    steps: usize,
) -> Result<BenchRow, SynthError> {
    let cfg = SynthConfig {
        ns,
        nu,
        workers: Some(workers),
        ..config.clone()
    };
    cfg.validate()?;
    if steps == 0 {
        return Err(SynthError::Config("bench needs at least one step".into()));
    }
    let times = with_workers(Some(workers), || -> Result<Vec<f64>, SynthError> {
        let mut us: Vec<Vec<[f64; 2]>> = (0..nu).map(|r| initial_controls(problem, &cfg, r)).collect();
        let mut times = Vec::with_capacity(steps);
        for i in 0..steps {
            let t0 = Instant::now();
            us = us
                .par_iter()
                .enumerate()
                .map(|(r, u)| {
                    let noises = noise_draws(problem, &cfg, r, i);
                    let (_, g) = objective_gradient(problem, u, &noises, cfg.semantics, &cfg.prior, cfg.prior_weight)?;
                    Ok(stepped(u, &g, cfg.step_size))
                })
                .collect::<Result<_, SynthError>>()?;
            times.push(t0.elapsed().as_secs_f64());
        }
        Ok(times)
    })??;
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    Ok(BenchRow {
        ns,
        nu,
        workers,
        mean_seconds: mean,
        var_seconds: var,
    })
}

pub fn bench(
    problem: &Problem,
    config: &SynthConfig,
    ns_list: &[usize],
    nu_list: &[usize],
    workers_list: &[usize],
    steps: usize,
) -> Result<Vec<BenchRow>, SynthError> {
    let mut rows = Vec::new();
    for &w in workers_list {
        for &ns in ns_list {
            for &nu in nu_list {
                rows.push(bench_cell(problem, config, ns, nu, w, steps)?);
            }
        }
    }
    Ok(rows)
}

/// Ordinary least squares `y = a + b x`; returns `(a, b, r_squared)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (a, b, r2)
}

//! Discrete-time bicycle model with Gaussian heading-rate noise.
//!
//! A rollout is a deterministic function of the controls once the noise
//! draw is fixed, so evaluating it on [`Var`](crate::autodiff::Var) scalars
//! yields gradients with respect to the controls.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::autodiff::Scalar;
use crate::rng::mix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("length mismatch: {controls} controls, {noise} noise samples")]
    Length { controls: usize, noise: usize },
    #[error("dt must be positive (got {0})")]
    Dt(f64),
    #[error("empty control sequence")]
    Empty,
    #[error("trajectory csv line {line}: {message}")]
    Csv { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState<S = f64> {
    pub x: S,
    pub y: S,
    pub theta: S,
}

impl RobotState<f64> {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        RobotState { x, y, theta }
    }
}

/// Per-step `(speed, turn rate)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence(pub Vec<[f64; 2]>);

impl ControlSequence {
    pub fn constant(v: f64, omega: f64, steps: usize) -> Self {
        ControlSequence(vec![[v, omega]; steps])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `[v1, w1, v2, w2, ...]`
    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flat_map(|u| u.iter().copied()).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        ControlSequence(flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    }
}

/// Per-step heading-rate noise for one trajectory sample.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw(pub Vec<f64>);

impl NoiseDraw {
    pub fn zeros(steps: usize) -> Self {
        NoiseDraw(vec![0.0; steps])
    }
}

/// i.i.d. `N(0, sigma_u^2)` draws, deterministic in `(seed, sample_index)`.
pub fn sample_noise(sigma_u: f64, steps: usize, seed: u64, sample_index: u64) -> NoiseDraw {
    if sigma_u == 0.0 {
        return NoiseDraw::zeros(steps);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, sample_index, 0x006e_6f69_7365]));
    NoiseDraw(
        (0..steps)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sigma_u * z
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S = f64> {
    pub states: Vec<RobotState<S>>,
    pub dt: f64,
}

impl<S: Scalar> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Position at 1-indexed `step`.
    #[inline]
    pub fn position(&self, step: usize) -> [S; 2] {
        let s = &self.states[step - 1];
        [s.x, s.y]
    }

    pub fn values(&self) -> Trajectory<f64> {
        Trajectory {
            states: self
                .states
                .iter()
                .map(|s| RobotState::new(s.x.value(), s.y.value(), s.theta.value()))
                .collect(),
            dt: self.dt,
        }
    }
}

impl Trajectory<f64> {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("t,x,y,theta\n");
        for (i, s) in self.states.iter().enumerate() {
            let _ = writeln!(out, "{},{:?},{:?},{:?}", i + 1, s.x, s.y, s.theta);
        }
        out
    }

    /// Parse the `t,x,y,theta` CSV form. Rows must be in step order.
    pub fn from_csv_str(text: &str, dt: f64) -> Result<Self, DynamicsError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, h)) if h.replace(' ', "") == "t,x,y,theta" => {}
            other => {
                return Err(DynamicsError::Csv {
                    line: other.map_or(1, |(line, _)| line),
                    message: "expected header `t,x,y,theta`".into(),
                })
            }
        }
        let mut states = Vec::new();
        for (line, row) in lines {
            let cols: Vec<&str> = row.split(',').map(str::trim).collect();
            if cols.len() != 4 {
                return Err(DynamicsError::Csv {
                    line,
                    message: format!("expected 4 columns, got {}", cols.len()),
                });
            }
            let num = |s: &str| {
                s.parse::<f64>().map_err(|_| DynamicsError::Csv {
                    line,
                    message: format!("invalid number `{s}`"),
                })
            };
            let t = num(cols[0])?;
            if t != (states.len() + 1) as f64 {
                return Err(DynamicsError::Csv {
                    line,
                    message: format!("expected step {}, got {}", states.len() + 1, cols[0]),
                });
            }
            states.push(RobotState::new(num(cols[1])?, num(cols[2])?, num(cols[3])?));
        }
        Ok(Trajectory { states, dt })
    }
}

/// Explicit-Euler rollout. `controls` and `noise` both have one entry per
/// step; the last entry does not affect the returned states.
pub fn rollout<S: Scalar>(
    start: RobotState<f64>,
    controls: &[[S; 2]],
    noise: &NoiseDraw,
    dt: f64,
) -> Result<Trajectory<S>, DynamicsError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(DynamicsError::Dt(dt));
    }
    if controls.is_empty() {
        return Err(DynamicsError::Empty);
    }
    if controls.len() != noise.0.len() {
        return Err(DynamicsError::Length {
            controls: controls.len(),
            noise: noise.0.len(),
        });
    }
    let mut states = Vec::with_capacity(controls.len());
    let mut s = RobotState {
        x: S::from_f64(start.x),
        y: S::from_f64(start.y),
        theta: S::from_f64(start.theta),
    };
    states.push(s);
    for (u, eps) in controls.iter().zip(&noise.0).take(controls.len() - 1) {
        let step = u[0] * dt;
        s = RobotState {
            x: s.x + step * s.theta.cos(),
            y: s.y + step * s.theta.sin(),
            theta: s.theta + (u[1] + *eps) * dt,
        };
        states.push(s);
    }
    Ok(Trajectory { states, dt })
}

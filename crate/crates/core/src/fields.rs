//! Event-predicate random fields: the probability that a predicate fires
//! at a robot position and step.
//!
//! Every field clamps its output into `[PROB_EPS, 1 - PROB_EPS]` so that
//! log-odds and their gradients stay finite.

use std::path::Path;

use nalgebra::{Matrix2, Matrix4, Vector4};
use thiserror::Error;

use crate::autodiff::Scalar;

pub const PROB_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),
    #[error("{name} must be {requirement} (got {value})")]
    Range {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("{0} is not symmetric positive definite")]
    NotSpd(&'static str),
    #[error("step {step} outside belief horizon 1..={len}")]
    Step { step: usize, len: usize },
    #[error("occupancy grid line {line}: {message}")]
    Grid { line: usize, message: String },
    #[error("reading {path}: {message}")]
    Io { path: String, message: String },
}

#[inline]
fn clamp_prob<S: Scalar>(p: S) -> S {
    p.clamp_to(PROB_EPS, 1.0 - PROB_EPS)
}

/// A Bernoulli random field over (position, step).
pub trait EventField {
    fn prob<S: Scalar>(&self, pos: [S; 2], step: usize) -> S;

    fn logodds<S: Scalar>(&self, pos: [S; 2], step: usize) -> S {
        self.prob(pos, step).logit()
    }
}

/// Same probability everywhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantField {
    p: f64,
}

impl ConstantField {
    pub fn new(p: f64) -> Result<Self, FieldError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(FieldError::Range {
                name: "p",
                requirement: "in [0, 1]",
                value: p,
            });
        }
        Ok(ConstantField {
            p: p.clamp(PROB_EPS, 1.0 - PROB_EPS),
        })
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

impl EventField for ConstantField {
    fn prob<S: Scalar>(&self, _pos: [S; 2], _step: usize) -> S {
        S::from_f64(self.p)
    }
}

fn check_detection_params(r_d: f64, p_d: f64) -> Result<(), FieldError> {
    if !r_d.is_finite() || r_d <= 0.0 {
        return Err(FieldError::Range {
            name: "r_d",
            requirement: "positive",
            value: r_d,
        });
    }
    if !(p_d > 0.0 && p_d < 1.0) {
        return Err(FieldError::Range {
            name: "p_d",
            requirement: "in (0, 1)",
            value: p_d,
        });
    }
    Ok(())
}

/// Gaussian-shaped detection likelihood of a target at a known location:
/// `p_d * exp(-|x - z|^2 / (2 r_d^2))`, clamped.
pub fn detection_prob(x: [f64; 2], z: [f64; 2], r_d: f64, p_d: f64) -> Result<f64, FieldError> {
    if x.iter().chain(z.iter()).any(|v| !v.is_finite()) {
        return Err(FieldError::NonFinite("detection_prob"));
    }
    check_detection_params(r_d, p_d)?;
    let d2 = (x[0] - z[0]).powi(2) + (x[1] - z[1]).powi(2);
    Ok(clamp_prob(p_d * (-d2 / (2.0 * r_d * r_d)).exp()))
}

/// Per-step Gaussian belief over a target's planar position.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetBelief {
    pub means: Vec<[f64; 2]>,
    pub covariances: Vec<Matrix2<f64>>,
}

impl TargetBelief {
    /// Stationary belief repeated for `steps` steps.
    pub fn stationary(z: [f64; 2], cov: Matrix2<f64>, steps: usize) -> Self {
        TargetBelief {
            means: vec![z; steps],
            covariances: vec![cov; steps],
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    fn index(&self, step: usize) -> Result<usize, FieldError> {
        if step >= 1 && step <= self.len() {
            Ok(step - 1)
        } else {
            Err(FieldError::Step {
                step,
                len: self.len(),
            })
        }
    }
}

fn is_spd4(m: &Matrix4<f64>) -> bool {
    (m - m.transpose()).abs().max() <= 1e-12 * m.abs().max().max(1.0) && m.cholesky().is_some()
}

/// Linear-Gaussian prediction of a target with state `(px, py, vx, vy)`
/// under a white-acceleration (constant-velocity) model.
///
/// Step 1 is the initial belief; step `t` has been predicted `t - 1` times.
pub fn predict_belief(
    z0: [f64; 2],
    v0: [f64; 2],
    sigma0: Matrix4<f64>,
    q: f64,
    dt: f64,
    steps: usize,
) -> Result<TargetBelief, FieldError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(FieldError::Range {
            name: "dt",
            requirement: "positive",
            value: dt,
        });
    }
    if !(q >= 0.0 && q.is_finite()) {
        return Err(FieldError::Range {
            name: "q",
            requirement: "non-negative",
            value: q,
        });
    }
    if !is_spd4(&sigma0) {
        return Err(FieldError::NotSpd("sigma0"));
    }
    #[rustfmt::skip]
    let transition = Matrix4::new(
        1.0, 0.0, dt, 0.0,
        0.0, 1.0, 0.0, dt,
        0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
    );
    let (a, b, c) = (dt.powi(3) / 3.0, dt.powi(2) / 2.0, dt);
    #[rustfmt::skip]
    let noise = Matrix4::new(
        a, 0.0, b, 0.0,
        0.0, a, 0.0, b,
        b, 0.0, c, 0.0,
        0.0, b, 0.0, c,
    ) * q;

    let mut mean = Vector4::new(z0[0], z0[1], v0[0], v0[1]);
    let mut cov = sigma0;
    let mut belief = TargetBelief {
        means: Vec::with_capacity(steps),
        covariances: Vec::with_capacity(steps),
    };
    for _ in 0..steps {
        belief.means.push([mean[0], mean[1]]);
        belief
            .covariances
            .push(cov.fixed_view::<2, 2>(0, 0).into_owned());
        mean = transition * mean;
        cov = transition * cov * transition.transpose() + noise;
        cov = (cov + cov.transpose()) * 0.5;
    }
    Ok(belief)
}

/// Precomputed Gaussian detection kernel for one step:
/// `coef * exp(-0.5 d^T S^-1 d)` with `S = Σ + r_d^2 I`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Kernel {
    mean: [f64; 2],
    // S^-1 = [[a, b], [b, c]]
    a: f64,
    b: f64,
    c: f64,
    coef: f64,
}

fn kernel(mean: [f64; 2], cov: &Matrix2<f64>, r_d: f64, peak: f64) -> Result<Kernel, FieldError> {
    let s = cov + Matrix2::identity() * (r_d * r_d);
    let det = s.determinant();
    let inv = s
        .try_inverse()
        .filter(|_| det > 0.0 && det.is_finite())
        .ok_or(FieldError::NotSpd("covariance + r_d^2 I"))?;
    Ok(Kernel {
        mean,
        a: inv[(0, 0)],
        b: 0.5 * (inv[(0, 1)] + inv[(1, 0)]),
        c: inv[(1, 1)],
        // 2π r² · N(x; z̄, S) = r² / sqrt(det S) · exp(-q/2)
        coef: peak * r_d * r_d / det.sqrt(),
    })
}

impl Kernel {
    #[inline]
    fn eval<S: Scalar>(&self, pos: [S; 2]) -> S {
        let dx = pos[0] - self.mean[0];
        let dy = pos[1] - self.mean[1];
        let quad = dx.pow2() * self.a + dx * dy * (2.0 * self.b) + dy.pow2() * self.c;
        clamp_prob((quad * -0.5).exp() * self.coef)
    }
}

/// Marginal detection probability of a target whose position is uncertain:
/// the detection likelihood integrated against the step's Gaussian belief.
pub fn marginal_detection_prob(
    x: [f64; 2],
    belief: &TargetBelief,
    step: usize,
    r_d: f64,
    p_d: f64,
) -> Result<f64, FieldError> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(FieldError::NonFinite("marginal_detection_prob"));
    }
    check_detection_params(r_d, p_d)?;
    let i = belief.index(step)?;
    let k = kernel(belief.means[i], &belief.covariances[i], r_d, p_d)?;
    Ok(k.eval(x))
}

/// Detection field for a target with a Gaussian position belief.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetField {
    belief: TargetBelief,
    r_d: f64,
    p_d: f64,
    kernels: Vec<Kernel>,
}

impl TargetField {
    /// `peak_in_marginal = false` drops the `p_d` factor from the marginal.
    pub fn new(
        belief: TargetBelief,
        r_d: f64,
        p_d: f64,
        peak_in_marginal: bool,
    ) -> Result<Self, FieldError> {
        check_detection_params(r_d, p_d)?;
        if belief.is_empty() {
            return Err(FieldError::Step { step: 1, len: 0 });
        }
        let peak = if peak_in_marginal { p_d } else { 1.0 };
        let kernels = belief
            .means
            .iter()
            .zip(&belief.covariances)
            .map(|(m, c)| kernel(*m, c, r_d, peak))
            .collect::<Result<_, _>>()?;
        Ok(TargetField {
            belief,
            r_d,
            p_d,
            kernels,
        })
    }

    pub fn belief(&self) -> &TargetBelief {
        &self.belief
    }

    pub fn r_d(&self) -> f64 {
        self.r_d
    }

    pub fn p_d(&self) -> f64 {
        self.p_d
    }
}

impl EventField for TargetField {
    fn prob<S: Scalar>(&self, pos: [S; 2], step: usize) -> S {
        // steps past the belief reuse the last prediction
        let i = step.clamp(1, self.kernels.len()) - 1;
        self.kernels[i].eval(pos)
    }
}

/// Row-major occupancy probabilities; row 0 is the minimum-y row.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl OccupancyGrid {
    pub fn new(
        origin: [f64; 2],
        cell_size: f64,
        width: usize,
        height: usize,
        values: Vec<f64>,
    ) -> Result<Self, FieldError> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(FieldError::Range {
                name: "cell_size",
                requirement: "positive",
                value: cell_size,
            });
        }
        if width == 0 || height == 0 || width * height != values.len() {
            return Err(FieldError::Grid {
                line: 0,
                message: format!(
                    "{width}x{height} grid needs {} values, got {}",
                    width * height,
                    values.len()
                ),
            });
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(FieldError::Range {
                name: "occupancy",
                requirement: "in [0, 1]",
                value: *v,
            });
        }
        Ok(OccupancyGrid {
            origin,
            cell_size,
            width,
            height,
            values,
        })
    }

    /// Parse the CSV form: a header line `width,height,cell_size,origin_x,origin_y`
    /// followed by `height` rows of `width` probabilities, minimum y first.
    pub fn from_csv_str(text: &str) -> Result<Self, FieldError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hline, header) = lines.next().ok_or(FieldError::Grid {
            line: 1,
            message: "empty file".into(),
        })?;
        let h: Vec<&str> = header.split(',').map(str::trim).collect();
        if h.len() != 5 {
            return Err(FieldError::Grid {
                line: hline,
                message: "header must be width,height,cell_size,origin_x,origin_y".into(),
            });
        }
        let bad = |what: &str| FieldError::Grid {
            line: hline,
            message: format!("invalid {what}"),
        };
        let width: usize = h[0].parse().map_err(|_| bad("width"))?;
        let height: usize = h[1].parse().map_err(|_| bad("height"))?;
        let cell_size: f64 = h[2].parse().map_err(|_| bad("cell_size"))?;
        let ox: f64 = h[3].parse().map_err(|_| bad("origin_x"))?;
        let oy: f64 = h[4].parse().map_err(|_| bad("origin_y"))?;

        let mut values = Vec::with_capacity(width * height);
        let mut rows = 0;
        for (line, row) in lines {
            let before = values.len();
            for cell in row.split(',') {
                let v: f64 = cell.trim().parse().map_err(|_| FieldError::Grid {
                    line,
                    message: format!("invalid probability `{}`", cell.trim()),
                })?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(FieldError::Grid {
                        line,
                        message: format!("probability {v} outside [0, 1]"),
                    });
                }
                values.push(v);
            }
            if values.len() - before != width {
                return Err(FieldError::Grid {
                    line,
                    message: format!("expected {width} values, got {}", values.len() - before),
                });
            }
            rows += 1;
        }
        if rows != height {
            return Err(FieldError::Grid {
                line: hline,
                message: format!("expected {height} rows, got {rows}"),
            });
        }
        OccupancyGrid::new([ox, oy], cell_size, width, height, values)
    }

    pub fn from_csv_file(path: &Path) -> Result<Self, FieldError> {
        let text = std::fs::read_to_string(path).map_err(|e| FieldError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_csv_str(&text)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = format!(
            "{},{},{},{},{}\n",
            self.width, self.height, self.cell_size, self.origin[0], self.origin[1]
        );
        for row in self.values.chunks(self.width) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    #[inline]
    pub fn value(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.width + col]
    }

    fn value_clamped(&self, col: i64, row: i64) -> f64 {
        let c = col.clamp(0, self.width as i64 - 1) as usize;
        let r = row.clamp(0, self.height as i64 - 1) as usize;
        self.value(c, r)
    }

    pub fn contains(&self, pos: [f64; 2]) -> bool {
        let (x, y) = (pos[0] - self.origin[0], pos[1] - self.origin[1]);
        x >= 0.0
            && y >= 0.0
            && x <= self.width as f64 * self.cell_size
            && y <= self.height as f64 * self.cell_size
    }

    pub fn cell_center(&self, col: usize, row: usize) -> [f64; 2] {
        [
            self.origin[0] + (col as f64 + 0.5) * self.cell_size,
            self.origin[1] + (row as f64 + 0.5) * self.cell_size,
        ]
    }

    /// Euclidean distance from `pos` to the nearest cell (as a square)
    /// whose occupancy exceeds `threshold`; zero inside such a cell.
    pub fn distance_to_occupied(&self, pos: [f64; 2], threshold: f64) -> f64 {
        let mut best = f64::INFINITY;
        let half = 0.5 * self.cell_size;
        for row in 0..self.height {
            for col in 0..self.width {
                if self.value(col, row) <= threshold {
                    continue;
                }
                let c = self.cell_center(col, row);
                let dx = ((pos[0] - c[0]).abs() - half).max(0.0);
                let dy = ((pos[1] - c[1]).abs() - half).max(0.0);
                best = best.min(dx.hypot(dy));
            }
        }
        best
    }
}

/// Bilinear interpolation of the grid with cell centers as nodes; positions
/// outside the grid count as occupied.
pub fn occupancy_prob(grid: &OccupancyGrid, pos: [f64; 2]) -> f64 {
    grid.prob(pos, 1)
}

impl EventField for OccupancyGrid {
    fn prob<S: Scalar>(&self, pos: [S; 2], _step: usize) -> S {
        if !self.contains([pos[0].value(), pos[1].value()]) {
            return S::from_f64(1.0 - PROB_EPS);
        }
        let u = (pos[0] - self.origin[0]) / self.cell_size - 0.5;
        let v = (pos[1] - self.origin[1]) / self.cell_size - 0.5;
        let i0 = u.value().floor();
        let j0 = v.value().floor();
        let fu = u - i0;
        let fv = v - j0;
        let (i0, j0) = (i0 as i64, j0 as i64);
        let v00 = self.value_clamped(i0, j0);
        let v10 = self.value_clamped(i0 + 1, j0);
        let v01 = self.value_clamped(i0, j0 + 1);
        let v11 = self.value_clamped(i0 + 1, j0 + 1);
        // p = v00 + fu (v10 - v00) + fv (v01 - v00) + fu fv (v00 - v10 - v01 + v11)
        let p = fu * (v10 - v00) + fv * (v01 - v00) + fu * fv * (v00 - v10 - v01 + v11) + v00;
        clamp_prob(p)
    }
}

/// A predicate's field.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Constant(ConstantField),
    Target(TargetField),
    Occupancy(OccupancyGrid),
}

impl EventField for Field {
    #[inline]
    fn prob<S: Scalar>(&self, pos: [S; 2], step: usize) -> S {
        match self {
            Field::Constant(f) => f.prob(pos, step),
            Field::Target(f) => f.prob(pos, step),
            Field::Occupancy(f) => f.prob(pos, step),
        }
    }
}

/// Named fields; the index of a name is its predicate id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredicateTable {
    names: Vec<String>,
    fields: Vec<Field>,
}

impl PredicateTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace the field for `name`.
    pub fn insert(&mut self, name: impl Into<String>, field: Field) {
        let name = name.into();
        match self.index_of(&name) {
            Some(i) => self.fields[i] = field,
            None => {
                self.names.push(name);
                self.fields.push(field);
            }
        }
    }

    pub fn with(mut self, name: impl Into<String>, field: Field) -> Self {
        self.insert(name, field);
        self
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Field> {
        self.index_of(name).map(|i| &self.fields[i])
    }

    pub fn field(&self, index: usize) -> &Field {
        &self.fields[index]
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use proptest::prelude::*;
    use nalgebra::Vector2;

    #[test]
    fn detection_at_zero_distance_is_peak() {
        assert_eq!(detection_prob([1.0, 2.0], [1.0, 2.0], 1.5, 0.9).unwrap(), 0.9);
    }

    #[test]
    fn detection_at_one_radius() {
        let p = detection_prob([0.0, 0.0], [0.6, 0.8], 1.0, 0.9).unwrap();
        assert!((p - 0.9 * (-0.5f64).exp()).abs() < 1e-15);
        assert!((p - 0.5458).abs() < 1e-4);
    }

    #[test]
    fn detection_far_away_hits_floor() {
        assert_eq!(detection_prob([1e3, 0.0], [0.0, 0.0], 1.0, 0.9).unwrap(), PROB_EPS);
    }

    #[test]
    fn detection_rejects_bad_input() {
        assert!(detection_prob([f64::NAN, 0.0], [0.0, 0.0], 1.0, 0.9).is_err());
        assert!(detection_prob([0.0, 0.0], [0.0, 0.0], 0.0, 0.9).is_err());
        assert!(detection_prob([0.0, 0.0], [0.0, 0.0], 1.0, 1.0).is_err());
    }

    #[test]
    fn marginal_reduces_to_detection_for_vanishing_covariance() {
        let b = TargetBelief::stationary([3.0, -1.0], Matrix2::zeros(), 4);
        let p = marginal_detection_prob([3.0, -1.0], &b, 2, 1.3, 0.9).unwrap();
        assert!((p - 0.9).abs() < 1e-15);
        let x = [3.5, -0.2];
        let p = marginal_detection_prob(x, &b, 2, 1.3, 0.9).unwrap();
        let d = detection_prob(x, [3.0, -1.0], 1.3, 0.9).unwrap();
        assert!((p - d).abs() < 1e-14);
    }

    #[test]
    fn marginal_at_mean_with_isotropic_covariance() {
        let (r, s2) = (1.2f64, 0.7f64);
        let b = TargetBelief::stationary([0.0, 0.0], Matrix2::identity() * s2, 1);
        let p = marginal_detection_prob([0.0, 0.0], &b, 1, r, 0.9).unwrap();
        assert!((p - 0.9 * r * r / (r * r + s2)).abs() < 1e-14);
    }

    #[test]
    fn marginal_vanishes_for_huge_uncertainty() {
        let b = TargetBelief::stationary([0.0, 0.0], Matrix2::identity() * 1e14, 1);
        assert_eq!(marginal_detection_prob([5.0, 5.0], &b, 1, 1.0, 0.9).unwrap(), PROB_EPS);
    }

    #[test]
    fn marginal_rejects_out_of_range_step() {
        let b = TargetBelief::stationary([0.0, 0.0], Matrix2::identity(), 3);
        assert!(matches!(
            marginal_detection_prob([0.0, 0.0], &b, 4, 1.0, 0.9),
            Err(FieldError::Step { step: 4, len: 3 })
        ));
    }

    /// Trapezoid quadrature of the (unclamped) detection kernel against
    /// N(mean, cov), in whitened coordinates.
    fn quadrature_marginal(x: [f64; 2], mean: [f64; 2], cov: Matrix2<f64>, r: f64, p_d: f64) -> f64 {
        let l = cov.cholesky().unwrap().l();
        let (n, lim) = (600usize, 9.0f64);
        let h = 2.0 * lim / n as f64;
        let phi = |w: f64| (-0.5 * w * w).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut total = 0.0;
        for i in 0..=n {
            let w1 = -lim + i as f64 * h;
            let c1 = if i == 0 || i == n { 0.5 } else { 1.0 };
            for j in 0..=n {
                let w2 = -lim + j as f64 * h;
                let c2 = if j == 0 || j == n { 0.5 } else { 1.0 };
                let z = Vector2::new(mean[0], mean[1]) + l * Vector2::new(w1, w2);
                let d2 = (x[0] - z[0]).powi(2) + (x[1] - z[1]).powi(2);
                total += c1 * c2 * phi(w1) * phi(w2) * (-d2 / (2.0 * r * r)).exp();
            }
        }
        p_d * total * h * h
    }

    #[test]
    fn marginal_matches_quadrature_isotropic_at_mean() {
        let (r, s) = (1.0, 0.8);
        let cov = Matrix2::identity() * (s * s);
        let b = TargetBelief::stationary([0.0, 0.0], cov, 1);
        let closed = marginal_detection_prob([0.0, 0.0], &b, 1, r, 0.9).unwrap();
        let quad = quadrature_marginal([0.0, 0.0], [0.0, 0.0], cov, r, 0.9);
        assert!((closed - quad).abs() < 1e-6, "{closed} vs {quad}");
        assert!((closed - 0.9 * r * r / (r * r + s * s)).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn marginal_matches_quadrature(
            sx in 0.1f64..5.0, sy in 0.1f64..5.0, rot in 0.0f64..std::f64::consts::PI,
            r in 0.5f64..3.0, p_d in 0.05f64..0.99,
            mx in -5.0f64..5.0, my in -5.0f64..5.0, ox in -4.0f64..4.0, oy in -4.0f64..4.0,
        ) {
            let rmat = Matrix2::new(rot.cos(), -rot.sin(), rot.sin(), rot.cos());
            let cov = rmat * Matrix2::new(sx * sx, 0.0, 0.0, sy * sy) * rmat.transpose();
            let b = TargetBelief::stationary([mx, my], cov, 1);
            let x = [mx + ox, my + oy];
            let closed = marginal_detection_prob(x, &b, 1, r, p_d).unwrap();
            let quad = quadrature_marginal(x, [mx, my], cov, r, p_d);
            prop_assert!((closed - quad).abs() <= 1e-5, "closed {} quad {}", closed, quad);
            prop_assert!(closed <= p_d + 1e-12);
        }
    }

    fn spd4(scale: f64) -> Matrix4<f64> {
        Matrix4::identity() * scale
    }

    #[test]
    fn stationary_target_keeps_mean_and_covariance() {
        let b = predict_belief([2.0, 3.0], [0.0, 0.0], spd4(0.01), 0.0, 1.0, 20).unwrap();
        for t in 0..20 {
            assert_eq!(b.means[t], [2.0, 3.0]);
        }
        // velocity variance leaks into the position block; make it negligible
        let mut s = spd4(0.01);
        s[(2, 2)] = 1e-300;
        s[(3, 3)] = 1e-300;
        let b = predict_belief([2.0, 3.0], [0.0, 0.0], s, 0.0, 1.0, 20).unwrap();
        for t in 1..20 {
            assert!((b.covariances[t] - b.covariances[0]).abs().max() < 1e-12);
        }
    }

    #[test]
    fn constant_velocity_kinematics() {
        let b = predict_belief([1.0, -1.0], [1.0, 0.0], spd4(0.1), 0.0, 1.0, 10).unwrap();
        for t in 1..=10 {
            let m = b.means[t - 1];
            assert!((m[0] - (1.0 + (t - 1) as f64)).abs() < 1e-12);
            assert!((m[1] + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn process_noise_grows_position_uncertainty() {
        let b = predict_belief([0.0, 0.0], [0.5, 0.2], spd4(0.05), 0.3, 0.5, 30).unwrap();
        let dets: Vec<f64> = b.covariances.iter().map(|c| c.determinant()).collect();
        for w in dets.windows(2) {
            assert!(w[1] > w[0], "{dets:?}");
        }
        // hand-computed first step: P11 = s + dt^2 s + q dt^3 / 3
        let expect = 0.05 + 0.25 * 0.05 + 0.3 * 0.125 / 3.0;
        assert!((b.covariances[1][(0, 0)] - expect).abs() < 1e-14);
    }

    #[test]
    fn predict_rejects_non_spd() {
        let mut s = spd4(1.0);
        s[(0, 0)] = -1.0;
        assert_eq!(
            predict_belief([0.0; 2], [0.0; 2], s, 0.0, 1.0, 3),
            Err(FieldError::NotSpd("sigma0"))
        );
    }

    fn grid_2x1(a: f64, b: f64) -> OccupancyGrid {
        OccupancyGrid::new([0.0, 0.0], 1.0, 2, 1, vec![a, b]).unwrap()
    }

    #[test]
    fn all_ones_grid_is_occupied() {
        let g = OccupancyGrid::new([0.0, 0.0], 0.5, 4, 4, vec![1.0; 16]).unwrap();
        assert_eq!(occupancy_prob(&g, [1.1, 0.3]), 1.0 - PROB_EPS);
    }

    #[test]
    fn interpolation_reproduces_cell_centers() {
        let g = OccupancyGrid::new([-1.0, 2.0], 0.5, 3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        for row in 0..2 {
            for col in 0..3 {
                let c = g.cell_center(col, row);
                assert!((occupancy_prob(&g, c) - g.value(col, row)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn midpoint_between_free_and_occupied() {
        let g = grid_2x1(0.0, 1.0);
        assert!((occupancy_prob(&g, [1.0, 0.5]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn outside_grid_is_occupied() {
        let g = grid_2x1(0.0, 0.0);
        assert_eq!(occupancy_prob(&g, [-0.1, 0.5]), 1.0 - PROB_EPS);
        assert_eq!(occupancy_prob(&g, [1.0, 1.5]), 1.0 - PROB_EPS);
        assert_eq!(occupancy_prob(&g, [1.0, 0.5]), PROB_EPS);
    }

    #[test]
    fn occupancy_is_continuous_across_cell_boundaries() {
        let vals: Vec<f64> = (0..25).map(|i| ((i * 37) % 11) as f64 / 10.0).collect();
        let g = OccupancyGrid::new([0.0, 0.0], 1.0, 5, 5, vals).unwrap();
        for k in 1..5 {
            for y in [0.7, 1.9, 3.3] {
                let b = k as f64;
                let l = occupancy_prob(&g, [b - 1e-9, y]);
                let r = occupancy_prob(&g, [b + 1e-9, y]);
                assert!((l - r).abs() <= 1e-6);
                let l = occupancy_prob(&g, [y, b - 1e-9]);
                let r = occupancy_prob(&g, [y, b + 1e-9]);
                assert!((l - r).abs() <= 1e-6);
                // cell-center lines are where the interpolation stencil switches
                let c = b + 0.5;
                let l = occupancy_prob(&g, [c - 1e-9, y]);
                let r = occupancy_prob(&g, [c + 1e-9, y]);
                assert!((l - r).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn occupancy_gradient_matches_finite_difference() {
        let g = OccupancyGrid::new([0.0, 0.0], 1.0, 3, 3, vec![0.0, 0.2, 0.9, 0.1, 0.5, 0.7, 0.3, 0.3, 1.0]).unwrap();
        let p = [1.3, 1.8];
        let tape = Tape::new();
        let (x, y) = (tape.var(p[0]), tape.var(p[1]));
        let out = g.prob([x, y], 1);
        let grad = tape.gradient(out, &[x, y]).unwrap();
        let h = 1e-6;
        let fx = (occupancy_prob(&g, [p[0] + h, p[1]]) - occupancy_prob(&g, [p[0] - h, p[1]])) / (2.0 * h);
        let fy = (occupancy_prob(&g, [p[0], p[1] + h]) - occupancy_prob(&g, [p[0], p[1] - h])) / (2.0 * h);
        assert!((grad[0] - fx).abs() < 1e-7 && (grad[1] - fy).abs() < 1e-7);
    }

    #[test]
    fn grid_csv_round_trip_and_errors() {
        let g = OccupancyGrid::new([1.5, -2.0], 0.25, 3, 2, vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.125]).unwrap();
        let text = g.to_csv_string();
        assert_eq!(OccupancyGrid::from_csv_str(&text).unwrap(), g);
        assert!(matches!(
            OccupancyGrid::from_csv_str("2,1,1.0,0,0\n0.5\n"),
            Err(FieldError::Grid { line: 2, .. })
        ));
        assert!(matches!(
            OccupancyGrid::from_csv_str("2,1,1.0,0,0\n0.5,1.5\n"),
            Err(FieldError::Grid { line: 2, .. })
        ));
        assert!(OccupancyGrid::from_csv_str("2,2,1.0,0,0\n0.5,0.5\n").is_err());
    }

    #[test]
    fn distance_to_occupied_cells() {
        let g = OccupancyGrid::new([0.0, 0.0], 1.0, 3, 1, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(g.distance_to_occupied([0.5, 0.5], 0.5), 0.0);
        assert!((g.distance_to_occupied([2.5, 0.5], 0.5) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn target_field_clamps_and_matches_free_function() {
        let b = predict_belief([0.0, 0.0], [1.0, 0.0], spd4(0.2), 0.1, 1.0, 5).unwrap();
        let f = TargetField::new(b.clone(), 1.0, 0.8, true).unwrap();
        for step in 1..=5 {
            let x = [step as f64 * 0.7, 0.3];
            let a: f64 = f.prob(x, step);
            let e = marginal_detection_prob(x, &b, step, 1.0, 0.8).unwrap();
            assert_eq!(a, e);
        }
        let far: f64 = f.prob([1e4, 0.0], 1);
        assert_eq!(far, PROB_EPS);
    }

    proptest! {
        #[test]
        fn fields_stay_in_clamped_range(x in -50.0f64..50.0, y in -50.0f64..50.0, step in 1usize..10) {
            let b = predict_belief([0.0, 0.0], [1.0, 1.0], spd4(0.5), 0.2, 1.0, 10).unwrap();
            let f = Field::Target(TargetField::new(b, 2.0, 0.95, true).unwrap());
            let p: f64 = f.prob([x, y], step);
            prop_assert!((PROB_EPS..=1.0 - PROB_EPS).contains(&p));
            let g = Field::Occupancy(OccupancyGrid::new([-10.0, -10.0], 2.0, 10, 10, vec![1.0; 100]).unwrap());
            let p: f64 = g.prob([x, y], step);
            prop_assert!((PROB_EPS..=1.0 - PROB_EPS).contains(&p));
        }
    }
}

//! Real token distances, head-wise distance weighting and the maps that turn
//! weighted distances into multiplicative re-scaling coefficients.
//!
//! The central map is the learnable sigmoid
//!
//! ```text
//! f(x; v) = (1 + e^v) / (1 + e^(v - x))
//! ```
//!
//! with `f(0; v) = 1`, range `(0, 1 + e^v)` and strictly increasing in `x`.
//! Coefficients depend on `|i - j|` only, so the model evaluates the map once
//! per distance ([`CoefficientTable`]) and expands it over the matrix.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};
use crate::tensor::Matrix;

/// Largest value the exponent map may produce.
pub const EXPONENT_CLAMP: f64 = 1e300;

pub const DEFAULT_CLIP_THRESHOLD: f64 = 10.0;

/// `n×n` matrix with entry `(i, j) = |i - j|`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    entries: Matrix,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    /// Distance at `(i, j)` as an index.
    #[inline]
    pub fn offset(&self, i: usize, j: usize) -> usize {
        i.abs_diff(j)
    }
}

pub fn build_distance_matrix(n: usize) -> Result<DistanceMatrix> {
    if n == 0 {
        return Err(argument("distance matrix needs n >= 1"));
    }
    let mut entries = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            entries.set(i, j, i.abs_diff(j) as f64);
        }
    }
    Ok(DistanceMatrix { n, entries })
}

/// Distance matrices keyed by sequence length, safe to share across workers.
#[derive(Debug, Default)]
pub struct DistanceCache {
    by_len: RwLock<HashMap<usize, Arc<DistanceMatrix>>>,
}

impl DistanceCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, n: usize) -> Result<Arc<DistanceMatrix>> {
        if let Some(r) = self.by_len.read().expect("distance cache poisoned").get(&n) {
            return Ok(Arc::clone(r));
        }
        let built = Arc::new(build_distance_matrix(n)?);
        let mut map = self.by_len.write().expect("distance cache poisoned");
        Ok(Arc::clone(map.entry(n).or_insert(built)))
    }

    pub fn cached_lengths(&self) -> usize {
        self.by_len.read().expect("distance cache poisoned").len()
    }
}

/// Per-head distance parameters.
///
/// `w` weights the raw distances (positive prefers long range, negative
/// prefers local context) and `v` shapes the learnable sigmoid. `slope` and
/// `intercept` are only used by [`MappingKind::Linear`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadDistanceParams {
    pub w: f64,
    pub v: f64,
    pub slope: f64,
    pub intercept: f64,
}

impl HeadDistanceParams {
    pub fn new(w: f64, v: f64) -> Self {
        Self {
            w,
            v,
            slope: 1.0,
            intercept: 0.0,
        }
    }

    /// Initial parameters for `heads` heads: signs alternate (`+, -, +, …`),
    /// magnitudes uniform in `[0.1, 1.0]`, `v = 0`.
    pub fn init_heads<R: Rng + ?Sized>(heads: usize, kind: &MappingKind, rng: &mut R) -> Vec<Self> {
        let (slope, intercept) = match *kind {
            MappingKind::Linear { slope, intercept } => (slope, intercept),
            _ => (1.0, 0.0),
        };
        (0..heads)
            .map(|i| {
                let magnitude = rng.gen_range(0.1..=1.0);
                let w = if i % 2 == 0 { magnitude } else { -magnitude };
                Self {
                    w,
                    v: 0.0,
                    slope,
                    intercept,
                }
            })
            .collect()
    }
}

/// How weighted distances are mapped to coefficients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MappingKind {
    #[default]
    LearnableSigmoid,
    Clip {
        threshold: f64,
    },
    /// Initial slope/intercept; the per-head values are trained.
    Linear {
        slope: f64,
        intercept: f64,
    },
    Exponent,
    #[serde(rename = "sigmoid")]
    StandardSigmoid,
}

impl MappingKind {
    pub const NAMES: [&'static str; 5] =
        ["learnable_sigmoid", "clip", "linear", "exponent", "sigmoid"];

    pub fn name(&self) -> &'static str {
        match self {
            MappingKind::LearnableSigmoid => "learnable_sigmoid",
            MappingKind::Clip { .. } => "clip",
            MappingKind::Linear { .. } => "linear",
            MappingKind::Exponent => "exponent",
            MappingKind::StandardSigmoid => "sigmoid",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MappingKind::Clip { threshold } if !(threshold > 0.0 && threshold.is_finite()) => Err(
                argument(format!("clip threshold must be positive, got {threshold}")),
            ),
            MappingKind::Linear { slope, intercept }
                if !(slope.is_finite() && intercept.is_finite()) =>
            {
                Err(argument("linear slope and intercept must be finite"))
            }
            _ => Ok(()),
        }
    }

    /// Value and partial derivatives of the map at one weighted distance.
    pub fn eval(&self, x: f64, p: &HeadDistanceParams) -> MapPoint {
        match *self {
            MappingKind::LearnableSigmoid => {
                let (value, d_x, d_v) = learnable_sigmoid_partials(x, p.v);
                MapPoint {
                    value,
                    d_x,
                    d_v,
                    ..MapPoint::default()
                }
            }
            MappingKind::Clip { threshold } => MapPoint {
                value: x.min(threshold),
                d_x: if x < threshold { 1.0 } else { 0.0 },
                ..MapPoint::default()
            },
            MappingKind::Linear { .. } => MapPoint {
                value: p.slope * x + p.intercept,
                d_x: p.slope,
                d_slope: x,
                d_intercept: 1.0,
                ..MapPoint::default()
            },
            MappingKind::Exponent => {
                let (value, d_x) = exponent(x);
                MapPoint {
                    value,
                    d_x,
                    ..MapPoint::default()
                }
            }
            MappingKind::StandardSigmoid => {
                let s = sigmoid(x);
                MapPoint {
                    value: s,
                    d_x: s * (1.0 - s),
                    ..MapPoint::default()
                }
            }
        }
    }
}

impl fmt::Display for MappingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MappingKind {
    type Err = Error;

    /// Parses a config name; parameterized kinds get their defaults.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learnable_sigmoid" => Ok(MappingKind::LearnableSigmoid),
            "clip" => Ok(MappingKind::Clip {
                threshold: DEFAULT_CLIP_THRESHOLD,
            }),
            "linear" => Ok(MappingKind::Linear {
                slope: 1.0,
                intercept: 0.0,
            }),
            "exponent" => Ok(MappingKind::Exponent),
            "sigmoid" => Ok(MappingKind::StandardSigmoid),
            other => Err(argument(format!(
                "unknown mapping {other:?}; expected one of {}",
                MappingKind::NAMES.join(", ")
            ))),
        }
    }
}

/// A mapped value with its partials w.r.t. the input and the head parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MapPoint {
    pub value: f64,
    pub d_x: f64,
    pub d_v: f64,
    pub d_slope: f64,
    pub d_intercept: f64,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `f(x; v)` for one value.
pub fn learnable_sigmoid(x: f64, v: f64) -> f64 {
    learnable_sigmoid_partials(x, v).0
}

/// `(f, ∂f/∂x, ∂f/∂v)` of the learnable sigmoid.
///
/// Written as `(1 + e^v) σ(x - v)` with a branch on the sign of `x - v`, so
/// nothing overflows while `|v - x| <= 700`.
pub fn learnable_sigmoid_partials(x: f64, v: f64) -> (f64, f64, f64) {
    let z = x - v;
    let (s, one_minus_s) = if z >= 0.0 {
        let e = (-z).exp();
        (1.0 / (1.0 + e), e / (1.0 + e))
    } else {
        let e = z.exp();
        (e / (1.0 + e), 1.0 / (1.0 + e))
    };
    let ev = v.exp();
    let scale = 1.0 + ev;
    // Dividing keeps f(0; v) exactly 1; the product form only serves far tails.
    let value = if -z <= 700.0 {
        scale / (1.0 + (-z).exp())
    } else {
        scale * s
    };
    let d_x = value * one_minus_s;
    let d_v = ev * s - d_x;
    (value, d_x, d_v)
}

fn exponent(x: f64) -> (f64, f64) {
    let e = x.exp();
    if e > EXPONENT_CLAMP {
        (EXPONENT_CLAMP, 0.0)
    } else {
        (e, e)
    }
}

/// `w · R`.
pub fn weight_distances(r: &DistanceMatrix, w: f64) -> Matrix {
    r.entries.scale(w)
}

/// `∂/∂w` of `sum(g ⊙ wR)`, i.e. `sum(g ⊙ R)`.
pub fn weight_distances_backward(r: &DistanceMatrix, grad: &Matrix) -> Result<f64> {
    if grad.shape() != r.entries.shape() {
        return Err(Error::Dimension {
            op: "weight_distances_backward",
            left: r.entries.shape(),
            right: grad.shape(),
        });
    }
    Ok(r.entries
        .as_slice()
        .iter()
        .zip(grad.as_slice())
        .map(|(a, b)| a * b)
        .sum())
}

pub fn map_learnable_sigmoid(x: &Matrix, v: f64) -> Matrix {
    x.map(|xi| learnable_sigmoid(xi, v))
}

/// Returns `(dx, dv)`.
pub fn map_learnable_sigmoid_backward(x: &Matrix, v: f64, grad: &Matrix) -> Result<(Matrix, f64)> {
    check_grad("map_learnable_sigmoid_backward", x, grad)?;
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    let mut dv = 0.0;
    for ((o, &xi), &g) in dx
        .as_mut_slice()
        .iter_mut()
        .zip(x.as_slice())
        .zip(grad.as_slice())
    {
        let (_, fx, fv) = learnable_sigmoid_partials(xi, v);
        *o = g * fx;
        dv += g * fv;
    }
    Ok((dx, dv))
}

pub fn map_clip(x: &Matrix, t: f64) -> Result<Matrix> {
    if t.is_nan() || t <= 0.0 {
        return Err(argument(format!(
            "clip threshold must be positive, got {t}"
        )));
    }
    Ok(x.map(|xi| xi.min(t)))
}

pub fn map_clip_backward(x: &Matrix, t: f64, grad: &Matrix) -> Result<Matrix> {
    check_grad("map_clip_backward", x, grad)?;
    let mut dx = grad.clone();
    for (o, &xi) in dx.as_mut_slice().iter_mut().zip(x.as_slice()) {
        if xi >= t {
            *o = 0.0;
        }
    }
    Ok(dx)
}

pub fn map_linear(x: &Matrix, k: f64, b: f64) -> Matrix {
    x.map(|xi| k * xi + b)
}

/// Returns `(dx, dk, db)`.
pub fn map_linear_backward(x: &Matrix, k: f64, grad: &Matrix) -> Result<(Matrix, f64, f64)> {
    check_grad("map_linear_backward", x, grad)?;
    let dk = x
        .as_slice()
        .iter()
        .zip(grad.as_slice())
        .map(|(a, g)| a * g)
        .sum();
    Ok((grad.scale(k), dk, grad.sum()))
}

/// Element-wise `exp`, clamped at [`EXPONENT_CLAMP`].
pub fn map_exponent(x: &Matrix) -> Matrix {
    let mut clamped = 0usize;
    let out = x.map(|xi| exponent(xi).0);
    for &v in out.as_slice() {
        if v >= EXPONENT_CLAMP {
            clamped += 1;
        }
    }
    if clamped > 0 {
        log::warn!("exponent mapping clamped {clamped} coefficient(s) at {EXPONENT_CLAMP:e}");
    }
    out
}

pub fn map_exponent_backward(x: &Matrix, grad: &Matrix) -> Result<Matrix> {
    check_grad("map_exponent_backward", x, grad)?;
    let mut dx = grad.clone();
    for (o, &xi) in dx.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *o *= exponent(xi).1;
    }
    Ok(dx)
}

pub fn map_standard_sigmoid(x: &Matrix) -> Matrix {
    x.map(sigmoid)
}

pub fn map_standard_sigmoid_backward(x: &Matrix, grad: &Matrix) -> Result<Matrix> {
    check_grad("map_standard_sigmoid_backward", x, grad)?;
    let mut dx = grad.clone();
    for (o, &xi) in dx.as_mut_slice().iter_mut().zip(x.as_slice()) {
        let s = sigmoid(xi);
        *o *= s * (1.0 - s);
    }
    Ok(dx)
}

fn check_grad(op: &'static str, x: &Matrix, grad: &Matrix) -> Result<()> {
    if x.shape() != grad.shape() {
        return Err(Error::Dimension {
            op,
            left: x.shape(),
            right: grad.shape(),
        });
    }
    Ok(())
}

/// `R̂ = f(w·R)` under `kind`, evaluated through the matrix-level maps.
pub fn rescaled_coefficients(
    r: &DistanceMatrix,
    params: &HeadDistanceParams,
    kind: &MappingKind,
) -> Result<Matrix> {
    kind.validate()?;
    let x = weight_distances(r, params.w);
    Ok(match *kind {
        MappingKind::LearnableSigmoid => map_learnable_sigmoid(&x, params.v),
        MappingKind::Clip { threshold } => map_clip(&x, threshold)?,
        MappingKind::Linear { .. } => map_linear(&x, params.slope, params.intercept),
        MappingKind::Exponent => map_exponent(&x),
        MappingKind::StandardSigmoid => map_standard_sigmoid(&x),
    })
}

/// Gradient of `sum(grad ⊙ R̂)` w.r.t. the head's distance parameters.
pub fn rescaled_coefficients_backward(
    r: &DistanceMatrix,
    params: &HeadDistanceParams,
    kind: &MappingKind,
    grad: &Matrix,
) -> Result<HeadDistanceParams> {
    let x = weight_distances(r, params.w);
    let mut out = HeadDistanceParams {
        w: 0.0,
        v: 0.0,
        slope: 0.0,
        intercept: 0.0,
    };
    let dx = match *kind {
        MappingKind::LearnableSigmoid => {
            let (dx, dv) = map_learnable_sigmoid_backward(&x, params.v, grad)?;
            out.v = dv;
            dx
        }
        MappingKind::Clip { threshold } => map_clip_backward(&x, threshold, grad)?,
        MappingKind::Linear { .. } => {
            let (dx, dk, db) = map_linear_backward(&x, params.slope, grad)?;
            out.slope = dk;
            out.intercept = db;
            dx
        }
        MappingKind::Exponent => map_exponent_backward(&x, grad)?,
        MappingKind::StandardSigmoid => map_standard_sigmoid_backward(&x, grad)?,
    };
    out.w = weight_distances_backward(r, &dx)?;
    Ok(out)
}

/// Coefficients `f(w·d)` for every distance `d < len`, with their partials.
#[derive(Clone, Debug)]
pub struct CoefficientTable {
    points: Vec<MapPoint>,
}

impl CoefficientTable {
    pub fn new(len: usize, params: &HeadDistanceParams, kind: &MappingKind) -> Self {
        let points: Vec<MapPoint> = (0..len)
            .map(|d| kind.eval(params.w * d as f64, params))
            .collect();
        if matches!(kind, MappingKind::Exponent) {
            let clamped = points.iter().filter(|p| p.value >= EXPONENT_CLAMP).count();
            if clamped > 0 {
                log::warn!("exponent mapping clamped {clamped} distance(s) at {EXPONENT_CLAMP:e}");
            }
        }
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn value(&self, distance: usize) -> f64 {
        self.points[distance].value
    }

    /// Expands to the `n×n` coefficient matrix over `r`.
    pub fn expand(&self, r: &DistanceMatrix) -> Matrix {
        assert!(r.len() <= self.points.len(), "coefficient table too short");
        let n = r.len();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = self.points[r.offset(i, j)].value;
            }
        }
        out
    }

    /// Adds `grad`, summed per distance, into `per_distance`.
    pub fn accumulate_distance_grads(grad: &Matrix, per_distance: &mut [f64]) {
        let n = grad.rows();
        assert!(per_distance.len() >= n);
        for i in 0..n {
            for (j, g) in grad.row(i).iter().enumerate() {
                per_distance[i.abs_diff(j)] += g;
            }
        }
    }

    /// Parameter gradients from per-distance gradient sums.
    pub fn param_grads(&self, per_distance: &[f64]) -> HeadDistanceParams {
        let mut out = HeadDistanceParams {
            w: 0.0,
            v: 0.0,
            slope: 0.0,
            intercept: 0.0,
        };
        for (d, (p, &g)) in self.points.iter().zip(per_distance).enumerate() {
            out.w += g * p.d_x * d as f64;
            out.v += g * p.d_v;
            out.slope += g * p.d_slope;
            out.intercept += g * p.d_intercept;
        }
        out
    }
}

//! Central finite-difference verification of analytic backward functions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Matrix;
use crate::error::{Error, Result};

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Relative-error floor in the denominator.
const DENOM_FLOOR: f64 = 1e-8;

/// A differentiable map from a list of matrices to one matrix.
///
/// `backward` receives the gradient of a scalar loss with respect to the
/// output and returns one gradient per input, in input order and shape.
pub trait Differentiable {
    fn name(&self) -> String;

    fn forward(&self, inputs: &[Matrix]) -> Result<Matrix>;

    fn backward(&self, inputs: &[Matrix], grad_output: &Matrix) -> Result<Vec<Matrix>>;

    /// Points the caller knows to be non-differentiable (kinks).
    fn is_unreliable(&self, _inputs: &[Matrix], _input: usize, _index: usize) -> bool {
        false
    }
}

/// Adapter turning a pair of closures into a [`Differentiable`].
pub struct ClosureOp<F, B> {
    name: String,
    forward: F,
    backward: B,
}

impl<F, B> ClosureOp<F, B>
where
    F: Fn(&[Matrix]) -> Result<Matrix>,
    B: Fn(&[Matrix], &Matrix) -> Result<Vec<Matrix>>,
{
    pub fn new(name: impl Into<String>, forward: F, backward: B) -> Self {
        Self {
            name: name.into(),
            forward,
            backward,
        }
    }
}

impl<F, B> Differentiable for ClosureOp<F, B>
where
    F: Fn(&[Matrix]) -> Result<Matrix>,
    B: Fn(&[Matrix], &Matrix) -> Result<Vec<Matrix>>,
{
    fn name(&self) -> String {
        self.name.clone()
    }

    fn forward(&self, inputs: &[Matrix]) -> Result<Matrix> {
        (self.forward)(inputs)
    }

    fn backward(&self, inputs: &[Matrix], grad_output: &Matrix) -> Result<Vec<Matrix>> {
        (self.backward)(inputs, grad_output)
    }
}

/// Outcome of one [`gradient_check`] run.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub op: String,
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Entries excluded as kinks.
    pub skipped: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < self.tolerance
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(DENOM_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares `op.backward` against central differences of the scalar
/// `L = sum(probe ⊙ op(inputs))` for a fixed pseudo-random probe.
///
/// Entries where the op reports a kink, or where the one-sided slopes
/// disagree by more than 10%, are counted in `skipped` and not compared.
pub fn gradient_check(
    op: &dyn Differentiable,
    inputs: &[Matrix],
    tolerance: f64,
) -> Result<GradCheckReport> {
    let out = op.forward(inputs)?;
    let probe = probe_for(out.shape());
    let analytic = op.backward(inputs, &probe)?;
    if analytic.len() != inputs.len() {
        return Err(Error::Argument(format!(
            "{}: backward returned {} gradients for {} inputs",
            op.name(),
            analytic.len(),
            inputs.len()
        )));
    }
    for (g, x) in analytic.iter().zip(inputs) {
        if g.shape() != x.shape() {
            return Err(Error::Dimension {
                op: "gradient_check",
                left: x.shape(),
                right: g.shape(),
            });
        }
    }

    let loss = |xs: &[Matrix]| -> Result<f64> {
        let y = op.forward(xs)?;
        Ok(y.as_slice()
            .iter()
            .zip(probe.as_slice())
            .map(|(a, b)| a * b)
            .sum())
    };
    let base = loss(inputs)?;

    let mut report = GradCheckReport {
        op: op.name(),
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
        tolerance,
    };
    let mut work: Vec<Matrix> = inputs.to_vec();
    for (input, grad) in analytic.iter().enumerate() {
        for index in 0..inputs[input].len() {
            if op.is_unreliable(inputs, input, index) {
                report.skipped += 1;
                continue;
            }
            let x0 = inputs[input].as_slice()[index];
            work[input].as_mut_slice()[index] = x0 + FD_STEP;
            let plus = loss(&work)?;
            work[input].as_mut_slice()[index] = x0 - FD_STEP;
            let minus = loss(&work)?;
            work[input].as_mut_slice()[index] = x0;

            let forward_slope = (plus - base) / FD_STEP;
            let backward_slope = (base - minus) / FD_STEP;
            let spread = (forward_slope - backward_slope).abs();
            if spread > 1e-6 && spread > 0.1 * forward_slope.abs().max(backward_slope.abs()) {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = relative_error(grad.as_slice()[index], numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((input, index));
            }
        }
    }
    Ok(report)
}

fn probe_for((rows, cols): (usize, usize)) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9 ^ ((rows as u64) << 20) ^ cols as u64);
    Matrix::random_uniform(rows, cols, -1.0, 1.0, &mut rng)
}

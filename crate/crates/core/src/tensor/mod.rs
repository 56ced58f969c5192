//! Dense row-major `f64` matrices and the differentiable primitives the
//! attention stack is assembled from.
//!
//! Every differentiable operation comes as a pair: a forward function and a
//! `*_backward` function that maps the gradient of the output to gradients of
//! the inputs. Composite layers call these in reverse order; there is no tape.

mod gradcheck;

pub use gradcheck::{
    gradient_check, relative_error, ClosureOp, Differentiable, GradCheckReport, FD_STEP,
};

use rand::Rng;

use crate::error::{Error, Result};

/// Dense 2-D array of `f64` in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 1.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Argument(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Argument(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if rows.iter().any(|r| r.as_ref().len() != cols) {
            return Err(Error::Argument("ragged rows".into()));
        }
        let data = rows
            .iter()
            .flat_map(|r| r.as_ref().iter().copied())
            .collect();
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn scalar(value: f64) -> Self {
        Self::filled(1, 1, value)
    }

    pub fn random_uniform<R: Rng + ?Sized>(
        rows: usize,
        cols: usize,
        low: f64,
        high: f64,
        rng: &mut R,
    ) -> Self {
        let mut m = Self::zeros(rows, cols);
        for x in &mut m.data {
            *x = rng.gen_range(low..high);
        }
        m
    }

    /// Standard-normal entries (Box-Muller).
    pub fn random_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(rows, cols);
        for x in &mut m.data {
            let u1: f64 = 1.0 - rng.gen::<f64>();
            let u2: f64 = rng.gen();
            *x = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|x| x * s)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        check_same_shape("add_assign", self, other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Copies the block `rows r0..r0+nr`, `cols c0..c0+nc`.
    pub fn block(&self, r0: usize, nr: usize, c0: usize, nc: usize) -> Matrix {
        assert!(r0 + nr <= self.rows && c0 + nc <= self.cols);
        let mut out = Matrix::zeros(nr, nc);
        for i in 0..nr {
            let src = &self.data[(r0 + i) * self.cols + c0..(r0 + i) * self.cols + c0 + nc];
            out.row_mut(i).copy_from_slice(src);
        }
        out
    }

    /// Writes `src` into the block starting at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, src: &Matrix) {
        assert!(r0 + src.rows <= self.rows && c0 + src.cols <= self.cols);
        for i in 0..src.rows {
            let dst = (r0 + i) * self.cols + c0;
            self.data[dst..dst + src.cols].copy_from_slice(src.row(i));
        }
    }

    fn zip_with(
        &self,
        other: &Matrix,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix> {
        check_same_shape(op, self, other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub(crate) fn view(&self) -> View<'_> {
        View {
            data: &self.data,
            rows: self.rows,
            cols: self.cols,
            rs: self.cols,
            cs: 1,
        }
    }

    pub(crate) fn view_t(&self) -> View<'_> {
        View {
            data: &self.data,
            rows: self.cols,
            cols: self.rows,
            rs: 1,
            cs: self.cols,
        }
    }

    pub(crate) fn view_mut(&mut self) -> ViewMut<'_> {
        ViewMut {
            rows: self.rows,
            cols: self.cols,
            rs: self.cols,
            cs: 1,
            data: &mut self.data,
        }
    }
}

fn check_same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

/// Strided read-only operand for [`gemm`].
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> View<'a> {
    fn last_index(&self) -> usize {
        (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
    }
}

pub(crate) struct ViewMut<'a> {
    data: &'a mut [f64],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

/// `c = alpha * a * b + beta * c`. `c` is not read when `beta == 0`.
pub(crate) fn gemm(alpha: f64, a: View<'_>, b: View<'_>, beta: f64, c: ViewMut<'_>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!((a.rows, b.cols), (c.rows, c.cols), "gemm output shape");
    assert!(a.last_index() < a.data.len());
    assert!(b.last_index() < b.data.len());
    assert!((c.rows - 1) * c.rs + (c.cols - 1) * c.cs < c.data.len());
    // SAFETY: the asserts above bound every index dgemm touches inside the
    // three slices, and `c` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

fn product(a: View<'_>, b: View<'_>) -> Matrix {
    let mut out = Matrix::zeros(a.rows, b.cols);
    gemm(1.0, a, b, 0.0, out.view_mut());
    out
}

/// `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Dimension {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(product(a.view(), b.view()))
}

/// `a · bᵀ`.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::Dimension {
            op: "matmul_nt",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(product(a.view(), b.view_t()))
}

/// `aᵀ · b`.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::Dimension {
            op: "matmul_tn",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(product(a.view_t(), b.view()))
}

/// Gradients `(g·bᵀ, aᵀ·g)` of `a · b`.
pub fn matmul_backward(a: &Matrix, b: &Matrix, grad: &Matrix) -> Result<(Matrix, Matrix)> {
    if a.cols != b.rows || grad.shape() != (a.rows, b.cols) {
        return Err(Error::Dimension {
            op: "matmul_backward",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok((matmul_nt(grad, b)?, matmul_tn(a, grad)?))
}

/// Softmax of each row, stabilized by subtracting the row maximum.
pub fn row_softmax(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for i in 0..out.rows {
        softmax_in_place(out.row_mut(i));
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

/// Backward of [`row_softmax`] given its output `y`.
pub fn row_softmax_backward(y: &Matrix, grad: &Matrix) -> Result<Matrix> {
    check_same_shape("row_softmax_backward", y, grad)?;
    let mut out = Matrix::zeros(y.rows, y.cols);
    for i in 0..y.rows {
        softmax_backward_row(y.row(i), grad.row(i), out.row_mut(i));
    }
    Ok(out)
}

pub(crate) fn softmax_backward_row(y: &[f64], g: &[f64], out: &mut [f64]) {
    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
    for ((o, &yi), &gi) in out.iter_mut().zip(y).zip(g) {
        *o = yi * (gi - dot);
    }
}

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes the gradient where `x > 0`; the subgradient at 0 is 0.
pub fn relu_backward(x: &Matrix, grad: &Matrix) -> Result<Matrix> {
    x.zip_with(grad, "relu_backward", |v, g| if v > 0.0 { g } else { 0.0 })
}

/// Hadamard product.
pub fn elementwise_mul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.zip_with(b, "elementwise_mul", |x, y| x * y)
}

pub fn elementwise_mul_backward(a: &Matrix, b: &Matrix, grad: &Matrix) -> Result<(Matrix, Matrix)> {
    Ok((elementwise_mul(grad, b)?, elementwise_mul(grad, a)?))
}

/// Adds a `1×cols` row to every row of `x`.
pub fn add_row(x: &Matrix, row: &Matrix) -> Result<Matrix> {
    if row.rows != 1 || row.cols != x.cols {
        return Err(Error::Dimension {
            op: "add_row",
            left: x.shape(),
            right: row.shape(),
        });
    }
    let mut out = x.clone();
    for i in 0..out.rows {
        for (o, b) in out.row_mut(i).iter_mut().zip(&row.data) {
            *o += b;
        }
    }
    Ok(out)
}

/// Column sums, the gradient of a broadcast row.
pub fn column_sums(grad: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, grad.cols);
    for i in 0..grad.rows {
        for (o, g) in out.data.iter_mut().zip(grad.row(i)) {
            *o += g;
        }
    }
    out
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Values kept from a layer-norm forward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache {
    /// Normalized input before the affine map.
    pub normalized: Matrix,
    pub inv_std: Vec<f64>,
}

/// Row-wise normalization to zero mean and unit variance, then `gain`/`bias`.
pub fn layer_norm(x: &Matrix, gain: &Matrix, bias: &Matrix) -> Result<Matrix> {
    layer_norm_forward(x, gain, bias).map(|(y, _)| y)
}

pub fn layer_norm_forward(
    x: &Matrix,
    gain: &Matrix,
    bias: &Matrix,
) -> Result<(Matrix, LayerNormCache)> {
    for p in [gain, bias] {
        if p.shape() != (1, x.cols) {
            return Err(Error::Dimension {
                op: "layer_norm",
                left: x.shape(),
                right: p.shape(),
            });
        }
    }
    let n = x.cols as f64;
    let mut normalized = Matrix::zeros(x.rows, x.cols);
    let mut y = Matrix::zeros(x.rows, x.cols);
    let mut inv_std = Vec::with_capacity(x.rows);
    for i in 0..x.rows {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(inv);
        let xn = normalized.row_mut(i);
        for (o, v) in xn.iter_mut().zip(row) {
            *o = (v - mean) * inv;
        }
        let xn = normalized.row(i);
        for (j, o) in y.row_mut(i).iter_mut().enumerate() {
            *o = xn[j] * gain.data[j] + bias.data[j];
        }
    }
    Ok((
        y,
        LayerNormCache {
            normalized,
            inv_std,
        },
    ))
}

/// Returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &Matrix,
    grad: &Matrix,
) -> Result<(Matrix, Matrix, Matrix)> {
    check_same_shape("layer_norm_backward", &cache.normalized, grad)?;
    let (rows, cols) = grad.shape();
    let n = cols as f64;
    let mut dx = Matrix::zeros(rows, cols);
    let mut dgain = Matrix::zeros(1, cols);
    let dbias = column_sums(grad);
    let mut dxn = vec![0.0; cols];
    for i in 0..rows {
        let xn = cache.normalized.row(i);
        let g = grad.row(i);
        for j in 0..cols {
            dgain.data[j] += g[j] * xn[j];
            dxn[j] = g[j] * gain.data[j];
        }
        let mean_dxn = dxn.iter().sum::<f64>() / n;
        let mean_dxn_xn = dxn.iter().zip(xn).map(|(a, b)| a * b).sum::<f64>() / n;
        let inv = cache.inv_std[i];
        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
            *o = inv * (dxn[j] - mean_dxn - xn[j] * mean_dxn_xn);
        }
    }
    Ok((dx, dgain, dbias))
}

/// `1×cols` row of column means.
pub fn mean_pool_rows(x: &Matrix) -> Matrix {
    column_sums(x).scale(1.0 / x.rows as f64)
}

pub fn mean_pool_rows_backward(rows: usize, grad: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(rows, grad.cols);
    let s = 1.0 / rows as f64;
    for i in 0..rows {
        for (o, g) in out.row_mut(i).iter_mut().zip(&grad.data) {
            *o = g * s;
        }
    }
    out
}

/// `-log softmax(logits)[label]` for a `1×C` row of logits.
pub fn softmax_cross_entropy(logits: &Matrix, label: usize) -> Result<f64> {
    check_logits(logits, label)?;
    let row = logits.row(0);
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(lse - row[label])
}

/// `softmax(logits) - one_hot(label)`.
pub fn softmax_cross_entropy_backward(logits: &Matrix, label: usize) -> Result<Matrix> {
    check_logits(logits, label)?;
    let mut g = row_softmax(logits);
    g.data[label] -= 1.0;
    Ok(g)
}

fn check_logits(logits: &Matrix, label: usize) -> Result<()> {
    if logits.rows != 1 {
        return Err(Error::Argument(format!(
            "cross entropy expects a 1xC row, got {:?}",
            logits.shape()
        )));
    }
    if label >= logits.cols {
        return Err(Error::Index {
            what: "class label",
            index: label,
            bound: logits.cols,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_cases() {
        let x = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&Matrix::identity(2), &x).unwrap(), x);
        let y = matmul(&m(&[&[1.0, 2.0]]), &m(&[&[3.0], &[4.0]])).unwrap();
        assert_eq!(y, Matrix::scalar(11.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)"), "{msg}");
        assert!(matches!(
            err,
            Error::Dimension {
                left: (2, 3),
                right: (2, 3),
                ..
            }
        ));
    }

    #[test]
    fn transposed_products_match_explicit_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Matrix::random_normal(4, 3, &mut rng);
        let b = Matrix::random_normal(5, 3, &mut rng);
        let c = Matrix::random_normal(4, 2, &mut rng);
        let nt = matmul_nt(&a, &b).unwrap();
        assert!(nt.max_abs_diff(&matmul(&a, &b.transpose()).unwrap()) < 1e-14);
        let tn = matmul_tn(&a, &c).unwrap();
        assert!(tn.max_abs_diff(&matmul(&a.transpose(), &c).unwrap()) < 1e-14);
    }

    #[test]
    fn softmax_uniform_and_overflow_safe() {
        let y = row_softmax(&m(&[&[0.0, 0.0, 0.0]]));
        for v in y.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let y = row_softmax(&m(&[&[1000.0, 1000.0]]));
        assert_eq!(y.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn relu_cases() {
        assert_eq!(relu(&m(&[&[-1.0, 0.0, 2.0]])).as_slice(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu(&Matrix::filled(2, 2, -3.0)), Matrix::zeros(2, 2));
        let g = relu_backward(&m(&[&[-1.0, 0.0, 2.0]]), &Matrix::ones(1, 3)).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn hadamard_cases() {
        let a = m(&[&[2.0, 3.0]]);
        assert_eq!(elementwise_mul(&a, &Matrix::ones(1, 2)).unwrap(), a);
        assert_eq!(
            elementwise_mul(&a, &m(&[&[4.0, 5.0]])).unwrap().as_slice(),
            &[8.0, 15.0]
        );
        assert!(matches!(
            elementwise_mul(&a, &Matrix::ones(2, 1)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn layer_norm_constant_row_and_moments() {
        let y = layer_norm(
            &Matrix::filled(1, 4, 3.5),
            &Matrix::ones(1, 4),
            &Matrix::zeros(1, 4),
        )
        .unwrap();
        assert_eq!(y, Matrix::zeros(1, 4));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Matrix::random_normal(3, 8, &mut rng).scale(4.0);
        let (_, cache) = layer_norm_forward(&x, &Matrix::ones(1, 8), &Matrix::zeros(1, 8)).unwrap();
        for i in 0..3 {
            let row = cache.normalized.row(i);
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-4);
        }
        assert!(layer_norm(&x, &Matrix::ones(1, 7), &Matrix::zeros(1, 8)).is_err());
    }

    #[test]
    fn mean_pool_cases() {
        let x = m(&[&[1.0, 2.0, 3.0]]);
        assert_eq!(mean_pool_rows(&x), x);
        assert_eq!(
            mean_pool_rows(&m(&[&[0.0, 2.0], &[4.0, 6.0]])).as_slice(),
            &[2.0, 4.0]
        );
    }

    #[test]
    fn cross_entropy_cases() {
        let loss = softmax_cross_entropy(&Matrix::zeros(1, 4), 2).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        let loss = softmax_cross_entropy(&m(&[&[10.0, -10.0]]), 0).unwrap();
        assert!(loss > 0.0 && (loss - 2.061e-9).abs() < 1e-11, "{loss}");
        assert!(matches!(
            softmax_cross_entropy(&Matrix::zeros(1, 3), 3),
            Err(Error::Index {
                index: 3,
                bound: 3,
                ..
            })
        ));
    }

    #[test]
    fn block_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Matrix::random_normal(5, 6, &mut rng);
        let b = x.block(1, 3, 2, 4);
        let mut y = Matrix::zeros(5, 6);
        y.set_block(1, 2, &b);
        assert_eq!(y.get(2, 3), x.get(2, 3));
        assert_eq!(y.get(0, 0), 0.0);
    }
}

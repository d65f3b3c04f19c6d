//! Dense real matrices, 4-D convolution kernels, tensor unfolding and a
//! one-sided Jacobi singular value decomposition.
//!
//! Everything downstream assumes matrices are oriented so that `cols <= rows`;
//! [`Matrix::oriented`] and [`unfold`] enforce that.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix dimensions must be positive, got {rows}x{cols}")]
    EmptyShape { rows: usize, cols: usize },
    #[error("data length {actual} does not match shape (expected {expected})")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite entry at flat index {index}")]
    NonFinite { index: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("SVD did not converge after {sweeps} sweeps")]
    NonConvergence { sweeps: usize },
}

/// Row-major dense `f64` matrix with finite entries.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{})", self.rows, self.cols)?;
        if self.data.len() <= 64 {
            for r in 0..self.rows {
                write!(f, "\n  {:?}", self.row(r))?;
            }
        }
        Ok(())
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::EmptyShape { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(LinalgError::LengthMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite { index });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from `f(row, col)`. Panics on a zero dimension or a
    /// non-finite value, so it is meant for tests and internal fixtures.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, data).expect("from_fn produced an invalid matrix")
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |_, _| 0.0)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        Self::from_fn(n, n, |r, c| if r == c { values[r] } else { 0.0 })
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut data = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    /// Transposes when `cols > rows`, so the result always has `cols <= rows`.
    pub fn oriented(self) -> Matrix {
        if self.cols > self.rows {
            self.transpose()
        } else {
            self
        }
    }

    pub fn is_oriented(&self) -> bool {
        self.cols <= self.rows
    }

    pub fn scaled(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = vec![0.0; self.rows * other.cols];
        for r in 0..self.rows {
            let out_row = &mut out[r * other.cols..(r + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for (o, b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix {
            rows: self.rows,
            cols: other.cols,
            data: out,
        })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.shape() != other.shape() {
            return Err(LinalgError::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `trace(selfᵀ · other)`, i.e. the entrywise inner product.
    pub fn trace_inner(&self, other: &Matrix) -> Result<f64, LinalgError> {
        if self.shape() != other.shape() {
            return Err(LinalgError::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }
}

/// Convolution kernel `h × w × n_in × n_out`, row-major with `n_out` fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor4D {
    h: usize,
    w: usize,
    n_in: usize,
    n_out: usize,
    data: Vec<f64>,
}

impl Tensor4D {
    pub fn new(h: usize, w: usize, n_in: usize, n_out: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        let expected = h * w * n_in * n_out;
        if expected == 0 {
            return Err(LinalgError::EmptyShape {
                rows: h * w,
                cols: n_in * n_out,
            });
        }
        if data.len() != expected {
            return Err(LinalgError::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite { index });
        }
        Ok(Self {
            h,
            w,
            n_in,
            n_out,
            data,
        })
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.h, self.w, self.n_in, self.n_out]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        ((i * self.w + j) * self.n_in + k) * self.n_out + l
    }

    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[self.index(i, j, k, l)]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Which channel axis of a convolution kernel becomes the matrix columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnfoldMode {
    /// Mode-3: columns are input channels, `(h·w·n_out) × n_in`.
    InputChannel,
    /// Mode-4: columns are output channels, `(h·w·n_in) × n_out`.
    OutputChannel,
}

impl UnfoldMode {
    pub const BOTH: [UnfoldMode; 2] = [UnfoldMode::InputChannel, UnfoldMode::OutputChannel];

    pub fn label(self) -> &'static str {
        match self {
            UnfoldMode::InputChannel => "mode3",
            UnfoldMode::OutputChannel => "mode4",
        }
    }
}

/// Matricizes a kernel along `mode`, then orients the result so `cols <= rows`.
pub fn unfold(t: &Tensor4D, mode: UnfoldMode) -> Matrix {
    let [h, w, n_in, n_out] = t.dims();
    let (rows, cols) = match mode {
        UnfoldMode::InputChannel => (h * w * n_out, n_in),
        UnfoldMode::OutputChannel => (h * w * n_in, n_out),
    };
    let mut data = vec![0.0; rows * cols];
    for i in 0..h {
        for j in 0..w {
            let spatial = i * w + j;
            for k in 0..n_in {
                for l in 0..n_out {
                    let v = t.get(i, j, k, l);
                    let (r, c) = match mode {
                        UnfoldMode::InputChannel => (spatial * n_out + l, k),
                        UnfoldMode::OutputChannel => (spatial * n_in + k, l),
                    };
                    data[r * cols + c] = v;
                }
            }
        }
    }
    Matrix { rows, cols, data }.oriented()
}

/// Thin SVD: `U` is `rows × k`, `V` is `cols × k` with `k = min(rows, cols)`.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub singular_values: Vec<f64>,
    pub left_vectors: Matrix,
    pub right_vectors: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let u = &self.left_vectors;
        let v = &self.right_vectors;
        let k = self.singular_values.len();
        Matrix::from_fn(u.rows(), v.rows(), |r, c| {
            (0..k)
                .map(|j| u.get(r, j) * self.singular_values[j] * v.get(c, j))
                .sum()
        })
    }
}

const MAX_SWEEPS: usize = 80;

/// Singular value decomposition by one-sided (Hestenes) Jacobi rotations.
///
/// Deterministic for a given input. Singular values come back in descending
/// order; left vectors belonging to zero singular values are completed to an
/// orthonormal set.
pub fn svd(m: &Matrix) -> Result<SvdResult, LinalgError> {
    if m.cols > m.rows {
        let t = svd(&m.transpose())?;
        return Ok(SvdResult {
            singular_values: t.singular_values,
            left_vectors: t.right_vectors,
            right_vectors: t.left_vectors,
        });
    }
    let (rows, cols) = m.shape();

    // column-major working copies
    let mut a: Vec<Vec<f64>> = (0..cols).map(|c| (0..rows).map(|r| m.get(r, c)).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|c| (0..cols).map(|r| if r == c { 1.0 } else { 0.0 }).collect())
        .collect();

    let tol = f64::EPSILON;
    let mut converged = cols < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..cols - 1 {
            for q in p + 1..cols {
                let (alpha, beta, gamma) = {
                    let (ap, aq) = (&a[p], &a[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for (x, y) in ap.iter().zip(aq) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    (alpha, beta, gamma)
                };
                if alpha == 0.0 || beta == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut a, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(LinalgError::NonConvergence { sweeps: MAX_SWEEPS });
    }

    let norms: Vec<f64> = a
        .iter()
        .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let largest = norms[order[0]];
    let zero_cut = largest * f64::EPSILON * rows as f64;
    let mut singular_values = Vec::with_capacity(cols);
    let mut u_cols: Vec<Option<Vec<f64>>> = Vec::with_capacity(cols);
    let mut v_cols = Vec::with_capacity(cols);
    for &j in &order {
        let sigma = norms[j];
        if sigma > zero_cut && sigma > 0.0 {
            u_cols.push(Some(a[j].iter().map(|x| x / sigma).collect()));
            singular_values.push(sigma);
        } else {
            u_cols.push(None);
            singular_values.push(if sigma > 0.0 { sigma } else { 0.0 });
        }
        v_cols.push(v[j].clone());
    }
    let u_cols = complete_orthonormal(u_cols, rows);

    let left_vectors = Matrix::from_fn(rows, cols, |r, c| u_cols[c][r]);
    let right_vectors = Matrix::from_fn(cols, cols, |r, c| v_cols[c][r]);
    Ok(SvdResult {
        singular_values,
        left_vectors,
        right_vectors,
    })
}

pub fn singular_values(m: &Matrix) -> Result<Vec<f64>, LinalgError> {
    svd(m).map(|r| r.singular_values)
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let (cp, cq) = (&mut head[p], &mut tail[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Fills `None` slots with unit vectors orthogonal to every other column.
fn complete_orthonormal(cols: Vec<Option<Vec<f64>>>, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = cols.iter().flatten().cloned().collect();
    let mut next_axis = 0;
    cols.into_iter()
        .map(|col| match col {
            Some(c) => c,
            None => loop {
                assert!(next_axis < dim, "ran out of axes completing the basis");
                let mut cand = vec![0.0; dim];
                cand[next_axis] = 1.0;
                next_axis += 1;
                for _ in 0..2 {
                    for b in &basis {
                        let dot: f64 = cand.iter().zip(b).map(|(x, y)| x * y).sum();
                        cand.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
                    }
                }
                let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.5 {
                    cand.iter_mut().for_each(|x| *x /= norm);
                    basis.push(cand.clone());
                    break cand;
                }
            },
        })
        .collect()
}

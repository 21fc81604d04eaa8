//! Dense row-major `f64` matrices, norm re-projection and seeded sampling.
//!
//! Minibatches are stored one sample per row, so a layer with weights `W`
//! (`out x in`) maps a batch `Z` (`batch x in`) to `Z Wᵀ` (`batch x out`).

mod rng;

pub use rng::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::new",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
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

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(
                    "Matrix::from_rows",
                    format!("row {i} has {} entries, expected {cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// A single-row matrix.
    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let cols = self.cols;
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, and a zero-column matrix has no data anyway
        self.data
            .chunks_exact(self.cols.max(1))
            .take(if self.cols == 0 { 0 } else { self.rows })
    }

    /// Copies the selected rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn map_in_place(&mut self, f: impl Fn(f64) -> f64) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }

    /// Element-wise combination of two equally shaped matrices.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_shape(other, "zip_map")?;
        Ok(Self {
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

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Self) -> Result<()> {
        self.check_same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Adds `bias` to every row.
    pub fn add_row_broadcast(&mut self, bias: &[f64]) -> Result<()> {
        if bias.len() != self.cols {
            return Err(Error::shape(
                "add_row_broadcast",
                format!("bias of length {} for {} columns", bias.len(), self.cols),
            ));
        }
        for row in self.data.chunks_exact_mut(self.cols.max(1)) {
            for (v, &b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        Ok(())
    }

    /// Sum of each column (the batch total of a `batch x width` matrix).
    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.row_iter() {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        l2_norm(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Frobenius-norm re-projection of the whole matrix, see [`normalize`].
    pub fn normalized(&self, c: f64) -> Self {
        let mut out = self.clone();
        normalize(&mut out.data, c);
        out
    }

    /// Applies [`normalize`] to every row independently.
    pub fn normalize_rows(&mut self, c: f64) {
        if self.cols == 0 {
            return;
        }
        for row in self.data.chunks_exact_mut(self.cols) {
            normalize(row, c);
        }
    }

    fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                op,
                format!(
                    "{}x{} vs {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        Ok(())
    }
}

pub fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Rescales `delta` onto the ball of radius `c` when it lies outside it:
/// `delta * c / |delta|` if `|delta| >= c`, otherwise `delta` is left untouched.
///
/// `c = +inf` disables the projection.
pub fn normalize(delta: &mut [f64], c: f64) {
    let norm = l2_norm(delta);
    if norm >= c && norm > 0.0 {
        let s = c / norm;
        for v in delta.iter_mut() {
            *v *= s;
        }
        // scaling can overshoot `c` by an ulp; shrinking until the norm is
        // inside the ball also makes the projection idempotent
        let mut after = l2_norm(delta);
        while after > c {
            let s = (c / after).min(1.0 - f64::EPSILON);
            for v in delta.iter_mut() {
                *v *= s;
            }
            after = l2_norm(delta);
        }
    }
}

/// Vector form of [`normalize`], returning a new vector.
pub fn normalized(delta: &[f64], c: f64) -> Vec<f64> {
    let mut out = delta.to_vec();
    normalize(&mut out, c);
    out
}

#[derive(Clone, Copy)]
enum Layout {
    Plain,
    Transposed,
}

fn gemm(a: &Matrix, la: Layout, b: &Matrix, lb: Layout, op: &'static str) -> Result<Matrix> {
    let (m, k, rsa, csa) = match la {
        Layout::Plain => (a.rows, a.cols, a.cols as isize, 1),
        Layout::Transposed => (a.cols, a.rows, 1, a.cols as isize),
    };
    let (kb, n, rsb, csb) = match lb {
        Layout::Plain => (b.rows, b.cols, b.cols as isize, 1),
        Layout::Transposed => (b.cols, b.rows, 1, b.cols as isize),
    };
    if k != kb {
        return Err(Error::shape(
            op,
            format!("inner dimensions {k} and {kb} differ"),
        ));
    }
    let mut out = Matrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return Ok(out);
    }
    // SAFETY: the pointers cover `m*k`, `k*n` and `m*n` contiguous f64 values
    // matching the strides computed above, and `out` does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(out)
}

/// `a · b`
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    gemm(a, Layout::Plain, b, Layout::Plain, "matmul")
}

/// `aᵀ · b`
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    gemm(a, Layout::Transposed, b, Layout::Plain, "matmul_tn")
}

/// `a · bᵀ`
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    gemm(a, Layout::Plain, b, Layout::Transposed, "matmul_nt")
}

/// Cosine similarity of two flat vectors; `None` if either has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Some(dot / (na * nb))
}

/// i.i.d. normal entries; `std = 0` yields the constant matrix `mean`.
pub fn sample_gaussian(
    rng: &mut Rng,
    rows: usize,
    cols: usize,
    mean: f64,
    std: f64,
) -> Result<Matrix> {
    if !(std >= 0.0) || !std.is_finite() || !mean.is_finite() {
        return Err(Error::Argument(format!(
            "gaussian needs finite mean and std >= 0, got mean={mean} std={std}"
        )));
    }
    let mut m = Matrix::zeros(rows, cols);
    for v in &mut m.data {
        // draw even when std == 0 so the stream position does not depend on std
        let z = rng.standard_normal();
        *v = mean + std * z;
    }
    Ok(m)
}

/// i.i.d. entries from `U[-1/sqrt(n_in), 1/sqrt(n_in)]`.
pub fn sample_uniform_fan_in(
    rng: &mut Rng,
    rows: usize,
    cols: usize,
    n_in: usize,
) -> Result<Matrix> {
    if n_in == 0 {
        return Err(Error::Argument("fan-in must be at least 1".into()));
    }
    let bound = 1.0 / (n_in as f64).sqrt();
    let mut m = Matrix::zeros(rows, cols);
    for v in &mut m.data {
        *v = rng.uniform_range(-bound, bound);
    }
    Ok(m)
}

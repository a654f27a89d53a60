//! Dense row-major tensors and the multilinear operators built on them.
//!
//! Element `(i_0, …, i_{N-1})` of a tensor of shape `(I_0, …, I_{N-1})` is stored
//! at flat offset `Σ_k i_k · Π_{m>k} I_m`. Vectorization is therefore the identity
//! on the flat buffer and the mode-0 unfolding is a reshape.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{shape_err, Result, TrlError};

/// An N-order dense tensor of `f64` in row-major layout.
///
/// An empty shape denotes an order-0 tensor (a scalar) holding one value.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// A dense row-major matrix; the order-2 case of [`DenseTensor`].
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return shape_err(format!("dimensions must be positive, got {shape:?}"));
    }
    Ok(())
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        let size: usize = shape.iter().product();
        if size != data.len() {
            return shape_err(format!(
                "shape {shape:?} needs {size} values, got {}",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let size = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; size],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Tensor with i.i.d. standard normal entries scaled by `std`.
    pub fn random_normal<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let size = shape.iter().product();
        let data = (0..size)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let j = self.offset(index);
        self.data[j] = value;
    }

    /// Same data under a new shape of equal size.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Scalar value of an order-0 (or single-element) tensor.
    pub fn as_scalar(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return shape_err(format!("matrix dimensions must be positive, got {rows}x{cols}"));
        }
        if rows * cols != data.len() {
            return shape_err(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return shape_err("ragged rows");
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn column_vector(v: &[f64]) -> Result<Self> {
        Self::new(v.len(), 1, v.to_vec())
    }

    pub fn diag(v: &[f64]) -> Self {
        let n = v.len();
        let mut m = Self::zeros(n, n);
        for (i, &x) in v.iter().enumerate() {
            m.data[i * n + i] = x;
        }
        m
    }

    pub fn random_normal<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// Squared Euclidean norm of every column.
    pub fn column_norms_sq(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.data.chunks_exact(self.cols) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v * v;
            }
        }
        out
    }

    /// Matrix made of the listed columns, in order, duplicates allowed.
    pub fn select_columns(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.rows, idx.len());
        for r in 0..self.rows {
            for (c, &j) in idx.iter().enumerate() {
                out.data[r * idx.len() + c] = self.data[r * self.cols + j];
            }
        }
        out
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn to_tensor(&self) -> DenseTensor {
        DenseTensor {
            shape: vec![self.rows, self.cols],
            data: self.data.clone(),
        }
    }

    pub fn into_tensor(self) -> DenseTensor {
        DenseTensor {
            shape: vec![self.rows, self.cols],
            data: self.data,
        }
    }
}

impl TryFrom<DenseTensor> for Matrix {
    type Error = TrlError;

    fn try_from(t: DenseTensor) -> Result<Self> {
        match t.shape[..] {
            [rows, cols] => Ok(Matrix {
                rows,
                cols,
                data: t.data,
            }),
            _ => shape_err(format!("expected an order-2 tensor, got shape {:?}", t.shape)),
        }
    }
}

fn check_mode(mode: usize, order: usize) -> Result<()> {
    if mode >= order {
        Err(TrlError::InvalidMode { mode, order })
    } else {
        Ok(())
    }
}

/// Mode-`mode` unfolding: an `I_mode × Π_{k≠mode} I_k` matrix whose columns are the
/// mode-`mode` fibers, ordered row-major over the remaining modes.
pub fn unfold(t: &DenseTensor, mode: usize) -> Result<Matrix> {
    check_mode(mode, t.order())?;
    let dim = t.shape[mode];
    let lead: usize = t.shape[..mode].iter().product();
    let tail: usize = t.shape[mode + 1..].iter().product();
    let cols = lead * tail;
    let mut out = vec![0.0; dim * cols];
    for l in 0..lead {
        for i in 0..dim {
            let src = &t.data[(l * dim + i) * tail..(l * dim + i + 1) * tail];
            out[i * cols + l * tail..i * cols + (l + 1) * tail].copy_from_slice(src);
        }
    }
    Matrix::new(dim, cols, out)
}

/// Inverse of [`unfold`].
pub fn fold(m: &Matrix, mode: usize, shape: &[usize]) -> Result<DenseTensor> {
    check_mode(mode, shape.len())?;
    check_shape(shape)?;
    let dim = shape[mode];
    let lead: usize = shape[..mode].iter().product();
    let tail: usize = shape[mode + 1..].iter().product();
    if m.rows != dim || m.cols != lead * tail {
        return shape_err(format!(
            "cannot fold a {}x{} matrix along mode {mode} into shape {shape:?}",
            m.rows, m.cols
        ));
    }
    let cols = m.cols;
    let mut out = vec![0.0; m.data.len()];
    for l in 0..lead {
        for i in 0..dim {
            out[(l * dim + i) * tail..(l * dim + i + 1) * tail]
                .copy_from_slice(&m.data[i * cols + l * tail..i * cols + (l + 1) * tail]);
        }
    }
    DenseTensor::new(shape.to_vec(), out)
}

/// Flattens `t` so that `(i_0, …, i_{N-1})` lands at `Σ_k i_k Π_{m>k} I_m`.
pub fn vectorize(t: &DenseTensor) -> Vec<f64> {
    t.data.clone()
}

/// The n-mode product `t ×_mode m`, computed as `fold(m · unfold(t, mode))`.
pub fn mode_dot(t: &DenseTensor, m: &Matrix, mode: usize) -> Result<DenseTensor> {
    check_mode(mode, t.order())?;
    if m.cols != t.shape[mode] {
        return shape_err(format!(
            "mode-{mode} product needs {} matrix columns, got {}",
            t.shape[mode], m.cols
        ));
    }
    let prod = matmul(m, &unfold(t, mode)?)?;
    let mut shape = t.shape.clone();
    shape[mode] = m.rows;
    fold(&prod, mode, &shape)
}

/// Contraction of the last `n_modes` modes of `x` with the first `n_modes` modes of `w`.
///
/// The result has shape `leading(x) ++ trailing(w)`; when nothing is left over it is
/// an order-0 scalar.
pub fn inner_contract(x: &DenseTensor, w: &DenseTensor, n_modes: usize) -> Result<DenseTensor> {
    if n_modes > x.order() || n_modes > w.order() {
        return shape_err(format!(
            "cannot contract {n_modes} modes of shapes {:?} and {:?}",
            x.shape, w.shape
        ));
    }
    let split_x = x.order() - n_modes;
    if x.shape[split_x..] != w.shape[..n_modes] {
        return shape_err(format!(
            "contracted dims differ: {:?} vs {:?}",
            &x.shape[split_x..],
            &w.shape[..n_modes]
        ));
    }
    let rows: usize = x.shape[..split_x].iter().product();
    let inner: usize = w.shape[..n_modes].iter().product();
    let cols: usize = w.shape[n_modes..].iter().product();
    let mut out = vec![0.0; rows * cols];
    gemm(&x.data, &w.data, &mut out, rows, inner, cols);
    let mut shape = x.shape[..split_x].to_vec();
    shape.extend_from_slice(&w.shape[n_modes..]);
    DenseTensor::new(shape, out)
}

/// Column-wise Khatri–Rao product `U^(0) ⊙ ⋯ ⊙ U^(n)`.
///
/// Column `r` is `u^(0)_r ⊗ ⋯ ⊗ u^(n)_r` with the first factor varying slowest, so
/// `vectorize(kruskal_to_full(λ; U…)) == khatri_rao(U…) · λ`.
pub fn khatri_rao(factors: &[&Matrix]) -> Result<Matrix> {
    let Some(first) = factors.first() else {
        return shape_err("khatri_rao needs at least one factor");
    };
    let r = first.cols;
    if let Some(bad) = factors.iter().find(|f| f.cols != r) {
        return shape_err(format!(
            "khatri_rao factors need equal column counts, got {r} and {}",
            bad.cols
        ));
    }
    let mut acc = (*first).clone();
    for f in &factors[1..] {
        let mut next = Matrix::zeros(acc.rows * f.rows, r);
        for i in 0..acc.rows {
            for j in 0..f.rows {
                let dst = &mut next.data[(i * f.rows + j) * r..(i * f.rows + j + 1) * r];
                for ((d, &a), &b) in dst.iter_mut().zip(acc.row(i)).zip(f.row(j)) {
                    *d = a * b;
                }
            }
        }
        acc = next;
    }
    Ok(acc)
}

// out (m×n) += a (m×k) · b (k×n), all row-major.
pub(crate) fn gemm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            for (o, &b_pj) in out_row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += a_ip * b_pj;
            }
        }
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return shape_err(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        ));
    }
    let mut out = vec![0.0; a.rows * b.cols];
    gemm(&a.data, &b.data, &mut out, a.rows, a.cols, b.cols);
    Matrix::new(a.rows, b.cols, out)
}

pub fn transpose(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.cols, m.rows);
    for r in 0..m.rows {
        for c in 0..m.cols {
            out.data[c * m.rows + r] = m.data[r * m.cols + c];
        }
    }
    out
}

/// Outer product `a ∘ b`, of shape `shape(a) ++ shape(b)`.
pub fn outer(a: &DenseTensor, b: &DenseTensor) -> DenseTensor {
    let data = a
        .data
        .iter()
        .flat_map(|&x| b.data.iter().map(move |&y| x * y))
        .collect();
    let mut shape = a.shape.clone();
    shape.extend_from_slice(&b.shape);
    DenseTensor { shape, data }
}

/// `y ← alpha · x + y`.
pub fn axpy(alpha: f64, x: &DenseTensor, y: &mut DenseTensor) -> Result<()> {
    if x.shape != y.shape {
        return shape_err(format!("axpy shapes differ: {:?} vs {:?}", x.shape, y.shape));
    }
    for (yi, &xi) in y.data.iter_mut().zip(&x.data) {
        *yi += alpha * xi;
    }
    Ok(())
}

pub fn frobenius_norm_sq(t: &DenseTensor) -> f64 {
    t.data.iter().map(|v| v * v).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

//! Dense row-major `f64` tensors and the primitive kernels the energy
//! network is built from.
//!
//! Kernels here are plain functions with no gradient bookkeeping. The
//! [`Tape`] records the same primitives and adds reverse-mode
//! differentiation on top.

mod tape;

pub use tape::{Gradients, NodeId, Tape};

use crate::error::{Error, Result};

/// Epsilon added to the variance inside batch normalization.
pub const BN_EPSILON: f64 = 1e-5;

/// Weight kept on the old running statistic at each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape(format!("dimensions must be >= 1, got {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![0.0; numel]).expect("zeros: invalid shape")
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let mut t = Tensor::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Builds a matrix from nested rows; all rows must share a length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::shape("ragged rows"));
            }
            data.extend_from_slice(row);
        }
        Tensor::matrix(rows.len(), cols, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::shape(format!("item() on tensor of shape {:?}", self.shape)))
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            s => Err(Error::shape(format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[a, b, c] => Ok((a, b, c)),
            s => Err(Error::shape(format!("expected rank 3, got shape {s:?}"))),
        }
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        Ok(Tensor { shape: vec![c, r], data: transpose_raw(&self.data, r, c) })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn transpose_raw(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = data[i * cols + j];
        }
    }
    out
}

/// `c[m×n] = a[m×k] · b[k×n]`.
///
/// Every output element accumulates its products in ascending `k` starting
/// from zero, so results are bit-identical to the textbook triple loop.
/// The main loop keeps a 4×8 tile of `c` in registers across the whole
/// `k` range; ragged edges fall back to a row-at-a-time loop.
///
/// On x86-64 CPUs with AVX2 the same code is compiled with wider vectors.
/// Rust never fuses the multiply and add, so both paths give the same bits.
pub(crate) fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        return unsafe { gemm_avx2(a, b, m, k, n) };
    }
    gemm_portable(a, b, m, k, n)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_avx2(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    gemm_portable(a, b, m, k, n)
}

#[inline(always)]
fn gemm_portable(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    const MR: usize = 4;
    const NR: usize = 8;
    let mut c = vec![0.0; m * n];
    let mut packed = vec![0.0; k * MR];
    let m_full = m - m % MR;
    let n_full = n - n % NR;
    for i0 in (0..m_full).step_by(MR) {
        let rows: [&[f64]; MR] = std::array::from_fn(|r| &a[(i0 + r) * k..(i0 + r + 1) * k]);
        for kk in 0..k {
            for r in 0..MR {
                packed[kk * MR + r] = rows[r][kk];
            }
        }
        for j0 in (0..n_full).step_by(NR) {
            let mut acc = [[0.0f64; NR]; MR];
            for (av, b_row) in packed.chunks_exact(MR).zip(b.chunks_exact(n)) {
                let bv: &[f64; NR] = b_row[j0..j0 + NR].try_into().expect("tile");
                for r in 0..MR {
                    for j in 0..NR {
                        acc[r][j] += av[r] * bv[j];
                    }
                }
            }
            for r in 0..MR {
                c[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR].copy_from_slice(&acc[r]);
            }
        }
        if n_full < n {
            for r in 0..MR {
                gemm_row(rows[r], b, &mut c[(i0 + r) * n..(i0 + r + 1) * n], n, n_full);
            }
        }
    }
    for i in m_full..m {
        gemm_row(&a[i * k..(i + 1) * k], b, &mut c[i * n..(i + 1) * n], n, 0);
    }
    c
}

/// Columns `from..n` of one output row.
#[inline(always)]
fn gemm_row(a_row: &[f64], b: &[f64], c_row: &mut [f64], n: usize, from: usize) {
    for (kk, &av) in a_row.iter().enumerate() {
        let b_row = &b[kk * n + from..(kk + 1) * n];
        for (cj, &bj) in c_row[from..].iter_mut().zip(b_row) {
            *cj += av * bj;
        }
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape, b.shape
        )));
    }
    Ok(Tensor { shape: vec![m, n], data: gemm(&a.data, &b.data, m, k, n) })
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
    }
}

/// Exponential-moving-average batch statistics for one normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    mean: Vec<f64>,
    var: Vec<f64>,
    populated: bool,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats { mean: vec![0.0; channels], var: vec![1.0; channels], populated: false }
    }

    pub fn from_parts(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::shape("running mean/var lengths differ"));
        }
        Ok(RunningStats { mean, var, populated: true })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn is_populated(&self) -> bool {
        self.populated
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    /// Folds a batch's statistics in. The first update copies them verbatim.
    pub fn update(&mut self, batch_mean: &[f64], batch_var: &[f64]) {
        if !self.populated {
            self.mean.copy_from_slice(batch_mean);
            self.var.copy_from_slice(batch_var);
            self.populated = true;
            return;
        }
        for (r, &b) in self.mean.iter_mut().zip(batch_mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
        }
        for (r, &b) in self.var.iter_mut().zip(batch_var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-channel mean and biased (1/B) variance over the rows of `x[B×C]`.
pub(crate) fn channel_moments(x: &[f64], rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; cols];
    for row in x.chunks_exact(cols) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= rows as f64;
    }
    let mut var = vec![0.0; cols];
    for row in x.chunks_exact(cols) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    for s in &mut var {
        *s /= rows as f64;
    }
    (mean, var)
}

/// Batch normalization over the rows of `x[B×C]`.
///
/// In train mode the batch statistics normalize `x` and are folded into
/// `running`; in eval mode `running` must already be populated.
pub fn batch_norm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mode: BnMode,
    running: &mut RunningStats,
) -> Result<Tensor> {
    let (rows, cols) = x.dims2()?;
    if gamma.len() != cols || beta.len() != cols || running.channels() != cols {
        return Err(Error::shape(format!("batch_norm: {cols} channels expected")));
    }
    let (mean, var) = match mode {
        BnMode::Train => {
            let (mean, var) = channel_moments(&x.data, rows, cols);
            running.update(&mean, &var);
            (mean, var)
        }
        BnMode::Eval => {
            if !running.is_populated() {
                return Err(Error::State("eval-mode batch_norm before running stats exist".into()));
            }
            (running.mean.clone(), running.var.clone())
        }
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
    Ok(Tensor {
        shape: x.shape.clone(),
        data: normalize_affine(&x.data, cols, &mean, &inv_std, &gamma.data, &beta.data),
    })
}

pub(crate) fn normalize_affine(
    x: &[f64],
    cols: usize,
    mean: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    beta: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (orow, row) in out.chunks_exact_mut(cols).zip(x.chunks_exact(cols)) {
        let params = mean.iter().zip(inv_std).zip(gamma.iter().zip(beta));
        for ((o, &v), ((&m, &s), (&g, &b))) in orow.iter_mut().zip(row).zip(params) {
            *o = g * ((v - m) * s) + b;
        }
    }
    out
}

/// Mean over the point axis of `x[B×M×C]`, giving `[B×C]`.
pub fn mean_over_axis(x: &Tensor) -> Result<Tensor> {
    let (b, m, c) = x.dims3()?;
    Ok(Tensor { shape: vec![b, c], data: mean_points_raw(&x.data, b, m, c) })
}

pub(crate) fn mean_points_raw(x: &[f64], b: usize, m: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; b * c];
    let mut column = vec![0.0; m];
    for (cloud, acc) in x.chunks_exact(m * c).zip(out.chunks_exact_mut(c)) {
        for (ci, a) in acc.iter_mut().enumerate() {
            for (slot, point) in column.iter_mut().zip(cloud.chunks_exact(c)) {
                *slot = point[ci];
            }
            *a = order_free_sum(&column) / m as f64;
        }
    }
    out
}

/// Sums `values` so that the result depends only on the multiset of values
/// and not on their arrangement.
///
/// Each value is rounded to a fixed-point grid 2^-59 below the largest
/// magnitude and the integers are added exactly, which is associative. Inputs
/// with non-finite values or extreme exponents fall back to a sorted sum.
pub fn order_free_sum(values: &[f64]) -> f64 {
    let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !max.is_finite() || values.iter().any(|v| v.is_nan()) {
        return values.iter().sum();
    }
    if max == 0.0 {
        return 0.0;
    }
    let exp = ((max.to_bits() >> 52) & 0x7ff) as i32 - 1023;
    if !(-900..=900).contains(&exp) {
        let mut sorted = values.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        return sorted.iter().sum();
    }
    let shift = 59 - exp;
    let up = pow2(shift);
    let total: i128 = values.iter().map(|&v| (v * up) as i64 as i128).sum();
    total as f64 * pow2(-shift)
}

fn pow2(e: i32) -> f64 {
    f64::from_bits(((1023 + e) as u64) << 52)
}

/// Elementwise maximum over the point axis of `x[B×M×C]`, giving `[B×C]`.
pub fn max_over_axis(x: &Tensor) -> Result<Tensor> {
    let (b, m, c) = x.dims3()?;
    let (data, _) = max_points_raw(&x.data, b, m, c);
    Ok(Tensor { shape: vec![b, c], data })
}

/// Returns the maxima and, per output element, the flat index of the
/// first point attaining it.
pub(crate) fn max_points_raw(x: &[f64], b: usize, m: usize, c: usize) -> (Vec<f64>, Vec<usize>) {
    let mut out = vec![f64::NEG_INFINITY; b * c];
    let mut arg = vec![0; b * c];
    for bi in 0..b {
        for mi in 0..m {
            let base = (bi * m + mi) * c;
            for ci in 0..c {
                let v = x[base + ci];
                let o = bi * c + ci;
                if v > out[o] || mi == 0 {
                    out[o] = v;
                    arg[o] = base + ci;
                }
            }
        }
    }
    (out, arg)
}

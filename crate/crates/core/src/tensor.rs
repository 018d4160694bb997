//! Dense complex tensors.
//!
//! A [`Tensor`] stores its entries in a flat row-major buffer: for dims
//! `(n_0, ..., n_{r-1})` the entry at index `(i_0, ..., i_{r-1})` lives at
//! offset `((i_0 * n_1 + i_1) * n_2 + ...) * n_{r-1} + i_{r-1}`, i.e. the last
//! leg varies fastest. Checkpoint files serialize this buffer verbatim.
//!
//! Factorizations act on a [`Matricization`], which groups legs into a row
//! multi-index and a column multi-index (each ordered as listed).

use std::cell::Cell;

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type C64 = Complex64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("data length {len} does not match dims {dims:?}")]
    DataLength { dims: Vec<usize>, len: usize },
    #[error("zero-sized leg in dims {0:?}")]
    ZeroDim(Vec<usize>),
    #[error("{labels} leg labels given for a rank-{rank} tensor")]
    LabelCount { labels: usize, rank: usize },
    #[error("duplicate leg label `{0}`")]
    DuplicateLabel(String),
    #[error("leg {leg} out of range for rank {rank}")]
    LegOutOfRange { leg: usize, rank: usize },
    #[error("leg {0} used more than once")]
    RepeatedLeg(usize),
    #[error("contraction pair ({left}, {right}): dimension {left_dim} != {right_dim}")]
    PairMismatch {
        left: usize,
        right: usize,
        left_dim: usize,
        right_dim: usize,
    },
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("invalid permutation {0:?}")]
    BadPermutation(Vec<usize>),
    #[error("reshape from {from:?} to {to:?} changes the element count")]
    Reshape { from: Vec<usize>, to: Vec<usize> },
    #[error("rows {rows:?} and cols {cols:?} do not partition the {rank} legs")]
    BadMatricization {
        rows: Vec<usize>,
        cols: Vec<usize>,
        rank: usize,
    },
    #[error("non-finite entry in input")]
    NonFinite,
    #[error("matrix is not Hermitian (deviation {0:e})")]
    NotHermitian(f64),
    #[error("polar decomposition needs rows >= cols, got {rows}x{cols}")]
    WideMatrix { rows: usize, cols: usize },
    #[error("matrix factorization did not converge")]
    NoConvergence,
    #[error("network: {0}")]
    Network(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

thread_local! {
    static MULTIPLY_ADDS: Cell<u64> = const { Cell::new(0) };
}

/// Per-thread counter of complex multiply-adds performed by [`contract`].
pub mod flops {
    use super::MULTIPLY_ADDS;

    pub fn reset() {
        MULTIPLY_ADDS.with(|c| c.set(0));
    }

    pub fn read() -> u64 {
        MULTIPLY_ADDS.with(|c| c.get())
    }

    pub(crate) fn add(n: u64) {
        MULTIPLY_ADDS.with(|c| c.set(c.get().saturating_add(n)));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<C64>,
    legs: Option<Vec<String>>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<C64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(TensorError::ZeroDim(dims));
        }
        let size: usize = dims.iter().product();
        if size != data.len() {
            return Err(TensorError::DataLength { dims, len: data.len() });
        }
        Ok(Self { dims, data, legs: None })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let size = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: vec![C64::new(0.0, 0.0); size],
            legs: None,
        }
    }

    pub fn scalar(value: C64) -> Self {
        Self {
            dims: vec![],
            data: vec![value],
            legs: None,
        }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> C64) -> Self {
        let mut t = Self::zeros(dims);
        let mut idx = vec![0usize; dims.len()];
        for slot in t.data.iter_mut() {
            *slot = f(&idx);
            increment(&mut idx, dims);
        }
        t
    }

    /// Identity operator on the product space of `dims`, with legs
    /// `(dims..., dims...)`.
    pub fn identity(dims: &[usize]) -> Self {
        let n: usize = dims.iter().product();
        let mut full = dims.to_vec();
        full.extend_from_slice(dims);
        let mut t = Self::zeros(&full);
        for i in 0..n {
            t.data[i * n + i] = C64::new(1.0, 0.0);
        }
        t
    }

    /// Matrix `rows x cols` from a row-major slice.
    pub fn matrix(rows: usize, cols: usize, data: &[C64]) -> Result<Self> {
        Self::new(vec![rows, cols], data.to_vec())
    }

    pub fn with_legs<S: Into<String>>(mut self, legs: Vec<S>) -> Result<Self> {
        let legs: Vec<String> = legs.into_iter().map(Into::into).collect();
        if legs.len() != self.rank() {
            return Err(TensorError::LabelCount {
                labels: legs.len(),
                rank: self.rank(),
            });
        }
        for (i, l) in legs.iter().enumerate() {
            if legs[..i].contains(l) {
                return Err(TensorError::DuplicateLabel(l.clone()));
            }
        }
        self.legs = Some(legs);
        Ok(self)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn legs(&self) -> Option<&[String]> {
        self.legs.as_deref()
    }

    /// Position of the leg with the given label.
    pub fn leg(&self, label: &str) -> Option<usize> {
        self.legs.as_ref()?.iter().position(|l| l == label)
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.dims)
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        idx.iter().zip(self.strides()).map(|(i, s)| i * s).sum()
    }

    pub fn get(&self, idx: &[usize]) -> C64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: C64) {
        let o = self.offset(idx);
        self.data[o] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Reorders legs so that leg `k` of the result is leg `perm[k]` of `self`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::BadPermutation(perm.to_vec()));
        }
        let legs = self.legs.as_ref().map(|l| perm.iter().map(|&p| l[p].clone()).collect());
        if perm.iter().enumerate().all(|(k, &p)| k == p) {
            return Ok(self.clone());
        }
        let new_dims: Vec<usize> = perm.iter().map(|&p| self.dims[p]).collect();
        let old_strides = self.strides();
        let src_strides: Vec<usize> = perm.iter().map(|&p| old_strides[p]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        permute_into(&self.data, &new_dims, &src_strides, &mut data);
        Ok(Tensor {
            dims: new_dims,
            data,
            legs,
        })
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor> {
        let size: usize = dims.iter().product();
        if size != self.data.len() || dims.contains(&0) {
            return Err(TensorError::Reshape {
                from: self.dims.clone(),
                to: dims.to_vec(),
            });
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data: self.data.clone(),
            legs: None,
        })
    }

    pub fn conj(&self) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|z| z.conj()).collect(),
            legs: self.legs.clone(),
        }
    }

    pub fn scale(&self, alpha: C64) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|z| z * alpha).collect(),
            legs: self.legs.clone(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    /// In-place `self += alpha * other`.
    pub fn axpy(&mut self, alpha: C64, other: &Tensor) -> Result<()> {
        if self.dims != other.dims {
            return Err(TensorError::ShapeMismatch(self.dims.clone(), other.dims.clone()));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(C64, C64) -> C64) -> Result<Tensor> {
        if self.dims != other.dims {
            return Err(TensorError::ShapeMismatch(self.dims.clone(), other.dims.clone()));
        }
        Ok(Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            legs: self.legs.clone(),
        })
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.dims, other.dims, "max_abs_diff on different shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// `sum_i conj(self_i) * other_i`, i.e. `Tr(self^dagger other)` for
    /// equally shaped tensors.
    pub fn inner(&self, other: &Tensor) -> C64 {
        assert_eq!(self.dims, other.dims, "inner product of different shapes");
        self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum()
    }

    /// Matrix view for the given leg grouping.
    pub fn to_matrix(&self, m: &Matricization) -> Result<DMatrix<C64>> {
        m.check(self.rank())?;
        let (rows, cols) = m.shape(&self.dims);
        let t = self.permute(&m.permutation())?;
        Ok(DMatrix::from_row_slice(rows, cols, &t.data))
    }

    /// Builds a tensor with the given dims from a matrix whose row-major
    /// flattening is the tensor's buffer.
    pub fn from_matrix(dims: &[usize], mat: &DMatrix<C64>) -> Result<Tensor> {
        let size: usize = dims.iter().product();
        if size != mat.len() {
            return Err(TensorError::DataLength {
                dims: dims.to_vec(),
                len: mat.len(),
            });
        }
        let mut data = Vec::with_capacity(size);
        for r in 0..mat.nrows() {
            for c in 0..mat.ncols() {
                data.push(mat[(r, c)]);
            }
        }
        Tensor::new(dims.to_vec(), data)
    }
}

pub(crate) fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * dims[k + 1];
    }
    s
}

fn increment(idx: &mut [usize], dims: &[usize]) {
    for k in (0..dims.len()).rev() {
        idx[k] += 1;
        if idx[k] < dims[k] {
            return;
        }
        idx[k] = 0;
    }
}

fn permute_into(src: &[C64], dims: &[usize], src_strides: &[usize], out: &mut Vec<C64>) {
    let rank = dims.len();
    if rank == 0 {
        out.push(src[0]);
        return;
    }
    let inner = dims[rank - 1];
    let inner_stride = src_strides[rank - 1];
    let outer: usize = dims[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank - 1];
    let mut base = 0usize;
    for _ in 0..outer {
        if inner_stride == 1 {
            out.extend_from_slice(&src[base..base + inner]);
        } else {
            let mut o = base;
            for _ in 0..inner {
                out.push(src[o]);
                o += inner_stride;
            }
        }
        for k in (0..rank - 1).rev() {
            idx[k] += 1;
            base += src_strides[k];
            if idx[k] < dims[k] {
                break;
            }
            base -= src_strides[k] * dims[k];
            idx[k] = 0;
        }
    }
}

/// Row-major `c = a * b` for an `m x k` and a `k x n` matrix.
pub(crate) fn matmul(a: &[C64], b: &[C64], m: usize, k: usize, n: usize) -> Vec<C64> {
    let mut c = vec![C64::new(0.0, 0.0); m * n];
    flops::add((m * k * n) as u64);
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // SAFETY: Complex<f64> is repr(C) with layout [re, im]; all slices are
    // sized m*k, k*n and m*n with row-major strides.
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            m,
            k,
            n,
            [1.0, 0.0],
            a.as_ptr() as *const [f64; 2],
            k as isize,
            1,
            b.as_ptr() as *const [f64; 2],
            n as isize,
            1,
            [0.0, 0.0],
            c.as_mut_ptr() as *mut [f64; 2],
            n as isize,
            1,
        );
    }
    c
}

/// Contracts `a` and `b` over the given `(leg of a, leg of b)` pairs.
///
/// The result carries the unpaired legs of `a` followed by those of `b`,
/// each in input order.
pub fn contract(a: &Tensor, b: &Tensor, pairs: &[(usize, usize)]) -> Result<Tensor> {
    let mut used_a = vec![false; a.rank()];
    let mut used_b = vec![false; b.rank()];
    for &(la, lb) in pairs {
        if la >= a.rank() {
            return Err(TensorError::LegOutOfRange {
                leg: la,
                rank: a.rank(),
            });
        }
        if lb >= b.rank() {
            return Err(TensorError::LegOutOfRange {
                leg: lb,
                rank: b.rank(),
            });
        }
        if std::mem::replace(&mut used_a[la], true) {
            return Err(TensorError::RepeatedLeg(la));
        }
        if std::mem::replace(&mut used_b[lb], true) {
            return Err(TensorError::RepeatedLeg(lb));
        }
        if a.dims[la] != b.dims[lb] {
            return Err(TensorError::PairMismatch {
                left: la,
                right: lb,
                left_dim: a.dims[la],
                right_dim: b.dims[lb],
            });
        }
    }
    let free_a: Vec<usize> = (0..a.rank()).filter(|&l| !used_a[l]).collect();
    let free_b: Vec<usize> = (0..b.rank()).filter(|&l| !used_b[l]).collect();

    let mut perm_a = free_a.clone();
    perm_a.extend(pairs.iter().map(|p| p.0));
    let mut perm_b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    perm_b.extend(&free_b);

    let m: usize = free_a.iter().map(|&l| a.dims[l]).product();
    let k: usize = pairs.iter().map(|p| a.dims[p.0]).product();
    let n: usize = free_b.iter().map(|&l| b.dims[l]).product();

    let pa = a.permute(&perm_a)?;
    let pb = b.permute(&perm_b)?;
    let data = matmul(&pa.data, &pb.data, m, k, n);

    let mut dims: Vec<usize> = free_a.iter().map(|&l| a.dims[l]).collect();
    dims.extend(free_b.iter().map(|&l| b.dims[l]));
    let legs = match (&a.legs, &b.legs) {
        (Some(la), Some(lb)) => {
            let mut legs: Vec<String> = free_a.iter().map(|&l| la[l].clone()).collect();
            legs.extend(free_b.iter().map(|&l| lb[l].clone()));
            let unique = legs.iter().enumerate().all(|(i, l)| !legs[..i].contains(l));
            unique.then_some(legs)
        }
        _ => None,
    };
    Ok(Tensor { dims, data, legs })
}

/// Grouping of a tensor's legs into matrix rows and columns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Matricization {
    pub row_legs: Vec<usize>,
    pub col_legs: Vec<usize>,
}

impl Matricization {
    pub fn new(row_legs: Vec<usize>, col_legs: Vec<usize>) -> Self {
        Self { row_legs, col_legs }
    }

    /// The first `nrows` legs form the rows, the rest the columns.
    pub fn split(rank: usize, nrows: usize) -> Self {
        Self::new((0..nrows).collect(), (nrows..rank).collect())
    }

    pub fn check(&self, rank: usize) -> Result<()> {
        let mut seen = vec![false; rank];
        for &l in self.row_legs.iter().chain(&self.col_legs) {
            if l >= rank || std::mem::replace(&mut seen[l], true) {
                return Err(self.error(rank));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(self.error(rank));
        }
        Ok(())
    }

    fn error(&self, rank: usize) -> TensorError {
        TensorError::BadMatricization {
            rows: self.row_legs.clone(),
            cols: self.col_legs.clone(),
            rank,
        }
    }

    pub fn permutation(&self) -> Vec<usize> {
        self.row_legs.iter().chain(&self.col_legs).copied().collect()
    }

    pub fn row_dims(&self, dims: &[usize]) -> Vec<usize> {
        self.row_legs.iter().map(|&l| dims[l]).collect()
    }

    pub fn col_dims(&self, dims: &[usize]) -> Vec<usize> {
        self.col_legs.iter().map(|&l| dims[l]).collect()
    }

    pub fn shape(&self, dims: &[usize]) -> (usize, usize) {
        (
            self.row_dims(dims).iter().product(),
            self.col_dims(dims).iter().product(),
        )
    }
}

/// Singular value decomposition of a matricized tensor.
///
/// `u` has dims `row dims ++ [k]`, `v` has dims `col dims ++ [k]` with
/// `k = min(rows, cols)`, so that the matrix view equals
/// `U diag(s) V^dagger`. Singular values are sorted descending; ties keep
/// the solver's order.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Tensor,
    pub s: Vec<f64>,
    pub v: Tensor,
}

pub fn svd(a: &Tensor, m: &Matricization) -> Result<Svd> {
    if !a.is_finite() {
        return Err(TensorError::NonFinite);
    }
    let mat = a.to_matrix(m)?;
    let (u, s, v) = svd_matrix(&mat)?;
    let mut udims = m.row_dims(a.dims());
    udims.push(s.len());
    let mut vdims = m.col_dims(a.dims());
    vdims.push(s.len());
    Ok(Svd {
        u: Tensor::from_matrix(&udims, &u)?,
        s,
        v: Tensor::from_matrix(&vdims, &v)?,
    })
}

/// Thin SVD of a matrix: `(U, s, V)` with `mat = U diag(s) V^dagger`, `s`
/// descending.
pub fn svd_matrix(mat: &DMatrix<C64>) -> Result<(DMatrix<C64>, Vec<f64>, DMatrix<C64>)> {
    if mat.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(TensorError::NonFinite);
    }
    let (rows, cols) = mat.shape();
    let k = rows.min(cols);
    if k == 0 {
        return Ok((DMatrix::zeros(rows, 0), Vec::new(), DMatrix::zeros(cols, 0)));
    }
    let a = faer::Mat::<C64>::from_fn(rows, cols, |i, j| mat[(i, j)]);
    let dec = a.thin_svd().map_err(|_| TensorError::NoConvergence)?;
    let (u, v, sv) = (dec.U(), dec.V(), dec.S().column_vector());
    let s: Vec<f64> = (0..k).map(|i| sv[i].re).collect();
    Ok((
        DMatrix::from_fn(rows, k, |i, j| u[(i, j)]),
        s,
        DMatrix::from_fn(cols, k, |i, j| v[(i, j)]),
    ))
}

/// Unitary (isometric) factor of the polar decomposition of a tall or
/// square matrix: the `V` with orthonormal columns maximizing
/// `Re Tr(V^dagger mat)`.
pub fn polar_matrix(mat: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    if mat.nrows() < mat.ncols() {
        return Err(TensorError::WideMatrix {
            rows: mat.nrows(),
            cols: mat.ncols(),
        });
    }
    let (u, _, w) = svd_matrix(mat)?;
    Ok(u * w.adjoint())
}

/// Polar decomposition `b = V P` of a matricized tensor.
///
/// `V` has dims `row dims ++ col dims` and orthonormal columns; `P` has dims
/// `col dims ++ col dims` and is Hermitian positive semi-definite.
pub fn polar_decompose(b: &Tensor, m: &Matricization) -> Result<(Tensor, Tensor)> {
    if !b.is_finite() {
        return Err(TensorError::NonFinite);
    }
    m.check(b.rank())?;
    let (rows, cols) = m.shape(b.dims());
    if rows < cols {
        return Err(TensorError::WideMatrix { rows, cols });
    }
    let mat = b.to_matrix(m)?;
    let (u, s, w) = svd_matrix(&mat)?;
    let v = &u * w.adjoint();
    let p =
        &w * DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            s.len(),
            s.iter().map(|&x| C64::new(x, 0.0)),
        )) * w.adjoint();
    let row_dims = m.row_dims(b.dims());
    let col_dims = m.col_dims(b.dims());
    let mut vdims = row_dims;
    vdims.extend(&col_dims);
    let mut pdims = col_dims.clone();
    pdims.extend(&col_dims);
    Ok((Tensor::from_matrix(&vdims, &v)?, Tensor::from_matrix(&pdims, &p)?))
}

/// Eigendecomposition of a Hermitian matricized tensor: eigenvalues
/// ascending, eigenvectors as columns of a tensor with dims
/// `row dims ++ [n]`.
pub fn herm_eig(h: &Tensor, m: &Matricization) -> Result<(Vec<f64>, Tensor)> {
    if !h.is_finite() {
        return Err(TensorError::NonFinite);
    }
    let mat = h.to_matrix(m)?;
    let (e, q) = herm_eig_matrix(&mat)?;
    let mut qdims = m.row_dims(h.dims());
    qdims.push(e.len());
    Ok((e, Tensor::from_matrix(&qdims, &q)?))
}

pub fn herm_eig_matrix(mat: &DMatrix<C64>) -> Result<(Vec<f64>, DMatrix<C64>)> {
    if mat.nrows() != mat.ncols() {
        return Err(TensorError::NotHermitian(f64::INFINITY));
    }
    let scale = mat.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let dev = (mat - mat.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if dev > 1e-10 * scale {
        return Err(TensorError::NotHermitian(dev));
    }
    let n = mat.nrows();
    let sym = faer::Mat::<C64>::from_fn(n, n, |i, j| (mat[(i, j)] + mat[(j, i)].conj()) * 0.5);
    let dec = sym
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|_| TensorError::NoConvergence)?;
    let (u, ev) = (dec.U(), dec.S().column_vector());
    let e: Vec<f64> = (0..n).map(|i| ev[i].re).collect();
    let q = DMatrix::from_fn(n, n, |i, j| u[(i, j)]);
    Ok((e, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn random(dims: &[usize], rng: &mut impl Rng) -> Tensor {
        Tensor::from_fn(dims, |_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    fn naive_contract(a: &Tensor, b: &Tensor, pairs: &[(usize, usize)]) -> Tensor {
        let free_a: Vec<usize> = (0..a.rank()).filter(|l| !pairs.iter().any(|p| p.0 == *l)).collect();
        let free_b: Vec<usize> = (0..b.rank()).filter(|l| !pairs.iter().any(|p| p.1 == *l)).collect();
        let mut out_dims: Vec<usize> = free_a.iter().map(|&l| a.dims()[l]).collect();
        out_dims.extend(free_b.iter().map(|&l| b.dims()[l]));
        let sum_dims: Vec<usize> = pairs.iter().map(|p| a.dims()[p.0]).collect();
        Tensor::from_fn(&out_dims, |idx| {
            let mut acc = C64::new(0.0, 0.0);
            let total: usize = sum_dims.iter().product();
            let mut s = vec![0usize; sum_dims.len()];
            for _ in 0..total {
                let mut ia = vec![0; a.rank()];
                let mut ib = vec![0; b.rank()];
                for (k, &l) in free_a.iter().enumerate() {
                    ia[l] = idx[k];
                }
                for (k, &l) in free_b.iter().enumerate() {
                    ib[l] = idx[free_a.len() + k];
                }
                for (k, p) in pairs.iter().enumerate() {
                    ia[p.0] = s[k];
                    ib[p.1] = s[k];
                }
                acc += a.get(&ia) * b.get(&ib);
                increment(&mut s, &sum_dims);
            }
            acc
        })
    }

    #[test]
    fn identity_times_vector() {
        let id = Tensor::identity(&[2]);
        let v = Tensor::new(vec![2], vec![c(3.0), C64::new(0.0, -1.0)]).unwrap();
        let r = contract(&id, &v, &[(1, 0)]).unwrap();
        assert_eq!(r, v);
    }

    #[test]
    fn hand_computed_product() {
        let a = Tensor::matrix(2, 2, &[c(1.0), c(0.0), c(0.0), c(2.0)]).unwrap();
        let b = Tensor::matrix(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]).unwrap();
        let r = contract(&a, &b, &[(1, 0)]).unwrap();
        assert_eq!(r.data(), &[c(0.0), c(1.0), c(2.0), c(0.0)]);
    }

    #[test]
    fn rank3_contraction_matches_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(&[3, 4, 2], &mut rng);
        let b = random(&[2, 4, 5], &mut rng);
        let fast = contract(&a, &b, &[(1, 1)]).unwrap();
        let slow = naive_contract(&a, &b, &[(1, 1)]);
        assert!(fast.max_abs_diff(&slow) <= 1e-12 * slow.max_abs());
    }

    #[test]
    fn mismatched_pair_is_named() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        let err = contract(&a, &b, &[(1, 0)]).unwrap_err();
        assert_eq!(
            err,
            TensorError::PairMismatch {
                left: 1,
                right: 0,
                left_dim: 3,
                right_dim: 4
            }
        );
    }

    #[test]
    fn labels_follow_contraction() {
        let a = Tensor::zeros(&[2, 3]).with_legs(vec!["i", "j"]).unwrap();
        let b = Tensor::zeros(&[3, 4]).with_legs(vec!["j", "k"]).unwrap();
        let r = contract(&a, &b, &[(1, 0)]).unwrap();
        assert_eq!(r.legs().unwrap(), &["i".to_string(), "k".to_string()]);
        assert!(Tensor::zeros(&[2, 2]).with_legs(vec!["a", "a"]).is_err());
    }

    #[test]
    fn permute_and_matricize_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random(&[2, 3, 4, 5], &mut rng);
        let m = Matricization::new(vec![2, 0], vec![3, 1]);
        let mat = t.to_matrix(&m).unwrap();
        let back = Tensor::from_matrix(&[4, 2, 5, 3], &mat).unwrap();
        let back = back.permute(&[1, 3, 0, 2]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn svd_examples() {
        let s = svd(&Tensor::identity(&[2]), &Matricization::split(2, 1)).unwrap();
        assert!((s.s[0] - 1.0).abs() < 1e-14 && (s.s[1] - 1.0).abs() < 1e-14);

        // |u| = |v| = 2
        let u = [c(2.0), c(0.0)];
        let v = [c(0.0), c(2.0)];
        let outer = Tensor::from_fn(&[2, 2], |i| u[i[0]] * v[i[1]]);
        let s = svd(&outer, &Matricization::split(2, 1)).unwrap();
        assert!((s.s[0] - 4.0).abs() < 1e-12 && s.s[1].abs() < 1e-12);
    }

    #[test]
    fn svd_reconstructs_random_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&[8, 4], &mut rng);
        let m = Matricization::split(2, 1);
        let s = svd(&a, &m).unwrap();
        let u = s.u.to_matrix(&m).unwrap();
        let v = s.v.to_matrix(&m).unwrap();
        let sd = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(4, s.s.iter().map(|&x| c(x))));
        let rec = &u * sd * v.adjoint();
        let orig = a.to_matrix(&m).unwrap();
        assert!((rec - &orig).norm() < 1e-10 * orig.norm());
        assert!((u.adjoint() * &u - DMatrix::identity(4, 4)).norm() < 1e-12);
        assert!(s.s.windows(2).all(|w| w[0] >= w[1]));
        assert!(svd(
            &Tensor::new(vec![1], vec![C64::new(f64::NAN, 0.0)]).unwrap(),
            &Matricization::split(1, 1)
        )
        .is_err());
    }

    #[test]
    fn polar_examples() {
        let m = Matricization::split(2, 1);
        let (v, p) = polar_decompose(&Tensor::identity(&[2]), &m).unwrap();
        assert!(v.max_abs_diff(&Tensor::identity(&[2])) < 1e-14);
        assert!(p.max_abs_diff(&Tensor::identity(&[2])) < 1e-14);

        let b = Tensor::matrix(2, 2, &[c(0.0), c(2.0), c(2.0), c(0.0)]).unwrap();
        let (v, p) = polar_decompose(&b, &m).unwrap();
        let x = Tensor::matrix(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]).unwrap();
        assert!(v.max_abs_diff(&x) < 1e-12);
        assert!(p.max_abs_diff(&Tensor::identity(&[2]).scale(c(2.0))) < 1e-12);

        let wide = Tensor::zeros(&[2, 3]);
        assert_eq!(
            polar_decompose(&wide, &m).unwrap_err(),
            TensorError::WideMatrix { rows: 2, cols: 3 }
        );
    }

    #[test]
    fn polar_of_random_tall_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = random(&[6, 4], &mut rng);
        let m = Matricization::split(2, 1);
        let (v, p) = polar_decompose(&b, &m).unwrap();
        let vm = v.to_matrix(&m).unwrap();
        let pm = p.to_matrix(&m).unwrap();
        assert!((vm.adjoint() * &vm - DMatrix::identity(4, 4)).norm() < 1e-10);
        assert!((&vm * &pm - b.to_matrix(&m).unwrap()).norm() < 1e-10);
        assert!((&pm - pm.adjoint()).norm() < 1e-12);
        let (e, _) = herm_eig_matrix(&pm).unwrap();
        assert!(e[0] > -1e-12);
    }

    #[test]
    fn pauli_spectra() {
        let m = Matricization::split(2, 1);
        let z = Tensor::matrix(2, 2, &[c(1.0), c(0.0), c(0.0), c(-1.0)]).unwrap();
        let (e, _) = herm_eig(&z, &m).unwrap();
        assert_eq!(e, vec![-1.0, 1.0]);
        let x = Tensor::matrix(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]).unwrap();
        let (e, q) = herm_eig(&x, &m).unwrap();
        assert!((e[0] + 1.0).abs() < 1e-14 && (e[1] - 1.0).abs() < 1e-14);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        // columns equal (1, -1)/sqrt2 and (1, 1)/sqrt2 up to a phase
        let overlap0 = (q.get(&[0, 0]) * r - q.get(&[1, 0]) * r).norm();
        let overlap1 = (q.get(&[0, 1]) * r + q.get(&[1, 1]) * r).norm();
        assert!((overlap0 - 1.0).abs() < 1e-12 && (overlap1 - 1.0).abs() < 1e-12);
        let bad = Tensor::matrix(2, 2, &[c(0.0), c(1.0), c(0.0), c(0.0)]).unwrap();
        assert!(matches!(herm_eig(&bad, &m), Err(TensorError::NotHermitian(_))));
    }

    #[test]
    fn random_hermitian_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(&[4, 4], &mut rng);
        let m = Matricization::split(2, 1);
        let am = a.to_matrix(&m).unwrap();
        let h = &am + am.adjoint();
        let ht = Tensor::from_matrix(&[4, 4], &h).unwrap();
        let (e, q) = herm_eig(&ht, &m).unwrap();
        let qm = q.to_matrix(&m).unwrap();
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(4, e.iter().map(|&x| c(x))));
        assert!((&qm * d * qm.adjoint() - &h).norm() < 1e-10);
        assert!(e.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn flop_counter_tracks_matmul() {
        flops::reset();
        let a = Tensor::zeros(&[3, 4]);
        let b = Tensor::zeros(&[4, 5]);
        contract(&a, &b, &[(1, 0)]).unwrap();
        assert_eq!(flops::read(), 60);
    }
}

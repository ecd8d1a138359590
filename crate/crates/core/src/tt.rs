//! Tensor-train format.
//!
//! A d-way tensor is stored as cores `G_k` of shape `(r_{k-1}, n_k, r_k)` with
//! `r_0 = r_d = 1`, so that
//!
//! ```text
//! X[i_1, ..., i_d] = G_1[:, i_1, :] · G_2[:, i_2, :] · ... · G_d[:, i_d, :]
//! ```

use crate::linalg::{svd_truncated_abs, Matrix};
use crate::tensor::{increment, DenseTensor};
use crate::NumericError;

/// Default cap on the number of entries [`TtTensor::to_full`] will materialize.
pub const DEFAULT_FULL_CAP: usize = 10_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct TtTensor {
    cores: Vec<DenseTensor>,
}

impl TtTensor {
    pub fn new(cores: Vec<DenseTensor>) -> Result<Self, NumericError> {
        if cores.is_empty() {
            return Err(NumericError::Shape("tensor train needs at least one core".into()));
        }
        for (k, core) in cores.iter().enumerate() {
            if core.ndim() != 3 {
                return Err(NumericError::Shape(format!("core {k} has rank {}, expected 3", core.ndim())));
            }
        }
        if cores[0].shape()[0] != 1 || cores[cores.len() - 1].shape()[2] != 1 {
            return Err(NumericError::Shape("boundary TT-ranks must be 1".into()));
        }
        for k in 1..cores.len() {
            if cores[k - 1].shape()[2] != cores[k].shape()[0] {
                return Err(NumericError::Shape(format!(
                    "rank mismatch between cores {} and {k}: {} vs {}",
                    k - 1,
                    cores[k - 1].shape()[2],
                    cores[k].shape()[0]
                )));
            }
        }
        Ok(Self { cores })
    }

    pub fn cores(&self) -> &[DenseTensor] {
        &self.cores
    }

    pub fn into_cores(self) -> Vec<DenseTensor> {
        self.cores
    }

    pub fn ndim(&self) -> usize {
        self.cores.len()
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.shape()[1]).collect()
    }

    /// `[r_0, r_1, ..., r_d]` including the unit boundary ranks.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![1];
        r.extend(self.cores.iter().map(|c| c.shape()[2]));
        r
    }

    pub fn max_rank(&self) -> usize {
        self.ranks().into_iter().max().unwrap_or(1)
    }

    pub fn param_count(&self) -> usize {
        self.cores.iter().map(|c| c.len()).sum()
    }

    /// Entry at `idx`: product of the selected core slices.
    pub fn eval(&self, idx: &[usize]) -> Result<f64, NumericError> {
        let sizes = self.mode_sizes();
        if idx.len() != sizes.len() || idx.iter().zip(&sizes).any(|(&i, &n)| i >= n) {
            return Err(NumericError::Index(format!("index {idx:?} out of range for modes {sizes:?}")));
        }
        let mut row = vec![1.0];
        for (core, &i) in self.cores.iter().zip(idx) {
            let (rl, n, rr) = dims3(core);
            let data = core.data();
            let mut next = vec![0.0; rr];
            for (a, &x) in row.iter().enumerate().take(rl) {
                let base = (a * n + i) * rr;
                for (b, o) in next.iter_mut().enumerate() {
                    *o += x * data[base + b];
                }
            }
            row = next;
        }
        Ok(row[0])
    }

    pub fn to_full(&self) -> Result<DenseTensor, NumericError> {
        self.to_full_capped(DEFAULT_FULL_CAP)
    }

    pub fn to_full_capped(&self, cap: usize) -> Result<DenseTensor, NumericError> {
        let sizes = self.mode_sizes();
        let size = sizes
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .unwrap_or(usize::MAX);
        if size > cap {
            return Err(NumericError::CapExceeded { size, cap });
        }
        // Contract left to right: acc is (prod n_1..n_k) x r_k.
        let mut acc = vec![1.0];
        let mut rows = 1usize;
        for core in &self.cores {
            let (rl, n, rr) = dims3(core);
            let data = core.data();
            let mut next = vec![0.0; rows * n * rr];
            for p in 0..rows {
                for a in 0..rl {
                    let x = acc[p * rl + a];
                    if x == 0.0 {
                        continue;
                    }
                    for i in 0..n {
                        let src = (a * n + i) * rr;
                        let dst = (p * n + i) * rr;
                        for b in 0..rr {
                            next[dst + b] += x * data[src + b];
                        }
                    }
                }
            }
            acc = next;
            rows *= n;
        }
        DenseTensor::new(sizes, acc)
    }

    /// Inner product with another tensor train of the same mode sizes.
    pub fn dot(&self, other: &TtTensor) -> Result<f64, NumericError> {
        if self.mode_sizes() != other.mode_sizes() {
            return Err(NumericError::Shape(format!(
                "dot of TT with modes {:?} and {:?}",
                self.mode_sizes(),
                other.mode_sizes()
            )));
        }
        // z is r_a x r_b.
        let mut z = vec![1.0];
        let mut rb_prev = 1;
        for (ca, cb) in self.cores.iter().zip(&other.cores) {
            let (ral, n, rar) = dims3(ca);
            let (rbl, _, rbr) = dims3(cb);
            debug_assert_eq!(rbl, rb_prev);
            let (da, db) = (ca.data(), cb.data());
            // tmp[a, i, b'] = sum_b z[a, b] B[b, i, b']
            let mut tmp = vec![0.0; ral * n * rbr];
            for a in 0..ral {
                for b in 0..rbl {
                    let zab = z[a * rbl + b];
                    if zab == 0.0 {
                        continue;
                    }
                    for i in 0..n {
                        for bb in 0..rbr {
                            tmp[(a * n + i) * rbr + bb] += zab * db[(b * n + i) * rbr + bb];
                        }
                    }
                }
            }
            let mut next = vec![0.0; rar * rbr];
            for a in 0..ral {
                for i in 0..n {
                    for aa in 0..rar {
                        let x = da[(a * n + i) * rar + aa];
                        if x == 0.0 {
                            continue;
                        }
                        for bb in 0..rbr {
                            next[aa * rbr + bb] += x * tmp[(a * n + i) * rbr + bb];
                        }
                    }
                }
            }
            z = next;
            rb_prev = rbr;
        }
        Ok(z[0])
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).map(|d| d.max(0.0).sqrt()).unwrap_or(0.0)
    }

    /// Re-compress to relative accuracy `tol` (ranks never increase).
    pub fn round(&self, tol: f64, max_rank: Option<usize>) -> Result<TtTensor, NumericError> {
        if !(tol >= 0.0) {
            return Err(NumericError::InvalidBounds(format!("round tolerance {tol}")));
        }
        let d = self.ndim();
        if d == 1 {
            return Ok(self.clone());
        }
        let mut cores = self.cores.clone();
        // Right-to-left orthogonalization: core k becomes row-orthonormal.
        for k in (1..d).rev() {
            let (rl, n, rr) = dims3(&cores[k]);
            let m = Matrix::new(rl, n * rr, cores[k].data().to_vec())?;
            let svd = svd_truncated_abs(&m, 0.0, None)?;
            let r_new = svd.rank();
            cores[k] = DenseTensor::from_parts(vec![r_new, n, rr], svd.v.transpose().into_data());
            let us = svd.u.scale_columns(&svd.s); // rl x r_new
            cores[k - 1] = contract_right(&cores[k - 1], &us)?;
        }
        let norm = cores[0].frobenius_norm();
        let step_tol = tol * norm / ((d - 1) as f64).sqrt();
        // Left-to-right truncation.
        for k in 0..d - 1 {
            let (rl, n, rr) = dims3(&cores[k]);
            let m = Matrix::new(rl * n, rr, cores[k].data().to_vec())?;
            let svd = svd_truncated_abs(&m, step_tol, max_rank)?;
            let r_new = svd.rank();
            cores[k] = DenseTensor::from_parts(vec![rl, n, r_new], svd.u.into_data());
            let svt = svd.v.scale_columns(&svd.s).transpose(); // r_new x rr
            cores[k + 1] = contract_left(&svt, &cores[k + 1])?;
        }
        TtTensor::new(cores)
    }
}

pub(crate) fn dims3(core: &DenseTensor) -> (usize, usize, usize) {
    let s = core.shape();
    (s[0], s[1], s[2])
}

/// `core (rl, n, rr) x m (rr, q) -> (rl, n, q)`
fn contract_right(core: &DenseTensor, m: &Matrix) -> Result<DenseTensor, NumericError> {
    let (rl, n, rr) = dims3(core);
    let flat = Matrix::new(rl * n, rr, core.data().to_vec())?;
    let out = flat.matmul(m)?;
    Ok(DenseTensor::from_parts(vec![rl, n, m.cols()], out.into_data()))
}

/// `m (p, rl) x core (rl, n, rr) -> (p, n, rr)`
fn contract_left(m: &Matrix, core: &DenseTensor) -> Result<DenseTensor, NumericError> {
    let (rl, n, rr) = dims3(core);
    let flat = Matrix::new(rl, n * rr, core.data().to_vec())?;
    let out = m.matmul(&flat)?;
    Ok(DenseTensor::from_parts(vec![m.rows(), n, rr], out.into_data()))
}

/// TT-SVD: sequential truncated SVDs with an equal per-step budget of
/// `tol·||t||_F / sqrt(d-1)`, giving `||t - tt||_F <= tol·||t||_F` overall
/// (unless `max_rank` binds first).
pub fn tt_svd(t: &DenseTensor, tol: f64, max_rank: Option<usize>) -> Result<TtTensor, NumericError> {
    if !(tol >= 0.0) {
        return Err(NumericError::InvalidBounds(format!("tt_svd tolerance {tol}")));
    }
    if !t.data().iter().all(|v| v.is_finite()) {
        return Err(NumericError::NonFinite("tt_svd input"));
    }
    let shape = t.shape().to_vec();
    let d = shape.len();
    if d == 1 {
        return TtTensor::new(vec![DenseTensor::from_parts(vec![1, shape[0], 1], t.data().to_vec())]);
    }
    let step_tol = tol * t.frobenius_norm() / ((d - 1) as f64).sqrt();
    let mut cores = Vec::with_capacity(d);
    let mut rest = t.data().to_vec();
    let mut r_prev = 1usize;
    let mut remaining: usize = t.len();
    for &n in shape.iter().take(d - 1) {
        let rows = r_prev * n;
        remaining /= n;
        let m = Matrix::new(rows, remaining, rest)?;
        let svd = svd_truncated_abs(&m, step_tol, max_rank)?;
        let r = svd.rank();
        cores.push(DenseTensor::from_parts(vec![r_prev, n, r], svd.u.into_data()));
        rest = svd.v.scale_columns(&svd.s).transpose().into_data();
        r_prev = r;
    }
    cores.push(DenseTensor::from_parts(vec![r_prev, shape[d - 1], 1], rest));
    TtTensor::new(cores)
}

/// Random tensor train with the given mode sizes and interior ranks.
pub fn random_tt(sizes: &[usize], ranks: &[usize], rng: &mut crate::Rng) -> Result<TtTensor, NumericError> {
    if ranks.len() + 1 != sizes.len() {
        return Err(NumericError::Shape(format!(
            "{} interior ranks for {} modes",
            ranks.len(),
            sizes.len()
        )));
    }
    let mut full = vec![1];
    full.extend_from_slice(ranks);
    full.push(1);
    let cores = sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| DenseTensor::from_fn(vec![full[k], n, full[k + 1]], |_| rng.normal()))
        .collect::<Result<Vec<_>, _>>()?;
    TtTensor::new(cores)
}

/// Every multi-index of `sizes` in row-major order.
pub fn grid_indices(sizes: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    let total: usize = sizes.iter().product();
    let mut idx = vec![0usize; sizes.len()];
    (0..total).map(move |k| {
        if k > 0 {
            increment(&mut idx, sizes);
        }
        idx.clone()
    })
}

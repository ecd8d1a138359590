use super::CompressError;
use ttkit_core::tensor::multi_index;
use ttkit_core::tt::{tt_svd, TtTensor};
use ttkit_core::{DenseTensor, Matrix};

/// A matrix with row dimension `Π m_k` and column dimension `Π n_k` stored as
/// cores `[r_{k-1}, m_k, n_k, r_k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TtMatrix {
    pub row_factors: Vec<usize>,
    pub col_factors: Vec<usize>,
    pub cores: Vec<DenseTensor>,
}

impl TtMatrix {
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![1];
        r.extend(self.cores.iter().map(|c| c.shape()[3]));
        r
    }

    pub fn param_count(&self) -> usize {
        self.cores.iter().map(DenseTensor::len).sum()
    }

    pub fn to_matrix(&self) -> Matrix {
        ttm_to_matrix(&self.cores, &self.row_factors, &self.col_factors)
    }
}

fn check_factors(rows: usize, cols: usize, rf: &[usize], cf: &[usize]) -> Result<(), CompressError> {
    if rf.is_empty() || rf.len() != cf.len() || rf.contains(&0) || cf.contains(&0) {
        return Err(CompressError::Factors(format!("row factors {rf:?} and column factors {cf:?} must pair up")));
    }
    let (m, n): (usize, usize) = (rf.iter().product(), cf.iter().product());
    if m != rows || n != cols {
        return Err(CompressError::Factors(format!("factors give {m}x{n}, matrix is {rows}x{cols}")));
    }
    Ok(())
}

/// Reshapes `w` to `(m_1..m_d, n_1..n_d)`, interleaves to `(m_1 n_1, ...)`
/// and runs TT-SVD. Returns the factors and the relative error.
pub fn ttm_decompose(
    w: &Matrix,
    row_factors: &[usize],
    col_factors: &[usize],
    tol: f64,
    max_rank: Option<usize>,
) -> Result<(TtMatrix, f64), CompressError> {
    check_factors(w.rows(), w.cols(), row_factors, col_factors)?;
    let d = row_factors.len();
    let mut shape = row_factors.to_vec();
    shape.extend_from_slice(col_factors);
    let t = DenseTensor::new(shape, w.data().to_vec())?;
    let perm: Vec<usize> = (0..d).flat_map(|k| [k, d + k]).collect();
    let merged: Vec<usize> = (0..d).map(|k| row_factors[k] * col_factors[k]).collect();
    let t = t.permute(&perm)?.reshape(merged)?;
    let tt = tt_svd(&t, tol, max_rank)?;
    let cores = tt
        .into_cores()
        .into_iter()
        .enumerate()
        .map(|(k, c)| {
            let s = c.shape().to_vec();
            c.reshape(vec![s[0], row_factors[k], col_factors[k], s[2]])
        })
        .collect::<Result<Vec<_>, _>>()?;
    let ttm = TtMatrix { row_factors: row_factors.to_vec(), col_factors: col_factors.to_vec(), cores };
    let err = rel_error(w, &ttm.to_matrix());
    Ok((ttm, err))
}

pub(crate) fn rel_error(a: &Matrix, b: &Matrix) -> f64 {
    let n = a.frobenius_norm();
    let e = a.sub(b).frobenius_norm();
    if n == 0.0 { e } else { e / n }
}

/// Dense `[Π m_k, Π n_k]` matrix of a TT-matrix.
pub fn ttm_to_matrix(cores: &[DenseTensor], rf: &[usize], cf: &[usize]) -> Matrix {
    let merged: Vec<DenseTensor> = cores
        .iter()
        .map(|c| {
            let s = c.shape();
            c.clone().reshape(vec![s[0], s[1] * s[2], s[3]]).expect("4-way core")
        })
        .collect();
    let full = TtTensor::new(merged).expect("consistent cores").to_full().expect("small layer");
    let (m, n): (usize, usize) = (rf.iter().product(), cf.iter().product());
    let shape: Vec<usize> = rf.iter().zip(cf).map(|(a, b)| a * b).collect();
    let mut out = vec![0.0; m * n];
    for (lin, &v) in full.data().iter().enumerate() {
        let j = multi_index(&shape, lin);
        let (mut row, mut col) = (0, 0);
        for k in 0..j.len() {
            row = row * rf[k] + j[k] / cf[k];
            col = col * cf[k] + j[k] % cf[k];
        }
        out[row * n + col] = v;
    }
    Matrix::new(m, n, out).expect("finite")
}

/// Gradients of every core given `dW`, the gradient of the dense matrix, by
/// accumulating over all matrix entries.
pub fn ttm_core_grads(cores: &[DenseTensor], rf: &[usize], cf: &[usize], dw: &[f64]) -> Vec<Vec<f64>> {
    let d = cores.len();
    let n: usize = cf.iter().product();
    let mut grads: Vec<Vec<f64>> = cores.iter().map(|c| vec![0.0; c.len()]).collect();
    let row_shape = rf.to_vec();
    let col_shape = cf.to_vec();
    // slice(k, a, b) is the r_{k-1} x r_k matrix G_k[:, a, b, :].
    let slice = |k: usize, a: usize, b: usize| -> (usize, usize, Vec<f64>) {
        let s = cores[k].shape();
        let (r0, r1) = (s[0], s[3]);
        let mut m = vec![0.0; r0 * r1];
        for p in 0..r0 {
            for q in 0..r1 {
                m[p * r1 + q] = cores[k].data()[((p * s[1] + a) * s[2] + b) * s[3] + q];
            }
        }
        (r0, r1, m)
    };
    for (lin, &g) in dw.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let ai = multi_index(&row_shape, lin / n);
        let bi = multi_index(&col_shape, lin % n);
        let slices: Vec<_> = (0..d).map(|k| slice(k, ai[k], bi[k])).collect();
        // left[k] = G_0 ... G_{k-1} as a row vector of length r_k.
        let mut left = vec![vec![1.0]];
        for (_, r1, m) in &slices {
            let prev = left.last().expect("non-empty");
            let next: Vec<f64> = (0..*r1).map(|q| prev.iter().enumerate().map(|(p, &v)| v * m[p * r1 + q]).sum()).collect();
            left.push(next);
        }
        let mut right = vec![vec![1.0]; d + 1];
        for k in (0..d).rev() {
            let (r0, r1, m) = &slices[k];
            right[k] = (0..*r0).map(|p| (0..*r1).map(|q| m[p * r1 + q] * right[k + 1][q]).sum()).collect();
        }
        for k in 0..d {
            let s = cores[k].shape();
            for p in 0..s[0] {
                let lp = left[k][p];
                if lp == 0.0 {
                    continue;
                }
                for q in 0..s[3] {
                    grads[k][((p * s[1] + ai[k]) * s[2] + bi[k]) * s[3] + q] += g * lp * right[k + 1][q];
                }
            }
        }
    }
    grads
}

//! N-dimensional dense tensors and mode unfoldings.

use crate::linalg::Matrix;
use crate::NumericError;

/// Row-major (last index fastest) real tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumericError> {
        let len = checked_len(&shape)?;
        if len != data.len() {
            return Err(NumericError::Shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(NumericError::NonFinite("tensor data"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, NumericError> {
        let len = checked_len(&shape)?;
        Ok(Self { shape, data: vec![0.0; len] })
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self, NumericError> {
        let len = checked_len(&shape)?;
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..len {
            data.push(f(&idx));
            increment(&mut idx, &shape);
        }
        Self::new(shape, data)
    }

    /// Internal constructor for callers that already uphold the invariants.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
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

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.shape)
    }

    pub fn linear_index(&self, idx: &[usize]) -> Result<usize, NumericError> {
        linear_index(&self.shape, idx)
    }

    pub fn get(&self, idx: &[usize]) -> Result<f64, NumericError> {
        Ok(self.data[self.linear_index(idx)?])
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, NumericError> {
        let len = checked_len(&shape)?;
        if len != self.data.len() {
            return Err(NumericError::Shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        Ok(Self { shape, data: self.data })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `||self - other||_F / ||other||_F` (absolute error when `other` is zero).
    pub fn relative_error(&self, other: &DenseTensor) -> Result<f64, NumericError> {
        if self.shape != other.shape {
            return Err(NumericError::Shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        let diff = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let norm = other.frobenius_norm();
        Ok(if norm > 0.0 { diff / norm } else { diff })
    }

    /// Reorder axes: output axis `k` is input axis `perm[k]`.
    pub fn permute(&self, perm: &[usize]) -> Result<DenseTensor, NumericError> {
        let d = self.ndim();
        let mut seen = vec![false; d];
        if perm.len() != d || perm.iter().any(|&p| p >= d || std::mem::replace(&mut seen[p], true)) {
            return Err(NumericError::Shape(format!("invalid permutation {perm:?} for rank {d}")));
        }
        let in_strides = self.strides();
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let mut out = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; d];
        for _ in 0..self.len() {
            let src: usize = idx.iter().zip(perm).map(|(&i, &p)| i * in_strides[p]).sum();
            out.push(self.data[src]);
            increment(&mut idx, &out_shape);
        }
        Ok(DenseTensor::from_parts(out_shape, out))
    }
}

fn checked_len(shape: &[usize]) -> Result<usize, NumericError> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(NumericError::Shape(format!("shape {shape:?} must be non-empty with positive dims")));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .ok_or_else(|| NumericError::Shape(format!("shape {shape:?} overflows")))
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * shape[k + 1];
    }
    s
}

pub fn linear_index(shape: &[usize], idx: &[usize]) -> Result<usize, NumericError> {
    if idx.len() != shape.len() {
        return Err(NumericError::Index(format!("index {idx:?} for shape {shape:?}")));
    }
    let mut lin = 0usize;
    for (&i, &n) in idx.iter().zip(shape) {
        if i >= n {
            return Err(NumericError::Index(format!("index {idx:?} out of range for shape {shape:?}")));
        }
        lin = lin * n + i;
    }
    Ok(lin)
}

/// Inverse of [`linear_index`].
pub fn multi_index(shape: &[usize], mut lin: usize) -> Vec<usize> {
    let mut idx = vec![0usize; shape.len()];
    for k in (0..shape.len()).rev() {
        idx[k] = lin % shape[k];
        lin /= shape[k];
    }
    idx
}

/// Odometer increment in row-major order; wraps to all zeros.
pub fn increment(idx: &mut [usize], shape: &[usize]) {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < shape[k] {
            return;
        }
        idx[k] = 0;
    }
}

/// Mode-`mode` matricization: `shape[mode] x prod(other dims)`, remaining
/// modes ordered ascending and row-major within the column index.
pub fn unfold(t: &DenseTensor, mode: usize) -> Result<Matrix, NumericError> {
    let d = t.ndim();
    if mode >= d {
        return Err(NumericError::Index(format!("mode {mode} out of range for rank {d}")));
    }
    let rows = t.shape[mode];
    let cols = t.len() / rows;
    let mut perm = vec![mode];
    perm.extend((0..d).filter(|&k| k != mode));
    let p = t.permute(&perm)?;
    Matrix::new(rows, cols, p.data)
}

/// Inverse of [`unfold`] for a target `shape`.
pub fn fold(m: &Matrix, mode: usize, shape: &[usize]) -> Result<DenseTensor, NumericError> {
    let d = shape.len();
    if mode >= d {
        return Err(NumericError::Index(format!("mode {mode} out of range for rank {d}")));
    }
    let len = checked_len(shape)?;
    if m.rows() != shape[mode] || m.rows() * m.cols() != len {
        return Err(NumericError::Shape(format!(
            "cannot fold {}x{} into {shape:?} along mode {mode}",
            m.rows(),
            m.cols()
        )));
    }
    let mut permuted_shape = vec![shape[mode]];
    permuted_shape.extend((0..d).filter(|&k| k != mode).map(|k| shape[k]));
    let p = DenseTensor::from_parts(permuted_shape, m.data().to_vec());
    // Inverse permutation of [mode, others...].
    let mut inv = vec![0usize; d];
    let mut perm = vec![mode];
    perm.extend((0..d).filter(|&k| k != mode));
    for (pos, &axis) in perm.iter().enumerate() {
        inv[axis] = pos;
    }
    p.permute(&inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;
    use proptest::prelude::*;

    fn random(shape: Vec<usize>, rng: &mut Rng) -> DenseTensor {
        DenseTensor::from_fn(shape, |_| rng.normal()).unwrap()
    }

    #[test]
    fn invariants_enforced() {
        assert!(DenseTensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(DenseTensor::new(vec![2, 0], vec![]).is_err());
        assert!(DenseTensor::new(vec![1], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn unfold_matrix_mode0_is_identity() {
        let mut rng = Rng::new(0);
        let t = random(vec![2, 3], &mut rng);
        let m = unfold(&t, 0).unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 3));
        assert_eq!(m.data(), t.data());
    }

    #[test]
    fn unfold_mode1_shape_and_entries() {
        let t = DenseTensor::from_fn(vec![2, 3, 4], |i| (i[0] * 100 + i[1] * 10 + i[2]) as f64).unwrap();
        let m = unfold(&t, 1).unwrap();
        assert_eq!((m.rows(), m.cols()), (3, 8));
        // Column index = i0 * 4 + i2.
        assert_eq!(m.get(2, 1 * 4 + 3), 123.0);
    }

    #[test]
    fn unfold_rejects_bad_mode() {
        let t = DenseTensor::zeros(vec![2, 2]).unwrap();
        assert!(matches!(unfold(&t, 2), Err(NumericError::Index(_))));
    }

    #[test]
    fn fold_unfold_all_modes_345() {
        let mut rng = Rng::new(1);
        let t = random(vec![3, 4, 5], &mut rng);
        for k in 0..3 {
            assert_eq!(fold(&unfold(&t, k).unwrap(), k, t.shape()).unwrap(), t);
        }
    }

    #[test]
    fn linear_multi_index_inverse() {
        let shape = [3, 1, 4];
        for lin in 0..12 {
            assert_eq!(linear_index(&shape, &multi_index(&shape, lin)).unwrap(), lin);
        }
        assert!(linear_index(&shape, &[0, 1, 0]).is_err());
    }

    proptest! {
        #[test]
        fn fold_unfold_roundtrip(shape in prop::collection::vec(1usize..=6, 1..=5), seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let t = random(shape.clone(), &mut rng);
            for k in 0..shape.len() {
                let m = unfold(&t, k).unwrap();
                prop_assert_eq!(m.rows(), shape[k]);
                prop_assert_eq!(&fold(&m, k, &shape).unwrap(), &t);
            }
        }
    }
}

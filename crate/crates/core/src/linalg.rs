//! Dense row-major matrices, Householder QR and one-sided Jacobi SVD.

use crate::NumericError;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericError> {
        if rows == 0 || cols == 0 {
            return Err(NumericError::Shape(format!("matrix {rows}x{cols} has an empty dimension")));
        }
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(NumericError::Shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows.saturating_mul(cols),
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, NumericError> {
        if self.cols != other.rows {
            return Err(NumericError::Shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Rows `idx` of `self`, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: idx.len(), cols: self.cols, data }
    }

    /// First `k` columns.
    pub fn leading_columns(&self, k: usize) -> Matrix {
        assert!(k >= 1 && k <= self.cols);
        Matrix::from_fn(self.rows, k, |i, j| self.get(i, j))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Multiply each column `j` by `s[j]`.
    pub fn scale_columns(&self, s: &[f64]) -> Matrix {
        assert_eq!(s.len(), self.cols);
        Matrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j) * s[j])
    }

    /// Multiply each row `i` by `s[i]`.
    pub fn scale_rows(&self, s: &[f64]) -> Matrix {
        assert_eq!(s.len(), self.rows);
        Matrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j) * s[i])
    }
}

/// Thin Householder QR of a tall matrix: `m = Q R`, `Q` is `rows x cols`
/// with orthonormal columns, `R` is `cols x cols` upper triangular.
///
/// Rank-deficient input is accepted; the deficient diagonal entries of `R`
/// come out (numerically) zero.
pub fn qr(m: &Matrix) -> Result<(Matrix, Matrix), NumericError> {
    let (rows, cols) = (m.rows, m.cols);
    if rows < cols {
        return Err(NumericError::Shape(format!("qr needs rows >= cols, got {rows}x{cols}")));
    }
    if !m.is_finite() {
        return Err(NumericError::NonFinite("qr input"));
    }
    let mut a = m.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for k in 0..cols {
        let mut v: Vec<f64> = (k..rows).map(|i| a.get(i, k)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        for j in k..cols {
            let dot: f64 = (k..rows).map(|i| v[i - k] * a.get(i, j)).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..rows {
                let val = a.get(i, j) - f * v[i - k];
                a.set(i, j, val);
            }
        }
        let scale = vnorm2.sqrt();
        reflectors.push(v.into_iter().map(|x| x / scale).collect());
    }
    let r = Matrix::from_fn(cols, cols, |i, j| if j >= i { a.get(i, j) } else { 0.0 });
    // Q = H_0 H_1 ... H_{cols-1} applied to the first `cols` columns of I.
    let mut q = Matrix::from_fn(rows, cols, |i, j| if i == j { 1.0 } else { 0.0 });
    for k in (0..cols).rev() {
        let v = &reflectors[k];
        if v.is_empty() {
            continue;
        }
        for j in 0..cols {
            let dot: f64 = (k..rows).map(|i| v[i - k] * q.get(i, j)).sum();
            for i in k..rows {
                let val = q.get(i, j) - 2.0 * dot * v[i - k];
                q.set(i, j, val);
            }
        }
    }
    // Flip signs so that R has a non-negative diagonal where possible.
    for k in 0..cols {
        if r.get(k, k) < 0.0 {
            for i in 0..rows {
                q.set(i, k, -q.get(i, k));
            }
        }
    }
    let r = Matrix::from_fn(cols, cols, |i, j| if r.get(i, i) < 0.0 { -r.get(i, j) } else { r.get(i, j) });
    Ok((q, r))
}

/// Truncated SVD factors: `m ≈ u · diag(s) · vᵀ`.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn reconstruct(&self) -> Matrix {
        self.u
            .scale_columns(&self.s)
            .matmul(&self.v.transpose())
            .expect("svd factor shapes agree")
    }
}

/// Truncated SVD with a relative tolerance: keeps the minimal rank `r` such
/// that `sqrt(sum_{i>r} s_i^2) <= tol * ||m||_F`, capped by `max_rank`.
pub fn svd_truncated(m: &Matrix, tol: f64, max_rank: Option<usize>) -> Result<Svd, NumericError> {
    if !(tol >= 0.0) {
        return Err(NumericError::InvalidBounds(format!("svd tolerance {tol}")));
    }
    let full = svd_full(m)?;
    let norm = full.s.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(truncate(full, tol * norm, max_rank))
}

/// Truncated SVD with an absolute tail bound `sqrt(sum_{i>r} s_i^2) <= abs_tol`.
pub fn svd_truncated_abs(m: &Matrix, abs_tol: f64, max_rank: Option<usize>) -> Result<Svd, NumericError> {
    if !(abs_tol >= 0.0) {
        return Err(NumericError::InvalidBounds(format!("svd tolerance {abs_tol}")));
    }
    Ok(truncate(svd_full(m)?, abs_tol, max_rank))
}

fn truncate(full: Svd, abs_tol: f64, max_rank: Option<usize>) -> Svd {
    let n = full.s.len();
    // tail[r] = sqrt(sum_{i >= r} s_i^2)
    let mut tail = vec![0.0; n + 1];
    for i in (0..n).rev() {
        tail[i] = (tail[i + 1] * tail[i + 1] + full.s[i] * full.s[i]).sqrt();
    }
    let mut r = (0..=n).find(|&r| tail[r] <= abs_tol).unwrap_or(n);
    if let Some(cap) = max_rank {
        r = r.min(cap);
    }
    let r = r.max(1);
    if r == n {
        return full;
    }
    Svd {
        u: full.u.leading_columns(r),
        s: full.s[..r].to_vec(),
        v: full.v.leading_columns(r),
    }
}

/// Full thin SVD (`min(rows, cols)` singular triplets), sorted non-increasing.
pub fn svd_full(m: &Matrix) -> Result<Svd, NumericError> {
    if !m.is_finite() {
        return Err(NumericError::NonFinite("svd input"));
    }
    if m.rows >= m.cols {
        Ok(jacobi_tall(m))
    } else {
        let t = jacobi_tall(&m.transpose());
        Ok(Svd { u: t.v, s: t.s, v: t.u })
    }
}

/// One-sided (Hestenes) Jacobi on a tall matrix.
fn jacobi_tall(m: &Matrix) -> Svd {
    let (rows, cols) = (m.rows, m.cols);
    // Column-major working copies.
    let mut a: Vec<Vec<f64>> = (0..cols).map(|j| m.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..cols).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    const EPS: f64 = 1e-15;
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let (alpha, beta, gamma) = {
                    let (ap, aq) = (&a[p], &a[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for i in 0..rows {
                        alpha += ap[i] * ap[i];
                        beta += aq[i] * aq[i];
                        gamma += ap[i] * aq[i];
                    }
                    (alpha, beta, gamma)
                };
                if gamma == 0.0 || gamma.abs() <= EPS * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut a, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let sv: Vec<f64> = a.iter().map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| sv[j].partial_cmp(&sv[i]).unwrap_or(std::cmp::Ordering::Equal));
    let smax = order.first().map(|&i| sv[i]).unwrap_or(0.0);

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut s_sorted = Vec::with_capacity(cols);
    let mut v_cols = Vec::with_capacity(cols);
    for &j in &order {
        let sj = sv[j];
        let mut col: Vec<f64> = if sj > 0.0 && sj > 1e-13 * smax {
            a[j].iter().map(|x| x / sj).collect()
        } else {
            vec![0.0; rows]
        };
        orthonormalize_against(&mut col, &u_cols);
        u_cols.push(col);
        s_sorted.push(sj);
        v_cols.push(v[j].clone());
    }
    let u = Matrix::from_fn(rows, cols, |i, j| u_cols[j][i]);
    let vm = Matrix::from_fn(cols, cols, |i, j| v_cols[j][i]);
    Svd { u, s: s_sorted, v: vm }
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let (cp, cq) = (&mut head[p], &mut tail[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Re-orthogonalize `col` against `basis` (twice, modified Gram-Schmidt); if
/// it collapses, replace it with the first standard basis vector that does not.
fn orthonormalize_against(col: &mut Vec<f64>, basis: &[Vec<f64>]) {
    let project = |col: &mut Vec<f64>| {
        for _ in 0..2 {
            for b in basis {
                let d: f64 = col.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in col.iter_mut().zip(b) {
                    *x -= d * y;
                }
            }
        }
        col.iter().map(|x| x * x).sum::<f64>().sqrt()
    };
    let norm = project(col);
    if norm > 0.5 {
        col.iter_mut().for_each(|x| *x /= norm);
        return;
    }
    let n = col.len();
    for e in 0..n {
        let mut cand = vec![0.0; n];
        cand[e] = 1.0;
        let norm = project(&mut cand);
        if norm > 1e-6 {
            cand.iter_mut().for_each(|x| *x /= norm);
            *col = cand;
            return;
        }
    }
}

/// LU factorization with partial pivoting of a square matrix.
#[derive(Clone, Debug)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    pub fn new(m: &Matrix) -> Result<Self, NumericError> {
        if m.rows != m.cols {
            return Err(NumericError::Shape(format!("lu needs a square matrix, got {}x{}", m.rows, m.cols)));
        }
        let n = m.rows;
        let mut lu = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let mut p = k;
            let mut best = lu.get(k, k).abs();
            for i in k + 1..n {
                let v = lu.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(NumericError::Singular);
            }
            if p != k {
                for j in 0..n {
                    lu.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let pivot = lu.get(k, k);
            for i in k + 1..n {
                let f = lu.get(i, k) / pivot;
                lu.set(i, k, f);
                for j in k + 1..n {
                    let v = lu.get(i, j) - f * lu.get(k, j);
                    lu.set(i, j, v);
                }
            }
        }
        Ok(Self { lu, perm, sign })
    }

    pub fn det(&self) -> f64 {
        let n = self.lu.rows;
        (0..n).map(|i| self.lu.get(i, i)).product::<f64>() * self.sign
    }

    /// Solve `x · A = b` for every row `b` of `rhs` (i.e. `rhs · A⁻¹`).
    pub fn solve_right(&self, rhs: &Matrix) -> Matrix {
        // x A = b  <=>  Aᵀ xᵀ = bᵀ. With P A = L U: Aᵀ = Uᵀ Lᵀ P.
        let n = self.lu.rows;
        assert_eq!(rhs.cols, n);
        let mut out = Matrix::zeros(rhs.rows, n);
        let mut y = vec![0.0; n];
        for r in 0..rhs.rows {
            let b = rhs.row(r);
            // Uᵀ z = b (forward).
            for i in 0..n {
                let mut acc = b[i];
                for k in 0..i {
                    acc -= self.lu.get(k, i) * y[k];
                }
                y[i] = acc / self.lu.get(i, i);
            }
            // Lᵀ w = z (backward, unit diagonal).
            for i in (0..n).rev() {
                let mut acc = y[i];
                for k in i + 1..n {
                    acc -= self.lu.get(k, i) * y[k];
                }
                y[i] = acc;
            }
            // x = Pᵀ w.
            for i in 0..n {
                out.set(r, self.perm[i], y[i]);
            }
        }
        out
    }
}

pub fn det(m: &Matrix) -> Result<f64, NumericError> {
    match Lu::new(m) {
        Ok(lu) => Ok(lu.det()),
        Err(NumericError::Singular) => Ok(0.0),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;

    fn random(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.normal())
    }

    fn orthonormality_error(q: &Matrix) -> f64 {
        let g = q.transpose().matmul(q).unwrap();
        g.sub(&Matrix::identity(q.cols())).max_abs()
    }

    #[test]
    fn qr_random_tall() {
        let mut rng = Rng::new(1);
        let m = random(10, 4, &mut rng);
        let (q, r) = qr(&m).unwrap();
        assert!(orthonormality_error(&q) <= 1e-10);
        assert!(q.matmul(&r).unwrap().sub(&m).max_abs() <= 1e-12);
        for i in 0..4 {
            for j in 0..i {
                assert_eq!(r.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn qr_orthonormal_input() {
        let mut rng = Rng::new(2);
        let (q0, _) = qr(&random(6, 3, &mut rng)).unwrap();
        let (q, r) = qr(&q0).unwrap();
        for j in 0..3 {
            assert!((r.get(j, j).abs() - 1.0).abs() < 1e-12);
            let sign = r.get(j, j).signum();
            for i in 0..6 {
                assert!((q.get(i, j) * sign - q0.get(i, j)).abs() < 1e-12);
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(r.get(i, j).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn qr_rank_deficient() {
        let mut rng = Rng::new(3);
        let a = random(8, 1, &mut rng);
        let b = random(8, 1, &mut rng);
        // Column 2 = column 0 + column 1.
        let m = Matrix::from_fn(8, 3, |i, j| match j {
            0 => a.get(i, 0),
            1 => b.get(i, 0),
            _ => a.get(i, 0) + b.get(i, 0),
        });
        let (q, r) = qr(&m).unwrap();
        assert!(r.get(2, 2).abs() <= 1e-12);
        assert!(orthonormality_error(&q) <= 1e-10);
        assert!(q.matmul(&r).unwrap().sub(&m).max_abs() <= 1e-12);
    }

    #[test]
    fn qr_rejects_wide() {
        assert!(matches!(qr(&Matrix::zeros(2, 3)), Err(NumericError::Shape(_))));
    }

    #[test]
    fn svd_identity() {
        let svd = svd_truncated(&Matrix::identity(3), 0.0, None).unwrap();
        assert_eq!(svd.s, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn svd_rank_one() {
        let mut rng = Rng::new(4);
        let u = random(7, 1, &mut rng);
        let v = random(1, 5, &mut rng);
        let m = u.matmul(&v).unwrap();
        let svd = svd_truncated(&m, 1e-12, None).unwrap();
        assert_eq!(svd.rank(), 1);
        assert!(svd.reconstruct().sub(&m).frobenius_norm() <= 1e-12 * m.frobenius_norm());
    }

    #[test]
    fn svd_random_reconstruction() {
        let mut rng = Rng::new(5);
        for &(r, c) in &[(20, 15), (15, 20), (1, 5), (5, 1)] {
            let m = random(r, c, &mut rng);
            let svd = svd_truncated(&m, 0.0, None).unwrap();
            let err = svd.reconstruct().sub(&m).frobenius_norm() / m.frobenius_norm();
            assert!(err <= 1e-10, "{r}x{c}: {err}");
            assert!(orthonormality_error(&svd.u) <= 1e-10);
            assert!(orthonormality_error(&svd.v) <= 1e-10);
            assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn svd_rank_deficient_keeps_orthonormal_u() {
        let mut rng = Rng::new(6);
        let a = random(9, 2, &mut rng);
        let b = random(2, 6, &mut rng);
        let m = a.matmul(&b).unwrap();
        let svd = svd_full(&m).unwrap();
        assert!(orthonormality_error(&svd.u) <= 1e-10);
        assert!(svd.s[2] <= 1e-12 * svd.s[0]);
    }

    #[test]
    fn svd_tolerance_and_cap() {
        let m = Matrix::from_fn(4, 4, |i, j| if i == j { [4.0, 3.0, 0.02, 0.01][i] } else { 0.0 });
        let norm = m.frobenius_norm();
        let svd = svd_truncated(&m, 0.03 / norm, None).unwrap();
        assert_eq!(svd.rank(), 2);
        let svd = svd_truncated(&m, 0.0, Some(3)).unwrap();
        assert_eq!(svd.rank(), 3);
    }

    #[test]
    fn svd_rejects_non_finite() {
        let m = Matrix::new(1, 2, vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(svd_truncated(&m, 0.0, None), Err(NumericError::NonFinite(_))));
    }

    #[test]
    fn lu_solve_and_det() {
        let mut rng = Rng::new(7);
        let a = random(5, 5, &mut rng);
        let b = random(3, 5, &mut rng);
        let lu = Lu::new(&a).unwrap();
        let x = lu.solve_right(&b);
        assert!(x.matmul(&a).unwrap().sub(&b).max_abs() < 1e-10);
        let d = Matrix::from_fn(2, 2, |i, j| [[1.0, 2.0], [3.0, 4.0]][i][j]);
        assert!((det(&d).unwrap() + 2.0).abs() < 1e-14);
        assert_eq!(det(&Matrix::zeros(3, 3)).unwrap(), 0.0);
    }
}

//! Quasi-maximum-volume row selection for tall matrices.
//!
//! Given an `n x r` matrix `A` of full column rank, [`maxvol`] finds `r` rows
//! `I` such that every entry of `C = A · A[I]⁻¹` is bounded by `1 + delta`.
//! Such a dominant submatrix has a volume within `((1 + delta)·√r)^r` of the
//! global maximum over all `r x r` submatrices.

use crate::linalg::{svd_full, Lu, Matrix};
use crate::NumericError;

pub const DEFAULT_DELTA: f64 = 0.01;
pub const DEFAULT_MAX_ITERS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIters,
}

#[derive(Clone, Debug)]
pub struct MaxvolResult {
    pub row_indices: Vec<usize>,
    /// `C = A · A[I]⁻¹`; rows at `row_indices` form the identity.
    pub coeffs: Matrix,
    pub swaps: usize,
    pub termination: Termination,
    /// `|det(A[I])|` before the first swap and after every swap.
    pub volumes: Vec<f64>,
}

pub fn maxvol(a: &Matrix, delta: f64, max_iters: usize) -> Result<MaxvolResult, NumericError> {
    let (n, r) = (a.rows(), a.cols());
    if n < r {
        return Err(NumericError::Shape(format!("maxvol needs rows >= cols, got {n}x{r}")));
    }
    if !(delta >= 0.0) {
        return Err(NumericError::InvalidBounds(format!("maxvol delta {delta}")));
    }
    let s = svd_full(a)?.s;
    let (smax, smin) = (s[0], s[r - 1]);
    if !(smax > 0.0) || smin <= 1e-12 * smax {
        return Err(NumericError::RankDeficient(format!(
            "smallest singular value {smin:e} vs largest {smax:e}"
        )));
    }

    let mut rows = initial_rows(a);
    let mut lu = Lu::new(&a.select_rows(&rows))?;
    let mut volumes = vec![lu.det().abs()];
    let mut coeffs = lu.solve_right(a);
    let mut swaps = 0;
    let termination = loop {
        // Largest |C|, lowest linear index on ties.
        let (mut bi, mut bj, mut best) = (0, 0, -1.0);
        for i in 0..n {
            for j in 0..r {
                let v = coeffs.get(i, j).abs();
                if v > best {
                    (bi, bj, best) = (i, j, v);
                }
            }
        }
        if best <= 1.0 + delta {
            break Termination::Converged;
        }
        if swaps >= max_iters {
            break Termination::MaxIters;
        }
        rows[bj] = bi;
        swaps += 1;
        lu = Lu::new(&a.select_rows(&rows))?;
        volumes.push(lu.det().abs());
        coeffs = lu.solve_right(a);
    };
    // Clean the identity block exactly.
    for (j, &i) in rows.iter().enumerate() {
        for c in 0..r {
            coeffs.set(i, c, if c == j { 1.0 } else { 0.0 });
        }
    }
    Ok(MaxvolResult { row_indices: rows, coeffs, swaps, termination, volumes })
}

/// Starting rows from Gaussian elimination with row pivoting (ties to the
/// lowest row index).
fn initial_rows(a: &Matrix) -> Vec<usize> {
    let (n, r) = (a.rows(), a.cols());
    let mut work = a.clone();
    let mut used = vec![false; n];
    let mut rows = Vec::with_capacity(r);
    for j in 0..r {
        let mut p = usize::MAX;
        let mut best = -1.0;
        for i in 0..n {
            if !used[i] && work.get(i, j).abs() > best {
                best = work.get(i, j).abs();
                p = i;
            }
        }
        used[p] = true;
        rows.push(p);
        let pivot = work.get(p, j);
        if pivot == 0.0 {
            continue;
        }
        for i in 0..n {
            if used[i] {
                continue;
            }
            let f = work.get(i, j) / pivot;
            for c in j..r {
                let v = work.get(i, c) - f * work.get(p, c);
                work.set(i, c, v);
            }
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::det;
    use crate::Rng;

    fn random(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.normal())
    }

    /// Exhaustive oracle: max |det| over all r-row subsets.
    fn brute_force_max_det(a: &Matrix) -> f64 {
        let (n, r) = (a.rows(), a.cols());
        let mut best: f64 = 0.0;
        let mut combo: Vec<usize> = (0..r).collect();
        loop {
            best = best.max(det(&a.select_rows(&combo)).unwrap().abs());
            let mut k = r;
            loop {
                if k == 0 {
                    return best;
                }
                k -= 1;
                if combo[k] < n - r + k {
                    break;
                }
            }
            combo[k] += 1;
            for m in k + 1..r {
                combo[m] = combo[m - 1] + 1;
            }
        }
    }

    #[test]
    fn identity_on_top_of_zeros() {
        let a = Matrix::from_fn(6, 3, |i, j| if i == j { 1.0 } else { 0.0 });
        let res = maxvol(&a, DEFAULT_DELTA, DEFAULT_MAX_ITERS).unwrap();
        let mut idx = res.row_indices.clone();
        idx.sort();
        assert_eq!(idx, vec![0, 1, 2]);
    }

    #[test]
    fn planted_identity_rows() {
        let mut rng = Rng::new(11);
        let planted = [2usize, 4, 5];
        let a = Matrix::from_fn(8, 3, |i, j| match planted.iter().position(|&p| p == i) {
            Some(k) => if k == j { 1.0 } else { 0.0 },
            None => 1e-3 * rng.normal(),
        });
        // Oracle agrees that the planted rows maximize |det|.
        let best = brute_force_max_det(&a);
        assert!((det(&a.select_rows(&planted)).unwrap().abs() - best).abs() < 1e-12);
        let res = maxvol(&a, DEFAULT_DELTA, DEFAULT_MAX_ITERS).unwrap();
        let mut idx = res.row_indices.clone();
        idx.sort();
        assert_eq!(idx, planted.to_vec());
    }

    #[test]
    fn dominance_and_volume_bound_12x4() {
        let mut rng = Rng::new(12);
        for _ in 0..10 {
            let a = random(12, 4, &mut rng);
            let res = maxvol(&a, 0.01, 100).unwrap();
            assert_eq!(res.termination, Termination::Converged);
            assert!(res.coeffs.max_abs() <= 1.01 + 1e-12);
            let vol = det(&a.select_rows(&res.row_indices)).unwrap().abs();
            let bound = (1.01f64 * 2.0).powi(4); // ((1 + delta) · sqrt(r))^r with r = 4
            assert!(vol * bound >= brute_force_max_det(&a));
        }
    }

    #[test]
    fn coefficient_identity_block() {
        let mut rng = Rng::new(13);
        let a = random(9, 3, &mut rng);
        let res = maxvol(&a, 0.0, 100).unwrap();
        let c = res.coeffs.select_rows(&res.row_indices);
        assert!(c.sub(&Matrix::identity(3)).max_abs() < 1e-8);
        // C reproduces A from the selected rows.
        let rebuilt = res.coeffs.matmul(&a.select_rows(&res.row_indices)).unwrap();
        assert!(rebuilt.sub(&a).max_abs() < 1e-10);
        let mut sorted = res.row_indices.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), 3);
    }

    #[test]
    fn volume_is_monotone() {
        let mut rng = Rng::new(14);
        for _ in 0..20 {
            let a = random(30, 5, &mut rng);
            let res = maxvol(&a, 0.0, 100).unwrap();
            assert!(res.volumes.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = Rng::new(15);
        let a = random(10, 3, &mut rng);
        let mut perm: Vec<usize> = (0..10).collect();
        rng.shuffle(&mut perm);
        // Row i of `b` is row perm[i] of `a`.
        let b = a.select_rows(&perm);
        let ra = maxvol(&a, 0.01, 100).unwrap();
        let rb = maxvol(&b, 0.01, 100).unwrap();
        let mut mapped: Vec<usize> = rb.row_indices.iter().map(|&i| perm[i]).collect();
        let mut direct = ra.row_indices.clone();
        mapped.sort();
        direct.sort();
        assert_eq!(mapped, direct);
    }

    #[test]
    fn errors() {
        assert!(matches!(maxvol(&Matrix::zeros(2, 3), 0.01, 10), Err(NumericError::Shape(_))));
        let deficient = Matrix::from_fn(5, 2, |i, _| i as f64);
        assert!(matches!(maxvol(&deficient, 0.01, 10), Err(NumericError::RankDeficient(_))));
    }

    #[test]
    fn max_iters_zero_reports_termination() {
        let mut rng = Rng::new(16);
        let a = random(40, 4, &mut rng);
        let res = maxvol(&a, 0.0, 0).unwrap();
        if res.coeffs.max_abs() > 1.0 {
            assert_eq!(res.termination, Termination::MaxIters);
        }
    }
}

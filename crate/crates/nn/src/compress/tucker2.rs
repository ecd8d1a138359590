use super::CompressError;
use ttkit_core::linalg::svd_full;
use ttkit_core::tensor::{fold, unfold};
use ttkit_core::{DenseTensor, Matrix};

/// Channel-bottleneck factors of a `[C_out, C_in, D, D]` kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct Tucker2Factors {
    /// `[C_in, R]`
    pub u_in: Matrix,
    /// `[R, R, D, D]`, indexed `(out-side rank, in-side rank, d1, d2)`.
    pub core: DenseTensor,
    /// `[C_out, R]`
    pub u_out: Matrix,
}

impl Tucker2Factors {
    pub fn rank(&self) -> usize {
        self.u_in.cols()
    }

    pub fn param_count(&self) -> usize {
        self.u_in.data().len() + self.core.len() + self.u_out.data().len()
    }

    pub fn reconstruct(&self) -> DenseTensor {
        tucker2_reconstruct(self)
    }
}

/// Result of [`tucker2_decompose`]. `history[0]` is the error after the SVD
/// initialization, then one entry per accepted ALS sweep.
#[derive(Clone, Debug)]
pub struct Tucker2Result {
    pub factors: Tucker2Factors,
    pub rel_error: f64,
    pub history: Vec<f64>,
}

/// `t ×_mode m`: contracts mode `mode` of `t` with the columns of `m`
/// (`m` is `[new, old]`).
fn mode_product(t: &DenseTensor, mode: usize, m: &Matrix) -> Result<DenseTensor, CompressError> {
    let mut shape = t.shape().to_vec();
    shape[mode] = m.rows();
    Ok(fold(&m.matmul(&unfold(t, mode)?)?, mode, &shape)?)
}

fn leading_left_vectors(m: &Matrix, r: usize) -> Result<Matrix, CompressError> {
    Ok(svd_full(m)?.u.leading_columns(r))
}

fn rel_err(k: &DenseTensor, f: &Tucker2Factors) -> f64 {
    k.relative_error(&f.reconstruct()).expect("same shape")
}

fn core_of(k: &DenseTensor, u_in: &Matrix, u_out: &Matrix) -> Result<DenseTensor, CompressError> {
    mode_product(&mode_product(k, 0, &u_out.transpose())?, 1, &u_in.transpose())
}

pub fn tucker2_decompose(k: &DenseTensor, rank: usize, max_iters: usize, tol: f64) -> Result<Tucker2Result, CompressError> {
    let s = k.shape();
    if s.len() != 4 || s[2] != s[3] || s.contains(&0) {
        return Err(CompressError::Rank(format!("kernel must be [C_out, C_in, D, D], got {s:?}")));
    }
    let (c_out, c_in) = (s[0], s[1]);
    if rank < 1 || rank > c_in.min(c_out) {
        return Err(CompressError::Rank(format!("rank {rank} outside [1, {}]", c_in.min(c_out))));
    }
    let mut u_out = leading_left_vectors(&unfold(k, 0)?, rank)?;
    let mut u_in = leading_left_vectors(&unfold(k, 1)?, rank)?;
    let core = core_of(k, &u_in, &u_out)?;
    let mut best = Tucker2Factors { u_in: u_in.clone(), core, u_out: u_out.clone() };
    let mut err = rel_err(k, &best);
    let mut history = vec![err];
    for _ in 0..max_iters {
        if err == 0.0 {
            break;
        }
        u_out = leading_left_vectors(&unfold(&mode_product(k, 1, &u_in.transpose())?, 0)?, rank)?;
        u_in = leading_left_vectors(&unfold(&mode_product(k, 0, &u_out.transpose())?, 1)?, rank)?;
        let cand = Tucker2Factors { u_in: u_in.clone(), core: core_of(k, &u_in, &u_out)?, u_out: u_out.clone() };
        let e = rel_err(k, &cand);
        if e > err {
            break;
        }
        let improvement = err - e;
        best = cand;
        err = e;
        history.push(e);
        if improvement < tol {
            break;
        }
    }
    Ok(Tucker2Result { factors: best, rel_error: err, history })
}

/// `K[o, i, a, b] = Σ_{p,q} u_out[o, p] core[p, q, a, b] u_in[i, q]`.
pub fn tucker2_reconstruct(f: &Tucker2Factors) -> DenseTensor {
    let t = mode_product(&f.core, 0, &f.u_out).expect("factor shapes agree");
    mode_product(&t, 1, &f.u_in).expect("factor shapes agree")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ttkit_core::Rng;

    fn random_matrix(r: usize, c: usize, rng: &mut Rng) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.normal())
    }

    #[test]
    fn reconstruct_matches_naive_contraction() {
        let mut rng = Rng::new(5);
        let (co, ci, r, d) = (4, 3, 2, 2);
        let f = Tucker2Factors {
            u_in: random_matrix(ci, r, &mut rng),
            core: DenseTensor::from_fn(vec![r, r, d, d], |_| rng.normal()).unwrap(),
            u_out: random_matrix(co, r, &mut rng),
        };
        let k = f.reconstruct();
        for o in 0..co {
            for i in 0..ci {
                for a in 0..d {
                    for b in 0..d {
                        let mut s = 0.0;
                        for p in 0..r {
                            for q in 0..r {
                                s += f.u_out.get(o, p) * f.core.get(&[p, q, a, b]).unwrap() * f.u_in.get(i, q);
                            }
                        }
                        assert!((k.get(&[o, i, a, b]).unwrap() - s).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn identity_factors_give_core() {
        let mut rng = Rng::new(6);
        let k = DenseTensor::from_fn(vec![3, 3, 2, 2], |_| rng.normal()).unwrap();
        let f = Tucker2Factors { u_in: Matrix::identity(3), core: k.clone(), u_out: Matrix::identity(3) };
        assert!(f.reconstruct().relative_error(&k).unwrap() < 1e-15);
    }

    #[test]
    fn rank_out_of_range() {
        let k = DenseTensor::zeros(vec![4, 2, 3, 3]).unwrap();
        assert!(matches!(tucker2_decompose(&k, 3, 50, 1e-8), Err(CompressError::Rank(_))));
        assert!(matches!(tucker2_decompose(&k, 0, 50, 1e-8), Err(CompressError::Rank(_))));
    }
}

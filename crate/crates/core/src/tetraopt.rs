//! TT-cross black-box optimizer over discrete grids.
//!
//! Index sets are refined by alternating sweeps: every step evaluates one core
//! block of the grid, orthogonalizes its value matrix and keeps the rows that
//! maxvol picks. The answer is always the best point actually evaluated.

use crate::harness::{Direction, Evaluator, HarnessError, Objective, OptimizationTrace};
use crate::linalg::{qr, Matrix};
use crate::maxvol::{maxvol, DEFAULT_DELTA, DEFAULT_MAX_ITERS};
use crate::tt::grid_indices;
use crate::{MultiIndex, Rng};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Identity,
    /// `exp(beta * (f - running_best))`, sign-adjusted for minimization.
    ExpShift { beta: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub rank: usize,
    pub sweeps: usize,
    pub budget: usize,
    pub seed: u64,
    pub mode: Direction,
    pub delta: f64,
    pub max_iters: usize,
    pub transform: Transform,
}

impl OptConfig {
    pub fn new(rank: usize, budget: usize, seed: u64) -> Self {
        Self {
            rank,
            sweeps: 100,
            budget,
            seed,
            mode: Direction::Maximize,
            delta: DEFAULT_DELTA,
            max_iters: DEFAULT_MAX_ITERS,
            transform: Transform::ExpShift { beta: 1.0 },
        }
    }

    /// Evaluations needed for one core update: `rank^2 * max_mode_size`,
    /// capped by the grid itself.
    pub fn required_budget(&self, dims: &[usize]) -> usize {
        let max_n = dims.iter().copied().max().unwrap_or(1);
        let grid = dims.iter().try_fold(1usize, |a, &n| a.checked_mul(n)).unwrap_or(usize::MAX);
        self.rank.saturating_mul(self.rank).saturating_mul(max_n).min(grid)
    }

    fn validate(&self, dims: &[usize]) -> Result<(), HarnessError> {
        if self.rank < 1 || self.sweeps < 1 {
            return Err(HarnessError::Config(format!(
                "rank and sweeps must be >= 1, got {} and {}",
                self.rank, self.sweeps
            )));
        }
        if dims.is_empty() || dims.contains(&0) {
            return Err(HarnessError::Config(format!("mode sizes must be >= 1, got {dims:?}")));
        }
        if !(self.delta >= 0.0) {
            return Err(HarnessError::Config(format!("maxvol delta must be >= 0, got {}", self.delta)));
        }
        if let Transform::ExpShift { beta } = self.transform {
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(HarnessError::Config(format!("exp_shift beta must be positive, got {beta}")));
            }
        }
        let needed = self.required_budget(dims);
        if self.budget < needed {
            return Err(HarnessError::BudgetTooSmall { budget: self.budget, needed });
        }
        Ok(())
    }
}

/// Cross index sets. `left[k]` holds prefixes over modes `0..k` and
/// `right[k]` suffixes over modes `k+1..d`, so position `k` is bracketed by
/// `left[k]` and `right[k]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexSets {
    pub left: Vec<Vec<MultiIndex>>,
    pub right: Vec<Vec<MultiIndex>>,
}

impl IndexSets {
    /// Empty prefixes everywhere and `rank` seeded random suffixes per
    /// position (all suffixes when there are no more than `rank`).
    pub fn init(dims: &[usize], rank: usize, rng: &mut Rng) -> Self {
        let d = dims.len();
        let mut left = vec![Vec::new(); d];
        left[0] = vec![Vec::new()];
        let right = (0..d)
            .map(|k| {
                let tail = &dims[k + 1..];
                let count = tail.iter().try_fold(1usize, |a, &n| a.checked_mul(n)).unwrap_or(usize::MAX);
                if count <= rank {
                    return grid_indices(tail).collect();
                }
                let mut seen = HashSet::new();
                let mut out = Vec::with_capacity(rank);
                while out.len() < rank {
                    let s: MultiIndex = tail.iter().map(|&n| rng.below(n)).collect();
                    if seen.insert(s.clone()) {
                        out.push(s);
                    }
                }
                out
            })
            .collect();
        Self { left, right }
    }

    pub fn query_block(&self, k: usize, n_k: usize) -> Vec<MultiIndex> {
        query_block(self, k, n_k)
    }
}

/// Core block at position `k`: every `(l, i, s)` with `l` in `left[k]`,
/// `i < n_k`, `s` in `right[k]`, ordered left-major, then mode, then right.
pub fn query_block(sets: &IndexSets, k: usize, n_k: usize) -> Vec<MultiIndex> {
    let mut out = Vec::with_capacity(sets.left[k].len() * n_k * sets.right[k].len());
    for l in &sets.left[k] {
        for i in 0..n_k {
            for s in &sets.right[k] {
                let mut p = Vec::with_capacity(l.len() + 1 + s.len());
                p.extend_from_slice(l);
                p.push(i);
                p.extend_from_slice(s);
                out.push(p);
            }
        }
    }
    out
}

/// Runs the optimizer on a fresh evaluator and returns its trace.
pub fn optimize(objective: &dyn Objective, cfg: &OptConfig, parallelism: usize) -> Result<OptimizationTrace, HarnessError> {
    let mut ev = Evaluator::new(objective, cfg.mode, cfg.budget, parallelism);
    optimize_with(&mut ev, cfg)?;
    Ok(ev.into_trace("tetraopt", cfg.seed, serde_json::to_value(cfg).expect("config serializes")))
}

/// Runs the optimizer on an existing evaluator, whose budget caps the run.
/// Returns the final index sets.
pub fn optimize_with(ev: &mut Evaluator, cfg: &OptConfig) -> Result<IndexSets, HarnessError> {
    let dims = ev.dims().to_vec();
    cfg.validate(&dims)?;
    let needed = cfg.required_budget(&dims);
    if ev.remaining() < needed {
        return Err(HarnessError::BudgetTooSmall { budget: ev.remaining(), needed });
    }
    let d = dims.len();
    let mut rng = Rng::new(cfg.seed);
    let mut sets = IndexSets::init(&dims, cfg.rank, &mut rng);
    for _ in 0..cfg.sweeps {
        let before = ev.evaluations();
        for k in 0..d {
            let Some(m) = step(ev, cfg, &sets, k, true)? else { return Ok(sets) };
            if k + 1 < d {
                let rows = select_rows(&m, cfg, &mut rng)?;
                let n = dims[k];
                sets.left[k + 1] = rows
                    .iter()
                    .map(|&r| {
                        let mut p = sets.left[k][r / n].clone();
                        p.push(r % n);
                        p
                    })
                    .collect();
            }
        }
        for k in (0..d).rev() {
            let Some(m) = step(ev, cfg, &sets, k, false)? else { return Ok(sets) };
            if k > 0 {
                let rows = select_rows(&m, cfg, &mut rng)?;
                let nr = sets.right[k].len();
                sets.right[k - 1] = rows
                    .iter()
                    .map(|&r| {
                        let mut p = vec![r / nr];
                        p.extend_from_slice(&sets.right[k][r % nr]);
                        p
                    })
                    .collect();
            }
        }
        if ev.exhausted() {
            break;
        }
        if ev.evaluations() == before {
            // The sets reached a fixed point; restart from fresh random
            // suffixes so the remaining budget explores elsewhere.
            let fresh = IndexSets::init(&dims, cfg.rank, &mut rng);
            sets.right = fresh.right;
        }
    }
    Ok(sets)
}

/// Evaluates the block at `k` and returns its value matrix: rows `(l, i)` by
/// columns `s` when sweeping forward, rows `(i, s)` by columns `l` backward.
/// `None` when the budget ran out before the block was complete.
fn step(ev: &mut Evaluator, cfg: &OptConfig, sets: &IndexSets, k: usize, forward: bool) -> Result<Option<Matrix>, HarnessError> {
    let n = ev.dims()[k];
    let block = query_block(sets, k, n);
    ev.evaluate_batch(&block)?;
    let raw: Option<Vec<f64>> = block.iter().map(|p| ev.get(p)).collect();
    let Some(raw) = raw else { return Ok(None) };
    let values = transform(&raw, cfg, ev.best_value());
    let (nl, nr) = (sets.left[k].len(), sets.right[k].len());
    // raw is laid out as [l][i][s].
    let m = if forward {
        Matrix::new(nl * n, nr, values)?
    } else {
        Matrix::from_fn(n * nr, nl, |row, l| values[(l * n + row / nr) * nr + row % nr])
    };
    Ok(Some(m))
}

fn transform(raw: &[f64], cfg: &OptConfig, best: f64) -> Vec<f64> {
    let sign = cfg.mode.sign();
    match cfg.transform {
        Transform::Identity => {
            let floor = raw
                .iter()
                .filter(|v| v.is_finite())
                .map(|v| sign * v)
                .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))))
                .unwrap_or(0.0);
            raw.iter().map(|v| if v.is_finite() { sign * v } else { floor }).collect()
        }
        Transform::ExpShift { beta } => raw
            .iter()
            .map(|v| if v.is_finite() && best.is_finite() { (beta * sign * (v - best)).exp() } else { 0.0 })
            .collect(),
    }
}

/// Picks up to `rank` rows of `m`, ascending. Maxvol runs on the orthonormal
/// factor of `m`; when `m` has fewer columns than `rank` the rest are random
/// unused rows.
fn select_rows(m: &Matrix, cfg: &OptConfig, rng: &mut Rng) -> Result<Vec<usize>, HarnessError> {
    let rows = m.rows();
    let target = cfg.rank.min(rows);
    if rows <= target {
        return Ok((0..rows).collect());
    }
    let (q, _) = qr(m)?;
    let mut picked = maxvol(&q, cfg.delta, cfg.max_iters)?.row_indices;
    picked.sort_unstable();
    picked.dedup();
    if picked.len() < target {
        let mut rest: Vec<usize> = (0..rows).filter(|r| picked.binary_search(r).is_err()).collect();
        rng.shuffle(&mut rest);
        picked.extend(rest.into_iter().take(target - picked.len()));
        picked.sort_unstable();
    }
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::FnObjective;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn sets(left: Vec<MultiIndex>, right: Vec<MultiIndex>) -> IndexSets {
        IndexSets { left: vec![Vec::new(), left], right: vec![Vec::new(), right] }
    }

    #[test]
    fn block_ordering() {
        let s = sets(vec![vec![0], vec![2]], vec![vec![1], vec![0], vec![3]]);
        let b = query_block(&s, 1, 5);
        assert_eq!(b.len(), 30);
        assert_eq!(b[0], vec![0, 0, 1]);
        assert_eq!(b[1], vec![0, 0, 0]);
        assert_eq!(b[3], vec![0, 1, 1]);
        assert_eq!(b[15], vec![2, 0, 1]);
        let distinct: HashSet<_> = b.iter().collect();
        assert_eq!(distinct.len(), 30);
        assert_eq!(b, query_block(&s, 1, 5));
    }

    #[test]
    fn first_block_size() {
        let mut rng = Rng::new(0);
        let s = IndexSets::init(&[6, 4, 4], 3, &mut rng);
        assert_eq!(s.left[0], vec![Vec::<usize>::new()]);
        assert!(query_block(&s, 0, 6).len() <= 6 * 3);
        assert_eq!(s.right[2], vec![Vec::<usize>::new()]);
        // 4 suffixes of mode 2 alone is still more than rank 3.
        assert_eq!(s.right[1].len(), 3);
    }

    #[test]
    fn one_dimensional_scan() {
        let vals = [3.0, -1.0, 9.5, 2.0, 9.0, 0.0, 4.0];
        let f = FnObjective::new(vec![7], |i: &[usize]| vals[i[0]]);
        for rank in [1, 3, 8] {
            let t = optimize(&f, &OptConfig::new(rank, 7, 1), 1).unwrap();
            assert_eq!(t.len(), 7);
            assert_eq!(t.best().unwrap().index, vec![2]);
        }
    }

    #[test]
    fn separable_finds_global_max() {
        let a = [0.1, 0.9, 0.3, 0.2, 0.5];
        let b = [0.4, 0.0, 0.6, 0.8, 0.1];
        let c = [0.7, 0.2, 0.3, 0.9, 0.05];
        let f = FnObjective::new(vec![5, 5, 5], |i: &[usize]| a[i[0]] + b[i[1]] + c[i[2]]);
        let mut oracle = (f64::MIN, vec![]);
        for p in grid_indices(&[5, 5, 5]) {
            let v = a[p[0]] + b[p[1]] + c[p[2]];
            if v > oracle.0 {
                oracle = (v, p);
            }
        }
        for seed in 0..10 {
            let mut cfg = OptConfig::new(2, 125, seed);
            cfg.sweeps = 2;
            let t = optimize(&f, &cfg, 1).unwrap();
            assert_eq!(t.best().unwrap().index, oracle.1, "seed {seed}");
        }
    }

    #[test]
    fn budget_too_small_before_evaluation() {
        let calls = AtomicUsize::new(0);
        let f = FnObjective::new(vec![5, 5, 5], |_: &[usize]| {
            calls.fetch_add(1, Ordering::SeqCst);
            0.0
        });
        let err = optimize(&f, &OptConfig::new(3, 44, 0), 1).unwrap_err();
        assert!(matches!(err, HarnessError::BudgetTooSmall { budget: 44, needed: 45 }));
        assert_eq!(calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn deterministic_and_cached() {
        let calls = AtomicUsize::new(0);
        let f = FnObjective::new(vec![4, 6, 5, 3], |i: &[usize]| {
            calls.fetch_add(1, Ordering::SeqCst);
            ((i[0] * 13 + i[1] * 7 + i[2] * 3 + i[3]) % 17) as f64 - (i[1] as f64 - 2.5).powi(2)
        });
        let cfg = OptConfig::new(3, 200, 42);
        let a = optimize(&f, &cfg, 1).unwrap();
        let b = optimize(&f, &cfg, 6).unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= 200);
        let distinct: HashSet<_> = a.entries.iter().map(|e| &e.index).collect();
        assert_eq!(distinct.len(), a.len());
        assert_eq!(calls.load(Ordering::SeqCst), 2 * a.len());
        let bsf = a.best_so_far();
        assert!(bsf.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn non_finite_values_are_flagged() {
        let f = FnObjective::new(vec![4, 4], |i: &[usize]| if i[0] == 1 { f64::NAN } else { (i[0] + i[1]) as f64 });
        let t = optimize(&f, &OptConfig::new(2, 16, 0), 1).unwrap();
        assert!(t.entries.iter().any(|e| e.flag == crate::harness::EvalFlag::NonFinite));
        assert_eq!(t.best_value(), Some(6.0));
    }

    #[test]
    fn minimization() {
        let f = FnObjective::new(vec![6, 6], |i: &[usize]| ((i[0] as f64) - 4.0).powi(2) + ((i[1] as f64) - 1.0).powi(2));
        let mut cfg = OptConfig::new(2, 36, 3);
        cfg.mode = Direction::Minimize;
        let t = optimize(&f, &cfg, 1).unwrap();
        assert_eq!(t.best().unwrap().index, vec![4, 1]);
    }

    #[test]
    fn block_covering_grid_is_exhaustive() {
        // rank^2 * n >= grid: the first block already covers everything.
        let f = FnObjective::new(vec![3, 3], |i: &[usize]| (i[0] * 3 + i[1]) as f64);
        let t = optimize(&f, &OptConfig::new(3, 9, 0), 1).unwrap();
        assert_eq!(t.len(), 9);
    }

    #[test]
    fn config_errors() {
        let f = FnObjective::new(vec![3, 3], |_: &[usize]| 0.0);
        assert!(matches!(optimize(&f, &OptConfig::new(0, 9, 0), 1), Err(HarnessError::Config(_))));
        let mut cfg = OptConfig::new(1, 9, 0);
        cfg.transform = Transform::ExpShift { beta: -1.0 };
        assert!(matches!(optimize(&f, &cfg, 1), Err(HarnessError::Config(_))));
    }
}

use super::{linear, Evaluator, HarnessError, Objective, OptimizationTrace};
use crate::tt::grid_indices;
use crate::{MultiIndex, Rng};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

const RANDOM_BATCH: usize = 32;
const MAX_REJECTIONS: usize = 64;

/// Draws a uniform point not yet evaluated and not in `taken`. After
/// `MAX_REJECTIONS` misses it falls back to picking among the enumerated
/// leftovers, so it terminates on nearly full grids.
fn sample_unseen(ev: &Evaluator, rng: &mut Rng, taken: &HashSet<MultiIndex>) -> Option<MultiIndex> {
    let dims = ev.dims().to_vec();
    for _ in 0..MAX_REJECTIONS {
        let p: MultiIndex = dims.iter().map(|&n| rng.below(n)).collect();
        if !ev.contains(&p) && !taken.contains(&p) {
            return Some(p);
        }
    }
    let mut free: Vec<MultiIndex> = grid_indices(&dims).filter(|p| !ev.contains(p) && !taken.contains(p)).collect();
    if free.is_empty() {
        None
    } else {
        let k = rng.below(free.len());
        Some(free.swap_remove(k))
    }
}

/// Uniform sampling without replacement until the budget or the grid runs out.
pub fn random_search(objective: &dyn Objective, budget: usize, seed: u64, parallelism: usize) -> Result<OptimizationTrace, HarnessError> {
    let mut ev = Evaluator::new(objective, objective.direction(), budget, parallelism);
    random_search_with(&mut ev, seed)?;
    Ok(ev.into_trace("random", seed, serde_json::json!({ "budget": budget })))
}

pub fn random_search_with(ev: &mut Evaluator, seed: u64) -> Result<(), HarnessError> {
    if ev.budget() < 1 {
        return Err(HarnessError::Config("random search needs budget >= 1".into()));
    }
    let mut rng = Rng::new(seed);
    while !ev.exhausted() {
        let want = RANDOM_BATCH.min(ev.remaining());
        let mut batch = Vec::with_capacity(want);
        let mut taken = HashSet::new();
        while batch.len() < want {
            match sample_unseen(ev, &mut rng, &taken) {
                Some(p) => {
                    taken.insert(p.clone());
                    batch.push(p);
                }
                None => break,
            }
        }
        if batch.is_empty() {
            break;
        }
        ev.evaluate_batch(&batch)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TpeConfig {
    pub gamma: f64,
    pub candidates: usize,
    pub startup: usize,
}

impl Default for TpeConfig {
    fn default() -> Self {
        Self { gamma: 0.25, candidates: 24, startup: 20 }
    }
}

/// Per-dimension categorical densities of the good and bad trial sets.
#[derive(Clone, Debug, PartialEq)]
pub struct TpeModel {
    pub good: Vec<Vec<f64>>,
    pub bad: Vec<Vec<f64>>,
    pub n_good: usize,
}

impl TpeModel {
    fn fit(ev: &Evaluator, gamma: f64) -> Self {
        let dir = ev.direction();
        let mut order: Vec<(f64, usize)> =
            ev.entries().iter().map(|e| (dir.sign() * dir.effective(e.value), e.ordinal)).collect();
        // Best first; equal values keep evaluation order.
        order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let n = order.len();
        let n_good = ((gamma * n as f64).ceil() as usize).clamp(1, n.max(1));
        let entries = ev.entries();
        let density = |set: &[(f64, usize)]| -> Vec<Vec<f64>> {
            ev.dims()
                .iter()
                .enumerate()
                .map(|(k, &nk)| {
                    let mut counts = vec![1.0; nk];
                    for &(_, ord) in set {
                        counts[entries[ord - 1].index[k]] += 1.0;
                    }
                    let total = (set.len() + nk) as f64;
                    counts.iter().map(|c| c / total).collect()
                })
                .collect()
        };
        Self { good: density(&order[..n_good]), bad: density(&order[n_good..]), n_good }
    }

    fn sample(&self, rng: &mut Rng) -> MultiIndex {
        self.good
            .iter()
            .map(|p| {
                let u = rng.next_f64();
                let mut acc = 0.0;
                for (i, &w) in p.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        return i;
                    }
                }
                p.len() - 1
            })
            .collect()
    }

    /// Log likelihood ratio good/bad.
    pub fn score(&self, p: &[usize]) -> f64 {
        p.iter().enumerate().map(|(k, &i)| self.good[k][i].ln() - self.bad[k][i].ln()).sum()
    }
}

/// Tree-structured Parzen estimator over categorical dimensions.
pub fn tpe_optimize(
    objective: &dyn Objective,
    budget: usize,
    seed: u64,
    cfg: TpeConfig,
    parallelism: usize,
) -> Result<OptimizationTrace, HarnessError> {
    let mut ev = Evaluator::new(objective, objective.direction(), budget, parallelism);
    tpe_optimize_with(&mut ev, seed, cfg, |_| {})?;
    Ok(ev.into_trace("tpe", seed, serde_json::to_value(cfg).expect("config serializes")))
}

/// Runs TPE on an existing evaluator; `observe` sees the model fitted before
/// each guided step.
pub fn tpe_optimize_with(
    ev: &mut Evaluator,
    seed: u64,
    cfg: TpeConfig,
    mut observe: impl FnMut(&TpeModel),
) -> Result<(), HarnessError> {
    if !(cfg.gamma > 0.0 && cfg.gamma < 1.0) || cfg.candidates < 1 {
        return Err(HarnessError::Config(format!("tpe needs 0 < gamma < 1 and candidates >= 1, got {cfg:?}")));
    }
    if ev.budget() < cfg.startup.max(1) {
        return Err(HarnessError::Config(format!(
            "tpe budget {} is below startup {}",
            ev.budget(),
            cfg.startup
        )));
    }
    let mut rng = Rng::new(seed);
    let mut taken = HashSet::new();
    let mut startup = Vec::new();
    while startup.len() < cfg.startup {
        match sample_unseen(ev, &mut rng, &taken) {
            Some(p) => {
                taken.insert(p.clone());
                startup.push(p);
            }
            None => break,
        }
    }
    ev.evaluate_batch(&startup)?;
    let dims = ev.dims().to_vec();
    let none = HashSet::new();
    while !ev.exhausted() {
        let model = TpeModel::fit(ev, cfg.gamma);
        observe(&model);
        let mut best: Option<(f64, usize, MultiIndex)> = None;
        for _ in 0..cfg.candidates {
            let p = model.sample(&mut rng);
            if ev.contains(&p) {
                continue;
            }
            let s = model.score(&p);
            let lin = linear(&dims, &p);
            if best.as_ref().is_none_or(|(bs, bl, _)| s > *bs || (s == *bs && lin < *bl)) {
                best = Some((s, lin, p));
            }
        }
        let next = match best {
            Some((_, _, p)) => p,
            None => match sample_unseen(ev, &mut rng, &none) {
                Some(p) => p,
                None => break,
            },
        };
        ev.evaluate_batch(&[next])?;
    }
    Ok(())
}

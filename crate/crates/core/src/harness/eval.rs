use super::{linear, Direction, EvalFlag, HarnessError, Objective, OptimizationTrace, TraceEntry};
use crate::MultiIndex;
use std::collections::{HashMap, HashSet};

/// Budgeted, caching evaluation of an objective.
///
/// Each unique multi-index reaches the objective at most once and costs one
/// unit of budget; cache hits are free. Batches may be evaluated on several
/// threads, but results are recorded in the batch's own order so the trace is
/// independent of `parallelism`.
pub struct Evaluator<'a> {
    objective: &'a dyn Objective,
    dims: Vec<usize>,
    direction: Direction,
    budget: usize,
    parallelism: usize,
    cache: HashMap<MultiIndex, f64>,
    entries: Vec<TraceEntry>,
    best: Option<(f64, usize)>,
}

impl<'a> Evaluator<'a> {
    pub fn new(objective: &'a dyn Objective, direction: Direction, budget: usize, parallelism: usize) -> Self {
        Self {
            objective,
            dims: objective.dims().to_vec(),
            direction,
            budget,
            parallelism: parallelism.max(1),
            cache: HashMap::new(),
            entries: Vec::new(),
            best: None,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn evaluations(&self) -> usize {
        self.entries.len()
    }

    pub fn remaining(&self) -> usize {
        self.budget - self.entries.len()
    }

    pub fn exhausted(&self) -> bool {
        self.remaining() == 0 || self.cache.len() == self.objective.grid_size()
    }

    pub fn contains(&self, index: &[usize]) -> bool {
        self.cache.contains_key(index)
    }

    /// Raw cached value.
    pub fn get(&self, index: &[usize]) -> Option<f64> {
        self.cache.get(index).copied()
    }

    /// Running best effective value (worst possible before any evaluation).
    pub fn best_value(&self) -> f64 {
        self.best.map(|b| b.0).unwrap_or(self.direction.worst())
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    /// Evaluates every not-yet-seen point of `points` in order, stopping when
    /// the budget runs out. Returns the number of new evaluations.
    pub fn evaluate_batch(&mut self, points: &[MultiIndex]) -> Result<usize, HarnessError> {
        let mut todo: Vec<&MultiIndex> = Vec::new();
        let mut queued: HashSet<&MultiIndex> = HashSet::new();
        for p in points {
            if todo.len() >= self.remaining() {
                break;
            }
            if p.len() != self.dims.len() || p.iter().zip(&self.dims).any(|(&i, &n)| i >= n) {
                return Err(HarnessError::Config(format!("index {p:?} outside grid {:?}", self.dims)));
            }
            if !self.cache.contains_key(p) && queued.insert(p) {
                todo.push(p);
            }
        }
        if todo.is_empty() {
            return Ok(0);
        }
        let results = self.dispatch(&todo);
        for (p, r) in todo.iter().zip(results) {
            let value = r.map_err(|e| HarnessError::Objective { index: (*p).clone(), message: e.0 })?;
            self.record((*p).clone(), value);
        }
        Ok(todo.len())
    }

    fn dispatch(&self, todo: &[&MultiIndex]) -> Vec<Result<f64, super::ObjectiveError>> {
        let objective = self.objective;
        if self.parallelism == 1 || todo.len() == 1 {
            return todo.iter().map(|p| objective.evaluate(p)).collect();
        }
        let chunk = todo.len().div_ceil(self.parallelism);
        std::thread::scope(|scope| {
            let handles: Vec<_> = todo
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(|p| objective.evaluate(p)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("objective worker panicked"))
                .collect()
        })
    }

    fn record(&mut self, index: MultiIndex, value: f64) {
        let flag = if value.is_finite() { EvalFlag::Ok } else { EvalFlag::NonFinite };
        let eff = self.direction.effective(value);
        let lin = linear(&self.dims, &index);
        let improves = match self.best {
            None => true,
            Some((b, bl)) => self.direction.better(eff, b) || (eff == b && lin < bl),
        };
        if improves {
            self.best = Some((eff, lin));
        }
        self.cache.insert(index.clone(), value);
        self.entries.push(TraceEntry { index, value, ordinal: self.entries.len() + 1, flag });
    }

    pub fn into_trace(self, algo: &str, seed: u64, config: serde_json::Value) -> OptimizationTrace {
        OptimizationTrace {
            algo: algo.to_string(),
            seed,
            direction: self.direction,
            dims: self.dims,
            config,
            entries: self.entries,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::FnObjective;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn cache_and_budget() {
        let calls = AtomicUsize::new(0);
        let f = FnObjective::new(vec![3, 3], |i: &[usize]| {
            calls.fetch_add(1, Ordering::SeqCst);
            (i[0] * 3 + i[1]) as f64
        });
        let mut ev = Evaluator::new(&f, Direction::Maximize, 4, 1);
        let pts = vec![vec![0, 0], vec![0, 1], vec![0, 0], vec![1, 1]];
        assert_eq!(ev.evaluate_batch(&pts).unwrap(), 3);
        assert_eq!(ev.evaluate_batch(&pts).unwrap(), 0);
        assert_eq!(ev.evaluate_batch(&[vec![2, 2], vec![2, 1]]).unwrap(), 1);
        assert_eq!(ev.remaining(), 0);
        assert_eq!(calls.load(Ordering::SeqCst), 4);
        assert_eq!(ev.best_value(), 8.0);
        let t = ev.into_trace("x", 0, serde_json::Value::Null);
        assert_eq!(t.entries.iter().map(|e| e.ordinal).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn parallel_dispatch_keeps_order() {
        let f = FnObjective::new(vec![50], |i: &[usize]| (i[0] as f64).sin());
        let pts: Vec<MultiIndex> = (0..50).rev().map(|i| vec![i]).collect();
        let mut a = Evaluator::new(&f, Direction::Maximize, 100, 1);
        let mut b = Evaluator::new(&f, Direction::Maximize, 100, 8);
        a.evaluate_batch(&pts).unwrap();
        b.evaluate_batch(&pts).unwrap();
        assert_eq!(a.entries(), b.entries());
    }

    #[test]
    fn objective_failure_names_index() {
        struct Failing;
        impl Objective for Failing {
            fn dims(&self) -> &[usize] {
                &[4]
            }
            fn evaluate(&self, i: &[usize]) -> Result<f64, crate::harness::ObjectiveError> {
                if i[0] == 2 { Err(crate::harness::ObjectiveError("boom".into())) } else { Ok(1.0) }
            }
        }
        let mut ev = Evaluator::new(&Failing, Direction::Maximize, 10, 4);
        let err = ev.evaluate_batch(&[vec![0], vec![1], vec![2], vec![3]]).unwrap_err();
        assert!(matches!(err, HarnessError::Objective { index, .. } if index == vec![2]));
    }

    #[test]
    fn non_finite_is_flagged_and_worst() {
        let f = FnObjective::new(vec![2], |i: &[usize]| if i[0] == 0 { f64::NAN } else { -5.0 });
        let mut ev = Evaluator::new(&f, Direction::Maximize, 10, 1);
        ev.evaluate_batch(&[vec![0], vec![1]]).unwrap();
        assert_eq!(ev.entries()[0].flag, EvalFlag::NonFinite);
        assert_eq!(ev.best_value(), -5.0);
    }
}

use super::{random_search_with, tpe_optimize_with, Direction, Evaluator, HarnessError, Objective, OptimizationTrace, TpeConfig, TraceRow};
use crate::tetraopt::{optimize_with, OptConfig};
use serde::Serialize;

#[derive(Clone, Debug, PartialEq)]
pub enum Algo {
    /// Budget, seed and mode are overridden by the experiment.
    TetraOpt(OptConfig),
    Random,
    Tpe(TpeConfig),
}

impl Algo {
    pub fn name(&self) -> &'static str {
        match self {
            Algo::TetraOpt(_) => "tetraopt",
            Algo::Random => "random",
            Algo::Tpe(_) => "tpe",
        }
    }

    fn run(&self, objective: &dyn Objective, direction: Direction, budget: usize, seed: u64, parallelism: usize) -> Result<OptimizationTrace, HarnessError> {
        let mut ev = Evaluator::new(objective, direction, budget, parallelism);
        let config = match self {
            Algo::TetraOpt(base) => {
                let cfg = OptConfig { budget, seed, mode: direction, ..base.clone() };
                optimize_with(&mut ev, &cfg)?;
                serde_json::to_value(&cfg)
            }
            Algo::Random => {
                random_search_with(&mut ev, seed)?;
                Ok(serde_json::json!({ "budget": budget }))
            }
            Algo::Tpe(cfg) => {
                tpe_optimize_with(&mut ev, seed, *cfg, |_| {})?;
                serde_json::to_value(cfg)
            }
        }
        .expect("config serializes");
        Ok(ev.into_trace(self.name(), seed, config))
    }
}

/// Mean and range of best-so-far over seeds at one evaluation ordinal.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvelopePoint {
    pub ordinal: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    /// One entry per algorithm, traces in seed order.
    pub traces: Vec<(String, Vec<OptimizationTrace>)>,
    pub envelopes: Vec<(String, Vec<EnvelopePoint>)>,
}

impl ExperimentResult {
    pub fn rows(&self) -> impl Iterator<Item = TraceRow> + '_ {
        self.traces.iter().flat_map(|(_, ts)| ts.iter().flat_map(|t| t.rows()))
    }

    pub fn all_traces(&self) -> impl Iterator<Item = &OptimizationTrace> {
        self.traces.iter().flat_map(|(_, ts)| ts.iter())
    }

    /// Mean over seeds of the final best value.
    pub fn mean_final_best(&self, algo: &str) -> Option<f64> {
        let (_, ts) = self.traces.iter().find(|(a, _)| a == algo)?;
        let vals: Vec<f64> = ts.iter().filter_map(|t| t.best_value()).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Best-so-far envelope; shorter traces carry their last best forward.
pub fn envelope(traces: &[OptimizationTrace]) -> Vec<EnvelopePoint> {
    let series: Vec<Vec<f64>> = traces.iter().map(|t| t.best_so_far()).filter(|s| !s.is_empty()).collect();
    let len = series.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|k| {
            let at: Vec<f64> = series.iter().map(|s| s[k.min(s.len() - 1)]).collect();
            EnvelopePoint {
                ordinal: k + 1,
                mean: at.iter().sum::<f64>() / at.len() as f64,
                min: at.iter().cloned().fold(f64::INFINITY, f64::min),
                max: at.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

pub fn run_experiment(
    algos: &[Algo],
    objective: &dyn Objective,
    direction: Direction,
    budget: usize,
    seeds: &[u64],
    parallelism: usize,
) -> Result<ExperimentResult, HarnessError> {
    if seeds.is_empty() {
        return Err(HarnessError::Config("experiment needs at least one seed".into()));
    }
    let mut traces = Vec::new();
    let mut envelopes = Vec::new();
    for algo in algos {
        let ts = seeds
            .iter()
            .map(|&s| algo.run(objective, direction, budget, s, parallelism))
            .collect::<Result<Vec<_>, _>>()?;
        envelopes.push((algo.name().to_string(), envelope(&ts)));
        traces.push((algo.name().to_string(), ts));
    }
    Ok(ExperimentResult { traces, envelopes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{planted_table, write_trace_csv, read_trace_csv};

    fn algos() -> Vec<Algo> {
        vec![Algo::TetraOpt(OptConfig::new(3, 0, 0)), Algo::Random, Algo::Tpe(TpeConfig::default())]
    }

    #[test]
    fn single_seed_envelope_equals_trace() {
        let (b, _) = planted_table(3, 4, 0);
        let r = run_experiment(&[Algo::Random], &b, Direction::Maximize, 30, &[5], 1).unwrap();
        let t = &r.traces[0].1[0];
        let env = &r.envelopes[0].1;
        assert_eq!(env.len(), t.len());
        for (p, b) in env.iter().zip(t.best_so_far()) {
            assert_eq!((p.mean, p.min, p.max), (b, b, b));
        }
    }

    #[test]
    fn parallelism_does_not_change_traces() {
        let (b, _) = planted_table(4, 5, 1);
        let a = run_experiment(&algos(), &b, Direction::Maximize, 150, &[1, 2], 1).unwrap();
        let c = run_experiment(&algos(), &b, Direction::Maximize, 150, &[1, 2], 8).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn csv_has_three_budgets_of_rows() {
        let (b, _) = planted_table(4, 5, 3);
        let r = run_experiment(&algos(), &b, Direction::Maximize, 100, &[9], 2).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, r.all_traces()).unwrap();
        let rows = read_trace_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 300);
        assert_eq!(rows.len(), r.rows().count());
        assert!(String::from_utf8(buf).unwrap().starts_with("algo,seed,eval_ordinal,value,best_so_far\n"));
    }

    #[test]
    fn envelope_carries_short_traces() {
        let (b, _) = planted_table(2, 3, 3);
        let r = run_experiment(&[Algo::Random], &b, Direction::Maximize, 9, &[0, 1], 1).unwrap();
        let env = envelope(&r.traces[0].1);
        assert_eq!(env.len(), 9);
        assert!(env.windows(2).all(|w| w[1].min >= w[0].min));
    }

    #[test]
    fn no_seeds() {
        let (b, _) = planted_table(2, 3, 3);
        assert!(run_experiment(&[Algo::Random], &b, Direction::Maximize, 9, &[], 1).is_err());
    }
}

use super::{linear, Direction, HarnessError};
use crate::MultiIndex;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalFlag {
    Ok,
    NonFinite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub index: MultiIndex,
    /// Raw objective value as returned (may be non-finite when flagged).
    pub value: f64,
    /// 1-based count of unique evaluations.
    pub ordinal: usize,
    pub flag: EvalFlag,
}

/// Ordered record of every unique evaluation made by one optimizer run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub algo: String,
    pub seed: u64,
    pub direction: Direction,
    pub dims: Vec<usize>,
    pub config: serde_json::Value,
    pub entries: Vec<TraceEntry>,
}

impl OptimizationTrace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Running optimum after each evaluation.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = self.direction.worst();
        self.entries
            .iter()
            .map(|e| {
                let v = self.direction.effective(e.value);
                if self.direction.better(v, best) {
                    best = v;
                }
                best
            })
            .collect()
    }

    /// Best entry; equal values resolve to the lowest linear index.
    pub fn best(&self) -> Option<&TraceEntry> {
        let dir = self.direction;
        let mut best: Option<&TraceEntry> = None;
        for e in &self.entries {
            best = match best {
                None => Some(e),
                Some(b) => {
                    let (v, bv) = (dir.effective(e.value), dir.effective(b.value));
                    if dir.better(v, bv) || (v == bv && linear(&self.dims, &e.index) < linear(&self.dims, &b.index)) {
                        Some(e)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        best
    }

    pub fn best_value(&self) -> Option<f64> {
        self.best().map(|e| self.direction.effective(e.value))
    }

    pub fn rows(&self) -> impl Iterator<Item = TraceRow> + '_ {
        self.entries.iter().zip(self.best_so_far()).map(move |(e, b)| TraceRow {
            algo: self.algo.clone(),
            seed: self.seed,
            eval_ordinal: e.ordinal,
            value: e.value,
            best_so_far: b,
        })
    }
}

/// One line of the experiment CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub algo: String,
    pub seed: u64,
    pub eval_ordinal: usize,
    pub value: f64,
    pub best_so_far: f64,
}

/// Writes `algo,seed,eval_ordinal,value,best_so_far` rows for every trace.
pub fn write_trace_csv<'a, W: Write>(
    out: W,
    traces: impl IntoIterator<Item = &'a OptimizationTrace>,
) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["algo", "seed", "eval_ordinal", "value", "best_so_far"])?;
    for t in traces {
        for row in t.rows() {
            w.write_record([
                row.algo.clone(),
                row.seed.to_string(),
                row.eval_ordinal.to_string(),
                row.value.to_string(),
                row.best_so_far.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TraceRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["algo", "seed", "eval_ordinal", "value", "best_so_far"] {
        return Err(HarnessError::Config(format!("unexpected trace CSV header {headers:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(direction: Direction, values: &[f64]) -> OptimizationTrace {
        OptimizationTrace {
            algo: "t".into(),
            seed: 0,
            direction,
            dims: vec![10],
            config: serde_json::Value::Null,
            entries: values
                .iter()
                .enumerate()
                .map(|(k, &v)| TraceEntry {
                    index: vec![9 - k],
                    value: v,
                    ordinal: k + 1,
                    flag: if v.is_finite() { EvalFlag::Ok } else { EvalFlag::NonFinite },
                })
                .collect(),
        }
    }

    #[test]
    fn best_so_far_is_monotone() {
        let t = trace(Direction::Maximize, &[1.0, f64::NAN, 0.5, 3.0, 2.0]);
        assert_eq!(t.best_so_far(), vec![1.0, 1.0, 1.0, 3.0, 3.0]);
        let t = trace(Direction::Minimize, &[1.0, 2.0, -1.0]);
        assert_eq!(t.best_so_far(), vec![1.0, 1.0, -1.0]);
    }

    #[test]
    fn best_ties_go_to_lowest_linear_index() {
        let t = trace(Direction::Maximize, &[2.0, 1.0, 2.0]);
        assert_eq!(t.best().unwrap().index, vec![7]);
    }

    #[test]
    fn csv_round_trip() {
        let t = trace(Direction::Maximize, &[1.5, 0.25]);
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, [&t]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("algo,seed,eval_ordinal,value,best_so_far\n"));
        let rows = read_trace_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].best_so_far, 1.5);
    }
}

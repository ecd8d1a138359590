//! Search spaces, objectives, baseline optimizers and the experiment runner.

mod baselines;
mod eval;
mod experiment;
mod objectives;
mod space;
mod trace;

pub use baselines::{random_search, random_search_with, tpe_optimize, tpe_optimize_with, TpeConfig, TpeModel};
pub use eval::Evaluator;
pub use experiment::{run_experiment, Algo, EnvelopePoint, ExperimentResult};
pub use objectives::{
    planted_table, synthetic, tabular_load, FnObjective, Synthetic, SyntheticKind, TabularBenchmark,
    NATS_REFERENCE_BEST_ACCURACY,
};
pub use space::{Choice, Dimension, SearchSpace};
pub use trace::{read_trace_csv, write_trace_csv, EvalFlag, OptimizationTrace, TraceEntry, TraceRow};

use crate::container::ContainerError;
use crate::{MultiIndex, NumericError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("search space: {0}")]
    Space(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("budget {budget} is smaller than one core block ({needed} evaluations)")]
    BudgetTooSmall { budget: usize, needed: usize },
    #[error("objective failed at {index:?}: {message}")]
    Objective { index: MultiIndex, message: String },
    #[error("tabular benchmark is missing {missing} of {total} grid entries")]
    MissingEntries { missing: usize, total: usize },
    #[error("tabular benchmark: {0}")]
    Table(String),
    #[error("unknown synthetic function {0:?}")]
    UnknownSynthetic(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Maximize,
    Minimize,
}

impl Direction {
    /// `a` strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::Maximize => a > b,
            Direction::Minimize => a < b,
        }
    }

    pub fn worst(self) -> f64 {
        match self {
            Direction::Maximize => f64::NEG_INFINITY,
            Direction::Minimize => f64::INFINITY,
        }
    }

    /// Non-finite values count as the worst possible.
    pub fn effective(self, v: f64) -> f64 {
        if v.is_finite() {
            v
        } else {
            self.worst()
        }
    }

    /// `+1` for maximize, `-1` for minimize.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Maximize => 1.0,
            Direction::Minimize => -1.0,
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max" | "maximize" => Ok(Direction::Maximize),
            "min" | "minimize" => Ok(Direction::Minimize),
            other => Err(format!("unknown direction {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct ObjectiveError(pub String);

/// A black-box function over a discrete grid.
///
/// Implementations must be pure: the runner may call `evaluate` from several
/// threads at once and merges results by multi-index.
pub trait Objective: Sync {
    fn dims(&self) -> &[usize];

    fn evaluate(&self, index: &[usize]) -> Result<f64, ObjectiveError>;

    fn direction(&self) -> Direction {
        Direction::Maximize
    }

    fn grid_size(&self) -> usize {
        self.dims().iter().product()
    }
}

/// Row-major linear index, the tie-break key across the crate.
pub(crate) fn linear(dims: &[usize], idx: &[usize]) -> usize {
    idx.iter().zip(dims).fold(0, |acc, (&i, &n)| acc * n + i)
}

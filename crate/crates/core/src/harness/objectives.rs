use super::space::real_point;
use super::{linear, Direction, HarnessError, Objective, ObjectiveError, SearchSpace};
use crate::container::{Container, Entry, TensorData};
use crate::tensor::{multi_index, DenseTensor};
use crate::tt::grid_indices;
use crate::{MultiIndex, Rng};
use serde_json::Value;

/// Best CIFAR-10 validation accuracy reported for TT-cross search on the
/// NATS topology space. Only meaningful against a real NATS export.
pub const NATS_REFERENCE_BEST_ACCURACY: f64 = 93.7;

/// Wraps a closure as an objective.
pub struct FnObjective<F> {
    dims: Vec<usize>,
    direction: Direction,
    f: F,
}

impl<F: Fn(&[usize]) -> f64 + Sync> FnObjective<F> {
    pub fn new(dims: Vec<usize>, f: F) -> Self {
        Self { dims, direction: Direction::Maximize, f }
    }

    pub fn minimize(mut self) -> Self {
        self.direction = Direction::Minimize;
        self
    }
}

impl<F: Fn(&[usize]) -> f64 + Sync> Objective for FnObjective<F> {
    fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn evaluate(&self, index: &[usize]) -> Result<f64, ObjectiveError> {
        Ok((self.f)(index))
    }

    fn direction(&self) -> Direction {
        self.direction
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticKind {
    Ackley,
    Rosenbrock,
    Schwefel,
    SeparablePlanted,
}

impl std::str::FromStr for SyntheticKind {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "ackley" => SyntheticKind::Ackley,
            "rosenbrock" => SyntheticKind::Rosenbrock,
            "schwefel" => SyntheticKind::Schwefel,
            "separable_planted" => SyntheticKind::SeparablePlanted,
            other => return Err(HarnessError::UnknownSynthetic(other.to_string())),
        })
    }
}

impl SyntheticKind {
    pub fn name(self) -> &'static str {
        match self {
            SyntheticKind::Ackley => "ackley",
            SyntheticKind::Rosenbrock => "rosenbrock",
            SyntheticKind::Schwefel => "schwefel",
            SyntheticKind::SeparablePlanted => "separable_planted",
        }
    }

    /// Canonical box half-width (the box is symmetric about zero).
    fn bound(self) -> f64 {
        match self {
            SyntheticKind::Ackley => 32.768,
            SyntheticKind::Rosenbrock => 2.048,
            SyntheticKind::Schwefel => 500.0,
            SyntheticKind::SeparablePlanted => 1.0,
        }
    }

    fn analytic_minimizer(self) -> f64 {
        match self {
            SyntheticKind::Ackley => 0.0,
            SyntheticKind::Rosenbrock => 1.0,
            SyntheticKind::Schwefel => 420.968_746,
            SyntheticKind::SeparablePlanted => 0.0,
        }
    }
}

const EXHAUSTIVE_LIMIT: usize = 1_000_000;

/// A standard test function discretized on a uniform grid, with its known
/// grid optimum.
#[derive(Clone, Debug)]
pub struct Synthetic {
    pub kind: SyntheticKind,
    sizes: Vec<usize>,
    coords: Vec<f64>,
    weights: Vec<Vec<f64>>,
    pub optimum_index: MultiIndex,
    pub optimum_value: f64,
}

pub fn synthetic(name: &str, dims: usize, points_per_dim: usize, seed: u64) -> Result<Synthetic, HarnessError> {
    let kind: SyntheticKind = name.parse()?;
    if dims < 1 || points_per_dim < 2 {
        return Err(HarnessError::Config(format!(
            "synthetic needs dims >= 1 and points_per_dim >= 2, got {dims} and {points_per_dim}"
        )));
    }
    let b = kind.bound();
    let coords: Vec<f64> = (0..points_per_dim).map(|i| real_point(-b, b, points_per_dim, i)).collect();
    let mut rng = Rng::new(seed);
    let weights = if kind == SyntheticKind::SeparablePlanted {
        (0..dims).map(|_| (0..points_per_dim).map(|_| rng.next_f64()).collect()).collect()
    } else {
        Vec::new()
    };
    let mut s = Synthetic {
        kind,
        sizes: vec![points_per_dim; dims],
        coords,
        weights,
        optimum_index: Vec::new(),
        optimum_value: 0.0,
    };
    let (idx, val) = s.locate_optimum();
    s.optimum_index = idx;
    s.optimum_value = val;
    Ok(s)
}

impl Synthetic {
    fn value(&self, index: &[usize]) -> f64 {
        let x = || index.iter().map(|&i| self.coords[i]);
        let d = index.len() as f64;
        match self.kind {
            SyntheticKind::Ackley => {
                let sq = x().map(|v| v * v).sum::<f64>() / d;
                let cs = x().map(|v| (std::f64::consts::TAU * v).cos()).sum::<f64>() / d;
                -20.0 * (-0.2 * sq.sqrt()).exp() - cs.exp() + 20.0 + std::f64::consts::E
            }
            SyntheticKind::Rosenbrock => {
                let v: Vec<f64> = x().collect();
                if v.len() == 1 {
                    return (1.0 - v[0]).powi(2);
                }
                v.windows(2).map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2)).sum()
            }
            SyntheticKind::Schwefel => 418.982_887_272_433_9 * d - x().map(|v| v * v.abs().sqrt().sin()).sum::<f64>(),
            SyntheticKind::SeparablePlanted => index.iter().zip(&self.weights).map(|(&i, w)| w[i]).sum(),
        }
    }

    fn locate_optimum(&self) -> (MultiIndex, f64) {
        let dir = self.direction();
        if self.kind == SyntheticKind::SeparablePlanted {
            let idx: MultiIndex = self
                .weights
                .iter()
                .map(|w| {
                    let mut best = 0;
                    for (i, &v) in w.iter().enumerate() {
                        if v > w[best] {
                            best = i;
                        }
                    }
                    best
                })
                .collect();
            let v = self.value(&idx);
            return (idx, v);
        }
        let total: usize = self.sizes.iter().try_fold(1usize, |a, &n| a.checked_mul(n)).unwrap_or(usize::MAX);
        if total <= EXHAUSTIVE_LIMIT {
            let mut best: Option<(MultiIndex, f64)> = None;
            for idx in grid_indices(&self.sizes) {
                let v = self.value(&idx);
                if best.as_ref().is_none_or(|(_, b)| dir.better(v, *b)) {
                    best = Some((idx, v));
                }
            }
            return best.expect("grid is non-empty");
        }
        let target = self.kind.analytic_minimizer();
        let mut nearest = 0;
        for (i, c) in self.coords.iter().enumerate() {
            if (c - target).abs() < (self.coords[nearest] - target).abs() {
                nearest = i;
            }
        }
        let idx = vec![nearest; self.sizes.len()];
        let v = self.value(&idx);
        (idx, v)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

impl Objective for Synthetic {
    fn dims(&self) -> &[usize] {
        &self.sizes
    }

    fn evaluate(&self, index: &[usize]) -> Result<f64, ObjectiveError> {
        Ok(self.value(index))
    }

    fn direction(&self) -> Direction {
        match self.kind {
            SyntheticKind::SeparablePlanted => Direction::Maximize,
            _ => Direction::Minimize,
        }
    }
}

/// A fully tabulated search space (NATS-style): every grid point maps to a
/// precomputed accuracy in `[0, 100]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularBenchmark {
    pub space: SearchSpace,
    pub table: DenseTensor,
    pub name: String,
    pub metric: String,
}

impl TabularBenchmark {
    pub fn new(space: SearchSpace, table: DenseTensor, name: &str, metric: &str) -> Result<Self, HarnessError> {
        if table.shape() != space.sizes().as_slice() {
            return Err(HarnessError::Table(format!(
                "table shape {:?} does not match space {:?}",
                table.shape(),
                space.sizes()
            )));
        }
        if let Some(v) = table.data().iter().find(|v| !(0.0..=100.0).contains(*v)) {
            return Err(HarnessError::Table(format!("accuracy {v} outside [0, 100]")));
        }
        Ok(Self { space, table, name: name.into(), metric: metric.into() })
    }

    /// Global maximum; ties resolve to the lowest linear index.
    pub fn argmax(&self) -> (MultiIndex, f64) {
        let data = self.table.data();
        let mut best = 0;
        for (i, &v) in data.iter().enumerate() {
            if v > data[best] {
                best = i;
            }
        }
        (multi_index(self.table.shape(), best), data[best])
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.meta.insert("kind".into(), Value::from("tabular_benchmark"));
        c.meta.insert("name".into(), Value::from(self.name.clone()));
        c.meta.insert("metric".into(), Value::from(self.metric.clone()));
        c.meta.insert("space".into(), self.space.to_value());
        c.push(Entry::f32_from_f64("table", self.table.shape().to_vec(), self.table.data()).expect("table shape is valid"))
            .expect("single entry");
        c
    }
}

impl Objective for TabularBenchmark {
    fn dims(&self) -> &[usize] {
        self.table.shape()
    }

    fn evaluate(&self, index: &[usize]) -> Result<f64, ObjectiveError> {
        self.table.get(index).map_err(|e| ObjectiveError(e.to_string()))
    }
}

/// Loads a benchmark from a container: `table` entry (f32, one axis per
/// dimension, NaN marks a missing architecture) plus `meta.space`.
pub fn tabular_load(c: &Container) -> Result<TabularBenchmark, HarnessError> {
    let space = SearchSpace::from_value(
        c.meta.get("space").ok_or_else(|| HarnessError::Table("container has no meta.space".into()))?,
    )?;
    let entry = c.require("table")?;
    let values = match &entry.data {
        TensorData::F32(v) => v.iter().map(|&x| x as f64).collect::<Vec<_>>(),
        other => return Err(HarnessError::Table(format!("table must be f32, got {}", other.dtype().name()))),
    };
    if entry.shape != space.sizes() {
        return Err(HarnessError::Table(format!(
            "table shape {:?} does not match space {:?}",
            entry.shape,
            space.sizes()
        )));
    }
    let missing = values.iter().filter(|v| v.is_nan()).count();
    if missing > 0 {
        return Err(HarnessError::MissingEntries { missing, total: values.len() });
    }
    let table = DenseTensor::new(entry.shape.clone(), values)
        .map_err(|e| HarnessError::Table(format!("table values: {e}")))?;
    let str_meta = |k: &str, default: &str| c.meta.get(k).and_then(Value::as_str).unwrap_or(default).to_string();
    TabularBenchmark::new(space, table, &str_meta("name", "tabular"), &str_meta("metric", "accuracy"))
}

const TABLE_STREAM: u64 = 0x7AB1E;

/// NATS-shaped synthetic benchmark: `dims` categorical axes of `choices`
/// operations, accuracy = base + per-axis effects + adjacent-pair interactions
/// + noise, with a planted unique global optimum. Returns the planted index.
pub fn planted_table(dims: usize, choices: usize, seed: u64) -> (TabularBenchmark, MultiIndex) {
    assert!(dims >= 1 && choices >= 1);
    // Own stream, so optimizers run with the same seed draw independently.
    let mut rng = Rng::with_stream(seed, TABLE_STREAM);
    let plant: MultiIndex = (0..dims).map(|_| rng.below(choices)).collect();
    let effects: Vec<Vec<f64>> = plant
        .iter()
        .map(|&p| {
            let mut e: Vec<f64> = (0..choices).map(|_| 8.0 * rng.next_f64() - 4.0).collect();
            let top = (0..choices).fold(0, |b, i| if e[i] > e[b] { i } else { b });
            e.swap(top, p);
            e
        })
        .collect();
    let pairs: Vec<Vec<f64>> = (1..dims).map(|_| (0..choices * choices).map(|_| 0.5 * rng.normal()).collect()).collect();
    let sizes = vec![choices; dims];
    let mut data: Vec<f64> = grid_indices(&sizes)
        .map(|idx| {
            let main: f64 = idx.iter().zip(&effects).map(|(&i, e)| e[i]).sum();
            let inter: f64 = (1..dims).map(|k| pairs[k - 1][idx[k - 1] * choices + idx[k]]).sum();
            70.0 + main + inter + 0.25 * rng.normal()
        })
        .collect();
    let p = linear(&sizes, &plant);
    let rest_max = data.iter().enumerate().filter(|&(i, _)| i != p).fold(f64::NEG_INFINITY, |m, (_, &v)| m.max(v));
    data[p] = data[p].max(rest_max) + 0.5;
    for v in &mut data {
        *v = v.clamp(0.0, 100.0);
        // Store exactly what an f32 container would hold.
        *v = *v as f32 as f64;
    }
    let table = DenseTensor::new(sizes, data).expect("finite table");
    let space = SearchSpace::categorical_grid(dims, choices);
    let bench = TabularBenchmark::new(space, table, &format!("planted-{dims}x{choices}-seed{seed}"), "accuracy")
        .expect("values in range");
    (bench, plant)
}

//! `ttkit`: black-box search over discrete spaces, small-model training and
//! post-training compression.
//!
//! Exit codes: 0 success, 2 bad flags, 3 unreadable or invalid input,
//! 4 compression plan error.

mod svg;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use ttkit_core::container::{Container, ContainerError};
use ttkit_core::harness::{
    planted_table, read_trace_csv, run_experiment, synthetic, tabular_load, write_trace_csv, Algo, HarnessError, Objective,
    OptimizationTrace, SearchSpace, TpeConfig,
};
use ttkit_core::tetraopt::{OptConfig, Transform};
use ttkit_core::Rng;
use ttkit_nn::compress::{compress_model, CompressError, Plan};
use ttkit_nn::{accuracy, gen_bars, gen_blobs, train, Dataset, Layer, ModelGraph, NnError, TrainConfig};

#[derive(Parser)]
#[command(name = "ttkit", version, about = "Tensor-train search and compression toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum AlgoName {
    Tetraopt,
    Random,
    Tpe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TransformName {
    Identity,
    ExpShift,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DataKind {
    Bars,
    Blobs,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more optimizers over seeds and write best-so-far traces.
    Optimize {
        /// `synthetic:<ackley|rosenbrock|schwefel|separable_planted>` or `tabular:<file>`.
        #[arg(long)]
        objective: String,
        /// Search space JSON; for synthetic objectives it sets dims and points.
        #[arg(long)]
        space: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        dims: usize,
        #[arg(long, default_value_t = 5)]
        points: usize,
        /// Seed of the synthetic objective itself.
        #[arg(long, default_value_t = 0)]
        problem_seed: u64,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "tetraopt")]
        algo: Vec<AlgoName>,
        #[arg(long, default_value_t = 1000)]
        budget: usize,
        #[arg(long, default_value_t = 4)]
        rank: usize,
        #[arg(long, default_value_t = 100)]
        sweeps: usize,
        #[arg(long, value_enum, default_value = "exp-shift")]
        transform: TransformName,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        /// `N`, `a..b` or a comma list.
        #[arg(long, default_value = "0")]
        seeds: String,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fail unless the tabular maximum is within 0.05 of this value.
        #[arg(long)]
        expect_max: Option<f64>,
    },
    /// Train a model on a dataset container.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Start from this model instead of a fresh one.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 0.9)]
        momentum: f64,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the accuracy of a model on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Apply a compression plan to a model.
    Compress {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Dataset for accuracy before and after.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Render best-so-far curves from trace CSVs as SVG.
    Plot {
        #[arg(long, num_args = 1.., required = true)]
        traces: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset container.
    GenData {
        #[arg(long, value_enum, default_value = "bars")]
        kind: DataKind,
        #[arg(long, default_value_t = 400)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        size: usize,
        #[arg(long, default_value_t = 0.2)]
        noise: f64,
        #[arg(long, default_value_t = 4)]
        dims: usize,
        #[arg(long, default_value_t = 3.0)]
        sep: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a planted-optimum tabular benchmark container.
    GenTable {
        #[arg(long, default_value_t = 6)]
        dims: usize,
        #[arg(long, default_value_t = 5)]
        choices: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum Fail {
    Usage(String),
    Input(String),
    Plan(String),
}

impl Fail {
    fn code(&self) -> u8 {
        match self {
            Fail::Usage(_) => 2,
            Fail::Input(_) => 3,
            Fail::Plan(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Fail::Usage(m) | Fail::Input(m) | Fail::Plan(m) => m,
        }
    }
}

impl From<HarnessError> for Fail {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) | HarnessError::BudgetTooSmall { .. } | HarnessError::UnknownSynthetic(_) => {
                Fail::Usage(e.to_string())
            }
            _ => Fail::Input(e.to_string()),
        }
    }
}

impl From<NnError> for Fail {
    fn from(e: NnError) -> Self {
        Fail::Input(e.to_string())
    }
}

impl From<ContainerError> for Fail {
    fn from(e: ContainerError) -> Self {
        Fail::Input(e.to_string())
    }
}

impl From<CompressError> for Fail {
    fn from(e: CompressError) -> Self {
        match e {
            CompressError::Numeric(_) | CompressError::Nn(_) => Fail::Input(e.to_string()),
            _ => Fail::Plan(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, Fail>;

fn read_text(p: &Path) -> Result<String> {
    fs::read_to_string(p).map_err(|e| Fail::Input(format!("{}: {e}", p.display())))
}

fn write_bytes(p: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(p, bytes).map_err(|e| Fail::Input(format!("{}: {e}", p.display())))
}

fn read_container(p: &Path) -> Result<Container> {
    Container::read_file(p).map_err(|e| Fail::Input(format!("{}: {e}", p.display())))
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Fail::Usage(format!("--seeds: expected N, a..b or a comma list, got {s:?}"));
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        (a..b).collect()
    } else {
        s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

fn print_json(v: &Value) {
    // A closed pipe (e.g. `| head`) is not an error worth a panic.
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(v).expect("json serializes"));
}

#[allow(clippy::too_many_arguments)]
fn cmd_optimize(
    objective: &str,
    space: Option<&Path>,
    dims: usize,
    points: usize,
    problem_seed: u64,
    algos: &[AlgoName],
    budget: usize,
    rank: usize,
    sweeps: usize,
    transform: Transform,
    seeds: &str,
    parallelism: usize,
    out: Option<&Path>,
    expect_max: Option<f64>,
) -> Result<()> {
    let seeds = parse_seeds(seeds)?;
    if parallelism == 0 {
        return Err(Fail::Usage("--parallelism must be >= 1".into()));
    }
    let space = space.map(|p| SearchSpace::from_json(&read_text(p)?).map_err(|e| Fail::Input(e.to_string()))).transpose()?;
    let (obj, space): (Box<dyn Objective>, Option<SearchSpace>) = match objective.split_once(':') {
        Some(("synthetic", name)) => {
            let (d, n) = match &space {
                Some(s) => {
                    let sizes = s.sizes();
                    if sizes.iter().any(|&n| n != sizes[0]) {
                        return Err(Fail::Usage("synthetic objectives need equal-size dimensions".into()));
                    }
                    (sizes.len(), sizes[0])
                }
                None => (dims, points),
            };
            (Box::new(synthetic(name, d, n, problem_seed)?), space)
        }
        Some(("tabular", file)) => {
            let bench = tabular_load(&read_container(Path::new(file))?)?;
            if let Some(s) = &space {
                if s.sizes() != bench.space.sizes() {
                    return Err(Fail::Input(format!("--space sizes {:?} differ from the table's {:?}", s.sizes(), bench.space.sizes())));
                }
            }
            if let Some(want) = expect_max {
                let (_, got) = bench.argmax();
                if (got - want).abs() > 0.05 {
                    return Err(Fail::Input(format!("table maximum {got} is not {want}")));
                }
            }
            let space = Some(bench.space.clone());
            (Box::new(bench), space)
        }
        _ => return Err(Fail::Usage(format!("--objective must be synthetic:<name> or tabular:<file>, got {objective:?}"))),
    };
    let algos: Vec<Algo> = algos
        .iter()
        .map(|a| match a {
            AlgoName::Tetraopt => Algo::TetraOpt(OptConfig { sweeps, transform, ..OptConfig::new(rank, budget, 0) }),
            AlgoName::Random => Algo::Random,
            AlgoName::Tpe => Algo::Tpe(TpeConfig::default()),
        })
        .collect();
    let direction = obj.direction();
    let result = run_experiment(&algos, obj.as_ref(), direction, budget, &seeds, parallelism)?;
    if let Some(p) = out {
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, result.all_traces())?;
        write_bytes(p, buf)?;
    }
    let point = |t: &OptimizationTrace| -> Value {
        let e = t.best().expect("non-empty trace");
        match &space {
            Some(s) => serde_json::to_value(s.decode(&e.index).expect("index in range")).expect("serializes"),
            None => json!(e.index),
        }
    };
    let runs: Vec<Value> = result
        .all_traces()
        .map(|t| {
            json!({
                "algo": t.algo,
                "seed": t.seed,
                "best_value": t.best_value(),
                "best_index": t.best().map(|e| e.index.clone()),
                "best_point": point(t),
                "evals": t.len(),
            })
        })
        .collect();
    let overall = result
        .all_traces()
        .filter(|t| !t.is_empty())
        .reduce(|a, b| if direction.better(b.best_value().unwrap_or(f64::NAN), a.best_value().unwrap_or(f64::NAN)) { b } else { a })
        .ok_or_else(|| Fail::Input("no evaluations were made".into()))?;
    let means: serde_json::Map<String, Value> =
        result.traces.iter().map(|(a, _)| (a.clone(), json!(result.mean_final_best(a)))).collect();
    print_json(&json!({
        "direction": direction,
        "best_value": overall.best_value(),
        "best_point": point(overall),
        "best_index": overall.best().map(|e| e.index.clone()),
        "evals": overall.len(),
        "mean_final_best": means,
        "runs": runs,
    }));
    Ok(())
}

fn default_model(d: &Dataset, seed: u64) -> Result<ModelGraph> {
    match d.sample_shape() {
        [1, h, w] if h == w && h % 4 == 0 && *h >= 4 => Ok(ModelGraph::bars_cnn(*h, d.class_count, seed)),
        [f] => {
            let mut rng = Rng::new(seed);
            let layers = vec![Layer::dense("fc1", *f, 16, &mut rng), Layer::relu("relu1"), Layer::dense("fc2", 16, d.class_count, &mut rng)];
            Ok(ModelGraph::new(vec![*f], layers)?)
        }
        s => Err(Fail::Input(format!("no default model for samples of shape {s:?}; pass --model"))),
    }
}

fn load_dataset(p: &Path) -> Result<Dataset> {
    Ok(Dataset::from_container(&read_container(p)?)?)
}

fn load_model(p: &Path) -> Result<ModelGraph> {
    Ok(ModelGraph::from_container(&read_container(p)?)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Optimize {
            objective,
            space,
            dims,
            points,
            problem_seed,
            algo,
            budget,
            rank,
            sweeps,
            transform,
            beta,
            seeds,
            parallelism,
            out,
            expect_max,
        } => {
            let transform = match transform {
                TransformName::Identity => Transform::Identity,
                TransformName::ExpShift => Transform::ExpShift { beta },
            };
            cmd_optimize(
                &objective,
                space.as_deref(),
                dims,
                points,
                problem_seed,
                &algo,
                budget,
                rank,
                sweeps,
                transform,
                &seeds,
                parallelism,
                out.as_deref(),
                expect_max,
            )
        }
        Command::Train { data, model, out, history, epochs, lr, momentum, batch, seed } => {
            let d = load_dataset(&data)?;
            let mut m = match model {
                Some(p) => load_model(&p)?,
                None => default_model(&d, seed)?,
            };
            if batch == 0 {
                return Err(Fail::Usage("--batch must be >= 1".into()));
            }
            let hist = train(&mut m, &d, &TrainConfig { epochs, lr, momentum, batch, seed })?;
            m.to_container().write_file(&out).map_err(|e| Fail::Input(format!("{}: {e}", out.display())))?;
            if let Some(h) = history {
                let mut w = csv::Writer::from_writer(Vec::new());
                for s in &hist {
                    w.serialize(s).map_err(|e| Fail::Input(e.to_string()))?;
                }
                if hist.is_empty() {
                    w.write_record(["epoch", "loss", "accuracy"]).map_err(|e| Fail::Input(e.to_string()))?;
                }
                write_bytes(&h, w.into_inner().map_err(|e| Fail::Input(e.to_string()))?)?;
            }
            let last = hist.last();
            print_json(&json!({
                "epochs": hist.len(),
                "params": m.param_count(),
                "final_loss": last.map(|s| s.loss),
                "train_accuracy": last.map(|s| s.accuracy),
            }));
            Ok(())
        }
        Command::Eval { model, data } => {
            let acc = accuracy(&load_model(&model)?, &load_dataset(&data)?)?;
            print_json(&json!({ "accuracy": acc }));
            Ok(())
        }
        Command::Compress { model, plan, out, report, data } => {
            let m = load_model(&model)?;
            let plan = Plan::from_json(&read_text(&plan)?)?;
            let (cm, mut rep) = compress_model(&m, &plan)?;
            if let Some(p) = data {
                let d = load_dataset(&p)?;
                rep.accuracy_before = Some(accuracy(&m, &d)?);
                rep.accuracy_after = Some(accuracy(&cm, &d)?);
            }
            cm.to_container().write_file(&out).map_err(|e| Fail::Input(format!("{}: {e}", out.display())))?;
            if let Some(p) = report {
                write_bytes(&p, serde_json::to_string_pretty(&rep).expect("report serializes") + "\n")?;
            }
            print_json(&json!({
                "coefficient": rep.coefficient,
                "params_before": rep.totals.params_before,
                "params_after": rep.totals.params_after,
                "accuracy_before": rep.accuracy_before,
                "accuracy_after": rep.accuracy_after,
            }));
            Ok(())
        }
        Command::Plot { traces, out } => {
            let mut rows = Vec::new();
            for p in &traces {
                let f = fs::File::open(p).map_err(|e| Fail::Input(format!("{}: {e}", p.display())))?;
                rows.extend(read_trace_csv(f).map_err(|e| Fail::Input(format!("{}: {e}", p.display())))?);
            }
            let mut keys: Vec<(String, u64)> = rows.iter().map(|r| (r.algo.clone(), r.seed)).collect();
            keys.sort();
            keys.dedup();
            write_bytes(&out, svg::best_so_far_svg(&rows))?;
            print_json(&json!({ "polylines": keys.len(), "rows": rows.len() }));
            Ok(())
        }
        Command::GenData { kind, n, size, noise, dims, sep, seed, out } => {
            let d = match kind {
                DataKind::Bars => gen_bars(n, size, noise, seed)?,
                DataKind::Blobs => gen_blobs(n, dims, sep, seed)?,
            };
            d.to_container().write_file(&out).map_err(|e| Fail::Input(format!("{}: {e}", out.display())))?;
            print_json(&json!({ "samples": d.len(), "sample_shape": d.sample_shape(), "class_count": d.class_count }));
            Ok(())
        }
        Command::GenTable { dims, choices, seed, out } => {
            if dims < 1 || choices < 2 {
                return Err(Fail::Usage("gen-table needs --dims >= 1 and --choices >= 2".into()));
            }
            let (bench, plant) = planted_table(dims, choices, seed);
            let (_, best) = bench.argmax();
            bench.to_container().write_file(&out).map_err(|e| Fail::Input(format!("{}: {e}", out.display())))?;
            print_json(&json!({ "plant": plant, "optimum": best, "grid_size": bench.table.len() }));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

//! Post-training compression: conv factorization, TT-matrix dense layers,
//! magnitude pruning and affine quantization, plus parameter accounting.

pub mod prune;
pub mod quant;
pub mod ttm;
pub mod tucker2;

use crate::layers::{Layer, LayerKind, Param};
use crate::{ModelGraph, NnError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;
use ttkit_core::linalg::Matrix;
use ttkit_core::{DenseTensor, NumericError};

pub use prune::{prune_magnitude, Pruned};
pub use quant::{quantize_uniform, QuantizedTensor};
pub use ttm::{ttm_decompose, TtMatrix};
pub use tucker2::{tucker2_decompose, tucker2_reconstruct, Tucker2Factors, Tucker2Result};

pub const TUCKER2_MAX_ITERS: usize = 50;
pub const TUCKER2_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum CompressError {
    #[error("bits must be 4 or 8, got {0}")]
    Bits(u32),
    #[error("sparsity must lie in [0, 1), got {0}")]
    Sparsity(f64),
    #[error("rank: {0}")]
    Rank(String),
    #[error("factors: {0}")]
    Factors(String),
    #[error("plan: {0}")]
    Plan(String),
    #[error("plan references unknown layer {0:?}")]
    UnknownLayer(String),
    #[error("layer {layer}: {op} does not apply to {kind}")]
    Mismatch { layer: String, op: String, kind: String },
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RankSpec {
    Fixed(usize),
    /// Largest rank whose share of the model budget keeps the total
    /// compression coefficient at or above `auto`.
    Auto { auto: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    Tucker2 { rank: RankSpec },
    Ttm {
        row_factors: Vec<usize>,
        col_factors: Vec<usize>,
        #[serde(default)]
        tol: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_rank: Option<usize>,
    },
    Prune { sparsity: f64 },
    Quant { bits: u32 },
}

impl Action {
    pub fn op(&self) -> &'static str {
        match self {
            Action::Tucker2 { .. } => "tucker2",
            Action::Ttm { .. } => "ttm",
            Action::Prune { .. } => "prune",
            Action::Quant { .. } => "quant",
        }
    }

    /// Pipeline position: factorize, then prune, then quantize.
    fn stage(&self) -> usize {
        match self {
            Action::Tucker2 { .. } | Action::Ttm { .. } => 0,
            Action::Prune { .. } => 1,
            Action::Quant { .. } => 2,
        }
    }

    fn applies_to(&self, kind: &LayerKind) -> bool {
        match self {
            Action::Tucker2 { .. } => matches!(kind, LayerKind::Conv2d { .. }),
            Action::Ttm { .. } => matches!(kind, LayerKind::Dense),
            Action::Prune { .. } | Action::Quant { .. } => !matches!(
                kind,
                LayerKind::Relu | LayerKind::MaxPool2d { .. } | LayerKind::Flatten | LayerKind::Softmax
            ),
        }
    }
}

/// `layers` maps names to action chains; `default` applies to every other
/// layer it is compatible with.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Plan {
    #[serde(default)]
    pub layers: BTreeMap<String, Vec<Action>>,
    #[serde(default)]
    pub default: Vec<Action>,
}

impl Plan {
    pub fn from_json(s: &str) -> Result<Self, CompressError> {
        serde_json::from_str(s).map_err(|e| CompressError::Plan(e.to_string()))
    }

    pub fn is_empty(&self) -> bool {
        self.default.is_empty() && self.layers.values().all(Vec::is_empty)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: String,
    pub params_before: usize,
    pub params_after: usize,
    /// Relative Frobenius error of the effective weight, 0 when untouched.
    pub rel_error: f64,
    /// Actions as applied; auto ranks are resolved.
    pub actions: Vec<Action>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub params_before: usize,
    pub params_after: usize,
    /// Storage at 4 bytes per f32 parameter, codes packed at their bit width.
    pub bytes_before: usize,
    pub bytes_after: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub layers: Vec<LayerReport>,
    pub totals: Totals,
    /// `params_before / params_after`.
    pub coefficient: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy_before: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy_after: Option<f64>,
}

/// Parameters of a Tucker-2 layer at rank `r`: `C_in R + D^2 R^2 + R C_out`.
pub fn tucker2_param_count(c_in: usize, c_out: usize, d: usize, r: usize) -> usize {
    c_in * r + d * d * r * r + r * c_out
}

/// The action chain each layer receives, validated and in pipeline order.
fn resolve(model: &ModelGraph, plan: &Plan) -> Result<Vec<Vec<Action>>, CompressError> {
    for name in plan.layers.keys() {
        if model.layer(name).is_none() {
            return Err(CompressError::UnknownLayer(name.clone()));
        }
    }
    let mut chains = Vec::new();
    for l in model.layers() {
        let chain = match plan.layers.get(&l.name) {
            Some(explicit) => {
                if let Some(a) = explicit.iter().find(|a| !a.applies_to(&l.kind)) {
                    return Err(CompressError::Mismatch {
                        layer: l.name.clone(),
                        op: a.op().into(),
                        kind: l.kind.type_name().into(),
                    });
                }
                explicit.clone()
            }
            None => plan.default.iter().filter(|a| a.applies_to(&l.kind)).cloned().collect(),
        };
        let mut chain = chain;
        chain.sort_by_key(Action::stage);
        let stages: BTreeSet<usize> = chain.iter().map(Action::stage).collect();
        if stages.len() != chain.len() {
            return Err(CompressError::Plan(format!("layer {}: at most one action per stage", l.name)));
        }
        chains.push(chain);
    }
    Ok(chains)
}

fn conv_weight(l: &Layer) -> &DenseTensor {
    l.param("weight").expect("validated conv layer")
}

/// Chooses ranks for `auto` layers so that the whole model lands at
/// `total_before / ratio` parameters. Everything else is counted at its
/// post-compression size, biases included, and the remaining budget is split
/// across auto layers in proportion to their original weight counts.
fn auto_ranks(
    model: &ModelGraph,
    chains: &[Vec<Action>],
    fixed_after: &[Option<usize>],
) -> Result<BTreeMap<usize, usize>, CompressError> {
    let autos: Vec<(usize, f64)> = chains
        .iter()
        .enumerate()
        .filter_map(|(i, c)| match c.first() {
            Some(Action::Tucker2 { rank: RankSpec::Auto { auto } }) => Some((i, *auto)),
            _ => None,
        })
        .collect();
    let mut out = BTreeMap::new();
    let Some(&(_, ratio)) = autos.first() else {
        return Ok(out);
    };
    if autos.iter().any(|&(_, r)| r != ratio) {
        return Err(CompressError::Plan("all auto ranks in a plan must share one ratio".into()));
    }
    if !(ratio >= 1.0) || !ratio.is_finite() {
        return Err(CompressError::Plan(format!("auto ratio must be >= 1, got {ratio}")));
    }
    let layers = model.layers();
    let target = model.param_count() as f64 / ratio;
    let mut committed = 0usize;
    let mut auto_weights = 0usize;
    for (i, l) in layers.iter().enumerate() {
        if autos.iter().any(|&(j, _)| j == i) {
            committed += l.param_count() - conv_weight(l).len();
            auto_weights += conv_weight(l).len();
        } else {
            committed += fixed_after[i].unwrap_or_else(|| l.param_count());
        }
    }
    let remaining = (target - committed as f64).max(0.0);
    for &(i, _) in &autos {
        let w = conv_weight(&layers[i]);
        let s = w.shape();
        let (c_out, c_in, d) = (s[0], s[1], s[2]);
        let budget = remaining * w.len() as f64 / auto_weights as f64;
        let r = (1..=c_in.min(c_out))
            .take_while(|&r| tucker2_param_count(c_in, c_out, d, r) as f64 <= budget)
            .last()
            .unwrap_or(1);
        out.insert(i, r);
    }
    Ok(out)
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let n = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let e = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    if n > 0.0 { e / n } else { e }
}

/// Weight the layer effectively applies: the conv kernel, the reconstructed
/// Tucker-2 kernel, or the dense `[out, in]` matrix.
fn effective_weight(l: &Layer) -> Option<Vec<f64>> {
    match &l.kind {
        LayerKind::Conv2d { .. } => Some(conv_weight(l).data().to_vec()),
        LayerKind::Dense | LayerKind::DenseTtm { .. } => Some(l.dense_weight()),
        LayerKind::Conv2dTucker2 { .. } => {
            let p = |n: &str| l.param(n).expect("validated tucker2 layer");
            let to_matrix = |t: &DenseTensor| Matrix::new(t.shape()[0], t.shape()[1], t.data().to_vec()).expect("finite");
            let f = Tucker2Factors { u_in: to_matrix(p("u_in")), core: p("core").clone(), u_out: to_matrix(p("u_out")) };
            Some(f.reconstruct().into_data())
        }
        _ => None,
    }
}

struct Compressed {
    layer: Layer,
    params_after: usize,
    bytes_after: usize,
    rel_error: f64,
    actions: Vec<Action>,
}

fn compress_layer(l: &Layer, chain: &[Action], auto_rank: Option<usize>) -> Result<Compressed, CompressError> {
    let mut out = l.clone();
    let mut applied = Vec::with_capacity(chain.len());
    let mut pruned = BTreeSet::new();
    for a in chain {
        match a {
            Action::Tucker2 { rank } => {
                let r = match rank {
                    RankSpec::Fixed(r) => *r,
                    RankSpec::Auto { .. } => auto_rank.expect("auto ranks resolved"),
                };
                let LayerKind::Conv2d { stride, padding } = l.kind else { unreachable!("checked by resolve") };
                let res = tucker2_decompose(conv_weight(l), r, TUCKER2_MAX_ITERS, TUCKER2_TOL)?;
                let f = res.factors;
                let m2t = |m: &Matrix| DenseTensor::new(vec![m.rows(), m.cols()], m.data().to_vec()).expect("finite");
                out = Layer::new(
                    &l.name,
                    LayerKind::Conv2dTucker2 { stride, padding },
                    vec![
                        ("u_in", m2t(&f.u_in)),
                        ("core", f.core),
                        ("u_out", m2t(&f.u_out)),
                        ("bias", l.param("bias").expect("validated conv layer").clone()),
                    ],
                );
                applied.push(Action::Tucker2 { rank: RankSpec::Fixed(r) });
            }
            Action::Ttm { row_factors, col_factors, tol, max_rank } => {
                let w = l.param("weight").expect("validated dense layer");
                let m = Matrix::new(w.shape()[0], w.shape()[1], w.data().to_vec())?;
                let (t, _) = ttm_decompose(&m, row_factors, col_factors, *tol, *max_rank)?;
                let names: Vec<String> = (0..t.cores.len()).map(|k| format!("core{k}")).collect();
                let mut params: Vec<(&str, DenseTensor)> = names.iter().map(String::as_str).zip(t.cores).collect();
                params.push(("bias", l.param("bias").expect("validated dense layer").clone()));
                out = Layer::new(
                    &l.name,
                    LayerKind::DenseTtm { row_factors: row_factors.clone(), col_factors: col_factors.clone() },
                    params,
                );
                applied.push(a.clone());
            }
            Action::Prune { sparsity } => {
                for p in out.params.iter_mut().filter(|p| p.name != "bias") {
                    p.value = prune_magnitude(&p.value, *sparsity)?.tensor;
                    pruned.insert(p.name.clone());
                }
                applied.push(a.clone());
            }
            Action::Quant { bits } => {
                let Layer { params, quantized, .. } = &mut out;
                for p in params.iter_mut().filter(|p| p.name != "bias") {
                    let q = quantize_uniform(&p.value, *bits)?;
                    p.value = q.dequantize()?;
                    quantized.insert(p.name.clone(), q);
                }
                applied.push(a.clone());
            }
        }
    }
    let count = |p: &Param| {
        if pruned.contains(&p.name) { p.value.data().iter().filter(|&&v| v != 0.0).count() } else { p.value.len() }
    };
    let params_after = out.params.iter().map(count).sum();
    let bytes_after = out
        .params
        .iter()
        .map(|p| match out.quantized.get(&p.name) {
            Some(q) => q.storage_bytes(),
            None => 4 * count(p),
        })
        .sum();
    let rel_error = match (effective_weight(l), effective_weight(&out)) {
        (Some(a), Some(b)) if !applied.is_empty() => rel(&b, &a),
        _ => 0.0,
    };
    Ok(Compressed { layer: out, params_after, bytes_after, rel_error, actions: applied })
}

/// Applies `plan` layer by layer and accounts for every parameter in the
/// model, compressed or not.
pub fn compress_model(model: &ModelGraph, plan: &Plan) -> Result<(ModelGraph, CompressionReport), CompressError> {
    let chains = resolve(model, plan)?;
    let is_auto = |c: &[Action]| matches!(c.first(), Some(Action::Tucker2 { rank: RankSpec::Auto { .. } }));
    let mut done: Vec<Option<Compressed>> = Vec::with_capacity(chains.len());
    for (l, c) in model.layers().iter().zip(&chains) {
        done.push(if is_auto(c) { None } else { Some(compress_layer(l, c, None)?) });
    }
    let fixed_after: Vec<Option<usize>> = done.iter().map(|d| d.as_ref().map(|c| c.params_after)).collect();
    let ranks = auto_ranks(model, &chains, &fixed_after)?;
    for (&i, &r) in &ranks {
        done[i] = Some(compress_layer(&model.layers()[i], &chains[i], Some(r))?);
    }
    let mut layers = Vec::new();
    let mut reports = Vec::new();
    let (mut before, mut after, mut bytes_after) = (0, 0, 0);
    for (l, c) in model.layers().iter().zip(done) {
        let c = c.expect("every layer processed");
        before += l.param_count();
        after += c.params_after;
        bytes_after += c.bytes_after;
        reports.push(LayerReport {
            name: l.name.clone(),
            kind: l.kind.type_name().into(),
            params_before: l.param_count(),
            params_after: c.params_after,
            rel_error: c.rel_error,
            actions: c.actions,
        });
        layers.push(c.layer);
    }
    let compressed = ModelGraph::new(model.input_shape().to_vec(), layers)?;
    let coefficient = if after == 0 { f64::INFINITY } else { before as f64 / after as f64 };
    let report = CompressionReport {
        layers: reports,
        totals: Totals { params_before: before, params_after: after, bytes_before: 4 * before, bytes_after },
        coefficient,
        accuracy_before: None,
        accuracy_after: None,
    };
    Ok((compressed, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_json_shapes() {
        let p = Plan::from_json(
            r#"{"layers":{"conv2":[{"op":"quant","bits":8},{"op":"tucker2","rank":{"auto":3}}]},
                "default":[{"op":"prune","sparsity":0.5}]}"#,
        )
        .unwrap();
        assert_eq!(p.layers["conv2"][1], Action::Tucker2 { rank: RankSpec::Auto { auto: 3.0 } });
        assert_eq!(p.default, vec![Action::Prune { sparsity: 0.5 }]);
        assert!(Plan::from_json(r#"{"layers":{"a":[{"op":"svd"}]}}"#).is_err());
        assert!(Plan::from_json("{}").unwrap().is_empty());
    }

    #[test]
    fn actions_run_in_pipeline_order() {
        let m = ModelGraph::bars_cnn(8, 2, 0);
        let plan = Plan::from_json(r#"{"layers":{"conv2":[{"op":"quant","bits":8},{"op":"tucker2","rank":4}]}}"#).unwrap();
        let (out, report) = compress_model(&m, &plan).unwrap();
        let l = &report.layers[3];
        assert_eq!(l.actions, vec![Action::Tucker2 { rank: RankSpec::Fixed(4) }, Action::Quant { bits: 8 }]);
        assert_eq!(out.layer("conv2").unwrap().quantized.len(), 3);
    }

    #[test]
    fn unknown_and_mismatched_layers() {
        let m = ModelGraph::bars_cnn(8, 2, 0);
        let unknown = Plan::from_json(r#"{"layers":{"nope":[{"op":"quant","bits":8}]}}"#).unwrap();
        assert!(matches!(compress_model(&m, &unknown), Err(CompressError::UnknownLayer(n)) if n == "nope"));
        let bad = Plan::from_json(r#"{"layers":{"fc":[{"op":"tucker2","rank":2}]}}"#).unwrap();
        assert!(matches!(compress_model(&m, &bad), Err(CompressError::Mismatch { layer, .. }) if layer == "fc"));
        let relu = Plan::from_json(r#"{"layers":{"relu1":[{"op":"prune","sparsity":0.1}]}}"#).unwrap();
        assert!(matches!(compress_model(&m, &relu), Err(CompressError::Mismatch { .. })));
    }

    #[test]
    fn default_skips_incompatible_layers() {
        let m = ModelGraph::bars_cnn(8, 2, 0);
        let plan = Plan::from_json(r#"{"default":[{"op":"tucker2","rank":1}]}"#).unwrap();
        let (out, report) = compress_model(&m, &plan).unwrap();
        assert_eq!(out.layer("conv1").unwrap().kind.type_name(), "conv2d_tucker2");
        assert_eq!(out.layer("fc").unwrap().kind.type_name(), "dense");
        assert!(report.layers[7].actions.is_empty());
    }

    #[test]
    fn auto_rank_meets_ratio() {
        let m = ModelGraph::bars_cnn(16, 2, 0);
        let plan = Plan::from_json(r#"{"layers":{"conv2":[{"op":"tucker2","rank":{"auto":3}}]}}"#).unwrap();
        let (_, report) = compress_model(&m, &plan).unwrap();
        assert!(report.coefficient >= 3.0, "{}", report.coefficient);
        let Action::Tucker2 { rank: RankSpec::Fixed(r) } = report.layers[3].actions[0] else { panic!() };
        // One more rank would miss the ratio.
        let extra = tucker2_param_count(16, 32, 3, r + 1) - tucker2_param_count(16, 32, 3, r);
        assert!((report.totals.params_before as f64 / (report.totals.params_after + extra) as f64) < 3.0);
    }
}

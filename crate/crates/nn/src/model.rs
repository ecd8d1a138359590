use crate::compress::quant::QuantizedTensor;
use crate::layers::{Array, Layer, LayerKind, Param};
use crate::NnError;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::{BTreeMap, HashSet};
use ttkit_core::container::{Container, Entry, TensorData};
use ttkit_core::{DenseTensor, Rng};

/// A sequential model over per-sample inputs of shape `[C, H, W]` (or `[F]`).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

#[derive(Serialize, Deserialize)]
struct LayerManifest {
    name: String,
    #[serde(flatten)]
    kind: LayerKind,
    params: Vec<ParamManifest>,
}

#[derive(Serialize, Deserialize)]
struct ParamManifest {
    name: String,
    shape: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    quant: Option<QuantManifest>,
}

#[derive(Serialize, Deserialize)]
struct QuantManifest {
    bits: u32,
    scale: f64,
    zero_point: i64,
}

impl ModelGraph {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self, NnError> {
        let m = Self { input_shape, layers };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<Vec<usize>, NnError> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(NnError::Model(format!("invalid input shape {:?}", self.input_shape)));
        }
        let mut names = HashSet::new();
        let mut shape = self.input_shape.clone();
        for l in &self.layers {
            if !names.insert(l.name.as_str()) {
                return Err(NnError::Model(format!("duplicate layer name {:?}", l.name)));
            }
            shape = l.out_shape(&shape)?;
        }
        if shape.len() != 1 {
            return Err(NnError::Model(format!("model output must be flat, got {shape:?}")));
        }
        Ok(shape)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn classes(&self) -> usize {
        self.validate().map(|s| s[0]).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Replaces the layer called `name` with `with` (one or more layers).
    pub fn replace(&mut self, name: &str, with: Vec<Layer>) -> Result<(), NnError> {
        let at = self
            .layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| NnError::Model(format!("no layer named {name:?}")))?;
        self.layers.splice(at..=at, with);
        self.validate()?;
        Ok(())
    }

    fn check_input(&self, x: &Array) -> Result<(), NnError> {
        if x.shape.len() != self.input_shape.len() + 1 || x.shape[1..] != self.input_shape[..] || x.shape[0] == 0 {
            return Err(NnError::Shape {
                layer: "input".into(),
                message: format!("expects [B, {:?}], got {:?}", self.input_shape, x.shape),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Array) -> Result<Array, NnError> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in &self.layers {
            h = l.forward(&h)?;
        }
        Ok(h)
    }

    /// All intermediate activations: `acts[0]` is the input, `acts[i + 1]`
    /// the output of layer `i`.
    pub fn forward_all(&self, x: &Array) -> Result<Vec<Array>, NnError> {
        self.check_input(x)?;
        let mut acts = vec![x.clone()];
        for l in &self.layers {
            let next = l.forward(acts.last().expect("non-empty"))?;
            acts.push(next);
        }
        Ok(acts)
    }

    /// Parameter gradients for every layer given `d(loss)/d(output)`.
    pub fn backward(&self, acts: &[Array], d_out: Array) -> Result<Vec<Vec<Vec<f64>>>, NnError> {
        let mut grads = vec![Vec::new(); self.layers.len()];
        let mut d = d_out;
        for (i, l) in self.layers.iter().enumerate().rev() {
            let (dx, g) = l.backward(&acts[i], &acts[i + 1], &d)?;
            grads[i] = g;
            d = dx;
        }
        Ok(grads)
    }

    /// The default two-conv CNN for `size x size` single-channel images.
    pub fn bars_cnn(size: usize, classes: usize, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let flat = 32 * (size / 4) * (size / 4);
        let layers = vec![
            Layer::conv2d("conv1", 1, 16, 3, 1, 1, &mut rng),
            Layer::relu("relu1"),
            Layer::maxpool2d("pool1", 2),
            Layer::conv2d("conv2", 16, 32, 3, 1, 1, &mut rng),
            Layer::relu("relu2"),
            Layer::maxpool2d("pool2", 2),
            Layer::flatten("flatten"),
            Layer::dense("fc", flat, classes, &mut rng),
        ];
        Self::new(vec![1, size, size], layers).expect("bars cnn is consistent")
    }

    /// Parameters become `<layer>.<param>` entries (f32, or u8 codes when
    /// quantized); the layer list goes into `meta.model`.
    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        let mut manifest = Vec::new();
        for l in &self.layers {
            let mut params = Vec::new();
            for p in &l.params {
                let name = format!("{}.{}", l.name, p.name);
                let q = l.quantized.get(&p.name);
                let entry = match q {
                    Some(q) => Entry::new(name, q.shape.clone(), TensorData::U8(q.codes.clone())),
                    None => Entry::f32_from_f64(name, p.value.shape().to_vec(), p.value.data()),
                };
                c.push(entry.expect("parameter shapes are valid")).expect("layer names are unique");
                params.push(ParamManifest {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    quant: q.map(|q| QuantManifest { bits: q.bits, scale: q.scale, zero_point: q.zero_point }),
                });
            }
            manifest.push(LayerManifest { name: l.name.clone(), kind: l.kind.clone(), params });
        }
        c.meta.insert("kind".into(), Value::from("model"));
        c.meta.insert("input_shape".into(), serde_json::to_value(&self.input_shape).expect("serializes"));
        c.meta.insert("model".into(), serde_json::to_value(&manifest).expect("serializes"));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, NnError> {
        let input_shape: Vec<usize> = c
            .meta
            .get("input_shape")
            .cloned()
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| NnError::Model(format!("meta.input_shape: {e}")))?
            .ok_or_else(|| NnError::Model("container has no meta.input_shape".into()))?;
        let manifest: Vec<LayerManifest> = c
            .meta
            .get("model")
            .cloned()
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| NnError::Model(format!("meta.model: {e}")))?
            .ok_or_else(|| NnError::Model("container has no meta.model".into()))?;
        let mut layers = Vec::new();
        for lm in manifest {
            let mut params = Vec::new();
            let mut quantized = BTreeMap::new();
            for pm in lm.params {
                let e = c.require(&format!("{}.{}", lm.name, pm.name))?;
                if e.shape != pm.shape {
                    return Err(NnError::Model(format!("{}.{}: shape mismatch", lm.name, pm.name)));
                }
                let value = match (&pm.quant, &e.data) {
                    (Some(q), TensorData::U8(codes)) => {
                        let qt = QuantizedTensor {
                            codes: codes.clone(),
                            bits: q.bits,
                            scale: q.scale,
                            zero_point: q.zero_point,
                            shape: pm.shape.clone(),
                        };
                        let v = qt.dequantize()?;
                        quantized.insert(pm.name.clone(), qt);
                        v
                    }
                    (None, TensorData::F32(_)) => DenseTensor::new(pm.shape.clone(), e.to_f64())?,
                    _ => return Err(NnError::Model(format!("{}.{}: unexpected dtype", lm.name, pm.name))),
                };
                params.push(Param { name: pm.name, value });
            }
            layers.push(Layer { name: lm.name, kind: lm.kind, params, quantized });
        }
        Self::new(input_shape, layers)
    }
}

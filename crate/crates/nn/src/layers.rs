use crate::compress::quant::QuantizedTensor;
use crate::compress::ttm::{ttm_core_grads, ttm_to_matrix};
use crate::NnError;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use ttkit_core::{DenseTensor, Rng};

/// Row-major activation buffer; the first axis is the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "array shape {shape:?}");
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Elements per sample.
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn rows(&self, start: usize, end: usize) -> Array {
        let w = self.row_len();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Array::new(shape, self.data[start * w..end * w].to_vec())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d { stride: usize, padding: usize },
    Dense,
    Relu,
    #[serde(rename = "maxpool2d")]
    MaxPool2d { size: usize },
    Flatten,
    Softmax,
    #[serde(rename = "conv2d_tucker2")]
    Conv2dTucker2 { stride: usize, padding: usize },
    DenseTtm { row_factors: Vec<usize>, col_factors: Vec<usize> },
}

impl LayerKind {
    pub fn type_name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Dense => "dense",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2d { .. } => "maxpool2d",
            LayerKind::Flatten => "flatten",
            LayerKind::Softmax => "softmax",
            LayerKind::Conv2dTucker2 { .. } => "conv2d_tucker2",
            LayerKind::DenseTtm { .. } => "dense_ttm",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: DenseTensor,
}

/// One named stage of a sequential model.
///
/// Parameter order is fixed per kind: conv2d and dense hold `weight, bias`;
/// conv2d_tucker2 holds `u_in [C_in, R], core [R, R, D, D], u_out [C_out, R],
/// bias`; dense_ttm holds `core0 .. core{d-1}, bias` with cores shaped
/// `[r_{k-1}, m_k, n_k, r_k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub params: Vec<Param>,
    /// Parameters that were quantized; their `params` entry holds the
    /// dequantized values used for inference.
    pub quantized: BTreeMap<String, QuantizedTensor>,
}

fn he(shape: Vec<usize>, fan_in: usize, rng: &mut Rng) -> DenseTensor {
    let sd = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    DenseTensor::new(shape, (0..n).map(|_| sd * rng.normal()).collect()).expect("finite init")
}

fn zeros(n: usize) -> DenseTensor {
    DenseTensor::zeros(vec![n]).expect("non-empty")
}

impl Layer {
    pub fn new(name: &str, kind: LayerKind, params: Vec<(&str, DenseTensor)>) -> Self {
        Self {
            name: name.to_string(),
            kind,
            params: params.into_iter().map(|(n, v)| Param { name: n.to_string(), value: v }).collect(),
            quantized: BTreeMap::new(),
        }
    }

    pub fn conv2d(name: &str, c_in: usize, c_out: usize, k: usize, stride: usize, padding: usize, rng: &mut Rng) -> Self {
        let w = he(vec![c_out, c_in, k, k], c_in * k * k, rng);
        Self::new(name, LayerKind::Conv2d { stride, padding }, vec![("weight", w), ("bias", zeros(c_out))])
    }

    pub fn dense(name: &str, n_in: usize, n_out: usize, rng: &mut Rng) -> Self {
        let w = he(vec![n_out, n_in], n_in, rng);
        Self::new(name, LayerKind::Dense, vec![("weight", w), ("bias", zeros(n_out))])
    }

    pub fn relu(name: &str) -> Self {
        Self::new(name, LayerKind::Relu, vec![])
    }

    pub fn maxpool2d(name: &str, size: usize) -> Self {
        Self::new(name, LayerKind::MaxPool2d { size }, vec![])
    }

    pub fn flatten(name: &str) -> Self {
        Self::new(name, LayerKind::Flatten, vec![])
    }

    pub fn softmax(name: &str) -> Self {
        Self::new(name, LayerKind::Softmax, vec![])
    }

    pub fn param(&self, name: &str) -> Option<&DenseTensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    fn p(&self, i: usize) -> &DenseTensor {
        &self.params[i].value
    }

    fn shape_err(&self, message: String) -> NnError {
        NnError::Shape { layer: self.name.clone(), message }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn out_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        match &self.kind {
            LayerKind::Conv2d { stride, padding } | LayerKind::Conv2dTucker2 { stride, padding } => {
                let (c_in, c_out, k) = self.conv_dims()?;
                if input.len() != 3 || input[0] != c_in {
                    return Err(self.shape_err(format!("expects [{c_in}, H, W], got {input:?}")));
                }
                let g = ConvGeom::new(c_in, c_out, k, *stride, *padding, input[1], input[2])
                    .ok_or_else(|| self.shape_err(format!("kernel {k} does not fit input {input:?}")))?;
                Ok(vec![c_out, g.oh, g.ow])
            }
            LayerKind::Dense | LayerKind::DenseTtm { .. } => {
                let (n_in, n_out) = self.dense_dims()?;
                if input != [n_in] {
                    return Err(self.shape_err(format!("expects [{n_in}], got {input:?}")));
                }
                Ok(vec![n_out])
            }
            LayerKind::Relu | LayerKind::Softmax => {
                if matches!(self.kind, LayerKind::Softmax) && input.len() != 1 {
                    return Err(self.shape_err(format!("softmax expects a flat input, got {input:?}")));
                }
                Ok(input.to_vec())
            }
            LayerKind::MaxPool2d { size } => {
                if input.len() != 3 || *size == 0 || input[1] < *size || input[2] < *size {
                    return Err(self.shape_err(format!("pool {size} does not fit input {input:?}")));
                }
                Ok(vec![input[0], input[1] / size, input[2] / size])
            }
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    fn conv_dims(&self) -> Result<(usize, usize, usize), NnError> {
        let bad = |m: String| self.shape_err(m);
        match &self.kind {
            LayerKind::Conv2d { .. } => {
                let w = self.param("weight").ok_or_else(|| bad("missing weight".into()))?.shape();
                if w.len() != 4 || w[2] != w[3] {
                    return Err(bad(format!("conv weight must be [C_out, C_in, D, D], got {w:?}")));
                }
                self.check_bias(w[0])?;
                Ok((w[1], w[0], w[2]))
            }
            LayerKind::Conv2dTucker2 { .. } => {
                if self.params.len() != 4 {
                    return Err(bad("tucker2 layer needs u_in, core, u_out, bias".into()));
                }
                let (ui, c, uo) = (self.p(0).shape(), self.p(1).shape(), self.p(2).shape());
                let r = c.first().copied().unwrap_or(0);
                if ui.len() != 2 || uo.len() != 2 || c.len() != 4 || c[1] != r || c[2] != c[3] || ui[1] != r || uo[1] != r {
                    return Err(bad(format!("inconsistent tucker2 factors {ui:?} {c:?} {uo:?}")));
                }
                self.check_bias(uo[0])?;
                Ok((ui[0], uo[0], c[2]))
            }
            _ => unreachable!("not a conv layer"),
        }
    }

    fn dense_dims(&self) -> Result<(usize, usize), NnError> {
        match &self.kind {
            LayerKind::Dense => {
                let w = self.param("weight").ok_or_else(|| self.shape_err("missing weight".into()))?.shape();
                if w.len() != 2 {
                    return Err(self.shape_err(format!("dense weight must be 2-D, got {w:?}")));
                }
                self.check_bias(w[0])?;
                Ok((w[1], w[0]))
            }
            LayerKind::DenseTtm { row_factors, col_factors } => {
                let d = row_factors.len();
                if d == 0 || col_factors.len() != d || self.params.len() != d + 1 {
                    return Err(self.shape_err("ttm layer needs one core per factor pair plus bias".into()));
                }
                let mut prev = 1;
                for k in 0..d {
                    let s = self.p(k).shape();
                    let last = if k + 1 == d { Some(1) } else { None };
                    if s.len() != 4 || s[0] != prev || s[1] != row_factors[k] || s[2] != col_factors[k] || last.is_some_and(|l| s[3] != l) {
                        return Err(self.shape_err(format!("core {k} has shape {s:?}")));
                    }
                    prev = s[3];
                }
                let (m, n) = (row_factors.iter().product(), col_factors.iter().product());
                self.check_bias(m)?;
                Ok((n, m))
            }
            _ => unreachable!("not a dense layer"),
        }
    }

    fn check_bias(&self, n: usize) -> Result<(), NnError> {
        match self.param("bias") {
            Some(b) if b.shape() == [n] => Ok(()),
            Some(b) => Err(self.shape_err(format!("bias shape {:?}, expected [{n}]", b.shape()))),
            None => Err(self.shape_err("missing bias".into())),
        }
    }

    fn geom(&self, x: &Array) -> Result<ConvGeom, NnError> {
        let (stride, padding) = match self.kind {
            LayerKind::Conv2d { stride, padding } | LayerKind::Conv2dTucker2 { stride, padding } => (stride, padding),
            _ => unreachable!(),
        };
        let (c_in, c_out, k) = self.conv_dims()?;
        if x.shape.len() != 4 || x.shape[1] != c_in {
            return Err(self.shape_err(format!("expects [B, {c_in}, H, W], got {:?}", x.shape)));
        }
        ConvGeom::new(c_in, c_out, k, stride, padding, x.shape[2], x.shape[3])
            .ok_or_else(|| self.shape_err(format!("kernel {k} does not fit input {:?}", x.shape)))
    }

    /// The three convolutions a tucker2 layer runs: `1x1 (u_in) -> DxD (core)
    /// -> 1x1 (u_out) + bias`.
    fn tucker_stages(&self, g: &ConvGeom) -> [(Vec<f64>, ConvGeom); 3] {
        let (u_in, core, u_out) = (self.p(0), self.p(1), self.p(2));
        let r = core.shape()[0];
        let w1 = transpose(u_in.data(), g.c_in, r);
        let g1 = ConvGeom::new(g.c_in, r, 1, 1, 0, g.h, g.w).expect("1x1 fits");
        let g2 = ConvGeom::new(r, r, g.k, g.stride, g.pad, g.h, g.w).expect("checked by caller");
        let g3 = ConvGeom::new(r, g.c_out, 1, 1, 0, g.oh, g.ow).expect("1x1 fits");
        [(w1, g1), (core.data().to_vec(), g2), (u_out.data().to_vec(), g3)]
    }

    pub fn forward(&self, x: &Array) -> Result<Array, NnError> {
        let b = x.batch();
        match &self.kind {
            LayerKind::Conv2d { .. } => {
                let g = self.geom(x)?;
                let y = conv_forward(&x.data, b, self.p(0).data(), Some(self.p(1).data()), &g);
                Ok(Array::new(vec![b, g.c_out, g.oh, g.ow], y))
            }
            LayerKind::Conv2dTucker2 { .. } => {
                let g = self.geom(x)?;
                let [(w1, g1), (w2, g2), (w3, g3)] = self.tucker_stages(&g);
                let h1 = conv_forward(&x.data, b, &w1, None, &g1);
                let h2 = conv_forward(&h1, b, &w2, None, &g2);
                let y = conv_forward(&h2, b, &w3, Some(self.p(3).data()), &g3);
                Ok(Array::new(vec![b, g.c_out, g.oh, g.ow], y))
            }
            LayerKind::Dense | LayerKind::DenseTtm { .. } => {
                let (n_in, n_out) = self.dense_dims()?;
                if x.shape.len() != 2 || x.shape[1] != n_in {
                    return Err(self.shape_err(format!("expects [B, {n_in}], got {:?}", x.shape)));
                }
                let w = self.dense_weight();
                let bias = self.param("bias").expect("checked").data();
                let mut y = vec![0.0; b * n_out];
                for s in 0..b {
                    let xs = &x.data[s * n_in..(s + 1) * n_in];
                    for o in 0..n_out {
                        let wr = &w[o * n_in..(o + 1) * n_in];
                        y[s * n_out + o] = bias[o] + wr.iter().zip(xs).map(|(a, c)| a * c).sum::<f64>();
                    }
                }
                Ok(Array::new(vec![b, n_out], y))
            }
            LayerKind::Relu => Ok(Array::new(x.shape.clone(), x.data.iter().map(|v| v.max(0.0)).collect())),
            LayerKind::MaxPool2d { size } => {
                let (y, _) = self.pool(x, *size)?;
                Ok(y)
            }
            LayerKind::Flatten => Ok(Array::new(vec![b, x.row_len()], x.data.clone())),
            LayerKind::Softmax => {
                if x.shape.len() != 2 {
                    return Err(self.shape_err(format!("softmax expects [B, K], got {:?}", x.shape)));
                }
                let k = x.shape[1];
                let mut y = x.data.clone();
                for row in y.chunks_mut(k) {
                    softmax_in_place(row);
                }
                Ok(Array::new(x.shape.clone(), y))
            }
        }
    }

    /// Effective `[out, in]` weight of a dense or dense_ttm layer.
    pub fn dense_weight(&self) -> Vec<f64> {
        match &self.kind {
            LayerKind::Dense => self.p(0).data().to_vec(),
            LayerKind::DenseTtm { row_factors, col_factors } => {
                let d = row_factors.len();
                let cores: Vec<DenseTensor> = self.params[..d].iter().map(|p| p.value.clone()).collect();
                ttm_to_matrix(&cores, row_factors, col_factors).into_data()
            }
            _ => unreachable!("not a dense layer"),
        }
    }

    /// Per-output-position argmax (first maximum) of each pooling window.
    fn pool(&self, x: &Array, size: usize) -> Result<(Array, Vec<usize>), NnError> {
        if x.shape.len() != 4 || size == 0 || x.shape[2] < size || x.shape[3] < size {
            return Err(self.shape_err(format!("pool {size} does not fit input {:?}", x.shape)));
        }
        let (b, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
        let (oh, ow) = (h / size, w / size);
        let mut y = Vec::with_capacity(b * c * oh * ow);
        let mut arg = Vec::with_capacity(y.capacity());
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * size * w + ox * size;
                    for dy in 0..size {
                        for dx in 0..size {
                            let at = base + (oy * size + dy) * w + ox * size + dx;
                            if x.data[at] > x.data[best] {
                                best = at;
                            }
                        }
                    }
                    y.push(x.data[best]);
                    arg.push(best);
                }
            }
        }
        Ok((Array::new(vec![b, c, oh, ow], y), arg))
    }

    /// Input gradient and per-parameter gradients (in `params` order) given
    /// the layer input `x`, its output `y` and the output gradient `dy`.
    pub fn backward(&self, x: &Array, y: &Array, dy: &Array) -> Result<(Array, Vec<Vec<f64>>), NnError> {
        let b = x.batch();
        match &self.kind {
            LayerKind::Conv2d { .. } => {
                let g = self.geom(x)?;
                let (dx, dw, db) = conv_backward(&x.data, b, self.p(0).data(), &dy.data, &g);
                Ok((Array::new(x.shape.clone(), dx), vec![dw, db]))
            }
            LayerKind::Conv2dTucker2 { .. } => {
                let g = self.geom(x)?;
                let [(w1, g1), (w2, g2), (w3, g3)] = self.tucker_stages(&g);
                let h1 = conv_forward(&x.data, b, &w1, None, &g1);
                let h2 = conv_forward(&h1, b, &w2, None, &g2);
                let (dh2, dw3, db) = conv_backward(&h2, b, &w3, &dy.data, &g3);
                let (dh1, dw2, _) = conv_backward(&h1, b, &w2, &dh2, &g2);
                let (dx, dw1, _) = conv_backward(&x.data, b, &w1, &dh1, &g1);
                let r = g1.c_out;
                // w1 is u_inᵀ; u_out is already [C_out, R].
                Ok((Array::new(x.shape.clone(), dx), vec![transpose(&dw1, r, g.c_in), dw2, dw3, db]))
            }
            LayerKind::Dense | LayerKind::DenseTtm { .. } => {
                let (n_in, n_out) = self.dense_dims()?;
                let w = self.dense_weight();
                let mut dx = vec![0.0; b * n_in];
                let mut dw = vec![0.0; n_out * n_in];
                let mut db = vec![0.0; n_out];
                for s in 0..b {
                    let xs = &x.data[s * n_in..(s + 1) * n_in];
                    let dxs = &mut dx[s * n_in..(s + 1) * n_in];
                    for o in 0..n_out {
                        let d = dy.data[s * n_out + o];
                        if d == 0.0 {
                            continue;
                        }
                        db[o] += d;
                        let wr = &w[o * n_in..(o + 1) * n_in];
                        let dwr = &mut dw[o * n_in..(o + 1) * n_in];
                        for i in 0..n_in {
                            dwr[i] += d * xs[i];
                            dxs[i] += d * wr[i];
                        }
                    }
                }
                let grads = match &self.kind {
                    LayerKind::DenseTtm { row_factors, col_factors } => {
                        let d = row_factors.len();
                        let cores: Vec<DenseTensor> = self.params[..d].iter().map(|p| p.value.clone()).collect();
                        let mut g = ttm_core_grads(&cores, row_factors, col_factors, &dw);
                        g.push(db);
                        g
                    }
                    _ => vec![dw, db],
                };
                Ok((Array::new(x.shape.clone(), dx), grads))
            }
            LayerKind::Relu => {
                let dx = x.data.iter().zip(&dy.data).map(|(&v, &d)| if v > 0.0 { d } else { 0.0 }).collect();
                Ok((Array::new(x.shape.clone(), dx), vec![]))
            }
            LayerKind::MaxPool2d { size } => {
                let (_, arg) = self.pool(x, *size)?;
                let mut dx = vec![0.0; x.data.len()];
                for (&at, &d) in arg.iter().zip(&dy.data) {
                    dx[at] += d;
                }
                Ok((Array::new(x.shape.clone(), dx), vec![]))
            }
            LayerKind::Flatten => Ok((Array::new(x.shape.clone(), dy.data.clone()), vec![])),
            LayerKind::Softmax => {
                let k = x.shape[1];
                let mut dx = vec![0.0; x.data.len()];
                for ((ys, ds), out) in y.data.chunks(k).zip(dy.data.chunks(k)).zip(dx.chunks_mut(k)) {
                    let dot: f64 = ys.iter().zip(ds).map(|(a, b)| a * b).sum();
                    for j in 0..k {
                        out[j] = ys[j] * (ds[j] - dot);
                    }
                }
                Ok((Array::new(x.shape.clone(), dx), vec![]))
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

/// `rows x cols` row-major to `cols x rows`.
fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize, h: usize, w: usize) -> Option<Self> {
        if stride == 0 || k == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Some(Self { c_in, c_out, k, stride, pad, h, w, oh, ow })
    }

    /// Input coordinate for output `o` and tap `t`, if inside the image.
    #[inline]
    fn src(&self, o: usize, t: usize, n: usize) -> Option<usize> {
        let p = (o * self.stride + t) as isize - self.pad as isize;
        (p >= 0 && (p as usize) < n).then_some(p as usize)
    }
}

/// Direct cross-correlation with zero padding.
pub(crate) fn conv_forward(x: &[f64], batch: usize, w: &[f64], bias: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let (hw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.k * g.k);
    let mut y = vec![0.0; batch * g.c_out * ohw];
    for b in 0..batch {
        for o in 0..g.c_out {
            let out = &mut y[(b * g.c_out + o) * ohw..][..ohw];
            if let Some(bias) = bias {
                out.iter_mut().for_each(|v| *v = bias[o]);
            }
            for i in 0..g.c_in {
                let img = &x[(b * g.c_in + i) * hw..][..hw];
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let wv = w[(o * g.c_in + i) * kk + ky * g.k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for oy in 0..g.oh {
                            let Some(iy) = g.src(oy, ky, g.h) else { continue };
                            let row = &img[iy * g.w..][..g.w];
                            let orow = &mut out[oy * g.ow..][..g.ow];
                            for (ox, ov) in orow.iter_mut().enumerate() {
                                if let Some(ix) = g.src(ox, kx, g.w) {
                                    *ov += wv * row[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Gradients of `conv_forward` with respect to input, weight and bias.
pub(crate) fn conv_backward(x: &[f64], batch: usize, w: &[f64], dy: &[f64], g: &ConvGeom) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (hw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.k * g.k);
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; g.c_out];
    for b in 0..batch {
        for o in 0..g.c_out {
            let dout = &dy[(b * g.c_out + o) * ohw..][..ohw];
            db[o] += dout.iter().sum::<f64>();
            for i in 0..g.c_in {
                let base = (b * g.c_in + i) * hw;
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let wi = (o * g.c_in + i) * kk + ky * g.k + kx;
                        let wv = w[wi];
                        let mut acc = 0.0;
                        for oy in 0..g.oh {
                            let Some(iy) = g.src(oy, ky, g.h) else { continue };
                            for ox in 0..g.ow {
                                if let Some(ix) = g.src(ox, kx, g.w) {
                                    let d = dout[oy * g.ow + ox];
                                    let at = base + iy * g.w + ix;
                                    acc += d * x[at];
                                    dx[at] += d * wv;
                                }
                            }
                        }
                        dw[wi] += acc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

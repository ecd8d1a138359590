use crate::layers::Array;
use crate::NnError;
use serde_json::Value;
use ttkit_core::container::{Container, Entry, TensorData};
use ttkit_core::Rng;

/// Labelled samples; `images` is `[N, ...per-sample shape]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Array,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(images: Array, labels: Vec<usize>, class_count: usize) -> Result<Self, NnError> {
        if images.shape.is_empty() || images.batch() == 0 {
            return Err(NnError::Data("dataset needs at least one sample".into()));
        }
        if labels.len() != images.batch() {
            return Err(NnError::Data(format!("{} labels for {} images", labels.len(), images.batch())));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= class_count) {
            return Err(NnError::Data(format!("label {l} outside [0, {class_count})")));
        }
        Ok(Self { images, labels, class_count })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape[1..]
    }

    /// Samples at `idx`, in that order.
    pub fn gather(&self, idx: &[usize]) -> (Array, Vec<usize>) {
        let w = self.images.row_len();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(&self.images.data[i * w..(i + 1) * w]);
        }
        let mut shape = self.images.shape.clone();
        shape[0] = idx.len();
        (Array::new(shape, data), idx.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.meta.insert("kind".into(), Value::from("dataset"));
        c.meta.insert("class_count".into(), Value::from(self.class_count));
        c.push(Entry::f32_from_f64("images", self.images.shape.clone(), &self.images.data).expect("valid shape"))
            .expect("unique");
        let labels = self.labels.iter().map(|&l| l as i64).collect();
        c.push(Entry::new("labels", vec![self.len()], TensorData::I64(labels)).expect("valid shape")).expect("unique");
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, NnError> {
        let images = c.require("images")?;
        let labels = c.require("labels")?;
        let TensorData::F32(_) = images.data else {
            return Err(NnError::Data("images must be f32".into()));
        };
        let TensorData::I64(raw) = &labels.data else {
            return Err(NnError::Data("labels must be i64".into()));
        };
        let class_count = c
            .meta
            .get("class_count")
            .and_then(Value::as_u64)
            .ok_or_else(|| NnError::Data("meta.class_count missing".into()))? as usize;
        let labels = raw
            .iter()
            .map(|&l| usize::try_from(l).map_err(|_| NnError::Data(format!("negative label {l}"))))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(Array::new(images.shape.clone(), images.to_f64()), labels, class_count)
    }
}

/// Bars images: class 0 has a horizontal bar on a random row, class 1 a
/// vertical bar on a random column, plus Gaussian noise. Sample `i` has class
/// `i % 2`. Pixels are rounded to f32 so containers store them exactly.
pub fn gen_bars(n: usize, size: usize, noise: f64, seed: u64) -> Result<Dataset, NnError> {
    if n < 2 || n % 2 != 0 || size < 1 {
        return Err(NnError::Data(format!("gen_bars needs an even n >= 2 and size >= 1, got n={n} size={size}")));
    }
    let mut rng = Rng::new(seed);
    let mut data = vec![0.0; n * size * size];
    let mut labels = Vec::with_capacity(n);
    for (s, img) in data.chunks_mut(size * size).enumerate() {
        let class = s % 2;
        let at = rng.below(size);
        for t in 0..size {
            let (y, x) = if class == 0 { (at, t) } else { (t, at) };
            img[y * size + x] = 1.0;
        }
        if noise > 0.0 {
            for v in img.iter_mut() {
                *v += noise * rng.normal();
            }
        }
        for v in img.iter_mut() {
            *v = *v as f32 as f64;
        }
        labels.push(class);
    }
    Dataset::new(Array::new(vec![n, 1, size, size], data), labels, 2)
}

/// Two Gaussian blobs in `dims` dimensions centred at `±sep/2` on every axis;
/// samples have shape `[dims]`.
pub fn gen_blobs(n: usize, dims: usize, sep: f64, seed: u64) -> Result<Dataset, NnError> {
    if n < 2 || dims < 1 {
        return Err(NnError::Data("gen_blobs needs n >= 2 and dims >= 1".into()));
    }
    let mut rng = Rng::new(seed);
    let mut data = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for s in 0..n {
        let class = s % 2;
        let c = if class == 0 { -sep / 2.0 } else { sep / 2.0 };
        for _ in 0..dims {
            data.push((c + rng.normal()) as f32 as f64);
        }
        labels.push(class);
    }
    Dataset::new(Array::new(vec![n, dims], data), labels, 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_bars_have_size_ones() {
        let d = gen_bars(10, 8, 0.0, 1).unwrap();
        for img in d.images.data.chunks(64) {
            assert_eq!(img.iter().filter(|&&v| v == 1.0).count(), 8);
            assert_eq!(img.iter().filter(|&&v| v == 0.0).count(), 56);
        }
        assert_eq!(d.labels, vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn bars_are_deterministic() {
        let a = gen_bars(20, 8, 0.1, 9).unwrap().to_container().to_bytes();
        let b = gen_bars(20, 8, 0.1, 9).unwrap().to_container().to_bytes();
        assert_eq!(a, b);
        assert_ne!(a, gen_bars(20, 8, 0.1, 10).unwrap().to_container().to_bytes());
    }

    #[test]
    fn container_round_trip() {
        let d = gen_bars(6, 5, 0.2, 2).unwrap();
        let back = Dataset::from_container(&Container::from_bytes(&d.to_container().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn bad_requests() {
        assert!(gen_bars(3, 8, 0.1, 0).is_err());
        assert!(Dataset::new(Array::zeros(vec![2, 3]), vec![0, 2], 2).is_err());
    }
}

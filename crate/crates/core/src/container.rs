//! `TAML` binary container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "TAML"            4 bytes magic
//! version           u32 = 1
//! header_len        u64
//! header            UTF-8 JSON {"entries":[{name,dtype,shape,offset,length}],"meta":{..}},
//!                   space-padded so the payload starts on an 8-byte boundary
//! payload           row-major tensor blobs; offsets are relative to the payload
//!                   start, 8-byte aligned, packed in entry order with zero padding
//! ```
//!
//! `length` is in bytes and must equal `product(shape) * dtype_size`. Readers
//! accept only the packed layout, so any corruption of an offset or length is
//! rejected rather than silently reading a different region.

use serde_json::{Map, Value};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"TAML";
pub const VERSION: u32 = 1;
const PRELUDE: usize = 16;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported container version {0}")]
    BadVersion(u32),
    #[error("truncated container: {0}")]
    Truncated(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("entry {name:?}: {reason}")]
    Entry { name: String, reason: String },
    #[error("duplicate entry name {0:?}")]
    Duplicate(String),
    #[error("missing entry {0:?}")]
    Missing(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    U8,
    I8,
    I64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U8 | DType::I8 => 1,
            DType::I64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::U8 => "u8",
            DType::I8 => "i8",
            DType::I64 => "i64",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "f32" => DType::F32,
            "u8" => DType::U8,
            "i8" => DType::I8,
            "i64" => DType::I64,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
    I8(Vec<i8>),
    I64(Vec<i64>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::U8(_) => DType::U8,
            TensorData::I8(_) => DType::I8,
            TensorData::I64(_) => DType::I64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::I8(v) => v.len(),
            TensorData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
            TensorData::I8(v) => out.extend(v.iter().map(|&x| x as u8)),
            TensorData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }

    fn read_le(dtype: DType, bytes: &[u8]) -> Self {
        match dtype {
            DType::F32 => TensorData::F32(
                bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
            DType::U8 => TensorData::U8(bytes.to_vec()),
            DType::I8 => TensorData::I8(bytes.iter().map(|&b| b as i8).collect()),
            DType::I64 => TensorData::I64(
                bytes.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Entry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: TensorData) -> Result<Self, ContainerError> {
        let name = name.into();
        let expected = shape_len(&shape).ok_or_else(|| ContainerError::Entry {
            name: name.clone(),
            reason: format!("invalid shape {shape:?}"),
        })?;
        if expected != data.len() {
            return Err(ContainerError::Entry {
                name,
                reason: format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            });
        }
        Ok(Self { name, shape, data })
    }

    pub fn f32_from_f64(name: impl Into<String>, shape: Vec<usize>, values: &[f64]) -> Result<Self, ContainerError> {
        Self::new(name, shape, TensorData::F32(values.iter().map(|&v| v as f32).collect()))
    }

    pub fn byte_len(&self) -> usize {
        self.data.len() * self.data.dtype().size()
    }

    /// Values widened to `f64` (integers converted exactly when representable).
    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::U8(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::I8(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::I64(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }
}

fn shape_len(shape: &[usize]) -> Option<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return None;
    }
    shape.iter().try_fold(1usize, |a, &n| a.checked_mul(n))
}

fn align8(n: usize) -> usize {
    n.div_ceil(8) * 8
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    entries: Vec<Entry>,
    pub meta: Map<String, Value>,
}

impl Default for Container {
    fn default() -> Self {
        Self::new()
    }
}

impl Container {
    pub fn new() -> Self {
        Self { entries: Vec::new(), meta: Map::new() }
    }

    pub fn with_meta(meta: Map<String, Value>) -> Self {
        Self { entries: Vec::new(), meta }
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn push(&mut self, entry: Entry) -> Result<(), ContainerError> {
        if self.entries.iter().any(|e| e.name == entry.name) {
            return Err(ContainerError::Duplicate(entry.name));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Entry, ContainerError> {
        self.get(name).ok_or_else(|| ContainerError::Missing(name.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut descs = Vec::with_capacity(self.entries.len());
        let mut offset = 0usize;
        for e in &self.entries {
            offset = align8(offset);
            let mut d = Map::new();
            d.insert("name".into(), Value::from(e.name.clone()));
            d.insert("dtype".into(), Value::from(e.data.dtype().name()));
            d.insert("shape".into(), Value::from(e.shape.clone()));
            d.insert("offset".into(), Value::from(offset));
            d.insert("length".into(), Value::from(e.byte_len()));
            descs.push(Value::Object(d));
            offset += e.byte_len();
        }
        let mut header = Map::new();
        header.insert("entries".into(), Value::Array(descs));
        header.insert("meta".into(), Value::Object(self.meta.clone()));
        let mut header = serde_json::to_vec(&Value::Object(header)).expect("header serializes");
        header.resize(align8(PRELUDE + header.len()) - PRELUDE, b' ');

        let mut out = Vec::with_capacity(PRELUDE + header.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let payload_start = out.len();
        for e in &self.entries {
            out.resize(payload_start + align8(out.len() - payload_start), 0);
            e.data.write_le(&mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        if bytes.len() < PRELUDE {
            return Err(ContainerError::Truncated(format!("{} bytes, need at least {PRELUDE}", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(ContainerError::BadVersion(version));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let available = (bytes.len() - PRELUDE) as u64;
        if header_len > available {
            return Err(ContainerError::Truncated(format!("header length {header_len} exceeds {available} bytes")));
        }
        let header_end = PRELUDE + header_len as usize;
        let header = std::str::from_utf8(&bytes[PRELUDE..header_end])
            .map_err(|e| ContainerError::Header(format!("not UTF-8: {e}")))?;
        let root: Value = serde_json::from_str(header).map_err(|e| ContainerError::Header(e.to_string()))?;
        if header_end % 8 != 0 {
            return Err(ContainerError::Header("payload is not 8-byte aligned".into()));
        }
        let root = root.as_object().ok_or_else(|| ContainerError::Header("header is not an object".into()))?;
        let descs = root
            .get("entries")
            .and_then(Value::as_array)
            .ok_or_else(|| ContainerError::Header("missing \"entries\" array".into()))?;
        let meta = match root.get("meta") {
            Some(Value::Object(m)) => m.clone(),
            _ => return Err(ContainerError::Header("missing \"meta\" object".into())),
        };
        let payload = &bytes[header_end..];
        let mut container = Container::with_meta(meta);
        let mut prev_end = 0usize;
        for (k, d) in descs.iter().enumerate() {
            let bad = |reason: String| ContainerError::Entry {
                name: d.get("name").and_then(Value::as_str).unwrap_or(&format!("#{k}")).to_string(),
                reason,
            };
            let name = d
                .get("name")
                .and_then(Value::as_str)
                .ok_or_else(|| bad("missing name".into()))?
                .to_string();
            let dtype = d
                .get("dtype")
                .and_then(Value::as_str)
                .and_then(DType::parse)
                .ok_or_else(|| bad("missing or unknown dtype".into()))?;
            let shape = d
                .get("shape")
                .and_then(Value::as_array)
                .and_then(|a| a.iter().map(|v| v.as_u64().and_then(|x| usize::try_from(x).ok())).collect::<Option<Vec<_>>>())
                .ok_or_else(|| bad("missing or invalid shape".into()))?;
            let offset = d
                .get("offset")
                .and_then(Value::as_u64)
                .and_then(|x| usize::try_from(x).ok())
                .ok_or_else(|| bad("missing offset".into()))?;
            let length = d
                .get("length")
                .and_then(Value::as_u64)
                .and_then(|x| usize::try_from(x).ok())
                .ok_or_else(|| bad("missing length".into()))?;
            let count = shape_len(&shape).ok_or_else(|| bad(format!("invalid shape {shape:?}")))?;
            let expected_len = count.checked_mul(dtype.size()).ok_or_else(|| bad("shape overflows".into()))?;
            if length != expected_len {
                return Err(bad(format!("length {length} != {expected_len} for {shape:?} {}", dtype.name())));
            }
            let expected_offset = align8(prev_end);
            if offset != expected_offset {
                return Err(bad(format!("offset {offset}, expected packed offset {expected_offset}")));
            }
            let end = offset.checked_add(length).ok_or_else(|| bad("offset overflows".into()))?;
            if end > payload.len() {
                return Err(bad(format!("bytes {offset}..{end} outside payload of {}", payload.len())));
            }
            if payload[prev_end..offset].iter().any(|&b| b != 0) {
                return Err(bad("non-zero alignment padding".into()));
            }
            let data = TensorData::read_le(dtype, &payload[offset..end]);
            container.push(Entry { name, shape, data })?;
            prev_end = end;
        }
        if payload.len() != prev_end {
            return Err(ContainerError::Truncated(format!(
                "payload has {} bytes, entries cover {prev_end}",
                payload.len()
            )));
        }
        Ok(container)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), ContainerError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, ContainerError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

use super::CompressError;
use ttkit_core::{DenseTensor, NumericError};

/// Asymmetric affine codes: `w ≈ (code - zero_point) * scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedTensor {
    pub codes: Vec<u8>,
    pub bits: u32,
    pub scale: f64,
    pub zero_point: i64,
    pub shape: Vec<usize>,
}

impl QuantizedTensor {
    pub fn dequantize(&self) -> Result<DenseTensor, NumericError> {
        let data = self.codes.iter().map(|&c| (c as i64 - self.zero_point) as f64 * self.scale).collect();
        DenseTensor::new(self.shape.clone(), data)
    }

    /// Storage for the codes, packing two 4-bit codes per byte.
    pub fn storage_bytes(&self) -> usize {
        (self.codes.len() * self.bits as usize).div_ceil(8)
    }
}

/// `scale = (max - min) / (2^b - 1)` (1 for a constant tensor),
/// `zero_point = round(-min / scale)`,
/// `code = clamp(round(w / scale) + zero_point, 0, 2^b - 1)`.
pub fn quantize_uniform(t: &DenseTensor, bits: u32) -> Result<QuantizedTensor, CompressError> {
    if bits != 4 && bits != 8 {
        return Err(CompressError::Bits(bits));
    }
    let qmax = (1i64 << bits) - 1;
    let (lo, hi) = t.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let scale = if hi > lo { (hi - lo) / qmax as f64 } else { 1.0 };
    let zero_point = (-lo / scale).round() as i64;
    let codes = t
        .data()
        .iter()
        .map(|&w| ((w / scale).round() as i64 + zero_point).clamp(0, qmax) as u8)
        .collect();
    Ok(QuantizedTensor { codes, bits, scale, zero_point, shape: t.shape().to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_tensor_is_exact() {
        let t = DenseTensor::zeros(vec![3, 2]).unwrap();
        let q = quantize_uniform(&t, 8).unwrap();
        assert_eq!(q.scale, 1.0);
        assert!(q.codes.iter().all(|&c| c as i64 == q.zero_point));
        assert_eq!(q.dequantize().unwrap(), t);
    }

    #[test]
    fn integer_constant_is_exact() {
        let t = DenseTensor::new(vec![4], vec![-3.0; 4]).unwrap();
        let q = quantize_uniform(&t, 4).unwrap();
        assert_eq!(q.zero_point, 3);
        assert_eq!(q.dequantize().unwrap(), t);
    }

    #[test]
    fn unit_endpoints() {
        let t = DenseTensor::new(vec![2], vec![0.0, 1.0]).unwrap();
        let q = quantize_uniform(&t, 8).unwrap();
        assert_eq!(q.scale, 1.0 / 255.0);
        assert_eq!(q.codes, vec![0, 255]);
        assert_eq!(q.dequantize().unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn bits_are_checked() {
        let t = DenseTensor::zeros(vec![1]).unwrap();
        assert!(matches!(quantize_uniform(&t, 2), Err(CompressError::Bits(2))));
        assert_eq!(quantize_uniform(&DenseTensor::zeros(vec![3]).unwrap(), 4).unwrap().storage_bytes(), 2);
    }
}

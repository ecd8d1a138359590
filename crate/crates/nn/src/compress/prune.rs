use super::CompressError;
use ttkit_core::DenseTensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Pruned {
    pub tensor: DenseTensor,
    /// `true` where the entry was kept.
    pub mask: Vec<bool>,
    pub achieved_sparsity: f64,
}

/// Zeroes the `floor(s * len)` entries of smallest magnitude; equal
/// magnitudes go lowest linear index first.
pub fn prune_magnitude(t: &DenseTensor, sparsity: f64) -> Result<Pruned, CompressError> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(CompressError::Sparsity(sparsity));
    }
    let n = t.len();
    let k = (sparsity * n as f64).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| t.data()[a].abs().total_cmp(&t.data()[b].abs()).then(a.cmp(&b)));
    let mut mask = vec![true; n];
    for &i in &order[..k] {
        mask[i] = false;
    }
    let data = t.data().iter().zip(&mask).map(|(&v, &keep)| if keep { v } else { 0.0 }).collect();
    Ok(Pruned {
        tensor: DenseTensor::new(t.shape().to_vec(), data).expect("same shape"),
        mask,
        achieved_sparsity: k as f64 / n as f64,
    })
}

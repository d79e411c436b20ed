use ndarray::{Array3, ArrayView3, Zip};
use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_pos: f64,
    pub w_l1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_pos: 1.0, w_l1: 0.0 }
    }
}

/// `w_pos · mean (p − t)² + w_l1 · mean |p|` and its gradient in `p`.
/// Sums run in f64 in row-major order.
pub fn loss_eval<T: Real>(prediction: ArrayView3<T>, target: ArrayView3<T>, weights: LossWeights) -> Result<(f64, Array3<T>)> {
    if prediction.dim() != target.dim() {
        return Err(Error::shape(format!("prediction {:?} vs target {:?}", prediction.dim(), target.dim())));
    }
    let n = prediction.len().max(1) as f64;
    let (mut sq, mut abs) = (0.0, 0.0);
    for (&p, &t) in prediction.iter().zip(target.iter()) {
        let d = p.f64() - t.f64();
        sq += d * d;
        abs += p.f64().abs();
    }
    let loss = weights.w_pos * sq / n + weights.w_l1 * abs / n;
    let a = 2.0 * weights.w_pos / n;
    let b = weights.w_l1 / n;
    let mut grad = Array3::zeros(prediction.dim());
    Zip::from(&mut grad).and(&prediction).and(&target).for_each(|g, &p, &t| {
        let p = p.f64();
        let sign = if p > 0.0 { 1.0 } else if p < 0.0 { -1.0 } else { 0.0 };
        *g = T::of(a * (p - t.f64()) + b * sign);
    });
    Ok((loss, grad))
}

use serde::{Deserialize, Serialize};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moments for one flat parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Copy + Default> Moments<T> {
    pub fn zeros(len: usize) -> Self {
        Self { m: vec![T::default(); len], v: vec![T::default(); len] }
    }
}

/// One bias-corrected Adam update at (1-based) step `t`; entries with
/// `active[i] == false` are left alone.
pub(crate) fn adam_f64(params: &mut [f64], grads: &[f64], mo: &mut Moments<f64>, lr: f64, t: u64, active: Option<&[bool]>) {
    let c1 = 1.0 - BETA1.powi(t as i32);
    let c2 = 1.0 - BETA2.powi(t as i32);
    for i in 0..params.len() {
        if active.is_some_and(|a| !a[i]) {
            continue;
        }
        let g = grads[i];
        mo.m[i] = BETA1 * mo.m[i] + (1.0 - BETA1) * g;
        mo.v[i] = BETA2 * mo.v[i] + (1.0 - BETA2) * g * g;
        params[i] -= lr * (mo.m[i] / c1) / ((mo.v[i] / c2).sqrt() + EPSILON);
    }
}

pub(crate) fn adam_f32(params: &mut [f32], grads: &[f32], mo: &mut Moments<f32>, lr: f64, t: u64) {
    let (b1, b2, eps) = (BETA1 as f32, BETA2 as f32, EPSILON as f32);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    let lr = lr as f32;
    for i in 0..params.len() {
        let g = grads[i];
        mo.m[i] = b1 * mo.m[i] + (1.0 - b1) * g;
        mo.v[i] = b2 * mo.v[i] + (1.0 - b2) * g * g;
        params[i] -= lr * (mo.m[i] / c1) / ((mo.v[i] / c2).sqrt() + eps);
    }
}

//! Grid decoder: dilated-convolution context aggregation, ×4 nearest
//! upsampling and a per-slice refinement head ending in a sigmoid occupancy
//! grid. Forward and reverse passes are written out by hand.

mod checkpoint;
mod conv;
mod loss;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, Array3, Array4, ArrayView2, ArrayView3, Axis, LinalgScalar, ScalarOperand};
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid3d::{Grid3D, GridSpec};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, Normalization, CHECKPOINT_VERSION};
pub use loss::{loss_eval, LossWeights};

/// Scalar type the network runs in: `f32` for training, `f64` for checks.
pub trait Real:
    Float + LinalgScalar + ScalarOperand + Sum + Debug + Display + Default + Send + Sync + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Activation {
    Identity,
    LeakyRelu { slope: f64 },
    Sigmoid,
}

/// Architecture of the default decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderSpec {
    pub context_channels: usize,
    pub dilations: Vec<usize>,
    pub refine_channels: usize,
    /// Output z-slices (the grid depth).
    pub depth: usize,
    pub slope: f64,
    pub upsample: usize,
}

impl Default for DecoderSpec {
    fn default() -> Self {
        Self { context_channels: 32, dilations: vec![1, 2, 4, 8], refine_channels: 32, depth: 121, slope: 0.1, upsample: 4 }
    }
}

impl DecoderSpec {
    pub fn with_depth(depth: usize) -> Self {
        Self { depth, ..Self::default() }
    }

    /// Receptive field radius in input pixels (context stage plus the
    /// refinement conv, which sees ±1 upsampled cell).
    pub fn receptive_radius(&self) -> usize {
        self.dilations.iter().sum::<usize>() + 1
    }
}

/// Description of one layer, in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum LayerSpec {
    Conv { in_channels: usize, out_channels: usize, kernel: usize, dilation: usize, activation: Activation },
    Upsample { factor: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    /// out × in × k × k.
    pub weight: Array4<T>,
    pub bias: Array1<T>,
    pub dilation: usize,
    pub activation: Activation,
}

impl<T: Real> Conv<T> {
    fn kernel(&self) -> usize {
        self.weight.dim().2
    }

    fn matrix(&self) -> ArrayView2<'_, T> {
        let (o, i, k, _) = self.weight.dim();
        self.weight.view().into_shape_with_order((o, i * k * k)).unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv(Conv<T>),
    Upsample(usize),
}

static NEXT_TOKEN: AtomicU64 = AtomicU64::new(1);

fn fresh_token() -> u64 {
    NEXT_TOKEN.fetch_add(1, Ordering::Relaxed)
}

/// Network parameters. Gradients share this type.
#[derive(Debug)]
pub struct DecoderParams<T> {
    layers: Vec<Layer<T>>,
    seed: u64,
    /// Changes whenever parameters are mutated; forward caches record it.
    token: u64,
}

impl<T: Clone> Clone for DecoderParams<T> {
    fn clone(&self) -> Self {
        Self { layers: self.layers.clone(), seed: self.seed, token: fresh_token() }
    }
}

impl<T: PartialEq> PartialEq for DecoderParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.seed == other.seed
    }
}

impl<T: Real> DecoderParams<T> {
    /// Default architecture with fan-in scaled uniform weights and zero biases.
    pub fn init(spec: &DecoderSpec, seed: u64) -> Result<Self> {
        if spec.dilations.is_empty() || spec.context_channels == 0 || spec.refine_channels == 0 || spec.depth == 0 {
            return Err(Error::config("decoder needs at least one context layer and nonzero channel counts"));
        }
        if spec.upsample != 4 {
            return Err(Error::config(format!("decoder upsampling must be 4, got {}", spec.upsample)));
        }
        let leaky = Activation::LeakyRelu { slope: spec.slope };
        let mut layers = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv = |rng: &mut ChaCha8Rng, i: usize, o: usize, k: usize, d: usize, act: Activation| {
            let fan_in = (i * k * k) as f64;
            let gain = match act {
                Activation::LeakyRelu { slope } => 2.0 / (1.0 + slope * slope),
                _ => 1.0,
            };
            let bound = (3.0 * gain / fan_in).sqrt();
            Layer::Conv(Conv {
                weight: Array4::from_shape_simple_fn((o, i, k, k), || T::of(rng.random_range(-bound..bound))),
                bias: Array1::zeros(o),
                dilation: d,
                activation: act,
            })
        };
        let mut ch = 1;
        for &d in &spec.dilations {
            layers.push(conv(&mut rng, ch, spec.context_channels, 3, d, leaky));
            ch = spec.context_channels;
        }
        layers.push(Layer::Upsample(spec.upsample));
        layers.push(conv(&mut rng, ch, spec.refine_channels, 3, 1, leaky));
        layers.push(conv(&mut rng, spec.refine_channels, spec.depth, 1, 1, Activation::Sigmoid));
        Self::from_layers(layers, seed)
    }

    pub fn from_layers(layers: Vec<Layer<T>>, seed: u64) -> Result<Self> {
        let ups: Vec<usize> = layers.iter().filter_map(|l| if let Layer::Upsample(f) = l { Some(*f) } else { None }).collect();
        if ups != [4] {
            return Err(Error::config(format!("decoder needs exactly one ×4 upsampling stage, found {ups:?}")));
        }
        let mut ch = 1;
        for (idx, l) in layers.iter().enumerate() {
            if let Layer::Conv(c) = l {
                let (o, i, k, k2) = c.weight.dim();
                if i != ch || k != k2 || k % 2 == 0 || c.bias.len() != o || c.dilation == 0 {
                    return Err(Error::shape(format!("layer {idx}: inconsistent kernel {:?}", c.weight.dim())));
                }
                ch = o;
            }
        }
        if !matches!(layers.last(), Some(Layer::Conv(c)) if c.activation == Activation::Sigmoid) {
            return Err(Error::config("decoder must end in a sigmoid conv layer"));
        }
        Ok(Self { layers, seed, token: fresh_token() })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn depth(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Conv(c)) => c.bias.len(),
            _ => 0,
        }
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => {
                    let (o, i, k, _) = c.weight.dim();
                    LayerSpec::Conv { in_channels: i, out_channels: o, kernel: k, dilation: c.dilation, activation: c.activation }
                }
                Layer::Upsample(f) => LayerSpec::Upsample { factor: *f },
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().map(|t| t.len()).sum()
    }

    /// Parameter tensors as flat slices: each conv's weight, then its bias.
    pub fn tensors(&self) -> impl Iterator<Item = &[T]> {
        self.layers.iter().flat_map(|l| match l {
            Layer::Conv(c) => vec![c.weight.as_slice().unwrap(), c.bias.as_slice().unwrap()],
            Layer::Upsample(_) => vec![],
        })
    }

    /// Mutable parameter tensors; invalidates outstanding forward caches.
    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [T]> {
        self.token = fresh_token();
        self.layers.iter_mut().flat_map(|l| match l {
            Layer::Conv(c) => vec![c.weight.as_slice_mut().unwrap(), c.bias.as_slice_mut().unwrap()],
            Layer::Upsample(_) => vec![],
        })
    }

    /// Same architecture, all parameters zero.
    pub fn zeros_like(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => Layer::Conv(Conv {
                    weight: Array4::zeros(c.weight.dim()),
                    bias: Array1::zeros(c.bias.len()),
                    dilation: c.dilation,
                    activation: c.activation,
                }),
                Layer::Upsample(f) => Layer::Upsample(*f),
            })
            .collect();
        Self { layers, seed: self.seed, token: fresh_token() }
    }

    /// Element-wise `self += other`.
    pub fn accumulate(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x = *x + y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            for x in t {
                *x = *x * s;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> DecoderParams<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => Layer::Conv(Conv {
                    weight: c.weight.mapv(|v| U::of(v.f64())),
                    bias: c.bias.mapv(|v| U::of(v.f64())),
                    dilation: c.dilation,
                    activation: c.activation,
                }),
                Layer::Upsample(f) => Layer::Upsample(*f),
            })
            .collect();
        DecoderParams { layers, seed: self.seed, token: fresh_token() }
    }
}

enum Saved<T> {
    Conv { cols: Array2<T>, input_shape: (usize, usize, usize), pre: Array2<T>, out: Array2<T> },
    Upsample,
}

/// Intermediate tensors of one forward pass, consumed by the reverse pass.
pub struct ForwardCache<T> {
    token: u64,
    input_shape: (usize, usize),
    saved: Vec<Saved<T>>,
}

impl<T> ForwardCache<T> {
    pub fn input_shape(&self) -> (usize, usize) {
        self.input_shape
    }
}

fn activate<T: Real>(a: Activation, v: T) -> T {
    match a {
        Activation::Identity => v,
        Activation::LeakyRelu { slope } => {
            if v > T::zero() {
                v
            } else {
                v * T::of(slope)
            }
        }
        Activation::Sigmoid => T::one() / (T::one() + (-v).exp()),
    }
}

fn activate_grad<T: Real>(a: Activation, pre: T, out: T) -> T {
    match a {
        Activation::Identity => T::one(),
        Activation::LeakyRelu { slope } => {
            if pre > T::zero() {
                T::one()
            } else {
                T::of(slope)
            }
        }
        Activation::Sigmoid => out * (T::one() - out),
    }
}

/// Runs the network on one normalised `H × W` frame; returns the
/// `D × 4H × 4W` occupancy prediction.
pub fn decoder_forward<T: Real>(params: &DecoderParams<T>, frame: ArrayView2<T>) -> Result<(Array3<T>, ForwardCache<T>)> {
    let (h, w) = frame.dim();
    if h == 0 || w == 0 {
        return Err(Error::shape("decoder input must be nonempty"));
    }
    let mut x = frame.to_owned().insert_axis(Axis(0));
    let mut saved = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        match layer {
            Layer::Conv(c) => {
                let input_shape = x.dim();
                let cols = conv::im2col(x.view(), c.kernel(), c.dilation);
                let mut pre = c.matrix().dot(&cols);
                for (mut row, &b) in pre.axis_iter_mut(Axis(0)).zip(&c.bias) {
                    row.mapv_inplace(|v| v + b);
                }
                let out = pre.mapv(|v| activate(c.activation, v));
                x = out.clone().into_shape_with_order((c.bias.len(), input_shape.1, input_shape.2)).unwrap();
                saved.push(Saved::Conv { cols, input_shape, pre, out });
            }
            Layer::Upsample(f) => {
                x = conv::upsample(x.view(), *f);
                saved.push(Saved::Upsample);
            }
        }
    }
    Ok((x, ForwardCache { token: params.token, input_shape: (h, w), saved }))
}

/// Reverse pass: gradients of `Σ grad_output · prediction` with respect to
/// every parameter and to the input frame.
pub fn decoder_backward<T: Real>(
    params: &DecoderParams<T>,
    cache: &ForwardCache<T>,
    grad_output: ArrayView3<T>,
) -> Result<(DecoderParams<T>, Array2<T>)> {
    if cache.token != params.token || cache.saved.len() != params.layers.len() {
        return Err(Error::shape("forward cache does not belong to these parameters (stale or foreign)"));
    }
    let (h, w) = cache.input_shape;
    let up: usize = params.layers.iter().map(|l| if let Layer::Upsample(f) = l { *f } else { 1 }).product();
    let expected = (params.depth(), h * up, w * up);
    if grad_output.dim() != expected {
        return Err(Error::shape(format!("grad_output {:?} does not match prediction {expected:?}", grad_output.dim())));
    }
    let mut grads = params.zeros_like();
    let mut g = grad_output.to_owned();
    for (idx, (layer, saved)) in params.layers.iter().zip(&cache.saved).enumerate().rev() {
        match (layer, saved) {
            (Layer::Conv(c), Saved::Conv { cols, input_shape, pre, out }) => {
                let (o, hw) = pre.dim();
                let g_out = g.into_shape_with_order((o, hw)).unwrap();
                let mut g_pre = g_out;
                ndarray::Zip::from(&mut g_pre).and(pre).and(out).for_each(|gv, &p, &y| {
                    *gv = *gv * activate_grad(c.activation, p, y);
                });
                let Layer::Conv(gc) = &mut grads.layers[idx] else { unreachable!() };
                let dw = g_pre.dot(&cols.t());
                gc.weight.as_slice_mut().unwrap().copy_from_slice(dw.as_slice().unwrap());
                gc.bias = g_pre.sum_axis(Axis(1));
                let g_cols = c.matrix().t().dot(&g_pre);
                g = conv::col2im(&g_cols, *input_shape, c.kernel(), c.dilation);
            }
            (Layer::Upsample(f), Saved::Upsample) => {
                g = conv::upsample_adjoint(g.view(), *f);
            }
            _ => return Err(Error::shape("forward cache layer kinds do not match parameters")),
        }
    }
    let input_grad = g.index_axis_move(Axis(0), 0);
    Ok((grads, input_grad))
}

/// Converts a prediction to a grid over `spec`.
pub fn prediction_grid<T: Real>(prediction: &Array3<T>, spec: &GridSpec) -> Result<Grid3D> {
    Grid3D::from_values(prediction.mapv(|v| v.f64()), *spec)
}

//! Building blocks of the very deep character CNNs.
//!
//! Every layer exposes its learnable tensors through [`Params`], tagged with
//! the accounting category they are reported under.

mod batchnorm;
mod block;
mod conv;
mod embedding;
mod linear;

pub use batchnorm::{BatchNormState, BN_EPS, BN_MOMENTUM};
pub use block::{BlockVariant, ConvBlock, Shortcut};
pub use conv::{BlockLayer, TdscLayer, TemporalConvLayer};
pub use embedding::EmbeddingTable;
pub use linear::Linear;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tape::{BatchStats, Tape};
use crate::tensor::{Real, Tensor};

/// Kernel size of every temporal convolution in the network.
pub const KERNEL: usize = 3;
/// Zero padding that keeps a kernel-3 convolution length-preserving.
pub const PADDING: usize = (KERNEL - 1) / 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Accounting category of a learnable tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Embedding,
    Conv,
    BatchNorm,
    Fc,
}

pub trait Params<T: Real> {
    fn params(&self) -> Vec<(ParamKind, &Tensor<T>)>;
    fn params_mut(&mut self) -> Vec<(ParamKind, &mut Tensor<T>)>;

    fn param_count(&self, kind: ParamKind) -> usize {
        self.params()
            .iter()
            .filter(|(k, _)| *k == kind)
            .map(|(_, t)| t.len())
            .sum()
    }
}

/// State threaded through one forward pass.
pub struct Pass<'t, 'a, T: Real> {
    pub tape: &'t mut Tape<'a, T>,
    pub mode: Mode,
    /// Batch statistics of every train-mode batch norm, in forward order.
    pub stats: Vec<BatchStats<T>>,
}

impl<'t, 'a, T: Real> Pass<'t, 'a, T> {
    pub fn new(tape: &'t mut Tape<'a, T>, mode: Mode) -> Self {
        Pass {
            tape,
            mode,
            stats: Vec::new(),
        }
    }
}

/// Fan-in scaled normal initialization, `N(0, 2 / fan_in)`, for weights
/// that read rectified inputs.
pub(crate) fn kaiming<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    fan_in_normal(shape, fan_in, 2.0, rng)
}

/// `N(0, gain / fan_in)`.
pub(crate) fn fan_in_normal<T: Real, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    gain: f64,
    rng: &mut R,
) -> Tensor<T> {
    let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(normal.sample(rng))).collect();
    Tensor::new(shape, data)
        .expect("shape matches generated data")
        .with_grad()
}

pub(crate) fn zeros_param<T: Real>(shape: &[usize]) -> Tensor<T> {
    Tensor::zeros(shape).with_grad()
}

/// Weight count of a temporal standard convolution: `In · Out · K`.
pub const fn standard_conv_weights(c_in: usize, c_out: usize, kernel: usize) -> usize {
    c_in * c_out * kernel
}

/// Weight count of a temporal depthwise separable convolution: `In · K + In · Out`.
pub const fn tdsc_weights(c_in: usize, c_out: usize, kernel: usize) -> usize {
    c_in * kernel + c_in * c_out
}

use serde::Serialize;

use super::model::Model;
use super::spec::{ArchitectureSpec, Family, FIRST_CONV_CHANNELS, LEVEL_CHANNELS};
use crate::error::Result;
use crate::layers::{standard_conv_weights, tdsc_weights, ParamKind, Params, KERNEL};
use crate::tensor::Real;

/// Learnable parameter counts by category, with the 32-bit storage size.
///
/// `conv` covers every convolution weight including depthwise, pointwise and
/// projection shortcuts. Batch-norm running statistics are not learned and
/// are not counted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ParamReport {
    pub embedding: usize,
    pub conv: usize,
    pub batchnorm: usize,
    pub fc: usize,
    pub total: usize,
    pub storage_mb: f64,
}

impl ParamReport {
    pub fn from_counts(embedding: usize, conv: usize, batchnorm: usize, fc: usize) -> Self {
        let total = embedding + conv + batchnorm + fc;
        ParamReport {
            embedding,
            conv,
            batchnorm,
            fc,
            total,
            storage_mb: storage_size(total),
        }
    }

    /// Compares the four integer categories and the total.
    pub fn same_counts(&self, other: &ParamReport) -> bool {
        (self.embedding, self.conv, self.batchnorm, self.fc, self.total)
            == (other.embedding, other.conv, other.batchnorm, other.fc, other.total)
    }
}

/// Counts parameters by walking every learnable tensor of a built model.
pub fn count_params<T: Real>(model: &Model<T>) -> ParamReport {
    ParamReport::from_counts(
        model.param_count(ParamKind::Embedding),
        model.param_count(ParamKind::Conv),
        model.param_count(ParamKind::BatchNorm),
        model.param_count(ParamKind::Fc),
    )
}

/// Standard block `In -> Out`: `In·Out·3 + Out·Out·3`.
pub const fn standard_block_weights(c_in: usize, c_out: usize) -> usize {
    standard_conv_weights(c_in, c_out, KERNEL) + standard_conv_weights(c_out, c_out, KERNEL)
}

/// Depthwise separable block `In -> Out`: `In·3 + In·Out + Out·3 + Out·Out`.
pub const fn tdsc_block_weights(c_in: usize, c_out: usize) -> usize {
    tdsc_weights(c_in, c_out, KERNEL) + tdsc_weights(c_out, c_out, KERNEL)
}

/// Weights (no biases) of the three-layer k-max classifier.
pub const fn kmax_head_weights(k: usize, hidden: usize, n_classes: usize) -> usize {
    LEVEL_CHANNELS[3] * k * hidden + hidden * hidden + hidden * n_classes
}

/// Weights (no biases) of the single layer after average pooling.
pub const fn gap_head_weights(out_len: usize, n_classes: usize) -> usize {
    LEVEL_CHANNELS[3] * out_len * n_classes
}

/// Parameter counts summed from the per-layer formulas, without building
/// any tensors.
pub fn closed_form_params(spec: &ArchitectureSpec) -> Result<ParamReport> {
    spec.validate()?;
    let layout = spec.layout()?;
    let embedding = spec.vocab_size * spec.embed_dim;
    let mut conv = standard_conv_weights(spec.embed_dim, FIRST_CONV_CHANNELS, KERNEL);
    let mut batchnorm = 2 * FIRST_CONV_CHANNELS;
    let mut c_in = FIRST_CONV_CHANNELS;
    for (&c, &layers) in LEVEL_CHANNELS.iter().zip(&layout) {
        for _ in 0..layers / 2 {
            conv += match spec.family {
                Family::Vdcnn => standard_block_weights(c_in, c),
                Family::Svdcnn => tdsc_block_weights(c_in, c),
            };
            if c_in != c {
                conv += c_in * c;
            }
            batchnorm += 2 * 2 * c;
            c_in = c;
        }
    }
    let fc = match spec.family {
        Family::Vdcnn => {
            kmax_head_weights(spec.k, spec.fc_hidden, spec.n_classes) + 2 * spec.fc_hidden + spec.n_classes
        }
        Family::Svdcnn => gap_head_weights(spec.k, spec.n_classes) + spec.n_classes,
    };
    Ok(ParamReport::from_counts(embedding, conv, batchnorm, fc))
}

/// Megabytes (binary) needed to store `params` 32-bit floats.
pub fn storage_size(params: usize) -> f64 {
    params as f64 * 4.0 / (1024.0 * 1024.0)
}

/// Rounds half-up to two decimals.
pub fn round2(x: f64) -> f64 {
    // The small bias absorbs binary representation error at exact halves.
    ((x * 100.0) + 0.5 + 1e-9).floor() / 100.0
}

/// A count in millions, rounded half-up to two decimals.
pub fn millions(n: usize) -> f64 {
    round2(n as f64 / 1e6)
}

/// Percentage saved going from `before` to `after`, to two decimals.
pub fn reduction_percent(before: usize, after: usize) -> f64 {
    round2(100.0 * (1.0 - after as f64 / before as f64))
}

//! Eager tensor operations for callers that do not need gradients.

use crate::error::Result;
use crate::tape::Tape;
use crate::tensor::{Real, Tensor};

pub fn conv1d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    padding: usize,
) -> Result<Tensor<T>> {
    let mut tape = Tape::no_grad();
    let (x, w) = (tape.leaf(input), tape.leaf(weight));
    let b = bias.map(|b| tape.leaf(b));
    let y = tape.conv1d(x, w, b, padding)?;
    Ok(tape.tensor(y))
}

pub fn depthwise_conv1d<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, padding: usize) -> Result<Tensor<T>> {
    let mut tape = Tape::no_grad();
    let (x, w) = (tape.leaf(input), tape.leaf(weight));
    let y = tape.depthwise_conv1d(x, w, padding)?;
    Ok(tape.tensor(y))
}

pub fn affine<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::no_grad();
    let (x, w, b) = (tape.leaf(input), tape.leaf(weight), tape.leaf(bias));
    let y = tape.affine(x, w, b)?;
    Ok(tape.tensor(y))
}

pub fn maxpool_halve<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::no_grad();
    let x = tape.leaf(input);
    let y = tape.maxpool_halve(x)?;
    Ok(tape.tensor(y))
}

pub fn kmax_pool<T: Real>(input: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let mut tape = Tape::no_grad();
    let x = tape.leaf(input);
    let y = tape.kmax_pool(x, k)?;
    Ok(tape.tensor(y))
}

pub fn adaptive_avg_pool<T: Real>(input: &Tensor<T>, out_len: usize) -> Result<Tensor<T>> {
    let mut tape = Tape::no_grad();
    let x = tape.leaf(input);
    let y = tape.adaptive_avg_pool(x, out_len)?;
    Ok(tape.tensor(y))
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let mut tape = Tape::no_grad();
    let x = tape.leaf(input);
    let y = tape.relu(x);
    tape.tensor(y)
}

/// Row-wise softmax of `[B, C]` or `[C]` logits.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let classes = *logits.shape().last().unwrap_or(&1);
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(classes) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            denom += *v;
        }
        for v in row.iter_mut() {
            *v /= denom;
        }
    }
    out
}

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svdcnn::architecture::{ArchitectureSpec, Family, Head, Model};
use svdcnn::gradcheck::grad_check;
use svdcnn::layers::Params;
use svdcnn::{Result, Tape, Tensor, Var};

pub const GRAD_TOL: f64 = 1e-3;
const EPS: f64 = 1e-6;

pub fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values at least 0.05 away from zero, so ReLU kinks are never crossed.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut t = random(shape, seed);
    for v in t.data_mut() {
        *v = v.signum() * (0.05 + v.abs());
    }
    t
}

/// Distinct values, so pooling winners never tie.
fn distinct(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut t = random(shape, seed);
    let n = t.len();
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        *v = *v * 0.01 + (i * 7919 % n) as f64 * 0.1 - 1.0;
    }
    t
}

/// Reduces an op output to a scalar through a fixed random weighting.
fn weighted_sum<'a>(tape: &mut Tape<'a, f64>, y: Var, seed: u64) -> Result<Var> {
    let w = random(tape.shape(y), seed);
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

type Check = (&'static str, Result<f64>);

/// Largest relative gradient error of every differentiable primitive.
pub fn primitive_checks() -> Vec<Check> {
    let x = random(&[2, 3, 6], 1);
    vec![
        (
            "conv1d",
            grad_check(
                |t, v| {
                    let y = t.conv1d(v[0], v[1], Some(v[2]), 1)?;
                    weighted_sum(t, y, 9)
                },
                &[x.clone(), random(&[4, 3, 3], 2), random(&[4], 3)],
                EPS,
            ),
        ),
        (
            "pointwise conv1d",
            grad_check(
                |t, v| {
                    let y = t.conv1d(v[0], v[1], None, 0)?;
                    weighted_sum(t, y, 9)
                },
                &[x.clone(), random(&[5, 3, 1], 4)],
                EPS,
            ),
        ),
        (
            "depthwise conv1d",
            grad_check(
                |t, v| {
                    let y = t.depthwise_conv1d(v[0], v[1], 1)?;
                    weighted_sum(t, y, 9)
                },
                &[x.clone(), random(&[3, 3], 5)],
                EPS,
            ),
        ),
        (
            "affine",
            grad_check(
                |t, v| {
                    let y = t.affine(v[0], v[1], v[2])?;
                    weighted_sum(t, y, 9)
                },
                &[random(&[3, 5], 6), random(&[4, 5], 7), random(&[4], 8)],
                EPS,
            ),
        ),
        (
            "batch norm (train)",
            grad_check(
                |t, v| {
                    let (y, _) = t.batch_norm(v[0], v[1], v[2], 1e-5)?;
                    weighted_sum(t, y, 9)
                },
                &[x.clone(), random(&[3], 10), random(&[3], 11)],
                EPS,
            ),
        ),
        (
            "batch norm (eval)",
            grad_check(
                |t, v| {
                    let y = t.batch_norm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0], 1e-5)?;
                    weighted_sum(t, y, 9)
                },
                &[x.clone(), random(&[3], 12), random(&[3], 13)],
                EPS,
            ),
        ),
        (
            "relu",
            grad_check(
                |t, v| {
                    let y = t.relu(v[0]);
                    weighted_sum(t, y, 9)
                },
                &[away_from_zero(&[2, 3, 6], 14)],
                EPS,
            ),
        ),
        (
            "add",
            grad_check(
                |t, v| {
                    let y = t.add(v[0], v[1])?;
                    weighted_sum(t, y, 9)
                },
                &[x.clone(), random(&[2, 3, 6], 15)],
                EPS,
            ),
        ),
        (
            "max pool",
            grad_check(
                |t, v| {
                    let y = t.maxpool_halve(v[0])?;
                    weighted_sum(t, y, 9)
                },
                &[distinct(&[2, 3, 7], 16)],
                EPS,
            ),
        ),
        (
            "k-max pool",
            grad_check(
                |t, v| {
                    let y = t.kmax_pool(v[0], 3)?;
                    weighted_sum(t, y, 9)
                },
                &[distinct(&[2, 3, 8], 17)],
                EPS,
            ),
        ),
        (
            "adaptive average pool",
            grad_check(
                |t, v| {
                    let y = t.adaptive_avg_pool(v[0], 3)?;
                    weighted_sum(t, y, 9)
                },
                &[random(&[2, 3, 6], 18)],
                EPS,
            ),
        ),
        (
            "embedding",
            grad_check(
                |t, v| {
                    let y = t.embedding(&[1, 4, 4, 0, 2, 3], 2, v[0], None)?;
                    weighted_sum(t, y, 9)
                },
                &[random(&[5, 3], 19)],
                EPS,
            ),
        ),
        (
            "flatten",
            grad_check(
                |t, v| {
                    let y = t.flatten(v[0])?;
                    weighted_sum(t, y, 9)
                },
                std::slice::from_ref(&x),
                EPS,
            ),
        ),
        (
            "cross entropy",
            grad_check(|t, v| t.cross_entropy(v[0], &[2, 0, 1]), &[random(&[3, 4], 20)], EPS),
        ),
    ]
}

/// End-to-end train-mode loss of SVDCNN-9 at sequence length 32. The
/// final length is 4, so the pooled head uses 4 outputs instead of 8.
pub fn end_to_end_check(entries_per_tensor: usize) -> Result<f64> {
    let spec = ArchitectureSpec::new(Family::Svdcnn, 9, 4).with_seq_len(32).with_k(4);
    let mut model = Model::<f64>::build(&spec, 21)?;
    // Random output layer; the built one is all zeros.
    if let Head::AvgPool { fc, .. } = &mut model.head {
        let shape = fc.weight.shape().to_vec();
        fc.weight = random(&shape, 23).with_grad();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let batch = 4;
    let indices: Vec<usize> = (0..batch * 32).map(|_| rng.random_range(1..70)).collect();
    let labels = [0, 1, 2, 3];
    let sizes: Vec<usize> = model.params().iter().map(|(_, t)| t.len()).collect();
    let entries: Vec<(usize, usize)> = sizes
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| (0..entries_per_tensor.min(n)).map(move |_| i).collect::<Vec<_>>())
        .map(|i| (i, rng.random_range(0..sizes[i])))
        .collect();
    model.grad_check(&indices, &labels, EPS, &entries)
}

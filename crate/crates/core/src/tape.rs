//! Reverse-mode differentiation over a linear operation record.
//!
//! A [`Tape`] stores every value produced during a forward pass. Parameter
//! tensors are borrowed, not copied, so a tape lives no longer than the model
//! it reads from. Ops whose inputs cannot reach a `requires_grad` leaf are
//! evaluated but not recorded. [`Tape::backward`] walks the record in reverse
//! exactly once.

use std::borrow::Cow;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvDims, PAD_WINNER};
use crate::tensor::{Real, Tensor};

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Per-channel statistics of one train-mode batch-norm evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (divide-by-n) variance used for normalization.
    pub var: Vec<T>,
    /// Elements per channel.
    pub count: usize,
}

struct Node<'a, T: Clone> {
    shape: Vec<usize>,
    data: Cow<'a, [T]>,
    requires_grad: bool,
    needs_grad: bool,
}

enum OpKind<T> {
    Embedding {
        indices: Vec<usize>,
        dim: usize,
        seq: usize,
        padding_idx: Option<usize>,
    },
    Conv1d(ConvDims),
    Depthwise(ConvDims),
    Affine {
        batch: usize,
        inputs: usize,
        outputs: usize,
    },
    BatchNorm {
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch: usize,
        channels: usize,
        len: usize,
    },
    BatchNormEval {
        mean: Vec<T>,
        inv_std: Vec<T>,
        batch: usize,
        channels: usize,
        len: usize,
    },
    Relu,
    Add,
    Mul,
    Sum,
    MaxPool {
        argmax: Vec<usize>,
    },
    Gather {
        picks: Vec<usize>,
    },
    AvgPool {
        rows: usize,
        len: usize,
        out_len: usize,
    },
    Reshape,
    CrossEntropy {
        probs: Vec<T>,
        labels: Vec<usize>,
        classes: usize,
    },
}

impl<T> OpKind<T> {
    fn name(&self) -> &'static str {
        match self {
            OpKind::Embedding { .. } => "embedding",
            OpKind::Conv1d(_) => "conv1d",
            OpKind::Depthwise(_) => "depthwise_conv1d",
            OpKind::Affine { .. } => "affine",
            OpKind::BatchNorm { .. } => "batch_norm",
            OpKind::BatchNormEval { .. } => "batch_norm_eval",
            OpKind::Relu => "relu",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Sum => "sum",
            OpKind::MaxPool { .. } => "maxpool_halve",
            OpKind::Gather { .. } => "kmax_pool",
            OpKind::AvgPool { .. } => "adaptive_avg_pool",
            OpKind::Reshape => "reshape",
            OpKind::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

struct Op<T> {
    kind: OpKind<T>,
    inputs: Vec<Var>,
    output: Var,
}

pub struct Tape<'a, T: Real = f32> {
    nodes: Vec<Node<'a, T>>,
    ops: Vec<Op<T>>,
    /// Every executed op in order, recorded or not: (name, output).
    executed: Vec<(&'static str, Var)>,
    leaves: HashMap<*const Tensor<T>, Var>,
    grads: Vec<Option<Vec<T>>>,
    recording: bool,
    consumed: bool,
}

impl<'a, T: Real> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            ops: Vec::new(),
            executed: Vec::new(),
            leaves: HashMap::new(),
            grads: Vec::new(),
            recording: true,
            consumed: false,
        }
    }

    /// A tape that evaluates but never records; leaves never require grad.
    pub fn no_grad() -> Self {
        Tape {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of recorded (differentiable) operations.
    pub fn recorded_ops(&self) -> usize {
        self.ops.len()
    }

    /// Registers a borrowed tensor. Registering the same tensor twice
    /// returns the same handle.
    pub fn leaf(&mut self, t: &'a Tensor<T>) -> Var {
        let key = t as *const Tensor<T>;
        if let Some(&v) = self.leaves.get(&key) {
            return v;
        }
        let rg = t.requires_grad && self.recording;
        let v = self.push_node(t.shape().to_vec(), Cow::Borrowed(t.data()), rg);
        self.leaves.insert(key, v);
        v
    }

    /// Moves an owned tensor onto the tape.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let rg = t.requires_grad && self.recording;
        let shape = t.shape().to_vec();
        self.push_node(shape, Cow::Owned(t.into_data()), rg)
    }

    fn push_node(&mut self, shape: Vec<usize>, data: Cow<'a, [T]>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            data,
            requires_grad,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, shape: Vec<usize>, data: Vec<T>, kind: OpKind<T>, inputs: Vec<Var>) -> Var {
        let needs = self.recording && inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let out = self.push_node(shape, Cow::Owned(data), false);
        self.nodes[out.0].needs_grad = needs;
        self.executed.push((kind.name(), out));
        if needs {
            self.ops.push(Op {
                kind,
                inputs,
                output: out,
            });
        }
        out
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.data.to_vec()).expect("tape nodes hold consistent shapes")
    }

    /// Gradient of a `requires_grad` leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Removes and returns the gradient of a registered leaf tensor.
    pub fn take_grad_of(&mut self, t: &Tensor<T>) -> Option<Vec<T>> {
        let v = *self.leaves.get(&(t as *const Tensor<T>))?;
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Index and name of the first executed op whose output is not finite.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.executed
            .iter()
            .enumerate()
            .find(|(_, (_, v))| self.nodes[v.0].data.iter().any(|x| !x.is_finite()))
            .map(|(i, (name, _))| (i, *name))
    }

    /// Splits a feature map into `(batch, channels, len)`; rank 2 means batch 1.
    fn fmap(&self, v: Var, op: &'static str) -> Result<(usize, usize, usize, bool)> {
        match *self.shape(v) {
            [c, l] => Ok((1, c, l, false)),
            [b, c, l] => Ok((b, c, l, true)),
            ref s => Err(Error::shape(op, format!("expected [C, L] or [B, C, L], got {s:?}"))),
        }
    }

    fn fmap_shape(batched: bool, b: usize, c: usize, l: usize) -> Vec<usize> {
        if batched {
            vec![b, c, l]
        } else {
            vec![c, l]
        }
    }

    /// Looks up `indices` (`batch` rows of equal length) in `table: [V, dim]`
    /// and returns channel-major `[batch, dim, seq]`.
    pub fn embedding(
        &mut self,
        indices: &[usize],
        batch: usize,
        table: Var,
        padding_idx: Option<usize>,
    ) -> Result<Var> {
        let (rows, dim) = match *self.shape(table) {
            [r, d] => (r, d),
            ref s => return Err(Error::shape("embedding", format!("table must be [V, f0], got {s:?}"))),
        };
        if batch == 0 || indices.is_empty() || !indices.len().is_multiple_of(batch) {
            return Err(Error::shape(
                "embedding",
                format!("{} indices do not split into {batch} rows", indices.len()),
            ));
        }
        let seq = indices.len() / batch;
        if let Some((position, &index)) = indices.iter().enumerate().find(|(_, &i)| i >= rows) {
            return Err(Error::Lookup { position, index, rows });
        }
        let tab = self.value(table);
        let mut out = vec![T::zero(); batch * dim * seq];
        for n in 0..batch {
            for t in 0..seq {
                let row = &tab[indices[n * seq + t] * dim..][..dim];
                for (c, &v) in row.iter().enumerate() {
                    out[(n * dim + c) * seq + t] = v;
                }
            }
        }
        let kind = OpKind::Embedding {
            indices: indices.to_vec(),
            dim,
            seq,
            padding_idx,
        };
        Ok(self.push_op(vec![batch, dim, seq], out, kind, vec![table]))
    }

    pub fn conv1d(&mut self, x: Var, w: Var, bias: Option<Var>, padding: usize) -> Result<Var> {
        let (b, c_in, len, batched) = self.fmap(x, "conv1d")?;
        let (c_out, w_in, kernel) = match *self.shape(w) {
            [o, i, k] => (o, i, k),
            ref s => {
                return Err(Error::shape(
                    "conv1d",
                    format!("weight must be [out, in, K], got {s:?}"),
                ))
            }
        };
        if w_in != c_in {
            return Err(Error::shape(
                "conv1d",
                format!("input has {c_in} channels but weight expects {w_in}"),
            ));
        }
        check_kernel("conv1d", kernel, len, padding)?;
        if let Some(bv) = bias {
            if self.shape(bv) != [c_out] {
                return Err(Error::shape(
                    "conv1d",
                    format!("bias {:?} does not match {c_out} output channels", self.shape(bv)),
                ));
            }
        }
        let d = ConvDims {
            batch: b,
            c_in,
            c_out,
            len,
            kernel,
            padding,
        };
        let out_len = d.out_len();
        let mut out = vec![T::zero(); b * c_out * out_len];
        kernels::conv1d_forward(d, self.value(x), self.value(w), bias.map(|v| self.value(v)), &mut out);
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.push_op(
            Self::fmap_shape(batched, b, c_out, out_len),
            out,
            OpKind::Conv1d(d),
            inputs,
        ))
    }

    pub fn depthwise_conv1d(&mut self, x: Var, w: Var, padding: usize) -> Result<Var> {
        let (b, c, len, batched) = self.fmap(x, "depthwise_conv1d")?;
        let (wc, kernel) = match *self.shape(w) {
            [wc, k] => (wc, k),
            ref s => {
                return Err(Error::shape(
                    "depthwise_conv1d",
                    format!("weight must be [C, K], got {s:?}"),
                ))
            }
        };
        if wc != c {
            return Err(Error::shape(
                "depthwise_conv1d",
                format!("input has {c} channels but weight has {wc}"),
            ));
        }
        check_kernel("depthwise_conv1d", kernel, len, padding)?;
        let d = ConvDims {
            batch: b,
            c_in: c,
            c_out: c,
            len,
            kernel,
            padding,
        };
        let out_len = d.out_len();
        let mut out = vec![T::zero(); b * c * out_len];
        kernels::depthwise_forward(d, self.value(x), self.value(w), &mut out);
        Ok(self.push_op(
            Self::fmap_shape(batched, b, c, out_len),
            out,
            OpKind::Depthwise(d),
            vec![x, w],
        ))
    }

    /// `w · x + b` for `x: [N]` or `[B, N]`, `w: [M, N]`, `b: [M]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (batch, inputs, batched) = match *self.shape(x) {
            [n] => (1, n, false),
            [bt, n] => (bt, n, true),
            ref s => {
                return Err(Error::shape(
                    "affine",
                    format!("input must be [N] or [B, N], got {s:?}"),
                ))
            }
        };
        let (outputs, w_in) = match *self.shape(w) {
            [m, n] => (m, n),
            ref s => return Err(Error::shape("affine", format!("weight must be [M, N], got {s:?}"))),
        };
        if w_in != inputs {
            return Err(Error::shape(
                "affine",
                format!("input length {inputs} but weight has {w_in} columns"),
            ));
        }
        if self.shape(b) != [outputs] {
            return Err(Error::shape(
                "affine",
                format!("bias {:?} does not match {outputs} outputs", self.shape(b)),
            ));
        }
        let mut out = vec![T::zero(); batch * outputs];
        kernels::affine_forward(
            batch,
            inputs,
            outputs,
            self.value(x),
            self.value(w),
            self.value(b),
            &mut out,
        );
        let shape = if batched { vec![batch, outputs] } else { vec![outputs] };
        let kind = OpKind::Affine { batch, inputs, outputs };
        Ok(self.push_op(shape, out, kind, vec![x, w, b]))
    }

    /// Train-mode batch norm: normalizes each channel over batch and time
    /// with the batch's own statistics, then applies `gamma`, `beta`.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let (b, c, len, batched) = self.fmap(x, "batch_norm")?;
        self.check_channel_param("batch_norm", gamma, c)?;
        self.check_channel_param("batch_norm", beta, c)?;
        let count = b * len;
        if count < 2 {
            return Err(Error::DegenerateStatistics {
                what: "elements per channel",
                count,
            });
        }
        let xs = self.value(x);
        let (g, bt) = (self.value(gamma), self.value(beta));
        let nf = T::of(count as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for n in 0..b {
                s += xs[(n * c + ch) * len..][..len].iter().copied().sum();
            }
            let m = s / nf;
            let mut v = T::zero();
            for n in 0..b {
                for &xv in &xs[(n * c + ch) * len..][..len] {
                    v += (xv - m) * (xv - m);
                }
            }
            mean[ch] = m;
            var[ch] = v / nf;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xs.len()];
        let mut out = vec![T::zero(); xs.len()];
        for n in 0..b {
            for ch in 0..c {
                let off = (n * c + ch) * len;
                for t in off..off + len {
                    let h = (xs[t] - mean[ch]) * inv_std[ch];
                    xhat[t] = h;
                    out[t] = g[ch] * h + bt[ch];
                }
            }
        }
        let kind = OpKind::BatchNorm {
            xhat,
            inv_std,
            batch: b,
            channels: c,
            len,
        };
        let y = self.push_op(Self::fmap_shape(batched, b, c, len), out, kind, vec![x, gamma, beta]);
        Ok((y, BatchStats { mean, var, count }))
    }

    /// Eval-mode batch norm with fixed statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: T) -> Result<Var> {
        let (b, c, len, batched) = self.fmap(x, "batch_norm_eval")?;
        self.check_channel_param("batch_norm_eval", gamma, c)?;
        self.check_channel_param("batch_norm_eval", beta, c)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::shape(
                "batch_norm_eval",
                format!(
                    "running stats have {}/{} entries, input has {c} channels",
                    mean.len(),
                    var.len()
                ),
            ));
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let xs = self.value(x);
        let (g, bt) = (self.value(gamma), self.value(beta));
        let mut out = vec![T::zero(); xs.len()];
        for n in 0..b {
            for ch in 0..c {
                let off = (n * c + ch) * len;
                let scale = g[ch] * inv_std[ch];
                for t in off..off + len {
                    out[t] = (xs[t] - mean[ch]) * scale + bt[ch];
                }
            }
        }
        let kind = OpKind::BatchNormEval {
            mean: mean.to_vec(),
            inv_std,
            batch: b,
            channels: c,
            len,
        };
        Ok(self.push_op(Self::fmap_shape(batched, b, c, len), out, kind, vec![x, gamma, beta]))
    }

    fn check_channel_param(&self, op: &'static str, p: Var, c: usize) -> Result<()> {
        if self.shape(p) != [c] {
            return Err(Error::shape(
                op,
                format!("parameter {:?} does not match {c} channels", self.shape(p)),
            ));
        }
        Ok(())
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v.max(T::zero())).collect();
        self.push_op(self.shape(x).to_vec(), out, OpKind::Relu, vec![x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&p, &q)| p + q).collect();
        Ok(self.push_op(self.shape(a).to_vec(), out, OpKind::Add, vec![a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&p, &q)| p * q).collect();
        Ok(self.push_op(self.shape(a).to_vec(), out, OpKind::Mul, vec![a, b]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        self.push_op(Vec::new(), vec![s], OpKind::Sum, vec![x])
    }

    /// Kernel 3, stride 2, zero padding 1: `L -> ceil(L / 2)`.
    pub fn maxpool_halve(&mut self, x: Var) -> Result<Var> {
        let (b, c, len, batched) = self.fmap(x, "maxpool_halve")?;
        if len < 2 {
            return Err(Error::shape("maxpool_halve", format!("length {len} < 2")));
        }
        let out_len = len.div_ceil(2);
        let mut out = vec![T::zero(); b * c * out_len];
        let mut argmax = vec![0; out.len()];
        kernels::maxpool_halve_forward(b * c, len, self.value(x), &mut out, &mut argmax);
        Ok(self.push_op(
            Self::fmap_shape(batched, b, c, out_len),
            out,
            OpKind::MaxPool { argmax },
            vec![x],
        ))
    }

    /// Keeps the `k` largest values of every channel in temporal order.
    pub fn kmax_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let (b, c, len, batched) = self.fmap(x, "kmax_pool")?;
        if k == 0 || k > len {
            return Err(Error::arg(format!("k-max pooling needs 1 <= k <= {len}, got k = {k}")));
        }
        let xs = self.value(x);
        let mut picks = Vec::with_capacity(b * c * k);
        for r in 0..b * c {
            let row = &xs[r * len..(r + 1) * len];
            picks.extend(kernels::kmax_indices(row, k).into_iter().map(|i| r * len + i));
        }
        let out = picks.iter().map(|&i| xs[i]).collect();
        Ok(self.push_op(
            Self::fmap_shape(batched, b, c, k),
            out,
            OpKind::Gather { picks },
            vec![x],
        ))
    }

    /// Averages contiguous, equal, non-overlapping bins down to `out_len`.
    pub fn adaptive_avg_pool(&mut self, x: Var, out_len: usize) -> Result<Var> {
        let (b, c, len, batched) = self.fmap(x, "adaptive_avg_pool")?;
        if out_len == 0 || len % out_len != 0 {
            return Err(Error::arg(format!(
                "adaptive average pooling needs the length {len} to be divisible by {out_len}"
            )));
        }
        let mut out = vec![T::zero(); b * c * out_len];
        kernels::adaptive_avg_forward(b * c, len, out_len, self.value(x), &mut out);
        let kind = OpKind::AvgPool {
            rows: b * c,
            len,
            out_len,
        };
        Ok(self.push_op(Self::fmap_shape(batched, b, c, out_len), out, kind, vec![x]))
    }

    /// `[B, C, L] -> [B, C·L]`, `[C, L] -> [C·L]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let (b, c, len, batched) = self.fmap(x, "flatten")?;
        let shape = if batched { vec![b, c * len] } else { vec![c * len] };
        let data = self.value(x).to_vec();
        Ok(self.push_op(shape, data, OpKind::Reshape, vec![x]))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (batch, classes) = match *self.shape(logits) {
            [c] => (1, c),
            [b, c] => (b, c),
            ref s => {
                return Err(Error::shape(
                    "cross_entropy",
                    format!("logits must be [C] or [B, C], got {s:?}"),
                ))
            }
        };
        if labels.len() != batch {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} labels for a batch of {batch}", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::arg(format!("label {bad} outside [0, {classes})")));
        }
        let z = self.value(logits);
        let mut probs = vec![T::zero(); z.len()];
        let mut loss = T::zero();
        for n in 0..batch {
            let row = &z[n * classes..(n + 1) * classes];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut denom = T::zero();
            for (p, &v) in probs[n * classes..].iter_mut().zip(row) {
                *p = (v - m).exp();
                denom += *p;
            }
            for p in &mut probs[n * classes..(n + 1) * classes] {
                *p /= denom;
            }
            loss += denom.ln() + m - row[labels[n]];
        }
        loss /= T::of(batch as f64);
        let kind = OpKind::CrossEntropy {
            probs,
            labels: labels.to_vec(),
            classes,
        };
        Ok(self.push_op(Vec::new(), vec![loss], kind, vec![logits]))
    }

    /// Populates gradients of every `requires_grad` leaf reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::State("backward already ran on this tape".into()));
        }
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        if self.ops.is_empty() && !self.nodes[loss.0].requires_grad {
            return Err(Error::Contract(
                "nothing recorded: no op depends on a requires_grad tensor".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for op in self.ops.iter().rev() {
            let Some(gy) = grads[op.output.0].take() else {
                continue;
            };
            self.backward_op(op, &gy, &mut grads);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[i] = None;
            }
        }
        self.grads = grads;
        self.consumed = true;
        Ok(())
    }

    fn backward_op(&self, op: &Op<T>, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| -> &[T] { &nodes[v.0].data };
        let mut take = |v: Var| -> Option<Vec<T>> {
            if !nodes[v.0].needs_grad {
                return None;
            }
            Some(
                grads[v.0]
                    .take()
                    .unwrap_or_else(|| vec![T::zero(); nodes[v.0].data.len()]),
            )
        };
        let ins = &op.inputs;
        let mut taken: Vec<Option<Vec<T>>> = ins.iter().map(|&v| take(v)).collect();

        match &op.kind {
            OpKind::Embedding {
                indices,
                dim,
                seq,
                padding_idx,
            } => {
                if let Some(dt) = taken[0].as_mut() {
                    for (pos, &idx) in indices.iter().enumerate() {
                        if Some(idx) == *padding_idx {
                            continue;
                        }
                        let (n, t) = (pos / seq, pos % seq);
                        for c in 0..*dim {
                            dt[idx * dim + c] += gy[(n * dim + c) * seq + t];
                        }
                    }
                }
            }
            OpKind::Conv1d(d) => {
                let (head, tail) = taken.split_at_mut(1);
                let (wslot, bslot) = tail.split_at_mut(1);
                kernels::conv1d_backward(
                    *d,
                    val(ins[0]),
                    val(ins[1]),
                    gy,
                    head[0].as_deref_mut(),
                    wslot[0].as_deref_mut(),
                    bslot.first_mut().and_then(|b| b.as_deref_mut()),
                );
            }
            OpKind::Depthwise(d) => {
                let (head, tail) = taken.split_at_mut(1);
                kernels::depthwise_backward(
                    *d,
                    val(ins[0]),
                    val(ins[1]),
                    gy,
                    head[0].as_deref_mut(),
                    tail[0].as_deref_mut(),
                );
            }
            OpKind::Affine { batch, inputs, outputs } => {
                let [dx, dw, db] = &mut taken[..] else {
                    unreachable!("affine has three inputs")
                };
                kernels::affine_backward(
                    *batch,
                    *inputs,
                    *outputs,
                    val(ins[0]),
                    val(ins[1]),
                    gy,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
            }
            OpKind::BatchNorm {
                xhat,
                inv_std,
                batch,
                channels,
                len,
            } => {
                let g = val(ins[1]);
                let nf = T::of((batch * len) as f64);
                let [dx, dg, dbeta] = &mut taken[..] else {
                    unreachable!("batch norm has three inputs")
                };
                for ch in 0..*channels {
                    let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
                    for n in 0..*batch {
                        let off = (n * channels + ch) * len;
                        for t in off..off + len {
                            sum_dy += gy[t];
                            sum_dy_xhat += gy[t] * xhat[t];
                        }
                    }
                    if let Some(dg) = dg.as_mut() {
                        dg[ch] += sum_dy_xhat;
                    }
                    if let Some(db) = dbeta.as_mut() {
                        db[ch] += sum_dy;
                    }
                    if let Some(dx) = dx.as_mut() {
                        let scale = g[ch] * inv_std[ch] / nf;
                        for n in 0..*batch {
                            let off = (n * channels + ch) * len;
                            for t in off..off + len {
                                dx[t] += scale * (nf * gy[t] - sum_dy - xhat[t] * sum_dy_xhat);
                            }
                        }
                    }
                }
            }
            OpKind::BatchNormEval {
                mean,
                inv_std,
                batch,
                channels,
                len,
            } => {
                let x = val(ins[0]);
                let g = val(ins[1]);
                let [dx, dg, dbeta] = &mut taken[..] else {
                    unreachable!("batch norm has three inputs")
                };
                for n in 0..*batch {
                    for ch in 0..*channels {
                        let off = (n * channels + ch) * len;
                        for t in off..off + len {
                            if let Some(dg) = dg.as_mut() {
                                dg[ch] += gy[t] * (x[t] - mean[ch]) * inv_std[ch];
                            }
                            if let Some(db) = dbeta.as_mut() {
                                db[ch] += gy[t];
                            }
                            if let Some(dx) = dx.as_mut() {
                                dx[t] += gy[t] * g[ch] * inv_std[ch];
                            }
                        }
                    }
                }
            }
            OpKind::Relu => {
                if let Some(dx) = taken[0].as_mut() {
                    for ((d, &x), &g) in dx.iter_mut().zip(val(ins[0])).zip(gy) {
                        if x > T::zero() {
                            *d += g;
                        }
                    }
                }
            }
            OpKind::Add => {
                for slot in taken.iter_mut().flatten() {
                    for (d, &g) in slot.iter_mut().zip(gy) {
                        *d += g;
                    }
                }
            }
            OpKind::Mul => {
                let (a, b) = (val(ins[0]), val(ins[1]));
                if let Some(da) = taken[0].as_mut() {
                    for ((d, &g), &q) in da.iter_mut().zip(gy).zip(b) {
                        *d += g * q;
                    }
                }
                if let Some(db) = taken[1].as_mut() {
                    for ((d, &g), &p) in db.iter_mut().zip(gy).zip(a) {
                        *d += g * p;
                    }
                }
            }
            OpKind::Sum => {
                if let Some(dx) = taken[0].as_mut() {
                    for d in dx.iter_mut() {
                        *d += gy[0];
                    }
                }
            }
            OpKind::MaxPool { argmax } => {
                if let Some(dx) = taken[0].as_mut() {
                    for (&i, &g) in argmax.iter().zip(gy) {
                        if i != PAD_WINNER {
                            dx[i] += g;
                        }
                    }
                }
            }
            OpKind::Gather { picks } => {
                if let Some(dx) = taken[0].as_mut() {
                    for (&i, &g) in picks.iter().zip(gy) {
                        dx[i] += g;
                    }
                }
            }
            OpKind::AvgPool { rows, len, out_len } => {
                if let Some(dx) = taken[0].as_mut() {
                    let bin = len / out_len;
                    let scale = T::one() / T::of(bin as f64);
                    for r in 0..*rows {
                        for j in 0..*out_len {
                            let g = gy[r * out_len + j] * scale;
                            for d in &mut dx[r * len + j * bin..r * len + (j + 1) * bin] {
                                *d += g;
                            }
                        }
                    }
                }
            }
            OpKind::Reshape => {
                if let Some(dx) = taken[0].as_mut() {
                    for (d, &g) in dx.iter_mut().zip(gy) {
                        *d += g;
                    }
                }
            }
            OpKind::CrossEntropy { probs, labels, classes } => {
                if let Some(dz) = taken[0].as_mut() {
                    let scale = gy[0] / T::of(labels.len() as f64);
                    for (n, &label) in labels.iter().enumerate() {
                        for c in 0..*classes {
                            let onehot = if c == label { T::one() } else { T::zero() };
                            dz[n * classes + c] += scale * (probs[n * classes + c] - onehot);
                        }
                    }
                }
            }
        }

        for (&v, slot) in ins.iter().zip(taken) {
            let Some(buf) = slot else { continue };
            match grads[v.0].as_mut() {
                // same var used twice by this op: merge the two partials
                Some(existing) => {
                    for (e, b) in existing.iter_mut().zip(&buf) {
                        *e += *b;
                    }
                }
                None => grads[v.0] = Some(buf),
            }
        }
    }
}

fn check_kernel(op: &'static str, kernel: usize, len: usize, padding: usize) -> Result<()> {
    if kernel.is_multiple_of(2) {
        return Err(Error::arg(format!("{op}: kernel size {kernel} must be odd")));
    }
    if len + 2 * padding < kernel {
        return Err(Error::shape(
            op,
            format!("padded length {} shorter than kernel {kernel}", len + 2 * padding),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_all_ones() {
        let x = Tensor::<f64>::from_rows(&[&[1.0, -2.0, 3.0], &[0.5, 0.0, 9.0]])
            .unwrap()
            .with_grad();
        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        let s = tape.sum(v);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(v).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn squared_sum_gradient() {
        let x = Tensor::<f64>::new(&[2], vec![1.0, 2.0]).unwrap().with_grad();
        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        let sq = tape.mul(v, v).unwrap();
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(v).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_is_a_contract_violation() {
        let x = Tensor::<f32>::new(&[2], vec![1.0, 2.0]).unwrap().with_grad();
        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        let r = tape.relu(v);
        assert!(matches!(tape.backward(r), Err(Error::Contract(_))));
    }

    #[test]
    fn second_backward_is_a_state_error() {
        let x = Tensor::<f32>::new(&[2], vec![1.0, 2.0]).unwrap().with_grad();
        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        let s = tape.sum(v);
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::State(_))));
    }

    #[test]
    fn unreachable_leaves_keep_no_grad() {
        let x = Tensor::<f64>::new(&[2], vec![1.0, 2.0]).unwrap().with_grad();
        let y = Tensor::<f64>::new(&[2], vec![3.0, 4.0]).unwrap().with_grad();
        let mut tape = Tape::new();
        let vx = tape.leaf(&x);
        let vy = tape.leaf(&y);
        let _unused = tape.relu(vy);
        let s = tape.sum(vx);
        tape.backward(s).unwrap();
        assert!(tape.grad(vx).is_some());
        assert!(tape.grad(vy).is_none());
    }

    #[test]
    fn no_grad_tape_records_nothing() {
        let x = Tensor::<f32>::new(&[3], vec![1.0, -2.0, 3.0]).unwrap().with_grad();
        let mut tape = Tape::no_grad();
        let v = tape.leaf(&x);
        let r = tape.relu(v);
        let s = tape.sum(r);
        assert_eq!(tape.value(s), &[4.0]);
        assert_eq!(tape.recorded_ops(), 0);
        assert!(tape.backward(s).is_err());
    }

    #[test]
    fn leaf_registration_is_deduplicated() {
        let x = Tensor::<f32>::new(&[1], vec![1.0]).unwrap();
        let mut tape = Tape::new();
        assert_eq!(tape.leaf(&x), tape.leaf(&x));
    }

    #[test]
    fn reports_first_non_finite_op() {
        let x = Tensor::<f32>::new(&[2], vec![f32::MAX, f32::MAX]).unwrap();
        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        let r = tape.relu(v);
        let _s = tape.sum(r);
        assert_eq!(tape.first_non_finite(), Some((1, "sum")));
    }

    #[test]
    fn shape_errors_name_both_extents() {
        let x = Tensor::<f32>::zeros(&[3, 5]);
        let w = Tensor::<f32>::zeros(&[2, 4, 3]);
        let mut tape = Tape::no_grad();
        let (vx, vw) = (tape.leaf(&x), tape.leaf(&w));
        let err = tape.conv1d(vx, vw, None, 1).unwrap_err().to_string();
        assert!(err.contains('3') && err.contains('4'), "{err}");
    }
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::spec::{ArchitectureSpec, Family, FIRST_CONV_CHANNELS, LEVEL_CHANNELS};
use crate::error::{Error, Result};
use crate::layers::{
    BatchNormState, BlockVariant, ConvBlock, EmbeddingTable, Linear, Mode, ParamKind, Params, Pass, TemporalConvLayer,
};
use crate::tape::{BatchStats, Tape, Var};
use crate::tensor::{Real, Tensor};

/// Blocks sharing one feature-map width. Every level after the first is
/// entered through a halving max-pool.
#[derive(Clone, Debug)]
pub struct Level<T: Real = f32> {
    pub channels: usize,
    pub blocks: Vec<ConvBlock<T>>,
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Head<T: Real = f32> {
    /// k-max pooling, flatten, FC-ReLU-FC-ReLU-FC.
    KMax { k: usize, fc: [Linear<T>; 3] },
    /// Adaptive average pooling to `out_len`, flatten, one FC.
    AvgPool { out_len: usize, fc: Linear<T> },
}

/// Feature-map shape recorded at a named point of the forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageShape {
    pub stage: String,
    pub channels: usize,
    pub len: usize,
}

/// Loss, per-parameter gradients and train-mode batch statistics.
type LossGrads<T> = (T, Vec<Vec<T>>, Vec<BatchStats<T>>);

/// Result of a forward pass on a tape.
pub struct Forward<T: Real> {
    pub logits: Var,
    /// Train-mode batch statistics in [`Model::batch_norms_mut`] order.
    pub stats: Vec<BatchStats<T>>,
    pub trace: Vec<StageShape>,
}

#[derive(Clone, Debug)]
pub struct Model<T: Real = f32> {
    pub spec: ArchitectureSpec,
    pub embedding: EmbeddingTable<T>,
    pub first: TemporalConvLayer<T>,
    pub levels: Vec<Level<T>>,
    pub head: Head<T>,
}

impl<T: Real> Model<T> {
    /// Builds a freshly initialized network. Equal seeds give equal weights.
    pub fn build(spec: &ArchitectureSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = spec.layout()?;
        let variant = match spec.family {
            Family::Vdcnn => BlockVariant::Standard,
            Family::Svdcnn => BlockVariant::Tdsc,
        };
        let embedding = EmbeddingTable::new(spec.vocab_size, spec.embed_dim, &mut rng);
        let first = TemporalConvLayer::new(spec.embed_dim, FIRST_CONV_CHANNELS, &mut rng);
        let mut levels = Vec::with_capacity(4);
        let mut c_in = FIRST_CONV_CHANNELS;
        for (&channels, &layers) in LEVEL_CHANNELS.iter().zip(&layout) {
            let blocks = (0..layers / 2)
                .map(|_| {
                    let b = ConvBlock::new(variant, c_in, channels, &mut rng);
                    c_in = channels;
                    b
                })
                .collect();
            levels.push(Level { channels, blocks });
        }
        let head = match spec.family {
            Family::Vdcnn => Head::KMax {
                k: spec.k,
                fc: [
                    Linear::new(spec.head_inputs(), spec.fc_hidden, &mut rng),
                    Linear::new(spec.fc_hidden, spec.fc_hidden, &mut rng),
                    Linear::zeros(spec.fc_hidden, spec.n_classes),
                ],
            },
            Family::Svdcnn => Head::AvgPool {
                out_len: spec.k,
                fc: Linear::zeros(spec.head_inputs(), spec.n_classes),
            },
        };
        Ok(Model {
            spec: spec.clone(),
            embedding,
            first,
            levels,
            head,
        })
    }

    /// Convolutional depth: the first convolution plus two layers per block.
    /// A depthwise/pointwise pair counts once.
    pub fn conv_depth(&self) -> usize {
        1 + self.blocks().count() * 2
    }

    pub fn blocks(&self) -> impl Iterator<Item = &ConvBlock<T>> {
        self.levels.iter().flat_map(|l| &l.blocks)
    }

    /// Runs the network on `batch` rows of `seq_len` character indices.
    pub fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a, T>,
        indices: &[usize],
        batch: usize,
        mode: Mode,
    ) -> Result<Forward<T>> {
        if batch == 0 || indices.len() != batch * self.spec.seq_len {
            return Err(Error::shape(
                "forward",
                format!(
                    "{} indices for a batch of {batch} x {} characters",
                    indices.len(),
                    self.spec.seq_len
                ),
            ));
        }
        if mode == Mode::Train && batch < 2 {
            return Err(Error::DegenerateStatistics {
                what: "samples per train-mode batch",
                count: batch,
            });
        }
        let mut pass = Pass::new(tape, mode);
        let mut trace = Vec::new();
        let record = |pass: &Pass<'_, 'a, T>, trace: &mut Vec<StageShape>, stage: String, v: Var| {
            let s = pass.tape.shape(v);
            trace.push(StageShape {
                stage,
                channels: s[1],
                len: s[2],
            });
        };

        let mut x = self.embedding.forward(&mut pass, indices, batch)?;
        record(&pass, &mut trace, "embedding".into(), x);
        x = self.first.forward(&mut pass, x)?;
        record(&pass, &mut trace, "first_conv".into(), x);
        for (i, level) in self.levels.iter().enumerate() {
            if i > 0 {
                x = pass.tape.maxpool_halve(x)?;
                record(&pass, &mut trace, format!("pool_{}", level.channels), x);
            }
            for block in &level.blocks {
                x = block.forward(&mut pass, x)?;
            }
            record(&pass, &mut trace, format!("level_{}", level.channels), x);
        }
        let logits = match &self.head {
            Head::KMax { k, fc } => {
                let mut h = pass.tape.kmax_pool(x, *k)?;
                record(&pass, &mut trace, "kmax".into(), h);
                h = pass.tape.flatten(h)?;
                h = fc[0].forward(&mut pass, h)?;
                h = pass.tape.relu(h);
                h = fc[1].forward(&mut pass, h)?;
                h = pass.tape.relu(h);
                fc[2].forward(&mut pass, h)?
            }
            Head::AvgPool { out_len, fc } => {
                let h = pass.tape.adaptive_avg_pool(x, *out_len)?;
                record(&pass, &mut trace, "avg_pool".into(), h);
                let h = pass.tape.flatten(h)?;
                fc.forward(&mut pass, h)?
            }
        };
        Ok(Forward {
            logits,
            stats: pass.stats,
            trace,
        })
    }

    /// Eval-mode logits `[batch, n_classes]` without recording anything.
    pub fn predict(&self, indices: &[usize], batch: usize) -> Result<Tensor<T>> {
        let mut tape = Tape::no_grad();
        let out = self.forward(&mut tape, indices, batch, Mode::Eval)?;
        Ok(tape.tensor(out.logits))
    }

    /// Shapes at every stage boundary for one eval-mode sample.
    pub fn trace_shapes(&self, indices: &[usize]) -> Result<Vec<StageShape>> {
        let mut tape = Tape::no_grad();
        Ok(self.forward(&mut tape, indices, 1, Mode::Eval)?.trace)
    }

    /// Mean cross-entropy of a train-mode pass. Leaves every parameter's
    /// `grad` set and folds the batch statistics into the running averages.
    pub fn forward_backward(&mut self, indices: &[usize], labels: &[usize]) -> Result<T> {
        let (loss, grads, stats) = self.loss_grads(indices, labels)?;
        for ((_, p), g) in self.params_mut().into_iter().zip(grads) {
            p.grad = Some(g);
        }
        self.apply_batch_stats(&stats)?;
        Ok(loss)
    }

    fn loss_grads(&self, indices: &[usize], labels: &[usize]) -> Result<LossGrads<T>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, indices, labels.len(), Mode::Train)?;
        let loss = tape.cross_entropy(out.logits, labels)?;
        let value = tape.value(loss)[0];
        tape.backward(loss)?;
        let grads = self
            .params()
            .into_iter()
            .map(|(_, p)| tape.take_grad_of(p).unwrap_or_else(|| vec![T::zero(); p.len()]))
            .collect();
        Ok((value, grads, out.stats))
    }

    /// Train-mode loss without gradients or running-statistic updates.
    pub fn train_loss(&self, indices: &[usize], labels: &[usize]) -> Result<T> {
        let mut tape = Tape::no_grad();
        let out = self.forward(&mut tape, indices, labels.len(), Mode::Train)?;
        let loss = tape.cross_entropy(out.logits, labels)?;
        Ok(tape.value(loss)[0])
    }

    pub fn apply_batch_stats(&mut self, stats: &[BatchStats<T>]) -> Result<()> {
        let mut bns = self.batch_norms_mut();
        if bns.len() != stats.len() {
            return Err(Error::State(format!(
                "{} batch statistics for {} batch-norm layers",
                stats.len(),
                bns.len()
            )));
        }
        for (bn, s) in bns.iter_mut().zip(stats) {
            bn.update_running(s)?;
        }
        Ok(())
    }

    /// Batch-norm layers in forward order.
    pub fn batch_norms(&self) -> Vec<&BatchNormState<T>> {
        let mut v = vec![&self.first.bn];
        for b in self.blocks() {
            v.push(b.conv1.bn());
            v.push(b.conv2.bn());
        }
        v
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNormState<T>> {
        let mut v = vec![&mut self.first.bn];
        for b in self.levels.iter_mut().flat_map(|l| &mut l.blocks) {
            let ConvBlock { conv1, conv2, .. } = b;
            v.push(conv1.bn_mut());
            v.push(conv2.bn_mut());
        }
        v
    }

    /// Non-learned state: running mean and variance of every batch norm.
    pub fn buffers(&self) -> Vec<&Tensor<T>> {
        self.batch_norms()
            .into_iter()
            .flat_map(|bn| [&bn.running_mean, &bn.running_var])
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.batch_norms_mut()
            .into_iter()
            .flat_map(|bn| [&mut bn.running_mean, &mut bn.running_var])
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Largest relative error between backpropagated parameter gradients of
    /// the train-mode cross-entropy and central differences, over the given
    /// `(parameter index, flat index)` entries.
    pub fn grad_check(
        &mut self,
        indices: &[usize],
        labels: &[usize],
        eps: f64,
        entries: &[(usize, usize)],
    ) -> Result<f64> {
        let (_, grads, _) = self.loss_grads(indices, labels)?;
        let mut worst = 0.0f64;
        for &(pi, j) in entries {
            let orig = {
                let mut ps = self.params_mut();
                let p = &mut ps
                    .get_mut(pi)
                    .ok_or_else(|| Error::arg(format!("no parameter #{pi}")))?
                    .1;
                let orig = *p
                    .data()
                    .get(j)
                    .ok_or_else(|| Error::arg(format!("parameter #{pi} has no entry {j}")))?;
                p.data_mut()[j] = T::of(orig.f64() + eps);
                orig
            };
            let plus = self.train_loss(indices, labels)?.f64();
            self.params_mut()[pi].1.data_mut()[j] = T::of(orig.f64() - eps);
            let minus = self.train_loss(indices, labels)?.f64();
            self.params_mut()[pi].1.data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(crate::gradcheck::relative_error(grads[pi][j].f64(), numeric));
        }
        Ok(worst)
    }
}

impl<T: Real> Params<T> for Model<T> {
    fn params(&self) -> Vec<(ParamKind, &Tensor<T>)> {
        let mut p = self.embedding.params();
        p.extend(self.first.params());
        for b in self.blocks() {
            p.extend(b.params());
        }
        match &self.head {
            Head::KMax { fc, .. } => fc.iter().for_each(|l| p.extend(l.params())),
            Head::AvgPool { fc, .. } => p.extend(fc.params()),
        }
        p
    }

    fn params_mut(&mut self) -> Vec<(ParamKind, &mut Tensor<T>)> {
        let mut p = self.embedding.params_mut();
        p.extend(self.first.params_mut());
        for b in self.levels.iter_mut().flat_map(|l| &mut l.blocks) {
            p.extend(b.params_mut());
        }
        match &mut self.head {
            Head::KMax { fc, .. } => fc.iter_mut().for_each(|l| p.extend(l.params_mut())),
            Head::AvgPool { fc, .. } => p.extend(fc.params_mut()),
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(family: Family, depth: usize, s: usize) -> ArchitectureSpec {
        ArchitectureSpec::new(family, depth, 4).with_seq_len(s)
    }

    #[test]
    fn svdcnn9_shape_trace() {
        let m = Model::<f32>::build(&spec(Family::Svdcnn, 9, 1024), 0).unwrap();
        let trace = m.trace_shapes(&vec![3; 1024]).unwrap();
        let find = |name: &str| trace.iter().find(|s| s.stage == name).unwrap().clone();
        assert_eq!((find("embedding").channels, find("embedding").len), (16, 1024));
        assert_eq!((find("level_512").channels, find("level_512").len), (512, 128));
        assert_eq!((find("avg_pool").channels, find("avg_pool").len), (512, 8));
    }

    #[test]
    fn depth_matches_spec() {
        for family in [Family::Vdcnn, Family::Svdcnn] {
            for depth in [9, 17, 29] {
                let m = Model::<f32>::build(&spec(family, depth, 64), 0).unwrap();
                assert_eq!(m.conv_depth(), depth);
                let tdsc = m.blocks().all(|b| b.conv1.is_tdsc() && b.conv2.is_tdsc());
                assert_eq!(tdsc, family == Family::Svdcnn);
            }
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let s = spec(Family::Svdcnn, 9, 64);
        let a = Model::<f32>::build(&s, 11).unwrap();
        let b = Model::<f32>::build(&s, 11).unwrap();
        let c = Model::<f32>::build(&s, 12).unwrap();
        let data = |m: &Model<f32>| {
            m.params()
                .iter()
                .flat_map(|(_, t)| t.data().to_vec())
                .collect::<Vec<_>>()
        };
        assert_eq!(data(&a), data(&b));
        assert_ne!(data(&a), data(&c));
    }

    #[test]
    fn forward_output_shape_and_determinism() {
        let m = Model::<f32>::build(&spec(Family::Svdcnn, 9, 64), 5).unwrap();
        let idx: Vec<usize> = (0..64 * 3).map(|i| i % 70).collect();
        let a = m.predict(&idx, 3).unwrap();
        let b = m.predict(&idx, 3).unwrap();
        assert_eq!(a.shape(), &[3, 4]);
        assert!(a.all_finite());
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn vdcnn_forward_runs() {
        let s = spec(Family::Vdcnn, 9, 64).with_k(8);
        let mut s = s;
        s.fc_hidden = 32;
        let m = Model::<f32>::build(&s, 5).unwrap();
        let out = m.predict(&vec![1; 64 * 2], 2).unwrap();
        assert_eq!(out.shape(), &[2, 4]);
        assert!(out.all_finite());
    }

    #[test]
    fn train_mode_single_sample_is_degenerate() {
        let m = Model::<f32>::build(&spec(Family::Svdcnn, 9, 64), 5).unwrap();
        let mut tape = Tape::no_grad();
        assert!(matches!(
            m.forward(&mut tape, &[1; 64], 1, Mode::Train),
            Err(Error::DegenerateStatistics { count: 1, .. })
        ));
        let mut tape = Tape::no_grad();
        assert!(m.forward(&mut tape, &[1; 64], 1, Mode::Eval).is_ok());
    }

    #[test]
    fn out_of_range_character_is_a_lookup_error() {
        let m = Model::<f32>::build(&spec(Family::Svdcnn, 9, 64), 5).unwrap();
        let mut idx = vec![1; 64];
        idx[10] = 500;
        assert!(matches!(m.predict(&idx, 1), Err(Error::Lookup { position: 10, .. })));
    }

    #[test]
    fn forward_backward_sets_every_grad() {
        let mut m = Model::<f32>::build(&spec(Family::Svdcnn, 9, 64), 5).unwrap();
        let idx: Vec<usize> = (0..128).map(|i| 1 + i % 60).collect();
        let before = m.buffers()[0].data().to_vec();
        let loss = m.forward_backward(&idx, &[0, 3]).unwrap();
        assert!(loss.is_finite());
        assert!(m
            .params()
            .iter()
            .all(|(_, p)| p.grad.as_ref().is_some_and(|g| g.len() == p.len())));
        assert_ne!(m.buffers()[0].data(), &before[..]);
    }
}

use rand::Rng;

use super::{kaiming, BatchNormState, ParamKind, Params, Pass, KERNEL, PADDING};
use crate::error::Result;
use crate::tape::Var;
use crate::tensor::{Real, Tensor};

/// Kernel-3 temporal convolution, then batch norm and ReLU.
#[derive(Clone, Debug)]
pub struct TemporalConvLayer<T: Real = f32> {
    /// `[out, in, 3]`, no bias.
    pub weight: Tensor<T>,
    pub bn: BatchNormState<T>,
}

impl<T: Real> TemporalConvLayer<T> {
    pub fn new<R: Rng + ?Sized>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        TemporalConvLayer {
            weight: kaiming(&[c_out, c_in, KERNEL], c_in * KERNEL, rng),
            bn: BatchNormState::new(c_out),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn weight_count(&self) -> usize {
        self.weight.len()
    }

    pub fn forward<'a>(&'a self, pass: &mut Pass<'_, 'a, T>, x: Var) -> Result<Var> {
        let w = pass.tape.leaf(&self.weight);
        let h = pass.tape.conv1d(x, w, None, PADDING)?;
        let h = self.bn.forward(pass, h)?;
        Ok(pass.tape.relu(h))
    }
}

impl<T: Real> Params<T> for TemporalConvLayer<T> {
    fn params(&self) -> Vec<(ParamKind, &Tensor<T>)> {
        let mut p = vec![(ParamKind::Conv, &self.weight)];
        p.extend(self.bn.params());
        p
    }

    fn params_mut(&mut self) -> Vec<(ParamKind, &mut Tensor<T>)> {
        let mut p = vec![(ParamKind::Conv, &mut self.weight)];
        p.extend(self.bn.params_mut());
        p
    }
}

/// Temporal depthwise separable convolution: a per-channel kernel-3 filter,
/// a 1x1 pointwise mix, then one batch norm and ReLU. Counts as a single
/// layer towards network depth.
#[derive(Clone, Debug)]
pub struct TdscLayer<T: Real = f32> {
    /// `[in, 3]`
    pub depthwise: Tensor<T>,
    /// `[out, in, 1]`
    pub pointwise: Tensor<T>,
    pub bn: BatchNormState<T>,
}

impl<T: Real> TdscLayer<T> {
    pub fn new<R: Rng + ?Sized>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        TdscLayer {
            depthwise: kaiming(&[c_in, KERNEL], KERNEL, rng),
            pointwise: kaiming(&[c_out, c_in, 1], c_in, rng),
            bn: BatchNormState::new(c_out),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.pointwise.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.pointwise.shape()[0]
    }

    pub fn weight_count(&self) -> usize {
        self.depthwise.len() + self.pointwise.len()
    }

    pub fn forward<'a>(&'a self, pass: &mut Pass<'_, 'a, T>, x: Var) -> Result<Var> {
        let dw = pass.tape.leaf(&self.depthwise);
        let pw = pass.tape.leaf(&self.pointwise);
        let h = pass.tape.depthwise_conv1d(x, dw, PADDING)?;
        let h = pass.tape.conv1d(h, pw, None, 0)?;
        let h = self.bn.forward(pass, h)?;
        Ok(pass.tape.relu(h))
    }
}

impl<T: Real> Params<T> for TdscLayer<T> {
    fn params(&self) -> Vec<(ParamKind, &Tensor<T>)> {
        let mut p = vec![(ParamKind::Conv, &self.depthwise), (ParamKind::Conv, &self.pointwise)];
        p.extend(self.bn.params());
        p
    }

    fn params_mut(&mut self) -> Vec<(ParamKind, &mut Tensor<T>)> {
        let mut p = vec![
            (ParamKind::Conv, &mut self.depthwise),
            (ParamKind::Conv, &mut self.pointwise),
        ];
        p.extend(self.bn.params_mut());
        p
    }
}

/// One convolutional layer of a block, in either variant.
#[derive(Clone, Debug)]
pub enum BlockLayer<T: Real = f32> {
    Standard(TemporalConvLayer<T>),
    Tdsc(TdscLayer<T>),
}

impl<T: Real> BlockLayer<T> {
    pub fn is_tdsc(&self) -> bool {
        matches!(self, BlockLayer::Tdsc(_))
    }

    pub fn forward<'a>(&'a self, pass: &mut Pass<'_, 'a, T>, x: Var) -> Result<Var> {
        match self {
            BlockLayer::Standard(l) => l.forward(pass, x),
            BlockLayer::Tdsc(l) => l.forward(pass, x),
        }
    }

    pub fn weight_count(&self) -> usize {
        match self {
            BlockLayer::Standard(l) => l.weight_count(),
            BlockLayer::Tdsc(l) => l.weight_count(),
        }
    }

    pub fn bn(&self) -> &BatchNormState<T> {
        match self {
            BlockLayer::Standard(l) => &l.bn,
            BlockLayer::Tdsc(l) => &l.bn,
        }
    }

    pub fn bn_mut(&mut self) -> &mut BatchNormState<T> {
        match self {
            BlockLayer::Standard(l) => &mut l.bn,
            BlockLayer::Tdsc(l) => &mut l.bn,
        }
    }
}

impl<T: Real> Params<T> for BlockLayer<T> {
    fn params(&self) -> Vec<(ParamKind, &Tensor<T>)> {
        match self {
            BlockLayer::Standard(l) => l.params(),
            BlockLayer::Tdsc(l) => l.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<(ParamKind, &mut Tensor<T>)> {
        match self {
            BlockLayer::Standard(l) => l.params_mut(),
            BlockLayer::Tdsc(l) => l.params_mut(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{standard_conv_weights, tdsc_weights, Mode};
    use crate::tape::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn tdsc_weight_count_by_enumeration() {
        let l = TdscLayer::<f32>::new(128, 256, &mut rng());
        let enumerated: usize = l
            .params()
            .iter()
            .filter(|(k, _)| *k == ParamKind::Conv)
            .map(|(_, t)| t.len())
            .sum();
        assert_eq!(enumerated, 384 + 32_768);
        assert_eq!(enumerated, tdsc_weights(128, 256, 3));
        assert_eq!(l.depthwise.len(), 384);
    }

    #[test]
    fn first_layer_weight_count() {
        let l = TemporalConvLayer::<f32>::new(16, 64, &mut rng());
        assert_eq!(l.weight_count(), 3_072);
        assert_eq!(l.weight_count(), standard_conv_weights(16, 64, 3));
        let l = TemporalConvLayer::<f32>::new(128, 256, &mut rng());
        assert_eq!(l.weight_count(), 98_304);
    }

    #[test]
    fn tdsc_with_identity_weights_is_relu() {
        let c = 3;
        let mut l = TdscLayer::<f64>::new(c, c, &mut rng());
        let mut dw = vec![0.0; c * 3];
        let mut pw = vec![0.0; c * c];
        for i in 0..c {
            dw[i * 3 + 1] = 1.0;
            pw[i * c + i] = 1.0;
        }
        l.depthwise = Tensor::new(&[c, 3], dw).unwrap();
        l.pointwise = Tensor::new(&[c, c, 1], pw).unwrap();
        let x = Tensor::from_rows(&[&[1.0, -2.0, 3.0, -0.5], &[-1.0, 0.0, 2.0, 4.0], &[0.1, 0.2, -0.3, 0.4]]).unwrap();
        let mut tape = Tape::no_grad();
        let mut pass = Pass::new(&mut tape, Mode::Eval);
        let v = pass.tape.leaf(&x);
        let y = l.forward(&mut pass, v).unwrap();
        let y = tape.tensor(y);
        let scale = 1.0 / (1.0 + crate::layers::BN_EPS).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b.max(0.0) * scale).abs() < 1e-12);
        }
    }

    #[test]
    fn layers_preserve_length() {
        let x = Tensor::<f32>::full(&[2, 16, 37], 0.5);
        let std = TemporalConvLayer::<f32>::new(16, 8, &mut rng());
        let sep = TdscLayer::<f32>::new(16, 8, &mut rng());
        let mut tape = Tape::no_grad();
        let mut pass = Pass::new(&mut tape, Mode::Train);
        let v = pass.tape.leaf(&x);
        let a = std.forward(&mut pass, v).unwrap();
        let b = sep.forward(&mut pass, v).unwrap();
        assert_eq!(tape.shape(a), &[2, 8, 37]);
        assert_eq!(tape.shape(b), &[2, 8, 37]);
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let x = Tensor::<f32>::zeros(&[5, 8]);
        let l = TdscLayer::<f32>::new(4, 8, &mut rng());
        let mut tape = Tape::no_grad();
        let mut pass = Pass::new(&mut tape, Mode::Eval);
        let v = pass.tape.leaf(&x);
        assert!(matches!(l.forward(&mut pass, v), Err(crate::Error::Shape { .. })));
    }
}

use rand::Rng;

use super::{fan_in_normal, BlockLayer, ParamKind, Params, Pass, TdscLayer, TemporalConvLayer};
use crate::error::{Error, Result};
use crate::tape::Var;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockVariant {
    Standard,
    Tdsc,
}

#[derive(Clone, Debug)]
pub enum Shortcut<T: Real = f32> {
    Identity,
    /// 1x1 convolution `[out, in, 1]`, no bias, no norm, no activation.
    Projection(Tensor<T>),
}

/// Two convolutional layers (`In -> Out`, `Out -> Out`) wrapped by a
/// shortcut. The shortcut sum is the block output; no activation follows it.
#[derive(Clone, Debug)]
pub struct ConvBlock<T: Real = f32> {
    pub variant: BlockVariant,
    pub conv1: BlockLayer<T>,
    pub conv2: BlockLayer<T>,
    pub shortcut: Shortcut<T>,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl<T: Real> ConvBlock<T> {
    pub fn new<R: Rng + ?Sized>(variant: BlockVariant, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let layer = |i, o, rng: &mut R| match variant {
            BlockVariant::Standard => BlockLayer::Standard(TemporalConvLayer::new(i, o, rng)),
            BlockVariant::Tdsc => BlockLayer::Tdsc(TdscLayer::new(i, o, rng)),
        };
        let conv1 = layer(c_in, c_out, rng);
        let conv2 = layer(c_out, c_out, rng);
        let shortcut = if c_in == c_out {
            Shortcut::Identity
        } else {
            Shortcut::Projection(fan_in_normal(&[c_out, c_in, 1], c_in, 1.0, rng))
        };
        ConvBlock {
            variant,
            conv1,
            conv2,
            shortcut,
            in_channels: c_in,
            out_channels: c_out,
        }
    }

    /// Convolution weights on the main path, shortcut excluded.
    pub fn main_path_weights(&self) -> usize {
        self.conv1.weight_count() + self.conv2.weight_count()
    }

    pub fn projection_weights(&self) -> usize {
        match &self.shortcut {
            Shortcut::Identity => 0,
            Shortcut::Projection(w) => w.len(),
        }
    }

    pub fn forward<'a>(&'a self, pass: &mut Pass<'_, 'a, T>, x: Var) -> Result<Var> {
        let channels = match *pass.tape.shape(x) {
            [c, _] | [_, c, _] => c,
            _ => 0,
        };
        if channels != self.in_channels {
            return Err(Error::shape(
                "conv_block",
                format!("input has {channels} channels, block expects {}", self.in_channels),
            ));
        }
        let h = self.conv1.forward(pass, x)?;
        let h = self.conv2.forward(pass, h)?;
        let skip = match &self.shortcut {
            Shortcut::Identity => x,
            Shortcut::Projection(w) => {
                let w = pass.tape.leaf(w);
                pass.tape.conv1d(x, w, None, 0)?
            }
        };
        pass.tape.add(h, skip)
    }
}

impl<T: Real> Params<T> for ConvBlock<T> {
    fn params(&self) -> Vec<(ParamKind, &Tensor<T>)> {
        let mut p = self.conv1.params();
        p.extend(self.conv2.params());
        if let Shortcut::Projection(w) = &self.shortcut {
            p.push((ParamKind::Conv, w));
        }
        p
    }

    fn params_mut(&mut self) -> Vec<(ParamKind, &mut Tensor<T>)> {
        let mut p = self.conv1.params_mut();
        p.extend(self.conv2.params_mut());
        if let Shortcut::Projection(w) = &mut self.shortcut {
            p.push((ParamKind::Conv, w));
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;
    use crate::tape::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block(variant: BlockVariant, i: usize, o: usize) -> ConvBlock<f64> {
        ConvBlock::new(variant, i, o, &mut ChaCha8Rng::seed_from_u64(3))
    }

    fn zero_main_path(b: &mut ConvBlock<f64>) {
        for (kind, t) in b.params_mut() {
            if kind == ParamKind::Conv && t.shape().len() == 3 && t.shape()[2] == 3 {
                t.data_mut().fill(0.0);
            }
            if kind == ParamKind::Conv && t.shape().len() == 2 {
                t.data_mut().fill(0.0);
            }
        }
    }

    fn run(b: &ConvBlock<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let mut tape = Tape::no_grad();
        let mut pass = Pass::new(&mut tape, Mode::Train);
        let v = pass.tape.leaf(x);
        let y = b.forward(&mut pass, v).unwrap();
        tape.tensor(y)
    }

    #[test]
    fn worked_block_weight_counts() {
        let std = block(BlockVariant::Standard, 128, 256);
        let sep = block(BlockVariant::Tdsc, 128, 256);
        assert_eq!(std.main_path_weights(), 128 * 256 * 3 + 256 * 256 * 3);
        assert_eq!(std.main_path_weights(), 294_912);
        assert_eq!(sep.main_path_weights(), 128 * 3 + 128 * 256 + 256 * 3 + 256 * 256);
        assert_eq!(sep.main_path_weights(), 99_456);
    }

    #[test]
    fn projection_iff_channels_change() {
        assert!(matches!(block(BlockVariant::Tdsc, 8, 8).shortcut, Shortcut::Identity));
        let b = block(BlockVariant::Tdsc, 64, 128);
        assert_eq!(b.projection_weights(), 8_192);
    }

    #[test]
    fn zero_main_path_identity_shortcut_returns_input() {
        for variant in [BlockVariant::Standard, BlockVariant::Tdsc] {
            let mut b = block(variant, 4, 4);
            zero_main_path(&mut b);
            let x = Tensor::from_f64(
                &[2, 4, 6],
                &(0..48).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>(),
            )
            .unwrap();
            assert_eq!(run(&b, &x), x);
        }
    }

    #[test]
    fn zero_main_path_projection_returns_shortcut() {
        let mut b = block(BlockVariant::Standard, 2, 4);
        zero_main_path(&mut b);
        let x = Tensor::from_f64(&[2, 5], &[1.0, -2.0, 0.5, 3.0, 0.0, 0.25, 1.5, -1.0, 2.0, 4.0]).unwrap();
        let y = run(&b, &x);
        let Shortcut::Projection(w) = &b.shortcut else { panic!() };
        let expect = crate::ops::conv1d(&x, w, None, 0).unwrap();
        assert_eq!(y, expect);
    }

    #[test]
    fn wrong_input_channels_rejected() {
        let b = block(BlockVariant::Tdsc, 4, 8);
        let x = Tensor::<f64>::zeros(&[3, 8]);
        let mut tape = Tape::no_grad();
        let mut pass = Pass::new(&mut tape, Mode::Eval);
        let v = pass.tape.leaf(&x);
        assert!(b.forward(&mut pass, v).is_err());
    }
}

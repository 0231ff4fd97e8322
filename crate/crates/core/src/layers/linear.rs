use rand::Rng;

use super::{kaiming, zeros_param, ParamKind, Params, Pass};
use crate::error::Result;
use crate::tape::Var;
use crate::tensor::{Real, Tensor};

/// Fully connected layer `y = W x + b`.
#[derive(Clone, Debug)]
pub struct Linear<T: Real = f32> {
    /// `[outputs, inputs]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Linear {
            weight: kaiming(&[outputs, inputs], inputs, rng),
            bias: zeros_param(&[outputs]),
        }
    }

    /// Zero weights and bias, for the layer that produces the logits.
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            weight: zeros_param(&[outputs, inputs]),
            bias: zeros_param(&[outputs]),
        }
    }

    pub fn forward<'a>(&'a self, pass: &mut Pass<'_, 'a, T>, x: Var) -> Result<Var> {
        let w = pass.tape.leaf(&self.weight);
        let b = pass.tape.leaf(&self.bias);
        pass.tape.affine(x, w, b)
    }
}

impl<T: Real> Params<T> for Linear<T> {
    fn params(&self) -> Vec<(ParamKind, &Tensor<T>)> {
        vec![(ParamKind::Fc, &self.weight), (ParamKind::Fc, &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(ParamKind, &mut Tensor<T>)> {
        vec![(ParamKind::Fc, &mut self.weight), (ParamKind::Fc, &mut self.bias)]
    }
}

use super::{zeros_param, Mode, ParamKind, Params, Pass};
use crate::error::{Error, Result};
use crate::tape::{BatchStats, Var};
use crate::tensor::{Real, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Temporal batch normalization over `[batch, channels, length]` maps.
#[derive(Clone, Debug)]
pub struct BatchNormState<T: Real = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Real> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            gamma: Tensor::full(&[channels], T::one()).with_grad(),
            beta: zeros_param(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward<'a>(&'a self, pass: &mut Pass<'_, 'a, T>, x: Var) -> Result<Var> {
        let g = pass.tape.leaf(&self.gamma);
        let b = pass.tape.leaf(&self.beta);
        match pass.mode {
            Mode::Train => {
                let (y, stats) = pass.tape.batch_norm(x, g, b, T::of(self.eps))?;
                pass.stats.push(stats);
                Ok(y)
            }
            Mode::Eval => pass.tape.batch_norm_eval(
                x,
                g,
                b,
                self.running_mean.data(),
                self.running_var.data(),
                T::of(self.eps),
            ),
        }
    }

    /// Exponential moving average update of the running statistics. The
    /// running variance tracks the unbiased estimate.
    pub fn update_running(&mut self, stats: &BatchStats<T>) -> Result<()> {
        if stats.mean.len() != self.channels() {
            return Err(Error::State(format!(
                "batch statistics for {} channels applied to a {}-channel batch norm",
                stats.mean.len(),
                self.channels()
            )));
        }
        let m = T::of(self.momentum);
        let keep = T::one() - m;
        let n = stats.count as f64;
        let unbias = T::of(n / (n - 1.0).max(1.0));
        for (r, &v) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = keep * *r + m * v;
        }
        for (r, &v) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = keep * *r + m * v * unbias;
        }
        Ok(())
    }
}

impl<T: Real> Params<T> for BatchNormState<T> {
    fn params(&self) -> Vec<(ParamKind, &Tensor<T>)> {
        vec![(ParamKind::BatchNorm, &self.gamma), (ParamKind::BatchNorm, &self.beta)]
    }

    fn params_mut(&mut self) -> Vec<(ParamKind, &mut Tensor<T>)> {
        vec![
            (ParamKind::BatchNorm, &mut self.gamma),
            (ParamKind::BatchNorm, &mut self.beta),
        ]
    }
}

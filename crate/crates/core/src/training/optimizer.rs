use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Validation accuracy is computed every `eval_every` epochs and after
    /// the last one.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.001,
            batch_size: 64,
            max_epochs: 100,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::arg(format!(
                "learning rate {} must be finite and non-negative",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::arg(format!(
                "weight decay {} must be non-negative",
                self.weight_decay
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::arg("batch size must be at least 2 for batch statistics"));
        }
        if self.eval_every == 0 {
            return Err(Error::arg("eval_every must be at least 1"));
        }
        Ok(())
    }
}

/// Momentum buffers, one per parameter tensor, created on the first step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState<T = f32> {
    pub velocity: Vec<Vec<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new() -> Self {
        OptimizerState { velocity: Vec::new() }
    }
}

/// One SGD step with momentum and L2 weight decay:
/// `v = momentum * v + (grad + wd * w)`, `w -= lr * v`.
pub fn sgd_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    state: &mut OptimizerState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    if state.velocity.is_empty() {
        state.velocity = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
    }
    if state.velocity.len() != params.len()
        || state
            .velocity
            .iter()
            .zip(params.iter())
            .any(|(v, p)| v.len() != p.len())
    {
        return Err(Error::State("optimizer state does not match the parameter list".into()));
    }
    if let Some(i) = params.iter().position(|p| p.grad.is_none()) {
        return Err(Error::State(format!("parameter #{i} has no gradient")));
    }
    let (lr, mom, wd) = (T::of(cfg.lr), T::of(cfg.momentum), T::of(cfg.weight_decay));
    for (p, v) in params.iter_mut().zip(&mut state.velocity) {
        let grad = p.grad.take().expect("checked above");
        for ((w, vi), g) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(&grad) {
            *vi = mom * *vi + (*g + wd * *w);
            *w -= lr * *vi;
        }
        p.grad = Some(grad);
    }
    Ok(())
}

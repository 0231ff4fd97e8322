use serde::{Deserialize, Serialize};

use super::optimizer::{sgd_step, OptimizerState, TrainConfig};
use crate::architecture::Model;
use crate::data::{make_batches, Dataset};
use crate::error::{Error, Result};
use crate::layers::Params;
use crate::tape::Tape;
use crate::tensor::{Real, Tensor};

/// Samples per eval-mode forward pass in [`evaluate`].
const EVAL_CHUNK: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted mean training loss over the epoch.
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Epoch whose weights the model holds on return; 0 if no epoch was
    /// evaluated.
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

/// Mean cross-entropy of `[batch, classes]` logits.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let mut tape = Tape::no_grad();
    let x = tape.constant(logits.clone());
    let loss = tape.cross_entropy(x, labels)?;
    Ok(tape.value(loss)[0])
}

/// Eval-mode argmax class of every sample; ties go to the lowest class.
pub fn predict_classes<T: Real>(model: &Model<T>, dataset: &Dataset) -> Result<Vec<usize>> {
    let ids: Vec<usize> = (0..dataset.len()).collect();
    let mut out = Vec::with_capacity(dataset.len());
    for chunk in ids.chunks(EVAL_CHUNK) {
        let batch = dataset.batch(chunk);
        let logits = model.predict(&batch.indices, chunk.len())?;
        let classes = logits.shape()[1];
        for row in logits.data().chunks(classes) {
            let mut best = 0;
            for c in 1..classes {
                if row[c] > row[best] {
                    best = c;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}

/// Fraction of samples whose predicted class equals the label.
pub fn evaluate<T: Real>(model: &Model<T>, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::arg("cannot evaluate on an empty dataset"));
    }
    let predicted = predict_classes(model, dataset)?;
    let correct = predicted
        .iter()
        .zip(&dataset.samples)
        .filter(|(p, s)| **p == s.label)
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}

pub fn train<T: Real>(
    model: &mut Model<T>,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_callback(model, train_set, val_set, cfg, |_| {})
}

/// Runs `cfg.max_epochs` epochs of minibatch SGD and calls `on_epoch` after
/// each one. On return the model holds the weights of the epoch with the
/// best validation accuracy (the earliest on ties).
pub fn train_with_callback<T: Real>(
    model: &mut Model<T>,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    for (name, d) in [("training", train_set), ("validation", val_set)] {
        if d.is_empty() {
            return Err(Error::arg(format!("{name} set is empty")));
        }
        if d.n_classes != model.spec.n_classes {
            return Err(Error::arg(format!(
                "{name} set has {} classes, model has {}",
                d.n_classes, model.spec.n_classes
            )));
        }
        if d.seq_len != model.spec.seq_len {
            return Err(Error::arg(format!(
                "{name} set has length {}, model expects {}",
                d.seq_len, model.spec.seq_len
            )));
        }
    }
    if train_set.len() < 2 {
        return Err(Error::arg("training needs at least 2 samples for batch statistics"));
    }

    let mut state = OptimizerState::new();
    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(usize, f64, Model<T>)> = None;
    for epoch in 1..=cfg.max_epochs {
        let mut batches = make_batches(train_set, cfg.batch_size, cfg.seed.wrapping_add(epoch as u64))?;
        // A lone trailing sample has no batch statistics; fold it into the previous batch.
        if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
            let last = batches.pop().expect("non-empty");
            batches.last_mut().expect("non-empty").extend(last);
        }
        let mut loss_sum = 0.0;
        for (bi, ids) in batches.iter().enumerate() {
            let batch = train_set.batch(ids);
            let loss = model.forward_backward(&batch.indices, &batch.labels)?.f64();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi, loss });
            }
            loss_sum += loss * ids.len() as f64;
            let mut params: Vec<&mut Tensor<T>> = model.params_mut().into_iter().map(|(_, p)| p).collect();
            sgd_step(&mut params, &mut state, cfg)?;
        }
        let val_accuracy = if epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs {
            Some(evaluate(model, val_set)?)
        } else {
            None
        };
        if let Some(acc) = val_accuracy {
            if best.as_ref().is_none_or(|(_, b, _)| acc > *b) {
                best = Some((epoch, acc, model.clone()));
            }
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_accuracy,
        };
        on_epoch(&record);
        history.push(record);
    }
    let (best_epoch, best_val_accuracy) = match best {
        Some((epoch, acc, snapshot)) => {
            *model = snapshot;
            (epoch, acc)
        }
        None => (0, 0.0),
    };
    model.zero_grad();
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::architecture::{ArchitectureSpec, Family};
    use crate::data::synth_dataset;

    fn small_model() -> Model<f32> {
        Model::build(
            &ArchitectureSpec::new(Family::Svdcnn, 9, 4).with_seq_len(32).with_k(4),
            3,
        )
        .unwrap()
    }

    #[test]
    fn cross_entropy_examples() {
        let uniform = Tensor::new(&[1, 4], vec![0.0f64; 4]).unwrap();
        assert!((cross_entropy(&uniform, &[2]).unwrap() - 4f64.ln()).abs() < 1e-12);
        let l = Tensor::new(&[1, 2], vec![1.0f64, 2.0]).unwrap();
        assert!((cross_entropy(&l, &[1]).unwrap() - 0.313262).abs() < 1e-6);
        assert!(cross_entropy(&l, &[2]).is_err());
    }

    #[test]
    fn cross_entropy_falls_with_margin() {
        let mut prev = f64::INFINITY;
        for m in [0.0, 1.0, 5.0, 20.0] {
            let l = Tensor::new(&[1, 3], vec![m, 0.0, 0.0]).unwrap();
            let v = cross_entropy(&l, &[0]).unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-8);
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let mut m = small_model();
        let before: Vec<Vec<f32>> = m.params().iter().map(|(_, p)| p.data().to_vec()).collect();
        let d = synth_dataset(8, 4, 32, 0).unwrap();
        let cfg = TrainConfig {
            lr: 0.0,
            max_epochs: 1,
            batch_size: 4,
            ..TrainConfig::default()
        };
        train(&mut m, &d, &d, &cfg).unwrap();
        let after: Vec<Vec<f32>> = m.params().iter().map(|(_, p)| p.data().to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn training_is_deterministic() {
        let d = synth_dataset(12, 4, 32, 1).unwrap();
        let cfg = TrainConfig {
            max_epochs: 2,
            batch_size: 5,
            ..TrainConfig::default()
        };
        let a = train(&mut small_model(), &d, &d, &cfg).unwrap();
        let b = train(&mut small_model(), &d, &d, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.history.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn accuracy_is_a_fraction() {
        let d = synth_dataset(20, 4, 32, 2).unwrap();
        let acc = evaluate(&small_model(), &d).unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    #[test]
    fn mismatched_classes_rejected() {
        let d = synth_dataset(6, 3, 32, 0).unwrap();
        assert!(train(&mut small_model(), &d, &d, &TrainConfig::default()).is_err());
    }

    #[test]
    fn non_finite_loss_reports_position() {
        let mut m = small_model();
        if let crate::architecture::Head::AvgPool { fc, .. } = &mut m.head {
            fc.bias.data_mut()[0] = f32::NAN;
        }
        let d = synth_dataset(8, 4, 32, 0).unwrap();
        let cfg = TrainConfig {
            batch_size: 4,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&mut m, &d, &d, &cfg),
            Err(Error::NonFiniteLoss { epoch: 1, batch: 0, .. })
        ));
    }
}

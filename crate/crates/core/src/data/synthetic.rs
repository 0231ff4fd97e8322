use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Sample, Vocabulary};
use crate::error::{Error, Result};

/// Share of positions that carry the class letter before uniform filling.
const SIGNAL: f64 = 0.4;

/// Random lowercase strings where class `c` over-represents the letter
/// `'a' + c`. Labels cycle round-robin so classes are exactly balanced when
/// `n` is a multiple of `n_classes`.
pub fn synth_dataset(n: usize, n_classes: usize, s: usize, seed: u64) -> Result<Dataset> {
    if n_classes == 0 || n_classes > 26 {
        return Err(Error::arg(format!(
            "synthetic data supports 1 to 26 classes, got {n_classes}"
        )));
    }
    if n < n_classes {
        return Err(Error::arg(format!(
            "need at least one sample per class ({n} < {n_classes})"
        )));
    }
    if s == 0 {
        return Err(Error::arg("sequence length must be at least 1"));
    }
    let vocab = Vocabulary::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let label = i % n_classes;
            let indices = (0..s)
                .map(|_| {
                    let ch = if rng.random_bool(SIGNAL) {
                        b'a' + label as u8
                    } else {
                        b'a' + rng.random_range(0..26u8)
                    };
                    vocab.index(ch)
                })
                .collect();
            Sample { indices, label }
        })
        .collect();
    Dataset::new(samples, n_classes, s, format!("synthetic:seed={seed}"))
}

/// Predicts the class whose letter occurs most often; ties go to the lower
/// class.
pub fn letter_histogram_predict(sample: &Sample, n_classes: usize) -> usize {
    let vocab = Vocabulary::default();
    let mut counts = vec![0usize; n_classes];
    for &idx in &sample.indices {
        for (c, count) in counts.iter_mut().enumerate() {
            if idx == vocab.index(b'a' + c as u8) {
                *count += 1;
            }
        }
    }
    let mut best = 0;
    for c in 1..n_classes {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_in_range() {
        let d = synth_dataset(400, 4, 128, 1).unwrap();
        for c in 0..4 {
            assert_eq!(d.samples.iter().filter(|s| s.label == c).count(), 100);
        }
        assert!(d.samples.iter().all(|s| s.label < 4 && s.indices.len() == 128));
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(
            synth_dataset(20, 4, 16, 3).unwrap(),
            synth_dataset(20, 4, 16, 3).unwrap()
        );
        assert_ne!(
            synth_dataset(20, 4, 16, 3).unwrap().samples,
            synth_dataset(20, 4, 16, 4).unwrap().samples
        );
    }

    #[test]
    fn histogram_oracle_is_near_perfect() {
        let d = synth_dataset(400, 4, 128, 9).unwrap();
        let correct = d
            .samples
            .iter()
            .filter(|s| letter_histogram_predict(s, 4) == s.label)
            .count();
        assert!(correct as f64 / 400.0 >= 0.99, "{correct}");
    }

    #[test]
    fn argument_checks() {
        assert!(synth_dataset(3, 4, 8, 0).is_err());
        assert!(synth_dataset(30, 27, 8, 0).is_err());
    }
}

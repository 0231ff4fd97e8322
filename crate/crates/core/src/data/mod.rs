//! Character vocabulary, text quantization, corpus ingestion and batching.

mod batching;
mod ingest;
mod synthetic;
mod vocab;

pub use batching::{make_batches, Batch};
pub use ingest::load_csv;
pub use synthetic::{letter_histogram_predict, synth_dataset};
pub use vocab::{quantize, quantize_bytes, Vocabulary, ALPHABET};

use crate::error::{Error, Result};

/// One quantized text and its zero-based class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    /// Character indices; the vocabulary fits in a byte.
    pub indices: Vec<u8>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub n_classes: usize,
    pub seq_len: usize,
    /// File path or synthetic seed the samples came from.
    pub source: String,
}

impl Dataset {
    /// Checks the non-empty, label-range and fixed-length invariants.
    pub fn new(samples: Vec<Sample>, n_classes: usize, seq_len: usize, source: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::arg("dataset is empty"));
        }
        if let Some((i, s)) = samples.iter().enumerate().find(|(_, s)| s.label >= n_classes) {
            return Err(Error::arg(format!(
                "sample {i} has label {} but there are {n_classes} classes",
                s.label
            )));
        }
        if let Some(i) = samples.iter().position(|s| s.indices.len() != seq_len) {
            return Err(Error::arg(format!("sample {i} is not {seq_len} characters long")));
        }
        Ok(Dataset {
            samples,
            n_classes,
            seq_len,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Gathers the given samples into one flat batch.
    pub fn batch(&self, ids: &[usize]) -> Batch {
        let mut indices = Vec::with_capacity(ids.len() * self.seq_len);
        let mut labels = Vec::with_capacity(ids.len());
        for &i in ids {
            let s = &self.samples[i];
            indices.extend(s.indices.iter().map(|&c| c as usize));
            labels.push(s.label);
        }
        Batch { indices, labels }
    }
}

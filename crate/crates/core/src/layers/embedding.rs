use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ParamKind, Params, Pass};
use crate::error::Result;
use crate::tape::Var;
use crate::tensor::{Real, Tensor};

/// Character lookup table `[V, f0]`. Row 0 is the padding row: it starts at
/// zero and never receives gradient.
#[derive(Clone, Debug)]
pub struct EmbeddingTable<T: Real = f32> {
    pub table: Tensor<T>,
}

pub const PADDING_INDEX: usize = 0;

impl<T: Real> EmbeddingTable<T> {
    pub fn new<R: Rng + ?Sized>(vocab: usize, dim: usize, rng: &mut R) -> Self {
        let mut data: Vec<T> = (0..vocab * dim).map(|_| T::of(StandardNormal.sample(rng))).collect();
        data[..dim].fill(T::zero());
        EmbeddingTable {
            table: Tensor::new(&[vocab, dim], data).expect("table shape").with_grad(),
        }
    }

    pub fn from_tensor(table: Tensor<T>) -> Self {
        EmbeddingTable { table }
    }

    pub fn vocab(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    /// `[batch, f0, s]` embeddings for `batch` rows of indices.
    pub fn forward<'a>(&'a self, pass: &mut Pass<'_, 'a, T>, indices: &[usize], batch: usize) -> Result<Var> {
        let t = pass.tape.leaf(&self.table);
        pass.tape.embedding(indices, batch, t, Some(PADDING_INDEX))
    }

    /// Single-sample lookup returning `[f0, s]`.
    pub fn lookup(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let mut tape = crate::tape::Tape::no_grad();
        let mut pass = Pass::new(&mut tape, super::Mode::Eval);
        let v = self.forward(&mut pass, indices, 1)?;
        let out = tape.tensor(v);
        let (f0, s) = (out.shape()[1], out.shape()[2]);
        out.reshape(&[f0, s])
    }
}

impl<T: Real> Params<T> for EmbeddingTable<T> {
    fn params(&self) -> Vec<(ParamKind, &Tensor<T>)> {
        vec![(ParamKind::Embedding, &self.table)]
    }

    fn params_mut(&mut self) -> Vec<(ParamKind, &mut Tensor<T>)> {
        vec![(ParamKind::Embedding, &mut self.table)]
    }
}

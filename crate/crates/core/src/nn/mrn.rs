use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{uniform, Bound, ParamId, ParamStore};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MRN_HIDDEN: usize = 100;

/// Loss-to-weight MLP: one hidden relu layer, sigmoid output in `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mrn<T> {
    pub params: ParamStore<T>,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl<T: Scalar> Mrn<T> {
    pub fn new(seed: u64) -> Self {
        Self::with_hidden(seed, MRN_HIDDEN)
    }

    /// The output layer starts at zero, so every weight is initially 0.5.
    pub fn with_hidden(seed: u64, hidden: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let w1 = params.push("mrn.w1", uniform(&mut rng, vec![1, hidden], 1.0));
        let b1 = params.push("mrn.b1", uniform(&mut rng, vec![hidden], 1.0));
        let w2 = params.push("mrn.w2", Tensor::zeros(vec![hidden, 1]));
        let b2 = params.push("mrn.b2", Tensor::zeros(vec![1]));
        Self { params, w1, b1, w2, b2 }
    }

    /// All parameters set to zero, so every weight is exactly 0.5.
    pub fn zeroed(hidden: usize) -> Self {
        let mut m = Self::with_hidden(0, hidden);
        for t in m.params.tensors_mut() {
            *t = Tensor::zeros(t.dims().to_vec());
        }
        m
    }

    pub fn hidden(&self) -> usize {
        self.params.get(self.w1).dims()[1]
    }

    /// Weights for detached per-sample `losses` (length `n`).
    pub fn forward<'t>(&self, p: &Bound<'t, T>, losses: Var<'t, T>) -> Result<Var<'t, T>> {
        let n = losses.dims().iter().product::<usize>();
        let hidden = losses
            .reshape(vec![n, 1])?
            .matmul(p.get(self.w1))?
            .add_row_bias(p.get(self.b1))?
            .relu()?;
        hidden
            .matmul(p.get(self.w2))?
            .add_row_bias(p.get(self.b2))?
            .sigmoid()?
            .reshape(vec![n])
    }

    /// Plain evaluation without gradients.
    pub fn weights(&self, losses: &[T]) -> Result<Vec<T>> {
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::Data("non-finite loss fed to the reweighting network".into()));
        }
        let tape = Tape::new();
        let p = self.params.bind(&tape, |_| false);
        let l = tape.constant(Tensor::vector(losses.to_vec())?);
        Ok(self.forward(&p, l)?.value().into_data())
    }
}

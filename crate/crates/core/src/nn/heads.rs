use rand_chacha::ChaCha8Rng;

use super::{Bound, Conv2d, Linear, ParamStore};
use crate::autodiff::Var;
use crate::error::Result;
use crate::scalar::Scalar;

/// Channel-reducing 3×3 convolution, global pooling and a dense output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub reduce: Conv2d,
    pub fc: Linear,
}

impl Head {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        width: usize,
        outputs: usize,
    ) -> Self {
        let reduce = Conv2d::new(store, rng, &format!("{name}.reduce"), c_in, width, 3, 1, 1);
        let fc = Linear::new(store, rng, &format!("{name}.fc"), width, outputs);
        Self { reduce, fc }
    }

    pub fn outputs(&self) -> usize {
        self.fc.outputs
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, features: Var<'t, T>) -> Result<Var<'t, T>> {
        let pooled = self.reduce.forward(p, features)?.relu()?.global_avg_pool()?;
        self.fc.forward(p, pooled)
    }
}

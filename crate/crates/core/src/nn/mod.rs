//! Network building blocks: parameter storage, layers, attention, input
//! preparation, the desk-scale backbone, task heads, the reweighting MLP and
//! losses.

mod backbone;
mod eca;
mod heads;
mod loss;
mod mrn;
mod net;
mod prep;

pub use backbone::{BackboneConfig, MiniBackbone};
pub use eca::{eca_kernel_size, EcaBlock, KernelMode};
pub use heads::Head;
pub use loss::{cross_entropy, cross_entropy_row, mse_per_sample};
pub use mrn::{Mrn, MRN_HIDDEN};
pub use net::{AestheticNet, Group, NetConfig};
pub use prep::{aab_pool, aab_prepare, bilinear_resize, preprocess_crop, preprocess_resize, AabConfig, Prep};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named, ordered collection of parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Registers every tensor on `tape`; `trainable(id)` decides which
    /// become gradient leaves.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: impl Fn(ParamId) -> bool) -> Bound<'t, T> {
        Bound {
            vars: self
                .tensors
                .iter()
                .enumerate()
                .map(|(i, t)| tape.leaf(t.clone(), trainable(ParamId(i))))
                .collect(),
        }
    }

    /// Same as [`bind`](Self::bind) but with explicit replacement values.
    pub fn bind_values<'t>(
        tape: &'t Tape<T>,
        values: &[Tensor<T>],
        trainable: impl Fn(ParamId) -> bool,
    ) -> Bound<'t, T> {
        Bound {
            vars: values
                .iter()
                .enumerate()
                .map(|(i, t)| tape.leaf(t.clone(), trainable(ParamId(i))))
                .collect(),
        }
    }
}

/// Parameters registered on a tape for one forward pass.
pub struct Bound<'t, T: Scalar> {
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Scalar> Bound<'t, T> {
    /// Wraps vars already on a tape, indexed in store order.
    pub fn from_vars(vars: Vec<Var<'t, T>>) -> Self {
        Self { vars }
    }

    pub fn get(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }
}

pub(crate) fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, dims: Vec<usize>, bound: f64) -> Tensor<T> {
    let n = dims.iter().product();
    let data = (0..n).map(|_| T::lit(rng.random_range(-bound..=bound))).collect();
    Tensor::from_parts(dims, data)
}

/// 2-D convolution with per-channel bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// He-uniform initialised `k×k` convolution.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let fan_in = (c_in * k * k) as f64;
        let weight = store.push(format!("{name}.weight"), uniform(rng, vec![c_out, c_in, k, k], (6.0 / fan_in).sqrt()));
        let bias = store.push(format!("{name}.bias"), Tensor::zeros(vec![c_out]));
        Self { weight, bias, stride, padding }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.conv2d(p.get(self.weight), self.stride, self.padding)?
            .add_channel_bias(p.get(self.bias))
    }
}

/// Dense layer with `in×out` weight layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        inputs: usize,
        outputs: usize,
    ) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weight = store.push(format!("{name}.weight"), uniform(rng, vec![inputs, outputs], bound));
        let bias = store.push(format!("{name}.bias"), uniform(rng, vec![outputs], bound));
        Self { weight, bias, inputs, outputs }
    }

    /// Row-batched forward: `n×in` to `n×out`.
    pub fn forward_rows<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.matmul(p.get(self.weight))?.add_row_bias(p.get(self.bias))
    }

    /// Single vector forward: `in` to `out`.
    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let row = x.reshape(vec![1, self.inputs])?;
        self.forward_rows(p, row)?.reshape(vec![self.outputs])
    }
}

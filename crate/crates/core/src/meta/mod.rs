//! Bilevel sample reweighting.
//!
//! Each iteration runs three steps in a fixed order:
//!
//! 1. **Lookahead.** Per-sample gradients `g_i` of the training losses at the
//!    current parameters `w` are combined with the reweighting network's
//!    weights into a virtual SGD step `ŵ(Θ) = w − α Σ c_i(v) g_i`.
//! 2. **Meta step.** The mean loss on a clean meta batch is evaluated at `ŵ`.
//!    Its gradient with respect to `Θ` follows from the chain rule through
//!    the lookahead: with `d_i = g_i · ∇_ŵ L_meta`,
//!    `∇_Θ L_meta = −α Σ_j (Σ_i d_i ∂c_i/∂v_j) ∇_Θ v_j`. `Θ` takes an Adam step.
//! 3. **Main step.** Weights are recomputed under the updated `Θ` and the
//!    cached `g_i` are recombined into the gradient Adam applies to `w`.
//!
//! `c_i = v_i / n` without normalisation and `c_i = v_i / (Σ v + ε)` with it.
//! The per-sample losses fed to the network are detached values, so `v`
//! depends on `Θ` only.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, Mrn, ParamId, ParamStore};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Guard added to the weight sum under normalisation.
pub const NORM_EPS: f64 = 1e-8;

/// Supervision attached to one example.
#[derive(Clone, Debug, PartialEq)]
pub enum Target<T> {
    Class(usize),
    Score(T),
}

/// Model input plus its supervision.
#[derive(Clone, Debug, PartialEq)]
pub struct Example<T> {
    pub input: Tensor<T>,
    pub target: Target<T>,
}

/// Anything that maps parameters and one example to a scalar loss.
pub trait Objective<T: Scalar> {
    fn loss<'t>(&self, tape: &'t Tape<T>, params: &Bound<'t, T>, example: &Example<T>) -> Result<Var<'t, T>>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetaConfig {
    /// Main-network step size, used by the lookahead SGD step and by Adam.
    pub alpha: f64,
    /// Reweighting-network step size (Adam).
    pub beta: f64,
    pub batch_size: usize,
    pub meta_batch_size: usize,
    pub normalize_weights: bool,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub mrn_weight_decay: f64,
    /// Skip the meta step and keep `Θ` fixed.
    pub freeze_mrn: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-4,
            beta: 1e-4,
            batch_size: 32,
            meta_batch_size: 32,
            normalize_weights: true,
            betas: (0.98, 0.999),
            weight_decay: 1e-4,
            mrn_weight_decay: 0.0,
            freeze_mrn: false,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(Error::Config("alpha and beta must be positive".into()));
        }
        if self.batch_size == 0 || self.meta_batch_size == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        Ok(())
    }

    pub fn main_adam(&self) -> AdamConfig {
        AdamConfig { lr: self.alpha, beta1: self.betas.0, beta2: self.betas.1, eps: 1e-8, weight_decay: self.weight_decay }
    }

    pub fn mrn_adam(&self) -> AdamConfig {
        AdamConfig { lr: self.beta, beta1: self.betas.0, beta2: self.betas.1, eps: 1e-8, weight_decay: self.mrn_weight_decay }
    }
}

/// `Σ v_i L_i / (Σ v_i + ε)` when normalising, `(1/n) Σ v_i L_i` otherwise.
pub fn weighted_loss<T: Scalar>(losses: &[T], weights: &[T], normalize: bool) -> Result<T> {
    if losses.len() != weights.len() || losses.is_empty() {
        return Err(Error::Shape(format!("{} losses vs {} weights", losses.len(), weights.len())));
    }
    let c = coefficients(weights, normalize);
    Ok(losses.iter().zip(&c).map(|(&l, &ci)| l * ci).sum())
}

/// Differentiable form of [`weighted_loss`].
pub fn weighted_loss_var<'t, T: Scalar>(losses: Var<'t, T>, weights: Var<'t, T>, normalize: bool) -> Result<Var<'t, T>> {
    let weighted = losses.mul(weights)?.sum()?;
    if normalize {
        weighted.div(weights.sum()?.add_scalar(T::lit(NORM_EPS))?)
    } else {
        weighted.scale(T::one() / T::from_usize_lossy(losses.dims()[0]))
    }
}

/// Effective per-sample step coefficients `c_i`.
pub fn coefficients<T: Scalar>(weights: &[T], normalize: bool) -> Vec<T> {
    if normalize {
        let total: T = weights.iter().copied().sum();
        if total == T::zero() {
            log::warn!("all sample weights are zero; weighted loss is 0");
        }
        let denom = total + T::lit(NORM_EPS);
        weights.iter().map(|&v| v / denom).collect()
    } else {
        let n = T::from_usize_lossy(weights.len());
        weights.iter().map(|&v| v / n).collect()
    }
}

/// `Σ_i d_i ∂c_i/∂v_j` for every `j`.
fn coefficient_vjp<T: Scalar>(d: &[T], weights: &[T], normalize: bool) -> Vec<T> {
    if normalize {
        let s: T = weights.iter().copied().sum::<T>() + T::lit(NORM_EPS);
        let dv: T = d.iter().zip(weights).map(|(&di, &vi)| di * vi).sum();
        d.iter().map(|&dj| dj / s - dv / (s * s)).collect()
    } else {
        let n = T::from_usize_lossy(d.len());
        d.iter().map(|&dj| dj / n).collect()
    }
}

/// Per-iteration values retained between the three steps.
#[derive(Clone, Debug, PartialEq)]
pub struct LookaheadCache<T> {
    /// Detached per-sample losses at `w`.
    pub losses: Vec<T>,
    /// `g_i` restricted to trainable parameters, in trainable order.
    pub grads: Vec<Vec<Tensor<T>>>,
    /// Weights used for the lookahead.
    pub weights: Vec<T>,
}

/// Summary of one completed iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct StepStats<T> {
    pub mean_loss: T,
    pub weighted_loss: T,
    pub weights: Vec<T>,
    pub meta_loss: Option<T>,
}

/// Losses and gradients of each sample, one tape per sample; gradients
/// follow the order of `trainable`.
pub fn sample_gradients<T: Scalar, O: Objective<T>>(
    objective: &O,
    w: &ParamStore<T>,
    trainable: &[ParamId],
    batch: &[&Example<T>],
) -> Result<(Vec<T>, Vec<Vec<Tensor<T>>>)> {
    if batch.is_empty() {
        return Err(Error::Data("empty training batch".into()));
    }
    let mut losses = Vec::with_capacity(batch.len());
    let mut grads = Vec::with_capacity(batch.len());
    for ex in batch {
        let tape = Tape::new();
        let p = w.bind(&tape, |id| trainable.contains(&id));
        let loss = objective.loss(&tape, &p, ex)?;
        losses.push(loss.item()?);
        if loss.requires_grad() {
            let g = tape.backward(loss)?;
            grads.push(trainable.iter().map(|&id| g.wrt(p.get(id))).collect());
        } else {
            grads.push(trainable.iter().map(|&id| Tensor::zeros(w.get(id).dims().to_vec())).collect());
        }
    }
    Ok((losses, grads))
}

/// Main parameters, reweighting parameters, lookahead buffer and both
/// optimisers.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaState<T> {
    pub config: MetaConfig,
    pub w: ParamStore<T>,
    pub trainable: Vec<ParamId>,
    pub mrn: Mrn<T>,
    pub w_hat: Vec<Tensor<T>>,
    pub adam_w: Adam<T>,
    pub adam_theta: Adam<T>,
    pub t: u64,
    cache: Option<LookaheadCache<T>>,
}

impl<T: Scalar> MetaState<T> {
    pub fn new(config: MetaConfig, w: ParamStore<T>, trainable: Vec<ParamId>, mrn: Mrn<T>) -> Result<Self> {
        config.validate()?;
        let adam_w = Adam::new(config.main_adam(), w.tensors());
        let adam_theta = Adam::new(config.mrn_adam(), mrn.params.tensors());
        let w_hat = w.tensors().to_vec();
        Ok(Self { config, w, trainable, mrn, w_hat, adam_w, adam_theta, t: 0, cache: None })
    }

    pub fn cache(&self) -> Option<&LookaheadCache<T>> {
        self.cache.as_ref()
    }

    fn is_trainable(&self) -> impl Fn(ParamId) -> bool + '_ {
        move |id| self.trainable.contains(&id)
    }

    /// Per-sample losses and gradients at the current `w`.
    pub fn sample_gradients<O: Objective<T>>(
        &self,
        objective: &O,
        batch: &[&Example<T>],
    ) -> Result<(Vec<T>, Vec<Vec<Tensor<T>>>)> {
        sample_gradients(objective, &self.w, &self.trainable, batch)
    }

    /// Sets the main step size for both the lookahead and Adam.
    pub fn set_lr(&mut self, lr: f64) {
        self.config.alpha = lr;
        self.adam_w.set_lr(lr);
    }

    /// Builds `ŵ(Θ)` and caches what the next two steps need.
    pub fn lookahead_update<O: Objective<T>>(&mut self, objective: &O, batch: &[&Example<T>]) -> Result<()> {
        let (losses, grads) = self.sample_gradients(objective, batch)?;
        let weights = self.mrn.weights(&losses)?;
        let c = coefficients(&weights, self.config.normalize_weights);
        let alpha = T::lit(self.config.alpha);
        self.w_hat = self.w.tensors().to_vec();
        for (k, &id) in self.trainable.iter().enumerate() {
            let target = &mut self.w_hat[id.0];
            for (g, &ci) in grads.iter().zip(&c) {
                target.axpy(-alpha * ci, &g[k]);
            }
        }
        self.cache = Some(LookaheadCache { losses, grads, weights });
        Ok(())
    }

    /// Mean meta loss at `params` and its gradient over trainable parameters.
    pub fn meta_loss_and_grad<O: Objective<T>>(
        &self,
        objective: &O,
        params: &[Tensor<T>],
        meta_batch: &[&Example<T>],
    ) -> Result<(T, Vec<Tensor<T>>)> {
        if meta_batch.is_empty() {
            return Err(Error::Data("empty meta batch".into()));
        }
        let scale = T::one() / T::from_usize_lossy(meta_batch.len());
        let mut total = T::zero();
        let mut grad: Vec<Tensor<T>> =
            self.trainable.iter().map(|&id| Tensor::zeros(params[id.0].dims().to_vec())).collect();
        let trainable = self.is_trainable();
        for ex in meta_batch {
            let tape = Tape::new();
            let p = ParamStore::bind_values(&tape, params, &trainable);
            let loss = objective.loss(&tape, &p, ex)?;
            total += loss.item()? * scale;
            if loss.requires_grad() {
                let g = tape.backward(loss)?;
                for (k, &id) in self.trainable.iter().enumerate() {
                    grad[k].axpy(scale, &g.wrt(p.get(id)));
                }
            }
        }
        Ok((total, grad))
    }

    /// Analytic `∇_Θ` of the meta loss through the cached lookahead.
    pub fn meta_gradient<O: Objective<T>>(&self, objective: &O, meta_batch: &[&Example<T>]) -> Result<(T, Vec<Tensor<T>>)> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("meta step requires a lookahead in this iteration".into()))?;
        let (meta_loss, meta_grad) = self.meta_loss_and_grad(objective, &self.w_hat, meta_batch)?;
        let d: Vec<T> = cache
            .grads
            .iter()
            .map(|g| g.iter().zip(&meta_grad).map(|(a, b)| a.dot(b)).sum())
            .collect();
        let alpha = T::lit(self.config.alpha);
        let seed: Vec<T> = coefficient_vjp(&d, &cache.weights, self.config.normalize_weights)
            .into_iter()
            .map(|x| -alpha * x)
            .collect();
        let tape = Tape::new();
        let p = self.mrn.params.bind(&tape, |_| true);
        let v = self.mrn.forward(&p, tape.constant(Tensor::vector(cache.losses.clone())?))?;
        let g = tape.backward_with_seed(v, &Tensor::vector(seed)?)?;
        Ok((meta_loss, p.vars().iter().map(|&var| g.wrt(var)).collect()))
    }

    /// Applies the meta gradient to `Θ` with Adam.
    pub fn meta_step<O: Objective<T>>(&mut self, objective: &O, meta_batch: &[&Example<T>]) -> Result<T> {
        let (meta_loss, grad) = self.meta_gradient(objective, meta_batch)?;
        let grads: Vec<_> = grad.into_iter().map(Some).collect();
        self.adam_theta.step(self.mrn.params.tensors_mut(), &grads);
        Ok(meta_loss)
    }

    /// Reweights the cached gradients under the current `Θ` and steps `w`.
    pub fn main_step(&mut self) -> Result<StepStats<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("main step requires a lookahead in this iteration".into()))?;
        let weights = self.mrn.weights(&cache.losses)?;
        let c = coefficients(&weights, self.config.normalize_weights);
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.w.len()];
        for (k, &id) in self.trainable.iter().enumerate() {
            let mut acc = Tensor::zeros(self.w.get(id).dims().to_vec());
            for (g, &ci) in cache.grads.iter().zip(&c) {
                acc.axpy(ci, &g[k]);
            }
            grads[id.0] = Some(acc);
        }
        self.adam_w.step(self.w.tensors_mut(), &grads);
        let n = T::from_usize_lossy(cache.losses.len());
        Ok(StepStats {
            mean_loss: cache.losses.iter().copied().sum::<T>() / n,
            weighted_loss: cache.losses.iter().zip(&c).map(|(&l, &ci)| l * ci).sum(),
            weights,
            meta_loss: None,
        })
    }

    /// Lookahead, meta step (unless frozen), main step.
    pub fn meta_iteration<O: Objective<T>>(
        &mut self,
        objective: &O,
        meta_objective: &O,
        train_batch: &[&Example<T>],
        meta_batch: &[&Example<T>],
    ) -> Result<StepStats<T>> {
        self.lookahead_update(objective, train_batch)?;
        let meta_loss = if self.config.freeze_mrn {
            None
        } else {
            Some(self.meta_step(meta_objective, meta_batch)?)
        };
        let mut stats = self.main_step()?;
        stats.meta_loss = meta_loss;
        self.t += 1;
        Ok(stats)
    }
}

/// Score segment `[k, k+1)` of a score in `[0, 10]`; 10 falls in segment 9.
pub fn score_segment(score: f64) -> usize {
    (score.floor().max(0.0) as usize).min(9)
}

/// Clean, segment-balanced subset used for the meta loss.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetaSet {
    /// Indices into the candidate list, grouped by the segment they fill.
    pub indices: Vec<usize>,
    pub quota: usize,
    /// How many samples each segment's quota received (own plus borrowed).
    pub filled: [usize; 10],
}

/// Draws `quota` samples per score segment (seeded). A short segment is
/// topped up from the remaining samples of its neighbours, nearest first,
/// lower side before higher at each distance.
pub fn build_meta_set(scores: &[f64], quota: usize, seed: u64) -> MetaSet {
    if scores.len() < 10 * quota {
        log::warn!("meta set candidates ({}) fewer than 10 x quota ({}); using all", scores.len(), 10 * quota);
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut filled = [0; 10];
        for &i in &idx {
            filled[score_segment(scores[i])] += 1;
        }
        return MetaSet { indices: idx, quota, filled };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); 10];
    for (i, &s) in scores.iter().enumerate() {
        pools[score_segment(s)].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(&mut rng);
        // pop from the back while preserving the shuffled order as the draw order
        pool.reverse();
    }
    let mut indices = Vec::with_capacity(10 * quota);
    let mut filled = [0; 10];
    for seg in 0..10 {
        let mut need = quota;
        let mut order = vec![seg as i64];
        for dist in 1..10i64 {
            order.push(seg as i64 - dist);
            order.push(seg as i64 + dist);
        }
        for src in order {
            if need == 0 {
                break;
            }
            if !(0..10).contains(&src) {
                continue;
            }
            let pool = &mut pools[src as usize];
            while need > 0 {
                let Some(i) = pool.pop() else { break };
                indices.push(i);
                need -= 1;
                filled[seg] += 1;
            }
        }
    }
    MetaSet { indices, quota, filled }
}

/// Cycles through a fixed index set in seeded shuffled order, reshuffling
/// at each pass.
#[derive(Clone, Debug)]
pub struct MetaBatcher {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl MetaBatcher {
    pub fn new(indices: Vec<usize>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order = indices;
        order.shuffle(&mut rng);
        Self { order, pos: 0, rng }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        if self.order.is_empty() {
            return out;
        }
        while out.len() < size.min(self.order.len()) {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::meta::{sample_gradients, Example, MetaBatcher, MetaConfig, MetaState, Objective};
use crate::nn::{Mrn, ParamId, ParamStore};
use crate::optim::{Adam, Orientation, PlateauScheduler};
use crate::tensor::Tensor;

/// How the reweighting network takes part in a phase.
#[derive(Clone, Debug, PartialEq)]
pub enum MrnMode {
    Off,
    /// Reweight and keep training `Θ` on the meta set.
    Train(Mrn<f64>),
    /// Reweight with a fixed `Θ`.
    Frozen(Mrn<f64>),
}

impl MrnMode {
    pub fn into_mrn(self) -> Option<Mrn<f64>> {
        match self {
            MrnMode::Off => None,
            MrnMode::Train(m) | MrnMode::Frozen(m) => Some(m),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PhaseSpec {
    pub name: &'static str,
    pub epochs: usize,
    pub batch_size: usize,
    pub trainable: Vec<ParamId>,
    pub orientation: Orientation,
    pub patience: usize,
    /// Base config; `batch_size` and `freeze_mrn` are overridden per phase.
    pub meta: MetaConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub mean_loss: f64,
    pub val_metric: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct PhaseOutcome {
    pub history: Vec<EpochLog>,
    pub best_metric: f64,
    /// The reweighting network as it stands after the phase.
    pub mrn: Option<Mrn<f64>>,
    /// Final Adam moments of the main parameters.
    pub adam: Adam<f64>,
}

enum Stepper {
    Plain { w: ParamStore<f64>, trainable: Vec<ParamId>, adam: Adam<f64> },
    Meta(Box<MetaState<f64>>),
}

impl Stepper {
    fn params(&self) -> &ParamStore<f64> {
        match self {
            Stepper::Plain { w, .. } => w,
            Stepper::Meta(s) => &s.w,
        }
    }

    fn set_lr(&mut self, lr: f64) {
        match self {
            Stepper::Plain { adam, .. } => adam.set_lr(lr),
            Stepper::Meta(s) => s.set_lr(lr),
        }
    }
}

/// Trains `w` in place with per-epoch validation, the plateau rule and
/// best-validation restore. Parameters outside `spec.trainable` are untouched.
#[allow(clippy::too_many_arguments)]
pub fn run_phase<O: Objective<f64>>(
    w: &mut ParamStore<f64>,
    objective: &O,
    train: &[Example<f64>],
    meta_set: &[Example<f64>],
    mrn: MrnMode,
    spec: &PhaseSpec,
    validate: &dyn Fn(&ParamStore<f64>) -> Result<f64>,
) -> Result<PhaseOutcome> {
    if train.len() < spec.batch_size {
        return Err(Error::Data(format!(
            "{}: {} training samples is less than one batch of {}",
            spec.name,
            train.len(),
            spec.batch_size
        )));
    }
    let mut cfg = spec.meta;
    cfg.batch_size = spec.batch_size;
    cfg.meta_batch_size = cfg.meta_batch_size.min(meta_set.len().max(1));
    let mut batcher = None;
    let mut stepper = match mrn {
        MrnMode::Off => {
            let adam = Adam::new(cfg.main_adam(), w.tensors());
            Stepper::Plain { w: w.clone(), trainable: spec.trainable.clone(), adam }
        }
        MrnMode::Train(m) => {
            if meta_set.is_empty() {
                return Err(Error::Data(format!("{}: reweighting needs a nonempty meta set", spec.name)));
            }
            batcher = Some(MetaBatcher::new((0..meta_set.len()).collect(), spec.seed ^ 0x3e7a));
            Stepper::Meta(Box::new(MetaState::new(cfg, w.clone(), spec.trainable.clone(), m)?))
        }
        MrnMode::Frozen(m) => {
            cfg.freeze_mrn = true;
            Stepper::Meta(Box::new(MetaState::new(cfg, w.clone(), spec.trainable.clone(), m)?))
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sched = PlateauScheduler::new(spec.orientation);
    sched.patience = spec.patience;
    let mut lr = cfg.alpha;
    let mut best = w.clone();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..spec.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(spec.batch_size) {
            let batch: Vec<&Example<f64>> = chunk.iter().map(|&i| &train[i]).collect();
            match &mut stepper {
                Stepper::Plain { w, trainable, adam } => {
                    let (losses, grads) = sample_gradients(objective, w, trainable, &batch)?;
                    let c = 1.0 / batch.len() as f64;
                    let mut full: Vec<Option<Tensor<f64>>> = vec![None; w.len()];
                    for (k, &id) in trainable.iter().enumerate() {
                        let mut acc = Tensor::zeros(w.get(id).dims().to_vec());
                        for g in &grads {
                            acc.axpy(c, &g[k]);
                        }
                        full[id.0] = Some(acc);
                    }
                    adam.step(w.tensors_mut(), &full);
                    loss_sum += losses.iter().sum::<f64>();
                }
                Stepper::Meta(state) => {
                    let meta_idx = match &mut batcher {
                        Some(b) => b.next_batch(cfg.meta_batch_size),
                        None => Vec::new(),
                    };
                    let meta_batch: Vec<&Example<f64>> = meta_idx.iter().map(|&i| &meta_set[i]).collect();
                    let stats = state.meta_iteration(objective, objective, &batch, &meta_batch)?;
                    loss_sum += stats.mean_loss * batch.len() as f64;
                }
            }
            seen += batch.len();
        }
        let metric = validate(stepper.params())?;
        if sched.observe(metric, &mut lr) {
            best = stepper.params().clone();
        }
        stepper.set_lr(lr);
        let log = EpochLog { mean_loss: loss_sum / seen as f64, val_metric: metric, lr };
        log::info!("{} epoch {}: loss {:.4} valid {:.4} lr {:.2e}", spec.name, epoch + 1, log.mean_loss, metric, lr);
        history.push(log);
    }
    *w = best;
    let (mrn, adam) = match stepper {
        Stepper::Plain { adam, .. } => (None, adam),
        Stepper::Meta(s) => (Some(s.mrn), s.adam_w),
    };
    Ok(PhaseOutcome { history, best_metric: sched.best().unwrap_or(f64::NAN), mrn, adam })
}

use super::objectives::{ClassObjective, HeadScoreObjective, ScoreObjective};
use super::train::{run_phase, EpochLog, MrnMode, PhaseSpec};
use super::Item;
use crate::autodiff::Tape;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::meta::{Example, Target};
use crate::metrics;
use crate::nn::{AestheticNet, Group, Mrn, ParamId};
use crate::optim::{Adam, Orientation};
use crate::tensor::Tensor;

/// Training, validation and meta samples for one stage.
#[derive(Clone, Copy, Debug)]
pub struct StageSet<'a> {
    pub train: &'a [Item],
    pub valid: &'a [Item],
    pub meta: &'a [Item],
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub net: AestheticNet<f64>,
    pub mrn: Option<Mrn<f64>>,
    pub adam: Adam<f64>,
    /// Per-phase epoch logs.
    pub logs: Vec<(&'static str, Vec<EpochLog>)>,
}

fn backbone_and(net: &AestheticNet<f64>, head: Group) -> Vec<ParamId> {
    let mut ids = net.group_ids(Group::Backbone);
    ids.extend(net.group_ids(head));
    ids
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter().enumerate().fold(0, |best, (i, &x)| if x > xs[best] { i } else { best })
}

pub fn features(net: &AestheticNet<f64>, image: &Tensor<f64>) -> Result<Tensor<f64>> {
    let tape = Tape::new();
    let p = net.params.bind(&tape, |_| false);
    Ok(net.features(&p, tape.constant(image.clone()))?.value())
}

/// Argmax of the classification head for each image.
pub fn class_predictions(net: &AestheticNet<f64>, images: &[&Tensor<f64>]) -> Result<Vec<usize>> {
    images
        .iter()
        .map(|img| {
            let tape = Tape::new();
            let p = net.params.bind(&tape, |_| false);
            let f = net.features(&p, tape.constant((*img).clone()))?;
            Ok(argmax(net.class_logits(&p, f)?.value().data()))
        })
        .collect()
}

/// Raw regression outputs for each image.
pub fn score_predictions(net: &AestheticNet<f64>, images: &[&Tensor<f64>]) -> Result<Vec<f64>> {
    images
        .iter()
        .map(|img| {
            let tape = Tape::new();
            let p = net.params.bind(&tape, |_| false);
            let f = net.features(&p, tape.constant((*img).clone()))?;
            net.score(&p, f)?.sum()?.item()
        })
        .collect()
}

fn head_scores(net: &AestheticNet<f64>, feats: &[&Tensor<f64>]) -> Result<Vec<f64>> {
    feats
        .iter()
        .map(|f| {
            let tape = Tape::new();
            let p = net.params.bind(&tape, |_| false);
            net.score(&p, tape.constant((*f).clone()))?.sum()?.item()
        })
        .collect()
}

fn class_accuracy(net: &AestheticNet<f64>, valid: &[Example<f64>]) -> Result<f64> {
    let imgs: Vec<&Tensor<f64>> = valid.iter().map(|e| &e.input).collect();
    let pred = class_predictions(net, &imgs)?;
    let hits = pred.iter().zip(valid).filter(|(p, e)| matches!(e.target, Target::Class(k) if k == **p)).count();
    Ok(hits as f64 / valid.len() as f64)
}

fn targets(valid: &[Example<f64>]) -> Vec<f64> {
    valid
        .iter()
        .map(|e| match e.target {
            Target::Score(s) => s,
            Target::Class(k) => k as f64,
        })
        .collect()
}

fn phase(cfg: &RunConfig, name: &'static str, epochs: usize, batch: usize, trainable: Vec<ParamId>, o: Orientation, seed: u64) -> PhaseSpec {
    PhaseSpec {
        name,
        epochs,
        batch_size: cfg.scaled_batch(batch),
        trainable,
        orientation: o,
        patience: cfg.train.patience,
        meta: cfg.meta_config(1),
        seed,
    }
}

fn fresh_mrn(cfg: &RunConfig, use_mrn: bool, seed: u64) -> MrnMode {
    if use_mrn {
        MrnMode::Train(Mrn::with_hidden(seed ^ 0x6d72_6e00, cfg.meta.hidden))
    } else {
        MrnMode::Off
    }
}

fn nonempty(set: &StageSet<'_>, what: &str) -> Result<()> {
    if set.train.is_empty() || set.valid.is_empty() {
        return Err(Error::Data(format!("{what}: empty training or validation split")));
    }
    Ok(())
}

/// Backbone plus a two-way head trained with cross-entropy on binary labels;
/// the best-validation-accuracy parameters are kept.
pub fn train_binary(set: StageSet<'_>, cfg: &RunConfig, use_mrn: bool, seed: u64) -> Result<TrainedModel> {
    nonempty(&set, "binary classifier")?;
    let mut net = AestheticNet::new(cfg.net_config(2), seed)?;
    let train: Vec<Example<f64>> = set.train.iter().map(Item::binary_example).collect();
    let valid: Vec<Example<f64>> = set.valid.iter().map(Item::binary_example).collect();
    let meta: Vec<Example<f64>> = set
        .meta
        .iter()
        .filter(|m| m.score.is_none_or(|s| !(s > 4.0 && s < 6.0)))
        .map(Item::binary_example)
        .collect();
    let spec = phase(cfg, "binary", cfg.train.epochs_binary, cfg.train.batch_class, backbone_and(&net, Group::ClassHead), Orientation::HigherBetter, seed);
    let shadow = net.clone();
    let obj = ClassObjective { net: &shadow };
    let out = run_phase(&mut net.params, &obj, &train, &meta, fresh_mrn(cfg, use_mrn, seed), &spec, &|w| {
        let mut probe = shadow.clone();
        probe.params = w.clone();
        class_accuracy(&probe, &valid)
    })?;
    Ok(TrainedModel { net, mrn: out.mrn, adam: out.adam, logs: vec![("binary", out.history)] })
}

/// Ten-class training of backbone and class head, then the regression head
/// alone on frozen backbone features. With `use_mrn` the first phase trains
/// the reweighting network and the second reuses it frozen.
pub fn train_cr(set: StageSet<'_>, cfg: &RunConfig, use_mrn: bool, seed: u64) -> Result<TrainedModel> {
    nonempty(&set, "ten-class stage")?;
    let mut net = AestheticNet::new(cfg.net_config(10), seed)?;
    let train: Vec<Example<f64>> = set.train.iter().map(Item::ten_class_example).collect::<Result<_>>()?;
    let valid: Vec<Example<f64>> = set.valid.iter().map(Item::ten_class_example).collect::<Result<_>>()?;
    let meta: Vec<Example<f64>> = set.meta.iter().map(Item::ten_class_example).collect::<Result<_>>()?;
    let spec1 = phase(cfg, "ten-class", cfg.train.epochs_class, cfg.train.batch_class, backbone_and(&net, Group::ClassHead), Orientation::HigherBetter, seed);
    let shadow = net.clone();
    let p1 = run_phase(&mut net.params, &ClassObjective { net: &shadow }, &train, &meta, fresh_mrn(cfg, use_mrn, seed), &spec1, &|w| {
        let mut probe = shadow.clone();
        probe.params = w.clone();
        class_accuracy(&probe, &valid)
    })?;

    // backbone is frozen from here on, so its features can be computed once
    let feat = |items: &[Item]| -> Result<Vec<Example<f64>>> {
        items.iter().map(|it| Ok(Example { input: features(&net, &it.image)?, target: Target::Score(it.score()?) })).collect()
    };
    let train2 = feat(set.train)?;
    let valid2 = feat(set.valid)?;
    let truth = targets(&valid2);
    let spec2 = phase(cfg, "regression-head", cfg.train.epochs_reg, cfg.train.batch_reg, net.group_ids(Group::RegHead), Orientation::LowerBetter, seed ^ 1);
    let mode = match p1.mrn.clone() {
        Some(m) => MrnMode::Frozen(m),
        None => MrnMode::Off,
    };
    let shadow = net.clone();
    let p2 = run_phase(&mut net.params, &HeadScoreObjective { net: &shadow }, &train2, &[], mode, &spec2, &|w| {
        let mut probe = shadow.clone();
        probe.params = w.clone();
        let feats: Vec<&Tensor<f64>> = valid2.iter().map(|e| &e.input).collect();
        let pred: Vec<f64> = head_scores(&probe, &feats)?.into_iter().map(|s| s.clamp(0.0, 10.0)).collect();
        metrics::mse(&pred, &truth)
    })?;
    Ok(TrainedModel { net, mrn: p1.mrn, adam: p2.adam, logs: vec![("ten-class", p1.history), ("regression-head", p2.history)] })
}

/// One branch of the piecewise strategy: CR training on a pseudo-label subset.
pub fn train_branch(set: StageSet<'_>, cfg: &RunConfig, use_mrn: bool, seed: u64) -> Result<TrainedModel> {
    train_cr(set, cfg, use_mrn, seed)
}

/// Backbone and regression head trained end to end on squared error, for the
/// same number of epochs as both CR phases together.
pub fn train_r(set: StageSet<'_>, cfg: &RunConfig, use_mrn: bool, seed: u64) -> Result<TrainedModel> {
    nonempty(&set, "regression")?;
    let mut net = AestheticNet::new(cfg.net_config(10), seed)?;
    let train: Vec<Example<f64>> = set.train.iter().map(Item::score_example).collect::<Result<_>>()?;
    let valid: Vec<Example<f64>> = set.valid.iter().map(Item::score_example).collect::<Result<_>>()?;
    let meta: Vec<Example<f64>> = set.meta.iter().map(Item::score_example).collect::<Result<_>>()?;
    let truth = targets(&valid);
    let epochs = cfg.train.epochs_class + cfg.train.epochs_reg;
    let spec = phase(cfg, "regression", epochs, cfg.train.batch_reg, backbone_and(&net, Group::RegHead), Orientation::LowerBetter, seed);
    let shadow = net.clone();
    let out = run_phase(&mut net.params, &ScoreObjective { net: &shadow }, &train, &meta, fresh_mrn(cfg, use_mrn, seed), &spec, &|w| {
        let mut probe = shadow.clone();
        probe.params = w.clone();
        let imgs: Vec<&Tensor<f64>> = valid.iter().map(|e| &e.input).collect();
        let pred: Vec<f64> = score_predictions(&probe, &imgs)?.into_iter().map(|s| s.clamp(0.0, 10.0)).collect();
        metrics::mse(&pred, &truth)
    })?;
    Ok(TrainedModel { net, mrn: out.mrn, adam: out.adam, logs: vec![("regression", out.history)] })
}

/// Pseudo labels for the training and validation samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitAssignment {
    pub train: Vec<(u64, u8)>,
    pub valid: Vec<(u64, u8)>,
}

impl SplitAssignment {
    pub fn counts(&self) -> [[usize; 2]; 2] {
        let c = |v: &[(u64, u8)]| [v.iter().filter(|x| x.1 == 0).count(), v.iter().filter(|x| x.1 == 1).count()];
        [c(&self.train), c(&self.valid)]
    }

    /// Items whose pseudo label equals `label`.
    pub fn subset(items: &[Item], labels: &[(u64, u8)], label: u8) -> Vec<Item> {
        items.iter().zip(labels).filter(|(_, (_, l))| *l == label).map(|(it, _)| it.clone()).collect()
    }
}

/// Routes every sample by the classifier's prediction, never by its label.
pub fn pseudo_split(c2: &AestheticNet<f64>, train: &[Item], valid: &[Item]) -> Result<SplitAssignment> {
    let route = |items: &[Item]| -> Result<Vec<(u64, u8)>> {
        let imgs: Vec<&Tensor<f64>> = items.iter().map(|i| &i.image).collect();
        Ok(items.iter().zip(class_predictions(c2, &imgs)?).map(|(it, p)| (it.id, p as u8)).collect())
    };
    let split = SplitAssignment { train: route(train)?, valid: route(valid)? };
    let [[t0, t1], [v0, v1]] = split.counts();
    log::info!("pseudo split: train {t0}/{t1}, valid {v0}/{v1}");
    if t0 == 0 || t1 == 0 {
        log::warn!("pseudo split left a training branch empty");
    }
    Ok(split)
}

/// Mean of the routed branch score and the all-data score, clamped to [0, 10].
pub fn fuse_score(label: u8, r0: f64, r1: f64, r_all: f64) -> f64 {
    let branch = if label == 0 { r0 } else { r1 };
    ((branch + r_all) / 2.0).clamp(0.0, 10.0)
}

/// The four models of the piecewise strategy. A missing branch falls back to
/// the all-data regressor.
#[derive(Clone, Debug)]
pub struct PcrModels {
    pub c2: AestheticNet<f64>,
    pub r0: Option<AestheticNet<f64>>,
    pub r1: Option<AestheticNet<f64>>,
    pub r_all: AestheticNet<f64>,
}

impl PcrModels {
    pub fn predict(&self, images: &[&Tensor<f64>]) -> Result<Vec<f64>> {
        let labels = class_predictions(&self.c2, images)?;
        let all = score_predictions(&self.r_all, images)?;
        let branch = |m: &Option<AestheticNet<f64>>| match m {
            Some(net) => score_predictions(net, images),
            None => Ok(all.clone()),
        };
        let s0 = branch(&self.r0)?;
        let s1 = branch(&self.r1)?;
        Ok((0..images.len()).map(|i| fuse_score(labels[i] as u8, s0[i], s1[i], all[i])).collect())
    }
}

use std::collections::HashSet;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::stages::{class_predictions, pseudo_split, score_predictions, train_binary, train_branch, train_cr, train_r};
use super::{binarize_label, Item, LoadedData, PcrModels, SplitAssignment, StageSet, TrainedModel, Variant};
use crate::config::RunConfig;
use crate::data::{make_amdc, Manifest, Split};
use crate::error::{Error, Result};
use crate::metrics::{segment_report, MetricsReport, SegmentRow};
use crate::nn::Prep;
use crate::tensor::Tensor;

/// One cell of the ablation matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RunSpec {
    pub variant: Variant,
    pub prep: Prep,
    pub eca: bool,
    pub mrn: bool,
    pub seed: u64,
}

impl RunSpec {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self { variant: cfg.train.variant, prep: cfg.model.prep, eca: cfg.model.eca, mrn: cfg.train.mrn, seed: cfg.train.seed }
    }

    pub fn apply(&self, cfg: &RunConfig) -> RunConfig {
        let mut c = cfg.clone();
        c.train.variant = self.variant;
        c.model.prep = self.prep;
        c.model.eca = self.eca;
        c.train.mrn = self.mrn;
        c.train.seed = self.seed;
        c
    }
}

/// Trained models of one run.
#[derive(Clone, Debug)]
pub enum Models {
    Single(TrainedModel),
    Pcr { c2: TrainedModel, r0: Option<TrainedModel>, r1: Option<TrainedModel>, r_all: TrainedModel, split: SplitAssignment },
}

impl Models {
    /// Scores in [0, 10] for each image.
    pub fn predict(&self, images: &[&Tensor<f64>]) -> Result<Vec<f64>> {
        match self {
            Models::Single(m) => Ok(score_predictions(&m.net, images)?.into_iter().map(|s| s.clamp(0.0, 10.0)).collect()),
            Models::Pcr { c2, r0, r1, r_all, .. } => PcrModels {
                c2: c2.net.clone(),
                r0: r0.as_ref().map(|m| m.net.clone()),
                r1: r1.as_ref().map(|m| m.net.clone()),
                r_all: r_all.net.clone(),
            }
            .predict(images),
        }
    }
}

fn role_seed(seed: u64, role: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(role)
}

fn amdc_ids(manifest: &Manifest, split: Split, seed: u64) -> Result<HashSet<u64>> {
    let part = Manifest::new(manifest.samples.iter().filter(|s| s.split == split).cloned().collect());
    Ok(make_amdc(&part, seed)?.samples.iter().map(|s| s.id).collect())
}

/// Binary classifier on the mid-range-free, class-balanced subsets.
pub fn train_pseudo_labeller(cfg: &RunConfig, data: &LoadedData, manifest: &Manifest, meta: &[Item]) -> Result<TrainedModel> {
    let seed = cfg.train.seed;
    let tr_ids = amdc_ids(manifest, Split::Train, role_seed(seed, 10))?;
    let va_ids = amdc_ids(manifest, Split::Valid, role_seed(seed, 11))?;
    let train: Vec<Item> = data.train.iter().filter(|i| tr_ids.contains(&i.id)).cloned().collect();
    let valid: Vec<Item> = data.valid.iter().filter(|i| va_ids.contains(&i.id)).cloned().collect();
    train_binary(StageSet { train: &train, valid: &valid, meta }, cfg, cfg.train.mrn, role_seed(seed, 0))
}

/// Branch models for an existing pseudo-label assignment.
pub fn train_pcr_branches(
    cfg: &RunConfig,
    data: &LoadedData,
    split: &SplitAssignment,
    meta: &[Item],
) -> Result<[Option<TrainedModel>; 2]> {
    let seed = cfg.train.seed;
    let min_batch = cfg.scaled_batch(cfg.train.batch_class).max(cfg.scaled_batch(cfg.train.batch_reg));
    let mut out = [None, None];
    for b in 0..2u8 {
        let train = SplitAssignment::subset(&data.train, &split.train, b);
        let valid = SplitAssignment::subset(&data.valid, &split.valid, b);
        if train.len() < min_batch || valid.is_empty() {
            log::warn!("branch {b} has {} training and {} validation samples, falling back to the all-data model", train.len(), valid.len());
            continue;
        }
        let meta_b: Vec<Item> = meta.iter().filter(|m| m.score.is_some_and(|s| binarize_label(s).ok() == Some(b))).cloned().collect();
        let set = StageSet { train: &train, valid: &valid, meta: if meta_b.is_empty() { meta } else { &meta_b } };
        out[b as usize] = Some(train_branch(set, cfg, cfg.train.mrn, role_seed(seed, 2 + b as u64))?);
    }
    Ok(out)
}

/// Clean meta items for a run; empty when reweighting is off.
pub fn run_meta_set(cfg: &RunConfig, data: &LoadedData) -> Result<Vec<Item>> {
    if cfg.train.mrn {
        data.meta_set(cfg.meta.quota, role_seed(cfg.train.seed, 20))
    } else {
        Ok(Vec::new())
    }
}

/// Single-model variants (R, CR), or the all-data regressor of PCR.
pub fn train_single(cfg: &RunConfig, data: &LoadedData, meta: &[Item]) -> Result<TrainedModel> {
    let all = StageSet { train: &data.train, valid: &data.valid, meta };
    let seed = role_seed(cfg.train.seed, 1);
    match cfg.train.variant {
        Variant::R => train_r(all, cfg, cfg.train.mrn, seed),
        Variant::Cr | Variant::Pcr => train_cr(all, cfg, cfg.train.mrn, seed),
    }
}

/// Trains every model the configured variant needs.
pub fn train_variant(cfg: &RunConfig, data: &LoadedData, manifest: &Manifest) -> Result<Models> {
    let meta = run_meta_set(cfg, data)?;
    match cfg.train.variant {
        Variant::R | Variant::Cr => Ok(Models::Single(train_single(cfg, data, &meta)?)),
        Variant::Pcr => {
            let c2 = train_pseudo_labeller(cfg, data, manifest, &meta)?;
            let split = pseudo_split(&c2.net, &data.train, &data.valid)?;
            let r_all = train_single(cfg, data, &meta)?;
            let [r0, r1] = train_pcr_branches(cfg, data, &split, &meta)?;
            Ok(Models::Pcr { c2, r0, r1, r_all, split })
        }
    }
}

/// Test-split evaluation of one trained run.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub spec: RunSpec,
    pub report: MetricsReport,
    /// `(id, prediction, truth)` on the test split.
    pub predictions: Vec<(u64, f64, f64)>,
    /// Binary classifier correctness per segment on the test split.
    pub segments: Option<Vec<SegmentRow>>,
    pub models: Models,
}

pub fn evaluate_models(models: &Models, test: &[Item]) -> Result<(MetricsReport, Vec<(u64, f64, f64)>)> {
    if test.is_empty() {
        return Err(Error::Data("empty test split".into()));
    }
    let imgs: Vec<&Tensor<f64>> = test.iter().map(|i| &i.image).collect();
    let pred = models.predict(&imgs)?;
    let truth: Vec<f64> = test.iter().map(Item::score).collect::<Result<_>>()?;
    let rows = test.iter().zip(pred.iter().zip(&truth)).map(|(it, (&p, &t))| (it.id, p, t)).collect();
    Ok((MetricsReport::compute(&pred, &truth)?, rows))
}

pub fn classifier_segments(c2: &TrainedModel, test: &[Item]) -> Result<Vec<SegmentRow>> {
    let imgs: Vec<&Tensor<f64>> = test.iter().map(|i| &i.image).collect();
    let labels: Vec<u8> = class_predictions(&c2.net, &imgs)?.into_iter().map(|l| l as u8).collect();
    let truth: Vec<f64> = test.iter().map(Item::score).collect::<Result<_>>()?;
    segment_report(&labels, &truth)
}

/// Load, train and evaluate one configuration.
pub fn run_experiment(cfg: &RunConfig, manifest: &Manifest, manifest_path: &Path, spec: RunSpec) -> Result<Experiment> {
    let cfg = spec.apply(cfg);
    cfg.validate()?;
    let data = LoadedData::load(manifest, manifest_path, cfg.model.prep, cfg.model.input_side)?;
    let models = train_variant(&cfg, &data, manifest)?;
    let (report, predictions) = evaluate_models(&models, &data.test)?;
    let segments = match &models {
        Models::Pcr { c2, .. } => Some(classifier_segments(c2, &data.test)?),
        Models::Single(_) => None,
    };
    log::info!("{spec:?}: srocc {:.4} mse {:.4}", report.srocc, report.mse);
    Ok(Experiment { spec, report, predictions, segments, models })
}

pub const ABLATION_HEADER: [&str; 11] =
    ["variant", "prep", "eca", "mrn", "seed", "n", "mse", "mae", "srocc", "accuracy", "accuracy_err_le_1"];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub spec: RunSpec,
    pub report: MetricsReport,
}

impl AblationRow {
    pub fn record(&self) -> Vec<String> {
        let s = &self.spec;
        let on = |b: bool| if b { "on" } else { "off" }.to_string();
        let mut r = vec![s.variant.to_string(), s.prep.to_string(), on(s.eca), on(s.mrn), s.seed.to_string()];
        r.extend(self.report.csv_row());
        r
    }
}

/// The configured matrix in a fixed order: variant, prep, eca, mrn, seed.
pub fn ablation_matrix(cfg: &RunConfig) -> Vec<RunSpec> {
    let a = &cfg.ablation;
    let mut out = Vec::new();
    for &variant in &a.variants {
        for &prep in &a.preps {
            for &eca in &a.eca {
                for &mrn in &a.mrn {
                    for &seed in &a.seeds {
                        out.push(RunSpec { variant, prep, eca, mrn, seed });
                    }
                }
            }
        }
    }
    out
}

/// Runs every matrix cell on up to `threads` workers; rows come back in
/// matrix order regardless of scheduling.
pub fn run_ablation(cfg: &RunConfig, manifest: &Manifest, manifest_path: &Path, threads: usize) -> Result<Vec<AblationRow>> {
    let specs = ablation_matrix(cfg);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<AblationRow>>>> = Mutex::new((0..specs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, specs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&spec) = specs.get(i) else { break };
                let r = run_experiment(cfg, manifest, manifest_path, spec).map(|e| AblationRow { spec, report: e.report });
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    results.into_inner().unwrap().into_iter().map(|r| r.expect("every cell is run")).collect()
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ABLATION_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

//! Staged training: binary pseudo-labeller, ten-class then regression
//! branches, fused scoring, and the variant ablation harness.

mod ablation;
mod artifacts;
mod objectives;
mod persist;
mod stages;
mod train;

pub use ablation::{
    ablation_matrix, classifier_segments, evaluate_models, run_ablation, run_experiment, train_pcr_branches,
    run_meta_set, train_pseudo_labeller, train_single, train_variant, write_ablation_csv, AblationRow, Experiment, Models, RunSpec, ABLATION_HEADER,
};
pub use artifacts::{
    read_scatter_csv, read_split_csv, write_metrics_csv, write_scatter_csv, write_segment_csv, write_split_csv,
};
pub use objectives::{ClassObjective, HeadScoreObjective, ScoreObjective};
pub use persist::{load_model, model_checkpoint, restore_model, save_model};
pub use stages::{
    class_predictions, features, fuse_score, pseudo_split, score_predictions, train_binary, train_branch, train_cr, train_r,
    PcrModels, SplitAssignment, StageSet, TrainedModel,
};
pub use train::{run_phase, EpochLog, MrnMode, PhaseOutcome, PhaseSpec};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::data::{load_image, Manifest, Sample, Split};
use crate::error::{Error, Result};
use crate::meta::{build_meta_set, Example, Target};
use crate::nn::Prep;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Regression only.
    R,
    /// Ten-class training, then the regression head on frozen features.
    Cr,
    /// Binary pseudo-labels route samples to per-branch CR models.
    Pcr,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::R => "r",
            Variant::Cr => "cr",
            Variant::Pcr => "pcr",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "r" => Ok(Variant::R),
            "cr" => Ok(Variant::Cr),
            "pcr" => Ok(Variant::Pcr),
            _ => Err(Error::Config(format!("unknown variant {s:?} (r | cr | pcr)"))),
        }
    }
}

fn check_range(score: f64) -> Result<()> {
    if (0.0..=10.0).contains(&score) {
        Ok(())
    } else {
        Err(Error::Data(format!("score {score} outside [0, 10]")))
    }
}

/// 1 for scores of at least 5.
pub fn binarize_label(score: f64) -> Result<u8> {
    check_range(score)?;
    Ok(u8::from(score >= 5.0))
}

/// Class `A` covers `(A, A+1]`; a score of exactly 0 joins class 0.
pub fn ten_class_label(score: f64) -> Result<usize> {
    check_range(score)?;
    Ok((score.ceil() as usize).saturating_sub(1))
}

/// One prepared sample. The corruption flag is deliberately absent: nothing
/// downstream of loading can see it.
#[derive(Clone, Debug, PartialEq)]
pub struct Item {
    pub id: u64,
    pub image: Tensor<f64>,
    pub score: Option<f64>,
    pub binary: u8,
}

impl Item {
    pub fn score(&self) -> Result<f64> {
        self.score.ok_or_else(|| Error::Data(format!("sample {} has no score", self.id)))
    }

    pub fn binary_example(&self) -> Example<f64> {
        Example { input: self.image.clone(), target: Target::Class(self.binary as usize) }
    }

    pub fn ten_class_example(&self) -> Result<Example<f64>> {
        Ok(Example { input: self.image.clone(), target: Target::Class(ten_class_label(self.score()?)?) })
    }

    pub fn score_example(&self) -> Result<Example<f64>> {
        Ok(Example { input: self.image.clone(), target: Target::Score(self.score()?) })
    }
}

pub fn prepare_image(img: &Tensor<f64>, prep: Prep, side: usize) -> Result<Tensor<f64>> {
    prep.apply(img, side)
}

pub fn load_item(manifest_path: &Path, s: &Sample, prep: Prep, side: usize) -> Result<Item> {
    let img = load_image::<f64>(&Manifest::resolve(manifest_path, s))?;
    Ok(Item { id: s.id, image: prepare_image(&img, prep, side)?, score: s.score, binary: s.binary_label })
}

/// All splits of a manifest, loaded and prepared.
#[derive(Clone, Debug, Default)]
pub struct LoadedData {
    pub train: Vec<Item>,
    pub valid: Vec<Item>,
    pub test: Vec<Item>,
    pub meta_pool: Vec<Item>,
}

impl LoadedData {
    pub fn load(manifest: &Manifest, manifest_path: &Path, prep: Prep, side: usize) -> Result<Self> {
        let mut out = Self::default();
        for s in &manifest.samples {
            let item = load_item(manifest_path, s, prep, side)?;
            match s.split {
                Split::Train => out.train.push(item),
                Split::Valid => out.valid.push(item),
                Split::Test => out.test.push(item),
                Split::Meta => out.meta_pool.push(item),
            }
        }
        Ok(out)
    }

    /// Balanced meta set drawn from the meta pool, or from the validation
    /// split when no meta pool exists.
    pub fn meta_set(&self, quota: usize, seed: u64) -> Result<Vec<Item>> {
        let pool = if self.meta_pool.is_empty() {
            log::warn!("no meta pool in the manifest, drawing the meta set from the validation split");
            &self.valid
        } else {
            &self.meta_pool
        };
        let scores: Vec<f64> = pool.iter().map(Item::score).collect::<Result<_>>()?;
        let ms = build_meta_set(&scores, quota, seed);
        Ok(ms.indices.iter().map(|&i| pool[i].clone()).collect())
    }
}

#[cfg(test)]
mod tests;

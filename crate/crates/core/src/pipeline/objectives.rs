use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::meta::{Example, Objective, Target};
use crate::nn::{cross_entropy_row, AestheticNet, Bound};

fn class_of(ex: &Example<f64>) -> Result<usize> {
    match ex.target {
        Target::Class(k) => Ok(k),
        Target::Score(_) => Err(Error::Data("classification objective given a score target".into())),
    }
}

fn score_of(ex: &Example<f64>) -> Result<f64> {
    match ex.target {
        Target::Score(s) => Ok(s),
        Target::Class(_) => Err(Error::Data("regression objective given a class target".into())),
    }
}

/// Cross-entropy of the classification head on an image.
pub struct ClassObjective<'a> {
    pub net: &'a AestheticNet<f64>,
}

impl Objective<f64> for ClassObjective<'_> {
    fn loss<'t>(&self, tape: &'t Tape<f64>, p: &Bound<'t, f64>, ex: &Example<f64>) -> Result<Var<'t, f64>> {
        let f = self.net.features(p, tape.constant(ex.input.clone()))?;
        cross_entropy_row(self.net.class_logits(p, f)?, class_of(ex)?)?.sum()
    }
}

/// Squared error of the regression head on an image.
pub struct ScoreObjective<'a> {
    pub net: &'a AestheticNet<f64>,
}

impl Objective<f64> for ScoreObjective<'_> {
    fn loss<'t>(&self, tape: &'t Tape<f64>, p: &Bound<'t, f64>, ex: &Example<f64>) -> Result<Var<'t, f64>> {
        let f = self.net.features(p, tape.constant(ex.input.clone()))?;
        self.net.score(p, f)?.sum()?.add_scalar(-score_of(ex)?)?.square()
    }
}

/// Squared error of the regression head on precomputed backbone features.
pub struct HeadScoreObjective<'a> {
    pub net: &'a AestheticNet<f64>,
}

impl Objective<f64> for HeadScoreObjective<'_> {
    fn loss<'t>(&self, tape: &'t Tape<f64>, p: &Bound<'t, f64>, ex: &Example<f64>) -> Result<Var<'t, f64>> {
        let f = tape.constant(ex.input.clone());
        self.net.score(p, f)?.sum()?.add_scalar(-score_of(ex)?)?.square()
    }
}

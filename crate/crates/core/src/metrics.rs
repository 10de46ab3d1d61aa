//! Evaluation metrics for score regression and binary classification.

use std::fmt;

use crate::error::{Error, Result};

/// Scores at or above this are positive.
pub const THRESHOLD: f64 = 5.0;

fn check(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Data(format!("length mismatch: {} predictions, {} targets", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::Data("empty input".into()));
    }
    Ok(())
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// 1-based ranks, ties share the average of the positions they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman correlation together with a flag that is set when either
/// input is constant and the value was reported as 0.
pub fn srocc_flagged(pred: &[f64], truth: &[f64]) -> Result<(f64, bool)> {
    check(pred, truth)?;
    if pred.len() < 2 {
        return Err(Error::Data("srocc needs at least 2 samples".into()));
    }
    let rp = average_ranks(pred);
    let rt = average_ranks(truth);
    let distinct = |r: &[f64]| r.iter().all(|v| v.fract() == 0.0) && {
        let mut s = r.to_vec();
        s.sort_by(f64::total_cmp);
        s.windows(2).all(|w| w[0] != w[1])
    };
    if distinct(&rp) && distinct(&rt) {
        let n = pred.len() as f64;
        let d2: f64 = rp.iter().zip(&rt).map(|(a, b)| (a - b) * (a - b)).sum();
        return Ok((1.0 - 6.0 * d2 / (n * n * n - n), false));
    }
    match pearson(&rp, &rt) {
        Some(r) => Ok((r, false)),
        None => {
            log::warn!("srocc undefined for a constant vector, reporting 0");
            Ok((0.0, true))
        }
    }
}

pub fn srocc(pred: &[f64], truth: &[f64]) -> Result<f64> {
    srocc_flagged(pred, truth).map(|(r, _)| r)
}

pub fn accuracy(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| (**p >= THRESHOLD) == (**t >= THRESHOLD)).count();
    Ok(hits as f64 / pred.len() as f64)
}

pub fn accuracy_within_1(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| (**p - **t).abs() <= 1.0).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Segment index 0..=9 of a score, with 10 folded into the last segment.
pub fn segment_of(score: f64) -> usize {
    (score.floor().max(0.0) as usize).min(9)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentRow {
    pub label: String,
    pub total: usize,
    pub correct: usize,
}

impl SegmentRow {
    /// `None` for a segment without samples.
    pub fn correctness(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }

    pub fn error_rate(&self) -> Option<f64> {
        self.correctness().map(|c| 1.0 - c)
    }
}

/// Per-segment correctness of binary predictions against continuous truth.
pub fn segment_report(pred_labels: &[u8], truth_scores: &[f64]) -> Result<Vec<SegmentRow>> {
    if pred_labels.len() != truth_scores.len() {
        return Err(Error::Data("length mismatch in segment report".into()));
    }
    let mut rows: Vec<SegmentRow> = (0..10)
        .map(|s| SegmentRow { label: format!("{:.1}-{:.1}", s as f64, s as f64 + 1.0), total: 0, correct: 0 })
        .collect();
    for (&p, &t) in pred_labels.iter().zip(truth_scores) {
        let row = &mut rows[segment_of(t)];
        row.total += 1;
        if p == u8::from(t >= THRESHOLD) {
            row.correct += 1;
        }
    }
    Ok(rows)
}

/// Pooled error rate over the given segments, `None` when they are empty.
pub fn pooled_error_rate(rows: &[SegmentRow], segments: &[usize]) -> Option<f64> {
    let total: usize = segments.iter().map(|&s| rows[s].total).sum();
    let correct: usize = segments.iter().map(|&s| rows[s].correct).sum();
    (total > 0).then(|| 1.0 - correct as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub n: usize,
    pub mse: f64,
    pub mae: f64,
    pub srocc: f64,
    pub accuracy: f64,
    pub accuracy_err_le_1: f64,
    pub per_segment: Vec<SegmentRow>,
}

impl MetricsReport {
    pub fn compute(pred: &[f64], truth: &[f64]) -> Result<Self> {
        let labels: Vec<u8> = pred.iter().map(|&p| u8::from(p >= THRESHOLD)).collect();
        Ok(Self {
            n: pred.len(),
            mse: mse(pred, truth)?,
            mae: mae(pred, truth)?,
            srocc: srocc(pred, truth)?,
            accuracy: accuracy(pred, truth)?,
            accuracy_err_le_1: accuracy_within_1(pred, truth)?,
            per_segment: segment_report(&labels, truth)?,
        })
    }

    pub const CSV_HEADER: [&'static str; 6] = ["n", "mse", "mae", "srocc", "accuracy", "accuracy_err_le_1"];

    pub fn csv_row(&self) -> [String; 6] {
        [
            self.n.to_string(),
            self.mse.to_string(),
            self.mae.to_string(),
            self.srocc.to_string(),
            self.accuracy.to_string(),
            self.accuracy_err_le_1.to_string(),
        ]
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n          {}", self.n)?;
        writeln!(f, "mse        {:.6}", self.mse)?;
        writeln!(f, "mae        {:.6}", self.mae)?;
        writeln!(f, "srocc      {:.6}", self.srocc)?;
        writeln!(f, "accuracy   {:.6}", self.accuracy)?;
        writeln!(f, "acc |e|<=1 {:.6}", self.accuracy_err_le_1)?;
        writeln!(f, "segment    n      correct")?;
        for row in &self.per_segment {
            match row.correctness() {
                Some(c) => writeln!(f, "{:<10} {:<6} {:.2}%", row.label, row.total, 100.0 * c)?,
                None => writeln!(f, "{:<10} {:<6} -", row.label, row.total)?,
            }
        }
        Ok(())
    }
}

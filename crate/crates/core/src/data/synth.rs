//! Procedural images whose score is a fixed linear function of visible
//! attributes plus Gaussian noise.
//!
//! Each sample draws `a ~ N(0, I)` over (brightness, contrast, blob offset,
//! noise level) and gets `score = clamp(5 + weights·a + N(0, σ²), 0, 10)`.
//! The image is a flat background at the brightness level carrying one
//! Gaussian blob whose amplitude encodes contrast and whose horizontal
//! centre encodes the offset, plus pixel noise of the encoded level.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{save_ppm, split_811, Manifest, Sample, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ATTRIBUTES: [&str; 4] = ["brightness", "contrast", "blob_offset", "noise"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Corruption {
    /// Adds a fixed signed offset to the score, clamped to [0, 10].
    ScoreShift(f64),
    /// Flips the binary label and mirrors the score to `10 - s`.
    LabelFlip,
}

impl fmt::Display for Corruption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Corruption::ScoreShift(s) => write!(f, "score_shift:{s}"),
            Corruption::LabelFlip => f.write_str("label_flip"),
        }
    }
}

impl FromStr for Corruption {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "label_flip" {
            return Ok(Corruption::LabelFlip);
        }
        if let Some(v) = s.strip_prefix("score_shift:") {
            if let Ok(x) = v.parse::<f64>() {
                if x.is_finite() {
                    return Ok(Corruption::ScoreShift(x));
                }
            }
        }
        Err(Error::Config(format!("unknown corruption {s:?} (label_flip | score_shift:<delta>)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub weights: [f64; 4],
    pub score_noise: f64,
    /// Fraction of train samples that get corrupted.
    pub corruption_fraction: f64,
    pub corruption: Corruption,
    /// Extra clean samples tagged `meta`, outside the 8:1:1 split.
    pub meta_pool: usize,
    pub min_side: usize,
    pub max_side: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            weights: [1.0, 0.8, 0.4, -0.6],
            score_noise: 0.5,
            corruption_fraction: 0.0,
            corruption: Corruption::ScoreShift(3.0),
            meta_pool: 0,
            min_side: 12,
            max_side: 20,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !w.is_finite()) || !(self.score_noise >= 0.0 && self.score_noise.is_finite()) {
            return Err(Error::Config("score weights and noise must be finite, noise ≥ 0".into()));
        }
        if !(0.0..=1.0).contains(&self.corruption_fraction) {
            return Err(Error::Config(format!("corruption fraction {} outside [0, 1]", self.corruption_fraction)));
        }
        if self.min_side < 4 || self.min_side > self.max_side {
            return Err(Error::Config(format!("image sides need 4 ≤ min ≤ max, got {}..{}", self.min_side, self.max_side)));
        }
        Ok(())
    }

    /// Standard deviation of the unclamped score.
    pub fn population_std(&self) -> f64 {
        (self.weights.iter().map(|w| w * w).sum::<f64>() + self.score_noise * self.score_noise).sqrt()
    }

    pub fn score(&self, attrs: &[f64; 4], noise: f64) -> f64 {
        let s = 5.0 + self.weights.iter().zip(attrs).map(|(w, a)| w * a).sum::<f64>() + noise;
        s.clamp(0.0, 10.0)
    }
}

/// Render an RGB image for the given attribute vector.
pub fn render(attrs: &[f64; 4], h: usize, w: usize, rng: &mut impl Rng) -> Tensor<f64> {
    let brightness = (0.5 + 0.12 * attrs[0]).clamp(0.1, 0.9);
    let amplitude = (0.25 + 0.08 * attrs[1]).clamp(0.02, 0.5);
    let cx = (0.5 + 0.15 * attrs[2]).clamp(0.1, 0.9) * (w as f64 - 1.0);
    let cy = 0.5 * (h as f64 - 1.0);
    let noise = (0.08 + 0.03 * attrs[3]).clamp(0.0, 0.2);
    let radius = 0.2 * h.min(w) as f64;
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.03..0.03));
    let mut data = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let d2 = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)) / (2.0 * radius * radius);
            let base = brightness + amplitude * (-d2).exp();
            for c in 0..3 {
                let z: f64 = StandardNormal.sample(rng);
                data[(c * h + y) * w + x] = (base + tint[c] + noise * z).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::from_parts(vec![3, h, w], data)
}

fn corrupt(s: &mut Sample, kind: Corruption) {
    let v = s.score.unwrap_or(0.0);
    match kind {
        Corruption::ScoreShift(d) => {
            let nv = (v + d).clamp(0.0, 10.0);
            s.score = Some(nv);
            s.binary_label = u8::from(nv >= 5.0);
        }
        Corruption::LabelFlip => {
            s.score = Some(10.0 - v);
            s.binary_label = 1 - s.binary_label;
        }
    }
    s.corrupted = true;
}

/// Generate `n` split samples plus `spec.meta_pool` meta samples, writing
/// one PPM per sample under `dir/images`. The manifest is returned with
/// paths relative to `dir`.
pub fn generate_dataset(spec: &SynthSpec, n: usize, seed: u64, dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    if n < 10 {
        return Err(Error::Config(format!("need at least 10 samples, got {n}")));
    }
    let images = dir.join("images");
    std::fs::create_dir_all(&images)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let score_noise = Normal::new(0.0, spec.score_noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut samples = Vec::with_capacity(n + spec.meta_pool);
    for id in 0..(n + spec.meta_pool) as u64 {
        let attrs: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let score = spec.score(&attrs, score_noise.sample(&mut rng));
        let h = rng.random_range(spec.min_side..=spec.max_side);
        let w = rng.random_range(spec.min_side..=spec.max_side);
        let img = render(&attrs, h, w, &mut rng);
        let rel = format!("images/{id:06}.ppm");
        save_ppm(&dir.join(&rel), &img)?;
        samples.push(Sample {
            id,
            path: rel,
            score: Some(score),
            binary_label: u8::from(score >= 5.0),
            corrupted: false,
            split: if id as usize >= n { Split::Meta } else { Split::Train },
        });
    }
    let mut m = split_811(&Manifest::new(samples), seed ^ 0x5eed)?;
    let mut eligible: Vec<usize> = (0..m.len()).filter(|&i| m.samples[i].split == Split::Train).collect();
    eligible.shuffle(&mut rng);
    let k = (spec.corruption_fraction * eligible.len() as f64).round() as usize;
    for &i in &eligible[..k] {
        corrupt(&mut m.samples[i], spec.corruption);
    }
    Ok(m)
}

//! Datasets, images and checkpoints.

mod checkpoint;
mod image;
mod synth;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION, MAGIC};
pub use image::{load_image, parse_pnm, save_pgm, save_ppm, write_pnm};
pub use synth::{generate_dataset, render, Corruption, SynthSpec, ATTRIBUTES};

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Valid,
    Test,
    Meta,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
            Split::Meta => "meta",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            "meta" => Ok(Split::Meta),
            _ => Err(Error::Format(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: u64,
    /// Image path, relative to the manifest's directory unless absolute.
    pub path: String,
    /// Absent for discrete-only samples.
    pub score: Option<f64>,
    pub binary_label: u8,
    pub corrupted: bool,
    pub split: Split,
}

impl Sample {
    pub fn score_or_err(&self) -> Result<f64> {
        self.score.ok_or_else(|| Error::Data(format!("sample {} has no score", self.id)))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub samples: Vec<Sample>,
}

pub const MANIFEST_HEADER: [&str; 6] = ["id", "path", "score", "binary_label", "corrupted", "split"];

impl Manifest {
    pub fn new(samples: Vec<Sample>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(MANIFEST_HEADER)?;
        for s in &self.samples {
            w.write_record([
                s.id.to_string(),
                s.path.clone(),
                s.score.map(|v| v.to_string()).unwrap_or_default(),
                s.binary_label.to_string(),
                u8::from(s.corrupted).to_string(),
                s.split.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers()?.clone();
        if header.iter().ne(MANIFEST_HEADER) {
            return Err(Error::Format(format!("manifest header must be {}", MANIFEST_HEADER.join(","))));
        }
        let mut samples = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| Error::Format(format!("manifest row {}: bad {what}", line + 1));
            let score = match &rec[2] {
                "" => None,
                v => {
                    let x: f64 = v.parse().map_err(|_| bad("score"))?;
                    if !x.is_finite() {
                        return Err(bad("score"));
                    }
                    Some(x)
                }
            };
            let binary_label = match &rec[3] {
                "0" => 0,
                "1" => 1,
                _ => return Err(bad("binary_label")),
            };
            let corrupted = match &rec[4] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("corrupted")),
            };
            samples.push(Sample {
                id: rec[0].parse().map_err(|_| bad("id"))?,
                path: rec[1].to_string(),
                score,
                binary_label,
                corrupted,
                split: rec[5].parse()?,
            });
        }
        Ok(Self { samples })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    /// Resolve a sample's image path against the manifest location.
    pub fn resolve(manifest_path: &Path, sample: &Sample) -> PathBuf {
        let p = Path::new(&sample.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            manifest_path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }
}

/// Binary-task dataset: drops scores strictly inside (4, 6) and downsamples
/// the majority class to a 1:1 ratio.
pub fn make_amdc(m: &Manifest, seed: u64) -> Result<Manifest> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for s in &m.samples {
        let v = s.score_or_err()?;
        if v > 4.0 && v < 6.0 {
            continue;
        }
        if s.binary_label == 1 {
            pos.push(s.clone());
        } else {
            neg.push(s.clone());
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Data(format!("binary dataset needs both classes, got {} positive and {} negative", pos.len(), neg.len())));
    }
    let keep = pos.len().min(neg.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep_ids = std::collections::HashSet::new();
    for class in [&mut pos, &mut neg] {
        if class.len() > keep {
            class.shuffle(&mut rng);
            class.truncate(keep);
        }
        keep_ids.extend(class.iter().map(|s| s.id));
    }
    Ok(Manifest::new(m.samples.iter().filter(|s| keep_ids.contains(&s.id)).cloned().collect()))
}

/// Regression dataset: keeps `mid_keep_fraction` of the samples scored in
/// (4, 6) and everything else.
pub fn make_amdr(m: &Manifest, mid_keep_fraction: f64, seed: u64) -> Result<Manifest> {
    if !(0.0..=1.0).contains(&mid_keep_fraction) {
        return Err(Error::Config(format!("mid_keep_fraction {mid_keep_fraction} outside [0, 1]")));
    }
    let mut mid: Vec<usize> = Vec::new();
    for (i, s) in m.samples.iter().enumerate() {
        let v = s.score_or_err()?;
        if v > 4.0 && v < 6.0 {
            mid.push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    mid.shuffle(&mut rng);
    let keep = (mid_keep_fraction * mid.len() as f64).round() as usize;
    let dropped: std::collections::HashSet<usize> = mid[keep..].iter().copied().collect();
    Ok(Manifest::new(m.samples.iter().enumerate().filter(|(i, _)| !dropped.contains(i)).map(|(_, s)| s.clone()).collect()))
}

/// Counts for an 8:1:1 partition of `n` by largest remainder.
pub fn split_counts(n: usize) -> [usize; 3] {
    let ratios = [8usize, 1, 1];
    let mut counts = ratios.map(|r| n * r / 10);
    let mut rem: Vec<(usize, usize)> = ratios.iter().enumerate().map(|(i, r)| (n * r % 10, i)).collect();
    // larger remainder first, earlier split on ties
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = n - counts.iter().sum::<usize>();
    for &(_, i) in rem.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

/// Retags every non-meta sample as train/valid/test in 8:1:1 proportion.
pub fn split_811(m: &Manifest, seed: u64) -> Result<Manifest> {
    let mut idx: Vec<usize> = (0..m.len()).filter(|&i| m.samples[i].split != Split::Meta).collect();
    if idx.len() < 10 {
        return Err(Error::Data(format!("need at least 10 samples to split, got {}", idx.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let [tr, va, _] = split_counts(idx.len());
    let mut out = m.clone();
    for (k, &i) in idx.iter().enumerate() {
        out.samples[i].split = if k < tr {
            Split::Train
        } else if k < tr + va {
            Split::Valid
        } else {
            Split::Test
        };
    }
    Ok(out)
}

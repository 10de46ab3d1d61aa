//! Run configuration: a flat `key = value` file with `[section]` headers.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data::{Corruption, SynthSpec};
use crate::error::{Error, Result};
use crate::meta::MetaConfig;
use crate::nn::{BackboneConfig, KernelMode, NetConfig, Prep};
use crate::pipeline::Variant;

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub n: usize,
    pub seed: u64,
    pub synth: SynthSpec,
    pub mid_keep_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub stem_channels: usize,
    pub stage_channels: Vec<usize>,
    pub head_channels: usize,
    pub eca: bool,
    pub eca_mode: KernelMode,
    pub prep: Prep,
    /// Square side every input is brought to.
    pub input_side: usize,
    /// Post-stem pooling extent for the adaptive path.
    pub aab_pool: usize,
    pub score_bias: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub mrn: bool,
    pub seed: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs_binary: usize,
    pub epochs_class: usize,
    pub epochs_reg: usize,
    pub batch_class: usize,
    pub batch_reg: usize,
    /// Multiplies both batch sizes.
    pub batch_scale: f64,
    pub patience: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaSection {
    pub beta: f64,
    pub normalize: bool,
    pub meta_batch: usize,
    pub quota: usize,
    pub hidden: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationConfig {
    pub variants: Vec<Variant>,
    pub preps: Vec<Prep>,
    pub eca: Vec<bool>,
    pub mrn: Vec<bool>,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub meta: MetaSection,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    /// Desk-scale defaults.
    fn default() -> Self {
        Self {
            data: DataConfig {
                n: 2000,
                seed: 1,
                synth: SynthSpec { meta_pool: 400, corruption_fraction: 0.3, ..SynthSpec::default() },
                mid_keep_fraction: 1.0,
            },
            model: ModelConfig {
                stem_channels: 8,
                stage_channels: vec![16, 24],
                head_channels: 16,
                eca: true,
                eca_mode: KernelMode::CeilOdd,
                prep: Prep::Aab,
                input_side: 16,
                aab_pool: 8,
                score_bias: 5.0,
            },
            train: TrainConfig {
                variant: Variant::Pcr,
                mrn: true,
                seed: 1,
                lr: 1e-2,
                weight_decay: 1e-4,
                beta1: 0.98,
                beta2: 0.999,
                epochs_binary: 15,
                epochs_class: 15,
                epochs_reg: 15,
                batch_class: 32,
                batch_reg: 64,
                batch_scale: 0.5,
                patience: 2,
            },
            meta: MetaSection { beta: 1e-4, normalize: true, meta_batch: 16, quota: 20, hidden: 100 },
            ablation: AblationConfig {
                variants: vec![Variant::R, Variant::Cr, Variant::Pcr],
                preps: vec![Prep::Aab],
                eca: vec![true],
                mrn: vec![false, true],
                seeds: vec![1, 2, 3],
            },
        }
    }
}

fn parse<T: FromStr>(section: &str, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("[{section}] {key}: cannot parse {v:?}")))
}

fn parse_bool(section: &str, key: &str, v: &str) -> Result<bool> {
    match v {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("[{section}] {key}: expected on/off, got {v:?}"))),
    }
}

fn parse_list<T>(section: &str, key: &str, v: &str, item: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let out: Vec<T> = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(item).collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::Config(format!("[{section}] {key}: empty list")));
    }
    Ok(out)
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn on_off(b: bool) -> String {
    if b { "on" } else { "off" }.to_string()
}

impl RunConfig {
    /// Parse config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section = String::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key = value", no + 1)));
            };
            cfg.set(&section, k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, section: &str, key: &str, v: &str) -> Result<()> {
        let (s, k) = (section, key);
        match (s, k) {
            ("data", "n") => self.data.n = parse(s, k, v)?,
            ("data", "seed") => self.data.seed = parse(s, k, v)?,
            ("data", "score_weights") => {
                let w: Vec<f64> = parse_list(s, k, v, |x| parse(s, k, x))?;
                self.data.synth.weights =
                    w.try_into().map_err(|_| Error::Config("[data] score_weights needs 4 values".into()))?;
            }
            ("data", "score_noise") => self.data.synth.score_noise = parse(s, k, v)?,
            ("data", "corruption_fraction") => self.data.synth.corruption_fraction = parse(s, k, v)?,
            ("data", "corruption") => self.data.synth.corruption = v.parse::<Corruption>()?,
            ("data", "meta_pool") => self.data.synth.meta_pool = parse(s, k, v)?,
            ("data", "min_side") => self.data.synth.min_side = parse(s, k, v)?,
            ("data", "max_side") => self.data.synth.max_side = parse(s, k, v)?,
            ("data", "mid_keep_fraction") => self.data.mid_keep_fraction = parse(s, k, v)?,
            ("model", "stem_channels") => self.model.stem_channels = parse(s, k, v)?,
            ("model", "stage_channels") => self.model.stage_channels = parse_list(s, k, v, |x| parse(s, k, x))?,
            ("model", "head_channels") => self.model.head_channels = parse(s, k, v)?,
            ("model", "eca") => self.model.eca = parse_bool(s, k, v)?,
            ("model", "eca_mode") => self.model.eca_mode = v.parse()?,
            ("model", "prep") => self.model.prep = v.parse()?,
            ("model", "input_side") => self.model.input_side = parse(s, k, v)?,
            ("model", "aab_pool") => self.model.aab_pool = parse(s, k, v)?,
            ("model", "score_bias") => self.model.score_bias = parse(s, k, v)?,
            ("train", "variant") => self.train.variant = v.parse()?,
            ("train", "mrn") => self.train.mrn = parse_bool(s, k, v)?,
            ("train", "seed") => self.train.seed = parse(s, k, v)?,
            ("train", "lr") => self.train.lr = parse(s, k, v)?,
            ("train", "weight_decay") => self.train.weight_decay = parse(s, k, v)?,
            ("train", "beta1") => self.train.beta1 = parse(s, k, v)?,
            ("train", "beta2") => self.train.beta2 = parse(s, k, v)?,
            ("train", "epochs_binary") => self.train.epochs_binary = parse(s, k, v)?,
            ("train", "epochs_class") => self.train.epochs_class = parse(s, k, v)?,
            ("train", "epochs_reg") => self.train.epochs_reg = parse(s, k, v)?,
            ("train", "batch_class") => self.train.batch_class = parse(s, k, v)?,
            ("train", "batch_reg") => self.train.batch_reg = parse(s, k, v)?,
            ("train", "batch_scale") => self.train.batch_scale = parse(s, k, v)?,
            ("train", "patience") => self.train.patience = parse(s, k, v)?,
            ("meta", "beta") => self.meta.beta = parse(s, k, v)?,
            ("meta", "normalize") => self.meta.normalize = parse_bool(s, k, v)?,
            ("meta", "meta_batch") => self.meta.meta_batch = parse(s, k, v)?,
            ("meta", "quota") => self.meta.quota = parse(s, k, v)?,
            ("meta", "hidden") => self.meta.hidden = parse(s, k, v)?,
            ("ablation", "variants") => self.ablation.variants = parse_list(s, k, v, str::parse)?,
            ("ablation", "preps") => self.ablation.preps = parse_list(s, k, v, str::parse)?,
            ("ablation", "eca") => self.ablation.eca = parse_list(s, k, v, |x| parse_bool(s, k, x))?,
            ("ablation", "mrn") => self.ablation.mrn = parse_list(s, k, v, |x| parse_bool(s, k, x))?,
            ("ablation", "seeds") => self.ablation.seeds = parse_list(s, k, v, |x| parse(s, k, x))?,
            _ => return Err(Error::Config(format!("unknown key [{s}] {k}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, &'static str, String)> {
        let (d, m, t, me, a) = (&self.data, &self.model, &self.train, &self.meta, &self.ablation);
        vec![
            ("data", "n", d.n.to_string()),
            ("data", "seed", d.seed.to_string()),
            ("data", "score_weights", join(&d.synth.weights)),
            ("data", "score_noise", d.synth.score_noise.to_string()),
            ("data", "corruption_fraction", d.synth.corruption_fraction.to_string()),
            ("data", "corruption", d.synth.corruption.to_string()),
            ("data", "meta_pool", d.synth.meta_pool.to_string()),
            ("data", "min_side", d.synth.min_side.to_string()),
            ("data", "max_side", d.synth.max_side.to_string()),
            ("data", "mid_keep_fraction", d.mid_keep_fraction.to_string()),
            ("model", "stem_channels", m.stem_channels.to_string()),
            ("model", "stage_channels", join(&m.stage_channels)),
            ("model", "head_channels", m.head_channels.to_string()),
            ("model", "eca", on_off(m.eca)),
            ("model", "eca_mode", m.eca_mode.to_string()),
            ("model", "prep", m.prep.to_string()),
            ("model", "input_side", m.input_side.to_string()),
            ("model", "aab_pool", m.aab_pool.to_string()),
            ("model", "score_bias", m.score_bias.to_string()),
            ("train", "variant", t.variant.to_string()),
            ("train", "mrn", on_off(t.mrn)),
            ("train", "seed", t.seed.to_string()),
            ("train", "lr", t.lr.to_string()),
            ("train", "weight_decay", t.weight_decay.to_string()),
            ("train", "beta1", t.beta1.to_string()),
            ("train", "beta2", t.beta2.to_string()),
            ("train", "epochs_binary", t.epochs_binary.to_string()),
            ("train", "epochs_class", t.epochs_class.to_string()),
            ("train", "epochs_reg", t.epochs_reg.to_string()),
            ("train", "batch_class", t.batch_class.to_string()),
            ("train", "batch_reg", t.batch_reg.to_string()),
            ("train", "batch_scale", t.batch_scale.to_string()),
            ("train", "patience", t.patience.to_string()),
            ("meta", "beta", me.beta.to_string()),
            ("meta", "normalize", on_off(me.normalize)),
            ("meta", "meta_batch", me.meta_batch.to_string()),
            ("meta", "quota", me.quota.to_string()),
            ("meta", "hidden", me.hidden.to_string()),
            ("ablation", "variants", join(&a.variants)),
            ("ablation", "preps", join(&a.preps)),
            ("ablation", "eca", a.eca.iter().map(|&b| on_off(b)).collect::<Vec<_>>().join(",")),
            ("ablation", "mrn", a.mrn.iter().map(|&b| on_off(b)).collect::<Vec<_>>().join(",")),
            ("ablation", "seeds", join(&a.seeds)),
        ]
    }

    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (s, k, v) in self.entries() {
            if s != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{s}]\n"));
                current = s;
            }
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// First 8 bytes of the SHA-256 of the canonical serialization.
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.to_ini().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    /// Hash of the `[model]` section alone, stamped into model checkpoints.
    pub fn model_hash(&self) -> u64 {
        let text: String =
            self.entries().into_iter().filter(|(s, _, _)| *s == "model").map(|(_, k, v)| format!("{k} = {v}\n")).collect();
        let digest = Sha256::digest(text.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    pub fn validate(&self) -> Result<()> {
        self.data.synth.validate()?;
        let t = &self.train;
        if !(t.lr > 0.0 && t.batch_scale > 0.0) || t.patience == 0 {
            return Err(Error::Config("lr, batch_scale and patience must be positive".into()));
        }
        if self.model.input_side < 4 || self.model.aab_pool == 0 || self.model.aab_pool > self.model.input_side / 2 {
            return Err(Error::Config(format!(
                "need input_side ≥ 4 and 1 ≤ aab_pool ≤ input_side / 2, got {} and {}",
                self.model.input_side, self.model.aab_pool
            )));
        }
        if self.meta.hidden == 0 || self.meta.quota == 0 || self.meta.meta_batch == 0 {
            return Err(Error::Config("meta hidden, quota and meta_batch must be positive".into()));
        }
        self.meta_config(1).validate()
    }

    pub fn scaled_batch(&self, base: usize) -> usize {
        ((base as f64 * self.train.batch_scale).round() as usize).max(1)
    }

    /// Network layout for a model with `num_classes` classification outputs.
    pub fn net_config(&self, num_classes: usize) -> NetConfig {
        let m = &self.model;
        NetConfig {
            backbone: BackboneConfig {
                in_channels: 3,
                stem_channels: m.stem_channels,
                stage_channels: m.stage_channels.clone(),
                eca: m.eca,
                eca_mode: m.eca_mode,
                aab_pool_target: (m.prep == Prep::Aab).then_some(m.aab_pool),
            },
            head_channels: m.head_channels,
            num_classes,
            score_bias: m.score_bias,
        }
    }

    pub fn meta_config(&self, batch_size: usize) -> MetaConfig {
        MetaConfig {
            alpha: self.train.lr,
            beta: self.meta.beta,
            batch_size,
            meta_batch_size: self.meta.meta_batch,
            normalize_weights: self.meta.normalize,
            betas: (self.train.beta1, self.train.beta2),
            weight_decay: self.train.weight_decay,
            mrn_weight_decay: 0.0,
            freeze_mrn: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_hash() {
        let c = RunConfig::default();
        let back = RunConfig::parse(&c.to_ini()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut d = c.clone();
        d.train.lr = 1e-4;
        assert_ne!(d.hash(), c.hash());
        for (s, k, v) in c.entries() {
            let mut e = RunConfig::default();
            e.set(s, k, &v).unwrap();
            assert_eq!(e, c);
        }
    }

    #[test]
    fn parses_sections_and_comments() {
        let text = "# desk run\n[train]\nvariant = cr  # baseline\nmrn = off\n\n[model]\nprep=crop\nstage_channels = 4, 8\n[ablation]\nseeds = 4,5\n";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.train.variant, Variant::Cr);
        assert!(!c.train.mrn);
        assert_eq!(c.model.prep, Prep::Crop);
        assert_eq!(c.model.stage_channels, vec![4, 8]);
        assert_eq!(c.ablation.seeds, vec![4, 5]);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "[train]\nlearning_rate = 1\n",
            "lr = 1\n",
            "[train]\nlr\n",
            "[train]\nlr = fast\n",
            "[train]\nmrn = maybe\n",
            "[train]\nvariant = rcr\n",
            "[data]\nscore_weights = 1,2\n",
            "[model]\naab_pool = 9\n",
            "[train]\nlr = 0\n",
        ] {
            assert!(matches!(RunConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn derived_configs() {
        let c = RunConfig::default();
        assert_eq!(c.scaled_batch(32), 16);
        assert_eq!(c.net_config(2).backbone.aab_pool_target, Some(8));
        let mut crop = c.clone();
        crop.model.prep = Prep::Crop;
        assert_eq!(crop.net_config(10).backbone.aab_pool_target, None);
        assert_eq!(c.meta_config(8).alpha, c.train.lr);
    }
}

use rand_chacha::ChaCha8Rng;

use super::{Bound, Conv2d, EcaBlock, KernelMode, ParamStore};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Layout of the small convolutional feature extractor.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stage_channels: Vec<usize>,
    pub eca: bool,
    pub eca_mode: KernelMode,
    /// Pool the stem output to this extent (the adaptive block); `None` for
    /// crop / resize inputs.
    pub aab_pool_target: Option<usize>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            stem_channels: 24,
            stage_channels: vec![48, 96, 128],
            eca: true,
            eca_mode: KernelMode::CeilOdd,
            aab_pool_target: None,
        }
    }
}

/// Stride-2 stem followed by stride-2 stages, each optionally gated by ECA.
#[derive(Clone, Debug, PartialEq)]
pub struct MiniBackbone {
    pub stem: Conv2d,
    pub stages: Vec<(Conv2d, Option<EcaBlock>)>,
    pub pool_target: Option<usize>,
    pub out_channels: usize,
}

impl MiniBackbone {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, cfg: &BackboneConfig) -> Result<Self> {
        if cfg.in_channels == 0 || cfg.stem_channels == 0 || cfg.stage_channels.contains(&0) {
            return Err(Error::Config("backbone channel counts must be positive".into()));
        }
        let stem = Conv2d::new(store, rng, "backbone.stem", cfg.in_channels, cfg.stem_channels, 3, 2, 1);
        let mut c_in = cfg.stem_channels;
        let mut stages = Vec::with_capacity(cfg.stage_channels.len());
        for (i, &c_out) in cfg.stage_channels.iter().enumerate() {
            let conv = Conv2d::new(store, rng, &format!("backbone.stage{i}"), c_in, c_out, 3, 2, 1);
            let eca = if cfg.eca {
                Some(EcaBlock::new(store, rng, &format!("backbone.stage{i}.eca"), c_out, cfg.eca_mode)?)
            } else {
                None
            };
            stages.push((conv, eca));
            c_in = c_out;
        }
        Ok(Self { stem, stages, pool_target: cfg.aab_pool_target, out_channels: c_in })
    }

    /// `C_in×H×W` image to a `C_f×h×w` feature map.
    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut h = self.stem.forward(p, x)?.relu()?;
        if let Some(t) = self.pool_target {
            let d = h.dims();
            h = h.adaptive_avg_pool2d(t.min(d[1]), t.min(d[2]))?;
        }
        for (conv, eca) in &self.stages {
            h = conv.forward(p, h)?.relu()?;
            if let Some(eca) = eca {
                h = eca.forward(p, h)?;
            }
        }
        Ok(h)
    }
}

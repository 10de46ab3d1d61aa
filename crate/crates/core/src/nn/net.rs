use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BackboneConfig, Bound, Head, MiniBackbone, ParamId, ParamStore};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub backbone: BackboneConfig,
    /// Width of each head's reducing convolution.
    pub head_channels: usize,
    pub num_classes: usize,
    /// Initial regression bias, the centre of the score range.
    pub score_bias: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { backbone: BackboneConfig::default(), head_channels: 448, num_classes: 10, score_bias: 5.0 }
    }
}

/// Shared backbone with a classification head and a regression head.
#[derive(Clone, Debug, PartialEq)]
pub struct AestheticNet<T> {
    pub config: NetConfig,
    pub params: ParamStore<T>,
    pub backbone: MiniBackbone,
    pub class_head: Head,
    pub reg_head: Head,
    groups: [Range<usize>; 3],
}

/// Parameter groups used for freezing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Backbone,
    ClassHead,
    RegHead,
}

impl<T: Scalar> AestheticNet<T> {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        if config.num_classes < 2 || config.head_channels == 0 {
            return Err(Error::Config("heads need >= 2 classes and a positive width".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let backbone = MiniBackbone::new(&mut params, &mut rng, &config.backbone)?;
        let b_end = params.len();
        let c_f = backbone.out_channels;
        let class_head = Head::new(&mut params, &mut rng, "class_head", c_f, config.head_channels, config.num_classes);
        let c_end = params.len();
        let reg_head = Head::new(&mut params, &mut rng, "reg_head", c_f, config.head_channels, 1);
        *params.get_mut(reg_head.fc.bias) = Tensor::full(vec![1], T::lit(config.score_bias));
        let groups = [0..b_end, b_end..c_end, c_end..params.len()];
        Ok(Self { config, params, backbone, class_head, reg_head, groups })
    }

    pub fn group(&self, id: ParamId) -> Group {
        if self.groups[0].contains(&id.0) {
            Group::Backbone
        } else if self.groups[1].contains(&id.0) {
            Group::ClassHead
        } else {
            Group::RegHead
        }
    }

    pub fn group_ids(&self, group: Group) -> Vec<ParamId> {
        let r = match group {
            Group::Backbone => &self.groups[0],
            Group::ClassHead => &self.groups[1],
            Group::RegHead => &self.groups[2],
        };
        r.clone().map(ParamId).collect()
    }

    pub fn features<'t>(&self, p: &Bound<'t, T>, image: Var<'t, T>) -> Result<Var<'t, T>> {
        self.backbone.forward(p, image)
    }

    pub fn class_logits<'t>(&self, p: &Bound<'t, T>, features: Var<'t, T>) -> Result<Var<'t, T>> {
        self.class_head.forward(p, features)
    }

    /// Scalar score as a length-1 var.
    pub fn score<'t>(&self, p: &Bound<'t, T>, features: Var<'t, T>) -> Result<Var<'t, T>> {
        self.reg_head.forward(p, features)
    }
}

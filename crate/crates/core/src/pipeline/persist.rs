use std::path::Path;

use super::TrainedModel;
use crate::config::RunConfig;
use crate::data::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::error::{Error, Result};
use crate::nn::{AestheticNet, Mrn, NetConfig, ParamStore};
use crate::optim::{Adam, AdamConfig};

/// Network and reweighting-network parameters (the latter keep their `mrn.`
/// names), main-optimizer moments and step count.
pub fn model_checkpoint(model: &TrainedModel, config_hash: u64) -> Checkpoint {
    let named = |s: &ParamStore<f64>| s.names().iter().cloned().zip(s.tensors().iter().cloned()).collect::<Vec<_>>();
    let mut params = named(&model.net.params);
    if let Some(mrn) = &model.mrn {
        params.extend(named(&mrn.params));
    }
    let mut moments = Vec::with_capacity(2 * model.adam.m.len());
    for (i, m) in model.adam.m.iter().enumerate() {
        moments.push((format!("adam.m.{i}"), m.clone()));
    }
    for (i, v) in model.adam.v.iter().enumerate() {
        moments.push((format!("adam.v.{i}"), v.clone()));
    }
    Checkpoint { params, moments, t: model.adam.t, config_hash }
}

fn fill(store: &mut ParamStore<f64>, name: &str, value: &crate::tensor::Tensor<f64>) -> Result<()> {
    let id = store.find(name).ok_or_else(|| Error::Format(format!("checkpoint parameter {name:?} not in the model")))?;
    if store.get(id).dims() != value.dims() {
        return Err(Error::Config(format!(
            "{name}: checkpoint dims {:?}, model dims {:?}",
            value.dims(),
            store.get(id).dims()
        )));
    }
    *store.get_mut(id) = value.clone();
    Ok(())
}

/// Rebuilds a model of layout `config` from checkpoint records, by name.
pub fn restore_model(ck: &Checkpoint, config: NetConfig, adam: AdamConfig) -> Result<TrainedModel> {
    let mut net = AestheticNet::new(config, 0)?;
    let mut mrn = ck.param("mrn.w1").map(|w1| Mrn::<f64>::with_hidden(0, w1.dims().last().copied().unwrap_or(0)));
    let expected = net.params.len() + mrn.as_ref().map_or(0, |m| m.params.len());
    if ck.params.len() != expected {
        return Err(Error::Format(format!("checkpoint has {} parameters, model needs {expected}", ck.params.len())));
    }
    for (name, value) in &ck.params {
        match (&mut mrn, name.starts_with("mrn.")) {
            (Some(m), true) => fill(&mut m.params, name, value)?,
            _ => fill(&mut net.params, name, value)?,
        }
    }
    let mut opt = Adam::new(adam, net.params.tensors());
    if !ck.moments.is_empty() {
        let n = net.params.len();
        if ck.moments.len() != 2 * n {
            return Err(Error::Format(format!("{} moment records for {n} parameters", ck.moments.len())));
        }
        for (i, (_, t)) in ck.moments.iter().enumerate() {
            let (slot, j) = if i < n { (&mut opt.m, i) } else { (&mut opt.v, i - n) };
            if slot[j].dims() != t.dims() {
                return Err(Error::Format(format!("moment {i} has dims {:?}", t.dims())));
            }
            slot[j] = t.clone();
        }
        opt.t = ck.t;
    }
    Ok(TrainedModel { net, mrn, adam: opt, logs: Vec::new() })
}

pub fn save_model(path: &Path, model: &TrainedModel, cfg: &RunConfig) -> Result<()> {
    save_checkpoint(path, &model_checkpoint(model, cfg.model_hash()))
}

/// Loads a model saved under the same `[model]` section.
pub fn load_model(path: &Path, cfg: &RunConfig, num_classes: usize) -> Result<TrainedModel> {
    let ck = load_checkpoint(path, Some(cfg.model_hash()))?;
    restore_model(&ck, cfg.net_config(num_classes), cfg.meta_config(1).main_adam())
}

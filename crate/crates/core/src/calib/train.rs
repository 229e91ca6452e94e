use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{batch_inputs, CalibNet, CalibNetConfig, CalibSample};
use crate::error::{Error, Result};
use crate::optics::SrFactor;
use crate::seeds;
use crate::tensornet::{l1_loss, Adam, AdamConfig, Mode};

/// Samples per evaluation batch; results do not depend on it.
const EVAL_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 64, lr: 1e-3, lr_decay: 0.999, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_l1: f64,
    pub val_l1: f64,
    pub lr: f64,
}

impl EpochLog {
    pub fn to_line(&self) -> String {
        format!(
            "epoch={} train_l1={:.9e} val_l1={:.9e} lr={:.9e}",
            self.epoch, self.train_l1, self.val_l1, self.lr
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Network state from the epoch with the lowest validation loss.
    pub net: CalibNet,
    pub log: Vec<EpochLog>,
    /// 0 when no epoch beat the untrained network.
    pub best_epoch: usize,
    pub initial_val_l1: f64,
    pub best_val_l1: f64,
}

/// Mean per-pixel ℓ1 between network output and targets (evaluation mode).
pub fn mean_l1(net: &CalibNet, samples: &[CalibSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty sample set"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&CalibSample> = chunk.iter().collect();
        let (inputs, targets) = batch_inputs(&refs)?;
        let out = net.infer(&inputs)?;
        let (loss, _) = l1_loss(&out, &targets)?;
        total += loss * targets.data().len() as f64;
        count += targets.data().len();
    }
    Ok(total / count as f64)
}

/// Trains a fresh network with Adam on the mean ℓ1 loss.
///
/// An empty `val` set selects the checkpoint by training-set loss instead.
pub fn train_calib(
    train: &[CalibSample],
    val: &[CalibSample],
    net_config: &CalibNetConfig,
    sr: SrFactor,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::invalid("epochs and batch size must be >= 1"));
    }
    for s in train.iter().chain(val) {
        s.check(sr)?;
    }
    let val = if val.is_empty() { train } else { val };
    let mut net = CalibNet::new(net_config.clone(), sr, seeds::derive(config.seed, 1))?;
    let mut opt = Adam::new(AdamConfig { lr: config.lr, epoch_decay: config.lr_decay, ..AdamConfig::default() });
    let mut order_rng = seeds::rng(seeds::derive(config.seed, 2));

    let initial_val_l1 = mean_l1(&net, val)?;
    let mut best = (0usize, initial_val_l1, net.clone());
    let mut log = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut order_rng);
        let lr = opt.lr();
        let mut total = 0.0;
        for idx in order.chunks(config.batch_size) {
            let refs: Vec<&CalibSample> = idx.iter().map(|&i| &train[i]).collect();
            let (inputs, targets) = batch_inputs(&refs)?;
            net.zero_grad();
            let out = net.forward(&inputs, Mode::Train)?;
            let (loss, grad) = l1_loss(&out, &targets)?;
            if !loss.is_finite() {
                return Err(Error::numerical(format!("non-finite training loss at epoch {epoch}")));
            }
            net.backward(&grad)?;
            opt.step(&mut net.params_mut())?;
            total += loss * refs.len() as f64;
        }
        opt.epoch_end();
        let val_l1 = mean_l1(&net, val)?;
        if !val_l1.is_finite() {
            return Err(Error::numerical(format!("non-finite validation loss at epoch {epoch}")));
        }
        let entry = EpochLog { epoch, train_l1: total / train.len() as f64, val_l1, lr };
        log::info!("{}", entry.to_line());
        log.push(entry);
        if val_l1 < best.1 {
            best = (epoch, val_l1, net.clone());
        }
    }
    let (best_epoch, best_val_l1, net) = best;
    Ok(TrainOutcome { net, log, best_epoch, initial_val_l1, best_val_l1 })
}

//! Training procedures for the three strategies, the optimizer and its
//! schedule, and image-only inference.

mod itm;
mod model;
mod optim;
mod trainer;

use serde::{Deserialize, Serialize};

pub use itm::{make_itm_pairs, ItmPair};
pub use model::{argmax, infer, predict_logits, ArchConfig, Bound, EncoderChoice, Model, ModelConfig, Strategy};
pub use optim::{early_stop, lr_at, rmsprop_step, RmsPropState};
pub use trainer::{
    accuracy, assemble_batch, batch_losses, component_names, component_weights, load_history, save_history, train,
    train_baseline, train_fusion, train_itm, weighted_total, write_history, BatchInputs, EpochRecord, ItmBatch,
    LossTerm, TrainOutcome,
};

use crate::data::{AttributeMask, DatasetHeader};
use crate::error::{Error, Result};
use crate::losses::LossConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_peak: f64,
    pub lr_final: f64,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub rmsprop_alpha: f64,
    pub rmsprop_eps: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub arch: ArchConfig,
    /// Descriptive attributes kept in captions; `None` keeps all.
    pub attribute_keep: Option<Vec<String>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 128,
            lr_init: 1e-5,
            lr_peak: 1e-4,
            lr_final: 1e-5,
            warmup_epochs: 10,
            weight_decay: 5e-4,
            rmsprop_alpha: 0.99,
            rmsprop_eps: 1e-8,
            early_stop_patience: 5,
            seed: 0,
            loss: LossConfig::default(),
            arch: ArchConfig::default(),
            attribute_keep: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return fail("epochs must be ≥ 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be ≥ 1");
        }
        if [self.lr_init, self.lr_peak, self.lr_final].iter().any(|&lr| !(lr > 0.0) || !lr.is_finite()) {
            return fail("learning rates must be positive");
        }
        if self.warmup_epochs > self.epochs {
            return fail("warmup_epochs must not exceed epochs");
        }
        if self.early_stop_patience == 0 {
            return fail("early_stop_patience must be ≥ 1");
        }
        if !(0.0..1.0).contains(&self.rmsprop_alpha) || !(self.rmsprop_eps > 0.0) || !(self.weight_decay >= 0.0) {
            return fail("rmsprop_alpha must be in [0, 1), rmsprop_eps > 0 and weight_decay ≥ 0");
        }
        self.loss.validate()
    }

    pub fn attribute_mask(&self, header: &DatasetHeader) -> Result<AttributeMask> {
        match &self.attribute_keep {
            None => Ok(AttributeMask::all(header)),
            Some(keep) => AttributeMask::keep(header, "custom", keep),
        }
    }
}

//! Two-phase training: word-classifier pretraining, then adversarial
//! training with several critic updates per generator update.

mod checkpoint;
mod classifier;
mod gan;
mod metrics;

pub use checkpoint::{params_fingerprint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use classifier::{
    pretrain_word_classifier, train_classifier, ClassifierEpoch, ClassifierTrainConfig,
    TrainedClassifier, CLASSIFIER_KIND,
};
pub use gan::{
    train_gan, CriticWindow, GanRunOptions, GanState, TrainConfig, TrainedGenerator, GAN_KIND,
};
pub use metrics::{
    classifier_columns, gan_columns, trim_csv_after, CsvMetrics, MetricsLog, MetricsSink,
};

use rand::seq::SliceRandom;

use crate::rng;

/// `base_lr` until `decay_start`, then a linear ramp that reaches zero at
/// `total_epochs`.
pub fn lr_schedule_linear(
    base_lr: f64,
    epoch: usize,
    total_epochs: usize,
    decay_start: usize,
) -> f64 {
    if epoch < decay_start {
        return base_lr;
    }
    if epoch >= total_epochs {
        return 0.0;
    }
    base_lr * (total_epochs - epoch) as f64 / (total_epochs - decay_start) as f64
}

/// `base_lr * factor^epoch`, the per-epoch step decay of classifier training.
pub fn lr_schedule_exponential(base_lr: f64, epoch: usize, factor: f64) -> f64 {
    base_lr * factor.powi(epoch as i32)
}

// Stream tags, one per independent use of randomness.
pub(crate) const TAG_INIT: u64 = 1;
pub(crate) const TAG_SHUFFLE: u64 = 2;
pub(crate) const TAG_CRITIC: u64 = 3;
pub(crate) const TAG_GENERATOR: u64 = 4;

pub(crate) fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[TAG_SHUFFLE, epoch as u64]));
    order
}

//! Minibatch SGD for [`ModelParams`].
//!
//! Samples are first put in a canonical order (by a hash of pixels and label)
//! and then shuffled per epoch from the seed, so the result depends on the
//! dataset's contents and the seed but not on the order items were supplied.

use serde::{Deserialize, Serialize};

use crate::attacks::{pgd_perturb, AttackConfig};
use crate::dataset::Dataset;
use crate::defenses::PreprocessPipeline;
use crate::error::{Error, Result};
use crate::model::{content_key, loss_and_grad_continuous, predict, Loss, ModelParams};
use crate::rng::{derive_seed, SplitMix64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Heavy-ball momentum coefficient.
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Applied to every sample before it enters a batch.
    pub augmentation: Option<PreprocessPipeline>,
    /// When set, every other sample of each minibatch is replaced by a PGD
    /// example crafted on the current weights.
    pub adversarial: Option<AttackConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            lr: 0.03,
            momentum: 0.9,
            batch_size: 32,
            seed: 0,
            augmentation: None,
            adversarial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochStats>,
}

pub fn initial_params(classes: usize, seed: u64) -> ModelParams {
    ModelParams::init(classes, derive_seed(seed, 0))
}

pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<(ModelParams, TrainingLog)> {
    train_from(initial_params(dataset.classes(), cfg.seed), dataset, cfg)
}

pub fn train_from(
    mut params: ModelParams,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainingLog)> {
    if dataset.is_empty() {
        return Err(Error::Training {
            epoch: 0,
            message: "empty dataset".into(),
        });
    }
    if !(0.0..1.0).contains(&cfg.momentum) {
        return Err(Error::InvalidConfig(format!(
            "momentum must be in [0, 1), got {}",
            cfg.momentum
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }
    if let Some(aug) = &cfg.augmentation {
        aug.validate()?;
    }
    if let Some(adv) = &cfg.adversarial {
        adv.validate()?;
    }
    let mut canonical: Vec<(u64, usize)> = dataset
        .items
        .iter()
        .enumerate()
        .map(|(i, s)| (content_key(&s.image, s.label), i))
        .collect();
    canonical.sort_unstable();
    let canonical: Vec<usize> = canonical.into_iter().map(|(_, i)| i).collect();

    let mut velocity = ModelParams::zeros(params.classes);
    let mut log = TrainingLog::default();
    for epoch in 0..cfg.epochs {
        let epoch_seed = derive_seed(cfg.seed, 1 + epoch as u64);
        let mut order: Vec<usize> = (0..canonical.len()).collect();
        SplitMix64::new(epoch_seed).shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = ModelParams::zeros(params.classes);
            for (slot, &pos) in batch.iter().enumerate() {
                let sample = &dataset.items[canonical[pos]];
                let sample_seed = derive_seed(epoch_seed, pos as u64);
                let mut img = match &cfg.augmentation {
                    Some(p) => p.apply_seeded(&sample.image, sample_seed)?,
                    None => sample.image.clone(),
                };
                if let Some(adv) = &cfg.adversarial {
                    if slot % 2 == 1 {
                        let mut adv = adv.clone();
                        adv.seed = derive_seed(sample_seed, 7);
                        img = pgd_perturb(&params, &img, sample.label, &adv, false)?.last;
                    }
                }
                let lg = loss_and_grad_continuous(
                    &params,
                    &img.to_f64(),
                    sample.label,
                    Loss::CrossEntropy,
                    true,
                    false,
                )
                .map_err(|e| Error::Training {
                    epoch,
                    message: e.to_string(),
                })?;
                loss_sum += lg.loss;
                grad.add_scaled(
                    lg.param_grad.as_ref().expect("param gradient requested"),
                    1.0,
                );
            }
            velocity.scale(cfg.momentum);
            velocity.add_scaled(&grad, 1.0 / batch.len() as f64);
            params.add_scaled(&velocity, -cfg.lr);
            if !params.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: "non-finite weights".into(),
                });
            }
        }
        for s in &dataset.items {
            let p = predict(&params, &s.image).map_err(|e| Error::Training {
                epoch,
                message: e.to_string(),
            })?;
            if p.label == s.label {
                correct += 1;
            }
        }
        let mean_loss = loss_sum / dataset.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                message: format!("mean loss {mean_loss}"),
            });
        }
        log.epochs.push(EpochStats {
            epoch,
            mean_loss,
            train_accuracy: correct as f64 / dataset.len() as f64,
        });
    }
    Ok((params, log))
}

pub fn accuracy(params: &ModelParams, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::UndefinedRate("empty dataset".into()));
    }
    let mut correct = 0;
    for s in &dataset.items {
        if predict(params, &s.image)?.label == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

//! Minibatch training of the pretext objective with AdamW and a cosine
//! schedule.
//!
//! Every random choice (initialisation, epoch shuffles, which samples are
//! manipulated and how) comes from a stream derived from the run seed, so a
//! seed fixes the whole trajectory.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::FaceSample;
use crate::exif::ExifRecord;
use crate::losses::{loss_and_grad, LossError};
use crate::manipulation::{manipulate_or_fallback, ManipulationError, ManipulationKind, ManipulationParams};
use crate::model::{ModelConfig, ModelError, ModelParams, SampleInput};
use crate::optim::{cosine_lr, AdamConfig, AdamW, OptimError};
use crate::rng::{derive_seed, stream};
use crate::scalar::Scalar;
use crate::tensor::TensorError;

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_MANIPULATE: u64 = 3;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("manipulation needs image inputs")]
    ManipulationNeedsImages,
    #[error("non-finite loss or gradient at step {step}")]
    NonFiniteLoss { step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Manipulation(#[from] ManipulationError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Share of each batch replaced by a manipulated copy.
    pub manipulation_fraction: f64,
    /// Whether manipulated copies keep their source EXIF for ranking.
    pub rank_manipulated: bool,
    pub manipulation: ManipulationParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 1e-4,
            adam: AdamConfig::default(),
            seed: 0,
            manipulation_fraction: 0.5,
            rank_manipulated: true,
            manipulation: ManipulationParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch size {} is below 2", self.batch_size));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return bad(format!("learning rate {}", self.lr));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return bad(format!("weight decay {}", self.weight_decay));
        }
        if !(0.0..=1.0).contains(&self.manipulation_fraction) {
            return bad(format!("manipulation fraction {}", self.manipulation_fraction));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

pub fn write_log_csv<W: Write>(log: &[StepRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "step,epoch,lr,loss")?;
    for r in log {
        writeln!(out, "{},{},{},{}", r.step, r.epoch, r.lr, r.loss)?;
    }
    out.flush()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub log: Vec<StepRecord>,
}

/// One assembled minibatch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub rows: Vec<Vec<f64>>,
    pub records: Vec<ExifRecord>,
    pub labels: Vec<u8>,
}

/// Which batch positions get manipulated, and with what kind and seed.
fn manipulation_plan(cfg: &TrainConfig, step: usize, len: usize) -> Vec<Option<(ManipulationKind, u64)>> {
    let mut rng = stream(cfg.seed, &[STREAM_MANIPULATE, step as u64]);
    let count = (cfg.manipulation_fraction * len as f64).round() as usize;
    let mut positions: Vec<usize> = (0..len).collect();
    positions.shuffle(&mut rng);
    let mut plan = vec![None; len];
    for &p in &positions[..count.min(len)] {
        plan[p] = Some((ManipulationKind::sample(&mut rng), rng.random()));
    }
    plan
}

/// Network input, camera tags and manipulation label of one batch member.
type BatchRow = (Vec<f64>, ExifRecord, u8);

/// Builds the batch for `indices` at global step `step`.
pub fn assemble_batch(
    samples: &[FaceSample],
    clean_rows: &[Vec<f64>],
    indices: &[usize],
    step: usize,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<Batch, TrainError> {
    let plan = manipulation_plan(cfg, step, indices.len());
    let built: Vec<Result<BatchRow, TrainError>> = indices
        .par_iter()
        .zip(plan.par_iter())
        .map(|(&i, choice)| {
            let s = &samples[i];
            match choice {
                None => Ok((clean_rows[i].clone(), s.exif, 0)),
                Some((kind, seed)) => {
                    let SampleInput::Image(img) = &s.input else {
                        return Err(TrainError::ManipulationNeedsImages);
                    };
                    let m = manipulate_or_fallback(img, s.landmarks.as_ref(), *kind, *seed, &cfg.manipulation)?;
                    let row = model.prepare(&SampleInput::Image(m.image))?;
                    let exif = if cfg.rank_manipulated {
                        s.exif
                    } else {
                        ExifRecord::default()
                    };
                    Ok((row, exif, m.label))
                }
            }
        })
        .collect();
    let mut batch = Batch {
        rows: Vec::with_capacity(indices.len()),
        records: Vec::with_capacity(indices.len()),
        labels: Vec::with_capacity(indices.len()),
    };
    for b in built {
        let (row, rec, label) = b?;
        batch.rows.push(row);
        batch.records.push(rec);
        batch.labels.push(label);
    }
    Ok(batch)
}

/// Prepared clean inputs for every sample.
pub fn prepare_rows(samples: &[FaceSample], model: &ModelConfig) -> Result<Vec<Vec<f64>>, ModelError> {
    samples.par_iter().map(|s| model.prepare(&s.input)).collect()
}

/// Trains from a seeded initialisation; `on_step` sees every log record as
/// it is produced.
pub fn train<T: Scalar>(
    samples: &[FaceSample],
    model: &ModelConfig,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainOutcome<T>, TrainError> {
    cfg.validate()?;
    model.validate()?;
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if cfg.manipulation_fraction > 0.0 && samples.iter().any(|s| !matches!(s.input, SampleInput::Image(_))) {
        return Err(TrainError::ManipulationNeedsImages);
    }
    let mut params = ModelParams::<T>::init(model, derive_seed(cfg.seed, &[STREAM_INIT]))?;
    let clean_rows = prepare_rows(samples, model)?;
    let mut opt = AdamW::new(cfg.adam, params.tensors())?;
    let per_epoch = cfg.steps_per_epoch(samples.len());
    let total = cfg.epochs * per_epoch;
    let mut log = Vec::with_capacity(total);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut stream(cfg.seed, &[STREAM_SHUFFLE, epoch as u64]));
        for indices in order.chunks(cfg.batch_size) {
            let batch = assemble_batch(samples, &clean_rows, indices, step, model, cfg)?;
            let rows: Vec<&[f64]> = batch.rows.iter().map(Vec::as_slice).collect();
            let input = model.batch_tensor::<T>(&rows)?;
            let (loss, grads) = match loss_and_grad(&params, input, &batch.records, &batch.labels) {
                Err(LossError::Tensor(TensorError::NonFinite { .. })) => {
                    return Err(TrainError::NonFiniteLoss { step })
                }
                other => other?,
            };
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFiniteLoss { step });
            }
            let lr = cosine_lr(step, total, cfg.lr)?;
            opt.step(params.tensors_mut(), &grads, lr, cfg.weight_decay)?;
            let record = StepRecord {
                step,
                epoch,
                lr,
                loss: loss.as_f64(),
            };
            on_step(&record);
            log.push(record);
            step += 1;
        }
    }
    Ok(TrainOutcome { params, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, InputSpec};

    fn feature_samples(n: usize) -> Vec<FaceSample> {
        (0..n)
            .map(|i| {
                let u = (i as f64 * 0.61).sin();
                FaceSample {
                    id: format!("{i}"),
                    input: SampleInput::Features(vec![u, (i as f64 * 1.3).cos()]),
                    exif: ExifRecord {
                        aperture_f_number: Some(2.0 + u),
                        ..Default::default()
                    },
                    landmarks: None,
                    label: None,
                }
            })
            .collect()
    }

    fn small_model() -> ModelConfig {
        ModelConfig {
            input: InputSpec::Features { dim: 2 },
            arch: Architecture::Mlp { hidden: vec![8] },
            feature_dim: 4,
            patch_size: 16,
        }
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 8,
            manipulation_fraction: 0.0,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_init() {
        let cfg = TrainConfig { lr: 0.0, ..small_cfg() };
        let out = train::<f64>(&feature_samples(20), &small_model(), &cfg, |_| {}).unwrap();
        let init = ModelParams::<f64>::init(&small_model(), derive_seed(cfg.seed, &[STREAM_INIT])).unwrap();
        assert_eq!(out.params, init);
    }

    #[test]
    fn step_count_and_schedule() {
        let cfg = small_cfg();
        let out = train::<f64>(&feature_samples(20), &small_model(), &cfg, |_| {}).unwrap();
        assert_eq!(out.log.len(), 3 * 3);
        assert_eq!(out.log[0].lr, cfg.lr);
        assert!(out.log.iter().all(|r| r.loss.is_finite()));
    }

    #[test]
    fn seeded_runs_match() {
        let a = train::<f64>(&feature_samples(20), &small_model(), &small_cfg(), |_| {}).unwrap();
        let b = train::<f64>(&feature_samples(20), &small_model(), &small_cfg(), |_| {}).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn config_errors() {
        assert!(matches!(
            train::<f64>(&[], &small_model(), &small_cfg(), |_| {}),
            Err(TrainError::EmptyDataset)
        ));
        let cfg = TrainConfig {
            manipulation_fraction: 0.5,
            ..small_cfg()
        };
        assert!(matches!(
            train::<f64>(&feature_samples(4), &small_model(), &cfg, |_| {}),
            Err(TrainError::ManipulationNeedsImages)
        ));
        let cfg = TrainConfig {
            batch_size: 1,
            ..small_cfg()
        };
        assert!(train::<f64>(&feature_samples(4), &small_model(), &cfg, |_| {}).is_err());
    }

    #[test]
    fn manipulation_plan_counts() {
        let cfg = TrainConfig::default();
        let plan = manipulation_plan(&cfg, 3, 31);
        assert_eq!(plan.iter().filter(|p| p.is_some()).count(), 16);
        assert_eq!(plan, manipulation_plan(&cfg, 3, 31));
    }

    #[test]
    fn log_csv_format() {
        let mut out = Vec::new();
        let log = [StepRecord {
            step: 0,
            epoch: 0,
            lr: 0.001,
            loss: 0.5,
        }];
        write_log_csv(&log, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "step,epoch,lr,loss\n0,0,0.001,0.5\n");
    }
}

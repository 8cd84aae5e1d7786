//! End-to-end composition: train the pretext model, fit the mixture on
//! photographic features, calibrate the threshold and score test samples.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::FaceSample;
use crate::exif::ExifTag;
use crate::gmm::{fit_em, EmConfig, EmFit, GmmError, GmmModel};
use crate::losses::LossError;
use crate::metrics::{calibrate_threshold, DetectionReport, MetricError};
use crate::model::{ModelConfig, ModelError, ModelParams, HEAD_COUNT};
use crate::scalar::Scalar;
use crate::trainer::{prepare_rows, train, StepRecord, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub gmm: EmConfig,
    /// False-alarm rate used to calibrate the threshold.
    pub rate: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            gmm: EmConfig::default(),
            rate: 0.05,
        }
    }
}

/// Rows per forward pass when extracting features.
const CHUNK: usize = 256;

/// Extractor outputs for every sample, in input order.
pub fn extract_features<T: Scalar>(params: &ModelParams<T>, samples: &[FaceSample]) -> Result<Vec<Vec<T>>, ModelError> {
    let rows = prepare_rows(samples, params.config())?;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in rows.chunks(CHUNK) {
        let refs: Vec<&[f64]> = chunk.iter().map(Vec::as_slice).collect();
        out.extend(params.features(&refs)?);
    }
    Ok(out)
}

/// All head logits for every sample.
pub fn sample_logits<T: Scalar>(
    params: &ModelParams<T>,
    samples: &[FaceSample],
) -> Result<Vec<[T; HEAD_COUNT]>, ModelError> {
    let rows = prepare_rows(samples, params.config())?;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in rows.chunks(CHUNK) {
        let refs: Vec<&[f64]> = chunk.iter().map(Vec::as_slice).collect();
        out.extend(params.logits(&refs)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RankingAccuracy {
    /// `(correct, total)` per tag; equal logits count half.
    pub per_tag: [(f64, usize); 4],
}

impl RankingAccuracy {
    pub fn tag(&self, tag: ExifTag) -> Option<f64> {
        let (c, n) = self.per_tag[tag.index()];
        (n > 0).then(|| c / n as f64)
    }

    /// Correct share over the pairs of all tags together.
    pub fn pooled(&self) -> Option<f64> {
        let (c, n) = self.per_tag.iter().fold((0.0, 0), |(c, n), &(ci, ni)| (c + ci, n + ni));
        (n > 0).then(|| c / n as f64)
    }
}

/// Agreement between head orderings and tag orderings over all unordered
/// pairs whose tags are both present and differ.
pub fn ranking_accuracy<T: Scalar>(
    params: &ModelParams<T>,
    samples: &[FaceSample],
) -> Result<RankingAccuracy, ModelError> {
    let logits = sample_logits(params, samples)?;
    let mut acc = RankingAccuracy::default();
    for tag in ExifTag::ALL {
        let h = tag.index();
        let (mut correct, mut total) = (0.0, 0usize);
        for a in 0..samples.len() {
            let Some(ta) = samples[a].exif.get(tag) else { continue };
            for b in a + 1..samples.len() {
                let Some(tb) = samples[b].exif.get(tag) else { continue };
                if ta == tb {
                    continue;
                }
                total += 1;
                let d = logits[a][h] - logits[b][h];
                if d == T::zero() {
                    correct += 0.5;
                } else if (d > T::zero()) == (ta > tb) {
                    correct += 1.0;
                }
            }
        }
        acc.per_tag[h] = (correct, total);
    }
    Ok(acc)
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome<T> {
    pub params: ModelParams<T>,
    pub log: Vec<StepRecord>,
    pub gmm: EmFit<T>,
    /// Log-likelihoods of the training samples under the mixture.
    pub train_log_likelihoods: Vec<f64>,
    pub threshold: f64,
    pub report: DetectionReport,
    pub ranking: RankingAccuracy,
}

/// Log-likelihood of every sample's features.
pub fn score_samples<T: Scalar>(
    params: &ModelParams<T>,
    gmm: &GmmModel<T>,
    samples: &[FaceSample],
) -> Result<Vec<f64>, PipelineError> {
    let z = extract_features(params, samples)?;
    Ok(gmm.log_densities(&z)?.into_iter().map(Scalar::as_f64).collect())
}

/// Trains on `train_set`, fits the mixture to its features, sets the
/// threshold at `cfg.rate` of the training log-likelihoods and scores
/// `test_set`. Ranking accuracy is measured on the photographic test
/// samples (label 0 or unlabelled).
pub fn run_pipeline<T: Scalar>(
    train_set: &[FaceSample],
    test_set: &[FaceSample],
    cfg: &PipelineConfig,
    config_digest: Option<&str>,
    on_step: impl FnMut(&StepRecord),
) -> Result<PipelineOutcome<T>, PipelineError> {
    let trained = train::<T>(train_set, &cfg.model, &cfg.train, on_step)?;
    let params = trained.params;
    let train_z = extract_features(&params, train_set)?;
    let gmm = fit_em(&train_z, &cfg.gmm)?;
    let train_ll: Vec<f64> = gmm
        .model
        .log_densities(&train_z)?
        .into_iter()
        .map(Scalar::as_f64)
        .collect();
    let threshold = calibrate_threshold(&train_ll, cfg.rate)?;
    let test_ll = score_samples(&params, &gmm.model, test_set)?;
    let ids: Vec<String> = test_set.iter().map(|s| s.id.clone()).collect();
    let labels: Vec<Option<u8>> = test_set.iter().map(|s| s.label).collect();
    let report = DetectionReport::build(&ids, &test_ll, &labels, threshold, cfg.rate, config_digest)?;
    let clean: Vec<FaceSample> = test_set.iter().filter(|s| s.label != Some(1)).cloned().collect();
    let ranking = ranking_accuracy(&params, &clean)?;
    Ok(PipelineOutcome {
        params,
        log: trained.log,
        gmm,
        train_log_likelihoods: train_ll,
        threshold,
        report,
        ranking,
    })
}

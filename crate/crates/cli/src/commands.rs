//! Subcommand implementations. Each reads its inputs, writes its artifacts
//! and embeds the digest of the resolved run configuration.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use exifgmm_core::dataset::{load_samples, FaceSample};
use exifgmm_core::exif::emit_records;
use exifgmm_core::gmm::{fit_em, GmmError, GmmFile, GmmModel};
use exifgmm_core::metrics::{auc, average_precision, calibrate_threshold, histogram_svg, DetectionReport};
use exifgmm_core::model::ModelParams;
use exifgmm_core::pipeline::{extract_features, ranking_accuracy, score_samples, PipelineError, RankingAccuracy};
use exifgmm_core::synth::{synth_dataset, write_split, SynthSample};
use exifgmm_core::trainer::{train, write_log_csv, TrainError};
use exifgmm_core::{Gmm64, ModelParams64};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

pub const RUN_CONFIG_FILE: &str = "run_config.toml";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const CALIBRATION_FORMAT: &str = "exifgmm-calibration";
pub const SCORES_FILE: &str = "scores.csv";
pub const REPORT_FILE: &str = "report.json";
pub const HISTOGRAM_FILE: &str = "histogram.svg";

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn require_dir(path: &Path, what: &str) -> Result<(), CliError> {
    if !path.is_dir() {
        return Err(CliError::Usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

/// Explicit argument, else the config path, else a usage error.
pub fn pick_path(arg: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    arg.or_else(|| fallback.clone())
        .ok_or_else(|| CliError::Usage(format!("no {what} given on the command line or in the config")))
}

fn load_manifest(path: &Path) -> Result<Vec<FaceSample>, CliError> {
    require_file(path, "manifest")?;
    let samples = load_samples(path).with_context(|| format!("loading {}", path.display()))?;
    if samples.is_empty() {
        return Err(CliError::Usage(format!("manifest {} lists no samples", path.display())));
    }
    Ok(samples)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

/// Writes one JSON line per file to `out`; fails only when nothing parsed.
pub fn exif<W: Write>(paths: &[PathBuf], out: W) -> Result<(), CliError> {
    if paths.is_empty() {
        return Err(CliError::Usage("exif needs at least one input path".into()));
    }
    let parsed = emit_records(paths, out).context("writing records")?;
    if parsed == 0 {
        return Err(anyhow::anyhow!("none of the {} inputs parsed", paths.len()).into());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOutput {
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
}

/// Writes the training split and a test split holding the clean and the
/// anomalous faces together.
pub fn synth(cfg: &RunConfig, out_dir: &Path) -> Result<SynthOutput, CliError> {
    let ds = synth_dataset(
        cfg.seed,
        cfg.synth.sizes(),
        cfg.synth.anomaly_shift,
        &cfg.synth.config(),
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let test: Vec<SynthSample> = ds.test_clean.into_iter().chain(ds.test_anomalous).collect();
    let train_manifest = write_split(&ds.train, out_dir, "train").context("writing training split")?;
    let test_manifest = write_split(&test, out_dir, "test").context("writing test split")?;
    Ok(SynthOutput {
        train_manifest,
        test_manifest,
    })
}

/// Trains on `manifest` and writes the checkpoint, the step log and the
/// resolved config into `checkpoint`.
pub fn train_cmd(cfg: &RunConfig, manifest: &Path, checkpoint: &Path) -> Result<ModelParams64, CliError> {
    let samples = load_manifest(manifest)?;
    let outcome = train::<f64>(&samples, &cfg.model, &cfg.train, |_| {}).map_err(|e| match e {
        TrainError::InvalidConfig(m) => CliError::Usage(m),
        other => CliError::Runtime(other.into()),
    })?;
    let digest = cfg.digest();
    outcome
        .params
        .save_checkpoint(checkpoint, cfg.seed, Some(&digest))
        .context("writing checkpoint")?;
    let mut log = Vec::new();
    write_log_csv(&outcome.log, &mut log).context("formatting log")?;
    fs::write(checkpoint.join(TRAIN_LOG_FILE), log).context("writing training log")?;
    fs::write(checkpoint.join(RUN_CONFIG_FILE), cfg.to_toml()).context("writing run config")?;
    Ok(outcome.params)
}

fn load_checkpoint(cfg: &RunConfig, dir: &Path) -> Result<ModelParams64, CliError> {
    require_dir(dir, "checkpoint")?;
    let (params, manifest) =
        ModelParams::<f64>::load_checkpoint(dir).with_context(|| format!("loading checkpoint {}", dir.display()))?;
    if manifest.config_digest.as_deref() != Some(cfg.digest().as_str()) {
        eprintln!(
            "note: checkpoint {} was written under a different run configuration",
            dir.display()
        );
    }
    Ok(params)
}

/// Threshold calibrated on the mixture's own training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub format: String,
    pub rate: f64,
    pub threshold: f64,
    pub training_samples: usize,
    pub config_digest: String,
}

/// `gmm.json` -> `gmm.calibration.json`.
pub fn calibration_path(gmm: &Path) -> PathBuf {
    let stem = gmm
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    gmm.with_file_name(format!("{stem}.calibration.json"))
}

pub fn fit_gmm(
    cfg: &RunConfig,
    checkpoint: &Path,
    manifest: &Path,
    out: &Path,
) -> Result<(Gmm64, Calibration), CliError> {
    let params = load_checkpoint(cfg, checkpoint)?;
    let samples = load_manifest(manifest)?;
    let z = extract_features(&params, &samples).context("extracting features")?;
    let fit = fit_em(&z, &cfg.gmm).map_err(|e| CliError::Runtime(anyhow::Error::new(e).context("fitting mixture")))?;
    let ll = fit.model.log_densities(&z).context("scoring training features")?;
    let threshold = calibrate_threshold(&ll, cfg.rate).context("calibrating threshold")?;
    let digest = cfg.digest();
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    write_json(out, &fit.model.to_file(Some(&digest)))?;
    let calibration = Calibration {
        format: CALIBRATION_FORMAT.into(),
        rate: cfg.rate,
        threshold,
        training_samples: samples.len(),
        config_digest: digest,
    };
    write_json(&calibration_path(out), &calibration)?;
    Ok((fit.model, calibration))
}

fn load_gmm(path: &Path) -> Result<(Gmm64, Calibration), CliError> {
    require_file(path, "mixture file")?;
    let file: GmmFile = read_json(path)?;
    let model = GmmModel::from_file(&file).with_context(|| format!("loading {}", path.display()))?;
    let cal_path = calibration_path(path);
    require_file(&cal_path, "calibration file")?;
    let calibration: Calibration = read_json(&cal_path)?;
    if calibration.format != CALIBRATION_FORMAT {
        return Err(anyhow::anyhow!("{} is not a calibration file", cal_path.display()).into());
    }
    Ok((model, calibration))
}

/// Scores `manifest`, writing `scores.csv`, `report.json` and
/// `histogram.svg` into `out_dir`.
pub fn score(
    cfg: &RunConfig,
    checkpoint: &Path,
    gmm: &Path,
    manifest: &Path,
    out_dir: &Path,
) -> Result<DetectionReport, CliError> {
    let params = load_checkpoint(cfg, checkpoint)?;
    let (model, calibration) = load_gmm(gmm)?;
    let samples = load_manifest(manifest)?;
    let ll = score_samples(&params, &model, &samples).map_err(|e| match e {
        PipelineError::Gmm(GmmError::DimensionMismatch { expected, got }) => CliError::Usage(format!(
            "mixture expects {expected}-dimensional features but the checkpoint produces {got}"
        )),
        other => CliError::Runtime(other.into()),
    })?;
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let labels: Vec<Option<u8>> = samples.iter().map(|s| s.label).collect();
    let report = DetectionReport::build(
        &ids,
        &ll,
        &labels,
        calibration.threshold,
        calibration.rate,
        Some(&cfg.digest()),
    )
    .context("building report")?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv).context("formatting scores")?;
    fs::write(out_dir.join(SCORES_FILE), csv).context("writing scores")?;
    write_json(&out_dir.join(REPORT_FILE), &report.summary_json())?;
    fs::write(
        out_dir.join(HISTOGRAM_FILE),
        histogram_svg(&ll, &labels, calibration.threshold, 40),
    )
    .context("writing histogram")?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub samples: usize,
    pub positives: usize,
    pub acc: f64,
    pub ap: Option<f64>,
    pub auc: Option<f64>,
    pub config_digest: String,
}

#[derive(Debug, Deserialize)]
struct ScoreRow {
    id: String,
    log_likelihood: f64,
    predicted: u8,
    #[serde(default)]
    label: Option<u8>,
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    id: String,
    label: u8,
}

/// Metrics from a scores CSV; labels come from its `label` column or from
/// a separate `id,label` CSV.
pub fn evaluate(cfg: &RunConfig, scores: &Path, labels: Option<&Path>) -> Result<Evaluation, CliError> {
    require_file(scores, "scores file")?;
    let mut rows: Vec<ScoreRow> = Vec::new();
    let mut reader = csv::Reader::from_path(scores).with_context(|| format!("opening {}", scores.display()))?;
    for r in reader.deserialize() {
        rows.push(r.with_context(|| format!("parsing {}", scores.display()))?);
    }
    if rows.is_empty() {
        return Err(CliError::Usage(format!("{} holds no scores", scores.display())));
    }
    if let Some(path) = labels {
        require_file(path, "labels file")?;
        let mut by_id = std::collections::HashMap::new();
        let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
        for r in reader.deserialize() {
            let r: LabelRow = r.with_context(|| format!("parsing {}", path.display()))?;
            by_id.insert(r.id, r.label);
        }
        for row in &mut rows {
            row.label = Some(
                *by_id
                    .get(&row.id)
                    .ok_or_else(|| anyhow::anyhow!("no label for sample {}", row.id))?,
            );
        }
    }
    let mut truth = Vec::with_capacity(rows.len());
    for row in &rows {
        match row.label {
            Some(l @ (0 | 1)) => truth.push(l),
            Some(l) => return Err(anyhow::anyhow!("label {l} of sample {} is not 0 or 1", row.id).into()),
            None => return Err(CliError::Usage(format!("sample {} has no label", row.id))),
        }
    }
    if let Some(r) = rows.iter().find(|r| r.predicted > 1) {
        return Err(anyhow::anyhow!("prediction {} of sample {} is not 0 or 1", r.predicted, r.id).into());
    }
    let anomaly: Vec<f64> = rows.iter().map(|r| -r.log_likelihood).collect();
    let hits = rows.iter().zip(&truth).filter(|(r, &t)| r.predicted == t).count();
    Ok(Evaluation {
        samples: rows.len(),
        positives: truth.iter().filter(|&&l| l == 1).count(),
        acc: hits as f64 / rows.len() as f64,
        ap: average_precision(&anomaly, &truth).ok(),
        auc: auc(&anomaly, &truth).ok(),
        config_digest: cfg.digest(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSummary {
    pub config_digest: String,
    pub threshold: f64,
    pub ranking_accuracy: RankingSummary,
    pub test_flagged_fraction: f64,
    pub acc: Option<f64>,
    pub ap: Option<f64>,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingSummary {
    pub aperture: Option<f64>,
    pub exposure_time: Option<f64>,
    pub focal_length: Option<f64>,
    pub iso: Option<f64>,
    pub pooled: Option<f64>,
}

impl From<&RankingAccuracy> for RankingSummary {
    fn from(r: &RankingAccuracy) -> Self {
        use exifgmm_core::exif::ExifTag;
        Self {
            aperture: r.tag(ExifTag::Aperture),
            exposure_time: r.tag(ExifTag::ExposureTime),
            focal_length: r.tag(ExifTag::FocalLength),
            iso: r.tag(ExifTag::Iso),
            pooled: r.pooled(),
        }
    }
}

/// Layout of a demo output directory.
pub struct DemoLayout {
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    pub gmm: PathBuf,
    pub report: PathBuf,
    pub evaluation: PathBuf,
    pub summary: PathBuf,
}

impl DemoLayout {
    pub fn new(root: &Path) -> Self {
        Self {
            data: root.join("data"),
            checkpoint: root.join("checkpoint"),
            gmm: root.join("gmm.json"),
            report: root.join("report"),
            evaluation: root.join("evaluation.json"),
            summary: root.join("summary.json"),
        }
    }
}

/// synth -> train -> fit-gmm -> score -> evaluate on synthetic faces.
pub fn demo(cfg: &RunConfig, out_dir: &Path) -> Result<DemoSummary, CliError> {
    let layout = DemoLayout::new(out_dir);
    let data = synth(cfg, &layout.data)?;
    let params = train_cmd(cfg, &data.train_manifest, &layout.checkpoint)?;
    let (_, calibration) = fit_gmm(cfg, &layout.checkpoint, &data.train_manifest, &layout.gmm)?;
    let report = score(
        cfg,
        &layout.checkpoint,
        &layout.gmm,
        &data.test_manifest,
        &layout.report,
    )?;
    let evaluation = evaluate(cfg, &layout.report.join(SCORES_FILE), None)?;
    write_json(&layout.evaluation, &evaluation)?;
    let test = load_manifest(&data.test_manifest)?;
    let clean: Vec<FaceSample> = test.into_iter().filter(|s| s.label != Some(1)).collect();
    let ranking = ranking_accuracy(&params, &clean).context("measuring ranking accuracy")?;
    let summary = DemoSummary {
        config_digest: cfg.digest(),
        threshold: calibration.threshold,
        ranking_accuracy: RankingSummary::from(&ranking),
        test_flagged_fraction: report.flagged_fraction,
        acc: report.acc,
        ap: report.ap,
        auc: report.auc,
    };
    write_json(&layout.summary, &summary)?;
    Ok(summary)
}

/// Rejects a threads setting that is not a positive integer.
pub fn parse_threads(value: &str) -> Result<usize, CliError> {
    match value.trim().parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(CliError::Usage(format!(
            "thread count {value:?} is not a positive integer"
        ))),
    }
}

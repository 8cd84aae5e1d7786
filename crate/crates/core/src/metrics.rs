//! Detection metrics on log-likelihood scores.
//!
//! Generated samples are the positive class. A sample is flagged when its
//! log-likelihood falls below the threshold; ranking metrics use the anomaly
//! score `-log p(z)`, higher meaning more anomalous.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("empty input")]
    EmptyInput,
    #[error("rate {0} must lie strictly between 0 and 1")]
    InvalidRate(f64),
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no positive samples")]
    NoPositives,
    #[error("both classes are needed")]
    OneClassOnly,
    #[error("non-finite score")]
    NonFinite,
}

/// Linear-interpolation percentile at position `(n - 1) * rate` of the
/// sorted values.
pub fn calibrate_threshold<T: Scalar>(values: &[T], rate: f64) -> Result<T, MetricError> {
    if values.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if !(rate > 0.0 && rate < 1.0) {
        return Err(MetricError::InvalidRate(rate));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let pos = (sorted.len() - 1) as f64 * rate;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = T::lit(pos - lo as f64);
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

fn check_lengths<T>(scores: &[T], labels: &[u8]) -> Result<(), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    Ok(())
}

/// Share of samples where `log_likelihood < threshold` agrees with the label.
pub fn accuracy<T: Scalar>(log_likelihoods: &[T], labels: &[u8], threshold: T) -> Result<f64, MetricError> {
    check_lengths(log_likelihoods, labels)?;
    if labels.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let hits = log_likelihoods
        .iter()
        .zip(labels)
        .filter(|&(&s, &l)| (s < threshold) == (l == 1))
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Indices by anomaly score, highest first; ties keep input order.
pub fn rank_order<T: Scalar>(anomaly_scores: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..anomaly_scores.len()).collect();
    idx.sort_by(|&a, &b| anomaly_scores[b].total_cmp(&anomaly_scores[a]));
    idx
}

/// Mean over positives of the precision at each positive's rank.
pub fn average_precision<T: Scalar>(anomaly_scores: &[T], labels: &[u8]) -> Result<f64, MetricError> {
    check_lengths(anomaly_scores, labels)?;
    if anomaly_scores.iter().any(|v| v.is_nan()) {
        return Err(MetricError::NonFinite);
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 {
        return Err(MetricError::NoPositives);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in rank_order(anomaly_scores).iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Mann-Whitney estimate of `P(score_pos > score_neg)`, ties counting 1/2.
pub fn auc<T: Scalar>(anomaly_scores: &[T], labels: &[u8]) -> Result<f64, MetricError> {
    check_lengths(anomaly_scores, labels)?;
    if anomaly_scores.iter().any(|v| v.is_nan()) {
        return Err(MetricError::NonFinite);
    }
    let pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::OneClassOnly);
    }
    // Ascending sweep over tie groups; twice the statistic stays integral.
    let mut idx: Vec<usize> = (0..anomaly_scores.len()).collect();
    idx.sort_by(|&a, &b| anomaly_scores[a].total_cmp(&anomaly_scores[b]));
    let mut twice = 0u64;
    let mut neg_below = 0u64;
    let mut g = 0;
    while g < idx.len() {
        let mut end = g;
        while end < idx.len() && anomaly_scores[idx[end]] == anomaly_scores[idx[g]] {
            end += 1;
        }
        let (mut p, mut n) = (0u64, 0u64);
        for &i in &idx[g..end] {
            if labels[i] == 1 {
                p += 1;
            } else {
                n += 1;
            }
        }
        twice += p * (2 * neg_below + n);
        neg_below += n;
        g = end;
    }
    Ok(twice as f64 / (2 * pos * neg) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub id: String,
    pub log_likelihood: f64,
    /// 1 when flagged as generated.
    pub predicted: u8,
    pub label: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub threshold: f64,
    pub rate: f64,
    pub flagged_fraction: f64,
    /// `None` without labels; `ap` and `auc` also need both classes.
    pub acc: Option<f64>,
    pub ap: Option<f64>,
    pub auc: Option<f64>,
    pub config_digest: Option<String>,
    pub samples: Vec<ScoredSample>,
}

impl DetectionReport {
    /// Scores samples against `threshold`. Metrics are computed only when
    /// every sample is labelled.
    pub fn build(
        ids: &[String],
        log_likelihoods: &[f64],
        labels: &[Option<u8>],
        threshold: f64,
        rate: f64,
        config_digest: Option<&str>,
    ) -> Result<Self, MetricError> {
        if ids.len() != log_likelihoods.len() || labels.len() != log_likelihoods.len() {
            return Err(MetricError::LengthMismatch {
                scores: log_likelihoods.len(),
                labels: labels.len().min(ids.len()),
            });
        }
        if log_likelihoods.is_empty() {
            return Err(MetricError::EmptyInput);
        }
        let samples: Vec<ScoredSample> = ids
            .iter()
            .zip(log_likelihoods)
            .zip(labels)
            .map(|((id, &ll), &label)| ScoredSample {
                id: id.clone(),
                log_likelihood: ll,
                predicted: u8::from(ll < threshold),
                label,
            })
            .collect();
        let flagged = samples.iter().filter(|s| s.predicted == 1).count() as f64 / samples.len() as f64;
        let known: Option<Vec<u8>> = labels.iter().copied().collect();
        let (acc, ap, auc_v) = match known {
            Some(l) => {
                let anomaly: Vec<f64> = log_likelihoods.iter().map(|v| -v).collect();
                (
                    Some(accuracy(log_likelihoods, &l, threshold)?),
                    average_precision(&anomaly, &l).ok(),
                    auc(&anomaly, &l).ok(),
                )
            }
            None => (None, None, None),
        };
        Ok(Self {
            threshold,
            rate,
            flagged_fraction: flagged,
            acc,
            ap,
            auc: auc_v,
            config_digest: config_digest.map(str::to_owned),
            samples,
        })
    }

    /// Metrics and threshold without the per-sample rows.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "threshold": self.threshold,
            "rate": self.rate,
            "flagged_fraction": self.flagged_fraction,
            "acc": self.acc,
            "ap": self.ap,
            "auc": self.auc,
            "samples": self.samples.len(),
            "config_digest": self.config_digest,
        })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "id,log_likelihood,predicted,label")?;
        for s in &self.samples {
            let label = s.label.map(|l| l.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{}",
                csv_field(&s.id),
                s.log_likelihood,
                s.predicted,
                label
            )?;
        }
        out.flush()
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Static SVG histogram of log-likelihoods per class with the threshold.
pub fn histogram_svg(log_likelihoods: &[f64], labels: &[Option<u8>], threshold: f64, bins: usize) -> String {
    let (w, h, pad) = (640.0, 320.0, 40.0);
    let bins = bins.max(1);
    let finite: Vec<f64> = log_likelihoods.iter().copied().filter(|v| v.is_finite()).collect();
    let lo = finite.iter().copied().fold(threshold, f64::min);
    let hi = finite.iter().copied().fold(threshold, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let bin_of = |v: f64| (((v - lo) / span * bins as f64) as usize).min(bins - 1);
    // Groups: photographic / generated / unlabelled.
    let mut counts = vec![[0usize; 3]; bins];
    for (&v, l) in log_likelihoods.iter().zip(labels) {
        if v.is_finite() {
            let g = match l {
                Some(0) => 0,
                Some(_) => 1,
                None => 2,
            };
            counts[bin_of(v)][g] += 1;
        }
    }
    let max = counts.iter().flat_map(|c| c.iter()).copied().max().unwrap_or(1).max(1) as f64;
    let bw = (w - 2.0 * pad) / bins as f64;
    let colours = ["#3b7dd8", "#d8553b", "#888888"];
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for (b, c) in counts.iter().enumerate() {
        for (g, &n) in c.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let bh = n as f64 / max * (h - 2.0 * pad);
            let x = pad + b as f64 * bw + g as f64 * bw / 3.0;
            let _ = writeln!(
                svg,
                r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{bh:.2}" fill="{}" fill-opacity="0.8"/>"#,
                h - pad - bh,
                bw / 3.0,
                colours[g]
            );
        }
    }
    let tx = pad + (threshold - lo) / span * (w - 2.0 * pad);
    let _ = writeln!(
        svg,
        r#"<line x1="{tx:.2}" y1="{pad}" x2="{tx:.2}" y2="{}" stroke="black" stroke-dasharray="4 3"/>"#,
        h - pad
    );
    let _ = writeln!(
        svg,
        r#"<text x="{pad}" y="{}" font-family="sans-serif" font-size="12">log-likelihood {lo:.3} .. {hi:.3}; threshold {threshold:.3}</text>"#,
        h - 12.0
    );
    svg.push_str("</svg>\n");
    svg
}

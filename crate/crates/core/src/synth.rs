//! Synthetic face-like images with decodable camera tags.
//!
//! Each sample draws a latent `u` in R^4 and renders a 64x64 face: skin
//! ellipse, dark eyes with an off-centre highlight, a mouth with a darker
//! upper lip and left corner, a zero-mean low-frequency lighting field and
//! pixel noise. The latents enter the pixels along separable directions and
//! the tags are strictly monotone functions of them:
//!
//! | latent | pixels                                   | tag            |
//! |--------|------------------------------------------|----------------|
//! | `u0`   | `+14 u0` on every channel                | aperture       |
//! | `u1`   | `+10 u1` red, `-10 u1` blue              | exposure time  |
//! | `u2`   | blue noise sigma `7 exp(0.35 u2)`        | focal length   |
//! | `u3`   | `+12 u3` green, `-6 u3` red and blue     | ISO speed      |
//!
//! Photographic samples draw `u ~ N(0, I)`; anomalies draw
//! `u ~ N(shift * v, I)` with the unit vector `v = (1, -1, 1, -1) / 2`.
//! Sample `j` of a split uses its own seeded stream, so the photographic
//! splits do not depend on the shift.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{write_manifest, FaceSample, ManifestEntry};
use crate::exif::ExifRecord;
use crate::image::{ImageRGB, LandmarkSet};
use crate::model::SampleInput;
use crate::rng::stream;

/// Latent shift of the anomaly split used by the end-to-end harness.
pub const DEFAULT_ANOMALY_SHIFT: f64 = 4.0;
pub const SHIFT_DIRECTION: [f64; 4] = [0.5, -0.5, 0.5, -0.5];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic dataset parameters: {0}")]
    InvalidParams(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Independent probability that each tag is missing.
    pub missing_tag_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { missing_tag_prob: 0.05 }
    }
}

pub const SYNTH_HEIGHT: usize = 64;
pub const SYNTH_WIDTH: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub id: String,
    pub image: ImageRGB,
    pub landmarks: LandmarkSet,
    pub exif: ExifRecord,
    pub latent: [f64; 4],
    pub anomalous: bool,
}

impl SynthSample {
    pub fn to_face_sample(&self) -> FaceSample {
        FaceSample {
            id: self.id.clone(),
            input: SampleInput::Image(self.image.clone()),
            exif: self.exif,
            landmarks: Some(self.landmarks.clone()),
            label: Some(u8::from(self.anomalous)),
        }
    }
}

/// Tag values implied by a latent, before any are dropped.
pub fn tags_from_latent(u: &[f64; 4]) -> ExifRecord {
    ExifRecord {
        aperture_f_number: Some(2f64.powf(1.5 + 0.5 * u[0])),
        exposure_time_s: Some(2f64.powf(-7.0 + 0.8 * u[1])),
        focal_length_mm: Some(35.0 * (0.3 * u[2]).exp()),
        iso_speed: Some((100.0 * 2f64.powf(1.0 + 0.7 * u[3])).round().max(1.0) as u32),
    }
}

fn ellipse_points(cx: f64, cy: f64, rx: f64, ry: f64, n: usize, start: f64) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let t = start + std::f64::consts::TAU * i as f64 / n as f64;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

/// Standard 68-point layout for a face centred at `(cx, cy)`.
fn face_landmarks(cx: f64, cy: f64) -> Vec<(f64, f64)> {
    let mut p = Vec::with_capacity(68);
    for i in 0..17 {
        let t = std::f64::consts::PI * i as f64 / 16.0;
        p.push((cx - 20.0 * t.cos(), cy + 4.0 + 20.0 * t.sin()));
    }
    for side in [-1.0, 1.0] {
        for i in 0..5 {
            let x = cx + side * (4.0 + 2.5 * i as f64);
            p.push((x, cy - 12.0 - 0.3 * (2.0 - i as f64).abs()));
        }
    }
    // Brows were pushed right-to-left for the left side; keep annotation order.
    p[17..22].reverse();
    for i in 0..4 {
        p.push((cx, cy - 8.0 + 2.5 * i as f64));
    }
    for i in 0..5 {
        p.push((cx - 4.0 + 2.0 * i as f64, cy + 3.0));
    }
    for ex in [cx - 9.0, cx + 9.0] {
        p.extend(ellipse_points(ex, cy - 7.0, 4.0, 2.0, 6, std::f64::consts::PI));
    }
    p.extend(ellipse_points(cx, cy + 10.0, 8.0, 3.5, 12, std::f64::consts::PI));
    p.extend(ellipse_points(cx, cy + 10.0, 5.0, 1.5, 8, std::f64::consts::PI));
    p
}

fn inside_ellipse(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> bool {
    let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
    dx * dx + dy * dy <= 1.0
}

fn render<R: Rng>(u: &[f64; 4], rng: &mut R) -> (ImageRGB, LandmarkSet) {
    let (h, w) = (SYNTH_HEIGHT, SYNTH_WIDTH);
    let cx = 32.0 + rng.random_range(-2.0f64..2.0);
    let cy = 30.0 + rng.random_range(-2.0f64..2.0);
    // Integer frequencies over the frame make every lighting term zero-mean.
    let waves: Vec<(f64, f64, f64, f64)> = [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
        .into_iter()
        .map(|(fx, fy)| {
            (
                fx,
                fy,
                rng.random_range(-6.0f64..6.0),
                rng.random_range(0.0f64..std::f64::consts::TAU),
            )
        })
        .collect();
    let sigma_b = 7.0 * (0.35 * u[2]).exp();
    let shift = [
        14.0 * u[0] + 10.0 * u[1] - 6.0 * u[3],
        14.0 * u[0] + 12.0 * u[3],
        14.0 * u[0] - 10.0 * u[1] - 6.0 * u[3],
    ];
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let mut lum = 0.0;
            for &(fx, fy, a, ph) in &waves {
                lum += a * (std::f64::consts::TAU * (fx * xf / w as f64 + fy * yf / h as f64) + ph).sin();
            }
            let mut base = [100.0, 104.0, 110.0];
            if inside_ellipse(xf, yf, cx, cy + 2.0, 20.0, 25.0) {
                base = [140.0, 122.0, 112.0];
            }
            for ex in [cx - 9.0, cx + 9.0] {
                if inside_ellipse(xf, yf, ex, cy - 7.0, 4.5, 2.5) {
                    lum -= 60.0;
                    if inside_ellipse(xf, yf, ex - 1.5, cy - 7.5, 1.2, 1.2) {
                        lum += 80.0;
                    }
                }
            }
            if inside_ellipse(xf, yf, cx, cy + 10.0, 8.5, 4.0) {
                lum -= 45.0;
                if yf < cy + 10.0 {
                    lum -= 15.0;
                }
                if xf < cx - 4.0 {
                    lum -= 10.0;
                }
            }
            let noise = 2.0 * Distribution::<f64>::sample(&StandardNormal, rng);
            let blue = sigma_b * Distribution::<f64>::sample(&StandardNormal, rng);
            for c in 0..3 {
                let extra = if c == 2 { blue } else { noise };
                let v = base[c] + lum + shift[c] + extra;
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    let image = ImageRGB::new(h, w, data).expect("synthetic frame");
    let landmarks = LandmarkSet::new(face_landmarks(cx, cy)).expect("68 synthetic landmarks");
    (image, landmarks)
}

/// Generates `count` samples of split `split` with latent shift `shift`
/// (zero for photographic data).
pub fn generate(seed: u64, split: u64, count: usize, shift: f64, cfg: &SynthConfig) -> Vec<SynthSample> {
    let anomalous = split == SPLIT_ANOMALOUS;
    (0..count)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream(seed, &[split, j as u64]);
            let mut u = [0.0; 4];
            for (k, v) in u.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = z + shift * SHIFT_DIRECTION[k];
            }
            let (image, landmarks) = render(&u, &mut rng);
            let full = tags_from_latent(&u);
            let mut keep = || !rng.random_bool(cfg.missing_tag_prob);
            let exif = ExifRecord {
                aperture_f_number: full.aperture_f_number.filter(|_| keep()),
                exposure_time_s: full.exposure_time_s.filter(|_| keep()),
                focal_length_mm: full.focal_length_mm.filter(|_| keep()),
                iso_speed: full.iso_speed.filter(|_| keep()),
            };
            SynthSample {
                id: format!("s{split}-{j:05}"),
                image,
                landmarks,
                exif,
                latent: u,
                anomalous,
            }
        })
        .collect()
}

pub const SPLIT_TRAIN: u64 = 0;
pub const SPLIT_TEST: u64 = 1;
pub const SPLIT_ANOMALOUS: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSizes {
    pub train: usize,
    pub test_clean: usize,
    pub test_anomalous: usize,
}

impl Default for SynthSizes {
    fn default() -> Self {
        Self {
            train: 2000,
            test_clean: 500,
            test_anomalous: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub train: Vec<SynthSample>,
    pub test_clean: Vec<SynthSample>,
    pub test_anomalous: Vec<SynthSample>,
}

/// Photographic training and test splits plus an anomaly split drawn with
/// latents shifted by `anomaly_shift`.
pub fn synth_dataset(
    seed: u64,
    sizes: SynthSizes,
    anomaly_shift: f64,
    cfg: &SynthConfig,
) -> Result<SynthDataset, SynthError> {
    if sizes.train < 4 {
        return Err(SynthError::InvalidParams(format!(
            "training size {} is below 4",
            sizes.train
        )));
    }
    if !anomaly_shift.is_finite() || anomaly_shift < 0.0 {
        return Err(SynthError::InvalidParams(format!("anomaly shift {anomaly_shift}")));
    }
    if !(0.0..1.0).contains(&cfg.missing_tag_prob) {
        return Err(SynthError::InvalidParams(format!(
            "missing-tag probability {}",
            cfg.missing_tag_prob
        )));
    }
    Ok(SynthDataset {
        train: generate(seed, SPLIT_TRAIN, sizes.train, 0.0, cfg),
        test_clean: generate(seed, SPLIT_TEST, sizes.test_clean, 0.0, cfg),
        test_anomalous: generate(seed, SPLIT_ANOMALOUS, sizes.test_anomalous, anomaly_shift, cfg),
    })
}

/// Writes PPM images, landmark sidecars and a manifest named `name` into
/// `dir`; returns the manifest path.
pub fn write_split(samples: &[SynthSample], dir: &Path, name: &str) -> Result<PathBuf, SynthError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    let images = dir.join(name);
    fs::create_dir_all(&images).map_err(io(&images))?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let img_rel = format!("{name}/{}.ppm", s.id);
        let lm_rel = format!("{name}/{}.landmarks.txt", s.id);
        let img_path = dir.join(&img_rel);
        fs::write(&img_path, s.image.encode_ppm()).map_err(io(&img_path))?;
        let lm_path = dir.join(&lm_rel);
        fs::write(&lm_path, s.landmarks.to_text()).map_err(io(&lm_path))?;
        entries.push(ManifestEntry {
            id: Some(s.id.clone()),
            image_path: Some(img_rel),
            features: None,
            landmark_path: Some(lm_rel),
            exif: Some(s.exif),
            label: Some(u8::from(s.anomalous)),
        });
    }
    let manifest = dir.join(format!("{name}.jsonl"));
    let file = fs::File::create(&manifest).map_err(io(&manifest))?;
    write_manifest(&entries, BufWriter::new(file)).map_err(io(&manifest))?;
    Ok(manifest)
}

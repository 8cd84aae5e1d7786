//! Feature extractor `z = f(x)` and the five scalar heads.
//!
//! Heads 0..4 rank aperture, exposure time, focal length and ISO speed (in
//! [`ExifTag`](crate::exif::ExifTag) order); head 4 classifies manipulation.
//! Every head is a single linear map `z · w + b`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Var};
use crate::image::ImageRGB;
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};

pub const HEAD_COUNT: usize = 5;
/// Index of the manipulation-classification head.
pub const CLASSIFICATION_HEAD: usize = 4;

pub const CHECKPOINT_MANIFEST: &str = "manifest.json";
pub const CHECKPOINT_DATA: &str = "params.bin";
const CHECKPOINT_FORMAT: &str = "exifgmm-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("input mismatch: expected {expected}, got {got}")]
    InputMismatch { expected: String, got: String },
    #[error("the tiny convolutional extractor needs the `conv` feature")]
    ConvDisabled,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// What the extractor consumes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSpec {
    Image {
        height: usize,
        width: usize,
    },
    /// Precomputed feature vectors.
    Features {
        dim: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// ReLU MLP over per-patch channel mean/std (or over raw features), then
    /// a linear map to the feature dimension.
    Mlp { hidden: Vec<usize> },
    /// 3x3 stride-2 ReLU conv blocks, global average pooling, linear map.
    TinyConv { channels: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input: InputSpec,
    pub arch: Architecture,
    pub feature_dim: usize,
    /// Side of the square patches summarised for the MLP on images.
    pub patch_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input: InputSpec::Image { height: 64, width: 64 },
            arch: Architecture::Mlp { hidden: vec![128, 128] },
            feature_dim: 64,
            patch_size: 16,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.feature_dim < 2 {
            return bad(format!("feature_dim must be at least 2, got {}", self.feature_dim));
        }
        match (&self.input, &self.arch) {
            (InputSpec::Image { height, width }, Architecture::Mlp { .. }) => {
                let p = self.patch_size;
                if p == 0 || *height == 0 || *width == 0 || height % p != 0 || width % p != 0 {
                    return bad(format!("{height}x{width} image is not tiled by {p}x{p} patches"));
                }
            }
            (InputSpec::Image { height, width }, Architecture::TinyConv { channels }) => {
                if channels.is_empty() || channels.contains(&0) || *height == 0 || *width == 0 {
                    return bad("tiny conv needs non-zero channel widths".into());
                }
                if !cfg!(feature = "conv") {
                    return Err(ModelError::ConvDisabled);
                }
            }
            (InputSpec::Features { dim }, Architecture::Mlp { .. }) => {
                if *dim == 0 {
                    return bad("feature input dimension is zero".into());
                }
            }
            (InputSpec::Features { .. }, Architecture::TinyConv { .. }) => {
                return bad("tiny conv needs image input".into());
            }
        }
        if let Architecture::Mlp { hidden } = &self.arch {
            if hidden.contains(&0) {
                return bad("zero-width hidden layer".into());
            }
        }
        Ok(())
    }

    /// Length of one prepared input row.
    pub fn input_len(&self) -> usize {
        match (&self.input, &self.arch) {
            (InputSpec::Features { dim }, _) => *dim,
            (InputSpec::Image { height, width }, Architecture::Mlp { .. }) => {
                (height / self.patch_size) * (width / self.patch_size) * 6
            }
            (InputSpec::Image { height, width }, Architecture::TinyConv { .. }) => 3 * height * width,
        }
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let linear = |name: String, fan_in: usize, fan_out: usize, out: &mut Vec<(String, Vec<usize>)>| {
            out.push((format!("{name}.weight"), vec![fan_in, fan_out]));
            out.push((format!("{name}.bias"), vec![fan_out]));
        };
        match &self.arch {
            Architecture::Mlp { hidden } => {
                let mut width = self.input_len();
                for (i, &h) in hidden.iter().enumerate() {
                    linear(format!("extractor.{i}"), width, h, &mut out);
                    width = h;
                }
                linear(format!("extractor.{}", hidden.len()), width, self.feature_dim, &mut out);
            }
            Architecture::TinyConv { channels } => {
                let mut cin = 3;
                for (i, &c) in channels.iter().enumerate() {
                    out.push((format!("extractor.{i}.weight"), vec![c, cin, 3, 3]));
                    out.push((format!("extractor.{i}.bias"), vec![c]));
                    cin = c;
                }
                linear(format!("extractor.{}", channels.len()), cin, self.feature_dim, &mut out);
            }
        }
        for h in 0..HEAD_COUNT {
            linear(format!("head.{h}"), self.feature_dim, 1, &mut out);
        }
        out
    }

    fn extractor_layers(&self) -> usize {
        match &self.arch {
            Architecture::Mlp { hidden } => hidden.len() + 1,
            Architecture::TinyConv { channels } => channels.len() + 1,
        }
    }
}

/// One sample's input: pixels or a precomputed feature vector.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleInput {
    Image(ImageRGB),
    Features(Vec<f64>),
}

/// Per-patch, per-channel mean and standard deviation, row-major over
/// patches. Means map `[0, 255]` to `[-1, 1]`; deviations are divided by 64.
pub fn patch_statistics(img: &ImageRGB, patch: usize) -> Vec<f64> {
    let (gh, gw) = (img.height() / patch, img.width() / patch);
    let n = (patch * patch) as f64;
    let mut out = Vec::with_capacity(gh * gw * 6);
    for py in 0..gh {
        for px in 0..gw {
            let mut sum = [0.0f64; 3];
            let mut sq = [0.0f64; 3];
            for y in py * patch..(py + 1) * patch {
                for x in px * patch..(px + 1) * patch {
                    for (c, v) in img.pixel(y, x).into_iter().enumerate() {
                        let v = v as f64;
                        sum[c] += v;
                        sq[c] += v * v;
                    }
                }
            }
            for c in 0..3 {
                let mean = sum[c] / n;
                let var = (sq[c] / n - mean * mean).max(0.0);
                out.push((mean - 127.5) / 127.5);
                out.push(var.sqrt() / 64.0);
            }
        }
    }
    out
}

impl ModelConfig {
    /// Turns one sample into the flat row the extractor consumes.
    pub fn prepare(&self, input: &SampleInput) -> Result<Vec<f64>, ModelError> {
        match (&self.input, input) {
            (InputSpec::Features { dim }, SampleInput::Features(v)) => {
                if v.len() != *dim {
                    return Err(ModelError::InputMismatch {
                        expected: format!("{dim} features"),
                        got: format!("{} features", v.len()),
                    });
                }
                Ok(v.clone())
            }
            (InputSpec::Image { height, width }, SampleInput::Image(img)) => {
                if img.height() != *height || img.width() != *width {
                    return Err(ModelError::InputMismatch {
                        expected: format!("{height}x{width} image"),
                        got: format!("{}x{} image", img.height(), img.width()),
                    });
                }
                Ok(match self.arch {
                    Architecture::Mlp { .. } => patch_statistics(img, self.patch_size),
                    Architecture::TinyConv { .. } => {
                        // Channel-major planes scaled to [-1, 1].
                        let (h, w) = (img.height(), img.width());
                        let mut out = vec![0.0; 3 * h * w];
                        for y in 0..h {
                            for x in 0..w {
                                for (c, v) in img.pixel(y, x).into_iter().enumerate() {
                                    out[(c * h + y) * w + x] = (v as f64 - 127.5) / 127.5;
                                }
                            }
                        }
                        out
                    }
                })
            }
            (expected, got) => Err(ModelError::InputMismatch {
                expected: format!("{expected:?}"),
                got: match got {
                    SampleInput::Image(_) => "image".into(),
                    SampleInput::Features(_) => "feature vector".into(),
                },
            }),
        }
    }

    /// Stacks prepared rows into the batch tensor for this architecture.
    pub fn batch_tensor<T: Scalar>(&self, rows: &[&[f64]]) -> Result<Tensor<T>, ModelError> {
        let len = self.input_len();
        if let Some(r) = rows.iter().find(|r| r.len() != len) {
            return Err(ModelError::InputMismatch {
                expected: format!("rows of {len}"),
                got: format!("row of {}", r.len()),
            });
        }
        let data: Vec<T> = rows.iter().flat_map(|r| r.iter().map(|&v| T::lit(v))).collect();
        let shape = match (&self.input, &self.arch) {
            (InputSpec::Image { height, width }, Architecture::TinyConv { .. }) => {
                vec![rows.len(), 3, *height, *width]
            }
            _ => vec![rows.len(), len],
        };
        Ok(Tensor::new(shape, data)?)
    }
}

/// Extractor and head parameters, stored flat in [`ModelConfig::layout`]
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    config: ModelConfig,
    tensors: Vec<Tensor<T>>,
}

/// Parameter leaves of one tape, in storage order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
    extractor_layers: usize,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn layer(&self, i: usize) -> (Var, Var) {
        (self.vars[2 * i], self.vars[2 * i + 1])
    }

    fn head(&self, i: usize) -> (Var, Var) {
        self.layer(self.extractor_layers + i)
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Kaiming-uniform weights in `±sqrt(6 / fan_in)`, zero biases.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = config
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                if name.ends_with(".bias") {
                    return Tensor::zeros(&shape);
                }
                let fan_in = if shape.len() == 4 {
                    shape[1] * shape[2] * shape[3]
                } else {
                    shape[0]
                };
                let bound = (6.0 / fan_in as f64).sqrt();
                let n = shape.iter().product();
                let data = (0..n).map(|_| T::lit(rng.random_range(-bound..=bound))).collect();
                Tensor::new(shape, data).expect("layout shape")
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    /// Wraps tensors that must match the config layout exactly.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor<T>>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != tensors.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Checkpoint(format!(
                    "{name}: expected shape {shape:?}, got {:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(ModelError::Checkpoint(format!("{name}: non-finite values")));
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn names(&self) -> Vec<String> {
        self.config.layout().into_iter().map(|(n, _)| n).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every parameter as a leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundParams {
        BoundParams {
            vars: self.tensors.iter().map(|t| tape.leaf(t.clone())).collect(),
            extractor_layers: self.config.extractor_layers(),
        }
    }

    /// Features `[b, N]` for a batch input built by [`ModelConfig::batch_tensor`].
    pub fn extract(&self, tape: &mut Tape<T>, bound: &BoundParams, input: Var) -> Result<Var, ModelError> {
        let layers = self.config.extractor_layers();
        let mut h = input;
        match &self.config.arch {
            Architecture::Mlp { .. } => {
                for i in 0..layers {
                    let (w, b) = bound.layer(i);
                    h = tape.matmul(h, w)?;
                    h = tape.add_bias(h, b)?;
                    if i + 1 < layers {
                        h = tape.relu(h)?;
                    }
                }
            }
            Architecture::TinyConv { .. } => {
                h = conv_blocks(tape, bound, h, layers - 1)?;
                h = tape.mean_pool(h)?;
                let (w, b) = bound.layer(layers - 1);
                h = tape.matmul(h, w)?;
                h = tape.add_bias(h, b)?;
            }
        }
        Ok(h)
    }

    /// Logit column `[b, 1]` of head `i`.
    pub fn head(&self, tape: &mut Tape<T>, bound: &BoundParams, z: Var, i: usize) -> Result<Var, ModelError> {
        if i >= HEAD_COUNT {
            return Err(ModelError::InvalidConfig(format!("head index {i} out of range")));
        }
        let (w, b) = bound.head(i);
        let s = tape.matmul(z, w)?;
        Ok(tape.add_bias(s, b)?)
    }

    /// Feature rows for prepared inputs, without keeping a tape around.
    pub fn features(&self, rows: &[&[f64]]) -> Result<Vec<Vec<T>>, ModelError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let x = tape.leaf(self.config.batch_tensor(rows)?);
        let z = self.extract(&mut tape, &bound, x)?;
        let n = self.config.feature_dim;
        Ok(tape.value(z).data().chunks(n).map(<[T]>::to_vec).collect())
    }

    /// All five logits per row.
    pub fn logits(&self, rows: &[&[f64]]) -> Result<Vec<[T; HEAD_COUNT]>, ModelError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let x = tape.leaf(self.config.batch_tensor(rows)?);
        let z = self.extract(&mut tape, &bound, x)?;
        let mut out = vec![[T::zero(); HEAD_COUNT]; rows.len()];
        for h in 0..HEAD_COUNT {
            let s = self.head(&mut tape, &bound, z, h)?;
            for (row, &v) in out.iter_mut().zip(tape.value(s).data()) {
                row[h] = v;
            }
        }
        Ok(out)
    }

    /// Writes `manifest.json` and `params.bin` (little-endian `f64`) into `dir`.
    pub fn save_checkpoint(&self, dir: &Path, run_seed: u64, config_digest: Option<&str>) -> Result<(), ModelError> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0usize;
        let mut data = BufWriter::new(fs::File::create(dir.join(CHECKPOINT_DATA))?);
        for ((name, shape), t) in self.config.layout().into_iter().zip(&self.tensors) {
            for &v in t.data() {
                data.write_all(&v.as_f64().to_le_bytes())?;
            }
            entries.push(TensorEntry {
                name,
                shape,
                offset,
                len: t.len(),
            });
            offset += t.len() * 8;
        }
        data.flush()?;
        let manifest = CheckpointManifest {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            run_seed,
            config_digest: config_digest.map(str::to_owned),
            dtype: "f64-le".into(),
            data_file: CHECKPOINT_DATA.into(),
            tensors: entries,
        };
        fs::write(
            dir.join(CHECKPOINT_MANIFEST),
            serde_json::to_string_pretty(&manifest)? + "\n",
        )?;
        Ok(())
    }

    pub fn load_checkpoint(dir: &Path) -> Result<(Self, CheckpointManifest), ModelError> {
        let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(dir.join(CHECKPOINT_MANIFEST))?)?;
        if manifest.format != CHECKPOINT_FORMAT || manifest.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                manifest.format, manifest.version
            )));
        }
        let bytes = fs::read(dir.join(&manifest.data_file))?;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in &manifest.tensors {
            let raw = e
                .offset
                .checked_add(e.len * 8)
                .and_then(|end| bytes.get(e.offset..end))
                .ok_or_else(|| ModelError::Checkpoint(format!("{}: data outside {}", e.name, manifest.data_file)))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
                .collect();
            tensors.push(Tensor::new(e.shape.clone(), data)?);
        }
        let names: Vec<&str> = manifest.tensors.iter().map(|e| e.name.as_str()).collect();
        let expected = manifest.config.layout();
        if names.iter().zip(&expected).any(|(a, (b, _))| a != b) {
            return Err(ModelError::Checkpoint(
                "tensor names do not follow the config layout".into(),
            ));
        }
        let params = Self::from_tensors(manifest.config.clone(), tensors)?;
        Ok((params, manifest))
    }
}

fn conv_blocks<T: Scalar>(tape: &mut Tape<T>, bound: &BoundParams, x: Var, blocks: usize) -> Result<Var, ModelError> {
    #[cfg(feature = "conv")]
    {
        let mut h = x;
        for i in 0..blocks {
            let (w, b) = bound.layer(i);
            h = tape.conv2d(h, w, b, 2, 1)?;
            h = tape.relu(h)?;
        }
        Ok(h)
    }
    #[cfg(not(feature = "conv"))]
    {
        let _ = (tape, bound, x, blocks);
        Err(ModelError::ConvDisabled)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the data file.
    pub offset: usize,
    /// Number of values.
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub run_seed: u64,
    pub config_digest: Option<String>,
    pub dtype: String,
    pub data_file: String,
    pub tensors: Vec<TensorEntry>,
}

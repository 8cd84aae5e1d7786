//! Self-supervised features for spotting generated face images.
//!
//! A small network is trained on two pretext tasks that need no manual
//! labels: ranking image pairs by four ordinal camera tags read from EXIF
//! (aperture, exposure time, focal length, ISO speed), and telling
//! artificially manipulated faces from untouched ones. A Gaussian mixture is
//! then fitted to the features of photographic faces, and inputs whose
//! log-likelihood falls below a low percentile of the training
//! log-likelihoods are flagged as generated.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the common instantiations. Training and all fidelity checks
//! use `f64`.

pub mod autodiff;
pub mod dataset;
pub mod exif;
pub mod gmm;
pub mod image;
pub mod losses;
pub mod manipulation;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod special;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type ModelParams64 = model::ModelParams<f64>;
pub type ModelParams32 = model::ModelParams<f32>;
pub type Gmm64 = gmm::GmmModel<f64>;
pub type Gmm32 = gmm::GmmModel<f32>;
pub type AdamW64 = optim::AdamW<f64>;

//! Seeded small models and minibatches for gradient and descent checks.

use exifgmm_core::exif::ExifRecord;
use exifgmm_core::losses::{batch_loss_value, loss_and_grad};
use exifgmm_core::model::{Architecture, InputSpec, ModelConfig, ModelParams};
use exifgmm_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Case {
    pub params: ModelParams<f64>,
    pub rows: Vec<Vec<f64>>,
    pub records: Vec<ExifRecord>,
    pub labels: Vec<u8>,
}

impl Case {
    pub fn refs(&self) -> Vec<&[f64]> {
        self.rows.iter().map(Vec::as_slice).collect()
    }

    pub fn input(&self) -> Tensor<f64> {
        self.params.config().batch_tensor(&self.refs()).unwrap()
    }

    pub fn loss(&self, params: &ModelParams<f64>) -> f64 {
        batch_loss_value(params, &self.refs(), &self.records, &self.labels).unwrap()
    }
}

/// Tag values drawn from a small set so ties are common; about a quarter of
/// the values are missing.
pub fn random_record<R: Rng>(rng: &mut R) -> ExifRecord {
    let mut pick = |vals: &[f64]| (rng.random_bool(0.75)).then(|| vals[rng.random_range(0..vals.len())]);
    let aperture_f_number = pick(&[1.8, 2.8, 4.0]);
    let exposure_time_s = pick(&[0.004, 0.01, 0.02]);
    let focal_length_mm = pick(&[35.0, 50.0, 85.0]);
    let iso_speed = pick(&[100.0, 200.0, 400.0]).map(|v| v as u32);
    ExifRecord {
        aperture_f_number,
        exposure_time_s,
        focal_length_mm,
        iso_speed,
    }
}

/// A small model with perturbed biases plus a batch of 3..=8 samples. Even
/// seeds use feature vectors, odd seeds 16x16 images summarised in 8x8
/// patches.
pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(4..=10)).collect();
    let feature_dim = rng.random_range(3..=6);
    let b = rng.random_range(3..=8);
    let image = seed % 2 == 1;
    let (input, rows): (InputSpec, Vec<Vec<f64>>) = if image {
        let rows = (0..b)
            .map(|_| (0..24).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        (InputSpec::Image { height: 16, width: 16 }, rows)
    } else {
        let dim = rng.random_range(2..=8);
        let rows = (0..b)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        (InputSpec::Features { dim }, rows)
    };
    let config = ModelConfig {
        input,
        arch: Architecture::Mlp { hidden },
        feature_dim,
        patch_size: 8,
    };
    let mut params = ModelParams::<f64>::init(&config, rng.random()).unwrap();
    let names = params.names();
    for (name, t) in names.iter().zip(params.tensors_mut()) {
        if name.ends_with(".bias") {
            for v in t.data_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
        }
    }
    let records = (0..b).map(|_| random_record(&mut rng)).collect();
    let labels = (0..b).map(|_| rng.random_range(0..=1)).collect();
    Case {
        params,
        rows,
        records,
        labels,
    }
}

/// Agreement between tape gradients and central differences.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradientCheck {
    /// Largest relative error over entries whose absolute difference exceeds
    /// the floor.
    pub max_relative: f64,
    pub max_absolute: f64,
    pub entries: usize,
}

/// Compares the tape gradient with central differences of the scalar
/// evaluator for every parameter. Entries whose absolute difference is
/// within `abs_floor` count as agreeing.
pub fn gradient_check(case: &Case, h: f64, abs_floor: f64) -> GradientCheck {
    let (_, grads) = loss_and_grad(&case.params, case.input(), &case.records, &case.labels).unwrap();
    let mut out = GradientCheck::default();
    for (ti, g) in grads.iter().enumerate() {
        for k in 0..g.len() {
            let mut plus = case.params.clone();
            plus.tensors_mut()[ti].data_mut()[k] += h;
            let mut minus = case.params.clone();
            minus.tensors_mut()[ti].data_mut()[k] -= h;
            let numeric = (case.loss(&plus) - case.loss(&minus)) / (2.0 * h);
            let analytic = g.data()[k];
            let diff = (analytic - numeric).abs();
            out.entries += 1;
            out.max_absolute = out.max_absolute.max(diff);
            if diff > abs_floor {
                out.max_relative = out.max_relative.max(diff / analytic.abs().max(numeric.abs()));
            }
        }
    }
    out
}

/// Largest relative discrepancy reported by [`gradient_check`].
pub fn max_gradient_error(case: &Case, h: f64, abs_floor: f64) -> f64 {
    gradient_check(case, h, abs_floor).max_relative
}

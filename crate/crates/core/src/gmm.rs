//! Gaussian mixture density over feature vectors, fitted by EM.
//!
//! Log densities are always combined with log-sum-exp. Covariances are
//! diagonal by default; full covariances use a Cholesky factor. Every
//! covariance carries `lambda` on its diagonal.

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::stream;
use crate::scalar::Scalar;
use crate::special::log_sum_exp;

const GMM_FORMAT: &str = "exifgmm-gmm";
const GMM_VERSION: u32 = 1;
/// A component whose responsibility mass falls below this share of the
/// sample count is reseeded.
const DEGENERATE_MASS: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GmmError {
    #[error("{samples} samples cannot support {k} components")]
    TooFewSamples { samples: usize, k: usize },
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid mixture parameters: {0}")]
    InvalidParams(String),
    #[error("non-finite feature value")]
    NonFinite,
    #[error("covariance of component {0} is not positive definite")]
    NotPositiveDefinite(usize),
    #[error("model file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceType {
    #[default]
    Diagonal,
    Full,
}

/// Per-dimension affine map `(z - mean) / scale` applied before the density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization<T> {
    pub mean: Vec<T>,
    pub scale: Vec<T>,
}

impl<T: Scalar> Standardization<T> {
    /// Mean and population standard deviation per dimension; a constant
    /// dimension keeps scale 1.
    pub fn fit(features: &[Vec<T>]) -> Self {
        let n = features[0].len();
        let m = T::from_count(features.len());
        let mut mean = vec![T::zero(); n];
        for x in features {
            for (a, &v) in mean.iter_mut().zip(x) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|a| *a /= m);
        let mut var = vec![T::zero(); n];
        for x in features {
            for ((a, &v), &mu) in var.iter_mut().zip(x).zip(&mean) {
                *a += (v - mu) * (v - mu);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let s = (v / m).sqrt();
                if s > T::lit(1e-12) {
                    s
                } else {
                    T::one()
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, z: &[T]) -> Vec<T> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((&v, &mu), &s)| (v - mu) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel<T> {
    weights: Vec<T>,
    means: Vec<Vec<T>>,
    /// Diagonal: `N` variances per component. Full: `N x N` row-major.
    covariances: Vec<Vec<T>>,
    covariance_type: CovarianceType,
    lambda: f64,
    standardization: Option<Standardization<T>>,
    /// Per component: `log pi_k - (N log 2 pi + log det Sigma_k) / 2`.
    log_norms: Vec<T>,
    /// Diagonal: inverse variances. Full: lower Cholesky factor.
    factors: Vec<Vec<T>>,
}

fn cholesky<T: Scalar>(a: &[T], n: usize) -> Option<Vec<T>> {
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= T::zero() || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

impl<T: Scalar> GmmModel<T> {
    pub fn new(
        weights: Vec<T>,
        means: Vec<Vec<T>>,
        covariances: Vec<Vec<T>>,
        covariance_type: CovarianceType,
        lambda: f64,
        standardization: Option<Standardization<T>>,
    ) -> Result<Self, GmmError> {
        let k = weights.len();
        if k == 0 || means.len() != k || covariances.len() != k {
            return Err(GmmError::InvalidParams(format!(
                "{k} weights, {} means, {} covariances",
                means.len(),
                covariances.len()
            )));
        }
        let n = means[0].len();
        if n == 0 {
            return Err(GmmError::InvalidParams("zero feature dimension".into()));
        }
        let cov_len = match covariance_type {
            CovarianceType::Diagonal => n,
            CovarianceType::Full => n * n,
        };
        for (m, c) in means.iter().zip(&covariances) {
            if m.len() != n {
                return Err(GmmError::DimensionMismatch {
                    expected: n,
                    got: m.len(),
                });
            }
            if c.len() != cov_len {
                return Err(GmmError::DimensionMismatch {
                    expected: cov_len,
                    got: c.len(),
                });
            }
        }
        if let Some(s) = &standardization {
            if s.mean.len() != n || s.scale.len() != n || s.scale.iter().any(|&v| v <= T::zero()) {
                return Err(GmmError::InvalidParams(
                    "standardization does not match dimension".into(),
                ));
            }
        }
        let total: T = weights.iter().copied().sum();
        if weights.iter().any(|&w| w < T::zero() || !w.is_finite()) || (total - T::one()).abs() > T::lit(1e-9) {
            return Err(GmmError::InvalidParams("weights must form a probability vector".into()));
        }
        let log_2pi = T::lit((2.0 * std::f64::consts::PI).ln());
        let half = T::lit(0.5);
        let mut log_norms = Vec::with_capacity(k);
        let mut factors = Vec::with_capacity(k);
        for (c, (cov, &w)) in covariances.iter().zip(&weights).enumerate() {
            let (log_det, factor) = match covariance_type {
                CovarianceType::Diagonal => {
                    if cov.iter().any(|&v| v <= T::zero() || !v.is_finite()) {
                        return Err(GmmError::NotPositiveDefinite(c));
                    }
                    (
                        cov.iter().map(|v| v.ln()).sum::<T>(),
                        cov.iter().map(|&v| T::one() / v).collect(),
                    )
                }
                CovarianceType::Full => {
                    for i in 0..n {
                        for j in 0..i {
                            if cov[i * n + j] != cov[j * n + i] {
                                return Err(GmmError::InvalidParams(format!("covariance {c} is not symmetric")));
                            }
                        }
                    }
                    let l = cholesky(cov, n).ok_or(GmmError::NotPositiveDefinite(c))?;
                    let log_det = T::lit(2.0) * (0..n).map(|i| l[i * n + i].ln()).sum::<T>();
                    (log_det, l)
                }
            };
            log_norms.push(w.ln() - half * (T::from_count(n) * log_2pi + log_det));
            factors.push(factor);
        }
        Ok(Self {
            weights,
            means,
            covariances,
            covariance_type,
            lambda,
            standardization,
            log_norms,
            factors,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<T>] {
        &self.means
    }

    pub fn covariances(&self) -> &[Vec<T>] {
        &self.covariances
    }

    pub fn covariance_type(&self) -> CovarianceType {
        self.covariance_type
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn standardization(&self) -> Option<&Standardization<T>> {
        self.standardization.as_ref()
    }

    /// `log pi_k + log N(x; mu_k, Sigma_k)` for every component, on an
    /// already standardized input.
    fn component_log_probs(&self, x: &[T]) -> Vec<T> {
        let n = self.dim();
        let half = T::lit(0.5);
        (0..self.k())
            .map(|c| {
                let mu = &self.means[c];
                let f = &self.factors[c];
                let maha = match self.covariance_type {
                    CovarianceType::Diagonal => x
                        .iter()
                        .zip(mu)
                        .zip(f)
                        .map(|((&v, &m), &inv)| (v - m) * (v - m) * inv)
                        .sum::<T>(),
                    CovarianceType::Full => {
                        // Forward substitution L y = x - mu.
                        let mut y = vec![T::zero(); n];
                        let mut acc = T::zero();
                        for i in 0..n {
                            let mut s = x[i] - mu[i];
                            for j in 0..i {
                                s -= f[i * n + j] * y[j];
                            }
                            y[i] = s / f[i * n + i];
                            acc += y[i] * y[i];
                        }
                        acc
                    }
                };
                self.log_norms[c] - half * maha
            })
            .collect()
    }

    /// `log p(z)`.
    pub fn log_density(&self, z: &[T]) -> Result<T, GmmError> {
        if z.len() != self.dim() {
            return Err(GmmError::DimensionMismatch {
                expected: self.dim(),
                got: z.len(),
            });
        }
        let x = match &self.standardization {
            Some(s) => s.apply(z),
            None => z.to_vec(),
        };
        Ok(log_sum_exp(&self.component_log_probs(&x)))
    }

    /// `log p(z)` for every row, in input order.
    pub fn log_densities(&self, rows: &[Vec<T>]) -> Result<Vec<T>, GmmError> {
        rows.par_iter().map(|z| self.log_density(z)).collect()
    }

    pub fn to_file(&self, config_digest: Option<&str>) -> GmmFile {
        let f = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
        GmmFile {
            format: GMM_FORMAT.into(),
            version: GMM_VERSION,
            k: self.k(),
            n: self.dim(),
            covariance_type: self.covariance_type,
            lambda: self.lambda,
            standardization: self.standardization.as_ref().map(|s| Standardization {
                mean: f(&s.mean),
                scale: f(&s.scale),
            }),
            weights: f(&self.weights),
            means: self.means.iter().map(|m| f(m)).collect(),
            covariances: self.covariances.iter().map(|c| f(c)).collect(),
            config_digest: config_digest.map(str::to_owned),
        }
    }

    pub fn from_file(file: &GmmFile) -> Result<Self, GmmError> {
        if file.format != GMM_FORMAT || file.version != GMM_VERSION {
            return Err(GmmError::Format(format!(
                "unsupported {} v{}",
                file.format, file.version
            )));
        }
        if file.weights.len() != file.k || file.means.iter().any(|m| m.len() != file.n) {
            return Err(GmmError::Format("k/n do not match the arrays".into()));
        }
        let t = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
        Self::new(
            t(&file.weights),
            file.means.iter().map(|m| t(m)).collect(),
            file.covariances.iter().map(|c| t(c)).collect(),
            file.covariance_type,
            file.lambda,
            file.standardization.as_ref().map(|s| Standardization {
                mean: t(&s.mean),
                scale: t(&s.scale),
            }),
        )
    }
}

/// Serialized mixture. Reals are written in shortest round-trip form, so
/// reading a file back reproduces every `f64` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFile {
    pub format: String,
    pub version: u32,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub covariance_type: CovarianceType,
    pub lambda: f64,
    pub standardization: Option<Standardization<f64>>,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<f64>>,
    pub config_digest: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub k: usize,
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub covariance: CovarianceType,
    pub standardize: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            k: 8,
            lambda: 1e-6,
            tol: 1e-6,
            max_iter: 200,
            seed: 0,
            covariance: CovarianceType::Diagonal,
            standardize: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit<T> {
    pub model: GmmModel<T>,
    /// Mean log-likelihood of the initial model, then after every M-step.
    pub log_likelihoods: Vec<T>,
    /// `(iteration, component)` of every reseeded component.
    pub reseeds: Vec<(usize, usize)>,
    pub converged: bool,
}

/// k-means++ seeding: the first centre uniformly, then each next centre with
/// probability proportional to the squared distance to its nearest centre.
pub fn kmeans_plus_plus<T: Scalar, R: RngCore>(data: &[Vec<T>], k: usize, rng: &mut R) -> Vec<usize> {
    let m = data.len();
    let sq = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>().as_f64();
    let mut centres = vec![rng.random_range(0..m)];
    let mut d2: Vec<f64> = data.iter().map(|x| sq(x, &data[centres[0]])).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut pick = m - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            rng.random_range(0..m)
        };
        centres.push(next);
        for (i, x) in data.iter().enumerate() {
            d2[i] = d2[i].min(sq(x, &data[next]));
        }
    }
    centres
}

/// Per-sample log-likelihoods and responsibilities under `model`.
fn e_step<T: Scalar>(model: &GmmModel<T>, data: &[Vec<T>]) -> (Vec<T>, Vec<Vec<T>>) {
    let out: Vec<(T, Vec<T>)> = data
        .par_iter()
        .map(|x| {
            let lp = model.component_log_probs(x);
            let ll = log_sum_exp(&lp);
            (ll, lp.into_iter().map(|v| (v - ll).exp()).collect())
        })
        .collect();
    out.into_iter().unzip()
}

fn mean_of<T: Scalar>(v: &[T]) -> T {
    v.iter().copied().sum::<T>() / T::from_count(v.len())
}

/// Fits a `k`-component mixture to the rows of `features`.
pub fn fit_em<T: Scalar>(features: &[Vec<T>], cfg: &EmConfig) -> Result<EmFit<T>, GmmError> {
    let m = features.len();
    if cfg.k == 0 || m < cfg.k {
        return Err(GmmError::TooFewSamples { samples: m, k: cfg.k });
    }
    if cfg.lambda.is_nan() || cfg.lambda <= 0.0 || cfg.tol.is_nan() || cfg.tol < 0.0 {
        return Err(GmmError::InvalidParams(format!(
            "lambda {} / tol {}",
            cfg.lambda, cfg.tol
        )));
    }
    let n = features[0].len();
    for row in features {
        if row.len() != n {
            return Err(GmmError::DimensionMismatch {
                expected: n,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(GmmError::NonFinite);
        }
    }
    let standardization = cfg.standardize.then(|| Standardization::fit(features));
    let data: Vec<Vec<T>> = match &standardization {
        Some(s) => features.iter().map(|z| s.apply(z)).collect(),
        None => features.to_vec(),
    };
    let lambda = T::lit(cfg.lambda);
    let k = cfg.k;

    let overall = Standardization::fit(&data);
    let data_var: Vec<T> = overall.scale.iter().map(|&s| s * s + lambda).collect();
    let base_cov = |var: &[T]| -> Vec<T> {
        match cfg.covariance {
            CovarianceType::Diagonal => var.to_vec(),
            CovarianceType::Full => {
                let mut c = vec![T::zero(); n * n];
                for i in 0..n {
                    c[i * n + i] = var[i];
                }
                c
            }
        }
    };

    let mut rng = stream(cfg.seed, &[]);
    let centres = kmeans_plus_plus(&data, k, &mut rng);
    let build =
        |w: Vec<T>, mu: Vec<Vec<T>>, cov: Vec<Vec<T>>| GmmModel::new(w, mu, cov, cfg.covariance, cfg.lambda, None);
    let mut model = build(
        vec![T::one() / T::from_count(k); k],
        centres.iter().map(|&c| data[c].clone()).collect(),
        vec![base_cov(&data_var); k],
    )?;

    let (mut lls, mut resp) = e_step(&model, &data);
    let mut history = vec![mean_of(&lls)];
    let mut reseeds = Vec::new();
    let mut converged = false;
    for iter in 1..=cfg.max_iter {
        let mut mass = vec![T::zero(); k];
        for r in &resp {
            for (a, &v) in mass.iter_mut().zip(r) {
                *a += v;
            }
        }
        // Reseed starved components at the least likely points.
        let floor = T::lit(DEGENERATE_MASS) * T::from_count(m);
        let mut by_ll: Vec<usize> = (0..m).collect();
        by_ll.sort_by(|&a, &b| lls[a].total_cmp(&lls[b]).then(a.cmp(&b)));
        let mut next_point = by_ll.into_iter();
        let mut reseeded = vec![false; k];
        for c in 0..k {
            if mass[c] < floor {
                reseeded[c] = true;
                reseeds.push((iter, c));
            }
        }

        let mut weights = Vec::with_capacity(k);
        let mut means = Vec::with_capacity(k);
        let mut covs = Vec::with_capacity(k);
        for c in 0..k {
            if reseeded[c] {
                let p = next_point.next().unwrap_or(0);
                weights.push(T::one() / T::from_count(k));
                means.push(data[p].clone());
                covs.push(base_cov(&data_var));
                continue;
            }
            let nk = mass[c];
            let mut mu = vec![T::zero(); n];
            for (x, r) in data.iter().zip(&resp) {
                let w = r[c];
                for (a, &v) in mu.iter_mut().zip(x) {
                    *a += w * v;
                }
            }
            mu.iter_mut().for_each(|a| *a /= nk);
            let cov = match cfg.covariance {
                CovarianceType::Diagonal => {
                    let mut var = vec![T::zero(); n];
                    for (x, r) in data.iter().zip(&resp) {
                        let w = r[c];
                        for ((a, &v), &mv) in var.iter_mut().zip(x).zip(&mu) {
                            *a += w * (v - mv) * (v - mv);
                        }
                    }
                    var.into_iter().map(|a| a / nk + lambda).collect()
                }
                CovarianceType::Full => {
                    let mut cov = vec![T::zero(); n * n];
                    let mut d = vec![T::zero(); n];
                    for (x, r) in data.iter().zip(&resp) {
                        let w = r[c];
                        for i in 0..n {
                            d[i] = x[i] - mu[i];
                        }
                        for i in 0..n {
                            let wi = w * d[i];
                            for j in 0..=i {
                                cov[i * n + j] += wi * d[j];
                            }
                        }
                    }
                    for i in 0..n {
                        for j in 0..=i {
                            let v = cov[i * n + j] / nk;
                            cov[i * n + j] = v;
                            cov[j * n + i] = v;
                        }
                        cov[i * n + i] += lambda;
                    }
                    cov
                }
            };
            weights.push(nk);
            means.push(mu);
            covs.push(cov);
        }
        let total: T = weights.iter().copied().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        model = build(weights, means, covs)?;

        let prev = *history.last().expect("initial likelihood");
        (lls, resp) = e_step(&model, &data);
        let cur = mean_of(&lls);
        history.push(cur);
        let any_reseed = reseeded.iter().any(|&r| r);
        if !any_reseed && (cur - prev) / prev.abs().max(T::lit(1e-300)) < T::lit(cfg.tol) {
            converged = true;
            break;
        }
    }
    let model = GmmModel {
        standardization,
        ..model
    };
    Ok(EmFit {
        model,
        log_likelihoods: history,
        reseeds,
        converged,
    })
}

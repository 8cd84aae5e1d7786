use exifgmm_core::gmm::{fit_em, kmeans_plus_plus, CovarianceType, EmConfig, GmmFile, GmmModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Rows from a random mixture of `clusters` axis-aligned Gaussians.
fn random_dataset(seed: u64) -> (Vec<Vec<f64>>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(1..=4);
    let clusters = rng.random_range(1..=4);
    let m = rng.random_range(60..=240);
    let centres: Vec<Vec<f64>> = (0..clusters)
        .map(|_| (0..dim).map(|_| rng.random_range(-6.0..6.0)).collect())
        .collect();
    let scales: Vec<f64> = (0..clusters).map(|_| rng.random_range(0.3..2.0)).collect();
    let rows = (0..m)
        .map(|_| {
            let c = rng.random_range(0..clusters);
            (0..dim)
                .map(|d| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    centres[c][d] + scales[c] * z
                })
                .collect()
        })
        .collect();
    (rows, rng.random_range(1..=5))
}

#[test]
fn log_likelihood_never_decreases() {
    let mut checked = 0;
    for seed in 0..100u64 {
        let (rows, k) = random_dataset(seed);
        let cfg = EmConfig {
            k,
            seed,
            covariance: if seed % 2 == 0 {
                CovarianceType::Diagonal
            } else {
                CovarianceType::Full
            },
            ..Default::default()
        };
        let fit = fit_em(&rows, &cfg).unwrap();
        for (i, w) in fit.log_likelihoods.windows(2).enumerate() {
            assert!(
                w[1] - w[0] >= -1e-9,
                "seed {seed} iteration {}: {} -> {}",
                i + 1,
                w[0],
                w[1]
            );
            checked += 1;
        }
    }
    assert!(checked > 500, "only {checked} iterations checked");
}

#[test]
fn two_clusters_are_recovered() {
    let mut ok = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let w0 = rng.random_range(0.3..0.7);
        let truth = [[-5.0, -5.0], [5.0, 5.0]];
        let rows: Vec<Vec<f64>> = (0..2000)
            .map(|_| {
                let c = usize::from(rng.random::<f64>() >= w0);
                truth[c]
                    .iter()
                    .map(|&mu| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        mu + z
                    })
                    .collect()
            })
            .collect();
        let fit = fit_em(
            &rows,
            &EmConfig {
                k: 2,
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let g = &fit.model;
        let first = usize::from(g.means()[0][0] > 0.0);
        let order = [first, 1 - first];
        let means_ok = (0..2).all(|c| {
            g.means()[order[c]]
                .iter()
                .zip(&truth[c])
                .all(|(&a, &b)| (a - b).abs() < 0.1)
        });
        let weights_ok = (g.weights()[order[0]] - w0).abs() < 0.05 && (g.weights()[order[1]] - (1.0 - w0)).abs() < 0.05;
        ok += usize::from(means_ok && weights_ok);
    }
    assert!(ok >= 95, "{ok}/100 seeds recovered both clusters");
}

#[test]
fn parallel_scoring_matches_sequential() {
    let (rows, k) = random_dataset(7);
    let fit = fit_em(
        &rows,
        &EmConfig {
            k,
            ..Default::default()
        },
    )
    .unwrap();
    let batch = fit.model.log_densities(&rows).unwrap();
    for (r, b) in rows.iter().zip(&batch) {
        assert_eq!(fit.model.log_density(r).unwrap(), *b);
    }
}

#[test]
fn same_seed_same_model_file() {
    let (rows, k) = random_dataset(21);
    let cfg = EmConfig {
        k,
        seed: 3,
        standardize: true,
        ..Default::default()
    };
    let a = serde_json::to_string(&fit_em(&rows, &cfg).unwrap().model.to_file(Some("abc"))).unwrap();
    let b = serde_json::to_string(&fit_em(&rows, &cfg).unwrap().model.to_file(Some("abc"))).unwrap();
    assert_eq!(a, b);
    let back: GmmFile = serde_json::from_str(&a).unwrap();
    let model = GmmModel::<f64>::from_file(&back).unwrap();
    assert_eq!(serde_json::to_string(&model.to_file(Some("abc"))).unwrap(), a);
}

proptest! {
    #[test]
    fn kmeans_plus_plus_picks_distinct_points(seed in any::<u64>(), k in 1usize..6) {
        let (rows, _) = random_dataset(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centres = kmeans_plus_plus(&rows, k, &mut rng);
        prop_assert_eq!(centres.len(), k);
        let mut sorted = centres.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), k);
    }

    #[test]
    fn fitted_densities_are_finite_and_weights_sum_to_one(seed in 0u64..10_000) {
        let (rows, k) = random_dataset(seed);
        let fit = fit_em(&rows, &EmConfig { k, seed, max_iter: 30, ..Default::default() }).unwrap();
        let total: f64 = fit.model.weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        for r in &rows {
            prop_assert!(fit.model.log_density(r).unwrap().is_finite());
        }
    }
}

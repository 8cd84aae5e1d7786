mod common;

use common::oracles::{all_multisets, ap_extremes, brute_ap, brute_auc, percentile_oracle};
use exifgmm_core::metrics::{accuracy, auc, average_precision, calibrate_threshold, DetectionReport, MetricError};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Scores and labels of a multiset, in canonical and reversed order.
fn orders(ms: &[(usize, u8)]) -> [(Vec<f64>, Vec<u8>); 2] {
    let s: Vec<f64> = ms.iter().map(|p| p.0 as f64 * 0.25).collect();
    let l: Vec<u8> = ms.iter().map(|p| p.1).collect();
    let rs: Vec<f64> = s.iter().rev().copied().collect();
    let rl: Vec<u8> = l.iter().rev().copied().collect();
    [(s, l), (rs, rl)]
}

#[test]
fn ap_and_auc_match_enumeration_on_all_small_multisets() {
    let sets = all_multisets(4, 8);
    assert!(sets.len() > 10_000);
    let mut ap_checked = 0;
    let mut auc_checked = 0;
    for ms in &sets {
        for (s, l) in orders(ms) {
            let pos = l.iter().filter(|&&v| v == 1).count();
            match average_precision(&s, &l) {
                Ok(ap) => {
                    assert_eq!(ap, brute_ap(&s, &l), "{s:?} {l:?}");
                    let (lo, hi) = ap_extremes(&s, &l);
                    assert!(lo <= ap && ap <= hi, "{s:?} {l:?}: {lo} <= {ap} <= {hi}");
                    ap_checked += 1;
                }
                Err(e) => assert!(pos == 0 && e == MetricError::NoPositives),
            }
            match auc(&s, &l) {
                Ok(a) => {
                    let (num, den) = brute_auc(&s, &l);
                    assert_eq!(a, num as f64 / den as f64, "{s:?} {l:?}");
                    auc_checked += 1;
                }
                Err(e) => assert!((pos == 0 || pos == l.len()) && e == MetricError::OneClassOnly),
            }
        }
    }
    assert!(ap_checked > 10_000 && auc_checked > 10_000);
}

#[test]
fn documented_fixtures() {
    let ap = average_precision(&[0.9, 0.8, 0.7], &[1, 0, 1]).unwrap();
    assert_eq!(ap, 0.5 * (1.0 + 2.0 / 3.0));
    assert!((ap - 0.8333333333).abs() < 1e-9);
    assert_eq!(auc(&[0.9, 0.7, 0.8, 0.1], &[1, 1, 0, 0]).unwrap(), 0.75);
    assert_eq!(auc(&[0.3; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
    assert_eq!(average_precision(&[0.4], &[1]).unwrap(), 1.0);
    assert_eq!(accuracy(&[-5.0, -1.0], &[1, 0], -3.0).unwrap(), 1.0);
    assert_eq!(accuracy(&[1.0, 2.0, 3.0, 4.0], &[1, 0, 0, 0], 0.0).unwrap(), 0.75);
}

#[test]
fn hand_report_of_four_samples() {
    // Log-likelihoods; anomaly score is their negation.
    let ll = [-0.9, -0.8, -0.7, -0.1];
    let labels = [Some(1), Some(0), Some(1), Some(0)];
    let ids: Vec<String> = (0..4).map(|i| format!("s{i}")).collect();
    let r = DetectionReport::build(&ids, &ll, &labels, -0.75, 0.05, Some("d")).unwrap();
    assert_eq!(r.ap, Some(brute_ap(&[0.9, 0.8, 0.7, 0.1], &[1, 0, 1, 0])));
    assert_eq!(r.auc, Some(0.75));
    assert_eq!(r.acc, Some(0.5));
    assert_eq!(r.flagged_fraction, 0.5);
}

#[test]
fn threshold_fixtures() {
    let v: Vec<f64> = (1..=100).map(f64::from).collect();
    assert_eq!(calibrate_threshold(&v, 0.05).unwrap(), 5.95);
    assert_eq!(calibrate_threshold(&[3.0, 1.0], 0.5).unwrap(), 2.0);
    assert_eq!(calibrate_threshold(&[7.5; 9], 0.05).unwrap(), 7.5);
    assert_eq!(
        calibrate_threshold::<f64>(&[], 0.05).unwrap_err(),
        MetricError::EmptyInput
    );
}

#[test]
fn threshold_rate_on_ten_thousand_log_likelihoods() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let dist = Normal::new(-40.0, 6.0).unwrap();
    let ll: Vec<f64> = (0..10_000).map(|_| dist.sample(&mut rng)).collect();
    let t = calibrate_threshold(&ll, 0.05).unwrap();
    let below = ll.iter().filter(|&&v| v < t).count() as f64 / ll.len() as f64;
    assert!((below - 0.05).abs() <= 0.005, "{below}");
}

proptest! {
    #[test]
    fn threshold_matches_definition_and_is_self_consistent(
        v in proptest::collection::vec(-1e3f64..1e3, 1..300),
        rate in 0.01f64..0.99,
    ) {
        let t = calibrate_threshold(&v, rate).unwrap();
        prop_assert_eq!(t, percentile_oracle(&v, rate));
        let n = v.len() as f64;
        let below = v.iter().filter(|&&x| x < t).count() as f64 / n;
        prop_assert!(below <= rate + 1.0 / n + 1e-12, "{} vs {}", below, rate);
        let at_or_below = v.iter().filter(|&&x| x <= t).count() as f64 / n;
        prop_assert!(at_or_below >= rate - 1.0 / n - 1e-12);
    }

    #[test]
    fn auc_invariant_under_increasing_maps(
        s in proptest::collection::vec(-5.0f64..5.0, 2..60),
        labels_seed in any::<u64>(),
    ) {
        let labels: Vec<u8> = (0..s.len()).map(|i| ((labels_seed >> (i % 64)) & 1) as u8).collect();
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let mapped: Vec<f64> = s.iter().map(|&x| x.exp() * 3.0 + 1.0).collect();
        prop_assert_eq!(auc(&s, &labels).unwrap(), auc(&mapped, &labels).unwrap());
    }

    #[test]
    fn metrics_stay_in_unit_interval(
        s in proptest::collection::vec(-5.0f64..5.0, 1..60),
        labels_seed in any::<u64>(),
        thr in -5.0f64..5.0,
    ) {
        let labels: Vec<u8> = (0..s.len()).map(|i| ((labels_seed >> (i % 64)) & 1) as u8).collect();
        if let Ok(ap) = average_precision(&s, &labels) {
            prop_assert!((0.0..=1.0).contains(&ap));
        }
        if let Ok(a) = auc(&s, &labels) {
            prop_assert!((0.0..=1.0).contains(&a));
        }
        let acc = accuracy(&s, &labels, thr).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
    }
}

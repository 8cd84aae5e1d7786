//! Independent reference implementations used to check the library.

use exifgmm_core::exif::{ExifRecord, ExifTag};

/// Maclaurin series of erf, summed until terms vanish. Accurate to a few
/// ulps for |x| <= 3.
pub fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    let x2 = x * x;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= -x2 / n;
        let add = term / (2.0 * n + 1.0);
        sum += add;
        if add.abs() <= 1e-20 * sum.abs() {
            break;
        }
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

/// Continued fraction of erfc for x > 0, evaluated from the tail:
/// `erfc(x) = exp(-x^2) / sqrt(pi) / (x + (1/2) / (x + 1 / (x + (3/2) / ...)))`.
pub fn erfc_continued_fraction(x: f64) -> f64 {
    let mut tail = x;
    for k in (1..=300).rev() {
        tail = x + (k as f64 / 2.0) / tail;
    }
    (-x * x).exp() / std::f64::consts::PI.sqrt() / tail
}

/// Standard normal CDF from the series near zero and the continued
/// fraction in the tails.
pub fn normal_cdf_series(x: f64) -> f64 {
    let t = x / std::f64::consts::SQRT_2;
    if t.abs() <= 2.5 {
        0.5 * (1.0 + erf_series(t))
    } else if t > 0.0 {
        1.0 - 0.5 * erfc_continued_fraction(t)
    } else {
        0.5 * erfc_continued_fraction(-t)
    }
}

/// Overall batch loss evaluated by hand from head logits: every unordered
/// pair and tag is visited directly, ties contribute both orientations at
/// half weight.
pub fn batch_loss_oracle(logits: &[[f64; 5]], records: &[ExifRecord], labels: &[u8]) -> f64 {
    let clamp = |p: f64| p.clamp(1e-6, 1.0 - 1e-6);
    let fid = |p: f64, q: f64| 1.0 - (p * q).sqrt() - ((1.0 - p) * (1.0 - q)).sqrt();
    let b = labels.len();
    let mut rank = 0.0;
    let mut pairs = 0usize;
    for x in 0..b {
        for y in x + 1..b {
            let mut any = false;
            for (h, tag) in ExifTag::ALL.iter().enumerate() {
                let (Some(tx), Some(ty)) = (records[x].get(*tag), records[y].get(*tag)) else {
                    continue;
                };
                any = true;
                let q_xy = clamp(normal_cdf_series(
                    (logits[x][h] - logits[y][h]) / std::f64::consts::SQRT_2,
                ));
                let q_yx = clamp(normal_cdf_series(
                    (logits[y][h] - logits[x][h]) / std::f64::consts::SQRT_2,
                ));
                rank += if tx == ty {
                    0.5 * fid(1.0, q_xy) + 0.5 * fid(1.0, q_yx)
                } else if tx > ty {
                    fid(1.0, q_xy)
                } else {
                    fid(1.0, q_yx)
                };
            }
            pairs += usize::from(any);
        }
    }
    let rank = if pairs > 0 { rank / pairs as f64 } else { 0.0 };
    let cls: f64 = (0..b)
        .map(|i| {
            let q = clamp(1.0 / (1.0 + (-logits[i][4]).exp()));
            fid(labels[i] as f64, q)
        })
        .sum::<f64>()
        / b as f64;
    rank + cls
}

/// AP with ties broken by input order: a sample ranks above `i` when its
/// score is higher, or equal with a smaller index. Precisions are summed in
/// rank order.
pub fn brute_ap(scores: &[f64], labels: &[u8]) -> f64 {
    let n = scores.len();
    let above = |j: usize, i: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
    let mut per_positive: Vec<(usize, f64)> = Vec::new();
    for i in (0..n).filter(|&i| labels[i] == 1) {
        let rank = (0..n).filter(|&j| above(j, i)).count() + 1;
        let hits = (0..n).filter(|&j| labels[j] == 1 && above(j, i)).count() + 1;
        per_positive.push((rank, hits as f64 / rank as f64));
    }
    per_positive.sort_by_key(|p| p.0);
    let sum: f64 = per_positive.iter().fold(0.0, |acc, p| acc + p.1);
    sum / per_positive.len() as f64
}

/// AP when every tie group puts its negatives first (pessimistic) or its
/// positives first (optimistic).
pub fn ap_extremes(scores: &[f64], labels: &[u8]) -> (f64, f64) {
    let with_order = |pos_first: bool| {
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        idx.sort_by(|&a, &b| {
            scores[b].partial_cmp(&scores[a]).unwrap().then_with(|| {
                if pos_first {
                    labels[b].cmp(&labels[a])
                } else {
                    labels[a].cmp(&labels[b])
                }
            })
        });
        let reordered_s: Vec<f64> = (0..idx.len()).map(|r| -(r as f64)).collect();
        let reordered_l: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        brute_ap(&reordered_s, &reordered_l)
    };
    (with_order(false), with_order(true))
}

/// Mann-Whitney AUC as an exact fraction `(2 * wins + ties, 2 * pos * neg)`.
pub fn brute_auc(scores: &[f64], labels: &[u8]) -> (u64, u64) {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for i in (0..scores.len()).filter(|&i| labels[i] == 1) {
        for j in (0..scores.len()).filter(|&j| labels[j] == 0) {
            pairs += 1;
            twice += if scores[i] > scores[j] {
                2
            } else if scores[i] == scores[j] {
                1
            } else {
                0
            };
        }
    }
    (twice, 2 * pairs)
}

/// Every multiset of `(score level, label)` items of size `1..=max_len`
/// over `levels` score levels, each in canonical order.
pub fn all_multisets(levels: usize, max_len: usize) -> Vec<Vec<(usize, u8)>> {
    let alphabet: Vec<(usize, u8)> = (0..levels).flat_map(|s| [(s, 0u8), (s, 1u8)]).collect();
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(
        alpha: &[(usize, u8)],
        start: usize,
        max_len: usize,
        cur: &mut Vec<(usize, u8)>,
        out: &mut Vec<Vec<(usize, u8)>>,
    ) {
        if !cur.is_empty() {
            out.push(cur.clone());
        }
        if cur.len() == max_len {
            return;
        }
        for k in start..alpha.len() {
            cur.push(alpha[k]);
            rec(alpha, k, max_len, cur, out);
            cur.pop();
        }
    }
    rec(&alphabet, 0, max_len, &mut cur, &mut out);
    out
}

/// Linear-interpolation percentile computed from the definition.
pub fn percentile_oracle(values: &[f64], rate: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = (v.len() - 1) as f64 * rate;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

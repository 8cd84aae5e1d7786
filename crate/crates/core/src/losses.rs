//! Pretext objectives: pairwise EXIF ranking under the Thurstone model and
//! manipulation classification, both scored with the fidelity loss
//! `1 - sqrt(p * q) - sqrt((1 - p) * (1 - q))`.
//!
//! Pairs are unordered. A strict pair is oriented so its label is 1, which
//! leaves its loss unchanged because `q(y, x) = 1 - q(x, y)` and the clamp
//! is symmetric. A tie (label 1 in both orders) contributes the mean of its
//! two ordered terms, so the loss does not depend on batch order.

use thiserror::Error;

use crate::autodiff::{Tape, Var};
use crate::exif::{ExifRecord, ExifTag};
use crate::model::{BoundParams, ModelError, ModelParams, CLASSIFICATION_HEAD};
use crate::scalar::Scalar;
use crate::special;
use crate::tensor::{Tensor, TensorError};

/// Probability clamp applied before every square root.
pub const PROB_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch has {inputs} inputs but {records} EXIF records and {labels} labels")]
    LengthMismatch {
        inputs: usize,
        records: usize,
        labels: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// 1 when `tag(x) >= tag(y)`, 0 otherwise, `None` when either is missing.
pub fn pair_label(x: &ExifRecord, y: &ExifRecord, tag: ExifTag) -> Option<u8> {
    let (a, b) = (x.get(tag)?, y.get(tag)?);
    Some(u8::from(a >= b))
}

fn clamp_prob<T: Scalar>(p: T) -> T {
    let eps = T::lit(PROB_EPS);
    p.max(eps).min(T::one() - eps)
}

/// `Phi((s_x - s_y) / sqrt(2))` before clamping.
pub fn thurstone_prob_unclamped<T: Scalar>(logit_x: T, logit_y: T) -> T {
    special::normal_cdf((logit_x - logit_y) / T::lit(std::f64::consts::SQRT_2))
}

/// Probability that `x` ranks at or above `y`, clamped to `[eps, 1 - eps]`.
pub fn thurstone_prob<T: Scalar>(logit_x: T, logit_y: T) -> T {
    clamp_prob(thurstone_prob_unclamped(logit_x, logit_y))
}

pub fn fidelity_loss<T: Scalar>(p: T, q: T) -> T {
    let one = T::one();
    one - (p * q).sqrt() - ((one - p) * (one - q)).sqrt()
}

/// Manipulation probability, clamped to `[eps, 1 - eps]`.
pub fn cls_prob<T: Scalar>(logit: T) -> T {
    clamp_prob(special::sigmoid(logit))
}

/// Ranking pairs of one tag, each oriented so its label is 1, with weight
/// 1 for strict pairs and 1/2 for each orientation of a tie.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TagPairs {
    pub pairs: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
}

/// Per-tag pair lists plus the number of unordered pairs with at least one
/// defined tag.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairPlan {
    pub tags: [TagPairs; 4],
    pub contributing_pairs: usize,
}

pub fn plan_pairs(records: &[ExifRecord]) -> PairPlan {
    let mut plan = PairPlan::default();
    for a in 0..records.len() {
        for b in a + 1..records.len() {
            let mut any = false;
            for tag in ExifTag::ALL {
                let Some(p) = pair_label(&records[a], &records[b], tag) else {
                    continue;
                };
                any = true;
                let tp = &mut plan.tags[tag.index()];
                let tie = pair_label(&records[b], &records[a], tag) == Some(1) && p == 1;
                if tie {
                    tp.pairs.extend([(a, b), (b, a)]);
                    tp.weights.extend([0.5, 0.5]);
                } else if p == 1 {
                    tp.pairs.push((a, b));
                    tp.weights.push(1.0);
                } else {
                    tp.pairs.push((b, a));
                    tp.weights.push(1.0);
                }
            }
            plan.contributing_pairs += usize::from(any);
        }
    }
    plan
}

/// Scalar loss node plus its two components.
#[derive(Debug, Clone, Copy)]
pub struct BatchLoss<T> {
    pub total: Var,
    pub ranking: T,
    pub classification: T,
    pub contributing_pairs: usize,
}

/// Records the overall minibatch loss on `tape`: mean ranking fidelity over
/// contributing pairs plus mean classification fidelity over the batch.
pub fn batch_loss<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    bound: &BoundParams,
    input: Var,
    records: &[ExifRecord],
    labels: &[u8],
) -> Result<BatchLoss<T>, LossError> {
    let b = labels.len();
    if b == 0 {
        return Err(LossError::EmptyBatch);
    }
    let inputs = tape.value(input).shape()[0];
    if inputs != b || records.len() != b {
        return Err(LossError::LengthMismatch {
            inputs,
            records: records.len(),
            labels: b,
        });
    }
    let eps = T::lit(PROB_EPS);
    let z = params.extract(tape, bound, input)?;

    let plan = plan_pairs(records);
    let mut ranking: Option<Var> = None;
    for tag in ExifTag::ALL {
        let tp = &plan.tags[tag.index()];
        if tp.pairs.is_empty() {
            continue;
        }
        let s = params.head(tape, bound, z, tag.index())?;
        let d = tape.pair_diff(s, tp.pairs.clone())?;
        let d = tape.scale(d, T::lit(std::f64::consts::FRAC_1_SQRT_2))?;
        let q = tape.normal_cdf(d)?;
        let q = tape.clamp(q, eps, T::one() - eps)?;
        let r = tape.sqrt(q, eps)?;
        let term = tape.affine(r, -T::one(), T::one())?;
        let w = Tensor::vector(tp.weights.iter().map(|&v| T::lit(v)).collect());
        let term = tape.mul_const(term, w)?;
        let term = tape.sum(term)?;
        ranking = Some(match ranking {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }

    // For label 0 the fidelity term uses 1 - q; write both as sign * q + shift.
    let c = params.head(tape, bound, z, CLASSIFICATION_HEAD)?;
    let q = tape.sigmoid(c)?;
    let q = tape.clamp(q, eps, T::one() - eps)?;
    let sign = Tensor::column(
        labels
            .iter()
            .map(|&l| if l == 1 { T::one() } else { -T::one() })
            .collect(),
    );
    let shift = tape.leaf(Tensor::column(
        labels
            .iter()
            .map(|&l| if l == 1 { T::zero() } else { T::one() })
            .collect(),
    ));
    let q = tape.mul_const(q, sign)?;
    let q = tape.add(q, shift)?;
    let r = tape.sqrt(q, eps)?;
    let term = tape.affine(r, -T::one(), T::one())?;
    let cls = tape.sum(term)?;
    let cls = tape.scale(cls, T::one() / T::from_count(b))?;
    let classification = tape.value(cls).data()[0];

    let (total, ranking) = match ranking {
        Some(r) if plan.contributing_pairs > 0 => {
            let r = tape.scale(r, T::one() / T::from_count(plan.contributing_pairs))?;
            let value = tape.value(r).data()[0];
            (tape.add(r, cls)?, value)
        }
        _ => (cls, T::zero()),
    };
    Ok(BatchLoss {
        total,
        ranking,
        classification,
        contributing_pairs: plan.contributing_pairs,
    })
}

/// Loss value and gradients for every parameter tensor, in storage order.
pub fn loss_and_grad<T: Scalar>(
    params: &ModelParams<T>,
    input: Tensor<T>,
    records: &[ExifRecord],
    labels: &[u8],
) -> Result<(T, Vec<Tensor<T>>), LossError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let x = tape.leaf(input);
    let loss = batch_loss(&mut tape, params, &bound, x, records, labels)?;
    let value = tape.value(loss.total).data()[0];
    let grads = tape.backward(loss.total)?;
    let out = bound
        .vars()
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| grads.get_or_zeros(v, t))
        .collect();
    Ok((value, out))
}

/// Loss value only, evaluated with plain scalar arithmetic on the logits.
pub fn batch_loss_value<T: Scalar>(
    params: &ModelParams<T>,
    rows: &[&[f64]],
    records: &[ExifRecord],
    labels: &[u8],
) -> Result<T, LossError> {
    if labels.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    if rows.len() != labels.len() || records.len() != labels.len() {
        return Err(LossError::LengthMismatch {
            inputs: rows.len(),
            records: records.len(),
            labels: labels.len(),
        });
    }
    let logits = params.logits(rows)?;
    let plan = plan_pairs(records);
    let mut ranking = T::zero();
    for tag in ExifTag::ALL {
        let tp = &plan.tags[tag.index()];
        for (&(a, b), &w) in tp.pairs.iter().zip(&tp.weights) {
            let q = thurstone_prob(logits[a][tag.index()], logits[b][tag.index()]);
            ranking += T::lit(w) * fidelity_loss(T::one(), q);
        }
    }
    if plan.contributing_pairs > 0 {
        ranking /= T::from_count(plan.contributing_pairs);
    }
    let cls: T = labels
        .iter()
        .zip(&logits)
        .map(|(&l, lg)| fidelity_loss(T::lit(l as f64), cls_prob(lg[CLASSIFICATION_HEAD])))
        .sum::<T>()
        / T::from_count(labels.len());
    Ok(ranking + cls)
}

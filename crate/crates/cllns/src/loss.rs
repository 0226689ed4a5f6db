//! Training losses over a score vector: the contrastive loss against
//! positive/negative action sets, and the per-variable classification loss
//! used by the imitation ablation. Both return the analytic gradient with
//! respect to the scores.

use crate::collect::SampleSet;
use crate::error::{Error, Result};
use crate::ilp::Action;

const BCE_EPS: f64 = 1e-7;

fn dot(action: &Action, scores: &[f64]) -> f64 {
    action.mask.iter_ones().map(|j| scores[j]).sum()
}

/// Contrastive loss with dot-product similarity and temperature `tau`:
/// `-(1/|P|) sum_{a in P} log( exp(a.s/tau) / sum_{a' in N ∪ {a}} exp(a'.s/tau) )`.
/// Computed with max-subtracted log-sum-exp.
pub fn info_nce(scores: &[f64], samples: &SampleSet, tau: f64) -> Result<(f64, Vec<f64>)> {
    if samples.positives.is_empty() {
        return Err(Error::InvalidArgument(
            "contrastive loss needs at least one positive sample".into(),
        ));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument("temperature must be > 0".into()));
    }
    let n = scores.len();
    let neg_logits: Vec<f64> = samples
        .negatives
        .iter()
        .map(|a| dot(a, scores) / tau)
        .collect();

    let inv_p = 1.0 / samples.positives.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for positive in &samples.positives {
        let z_pos = dot(positive, scores) / tau;
        let max = neg_logits.iter().fold(z_pos, |a, &b| a.max(b));
        let exp_pos = (z_pos - max).exp();
        let total = exp_pos + neg_logits.iter().map(|&z| (z - max).exp()).sum::<f64>();
        loss += inv_p * (total.ln() + max - z_pos);

        // d/ds = (1/|P|) [ (p_a - 1) a + sum_n p_n n ] / tau
        let p_pos = exp_pos / total;
        let w_pos = inv_p * (p_pos - 1.0) / tau;
        for j in positive.mask.iter_ones() {
            grad[j] += w_pos;
        }
        for (negative, &z) in samples.negatives.iter().zip(&neg_logits) {
            let p_neg = (z - max).exp() / total;
            let w_neg = inv_p * p_neg / tau;
            for j in negative.mask.iter_ones() {
                grad[j] += w_neg;
            }
        }
    }
    Ok((loss, grad))
}

/// Mean binary cross-entropy between the scores and the highest-improvement
/// positive action (`positives` is sorted best-first), for the imitation
/// ablation.
pub fn imitation_bce(scores: &[f64], positives: &[Action]) -> Result<(f64, Vec<f64>)> {
    let target = positives.first().ok_or_else(|| {
        Error::InvalidArgument("classification loss needs at least one positive".into())
    })?;
    let n = scores.len();
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for j in 0..n {
        let y = f64::from(target.mask.get(j));
        let s = scores[j].clamp(BCE_EPS, 1.0 - BCE_EPS);
        loss -= inv_n * (y * s.ln() + (1.0 - y) * (1.0 - s).ln());
        // The loss is constant where the clamp is active.
        grad[j] = if s == scores[j] {
            inv_n * (-y / s + (1.0 - y) / (1.0 - s))
        } else {
            0.0
        };
    }
    Ok((loss, grad))
}

//! The three training losses and their derivatives.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{geodesic_distance, Rotation};
use crate::heads::Model;
use crate::nn::sigmoid;
use crate::real::Real;

pub const PRED_CLAMP: f64 = 1e-7;
/// Cosines are kept this far from ±1 so arccos stays differentiable.
pub const GEODESIC_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy of probabilities against bit labels.
pub fn loss_scoring(predicted: &[f64], labels: &[bool]) -> Result<f64> {
    if predicted.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} labels",
            predicted.len(),
            labels.len()
        )));
    }
    if predicted.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = predicted
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PRED_CLAMP, 1.0 - PRED_CLAMP);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(sum / predicted.len() as f64)
}

/// `∂ loss_scoring / ∂ predicted` (zero where the clamp is active).
pub fn loss_scoring_grad(predicted: &[f64], labels: &[bool]) -> Vec<f64> {
    let n = predicted.len() as f64;
    predicted
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            if !(PRED_CLAMP..=1.0 - PRED_CLAMP).contains(&p) {
                0.0
            } else if y {
                -1.0 / (p * n)
            } else {
                1.0 / ((1.0 - p) * n)
            }
        })
        .collect()
}

/// Cross-entropy of `sigmoid(logit)` and its derivative with respect to the logit.
pub fn bce_with_logit<S: Real>(logit: S, label: bool) -> (S, S) {
    let y = if label { S::one() } else { S::zero() };
    // softplus(x) - y x, written to avoid overflow
    let sp = logit.max(S::zero()) + (S::one() + (-logit.abs()).exp()).ln();
    (sp - y * logit, sigmoid(logit) - y)
}

/// Minimum geodesic distance from any candidate to `truth`, and the index of
/// the minimizing candidate.
pub fn loss_proposal(candidates: &[Rotation], truth: &Rotation) -> Result<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let d = geodesic_distance(c, truth)?;
        if best.is_none_or(|(b, _)| d < b) {
            best = Some((d, i));
        }
    }
    best.ok_or_else(|| Error::InvalidInput("no proposal candidates".into()))
}

/// Geodesic distance between a frame (columns) and `truth`, and its
/// derivative with respect to the frame columns.
pub fn geodesic_with_grad<S: Real>(frame: &[[S; 3]; 3], truth: &[[S; 3]; 3]) -> (S, [[S; 3]; 3]) {
    let mut tr = S::zero();
    for j in 0..3 {
        for k in 0..3 {
            tr += frame[j][k] * truth[j][k];
        }
    }
    let half = S::of(0.5);
    let c = (tr - S::one()) * half;
    let lim = S::one() - S::of(GEODESIC_CLAMP);
    let cc = c.max(-lim).min(lim);
    let angle = cc.acos();
    let scale = if c > lim || c < -lim {
        S::zero()
    } else {
        -half / (S::one() - cc * cc).sqrt()
    };
    let grad = std::array::from_fn(|j| std::array::from_fn(|k| scale * truth[j][k]));
    (angle, grad)
}

pub fn rotation_columns<S: Real>(r: &Rotation) -> [[S; 3]; 3] {
    std::array::from_fn(|j| {
        let c = r.column(j);
        [S::of(c.x), S::of(c.y), S::of(c.z)]
    })
}

/// Mean of the `j` highest scores among `k_aff` proposals at one point.
pub fn affordance_target<S: Real, R: Rng + ?Sized>(
    model: &Model<S>,
    inv_p: &[S],
    eqv_p: &[S],
    k_aff: usize,
    j: usize,
    rng: &mut R,
) -> Result<f64> {
    if j == 0 || j > k_aff {
        return Err(Error::InvalidInput(format!("top-{j} of {k_aff} proposals")));
    }
    let mut scores = Vec::with_capacity(k_aff);
    for _ in 0..k_aff {
        let z = model.sample_noise(rng);
        if let Ok(r) = model.propose_action(eqv_p, &z) {
            scores.push(sigmoid(model.score_logit(inv_p, eqv_p, &r)).as_f64());
        }
    }
    top_mean(&mut scores, j).ok_or(Error::NoValidProposal(k_aff))
}

/// Mean of the `j` largest values, `None` when fewer than `j` exist.
pub fn top_mean(scores: &mut [f64], j: usize) -> Option<f64> {
    if scores.len() < j || j == 0 {
        return None;
    }
    scores.sort_by(|a, b| b.total_cmp(a));
    Some(scores[..j].iter().sum::<f64>() / j as f64)
}

pub fn loss_affordance(a_pred: f64, target: f64) -> f64 {
    (a_pred - target).abs()
}

pub fn loss_affordance_batch(a_pred: &[f64], targets: &[f64]) -> Result<f64> {
    if a_pred.len() != targets.len() {
        return Err(Error::ShapeMismatch("prediction and target counts differ".into()));
    }
    if a_pred.is_empty() {
        return Ok(0.0);
    }
    Ok(a_pred.iter().zip(targets).map(|(&a, &t)| loss_affordance(a, t)).sum::<f64>() / a_pred.len() as f64)
}

/// Subgradient of the mean absolute error with respect to the predictions.
pub fn loss_affordance_grad(a_pred: &[f64], targets: &[f64]) -> Vec<f64> {
    let n = a_pred.len() as f64;
    a_pred
        .iter()
        .zip(targets)
        .map(|(&a, &t)| {
            if a > t {
                1.0 / n
            } else if a < t {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect()
}

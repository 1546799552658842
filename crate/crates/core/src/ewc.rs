//! Elastic weight consolidation: parameter anchoring, diagonal empirical
//! Fisher estimation, and the quadratic penalty with its gradient.

use thiserror::Error;

use crate::data::Spectrogram;
use crate::nn::{backward, forward, softmax_cross_entropy, ModelState, NnError};

#[derive(Debug, Error)]
pub enum EwcError {
    #[error("fisher estimation needs a non-empty sample set")]
    EmptySampleSet,
    #[error("length mismatch: params {params}, anchor {anchor}, fisher {fisher}")]
    LengthMismatch {
        params: usize,
        anchor: usize,
        fisher: usize,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Diagonal of the empirical Fisher matrix: per-parameter mean of squared
/// log-likelihood gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherDiagonal {
    pub values: Vec<f64>,
    pub sample_count: usize,
}

/// Frozen parameters of a previous session.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub params_star: Vec<f64>,
    pub session_id: usize,
}

/// Estimate the Fisher diagonal from labeled samples:
/// `F_j = mean_i (d log p(y_i | x_i, theta) / d theta_j)^2`.
///
/// Callers draw the samples from correctly predicted data, so the true label
/// is the predicted one and the empirical/expected distinction vanishes.
pub fn fisher_diagonal(
    model: &ModelState,
    samples: &[Spectrogram],
) -> Result<FisherDiagonal, EwcError> {
    if samples.is_empty() {
        return Err(EwcError::EmptySampleSet);
    }
    let mut acc = vec![0.0f64; model.params.len()];
    for sample in samples {
        let logits = forward(model, sample)?;
        // grad of -log p; the square kills the sign.
        let (_, grad_logits) = softmax_cross_entropy(&logits, sample.label)?;
        let grad = backward(model, sample, &grad_logits)?;
        for (a, g) in acc.iter_mut().zip(&grad) {
            *a += g * g;
        }
    }
    let n = samples.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(FisherDiagonal {
        values: acc,
        sample_count: samples.len(),
    })
}

/// Quadratic penalty `sum_j (lambda/2) F_j (theta_j - theta*_j)^2` and its
/// gradient `lambda F_j (theta_j - theta*_j)`.
pub fn ewc_penalty(
    params: &[f64],
    anchor: &Anchor,
    fisher: &FisherDiagonal,
    lambda: f64,
) -> Result<(f64, Vec<f64>), EwcError> {
    if params.len() != anchor.params_star.len() || params.len() != fisher.values.len() {
        return Err(EwcError::LengthMismatch {
            params: params.len(),
            anchor: anchor.params_star.len(),
            fisher: fisher.values.len(),
        });
    }
    let mut penalty = 0.0;
    let mut grad = vec![0.0f64; params.len()];
    for j in 0..params.len() {
        let delta = params[j] - anchor.params_star[j];
        penalty += 0.5 * lambda * fisher.values[j] * delta * delta;
        grad[j] = lambda * fisher.values[j] * delta;
    }
    Ok((penalty, grad))
}

/// Freeze the model's current parameters as the anchor for the next session.
pub fn make_anchor(model: &ModelState, session_id: usize) -> Anchor {
    Anchor {
        params_star: model.params_snapshot(),
        session_id,
    }
}

//! Local surrogate explanations over superpixel segments.
//!
//! Pipeline per input and class: draw Bernoulli on/off masks over the
//! segments, predict the masked variations, weight each variation by
//! sqrt(exp(-d^2/sigma^2)) of its cosine distance to the unperturbed row,
//! then fit a weighted ridge regression whose coefficients are the
//! per-segment scores.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::data::Spectrogram;
use crate::nn::{forward, Logits, ModelState, NnError};
use crate::rng::Rng;
use crate::segment::SegmentMap;

#[derive(Debug, Error)]
pub enum LimeError {
    #[error("need at least {needed} perturbation samples for {segments} segments, got {got}")]
    TooFewSamples {
        needed: usize,
        got: usize,
        segments: usize,
    },
    #[error("mask length {mask} does not match segment count {segments}")]
    MaskLength { mask: usize, segments: usize },
    #[error("cosine distance is undefined for a zero vector")]
    ZeroVector,
    #[error("kernel sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("ridge system is singular")]
    SingularSystem,
    #[error("design lengths disagree: {0}")]
    LengthMismatch(String),
    #[error("weights must be non-negative and not all zero")]
    BadWeights,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Binary on/off perturbation masks; row 0 is the unperturbed all-ones
/// instance and participates in the regression with kernel weight 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet {
    masks: Vec<u8>,
    pub n_samples: usize,
    pub n_segments: usize,
}

impl MaskSet {
    pub fn row(&self, i: usize) -> &[u8] {
        &self.masks[i * self.n_segments..(i + 1) * self.n_segments]
    }
}

/// Per-segment scores for one (input, class) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub scores: Vec<f64>,
    pub target_class: usize,
    pub intercept: f64,
}

#[derive(Debug, Clone)]
pub struct LimeConfig {
    /// Number of mask rows, including the unperturbed row 0. Must be at
    /// least n_segments + 2 so the ridge system is solvable.
    pub n_samples: usize,
    pub sigma: f64,
    /// Fill value for switched-off segments; `None` uses the spectrogram's
    /// global mean.
    pub baseline: Option<f64>,
    pub ridge: f64,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig {
            n_samples: 256,
            sigma: 0.25,
            baseline: None,
            ridge: 1e-6,
            seed: 0,
        }
    }
}

/// Draw the mask set: row 0 all ones, remaining entries i.i.d. Bernoulli(1/2)
/// from the seeded stream.
pub fn perturb(n_segments: usize, n_samples: usize, seed: u64) -> Result<MaskSet, LimeError> {
    let needed = n_segments + 2;
    if n_samples < needed {
        return Err(LimeError::TooFewSamples {
            needed,
            got: n_samples,
            segments: n_segments,
        });
    }
    let mut masks = vec![1u8; n_samples * n_segments];
    let mut rng = Rng::seed_from(seed);
    for entry in &mut masks[n_segments..] {
        *entry = u8::from(rng.bernoulli());
    }
    Ok(MaskSet {
        masks,
        n_samples,
        n_segments,
    })
}

/// Copy on-segments and fill off-segments with `baseline`.
pub fn apply_mask(
    spec: &Spectrogram,
    map: &SegmentMap,
    mask: &[u8],
    baseline: f64,
) -> Result<Spectrogram, LimeError> {
    if mask.len() != map.n_segments {
        return Err(LimeError::MaskLength {
            mask: mask.len(),
            segments: map.n_segments,
        });
    }
    let mut out = spec.clone();
    let fill = baseline as f32;
    for (value, &label) in out.values.iter_mut().zip(&map.labels) {
        if mask[label as usize] == 0 {
            *value = fill;
        }
    }
    Ok(out)
}

/// Cosine distance 1 - a.b / (|a||b|) between binary vectors.
pub fn cosine_distance(a: &[u8], b: &[u8]) -> Result<f64, LimeError> {
    if a.len() != b.len() {
        return Err(LimeError::LengthMismatch(format!(
            "{} vs {}",
            a.len(),
            b.len()
        )));
    }
    let dot = a
        .iter()
        .zip(b)
        .filter(|(x, y)| **x != 0 && **y != 0)
        .count() as f64;
    let na = a.iter().filter(|&&x| x != 0).count() as f64;
    let nb = b.iter().filter(|&&x| x != 0).count() as f64;
    if na == 0.0 || nb == 0.0 {
        return Err(LimeError::ZeroVector);
    }
    // Rounding can push the similarity a hair past 1; the distance is 0 then.
    Ok((1.0 - dot / (na.sqrt() * nb.sqrt())).max(0.0))
}

/// Proximity kernel sqrt(exp(-dist^2 / sigma^2)), in (0, 1].
pub fn kernel_weight(dist: f64, sigma: f64) -> Result<f64, LimeError> {
    if sigma <= 0.0 {
        return Err(LimeError::BadSigma(sigma));
    }
    Ok((-(dist * dist) / (sigma * sigma)).exp().sqrt())
}

/// Solve the weighted ridge regression
/// `(X~' W X~ + ridge P) beta = X~' W y` where `X~` is the binary design with
/// an appended intercept column and `P` leaves the intercept unregularized.
/// Returns (coefficients, intercept).
pub fn weighted_ridge(
    design: &MaskSet,
    y: &[f64],
    weights: &[f64],
    ridge: f64,
) -> Result<(Vec<f64>, f64), LimeError> {
    let n = design.n_samples;
    let s = design.n_segments;
    if y.len() != n || weights.len() != n {
        return Err(LimeError::LengthMismatch(format!(
            "{n} rows vs {} targets vs {} weights",
            y.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| w < 0.0) || weights.iter().all(|&w| w == 0.0) {
        return Err(LimeError::BadWeights);
    }

    // Normal equations over the augmented design (segments + intercept).
    let dim = s + 1;
    let mut a = vec![0.0f64; dim * dim];
    let mut b = vec![0.0f64; dim];
    let mut xrow = vec![0.0f64; dim];
    for i in 0..n {
        let mask = design.row(i);
        for j in 0..s {
            xrow[j] = f64::from(mask[j]);
        }
        xrow[s] = 1.0;
        let w = weights[i];
        for j in 0..dim {
            let wx = w * xrow[j];
            if wx == 0.0 {
                continue;
            }
            b[j] += wx * y[i];
            for k in j..dim {
                a[j * dim + k] += wx * xrow[k];
            }
        }
    }
    for j in 0..s {
        a[j * dim + j] += ridge;
    }
    // Mirror the upper triangle.
    for j in 0..dim {
        for k in 0..j {
            a[j * dim + k] = a[k * dim + j];
        }
    }

    let beta = cholesky_solve(&mut a, &mut b, dim)?;
    let intercept = beta[s];
    let mut coefficients = beta;
    coefficients.truncate(s);
    Ok((coefficients, intercept))
}

/// In-place Cholesky factorization and solve for a symmetric positive
/// definite system.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], dim: usize) -> Result<Vec<f64>, LimeError> {
    for j in 0..dim {
        let mut d = a[j * dim + j];
        for k in 0..j {
            d -= a[j * dim + k] * a[j * dim + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(LimeError::SingularSystem);
        }
        let d = d.sqrt();
        a[j * dim + j] = d;
        for i in (j + 1)..dim {
            let mut v = a[i * dim + j];
            for k in 0..j {
                v -= a[i * dim + k] * a[j * dim + k];
            }
            a[i * dim + j] = v / d;
        }
    }
    // Forward substitution L z = b.
    for i in 0..dim {
        let mut v = b[i];
        for k in 0..i {
            v -= a[i * dim + k] * b[k];
        }
        b[i] = v / a[i * dim + i];
    }
    // Back substitution L' x = z.
    for i in (0..dim).rev() {
        let mut v = b[i];
        for k in (i + 1)..dim {
            v -= a[k * dim + i] * b[k];
        }
        b[i] = v / a[i * dim + i];
    }
    Ok(b.to_vec())
}

/// Fit one explanation in mask space: `predict` maps a mask row to the
/// surrogate target value. This is the seam the model-backed [`explain`]
/// builds on and the natural hook for planted-model checks.
pub fn explain_masked<F>(
    n_segments: usize,
    cfg: &LimeConfig,
    target_class: usize,
    mut predict: F,
) -> Result<Explanation, LimeError>
where
    F: FnMut(&[u8]) -> Result<f64, LimeError>,
{
    let masks = perturb(n_segments, cfg.n_samples, cfg.seed)?;
    let mut y = Vec::with_capacity(masks.n_samples);
    for i in 0..masks.n_samples {
        y.push(predict(masks.row(i))?);
    }
    let weights = row_weights(&masks, cfg.sigma)?;
    let (scores, intercept) = weighted_ridge(&masks, &y, &weights, cfg.ridge)?;
    Ok(Explanation {
        scores,
        target_class,
        intercept,
    })
}

fn row_weights(masks: &MaskSet, sigma: f64) -> Result<Vec<f64>, LimeError> {
    let reference = masks.row(0).to_vec();
    let mut weights = Vec::with_capacity(masks.n_samples);
    for i in 0..masks.n_samples {
        let row = masks.row(i);
        // All-off rows have no direction in cosine space; give them the
        // maximal distance of 1 instead of failing the whole fit.
        let dist = if row.iter().all(|&m| m == 0) {
            1.0
        } else {
            cosine_distance(&reference, row)?
        };
        weights.push(kernel_weight(dist, sigma)?);
    }
    Ok(weights)
}

/// Explanations for several classes of one input, sharing a single mask set
/// and one forward pass per variation.
pub fn explain_classes(
    model: &ModelState,
    spec: &Spectrogram,
    map: &SegmentMap,
    classes: &[usize],
    cfg: &LimeConfig,
) -> Result<Vec<Explanation>, LimeError> {
    let masks = perturb(map.n_segments, cfg.n_samples, cfg.seed)?;
    let baseline = cfg.baseline.unwrap_or_else(|| global_mean(spec));
    let n_classes = model.classes();
    for &class in classes {
        if class >= n_classes {
            return Err(LimeError::Nn(NnError::LabelOutOfRange {
                label: class,
                classes: n_classes,
            }));
        }
    }

    // One softmax vector per mask row.
    let mut probs = Vec::with_capacity(masks.n_samples);
    for i in 0..masks.n_samples {
        let masked = apply_mask(spec, map, masks.row(i), baseline)?;
        let logits = forward(model, &masked)?;
        probs.push(softmax(&logits));
    }
    let weights = row_weights(&masks, cfg.sigma)?;

    let mut out = Vec::with_capacity(classes.len());
    for &class in classes {
        let y: Vec<f64> = probs.iter().map(|p| p[class]).collect();
        let (scores, intercept) = weighted_ridge(&masks, &y, &weights, cfg.ridge)?;
        out.push(Explanation {
            scores,
            target_class: class,
            intercept,
        });
    }
    Ok(out)
}

/// Feature scores of one (input, class) pair: the full perturb -> predict ->
/// kernel-weight -> ridge pipeline.
pub fn explain(
    model: &ModelState,
    spec: &Spectrogram,
    map: &SegmentMap,
    target_class: usize,
    cfg: &LimeConfig,
) -> Result<Explanation, LimeError> {
    Ok(explain_classes(model, spec, map, &[target_class], cfg)?
        .pop()
        .expect("one class in"))
}

fn softmax(logits: &Logits) -> Vec<f64> {
    let max = logits
        .values
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.values.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn global_mean(spec: &Spectrogram) -> f64 {
    if spec.values.is_empty() {
        return 0.0;
    }
    spec.values.iter().map(|&v| f64::from(v)).sum::<f64>() / spec.values.len() as f64
}

/// Segment ids ordered by descending score (ties on the lower id), truncated
/// to k: the "most influential clusters" view of an explanation.
pub fn top_k_segments(explanation: &Explanation, k: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..explanation.scores.len()).collect();
    ids.sort_by(|&a, &b| {
        explanation.scores[b]
            .partial_cmp(&explanation.scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    ids.truncate(k);
    ids
}

/// Export an explanation as CSV: a comment line carrying the target class
/// and intercept, a header row, then one `segment_id,score` line per segment.
pub fn write_explanation_csv(
    explanation: &Explanation,
    path: impl AsRef<Path>,
) -> Result<(), LimeError> {
    let path = path.as_ref();
    let io = |e: std::io::Error| LimeError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut text = format!(
        "# target_class={} intercept={}\nsegment_id,score\n",
        explanation.target_class, explanation.intercept
    );
    for (id, score) in explanation.scores.iter().enumerate() {
        text.push_str(&format!("{id},{score}\n"));
    }
    let mut file = fs::File::create(path).map_err(io)?;
    file.write_all(text.as_bytes()).map_err(io)
}

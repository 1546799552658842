//! Incremental-training orchestration.
//!
//! One run is: initial training on the original pool, then a weight-
//! generation pass that collects each validation chunk's misclassified
//! samples and scores them by the distance between the explanations of the
//! predicted and true classes, then the incremental loop that grows the
//! training pool chunk by chunk, optionally re-anchoring with a fresh Fisher
//! estimate each session, and evaluates on the fixed test set after every
//! session.

mod checkpoint;

pub use checkpoint::{checkpoint_load, checkpoint_save, Checkpoint, CHECKPOINT_VERSION};

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::data::Spectrogram;
use crate::ewc::{fisher_diagonal, make_anchor, EwcError};
use crate::lime::{explain_classes, Explanation, LimeConfig, LimeError};
use crate::nn::{build_model, ArchDescriptor, ModelState, NnError};
use crate::rng::{derive_seed, Rng};
use crate::segment::{slic, SegmentError, SlicConfig};
use crate::trainer::{
    evaluate, predictions, select_misclassified, train, TrainConfig, TrainError, WeightedDataset,
};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(
        "{n_sessions} sessions need at least {n_sessions} validation speakers, found {speakers}"
    )]
    TooFewSpeakers { n_sessions: usize, speakers: usize },
    #[error("sample {source_id} is correctly predicted; explanation weights are defined for misclassified samples only")]
    NotMisclassified { source_id: String },
    #[error("no correctly predicted samples to draw the Fisher estimate from")]
    NoCorrectSamples,
    #[error("explanation lengths differ: {a} vs {b}")]
    ExplanationLength { a: usize, b: usize },
    #[error("cosine weight is undefined for an all-zero explanation")]
    ZeroExplanation,
    #[error("unknown mode `{0}`, expected traditional | weighted | weighted_ewc")]
    BadMode(String),
    #[error("unknown metric `{0}`, expected euclidean | manhattan | cosine")]
    BadMetric(String),
    #[error("session {session}: {source}")]
    InSession {
        session: usize,
        #[source]
        source: Box<SessionError>,
    },
    #[error("bad checkpoint magic: {0}")]
    BadMagic(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint parameter count mismatch: {0}")]
    ParamCount(String),
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Lime(#[from] LimeError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Ewc(#[from] EwcError),
}

fn in_session<E: Into<SessionError>>(session: usize) -> impl Fn(E) -> SessionError {
    move |source| SessionError::InSession {
        session,
        source: Box::new(source.into()),
    }
}

/// Distance metric turning a pair of explanations into a sample weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMetric {
    /// Sum of squared score differences (the default).
    Euclidean,
    Manhattan,
    Cosine,
}

impl fmt::Display for WeightMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightMetric::Euclidean => write!(f, "euclidean"),
            WeightMetric::Manhattan => write!(f, "manhattan"),
            WeightMetric::Cosine => write!(f, "cosine"),
        }
    }
}

impl FromStr for WeightMetric {
    type Err = SessionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euclidean" => Ok(WeightMetric::Euclidean),
            "manhattan" => Ok(WeightMetric::Manhattan),
            "cosine" => Ok(WeightMetric::Cosine),
            other => Err(SessionError::BadMetric(other.to_string())),
        }
    }
}

/// Per-sample weight from the explanations of the predicted class (`e_pred`)
/// and the true class (`e_true`).
///
/// The euclidean variant is the sum of squared differences, exactly as the
/// weighting formula is written; `sqrt_weights` switches it to the literal
/// root (a true distance). Manhattan and cosine are the alternative metrics.
pub fn sample_weight(
    e_pred: &Explanation,
    e_true: &Explanation,
    metric: WeightMetric,
    sqrt_weights: bool,
) -> Result<f64, SessionError> {
    if e_pred.scores.len() != e_true.scores.len() {
        return Err(SessionError::ExplanationLength {
            a: e_pred.scores.len(),
            b: e_true.scores.len(),
        });
    }
    let w = match metric {
        WeightMetric::Euclidean => {
            let sq: f64 = e_pred
                .scores
                .iter()
                .zip(&e_true.scores)
                .map(|(p, t)| (p - t) * (p - t))
                .sum();
            if sqrt_weights {
                sq.sqrt()
            } else {
                sq
            }
        }
        WeightMetric::Manhattan => e_pred
            .scores
            .iter()
            .zip(&e_true.scores)
            .map(|(p, t)| (p - t).abs())
            .sum(),
        WeightMetric::Cosine => {
            let dot: f64 = e_pred
                .scores
                .iter()
                .zip(&e_true.scores)
                .map(|(p, t)| p * t)
                .sum();
            let np: f64 = e_pred.scores.iter().map(|p| p * p).sum::<f64>().sqrt();
            let nt: f64 = e_true.scores.iter().map(|t| t * t).sum::<f64>().sqrt();
            if np == 0.0 || nt == 0.0 {
                return Err(SessionError::ZeroExplanation);
            }
            1.0 - dot / (np * nt)
        }
    };
    Ok(w)
}

/// Explanation-distance weights for a batch of misclassified samples: each
/// sample is segmented, explained for its predicted and true classes over a
/// shared mask set, and scored by `sample_weight`. Weights align with the
/// input order.
pub fn generate_lime_weights(
    model: &ModelState,
    misclassified: &[Spectrogram],
    lime_cfg: &LimeConfig,
    slic_cfg: &SlicConfig,
    metric: WeightMetric,
    sqrt_weights: bool,
    seed_base: u64,
) -> Result<Vec<f64>, SessionError> {
    let preds = predictions(model, misclassified)?;
    let mut weights = Vec::with_capacity(misclassified.len());
    for (index, (spec, pred)) in misclassified.iter().zip(preds).enumerate() {
        if pred == spec.label {
            return Err(SessionError::NotMisclassified {
                source_id: spec.source_id.clone(),
            });
        }
        let map = slic(spec, slic_cfg)?;
        let cfg = LimeConfig {
            seed: derive_seed(seed_base, "lime-sample", index as u64),
            ..lime_cfg.clone()
        };
        let pair = explain_classes(model, spec, &map, &[pred, spec.label], &cfg)?;
        weights.push(sample_weight(&pair[0], &pair[1], metric, sqrt_weights)?);
    }
    Ok(weights)
}

/// The schedule of one incremental run: speaker-disjoint validation chunks
/// plus the weighting and regularization knobs.
#[derive(Debug, Clone)]
pub struct SessionPlan {
    pub chunks: Vec<Vec<Spectrogram>>,
    pub lambda: f64,
    pub metric: WeightMetric,
    pub sqrt_weights: bool,
    /// Master seed for model init, explanation sampling and Fisher draws.
    pub seed: u64,
}

/// Split the validation set into `n` speaker-disjoint chunks: speakers are
/// shuffled by `seed` and dealt round-robin, samples follow their speaker.
pub fn plan_sessions(
    validation: &[Spectrogram],
    n: usize,
    seed: u64,
) -> Result<SessionPlan, SessionError> {
    let mut chunks = Vec::new();
    if n > 0 {
        let speakers: BTreeSet<&str> = validation.iter().map(|s| s.speaker_id.as_str()).collect();
        if speakers.len() < n {
            return Err(SessionError::TooFewSpeakers {
                n_sessions: n,
                speakers: speakers.len(),
            });
        }
        let mut speakers: Vec<&str> = speakers.into_iter().collect();
        let mut rng = Rng::seed_from(seed);
        rng.shuffle(&mut speakers);
        let mut chunk_of: std::collections::BTreeMap<&str, usize> = Default::default();
        for (i, speaker) in speakers.iter().enumerate() {
            chunk_of.insert(speaker, i % n);
        }
        chunks = vec![Vec::new(); n];
        for spec in validation {
            chunks[chunk_of[spec.speaker_id.as_str()]].push(spec.clone());
        }
    }
    Ok(SessionPlan {
        chunks,
        lambda: 1.0,
        metric: WeightMetric::Euclidean,
        sqrt_weights: false,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    /// Misclassified samples are admitted with weight 1, no EWC.
    Traditional,
    /// Explanation-distance weights, no EWC.
    Weighted,
    /// Explanation-distance weights plus the per-session anchor penalty.
    WeightedEwc,
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunMode::Traditional => write!(f, "traditional"),
            RunMode::Weighted => write!(f, "weighted"),
            RunMode::WeightedEwc => write!(f, "weighted_ewc"),
        }
    }
}

impl FromStr for RunMode {
    type Err = SessionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "traditional" => Ok(RunMode::Traditional),
            "weighted" => Ok(RunMode::Weighted),
            "weighted_ewc" => Ok(RunMode::WeightedEwc),
            other => Err(SessionError::BadMode(other.to_string())),
        }
    }
}

/// One row of the session ledger; `session_id` 0 is the initial training.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub session_id: usize,
    pub mode: RunMode,
    /// The EWC strength actually applied while training this session's
    /// model; 0 for the initial session and for non-EWC modes.
    pub lambda: f64,
    pub seed: u64,
    pub train_size: usize,
    pub added_count: usize,
    /// Mean raw weight of this session's admissions; 0 when nothing was
    /// admitted.
    pub mean_new_weight: f64,
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub checkpoint_path: Option<PathBuf>,
}

/// Everything one incremental run needs.
#[derive(Debug, Clone)]
pub struct IncrementalRun<'a> {
    pub train: &'a [Spectrogram],
    pub test: &'a [Spectrogram],
    pub arch: &'a ArchDescriptor,
    pub plan: &'a SessionPlan,
    pub train_cfg: TrainConfig,
    /// Epochs for the per-session retraining; `None` reuses
    /// `train_cfg.epochs`. Initial training is usually run to convergence
    /// while sessions take shorter refinement passes.
    pub session_epochs: Option<usize>,
    pub lime_cfg: LimeConfig,
    pub slic_cfg: SlicConfig,
    pub mode: RunMode,
    /// Checkpoints and the session CSV land here; `None` keeps the run
    /// in memory only.
    pub out_dir: Option<PathBuf>,
    /// Diagnostic hook: run the full weighted pipeline but override every
    /// admission weight with 1, which must reproduce a traditional run.
    pub force_unit_weights: bool,
}

pub struct RunOutcome {
    pub records: Vec<SessionRecord>,
    /// The model after initial training, before any session retraining.
    pub initial_model: ModelState,
    pub final_model: ModelState,
}

/// Execute a full incremental run; returns n_sessions + 1 records.
pub fn run_incremental(run: &IncrementalRun) -> Result<RunOutcome, SessionError> {
    let plan = run.plan;
    let n_sessions = plan.chunks.len();
    if let Some(dir) = &run.out_dir {
        fs::create_dir_all(dir).map_err(|e| SessionError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
    }

    // Initial training on the original pool, validated on the whole
    // validation split.
    let mut model = build_model(run.arch, derive_seed(plan.seed, "init", 0))?;
    let mut pool = WeightedDataset::from_originals(run.train);
    let validation_all: Vec<Spectrogram> = plan.chunks.iter().flatten().cloned().collect();
    let cfg0 = TrainConfig {
        seed: derive_seed(run.train_cfg.seed, "train", 0),
        ..run.train_cfg.clone()
    };
    let validation = (!validation_all.is_empty()).then_some(validation_all.as_slice());
    let (trained, _) = train(model, &pool, &cfg0, None, validation).map_err(in_session(0))?;
    model = trained;
    let initial_model = model.clone();

    let mut records = Vec::with_capacity(n_sessions + 1);
    let report = evaluate(&model, run.test).map_err(in_session(0))?;
    let ckpt_path = write_checkpoint(run, &model, 0, None)?;
    records.push(SessionRecord {
        session_id: 0,
        mode: run.mode,
        lambda: 0.0,
        seed: plan.seed,
        train_size: pool.len(),
        added_count: 0,
        mean_new_weight: 0.0,
        test_accuracy: report.accuracy,
        test_loss: report.mean_loss,
        checkpoint_path: ckpt_path,
    });

    // Weight generation: misclassified samples and their weights for every
    // chunk, all judged by the initial model.
    let mut admissions: Vec<(Vec<Spectrogram>, Vec<f64>)> = Vec::with_capacity(n_sessions);
    for (i, chunk) in plan.chunks.iter().enumerate() {
        let session = i + 1;
        let mis = select_misclassified(&model, chunk).map_err(in_session(session))?;
        let mut weights = match run.mode {
            RunMode::Traditional => vec![1.0; mis.len()],
            RunMode::Weighted | RunMode::WeightedEwc => generate_lime_weights(
                &model,
                &mis,
                &run.lime_cfg,
                &run.slic_cfg,
                plan.metric,
                plan.sqrt_weights,
                derive_seed(plan.seed, "lime-session", session as u64),
            )
            .map_err(in_session(session))?,
        };
        if run.force_unit_weights {
            weights.iter_mut().for_each(|w| *w = 1.0);
        }
        admissions.push((mis, weights));
    }

    // Incremental loop: grow the pool, (re-)anchor, retrain, evaluate.
    for (i, (added, weights)) in admissions.into_iter().enumerate() {
        let session = i + 1;
        let added_count = added.len();
        let mean_new_weight = if added_count == 0 {
            0.0
        } else {
            weights.iter().sum::<f64>() / added_count as f64
        };
        pool.admit(added, weights, session);

        let ewc_state = if run.mode == RunMode::WeightedEwc {
            Some(fisher_and_anchor(plan, &model, &pool, session).map_err(in_session(session))?)
        } else {
            None
        };
        let lambda = if ewc_state.is_some() {
            plan.lambda
        } else {
            0.0
        };
        let cfg = TrainConfig {
            seed: derive_seed(run.train_cfg.seed, "train", session as u64),
            lambda,
            epochs: run.session_epochs.unwrap_or(run.train_cfg.epochs),
            ..run.train_cfg.clone()
        };
        let ewc_ref = ewc_state.as_ref().map(|(a, f)| (a, f));
        let (trained, _) = train(model, &pool, &cfg, ewc_ref, Some(&plan.chunks[i]))
            .map_err(in_session(session))?;
        model = trained;

        let report = evaluate(&model, run.test).map_err(in_session(session))?;
        let ckpt_path = write_checkpoint(run, &model, session, ewc_state.as_ref())?;
        records.push(SessionRecord {
            session_id: session,
            mode: run.mode,
            lambda,
            seed: plan.seed,
            train_size: pool.len(),
            added_count,
            mean_new_weight,
            test_accuracy: report.accuracy,
            test_loss: report.mean_loss,
            checkpoint_path: ckpt_path,
        });
    }

    if let Some(dir) = &run.out_dir {
        write_session_csv(&records, dir.join("sessions.csv"))?;
    }
    Ok(RunOutcome {
        records,
        initial_model,
        final_model: model,
    })
}

/// Fisher diagonal from a seeded 5% draw (without replacement, at least one
/// sample) of the pool members the current model predicts correctly, plus
/// the anchor at the current parameters.
fn fisher_and_anchor(
    plan: &SessionPlan,
    model: &ModelState,
    pool: &WeightedDataset,
    session: usize,
) -> Result<(crate::ewc::Anchor, crate::ewc::FisherDiagonal), SessionError> {
    let specs: Vec<Spectrogram> = pool.items.iter().map(|item| item.spec.clone()).collect();
    let preds = predictions(model, &specs)?;
    let correct: Vec<&Spectrogram> = specs
        .iter()
        .zip(&preds)
        .filter(|(s, &p)| p == s.label)
        .map(|(s, _)| s)
        .collect();
    if correct.is_empty() {
        return Err(SessionError::NoCorrectSamples);
    }
    let draw = ((correct.len() as f64 * 0.05).floor() as usize).max(1);
    let mut indices: Vec<usize> = (0..correct.len()).collect();
    let mut rng = Rng::seed_from(derive_seed(plan.seed, "fisher", session as u64));
    // Partial Fisher-Yates: the first `draw` entries are the sample.
    for i in 0..draw {
        let j = i + rng.next_below((indices.len() - i) as u64) as usize;
        indices.swap(i, j);
    }
    let sample: Vec<Spectrogram> = indices[..draw]
        .iter()
        .map(|&i| correct[i].clone())
        .collect();
    let fisher = fisher_diagonal(model, &sample)?;
    let anchor = make_anchor(model, session);
    Ok((anchor, fisher))
}

fn write_checkpoint(
    run: &IncrementalRun,
    model: &ModelState,
    session: usize,
    ewc: Option<&(crate::ewc::Anchor, crate::ewc::FisherDiagonal)>,
) -> Result<Option<PathBuf>, SessionError> {
    let Some(dir) = &run.out_dir else {
        return Ok(None);
    };
    let path = dir.join(format!("session_{session:03}.ckpt"));
    let ckpt = Checkpoint {
        descriptor: run.arch.to_string(),
        params: model.params_snapshot(),
        session_id: session,
        ewc: ewc.map(|(a, f)| (a.params_star.clone(), f.values.clone())),
    };
    checkpoint_save(&path, &ckpt)?;
    Ok(Some(path))
}

/// Session ledger CSV:
/// `session,mode,lambda,seed,train_size,added,mean_new_weight,test_accuracy,test_loss`.
pub fn write_session_csv(
    records: &[SessionRecord],
    path: impl AsRef<Path>,
) -> Result<(), SessionError> {
    let path = path.as_ref();
    let mut text = String::from(
        "session,mode,lambda,seed,train_size,added,mean_new_weight,test_accuracy,test_loss\n",
    );
    for r in records {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.session_id,
            r.mode,
            r.lambda,
            r.seed,
            r.train_size,
            r.added_count,
            r.mean_new_weight,
            r.test_accuracy,
            r.test_loss
        ));
    }
    fs::write(path, text).map_err(|e| SessionError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// One `run_incremental` per lambda with identical seeds and data, mode
/// `weighted_ewc`; per-lambda checkpoints land under `lambda_<value>/`.
pub fn sweep_lambda(
    base: &IncrementalRun,
    lambdas: &[f64],
) -> Result<Vec<(f64, RunOutcome)>, SessionError> {
    let mut outcomes = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let plan = SessionPlan {
            lambda,
            ..base.plan.clone()
        };
        let run = IncrementalRun {
            plan: &plan,
            mode: RunMode::WeightedEwc,
            out_dir: base
                .out_dir
                .as_ref()
                .map(|d| d.join(format!("lambda_{lambda}"))),
            ..base.clone()
        };
        outcomes.push((lambda, run_incremental(&run)?));
    }
    if let Some(dir) = &base.out_dir {
        write_sweep_csv(&outcomes, dir.join("sweep.csv"))?;
    }
    Ok(outcomes)
}

/// Sweep matrix CSV: `lambda,session,accuracy`, one row per (lambda, record).
pub fn write_sweep_csv(
    outcomes: &[(f64, RunOutcome)],
    path: impl AsRef<Path>,
) -> Result<(), SessionError> {
    let path = path.as_ref();
    let mut text = String::from("lambda,session,accuracy\n");
    for (lambda, outcome) in outcomes {
        for record in &outcome.records {
            text.push_str(&format!(
                "{lambda},{},{}\n",
                record.session_id, record.test_accuracy
            ));
        }
    }
    fs::write(path, text).map_err(|e| SessionError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{gen_synthetic, split_by_speaker, SplitRatios, SynthConfig};

    fn expl(scores: Vec<f64>) -> Explanation {
        Explanation {
            scores,
            target_class: 0,
            intercept: 0.0,
        }
    }

    #[test]
    fn identical_explanations_weigh_zero_under_all_metrics() {
        let e = expl(vec![0.4, -0.2, 0.9]);
        for metric in [
            WeightMetric::Euclidean,
            WeightMetric::Manhattan,
            WeightMetric::Cosine,
        ] {
            let w = sample_weight(&e, &e.clone(), metric, false).unwrap();
            assert!(w.abs() < 1e-12, "{metric}: {w}");
        }
    }

    #[test]
    fn orthogonal_unit_explanations_hand_values() {
        let ep = expl(vec![1.0, 0.0]);
        let et = expl(vec![0.0, 1.0]);
        assert_eq!(
            sample_weight(&ep, &et, WeightMetric::Euclidean, false).unwrap(),
            2.0
        );
        assert_eq!(
            sample_weight(&ep, &et, WeightMetric::Manhattan, false).unwrap(),
            2.0
        );
        assert_eq!(
            sample_weight(&ep, &et, WeightMetric::Cosine, false).unwrap(),
            1.0
        );
        // Literal-distance reading: sqrt of the squared form.
        let w = sample_weight(&ep, &et, WeightMetric::Euclidean, true).unwrap();
        assert!((w - 2.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn euclidean_weight_is_permutation_invariant() {
        let ep = expl(vec![0.3, -0.5, 0.8, 0.1]);
        let et = expl(vec![-0.2, 0.4, 0.0, 0.6]);
        let w = sample_weight(&ep, &et, WeightMetric::Euclidean, false).unwrap();
        let perm = [2usize, 0, 3, 1];
        let ep2 = expl(perm.iter().map(|&i| ep.scores[i]).collect());
        let et2 = expl(perm.iter().map(|&i| et.scores[i]).collect());
        let w2 = sample_weight(&ep2, &et2, WeightMetric::Euclidean, false).unwrap();
        assert_eq!(w, w2);
    }

    #[test]
    fn planted_opposite_explanations_weigh_four_sum_sq() {
        // Mask-space predictors planted at +c for the predicted class and -c
        // for the true class: per segment the squared difference is (2c)^2,
        // so the euclidean weight is 4 * sum(c^2).
        use crate::lime::explain_masked;
        let plant: Vec<f64> = (0..10).map(|i| (i as f64 * 0.41).cos() * 0.3).collect();
        let cfg = LimeConfig {
            n_samples: 128,
            seed: 44,
            ..LimeConfig::default()
        };
        let linear = |sign: f64| {
            let plant = plant.clone();
            move |mask: &[u8]| {
                Ok(0.5
                    + sign
                        * mask
                            .iter()
                            .zip(&plant)
                            .map(|(&m, c)| f64::from(m) * c)
                            .sum::<f64>())
            }
        };
        let e_pred = explain_masked(10, &cfg, 0, linear(1.0)).unwrap();
        let e_true = explain_masked(10, &cfg, 1, linear(-1.0)).unwrap();
        let w = sample_weight(&e_pred, &e_true, WeightMetric::Euclidean, false).unwrap();
        let expected = 4.0 * plant.iter().map(|c| c * c).sum::<f64>();
        assert!((w - expected).abs() < 1e-3, "{w} vs {expected}");
    }

    #[test]
    fn constant_model_yields_near_zero_weights() {
        // All-zero parameters make the predicted probability constant in the
        // mask, so both explanations vanish and so does the weight.
        let cfg = SynthConfig {
            freq_bins: 8,
            time_frames: 8,
            speaker_pool: 4,
            noise_level: 0.3,
        };
        let data = gen_synthetic(2, 6, 9, &cfg).unwrap();
        let arch = ArchDescriptor::parse("in:8x8x1;fc4-out2").unwrap();
        let mut model = build_model(&arch, 0).unwrap();
        model.params.iter_mut().for_each(|p| *p = 0.0);
        // Ties resolve to class 0, so every class-1 sample is misclassified.
        let mis: Vec<Spectrogram> = data.iter().filter(|s| s.label == 1).cloned().collect();
        assert!(!mis.is_empty());
        let weights = generate_lime_weights(
            &model,
            &mis,
            &LimeConfig {
                n_samples: 32,
                ..LimeConfig::default()
            },
            &SlicConfig {
                segments: 4,
                ..SlicConfig::default()
            },
            WeightMetric::Euclidean,
            false,
            7,
        )
        .unwrap();
        assert_eq!(weights.len(), mis.len());
        for w in &weights {
            assert!(*w < 1e-10, "constant model produced weight {w}");
        }
        // Determinism: same seed, same weights.
        let again = generate_lime_weights(
            &model,
            &mis,
            &LimeConfig {
                n_samples: 32,
                ..LimeConfig::default()
            },
            &SlicConfig {
                segments: 4,
                ..SlicConfig::default()
            },
            WeightMetric::Euclidean,
            false,
            7,
        )
        .unwrap();
        assert_eq!(weights, again);
    }

    #[test]
    fn correctly_predicted_sample_is_rejected() {
        let cfg = SynthConfig {
            freq_bins: 8,
            time_frames: 8,
            speaker_pool: 4,
            noise_level: 0.0,
        };
        let data = gen_synthetic(2, 2, 9, &cfg).unwrap();
        let arch = ArchDescriptor::parse("in:8x8x1;fc4-out2").unwrap();
        let mut model = build_model(&arch, 0).unwrap();
        model.params.iter_mut().for_each(|p| *p = 0.0);
        // Class-0 samples tie-break to class 0: correctly predicted.
        let correct: Vec<Spectrogram> = data.iter().filter(|s| s.label == 0).cloned().collect();
        let err = generate_lime_weights(
            &model,
            &correct,
            &LimeConfig {
                n_samples: 16,
                ..LimeConfig::default()
            },
            &SlicConfig {
                segments: 4,
                ..SlicConfig::default()
            },
            WeightMetric::Euclidean,
            false,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, SessionError::NotMisclassified { .. }));
    }

    #[test]
    fn weight_errors() {
        let ep = expl(vec![1.0, 0.0]);
        let short = expl(vec![1.0]);
        assert!(matches!(
            sample_weight(&ep, &short, WeightMetric::Euclidean, false),
            Err(SessionError::ExplanationLength { .. })
        ));
        let zero = expl(vec![0.0, 0.0]);
        assert!(matches!(
            sample_weight(&ep, &zero, WeightMetric::Cosine, false),
            Err(SessionError::ZeroExplanation)
        ));
    }

    fn synth_validation(speakers: usize, per_speaker: usize) -> Vec<Spectrogram> {
        let cfg = SynthConfig {
            freq_bins: 8,
            time_frames: 8,
            speaker_pool: speakers,
            noise_level: 0.2,
        };
        gen_synthetic(2, speakers * per_speaker / 2, 5, &cfg).unwrap()
    }

    #[test]
    fn plan_round_robins_speakers() {
        let validation = synth_validation(6, 4);
        let plan = plan_sessions(&validation, 3, 9).unwrap();
        assert_eq!(plan.chunks.len(), 3);
        for chunk in &plan.chunks {
            let speakers: BTreeSet<&str> = chunk.iter().map(|s| s.speaker_id.as_str()).collect();
            assert_eq!(speakers.len(), 2, "6 speakers over 3 chunks is 2 each");
        }
        // Chunks partition the validation set.
        let total: usize = plan.chunks.iter().map(|c| c.len()).sum();
        assert_eq!(total, validation.len());
    }

    #[test]
    fn plan_chunks_are_speaker_disjoint_for_any_seed() {
        let validation = synth_validation(7, 4);
        for seed in 0..20 {
            let plan = plan_sessions(&validation, 3, seed).unwrap();
            let mut seen: BTreeSet<String> = BTreeSet::new();
            for chunk in &plan.chunks {
                let speakers: BTreeSet<String> =
                    chunk.iter().map(|s| s.speaker_id.clone()).collect();
                for s in &speakers {
                    assert!(
                        seen.insert(s.clone()),
                        "speaker {s} in two chunks (seed {seed})"
                    );
                }
            }
        }
    }

    #[test]
    fn plan_n1_is_the_whole_split_and_n0_is_empty() {
        let validation = synth_validation(4, 2);
        let plan = plan_sessions(&validation, 1, 0).unwrap();
        assert_eq!(plan.chunks.len(), 1);
        assert_eq!(plan.chunks[0].len(), validation.len());
        let plan0 = plan_sessions(&validation, 0, 0).unwrap();
        assert!(plan0.chunks.is_empty());
    }

    #[test]
    fn plan_rejects_too_few_speakers() {
        let validation = synth_validation(2, 4);
        assert!(matches!(
            plan_sessions(&validation, 3, 0),
            Err(SessionError::TooFewSpeakers { .. })
        ));
    }

    #[test]
    fn mode_and_metric_parse() {
        assert_eq!(
            "weighted_ewc".parse::<RunMode>().unwrap(),
            RunMode::WeightedEwc
        );
        assert!(matches!(
            "x".parse::<RunMode>(),
            Err(SessionError::BadMode(_))
        ));
        assert_eq!(
            "manhattan".parse::<WeightMetric>().unwrap(),
            WeightMetric::Manhattan
        );
        assert!(matches!(
            "l3".parse::<WeightMetric>(),
            Err(SessionError::BadMetric(_))
        ));
    }

    fn desk_setup() -> (
        Vec<Spectrogram>,
        Vec<Spectrogram>,
        Vec<Spectrogram>,
        ArchDescriptor,
    ) {
        let cfg = SynthConfig {
            freq_bins: 8,
            time_frames: 8,
            speaker_pool: 20,
            noise_level: 0.35,
        };
        let data = gen_synthetic(2, 60, 17, &cfg).unwrap();
        let split = split_by_speaker(&data, SplitRatios::default(), 3).unwrap();
        let arch = ArchDescriptor::parse("in:8x8x1;c3x2-p2-fc8-out2").unwrap();
        (split.train, split.validation, split.test, arch)
    }

    fn desk_run<'a>(
        train: &'a [Spectrogram],
        test: &'a [Spectrogram],
        arch: &'a ArchDescriptor,
        plan: &'a SessionPlan,
        mode: RunMode,
    ) -> IncrementalRun<'a> {
        IncrementalRun {
            train,
            test,
            arch,
            plan,
            train_cfg: TrainConfig {
                epochs: 3,
                batch_size: 16,
                seed: 1,
                ..TrainConfig::default()
            },
            session_epochs: None,
            lime_cfg: LimeConfig {
                n_samples: 24,
                ..LimeConfig::default()
            },
            slic_cfg: SlicConfig {
                segments: 6,
                ..SlicConfig::default()
            },
            mode,
            out_dir: None,
            force_unit_weights: false,
        }
    }

    #[test]
    fn zero_session_plan_is_plain_train_and_evaluate() {
        let (train_set, _, test, arch) = desk_setup();
        let plan = SessionPlan {
            chunks: Vec::new(),
            lambda: 1.0,
            metric: WeightMetric::Euclidean,
            sqrt_weights: false,
            seed: 11,
        };
        let run = desk_run(&train_set, &test, &arch, &plan, RunMode::WeightedEwc);
        let outcome = run_incremental(&run).unwrap();
        assert_eq!(outcome.records.len(), 1);
        assert_eq!(outcome.records[0].session_id, 0);
        assert_eq!(outcome.records[0].added_count, 0);
        assert_eq!(outcome.initial_model.params, outcome.final_model.params);

        // Equals an explicit train + evaluate with the same derived seeds.
        let model = build_model(&arch, derive_seed(11, "init", 0)).unwrap();
        let pool = WeightedDataset::from_originals(&train_set);
        let cfg = TrainConfig {
            seed: derive_seed(1, "train", 0),
            epochs: 3,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let (plain, _) = train(model, &pool, &cfg, None, None).unwrap();
        assert_eq!(plain.params, outcome.final_model.params);
        let report = evaluate(&plain, &test).unwrap();
        assert_eq!(report.accuracy, outcome.records[0].test_accuracy);
    }

    #[test]
    fn ledger_grows_by_exactly_the_misclassified_counts() {
        let (train_set, validation, test, arch) = desk_setup();
        let mut plan = plan_sessions(&validation, 2, 7).unwrap();
        plan.seed = 7;
        let run = desk_run(&train_set, &test, &arch, &plan, RunMode::Weighted);
        let outcome = run_incremental(&run).unwrap();
        assert_eq!(outcome.records.len(), 3);
        for pair in outcome.records.windows(2) {
            assert_eq!(pair[1].train_size, pair[0].train_size + pair[1].added_count);
            assert!(pair[1].train_size >= pair[0].train_size);
        }
        assert_eq!(outcome.records[0].train_size, train_set.len());
    }

    #[test]
    fn traditional_equals_weighted_with_forced_unit_weights() {
        let (train_set, validation, test, arch) = desk_setup();
        let plan = plan_sessions(&validation, 2, 5).unwrap();
        let trad = desk_run(&train_set, &test, &arch, &plan, RunMode::Traditional);
        let trad_outcome = run_incremental(&trad).unwrap();
        let mut forced = desk_run(&train_set, &test, &arch, &plan, RunMode::Weighted);
        forced.force_unit_weights = true;
        let forced_outcome = run_incremental(&forced).unwrap();
        assert_eq!(
            trad_outcome.final_model.params,
            forced_outcome.final_model.params
        );
        for (a, b) in trad_outcome.records.iter().zip(&forced_outcome.records) {
            assert_eq!(a.train_size, b.train_size);
            assert_eq!(a.added_count, b.added_count);
            assert_eq!(a.test_accuracy, b.test_accuracy);
            assert_eq!(a.test_loss, b.test_loss);
            assert_eq!(a.mean_new_weight, b.mean_new_weight);
        }
    }

    #[test]
    fn runs_are_deterministic_and_csv_bytes_identical() {
        let (train_set, validation, test, arch) = desk_setup();
        let plan = plan_sessions(&validation, 2, 13).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut run = desk_run(&train_set, &test, &arch, &plan, RunMode::WeightedEwc);
        run.out_dir = Some(dir.path().join("a"));
        let first = run_incremental(&run).unwrap();
        run.out_dir = Some(dir.path().join("b"));
        let second = run_incremental(&run).unwrap();
        assert_eq!(first.final_model.params, second.final_model.params);
        let csv_a = std::fs::read(dir.path().join("a/sessions.csv")).unwrap();
        let csv_b = std::fs::read(dir.path().join("b/sessions.csv")).unwrap();
        assert_eq!(csv_a, csv_b);
        assert!(!csv_a.is_empty());

        // Checkpoints exist and reload consistently.
        let ckpt = checkpoint_load(dir.path().join("a/session_002.ckpt")).unwrap();
        assert_eq!(ckpt.session_id, 2);
        assert_eq!(ckpt.params, first.final_model.params);
        assert!(
            ckpt.ewc.is_some(),
            "EWC session checkpoints persist anchor and fisher"
        );
    }

    #[test]
    fn fisher_draw_uses_only_correctly_predicted_samples() {
        // Post-hoc property on a weighted_ewc run: rebuild the session-1
        // draw and check every drawn sample against the session's model.
        let (train_set, validation, test, arch) = desk_setup();
        let plan = plan_sessions(&validation, 1, 23).unwrap();
        let run = desk_run(&train_set, &test, &arch, &plan, RunMode::WeightedEwc);
        let outcome = run_incremental(&run).unwrap();

        // Recompute what session 1 saw: pool after admission, judged by the
        // initial model.
        let mis = select_misclassified(&outcome.initial_model, &plan.chunks[0]).unwrap();
        let mut pool: Vec<Spectrogram> = train_set.to_vec();
        pool.extend(mis);
        let preds = predictions(&outcome.initial_model, &pool).unwrap();
        let correct: Vec<&Spectrogram> = pool
            .iter()
            .zip(&preds)
            .filter(|(s, &p)| p == s.label)
            .map(|(s, _)| s)
            .collect();
        assert!(!correct.is_empty());
        let draw = ((correct.len() as f64 * 0.05).floor() as usize).max(1);
        let mut indices: Vec<usize> = (0..correct.len()).collect();
        let mut rng = Rng::seed_from(derive_seed(plan.seed, "fisher", 1));
        for i in 0..draw {
            let j = i + rng.next_below((indices.len() - i) as u64) as usize;
            indices.swap(i, j);
        }
        for &i in &indices[..draw] {
            let sample = correct[i];
            let pred =
                predictions(&outcome.initial_model, std::slice::from_ref(sample)).unwrap()[0];
            assert_eq!(pred, sample.label);
        }
    }

    #[test]
    fn sweep_lambda_zero_matches_weighted_mode_accuracies() {
        let (train_set, validation, test, arch) = desk_setup();
        let plan = plan_sessions(&validation, 2, 3).unwrap();
        let base = desk_run(&train_set, &test, &arch, &plan, RunMode::WeightedEwc);
        let outcomes = sweep_lambda(&base, &[0.0, 1.0]).unwrap();
        assert_eq!(outcomes.len(), 2);
        assert_eq!(outcomes[0].1.records.len(), 3);

        let weighted = run_incremental(&IncrementalRun {
            mode: RunMode::Weighted,
            ..desk_run(&train_set, &test, &arch, &plan, RunMode::Weighted)
        })
        .unwrap();
        for (zero_rec, w_rec) in outcomes[0].1.records.iter().zip(&weighted.records) {
            assert_eq!(zero_rec.test_accuracy, w_rec.test_accuracy);
            assert_eq!(zero_rec.test_loss, w_rec.test_loss);
        }
        // The shared initial training means identical session-0 rows across
        // lambdas.
        assert_eq!(
            outcomes[0].1.records[0].test_accuracy,
            outcomes[1].1.records[0].test_accuracy
        );
    }

    #[test]
    fn sweep_csv_has_lambda_times_sessions_rows() {
        let (train_set, validation, test, arch) = desk_setup();
        let plan = plan_sessions(&validation, 2, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut base = desk_run(&train_set, &test, &arch, &plan, RunMode::WeightedEwc);
        base.out_dir = Some(dir.path().to_path_buf());
        let outcomes = sweep_lambda(&base, &[0.0, 1.0, 100.0]).unwrap();
        let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows[0], "lambda,session,accuracy");
        assert_eq!(rows.len() - 1, 3 * (2 + 1));
        drop(outcomes);
    }
}

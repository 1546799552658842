//! Subcommand implementations. Inputs are never mutated; every artifact
//! lands under the configured output directory.

use std::path::{Path, PathBuf};

use limetrain_core::audio::{
    cache_read, cache_write, gen_synthetic, normalize_length, read_manifest, read_wav, spectrogram,
    split_by_speaker, AudioClip, DatasetSplit, SplitRatios, TARGET_RATE, TARGET_SAMPLES,
};
use limetrain_core::data::Spectrogram;
use limetrain_core::lime::{explain, top_k_segments, write_explanation_csv};
use limetrain_core::nn::ModelState;
use limetrain_core::segment::{slic, write_mask_pgm, write_pgm};
use limetrain_core::sessions::{
    checkpoint_load, checkpoint_save, plan_sessions, run_incremental, sweep_lambda, Checkpoint,
    IncrementalRun, RunMode, SessionPlan,
};
use limetrain_core::trainer::{
    evaluate, train, write_confusion_csv, write_history_csv, WeightedDataset,
};

use crate::config::RunConfig;
use crate::{Cli, CliError, Command};

fn run_err(e: impl std::fmt::Display) -> CliError {
    CliError::Run(e.to_string())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::PrepareData {
            ref config,
            ref out,
        } => {
            let config = load_config(&config.config, &cli)?;
            prepare_data(&config, out.clone())
        }
        Command::GenSynthetic {
            ref config,
            ref out,
        } => {
            let config = load_config(&config.config, &cli)?;
            gen_synthetic_cmd(&config, out.clone())
        }
        Command::TrainInitial { ref config } => {
            let config = load_config(&config.config, &cli)?;
            train_initial(&config)
        }
        Command::Explain {
            ref config,
            ref checkpoint,
            index,
            class,
            top_k,
        } => {
            let config = load_config(&config.config, &cli)?;
            explain_cmd(&config, checkpoint, index, class, top_k)
        }
        Command::RunIncremental {
            ref config,
            ref mode,
            lambda,
            ref metric,
            sessions,
        } => {
            let mut config = load_config(&config.config, &cli)?;
            if let Some(lambda) = lambda {
                config.sessions.lambda = lambda;
            }
            if let Some(metric) = metric {
                config.sessions.metric = metric.clone();
            }
            if let Some(n) = sessions {
                config.sessions.n_sessions = n;
            }
            let mode = mode
                .as_deref()
                .unwrap_or("weighted_ewc")
                .parse::<RunMode>()
                .map_err(|e| CliError::Config(e.to_string()))?;
            run_incremental_cmd(&config, mode)
        }
        Command::SweepLambda {
            ref config,
            ref lambdas,
            sessions,
        } => {
            let mut config = load_config(&config.config, &cli)?;
            if let Some(n) = sessions {
                config.sessions.n_sessions = n;
            }
            if lambdas.is_empty() {
                return Err(CliError::Config(
                    "sweep-lambda needs at least one lambda".into(),
                ));
            }
            sweep_lambda_cmd(&config, lambdas)
        }
        Command::Eval {
            ref config,
            ref checkpoint,
        } => {
            let config = load_config(&config.config, &cli)?;
            eval_cmd(&config, checkpoint)
        }
    }
}

fn load_config(path: &Path, cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::load(path)?;
    // Flags win over config values.
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out_dir) = &cli.out_dir {
        config.out_dir = out_dir.clone();
    }
    Ok(config)
}

fn ensure_out_dir(config: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| CliError::Run(format!("cannot create {}: {e}", config.out_dir.display())))
}

/// Materialize the configured data source as a labeled spectrogram list.
fn load_dataset(config: &RunConfig) -> Result<Vec<Spectrogram>, CliError> {
    if let Some(synth) = &config.data.synthetic {
        return gen_synthetic(
            synth.classes,
            synth.per_class,
            config.seed,
            &synth.to_core(),
        )
        .map_err(run_err);
    }
    if let Some(cache) = &config.data.cache {
        return cache_read(cache).map_err(run_err);
    }
    let manifest_path = config
        .data
        .wav_manifest
        .as_ref()
        .expect("validated: one source");
    let entries = read_manifest(manifest_path).map_err(run_err)?;
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let stft_cfg = config.stft_config();
    let mut specs = Vec::with_capacity(entries.len());
    for entry in entries {
        let wav_path = if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            base.join(&entry.path)
        };
        let wav = read_wav(&wav_path).map_err(run_err)?;
        if wav.sample_rate != TARGET_RATE {
            return Err(CliError::Run(format!(
                "{}: sample rate {} Hz unsupported, expected {TARGET_RATE} (resampling is out of scope)",
                wav_path.display(),
                wav.sample_rate
            )));
        }
        let clip = normalize_length(
            AudioClip {
                samples: wav.samples,
                sample_rate: wav.sample_rate,
                label: entry.label,
                speaker_id: entry.speaker_id,
                source_id: wav_path.display().to_string(),
            },
            TARGET_SAMPLES,
        );
        specs.push(spectrogram(&clip, &stft_cfg));
    }
    Ok(specs)
}

fn load_split(config: &RunConfig) -> Result<DatasetSplit, CliError> {
    let dataset = load_dataset(config)?;
    split_by_speaker(&dataset, SplitRatios::default(), config.seed).map_err(run_err)
}

fn prepare_data(config: &RunConfig, out: Option<PathBuf>) -> Result<(), CliError> {
    if config.data.wav_manifest.is_none() {
        return Err(CliError::Config(
            "prepare-data requires a `wav_manifest` data source".into(),
        ));
    }
    ensure_out_dir(config)?;
    let dataset = load_dataset(config)?;
    let out = out.unwrap_or_else(|| config.out_dir.join("prepared.spc"));
    cache_write(&dataset, &out).map_err(run_err)?;
    println!("wrote {} spectrograms to {}", dataset.len(), out.display());
    Ok(())
}

fn gen_synthetic_cmd(config: &RunConfig, out: Option<PathBuf>) -> Result<(), CliError> {
    if config.data.synthetic.is_none() {
        return Err(CliError::Config(
            "gen-synthetic requires a `synthetic` data source".into(),
        ));
    }
    ensure_out_dir(config)?;
    let dataset = load_dataset(config)?;
    let out = out.unwrap_or_else(|| config.out_dir.join("synthetic.spc"));
    cache_write(&dataset, &out).map_err(run_err)?;
    println!("wrote {} spectrograms to {}", dataset.len(), out.display());
    Ok(())
}

fn train_initial(config: &RunConfig) -> Result<(), CliError> {
    ensure_out_dir(config)?;
    let arch = config.parsed_arch()?;
    let split = load_split(config)?;
    let model = limetrain_core::nn::build_model(
        &arch,
        limetrain_core::rng::derive_seed(config.seed, "init", 0),
    )
    .map_err(run_err)?;
    let pool = WeightedDataset::from_originals(&split.train);
    let cfg = limetrain_core::trainer::TrainConfig {
        seed: limetrain_core::rng::derive_seed(config.seed, "train", 0),
        ..config.train_config()
    };
    let validation = (!split.validation.is_empty()).then_some(split.validation.as_slice());
    let (model, history) = train(model, &pool, &cfg, None, validation).map_err(run_err)?;
    write_history_csv(&history, config.out_dir.join("history.csv")).map_err(run_err)?;

    let report = evaluate(&model, &split.test).map_err(run_err)?;
    let ckpt_path = config.out_dir.join("initial.ckpt");
    checkpoint_save(&ckpt_path, &Checkpoint::from_model(&model, 0)).map_err(run_err)?;
    println!(
        "trained on {} samples, test accuracy {:.4}, checkpoint {}",
        split.train.len(),
        report.accuracy,
        ckpt_path.display()
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<ModelState, CliError> {
    checkpoint_load(path)
        .map_err(run_err)?
        .to_model()
        .map_err(run_err)
}

fn explain_cmd(
    config: &RunConfig,
    checkpoint: &Path,
    index: usize,
    class: Option<usize>,
    top_k: Option<usize>,
) -> Result<(), CliError> {
    ensure_out_dir(config)?;
    let dataset = load_dataset(config)?;
    let spec = dataset.get(index).ok_or_else(|| {
        CliError::Run(format!(
            "index {index} out of range ({} samples)",
            dataset.len()
        ))
    })?;
    let model = load_model(checkpoint)?;
    let map = slic(spec, &config.slic_config()).map_err(run_err)?;
    let target = match class {
        Some(c) => c,
        None => limetrain_core::trainer::predictions(&model, std::slice::from_ref(spec))
            .map_err(run_err)?[0],
    };
    let explanation =
        explain(&model, spec, &map, target, &config.lime_config()).map_err(run_err)?;

    let csv_path = config.out_dir.join("explanation.csv");
    write_explanation_csv(&explanation, &csv_path).map_err(run_err)?;
    let seg_path = config.out_dir.join("segments.pgm");
    write_pgm(&map, &seg_path).map_err(run_err)?;
    println!(
        "sample {index} (label {}, source {}): explained class {} over {} segments -> {}",
        spec.label,
        spec.source_id,
        target,
        map.n_segments,
        csv_path.display()
    );
    if let Some(k) = top_k {
        let top = top_k_segments(&explanation, k);
        let mask_path = config.out_dir.join(format!("explanation_top{k}.pgm"));
        write_mask_pgm(&map, &top, &mask_path).map_err(run_err)?;
        println!("top-{k} segments {top:?} -> {}", mask_path.display());
    }
    Ok(())
}

fn build_plan(config: &RunConfig, validation: &[Spectrogram]) -> Result<SessionPlan, CliError> {
    let mut plan =
        plan_sessions(validation, config.sessions.n_sessions, config.seed).map_err(run_err)?;
    plan.lambda = config.sessions.lambda;
    plan.metric = config.metric()?;
    plan.sqrt_weights = config.sessions.sqrt_weights;
    plan.seed = config.seed;
    Ok(plan)
}

fn run_incremental_cmd(config: &RunConfig, mode: RunMode) -> Result<(), CliError> {
    ensure_out_dir(config)?;
    let arch = config.parsed_arch()?;
    let split = load_split(config)?;
    let plan = build_plan(config, &split.validation)?;
    let run = IncrementalRun {
        train: &split.train,
        test: &split.test,
        arch: &arch,
        plan: &plan,
        train_cfg: config.train_config(),
        session_epochs: config.sessions.session_epochs,
        lime_cfg: config.lime_config(),
        slic_cfg: config.slic_config(),
        mode,
        out_dir: Some(config.out_dir.clone()),
        force_unit_weights: false,
    };
    let outcome = run_incremental(&run).map_err(run_err)?;
    for record in &outcome.records {
        println!(
            "session {}: train_size {} (+{}), test accuracy {:.4}",
            record.session_id, record.train_size, record.added_count, record.test_accuracy
        );
    }
    println!("ledger: {}", config.out_dir.join("sessions.csv").display());
    Ok(())
}

fn sweep_lambda_cmd(config: &RunConfig, lambdas: &[f64]) -> Result<(), CliError> {
    ensure_out_dir(config)?;
    let arch = config.parsed_arch()?;
    let split = load_split(config)?;
    let plan = build_plan(config, &split.validation)?;
    let run = IncrementalRun {
        train: &split.train,
        test: &split.test,
        arch: &arch,
        plan: &plan,
        train_cfg: config.train_config(),
        session_epochs: config.sessions.session_epochs,
        lime_cfg: config.lime_config(),
        slic_cfg: config.slic_config(),
        mode: RunMode::WeightedEwc,
        out_dir: Some(config.out_dir.clone()),
        force_unit_weights: false,
    };
    let outcomes = sweep_lambda(&run, lambdas).map_err(run_err)?;
    for (lambda, outcome) in &outcomes {
        let last = outcome.records.last().expect("at least the initial record");
        println!(
            "lambda {lambda}: final test accuracy {:.4}",
            last.test_accuracy
        );
    }
    println!("matrix: {}", config.out_dir.join("sweep.csv").display());
    Ok(())
}

fn eval_cmd(config: &RunConfig, checkpoint: &Path) -> Result<(), CliError> {
    ensure_out_dir(config)?;
    let split = load_split(config)?;
    let model = load_model(checkpoint)?;
    let report = evaluate(&model, &split.test).map_err(run_err)?;
    let csv_path = config.out_dir.join("confusion.csv");
    write_confusion_csv(&report, &csv_path).map_err(run_err)?;
    println!(
        "test accuracy {:.4}, mean loss {:.4}, confusion {}",
        report.accuracy,
        report.mean_loss,
        csv_path.display()
    );
    Ok(())
}

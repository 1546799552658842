//! Calibration sweep for the desk-scale effectiveness harness: prints the
//! criterion quantities per (noise, seed) so the acceptance constants can be
//! pinned with margin.

use limetrain_core::audio::{gen_synthetic, split_by_speaker, SplitRatios, SynthConfig};
use limetrain_core::data::Spectrogram;
use limetrain_core::lime::LimeConfig;
use limetrain_core::nn::ArchDescriptor;
use limetrain_core::segment::SlicConfig;
use limetrain_core::sessions::{
    plan_sessions, run_incremental, sweep_lambda, IncrementalRun, RunMode,
};
use limetrain_core::trainer::{evaluate, TrainConfig};

fn rename(mut specs: Vec<Spectrogram>, prefix: &str) -> Vec<Spectrogram> {
    for s in specs.iter_mut() {
        s.speaker_id = format!("{prefix}-{}", s.speaker_id);
    }
    specs
}

fn main() {
    let arch = ArchDescriptor::parse("in:16x16x1;c3x4-p2-c3x8-p2-fc32-out4").unwrap();
    let noises: Vec<f64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("noise level"))
        .collect();
    let noises = if noises.is_empty() {
        vec![3.0, 5.0, 7.0]
    } else {
        noises
    };

    for &noise in &noises {
        println!("=== base noise {noise} (shift {}) ===", 2.0 * noise);
        let mut order_ok = 0;
        let mut degrade_ok = 0;
        let mut retain_ok = 0;
        for seed in 0..5u64 {
            let cfg = SynthConfig {
                freq_bins: 16,
                time_frames: 16,
                speaker_pool: 40,
                noise_level: noise,
            };
            let base = gen_synthetic(4, 200, 200 + seed, &cfg).unwrap();
            let split = split_by_speaker(&base, SplitRatios::default(), 200 + seed).unwrap();

            let shift_cfg = SynthConfig {
                freq_bins: 16,
                time_frames: 16,
                speaker_pool: 12,
                noise_level: 2.0 * noise,
            };
            let shifted = rename(
                gen_synthetic(4, 60, 300 + seed, &shift_cfg).unwrap(),
                "shift",
            );
            let probe_cfg = SynthConfig {
                freq_bins: 16,
                time_frames: 16,
                speaker_pool: 8,
                noise_level: noise,
            };
            let probe_initial = rename(
                gen_synthetic(4, 25, 400 + seed, &probe_cfg).unwrap(),
                "probe",
            );
            let newdist_cfg = SynthConfig {
                noise_level: 2.0 * noise,
                ..probe_cfg
            };
            let probe_new = rename(
                gen_synthetic(4, 25, 500 + seed, &newdist_cfg).unwrap(),
                "newprobe",
            );

            let mut plan = plan_sessions(&shifted, 3, 600 + seed).unwrap();
            plan.seed = 600 + seed;
            plan.lambda = 1.0;

            let runner = |mode: RunMode| IncrementalRun {
                train: &split.train,
                test: &split.test,
                arch: &arch,
                plan: &plan,
                train_cfg: TrainConfig {
                    epochs: 14,
                    batch_size: 32,
                    seed: 700 + seed,
                    ..TrainConfig::default()
                },
                session_epochs: Some(4),
                lime_cfg: LimeConfig {
                    n_samples: 32,
                    ..LimeConfig::default()
                },
                slic_cfg: SlicConfig {
                    segments: 8,
                    ..SlicConfig::default()
                },
                mode,
                out_dir: None,
                force_unit_weights: false,
            };

            let trad = run_incremental(&runner(RunMode::Traditional)).unwrap();
            let weighted = run_incremental(&runner(RunMode::Weighted)).unwrap();
            let sweep = sweep_lambda(&runner(RunMode::WeightedEwc), &[0.0, 1.0, 100.0]).unwrap();
            let l0 = &sweep[0].1;
            let l1 = &sweep[1].1;
            let l100 = &sweep[2].1;

            let fin =
                |o: &limetrain_core::sessions::RunOutcome| o.records.last().unwrap().test_accuracy;
            let t = fin(&trad);
            let w = fin(&weighted);
            let e1 = fin(l1);
            let nd_init = evaluate(&l1.initial_model, &probe_new).unwrap().accuracy;
            let nd1 = evaluate(&l1.final_model, &probe_new).unwrap().accuracy;
            let nd100 = evaluate(&l100.final_model, &probe_new).unwrap().accuracy;
            let p_init = evaluate(&l0.initial_model, &probe_initial)
                .unwrap()
                .accuracy;
            let d0 = p_init - evaluate(&l0.final_model, &probe_initial).unwrap().accuracy;
            let d1 = p_init - evaluate(&l1.final_model, &probe_initial).unwrap().accuracy;

            let ord = e1 >= w && w >= t;
            let deg = nd100 < nd1;
            let ret = d1 <= d0;
            order_ok += ord as usize;
            degrade_ok += deg as usize;
            retain_ok += ret as usize;
            println!(
                "seed {seed}: init_test {:.3} | trad {t:.3} w {w:.3} e1 {e1:.3} ord={} | newdist init {nd_init:.3} l1 {nd1:.3} l100 {nd100:.3} deg={} | drop l0 {d0:.3} l1 {d1:.3} ret={}",
                trad.records[0].test_accuracy, ord as u8, deg as u8, ret as u8
            );
        }
        println!(
            "noise {noise}: ordering {order_ok}/5, degrade {degrade_ok}/5, retention {retain_ok}/5"
        );
    }
}

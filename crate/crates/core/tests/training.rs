use nomperf::domain::extract_features;
use nomperf::eval::{predict_run, UtilizationModel};
use nomperf::optim::{train_scg, train_sgd};
use nomperf::pipeline::{self, train_pipeline, TrainConfig};
use nomperf::sim::{self, ScenarioConfig};
use nomperf::{modelfile, Activation, Matrix, Mlp, MissionProfile, ScgOptions, SgdOptions, TrainingBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_corpus(n_runs: usize) -> Vec<nomperf::RunRecord> {
    let cfg = ScenarioConfig {
        n_runs,
        duration: 120.0,
        seed: 9,
        ..ScenarioConfig::canonical()
    };
    sim::generate_corpus(&cfg).unwrap().0
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        hidden_units: 8,
        seed: 4,
        scg: ScgOptions::with_cycles(150),
        ..TrainConfig::default()
    }
}

/// Noise-free linear target y = 0.3 x1 - 0.2 x2 + 0.1.
fn linear_batch(rows: usize, seed: u64) -> TrainingBatch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<[f64; 2]> = (0..rows)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    let t: Vec<f64> = x.iter().map(|r| 0.3 * r[0] - 0.2 * r[1] + 0.1).collect();
    TrainingBatch::new(Matrix::from_rows(&x).unwrap(), Matrix::from_vec(rows, 1, t).unwrap()).unwrap()
}

#[test]
fn scg_fits_linear_target_with_monotone_trace() {
    let batch = linear_batch(60, 1);
    let model = Mlp::init(2, 4, 1, Activation::Tanh, 0.0, 2).unwrap();
    let (fit, trace) = train_scg(&model, &batch, &ScgOptions::with_cycles(2000)).unwrap();
    assert_eq!(trace.monotonicity_violations(), 0);
    let e = fit.error(&batch).unwrap();
    assert!(e < 1e-6, "error {e}");
}

#[test]
fn sgd_reduces_error_on_linear_target() {
    let batch = linear_batch(64, 3);
    let model = Mlp::init(2, 4, 1, Activation::Logistic, 0.0, 5).unwrap();
    let before = model.error(&batch).unwrap();
    let opts = SgdOptions {
        learning_rate: 0.05,
        batch_size: 8,
        epochs: 300,
        seed: 1,
    };
    let (fit, trace) = train_sgd(&model, &batch, &opts).unwrap();
    let after = fit.error(&batch).unwrap();
    assert!(after < 0.05 * before, "{before} -> {after}");
    assert_eq!(trace.records.len(), 301);
}

#[test]
fn f32_and_f64_training_agree_roughly() {
    let batch = linear_batch(40, 7);
    let m64 = Mlp::init(2, 3, 1, Activation::Tanh, 0.01, 8).unwrap();
    let (fit64, _) = train_scg(&m64, &batch, &ScgOptions::with_cycles(200)).unwrap();
    let x32: Vec<f32> = batch.inputs().as_slice().iter().map(|&v| v as f32).collect();
    let t32: Vec<f32> = batch.targets().as_slice().iter().map(|&v| v as f32).collect();
    let b32 = TrainingBatch::new(
        Matrix::from_vec(40, 2, x32).unwrap(),
        Matrix::from_vec(40, 1, t32).unwrap(),
    )
    .unwrap();
    let m32 = nomperf::Mlp32::init(2, 3, 1, Activation::Tanh, 0.01, 8).unwrap();
    let (fit32, _) = train_scg(&m32, &b32, &ScgOptions::with_cycles(200)).unwrap();
    let e64 = fit64.error(&batch).unwrap();
    let e32 = fit32.error(&b32).unwrap() as f64;
    assert!((e64 - e32).abs() < 1e-2, "{e64} vs {e32}");
}

#[test]
fn holdout_runs_do_not_touch_the_weights() {
    let runs = small_corpus(4);
    let with = TrainConfig {
        holdout_run_ids: vec!["run_002".into()],
        ..small_cfg()
    };
    let a = train_pipeline(&runs, &with).unwrap();
    let without: Vec<_> = runs.iter().filter(|r| r.run_id() != "run_002").cloned().collect();
    let b = train_pipeline(&without, &small_cfg()).unwrap();
    assert_eq!(modelfile::to_bytes(&a), modelfile::to_bytes(&b));
}

#[test]
fn feature_matrix_has_one_row_per_training_sample() {
    let runs = small_corpus(3);
    let rows = pipeline::corpus_features(&runs).unwrap();
    assert_eq!(rows.len(), runs.iter().map(|r| r.len()).sum::<usize>());
}

#[test]
fn profile_prediction_matches_forward_on_training_features() {
    let runs = small_corpus(3);
    let art = train_pipeline(&runs, &small_cfg()).unwrap();
    for run in &runs {
        let profile = MissionProfile::from_run(run).unwrap();
        let trace = predict_run(&art, &profile, &UtilizationModel::Recorded(run.utilizations())).unwrap();
        let rows = extract_features(&art.normalization.apply(run).unwrap()).unwrap();
        let direct = art.predict_rows(&rows).unwrap();
        assert_eq!(trace.predicted_speed, direct, "{}", run.run_id());
    }
}

#[test]
fn saved_model_predicts_bitwise_identically() {
    let runs = small_corpus(2);
    let art = train_pipeline(&runs, &small_cfg()).unwrap();
    let loaded = modelfile::from_bytes(&modelfile::to_bytes(&art)).unwrap();
    let profile = MissionProfile::from_run(&runs[0]).unwrap();
    let util = UtilizationModel::calibrated(profile.duration()).unwrap();
    let a = predict_run(&art, &profile, &util).unwrap();
    let b = predict_run(&loaded, &profile, &util).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.predicted_speed), bits(&b.predicted_speed));
}

#[test]
fn sgd_pipeline_and_tanh_train() {
    let runs = small_corpus(2);
    let cfg = TrainConfig {
        optimizer: nomperf::pipeline::OptimizerChoice::Sgd,
        activation: Activation::Tanh,
        sgd: SgdOptions {
            epochs: 20,
            ..SgdOptions::default()
        },
        ..small_cfg()
    };
    let art = train_pipeline(&runs, &cfg).unwrap();
    assert_eq!(art.trace.records.len(), 21);
    assert!(art.residuals.std >= 0.0);
}

#[test]
fn train_config_toml_round_trip_and_errors() {
    let cfg = small_cfg();
    let text = nomperf::config::to_toml(&cfg).unwrap();
    let back: TrainConfig = nomperf::config::from_toml(&text).unwrap();
    assert_eq!(back, cfg);
    let bad = nomperf::config::from_toml::<TrainConfig>("version = 1\nhidden_units = \"many\"\n");
    match bad {
        Err(nomperf::Error::Parse(m)) => assert!(m.contains("line 2"), "{m}"),
        other => panic!("{other:?}"),
    }
    let old = nomperf::config::from_toml::<TrainConfig>("version = 0\n");
    assert!(matches!(old, Err(nomperf::Error::UnsupportedVersion(_))));
    let unknown = nomperf::config::from_toml::<TrainConfig>("version = 1\nhiden_units = 3\n");
    assert!(matches!(unknown, Err(nomperf::Error::Parse(_))));
}

use nomperf::domain::{self, extract_features, normalize};
use nomperf::eval::{self, flag_anomalies, rolling_mean, MethodEval};
use nomperf::pipeline::ResidualStats;
use nomperf::sim::{self, ScenarioConfig};
use nomperf::{Activation, Matrix, Mlp, MissionProfile, RunRecord, Sample, TrainingBatch};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Regularized error computed without the library's forward pass, from the
/// documented parameter layout W1 | b1 | W2 | b2.
fn naive_error(
    n_in: usize,
    n_hidden: usize,
    act: Activation,
    alpha: f64,
    theta: &[f64],
    x: &[Vec<f64>],
    t: &[f64],
) -> f64 {
    let w1 = &theta[..n_in * n_hidden];
    let b1 = &theta[n_in * n_hidden..n_in * n_hidden + n_hidden];
    let w2 = &theta[n_in * n_hidden + n_hidden..n_in * n_hidden + 2 * n_hidden];
    let b2 = theta[n_in * n_hidden + 2 * n_hidden];
    let mut e = 0.0;
    for (row, target) in x.iter().zip(t) {
        let mut y = b2;
        for j in 0..n_hidden {
            let mut a = b1[j];
            for i in 0..n_in {
                a += row[i] * w1[i * n_hidden + j];
            }
            let z = match act {
                Activation::Logistic => 1.0 / (1.0 + (-a).exp()),
                Activation::Tanh => a.tanh(),
            };
            y += z * w2[j];
        }
        e += 0.5 * (y - target).powi(2);
    }
    let wsq: f64 = w1.iter().chain(w2).map(|w| w * w).sum();
    e + 0.5 * alpha * wsq
}

fn run_from(cmds: &[f64], actual: &[f64], dt: f64) -> RunRecord {
    let n = cmds.len();
    let samples = (0..n)
        .map(|i| Sample {
            t: i as f64 * dt,
            cmd_speed: cmds[i],
            actual_speed: actual[i],
            utilization: i as f64 / n as f64,
        })
        .collect();
    RunRecord::new("p", dt, samples).unwrap()
}

fn cmd_series() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0usize..5, 1usize..12), 1..8).prop_map(|segs| {
        segs.into_iter()
            .flat_map(|(lvl, len)| std::iter::repeat_n(0.2 * (lvl + 1) as f64, len))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn library_error_matches_naive_error(
        n_in in 1usize..5, n_hidden in 1usize..6, tanh in any::<bool>(),
        alpha in 0.0f64..1.0, seed in any::<u64>(), rows in 1usize..8,
    ) {
        let act = if tanh { Activation::Tanh } else { Activation::Logistic };
        let model = Mlp::init(n_in, n_hidden, 1, act, alpha, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x: Vec<Vec<f64>> = (0..rows).map(|_| (0..n_in).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect()).collect();
        let t: Vec<f64> = (0..rows).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let batch = TrainingBatch::new(Matrix::from_rows(&x).unwrap(), Matrix::from_vec(rows, 1, t.clone()).unwrap()).unwrap();
        let lib = model.error(&batch).unwrap();
        let naive = naive_error(n_in, n_hidden, act, alpha, model.params(), &x, &t);
        prop_assert!((lib - naive).abs() <= 1e-12 * naive.abs().max(1.0));
    }

    #[test]
    fn feature_rows_follow_command_changes(cmds in cmd_series(), dt in 0.01f64..2.0) {
        let run = run_from(&cmds, &cmds, dt);
        let rows = extract_features(&run).unwrap();
        prop_assert_eq!(rows.len(), cmds.len());
        let first_change = (1..cmds.len()).find(|&i| cmds[i] != cmds[i - 1]);
        for (i, r) in rows.iter().enumerate() {
            prop_assert_eq!(r.cur_cmd, cmds[i]);
            if first_change.is_none_or(|c| i < c) {
                prop_assert_eq!(r.prev_cmd, 0.0);
            }
            if i > 0 && cmds[i] != cmds[i - 1] {
                prop_assert_eq!(r.time_since_change, 0.0);
                prop_assert_eq!(r.prev_cmd, cmds[i - 1]);
            }
            prop_assert!(r.time_since_change >= 0.0);
        }
    }

    #[test]
    fn normalized_corpus_lies_in_unit_range(cmds in cmd_series(), scale in 0.5f64..50.0) {
        let raw: Vec<f64> = cmds.iter().map(|c| c * scale).collect();
        let actual: Vec<f64> = raw.iter().map(|c| c * 0.9).collect();
        let run = run_from(&raw, &actual, 0.5);
        let (norm, meta) = normalize(std::slice::from_ref(&run)).unwrap();
        for s in norm[0].samples() {
            prop_assert!((0.0..=1.0).contains(&s.cmd_speed));
            prop_assert!((0.0..=1.0).contains(&s.t));
        }
        let back = meta.invert(&norm[0]).unwrap();
        for (a, b) in back.samples().iter().zip(run.samples()) {
            prop_assert!((a.cmd_speed - b.cmd_speed).abs() <= 1e-12 * b.cmd_speed.max(1.0));
            prop_assert!((a.t - b.t).abs() <= 1e-12 * b.t.max(1.0));
        }
    }

    #[test]
    fn accumulated_error_is_prefix_sum(
        pred in prop::collection::vec(0.0f64..1.0, 1..200),
        noise in prop::collection::vec(-0.5f64..0.5, 200),
    ) {
        let actual: Vec<f64> = pred.iter().zip(&noise).map(|(p, n)| p + n).collect();
        let m = MethodEval::from_series("x", &pred, &actual).unwrap();
        let mut acc = 0.0;
        for k in 0..pred.len() {
            acc += (pred[k] - actual[k]).abs();
            prop_assert_eq!(m.accumulated[k], acc);
            if k > 0 {
                prop_assert!(m.accumulated[k] >= m.accumulated[k - 1]);
            }
        }
    }

    #[test]
    fn flags_equal_direct_scan(
        residuals in prop::collection::vec(0.0f64..1.0, 30..200),
        window in 1usize..30, k in 0.1f64..4.0, std in 0.0f64..0.3,
    ) {
        let stats = ResidualStats { mean: 0.3, std, count: 1 };
        let flags = flag_anomalies(&residuals, &stats, k, window, "m").unwrap();
        // Oracle: rolling mean by explicit window bounds.
        let n = residuals.len();
        let thr = stats.mean + k * stats.std;
        let (lo, hi) = ((window - 1) / 2, window / 2);
        let hot: Vec<bool> = (0..n).map(|i| {
            let a = i.saturating_sub(lo);
            let b = (i + hi).min(n - 1);
            let mut s = 0.0;
            for r in &residuals[a..=b] { s += r; }
            s / (b - a + 1) as f64 > thr
        }).collect();
        let mut covered = vec![false; n];
        let mut last_end: Option<usize> = None;
        for f in &flags {
            prop_assert!(f.start_idx <= f.end_idx && f.end_idx < n);
            if let Some(e) = last_end { prop_assert!(f.start_idx > e + 1); }
            last_end = Some(f.end_idx);
            covered[f.start_idx..=f.end_idx].iter_mut().for_each(|c| *c = true);
            let peak = residuals[f.start_idx..=f.end_idx].iter().copied().fold(0.0, f64::max);
            prop_assert_eq!(f.peak_residual, peak);
        }
        prop_assert_eq!(covered, hot);
        prop_assert_eq!(rolling_mean(&residuals, window).len(), n);
    }

    #[test]
    fn setpoint_error_equals_direct_sum(cmds in cmd_series(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actual: Vec<f64> = cmds.iter().map(|c| c * rand::Rng::random_range(&mut rng, 0.7..1.1)).collect();
        let run = run_from(&cmds, &actual, 1.0);
        let profile = MissionProfile::from_run(&run).unwrap();
        let m = eval::evaluate(&eval::baseline_setpoint(&profile, 1.0).unwrap(), &run).unwrap();
        let mut direct = 0.0;
        for s in run.samples() { direct += (s.cmd_speed - s.actual_speed).abs(); }
        prop_assert_eq!(m.summary.final_accumulated, direct);
    }

    #[test]
    fn simulated_runs_are_valid(
        seed in any::<u64>(), tau in 0.5f64..10.0, noise in 0.0f64..0.05,
        p_stair in 0.0f64..1.0, p_over in 0.0f64..1.0, fade in 0.0f64..1.0,
        duration in 5.0f64..200.0,
    ) {
        let cfg = ScenarioConfig {
            n_runs: 2, duration, tau_v: tau, noise_std: noise, staircase_probability: p_stair,
            overshoot_probability: p_over, fade_probability: fade, seed,
            ..ScenarioConfig::canonical()
        };
        let (runs, manifest) = sim::generate_corpus(&cfg).unwrap();
        prop_assert_eq!(manifest.runs.len(), 2);
        for r in &runs {
            prop_assert!(r.validate().is_ok());
            prop_assert_eq!(r.samples()[0].utilization, 0.0);
            prop_assert!(r.utilizations().windows(2).all(|w| w[1] >= w[0]));
        }
    }
}

#[test]
fn profile_expansion_matches_run_commands() {
    let cfg = ScenarioConfig::canonical();
    let (runs, _) = sim::generate_corpus(&cfg).unwrap();
    for r in &runs {
        let p = MissionProfile::from_run(r).unwrap();
        assert_eq!(p.expand(r.dt()), r.cmd_speeds());
    }
}

#[test]
fn canonical_corpus_has_full_speed_plateaus_at_distinct_utilizations() {
    let cfg = ScenarioConfig::canonical();
    let (runs, _) = sim::generate_corpus(&cfg).unwrap();
    let top = *cfg.speed_grid.last().unwrap();
    let mut plateau_utils: Vec<f64> = Vec::new();
    for r in &runs {
        let rows = extract_features(r).unwrap();
        // Utilization where a top-speed hold has settled (5 time constants in).
        for w in rows.windows(2) {
            if w[1].cur_cmd == top && w[1].time_since_change >= 5.0 * cfg.tau_v && w[0].time_since_change < 5.0 * cfg.tau_v {
                plateau_utils.push(w[1].utilization);
            }
        }
    }
    plateau_utils.sort_by(f64::total_cmp);
    plateau_utils.dedup_by(|a, b| (*a - *b).abs() < 0.05);
    assert!(plateau_utils.len() >= 3, "{plateau_utils:?}");
    assert!(domain::max_dwell(&extract_features(&runs[0]).unwrap()) > 0.0);
}

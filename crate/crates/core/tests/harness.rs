use lfxlms::anc::ErrorTrace;
use lfxlms::harness::{average_traces, convergence_time, run_pipeline, ExperimentConfig, MetricsReport};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(n_trials: usize, with_model: bool) -> ExperimentConfig {
    let models = if with_model {
        r#"[{"name": "tiny", "variant": "plain", "mixup": true}]"#
    } else {
        "[]"
    };
    let latent = if with_model {
        r#",
            {"type": "latent", "name": "tiny/data", "model": "tiny", "scheme": "data", "mu_z": 5.0},
            {"type": "latent", "name": "tiny/latent", "model": "tiny", "scheme": "latent", "mu_z": 0.5}"#
    } else {
        ""
    };
    let text = format!(
        r#"{{
        "seed": 99,
        "room": {{"dimensions": [6.0, 6.2, 3.0], "rt60": 0.15, "sample_rate": 16000.0, "rir_length": 256}},
        "geometry": {{"segment": [[1.5, 1.0, 1.0], [3.0, 2.0, 2.0]],
                     "secondary_source": [3.0, 2.5, 1.5], "error_mic": [4.5, 3.0, 1.5]}},
        "dataset": {{"n_positions": 6, "stop": {{"max_blocks": 60, "tol": 1e-3, "window": 10, "block_size": 100, "epsilon": 1e-8}}}},
        "model": {{"hidden_dim": 6, "latent_dim": 2}},
        "training": {{"epochs": 3, "batch_size": 4, "mixup_count": 4}},
        "models": {models},
        "experiment": {{"n_trials": {n_trials}, "n_blocks": 40, "switch_block": 20, "block_size": 50,
                        "steady_window": 8, "rho": 0.4, "tuning_trials": 1}},
        "controllers": [
            {{"type": "fxlms", "name": "fxlms", "mu": 10.0}},
            {{"type": "fxlms", "name": "fxlms_tuned", "grid": [5.0, 20.0]}}{latent}
        ]
    }}"#
    );
    let c: ExperimentConfig = serde_json::from_str(&text).unwrap();
    c.validate().unwrap();
    c
}

fn run(config: &ExperimentConfig) -> (MetricsReport, String) {
    let dir = tempfile::tempdir().unwrap();
    let report = run_pipeline(config, dir.path(), dir.path()).unwrap();
    let json = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    (report, json)
}

#[test]
fn report_is_bit_identical_across_runs() {
    let c = small_config(2, true);
    let (_, a) = run(&c);
    let (_, b) = run(&c);
    assert_eq!(a, b);
}

#[test]
fn paired_trials_share_realizations() {
    let (report, _) = run(&small_config(3, true));
    assert_eq!(report.trials.len(), 3);
    for info in &report.trials {
        for c in &report.controllers {
            let t = c.trials.iter().find(|t| t.trial == info.trial).unwrap();
            assert_eq!(t.realization, info.realization, "{} trial {}", c.name, info.trial);
        }
    }
    let hashes: std::collections::BTreeSet<_> = report.trials.iter().map(|t| &t.realization).collect();
    assert_eq!(hashes.len(), 3);
}

#[test]
fn single_trial_report_equals_trial_metrics() {
    let (report, _) = run(&small_config(1, false));
    for c in &report.controllers {
        assert_eq!(c.trials.len(), 1);
        let t = &c.trials[0];
        assert_eq!(c.mean_convergence_initial, t.convergence_initial.map(|v| v as f64));
        assert_eq!(c.mean_convergence_post, t.convergence_post.map(|v| v as f64));
        assert_eq!(c.anc_gain_db.0.to_bits(), t.anc_gain_db.0.to_bits());
        assert_eq!(c.anc_gain_initial_db.0.to_bits(), t.anc_gain_initial_db.0.to_bits());
        assert_eq!(c.steady_mse.to_bits(), t.steady_mse.to_bits());
    }
    let tuned = report.controller("fxlms_tuned").unwrap();
    assert!(tuned.tuning.as_ref().is_some_and(|p| !p.is_empty()));
}

#[test]
fn traces_are_written_per_controller() {
    let c = small_config(2, false);
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(&c, dir.path(), dir.path()).unwrap();
    let t = dir.path().join("traces");
    for f in ["anc_off.csv", "fxlms.csv", "fxlms_tuned.csv", "fxlms/trial_001.csv"] {
        let text = std::fs::read_to_string(t.join(f)).unwrap();
        assert!(text.starts_with("block,mse"), "{f}");
        assert_eq!(text.lines().count(), 41, "{f}");
    }
    assert!(dir.path().join("report.txt").exists());
}

fn trace(v: Vec<f64>) -> ErrorTrace {
    ErrorTrace {
        block_mse: v,
        block_size: 100,
        sample_rate: 16_000.0,
    }
}

#[test]
fn average_of_many_traces_matches_resummation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let traces: Vec<ErrorTrace> = (0..50)
        .map(|_| trace((0..37).map(|_| rng.gen_range(0.0..10.0)).collect()))
        .collect();
    let avg = average_traces(&traces).unwrap();
    for k in 0..37 {
        let mut s = 0.0;
        for t in &traces {
            s += t.block_mse[k];
        }
        assert_eq!(avg.block_mse[k], s * (1.0 / 50.0));
        let mean = traces.iter().map(|t| t.block_mse[k]).sum::<f64>() / 50.0;
        assert!((avg.block_mse[k] - mean).abs() <= 1e-12 * mean);
    }
    assert!(average_traces(&[]).is_err());
}

proptest! {
    #[test]
    fn convergence_never_later_for_larger_rho(
        v in proptest::collection::vec(0.0f64..5.0, 12..60),
        a in 0.0f64..2.0,
        b in 0.0f64..2.0,
    ) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let k_lo = convergence_time(&v, lo, 10).unwrap();
        let k_hi = convergence_time(&v, hi, 10).unwrap();
        match (k_lo, k_hi) {
            (Some(x), Some(y)) => prop_assert!(y <= x),
            (Some(_), None) => prop_assert!(false, "larger rho lost convergence"),
            _ => {}
        }
    }
}

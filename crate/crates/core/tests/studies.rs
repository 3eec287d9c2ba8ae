//! Study-level behaviour on small configurations.

use hris::cli::{render, OutputFormat};
use hris::experiments::{
    hris_metric, run, run_closed_form_validation, run_prop1_check, run_snr_sweep, run_tradeoff, ExperimentSpec,
    Parallelism, Study, BASELINE_METRIC,
};
use hris::scenario::SystemDims;

fn small_validate(trials: usize) -> ExperimentSpec {
    ExperimentSpec {
        dims: SystemDims::new(4, 8, 2, 2, 16).unwrap(),
        trials,
        drops: 4,
        ..ExperimentSpec::defaults(Study::Validate)
    }
}

#[test]
fn prop1_small_dims_bracket_the_bound() {
    let spec = ExperimentSpec {
        dims: SystemDims::new(2, 8, 2, 3, 12).unwrap(),
        trials: 10,
        ..ExperimentSpec::defaults(Study::Prop1)
    };
    let t = run_prop1_check(&spec).unwrap();
    let rate: Vec<(f64, f64)> = t.series("identifiable_rate");
    assert_eq!(rate, vec![(11.0, 0.0), (12.0, 1.0), (20.0, 1.0)]);
    assert!(t.get("max_rel_err_g", 12.0).unwrap().mean < 1e-9);
    assert!(t.get("max_rel_err_h", 20.0).unwrap().mean < 1e-9);
    assert!(t.get("max_rank_rc", 11.0).unwrap().mean < 24.0);
}

#[test]
fn prop1_full_sensing_at_tau_n() {
    let spec = ExperimentSpec {
        dims: SystemDims::new(3, 6, 6, 4, 6).unwrap(),
        taus: vec![6],
        trials: 5,
        ..ExperimentSpec::defaults(Study::Prop1)
    };
    let t = run_prop1_check(&spec).unwrap();
    assert_eq!(t.get("identifiable_rate", 6.0).unwrap().mean, 1.0);
}

#[test]
fn validation_prior_regime_and_monotone_closed_form() {
    let spec = ExperimentSpec { snr_db: vec![-40.0], ..small_validate(2000) };
    let t = run_closed_form_validation(&spec).unwrap();
    let nmse = t.get("nmse_g_empirical", -40.0).unwrap().mean;
    assert!((nmse - 1.0).abs() < 0.03, "{nmse}");

    let grid = vec![-10.0, 0.0, 10.0, 20.0, 30.0];
    let spec = ExperimentSpec { snr_db: grid.clone(), ..small_validate(8) };
    let t = run_closed_form_validation(&spec).unwrap();
    let closed: Vec<f64> = t.series("mse_g_closed").iter().map(|p| p.1).collect();
    assert_eq!(closed.len(), grid.len());
    assert!(closed.windows(2).all(|w| w[1] < w[0]), "{closed:?}");
}

#[test]
fn validation_stderr_scales_with_trials() {
    let se = |trials| {
        let spec = ExperimentSpec { snr_db: vec![10.0], ..small_validate(trials) };
        run_closed_form_validation(&spec).unwrap().get("mse_g_empirical", 10.0).unwrap().stderr
    };
    let ratio = se(1000) / se(4000);
    assert!((1.6..2.5).contains(&ratio), "stderr ratio {ratio}");
}

#[test]
fn tradeoff_edges_and_overlay() {
    let spec = ExperimentSpec {
        dims: SystemDims::new(4, 16, 4, 2, 12).unwrap(),
        rho: vec![0.0, 0.5, 1.0],
        phase_seeds: 2,
        snr_db: vec![10.0],
        trials: 600,
        empirical_overlay: true,
        ..ExperimentSpec::defaults(Study::Tradeoff)
    };
    let t = run_tradeoff(&spec).unwrap();
    for p in 0..2 {
        assert!((t.get(&format!("e_h_norm_phase{p}"), 0.0).unwrap().mean - 1.0).abs() < 1e-12);
        assert!((t.get(&format!("e_g_norm_phase{p}"), 1.0).unwrap().mean - 1.0).abs() < 1e-12);
        let closed = t.get(&format!("e_g_norm_phase{p}"), 0.5).unwrap().mean;
        let emp = t.get(&format!("e_g_norm_empirical_phase{p}"), 0.5).unwrap().mean;
        assert!((emp / closed - 1.0).abs() < 0.1, "{emp} vs {closed}");
    }
}

#[test]
fn snr_sweep_noise_free_limit() {
    let spec = ExperimentSpec {
        dims: SystemDims::new(4, 8, 2, 2, 12).unwrap(),
        snr_db: vec![160.0, 200.0],
        trials: 6,
        drops: 2,
        ..ExperimentSpec::defaults(Study::SnrSweep)
    };
    let t = run_snr_sweep(&spec).unwrap();
    for snr in [160.0, 200.0] {
        assert!(t.get(BASELINE_METRIC, snr).unwrap().mean < 1e-10);
        assert!(t.get(&hris_metric(0.5), snr).unwrap().mean < 1e-10);
    }
}

#[test]
fn snr_sweep_small_hris_beats_baseline() {
    let spec = ExperimentSpec {
        dims: SystemDims::new(4, 8, 4, 2, 16).unwrap(),
        snr_db: vec![0.0, 10.0, 20.0, 30.0],
        trials: 100,
        drops: 5,
        ..ExperimentSpec::defaults(Study::SnrSweep)
    };
    let t = run_snr_sweep(&spec).unwrap();
    for snr in &spec.snr_db {
        assert!(t.get(&hris_metric(0.5), *snr).unwrap().mean < t.get(BASELINE_METRIC, *snr).unwrap().mean);
    }
    assert!(t.get("gain_db_lower_bound_rho0.5", 1e-2).is_some());
}

#[test]
fn thread_count_does_not_change_results() {
    for mut spec in [
        small_validate(200),
        ExperimentSpec {
            dims: SystemDims::new(4, 8, 2, 2, 12).unwrap(),
            snr_db: vec![0.0, 20.0],
            trials: 12,
            drops: 3,
            ..ExperimentSpec::defaults(Study::SnrSweep)
        },
    ] {
        let mut outputs = Vec::new();
        for par in [Parallelism::Strict, Parallelism::Threads(3), Parallelism::Auto] {
            spec.parallelism = par;
            outputs.push(render(&run(&spec).unwrap(), OutputFormat::Csv).unwrap());
        }
        assert_eq!(outputs[0], outputs[1]);
        assert_eq!(outputs[0], outputs[2]);
    }
}

#[test]
fn seed_changes_results() {
    let a = run(&ExperimentSpec { seed: 1, ..small_validate(50) }).unwrap();
    let b = run(&ExperimentSpec { seed: 2, ..small_validate(50) }).unwrap();
    assert_ne!(a, b);
}

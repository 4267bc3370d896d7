//! End-to-end behavior of the estimation pipeline: hyperparameter
//! selection on the simulated location-scale model, the rolling/holdout
//! equivalence, artifact round-trips and inference plumbing.

mod common;

use std::sync::atomic::{AtomicUsize, Ordering};

use qcf::artifacts::{load_fit, save_fit};
use qcf::inference::{theta_covariance, InferenceConfig};
use qcf::metrics::{metric_bundle, rolling_oos, QuantileFit};
use qcf::pipeline::{fit_qcf, FitConfig};
use qcf::qr::quantile_loss;
use qcf::select::{select_hyperparams, HyperGrid};
use qcf::sim::{generate_dgp, DgpConfig, Setting};

/// Modal factor-count selection: at the median the location-scale model has
/// one active factor, off the median it has two.
#[test]
fn selection_finds_active_factor_count() {
    let grid = HyperGrid {
        r: vec![1, 2, 3],
        m: vec![4],
        ridge: vec![1e-3],
    };
    let reps = 7;
    let median_mode = AtomicUsize::new(0);
    let tail_mode = AtomicUsize::new(0);
    for rep in 0..reps {
        let cfg = DgpConfig::new(150, 40, Setting::Two, 52_000 + rep as u64);
        let (panel, _) = generate_dgp(&cfg).unwrap();
        let at_median = select_hyperparams(&panel, &grid, 0.5).unwrap().best;
        if at_median.r == 1 {
            median_mode.fetch_add(1, Ordering::Relaxed);
        }
        let at_tail = select_hyperparams(&panel, &grid, 0.05).unwrap().best;
        if at_tail.r == 2 {
            tail_mode.fetch_add(1, Ordering::Relaxed);
        }
    }
    let median_hits = median_mode.load(Ordering::Relaxed);
    let tail_hits = tail_mode.load(Ordering::Relaxed);
    assert!(
        median_hits * 2 > reps,
        "r̂ = 1 selected at the median in only {median_hits}/{reps} replications"
    );
    assert!(
        tail_hits * 2 > reps,
        "r̂ = 2 selected at τ = 0.05 in only {tail_hits}/{reps} replications"
    );
}

/// A rolling window of length T−1 produces exactly the selection holdout
/// score.
#[test]
fn rolling_window_t_minus_one_equals_selection_score() {
    let cfg = DgpConfig::new(120, 16, Setting::Two, 53_001);
    let (panel, _) = generate_dgp(&cfg).unwrap();
    let t_len = panel.n_periods();
    let fit_config = FitConfig {
        tau: 0.25,
        r: 2,
        m: 3,
        ridge: 1e-3,
    };

    let report = rolling_oos(&panel, t_len - 1, &fit_config).unwrap();
    assert!(report.skipped.is_empty());
    assert_eq!(report.fit.rows.len(), panel.n_at(t_len - 1));
    let mut rolling_score = 0.0;
    for (&row, &q) in report.fit.rows.iter().zip(&report.fit.fitted) {
        rolling_score += quantile_loss(panel.y_row(row) - q, fit_config.tau);
    }
    rolling_score /= report.fit.rows.len() as f64;

    let selection = select_hyperparams(
        &panel,
        &HyperGrid::singleton(fit_config.r, fit_config.m, fit_config.ridge),
        fit_config.tau,
    )
    .unwrap();
    assert_eq!(selection.best.score.to_bits(), rolling_score.to_bits());
}

/// Singleton unpenalized grid reproduces the unpenalized pipeline
/// bit-for-bit.
#[test]
fn singleton_zero_ridge_grid_matches_direct_pipeline() {
    let cfg = DgpConfig::new(100, 12, Setting::Two, 53_002);
    let (panel, _) = generate_dgp(&cfg).unwrap();
    let t_len = panel.n_periods();
    let selection =
        select_hyperparams(&panel, &HyperGrid::singleton(1, 3, 0.0), 0.5).unwrap();
    assert_eq!(
        (selection.best.r, selection.best.m, selection.best.ridge),
        (1, 3, 0.0)
    );
    // Recompute the holdout score through the public pipeline.
    let train = panel.window(0..t_len - 1);
    let fit = fit_qcf(
        &train,
        &FitConfig {
            tau: 0.5,
            r: 1,
            m: 3,
            ridge: 0.0,
        },
    )
    .unwrap();
    let (_, fitted) = fit.realize_factors(&panel, t_len - 1).unwrap();
    let rows: Vec<usize> = panel.rows(t_len - 1).collect();
    let mut score = 0.0;
    for (local, &row) in rows.iter().enumerate() {
        score += quantile_loss(panel.y_row(row) - fitted[local], 0.5);
    }
    score /= rows.len() as f64;
    assert_eq!(selection.best.score.to_bits(), score.to_bits());
}

/// Saved artifacts reload to a fit that re-evaluates to identical metrics.
#[test]
fn artifact_roundtrip_preserves_metrics() {
    let dir = std::env::temp_dir().join(format!("qcf-e2e-{}", std::process::id()));
    let cfg = DgpConfig::new(90, 14, Setting::Two, 53_003);
    let (panel, _) = generate_dgp(&cfg).unwrap();
    let fit = fit_qcf(
        &panel,
        &FitConfig {
            tau: 0.05,
            r: 2,
            m: 3,
            ridge: 1e-3,
        },
    )
    .unwrap();
    let fitted = fit.fitted_on(&panel).unwrap();
    let bundle = metric_bundle(&QuantileFit::full(0.05, fitted), &panel).unwrap();

    save_fit(&dir, &fit, None, Some(53_003)).unwrap();
    let (reloaded, standardization) = load_fit(&dir).unwrap();
    assert!(standardization.is_none());
    let refitted = reloaded.fitted_on(&panel).unwrap();
    let rebundle = metric_bundle(&QuantileFit::full(0.05, refitted), &panel).unwrap();
    assert_eq!(bundle.qhe.to_bits(), rebundle.qhe.to_bits());
    assert_eq!(bundle.aqe.to_bits(), rebundle.aqe.to_bits());
    assert_eq!(bundle.r1_total.to_bits(), rebundle.r1_total.to_bits());
    assert_eq!(
        bundle.r1_time_series.to_bits(),
        rebundle.r1_time_series.to_bits()
    );
    assert_eq!(
        bundle.r1_cross_section.to_bits(),
        rebundle.r1_cross_section.to_bits()
    );
    std::fs::remove_dir_all(&dir).ok();
}

/// Determinism: identical inputs give bit-identical estimates.
#[test]
fn fits_are_deterministic() {
    let cfg = DgpConfig::new(80, 10, Setting::Two, 53_004);
    let (panel, _) = generate_dgp(&cfg).unwrap();
    let config = FitConfig {
        tau: 0.5,
        r: 1,
        m: 3,
        ridge: 1e-3,
    };
    let a = fit_qcf(&panel, &config).unwrap();
    let b = fit_qcf(&panel, &config).unwrap();
    for (x, y) in a.thetas.iter().zip(b.thetas.iter()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
    for (x, y) in a.factors.factors.iter().zip(b.factors.factors.iter()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
    for (x, y) in a.b.iter().zip(b.b.iter()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

/// On noiseless sieve-exact data, the refit-based fitted quantiles lose
/// nothing against the step-1 basis fit.
#[test]
fn refit_fit_no_worse_than_step1_on_noiseless_data() {
    use qcf::panel::Observation;
    use qcf::recovery::eval_loading;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(53_010);
    let theta = {
        let raw = [1.5, -0.8, 0.4];
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        raw.iter().map(|v| v / norm).collect::<Vec<_>>()
    };
    let b = [0.3, 1.0, -0.5];
    let mut observations = Vec::new();
    for t in 0..16 {
        let f = rng.random_range(0.5..1.5);
        for i in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            observations.push(Observation {
                time: format!("{t:02}"),
                unit: format!("u{i}"),
                y: f * eval_loading(&b, &theta, &x),
                x,
            });
        }
    }
    let panel = Panel::from_observations(observations).unwrap();
    let tau = 0.5;
    let fit = fit_qcf(
        &panel,
        &FitConfig {
            tau,
            r: 1,
            m: 3,
            ridge: 0.0,
        },
    )
    .unwrap();

    // Step-1 fitted quantiles: ψ̂_t'H_it.
    let mut step1_loss = 0.0;
    let mut refit_loss = 0.0;
    let fitted = fit.fitted_on(&panel).unwrap();
    for t in 0..panel.n_periods() {
        for row in panel.rows(t) {
            let h = fit.basis.eval(panel.x_row(row)).unwrap();
            let psi_fit: f64 = h
                .iter()
                .enumerate()
                .map(|(j, v)| fit.psi[[t, j]] * v)
                .sum();
            step1_loss += quantile_loss(panel.y_row(row) - psi_fit, tau);
            refit_loss += quantile_loss(panel.y_row(row) - fitted[row], tau);
        }
    }
    let n = panel.n_total() as f64;
    assert!(
        refit_loss / n <= step1_loss / n + 1e-6,
        "refit loss {} vs step-1 loss {}",
        refit_loss / n,
        step1_loss / n
    );
}

/// Rolling out-of-sample on a stationary panel scores close to the
/// in-sample level: no regime change means no generalization gap beyond
/// estimation noise.
#[test]
fn rolling_oos_matches_in_sample_on_stationary_panel() {
    use qcf::metrics::aqe;
    use qcf::panel::Observation;
    use qcf::recovery::eval_loading;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(53_011);
    let theta = {
        let raw = [1.0, 0.7];
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        raw.iter().map(|v| v / norm).collect::<Vec<_>>()
    };
    let b = [0.2, 0.9];
    let t_len = 26;
    let mut observations = Vec::new();
    for t in 0..t_len {
        let f = 1.0 + 0.2 * rng.random_range(-1.0..1.0);
        for i in 0..80 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = f * eval_loading(&b, &theta, &x) + 0.2 * rng.random_range(-1.0..1.0);
            observations.push(Observation {
                time: format!("{t:02}"),
                unit: format!("u{i}"),
                y,
                x,
            });
        }
    }
    let panel = Panel::from_observations(observations).unwrap();
    let config = FitConfig {
        tau: 0.5,
        r: 1,
        m: 2,
        ridge: 0.0,
    };
    let rolling = rolling_oos(&panel, 10, &config).unwrap();
    assert!(rolling.skipped.is_empty());
    let oos_aqe = aqe(&rolling.fit, &panel).unwrap();

    let full_fit = fit_qcf(&panel, &config).unwrap();
    let fitted = full_fit.fitted_on(&panel).unwrap();
    let is_aqe = aqe(&QuantileFit::full(0.5, fitted), &panel).unwrap();
    assert!(
        (oos_aqe - is_aqe).abs() <= 0.1 * is_aqe,
        "rolling OOS AQE {oos_aqe} vs in-sample {is_aqe}"
    );
}

/// Simultaneous column-sign flips of `(F̂, Γ̂)` (with the recovery state kept
/// consistent) leave the plug-in covariance unchanged.
#[test]
fn theta_covariance_invariant_to_column_sign_flips() {
    let cfg = DgpConfig::new(120, 24, Setting::Two, 53_006);
    let (panel, _) = generate_dgp(&cfg).unwrap();
    let fit = fit_qcf(
        &panel,
        &FitConfig {
            tau: 0.5,
            r: 2,
            m: 3,
            ridge: 1e-3,
        },
    )
    .unwrap();
    let base = theta_covariance(&panel, &fit, 0, &InferenceConfig::default()).unwrap();

    let mut flipped = fit.clone();
    flipped.factors.factors.column_mut(0).mapv_inplace(|v| -v);
    flipped.factors.gamma.column_mut(0).mapv_inplace(|v| -v);
    flipped.b_recovered[0] = -flipped.b_recovered[0];
    let alt = theta_covariance(&panel, &flipped, 0, &InferenceConfig::default()).unwrap();
    for (a, b) in base.matrix.iter().zip(alt.matrix.iter()) {
        assert!(
            (a - b).abs() <= 1e-12 * (1.0 + a.abs()),
            "covariance changed under sign flip: {a} vs {b}"
        );
    }
}

/// Index estimates approach the DGP truth on a moderately sized panel, and
/// the plug-in covariance brackets the error.
#[test]
fn index_estimate_near_truth_with_sane_covariance() {
    let cfg = DgpConfig::new(300, 60, Setting::Two, 53_005);
    let (panel, truth) = generate_dgp(&cfg).unwrap();
    let fit = fit_qcf(
        &panel,
        &FitConfig {
            tau: 0.5,
            r: 1,
            m: 4,
            ridge: 0.0,
        },
    )
    .unwrap();
    assert!(!fit.flags.is_degenerate());
    let mut err = 0.0f64;
    for j in 0..5 {
        err = err.max((fit.thetas[[j, 0]] - truth.theta1[j]).abs());
    }
    assert!(err < 0.05, "max index error {err}");

    let cov = theta_covariance(&panel, &fit, 0, &InferenceConfig::default()).unwrap();
    for j in 0..5 {
        let se = (cov.matrix[[j, j]] / cov.nt_effective).sqrt();
        assert!(se.is_finite() && se > 0.0 && se < 0.1, "se[{j}] = {se}");
    }
    assert_eq!(cov.excluded_periods, 0);
}

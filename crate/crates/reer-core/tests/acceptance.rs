//! End-to-end acceptance checks for the streaming estimator stack.
//! Each test prints a single `criterion NN PASS/FAIL` line with its
//! measured quantities; run with
//! `cargo test --test acceptance -- --nocapture` to see them all.

mod common;

use std::time::Instant;

use rand::Rng;
use reer_core::sim::stream_rng;
use reer_core::{
    distribution_expectile, generate_batch, irls_fit, loss_gradient, mean_prediction_error,
    run_experiment, sandwich_covariance, true_coefficients, Batch, Coefficients, DcerState,
    ErrorDist, ExpectileLevel, IrlsConfig, Method, PaerState, Scenario, SimCase, SimConfig,
    StateFile, SummaryState, WeightMode,
};

fn tau(v: f64) -> ExpectileLevel {
    ExpectileLevel::new(v).unwrap()
}

fn verdict(ix: u32, pass: bool, detail: &str) {
    println!("criterion {ix:02} {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {ix:02}: {detail}");
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[test]
fn c01_median_stream_reproduces_pooled_least_squares() {
    let started = Instant::now();
    let mut rng = common::rng(101);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let p = rng.random_range(1..=5);
        let n = rng.random_range(30..=3000);
        let (whole, _) = common::random_batch(&mut rng, n, p, 1.0);
        let ols = common::ols_by_elimination(std::slice::from_ref(&whole)).unwrap();
        for _ in 0..10 {
            let sizes = common::random_partition(&mut rng, n, p + 2, 12);
            let parts = common::split_batch(&whole, &sizes);
            let mut state =
                SummaryState::from_first_batch(&parts[0], tau(0.5), &IrlsConfig::default()).unwrap();
            for b in &parts[1..] {
                state = state.update(b).unwrap();
            }
            worst = worst.max(common::max_abs_diff(state.beta(), &ols));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        1,
        worst <= 1e-10 && secs < 10.0,
        &format!("median stream vs pooled least squares: max diff {worst:.3e} (bound 1e-10), {secs:.1} s"),
    );
}

#[test]
fn c02_full_fit_reaches_its_fixed_point_quickly() {
    let mut rng = common::rng(202);
    let cfg = IrlsConfig::default();
    let mut max_grad = 0.0f64;
    let mut max_iters = 0usize;
    for _ in 0..100 {
        let p = rng.random_range(1..=5);
        let n = rng.random_range(30..=800);
        let t = rng.random_range(0.05..0.95);
        let (batch, _) = common::random_batch(&mut rng, n, p, 1.1);
        let fit = irls_fit(std::slice::from_ref(&batch), tau(t), &cfg).unwrap();
        let grad = loss_gradient(&batch, &fit.coefficients).unwrap();
        max_grad = max_grad.max(grad.iter().fold(0.0f64, |m, g| m.max(g.abs())));
        max_iters = max_iters.max(fit.iterations);
    }
    verdict(
        2,
        max_grad <= 1e-7 && max_iters <= 25,
        &format!("fixed point over 100 fits: max gradient {max_grad:.3e} (bound 1e-7), max iterations {max_iters} (bound 25)"),
    );
}

#[test]
fn c03_analytic_gradient_matches_finite_differences() {
    let mut rng = common::rng(303);
    let mut worst_rel = 0.0f64;
    for _ in 0..100 {
        let p = rng.random_range(1..=5);
        let n = rng.random_range(50..=300);
        let t = rng.random_range(0.05..0.95);
        let (batch, beta) = common::random_batch_floored(&mut rng, n, p, 1e-3);
        let coeffs = Coefficients { beta: beta.clone(), tau: tau(t) };
        let analytic = loss_gradient(&batch, &coeffs).unwrap();
        let numeric = common::fd_gradient(std::slice::from_ref(&batch), &beta, t, 1e-6);
        let denom = numeric.iter().fold(0.0f64, |m, g| m.max(g.abs())).max(1e-8);
        worst_rel = worst_rel.max(common::max_abs_diff(&analytic, &numeric) / denom);
    }
    verdict(
        3,
        worst_rel <= 1e-6,
        &format!("gradient vs central differences over 100 points: max relative error {worst_rel:.3e} (bound 1e-6)"),
    );
}

#[test]
fn c04_stream_tracks_the_full_fit_at_inverse_rate() {
    let started = Instant::now();
    let irls = IrlsConfig::default();
    let reps = 100;
    let mut log_n = Vec::new();
    let mut log_d = Vec::new();
    for num_batches in [10usize, 33, 100] {
        let cfg = SimConfig::new(
            SimCase::HomoNormal,
            Scenario::S2,
            tau(0.25),
            300,
            num_batches,
            reps,
            404,
        )
        .unwrap();
        let mut total = 0.0;
        for rep in 0..reps {
            let batches: Vec<Batch> =
                (0..num_batches).map(|k| generate_batch(&cfg, k, rep)).collect();
            let oracle = irls_fit(&batches, cfg.tau, &irls).unwrap().coefficients.beta;
            let mut st = SummaryState::from_first_batch(&batches[0], cfg.tau, &irls).unwrap();
            for b in &batches[1..] {
                st = st.update(b).unwrap();
            }
            total += l2(st.beta(), &oracle);
        }
        log_n.push((cfg.total_n() as f64).ln());
        log_d.push((total / reps as f64).ln());
    }
    let xbar = log_n.iter().sum::<f64>() / 3.0;
    let ybar = log_d.iter().sum::<f64>() / 3.0;
    let slope = log_n
        .iter()
        .zip(&log_d)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum::<f64>()
        / log_n.iter().map(|x| (x - xbar) * (x - xbar)).sum::<f64>();
    let secs = started.elapsed().as_secs_f64();
    verdict(
        4,
        (-1.3..=-0.7).contains(&slope) && secs < 180.0,
        &format!("log distance-to-full-fit vs log stream length: slope {slope:.3} (bounds [-1.3, -0.7]), {secs:.1} s"),
    );
}

#[test]
fn c05_small_batches_degrade_only_the_covariance_weighted_average() {
    let started = Instant::now();
    let methods = [Method::Oracle, Method::Reer, Method::Dcer];
    let run = |n_k: usize| {
        let cfg = SimConfig::new(
            SimCase::HomoT3,
            Scenario::S1,
            tau(0.25),
            n_k,
            30_000 / n_k,
            100,
            505,
        )
        .unwrap();
        run_experiment(&cfg, &methods).unwrap()
    };
    let small = run(200);
    let large = run(3000);
    let mse = |table: &reer_core::MetricsTable, m: Method, j: usize| {
        table.metrics_for(m).unwrap().mse[j]
    };

    let dcer_ratio = mse(&small, Method::Dcer, 1) / mse(&large, Method::Dcer, 1);
    let dcer_intercept_ratio = mse(&small, Method::Dcer, 0) / mse(&large, Method::Dcer, 0);
    let reer_ratio = mse(&small, Method::Reer, 1) / mse(&large, Method::Reer, 1);
    let mut reer_vs_oracle = 0.0f64;
    for table in [&small, &large] {
        for j in [1, 2] {
            reer_vs_oracle = reer_vs_oracle.max(mse(table, Method::Reer, j) / mse(table, Method::Oracle, j));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        5,
        dcer_ratio >= 2.0 && reer_ratio <= 1.3 && reer_vs_oracle <= 1.2 && secs < 600.0,
        &format!(
            "shrinking batches 3000 -> 200: covariance-weighted average slope-mse ratio {dcer_ratio:.2} (>= 2 required; \
             its intercept-mse ratio is {dcer_intercept_ratio:.2}), \
             stream ratio {reer_ratio:.3} (<= 1.3), stream vs full fit {reer_vs_oracle:.3} (<= 1.2), {secs:.1} s"
        ),
    );
}

#[test]
fn c06_stream_slope_errors_land_at_reference_scale() {
    let started = Instant::now();
    let cfg = SimConfig::new(SimCase::HomoNormal, Scenario::S2, tau(0.25), 300, 100, 200, 606).unwrap();
    let table = run_experiment(&cfg, &[Method::Reer]).unwrap();
    let mse = &table.metrics_for(Method::Reer).unwrap().mse;
    let (lo1, hi1) = (0.5 * 0.407e-3, 2.0 * 0.407e-3);
    let (lo2, hi2) = (0.5 * 0.480e-3, 2.0 * 0.480e-3);
    let secs = started.elapsed().as_secs_f64();
    verdict(
        6,
        mse[1] >= lo1 && mse[1] <= hi1 && mse[2] >= lo2 && mse[2] <= hi2 && secs < 300.0,
        &format!(
            "slope mses at 30k rows: {:.3e} in [{lo1:.3e}, {hi1:.3e}], {:.3e} in [{lo2:.3e}, {hi2:.3e}], {secs:.1} s",
            mse[1], mse[2]
        ),
    );
}

#[test]
fn c07_wald_intervals_cover_at_the_nominal_rate() {
    let reps = 500;
    let cfg = SimConfig::new(SimCase::HomoNormal, Scenario::S1, tau(0.25), 5000, 1, reps, 707).unwrap();
    let truth = true_coefficients(&cfg);
    let irls = IrlsConfig::default();
    let z = 1.959963984540054;
    let mut covered = [0usize; 3];
    for rep in 0..reps {
        let batch = generate_batch(&cfg, 0, rep);
        let fit = irls_fit(std::slice::from_ref(&batch), cfg.tau, &irls).unwrap();
        let cov = sandwich_covariance(std::slice::from_ref(&batch), &fit.coefficients).unwrap();
        for j in 0..3 {
            let half = z * cov.get(j, j).sqrt();
            if (fit.coefficients.beta[j] - truth[j]).abs() <= half {
                covered[j] += 1;
            }
        }
    }
    let rates: Vec<f64> = covered.iter().map(|&c| c as f64 / reps as f64).collect();
    let ok = rates.iter().all(|r| (0.92..=0.98).contains(r));
    verdict(
        7,
        ok,
        &format!(
            "95% interval coverage over {reps} runs: {:.3} / {:.3} / {:.3} (each within 0.95 +/- 0.03)",
            rates[0], rates[1], rates[2]
        ),
    );
}

#[test]
fn c08_closed_form_expectiles_match_quadrature() {
    let mut worst = 0.0f64;
    let mut worst_sym = 0.0f64;
    for (dist, oracle_dist) in [
        (ErrorDist::StdNormal, common::quad::Dist::Normal),
        (ErrorDist::StudentT3, common::quad::Dist::T3),
    ] {
        for k in 1..=19 {
            let t = k as f64 * 0.05;
            let fast = distribution_expectile(dist, tau(t));
            let slow = common::quad::expectile_by_bisection(oracle_dist, t);
            worst = worst.max((fast - slow).abs());
            let mirror = distribution_expectile(dist, tau(1.0 - t));
            worst_sym = worst_sym.max((fast + mirror).abs());
        }
        assert_eq!(distribution_expectile(dist, tau(0.5)), 0.0);
    }
    verdict(
        8,
        worst <= 1e-8 && worst_sym <= 1e-9,
        &format!(
            "expectile closed forms vs quadrature on 19-point grid: max diff {worst:.3e} (bound 1e-8), \
             antisymmetry defect {worst_sym:.3e} (bound 1e-9), midpoint exact"
        ),
    );
}

#[test]
fn c09_stream_processing_outpaces_a_full_refit() {
    let cfg = SimConfig::new(SimCase::HomoNormal, Scenario::S2, tau(0.25), 1000, 100, 1, 909).unwrap();
    let batches: Vec<Batch> = (0..cfg.num_batches).map(|k| generate_batch(&cfg, k, 0)).collect();
    let irls = IrlsConfig::default();

    let mut stream_best = f64::INFINITY;
    let mut refit_best = f64::INFINITY;
    for _ in 0..3 {
        let t0 = Instant::now();
        let mut st = SummaryState::from_first_batch(&batches[0], cfg.tau, &irls).unwrap();
        for b in &batches[1..] {
            st = st.update(b).unwrap();
        }
        stream_best = stream_best.min(t0.elapsed().as_secs_f64());
        std::hint::black_box(st.beta()[0]);

        let t1 = Instant::now();
        let fit = irls_fit(&batches, cfg.tau, &irls).unwrap();
        refit_best = refit_best.min(t1.elapsed().as_secs_f64());
        std::hint::black_box(fit.coefficients.beta[0]);
    }
    let ratio = refit_best / stream_best;
    verdict(
        9,
        ratio >= 3.0,
        &format!(
            "100k rows in 100 batches: stream {:.1} ms vs full refit {:.1} ms, speedup {ratio:.1}x (>= 3x required)",
            stream_best * 1e3,
            refit_best * 1e3
        ),
    );
}

#[test]
fn c10_saving_and_resuming_is_bit_identical() {
    let mut rng = common::rng(1010);
    let dir = tempfile::tempdir().unwrap();
    let mut checked = 0usize;
    for stream in 0..10 {
        let p = rng.random_range(1..=4);
        let num_batches = 8;
        let t = rng.random_range(0.1..0.9);
        let batches: Vec<Batch> = (0..num_batches)
            .map(|k| {
                let n = if k == 0 { rng.random_range(p + 2..40) } else { rng.random_range(1..40) };
                common::random_batch(&mut rng, n, p, 0.8).0
            })
            .collect();

        let irls = IrlsConfig::default();
        let mut straight = SummaryState::from_first_batch(&batches[0], tau(t), &irls).unwrap();
        for b in &batches[1..] {
            straight = straight.update(b).unwrap();
        }
        let reference = reer_core::state_to_string(&StateFile::Renewable(straight));

        for cut in 0..5 {
            let split = rng.random_range(1..num_batches);
            let mut st = SummaryState::from_first_batch(&batches[0], tau(t), &irls).unwrap();
            for b in &batches[1..split] {
                st = st.update(b).unwrap();
            }
            let path = dir.path().join(format!("s{stream}c{cut}.json"));
            reer_core::save_state(&StateFile::Renewable(st), &path).unwrap();
            let mut resumed = match reer_core::load_state(&path).unwrap() {
                StateFile::Renewable(s) => s,
                other => panic!("wrong kind {}", other.kind()),
            };
            for b in &batches[split..] {
                resumed = resumed.update(b).unwrap();
            }
            assert_eq!(reer_core::state_to_string(&StateFile::Renewable(resumed)), reference);
            checked += 1;
        }
    }
    verdict(10, checked == 50, &format!("{checked}/50 save/resume splits ended bit-identical to straight-through runs"));
}

#[test]
fn c11_one_shot_aggregation_ignores_batch_order() {
    let mut rng = common::rng(1111);
    let irls = IrlsConfig::default();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let parts: Vec<Batch> = (0..8)
            .map(|_| {
                let n = rng.random_range(40..160);
                common::random_batch(&mut rng, n, 3, 1.0).0
            })
            .collect();
        let mut order: Vec<usize> = (0..parts.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }

        let mut paer_a = PaerState::new(3, tau(0.3), WeightMode::FinalFraction).unwrap();
        let mut paer_b = paer_a.clone();
        let mut dcer_a = DcerState::new(3, tau(0.3)).unwrap();
        let mut dcer_b = dcer_a.clone();
        for (i, b) in parts.iter().enumerate() {
            paer_a = paer_a.update(b, &irls).unwrap();
            dcer_a = dcer_a.update(b, &irls).unwrap();
            let shuffled = &parts[order[i]];
            paer_b = paer_b.update(shuffled, &irls).unwrap();
            dcer_b = dcer_b.update(shuffled, &irls).unwrap();
        }
        worst = worst.max(common::max_abs_diff(
            &paer_a.finalize().unwrap().beta,
            &paer_b.finalize().unwrap().beta,
        ));
        worst = worst.max(common::max_abs_diff(
            &dcer_a.finalize().unwrap().beta,
            &dcer_b.finalize().unwrap().beta,
        ));
    }
    verdict(
        11,
        worst <= 1e-12,
        &format!("batch permutation moved one-shot estimates by at most {worst:.3e} (bound 1e-12) on 20 streams"),
    );
}

#[test]
fn c12_holdout_prediction_error_matches_the_full_fit() {
    let irls = IrlsConfig::default();
    let mut worst_rel = 0.0f64;
    let mut details = Vec::new();
    for t in [0.2, 0.5, 0.8] {
        let cfg = SimConfig::new(SimCase::HeteroNormal, Scenario::S2, tau(t), 500, 40, 1, 1212).unwrap();
        let holdout_cfg = SimConfig { n_k: 5000, ..cfg.clone() };
        let holdout = generate_batch(&holdout_cfg, 0, 31_337);

        let batches: Vec<Batch> = (0..cfg.num_batches).map(|k| generate_batch(&cfg, k, 0)).collect();
        let oracle = irls_fit(&batches, cfg.tau, &irls).unwrap().coefficients;
        let mut st = SummaryState::from_first_batch(&batches[0], cfg.tau, &irls).unwrap();
        for b in &batches[1..] {
            st = st.update(b).unwrap();
        }
        let mpe_stream = mean_prediction_error(std::slice::from_ref(&holdout), &st.estimate()).unwrap();
        let mpe_oracle = mean_prediction_error(std::slice::from_ref(&holdout), &oracle).unwrap();
        worst_rel = worst_rel.max((mpe_stream - mpe_oracle).abs() / mpe_oracle);
        details.push(format!("tau {t}: {mpe_stream:.6} vs {mpe_oracle:.6}"));
    }
    verdict(
        12,
        worst_rel <= 0.02,
        &format!("holdout mean prediction error, stream vs full fit: {} (max relative gap {worst_rel:.2e}, bound 0.02)", details.join("; ")),
    );
}

// the RNG helper must stay addressable for stream replay tooling
#[test]
fn stream_rng_is_reachable_from_the_public_api() {
    let mut a = stream_rng(1, 2, 3);
    let mut b = stream_rng(1, 2, 3);
    assert_eq!(a.random::<u64>(), b.random::<u64>());
}

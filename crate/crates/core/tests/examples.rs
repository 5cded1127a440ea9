//! Worked examples and brute-force oracles for the optimizer, decision
//! engine, simulator, fiber planner and table fixture.

mod common;

use std::sync::Arc;

use common::{exhaustive_threshold, DyadicBinomial};
use wdmcqf_core::baselines::{classical_limit, BestKnown, SqrtLaw};
use wdmcqf_core::binom::Auto;
use wdmcqf_core::decision::{error_at_threshold, optimal_threshold, optimal_threshold_with, Crossing, Exhaustive};
use wdmcqf_core::fiber::{
    arrival_separation, recombination_offset, validate_plan, ChannelGrid, FiberSegment, PlanOptions, TimingPlan,
};
use wdmcqf_core::montecarlo::{
    pulse_click_probability, GeometricSkip, PulseByPulse, Scenario, Simulation, DEFAULT_MAX_PULSES,
};
use wdmcqf_core::optimizer::{min_mu, sweep, GridPoint};
use wdmcqf_core::protocol::{ChannelModel, ProtocolConfig, ProtocolParams};
use wdmcqf_core::table1;
use wdmcqf_core::Numerics;

/// `Binomial(m, p)` masses by the multiplicative recurrence from the mode.
fn pmf(m: u64, p: f64) -> Vec<f64> {
    let mut out = vec![0.0; m as usize + 1];
    if p == 0.0 {
        out[0] = 1.0;
        return out;
    }
    if p == 1.0 {
        out[m as usize] = 1.0;
        return out;
    }
    let odds = p / (1.0 - p);
    let mut ln = vec![0.0; m as usize + 1];
    ln[0] = m as f64 * (1.0 - p).ln();
    for j in 0..m as usize {
        ln[j + 1] = ln[j] + ((m as usize - j) as f64 / (j + 1) as f64 * odds).ln();
    }
    for (o, l) in out.iter_mut().zip(&ln) {
        *o = l.exp();
    }
    out
}

/// Brute-force minimum over thresholds of `max(P(E >= t), P(D < t))`.
fn brute_error(m: u64, pe: f64, pd: f64) -> (u64, f64) {
    let a = pmf(m, pe);
    let b = pmf(m, pd);
    // suffix sums of the equal law, prefix sums of the different one
    let mut up = vec![0.0; a.len() + 1];
    for t in (0..a.len()).rev() {
        up[t] = up[t + 1] + a[t];
    }
    let mut best = (0, f64::INFINITY);
    let mut down = 0.0;
    for t in 0..=m as usize {
        if up[t].max(down) < best.1 {
            best = (t as u64, up[t].max(down));
        }
        down += b[t];
    }
    best
}

fn params(n: f64, k: u32, nu: f64, p_dark: f64, epsilon: f64, channel: ChannelModel) -> ProtocolParams {
    let cfg = ProtocolConfig {
        n,
        k,
        nu,
        p_dark,
        epsilon,
        ..ProtocolConfig::default()
    };
    ProtocolParams::new(&cfg, channel).unwrap()
}

fn sweep_base() -> ProtocolParams {
    params(1e6, 1, 0.97, 1e-6, 1e-5, ChannelModel::new(0.0, 0.2, 0.2).unwrap())
}

#[test]
fn error_at_threshold_matches_direct_summation() {
    let o = error_at_threshold(100, 0.01, 0.2, 8).unwrap();
    let a = pmf(100, 0.01);
    let b = pmf(100, 0.2);
    let up: f64 = a[8..].iter().sum();
    let down: f64 = b[..8].iter().sum();
    assert!((o.p_err_equal - up).abs() <= 1e-12 * up, "{} vs {up}", o.p_err_equal);
    assert!(
        (o.p_err_diff - down).abs() <= 1e-12 * down,
        "{} vs {down}",
        o.p_err_diff
    );
}

#[test]
fn optimal_threshold_small_case() {
    let o = optimal_threshold(10, 0.01, 0.5).unwrap();
    let (t, e) = brute_error(10, 0.01, 0.5);
    assert_eq!(o.c1_threshold, t);
    assert!((o.p_error - e).abs() <= 1e-12 * e);

    let perfect = optimal_threshold(10, 0.0, 1.0).unwrap();
    assert_eq!(perfect.c1_threshold, 1);
    assert_eq!(perfect.p_error, 0.0);
}

#[test]
fn row_one_rates_give_a_separating_threshold() {
    // published threshold 15; the photon numbers behind it are not fully stated
    let o = optimal_threshold(1_000_000, 2.7e-6, 3.43e-5).unwrap();
    assert!(o.c1_threshold.abs_diff(15) <= 2, "t = {}", o.c1_threshold);
    assert!(2.7 < o.c1_threshold as f64 && (o.c1_threshold as f64) < 34.3);
    assert!(o.p_error < 1e-4);
}

#[test]
fn underflowed_optimum_is_still_resolved() {
    // both error probabilities are far below the smallest double here
    let equal = DyadicBinomial {
        trials: 7263,
        a: 2,
        e: 16,
    };
    let diff = DyadicBinomial {
        trials: 7263,
        a: 13_150,
        e: 16,
    };
    let (t, _) = exhaustive_threshold(&equal, &diff);
    for search in [&Exhaustive as &dyn wdmcqf_core::decision::ThresholdSearch, &Crossing] {
        let o = optimal_threshold_with(7263, equal.p(), diff.p(), search, &Auto).unwrap();
        assert_eq!(o.c1_threshold, t, "{}", search.name());
        assert_eq!(o.p_error, 0.0);
    }
}

#[test]
fn error_vanishes_along_doubling_sequence() {
    let mut prev = 1.0;
    let mut m = 100;
    for _ in 0..10 {
        let e = optimal_threshold(m, 1e-3, 3e-3).unwrap().p_error;
        assert!(e <= prev, "M={m}: {e} > {prev}");
        prev = e;
        m *= 2;
    }
    assert!(prev < 1e-6, "{prev}");
}

#[test]
fn min_mu_matches_brute_force_grid() {
    // n = 240 at rate 0.24 with one channel: m = M = 1000
    let p = params(240.0, 1, 0.97, 1e-6, 1e-5, ChannelModel::new(0.0, 0.2, 0.2).unwrap());
    let g = p.geometry().unwrap();
    assert_eq!(g.pulses, 1000);
    let got = min_mu(&p, &g, &Numerics::default()).unwrap();
    assert!(got.feasible);

    let eval = |mu: f64| {
        let s = -(-2.0 * mu * 0.2 / 1000.0f64).exp_m1();
        let pe = 0.03 * s + 1e-6;
        let pd = (0.22 * 0.97 + 0.78 * 0.03) * s + 1e-6;
        brute_error(1000, pe, pd)
    };
    let mut mu = 1e-3;
    let oracle = loop {
        if eval(mu).1 <= 1e-5 {
            break mu;
        }
        mu *= 1.0005;
        assert!(mu < 1e6);
    };
    let (t, e) = eval(got.mu_star);
    assert!(e <= 1e-5);
    assert_eq!(t, got.decision.c1_threshold);
    assert!(
        (got.mu_star - oracle).abs() <= 2e-3 * oracle,
        "mu* {} vs oracle {oracle}",
        got.mu_star
    );
}

#[test]
fn perfect_channel_has_closed_form_optimum() {
    // nu = 1, no dark counts: only C_D = 0 errs, so t = 1 and (1 - delta s)^M = eps
    let eps = 1e-5;
    let p = params(24_000.0, 4, 1.0, 0.0, eps, ChannelModel::new(0.0, 0.2, 0.5).unwrap());
    let g = p.geometry().unwrap();
    let got = min_mu(&p, &g, &Numerics::default()).unwrap();
    let m = g.pulses as f64;
    let s = -(eps.ln() / m).exp_m1() / 0.22;
    let mu = -(-s).ln_1p() * m / (2.0 * 0.5);
    assert_eq!(got.decision.c1_threshold, 1);
    assert!(got.mu_star >= mu * (1.0 - 1e-9), "{} vs {mu}", got.mu_star);
    assert!(got.mu_star <= mu * (1.0 + 2e-3), "{} vs {mu}", got.mu_star);
}

#[test]
fn epsilon_one_needs_no_photons() {
    let p = params(1e6, 6, 0.97, 1e-6, 1.0, ChannelModel::new(20.0, 0.2, 0.2).unwrap());
    let g = p.geometry().unwrap();
    let r = min_mu(&p, &g, &Numerics::default()).unwrap();
    assert_eq!(r.mu_star, 0.0);
    assert!(r.feasible && r.decision.p_error <= 1.0);
}

#[test]
fn typical_point_meets_epsilon() {
    let p = params(1e8, 6, 0.97, 1e-6, 1e-5, ChannelModel::new(20.0, 0.2, 0.2).unwrap());
    let g = p.geometry().unwrap();
    let r = min_mu(&p, &g, &Numerics::default()).unwrap();
    assert!(r.feasible);
    assert!(r.decision.p_error <= 1e-5, "{}", r.decision.p_error);
}

#[test]
fn dark_free_limit_removes_k_dependence() {
    let base = params(1e6, 1, 1.0, 0.0, 1e-5, ChannelModel::new(0.0, 0.2, 1.0).unwrap());
    let grid: Vec<GridPoint> = [1u32, 6, 100]
        .iter()
        .map(|&k| GridPoint {
            n: 100_000_000,
            k,
            distance_km: 0.0,
        })
        .collect();
    let rows = sweep(&grid, &base, &Numerics::default(), &BestKnown).unwrap();
    for r in &rows[1..] {
        assert!(
            (r.mu_star - rows[0].mu_star).abs() <= 3e-3 * rows[0].mu_star,
            "k={}: {} vs {}",
            r.k,
            r.mu_star,
            rows[0].mu_star
        );
        assert!((r.q_bits - rows[0].q_bits).abs() <= 3e-3 * rows[0].q_bits);
    }
}

#[test]
fn more_channels_need_fewer_photons_at_large_pulse_counts() {
    let ns = [1e8, 1e10, 1e12, 1e14, 1e16, 1e18].map(|n: f64| n as u64);
    let mut grid = Vec::new();
    for &n in &ns {
        for d in [0.0, 20.0, 40.0] {
            for k in [1u32, 2, 100, 1000] {
                grid.push(GridPoint { n, k, distance_km: d });
            }
        }
    }
    let rows = sweep(&grid, &sweep_base(), &Numerics::default(), &BestKnown).unwrap();
    for w in rows.chunks(4) {
        for pair in w.windows(2) {
            assert!(
                pair[1].mu_star <= pair[0].mu_star * (1.0 + 2e-3),
                "n={} d={}: mu*(k={}) = {} > mu*(k={}) = {}",
                pair[0].n,
                pair[0].distance_km,
                pair[1].k,
                pair[1].mu_star,
                pair[0].k,
                pair[0].mu_star
            );
        }
    }
    // communication grows with distance
    for (i, &n) in ns.iter().enumerate() {
        for k in 0..4 {
            let q: Vec<f64> = (0..3).map(|d| rows[i * 12 + d * 4 + k].q_bits).collect();
            assert!(
                q[0] <= q[1] * (1.0 + 2e-3) && q[1] <= q[2] * (1.0 + 2e-3),
                "n={n}: {q:?}"
            );
        }
    }
}

#[test]
fn sweep_is_deterministic_and_ordered() {
    let grid = vec![
        GridPoint {
            n: 1_000_000,
            k: 6,
            distance_km: 20.0,
        },
        GridPoint {
            n: 100_000,
            k: 2,
            distance_km: 0.0,
        },
        GridPoint {
            n: 1_000_000,
            k: 6,
            distance_km: 20.0,
        },
    ];
    let a = sweep(&grid, &sweep_base(), &Numerics::default(), &BestKnown).unwrap();
    let b = sweep(&grid, &sweep_base(), &Numerics::default(), &BestKnown).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 3);
    assert_eq!((a[1].n, a[1].k), (100_000, 2));
    assert_eq!(a[0], a[2]);
    assert!(sweep(&[], &sweep_base(), &Numerics::default(), &BestKnown)
        .unwrap()
        .is_empty());
}

#[test]
fn single_channel_pulse_model_expands_to_different_input_probability() {
    // k = 1: a differing bit clicks with 1 - exp(-2 nu x), a matching one with 1 - exp(-2 (1 - nu) x)
    let p = params(24_000.0, 1, 0.97, 1e-6, 1e-5, ChannelModel::new(0.0, 0.2, 0.2).unwrap())
        .with_mu(5.0)
        .unwrap();
    let g = p.geometry().unwrap();
    let (d_diff, _) = pulse_click_probability(1, 1, &p, &g).unwrap();
    let (d_same, _) = pulse_click_probability(0, 1, &p, &g).unwrap();
    let avg = 0.22 * d_diff + 0.78 * d_same;
    let x = 2.0 * 5.0 * 0.2 / g.m as f64;
    let first_order = (0.22 * 0.97 + 0.78 * 0.03) * x + 1e-6;
    assert!((avg - first_order).abs() <= 2.0 * x * x, "{avg} vs {first_order}");
}

#[test]
fn single_trial_summary_echoes_the_record() {
    let p = params(24_000.0, 4, 0.97, 1e-4, 1e-5, ChannelModel::new(0.0, 0.2, 0.2).unwrap())
        .with_mu(50.0)
        .unwrap();
    let numerics = Numerics::default();
    let sim = Simulation::new(p, 3, Arc::new(PulseByPulse), DEFAULT_MAX_PULSES).unwrap();
    let records = sim.run_trials(Scenario::WorstCaseDifferent, 1, 9).unwrap();
    let s = sim
        .summarize(Scenario::WorstCaseDifferent, &records, 9, &numerics)
        .unwrap();
    assert_eq!(s.trials, 1);
    assert_eq!(s.mean_c1, records[0].c1 as f64);
    assert_eq!(s.mean_c0, records[0].c0 as f64);
    assert_eq!(
        s.errors,
        u64::from(records[0].verdict == wdmcqf_core::decision::Verdict::Equal)
    );
}

#[test]
fn perfect_equal_inputs_never_err() {
    let p = params(24_000.0, 4, 1.0, 0.0, 1e-5, ChannelModel::new(0.0, 0.2, 0.2).unwrap())
        .with_mu(500.0)
        .unwrap();
    let sim = Simulation::new(p, 1, Arc::new(GeometricSkip), DEFAULT_MAX_PULSES).unwrap();
    let s = sim
        .run_experiment(Scenario::Equal, 200, 3, &Numerics::default())
        .unwrap();
    assert_eq!(s.errors, 0);
    assert_eq!(s.mean_c1, 0.0);
}

#[test]
fn samplers_agree_in_distribution() {
    let p = params(24_000.0, 6, 0.97, 1e-4, 1e-5, ChannelModel::new(0.0, 0.2, 0.2).unwrap())
        .with_mu(40.0)
        .unwrap();
    let numerics = Numerics::default();
    let mean = |sampler: Arc<dyn wdmcqf_core::montecarlo::ClickSampler>| {
        let sim = Simulation::new(p, 10, sampler, DEFAULT_MAX_PULSES).unwrap();
        sim.run_experiment(Scenario::WorstCaseDifferent, 2000, 5, &numerics)
            .unwrap()
    };
    let a = mean(Arc::new(PulseByPulse));
    let b = mean(Arc::new(GeometricSkip));
    let se = ((a.var_c1 + b.var_c1) / 2000.0).sqrt();
    assert!(
        (a.mean_c1 - b.mean_c1).abs() <= 4.0 * se,
        "{} vs {} (se {se})",
        a.mean_c1,
        b.mean_c1
    );
}

#[test]
fn fiber_worked_examples() {
    let smf = FiberSegment::new(20.0, 17.0).unwrap();
    let no_dcf = FiberSegment::new(0.0, -99.0).unwrap();
    assert!((arrival_separation(&smf, &no_dcf, 2.4) - 816.0).abs() < 1e-9);
    let dcf = FiberSegment::new(6.9, -99.0).unwrap();
    assert_eq!(arrival_separation(&smf, &dcf, 0.0), 0.0);
    // exact compensation of both station fibers
    let exact = FiberSegment::new(17.0 * 40.0 / 99.0, -99.0).unwrap();
    assert!(recombination_offset(&smf, &smf, &exact, 2.4).abs() < 1e-9);
}

#[test]
fn nominal_and_degenerate_plans() {
    let smf = FiberSegment::new(20.0, 17.0).unwrap();
    let dcf = FiberSegment::new(6.9, -99.0).unwrap();
    let plan = TimingPlan::new(50e6, 800.0).unwrap();
    let grid = ChannelGrid::new(6, 2.4, 1546.0).unwrap();
    let r = validate_plan(&smf, &smf, &dcf, &grid, &plan, &PlanOptions::default()).unwrap();
    assert!(r.passed, "{:?}", r.failures);
    assert!(r.recombination_offset_ps < 50.0);

    let wide = ChannelGrid::new(13, 2.4, 1546.0).unwrap();
    let r = validate_plan(&smf, &smf, &dcf, &wide, &plan, &PlanOptions::default()).unwrap();
    assert!(!r.passed);

    let zero = FiberSegment::new(0.0, 17.0).unwrap();
    let zero_dcf = FiberSegment::new(0.0, -99.0).unwrap();
    let single = ChannelGrid::new(1, 2.4, 1550.0).unwrap();
    let r = validate_plan(&zero, &zero, &zero_dcf, &single, &plan, &PlanOptions::default()).unwrap();
    assert!(r.passed, "{:?}", r.failures);
    assert_eq!(
        (r.separation_alice_ps, r.separation_bob_ps, r.recombination_offset_ps),
        (0.0, 0.0, 0.0)
    );
}

#[test]
fn classical_curves() {
    let law = SqrtLaw::new(1.0, "test").unwrap();
    assert_eq!(classical_limit(1_440_000, 1e-5, Some(&BestKnown)).unwrap(), 38_400.0);
    let small = classical_limit(1 << 20, 1e-5, Some(&law)).unwrap();
    let big = classical_limit(1 << 22, 1e-5, Some(&law)).unwrap();
    assert!((big / small - 2.0).abs() < 1e-12);
    assert!(classical_limit(10_000_000_000, 1e-5, Some(&law)).unwrap() < 32.0 * 1e5);
    assert!(classical_limit(10, 1e-5, None).is_err());
}

#[test]
fn table_rows_one_and_seven() {
    let checks = table1::check_all(&table1::bundled()).unwrap();
    assert!(checks[0].q_rel_dev.abs() <= 0.01, "{}", checks[0].q_rel_dev);
    assert!(
        (checks[6].gamma_c_recomputed - 2.5).abs() <= 0.1,
        "{}",
        checks[6].gamma_c_recomputed
    );
}

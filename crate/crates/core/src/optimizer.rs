//! Minimum fingerprint photon number under the error constraint, and sweeps
//! over (n, k, distance).

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{classical_best_known, ClassicalCurve};
use crate::decision::{error_at_threshold_with, optimal_threshold_with, DecisionOutcome};
use crate::error::{ensure, Result};
use crate::protocol::{
    click_probabilities, communication_cost_single, ClickProbabilities, CodeGeometry, ProtocolParams,
};
use crate::Numerics;

/// Smallest photon number on the search grid.
pub const MU_FLOOR: f64 = 1e-3;
/// Ratio between consecutive grid points.
pub const GRID_RATIO: f64 = 1.05;
/// Relative width at which bisection stops.
pub const BISECTION_TOL: f64 = 1e-3;
/// Largest admissible per-pulse signal exponent `2 mu eta / M`.
pub const MAX_PULSE_EXPONENT: f64 = 5.0;
/// Thresholds below the bisection result that are probed for a feasible
/// window the grid stepped over.
pub const REFINE_THRESHOLDS: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimizationResult {
    /// Minimal per-party mean photon number; the cap when infeasible.
    pub mu_star: f64,
    pub decision: DecisionOutcome,
    pub probabilities: ClickProbabilities,
    /// Communication of both parties.
    pub q_bits: f64,
    pub q_bits_per_party: f64,
    pub feasible: bool,
    /// Number of threshold optimizations performed.
    pub evaluations: u32,
}

/// Largest photon number the optimizer will consider.
pub fn mu_cap(p: &ProtocolParams, g: &CodeGeometry) -> f64 {
    let by_modes = (g.m as f64) * p.k() as f64;
    let by_exponent = MAX_PULSE_EXPONENT * g.pulses as f64 / (2.0 * p.eta());
    // the cost model needs at most one photon per mode
    by_modes.min(by_exponent).min(g.m as f64)
}

/// Threshold decision at photon number `mu`.
pub fn evaluate_point(
    p: &ProtocolParams,
    g: &CodeGeometry,
    mu: f64,
    numerics: &Numerics,
) -> Result<(ClickProbabilities, DecisionOutcome)> {
    let probs = click_probabilities(p.nu(), p.delta(), p.p_dark(), mu, p.eta(), g.pulses);
    let decision = optimal_threshold_with(
        g.pulses,
        probs.equal,
        probs.diff,
        numerics.search.as_ref(),
        numerics.tails.as_ref(),
    )?;
    Ok((probs, decision))
}

/// Smallest `mu` with `P_error(mu) <= epsilon`. The photon number stored in
/// `p` is ignored.
pub fn min_mu(p: &ProtocolParams, g: &CodeGeometry, numerics: &Numerics) -> Result<OptimizationResult> {
    ensure(g.pulses >= 1, "pulses", || "must be >= 1".into())?;
    let eps = p.epsilon();
    let mut evaluations = 0u32;
    let mut eval = |mu: f64| -> Result<(ClickProbabilities, DecisionOutcome)> {
        evaluations += 1;
        evaluate_point(p, g, mu, numerics)
    };
    let finish = |mu: f64, probs, decision, feasible, evaluations| -> Result<OptimizationResult> {
        let single = communication_cost_single(mu, g.m)?;
        Ok(OptimizationResult {
            mu_star: mu,
            decision,
            probabilities: probs,
            q_bits: 2.0 * single,
            q_bits_per_party: single,
            feasible,
            evaluations,
        })
    };

    let (probs, decision) = eval(0.0)?;
    if decision.p_error <= eps {
        return finish(0.0, probs, decision, true, evaluations);
    }
    let cap = mu_cap(p, g);
    let mut lo = 0.0;
    let mut hit = None;
    let mut mu = MU_FLOOR.min(cap);
    loop {
        let (probs, decision) = eval(mu)?;
        if decision.p_error <= eps {
            hit = Some((mu, probs, decision));
            break;
        }
        if mu >= cap {
            break;
        }
        lo = mu;
        mu = (mu * GRID_RATIO).min(cap);
    }
    let Some((mut hi, mut probs, mut decision)) = hit else {
        let (probs, decision) = eval(cap)?;
        return finish(cap, probs, decision, false, evaluations);
    };
    while hi - lo > BISECTION_TOL * hi {
        let mid = 0.5 * (lo + hi);
        let (pr, d) = eval(mid)?;
        if d.p_error <= eps {
            (hi, probs, decision) = (mid, pr, d);
        } else {
            lo = mid;
        }
    }
    let (window, probes) = lowest_window(p, g, numerics, hi, decision.c1_threshold)?;
    if let Some(mu) = window.filter(|&mu| mu < hi) {
        let (pr, d) = eval(mu)?;
        if d.p_error <= eps {
            (hi, probs, decision) = (mu, pr, d);
        }
    }
    finish(hi, probs, decision, true, evaluations + probes)
}

/// P_error is monotone in `mu` only piecewise. At a fixed threshold `t` the
/// feasible photon numbers form an interval whose left end `L_t` grows with
/// `t`, so the optimum is the smallest `L_t` whose interval is non-empty.
/// Probes thresholds up to `t_hi` (the one found at `mu_hi`) and returns that
/// `L_t` with the number of tail evaluations spent.
fn lowest_window(
    p: &ProtocolParams,
    g: &CodeGeometry,
    numerics: &Numerics,
    mu_hi: f64,
    t_hi: u64,
) -> Result<(Option<f64>, u32)> {
    let eps = p.epsilon();
    let tails = numerics.tails.as_ref();
    let mut probes = 0u32;
    let mut at = |mu: f64, t: u64| -> Result<DecisionOutcome> {
        probes += 1;
        let pr = click_probabilities(p.nu(), p.delta(), p.p_dark(), mu, p.eta(), g.pulses);
        error_at_threshold_with(g.pulses, pr.equal, pr.diff, t, tails)
    };
    for t in t_hi.saturating_sub(REFINE_THRESHOLDS).max(1)..=t_hi {
        // left end: P(C_D < t) falls with mu
        let (mut lo, mut hi) = (0.0, mu_hi);
        if at(hi, t)?.p_err_diff > eps {
            continue;
        }
        if at(lo, t)?.p_err_diff <= eps {
            hi = lo;
        }
        while hi - lo > 1e-9 * hi {
            let mid = 0.5 * (lo + hi);
            if at(mid, t)?.p_err_diff <= eps {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        if at(hi, t)?.p_err_equal <= eps {
            return Ok((Some(hi), probes));
        }
    }
    Ok((None, probes))
}

/// One sweep coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub n: u64,
    pub k: u32,
    pub distance_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: u64,
    pub k: u32,
    pub distance_km: f64,
    pub pulses: u64,
    pub mu_star: f64,
    pub c1_threshold: u64,
    pub p_error: f64,
    /// Both parties.
    pub q_bits: f64,
    pub q_bits_per_party: f64,
    pub classical_best_known: f64,
    pub classical_limit: f64,
    /// Optimum of the single-channel system at the same n and distance.
    pub q_cqf_k1: f64,
    pub gamma_c: f64,
    pub gamma_q: f64,
    pub feasible: bool,
    pub feasible_k1: bool,
    pub regime: String,
}

type Key = (u64, u32, u64);

fn key(n: u64, k: u32, distance_km: f64) -> Key {
    (n, k, distance_km.to_bits())
}

fn solve(base: &ProtocolParams, point: &GridPoint, numerics: &Numerics) -> Result<(CodeGeometry, OptimizationResult)> {
    let channel = base.channel().with_distance(point.distance_km)?;
    let p = base.with_n(point.n)?.with_k(point.k)?.with_channel(channel);
    let g = p.geometry()?;
    Ok((g, min_mu(&p, &g, numerics)?))
}

/// Optimizes every grid point plus the matching single-channel baseline.
/// Points run in parallel; rows come back in grid order.
pub fn sweep(
    grid: &[GridPoint],
    base: &ProtocolParams,
    numerics: &Numerics,
    curve: &dyn ClassicalCurve,
) -> Result<Vec<SweepRow>> {
    let mut unique: Vec<GridPoint> = Vec::new();
    let mut seen = HashMap::new();
    for point in grid {
        for k in [point.k, 1] {
            let candidate = GridPoint { k, ..*point };
            let id = key(candidate.n, candidate.k, candidate.distance_km);
            if let Entry::Vacant(slot) = seen.entry(id) {
                slot.insert(unique.len());
                unique.push(candidate);
            }
        }
    }
    let solved: Vec<(CodeGeometry, OptimizationResult)> = unique
        .par_iter()
        .map(|pt| solve(base, pt, numerics))
        .collect::<Result<_>>()?;

    grid.iter()
        .map(|pt| {
            let (g, r) = &solved[seen[&key(pt.n, pt.k, pt.distance_km)]];
            let (_, base_k1) = &solved[seen[&key(pt.n, 1, pt.distance_km)]];
            let best = classical_best_known(pt.n);
            let ratio = |num: f64| if r.q_bits > 0.0 { num / r.q_bits } else { f64::INFINITY };
            Ok(SweepRow {
                n: pt.n,
                k: pt.k,
                distance_km: pt.distance_km,
                pulses: g.pulses,
                mu_star: r.mu_star,
                c1_threshold: r.decision.c1_threshold,
                p_error: r.decision.p_error,
                q_bits: r.q_bits,
                q_bits_per_party: r.q_bits_per_party,
                classical_best_known: best,
                classical_limit: curve.evaluate(pt.n, base.epsilon()),
                q_cqf_k1: base_k1.q_bits,
                gamma_c: ratio(best),
                gamma_q: ratio(base_k1.q_bits),
                feasible: r.feasible,
                feasible_k1: base_k1.feasible,
                regime: r.decision.regime_equal.to_string(),
            })
        })
        .collect()
}

/// `count` points spaced evenly in log10 between `lo` and `hi`, rounded to integers.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Result<Vec<u64>> {
    ensure(lo >= 1.0 && hi >= lo, "n_range", || {
        format!("need 1 <= lo <= hi, got [{lo}, {hi}]")
    })?;
    ensure(hi <= 1e19, "n_range", || format!("upper end {hi} overflows"))?;
    if count == 0 {
        return Ok(Vec::new());
    }
    if count == 1 {
        return Ok(vec![lo.round() as u64]);
    }
    let (a, b) = (lo.log10(), hi.log10());
    Ok((0..count)
        .map(|i| {
            let e = a + (b - a) * i as f64 / (count - 1) as f64;
            10f64.powf(e).round() as u64
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{ChannelModel, ProtocolConfig};

    fn params(n: f64, k: u32, epsilon: f64) -> ProtocolParams {
        let cfg = ProtocolConfig {
            n,
            k,
            epsilon,
            ..ProtocolConfig::default()
        };
        ProtocolParams::new(&cfg, ChannelModel::new(0.0, 0.2, 0.2).unwrap()).unwrap()
    }

    #[test]
    fn epsilon_one_needs_no_photons() {
        let p = params(1e4, 1, 1.0);
        let r = min_mu(&p, &p.geometry().unwrap(), &Numerics::default()).unwrap();
        assert!(r.feasible);
        assert_eq!((r.mu_star, r.q_bits), (0.0, 0.0));
    }

    #[test]
    fn optimum_is_feasible_and_tight() {
        let p = params(1e5, 4, 1e-5);
        let g = p.geometry().unwrap();
        let numerics = Numerics::default();
        let r = min_mu(&p, &g, &numerics).unwrap();
        assert!(r.feasible && r.decision.p_error <= 1e-5);
        let (_, below) = evaluate_point(&p, &g, r.mu_star * (1.0 - 2.0 * BISECTION_TOL), &numerics).unwrap();
        assert!(below.p_error > 1e-5);
    }

    #[test]
    fn hopeless_visibility_is_infeasible() {
        // visibility barely above one half: the signal cannot beat dark counts
        let p = params(1e3, 1, 1e-5).with_nu(0.5001).unwrap();
        let r = min_mu(&p, &p.geometry().unwrap(), &Numerics::default()).unwrap();
        assert!(!r.feasible);
        assert_eq!(r.mu_star, mu_cap(&p, &p.geometry().unwrap()));
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_spaced(1e5, 1e18, 20).unwrap();
        assert_eq!(g.len(), 20);
        assert_eq!(g[0], 100_000);
        assert_eq!(g[19], 1_000_000_000_000_000_000);
        assert!(log_spaced(1e5, 1e18, 0).unwrap().is_empty());
    }
}

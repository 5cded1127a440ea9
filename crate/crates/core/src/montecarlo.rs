//! Seeded event-level simulation of a protocol run.
//!
//! Codewords are modelled by their difference mask only: equal inputs give an
//! empty mask, worst-case different inputs give `ceil(delta m)` distinct random
//! positions. Codeword bit `i` rides in composite pulse `i / k` on channel
//! `i % k`. Each pulse clicks D1 (and independently D0) with a probability
//! that depends on how many of its channels differ.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decision::{decide, error_at_threshold_with, Verdict};
use crate::error::{ensure, Error, Result};
use crate::protocol::{click_probabilities, derive_code_geometry, one_minus_exp_neg, CodeGeometry, ProtocolParams};
use crate::registry::Registry;
use crate::Numerics;

/// Default upper limit on composite pulses per simulated trial.
pub const DEFAULT_MAX_PULSES: u64 = 100_000_000;

const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Equal,
    WorstCaseDifferent,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Equal => "equal",
            Scenario::WorstCaseDifferent => "worst-case-different",
        })
    }
}

/// Positions where the two codewords differ, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CodewordDiffMask {
    pub m: u64,
    pub diff_positions: Vec<u64>,
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent child seed number `index` of `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    mix(seed ^ mix(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// Difference positions as a bitset over the codeword.
#[derive(Debug, Clone, Default)]
struct DiffBits {
    words: Vec<u64>,
}

impl DiffBits {
    /// `amount` distinct uniform positions in `[0, m)` by rejection into the
    /// bitset; with `amount <= m / 2` this takes fewer than `1.4 amount` draws.
    fn sample(m: u64, amount: u64, rng: &mut impl RngCore) -> Self {
        let mut words = vec![0u64; m.div_ceil(64) as usize];
        let mut placed = 0;
        while placed < amount {
            let i = rng.random_range(0..m);
            let (w, b) = ((i / 64) as usize, i % 64);
            if words[w] & (1 << b) == 0 {
                words[w] |= 1 << b;
                placed += 1;
            }
        }
        Self { words }
    }

    /// Set bits in `[lo, hi)`.
    fn count(&self, lo: u64, hi: u64) -> u64 {
        if self.words.is_empty() || lo >= hi {
            return 0;
        }
        let (wl, wh) = ((lo / 64) as usize, ((hi - 1) / 64) as usize);
        let low_mask = !0u64 << (lo % 64);
        let high_mask = !0u64 >> (63 - (hi - 1) % 64);
        if wl == wh {
            return (self.words[wl] & low_mask & high_mask).count_ones() as u64;
        }
        let mut c = (self.words[wl] & low_mask).count_ones() as u64;
        for w in &self.words[wl + 1..wh] {
            c += w.count_ones() as u64;
        }
        c + (self.words[wh] & high_mask).count_ones() as u64
    }

    fn positions(&self) -> Vec<u64> {
        let mut out = Vec::new();
        for (wi, &w) in self.words.iter().enumerate() {
            let mut w = w;
            while w != 0 {
                let b = w.trailing_zeros() as u64;
                out.push(wi as u64 * 64 + b);
                w &= w - 1;
            }
        }
        out
    }
}

fn sample_bits(m: u64, d_min: u64, scenario: Scenario, rng: &mut impl RngCore) -> Result<DiffBits> {
    match scenario {
        Scenario::Equal => Ok(DiffBits::default()),
        Scenario::WorstCaseDifferent => {
            ensure(d_min >= 1, "delta", || "ceil(delta m) must be at least 1".into())?;
            ensure(d_min <= m, "delta", || {
                format!("{d_min} differences exceed the codeword length {m}")
            })?;
            Ok(DiffBits::sample(m, d_min, rng))
        }
    }
}

pub fn build_codeword_pair(n: u64, c: f64, delta: f64, scenario: Scenario, seed: u64) -> Result<CodewordDiffMask> {
    let g = derive_code_geometry(n, c, 1, delta)?;
    let bits = sample_bits(g.m, g.d_min, scenario, &mut ChaCha8Rng::seed_from_u64(seed))?;
    Ok(CodewordDiffMask {
        m: g.m,
        diff_positions: bits.positions(),
    })
}

/// `(p_click_d1, p_click_d0)` for a full composite pulse with `d_diff` of its
/// `k` channels differing.
pub fn pulse_click_probability(d_diff: u32, k: u32, p: &ProtocolParams, g: &CodeGeometry) -> Result<(f64, f64)> {
    ensure(d_diff <= k, "d_diff", || {
        format!("{d_diff} differing channels exceeds k = {k}")
    })?;
    ensure(g.m >= 1, "m", || "must be >= 1".into())?;
    let s = channel_signal(p, g);
    Ok(channel_mix(s, p.nu(), p.p_dark(), d_diff as u64, k as u64))
}

/// Per-channel click probability before visibility, `1 - exp(-2 (mu/m) eta)`.
fn channel_signal(p: &ProtocolParams, g: &CodeGeometry) -> f64 {
    one_minus_exp_neg(2.0 * p.mu() / g.m as f64 * p.eta())
}

fn channel_mix(s: f64, nu: f64, p_dark: f64, diff: u64, channels: u64) -> (f64, f64) {
    let same = (channels - diff) as f64;
    let diff = diff as f64;
    let none = |bright: f64, dim: f64| -> f64 {
        let ln = (-p_dark).ln_1p() + diff * (-s * bright).ln_1p() + same * (-s * dim).ln_1p();
        -ln.exp_m1()
    };
    (none(nu, 1.0 - nu), none(1.0 - nu, nu))
}

/// Click probabilities indexed by the number of differing channels, for the
/// full pulses and for a trailing partial pulse.
#[derive(Debug, Clone)]
pub struct ClickTable {
    pulses: u64,
    k: u64,
    m: u64,
    full: Vec<f64>,
    last: Vec<f64>,
    max: f64,
}

impl ClickTable {
    fn new(p: &ProtocolParams, g: &CodeGeometry, detector_d1: bool) -> Self {
        let s = channel_signal(p, g);
        let k = p.k() as u64;
        let last_channels = g.m - (g.pulses - 1) * k;
        let pick = |(d1, d0): (f64, f64)| if detector_d1 { d1 } else { d0 };
        let full: Vec<f64> = (0..=k)
            .map(|d| pick(channel_mix(s, p.nu(), p.p_dark(), d, k)))
            .collect();
        let last: Vec<f64> = (0..=last_channels)
            .map(|d| pick(channel_mix(s, p.nu(), p.p_dark(), d, last_channels)))
            .collect();
        let max = full.iter().chain(&last).copied().fold(0.0, f64::max);
        Self {
            pulses: g.pulses,
            k,
            m: g.m,
            full,
            last,
            max,
        }
    }

    fn prob(&self, pulse: u64, diff: u64) -> f64 {
        if pulse + 1 == self.pulses && !self.m.is_multiple_of(self.k) {
            self.last[diff as usize]
        } else {
            self.full[diff as usize]
        }
    }

    pub fn pulses(&self) -> u64 {
        self.pulses
    }

    /// Upper bound on every entry.
    pub fn max(&self) -> f64 {
        self.max
    }
}

/// Counts differing channels per pulse.
pub struct DiffCursor<'a> {
    bits: &'a DiffBits,
    k: u64,
    m: u64,
}

impl DiffCursor<'_> {
    pub fn diff_in(&mut self, pulse: u64) -> u64 {
        let start = pulse * self.k;
        self.bits.count(start, (start + self.k).min(self.m))
    }
}

/// Draws the click count of one detector over all pulses of a trial.
pub trait ClickSampler: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn count(&self, rng: &mut dyn RngCore, table: &ClickTable, cursor: &mut DiffCursor<'_>) -> u64;
}

/// One Bernoulli draw per pulse.
#[derive(Debug, Default, Clone, Copy)]
pub struct PulseByPulse;

impl ClickSampler for PulseByPulse {
    fn name(&self) -> &'static str {
        "pulse-by-pulse"
    }

    fn count(&self, rng: &mut dyn RngCore, table: &ClickTable, cursor: &mut DiffCursor<'_>) -> u64 {
        let mut clicks = 0;
        for j in 0..table.pulses {
            let p = table.prob(j, cursor.diff_in(j));
            if rng.random::<f64>() < p {
                clicks += 1;
            }
        }
        clicks
    }
}

/// Thinning: candidate clicks arrive with the largest per-pulse probability,
/// skipping geometrically distributed gaps, and each candidate is kept with
/// probability `p(j) / p_max`. Exact, with work proportional to the clicks.
#[derive(Debug, Default, Clone, Copy)]
pub struct GeometricSkip;

impl ClickSampler for GeometricSkip {
    fn name(&self) -> &'static str {
        "geometric-skip"
    }

    fn count(&self, rng: &mut dyn RngCore, table: &ClickTable, cursor: &mut DiffCursor<'_>) -> u64 {
        let p_max = table.max;
        if p_max <= 0.0 {
            return 0;
        }
        if p_max >= 1.0 {
            return PulseByPulse.count(rng, table, cursor);
        }
        let ln_miss = (-p_max).ln_1p();
        let mut clicks = 0;
        let mut j = 0u64;
        loop {
            let u = 1.0 - rng.random::<f64>();
            let gap = (u.ln() / ln_miss).floor();
            if gap >= (table.pulses - j) as f64 {
                break;
            }
            j += gap as u64;
            let p = table.prob(j, cursor.diff_in(j));
            if rng.random::<f64>() * p_max < p {
                clicks += 1;
            }
            j += 1;
            if j >= table.pulses {
                break;
            }
        }
        clicks
    }
}

pub fn click_samplers() -> Registry<dyn ClickSampler> {
    Registry::<dyn ClickSampler>::new("click sampler")
        .with(
            "geometric-skip",
            "thinned geometric gaps, cost proportional to clicks",
            |_| Ok(Arc::new(GeometricSkip)),
        )
        .with("pulse-by-pulse", "one Bernoulli draw per pulse", |_| {
            Ok(Arc::new(PulseByPulse))
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TrialRecord {
    pub index: u64,
    pub c0: u64,
    pub c1: u64,
    pub verdict: Verdict,
    pub seed: u64,
}

/// Everything a trial needs besides its seed.
#[derive(Debug, Clone)]
pub struct Simulation {
    params: ProtocolParams,
    geometry: CodeGeometry,
    threshold: u64,
    sampler: Arc<dyn ClickSampler>,
    d1: ClickTable,
    d0: ClickTable,
}

impl Simulation {
    pub fn new(
        params: ProtocolParams,
        threshold: u64,
        sampler: Arc<dyn ClickSampler>,
        max_pulses: u64,
    ) -> Result<Self> {
        let geometry = params.geometry()?;
        if geometry.pulses > max_pulses {
            return Err(Error::GuardExceeded {
                what: "composite pulses",
                value: geometry.pulses,
                limit: max_pulses,
            });
        }
        Ok(Self {
            d1: ClickTable::new(&params, &geometry, true),
            d0: ClickTable::new(&params, &geometry, false),
            params,
            geometry,
            threshold,
            sampler,
        })
    }

    pub fn geometry(&self) -> &CodeGeometry {
        &self.geometry
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.params
    }

    pub fn threshold(&self) -> u64 {
        self.threshold
    }

    pub fn simulate_trial(&self, scenario: Scenario, index: u64, seed: u64) -> Result<TrialRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bits = sample_bits(self.geometry.m, self.geometry.d_min, scenario, &mut rng)?;
        let cursor = || DiffCursor {
            bits: &bits,
            k: self.params.k() as u64,
            m: self.geometry.m,
        };
        let c1 = self.sampler.count(&mut rng, &self.d1, &mut cursor());
        let c0 = self.sampler.count(&mut rng, &self.d0, &mut cursor());
        Ok(TrialRecord {
            index,
            c0,
            c1,
            verdict: decide(c1, self.threshold),
            seed,
        })
    }

    /// Trials `0..trials` with seeds derived from `seed`; order follows the index.
    pub fn run_trials(&self, scenario: Scenario, trials: u64, seed: u64) -> Result<Vec<TrialRecord>> {
        (0..trials)
            .into_par_iter()
            .map(|i| self.simulate_trial(scenario, i, derive_seed(seed, i)))
            .collect()
    }

    pub fn run_experiment(
        &self,
        scenario: Scenario,
        trials: u64,
        seed: u64,
        numerics: &Numerics,
    ) -> Result<ExperimentSummary> {
        ensure(trials >= 1, "trials", || "must be >= 1".into())?;
        let records = self.run_trials(scenario, trials, seed)?;
        self.summarize(scenario, &records, seed, numerics)
    }

    pub fn summarize(
        &self,
        scenario: Scenario,
        records: &[TrialRecord],
        seed: u64,
        numerics: &Numerics,
    ) -> Result<ExperimentSummary> {
        ensure(!records.is_empty(), "trials", || "no trial records".into())?;
        let n = records.len() as f64;
        let pulses = self.geometry.pulses;
        let sum1: f64 = records.iter().map(|r| r.c1 as f64).sum();
        let sum0: f64 = records.iter().map(|r| r.c0 as f64).sum();
        let mean_c1 = sum1 / n;
        let var_c1 = if records.len() > 1 {
            records.iter().map(|r| (r.c1 as f64 - mean_c1).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let wrong = match scenario {
            Scenario::Equal => Verdict::Different,
            Scenario::WorstCaseDifferent => Verdict::Equal,
        };
        let errors = records.iter().filter(|r| r.verdict == wrong).count() as u64;
        let (ci_low, ci_high) = wilson_interval(errors, records.len() as u64);

        let p = &self.params;
        let probs = click_probabilities(p.nu(), p.delta(), p.p_dark(), p.mu(), p.eta(), pulses);
        let outcome =
            error_at_threshold_with(pulses, probs.equal, probs.diff, self.threshold, numerics.tails.as_ref())?;
        let (analytic_error, predicted_rate) = match scenario {
            Scenario::Equal => (outcome.p_err_equal, probs.equal),
            Scenario::WorstCaseDifferent => (outcome.p_err_diff, probs.diff),
        };
        Ok(ExperimentSummary {
            scenario,
            trials: records.len() as u64,
            seed,
            threshold: self.threshold,
            pulses,
            mean_c1,
            var_c1,
            mean_c0: sum0 / n,
            errors,
            empirical_error_rate: errors as f64 / n,
            ci_low,
            ci_high,
            ci_halfwidth: 0.5 * (ci_high - ci_low),
            analytic_error,
            click_rate_d1: sum1 / (n * pulses as f64),
            predicted_click_rate_d1: predicted_rate,
        })
    }
}

/// Aggregate of one scenario's trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub scenario: Scenario,
    pub trials: u64,
    pub seed: u64,
    pub threshold: u64,
    pub pulses: u64,
    pub mean_c1: f64,
    pub var_c1: f64,
    pub mean_c0: f64,
    pub errors: u64,
    pub empirical_error_rate: f64,
    /// 95% Wilson interval of the error rate.
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_halfwidth: f64,
    /// Tail probability of the wrong verdict under the closed-form click model.
    pub analytic_error: f64,
    /// Observed D1 clicks per pulse.
    pub click_rate_d1: f64,
    pub predicted_click_rate_d1: f64,
}

/// 95% Wilson score interval for `successes` out of `n`.
pub fn wilson_interval(successes: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let phat = successes as f64 / nf;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / nf;
    let center = (phat + z2 / (2.0 * nf)) / denom;
    let half = Z95 / denom * (phat * (1.0 - phat) / nf + z2 / (4.0 * nf * nf)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Both scenarios at a shared threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub mean_c1_equal: f64,
    pub mean_c1_diff: f64,
    /// The larger of the two scenario error rates.
    pub empirical_error_rate: f64,
    pub ci_halfwidth: f64,
    pub equal: ExperimentSummary,
    pub diff: ExperimentSummary,
}

impl ComparisonReport {
    pub fn new(equal: ExperimentSummary, diff: ExperimentSummary) -> Self {
        let worst = if equal.empirical_error_rate >= diff.empirical_error_rate {
            &equal
        } else {
            &diff
        };
        Self {
            mean_c1_equal: equal.mean_c1,
            mean_c1_diff: diff.mean_c1,
            empirical_error_rate: worst.empirical_error_rate,
            ci_halfwidth: worst.ci_halfwidth,
            equal,
            diff,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{ChannelModel, ProtocolConfig};

    fn params(n: f64, k: u32, mu: f64, nu: f64, p_dark: f64) -> ProtocolParams {
        let cfg = ProtocolConfig {
            n,
            k,
            mu,
            nu,
            p_dark,
            ..ProtocolConfig::default()
        };
        ProtocolParams::new(&cfg, ChannelModel::new(0.0, 0.2, 0.2).unwrap()).unwrap()
    }

    #[test]
    fn masks() {
        let eq = build_codeword_pair(100, 0.5, 0.22, Scenario::Equal, 7).unwrap();
        assert!(eq.diff_positions.is_empty());
        let a = build_codeword_pair(100, 0.5, 0.22, Scenario::WorstCaseDifferent, 7).unwrap();
        let b = build_codeword_pair(100, 0.5, 0.22, Scenario::WorstCaseDifferent, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.diff_positions.len(), 44);
        assert!(a.diff_positions.windows(2).all(|w| w[0] < w[1]));
        assert!(*a.diff_positions.last().unwrap() < 200);
    }

    #[test]
    fn click_probability_limits() {
        let p = params(1200.0, 6, 10.0, 1.0, 0.0);
        let g = p.geometry().unwrap();
        assert_eq!(pulse_click_probability(0, 6, &p, &g).unwrap().0, 0.0);
        assert!(pulse_click_probability(7, 6, &p, &g).is_err());
        let bright = params(12.0, 6, 5000.0, 1.0, 0.0);
        let g = bright.geometry().unwrap();
        assert!(pulse_click_probability(6, 6, &bright, &g).unwrap().0 > 0.999_999);
    }

    #[test]
    fn equal_inputs_with_perfect_visibility_never_click() {
        let p = params(24_000.0, 6, 50.0, 1.0, 0.0);
        let sim = Simulation::new(p, 1, Arc::new(GeometricSkip), DEFAULT_MAX_PULSES).unwrap();
        for i in 0..20 {
            let r = sim.simulate_trial(Scenario::Equal, i, derive_seed(3, i)).unwrap();
            assert_eq!((r.c1, r.verdict), (0, Verdict::Equal));
        }
    }

    #[test]
    fn fixed_seed_repeats() {
        let p = params(24_000.0, 6, 50.0, 0.97, 1e-4);
        let sim = Simulation::new(p, 5, Arc::new(GeometricSkip), DEFAULT_MAX_PULSES).unwrap();
        let a = sim.run_trials(Scenario::WorstCaseDifferent, 8, 99).unwrap();
        let b = sim.run_trials(Scenario::WorstCaseDifferent, 8, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn guard_rejects_large_runs() {
        let p = params(1e6, 1, 10.0, 0.97, 1e-6);
        let err = Simulation::new(p, 1, Arc::new(GeometricSkip), 1000).unwrap_err();
        assert!(matches!(err, Error::GuardExceeded { .. }));
    }

    #[test]
    fn wilson_contains_estimate() {
        let (lo, hi) = wilson_interval(100, 10_000);
        assert!(lo < 0.01 && 0.01 < hi);
        assert_eq!(wilson_interval(0, 10).0, 0.0);
    }

    #[test]
    fn bitset_counts_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bits = DiffBits::sample(1000, 220, &mut rng);
        let pos = bits.positions();
        assert_eq!(pos.len(), 220);
        for (lo, hi) in [(0, 1000), (3, 70), (64, 128), (130, 131), (500, 500), (999, 1000)] {
            let want = pos.iter().filter(|&&p| lo <= p && p < hi).count() as u64;
            assert_eq!(bits.count(lo, hi), want, "[{lo}, {hi})");
        }
    }

    #[test]
    fn seeds_differ_by_index() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }
}

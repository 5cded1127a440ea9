//! Referee's threshold rule and its worst-case error.
//!
//! Counts at detector D1 are `Binomial(M, P_E)` for equal inputs and
//! `Binomial(M, P_D)` for worst-case different inputs. A count strictly below
//! the threshold `t` means "equal", so the two error probabilities are
//! `P(C_E >= t)` and `P(C_D < t)`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::binom::{self, Auto, Regime, TailMethod, EXACT_TRIALS_LIMIT};
use crate::error::{ensure, Result};
use crate::registry::Registry;

/// Largest pulse count for which the `auto` search scans every threshold.
pub const EXHAUSTIVE_TRIALS_LIMIT: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecisionOutcome {
    pub c1_threshold: u64,
    /// `P(C_E >= t)`: equal inputs judged different.
    pub p_err_equal: f64,
    /// `P(C_D < t)`: different inputs judged equal.
    pub p_err_diff: f64,
    pub p_error: f64,
    pub regime_equal: Regime,
    pub regime_diff: Regime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Verdict {
    Equal,
    Different,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Equal => "equal",
            Verdict::Different => "different",
        })
    }
}

pub fn decide(c1_observed: u64, threshold: u64) -> Verdict {
    if c1_observed < threshold {
        Verdict::Equal
    } else {
        Verdict::Different
    }
}

fn check(trials: u64, p_e: f64, p_d: f64) -> Result<()> {
    ensure((0.0..=1.0).contains(&p_e), "p_e", || {
        format!("must lie in [0, 1], got {p_e}")
    })?;
    ensure((0.0..=1.0).contains(&p_d), "p_d", || {
        format!("must lie in [0, 1], got {p_d}")
    })?;
    ensure(p_e <= p_d, "p_e", || {
        format!("{p_e} exceeds p_d = {p_d}; the rule orientation would invert")
    })?;
    ensure(trials >= 1, "trials", || "must be at least 1".into())
}

fn equal_tail(tails: &dyn TailMethod, trials: u64, p_e: f64, t: u64) -> binom::TailValue {
    tails.at_least(trials, p_e, 1.0 - p_e, t)
}

fn diff_tail(tails: &dyn TailMethod, trials: u64, p_d: f64, t: u64) -> binom::TailValue {
    if t == 0 {
        return binom::TailValue {
            value: 0.0,
            regime: Regime::Exact,
        };
    }
    tails.at_least(trials, 1.0 - p_d, p_d, trials - t + 1)
}

fn outcome(t: u64, eq: binom::TailValue, diff: binom::TailValue) -> DecisionOutcome {
    DecisionOutcome {
        c1_threshold: t,
        p_err_equal: eq.value,
        p_err_diff: diff.value,
        p_error: eq.value.max(diff.value),
        regime_equal: eq.regime,
        regime_diff: diff.regime,
    }
}

fn evaluate(tails: &dyn TailMethod, trials: u64, p_e: f64, p_d: f64, t: u64) -> DecisionOutcome {
    outcome(t, equal_tail(tails, trials, p_e, t), diff_tail(tails, trials, p_d, t))
}

/// Both error probabilities at threshold `t` with the default tail method.
pub fn error_at_threshold(trials: u64, p_e: f64, p_d: f64, t: u64) -> Result<DecisionOutcome> {
    error_at_threshold_with(trials, p_e, p_d, t, &Auto)
}

pub fn error_at_threshold_with(
    trials: u64,
    p_e: f64,
    p_d: f64,
    t: u64,
    tails: &dyn TailMethod,
) -> Result<DecisionOutcome> {
    check(trials, p_e, p_d)?;
    ensure(t <= trials, "t", || {
        format!("threshold {t} exceeds pulse count {trials}")
    })?;
    Ok(evaluate(tails, trials, p_e, p_d, t))
}

/// Strategy for locating the threshold that minimizes the worst-case error.
/// Ties go to the smallest threshold.
pub trait ThresholdSearch: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Inputs are pre-validated: `trials >= 1`, `0 <= p_e <= p_d <= 1`.
    fn search(&self, trials: u64, p_e: f64, p_d: f64, tails: &dyn TailMethod) -> DecisionOutcome;
}

/// `ln(e^a + e^b)`.
fn ln_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        hi
    } else {
        hi + (lo - hi).exp().ln_1p()
    }
}

/// `ln P(X = j)` for `j = 0..=n`.
fn ln_masses(n: u64, p: f64) -> Vec<f64> {
    let q = 1.0 - p;
    (0..=n).map(|j| binom::ln_point_mass(n, p, q, j)).collect()
}

/// Point masses of `Binomial(n, p)` over the band where they are representable.
struct Band {
    lo: u64,
    mass: Vec<f64>,
}

impl Band {
    fn new(n: u64, p: f64) -> Self {
        const FLOOR: f64 = -760.0;
        let q = 1.0 - p;
        let mode = (((n as f64 + 1.0) * p).floor() as u64).min(n);
        let mut below = Vec::new();
        let mut j = mode;
        loop {
            let l = binom::ln_point_mass(n, p, q, j);
            if l < FLOOR && j != mode {
                break;
            }
            below.push(l.exp());
            if j == 0 {
                break;
            }
            j -= 1;
        }
        let lo = mode + 1 - below.len() as u64;
        below.reverse();
        let mut mass = below;
        let mut j = mode + 1;
        while j <= n {
            let l = binom::ln_point_mass(n, p, q, j);
            if l < FLOOR {
                break;
            }
            mass.push(l.exp());
            j += 1;
        }
        Self { lo, mass }
    }

    fn hi(&self) -> u64 {
        self.lo + self.mass.len() as u64
    }
}

/// Scans every threshold in `[0, M]` using exact point masses and running
/// sums, each tail accumulated from its small end. When the optimum falls
/// below the linear floor the scan is repeated on logarithms, so it is
/// resolved even where both error probabilities underflow.
#[derive(Debug, Default, Clone, Copy)]
pub struct Exhaustive;

impl Exhaustive {
    /// Error probabilities at or above this are resolved in linear space.
    const LINEAR_FLOOR: f64 = 1e-280;

    fn scan(trials: u64, p_e: f64, p_d: f64) -> DecisionOutcome {
        let best = Self::scan_linear(trials, p_e, p_d);
        if best.p_error >= Self::LINEAR_FLOOR {
            best
        } else {
            Self::scan_log(trials, p_e, p_d)
        }
    }

    /// Running sums over the representable bands only.
    fn scan_linear(trials: u64, p_e: f64, p_d: f64) -> DecisionOutcome {
        let be = Band::new(trials, p_e);
        let bd = Band::new(trials, p_d);
        // at_least[i] = P(C_E >= be.lo + i)
        let mut at_least = vec![0.0; be.mass.len() + 1];
        for i in (0..be.mass.len()).rev() {
            at_least[i] = at_least[i + 1] + be.mass[i];
        }
        // below[i] = P(C_D < bd.lo + i)
        let mut below = vec![0.0; bd.mass.len() + 1];
        for i in 0..bd.mass.len() {
            below[i + 1] = below[i] + bd.mass[i];
        }
        let a = |t: u64| -> f64 {
            if t == 0 {
                1.0
            } else if t <= be.lo {
                at_least[0]
            } else if t >= be.hi() {
                0.0
            } else {
                at_least[(t - be.lo) as usize]
            }
        };
        let b = |t: u64| -> f64 {
            if t <= bd.lo {
                0.0
            } else if t >= bd.hi() {
                below[bd.mass.len()]
            } else {
                below[(t - bd.lo) as usize]
            }
        };
        let exact = |v: f64| binom::TailValue {
            value: v,
            regime: Regime::Exact,
        };
        let mut best = outcome(0, exact(a(0)), exact(b(0)));
        for t in 1..=trials {
            let (x, y) = (a(t), b(t));
            if x.max(y) < best.p_error {
                best = outcome(t, exact(x), exact(y));
            }
            // beyond both bands nothing changes any more
            if t >= be.hi() && t >= bd.hi() {
                break;
            }
        }
        best
    }

    /// Full log-space scan, for optima below the linear floor.
    fn scan_log(trials: u64, p_e: f64, p_d: f64) -> DecisionOutcome {
        let n = trials as usize;
        let me = ln_masses(trials, p_e);
        let md = ln_masses(trials, p_d);
        // ln_a[t] = ln P(C_E >= t)
        let mut ln_a = vec![f64::NEG_INFINITY; n + 2];
        for t in (0..=n).rev() {
            ln_a[t] = ln_add(ln_a[t + 1], me[t]);
        }
        ln_a[0] = 0.0;
        // ln_b[t] = ln P(C_D < t)
        let mut ln_b = vec![f64::NEG_INFINITY; n + 1];
        for t in 1..=n {
            ln_b[t] = ln_add(ln_b[t - 1], md[t - 1]);
        }
        let mut best = 0;
        let mut best_ln = ln_a[0].max(ln_b[0]);
        for t in 1..=n {
            let v = ln_a[t].max(ln_b[t]);
            if v < best_ln {
                best = t;
                best_ln = v;
            }
        }
        let exact = |v: f64| binom::TailValue {
            value: v.exp().min(1.0),
            regime: Regime::Exact,
        };
        outcome(best as u64, exact(ln_a[best]), exact(ln_b[best]))
    }
}

impl ThresholdSearch for Exhaustive {
    fn name(&self) -> &'static str {
        "exhaustive"
    }

    fn search(&self, trials: u64, p_e: f64, p_d: f64, _tails: &dyn TailMethod) -> DecisionOutcome {
        Self::scan(trials, p_e, p_d)
    }
}

/// Binary search on the crossing of the two monotone error curves.
///
/// `P(C_E >= t)` falls and `P(C_D < t)` rises with `t`, so the worst case is
/// minimized either at the first `t` where the rising curve catches up or just
/// before it; plateaus are resolved toward the smaller threshold.
#[derive(Debug, Default, Clone, Copy)]
pub struct Crossing;

/// Smallest `t` in `[lo, hi]` with `pred(t)`, assuming `pred` is monotone
/// false-then-true; `hi + 1` if none.
fn first_true(mut lo: u64, mut hi: u64, pred: impl Fn(u64) -> bool) -> u64 {
    let end = hi + 1;
    if lo > hi {
        return end;
    }
    let mut found = end;
    while lo <= hi {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            found = mid;
            if mid == 0 {
                break;
            }
            hi = mid - 1;
        } else {
            lo = mid + 1;
        }
    }
    found
}

impl ThresholdSearch for Crossing {
    fn name(&self) -> &'static str {
        "crossing"
    }

    fn search(&self, trials: u64, p_e: f64, p_d: f64, tails: &dyn TailMethod) -> DecisionOutcome {
        // compared in log space
        let a = |t: u64| tails.ln_at_least(trials, p_e, 1.0 - p_e, t);
        let b = |t: u64| {
            if t == 0 {
                f64::NEG_INFINITY
            } else {
                tails.ln_at_least(trials, 1.0 - p_d, p_d, trials - t + 1)
            }
        };
        let cross = first_true(0, trials, |t| a(t) <= b(t));
        // before the crossing the worst case is a(t), non-increasing
        let left = if cross == 0 { None } else { Some(a(cross - 1)) };
        let right = if cross > trials { None } else { Some(b(cross)) };
        let t = match (left, right) {
            (Some(av), Some(bv)) if av > bv => cross,
            (Some(av), _) => first_true(0, cross - 1, |t| a(t) <= av),
            (None, _) => cross,
        };
        evaluate(tails, trials, p_e, p_d, t)
    }
}

/// Exhaustive scan for small pulse counts under exact tails, crossing search
/// otherwise.
#[derive(Debug, Default, Clone, Copy)]
pub struct AutoSearch;

impl ThresholdSearch for AutoSearch {
    fn name(&self) -> &'static str {
        "auto"
    }

    fn search(&self, trials: u64, p_e: f64, p_d: f64, tails: &dyn TailMethod) -> DecisionOutcome {
        let exact_tails = matches!(tails.name(), "exact" | "auto") && trials <= EXACT_TRIALS_LIMIT;
        if exact_tails && trials <= EXHAUSTIVE_TRIALS_LIMIT {
            Exhaustive.search(trials, p_e, p_d, tails)
        } else {
            Crossing.search(trials, p_e, p_d, tails)
        }
    }
}

pub fn threshold_searches() -> Registry<dyn ThresholdSearch> {
    Registry::<dyn ThresholdSearch>::new("threshold search")
        .with("auto", "exhaustive up to 1e5 pulses, crossing search above", |_| {
            Ok(Arc::new(AutoSearch))
        })
        .with("exhaustive", "scan every threshold with exact point masses", |_| {
            Ok(Arc::new(Exhaustive))
        })
        .with("crossing", "binary search on the crossing of the two tails", |_| {
            Ok(Arc::new(Crossing))
        })
}

/// Threshold minimizing `max(P(C_E >= t), P(C_D < t))` with default strategies.
pub fn optimal_threshold(trials: u64, p_e: f64, p_d: f64) -> Result<DecisionOutcome> {
    optimal_threshold_with(trials, p_e, p_d, &AutoSearch, &Auto)
}

pub fn optimal_threshold_with(
    trials: u64,
    p_e: f64,
    p_d: f64,
    search: &dyn ThresholdSearch,
    tails: &dyn TailMethod,
) -> Result<DecisionOutcome> {
    check(trials, p_e, p_d)?;
    Ok(search.search(trials, p_e, p_d, tails))
}

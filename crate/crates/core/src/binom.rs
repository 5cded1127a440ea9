//! Binomial tail probabilities for trial counts up to ~1e18.
//!
//! Point masses use Loader's saddle-point expansion (`stirlerr` + `bd0`), which
//! keeps full relative precision far into the tails. Tails are summed outward
//! from the threshold in scaled form so the result never underflows before the
//! final exponentiation.
//!
//! Several evaluators implement [`TailMethod`]:
//!
//! | name          | method                                           | error            |
//! |---------------|--------------------------------------------------|------------------|
//! | `exact`       | log-space summation of exact point masses        | ~1e-13 relative  |
//! | `poisson`     | Poisson(M p) summation                           | [`poisson_relative_bound`] |
//! | `saddlepoint` | Lugannani–Rice with lattice continuity correction| [`saddlepoint_relative_bound`] |
//! | `normal`      | continuity-corrected normal                      | [`normal_absolute_bound`] |
//! | `auto`        | regime switch over the above                     | per regime       |

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use statrs::function::erf::erfc;

use crate::error::{ensure, Result};
use crate::registry::Registry;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Largest trial count summed exactly by the `auto` method.
pub const EXACT_TRIALS_LIMIT: u64 = 1_000_000;
/// Largest mean count (`M p` or `M q`) handled by the Poisson regime.
pub const POISSON_MEAN_LIMIT: f64 = 50.0;

/// Summation stops once a term is this small relative to the running sum.
const NEGLIGIBLE: f64 = 1e-18;

/// A tail query on `X ~ Binomial(trials, p)` with threshold count `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailQuery {
    pub trials: u64,
    pub p: f64,
    pub t: u64,
}

impl TailQuery {
    pub fn new(trials: u64, p: f64, t: u64) -> Result<Self> {
        ensure((0.0..=1.0).contains(&p), "p", || format!("must lie in [0, 1], got {p}"))?;
        ensure(t <= trials, "t", || {
            format!("threshold {t} exceeds trial count {trials}")
        })?;
        Ok(Self { trials, p, t })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Exact,
    Poisson,
    SaddlePoint,
    Normal,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Exact => "exact",
            Regime::Poisson => "poisson",
            Regime::SaddlePoint => "saddlepoint",
            Regime::Normal => "normal",
        })
    }
}

/// A tail probability together with the regime that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailValue {
    pub value: f64,
    pub regime: Regime,
}

/// An interchangeable binomial tail evaluator.
///
/// Implementors provide `P(X >= x)` for `X ~ Binomial(trials, p)` where the
/// caller supplies both `p` and `q = 1 - p`; the two tails follow from it.
pub trait TailMethod: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn at_least(&self, trials: u64, p: f64, q: f64, x: u64) -> TailValue;

    /// `ln P(X >= x)`. Methods that can work in log space override this so
    /// comparisons stay meaningful below the `f64` underflow limit.
    fn ln_at_least(&self, trials: u64, p: f64, q: f64, x: u64) -> f64 {
        self.at_least(trials, p, q, x).value.ln()
    }

    /// `P(X > t)`.
    fn upper(&self, query: &TailQuery) -> TailValue {
        if query.t >= query.trials {
            return TailValue {
                value: 0.0,
                regime: Regime::Exact,
            };
        }
        self.at_least(query.trials, query.p, 1.0 - query.p, query.t + 1)
    }

    /// `P(X < t)`, evaluated as an upper tail of `trials - X`.
    fn lower(&self, query: &TailQuery) -> TailValue {
        if query.t == 0 {
            return TailValue {
                value: 0.0,
                regime: Regime::Exact,
            };
        }
        self.at_least(query.trials, 1.0 - query.p, query.p, query.trials - query.t + 1)
    }
}

/// `P(X > t)` using the default regime switch.
pub fn upper_tail(query: &TailQuery) -> f64 {
    Auto.upper(query).value
}

/// `P(X < t)` using the default regime switch.
pub fn lower_tail(query: &TailQuery) -> f64 {
    Auto.lower(query).value
}

/// `ln P(X > t)` by exact summation; finite far below the `f64` underflow limit.
pub fn ln_upper_tail(query: &TailQuery) -> f64 {
    if query.t >= query.trials {
        return f64::NEG_INFINITY;
    }
    ln_exact_at_least(query.trials, query.p, 1.0 - query.p, query.t + 1)
}

/// `ln P(X < t)` by exact summation.
pub fn ln_lower_tail(query: &TailQuery) -> f64 {
    if query.t == 0 {
        return f64::NEG_INFINITY;
    }
    ln_exact_at_least(query.trials, 1.0 - query.p, query.p, query.trials - query.t + 1)
}

/// `P(X = j)`.
pub fn point_mass(trials: u64, p: f64, j: u64) -> f64 {
    ln_point_mass(trials, p, 1.0 - p, j).exp()
}

/// Upper bound `exp(-M KL(t/M || p))` on `P(X >= t)`, valid for `t / M > p`.
/// Returns 1 when `t / M <= p`.
pub fn chernoff_upper_bound(trials: u64, p: f64, t: u64) -> f64 {
    let m = trials as f64;
    let x = t as f64;
    if x <= m * p {
        return 1.0;
    }
    if t >= trials {
        return p.powf(m);
    }
    (-(bd0(x, m * p) + bd0(m - x, m * (1.0 - p)))).exp()
}

/// Kullback–Leibler divergence between Bernoulli(a) and Bernoulli(p), in nats.
pub fn bernoulli_kl(a: f64, p: f64) -> f64 {
    let term = |x: f64, y: f64| if x == 0.0 { 0.0 } else { x * (x / y).ln() };
    term(a, p) + term(1.0 - a, 1.0 - p)
}

// Loader's point-mass machinery.

/// `ln(n!) - [(n + 1/2) ln n - n + ln sqrt(2 pi)]` at integer `n >= 0`.
#[allow(clippy::excessive_precision)]
const STIRLERR_SMALL: [f64; 16] = [
    0.0,
    0.081_061_466_795_327_258_219_670_2,
    0.041_340_695_955_409_294_093_822_1,
    0.027_677_925_684_998_339_148_789_29,
    0.020_790_672_103_765_093_111_522_77,
    0.016_644_691_189_821_192_163_194_87,
    0.013_876_128_823_070_747_998_745_73,
    0.011_896_709_945_891_770_095_055_72,
    0.010_411_265_261_972_096_497_478_567,
    0.009_255_462_182_712_732_917_728_637,
    0.008_330_563_433_362_871_256_469_318,
    0.007_573_675_487_951_840_794_972_024,
    0.006_942_840_107_209_529_865_664_152,
    0.006_408_994_188_004_207_068_439_631,
    0.005_951_370_112_758_847_735_624_416,
    0.005_554_733_551_962_801_371_038_690,
];

fn stirlerr(n: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    const S5: f64 = 691.0 / 360_360.0;
    const S6: f64 = 1.0 / 156.0;
    if n <= 15.0 {
        debug_assert!(n.fract() == 0.0, "stirlerr only tabulated at integers");
        return STIRLERR_SMALL[n as usize];
    }
    let nn = n * n;
    if n > 15.7e6 {
        return S0 / n;
    }
    if n > 6180.0 {
        return (S0 - S1 / nn) / n;
    }
    if n > 205.0 {
        return (S0 - (S1 - S2 / nn) / nn) / n;
    }
    if n > 86.0 {
        return (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n;
    }
    if n > 27.0 {
        return (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n;
    }
    (S0 - (S1 - (S2 - (S3 - (S4 - (S5 - S6 / nn) / nn) / nn) / nn) / nn) / nn) / n
}

/// Deviance term `x ln(x / np) + np - x`, evaluated without cancellation.
pub(crate) fn bd0(x: f64, np: f64) -> f64 {
    if x == 0.0 {
        return np;
    }
    if (x - np).abs() < 0.1 * (x + np) {
        let d = x - np;
        let mut v = d / (x + np);
        let mut s = d * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let prev = s;
            s += ej / (2 * j + 1) as f64;
            if s == prev {
                break;
            }
        }
        return s;
    }
    x * (x / np).ln() + np - x
}

/// `ln P(X = j)` for `X ~ Binomial(n, p)` with `q = 1 - p` passed separately.
pub(crate) fn ln_point_mass(n: u64, p: f64, q: f64, j: u64) -> f64 {
    if j > n {
        return f64::NEG_INFINITY;
    }
    if p == 0.0 {
        return if j == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if q == 0.0 {
        return if j == n { 0.0 } else { f64::NEG_INFINITY };
    }
    let nf = n as f64;
    if j == 0 {
        return if p < 0.5 { nf * (-p).ln_1p() } else { nf * q.ln() };
    }
    if j == n {
        return if q < 0.5 { nf * (-q).ln_1p() } else { nf * p.ln() };
    }
    let x = j as f64;
    let rest = (n - j) as f64;
    let lc = stirlerr(nf) - stirlerr(x) - stirlerr(rest) - bd0(x, nf * p) - bd0(rest, nf * q);
    let lf = LN_2PI + x.ln() + (-x / nf).ln_1p();
    lc - 0.5 * lf
}

/// `ln P(Y = j)` for `Y ~ Poisson(lambda)`.
fn ln_poisson_mass(lambda: f64, j: u64) -> f64 {
    if lambda == 0.0 {
        return if j == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if j == 0 {
        return -lambda;
    }
    let x = j as f64;
    -stirlerr(x) - bd0(x, lambda) - 0.5 * (LN_2PI + x.ln())
}

/// Sums a run of terms that shrink monotonically after the first one.
/// `ratio(i)` maps the i-th term to the (i+1)-th; returns ln of the sum of
/// `exp(ln_first) * (1 + r0 + r0 r1 + ...)` over at most `steps` further terms.
fn ln_scaled_sum(ln_first: f64, steps: u64, mut ratio: impl FnMut(u64) -> f64) -> f64 {
    if ln_first == f64::NEG_INFINITY {
        return ln_first;
    }
    let mut sum = 1.0;
    let mut term = 1.0;
    for i in 0..steps {
        term *= ratio(i);
        sum += term;
        if term <= sum * NEGLIGIBLE {
            break;
        }
    }
    ln_first + sum.ln()
}

/// `ln P(X >= x)` by exact summation.
pub(crate) fn ln_exact_at_least(n: u64, p: f64, q: f64, x: u64) -> f64 {
    if x == 0 {
        return 0.0;
    }
    if x > n || p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if q == 0.0 {
        return 0.0;
    }
    let nf = n as f64;
    let odds = p / q;
    let mode = ((nf + 1.0) * p).floor();
    if x as f64 > mode {
        // terms decrease from x upward
        let ln_first = ln_point_mass(n, p, q, x);
        ln_scaled_sum(ln_first, n - x, |i| {
            let j = x + i;
            (n - j) as f64 / (j + 1) as f64 * odds
        })
    } else {
        // complement of P(X <= x - 1); terms decrease from x - 1 downward
        let top = x - 1;
        let ln_first = ln_point_mass(n, p, q, top);
        let below = ln_scaled_sum(ln_first, top, |i| {
            let j = top - i;
            j as f64 / (n - j + 1) as f64 / odds
        });
        (-below.exp()).ln_1p()
    }
}

/// `ln P(Y >= x)` for `Y ~ Poisson(lambda)`.
pub(crate) fn ln_poisson_at_least(lambda: f64, x: u64) -> f64 {
    if x == 0 {
        return 0.0;
    }
    if lambda == 0.0 {
        return f64::NEG_INFINITY;
    }
    if x as f64 > lambda.floor() {
        let ln_first = ln_poisson_mass(lambda, x);
        ln_scaled_sum(ln_first, u64::MAX - x, |i| lambda / (x + i + 1) as f64)
    } else {
        let top = x - 1;
        let ln_first = ln_poisson_mass(lambda, top);
        let below = ln_scaled_sum(ln_first, top, |i| (top - i) as f64 / lambda);
        (-below.exp()).ln_1p()
    }
}

/// Standard normal upper tail `1 - Phi(z)`.
pub(crate) fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Lugannani–Rice approximation to `ln P(X >= x)` with the second lattice
/// continuity correction (saddle point solved at `x - 1/2`).
fn ln_saddlepoint_at_least(n: u64, p: f64, q: f64, x: u64) -> f64 {
    if x == 0 {
        return 0.0;
    }
    if x > n || p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if q == 0.0 {
        return 0.0;
    }
    let nf = n as f64;
    let mean = nf * p;
    let lr = |y: f64| -> f64 {
        // y = x - 1/2 lies strictly inside (0, n)
        let rate = bd0(y, mean) + bd0(nf - y, nf * q);
        let w = (y - mean).signum() * (2.0 * rate).sqrt();
        let s = (y * q / ((nf - y) * p)).ln();
        let u = 2.0 * (0.5 * s).sinh() * (y * (nf - y) / nf).sqrt();
        if w > 30.0 {
            // factor out the density; Mills ratio from its asymptotic series
            let w2 = 1.0 / (w * w);
            let mills_minus = -w2 / w * (1.0 - w2 * (3.0 - w2 * (15.0 - w2 * 105.0)));
            return -0.5 * w * w - 0.5 * LN_2PI + (1.0 / u + mills_minus).ln();
        }
        (normal_sf(w) - normal_pdf(w) * (1.0 / w - 1.0 / u))
            .clamp(0.0, 1.0)
            .ln()
    };
    let y = x as f64 - 0.5;
    let sd = (mean * q).sqrt();
    // The formula is 0/0 at the mean; bridge linearly across a small gap.
    let gap = 1e-3 * sd.max(1e-3);
    if (y - mean).abs() < gap {
        let lo = (mean - gap).max(1e-12);
        let hi = (mean + gap).min(nf - 1e-12);
        let (a, b) = (lr(lo).exp(), lr(hi).exp());
        return (a + (b - a) * (y - lo) / (hi - lo)).ln();
    }
    lr(y)
}

fn normal_at_least(n: u64, p: f64, q: f64, x: u64) -> f64 {
    if x == 0 {
        return 1.0;
    }
    if x > n || p == 0.0 {
        return 0.0;
    }
    if q == 0.0 {
        return 1.0;
    }
    let nf = n as f64;
    normal_sf((x as f64 - 0.5 - nf * p) / (nf * p * q).sqrt())
}

/// First-order relative error envelope of the Poisson regime for `P(X >= x)`.
///
/// The log-ratio of binomial to Poisson mass at `j` is about
/// `-(j^2 - 2 j lambda + lambda^2 p ...)/(2M)`; the bound takes the largest
/// `j` that carries non-negligible tail mass.
pub fn poisson_relative_bound(trials: u64, p: f64, x: u64) -> f64 {
    let lambda = trials as f64 * p;
    let reach = x as f64 + lambda + 10.0 * (x as f64 + lambda + 1.0).sqrt();
    reach * reach / trials as f64
}

/// Relative error envelope of the saddle-point regime, `2 / min(Mp, Mq)`,
/// checked against exact summation in the tests.
pub fn saddlepoint_relative_bound(trials: u64, p: f64) -> f64 {
    let m = trials as f64;
    2.0 / (m * p).min(m * (1.0 - p))
}

/// Berry–Esseen absolute error bound of the normal regime.
pub fn normal_absolute_bound(trials: u64, p: f64) -> f64 {
    let q = 1.0 - p;
    0.4748 * (p * p + q * q) / (trials as f64 * p * q).sqrt()
}

fn trivial(trials: u64, p: f64, q: f64, x: u64) -> Option<f64> {
    if x == 0 {
        Some(1.0)
    } else if x > trials || p == 0.0 {
        Some(0.0)
    } else if q == 0.0 {
        Some(1.0)
    } else {
        None
    }
}

/// Log-space summation of exact point masses.
#[derive(Debug, Default, Clone, Copy)]
pub struct ExactSummation;

impl TailMethod for ExactSummation {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn at_least(&self, trials: u64, p: f64, q: f64, x: u64) -> TailValue {
        TailValue {
            value: ln_exact_at_least(trials, p, q, x).exp(),
            regime: Regime::Exact,
        }
    }

    fn ln_at_least(&self, trials: u64, p: f64, q: f64, x: u64) -> f64 {
        ln_exact_at_least(trials, p, q, x)
    }
}

/// Poisson approximation with mean `M p`.
#[derive(Debug, Default, Clone, Copy)]
pub struct PoissonApprox;

impl TailMethod for PoissonApprox {
    fn name(&self) -> &'static str {
        "poisson"
    }

    fn at_least(&self, trials: u64, p: f64, q: f64, x: u64) -> TailValue {
        TailValue {
            value: self.ln_at_least(trials, p, q, x).exp(),
            regime: Regime::Poisson,
        }
    }

    fn ln_at_least(&self, trials: u64, p: f64, q: f64, x: u64) -> f64 {
        match trivial(trials, p, q, x) {
            Some(v) => v.ln(),
            None => ln_poisson_at_least(trials as f64 * p, x),
        }
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SaddlePoint;

impl TailMethod for SaddlePoint {
    fn name(&self) -> &'static str {
        "saddlepoint"
    }

    fn at_least(&self, trials: u64, p: f64, q: f64, x: u64) -> TailValue {
        TailValue {
            value: ln_saddlepoint_at_least(trials, p, q, x).exp(),
            regime: Regime::SaddlePoint,
        }
    }

    fn ln_at_least(&self, trials: u64, p: f64, q: f64, x: u64) -> f64 {
        ln_saddlepoint_at_least(trials, p, q, x)
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NormalApprox;

impl TailMethod for NormalApprox {
    fn name(&self) -> &'static str {
        "normal"
    }

    fn at_least(&self, trials: u64, p: f64, q: f64, x: u64) -> TailValue {
        TailValue {
            value: normal_at_least(trials, p, q, x),
            regime: Regime::Normal,
        }
    }
}

/// Regime switch: exact summation up to [`EXACT_TRIALS_LIMIT`] trials, Poisson
/// when the relevant mean count is at most [`POISSON_MEAN_LIMIT`] (on either
/// the success or the failure side), saddle point otherwise. Inside the
/// Poisson zone the saddle point still wins if its a-priori bound is smaller.
#[derive(Debug, Default, Clone, Copy)]
pub struct Auto;

impl Auto {
    pub fn regime(trials: u64, p: f64, q: f64, x: u64) -> Regime {
        if trials <= EXACT_TRIALS_LIMIT || trivial(trials, p, q, x).is_some() {
            return Regime::Exact;
        }
        let m = trials as f64;
        let poisson_bound = if m * p <= POISSON_MEAN_LIMIT {
            Some(poisson_relative_bound(trials, p, x))
        } else if m * q <= POISSON_MEAN_LIMIT {
            Some(poisson_relative_bound(trials, q, trials + 1 - x))
        } else {
            None
        };
        match poisson_bound {
            Some(b) if b <= saddlepoint_relative_bound(trials, p) => Regime::Poisson,
            _ => Regime::SaddlePoint,
        }
    }
}

impl TailMethod for Auto {
    fn name(&self) -> &'static str {
        "auto"
    }

    fn at_least(&self, trials: u64, p: f64, q: f64, x: u64) -> TailValue {
        TailValue {
            value: self.ln_at_least(trials, p, q, x).exp(),
            regime: Self::regime(trials, p, q, x),
        }
    }

    fn ln_at_least(&self, trials: u64, p: f64, q: f64, x: u64) -> f64 {
        match Self::regime(trials, p, q, x) {
            Regime::Exact => ln_exact_at_least(trials, p, q, x),
            Regime::Poisson => {
                let m = trials as f64;
                if m * p <= POISSON_MEAN_LIMIT {
                    PoissonApprox.ln_at_least(trials, p, q, x)
                } else {
                    // few failures: P(X >= x) = 1 - P(failures >= M - x + 1)
                    (-ln_poisson_at_least(m * q, trials - x + 1).exp()).ln_1p()
                }
            }
            Regime::SaddlePoint | Regime::Normal => ln_saddlepoint_at_least(trials, p, q, x),
        }
    }
}

pub fn tail_methods() -> Registry<dyn TailMethod> {
    Registry::<dyn TailMethod>::new("tail method")
        .with("auto", "exact / Poisson / saddle-point regime switch", |_| {
            Ok(Arc::new(Auto))
        })
        .with("exact", "log-space summation of exact point masses", |_| {
            Ok(Arc::new(ExactSummation))
        })
        .with("poisson", "Poisson approximation with mean M p", |_| {
            Ok(Arc::new(PoissonApprox))
        })
        .with("saddlepoint", "Lugannani-Rice with lattice correction", |_| {
            Ok(Arc::new(SaddlePoint))
        })
        .with("normal", "continuity-corrected normal approximation", |_| {
            Ok(Arc::new(NormalApprox))
        })
}

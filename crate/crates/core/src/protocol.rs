//! Protocol parameters, code geometry, per-window click probabilities and
//! communication-cost accounting.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Relative slack used when rounding quantities such as `n / c` up to an
/// integer, so that `1.44e6 / 0.24` is 6 000 000 and not 6 000 001.
const CEIL_SLACK: f64 = 1e-9;

pub(crate) fn tolerant_ceil(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= CEIL_SLACK * x.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

/// Raw fiber-channel block as it appears in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub distance_km: f64,
    pub loss_db_per_km: f64,
    pub detector_efficiency: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            distance_km: 0.0,
            loss_db_per_km: 0.2,
            detector_efficiency: 0.2,
        }
    }
}

/// Validated one-way channel from a sender to the referee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelModel {
    distance_km: f64,
    loss_db_per_km: f64,
    detector_efficiency: f64,
}

impl ChannelModel {
    pub fn new(distance_km: f64, loss_db_per_km: f64, detector_efficiency: f64) -> Result<Self> {
        ensure(distance_km.is_finite() && distance_km >= 0.0, "distance_km", || {
            format!("must be a finite value >= 0, got {distance_km}")
        })?;
        ensure(
            loss_db_per_km.is_finite() && loss_db_per_km >= 0.0,
            "loss_db_per_km",
            || format!("must be a finite value >= 0, got {loss_db_per_km}"),
        )?;
        ensure(
            detector_efficiency > 0.0 && detector_efficiency <= 1.0,
            "detector_efficiency",
            || format!("must lie in (0, 1], got {detector_efficiency}"),
        )?;
        Ok(Self {
            distance_km,
            loss_db_per_km,
            detector_efficiency,
        })
    }

    pub fn distance_km(&self) -> f64 {
        self.distance_km
    }

    pub fn loss_db_per_km(&self) -> f64 {
        self.loss_db_per_km
    }

    pub fn detector_efficiency(&self) -> f64 {
        self.detector_efficiency
    }

    pub fn with_distance(&self, distance_km: f64) -> Result<Self> {
        Self::new(distance_km, self.loss_db_per_km, self.detector_efficiency)
    }

    /// End-to-end transmittance: fiber attenuation times detector efficiency.
    pub fn transmittance(&self) -> f64 {
        transmittance(self)
    }
}

impl TryFrom<ChannelConfig> for ChannelModel {
    type Error = Error;

    fn try_from(c: ChannelConfig) -> Result<Self> {
        Self::new(c.distance_km, c.loss_db_per_km, c.detector_efficiency)
    }
}

pub fn transmittance(ch: &ChannelModel) -> f64 {
    ch.detector_efficiency * 10f64.powf(-ch.loss_db_per_km * ch.distance_km / 10.0)
}

/// Raw protocol block as it appears in configuration files. Defaults are the
/// single-photon-avalanche-diode operating point of the standard sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    /// Input length in bits. Accepted as a float so `1e8` is valid; must be integral.
    pub n: f64,
    pub c: f64,
    pub delta: f64,
    pub k: u32,
    /// Total mean photon number per party.
    pub mu: f64,
    pub nu: f64,
    /// Dark-count probability per detection window.
    pub p_dark: f64,
    pub epsilon: f64,
    /// Detection-window duration; only used to convert dark-count rates.
    pub window_ns: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            n: 1e6,
            c: 0.24,
            delta: 0.22,
            k: 1,
            mu: 0.0,
            nu: 0.97,
            p_dark: 1e-6,
            epsilon: 1e-5,
            window_ns: 1.0,
        }
    }
}

/// The full validated parameter vector driving the analytics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProtocolParams {
    n: u64,
    c: f64,
    delta: f64,
    k: u32,
    mu: f64,
    nu: f64,
    p_dark: f64,
    epsilon: f64,
    window_ns: f64,
    channel: ChannelModel,
}

impl ProtocolParams {
    pub fn new(cfg: &ProtocolConfig, channel: ChannelModel) -> Result<Self> {
        ensure(
            cfg.n.is_finite() && cfg.n >= 1.0 && cfg.n <= u64::MAX as f64 && cfg.n.fract() == 0.0,
            "n",
            || format!("must be an integer >= 1, got {}", cfg.n),
        )?;
        let p = Self {
            n: cfg.n as u64,
            c: cfg.c,
            delta: cfg.delta,
            k: cfg.k,
            mu: cfg.mu,
            nu: cfg.nu,
            p_dark: cfg.p_dark,
            epsilon: cfg.epsilon,
            window_ns: cfg.window_ns,
            channel,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        ensure(self.n >= 1, "n", || "must be >= 1".into())?;
        ensure(self.c > 0.0 && self.c < 1.0, "c", || {
            format!("code rate must lie in (0, 1), got {}", self.c)
        })?;
        ensure(self.delta > 0.0 && self.delta < 0.5, "delta", || {
            format!("relative distance must lie in (0, 0.5), got {}", self.delta)
        })?;
        ensure(self.k >= 1, "k", || "channel count must be >= 1".into())?;
        ensure(self.mu.is_finite() && self.mu >= 0.0, "mu", || {
            format!("mean photon number must be finite and >= 0, got {}", self.mu)
        })?;
        // At or below one half the different-input distribution no longer sits
        // above the equal-input one and the threshold rule inverts.
        ensure(self.nu > 0.5 && self.nu <= 1.0, "nu", || {
            format!("visibility must lie in (0.5, 1], got {}", self.nu)
        })?;
        ensure(self.p_dark >= 0.0 && self.p_dark < 1.0, "p_dark", || {
            format!("dark-count probability must lie in [0, 1), got {}", self.p_dark)
        })?;
        ensure(self.epsilon > 0.0 && self.epsilon <= 1.0, "epsilon", || {
            format!("tolerable error must lie in (0, 1], got {}", self.epsilon)
        })?;
        ensure(self.window_ns.is_finite() && self.window_ns > 0.0, "window_ns", || {
            format!("detection window must be > 0, got {}", self.window_ns)
        })?;
        Ok(())
    }

    pub fn n(&self) -> u64 {
        self.n
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn k(&self) -> u32 {
        self.k
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn nu(&self) -> f64 {
        self.nu
    }
    pub fn p_dark(&self) -> f64 {
        self.p_dark
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    pub fn window_ns(&self) -> f64 {
        self.window_ns
    }
    pub fn channel(&self) -> &ChannelModel {
        &self.channel
    }
    pub fn eta(&self) -> f64 {
        self.channel.transmittance()
    }

    pub fn geometry(&self) -> Result<CodeGeometry> {
        derive_code_geometry(self.n, self.c, self.k, self.delta)
    }

    pub fn with_mu(mut self, mu: f64) -> Result<Self> {
        self.mu = mu;
        self.validate().map(|_| self)
    }

    pub fn with_k(mut self, k: u32) -> Result<Self> {
        self.k = k;
        self.validate().map(|_| self)
    }

    pub fn with_n(mut self, n: u64) -> Result<Self> {
        self.n = n;
        self.validate().map(|_| self)
    }

    pub fn with_nu(mut self, nu: f64) -> Result<Self> {
        self.nu = nu;
        self.validate().map(|_| self)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        self.epsilon = epsilon;
        self.validate().map(|_| self)
    }

    pub fn with_p_dark(mut self, p_dark: f64) -> Result<Self> {
        self.p_dark = p_dark;
        self.validate().map(|_| self)
    }

    pub fn with_channel(mut self, channel: ChannelModel) -> Self {
        self.channel = channel;
        self
    }

    pub fn to_config(&self) -> ProtocolConfig {
        ProtocolConfig {
            n: self.n as f64,
            c: self.c,
            delta: self.delta,
            k: self.k,
            mu: self.mu,
            nu: self.nu,
            p_dark: self.p_dark,
            epsilon: self.epsilon,
            window_ns: self.window_ns,
        }
    }
}

/// Converts a detector dark-count rate into a per-window probability.
pub fn dark_probability_from_rate(rate_hz: f64, window_ns: f64) -> f64 {
    -(-rate_hz * window_ns * 1e-9).exp_m1()
}

/// Codeword length, composite-pulse count and worst-case codeword distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CodeGeometry {
    /// Codeword length in bits.
    pub m: u64,
    /// Number of wavelength-composite pulses per party.
    pub pulses: u64,
    /// Minimum number of differing codeword bits for unequal inputs.
    pub d_min: u64,
}

pub fn derive_code_geometry(n: u64, c: f64, k: u32, delta: f64) -> Result<CodeGeometry> {
    ensure(n >= 1, "n", || "must be >= 1".into())?;
    ensure(c > 0.0 && c < 1.0, "c", || {
        format!("code rate must lie in (0, 1), got {c}")
    })?;
    ensure(k >= 1, "k", || "channel count must be >= 1".into())?;
    ensure(delta > 0.0 && delta < 0.5, "delta", || {
        format!("relative distance must lie in (0, 0.5), got {delta}")
    })?;
    let m = tolerant_ceil(n as f64 / c);
    ensure(m < u64::MAX as f64, "n", || "codeword length overflows".into())?;
    let m = m as u64;
    let k = k as u64;
    let pulses = m / k + u64::from(!m.is_multiple_of(k));
    let d_min = (tolerant_ceil(delta * m as f64) as u64).clamp(1, m);
    Ok(CodeGeometry { m, pulses, d_min })
}

/// Effective per-party mean photon number for asymmetric senders.
pub fn effective_mu(mu_a: f64, mu_b: f64) -> f64 {
    0.5 * (mu_a + mu_b)
}

/// `1 - exp(-x)` without cancellation for small `x`.
pub(crate) fn one_minus_exp_neg(x: f64) -> f64 {
    -(-x).exp_m1()
}

/// D1 click probabilities per composite pulse for equal and worst-case
/// different inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClickProbabilities {
    pub equal: f64,
    pub diff: f64,
}

/// Click probabilities from raw ingredients; `mu` is the per-party mean,
/// `eta` the transmittance and `pulses` the composite-pulse count.
pub fn click_probabilities(nu: f64, delta: f64, p_dark: f64, mu: f64, eta: f64, pulses: u64) -> ClickProbabilities {
    let signal = one_minus_exp_neg(2.0 * mu * eta / pulses as f64);
    let equal = (1.0 - nu) * signal + p_dark;
    let diff = (delta * nu + (1.0 - delta) * (1.0 - nu)) * signal + p_dark;
    ClickProbabilities {
        equal: equal.clamp(0.0, 1.0),
        diff: diff.clamp(0.0, 1.0),
    }
}

fn checked_pulses(g: &CodeGeometry) -> Result<u64> {
    if g.pulses == 0 {
        Err(Error::invalid("pulses", "composite pulse count must be > 0"))
    } else {
        Ok(g.pulses)
    }
}

pub fn click_prob_equal(p: &ProtocolParams, g: &CodeGeometry) -> Result<f64> {
    let m = checked_pulses(g)?;
    Ok(click_probabilities(p.nu, p.delta, p.p_dark, p.mu, p.eta(), m).equal)
}

pub fn click_prob_diff(p: &ProtocolParams, g: &CodeGeometry) -> Result<f64> {
    let m = checked_pulses(g)?;
    Ok(click_probabilities(p.nu, p.delta, p.p_dark, p.mu, p.eta(), m).diff)
}

/// Visibility and transmittance that reproduce measured per-pulse D1 rates
/// under the click model, for a known mean photon number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InferredChannel {
    pub nu: f64,
    pub eta: f64,
    /// `1 - exp(-2 mu eta / M)`.
    pub signal: f64,
}

pub fn infer_from_rates(
    rate_equal: f64,
    rate_diff: f64,
    delta: f64,
    p_dark: f64,
    mu: f64,
    pulses: u64,
) -> Result<InferredChannel> {
    ensure(rate_equal > p_dark, "rate_equal", || {
        format!("must exceed the dark-count probability {p_dark}, got {rate_equal}")
    })?;
    ensure(rate_diff > rate_equal, "rate_diff", || {
        format!("must exceed the equal-input rate {rate_equal}, got {rate_diff}")
    })?;
    ensure(mu > 0.0, "mu", || "must be > 0".into())?;
    ensure(pulses > 0, "pulses", || "must be > 0".into())?;
    let a = rate_equal - p_dark;
    let b = rate_diff - p_dark;
    // b = delta*s + (1 - 2 delta) * a with a = (1 - nu) * s
    let signal = (b - (1.0 - 2.0 * delta) * a) / delta;
    ensure(signal > 0.0 && signal < 1.0, "rate_diff", || {
        format!("rates imply a signal probability of {signal}, outside (0, 1)")
    })?;
    let nu = 1.0 - a / signal;
    ensure(nu > 0.5 && nu <= 1.0, "rate_equal", || {
        format!("rates imply visibility {nu}, outside (0.5, 1]")
    })?;
    let eta = -(-signal).ln_1p() * pulses as f64 / (2.0 * mu);
    Ok(InferredChannel { nu, eta, signal })
}

/// Communication cost of one party's fingerprint of mean `mu` spread over `m` modes.
pub fn communication_cost_single(mu: f64, m: u64) -> Result<f64> {
    ensure(mu.is_finite() && mu >= 0.0, "mu", || {
        format!("must be finite and >= 0, got {mu}")
    })?;
    ensure(m >= 1, "m", || "must be >= 1".into())?;
    ensure(mu <= m as f64, "mu", || {
        format!("{mu} photons over {m} modes exceeds one photon per mode")
    })?;
    if mu == 0.0 {
        return Ok(0.0);
    }
    Ok(mu * ((m as f64 / mu).log2() + std::f64::consts::LOG2_E))
}

/// Total communication `Q` of both fingerprints, in qubits.
pub fn communication_cost(mu_a: f64, mu_b: f64, m: u64) -> Result<f64> {
    Ok(communication_cost_single(mu_a, m)? + communication_cost_single(mu_b, m)?)
}

/// Cost ratios against the best-known classical protocol and the
/// single-channel optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CommunicationCost {
    pub q_bits: f64,
    pub gamma_c: f64,
    pub gamma_q: f64,
}

pub fn gamma_ratios(q: f64, n: u64, q_cqf_opt: f64) -> Result<(f64, f64)> {
    ensure(q.is_finite() && q > 0.0, "q", || {
        format!("communication must be > 0, got {q}")
    })?;
    let gamma_c = crate::baselines::classical_best_known(n) / q;
    Ok((gamma_c, q_cqf_opt / q))
}

impl CommunicationCost {
    pub fn new(q_bits: f64, n: u64, q_cqf_opt: f64) -> Result<Self> {
        let (gamma_c, gamma_q) = gamma_ratios(q_bits, n, q_cqf_opt)?;
        Ok(Self {
            q_bits,
            gamma_c,
            gamma_q,
        })
    }
}

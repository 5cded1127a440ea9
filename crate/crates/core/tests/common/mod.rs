//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

/// Natural log of a big integer; `-inf` for zero.
pub fn ln_big(x: &BigUint) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let bits = x.bits();
    let shift = bits.saturating_sub(64);
    let top = (x >> shift).to_u64().unwrap() as f64;
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

/// Binomial law with dyadic success probability `a / 2^e`, evaluated in exact
/// integer arithmetic: every mass is `N_j / 2^(e M)`.
pub struct DyadicBinomial {
    pub trials: u64,
    pub a: u64,
    pub e: u32,
}

impl DyadicBinomial {
    pub fn p(&self) -> f64 {
        self.a as f64 / (1u64 << self.e) as f64
    }

    fn ln_scale(&self) -> f64 {
        self.e as f64 * self.trials as f64 * std::f64::consts::LN_2
    }

    /// Visits `(j, N_j)` for `j = 0..=M` in order.
    pub fn for_each_mass(&self, mut f: impl FnMut(u64, &BigUint)) {
        let mut it = self.masses();
        for j in 0..=self.trials {
            f(j, it.next().unwrap());
        }
    }

    /// Streams the integer masses `N_j`.
    pub fn masses(&self) -> Masses {
        let d = 1u64 << self.e;
        Masses {
            trials: self.trials,
            a: self.a,
            b: d - self.a,
            j: 0,
            n: BigUint::zero(),
        }
    }

    /// `(ln P(X > t), ln P(X < t), ln P(X = t))`.
    pub fn ln_tails(&self, t: u64) -> (f64, f64, f64) {
        let mut below = BigUint::zero();
        let mut above = BigUint::zero();
        let mut at = BigUint::zero();
        self.for_each_mass(|j, n| {
            if j < t {
                below += n;
            } else if j > t {
                above += n;
            } else {
                at = n.clone();
            }
        });
        let s = self.ln_scale();
        (ln_big(&above) - s, ln_big(&below) - s, ln_big(&at) - s)
    }

    /// `P(X >= t)` for every `t in 0..=M` as exact-then-rounded values.
    pub fn at_least_all(&self) -> Vec<f64> {
        let total = BigUint::one() << (self.e as u64 * self.trials);
        let s = self.ln_scale();
        let mut prefix = BigUint::zero();
        let mut out = Vec::with_capacity(self.trials as usize + 1);
        self.for_each_mass(|_, n| {
            out.push((ln_big(&(&total - &prefix)) - s).exp());
            prefix += n;
        });
        out
    }

    /// `P(X < t)` for every `t in 0..=M`.
    pub fn below_all(&self) -> Vec<f64> {
        let s = self.ln_scale();
        let mut prefix = BigUint::zero();
        let mut out = Vec::with_capacity(self.trials as usize + 1);
        self.for_each_mass(|_, n| {
            out.push((ln_big(&prefix) - s).exp());
            prefix += n;
        });
        out
    }
}

pub struct Masses {
    trials: u64,
    a: u64,
    b: u64,
    j: u64,
    n: BigUint,
}

impl Masses {
    /// Next `N_j`; valid for `M + 1` calls.
    pub fn next(&mut self) -> Option<&BigUint> {
        let (m, j) = (self.trials, self.j);
        if j > m {
            return None;
        }
        self.n = if j == 0 {
            BigUint::from(self.b).pow(m as u32)
        } else if self.a == 0 || self.b == 0 {
            if self.b == 0 && j == m {
                BigUint::from(self.a).pow(m as u32)
            } else {
                BigUint::zero()
            }
        } else {
            std::mem::take(&mut self.n) * BigUint::from((m - j + 1) * self.a) / BigUint::from(j * self.b)
        };
        self.j += 1;
        Some(&self.n)
    }
}

/// Exhaustive threshold scan over exact tails: `(t, p_error)` with ties to the
/// smallest threshold.
pub fn exhaustive_threshold(equal: &DyadicBinomial, diff: &DyadicBinomial) -> (u64, f64) {
    // both laws share the denominator 2^(e M), so numerators compare exactly
    assert_eq!((equal.trials, equal.e), (diff.trials, diff.e));
    let total = BigUint::one() << (equal.e as u64 * equal.trials);
    let mut me = equal.masses();
    let mut md = diff.masses();
    let mut below_e = BigUint::zero();
    let mut below_d = BigUint::zero();
    let mut best: Option<(u64, BigUint)> = None;
    for t in 0..=equal.trials {
        let a = &total - &below_e;
        let v = if a >= below_d { a } else { below_d.clone() };
        if best.as_ref().is_none_or(|(_, b)| v < *b) {
            best = Some((t, v));
        }
        below_e += me.next().unwrap();
        below_d += md.next().unwrap();
    }
    let (t, v) = best.unwrap();
    (t, (ln_big(&v) - equal.ln_scale()).exp())
}

/// Relative difference, zero when both are zero.
pub fn rel_diff(x: f64, y: f64) -> f64 {
    if x == y {
        0.0
    } else {
        (x - y).abs() / x.abs().max(y.abs())
    }
}

//! Classical comparison curves.
//!
//! `best-known` is the fixed `32 sqrt(n)` cost of the best-known classical
//! fingerprinting protocol. The optimized classical limit is supplied as
//! configuration: the `sqrt-law` curve evaluates `coefficient * sqrt(n)` and
//! carries a provenance string recording where the coefficient came from.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::registry::Registry;

pub const BEST_KNOWN_COEFFICIENT: f64 = 32.0;

/// Cost in bits of the best-known classical protocol.
pub fn classical_best_known(n: u64) -> f64 {
    BEST_KNOWN_COEFFICIENT * (n as f64).sqrt()
}

pub trait ClassicalCurve: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn provenance(&self) -> &str;

    /// Communication in bits needed for `n`-bit inputs at error `epsilon`.
    fn evaluate(&self, n: u64, epsilon: f64) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BestKnown;

impl ClassicalCurve for BestKnown {
    fn name(&self) -> &'static str {
        "best-known"
    }

    fn provenance(&self) -> &str {
        "32 sqrt(n), best-known classical fingerprinting protocol"
    }

    fn evaluate(&self, n: u64, _epsilon: f64) -> f64 {
        classical_best_known(n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqrtLaw {
    coefficient: f64,
    provenance: String,
}

impl SqrtLaw {
    pub fn new(coefficient: f64, provenance: impl Into<String>) -> Result<Self> {
        ensure(coefficient.is_finite() && coefficient > 0.0, "coefficient", || {
            format!("must be positive and finite, got {coefficient}")
        })?;
        Ok(Self {
            coefficient,
            provenance: provenance.into(),
        })
    }

    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }
}

impl ClassicalCurve for SqrtLaw {
    fn name(&self) -> &'static str {
        "sqrt-law"
    }

    fn provenance(&self) -> &str {
        &self.provenance
    }

    fn evaluate(&self, n: u64, _epsilon: f64) -> f64 {
        self.coefficient * (n as f64).sqrt()
    }
}

/// Configuration block for the classical-limit curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurveConfig {
    pub curve: String,
    pub coefficient: f64,
    pub provenance: String,
}

pub const PLACEHOLDER_PROVENANCE: &str = "placeholder: coefficient 1.0, replace with the published classical-limit fit";

impl Default for CurveConfig {
    fn default() -> Self {
        Self {
            curve: "sqrt-law".into(),
            coefficient: 1.0,
            provenance: PLACEHOLDER_PROVENANCE.into(),
        }
    }
}

pub fn classical_curves() -> Registry<dyn ClassicalCurve, CurveConfig> {
    Registry::<dyn ClassicalCurve, CurveConfig>::new("classical curve")
        .with("best-known", "32 sqrt(n)", |_| Ok(Arc::new(BestKnown)))
        .with("sqrt-law", "coefficient * sqrt(n) with recorded provenance", |cfg| {
            Ok(Arc::new(SqrtLaw::new(cfg.coefficient, cfg.provenance.clone())?))
        })
}

pub fn build_curve(cfg: &CurveConfig) -> Result<Arc<dyn ClassicalCurve>> {
    classical_curves().build_with(&cfg.curve, cfg)
}

/// Evaluates the configured classical limit.
pub fn classical_limit(n: u64, epsilon: f64, curve: Option<&dyn ClassicalCurve>) -> Result<f64> {
    ensure(n >= 1, "n", || "must be at least 1".into())?;
    let curve = curve.ok_or(Error::UnconfiguredCurve)?;
    Ok(curve.evaluate(n, epsilon))
}

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::binom::{tail_methods, Auto, TailMethod};
use crate::decision::{threshold_searches, AutoSearch, ThresholdSearch};
use crate::error::Result;

/// Names of the numerical strategies to use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsConfig {
    pub tail_method: String,
    pub threshold_search: String,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        Self {
            tail_method: "auto".into(),
            threshold_search: "auto".into(),
        }
    }
}

/// The selected tail evaluator and threshold search.
#[derive(Debug, Clone)]
pub struct Numerics {
    pub tails: Arc<dyn TailMethod>,
    pub search: Arc<dyn ThresholdSearch>,
}

impl Numerics {
    pub fn from_config(cfg: &NumericsConfig) -> Result<Self> {
        Ok(Self {
            tails: tail_methods().build(&cfg.tail_method)?,
            search: threshold_searches().build(&cfg.threshold_search)?,
        })
    }
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            tails: Arc::new(Auto),
            search: Arc::new(AutoSearch),
        }
    }
}

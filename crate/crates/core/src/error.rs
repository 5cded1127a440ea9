use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A parameter violates its domain. `name` is the field or argument name.
    #[error("{name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unknown {family} strategy `{name}` (known: {known})")]
    UnknownStrategy {
        family: &'static str,
        name: String,
        known: String,
    },

    #[error("classical limit curve is not configured")]
    UnconfiguredCurve,

    #[error("{what} = {value} exceeds the guard of {limit}")]
    GuardExceeded { what: &'static str, value: u64, limit: u64 },

    #[error("table fixture: {0}")]
    Fixture(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

/// Rejects `value` unless `ok` holds, naming the parameter in the error.
pub(crate) fn ensure(ok: bool, name: &'static str, reason: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(name, reason()))
    }
}

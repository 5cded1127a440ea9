//! Test-only package holding the acceptance suite. It runs after the unit,
//! property and example suites of the other packages.

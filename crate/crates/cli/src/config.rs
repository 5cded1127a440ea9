//! Run configuration: TOML (or JSON) with strict key checking.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use wdmcqf_core::baselines::CurveConfig;
use wdmcqf_core::fiber::PlanOptions;
use wdmcqf_core::montecarlo::DEFAULT_MAX_PULSES;
use wdmcqf_core::protocol::{ChannelConfig, ProtocolConfig};
use wdmcqf_core::NumericsConfig;

use crate::output::Format;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub protocol: ProtocolConfig,
    pub channel: ChannelConfig,
    pub numerics: NumericsConfig,
    pub sweep: SweepConfig,
    pub montecarlo: MonteCarloConfig,
    pub fiber: FiberConfig,
    pub classical_limit: CurveConfig,
    pub table1: Table1Config,
    pub output: OutputConfig,
}

/// The n grid is either listed explicitly or log-spaced.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub n: Option<Vec<f64>>,
    pub n_min: f64,
    pub n_max: f64,
    pub n_points: usize,
    pub k: Vec<u32>,
    pub distances_km: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n: None,
            n_min: 1e5,
            n_max: 1e18,
            n_points: 20,
            k: vec![1, 2, 100, 1000],
            distances_km: vec![0.0, 20.0, 40.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioChoice {
    Equal,
    WorstCaseDifferent,
    Both,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloConfig {
    pub trials: u64,
    pub seed: u64,
    pub scenario: ScenarioChoice,
    pub sampler: String,
    pub max_pulses: u64,
    /// Fixed threshold; the analytic optimum when absent.
    pub threshold: Option<u64>,
    /// Measured per-pulse D1 rates. When both are given, visibility and
    /// transmittance are inferred from them at the configured photon number.
    pub rate_equal: Option<f64>,
    pub rate_diff: Option<f64>,
    /// Optional per-trial CSV.
    pub trials_out: Option<PathBuf>,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            seed: 0,
            scenario: ScenarioChoice::Both,
            sampler: "geometric-skip".into(),
            max_pulses: DEFAULT_MAX_PULSES,
            threshold: None,
            rate_equal: None,
            rate_diff: None,
            trials_out: None,
        }
    }
}

/// Loop geometry, channel grid and timing. Defaults are the deployed
/// six-channel layout.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FiberConfig {
    pub smf_a_km: f64,
    pub smf_b_km: f64,
    pub dcf_km: f64,
    pub smf_dispersion: f64,
    pub dcf_dispersion: f64,
    pub channels: u32,
    pub spacing_nm: f64,
    pub first_nm: f64,
    pub rep_rate_hz: f64,
    pub mod_window_ps: f64,
    pub pulse_width_ps: f64,
    pub group_delay_ps_per_km: f64,
    pub recombination_tolerance_ps: f64,
    pub trim_ps: Option<f64>,
}

impl Default for FiberConfig {
    fn default() -> Self {
        let opts = PlanOptions::default();
        Self {
            smf_a_km: 20.0,
            smf_b_km: 20.0,
            dcf_km: 6.9,
            smf_dispersion: 17.0,
            dcf_dispersion: -99.0,
            channels: 6,
            spacing_nm: 2.4,
            first_nm: 1546.0,
            rep_rate_hz: 50e6,
            mod_window_ps: 800.0,
            pulse_width_ps: opts.pulse_width_ps,
            group_delay_ps_per_km: opts.group_delay_ps_per_km,
            recombination_tolerance_ps: opts.recombination_tolerance_ps,
            trim_ps: opts.trim_ps,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Table1Config {
    /// Replacement fixture; the bundled table when absent.
    pub fixture: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub path: Option<PathBuf>,
    pub format: Option<Format>,
}

/// A configuration problem anchored to a key and, when known, a line.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub file: Option<PathBuf>,
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (&self.file, self.line) {
            (Some(file), Some(line)) => write!(f, "{}:{line}: ", file.display())?,
            (Some(file), None) => write!(f, "{}: ", file.display())?,
            _ => {}
        }
        if self.key.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "`{}`: {}", self.key, self.message)
        }
    }
}

/// Source text kept for anchoring later validation errors.
#[derive(Debug, Clone, Default)]
pub struct Source {
    pub path: Option<PathBuf>,
    pub text: String,
    pub json: bool,
}

impl Source {
    pub fn diagnostic(&self, key: &str, message: impl Into<String>) -> Diagnostic {
        Diagnostic {
            file: self.path.clone(),
            line: self.locate(key),
            key: key.to_string(),
            message: message.into(),
        }
    }

    /// 1-based line of `key` (a dotted path such as `protocol.c`).
    pub fn locate(&self, key: &str) -> Option<usize> {
        if self.text.is_empty() {
            return None;
        }
        let (section, leaf) = match key.rsplit_once('.') {
            Some((s, l)) => (s, l),
            None => ("", key),
        };
        if self.json {
            locate_json(&self.text, section, leaf)
        } else {
            locate_toml(&self.text, section, leaf)
        }
    }
}

fn locate_toml(text: &str, section: &str, leaf: &str) -> Option<usize> {
    let mut current = String::new();
    let mut section_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            current = name.trim().to_string();
            if current == section {
                section_line = Some(i + 1);
            }
            continue;
        }
        let key = line.split('=').next().unwrap_or("").trim().trim_matches('"');
        if line.contains('=') {
            let full = if current.is_empty() {
                key.to_string()
            } else {
                format!("{current}.{key}")
            };
            if full == format!("{section}.{leaf}") || (section.is_empty() && full == leaf) {
                return Some(i + 1);
            }
        }
    }
    section_line
}

fn locate_json(text: &str, section: &str, leaf: &str) -> Option<usize> {
    let needle = |k: &str| format!("\"{k}\"");
    let start = if section.is_empty() {
        0
    } else {
        text.lines()
            .position(|l| l.contains(&needle(section.rsplit('.').next().unwrap_or(section))))?
    };
    text.lines()
        .enumerate()
        .skip(start)
        .find(|(_, l)| l.contains(&needle(leaf)))
        .map(|(i, _)| i + 1)
        .or(Some(start + 1))
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Reads and parses a configuration file. JSON is recognized by extension or
/// by a leading `{`.
pub fn load(path: &Path) -> Result<(RunConfig, Source), Diagnostic> {
    let text = std::fs::read_to_string(path).map_err(|e| Diagnostic {
        file: Some(path.to_path_buf()),
        line: None,
        key: String::new(),
        message: format!("cannot read: {e}"),
    })?;
    let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) || text.trim_start().starts_with('{');
    let source = Source {
        path: Some(path.to_path_buf()),
        text,
        json,
    };
    let cfg = parse(&source)?;
    Ok((cfg, source))
}

pub fn parse(source: &Source) -> Result<RunConfig, Diagnostic> {
    let text = source.text.as_str();
    let fail = |key: String, line: Option<usize>, message: String| Diagnostic {
        file: source.path.clone(),
        line: line.or_else(|| source.locate(&key)),
        key,
        message,
    };
    if source.json {
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let key = clean_path(&e.path().to_string());
            let line = Some(e.inner().line()).filter(|&l| l > 0);
            fail(key, line, strip_position(&e.inner().to_string()))
        })?;
        Ok(cfg)
    } else {
        let de = toml::Deserializer::parse(text).map_err(|e| {
            let line = e.span().map(|s| line_of_offset(text, s.start));
            fail(String::new(), line, e.message().to_string())
        })?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let key = clean_path(&e.path().to_string());
            let line = e.inner().span().map(|s| line_of_offset(text, s.start));
            fail(key, line, e.inner().message().to_string())
        })
    }
}

/// `serde_path_to_error` renders an empty path as `.`.
fn clean_path(path: &str) -> String {
    if path == "." {
        String::new()
    } else {
        path.to_string()
    }
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toml_source(text: &str) -> Source {
        Source {
            path: None,
            text: text.into(),
            json: false,
        }
    }

    #[test]
    fn unknown_key_is_named_with_its_line() {
        let src = toml_source("[protocol]\nn = 1e6\nnuu = 0.9\n");
        let d = parse(&src).unwrap_err();
        assert_eq!(d.key, "protocol.nuu");
        assert_eq!(d.line, Some(3));
        assert!(d.message.contains("unknown field"), "{}", d.message);
    }

    #[test]
    fn wrong_type_is_anchored() {
        let src = toml_source("[sweep]\nk = [1, \"two\"]\n");
        let d = parse(&src).unwrap_err();
        assert!(d.key.starts_with("sweep.k"), "{d:?}");
        assert_eq!(d.line, Some(2));
    }

    #[test]
    fn locate_finds_keys_in_sections() {
        let src = toml_source("[protocol]\nc = 1.5\n\n[channel]\ndistance_km = 3\n");
        assert_eq!(src.locate("protocol.c"), Some(2));
        assert_eq!(src.locate("channel.distance_km"), Some(5));
        assert_eq!(src.locate("channel.loss_db_per_km"), Some(4));
    }

    #[test]
    fn json_is_accepted() {
        let src = Source {
            path: None,
            text: "{\n  \"protocol\": {\"k\": 6},\n  \"sweep\": {\"k\": []}\n}\n".into(),
            json: true,
        };
        let cfg = parse(&src).unwrap();
        assert_eq!(cfg.protocol.k, 6);
        assert!(cfg.sweep.k.is_empty());
        let bad = Source {
            text: "{\n  \"protocol\": {\n    \"kk\": 6\n  }\n}\n".into(),
            ..src
        };
        let d = parse(&bad).unwrap_err();
        assert_eq!(d.key, "protocol.kk");
        assert_eq!(d.line, Some(3));
    }
}

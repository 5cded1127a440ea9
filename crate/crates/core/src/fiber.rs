//! Dispersion timing for the Sagnac WDM layout.
//!
//! The loop runs Charlie -> SMF_A -> Alice -> DCF -> Bob -> SMF_B -> Charlie.
//! Each station's phase modulator sees two pulse trains: the one that crossed
//! the compensating fiber (channels spread by the station separation) and the
//! one straight from Charlie (spread by the single-span SMF dispersion). A
//! configurable trim delay sits in the DCF span; when it is left unset the
//! smallest collision-free trim is solved for.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

const FLOOR_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberSegment {
    pub length_km: f64,
    pub dispersion_ps_per_nm_km: f64,
}

impl FiberSegment {
    pub fn new(length_km: f64, dispersion_ps_per_nm_km: f64) -> Result<Self> {
        ensure(length_km.is_finite() && length_km >= 0.0, "length_km", || {
            format!("must be finite and >= 0, got {length_km}")
        })?;
        ensure(dispersion_ps_per_nm_km.is_finite(), "dispersion_ps_per_nm_km", || {
            "must be finite".into()
        })?;
        Ok(Self {
            length_km,
            dispersion_ps_per_nm_km,
        })
    }

    /// Group-delay spread accumulated per nm of wavelength offset.
    fn spread(&self) -> f64 {
        self.dispersion_ps_per_nm_km * self.length_km
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelGrid {
    pub count: u32,
    pub spacing_nm: f64,
    pub center_wavelengths: Vec<f64>,
}

impl ChannelGrid {
    pub fn new(count: u32, spacing_nm: f64, first_nm: f64) -> Result<Self> {
        ensure(count >= 1, "channels", || "must be >= 1".into())?;
        ensure(spacing_nm.is_finite() && spacing_nm > 0.0, "spacing_nm", || {
            format!("must be > 0, got {spacing_nm}")
        })?;
        let center_wavelengths = (0..count).map(|j| first_nm + j as f64 * spacing_nm).collect();
        Ok(Self {
            count,
            spacing_nm,
            center_wavelengths,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingPlan {
    pub rep_rate_hz: f64,
    pub mod_window_ps: f64,
}

impl TimingPlan {
    pub fn new(rep_rate_hz: f64, mod_window_ps: f64) -> Result<Self> {
        ensure(rep_rate_hz.is_finite() && rep_rate_hz > 0.0, "rep_rate_hz", || {
            format!("must be > 0, got {rep_rate_hz}")
        })?;
        ensure(
            mod_window_ps.is_finite() && mod_window_ps > 0.0,
            "mod_window_ps",
            || format!("must be > 0, got {mod_window_ps}"),
        )?;
        Ok(Self {
            rep_rate_hz,
            mod_window_ps,
        })
    }

    pub fn period_ps(&self) -> f64 {
        1e12 / self.rep_rate_hz
    }
}

/// Arrival-time difference between adjacent channels after SMF and DCF.
pub fn arrival_separation(smf: &FiberSegment, dcf: &FiberSegment, spacing_nm: f64) -> f64 {
    (spacing_nm * (smf.spread() + dcf.spread())).abs()
}

/// Residual adjacent-channel offset at the referee after the full loop.
pub fn recombination_offset(smf_a: &FiberSegment, smf_b: &FiberSegment, dcf: &FiberSegment, spacing_nm: f64) -> f64 {
    (spacing_nm * (smf_a.spread() + smf_b.spread() + dcf.spread())).abs()
}

/// Most channels whose modulation windows fit in half a repetition period.
///
/// A single channel needs only `window <= T/2`; more channels also need each
/// window to end before the next channel arrives.
pub fn max_channels(plan: &TimingPlan, separation_ps: f64) -> Result<u32> {
    ensure(
        separation_ps.is_finite() && separation_ps > 0.0,
        "separation_ps",
        || format!("must be > 0, got {separation_ps}"),
    )?;
    let half = 0.5 * plan.period_ps();
    if plan.mod_window_ps > half * (1.0 + FLOOR_SLACK) {
        return Ok(0);
    }
    let extra = ((half - plan.mod_window_ps) / separation_ps + FLOOR_SLACK)
        .floor()
        .max(0.0);
    let k = (extra as u64 + 1).min(u32::MAX as u64) as u32;
    if k >= 2 && plan.mod_window_ps > separation_ps {
        return Err(Error::invalid(
            "mod_window_ps",
            format!(
                "window {} ps overlaps the next channel {separation_ps} ps later",
                plan.mod_window_ps
            ),
        ));
    }
    Ok(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Station {
    Alice,
    Bob,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PlanFailure {
    ModulatorOverlap {
        station: Station,
        clearance_ps: f64,
        required_ps: f64,
    },
    RecombinationOffset {
        offset_ps: f64,
        tolerance_ps: f64,
    },
    CapacityExceeded {
        channels: u32,
        k_max: u32,
    },
    AdjacentWindowOverlap {
        window_ps: f64,
        separation_ps: f64,
    },
}

/// Everything the collision check needs beyond the fibers and the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlanOptions {
    pub pulse_width_ps: f64,
    pub group_delay_ps_per_km: f64,
    pub recombination_tolerance_ps: f64,
    /// Extra delay in the DCF span; `None` solves for the smallest safe value.
    pub trim_ps: Option<f64>,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            pulse_width_ps: 500.0,
            group_delay_ps_per_km: 5e6,
            recombination_tolerance_ps: 50.0,
            trim_ps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanReport {
    pub channels: u32,
    pub period_ps: f64,
    /// Adjacent-channel separation of the train that crossed the DCF, at Alice.
    pub separation_alice_ps: f64,
    /// Same at Bob.
    pub separation_bob_ps: f64,
    /// Adjacent-channel spread of the train arriving straight from Charlie, at Alice.
    pub direct_spread_alice_ps: f64,
    pub direct_spread_bob_ps: f64,
    pub recombination_offset_ps: f64,
    pub recombination_tolerance_ps: f64,
    pub k_max: u32,
    pub trim_ps: f64,
    pub trim_solved: bool,
    /// Smallest circular distance between a modulated pulse and a counter-propagating one.
    pub min_clearance_ps: f64,
    pub required_clearance_ps: f64,
    pub collision_free: bool,
    pub passed: bool,
    pub failures: Vec<PlanFailure>,
}

fn circular_distance(a: f64, period: f64) -> f64 {
    let r = a.rem_euclid(period);
    r.min(period - r)
}

/// Arrival offsets `(modulated, counter)` at one station, excluding the trim.
struct StationTrains {
    modulated: Vec<f64>,
    counter: Vec<f64>,
}

fn station_trains(
    direct: &FiberSegment,
    far: &FiberSegment,
    dcf: &FiberSegment,
    grid: &ChannelGrid,
    gd: f64,
) -> StationTrains {
    let base_mod = gd * (far.length_km + dcf.length_km);
    let base_counter = gd * direct.length_km;
    let per_nm_mod = far.spread() + dcf.spread();
    let per_nm_counter = direct.spread();
    let offsets = |base: f64, per_nm: f64| -> Vec<f64> {
        (0..grid.count)
            .map(|j| base + per_nm * grid.spacing_nm * j as f64)
            .collect()
    };
    StationTrains {
        modulated: offsets(base_mod, per_nm_mod),
        counter: offsets(base_counter, per_nm_counter),
    }
}

fn clearance(trains: &StationTrains, trim: f64, period: f64) -> f64 {
    let mut best = f64::INFINITY;
    for &a in &trains.modulated {
        for &b in &trains.counter {
            best = best.min(circular_distance(a + trim - b, period));
        }
    }
    best
}

/// Smallest trim in `[0, period)` that keeps every pair at least `need` apart.
fn solve_trim(stations: &[&StationTrains], need: f64, period: f64) -> Option<f64> {
    // forbidden open intervals of trim, folded into [0, period)
    let mut bad: Vec<(f64, f64)> = Vec::new();
    for s in stations {
        for &a in &s.modulated {
            for &b in &s.counter {
                let centre = (b - a).rem_euclid(period);
                let (lo, hi) = (centre - need, centre + need);
                if hi - lo >= period {
                    return None;
                }
                if lo < 0.0 {
                    bad.push((lo + period, period));
                    bad.push((0.0, hi));
                } else if hi > period {
                    bad.push((lo, period));
                    bad.push((0.0, hi - period));
                } else {
                    bad.push((lo, hi));
                }
            }
        }
    }
    bad.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut candidate = 0.0;
    for (lo, hi) in bad {
        let blocks = (lo < candidate && candidate < hi) || (lo == 0.0 && candidate == 0.0 && hi > 0.0);
        if blocks {
            candidate = hi;
        }
    }
    (candidate < period).then_some(candidate)
}

/// Checks a complete layout: station separations, recombination offset,
/// channel capacity, adjacent-window overlap and counter-propagating
/// collisions at both modulators.
pub fn validate_plan(
    smf_a: &FiberSegment,
    smf_b: &FiberSegment,
    dcf: &FiberSegment,
    grid: &ChannelGrid,
    plan: &TimingPlan,
    options: &PlanOptions,
) -> Result<PlanReport> {
    ensure(
        options.pulse_width_ps.is_finite() && options.pulse_width_ps >= 0.0,
        "pulse_width_ps",
        || "must be finite and >= 0".into(),
    )?;
    ensure(
        options.group_delay_ps_per_km.is_finite() && options.group_delay_ps_per_km >= 0.0,
        "group_delay_ps_per_km",
        || "must be finite and >= 0".into(),
    )?;
    ensure(
        options.recombination_tolerance_ps >= 0.0,
        "recombination_tolerance_ps",
        || "must be >= 0".into(),
    )?;
    let period = plan.period_ps();
    if let Some(t) = options.trim_ps {
        ensure(t.is_finite() && t >= 0.0, "trim_ps", || {
            format!("must be finite and >= 0, got {t}")
        })?;
    }

    let separation_alice = arrival_separation(smf_b, dcf, grid.spacing_nm);
    let separation_bob = arrival_separation(smf_a, dcf, grid.spacing_nm);
    let direct_alice = (smf_a.spread() * grid.spacing_nm).abs();
    let direct_bob = (smf_b.spread() * grid.spacing_nm).abs();
    let offset = recombination_offset(smf_a, smf_b, dcf, grid.spacing_nm);
    let mut failures = Vec::new();

    let separation = separation_alice.min(separation_bob);
    let k_max = if grid.count == 1 {
        max_channels(plan, separation.max(plan.mod_window_ps)).unwrap_or(0)
    } else if separation <= 0.0 || plan.mod_window_ps > separation {
        failures.push(PlanFailure::AdjacentWindowOverlap {
            window_ps: plan.mod_window_ps,
            separation_ps: separation,
        });
        max_channels(plan, plan.mod_window_ps).map(|_| 1).unwrap_or(0)
    } else {
        max_channels(plan, separation)?
    };
    if grid.count > k_max {
        failures.push(PlanFailure::CapacityExceeded {
            channels: grid.count,
            k_max,
        });
    }
    if offset > options.recombination_tolerance_ps {
        failures.push(PlanFailure::RecombinationOffset {
            offset_ps: offset,
            tolerance_ps: options.recombination_tolerance_ps,
        });
    }

    let gd = options.group_delay_ps_per_km;
    let alice = station_trains(smf_a, smf_b, dcf, grid, gd);
    let bob = station_trains(smf_b, smf_a, dcf, grid, gd);
    let need = 0.5 * (plan.mod_window_ps + options.pulse_width_ps);
    let (trim, solved) = match options.trim_ps {
        Some(t) => (t, false),
        None => (solve_trim(&[&alice, &bob], need, period).unwrap_or(0.0), true),
    };
    let clear_a = clearance(&alice, trim, period);
    let clear_b = clearance(&bob, trim, period);
    for (station, clear) in [(Station::Alice, clear_a), (Station::Bob, clear_b)] {
        if clear < need * (1.0 - FLOOR_SLACK) {
            failures.push(PlanFailure::ModulatorOverlap {
                station,
                clearance_ps: clear,
                required_ps: need,
            });
        }
    }
    let collision_free = !failures
        .iter()
        .any(|f| matches!(f, PlanFailure::ModulatorOverlap { .. }));

    Ok(PlanReport {
        channels: grid.count,
        period_ps: period,
        separation_alice_ps: separation_alice,
        separation_bob_ps: separation_bob,
        direct_spread_alice_ps: direct_alice,
        direct_spread_bob_ps: direct_bob,
        recombination_offset_ps: offset,
        recombination_tolerance_ps: options.recombination_tolerance_ps,
        k_max,
        trim_ps: trim,
        trim_solved: solved,
        min_clearance_ps: clear_a.min(clear_b),
        required_clearance_ps: need,
        collision_free,
        passed: failures.is_empty(),
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smf(km: f64) -> FiberSegment {
        FiberSegment::new(km, 17.0).unwrap()
    }

    fn dcf(km: f64) -> FiberSegment {
        FiberSegment::new(km, -99.0).unwrap()
    }

    #[test]
    fn separations() {
        assert!((arrival_separation(&smf(20.0), &dcf(6.9), 2.4) - 823.44).abs() < 1e-9);
        assert_eq!(arrival_separation(&smf(20.0), &dcf(6.9), 0.0), 0.0);
        assert!((arrival_separation(&smf(20.0), &dcf(0.0), 2.4) - 816.0).abs() < 1e-9);
        assert!((recombination_offset(&smf(20.0), &smf(20.0), &dcf(6.9), 2.4) - 7.44).abs() < 1e-9);
        let exact = dcf(17.0 * 40.0 / 99.0);
        assert!(recombination_offset(&smf(20.0), &smf(20.0), &exact, 2.4) < 1e-9);
    }

    #[test]
    fn capacity() {
        let plan = TimingPlan::new(50e6, 800.0).unwrap();
        assert_eq!(max_channels(&plan, 823.44).unwrap(), 12);
        let slow = TimingPlan::new(25e6, 800.0).unwrap();
        assert_eq!(max_channels(&slow, 823.44).unwrap(), 24);
        let wide = TimingPlan::new(50e6, 10_000.0).unwrap();
        assert_eq!(max_channels(&wide, 823.44).unwrap(), 1);
        let overlap = TimingPlan::new(50e6, 900.0).unwrap();
        assert!(max_channels(&overlap, 823.44).is_err());
    }

    #[test]
    fn nominal_layout_passes_with_solved_trim() {
        let grid = ChannelGrid::new(6, 2.4, 1545.0).unwrap();
        let plan = TimingPlan::new(50e6, 800.0).unwrap();
        let r = validate_plan(&smf(20.0), &smf(20.0), &dcf(6.9), &grid, &plan, &PlanOptions::default()).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.trim_solved && r.trim_ps < r.period_ps);
        assert!(r.min_clearance_ps >= r.required_clearance_ps - 1e-6);
    }

    #[test]
    fn untrimmed_nominal_layout_collides() {
        let grid = ChannelGrid::new(6, 2.4, 1545.0).unwrap();
        let plan = TimingPlan::new(50e6, 800.0).unwrap();
        let options = PlanOptions {
            trim_ps: Some(0.0),
            ..PlanOptions::default()
        };
        let r = validate_plan(&smf(20.0), &smf(20.0), &dcf(6.9), &grid, &plan, &options).unwrap();
        assert!(!r.collision_free);
    }

    #[test]
    fn thirteen_channels_exceed_capacity() {
        let grid = ChannelGrid::new(13, 2.4, 1545.0).unwrap();
        let plan = TimingPlan::new(50e6, 800.0).unwrap();
        let r = validate_plan(&smf(20.0), &smf(20.0), &dcf(6.9), &grid, &plan, &PlanOptions::default()).unwrap();
        assert!(r.failures.contains(&PlanFailure::CapacityExceeded {
            channels: 13,
            k_max: 12
        }));
    }

    #[test]
    fn trim_solver_finds_gap_after_forbidden_run() {
        let s = StationTrains {
            modulated: vec![0.0],
            counter: vec![0.0, 100.0],
        };
        // forbidden: (-10, 10) and (90, 110) folded into [0, 1000)
        assert_eq!(solve_trim(&[&s], 10.0, 1000.0), Some(10.0));
    }
}

//! One function per subcommand. Each returns the table to emit and whether
//! the run met its goal (feasible optimum, passing plan).

use wdmcqf_core::baselines::{build_curve, ClassicalCurve};
use wdmcqf_core::decision::optimal_threshold_with;
use wdmcqf_core::fiber::{validate_plan, ChannelGrid, FiberSegment, PlanFailure, PlanOptions, TimingPlan};
use wdmcqf_core::montecarlo::{click_samplers, Scenario, Simulation, TrialRecord};
use wdmcqf_core::optimizer::{log_spaced, min_mu, sweep, GridPoint, SweepRow};
use wdmcqf_core::protocol::{click_probabilities, infer_from_rates, ChannelModel, ProtocolParams};
use wdmcqf_core::{table1, Error as CoreError, Numerics};

use std::sync::Arc;

use crate::config::{RunConfig, ScenarioChoice, Source};
use crate::output::{Cell, Table};
use crate::CliError;

pub struct Report {
    pub table: Table,
    /// Extra per-trial table written next to the main output.
    pub trials: Option<(std::path::PathBuf, Table)>,
    /// `Some(reason)` when the run completed but missed its goal.
    pub failure: Option<String>,
}

impl Report {
    fn ok(table: Table) -> Self {
        Self {
            table,
            trials: None,
            failure: None,
        }
    }
}

/// Maps a core error onto a configuration key in `section`.
fn in_section<'a>(src: &'a Source, section: &'static str) -> impl Fn(CoreError) -> CliError + 'a {
    let section = section.to_string();
    move |e| match e {
        CoreError::InvalidParameter { name, reason } => {
            CliError::Config(src.diagnostic(&format!("{section}.{name}"), reason))
        }
        CoreError::UnknownStrategy { .. } | CoreError::UnconfiguredCurve | CoreError::Fixture(_) => {
            CliError::Config(src.diagnostic(&section, e.to_string()))
        }
        CoreError::GuardExceeded { .. } => CliError::Guard(e.to_string()),
    }
}

fn key<'a>(src: &'a Source, key: &'static str) -> impl Fn(CoreError) -> CliError + 'a {
    let key = key.to_string();
    move |e| match e {
        CoreError::InvalidParameter { reason, .. } => CliError::Config(src.diagnostic(&key, reason)),
        CoreError::GuardExceeded { .. } => CliError::Guard(e.to_string()),
        other => CliError::Config(src.diagnostic(&key, other.to_string())),
    }
}

fn params(cfg: &RunConfig, src: &Source) -> Result<ProtocolParams, CliError> {
    let channel = ChannelModel::try_from(cfg.channel).map_err(in_section(src, "channel"))?;
    ProtocolParams::new(&cfg.protocol, channel).map_err(in_section(src, "protocol"))
}

fn numerics(cfg: &RunConfig, src: &Source) -> Result<Numerics, CliError> {
    Numerics::from_config(&cfg.numerics).map_err(|e| {
        let field = match &e {
            CoreError::UnknownStrategy { family, .. } if family.starts_with("threshold") => "numerics.threshold_search",
            _ => "numerics.tail_method",
        };
        key(src, field)(e)
    })
}

fn curve(cfg: &RunConfig, src: &Source) -> Result<Arc<dyn ClassicalCurve>, CliError> {
    build_curve(&cfg.classical_limit).map_err(|e| match e {
        CoreError::UnknownStrategy { .. } => key(src, "classical_limit.curve")(e),
        other => in_section(src, "classical_limit")(other),
    })
}

const SWEEP_COLUMNS: [&str; 17] = [
    "n",
    "k",
    "distance_km",
    "pulses",
    "mu_star",
    "c1_threshold",
    "p_error",
    "q_bits",
    "q_bits_per_party",
    "classical_best_known",
    "classical_limit",
    "q_cqf_k1",
    "gamma_c",
    "gamma_q",
    "feasible",
    "feasible_k1",
    "regime",
];

fn sweep_cells(r: &SweepRow) -> Vec<Cell> {
    vec![
        r.n.into(),
        r.k.into(),
        r.distance_km.into(),
        r.pulses.into(),
        r.mu_star.into(),
        r.c1_threshold.into(),
        r.p_error.into(),
        r.q_bits.into(),
        r.q_bits_per_party.into(),
        r.classical_best_known.into(),
        r.classical_limit.into(),
        r.q_cqf_k1.into(),
        r.gamma_c.into(),
        r.gamma_q.into(),
        r.feasible.into(),
        r.feasible_k1.into(),
        r.regime.clone().into(),
    ]
}

pub fn optimize(cfg: &RunConfig, src: &Source) -> Result<Report, CliError> {
    let p = params(cfg, src)?;
    let numerics = numerics(cfg, src)?;
    let curve = curve(cfg, src)?;
    let g = p.geometry().map_err(in_section(src, "protocol"))?;
    let detail = min_mu(&p, &g, &numerics).map_err(in_section(src, "protocol"))?;
    let point = GridPoint {
        n: p.n(),
        k: p.k(),
        distance_km: p.channel().distance_km(),
    };
    let rows = sweep(&[point], &p, &numerics, curve.as_ref()).map_err(in_section(src, "protocol"))?;
    let r = &rows[0];

    let mut columns = SWEEP_COLUMNS.to_vec();
    columns.extend([
        "epsilon",
        "p_err_equal",
        "p_err_diff",
        "p_click_equal",
        "p_click_diff",
        "eta",
    ]);
    let mut table = Table::new(columns);
    let mut cells = sweep_cells(r);
    cells.extend([
        p.epsilon().into(),
        detail.decision.p_err_equal.into(),
        detail.decision.p_err_diff.into(),
        detail.probabilities.equal.into(),
        detail.probabilities.diff.into(),
        p.eta().into(),
    ]);
    table.push(cells);
    let failure = (!r.feasible).then(|| {
        format!(
            "no photon number up to {:.5e} meets epsilon = {:.5e}",
            r.mu_star,
            p.epsilon()
        )
    });
    Ok(Report {
        failure,
        ..Report::ok(table)
    })
}

fn sweep_grid(cfg: &RunConfig, src: &Source) -> Result<Vec<GridPoint>, CliError> {
    let s = &cfg.sweep;
    let ns: Vec<u64> = match &s.n {
        Some(list) => list
            .iter()
            .map(|&n| {
                if n >= 1.0 && n.fract() == 0.0 && n <= 1e19 {
                    Ok(n as u64)
                } else {
                    Err(CliError::Config(src.diagnostic(
                        "sweep.n",
                        format!("entries must be integers >= 1, got {n}"),
                    )))
                }
            })
            .collect::<Result<_, _>>()?,
        None => log_spaced(s.n_min, s.n_max, s.n_points).map_err(key(src, "sweep.n_min"))?,
    };
    let mut grid = Vec::new();
    for &d in &s.distances_km {
        for &n in &ns {
            for &k in &s.k {
                grid.push(GridPoint { n, k, distance_km: d });
            }
        }
    }
    Ok(grid)
}

pub fn sweep_cmd(cfg: &RunConfig, src: &Source) -> Result<Report, CliError> {
    let p = params(cfg, src)?;
    let numerics = numerics(cfg, src)?;
    let curve = curve(cfg, src)?;
    let grid = sweep_grid(cfg, src)?;
    let rows = sweep(&grid, &p, &numerics, curve.as_ref()).map_err(in_section(src, "sweep"))?;
    let mut table = Table::new(SWEEP_COLUMNS.to_vec());
    for r in &rows {
        table.push(sweep_cells(r));
    }
    Ok(Report::ok(table))
}

pub fn simulate(cfg: &RunConfig, src: &Source) -> Result<Report, CliError> {
    let mc = &cfg.montecarlo;
    if mc.trials == 0 {
        return Err(CliError::Config(src.diagnostic("montecarlo.trials", "must be >= 1")));
    }
    let mut p = params(cfg, src)?;
    let numerics = numerics(cfg, src)?;
    let sampler = click_samplers()
        .build(&mc.sampler)
        .map_err(key(src, "montecarlo.sampler"))?;
    let g = p.geometry().map_err(in_section(src, "protocol"))?;
    if g.pulses > mc.max_pulses {
        return Err(CliError::Guard(format!(
            "composite pulses = {} exceeds the guard of {} (montecarlo.max_pulses)",
            g.pulses, mc.max_pulses
        )));
    }

    if p.mu() == 0.0 {
        let opt = min_mu(&p, &g, &numerics).map_err(in_section(src, "protocol"))?;
        p = p.with_mu(opt.mu_star).map_err(in_section(src, "protocol"))?;
    }
    match (mc.rate_equal, mc.rate_diff) {
        (Some(re), Some(rd)) => {
            let inferred = infer_from_rates(re, rd, p.delta(), p.p_dark(), p.mu(), g.pulses)
                .map_err(in_section(src, "montecarlo"))?;
            let channel = ChannelModel::new(0.0, p.channel().loss_db_per_km(), inferred.eta)
                .map_err(key(src, "montecarlo.rate_diff"))?;
            p = p
                .with_nu(inferred.nu)
                .map_err(key(src, "montecarlo.rate_equal"))?
                .with_channel(channel);
        }
        (None, None) => {}
        _ => {
            return Err(CliError::Config(src.diagnostic(
                "montecarlo.rate_equal",
                "rate_equal and rate_diff must be given together",
            )))
        }
    }
    let threshold = match mc.threshold {
        Some(t) => t,
        None => {
            let pr = click_probabilities(p.nu(), p.delta(), p.p_dark(), p.mu(), p.eta(), g.pulses);
            optimal_threshold_with(
                g.pulses,
                pr.equal,
                pr.diff,
                numerics.search.as_ref(),
                numerics.tails.as_ref(),
            )
            .map_err(in_section(src, "protocol"))?
            .c1_threshold
        }
    };
    let sim = Simulation::new(p, threshold, sampler, mc.max_pulses).map_err(in_section(src, "montecarlo"))?;
    let scenarios: &[Scenario] = match mc.scenario {
        ScenarioChoice::Equal => &[Scenario::Equal],
        ScenarioChoice::WorstCaseDifferent => &[Scenario::WorstCaseDifferent],
        ScenarioChoice::Both => &[Scenario::Equal, Scenario::WorstCaseDifferent],
    };

    let mut table = Table::new(vec![
        "scenario",
        "trials",
        "seed",
        "threshold",
        "pulses",
        "mu",
        "nu",
        "eta",
        "mean_c1",
        "var_c1",
        "mean_c0",
        "errors",
        "empirical_error_rate",
        "ci_low",
        "ci_high",
        "analytic_error",
        "click_rate_d1",
        "predicted_click_rate_d1",
    ]);
    table.header.push(("seed", mc.seed.into()));
    table.header.push(("sampler", mc.sampler.as_str().into()));
    let mut per_trial = Table::new(vec!["scenario", "index", "c0", "c1", "verdict", "seed"]);
    for &scenario in scenarios {
        let records = sim
            .run_trials(scenario, mc.trials, mc.seed)
            .map_err(in_section(src, "montecarlo"))?;
        let s = sim
            .summarize(scenario, &records, mc.seed, &numerics)
            .map_err(in_section(src, "montecarlo"))?;
        table.push(vec![
            scenario.to_string().into(),
            s.trials.into(),
            s.seed.into(),
            s.threshold.into(),
            s.pulses.into(),
            p.mu().into(),
            p.nu().into(),
            p.eta().into(),
            s.mean_c1.into(),
            s.var_c1.into(),
            s.mean_c0.into(),
            s.errors.into(),
            s.empirical_error_rate.into(),
            s.ci_low.into(),
            s.ci_high.into(),
            s.analytic_error.into(),
            s.click_rate_d1.into(),
            s.predicted_click_rate_d1.into(),
        ]);
        if mc.trials_out.is_some() {
            per_trial.rows.extend(records.iter().map(|r: &TrialRecord| {
                vec![
                    scenario.to_string().into(),
                    r.index.into(),
                    r.c0.into(),
                    r.c1.into(),
                    r.verdict.to_string().into(),
                    r.seed.into(),
                ]
            }));
        }
    }
    per_trial.header.push(("seed", mc.seed.into()));
    Ok(Report {
        trials: mc.trials_out.clone().map(|path| (path, per_trial)),
        ..Report::ok(table)
    })
}

fn describe(f: &PlanFailure) -> String {
    match f {
        PlanFailure::ModulatorOverlap {
            station,
            clearance_ps,
            required_ps,
        } => format!("modulator overlap at {station:?}: clearance {clearance_ps:.5e} ps < {required_ps:.5e} ps"),
        PlanFailure::RecombinationOffset {
            offset_ps,
            tolerance_ps,
        } => {
            format!("recombination offset {offset_ps:.5e} ps exceeds {tolerance_ps:.5e} ps")
        }
        PlanFailure::CapacityExceeded { channels, k_max } => {
            format!("{channels} channels exceed the capacity of {k_max}")
        }
        PlanFailure::AdjacentWindowOverlap {
            window_ps,
            separation_ps,
        } => format!("window {window_ps:.5e} ps overlaps channel separation {separation_ps:.5e} ps"),
    }
}

pub fn plan_fiber(cfg: &RunConfig, src: &Source) -> Result<Report, CliError> {
    let f = &cfg.fiber;
    let smf_a = FiberSegment::new(f.smf_a_km, f.smf_dispersion).map_err(key(src, "fiber.smf_a_km"))?;
    let smf_b = FiberSegment::new(f.smf_b_km, f.smf_dispersion).map_err(key(src, "fiber.smf_b_km"))?;
    let dcf = FiberSegment::new(f.dcf_km, f.dcf_dispersion).map_err(key(src, "fiber.dcf_km"))?;
    let grid = ChannelGrid::new(f.channels, f.spacing_nm, f.first_nm).map_err(in_section(src, "fiber"))?;
    let plan = TimingPlan::new(f.rep_rate_hz, f.mod_window_ps).map_err(in_section(src, "fiber"))?;
    let options = PlanOptions {
        pulse_width_ps: f.pulse_width_ps,
        group_delay_ps_per_km: f.group_delay_ps_per_km,
        recombination_tolerance_ps: f.recombination_tolerance_ps,
        trim_ps: f.trim_ps,
    };
    let r = validate_plan(&smf_a, &smf_b, &dcf, &grid, &plan, &options).map_err(in_section(src, "fiber"))?;
    let failures: Vec<String> = r.failures.iter().map(describe).collect();
    let mut table = Table::new(vec![
        "channels",
        "period_ps",
        "separation_alice_ps",
        "separation_bob_ps",
        "direct_spread_alice_ps",
        "direct_spread_bob_ps",
        "recombination_offset_ps",
        "recombination_tolerance_ps",
        "k_max",
        "trim_ps",
        "trim_solved",
        "min_clearance_ps",
        "required_clearance_ps",
        "collision_free",
        "passed",
        "failures",
    ]);
    table.push(vec![
        r.channels.into(),
        r.period_ps.into(),
        r.separation_alice_ps.into(),
        r.separation_bob_ps.into(),
        r.direct_spread_alice_ps.into(),
        r.direct_spread_bob_ps.into(),
        r.recombination_offset_ps.into(),
        r.recombination_tolerance_ps.into(),
        r.k_max.into(),
        r.trim_ps.into(),
        r.trim_solved.into(),
        r.min_clearance_ps.into(),
        r.required_clearance_ps.into(),
        r.collision_free.into(),
        r.passed.into(),
        failures.join("; ").into(),
    ]);
    let failure = (!r.passed).then(|| format!("plan failed: {}", failures.join("; ")));
    Ok(Report {
        failure,
        ..Report::ok(table)
    })
}

pub fn table1_cmd(cfg: &RunConfig, src: &Source) -> Result<Report, CliError> {
    let rows = match &cfg.table1.fixture {
        Some(path) => table1::load(path).map_err(key(src, "table1.fixture"))?,
        None => table1::bundled(),
    };
    let checks = table1::check_all(&rows).map_err(key(src, "table1.fixture"))?;
    let mut table = Table::new(vec![
        "row",
        "n",
        "m",
        "pulses",
        "pulses_match",
        "q_published",
        "q_recomputed",
        "q_rel_dev",
        "q_ok",
        "gamma_c_published",
        "gamma_c_err",
        "gamma_c_recomputed",
        "gamma_c_ok",
        "threshold_published",
        "threshold_from_rates",
        "p_error_from_rates",
    ]);
    for c in &checks {
        table.push(vec![
            (c.row as u64).into(),
            c.n.into(),
            c.m.into(),
            c.pulses.into(),
            c.pulses_match.into(),
            c.q_published.into(),
            c.q_recomputed.into(),
            c.q_rel_dev.into(),
            c.q_ok.into(),
            c.gamma_c_published.into(),
            c.gamma_c_err.into(),
            c.gamma_c_recomputed.into(),
            c.gamma_c_ok.into(),
            c.threshold_published.into(),
            c.threshold_from_rates.into(),
            c.p_error_from_rates.into(),
        ]);
    }
    Ok(Report::ok(table))
}

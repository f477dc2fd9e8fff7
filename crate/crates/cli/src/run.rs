//! Study orchestration. Every command produces one or more tables.

use std::path::PathBuf;

use qclock::analytics::analytic_report;
use qclock::clock::{
    calibrate_config, locked_spectrum, run_ensemble, stability, ClockConfig, ClockRunResult, LoopMode,
};
use qclock::csv::{fmt_f64, Table};
use qclock::noise::{periodogram, Spectrum};
use qclock::optimize::{optimize_stability, OptimizerSettings};
use qclock::protocol::Protocol;
use qclock::rng::derive;

use crate::spec::{Command, ExperimentSpec};

/// Where a table goes: the main output, or a named side file next to it.
pub enum Target {
    Main,
    Side(PathBuf),
}

pub type Outputs = Vec<(Target, Table)>;

const STABILITY_COLUMNS: [&str; 7] = [
    "N",
    "gammaT",
    "protocol",
    "branch",
    "sigma_gamma",
    "stderr",
    "fringe_hops",
];

pub fn run_experiment(spec: &ExperimentSpec) -> qclock::Result<Outputs> {
    let mut outputs = match spec.command {
        Command::Simulate => simulate(spec)?,
        Command::SweepRamsey => {
            let points: Vec<(usize, f64)> = spec.gamma_grid.iter().map(|g| (spec.atom_count, *g)).collect();
            vec![(Target::Main, sweep(spec, &points)?)]
        }
        Command::SweepN => {
            let points: Vec<(usize, f64)> = spec.n_grid.iter().map(|n| (*n, spec.gamma_t)).collect();
            vec![(Target::Main, sweep(spec, &points)?)]
        }
        Command::Spectrum => vec![(Target::Main, spectrum(spec)?)],
        Command::Analytic => vec![(Target::Main, analytic(spec)?)],
        Command::Optimize => vec![(Target::Main, optimize(spec)?)],
    };
    for (_, t) in &mut outputs {
        let mut meta = Table::default();
        spec.describe(&mut meta);
        meta.meta.append(&mut t.meta);
        t.meta = meta.meta;
    }
    Ok(outputs)
}

fn calibrated(spec: &ExperimentSpec, mut c: ClockConfig) -> qclock::Result<ClockConfig> {
    calibrate_config(&mut c, spec.pilot_runs)?;
    Ok(c)
}

fn stability_row(c: &ClockConfig, runs: &[ClockRunResult], spec: &ExperimentSpec) -> qclock::Result<Vec<String>> {
    let s = stability(runs, spec.method)?;
    let hops: usize = runs.iter().map(|r| r.fringe_hop_count).sum();
    Ok(vec![
        c.atom_count.to_string(),
        fmt_f64(c.gamma_t),
        c.protocol.to_string(),
        c.branch.to_string(),
        fmt_f64(s.sigma),
        fmt_f64(s.stderr),
        hops.to_string(),
    ])
}

fn push_schedule_meta(t: &mut Table, c: &ClockConfig) {
    let join = |v: &[f64]| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ");
    let p = c.protocol;
    t.push_meta(format!("{p}.kappa"), fmt_f64(c.schedule.kappa));
    t.push_meta(format!("{p}.omegas"), join(&c.schedule.omegas));
    t.push_meta(format!("{p}.betas"), join(&c.schedule.betas));
}

fn simulate(spec: &ExperimentSpec) -> qclock::Result<Outputs> {
    let mut table = Table::new(STABILITY_COLUMNS);
    let mut outputs = Vec::new();
    for &p in &spec.protocols {
        let c = calibrated(spec, spec.clock_config(p, spec.atom_count, spec.gamma_t)?)?;
        let runs = run_ensemble(&c, spec.replicates)?;
        table.push_row(stability_row(&c, &runs, spec)?);
        push_schedule_meta(&mut table, &c);
        if spec.trace {
            let out = spec.out.as_ref().expect("validated");
            let mut name = out.file_stem().unwrap_or_default().to_os_string();
            name.push(format!(".{p}.trace.csv"));
            outputs.push((Target::Side(out.with_file_name(name)), runs[0].to_table()));
        }
    }
    outputs.insert(0, (Target::Main, table));
    Ok(outputs)
}

fn sweep(spec: &ExperimentSpec, points: &[(usize, f64)]) -> qclock::Result<Table> {
    let mut table = Table::new(STABILITY_COLUMNS);
    let mut index = 0u64;
    for &p in &spec.protocols {
        for &(n, g) in points {
            let mut c = spec.clock_config(p, n, g)?;
            c.seed = derive(spec.seed, index);
            index += 1;
            let c = calibrated(spec, c)?;
            let runs = run_ensemble(&c, spec.replicates)?;
            log::info!("{p} N={n} gammaT={g}");
            table.push_row(stability_row(&c, &runs, spec)?);
        }
    }
    Ok(table)
}

fn spectrum(spec: &ExperimentSpec) -> qclock::Result<Table> {
    let mut table = Table::new(["protocol", "frequency", "S", "S_free"]);
    for &p in &spec.protocols {
        let mut c = spec.clock_config(p, spec.atom_count, spec.gamma_t)?;
        if spec.loop_mode.is_none() {
            c.loop_mode = LoopMode::Closed;
        }
        let c = calibrated(spec, c)?;
        let runs = run_ensemble(&c, spec.replicates)?;
        let locked = Spectrum::average(&runs.iter().map(locked_spectrum).collect::<qclock::Result<Vec<_>>>()?)?;
        let free = Spectrum::average(
            &runs
                .iter()
                .map(|r| periodogram(&r.free_phases, 1.0))
                .collect::<qclock::Result<Vec<_>>>()?,
        )?;
        for ((f, s), sf) in locked.frequency.iter().zip(&locked.power).zip(&free.power) {
            table.push_row(vec![p.to_string(), fmt_f64(*f), fmt_f64(*s), fmt_f64(*sf)]);
        }
        push_schedule_meta(&mut table, &c);
    }
    Ok(table)
}

fn analytic(spec: &ExperimentSpec) -> qclock::Result<Table> {
    let s = spec.schedule(Protocol::Adaptive, spec.atom_count)?;
    let r = analytic_report(spec.atom_count, s.kappa, s.n(), &s.omegas, spec.gamma_t)?;
    let mut t = r.to_table();
    t.push_meta("adaptive.kappa", fmt_f64(s.kappa));
    t.push_meta("adaptive.stages", s.n());
    Ok(t)
}

fn optimize(spec: &ExperimentSpec) -> qclock::Result<Table> {
    let mut table = Table::new([
        "protocol",
        "kappa",
        "n",
        "gammaT",
        "omega_scale",
        "sigma_gamma",
        "stderr",
        "start_sigma_gamma",
        "evaluations",
        "exhausted",
    ]);
    for &p in &spec.protocols {
        let base = spec.clock_config(p, spec.atom_count, spec.gamma_t)?;
        let settings = OptimizerSettings {
            budget: spec.budget,
            runs: spec.replicates,
            cycles: spec.cycles,
            pilot_runs: spec.pilot_runs,
            ..Default::default()
        };
        let r = optimize_stability(&base, &settings)?;
        log::info!("{p}:\n{}", r.summary());
        let join = |v: &[f64]| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ");
        table.push_meta(format!("{p}.omegas"), join(&r.omegas));
        table.push_meta(format!("{p}.betas"), join(&r.betas));
        table.push_row(vec![
            p.to_string(),
            fmt_f64(r.kappa),
            r.n.to_string(),
            fmt_f64(r.gamma_t),
            fmt_f64(r.omega_scale),
            fmt_f64(r.sigma.sigma),
            fmt_f64(r.sigma.stderr),
            fmt_f64(r.start_sigma.sigma),
            r.evaluations.to_string(),
            r.exhausted.to_string(),
        ]);
    }
    Ok(table)
}

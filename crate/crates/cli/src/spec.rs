//! Experiment specification: raw key/value parsing and validation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use qclock::clock::{ClockConfig, LoopMode, StabilityMethod};
use qclock::csv::{fmt_f64, Table};
use qclock::noise::NoiseKind;
use qclock::protocol::{default_schedule, schedule_with, Branch, ConventionalEstimator, MeasurementSchedule, Protocol};

/// Raw settings before validation, in insertion-independent key order.
pub type RawSpec = BTreeMap<String, String>;

const KEYS: &[&str] = &[
    "command",
    "seed",
    "workers",
    "out",
    "N",
    "gammaT",
    "alpha",
    "protocol",
    "branch",
    "noise",
    "l",
    "replicates",
    "kappa",
    "n",
    "omega_scale",
    "decades_below",
    "loop",
    "estimator",
    "method",
    "pilot_runs",
    "budget",
    "N_grid",
    "gammaT_grid",
    "trace",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    SweepRamsey,
    SweepN,
    Spectrum,
    Analytic,
    Optimize,
}

impl FromStr for Command {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "simulate" => Command::Simulate,
            "sweep-ramsey" => Command::SweepRamsey,
            "sweep-N" | "sweep-n" => Command::SweepN,
            "spectrum" => Command::Spectrum,
            "analytic" => Command::Analytic,
            "optimize" => Command::Optimize,
            other => return Err(format!("unknown command '{other}'")),
        })
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Simulate => "simulate",
            Command::SweepRamsey => "sweep-ramsey",
            Command::SweepN => "sweep-N",
            Command::Spectrum => "spectrum",
            Command::Analytic => "analytic",
            Command::Optimize => "optimize",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub command: Command,
    pub seed: u64,
    pub workers: usize,
    pub out: Option<PathBuf>,
    pub atom_count: usize,
    pub gamma_t: f64,
    pub alpha: f64,
    pub protocols: Vec<Protocol>,
    pub branch: Branch,
    pub noise: NoiseKind,
    pub cycles: usize,
    pub replicates: usize,
    /// `None` selects the default schedule (adaptive) or `sqrt(N)` (conventional).
    pub kappa: Option<f64>,
    pub stages: Option<usize>,
    pub omega_scale: f64,
    pub decades_below: u32,
    pub loop_mode: Option<LoopMode>,
    pub estimator: ConventionalEstimator,
    pub method: StabilityMethod,
    pub pilot_runs: usize,
    pub budget: usize,
    pub n_grid: Vec<usize>,
    pub gamma_grid: Vec<f64>,
    pub trace: bool,
}

/// Parse JSON (an object) or `key=value` lines into raw settings.
pub fn parse_raw(text: &str) -> Result<RawSpec, Vec<String>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| vec![format!("invalid JSON: {e}")])?;
        let obj = value
            .as_object()
            .ok_or_else(|| vec!["config must be a JSON object".to_string()])?;
        let mut raw = RawSpec::new();
        let mut errs = Vec::new();
        for (k, v) in obj {
            match json_scalar(v) {
                Some(s) => {
                    raw.insert(k.clone(), s);
                }
                None => errs.push(format!("{k}: unsupported value {v}")),
            }
        }
        return if errs.is_empty() { Ok(raw) } else { Err(errs) };
    }
    let mut raw = RawSpec::new();
    let mut errs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => {
                raw.insert(k.trim().to_string(), v.trim().to_string());
            }
            None => errs.push(format!("line {}: expected key=value", i + 1)),
        }
    }
    if errs.is_empty() {
        Ok(raw)
    } else {
        Err(errs)
    }
}

fn json_scalar(v: &serde_json::Value) -> Option<String> {
    use serde_json::Value;
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Array(items) => items
            .iter()
            .map(json_scalar)
            .collect::<Option<Vec<_>>>()
            .map(|v| v.join(",")),
        _ => None,
    }
}

struct Reader<'a> {
    raw: &'a RawSpec,
    errs: Vec<String>,
}

impl Reader<'_> {
    fn get<T: FromStr>(&mut self, key: &str, default: T) -> T
    where
        T::Err: fmt::Display,
    {
        self.opt(key).unwrap_or(default)
    }

    fn opt<T: FromStr>(&mut self, key: &str) -> Option<T>
    where
        T::Err: fmt::Display,
    {
        let s = self.raw.get(key)?;
        match s.parse() {
            Ok(v) => Some(v),
            Err(e) => {
                self.errs.push(format!("{key}: cannot parse '{s}': {e}"));
                None
            }
        }
    }

    fn list<T: FromStr>(&mut self, key: &str, default: Vec<T>) -> Vec<T>
    where
        T::Err: fmt::Display,
    {
        let Some(s) = self.raw.get(key) else { return default };
        let mut out = Vec::new();
        for item in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
            match item.parse() {
                Ok(v) => out.push(v),
                Err(e) => self.errs.push(format!("{key}: cannot parse '{item}': {e}")),
            }
        }
        out
    }
}

fn parse_loop(s: &str) -> Result<LoopMode, String> {
    match s {
        "closed" => Ok(LoopMode::Closed),
        "uncorrelated" => Ok(LoopMode::Uncorrelated),
        other => Err(format!("unknown loop mode '{other}'")),
    }
}

fn parse_method(s: &str) -> Result<StabilityMethod, String> {
    match s {
        "cycle-residuals" => Ok(StabilityMethod::CycleResiduals),
        "run-sums" => Ok(StabilityMethod::RunSums),
        other => Err(format!("unknown stability method '{other}'")),
    }
}

fn parse_protocols(s: &str) -> Result<Vec<Protocol>, String> {
    match s {
        "both" => Ok(vec![Protocol::Adaptive, Protocol::Conventional]),
        other => other
            .split(',')
            .map(|p| p.trim().parse::<Protocol>().map_err(|e| e.to_string()))
            .collect(),
    }
}

fn check_atom_count(errs: &mut Vec<String>, key: &str, n: usize) {
    if n < 2 || !n.is_multiple_of(2) {
        errs.push(format!("{key} must be even and >= 2, got {n}"));
    }
}

/// Validate raw settings, reporting every violation.
pub fn validate_spec(raw: &RawSpec) -> Result<ExperimentSpec, Vec<String>> {
    let mut r = Reader { raw, errs: Vec::new() };
    for k in raw.keys() {
        if !KEYS.contains(&k.as_str()) {
            r.errs.push(format!("unknown key '{k}'"));
        }
    }
    let command = match raw.get("command") {
        Some(c) => c.parse::<Command>().map_err(|e| r.errs.push(e)).ok(),
        None => {
            r.errs.push("missing command".to_string());
            None
        }
    };
    let seed: Option<u64> = r.opt("seed");
    if !raw.contains_key("seed") {
        r.errs.push("missing seed".to_string());
    }
    let workers = r.get("workers", 1usize);
    let atom_count = r.get("N", 1000usize);
    let gamma_t = r.get("gammaT", 0.1f64);
    let alpha = r.get("alpha", qclock::clock::DEFAULT_ALPHA);
    let protocols = match raw.get("protocol") {
        Some(s) => parse_protocols(s)
            .map_err(|e| r.errs.push(format!("protocol: {e}")))
            .unwrap_or_default(),
        None => vec![Protocol::Adaptive],
    };
    let branch = r.get("branch", Branch::Gaussian);
    let noise = r.get("noise", NoiseKind::White);
    let cycles = r.get("l", 10_000usize);
    let replicates = r.get("replicates", 1usize);
    let kappa: Option<f64> = r.opt("kappa");
    let stages: Option<usize> = r.opt("n");
    let omega_scale = r.get("omega_scale", 1.0f64);
    let decades_below = r.get("decades_below", qclock::noise::DEFAULT_DECADES_BELOW);
    let loop_mode = raw
        .get("loop")
        .and_then(|s| parse_loop(s).map_err(|e| r.errs.push(e)).ok());
    let estimator = r.get("estimator", ConventionalEstimator::default());
    let method = raw
        .get("method")
        .map(|s| parse_method(s).map_err(|e| r.errs.push(e)).ok())
        .unwrap_or(Some(StabilityMethod::CycleResiduals));
    let pilot_runs = r.get("pilot_runs", 4000usize);
    let budget = r.get("budget", 120usize);
    let n_grid = r.list("N_grid", vec![100usize, 1000, 10_000]);
    let gamma_grid = r.list("gammaT_grid", (1..=10).map(|i| 0.05 * i as f64).collect());
    let trace = r.get("trace", false);
    let out = raw.get("out").map(PathBuf::from);

    let mut errs = r.errs;
    if !(alpha > 0.0 && alpha < 1.0) {
        errs.push("alpha must lie in (0,1)".to_string());
    }
    check_atom_count(&mut errs, "N", atom_count);
    for n in &n_grid {
        check_atom_count(&mut errs, "N_grid entry", *n);
    }
    if !(gamma_t > 0.0 && gamma_t.is_finite()) {
        errs.push("gammaT must be positive".to_string());
    }
    if gamma_grid.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
        errs.push("gammaT_grid entries must be positive".to_string());
    }
    if n_grid.is_empty() {
        errs.push("N_grid must not be empty".to_string());
    }
    if gamma_grid.is_empty() {
        errs.push("gammaT_grid must not be empty".to_string());
    }
    if protocols.is_empty() && raw.contains_key("protocol") && errs.iter().all(|e| !e.starts_with("protocol")) {
        errs.push("protocol must not be empty".to_string());
    }
    if cycles < 100 {
        errs.push("l must be >= 100".to_string());
    }
    if replicates == 0 {
        errs.push("replicates must be >= 1".to_string());
    }
    if pilot_runs < 1000 {
        errs.push("pilot_runs must be >= 1000".to_string());
    }
    if workers == 0 {
        errs.push("workers must be >= 1".to_string());
    }
    if kappa.is_some_and(|k| !(k > 0.0)) {
        errs.push("kappa must be positive".to_string());
    }
    if stages == Some(0) {
        errs.push("n must be >= 1".to_string());
    }
    if !(omega_scale > 0.0) {
        errs.push("omega_scale must be positive".to_string());
    }
    if noise == NoiseKind::Pink && loop_mode == Some(LoopMode::Uncorrelated) {
        errs.push("pink noise requires the closed loop".to_string());
    }
    if trace && out.is_none() {
        errs.push("trace requires out".to_string());
    }
    if !errs.is_empty() {
        return Err(errs);
    }
    Ok(ExperimentSpec {
        command: command.expect("checked above"),
        seed: seed.expect("checked above"),
        workers,
        out,
        atom_count,
        gamma_t,
        alpha,
        protocols,
        branch,
        noise,
        cycles,
        replicates,
        kappa,
        stages,
        omega_scale,
        decades_below,
        loop_mode,
        estimator,
        method: method.expect("checked above"),
        pilot_runs,
        budget,
        n_grid,
        gamma_grid,
        trace,
    })
}

impl ExperimentSpec {
    /// Clock configuration for one protocol at the given `N` and `gammaT`.
    pub fn clock_config(&self, protocol: Protocol, atom_count: usize, gamma_t: f64) -> qclock::Result<ClockConfig> {
        let mut c = ClockConfig::new(atom_count, protocol, self.noise, gamma_t)?;
        c.schedule = self.schedule(protocol, atom_count)?;
        c.branch = self.branch;
        c.estimator = self.estimator;
        c.decades_below = self.decades_below;
        c.alpha = self.alpha;
        c.cycles = self.cycles;
        c.seed = self.seed;
        if let Some(m) = self.loop_mode {
            c.loop_mode = m;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn schedule(&self, protocol: Protocol, atom_count: usize) -> qclock::Result<MeasurementSchedule> {
        match protocol {
            Protocol::Conventional => {
                MeasurementSchedule::conventional(self.kappa.unwrap_or((atom_count as f64).sqrt()), 1.0)
            }
            Protocol::Adaptive => {
                let d = default_schedule(atom_count)?;
                if self.kappa.is_none() && self.stages.is_none() && self.omega_scale == 1.0 {
                    return Ok(d);
                }
                let kappa = self.kappa.unwrap_or(d.kappa);
                let n = self.stages.unwrap_or(d.n());
                Ok(schedule_with(atom_count, kappa, n, self.omega_scale))
            }
        }
    }

    /// Metadata lines recording the resolved specification.
    pub fn describe(&self, t: &mut Table) {
        let join = |v: Vec<String>| v.join(" ");
        t.push_meta("command", self.command);
        t.push_meta("seed", self.seed);
        t.push_meta("N", self.atom_count);
        t.push_meta("gammaT", fmt_f64(self.gamma_t));
        t.push_meta("alpha", fmt_f64(self.alpha));
        t.push_meta("protocol", join(self.protocols.iter().map(|p| p.to_string()).collect()));
        t.push_meta("branch", self.branch);
        t.push_meta("noise", self.noise);
        t.push_meta("decades_below", self.decades_below);
        t.push_meta("l", self.cycles);
        t.push_meta("replicates", self.replicates);
        t.push_meta("kappa", self.kappa.map_or("default".to_string(), fmt_f64));
        t.push_meta("n", self.stages.map_or("default".to_string(), |n| n.to_string()));
        t.push_meta("omega_scale", fmt_f64(self.omega_scale));
        t.push_meta(
            "loop",
            self.loop_mode.map_or("default", |m| {
                if m == LoopMode::Closed {
                    "closed"
                } else {
                    "uncorrelated"
                }
            }),
        );
        t.push_meta("estimator", self.estimator);
        t.push_meta(
            "method",
            match self.method {
                StabilityMethod::CycleResiduals => "cycle-residuals",
                StabilityMethod::RunSums => "run-sums",
            },
        );
        t.push_meta("pilot_runs", self.pilot_runs);
        match self.command {
            Command::SweepN => t.push_meta("N_grid", join(self.n_grid.iter().map(|n| n.to_string()).collect())),
            Command::SweepRamsey => t.push_meta(
                "gammaT_grid",
                join(self.gamma_grid.iter().map(|g| fmt_f64(*g)).collect()),
            ),
            Command::Optimize => t.push_meta("budget", self.budget),
            _ => {}
        }
    }
}

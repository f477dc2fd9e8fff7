//! Command-line driver for clock simulations, sweeps and analytic reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod run;
mod spec;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;

use run::{run_experiment, Target};
use spec::{parse_raw, validate_spec, RawSpec};

#[derive(Parser, Debug)]
#[command(
    name = "qclock",
    version,
    about = "Atomic clock simulations with squeezed states and adaptive measurements"
)]
struct Args {
    /// simulate, sweep-ramsey, sweep-N, spectrum, analytic or optimize.
    #[arg(long)]
    command: Option<String>,
    /// JSON or key=value configuration file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    /// Output CSV path; stdout when absent.
    #[arg(long)]
    out: Option<String>,
    #[arg(long = "N")]
    n: Option<String>,
    #[arg(long = "gammaT")]
    gamma_t: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// adaptive, conventional or both.
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    branch: Option<String>,
    #[arg(long)]
    noise: Option<String>,
    /// Cycles per run.
    #[arg(long = "l")]
    cycles: Option<String>,
    #[arg(long)]
    replicates: Option<String>,
    /// Extra key=value settings (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Args {
    fn overrides(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("command", &self.command),
            ("seed", &self.seed),
            ("workers", &self.workers),
            ("out", &self.out),
            ("N", &self.n),
            ("gammaT", &self.gamma_t),
            ("alpha", &self.alpha),
            ("protocol", &self.protocol),
            ("branch", &self.branch),
            ("noise", &self.noise),
            ("l", &self.cycles),
            ("replicates", &self.replicates),
        ]
    }
}

fn resolve(args: &Args) -> Result<RawSpec, Vec<String>> {
    let mut raw = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| vec![format!("cannot read {}: {e}", path.display())])?;
            parse_raw(&text)?
        }
        None => RawSpec::new(),
    };
    let mut errs = Vec::new();
    for kv in &args.set {
        match kv.split_once('=') {
            Some((k, v)) => {
                raw.insert(k.trim().to_string(), v.trim().to_string());
            }
            None => errs.push(format!("--set expects KEY=VALUE, got '{kv}'")),
        }
    }
    for (key, value) in args.overrides() {
        if let Some(v) = value {
            raw.insert(key.to_string(), v.clone());
        }
    }
    if errs.is_empty() {
        Ok(raw)
    } else {
        Err(errs)
    }
}

fn fail(reasons: &[String]) -> ExitCode {
    eprintln!("error: {}", reasons.join("; "));
    ExitCode::from(2)
}

fn write_file(path: &Path, text: &str) -> std::io::Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    f.sync_all()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let spec = match resolve(&args).and_then(|raw| validate_spec(&raw)) {
        Ok(s) => s,
        Err(errs) => return fail(&errs),
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(spec.workers).build() {
        Ok(p) => p,
        Err(e) => return fail(&[e.to_string()]),
    };
    let outputs = match pool.install(|| run_experiment(&spec)) {
        Ok(o) => o,
        Err(e) => return fail(&[e.to_string()]),
    };

    let mut written: Vec<PathBuf> = Vec::new();
    for (target, table) in &outputs {
        let text = table.to_csv_string();
        let path = match (target, &spec.out) {
            (Target::Main, None) => {
                print!("{text}");
                continue;
            }
            (Target::Main, Some(p)) => p.clone(),
            (Target::Side(p), _) => p.clone(),
        };
        if let Err(e) = write_file(&path, &text) {
            let _ = fs::remove_file(&path);
            for p in &written {
                let _ = fs::remove_file(p);
            }
            return fail(&[format!("cannot write {}: {e}", path.display())]);
        }
        written.push(path);
    }
    ExitCode::SUCCESS
}

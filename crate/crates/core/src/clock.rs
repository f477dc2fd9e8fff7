//! Closed-loop clock operation and long-term stability.
//!
//! Each cycle the LO accrues a phase, one interrogation estimates it, and the
//! LO frequency is corrected by `-alpha * estimate / T`. Internally `T = 1`
//! and the carrier `omega = 1`, so stabilities come out in units of
//! `sqrt(gamma / (tau omega^2))`.

use rand::Rng;
use rayon::prelude::*;

use crate::csv::{fmt_f64, Table};
use crate::error::{domain, Error, Result};
use crate::measurement::calibrate_betas;
use crate::noise::{
    gen_white_trace, periodogram, pink_increments_with_history, NoiseKind, Spectrum, DEFAULT_DECADES_BELOW,
};
use crate::protocol::{default_schedule, Branch, ConventionalEstimator, Interrogator, MeasurementSchedule, Protocol};
use crate::rng::{derive, stream};

/// How successive cycles are coupled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LoopMode {
    /// `alpha << 1` limit: each cycle sees the free-running increment and
    /// corrections are recorded but not fed back.
    Uncorrelated,
    /// Full feedback loop.
    Closed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClockConfig {
    pub atom_count: usize,
    pub schedule: MeasurementSchedule,
    pub protocol: Protocol,
    pub estimator: ConventionalEstimator,
    pub branch: Branch,
    pub noise: NoiseKind,
    pub decades_below: u32,
    pub gamma_t: f64,
    pub alpha: f64,
    pub cycles: usize,
    pub seed: u64,
    pub loop_mode: LoopMode,
}

/// Default feedback gain.
pub const DEFAULT_ALPHA: f64 = 0.1;

impl ClockConfig {
    /// Defaults: the default schedule (adaptive) or an uncorrelated state
    /// with unit gain (conventional), Gaussian branch, `alpha = 0.1`,
    /// `l = 10^4`, uncorrelated mode for white noise and the closed loop for
    /// pink noise.
    pub fn new(atom_count: usize, protocol: Protocol, noise: NoiseKind, gamma_t: f64) -> Result<Self> {
        let schedule = match protocol {
            Protocol::Adaptive => default_schedule(atom_count)?,
            Protocol::Conventional => MeasurementSchedule::conventional((atom_count as f64).sqrt(), 1.0)?,
        };
        let cfg = Self {
            atom_count,
            schedule,
            protocol,
            estimator: ConventionalEstimator::default(),
            branch: Branch::Gaussian,
            noise,
            decades_below: DEFAULT_DECADES_BELOW,
            gamma_t,
            alpha: DEFAULT_ALPHA,
            cycles: 10_000,
            seed: 0,
            loop_mode: match noise {
                NoiseKind::White => LoopMode::Uncorrelated,
                NoiseKind::Pink => LoopMode::Closed,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.atom_count < 2 || !self.atom_count.is_multiple_of(2) {
            errs.push(format!("N must be even and >= 2, got {}", self.atom_count));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            errs.push(format!("alpha must lie in (0,1), got {}", self.alpha));
        }
        if !(self.gamma_t > 0.0) || !self.gamma_t.is_finite() {
            errs.push(format!("gammaT must be positive, got {}", self.gamma_t));
        }
        if self.cycles < 100 {
            errs.push(format!("l must be >= 100, got {}", self.cycles));
        }
        if self.decades_below < 2 {
            errs.push(format!("decades_below must be >= 2, got {}", self.decades_below));
        }
        if self.noise == NoiseKind::Pink && self.loop_mode == LoopMode::Uncorrelated {
            errs.push("pink noise requires the closed loop".to_string());
        }
        if self.protocol == Protocol::Conventional && !self.schedule.omegas.is_empty() {
            errs.push("conventional protocol takes no weak measurements".to_string());
        }
        if let Err(e) = self.schedule.validate() {
            errs.push(e.to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(domain(errs.join("; ")))
        }
    }

    pub fn interrogator(&self) -> Result<Interrogator> {
        match self.protocol {
            Protocol::Adaptive => Interrogator::adaptive(self.atom_count, self.schedule.clone(), self.branch),
            Protocol::Conventional => Interrogator::conventional(
                self.atom_count,
                self.schedule.kappa,
                self.schedule.betas[0],
                self.branch,
                self.estimator,
            ),
        }
    }

    /// Metadata lines describing the configuration.
    pub fn describe(&self, table: &mut Table) {
        table.push_meta("N", self.atom_count);
        table.push_meta("protocol", self.protocol);
        table.push_meta("estimator", self.estimator);
        table.push_meta("branch", self.branch);
        table.push_meta("noise", self.noise);
        table.push_meta("decades_below", self.decades_below);
        table.push_meta("gammaT", fmt_f64(self.gamma_t));
        table.push_meta("alpha", fmt_f64(self.alpha));
        table.push_meta("l", self.cycles);
        table.push_meta("seed", self.seed);
        table.push_meta("loop", format!("{:?}", self.loop_mode).to_lowercase());
        table.push_meta("kappa", fmt_f64(self.schedule.kappa));
        let join = |v: &[f64]| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ");
        table.push_meta("omegas", join(&self.schedule.omegas));
        table.push_meta("betas", join(&self.schedule.betas));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClockRunResult {
    /// Free-running increments `dphi_0(t_k)`.
    pub free_phases: Vec<f64>,
    /// Accrued phases `dphi(t_k)` seen by the atoms.
    pub true_phases: Vec<f64>,
    pub estimates: Vec<f64>,
    /// Frequency corrections `-alpha * estimate / T`.
    pub corrections: Vec<f64>,
    /// Correction phase already present at the first recorded cycle.
    pub initial_correction: f64,
    pub final_correction: f64,
    /// `(sum dphi - final_correction) / tau`.
    pub mean_offset: f64,
    /// `sqrt(<(dphi - estimate)^2> / gammaT)` over the cycles of this run.
    pub sigma_gamma: f64,
    pub fringe_hop_count: usize,
    pub gamma_t: f64,
    pub alpha: f64,
}

impl ClockRunResult {
    pub fn cycles(&self) -> usize {
        self.true_phases.len()
    }

    /// `dphi(t_k) - estimate(t_k)`.
    pub fn residuals(&self) -> impl Iterator<Item = f64> + '_ {
        self.true_phases.iter().zip(&self.estimates).map(|(p, e)| p - e)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["cycle", "free_phase", "true_phase", "estimate", "correction"])
            .with_meta("final_correction", fmt_f64(self.final_correction))
            .with_meta("mean_offset", fmt_f64(self.mean_offset))
            .with_meta("sigma_gamma", fmt_f64(self.sigma_gamma))
            .with_meta("fringe_hops", self.fringe_hop_count);
        for k in 0..self.cycles() {
            t.push_row(vec![
                (k + 1).to_string(),
                fmt_f64(self.free_phases[k]),
                fmt_f64(self.true_phases[k]),
                fmt_f64(self.estimates[k]),
                fmt_f64(self.corrections[k]),
            ]);
        }
        t
    }
}

/// `sum_i ((1-a)^(l-i) e_i + sum_{j<i} a (1-a)^(l-i) e_j)`, in one pass.
pub fn final_phase_correction(estimates: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(domain(format!("alpha must lie in (0,1), got {alpha}")));
    }
    Ok(final_correction_unchecked(estimates, alpha))
}

fn final_correction_unchecked(estimates: &[f64], alpha: f64) -> f64 {
    let total: f64 = estimates.iter().sum();
    let mut suffix = 0.0;
    let mut weight = 1.0;
    let mut acc = 0.0;
    for e in estimates.iter().rev() {
        suffix += e;
        let prefix = total - suffix;
        acc += weight * (e + alpha * prefix);
        weight *= 1.0 - alpha;
    }
    acc
}

/// Run one clock of `config.cycles` cycles. Gains are taken from the
/// schedule as given.
pub fn run_clock<R: Rng + ?Sized>(config: &ClockConfig, rng: &mut R) -> Result<ClockRunResult> {
    config.validate()?;
    run_inner(config, config.alpha, rng)
}

/// Closed loop with `alpha = 0`: the LO is never corrected.
pub fn run_open_loop<R: Rng + ?Sized>(config: &ClockConfig, rng: &mut R) -> Result<ClockRunResult> {
    let mut c = config.clone();
    c.loop_mode = LoopMode::Closed;
    c.alpha = 0.5;
    c.validate()?;
    c.alpha = 0.0;
    run_inner(&c, 0.0, rng)
}

fn run_inner<R: Rng + ?Sized>(config: &ClockConfig, alpha: f64, rng: &mut R) -> Result<ClockRunResult> {
    let interrogator = config.interrogator()?;
    let l = config.cycles;
    let (free, mut correction) = match config.noise {
        NoiseKind::White => (gen_white_trace(config.gamma_t, l, rng)?.increments, 0.0),
        NoiseKind::Pink => {
            let all = pink_increments_with_history(config.gamma_t, l, config.decades_below, rng)?;
            // The loop is taken to be locked before the first recorded cycle:
            // run the ideal-estimate recursion over the synthesized history.
            let split = all.len() - l;
            let mut c = 0.0;
            if config.loop_mode == LoopMode::Closed {
                for p in &all[..split] {
                    c += alpha * (p - c);
                }
            }
            (all[split..].to_vec(), c)
        }
    };
    let initial_correction = correction;
    let mut true_phases = Vec::with_capacity(l);
    let mut estimates = Vec::with_capacity(l);
    let mut corrections = Vec::with_capacity(l);
    let mut hops = 0;
    for &p0 in &free {
        let phase = match config.loop_mode {
            LoopMode::Closed => p0 - correction,
            LoopMode::Uncorrelated => p0,
        };
        let residual = interrogator.residual(phase, rng);
        let e = phase - residual;
        if residual.abs() > std::f64::consts::FRAC_PI_2 {
            hops += 1;
        }
        correction += alpha * e;
        true_phases.push(phase);
        estimates.push(e);
        corrections.push(-alpha * e);
    }
    let final_correction = final_correction_unchecked(&estimates, alpha);
    let tau = l as f64;
    let mean_offset = (true_phases.iter().sum::<f64>() - final_correction) / tau;
    let mean_sq = true_phases
        .iter()
        .zip(&estimates)
        .map(|(p, e)| (p - e) * (p - e))
        .sum::<f64>()
        / tau;
    Ok(ClockRunResult {
        free_phases: free,
        true_phases,
        estimates,
        corrections,
        initial_correction,
        final_correction,
        mean_offset,
        sigma_gamma: (mean_sq / config.gamma_t).sqrt(),
        fringe_hop_count: hops,
        gamma_t: config.gamma_t,
        alpha,
    })
}

/// Independent runs on streams `(config.seed, 0..runs)`.
pub fn run_ensemble(config: &ClockConfig, runs: usize) -> Result<Vec<ClockRunResult>> {
    config.validate()?;
    (0..runs as u64)
        .into_par_iter()
        .map(|r| run_clock(config, &mut stream(config.seed, r)))
        .collect()
}

/// How the ensemble average `<(sum (dphi - estimate))^2>` is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilityMethod {
    /// Square of each run's summed residual, averaged over runs.
    RunSums,
    /// `l` times the mean squared per-cycle residual, pooled over runs.
    /// Exact when cycle residuals are uncorrelated.
    CycleResiduals,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stability {
    pub sigma: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// `sigma_gamma = sqrt(<(sum (dphi - estimate))^2> / (l gammaT))`.
pub fn stability(results: &[ClockRunResult], method: StabilityMethod) -> Result<Stability> {
    let first = results.first().ok_or_else(|| Error::Length("empty ensemble".into()))?;
    let gt = first.gamma_t;
    let l = first.cycles();
    if results.iter().any(|r| r.cycles() != l || r.gamma_t != gt) {
        return Err(Error::Mismatch("runs differ in length or gammaT".into()));
    }
    let samples: Vec<f64> = match method {
        StabilityMethod::RunSums => results
            .iter()
            .map(|r| {
                let s: f64 = r.residuals().sum();
                s * s / (l as f64 * gt)
            })
            .collect(),
        StabilityMethod::CycleResiduals => results.iter().flat_map(|r| r.residuals().map(|x| x * x / gt)).collect(),
    };
    Ok(from_squared_samples(&samples))
}

/// `sqrt(mean)` of nonnegative samples with a delta-method standard error.
pub fn from_squared_samples(samples: &[f64]) -> Stability {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        f64::NAN
    };
    let sigma = mean.sqrt();
    let se_mean = (var / n).sqrt();
    let stderr = if sigma > 0.0 { se_mean / (2.0 * sigma) } else { 0.0 };
    Stability {
        sigma,
        stderr,
        samples: samples.len(),
    }
}

/// Periodogram of the locked frequency series `dphi(t_k) / T`.
pub fn locked_spectrum(result: &ClockRunResult) -> Result<Spectrum> {
    if result.cycles() < 1 << 10 {
        return Err(Error::Length(format!(
            "locked spectrum needs l >= 1024, got {}",
            result.cycles()
        )));
    }
    periodogram(&result.true_phases, 1.0)
}

/// Prior phase variance used to calibrate the gains.
///
/// White noise: `gammaT` in the uncorrelated mode, and the stationary
/// variance `gammaT * 2 / (2 - alpha)` of the locked phase in the closed loop.
/// Pink noise has no closed form; see [`calibrate_config`].
pub fn calibration_phase_variance(config: &ClockConfig) -> f64 {
    match (config.noise, config.loop_mode) {
        (NoiseKind::White, LoopMode::Uncorrelated) => config.gamma_t,
        _ => config.gamma_t * 2.0 / (2.0 - config.alpha),
    }
}

/// Calibrate the gains of `config` in place.
///
/// For pink noise the prior variance is measured from short closed-loop
/// pilot runs with provisionally calibrated gains, then the gains are fitted
/// again at that variance.
pub fn calibrate_config(config: &mut ClockConfig, pilot_runs: usize) -> Result<()> {
    config.validate()?;
    let seed = derive(config.seed, 0xCA11);
    let fit =
        |cfg: &ClockConfig, v: f64| -> Result<Vec<f64>> { calibrate_betas(&cfg.interrogator()?, v, pilot_runs, seed) };
    let v = calibration_phase_variance(config);
    config.schedule.betas = fit(config, v)?;
    if config.noise == NoiseKind::Pink {
        let mut pilot = config.clone();
        pilot.cycles = config.cycles.min(4096);
        pilot.seed = derive(config.seed, 0x9110);
        let runs = run_ensemble(&pilot, 4)?;
        let count: usize = runs.iter().map(|r| r.cycles()).sum();
        let v_locked = runs
            .iter()
            .flat_map(|r| r.true_phases.iter().map(|p| p * p))
            .sum::<f64>()
            / count as f64;
        config.schedule.betas = fit(config, v_locked)?;
    }
    Ok(())
}

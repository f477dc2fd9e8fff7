//! Derivative-free tuning of the protocol parameters.
//!
//! Candidates are scored by ensemble `sigma_gamma` with the gains
//! recalibrated for each point. All candidates share the same master seed,
//! so comparisons use common random numbers.

use rayon::prelude::*;

use crate::clock::{calibrate_config, run_ensemble, stability, ClockConfig, Stability, StabilityMethod};
use crate::error::{domain, Result};
use crate::protocol::{schedule_with, Protocol};

/// Minimum evaluation budget.
pub const MIN_BUDGET: usize = 50;

/// A tunable coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Coordinate {
    Kappa,
    StageCount,
    GammaT,
    OmegaScale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSettings {
    pub budget: usize,
    /// Clock runs per candidate.
    pub runs: usize,
    /// Cycles per clock run.
    pub cycles: usize,
    /// Pilot sequences for gain calibration.
    pub pilot_runs: usize,
    pub coordinates: Vec<Coordinate>,
    /// Initial multiplicative step for the continuous coordinates.
    pub step: f64,
    /// Upper limit for `gammaT`.
    pub max_gamma_t: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            budget: 120,
            runs: 4,
            cycles: 1000,
            pilot_runs: 2000,
            coordinates: vec![
                Coordinate::Kappa,
                Coordinate::StageCount,
                Coordinate::GammaT,
                Coordinate::OmegaScale,
            ],
            step: 1.6,
            max_gamma_t: 1.5,
        }
    }
}

/// A point in parameter space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub kappa: f64,
    pub n: usize,
    pub gamma_t: f64,
    pub omega_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub kappa: f64,
    pub n: usize,
    pub gamma_t: f64,
    pub omega_scale: f64,
    pub omegas: Vec<f64>,
    pub betas: Vec<f64>,
    pub sigma: Stability,
    pub start_sigma: Stability,
    pub evaluations: usize,
    /// Budget ran out before the step sizes converged.
    pub exhausted: bool,
}

impl OptimizationResult {
    pub fn summary(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:.6e}")).collect::<Vec<_>>().join(" ");
        format!(
            "kappa = {:.6}\nn = {}\ngammaT = {:.6}\nomega_scale = {:.6}\nomegas = [{}]\nbetas = [{}]\n\
             sigma_gamma = {:.6e} +- {:.1e}\nstart_sigma_gamma = {:.6e} +- {:.1e}\nevaluations = {}\nexhausted = {}\n",
            self.kappa,
            self.n,
            self.gamma_t,
            self.omega_scale,
            join(&self.omegas),
            join(&self.betas),
            self.sigma.sigma,
            self.sigma.stderr,
            self.start_sigma.sigma,
            self.start_sigma.stderr,
            self.evaluations,
            self.exhausted
        )
    }
}

/// Apply `point` to a copy of `base`.
pub fn configure(base: &ClockConfig, point: Point) -> ClockConfig {
    let mut c = base.clone();
    c.gamma_t = point.gamma_t;
    c.schedule = match base.protocol {
        Protocol::Adaptive => schedule_with(base.atom_count, point.kappa, point.n, point.omega_scale),
        Protocol::Conventional => schedule_with(base.atom_count, point.kappa, 1, 1.0),
    };
    c
}

/// Score one point: calibrate the gains, run the ensemble, pool the cycle
/// residuals.
pub fn evaluate_point(
    base: &ClockConfig,
    point: Point,
    settings: &OptimizerSettings,
) -> Result<(ClockConfig, Stability)> {
    let mut c = configure(base, point);
    c.cycles = settings.cycles;
    calibrate_config(&mut c, settings.pilot_runs)?;
    let runs = run_ensemble(&c, settings.runs)?;
    let s = stability(&runs, StabilityMethod::CycleResiduals)?;
    Ok((c, s))
}

/// Start point taken from `base`.
pub fn start_point(base: &ClockConfig) -> Point {
    Point {
        kappa: base.schedule.kappa,
        n: base.schedule.n(),
        gamma_t: base.gamma_t,
        omega_scale: 1.0,
    }
}

fn neighbours(
    p: Point,
    coord: Coordinate,
    step: f64,
    n_step: usize,
    atom_count: usize,
    max_gamma_t: f64,
) -> Vec<Point> {
    let kmax = (atom_count as f64).sqrt();
    let mut out = Vec::with_capacity(2);
    match coord {
        Coordinate::Kappa => {
            for k in [p.kappa * step, p.kappa / step] {
                let k = k.clamp(1.0, kmax);
                if k != p.kappa {
                    out.push(Point { kappa: k, ..p });
                }
            }
        }
        Coordinate::StageCount => {
            if n_step > 0 {
                out.push(Point { n: p.n + n_step, ..p });
                if p.n > 1 {
                    out.push(Point {
                        n: p.n.saturating_sub(n_step).max(1),
                        ..p
                    });
                }
            }
        }
        Coordinate::GammaT => {
            for g in [p.gamma_t * step, p.gamma_t / step] {
                let g = g.min(max_gamma_t);
                if g != p.gamma_t {
                    out.push(Point { gamma_t: g, ..p });
                }
            }
        }
        Coordinate::OmegaScale => {
            out.push(Point {
                omega_scale: p.omega_scale * step,
                ..p
            });
            out.push(Point {
                omega_scale: p.omega_scale / step,
                ..p
            });
        }
    }
    out
}

/// Coordinate descent with shrinking steps over the selected coordinates.
///
/// Each sweep tries a step up and down along every coordinate and moves to
/// any strict improvement. A sweep without improvement shrinks the steps.
/// Stops when the steps fall below 1% or the budget is spent.
pub fn optimize_stability(base: &ClockConfig, settings: &OptimizerSettings) -> Result<OptimizationResult> {
    if settings.budget < MIN_BUDGET {
        return Err(domain(format!(
            "budget must be >= {MIN_BUDGET}, got {}",
            settings.budget
        )));
    }
    if !(settings.step > 1.0) {
        return Err(domain(format!("step must exceed 1, got {}", settings.step)));
    }
    if settings.runs == 0 {
        return Err(domain("runs must be >= 1"));
    }
    base.validate()?;
    let coords: Vec<Coordinate> = settings
        .coordinates
        .iter()
        .copied()
        .filter(|c| base.protocol == Protocol::Adaptive || matches!(c, Coordinate::Kappa | Coordinate::GammaT))
        .collect();

    let start = start_point(base);
    let (mut best_cfg, start_sigma) = evaluate_point(base, start, settings)?;
    let mut best = (start, start_sigma);
    let mut evaluations = 1;
    let mut step = settings.step;
    let mut n_step = (start.n / 4).max(1);
    let mut sweeps = 0;
    let mut exhausted = false;

    'outer: loop {
        let mut improved = false;
        for &coord in &coords {
            let cands = neighbours(best.0, coord, step, n_step, base.atom_count, settings.max_gamma_t);
            if cands.is_empty() {
                continue;
            }
            if evaluations + cands.len() > settings.budget {
                exhausted = true;
                break 'outer;
            }
            let scored: Vec<Result<(ClockConfig, Stability)>> =
                cands.par_iter().map(|p| evaluate_point(base, *p, settings)).collect();
            evaluations += cands.len();
            for (p, r) in cands.iter().zip(scored) {
                // Points where calibration or the loop fails are skipped.
                let Ok((cfg, s)) = r else { continue };
                if s.sigma.is_finite() && s.sigma < best.1.sigma {
                    best = (*p, s);
                    best_cfg = cfg;
                    improved = true;
                }
            }
        }
        sweeps += 1;
        if !improved {
            if step < 1.01 && n_step <= 1 {
                break;
            }
            step = step.sqrt();
            n_step = (n_step / 2).max(if step < 1.01 { 0 } else { 1 });
        }
    }
    if exhausted && sweeps == 0 {
        log::warn!(
            "budget of {} evaluations ran out before one full sweep",
            settings.budget
        );
    } else if exhausted {
        log::warn!("budget of {} evaluations exhausted before convergence", settings.budget);
    }

    Ok(OptimizationResult {
        kappa: best.0.kappa,
        n: best.0.n,
        gamma_t: best.0.gamma_t,
        omega_scale: best.0.omega_scale,
        omegas: best_cfg.schedule.omegas.clone(),
        betas: best_cfg.schedule.betas.clone(),
        sigma: best.1,
        start_sigma,
        evaluations,
        exhausted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseKind;

    #[test]
    fn never_worse_than_start() {
        let base = ClockConfig::new(200, Protocol::Adaptive, NoiseKind::White, 0.2).unwrap();
        let settings = OptimizerSettings {
            budget: 50,
            runs: 1,
            cycles: 400,
            pilot_runs: 1000,
            ..Default::default()
        };
        let r = optimize_stability(&base, &settings).unwrap();
        assert!(r.sigma.sigma <= r.start_sigma.sigma);
        assert!(r.evaluations <= 50);
        assert_eq!(r.betas.len(), r.n);
        assert_eq!(r.omegas.len(), r.n - 1);
    }

    #[test]
    fn rejects_small_budget() {
        let base = ClockConfig::new(200, Protocol::Conventional, NoiseKind::White, 0.1).unwrap();
        let settings = OptimizerSettings {
            budget: 10,
            ..Default::default()
        };
        assert!(optimize_stability(&base, &settings).is_err());
    }

    #[test]
    fn conventional_ignores_stage_axes() {
        let p = Point {
            kappa: 3.0,
            n: 1,
            gamma_t: 0.1,
            omega_scale: 1.0,
        };
        assert!(neighbours(p, Coordinate::StageCount, 1.5, 0, 100, 1.0).is_empty());
        let k = neighbours(p, Coordinate::Kappa, 100.0, 1, 100, 1.0);
        assert_eq!(k.iter().map(|q| q.kappa).collect::<Vec<_>>(), vec![10.0, 1.0]);
    }
}

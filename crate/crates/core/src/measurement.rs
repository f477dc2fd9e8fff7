//! Weak dispersive measurements, the final projective readout, phase
//! estimators and calibration of the estimator gains.
//!
//! The probe couples to `J_y`; its momentum quadrature reads
//! `p' = p - Omega m`, with `p` drawn from the vacuum (`<p^2> = 1/2`).

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::csv::{fmt_f64, Table};
use crate::error::{domain, Result};
use crate::protocol::{AtomState, Interrogator};
use crate::rng::stream;
use crate::spin::{EnsembleMoments, SpinStateVector};

/// Vacuum variance of either probe quadrature.
pub const VACUUM_VARIANCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakMeasurementRecord {
    pub stage: usize,
    pub strength: f64,
    pub outcome: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseEstimate {
    pub value: f64,
    pub gain: f64,
}

/// What a stage produced: a homodyne record or a projective `J_3` value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation {
    Weak(WeakMeasurementRecord),
    Projective(f64),
}

fn check_strength(omega: f64) -> Result<()> {
    if !(omega >= 0.0) || !omega.is_finite() {
        return Err(domain(format!("measurement strength must be >= 0, got {omega}")));
    }
    Ok(())
}

/// Weak measurement on an exact state: sample the homodyne outcome from the
/// mixture `sum_m |c_m|^2 N(-Omega m, 1/2)` and return the conditioned state.
pub fn weak_measure_full<R: Rng + ?Sized>(
    state: &SpinStateVector,
    omega: f64,
    stage: usize,
    rng: &mut R,
) -> Result<(WeakMeasurementRecord, SpinStateVector)> {
    check_strength(omega)?;
    let mut post = state.clone();
    let outcome = weak_full_in_place(&mut post, omega, rng);
    Ok((
        WeakMeasurementRecord {
            stage,
            strength: omega,
            outcome,
        },
        post,
    ))
}

pub(crate) fn weak_full_in_place<R: Rng + ?Sized>(state: &mut SpinStateVector, omega: f64, rng: &mut R) -> f64 {
    let m = sample_m(state, rng);
    let outcome = -omega * m + VACUUM_VARIANCE.sqrt() * rng.sample::<f64, _>(StandardNormal);
    condition_full(state, omega, outcome);
    outcome
}

fn sample_m<R: Rng + ?Sized>(state: &SpinStateVector, rng: &mut R) -> f64 {
    let j = state.j() as f64;
    let probs = state.probabilities();
    let total: f64 = probs.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last_nonzero = 0;
    for (k, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            last_nonzero = k;
        }
        if u < *p {
            return k as f64 - j;
        }
        u -= p;
    }
    last_nonzero as f64 - j
}

/// Kraus update for a given outcome: `c_m <- c_m exp(-(p' + Omega m)^2 / 2)`,
/// renormalized.
pub fn condition_full(state: &mut SpinStateVector, omega: f64, outcome: f64) {
    if omega == 0.0 {
        return;
    }
    let j = state.j() as f64;
    let amps = state.amplitudes_mut();
    // Work with log-magnitudes so far-tail outcomes do not underflow.
    let log_w = |k: usize, c: f64| {
        let d = outcome + omega * (k as f64 - j);
        c.ln() - 0.5 * d * d
    };
    let shift = amps
        .iter()
        .enumerate()
        .filter(|(_, c)| c.norm_sqr() > 0.0)
        .map(|(k, c)| log_w(k, c.norm()))
        .fold(f64::NEG_INFINITY, f64::max);
    for (k, c) in amps.iter_mut().enumerate() {
        let mag = c.norm();
        if mag > 0.0 {
            *c *= (log_w(k, mag) - shift).exp() / mag;
        }
    }
    state.renormalize();
}

/// Weak measurement in the Gaussian branch.
///
/// The outcome is drawn from `N(-Omega mean_y, Omega^2 var_y + 1/2)`, the
/// moments are conditioned on it, and the back-action rotation about `J_y`
/// by `Pi ~ N(0, Omega^2 / 2)` is averaged into the moments.
pub fn weak_measure_gaussian<R: Rng + ?Sized>(
    moments: &EnsembleMoments,
    omega: f64,
    stage: usize,
    rng: &mut R,
) -> Result<(WeakMeasurementRecord, EnsembleMoments)> {
    check_strength(omega)?;
    let s = omega * omega * moments.var_y + VACUUM_VARIANCE;
    let outcome = -omega * moments.mean_y + s.sqrt() * rng.sample::<f64, _>(StandardNormal);
    let post = condition_gaussian(moments, omega, outcome);
    Ok((
        WeakMeasurementRecord {
            stage,
            strength: omega,
            outcome,
        },
        post,
    ))
}

/// Conditional update of the moments for a given outcome, followed by the
/// averaged back-action.
pub fn condition_gaussian(m: &EnsembleMoments, omega: f64, outcome: f64) -> EnsembleMoments {
    if omega == 0.0 {
        return *m;
    }
    let mut mean = m.mean();
    let mut cov = m.covariance();
    let s = omega * omega * cov[1][1] + VACUUM_VARIANCE;
    let innovation = outcome + omega * mean[1];
    let col_y = [cov[0][1], cov[1][1], cov[2][1]];
    for a in 0..3 {
        mean[a] += -omega * col_y[a] / s * innovation;
        for b in 0..3 {
            cov[a][b] -= omega * omega * col_y[a] * col_y[b] / s;
        }
    }
    back_action(&mut mean, &mut cov, 0.5 * omega * omega);
    EnsembleMoments::from_parts(mean, cov)
}

/// Average a rotation about `J_y` by an angle with variance `s`, applied to
/// the raw second moments.
fn back_action(mean: &mut [f64; 3], cov: &mut [[f64; 3]; 3], s: f64) {
    let mut raw = *cov;
    for a in 0..3 {
        for b in 0..3 {
            raw[a][b] += mean[a] * mean[b];
        }
    }
    let e1 = (-0.5 * s).exp();
    let e2 = (-2.0 * s).exp();
    let c2 = 0.5 * (1.0 + e2);
    let s2 = 0.5 * (1.0 - e2);
    let (xx, zz, xz) = (raw[0][0], raw[2][2], raw[0][2]);
    raw[2][2] = c2 * zz + s2 * xx;
    raw[0][0] = c2 * xx + s2 * zz;
    raw[0][2] = e2 * xz;
    raw[2][0] = raw[0][2];
    for a in [0usize, 2] {
        raw[1][a] *= e1;
        raw[a][1] *= e1;
    }
    mean[0] *= e1;
    mean[2] *= e1;
    for a in 0..3 {
        for b in 0..3 {
            cov[a][b] = raw[a][b] - mean[a] * mean[b];
        }
    }
}

/// Input to the projective readout.
#[derive(Debug, Clone, Copy)]
pub enum Readout<'a> {
    Full(&'a SpinStateVector),
    Gaussian(&'a EnsembleMoments),
}

/// Projective measurement of `J_3 = J_y`.
pub fn projective_measure<R: Rng + ?Sized>(input: Readout<'_>, rng: &mut R) -> f64 {
    match input {
        Readout::Full(s) => sample_m(s, rng),
        Readout::Gaussian(m) => {
            if m.var_y <= 0.0 {
                m.mean_y
            } else {
                m.mean_y + m.var_y.sqrt() * rng.sample::<f64, _>(StandardNormal)
            }
        }
    }
}

/// `-beta p' / (Omega <J_z>)` for weak stages, `beta J_3 / <J_z>` for the
/// projective stage.
pub fn estimate_phase(obs: &Observation, beta: f64, mean_jz: f64) -> Result<PhaseEstimate> {
    if !(mean_jz > 0.0) {
        return Err(domain(format!("<J_z> must be positive, got {mean_jz}")));
    }
    let value = match obs {
        Observation::Weak(r) => {
            if r.strength == 0.0 {
                return Err(domain("weak-stage estimate needs a nonzero strength"));
            }
            -beta * r.outcome / (r.strength * mean_jz)
        }
        Observation::Projective(j3) => beta * j3 / mean_jz,
    };
    Ok(PhaseEstimate { value, gain: beta })
}

/// Fit the stage gains by sequential least squares on pilot runs.
///
/// Pilot phases are drawn from `N(0, phase_variance)`. At each stage the raw
/// (unit-gain) estimate `y_i` is regressed on the residual phase left by the
/// earlier, already calibrated stages: `beta_i = Cov(dPhi, y_i) / Var(y_i)`.
/// Returns one gain per stage, the projective stage last.
pub fn calibrate_betas(
    interrogator: &Interrogator,
    phase_variance: f64,
    pilot_runs: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if pilot_runs < 1000 {
        return Err(domain(format!(
            "calibration needs >= 1000 pilot runs, got {pilot_runs}"
        )));
    }
    if !(phase_variance >= 0.0) || !phase_variance.is_finite() {
        return Err(domain(format!("phase variance must be >= 0, got {phase_variance}")));
    }
    struct Pilot {
        state: AtomState,
        residual: f64,
        rng: crate::rng::SimRng,
        raw: f64,
    }
    let sd = phase_variance.sqrt();
    let mut pilots: Vec<Pilot> = (0..pilot_runs as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, r);
            let phase = sd * rng.sample::<f64, _>(StandardNormal);
            let mut state = interrogator.prepared_state();
            state.imprint(phase);
            Pilot {
                state,
                residual: phase,
                rng,
                raw: 0.0,
            }
        })
        .collect();

    let omegas = &interrogator.schedule().omegas;
    let mut betas = Vec::with_capacity(omegas.len() + 1);
    for stage in 0..=omegas.len() {
        let weak = stage < omegas.len();
        pilots.par_iter_mut().for_each(|p| {
            p.raw = if weak {
                interrogator.raw_weak_estimate(&mut p.state, omegas[stage], &mut p.rng)
            } else {
                interrogator.raw_final_estimate(&p.state, &mut p.rng)
            };
        });
        let beta = regression_gain(pilots.iter().map(|p| (p.residual, p.raw)), stage + 1);
        betas.push(beta);
        if weak {
            pilots.par_iter_mut().for_each(|p| {
                let e = beta * p.raw;
                p.state.feedback(e);
                p.residual -= e;
            });
        }
    }
    Ok(betas)
}

fn regression_gain(pairs: impl Iterator<Item = (f64, f64)>, stage: usize) -> f64 {
    let pts: Vec<(f64, f64)> = pairs.collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / n;
    let var: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) || !cov.is_finite() {
        log::warn!("stage {stage}: degenerate estimate variance, gain set to 0");
        return 0.0;
    }
    cov / var
}

/// CSV with columns `stage, Omega, beta`. The projective stage has an empty
/// strength.
pub fn schedule_table(omegas: &[f64], betas: &[f64]) -> Table {
    let mut t = Table::new(["stage", "Omega", "beta"]);
    for (i, b) in betas.iter().enumerate() {
        let omega = omegas.get(i).map(|o| fmt_f64(*o)).unwrap_or_default();
        t.push_row(vec![(i + 1).to_string(), omega, fmt_f64(*b)]);
    }
    t
}

//! One Ramsey interrogation: phase imprint, weak measurements with feedback
//! rotations, and the final projective readout.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;

use crate::csv::{fmt_f64, Table};
use crate::error::{domain, Error, Result};
use crate::measurement::{
    condition_gaussian, estimate_phase, projective_measure, weak_full_in_place, Observation, PhaseEstimate, Readout,
    WeakMeasurementRecord, VACUUM_VARIANCE,
};
use crate::spin::{
    build_squeezed_state, exact_moments, gaussian_moments, rotate_in_place, Axis, EnsembleMoments, SpinStateVector,
};
use rand_distr::StandardNormal;

/// Simulation branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    /// Exact amplitudes over the `J_y` eigenbasis.
    Full,
    /// First and second moments only.
    Gaussian,
}

/// Interrogation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Protocol {
    Adaptive,
    Conventional,
}

/// Phase estimator for the single-readout protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ConventionalEstimator {
    /// `beta * asin(J_3 / <J_z>)`, clipped to `[-pi/2, pi/2]`.
    #[default]
    ArcSine,
    /// `beta * J_3 / <J_z>`.
    Linear,
}

macro_rules! impl_name {
    ($ty:ty, $($variant:path => $name:literal),+) => {
        impl std::fmt::Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }
        impl std::str::FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($name => Ok($variant),)+
                    other => Err(domain(format!(concat!("unknown ", stringify!($ty), " '{}'"), other))),
                }
            }
        }
    };
}

impl_name!(Branch, Branch::Full => "full", Branch::Gaussian => "gaussian");
impl_name!(Protocol, Protocol::Adaptive => "adaptive", Protocol::Conventional => "conventional");
impl_name!(ConventionalEstimator, ConventionalEstimator::ArcSine => "arcsine", ConventionalEstimator::Linear => "linear");

/// Squeezing, weak-measurement strengths and estimator gains.
///
/// `omegas` holds the `n - 1` weak stages; `betas` has one more entry for the
/// final projective readout.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSchedule {
    pub kappa: f64,
    pub omegas: Vec<f64>,
    pub betas: Vec<f64>,
}

impl MeasurementSchedule {
    pub fn new(kappa: f64, omegas: Vec<f64>, betas: Vec<f64>) -> Result<Self> {
        let s = Self { kappa, omegas, betas };
        s.validate()?;
        Ok(s)
    }

    /// Single projective readout.
    pub fn conventional(kappa: f64, beta: f64) -> Result<Self> {
        Self::new(kappa, Vec::new(), vec![beta])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(domain(format!("kappa must be positive, got {}", self.kappa)));
        }
        if self.betas.len() != self.omegas.len() + 1 {
            return Err(Error::Mismatch(format!(
                "{} strengths need {} gains, got {}",
                self.omegas.len(),
                self.omegas.len() + 1,
                self.betas.len()
            )));
        }
        if let Some(o) = self.omegas.iter().find(|o| !(**o > 0.0) || !o.is_finite()) {
            return Err(domain(format!("strengths must be positive, got {o}")));
        }
        if let Some(b) = self.betas.iter().find(|b| !b.is_finite()) {
            return Err(domain(format!("gains must be finite, got {b}")));
        }
        Ok(())
    }

    /// Total number of measurements including the projective one.
    pub fn n(&self) -> usize {
        self.omegas.len() + 1
    }

    pub fn with_betas(mut self, betas: Vec<f64>) -> Result<Self> {
        self.betas = betas;
        self.validate()?;
        Ok(self)
    }

    pub fn to_table(&self) -> Table {
        crate::measurement::schedule_table(&self.omegas, &self.betas).with_meta("kappa", fmt_f64(self.kappa))
    }
}

/// `kappa = ln sqrt(N) + 2`, `n = ceil(3 ln N)`, `Omega_i = N^(-1 + i/(n+1))`,
/// unit gains.
pub fn default_schedule(atom_count: usize) -> Result<MeasurementSchedule> {
    if atom_count < 100 {
        return Err(domain(format!("default schedule needs N >= 100, got {atom_count}")));
    }
    let nf = atom_count as f64;
    let n = (3.0 * nf.ln()).ceil() as usize;
    Ok(schedule_with(atom_count, nf.sqrt().ln() + 2.0, n, 1.0))
}

/// Schedule with the default strength law for given `kappa` and `n`, all
/// strengths scaled by `omega_scale`.
pub fn schedule_with(atom_count: usize, kappa: f64, n: usize, omega_scale: f64) -> MeasurementSchedule {
    let nf = atom_count as f64;
    let n = n.max(1);
    let omegas = (1..n)
        .map(|i| omega_scale * nf.powf(-1.0 + i as f64 / (n + 1) as f64))
        .collect();
    MeasurementSchedule {
        kappa,
        omegas,
        betas: vec![1.0; n],
    }
}

/// One stage of a sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageRecord {
    pub observation: Observation,
    pub estimate: PhaseEstimate,
    /// True phase minus all estimates so far.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceResult {
    pub true_phase: f64,
    pub estimate: f64,
    pub residual: f64,
    pub stages: Vec<StageRecord>,
}

impl SequenceResult {
    /// Residual beyond `pi/2`: precursor of a fringe hop.
    pub fn fringe_hop(&self) -> bool {
        self.residual.abs() > FRAC_PI_2
    }

    /// CSV with columns `stage, Omega, outcome, estimate, residual`.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["stage", "Omega", "outcome", "estimate", "residual"])
            .with_meta("true_phase", fmt_f64(self.true_phase));
        for (i, s) in self.stages.iter().enumerate() {
            let (omega, outcome) = match s.observation {
                Observation::Weak(r) => (fmt_f64(r.strength), fmt_f64(r.outcome)),
                Observation::Projective(v) => (String::new(), fmt_f64(v)),
            };
            t.push_row(vec![
                (i + 1).to_string(),
                omega,
                outcome,
                fmt_f64(s.estimate.value),
                fmt_f64(s.residual),
            ]);
        }
        t
    }
}

/// Atomic state carried through a sequence.
#[derive(Debug, Clone)]
pub(crate) enum AtomState {
    Full(SpinStateVector),
    Gaussian(EnsembleMoments),
}

impl AtomState {
    /// Free evolution accumulating phase `phase`: `<J_y> = sin(phase) <J_z>`.
    pub(crate) fn imprint(&mut self, phase: f64) {
        self.rotate(-phase);
    }

    /// Undo an estimated phase `estimate`.
    pub(crate) fn feedback(&mut self, estimate: f64) {
        self.rotate(estimate);
    }

    fn rotate(&mut self, angle: f64) {
        match self {
            AtomState::Full(s) => rotate_in_place(s, Axis::Axis1, angle),
            AtomState::Gaussian(m) => *m = m.rotated(Axis::Axis1, angle),
        }
    }

    fn weak<R: Rng + ?Sized>(&mut self, omega: f64, rng: &mut R) -> f64 {
        match self {
            AtomState::Full(s) => weak_full_in_place(s, omega, rng),
            AtomState::Gaussian(m) => {
                let s = omega * omega * m.var_y + VACUUM_VARIANCE;
                let outcome = -omega * m.mean_y + s.sqrt() * rng.sample::<f64, _>(StandardNormal);
                *m = condition_gaussian(m, omega, outcome);
                outcome
            }
        }
    }

    fn projective<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            AtomState::Full(s) => projective_measure(Readout::Full(s), rng),
            AtomState::Gaussian(m) => projective_measure(Readout::Gaussian(m), rng),
        }
    }
}

/// A prepared interrogation: schedule, branch and initial atomic state.
///
/// Building the state once and cloning it per sequence keeps repeated runs
/// cheap.
#[derive(Debug, Clone)]
pub struct Interrogator {
    atom_count: usize,
    schedule: MeasurementSchedule,
    branch: Branch,
    final_estimator: ConventionalEstimator,
    prepared: AtomState,
    mean_jz: f64,
}

impl Interrogator {
    /// Adaptive protocol with the given schedule. The projective stage uses
    /// the linear estimator.
    pub fn adaptive(atom_count: usize, schedule: MeasurementSchedule, branch: Branch) -> Result<Self> {
        Self::build(atom_count, schedule, branch, ConventionalEstimator::Linear)
    }

    /// Single projective readout.
    pub fn conventional(
        atom_count: usize,
        kappa: f64,
        beta: f64,
        branch: Branch,
        estimator: ConventionalEstimator,
    ) -> Result<Self> {
        Self::build(
            atom_count,
            MeasurementSchedule::conventional(kappa, beta)?,
            branch,
            estimator,
        )
    }

    fn build(
        atom_count: usize,
        schedule: MeasurementSchedule,
        branch: Branch,
        final_estimator: ConventionalEstimator,
    ) -> Result<Self> {
        schedule.validate()?;
        let (prepared, mean_jz) = match branch {
            Branch::Full => {
                let s = build_squeezed_state(atom_count, schedule.kappa)?;
                let mz = exact_moments(&s).mean_z;
                (AtomState::Full(s), mz)
            }
            Branch::Gaussian => {
                let m = if atom_count >= 100 && schedule.kappa >= 1.0 {
                    gaussian_moments(atom_count, schedule.kappa)?
                } else {
                    exact_moments(&build_squeezed_state(atom_count, schedule.kappa)?)
                };
                (AtomState::Gaussian(m), m.mean_z)
            }
        };
        if !(mean_jz > 0.0) {
            return Err(domain(format!(
                "prepared state has <J_z> = {mean_jz}; kappa {} is too small for N = {atom_count}",
                schedule.kappa
            )));
        }
        Ok(Self {
            atom_count,
            schedule,
            branch,
            final_estimator,
            prepared,
            mean_jz,
        })
    }

    pub fn atom_count(&self) -> usize {
        self.atom_count
    }

    pub fn schedule(&self) -> &MeasurementSchedule {
        &self.schedule
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    /// `<J_z>` of the prepared state, the estimator normalization.
    pub fn mean_jz(&self) -> f64 {
        self.mean_jz
    }

    /// Replace the gains, keeping the prepared state.
    pub fn set_betas(&mut self, betas: Vec<f64>) -> Result<()> {
        let s = self.schedule.clone().with_betas(betas)?;
        self.schedule = s;
        Ok(())
    }

    pub(crate) fn prepared_state(&self) -> AtomState {
        self.prepared.clone()
    }

    /// Unit-gain estimate from a weak stage, conditioning `state`.
    pub(crate) fn raw_weak_estimate<R: Rng + ?Sized>(&self, state: &mut AtomState, omega: f64, rng: &mut R) -> f64 {
        -state.weak(omega, rng) / (omega * self.mean_jz)
    }

    /// Unit-gain estimate from the projective readout.
    pub(crate) fn raw_final_estimate<R: Rng + ?Sized>(&self, state: &AtomState, rng: &mut R) -> f64 {
        self.final_raw(state.projective(rng))
    }

    fn final_raw(&self, j3: f64) -> f64 {
        let r = j3 / self.mean_jz;
        match self.final_estimator {
            ConventionalEstimator::Linear => r,
            ConventionalEstimator::ArcSine => r.clamp(-1.0, 1.0).asin(),
        }
    }

    /// Run one sequence on true phase `phase`.
    pub fn run<R: Rng + ?Sized>(&self, phase: f64, rng: &mut R) -> SequenceResult {
        let mut state = self.prepared.clone();
        state.imprint(phase);
        let mut residual = phase;
        let mut total = 0.0;
        let mut stages = Vec::with_capacity(self.schedule.n());
        for (i, &omega) in self.schedule.omegas.iter().enumerate() {
            let outcome = state.weak(omega, rng);
            let record = WeakMeasurementRecord {
                stage: i + 1,
                strength: omega,
                outcome,
            };
            let observation = Observation::Weak(record);
            let estimate = estimate_phase(&observation, self.schedule.betas[i], self.mean_jz)
                .expect("validated schedule and positive <J_z>");
            state.feedback(estimate.value);
            residual -= estimate.value;
            total += estimate.value;
            stages.push(StageRecord {
                observation,
                estimate,
                residual,
            });
        }
        let j3 = state.projective(rng);
        let beta = *self.schedule.betas.last().expect("schedule has a final gain");
        let estimate = PhaseEstimate {
            value: beta * self.final_raw(j3),
            gain: beta,
        };
        residual -= estimate.value;
        total += estimate.value;
        stages.push(StageRecord {
            observation: Observation::Projective(j3),
            estimate,
            residual,
        });
        SequenceResult {
            true_phase: phase,
            estimate: total,
            residual: phase - total,
            stages,
        }
    }

    /// Residual `phase - estimate` of one sequence, without stage records.
    pub fn residual<R: Rng + ?Sized>(&self, phase: f64, rng: &mut R) -> f64 {
        let mut state = self.prepared.clone();
        state.imprint(phase);
        let mut total = 0.0;
        for (i, &omega) in self.schedule.omegas.iter().enumerate() {
            let e = self.schedule.betas[i] * self.raw_weak_estimate(&mut state, omega, rng);
            state.feedback(e);
            total += e;
        }
        total += self.schedule.betas[self.schedule.omegas.len()] * self.raw_final_estimate(&state, rng);
        phase - total
    }
}

/// Run one adaptive sequence, preparing the state from scratch.
pub fn run_adaptive_sequence<R: Rng + ?Sized>(
    atom_count: usize,
    schedule: &MeasurementSchedule,
    phase: f64,
    branch: Branch,
    rng: &mut R,
) -> Result<SequenceResult> {
    Ok(Interrogator::adaptive(atom_count, schedule.clone(), branch)?.run(phase, rng))
}

/// Run one conventional Ramsey sequence.
pub fn run_conventional_ramsey<R: Rng + ?Sized>(
    atom_count: usize,
    kappa: f64,
    beta: f64,
    phase: f64,
    branch: Branch,
    estimator: ConventionalEstimator,
    rng: &mut R,
) -> Result<SequenceResult> {
    Ok(Interrogator::conventional(atom_count, kappa, beta, branch, estimator)?.run(phase, rng))
}

/// Mean-square residual after each stage, `<dPhi_i^2>` for `i = 0..=n`
/// (index 0 is the prior), from `runs` sequences with phases drawn from
/// `N(0, phase_variance)` on streams `(seed, 0..runs)`.
pub fn stage_residual_variances(
    interrogator: &Interrogator,
    phase_variance: f64,
    runs: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    if runs == 0 {
        return Err(Error::Length("need at least one run".into()));
    }
    let sd = phase_variance.max(0.0).sqrt();
    let per_run: Vec<Vec<f64>> = (0..runs as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = crate::rng::stream(seed, r);
            let phase = sd * rng.sample::<f64, _>(StandardNormal);
            let res = interrogator.run(phase, &mut rng);
            std::iter::once(phase)
                .chain(res.stages.iter().map(|s| s.residual))
                .map(|v| v * v)
                .collect()
        })
        .collect();
    let n = interrogator.schedule().n() + 1;
    let mut out = vec![0.0; n];
    for row in &per_run {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    for o in out.iter_mut() {
        *o /= runs as f64;
    }
    Ok(out)
}

//! Semi-analytic noise terms, bounds and breakdown statistics.
//!
//! The atomic factors are expectations over `J_z` and `J_x` treated as
//! independent Gaussians with the moments of the prepared state, written in
//! terms of `u = 1 - J_z / <J_z>`; they are polynomial, so exact Gaussian
//! moments are used. Phase factors average over `dphi_0 ~ N(0, gammaT)` by
//! Gauss-Hermite quadrature. All terms take unit estimator gains.

use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Error, Result};
use crate::numerics::NormalQuadrature;
use crate::spin::{gaussian_moments, EnsembleMoments};

/// Hermite nodes per axis.
pub const QUADRATURE_NODES: usize = 64;

/// Averages over the free-running phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseFactors {
    /// `<dphi^2>`
    pub phi2: f64,
    /// `<dphi (sin dphi - dphi)>`
    pub phi_sin_minus: f64,
    /// `<(sin dphi - dphi)^2>`
    pub sin_minus2: f64,
    /// `<sin^2 dphi>`
    pub sin2: f64,
}

pub fn phase_factors(gamma_t: f64) -> Result<PhaseFactors> {
    if !(gamma_t >= 0.0) || !gamma_t.is_finite() {
        return Err(domain(format!("gammaT must be >= 0, got {gamma_t}")));
    }
    let q = NormalQuadrature::new(QUADRATURE_NODES);
    Ok(PhaseFactors {
        phi2: q.expect(0.0, gamma_t, |p| p * p),
        phi_sin_minus: q.expect(0.0, gamma_t, |p| p * (p.sin() - p)),
        sin_minus2: q.expect(0.0, gamma_t, |p| (p.sin() - p).powi(2)),
        sin2: q.expect(0.0, gamma_t, |p| p.sin().powi(2)),
    })
}

/// `<u^p>` for `u ~ N(0, r)`, evaluated in log space.
pub fn gaussian_moment(p: usize, r: f64) -> f64 {
    if p % 2 == 1 {
        return 0.0;
    }
    if p == 0 {
        return 1.0;
    }
    if r == 0.0 {
        return 0.0;
    }
    ln_gaussian_moment(p, r).exp()
}

fn ln_gaussian_moment(p: usize, r: f64) -> f64 {
    let k = (p / 2) as f64;
    k * r.ln() + ln_gamma(2.0 * k + 1.0) - k * std::f64::consts::LN_2 - ln_gamma(k + 1.0)
}

fn ratio(m: &EnsembleMoments) -> f64 {
    m.var_z / (m.mean_z * m.mean_z)
}

/// `<u^(2k-2) (1-u)^2>`; the odd cross moment vanishes.
fn shifted(k: usize, r: f64) -> f64 {
    gaussian_moment(2 * k - 2, r) + gaussian_moment(2 * k, r)
}

fn check_moments(m: &EnsembleMoments) -> Result<()> {
    if !(m.mean_z > 0.0) || !(m.var_z >= 0.0) || !(m.var_x >= 0.0) {
        return Err(domain("moments need <J_z> > 0 and nonnegative variances"));
    }
    Ok(())
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(domain("n must be >= 1"));
    }
    Ok(())
}

fn surrogate(atom_count: usize, kappa: f64) -> Result<EnsembleMoments> {
    gaussian_moments(atom_count, kappa)
}

/// The three dominant `J_z` noise contributions to `<dPhi_n^2>`.
pub fn jz_noise_terms(atom_count: usize, kappa: f64, n: usize, gamma_t: f64) -> Result<[f64; 3]> {
    jz_noise_terms_from(&surrogate(atom_count, kappa)?, n, gamma_t)
}

/// [`jz_noise_terms`] for given state moments.
pub fn jz_noise_terms_from(m: &EnsembleMoments, n: usize, gamma_t: f64) -> Result<[f64; 3]> {
    check_moments(m)?;
    check_n(n)?;
    let p = phase_factors(gamma_t)?;
    let r = ratio(m);
    let a1 = gaussian_moment(2 * n, r);
    let a2 = -a1;
    let a3 = shifted(n, r);
    let terms = [p.phi2 * a1, 2.0 * p.phi_sin_minus * a2, p.sin_minus2 * a3];
    finite_terms(&terms)?;
    Ok(terms)
}

/// Dominant accumulated back-action term of each weak stage.
pub fn backaction_terms(atom_count: usize, kappa: f64, n: usize, omegas: &[f64], gamma_t: f64) -> Result<Vec<f64>> {
    backaction_terms_from(&surrogate(atom_count, kappa)?, n, omegas, gamma_t)
}

pub fn backaction_terms_from(m: &EnsembleMoments, n: usize, omegas: &[f64], gamma_t: f64) -> Result<Vec<f64>> {
    check_moments(m)?;
    check_stages(n, omegas)?;
    let p = phase_factors(gamma_t)?;
    let mz2 = m.mean_z * m.mean_z;
    let x2 = (m.var_x + m.mean_x * m.mean_x) / mz2;
    let r = ratio(m);
    let terms: Vec<f64> = omegas
        .iter()
        .enumerate()
        .map(|(idx, &omega)| {
            let i = idx + 1;
            let x_light = 0.5 * omega * omega;
            if i == 1 {
                x_light * p.sin2 * gaussian_moment(2, r) * x2
            } else {
                x_light * p.sin_minus2 * shifted(i, r) * x2
            }
        })
        .collect();
    finite_terms(&terms)?;
    Ok(terms)
}

/// Dominant probe-light noise term of each weak stage.
pub fn probe_noise_terms(atom_count: usize, kappa: f64, n: usize, omegas: &[f64]) -> Result<Vec<f64>> {
    probe_noise_terms_from(&surrogate(atom_count, kappa)?, n, omegas)
}

pub fn probe_noise_terms_from(m: &EnsembleMoments, n: usize, omegas: &[f64]) -> Result<Vec<f64>> {
    check_moments(m)?;
    check_stages(n, omegas)?;
    if let Some(o) = omegas.iter().find(|o| !(**o > 0.0)) {
        return Err(domain(format!("probe terms need positive strengths, got {o}")));
    }
    let mz2 = m.mean_z * m.mean_z;
    let r = ratio(m);
    let terms: Vec<f64> = omegas
        .iter()
        .enumerate()
        .map(|(idx, &omega)| {
            let i = idx + 1;
            gaussian_moment(2 * (n - i), r) * 0.5 / (mz2 * omega * omega)
        })
        .collect();
    finite_terms(&terms)?;
    Ok(terms)
}

fn check_stages(n: usize, omegas: &[f64]) -> Result<()> {
    check_n(n)?;
    if omegas.len() != n - 1 {
        return Err(Error::Mismatch(format!(
            "n = {n} needs {} strengths, got {}",
            n - 1,
            omegas.len()
        )));
    }
    Ok(())
}

fn finite_terms(t: &[f64]) -> Result<()> {
    if t.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical("non-finite analytic term".into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticTermReport {
    pub jz_terms: [f64; 3],
    pub backaction_terms: Vec<f64>,
    pub probe_terms: Vec<f64>,
    /// `var_y / <J_z>^2`: projection noise of the prepared state, which no
    /// later stage can separate from the phase.
    pub jy_floor: f64,
    /// Sum of all terms including the `J_y` floor.
    pub total: f64,
}

impl AnalyticTermReport {
    pub fn to_table(&self) -> crate::csv::Table {
        use crate::csv::{fmt_f64, Table};
        let mut t = Table::new(["term", "stage", "value"]);
        for (i, v) in self.jz_terms.iter().enumerate() {
            t.push_row(vec![format!("jz{}", i + 1), String::new(), fmt_f64(*v)]);
        }
        for (i, v) in self.backaction_terms.iter().enumerate() {
            t.push_row(vec!["backaction".into(), (i + 1).to_string(), fmt_f64(*v)]);
        }
        for (i, v) in self.probe_terms.iter().enumerate() {
            t.push_row(vec!["probe".into(), (i + 1).to_string(), fmt_f64(*v)]);
        }
        t.push_row(vec!["jy_floor".into(), String::new(), fmt_f64(self.jy_floor)]);
        t.push_row(vec!["total".into(), String::new(), fmt_f64(self.total)]);
        t
    }
}

pub fn analytic_report(
    atom_count: usize,
    kappa: f64,
    n: usize,
    omegas: &[f64],
    gamma_t: f64,
) -> Result<AnalyticTermReport> {
    let m = surrogate(atom_count, kappa)?;
    report_from(&m, n, omegas, gamma_t)
}

pub fn report_from(m: &EnsembleMoments, n: usize, omegas: &[f64], gamma_t: f64) -> Result<AnalyticTermReport> {
    let jz_terms = jz_noise_terms_from(m, n, gamma_t)?;
    let backaction_terms = backaction_terms_from(m, n, omegas, gamma_t)?;
    let probe_terms = probe_noise_terms_from(m, n, omegas)?;
    let jy_floor = m.var_y / (m.mean_z * m.mean_z);
    let total = jz_terms.iter().sum::<f64>()
        + backaction_terms.iter().sum::<f64>()
        + probe_terms.iter().sum::<f64>()
        + jy_floor;
    Ok(AnalyticTermReport {
        jz_terms,
        backaction_terms,
        probe_terms,
        jy_floor,
        total,
    })
}

/// Number of measurements minimizing the third `J_z` term at fixed `kappa`,
/// searched over `1..=n_limit`.
pub fn n_max(atom_count: usize, kappa: f64, gamma_t: f64, n_limit: usize) -> Result<usize> {
    let m = surrogate(atom_count, kappa)?;
    check_moments(&m)?;
    phase_factors(gamma_t)?;
    let r = ratio(&m);
    if r == 0.0 {
        return Ok(n_limit.max(1));
    }
    // The phase factor is common to all n; compare the atomic factor in log
    // space since it under- or overflows long before the optimum.
    let ln_term = |n: usize| ln_gaussian_moment(2 * n - 2, r) + (r * (2 * n - 1) as f64).ln_1p();
    let mut best = (1, ln_term(1));
    for n in 2..=n_limit.max(1) {
        let t = ln_term(n);
        if t < best.1 {
            best = (n, t);
        }
    }
    Ok(best.0)
}

/// `(2/N + ln sqrt(N) / N) / sqrt(gammaT)`.
pub fn stability_upper_bound(atom_count: usize, gamma_t: f64) -> Result<f64> {
    if atom_count < 100 {
        return Err(domain(format!("bound needs N >= 100, got {atom_count}")));
    }
    if !(gamma_t > 0.0) {
        return Err(domain(format!("gammaT must be positive, got {gamma_t}")));
    }
    let n = atom_count as f64;
    Ok((2.0 / n + n.sqrt().ln() / n) / gamma_t.sqrt())
}

/// Ratio of the upper bound to the Heisenberg limit, with the logarithm
/// taken natural and base 10.
pub fn upper_bound_factors(atom_count: usize) -> (f64, f64) {
    let n = atom_count as f64;
    (2.0 + n.sqrt().ln(), 2.0 + n.sqrt().log10())
}

/// `(1 - erfc(a / (sqrt(2) sigma)))^l`: probability that `l` independent
/// `N(0, sigma^2)` phases all stay within `|phase| <= a`.
pub fn prob_all_within(a: f64, sigma: f64, l: u64) -> f64 {
    let tail = erfc(a / (std::f64::consts::SQRT_2 * sigma));
    (l as f64 * (-tail).ln_1p()).exp()
}

/// Phase spread at which [`prob_all_within`] falls to one half, from the
/// first-order asymptotic solution.
pub fn sigma_max(a: f64, l: u64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(domain(format!("a must be positive, got {a}")));
    }
    if l < 10 {
        return Err(domain(format!("l must be >= 10, got {l}")));
    }
    let ln2 = std::f64::consts::LN_2;
    let big = (2.0 / std::f64::consts::PI).ln() + 2.0 * (l as f64).ln() - 2.0 * ln2.ln();
    if !(big > 0.0) {
        return Err(domain("l too small for the asymptotic solution"));
    }
    let arg = big - big.ln();
    if !(arg > 0.0) {
        return Err(domain("l too small for the asymptotic solution"));
    }
    Ok(a / arg.sqrt())
}

/// Standard quantum limit, Heisenberg limit and the `N^(-2/3)` scaling of
/// the best single-readout protocol, all divided by `sqrt(gammaT)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceLimits {
    pub sql: f64,
    pub heisenberg: f64,
    pub andre: f64,
}

pub fn reference_limits(atom_count: usize, gamma_t: f64) -> Result<ReferenceLimits> {
    if atom_count < 1 {
        return Err(domain("N must be >= 1"));
    }
    if !(gamma_t > 0.0) {
        return Err(domain(format!("gammaT must be positive, got {gamma_t}")));
    }
    let n = atom_count as f64;
    let s = gamma_t.sqrt();
    Ok(ReferenceLimits {
        sql: n.powf(-0.5) / s,
        heisenberg: 1.0 / n / s,
        andre: n.powf(-2.0 / 3.0) / s,
    })
}

//! Free-running local-oscillator noise and spectral estimation.
//!
//! Time is measured in units of the Ramsey time, so `T = 1` internally and
//! the only noise parameter is the dimensionless product `gamma * T`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use realfft::RealFftPlanner;

use crate::csv::{fmt_f64, Table};
use crate::error::{domain, Error, Result};

/// Sub-samples of the synthesized frequency trace per Ramsey window.
pub const PINK_SUBSAMPLES: usize = 8;

/// Default number of octaves of synthesized noise below the observation band.
pub const DEFAULT_DECADES_BELOW: u32 = 4;

// Largest synthesis grid we are willing to hold in memory.
const MAX_SYNTHESIS_LEN: usize = 1 << 27;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    White,
    Pink,
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
        })
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "white" => Ok(NoiseKind::White),
            "pink" | "1/f" | "flicker" => Ok(NoiseKind::Pink),
            other => Err(domain(format!("unknown noise kind '{other}'"))),
        }
    }
}

/// LO noise model.
///
/// For white noise `gamma` is the two-sided frequency-noise density, so the
/// per-cycle phase variance is `gamma * T`. For pink noise the frequency
/// spectrum is `gamma^2 / f`. `decades_below` sets the low-frequency cutoff at
/// `1 / (2^decades_below * l * T)` for a trace of `l` cycles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub gamma: f64,
    pub decades_below: u32,
}

impl NoiseModel {
    pub fn white(gamma: f64) -> Result<Self> {
        Self::new(NoiseKind::White, gamma, DEFAULT_DECADES_BELOW)
    }

    pub fn pink(gamma: f64, decades_below: u32) -> Result<Self> {
        Self::new(NoiseKind::Pink, gamma, decades_below)
    }

    pub fn new(kind: NoiseKind, gamma: f64, decades_below: u32) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(domain(format!("gamma must be positive, got {gamma}")));
        }
        if decades_below < 2 {
            return Err(domain(format!("decades_below must be >= 2, got {decades_below}")));
        }
        Ok(Self {
            kind,
            gamma,
            decades_below,
        })
    }

    /// Draw a trace of `l` cycles with Ramsey time `ramsey_time`.
    pub fn trace<R: Rng + ?Sized>(&self, ramsey_time: f64, l: usize, rng: &mut R) -> Result<LoTrace> {
        let gt = self.gamma * ramsey_time;
        let mut trace = match self.kind {
            NoiseKind::White => gen_white_trace(gt, l, rng)?,
            NoiseKind::Pink => gen_pink_trace(gt, l, self.decades_below, rng)?,
        };
        trace.ramsey_time = ramsey_time;
        Ok(trace)
    }
}

/// Per-cycle free-running phase increments.
#[derive(Debug, Clone, PartialEq)]
pub struct LoTrace {
    pub ramsey_time: f64,
    pub increments: Vec<f64>,
}

impl LoTrace {
    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    /// Mean frequency offset in each cycle, `increment / T`.
    pub fn frequency_series(&self) -> Vec<f64> {
        self.increments.iter().map(|p| p / self.ramsey_time).collect()
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["index", "value"]).with_meta("ramsey_time", fmt_f64(self.ramsey_time));
        for (k, v) in self.increments.iter().enumerate() {
            t.push_row(vec![(k + 1).to_string(), fmt_f64(*v)]);
        }
        t
    }
}

fn check_common(gamma_t: f64, l: usize) -> Result<()> {
    if !(gamma_t > 0.0) || !gamma_t.is_finite() {
        return Err(domain(format!("gammaT must be positive, got {gamma_t}")));
    }
    if l == 0 {
        return Err(Error::Length("cycle count must be positive".into()));
    }
    Ok(())
}

/// White frequency noise: i.i.d. `N(0, gammaT)` phase increments.
pub fn gen_white_trace<R: Rng + ?Sized>(gamma_t: f64, l: usize, rng: &mut R) -> Result<LoTrace> {
    check_common(gamma_t, l)?;
    let sd = gamma_t.sqrt();
    let increments = (0..l).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
    Ok(LoTrace {
        ramsey_time: 1.0,
        increments,
    })
}

/// 1/f frequency noise integrated over each Ramsey window.
///
/// The frequency trace is synthesized on a grid of `2^decades_below * l`
/// cycles with [`PINK_SUBSAMPLES`] points per cycle; only the last `l` cycles
/// are returned.
pub fn gen_pink_trace<R: Rng + ?Sized>(gamma_t: f64, l: usize, decades_below: u32, rng: &mut R) -> Result<LoTrace> {
    let all = pink_increments_with_history(gamma_t, l, decades_below, rng)?;
    let increments = all[all.len() - l..].to_vec();
    Ok(LoTrace {
        ramsey_time: 1.0,
        increments,
    })
}

/// Every synthesized cycle, oldest first. The last `l` entries are the
/// trace returned by [`gen_pink_trace`].
pub(crate) fn pink_increments_with_history<R: Rng + ?Sized>(
    gamma_t: f64,
    l: usize,
    decades_below: u32,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_common(gamma_t, l)?;
    if decades_below < 2 {
        return Err(domain(format!("decades_below must be >= 2, got {decades_below}")));
    }
    let cycles = l
        .checked_mul(1usize << decades_below.min(40))
        .filter(|c| c.checked_mul(PINK_SUBSAMPLES).is_some_and(|m| m <= MAX_SYNTHESIS_LEN))
        .ok_or_else(|| {
            Error::Length(format!(
                "l={l} with decades_below={decades_below} exceeds the synthesis limit of {MAX_SYNTHESIS_LEN} samples"
            ))
        })?;
    let m = cycles * PINK_SUBSAMPLES;
    let dt = 1.0 / PINK_SUBSAMPLES as f64;
    let df = 1.0 / (m as f64 * dt);
    let gamma = gamma_t; // T = 1

    // E|X_k|^2 = M S(f_k) / dt with S(f) = gamma^2 / f on [df, 1/2].
    let mut spectrum = vec![Complex64::new(0.0, 0.0); m / 2 + 1];
    for (k, x) in spectrum.iter_mut().enumerate().skip(1) {
        let f = k as f64 * df;
        if f > 0.5 {
            break;
        }
        let power = m as f64 * gamma * gamma / f / dt;
        if 2 * k == m {
            *x = Complex64::new(power.sqrt() * rng.sample::<f64, _>(StandardNormal), 0.0);
        } else {
            let s = (0.5 * power).sqrt();
            *x = Complex64::new(
                s * rng.sample::<f64, _>(StandardNormal),
                s * rng.sample::<f64, _>(StandardNormal),
            );
        }
    }
    let mut planner = RealFftPlanner::<f64>::new();
    let c2r = planner.plan_fft_inverse(m);
    let mut freq = vec![0.0; m];
    c2r.process(&mut spectrum, &mut freq)
        .map_err(|e| Error::Numerical(format!("inverse FFT failed: {e}")))?;
    let scale = dt / m as f64;
    Ok(freq
        .chunks_exact(PINK_SUBSAMPLES)
        .map(|w| w.iter().sum::<f64>() * scale)
        .collect())
}

/// Power spectral density on `f = 0 .. 1/(2T)`.
///
/// `power` is at the two-sided level: white frequency noise of variance
/// `gamma / T` per sample gives a plateau at `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub frequency: Vec<f64>,
    pub power: Vec<f64>,
    /// Frequency resolution `1 / (L T)`.
    pub df: f64,
    /// Length of the series the spectrum was computed from.
    pub series_len: usize,
}

impl Spectrum {
    /// Integral over both signs of frequency; equals the mean square of the
    /// input series.
    pub fn integrate(&self) -> f64 {
        let last = self.power.len() - 1;
        let nyquist_is_single = self.series_len.is_multiple_of(2);
        let mut acc = self.power[0];
        for (j, p) in self.power.iter().enumerate().skip(1) {
            acc += if j == last && nyquist_is_single { *p } else { 2.0 * p };
        }
        acc * self.df
    }

    /// Mean power over bins with `lo <= f <= hi`.
    pub fn band_mean(&self, lo: f64, hi: f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .frequency
            .iter()
            .zip(&self.power)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .map(|(_, p)| *p)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    /// Least-squares slope of `ln S` against `ln f` over `lo <= f <= hi`.
    pub fn log_slope(&self, lo: f64, hi: f64) -> Result<f64> {
        let pts: Vec<(f64, f64)> = self
            .frequency
            .iter()
            .zip(&self.power)
            .filter(|(f, p)| **f >= lo && **f <= hi && **f > 0.0 && **p > 0.0)
            .map(|(f, p)| (f.ln(), p.ln()))
            .collect();
        if pts.len() < 3 {
            return Err(Error::Length(format!("only {} usable bins in [{lo}, {hi}]", pts.len())));
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Ok(sxy / sxx)
    }

    /// Bin-wise mean of spectra computed on the same grid.
    pub fn average(spectra: &[Spectrum]) -> Result<Spectrum> {
        let first = spectra
            .first()
            .ok_or_else(|| Error::Length("no spectra to average".into()))?;
        let mut out = first.clone();
        for s in &spectra[1..] {
            if s.power.len() != out.power.len() || s.df != out.df {
                return Err(Error::Mismatch("spectra on different grids".into()));
            }
            for (a, b) in out.power.iter_mut().zip(&s.power) {
                *a += b;
            }
        }
        let k = spectra.len() as f64;
        for a in out.power.iter_mut() {
            *a /= k;
        }
        Ok(out)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["frequency", "S"]).with_meta("df", fmt_f64(self.df));
        for (f, p) in self.frequency.iter().zip(&self.power) {
            t.push_row(vec![fmt_f64(*f), fmt_f64(*p)]);
        }
        t
    }
}

/// Periodogram `S(f_j) = (T / L) |X_j|^2`, `j = 0 ..= L/2`, of a per-cycle
/// frequency series sampled every `T`.
pub fn periodogram(series: &[f64], ramsey_time: f64) -> Result<Spectrum> {
    let len = series.len();
    if len < 16 {
        return Err(Error::Length(format!("periodogram needs >= 16 samples, got {len}")));
    }
    if !(ramsey_time > 0.0) {
        return Err(domain("ramsey time must be positive"));
    }
    let mut planner = RealFftPlanner::<f64>::new();
    let r2c = planner.plan_fft_forward(len);
    let mut input = series.to_vec();
    let mut out = r2c.make_output_vec();
    r2c.process(&mut input, &mut out)
        .map_err(|e| Error::Numerical(format!("forward FFT failed: {e}")))?;
    let df = 1.0 / (len as f64 * ramsey_time);
    let norm = ramsey_time / len as f64;
    Ok(Spectrum {
        frequency: (0..out.len()).map(|j| j as f64 * df).collect(),
        power: out.iter().map(|x| norm * x.norm_sqr()).collect(),
        df,
        series_len: len,
    })
}

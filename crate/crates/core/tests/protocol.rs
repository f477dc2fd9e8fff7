use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use qclock::measurement::calibrate_betas;
use qclock::protocol::{
    default_schedule, run_adaptive_sequence, run_conventional_ramsey, stage_residual_variances, Branch,
    ConventionalEstimator, Interrogator, MeasurementSchedule,
};
use qclock::rng::stream;
use qclock::spin::{build_squeezed_state, exact_moments, rotate_state, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Dense reference simulator: `J_x` diagonalized once by cyclic Jacobi,
/// rotations applied as `U exp(-i theta Lambda) U^dagger`.
struct Reference {
    j: f64,
    dim: usize,
    /// Real eigenvectors of `D^dagger J_x D` with `D = diag(i^k)`, column-major.
    vecs: Vec<f64>,
    vals: Vec<f64>,
    start: Vec<Complex64>,
    mean_jz: f64,
}

fn jacobi(a: &mut [f64], n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..50 {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).filter(move |q| *q != p).map(move |q| (p, q)))
            .map(|(p, q)| a[p * n + q].powi(2))
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    v
}

fn ipow(k: usize) -> Complex64 {
    [
        Complex64::new(1.0, 0.0),
        Complex64::new(0.0, 1.0),
        Complex64::new(-1.0, 0.0),
        Complex64::new(0.0, -1.0),
    ][k % 4]
}

impl Reference {
    fn new(atom_count: usize, kappa: f64) -> Self {
        let j = atom_count as f64 / 2.0;
        let dim = atom_count + 1;
        let c = |m: f64| (j * (j + 1.0) - m * (m + 1.0)).sqrt();
        let mut t = vec![0.0; dim * dim];
        for k in 0..dim - 1 {
            let m = k as f64 - j;
            t[(k + 1) * dim + k] = c(m) / 2.0;
            t[k * dim + k + 1] = c(m) / 2.0;
        }
        let vecs = jacobi(&mut t, dim);
        let vals = (0..dim).map(|i| t[i * dim + i]).collect();
        let mut start: Vec<Complex64> = (0..dim)
            .map(|k| {
                let m = k as f64 - j;
                let sign = if (k as i64 - j as i64).rem_euclid(2) == 0 {
                    1.0
                } else {
                    -1.0
                };
                Complex64::new(sign * (-(m / kappa).powi(2)).exp(), 0.0)
            })
            .collect();
        let norm: f64 = start.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        start.iter_mut().for_each(|a| *a /= norm);
        // <J_z> with J_z = -(J_+ + J_-)/2.
        let mut mean_jz = 0.0;
        for k in 0..dim - 1 {
            let m = k as f64 - j;
            mean_jz -= c(m) * (start[k + 1].conj() * start[k]).re;
        }
        Self {
            j,
            dim,
            vecs,
            vals,
            start,
            mean_jz,
        }
    }

    fn rotate(&self, psi: &mut [Complex64], theta: f64) {
        let n = self.dim;
        let y: Vec<Complex64> = (0..n).map(|k| psi[k] * ipow(4 - k % 4)).collect();
        let mut w = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n {
                acc += y[k] * self.vecs[k * n + i];
            }
            w[i] = acc * Complex64::from_polar(1.0, -theta * self.vals[i]);
        }
        for k in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n {
                acc += w[i] * self.vecs[k * n + i];
            }
            psi[k] = acc * ipow(k);
        }
    }

    fn sample_m<R: Rng>(&self, psi: &[Complex64], rng: &mut R) -> f64 {
        let mut u: f64 = rng.gen();
        for (k, a) in psi.iter().enumerate() {
            u -= a.norm_sqr();
            if u < 0.0 {
                return k as f64 - self.j;
            }
        }
        self.j
    }

    fn residual<R: Rng>(&self, phase: f64, omegas: &[f64], betas: &[f64], rng: &mut R) -> f64 {
        let mut psi = self.start.clone();
        self.rotate(&mut psi, -phase);
        let mut total = 0.0;
        for (om, beta) in omegas.iter().zip(betas) {
            let m = self.sample_m(&psi, rng);
            let z: f64 = rng.sample(StandardNormal);
            let p = -om * m + 0.5f64.sqrt() * z;
            for (k, a) in psi.iter_mut().enumerate() {
                let d = p + om * (k as f64 - self.j);
                *a *= (-0.5 * d * d).exp();
            }
            let norm: f64 = psi.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            psi.iter_mut().for_each(|a| *a /= norm);
            let e = -beta * p / (om * self.mean_jz);
            self.rotate(&mut psi, e);
            total += e;
        }
        let m = self.sample_m(&psi, rng);
        total += betas[omegas.len()] * m / self.mean_jz;
        phase - total
    }
}

fn rms_with_error(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let sq: Vec<f64> = samples.iter().map(|x| x * x).collect();
    let mean = sq.iter().sum::<f64>() / n;
    let var = sq.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let rms = mean.sqrt();
    (rms, (var / n).sqrt() / (2.0 * rms))
}

#[test]
fn reference_simulator_agrees_with_the_full_branch() {
    let n = 100;
    let kappa = 4.0;
    let gamma_t = 0.1;
    let reference = Reference::new(n, kappa);
    let exact = exact_moments(&build_squeezed_state(n, kappa).unwrap());
    assert!((reference.mean_jz - exact.mean_z).abs() < 1e-9 * exact.mean_z);

    let sched = default_schedule(n).unwrap();
    let sched = MeasurementSchedule { kappa, ..sched };
    let calib = Interrogator::adaptive(n, sched.clone(), Branch::Full).unwrap();
    let betas = calibrate_betas(&calib, gamma_t, 4000, 17).unwrap();
    let full = Interrogator::adaptive(n, sched.with_betas(betas.clone()).unwrap(), Branch::Full).unwrap();

    let trials = 100_000u64;
    let sd = gamma_t.sqrt();
    let ours: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(1, r);
            let phase = sd * rng.sample::<f64, _>(StandardNormal);
            full.residual(phase, &mut rng)
        })
        .collect();
    let omegas = &full.schedule().omegas;
    let theirs: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(2, r);
            let phase = sd * rng.sample::<f64, _>(StandardNormal);
            reference.residual(phase, omegas, &betas, &mut rng)
        })
        .collect();
    let (a, sa) = rms_with_error(&ours);
    let (b, sb) = rms_with_error(&theirs);
    assert!(
        (a - b).abs() < 3.0 * (sa * sa + sb * sb).sqrt(),
        "{a} +- {sa} vs {b} +- {sb}"
    );
}

#[test]
fn reference_rotation_matches_chebyshev_rotation() {
    let reference = Reference::new(30, 2.5);
    let ours = rotate_state(&build_squeezed_state(30, 2.5).unwrap(), Axis::Axis1, 1.3);
    let mut psi = reference.start.clone();
    reference.rotate(&mut psi, 1.3);
    for (a, b) in ours.amplitudes().iter().zip(&psi) {
        assert!((a - b).norm() < 1e-10);
    }
}

#[test]
fn single_stage_adaptive_equals_linear_conventional() {
    let n = 400;
    let sched = MeasurementSchedule::new(5.0, vec![], vec![0.9]).unwrap();
    for branch in [Branch::Full, Branch::Gaussian] {
        for r in 0..50 {
            let phase = 0.02 * r as f64 - 0.5;
            let a = run_adaptive_sequence(n, &sched, phase, branch, &mut stream(4, r)).unwrap();
            let b = run_conventional_ramsey(
                n,
                5.0,
                0.9,
                phase,
                branch,
                ConventionalEstimator::Linear,
                &mut stream(4, r),
            )
            .unwrap();
            assert_eq!(a.estimate, b.estimate);
        }
    }
}

#[test]
fn zero_phase_is_unbiased() {
    let n = 1000;
    let it = Interrogator::adaptive(n, default_schedule(n).unwrap(), Branch::Gaussian).unwrap();
    let runs = 10_000u64;
    let est: Vec<f64> = (0..runs).map(|r| it.run(0.0, &mut stream(6, r)).estimate).collect();
    let mean = est.iter().sum::<f64>() / runs as f64;
    let sd = (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / runs as f64).sqrt();
    assert!(mean.abs() < 4.0 * sd / (runs as f64).sqrt(), "{mean} sd {sd}");
}

#[test]
fn uncorrelated_readout_reaches_projection_noise() {
    let n = 400;
    let it = Interrogator::conventional(n, 20.0, 1.0, Branch::Full, ConventionalEstimator::ArcSine).unwrap();
    let sd = 0.1;
    let res: Vec<f64> = (0..20_000u64)
        .map(|r| {
            let mut rng = stream(8, r);
            let phase = sd * rng.sample::<f64, _>(StandardNormal);
            it.residual(phase, &mut rng)
        })
        .collect();
    let (rms, _) = rms_with_error(&res);
    let sql = 1.0 / (n as f64).sqrt();
    assert!(rms > 0.9 * sql && rms < 1.25 * sql, "{rms} vs {sql}");
}

fn mean_estimate(it: &Interrogator, phase: f64, runs: u64) -> f64 {
    (0..runs)
        .map(|r| it.run(phase, &mut stream(9, r)).estimate)
        .sum::<f64>()
        / runs as f64
}

#[test]
fn readout_cannot_tell_phases_mirrored_about_a_quarter_turn() {
    let n = 40;
    let kappa = 3.0;
    let s = build_squeezed_state(n, kappa).unwrap();
    for eps in [0.05, 0.2, 0.5] {
        let a = rotate_state(&s, Axis::Axis1, -(PI / 2.0 + eps)).probabilities();
        let b = rotate_state(&s, Axis::Axis1, -(PI / 2.0 - eps)).probabilities();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
    }
    let it = Interrogator::conventional(1000, 10.0, 1.0, Branch::Gaussian, ConventionalEstimator::ArcSine).unwrap();
    let bias = |p: f64| (mean_estimate(&it, p, 2000) - p).abs() / p;
    assert!(bias(0.3 * PI) < 0.1);
    assert!(bias(0.6 * PI) > 0.1);
    assert!(bias(0.8 * PI) > bias(0.6 * PI));
}

#[test]
fn adaptive_window_extends_to_large_phases() {
    let n = 1000;
    let mut it = Interrogator::adaptive(n, default_schedule(n).unwrap(), Branch::Gaussian).unwrap();
    it.set_betas(calibrate_betas(&it, 0.3, 4000, 2).unwrap()).unwrap();
    for frac in [0.1, 0.3, 0.5, 0.7, 0.8] {
        let p = frac * PI;
        let b = (mean_estimate(&it, p, 1000) - p).abs() / p;
        assert!(b < 0.1, "phase {frac} pi: bias {b}");
    }
}

fn calibrated_rms(n: usize, it: &mut Interrogator, gamma_t: f64, runs: usize) -> (f64, f64) {
    it.set_betas(calibrate_betas(it, gamma_t, 4000, 31).unwrap()).unwrap();
    let sd = gamma_t.sqrt();
    let res: Vec<f64> = (0..runs as u64)
        .map(|r| {
            let mut rng = stream(n as u64, r);
            let phase = sd * rng.sample::<f64, _>(StandardNormal);
            it.residual(phase, &mut rng)
        })
        .collect();
    rms_with_error(&res)
}

#[test]
fn adaptive_beats_conventional_at_its_best_squeezing() {
    let gamma_t = 0.1;
    for n in [100usize, 400, 1000] {
        let nf = n as f64;
        let best = |make: &dyn Fn(f64) -> Interrogator| {
            [1.5, 2.0, 3.0, 4.5, 7.0, 10.0, 15.0, nf.sqrt()]
                .into_iter()
                .filter(|k| *k <= nf.sqrt())
                .map(|k| calibrated_rms(n, &mut make(k), gamma_t, 4000))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .unwrap()
        };
        let conv =
            best(&|k| Interrogator::conventional(n, k, 1.0, Branch::Gaussian, ConventionalEstimator::ArcSine).unwrap());
        let sched = default_schedule(n).unwrap();
        let adap = best(&|k| {
            Interrogator::adaptive(
                n,
                MeasurementSchedule {
                    kappa: k,
                    ..sched.clone()
                },
                Branch::Gaussian,
            )
            .unwrap()
        });
        assert!(
            adap.0 <= conv.0 + 3.0 * (adap.1.powi(2) + conv.1.powi(2)).sqrt(),
            "N={n}: adaptive {adap:?} conventional {conv:?}"
        );
    }
}

#[test]
fn calibrated_stages_contract() {
    let n = 1000;
    let mut it = Interrogator::adaptive(n, default_schedule(n).unwrap(), Branch::Gaussian).unwrap();
    it.set_betas(calibrate_betas(&it, 0.1, 10_000, 5).unwrap()).unwrap();
    let nmax = qclock::analytics::n_max(n, it.schedule().kappa, 0.1, 500).unwrap();
    let v = stage_residual_variances(&it, 0.1, 20_000, 6).unwrap();
    for i in 1..v.len().min(nmax + 1) {
        // Same sequences at every stage; allow sampling jitter of 2%.
        assert!(v[i] <= v[i - 1] * 1.02, "stage {i}: {} -> {}", v[i - 1], v[i]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn residual_identity_from_stage_records(
        phase in -2.5f64..2.5,
        seed in any::<u64>(),
        full in any::<bool>(),
    ) {
        let n = 100;
        let branch = if full { Branch::Full } else { Branch::Gaussian };
        let r = run_adaptive_sequence(n, &default_schedule(n).unwrap(), phase, branch, &mut stream(seed, 0)).unwrap();
        let sum: f64 = r.stages.iter().map(|s| s.estimate.value).sum();
        prop_assert!((r.residual - (phase - sum)).abs() < 1e-12);
        prop_assert!((r.stages.last().unwrap().residual - r.residual).abs() < 1e-12);
        prop_assert_eq!(r.stages.len(), default_schedule(n).unwrap().n());
    }
}

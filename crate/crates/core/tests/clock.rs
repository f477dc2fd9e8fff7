use proptest::prelude::*;
use qclock::clock::{
    calibrate_config, locked_spectrum, run_clock, run_ensemble, run_open_loop, stability, ClockConfig, LoopMode,
    StabilityMethod,
};
use qclock::noise::{periodogram, NoiseKind, Spectrum};
use qclock::protocol::Protocol;
use qclock::rng::stream;
use rand::Rng;
use rand_distr::StandardNormal;

fn small_config(protocol: Protocol, noise: NoiseKind, seed: u64) -> ClockConfig {
    let mut c = ClockConfig::new(200, protocol, noise, 0.1).unwrap();
    c.cycles = 512;
    c.seed = seed;
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn feedback_bookkeeping_and_final_correction(
        seed in any::<u64>(),
        adaptive in any::<bool>(),
        pink in any::<bool>(),
        alpha in 0.01f64..0.95,
    ) {
        let protocol = if adaptive { Protocol::Adaptive } else { Protocol::Conventional };
        let noise = if pink { NoiseKind::Pink } else { NoiseKind::White };
        let mut c = small_config(protocol, noise, seed);
        c.alpha = alpha;
        c.loop_mode = LoopMode::Closed;
        let r = run_clock(&c, &mut stream(seed, 0)).unwrap();
        let mut sum = 0.0;
        for k in 0..r.cycles() {
            let want = r.free_phases[k] - r.initial_correction - alpha * sum;
            prop_assert!((r.true_phases[k] - want).abs() <= 1e-9 * (1.0 + want.abs()));
            prop_assert_eq!(r.corrections[k], -alpha * r.estimates[k]);
            sum += r.estimates[k];
        }
        let l = r.cycles() as f64;
        let direct: f64 = r.residuals().sum::<f64>() / l;
        prop_assert!((r.mean_offset - direct).abs() <= 1e-9 * direct.abs().max(1e-12));
    }
}

#[test]
fn open_loop_leaves_the_lo_alone() {
    for noise in [NoiseKind::White, NoiseKind::Pink] {
        let c = small_config(Protocol::Adaptive, noise, 3);
        let r = run_open_loop(&c, &mut stream(3, 0)).unwrap();
        assert_eq!(r.true_phases, r.free_phases);
        assert_eq!(r.initial_correction, 0.0);
    }
}

#[test]
fn quiet_lo_leaves_only_measurement_noise() {
    let mut c = ClockConfig::new(1000, Protocol::Conventional, NoiseKind::White, 1e-12).unwrap();
    c.cycles = 2000;
    let r = run_clock(&c, &mut stream(0, 0)).unwrap();
    assert!(r.true_phases.iter().all(|p| p.abs() < 1e-5));
    let rms = (r.residuals().map(|x| x * x).sum::<f64>() / 2000.0).sqrt();
    let sql = 1.0 / 1000f64.sqrt();
    assert!(rms > 0.8 * sql && rms < 1.2 * sql, "{rms}");
}

#[test]
fn slow_loop_matches_independent_sequences() {
    let mut c = ClockConfig::new(1000, Protocol::Adaptive, NoiseKind::White, 0.1).unwrap();
    c.loop_mode = LoopMode::Closed;
    c.alpha = 0.01;
    c.cycles = 20_000;
    calibrate_config(&mut c, 4000).unwrap();
    let s = stability(
        &[run_clock(&c, &mut stream(1, 0)).unwrap()],
        StabilityMethod::CycleResiduals,
    )
    .unwrap();

    let it = c.interrogator().unwrap();
    let samples: Vec<f64> = (0..20_000u64)
        .map(|r| {
            let mut rng = stream(2, r);
            let p = 0.1f64.sqrt() * rng.sample::<f64, _>(StandardNormal);
            it.residual(p, &mut rng).powi(2) / 0.1
        })
        .collect();
    let indep = qclock::clock::from_squared_samples(&samples);
    let tol = 3.0 * (s.stderr.powi(2) + indep.stderr.powi(2)).sqrt();
    assert!((s.sigma - indep.sigma).abs() < tol, "{s:?} vs {indep:?}");
}

#[test]
fn conventional_uncorrelated_hits_projection_limit() {
    let mut c = ClockConfig::new(10_000, Protocol::Conventional, NoiseKind::White, 0.1).unwrap();
    calibrate_config(&mut c, 4000).unwrap();
    let runs = run_ensemble(&c, 1).unwrap();
    let s = stability(&runs, StabilityMethod::CycleResiduals).unwrap();
    let want = 1.0 / 100.0 / 0.1f64.sqrt();
    assert!((s.sigma / want - 1.0).abs() < 0.15, "{} vs {want}", s.sigma);
}

#[test]
fn open_loop_spectrum_is_flat_at_free_running_level() {
    let mut c = ClockConfig::new(1000, Protocol::Adaptive, NoiseKind::White, 0.2).unwrap();
    c.cycles = 1 << 12;
    let spectra: Vec<Spectrum> = (0..20)
        .map(|s| locked_spectrum(&run_open_loop(&c, &mut stream(8, s)).unwrap()).unwrap())
        .collect();
    let avg = Spectrum::average(&spectra).unwrap();
    for (lo, hi) in [(1e-3, 1e-2), (1e-2, 1e-1), (1e-1, 0.5)] {
        let b = avg.band_mean(lo, hi).unwrap();
        assert!((b / 0.2 - 1.0).abs() < 0.1, "band {lo}-{hi}: {b}");
    }
    let free = periodogram(&run_open_loop(&c, &mut stream(8, 0)).unwrap().free_phases, 1.0).unwrap();
    assert_eq!(free, spectra[0]);
}

#[test]
fn ensembles_do_not_depend_on_thread_count() {
    let mut c = small_config(Protocol::Adaptive, NoiseKind::Pink, 77);
    c.cycles = 256;
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| run_ensemble(&c, 6).unwrap());
    let b = four.install(|| run_ensemble(&c, 6).unwrap());
    assert_eq!(a, b);
}

#[test]
fn run_sums_and_cycle_residuals_agree_for_white_noise() {
    let mut c = ClockConfig::new(400, Protocol::Conventional, NoiseKind::White, 0.1).unwrap();
    c.cycles = 1000;
    calibrate_config(&mut c, 2000).unwrap();
    let runs = run_ensemble(&c, 200).unwrap();
    let a = stability(&runs, StabilityMethod::RunSums).unwrap();
    let b = stability(&runs, StabilityMethod::CycleResiduals).unwrap();
    assert!(
        (a.sigma - b.sigma).abs() < 3.0 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt(),
        "{a:?} {b:?}"
    );
}

use slowfast::experiments::{convergence_study, dyadic_grid, rate_fit, strong_error, StudyConfig};
use slowfast::measure::{gaussian_cloud, w2_1d, w2_exact_small, w2_sliced};
use slowfast::model::{convolution_example, linear_benchmark, probe_assumptions, ConvolutionPair, LinearBenchmarkParams};
use slowfast::noise::{CounterNoise, NoiseRole, RecordingNoise};
use slowfast::solvers::{simulate_averaged, simulate_slowfast, BbarSource, TimeGrid};

fn small_study() -> StudyConfig {
    StudyConfig { horizon: 0.25, n_particles: 64, n_reps: 2, checkpoints: 4, bootstrap_samples: 50, ..Default::default() }
}

#[test]
fn slow_drift_without_fast_dependence_has_zero_averaging_error() {
    let model = linear_benchmark(LinearBenchmarkParams { a3: 0.0, ..Default::default() }).unwrap();
    let e = strong_error(&model, 0.0625, &small_study(), &CounterNoise::new(3)).unwrap();
    assert_eq!(e.error, 0.0);
    assert_eq!(e.standard_error, 0.0);
}

#[test]
fn slowfast_and_averaged_share_slow_noise_keys() {
    let model = linear_benchmark(LinearBenchmarkParams::default()).unwrap();
    let grid = TimeGrid::new(0.125, 32, 8).unwrap();
    let a = RecordingNoise::new(CounterNoise::new(5));
    let b = RecordingNoise::new(CounterNoise::new(5));
    simulate_slowfast(&model, 0.25, &grid, 4, &[1.0], &[1.0], 2, &a).unwrap();
    simulate_averaged(&model, &BbarSource::Analytic, &grid, 1, 4, &[1.0], 2, &b).unwrap();
    let (ka, kb) = (a.keys(NoiseRole::Slow), b.keys(NoiseRole::Slow));
    assert!(!ka.is_empty());
    assert_eq!(ka, kb);
    assert!(b.keys(NoiseRole::Fast).is_empty());
}

#[test]
fn study_output_is_worker_count_invariant() {
    let model = linear_benchmark(LinearBenchmarkParams::default()).unwrap();
    let run = |threads| {
        rayon_pool(threads).install(|| {
            convergence_study(&model, &dyadic_grid(2..=4), &small_study(), &CounterNoise::new(9)).unwrap()
        })
    };
    let (one, three) = (run(1), run(3));
    assert_eq!(one.errors(), three.errors());
    assert_eq!(one.standard_errors(), three.standard_errors());
    assert_eq!(one.slope_ci, three.slope_ci);
}

fn rayon_pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

#[test]
fn rate_fit_recovers_power_law() {
    let eps = dyadic_grid(4..=9);
    let err: Vec<f64> = eps.iter().map(|e| 0.3 * e.powf(1.0)).collect();
    let fit = rate_fit(&eps, &err, None).unwrap();
    assert!((fit.slope - 1.0).abs() < 1e-12);
    assert!((fit.intercept - 0.3f64.ln()).abs() < 1e-12);
}

#[test]
fn wasserstein_oracles_agree() {
    for k in 0..20 {
        let a = gaussian_cloud(1 + k % 12, 1, 1, 2 * k as u64).unwrap();
        let b = gaussian_cloud(1 + k % 12, 1, 1, 2 * k as u64 + 1).unwrap();
        let exact = w2_exact_small(&a, &b).unwrap();
        assert!((w2_1d(&a, &b).unwrap() - exact).abs() <= 1e-12);
        assert_eq!(w2_sliced(&a, &b, 7, k as u64).unwrap(), w2_1d(&a, &b).unwrap());
    }
}

#[test]
fn shipped_models_pass_the_assumption_probe() {
    for model in [
        linear_benchmark(LinearBenchmarkParams::default()).unwrap(),
        convolution_example(ConvolutionPair::Sine).unwrap(),
    ] {
        for seed in 0..3 {
            let report = probe_assumptions(&model, 500, seed).unwrap();
            assert!(report.supports_declared_beta(model.beta), "{} seed {seed}: {report:?}", model.id);
        }
    }
}

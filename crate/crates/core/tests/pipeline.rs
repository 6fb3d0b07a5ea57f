//! Cross-module integration checks on realistic synthetic data.

use lmm_core::*;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Monte-Carlo estimate of the Bayes-optimal accuracy for equiprobable
/// isotropic Gaussian classes: draw from each class, classify by nearest
/// mean (the Bayes rule for shared spherical covariance).
fn bayes_accuracy_monte_carlo(spec: &GaussianMixtureSpec, draws_per_class: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(987654321);
    let m = spec.class_means.len();
    let dim = spec.class_means[0].len();
    let mut correct = 0usize;
    for class in 0..m {
        for _ in 0..draws_per_class {
            let point: Vec<f64> = (0..dim)
                .map(|d| {
                    // Box-Muller keeps the oracle independent of rand_distr.
                    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    let u2: f64 = rng.gen::<f64>();
                    let z = (-2.0 * u1.ln()).sqrt()
                        * (2.0 * std::f64::consts::PI * u2).cos();
                    spec.class_means[class][d] + spec.std_dev * z
                })
                .collect();
            let mut best = 0;
            let mut best_dist = f64::INFINITY;
            for (c, mean) in spec.class_means.iter().enumerate() {
                let dist: f64 = mean
                    .iter()
                    .zip(&point)
                    .map(|(mu, x)| (x - mu) * (x - mu))
                    .sum();
                if dist < best_dist {
                    best_dist = dist;
                    best = c;
                }
            }
            if best == class {
                correct += 1;
            }
        }
    }
    correct as f64 / (m * draws_per_class) as f64
}

#[test]
fn pentagon_classifier_approaches_bayes_accuracy() {
    let spec = GaussianMixtureSpec::pentagon(4.0);
    let bayes = bayes_accuracy_monte_carlo(&spec, 200_000); // 10^6 draws total

    let train_set = synth_gaussians(&spec, 200, 61).unwrap();
    let val = synth_gaussians(&spec, 60, 62).unwrap();
    let test = synth_gaussians(&spec, 400, 63).unwrap();
    let mut config = TrainConfig::new(TrainMode::Default, 0.0, 7);
    config.learning_rate = 1e-2;
    config.epochs = 80;
    let report = train(&config, &train_set, &val, &test).unwrap();

    assert!(
        (report.final_test_accuracy - bayes).abs() <= 0.02,
        "trained accuracy {} vs Bayes {}",
        report.final_test_accuracy,
        bayes
    );
}

#[test]
fn refurbishment_membership_feeds_back_into_gating() {
    // After a sample enters the refurbished set, the gate accepts it even
    // when its prediction history alone would not.
    let ls = LabelSpace::new(2).unwrap();
    let mut store = HistoryStore::new(4, ls).unwrap();
    let mut psi = RefurbishedSet::new();
    for (epoch, class) in [(1, 0), (2, 1), (3, 0), (4, 1)] {
        let mut p = [0.1, 0.1];
        p[class] = 0.9;
        let sum: f64 = p.iter().sum();
        let p: Vec<f64> = p.iter().map(|v| v / sum).collect();
        store.record(5, epoch, &p).unwrap();
    }
    assert!(!store.is_refurbishable(5, 0.4, &psi));

    let weights = WeightVector::exponential(4, 2.0).unwrap();
    let window = store.window(5).unwrap();
    refurbish(
        5,
        window,
        &[0.5, 0.5],
        &weights,
        EvidenceMode::SoftProbability,
        5,
        &mut psi,
    )
    .unwrap();
    assert!(store.is_refurbishable(5, 0.4, &psi));
}

#[test]
fn end_to_end_noisy_training_improves_purity() {
    // Smaller-scale version of the benchmark: competent model at trigger
    // time, so the refurbished labels are mostly correct.
    let spec = GaussianMixtureSpec::two_cluster();
    let train_clean = synth_gaussians(&spec, 400, 71).unwrap();
    let val = synth_gaussians(&spec, 100, 72).unwrap();
    let test = synth_gaussians(&spec, 100, 73).unwrap();
    let matrix = NoiseTransitionMatrix::symmetric(2, 0.2).unwrap();
    let (noisy, _) = inject(&train_clean, &matrix, 74).unwrap();

    let mut config = TrainConfig::new(TrainMode::Lmm, 0.2, 11);
    config.learning_rate = 1e-2;
    config.epochs = 40;
    let report = train(&config, &noisy, &val, &test).unwrap();
    let injected_purity = 1.0 - matrix.noise_rate();
    assert!(report.trigger_epoch.is_some());
    let purity = report.final_purity.unwrap();
    assert!(
        purity > injected_purity + 0.05,
        "purity {purity} did not improve over injected {injected_purity}"
    );
}

#[test]
fn uniform_vote_ablation_runs_and_differs_from_weighted() {
    let spec = GaussianMixtureSpec::two_cluster();
    let train_clean = synth_gaussians(&spec, 200, 81).unwrap();
    let val = synth_gaussians(&spec, 60, 82).unwrap();
    let test = synth_gaussians(&spec, 60, 83).unwrap();
    let matrix = NoiseTransitionMatrix::symmetric(2, 0.3).unwrap();
    let (noisy, _) = inject(&train_clean, &matrix, 84).unwrap();

    let mut weighted = TrainConfig::new(TrainMode::Lmm, 0.3, 21);
    weighted.learning_rate = 1e-2;
    weighted.epochs = 30;
    let mut ablation = weighted.clone();
    ablation.mode = TrainMode::UniformVoteAblation;

    let a = train(&weighted, &noisy, &val, &test).unwrap();
    let b = train(&ablation, &noisy, &val, &test).unwrap();
    assert!(a.trigger_epoch.is_some());
    assert!(b.trigger_epoch.is_some());
    // Same gate, same data: both refurbish, by different evidence rules.
    assert!(!a.psi.is_empty());
    assert!(!b.psi.is_empty());
}

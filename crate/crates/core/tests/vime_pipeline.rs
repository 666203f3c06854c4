use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use progcpr::nn::Matrix;
use progcpr::vime::{corrupt, pretext_train, reconstruction_error, VimeConfig, VimeModel};

#[test]
fn empirical_mask_rate_matches_probability() {
    let p_m = 0.3;
    let x = Matrix::from_vec(1000, 100, (0..100_000).map(|i| i as f64).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (_, mask) = corrupt(&x, p_m, &mut rng).unwrap();
    let n = mask.as_slice().len() as f64;
    let rate = mask.as_slice().iter().sum::<f64>() / n;
    let sigma = (p_m * (1.0 - p_m) / n).sqrt();
    assert!((rate - p_m).abs() < 3.0 * sigma, "rate {rate}");
}

#[test]
fn rank_one_data_is_reconstructed() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let rows: Vec<Vec<f64>> = (0..512)
        .map(|_| {
            let a: f64 = rng.random_range(-2.0..2.0);
            v.iter().map(|x| a * x).collect()
        })
        .collect();
    let x = Matrix::from_rows(&rows);
    let cfg = VimeConfig {
        latent_dim: 16,
        p_m: 0.1,
        pretext_epochs: 60,
        batch_size: 32,
        optimizer: progcpr::nn::OptimizerConfig::adam(0.005),
        ..VimeConfig::default()
    };
    let model = VimeModel::new(8, 2, &cfg, 3);
    let before = reconstruction_error(&model, &x).unwrap();
    let (trained, curve) = pretext_train(model, &x, &cfg, 3).unwrap();
    let after = reconstruction_error(&trained, &x).unwrap();
    assert!(curve.last().unwrap() < &curve[0]);
    assert!(after < 0.1 * before, "before {before}, after {after}");
}

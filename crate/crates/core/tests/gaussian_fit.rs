//! Goodness of fit of the Gaussian sampler.

use adaclip::numerics::gaussian_sample;
use adaclip::RngStream;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

#[test]
fn chi_squared_fit_one_million() {
    let n = 1_000_000;
    let bins = 100;
    let mut rng = RngStream::new(2024, 7);
    let sample = gaussian_sample(&mut rng, n, 1.0).unwrap();
    let normal = Normal::new(0.0, 1.0).unwrap();

    // Equiprobable bins from the normal quantiles.
    let edges: Vec<f64> = (1..bins).map(|k| normal.inverse_cdf(k as f64 / bins as f64)).collect();
    let mut counts = vec![0usize; bins];
    for &x in sample.iter() {
        counts[edges.partition_point(|&e| e < x)] += 1;
    }
    let expected = n as f64 / bins as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new((bins - 1) as f64).unwrap().inverse_cdf(1.0 - 0.001);
    assert!(stat < critical, "chi2 {stat} >= {critical}");
}

#[test]
fn scaled_sample_matches_std() {
    let mut rng = RngStream::new(5, 1);
    let v = gaussian_sample(&mut rng, 200_000, 2.5).unwrap();
    let var = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
    assert!((var / 6.25 - 1.0).abs() < 0.02, "{var}");
}

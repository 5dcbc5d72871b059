use adaclip::estimator::{
    optimal_scale, optimal_transform, transformed_second_moment, whitening_scale, MomentConfig, MomentState,
};
use adaclip::RealVector;
use adaclip::RngStream;
use proptest::prelude::*;

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[test]
fn reference_minimizer_agrees() {
    // Reference point found by a general-purpose constrained optimizer
    // (sequential quadratic programming, 20 random starts) over both a and b
    // for m = (0.2, -0.4, 0.1).
    let m = [0.2, -0.4, 0.1];
    let s = [0.3, 0.1, 0.6];
    let state = MomentState::from_parts(
        RealVector::new(m.to_vec()).unwrap(),
        RealVector::new(s.to_vec()).unwrap(),
        MomentConfig::default(),
    )
    .unwrap();
    let t = optimal_transform(&state, 1.0).unwrap();
    assert_eq!(t.shift().as_slice(), &m);
    let reference_b = [0.547_722_56, 0.316_227_76, 0.774_596_67];
    for (b, r) in t.scale().iter().zip(reference_b) {
        assert!((b - r).abs() < 1e-7);
    }
    assert!((sum_sq(t.scale()) - 0.999_999_999_999_963_6).abs() < 1e-9);
}

#[test]
fn no_random_feasible_candidate_beats_optimum() {
    let mut rng = RngStream::new(77, 0);
    for _ in 0..100 {
        let d = 2 + rng.below(7);
        let gamma = [0.5, 1.0, 2.0][rng.below(3)];
        let s: Vec<f64> = (0..d).map(|_| 0.01 + rng.uniform()).collect();
        let m: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let best = sum_sq(&optimal_scale(&s, gamma).unwrap());
        for _ in 0..1000 {
            let a: Vec<f64> = m.iter().map(|mi| mi + 0.3 * rng.standard_normal()).collect();
            let mut b: Vec<f64> = (0..d).map(|_| 0.05 + 2.0 * rng.uniform()).collect();
            // Scale up until feasible; the constraint is homogeneous of degree -2.
            let load = transformed_second_moment(&m, &s, &a, &b);
            let grow = (load / gamma).sqrt().max(1.0);
            b.iter_mut().for_each(|x| *x *= grow);
            assert!(transformed_second_moment(&m, &s, &a, &b) <= gamma * (1.0 + 1e-12));
            assert!(sum_sq(&b) >= best - 1e-9);
        }
    }
}

proptest! {
    #[test]
    fn constraint_is_tight(s in prop::collection::vec(1e-3f64..10.0, 1..9), gamma in 0.1f64..5.0) {
        let b = optimal_scale(&s, gamma).unwrap();
        let load: f64 = s.iter().zip(&b).map(|(s, b)| s * s / (b * b)).sum();
        prop_assert!((load / gamma - 1.0).abs() < 1e-12);
        let total: f64 = s.iter().sum();
        prop_assert!((sum_sq(&b) / (total * total / gamma) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn optimal_never_worse_than_whitening(s in prop::collection::vec(1e-3f64..10.0, 1..9), gamma in 0.1f64..5.0) {
        let o = sum_sq(&optimal_scale(&s, gamma).unwrap());
        let w = sum_sq(&whitening_scale(&s, gamma).unwrap());
        prop_assert!(o <= w * (1.0 + 1e-12));
        let spread = s.iter().cloned().fold(f64::MIN, f64::max) - s.iter().cloned().fold(f64::MAX, f64::min);
        if spread > 1e-2 {
            prop_assert!(o < w);
        }
    }

    #[test]
    fn clamp_keeps_std_in_range(
        steps in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 1..40),
        sigma in 0.0f64..10.0,
        h2 in 1e-6f64..1e3,
    ) {
        let config = MomentConfig { h2, ..MomentConfig::default() };
        let mut st = MomentState::new(3, config).unwrap();
        for g in &steps {
            let b = optimal_scale(st.std(), 1.0).unwrap();
            st.observe(g, &b, sigma, 1).unwrap();
            for &s in st.std() {
                prop_assert!(s >= config.h1.sqrt() * (1.0 - 1e-12));
                prop_assert!(s <= h2.sqrt() * (1.0 + 1e-12));
            }
        }
    }
}

#[test]
fn variance_recovery_debiases_noise() {
    // Final s^2 after 1000 steps, averaged over independent streams,
    // recovers the per-coordinate variance although the injected noise
    // variance b^2 sigma^2 is a quarter of it. The upper clamp must sit
    // well above the largest squared deviation or it truncates the estimate.
    let s_star = [0.1, 0.3, 0.6, 1.0];
    let m_star = [0.5, -0.2, 0.0, 1.0];
    let b: Vec<f64> = s_star.iter().map(|s| s / 2.0).collect();
    let sigma = 0.5;
    let replicates = 200;
    let mut acc = [0.0; 4];
    for r in 0..replicates {
        let config = MomentConfig { h2: 100.0, ..MomentConfig::default() };
        let mut st = MomentState::new(4, config).unwrap();
        let mut rng = RngStream::new(11, r);
        for _ in 0..1000 {
            let g: Vec<f64> = (0..4)
                .map(|i| m_star[i] + s_star[i] * rng.standard_normal() + b[i] * sigma * rng.standard_normal())
                .collect();
            st.observe(&g, &b, sigma, 1).unwrap();
        }
        for (a, s) in acc.iter_mut().zip(st.std()) {
            *a += s * s;
        }
    }
    for i in 0..4 {
        let rec = (acc[i] / replicates as f64).sqrt();
        assert!((rec / s_star[i] - 1.0).abs() < 0.05, "coord {i}: {rec} vs {}", s_star[i]);
    }
}

//! Self-checks behind `adaclip verify`: the closed-form transform against a
//! numeric constrained minimizer, and the Gaussian calibration roundtrip.

use adaclip::accountant::{gaussian_delta_for, gaussian_sigma_for};
use adaclip::estimator::{optimal_scale, transformed_second_moment};
use adaclip::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

fn golden_section(mut lo: f64, mut hi: f64, tol: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Minimum of `sum b^2` subject to `sum (s^2 + (m - a)^2) / b^2 <= gamma`.
///
/// The constraint is active at the optimum, so for log-scales `y` the
/// feasible rescaling of `b^2 = exp(y)` gives the objective
/// `(sum x)(sum c / x) / gamma`, minimized by cyclic golden-section search
/// over every `a_i` and `y_i`.
pub fn numeric_min_noise(m: &[f64], s: &[f64], gamma: f64) -> f64 {
    let d = m.len();
    let mut a = vec![0.0; d];
    let mut y = vec![0.0; d];
    let objective = |a: &[f64], y: &[f64]| {
        let b: Vec<f64> = y.iter().map(|v| (0.5 * v).exp()).collect();
        let bsq: f64 = b.iter().map(|x| x * x).sum();
        bsq * transformed_second_moment(m, s, a, &b) / gamma
    };
    let mut best = objective(&a, &y);
    for _ in 0..2000 {
        for i in 0..d {
            let lo = m.iter().chain(&a).fold(f64::INFINITY, |x, &v| x.min(v)) - 1.0;
            let hi = m.iter().chain(&a).fold(f64::NEG_INFINITY, |x, &v| x.max(v)) + 1.0;
            let mut trial = a.clone();
            a[i] = golden_section(lo, hi, 1e-13, |v| {
                trial[i] = v;
                objective(&trial, &y)
            });
            let centre = y[i];
            let mut trial = y.clone();
            y[i] = golden_section(centre - 4.0, centre + 4.0, 1e-13, |v| {
                trial[i] = v;
                objective(&a, &trial)
            });
        }
        let next = objective(&a, &y);
        let done = best - next <= 1e-15 * best;
        best = best.min(next);
        if done {
            break;
        }
    }
    best
}

/// Closed form against the numeric minimizer and random feasible points.
pub fn transform_optimality(instances: usize, candidates: usize, seed: u64) -> Check {
    let root = RngStream::new(seed, 0);
    let mut worst_closed = 0.0f64;
    let mut worst_numeric = 0.0f64;
    let mut beaten = 0usize;
    for k in 0..instances {
        let mut rng = root.derive(k as u64);
        let d = 2 + rng.below(7);
        let gamma = [0.5, 1.0, 2.0][rng.below(3)];
        let s: Vec<f64> = (0..d).map(|_| 1.0 - rng.uniform()).collect();
        let m: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let b = match optimal_scale(&s, gamma) {
            Ok(b) => b,
            Err(e) => {
                return Check { name: "transform optimality", passed: false, detail: e.to_string() };
            }
        };
        let closed: f64 = b.iter().map(|x| x * x).sum();
        let target = s.iter().sum::<f64>().powi(2) / gamma;
        worst_closed = worst_closed.max((closed - target).abs() / target);
        let numeric = numeric_min_noise(&m, &s, gamma);
        worst_numeric = worst_numeric.max((numeric - closed).abs() / closed);
        for _ in 0..candidates {
            let a: Vec<f64> = m.iter().map(|&mi| mi + 0.5 * rng.standard_normal()).collect();
            let mut cand: Vec<f64> = (0..d).map(|_| (2.0 * rng.standard_normal()).exp()).collect();
            // Rescale onto the constraint boundary.
            let scale = (transformed_second_moment(&m, &s, &a, &cand) / gamma).sqrt();
            cand.iter_mut().for_each(|v| *v *= scale);
            let cost: f64 = cand.iter().map(|x| x * x).sum();
            if cost < closed * (1.0 - 1e-12) {
                beaten += 1;
            }
        }
    }
    Check {
        name: "transform optimality",
        passed: worst_closed <= 1e-9 && worst_numeric <= 1e-6 && beaten == 0,
        detail: format!(
            "{instances} instances; max rel err closed form {worst_closed:.2e}, numeric minimizer {worst_numeric:.2e}; {beaten} candidates beat it"
        ),
    }
}

/// `sigma(eps, delta)` fed back into the tail bound recovers `delta`.
pub fn calibration_roundtrip(trials: usize, seed: u64) -> Check {
    let mut rng = RngStream::new(seed, 1);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let eps = 0.01 + 0.98 * rng.uniform();
        let delta = 10f64.powf(-1.0 - 9.0 * rng.uniform());
        match gaussian_sigma_for(eps, delta) {
            Ok(sigma) => worst = worst.max((gaussian_delta_for(sigma, eps) - delta).abs() / delta),
            Err(e) => return Check { name: "calibration roundtrip", passed: false, detail: e.to_string() },
        }
    }
    let reference = gaussian_sigma_for(0.5, 1e-5).map_or(f64::NAN, |s| (s - 9.503_591_705_731_478).abs());
    Check {
        name: "calibration roundtrip",
        passed: worst <= 1e-9 && reference <= 1e-6,
        detail: format!("{trials} pairs; max rel delta err {worst:.2e}; sigma(0.5, 1e-5) off by {reference:.2e}"),
    }
}

pub fn run_all(seed: u64) -> Vec<Check> {
    vec![transform_optimality(100, 1000, seed), calibration_roundtrip(100, seed)]
}

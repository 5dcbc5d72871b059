//! Private running estimates of per-coordinate gradient mean and standard
//! deviation, and the transforms built from them.

use crate::error::{invalid, Error, Result};
use crate::mechanism::TransformParams;
use crate::numerics::RealVector;

pub const DEFAULT_BETA1: f64 = 0.99;
pub const DEFAULT_BETA2: f64 = 0.9;
pub const DEFAULT_H1: f64 = 1e-12;
pub const DEFAULT_H2: f64 = 1.0;

/// Hyperparameters of the moment estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub h1: f64,
    pub h2: f64,
}

impl Default for MomentConfig {
    fn default() -> Self {
        Self { beta1: DEFAULT_BETA1, beta2: DEFAULT_BETA2, h1: DEFAULT_H1, h2: DEFAULT_H2 }
    }
}

impl MomentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(invalid(format!("{name} must lie in [0, 1), got {beta}")));
            }
        }
        if !(self.h1 > 0.0) || !self.h2.is_finite() || !(self.h2 > self.h1) {
            return Err(invalid(format!("clamp bounds need 0 < h1 < h2, got h1={} h2={}", self.h1, self.h2)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    m: Vec<f64>,
    s: Vec<f64>,
    config: MomentConfig,
}

impl MomentState {
    /// `m = 0`, `s = sqrt(h1 h2)`.
    pub fn new(dim: usize, config: MomentConfig) -> Result<Self> {
        config.validate()?;
        if dim == 0 {
            return Err(invalid("moment state needs a positive dimension"));
        }
        Ok(Self { m: vec![0.0; dim], s: vec![(config.h1 * config.h2).sqrt(); dim], config })
    }

    pub fn with_defaults(dim: usize) -> Result<Self> {
        Self::new(dim, MomentConfig::default())
    }

    /// Builds a state from explicit estimates. `s` must be strictly
    /// positive; it is not forced into the clamp range.
    pub fn from_parts(m: RealVector, s: RealVector, config: MomentConfig) -> Result<Self> {
        config.validate()?;
        if m.dim() != s.dim() {
            return Err(invalid(format!("m has dim {} but s has dim {}", m.dim(), s.dim())));
        }
        check_positive(&s)?;
        Ok(Self { m: m.into_inner(), s: s.into_inner(), config })
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.m
    }

    pub fn std(&self) -> &[f64] {
        &self.s
    }

    pub fn config(&self) -> &MomentConfig {
        &self.config
    }

    fn check_dim(&self, what: &str, dim: usize) -> Result<()> {
        if dim == self.dim() {
            Ok(())
        } else {
            Err(invalid(format!("{what} has dim {dim}, state has dim {}", self.dim())))
        }
    }

    /// `m <- beta1 m + (1 - beta1) g`.
    pub fn update_mean(&mut self, g: &[f64]) -> Result<()> {
        self.check_dim("gradient", g.len())?;
        let beta = self.config.beta1;
        for (m, &gi) in self.m.iter_mut().zip(g) {
            *m = beta * *m + (1.0 - beta) * gi;
        }
        Ok(())
    }

    /// `v = clamp((g - m)^2 - b^2 sigma^2, h1, h2)`, `s^2 <- beta2 s^2 + (1 - beta2) v`,
    /// with `m` the estimate before this step's mean update.
    pub fn update_std(&mut self, g: &[f64], b: &[f64], sigma: f64) -> Result<()> {
        self.update_std_batched(g, b, sigma, 1)
    }

    /// Variance update for the average of `batch_size` per-example
    /// gradients whose added noise has standard deviation `b * sigma_eff`
    /// per coordinate. The debiased squared deviation estimates the
    /// variance of the average, so it is scaled by `batch_size` to recover
    /// the per-example variance. Equal to [`Self::update_std`] at
    /// `batch_size = 1`.
    pub fn update_std_batched(&mut self, g: &[f64], b: &[f64], sigma_eff: f64, batch_size: usize) -> Result<()> {
        self.check_dim("gradient", g.len())?;
        self.check_dim("scale", b.len())?;
        if !(sigma_eff >= 0.0) {
            return Err(invalid(format!("sigma must be nonnegative, got {sigma_eff}")));
        }
        if batch_size == 0 {
            return Err(invalid("batch size must be positive"));
        }
        let MomentConfig { beta2, h1, h2, .. } = self.config;
        let scale = batch_size as f64;
        let var = sigma_eff * sigma_eff;
        for i in 0..self.dim() {
            let dev = g[i] - self.m[i];
            let v = (scale * (dev * dev - b[i] * b[i] * var)).clamp(h1, h2);
            let s2 = beta2 * self.s[i] * self.s[i] + (1.0 - beta2) * v;
            self.s[i] = s2.sqrt();
        }
        Ok(())
    }

    /// Std then mean, both from the same averaged noisy gradient.
    pub fn observe(&mut self, g: &[f64], b: &[f64], sigma_eff: f64, batch_size: usize) -> Result<()> {
        self.update_std_batched(g, b, sigma_eff, batch_size)?;
        self.update_mean(g)
    }

    /// Snapshot as CSV with header `coordinate,m,s`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("coordinate,m,s\n");
        for (i, (m, s)) in self.m.iter().zip(&self.s).enumerate() {
            out.push_str(&format!("{i},{m},{s}\n"));
        }
        out
    }
}

fn check_positive(s: &[f64]) -> Result<()> {
    match s.iter().position(|&x| !(x > 0.0)) {
        Some(i) => Err(Error::InvalidState(format!("std estimate s[{i}] = {} is not positive", s[i]))),
        None => Ok(()),
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("gamma must be positive, got {gamma}")))
    }
}

/// Optimal scales `b_i = sqrt(s_i / gamma) sqrt(sum_j s_j)`, without the
/// shift.
pub fn optimal_scale(s: &[f64], gamma: f64) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    check_positive(s)?;
    let total: f64 = s.iter().sum();
    Ok(s.iter().map(|&si| (si / gamma).sqrt() * total.sqrt()).collect())
}

/// Whitening scales `b_i = sqrt(d) s_i / sqrt(gamma)`.
pub fn whitening_scale(s: &[f64], gamma: f64) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    check_positive(s)?;
    let root_d = (s.len() as f64).sqrt();
    Ok(s.iter().map(|&si| root_d * si / gamma.sqrt()).collect())
}

/// `a = m`, `b` minimizing `sum b^2` subject to `sum s^2 / b^2 <= gamma`.
pub fn optimal_transform(state: &MomentState, gamma: f64) -> Result<TransformParams> {
    let b = optimal_scale(&state.s, gamma)?;
    TransformParams::new(RealVector::new(state.m.clone())?, RealVector::new(b)?)
}

/// `a = m`, `b_i = sqrt(d) s_i / sqrt(gamma)`.
pub fn whitening_transform(state: &MomentState, gamma: f64) -> Result<TransformParams> {
    let b = whitening_scale(&state.s, gamma)?;
    TransformParams::new(RealVector::new(state.m.clone())?, RealVector::new(b)?)
}

/// `sum_i (s_i^2 + (m_i - a_i)^2) / b_i^2`, the expected squared norm of
/// the transformed gradient.
pub fn transformed_second_moment(m: &[f64], s: &[f64], a: &[f64], b: &[f64]) -> f64 {
    (0..s.len()).map(|i| (s[i] * s[i] + (m[i] - a[i]).powi(2)) / (b[i] * b[i])).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(m: &[f64], s: &[f64]) -> MomentState {
        MomentState::from_parts(
            RealVector::new(m.to_vec()).unwrap(),
            RealVector::new(s.to_vec()).unwrap(),
            MomentConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn initial_state() {
        let st = MomentState::with_defaults(4).unwrap();
        assert_eq!(st.mean(), &[0.0; 4]);
        assert!(st.std().iter().all(|&s| (s - 1e-6).abs() < 1e-18));
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = MomentConfig::default();
        c.h2 = c.h1;
        assert!(MomentState::new(2, c).is_err());
        c = MomentConfig { beta1: 1.0, ..Default::default() };
        assert!(MomentState::new(2, c).is_err());
    }

    #[test]
    fn optimal_example() {
        let st = state(&[0.0; 3], &[0.3, 0.1, 0.6]);
        let t = optimal_transform(&st, 1.0).unwrap();
        let expected = [0.3_f64.sqrt(), 0.1_f64.sqrt(), 0.6_f64.sqrt()];
        for (b, e) in t.scale().iter().zip(expected) {
            assert!((b - e).abs() < 1e-15);
        }
        let sum_sq: f64 = t.scale().iter().map(|b| b * b).sum();
        assert!((sum_sq - 1.0).abs() < 1e-14);
    }

    #[test]
    fn whitening_example() {
        let st = state(&[0.0; 3], &[0.3, 0.1, 0.6]);
        let t = whitening_transform(&st, 1.0).unwrap();
        let sum_sq: f64 = t.scale().iter().map(|b| b * b).sum();
        assert!((sum_sq - 1.38).abs() < 1e-12);
    }

    #[test]
    fn equal_std_makes_whitening_optimal() {
        let st = state(&[0.1, -0.2, 0.3, 0.0], &[0.7; 4]);
        let o = optimal_transform(&st, 2.0).unwrap();
        let w = whitening_transform(&st, 2.0).unwrap();
        for (x, y) in o.scale().iter().zip(w.scale().iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        let single = state(&[0.0], &[0.37]);
        let o = optimal_transform(&single, 1.0).unwrap();
        let w = whitening_transform(&single, 1.0).unwrap();
        assert!((o.scale()[0] - w.scale()[0]).abs() < 1e-15);
    }

    #[test]
    fn concentrated_std_saves_factor_of_d() {
        let d = 50;
        let mut s = vec![1e-9; d];
        s[0] = 0.8;
        let b = optimal_scale(&s, 1.0).unwrap();
        let noise: f64 = b.iter().map(|x| x * x).sum();
        assert!((noise / 0.64 - 1.0).abs() < 1e-6);
        let constant = d as f64 * 0.64;
        assert!(constant / noise > 0.99 * d as f64);
    }

    #[test]
    fn non_positive_std_is_invalid_state() {
        assert!(matches!(optimal_scale(&[0.1, 0.0], 1.0), Err(Error::InvalidState(_))));
        assert!(matches!(whitening_scale(&[-0.1], 1.0), Err(Error::InvalidState(_))));
    }

    #[test]
    fn mean_update_examples() {
        let mut st = MomentState::with_defaults(2).unwrap();
        st.update_mean(&[1.0, 1.0]).unwrap();
        assert!(st.mean().iter().all(|&m| (m - 0.01).abs() < 1e-15));
        let fixed = st.mean().to_vec();
        st.update_mean(&fixed).unwrap();
        assert_eq!(st.mean(), fixed.as_slice());

        let mut st = MomentState::with_defaults(1).unwrap();
        for t in 1..=1000 {
            st.update_mean(&[2.5]).unwrap();
            let gap = 2.5 * 0.99_f64.powi(t);
            assert!((2.5 - st.mean()[0] - gap).abs() < 1e-12);
        }
    }

    #[test]
    fn std_update_examples() {
        let config = MomentConfig { beta2: 0.0, ..Default::default() };
        let mut st = MomentState::new(1, config).unwrap();
        // (g - m)^2 = 0.5, b^2 sigma^2 = 0.1
        st.update_std(&[0.5_f64.sqrt()], &[0.1_f64.sqrt()], 1.0).unwrap();
        assert!((st.std()[0].powi(2) - 0.4).abs() < 1e-12);

        let mut st = MomentState::new(1, config).unwrap();
        st.update_std(&[0.1], &[1.0], 1.0).unwrap();
        assert!((st.std()[0].powi(2) - 1e-12).abs() < 1e-24);

        let mut st = MomentState::new(1, config).unwrap();
        st.update_std(&[100.0], &[1.0], 0.0).unwrap();
        assert!((st.std()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn batched_update_reduces_to_single() {
        let mut a = state(&[0.2, -0.1], &[0.3, 0.5]);
        let mut b = a.clone();
        a.update_std(&[0.7, 0.1], &[0.4, 0.9], 0.3).unwrap();
        b.update_std_batched(&[0.7, 0.1], &[0.4, 0.9], 0.3, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn std_uses_pre_update_mean() {
        let mut st = state(&[0.0], &[0.5]);
        st.observe(&[1.0], &[0.1], 0.0, 1).unwrap();
        let expected = (0.9 * 0.25 + 0.1 * 1.0_f64).sqrt();
        assert!((st.std()[0] - expected).abs() < 1e-15);
        assert!((st.mean()[0] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn snapshot_csv() {
        let st = state(&[0.5, 0.25], &[1.0, 2.0]);
        assert_eq!(st.to_csv(), "coordinate,m,s\n0,0.5,1\n1,0.25,2\n");
    }
}

//! Per-example gradient privatization.
//!
//! Every strategy reduces to the same shape: bound each example's
//! contribution so that its sensitivity is one in some scaled space, add
//! `N(0, sigma^2 I)` in that space, and map back to gradient units.
//! [`privatize_example`] is the general affine form
//! `g~ = b * (clip((g - a) / b, 1) + N) + a`; the norm-clipping strategies
//! are the special case `a = 0, b = C`, computed directly so that an inactive
//! clip with `sigma = 0` reproduces the raw gradient bit for bit.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::numerics::{l2_norm, squared_norm, RealVector, RngStream};

/// How a batch of per-example gradients is turned into one private gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrivatizationStrategy {
    /// Noise proportional to an a-priori gradient norm bound. The bound is
    /// also enforced as a norm clip, which is inactive whenever it is valid.
    NormBound { bound: f64 },
    /// Scale the gradient down to norm `threshold` when it is longer.
    L2Clip { threshold: f64 },
    /// Clamp each coordinate to `[-threshold, threshold]`; l2 sensitivity
    /// is accounted as `threshold * sqrt(d)`.
    CoordClip { threshold: f64 },
    /// `a = m`, `b_i = sqrt(d) s_i / sqrt(gamma)`.
    Whitening { gamma: f64 },
    /// `a = m`, `b_i = sqrt(s_i / gamma) sqrt(sum_j s_j)`.
    AdaClip { gamma: f64 },
}

impl PrivatizationStrategy {
    pub fn norm_bound(bound: f64) -> Result<Self> {
        checked(Self::NormBound { bound })
    }

    pub fn l2_clip(threshold: f64) -> Result<Self> {
        checked(Self::L2Clip { threshold })
    }

    pub fn coord_clip(threshold: f64) -> Result<Self> {
        checked(Self::CoordClip { threshold })
    }

    pub fn whitening(gamma: f64) -> Result<Self> {
        checked(Self::Whitening { gamma })
    }

    pub fn adaclip(gamma: f64) -> Result<Self> {
        checked(Self::AdaClip { gamma })
    }

    pub fn validate(&self) -> Result<()> {
        let (name, value) = match *self {
            Self::NormBound { bound } => ("bound", bound),
            Self::L2Clip { threshold } | Self::CoordClip { threshold } => ("threshold", threshold),
            Self::Whitening { gamma } | Self::AdaClip { gamma } => ("gamma", gamma),
        };
        if value > 0.0 && value.is_finite() {
            Ok(())
        } else {
            Err(invalid(format!("{} {name} must be positive, got {value}", self.name())))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::NormBound { .. } => "norm_bound",
            Self::L2Clip { .. } => "l2_clip",
            Self::CoordClip { .. } => "coord_clip",
            Self::Whitening { .. } => "whitening",
            Self::AdaClip { .. } => "adaclip",
        }
    }

    /// Whether the strategy needs the private moment estimates.
    pub fn uses_moments(&self) -> bool {
        matches!(self, Self::Whitening { .. } | Self::AdaClip { .. })
    }

    pub fn parameter(&self) -> f64 {
        match *self {
            Self::NormBound { bound } => bound,
            Self::L2Clip { threshold } | Self::CoordClip { threshold } => threshold,
            Self::Whitening { gamma } | Self::AdaClip { gamma } => gamma,
        }
    }
}

fn checked(s: PrivatizationStrategy) -> Result<PrivatizationStrategy> {
    s.validate().map(|_| s)
}

impl fmt::Display for PrivatizationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.name(), self.parameter())
    }
}

/// Parses `name(value)` or `name:value`, e.g. `l2_clip(4.0)`.
impl FromStr for PrivatizationStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, value) = if let Some(open) = s.find('(') {
            let close =
                s.strip_suffix(')').ok_or_else(|| invalid(format!("unbalanced parentheses in strategy {s:?}")))?;
            (&s[..open], &close[open + 1..])
        } else if let Some((n, v)) = s.split_once(':') {
            (n, v)
        } else {
            return Err(invalid(format!("strategy {s:?} must look like name(value)")));
        };
        let value: f64 = value.trim().parse().map_err(|_| invalid(format!("bad strategy parameter in {s:?}")))?;
        match name.trim() {
            "norm_bound" => Self::norm_bound(value),
            "l2_clip" => Self::l2_clip(value),
            "coord_clip" => Self::coord_clip(value),
            "whitening" => Self::whitening(value),
            "adaclip" => Self::adaclip(value),
            other => Err(invalid(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Where the Gaussian noise enters a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    /// An independent draw per example, averaged with the examples.
    PerExample,
    /// One draw added to the clipped sum, then averaged.
    #[default]
    Aggregate,
}

impl NoiseMode {
    /// Standard deviation, in transformed units, of the noise left on the
    /// batch average.
    pub fn effective_sigma(self, sigma: f64, batch_size: usize) -> f64 {
        let b = batch_size as f64;
        match self {
            Self::PerExample => sigma / b.sqrt(),
            Self::Aggregate => sigma / b,
        }
    }

    /// Noise multiplier relative to the unit sensitivity of the clipped sum;
    /// this is what the accountant sees.
    pub fn accounted_sigma(self, sigma: f64, batch_size: usize) -> f64 {
        match self {
            Self::PerExample => sigma * (batch_size as f64).sqrt(),
            Self::Aggregate => sigma,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::PerExample => "per_example",
            Self::Aggregate => "aggregate",
        }
    }
}

impl FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "per_example" => Ok(Self::PerExample),
            "aggregate" => Ok(Self::Aggregate),
            other => Err(invalid(format!("unknown noise mode {other:?}"))),
        }
    }
}

/// Shift `a` and per-coordinate scale `b` of the affine gradient transform.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformParams {
    a: RealVector,
    b: RealVector,
}

impl TransformParams {
    pub fn new(a: RealVector, b: RealVector) -> Result<Self> {
        if a.dim() != b.dim() {
            return Err(invalid(format!("shift has dimension {} but scale has {}", a.dim(), b.dim())));
        }
        if let Some(index) = b.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::DegenerateDivisor { index, value: b[index] });
        }
        Ok(Self { a, b })
    }

    /// `a = 0`, `b = c * 1`.
    pub fn constant(dim: usize, c: f64) -> Result<Self> {
        Self::new(RealVector::zeros(dim)?, RealVector::filled(dim, c)?)
    }

    pub fn shift(&self) -> &RealVector {
        &self.a
    }

    pub fn scale(&self) -> &RealVector {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }
}

/// Diagnostics for one privatized gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseReport {
    /// `||g - (b * w_hat + a)||`: the change caused by clipping alone.
    pub pre_noise_norm: f64,
    /// `||g - g~||`.
    pub total_change_norm: f64,
    pub was_clipped: bool,
}

/// `w / max(1, ||w||)`.
pub fn clip_to_unit_ball(w: &RealVector) -> RealVector {
    let norm = w.l2_norm();
    if norm <= 1.0 {
        w.clone()
    } else {
        RealVector::new(w.iter().map(|v| v / norm).collect()).expect("scaling down keeps entries finite")
    }
}

/// `g` if `||g|| <= C`, else `g * C / ||g||`.
pub fn l2_clip(g: &RealVector, threshold: f64) -> RealVector {
    let mut out = g.to_vec();
    l2_clip_in_place(&mut out, threshold);
    RealVector::new(out).expect("scaling down keeps entries finite")
}

/// Returns whether clipping was active.
fn l2_clip_in_place(g: &mut [f64], threshold: f64) -> bool {
    let norm = l2_norm(g);
    if norm <= threshold {
        return false;
    }
    for v in g.iter_mut() {
        *v = *v / norm * threshold;
    }
    true
}

/// Clamps every coordinate to `[-C, C]`.
pub fn coord_clip(g: &RealVector, threshold: f64) -> RealVector {
    RealVector::new(g.iter().map(|v| v.clamp(-threshold, threshold)).collect()).expect("clamping keeps entries finite")
}

/// `g~ = b * (clip((g - a) / b, 1) + N) + a` with `N ~ N(0, sigma^2 I)`.
pub fn privatize_example(
    g: &RealVector,
    params: &TransformParams,
    sigma: f64,
    rng: &mut RngStream,
) -> Result<(RealVector, NoiseReport)> {
    if g.dim() != params.dim() {
        return Err(invalid(format!("gradient has dimension {} but transform has {}", g.dim(), params.dim())));
    }
    if !(sigma >= 0.0) {
        return Err(invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    let (a, b) = (params.shift(), params.scale());
    let dim = g.dim();
    let factor = transformed_clip_factor(g, a, b);
    let w_hat: Vec<f64> = (0..dim).map(|i| (g[i] - a[i]) / b[i] / factor).collect();
    let signal: Vec<f64> = (0..dim).map(|i| b[i] * w_hat[i] + a[i]).collect();
    let mut noise = vec![0.0; dim];
    rng.fill_gaussian(&mut noise, sigma);
    let noisy = RealVector::new((0..dim).map(|i| b[i] * (w_hat[i] + noise[i]) + a[i]).collect())?;
    let was_clipped = factor > 1.0;
    let report =
        NoiseReport { pre_noise_norm: distance(g, &signal), total_change_norm: distance(g, &noisy), was_clipped };
    Ok((noisy, report))
}

/// `max(1, ||(g - a) / b||)`.
fn transformed_clip_factor(g: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let sq: f64 = g
        .iter()
        .zip(a)
        .zip(b)
        .map(|((g, a), b)| {
            let w = (g - a) / b;
            w * w
        })
        .sum();
    sq.sqrt().max(1.0)
}

/// Writes `b * clip((g - a) / b, 1) + a` into `out`; returns whether the clip
/// was active.
fn affine_clip_into(g: &[f64], a: &[f64], b: &[f64], out: &mut [f64]) -> bool {
    let factor = transformed_clip_factor(g, a, b);
    for i in 0..g.len() {
        out[i] = b[i] * ((g[i] - a[i]) / b[i] / factor) + a[i];
    }
    factor > 1.0
}

fn distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// `sigma^2 * sum_i b_i^2`.
pub fn expected_noise_sq_norm(b: &[f64], sigma: f64) -> f64 {
    sigma * sigma * squared_norm(b)
}

/// The per-step form of a strategy once its transform is fixed.
#[derive(Debug, Clone, PartialEq)]
pub enum Privatizer {
    /// `a = 0`, `b = threshold`, computed directly.
    NormClip { threshold: f64 },
    /// Coordinate clamp with noise scale `threshold * sqrt(d)`.
    CoordClip { threshold: f64 },
    /// General affine transform.
    Affine(TransformParams),
}

impl Privatizer {
    /// Noise scale used for coordinate `i` (the `b_i` of the affine form).
    fn noise_scale(&self, i: usize, dim: usize) -> f64 {
        match self {
            Self::NormClip { threshold } => *threshold,
            Self::CoordClip { threshold } => threshold * (dim as f64).sqrt(),
            Self::Affine(p) => p.scale()[i],
        }
    }

    /// Clipped contribution of one example, in gradient units.
    fn clip_into(&self, g: &[f64], out: &mut [f64]) -> bool {
        match self {
            Self::NormClip { threshold } => {
                out.copy_from_slice(g);
                l2_clip_in_place(out, *threshold)
            }
            Self::CoordClip { threshold } => {
                let mut clipped = false;
                for (o, &v) in out.iter_mut().zip(g) {
                    clipped |= v.abs() > *threshold;
                    *o = v.clamp(-threshold, *threshold);
                }
                clipped
            }
            Self::Affine(p) => affine_clip_into(g, p.shift(), p.scale(), out),
        }
    }

    /// Per-coordinate noise scales `b` for gradients of dimension `dim`.
    pub fn noise_scales(&self, dim: usize) -> Vec<f64> {
        (0..dim).map(|i| self.noise_scale(i, dim)).collect()
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            Self::Affine(p) => Some(p.dim()),
            _ => None,
        }
    }
}

/// Result of privatizing one batch.
#[derive(Debug, Clone)]
pub struct BatchPrivatization {
    /// Average of the privatized per-example gradients.
    pub noisy_mean: RealVector,
    /// Average of the raw per-example gradients.
    pub raw_mean: Vec<f64>,
    /// Average of the clipped contributions, before noise.
    pub signal_mean: Vec<f64>,
    /// Noise component of `noisy_mean`, in gradient units.
    pub noise: Vec<f64>,
    pub clipped: usize,
    pub batch_size: usize,
    /// `E||noise||^2` for this batch.
    pub expected_noise_sq: f64,
}

impl BatchPrivatization {
    pub fn total_change_norm(&self) -> f64 {
        distance(&self.raw_mean, &self.noisy_mean)
    }

    pub fn pre_noise_norm(&self) -> f64 {
        distance(&self.raw_mean, &self.signal_mean)
    }

    pub fn clip_fraction(&self) -> f64 {
        self.clipped as f64 / self.batch_size as f64
    }

    /// `||signal||^2 / E||noise||^2`; infinite when no noise is injected.
    pub fn snr(&self) -> f64 {
        let signal = squared_norm(&self.signal_mean);
        if self.expected_noise_sq > 0.0 {
            signal / self.expected_noise_sq
        } else if signal > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

/// Privatizes and averages a batch.
///
/// Noise streams are derived from `rng` by position: aggregate mode draws one
/// vector from `rng.derive(0)`, per-example mode draws example `k`'s noise
/// from `rng.derive(k + 1)`. Results therefore do not depend on evaluation
/// order.
pub fn privatize_batch(
    grads: &[RealVector],
    privatizer: &Privatizer,
    sigma: f64,
    mode: NoiseMode,
    rng: &RngStream,
) -> Result<BatchPrivatization> {
    let batch_size = grads.len();
    if batch_size == 0 {
        return Err(invalid("empty batch"));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(invalid(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    let dim = grads[0].dim();
    if let Some(d) = privatizer.dim() {
        if d != dim {
            return Err(invalid(format!("gradient dimension {dim} but transform {d}")));
        }
    }
    let mut raw_sum = vec![0.0; dim];
    let mut signal_sum = vec![0.0; dim];
    let mut buf = vec![0.0; dim];
    let mut clipped = 0;
    for g in grads {
        if g.dim() != dim {
            return Err(invalid("gradients in a batch must share a dimension"));
        }
        if privatizer.clip_into(g, &mut buf) {
            clipped += 1;
        }
        for i in 0..dim {
            raw_sum[i] += g[i];
            signal_sum[i] += buf[i];
        }
    }

    // Noise in transformed units, summed over the batch.
    let mut noise_sum = vec![0.0; dim];
    match mode {
        NoiseMode::Aggregate => rng.derive(0).fill_gaussian(&mut noise_sum, sigma),
        NoiseMode::PerExample => {
            for k in 0..batch_size {
                rng.derive(k as u64 + 1).fill_gaussian(&mut buf, sigma);
                for (s, v) in noise_sum.iter_mut().zip(&buf) {
                    *s += v;
                }
            }
        }
    }

    let bf = batch_size as f64;
    let mut noise = vec![0.0; dim];
    let mut noisy = vec![0.0; dim];
    let mut scale_sq = 0.0;
    for i in 0..dim {
        let scale = privatizer.noise_scale(i, dim);
        scale_sq += scale * scale;
        let n = scale * noise_sum[i];
        noisy[i] = (signal_sum[i] + n) / bf;
        noise[i] = n / bf;
        raw_sum[i] /= bf;
        signal_sum[i] /= bf;
    }
    let eff = mode.effective_sigma(sigma, batch_size);
    Ok(BatchPrivatization {
        noisy_mean: RealVector::new(noisy)?,
        raw_mean: raw_sum,
        signal_mean: signal_sum,
        noise,
        clipped,
        batch_size,
        expected_noise_sq: eff * eff * scale_sq,
    })
}

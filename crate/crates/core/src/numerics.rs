//! Seeded randomness, Gaussian sampling and small dense-vector utilities.

use std::ops::Deref;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};

/// Dense vector of finite `f64` values with a fixed, positive dimension.
///
/// Every constructor and arithmetic helper rejects NaN and infinite entries,
/// so a `RealVector` that exists is always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct RealVector(Vec<f64>);

impl RealVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("vector dimension must be positive"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericFailure(format!("non-finite entry {} at coordinate {i}", values[i])));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::filled(dim, 0.0)
    }

    pub fn filled(dim: usize, value: f64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("vector dimension must be positive"));
        }
        Self::new(vec![value; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    pub fn elementwise(&self, other: &RealVector, op: ElementwiseOp) -> Result<RealVector> {
        elementwise(self, other, op)
    }

    pub fn scale(&self, factor: f64) -> Result<RealVector> {
        RealVector::new(self.0.iter().map(|v| v * factor).collect())
    }
}

impl Deref for RealVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for RealVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        RealVector::new(values)
    }
}

/// Euclidean norm.
pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn squared_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
}

pub fn elementwise(v: &RealVector, u: &RealVector, op: ElementwiseOp) -> Result<RealVector> {
    if v.dim() != u.dim() {
        return Err(invalid(format!("dimension mismatch: {} vs {}", v.dim(), u.dim())));
    }
    if op == ElementwiseOp::Div {
        if let Some(index) = u.iter().position(|&x| x == 0.0) {
            return Err(Error::DegenerateDivisor { index, value: 0.0 });
        }
    }
    let out = v
        .iter()
        .zip(u.iter())
        .map(|(&x, &y)| match op {
            ElementwiseOp::Add => x + y,
            ElementwiseOp::Sub => x - y,
            ElementwiseOp::Mul => x * y,
            ElementwiseOp::Div => x / y,
        })
        .collect();
    RealVector::new(out)
}

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn finite_difference_gradient<F>(f: F, x: &[f64], h: f64) -> Result<RealVector>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(invalid(format!("step size must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NumericFailure(format!("objective is not finite near coordinate {i}")));
        }
        grad.push((up - down) / (2.0 * h));
    }
    RealVector::new(grad)
}

/// Counter-based random stream identified by `(seed, stream_id)`.
///
/// Backed by ChaCha8 with the stream id mapped onto the cipher's stream
/// selector, so streams with different ids never overlap. Child streams
/// are derived with [`RngStream::derive`] rather than shared across
/// threads.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self { seed, stream_id, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Child stream keyed by `tag`. Depends only on `(seed, stream_id, tag)`,
    /// never on how many values this stream has produced.
    pub fn derive(&self, tag: u64) -> RngStream {
        let child_seed = splitmix64(self.seed ^ splitmix64(self.stream_id ^ 0x6a09_e667_f3bc_c909));
        RngStream::new(child_seed, tag)
    }

    /// Child stream keyed by a path of tags, e.g. `[step, example]`.
    pub fn derive_path(&self, tags: &[u64]) -> RngStream {
        tags.iter().fold(self.clone(), |s, &t| s.derive(t))
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Overwrites `out` with i.i.d. `N(0, std^2)` draws.
    pub fn fill_gaussian(&mut self, out: &mut [f64], std: f64) {
        for v in out.iter_mut() {
            *v = std * self.standard_normal();
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `dim` i.i.d. samples from `N(0, std^2)`. A zero `std` yields the zero vector.
pub fn gaussian_sample(rng: &mut RngStream, dim: usize, std: f64) -> Result<RealVector> {
    if dim == 0 {
        return Err(invalid("sample dimension must be positive"));
    }
    if !(std >= 0.0) || !std.is_finite() {
        return Err(invalid(format!("standard deviation must be finite and >= 0, got {std}")));
    }
    let mut out = vec![0.0; dim];
    rng.fill_gaussian(&mut out, std);
    RealVector::new(out)
}

/// Welford running mean and variance.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.std_dev() / (self.count as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for RunningStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = RunningStats::new();
        for x in iter {
            s.push(x);
        }
        s
    }
}

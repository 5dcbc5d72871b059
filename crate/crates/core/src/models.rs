//! Objectives with analytic per-example gradients.
//!
//! Parameters are one flat vector. Weight matrices are stored row-major
//! (one row per output unit) and each layer's biases follow its weights.

use crate::data::{Dataset, Example};
use crate::error::{invalid, Result};
use crate::numerics::{finite_difference_gradient, l2_norm, RngStream};

pub trait GradientOracle: Send + Sync {
    /// Number of parameters.
    fn dim(&self) -> usize;

    fn kind(&self) -> &'static str;

    fn loss(&self, theta: &[f64], example: Example<'_>) -> f64;

    /// Writes the gradient of [`Self::loss`] into `out` (length `dim`).
    fn grad_into(&self, theta: &[f64], example: Example<'_>, out: &mut [f64]);

    /// Error for regression, accuracy for classifiers.
    fn metric(&self, theta: &[f64], data: &Dataset) -> f64;

    /// True when a larger [`Self::metric`] is better.
    fn metric_is_accuracy(&self) -> bool;

    fn init_params(&self, _rng: &mut RngStream) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    fn grad(&self, theta: &[f64], example: Example<'_>) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.grad_into(theta, example, &mut out);
        out
    }

    fn mean_loss(&self, theta: &[f64], data: &Dataset) -> f64 {
        let total: f64 = (0..data.len()).map(|i| self.loss(theta, data.example(i))).sum();
        total / data.len() as f64
    }
}

/// `||g - g_fd|| / max(||g||, ||g_fd||)` with central differences of step `h`.
pub fn gradient_check_error<O: GradientOracle + ?Sized>(
    oracle: &O,
    theta: &[f64],
    example: Example<'_>,
    h: f64,
) -> Result<f64> {
    let analytic = oracle.grad(theta, example);
    let numeric = finite_difference_gradient(|t| oracle.loss(t, example), theta, h)?;
    let diff: Vec<f64> = analytic.iter().zip(numeric.iter()).map(|(a, b)| a - b).collect();
    let scale = l2_norm(&analytic).max(l2_norm(&numeric));
    Ok(if scale == 0.0 { 0.0 } else { l2_norm(&diff) / scale })
}

/// `f(theta; x) = ||theta - x||^2 / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L2Regression {
    dim: usize,
}

impl L2Regression {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("regression dimension must be positive"));
        }
        Ok(Self { dim })
    }

    pub fn for_dataset(data: &Dataset) -> Result<Self> {
        Self::new(data.dim())
    }

    /// The minimizer of the mean loss: the feature mean.
    pub fn optimum(data: &Dataset) -> Vec<f64> {
        data.mean_features()
    }
}

impl GradientOracle for L2Regression {
    fn dim(&self) -> usize {
        self.dim
    }

    fn kind(&self) -> &'static str {
        "l2_regression"
    }

    fn loss(&self, theta: &[f64], example: Example<'_>) -> f64 {
        0.5 * theta.iter().zip(example.features).map(|(t, x)| (t - x) * (t - x)).sum::<f64>()
    }

    fn grad_into(&self, theta: &[f64], example: Example<'_>, out: &mut [f64]) {
        for ((o, t), x) in out.iter_mut().zip(theta).zip(example.features) {
            *o = t - x;
        }
    }

    fn metric(&self, theta: &[f64], data: &Dataset) -> f64 {
        self.mean_loss(theta, data)
    }

    fn metric_is_accuracy(&self) -> bool {
        false
    }
}

fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        total += *z;
    }
    logits.iter_mut().for_each(|z| *z /= total);
}

/// `-ln softmax(z)_y`, computed stably.
fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

fn label_of(example: Example<'_>, classes: usize) -> usize {
    match example.label {
        Some(y) if y < classes => y,
        Some(y) => panic!("label {y} out of range for {classes} classes"),
        None => panic!("classifier needs labelled examples"),
    }
}

fn check_labels(data: &Dataset, classes: usize) -> Result<()> {
    match data.labels() {
        None => Err(invalid("classifier needs labelled data")),
        Some(l) => match l.iter().find(|&&y| y >= classes) {
            Some(y) => Err(invalid(format!("label {y} out of range for {classes} classes"))),
            None => Ok(()),
        },
    }
}

/// Multiclass softmax regression. Layout: `W` (`classes x features`) then
/// `b` (`classes`).
#[derive(Debug, Clone, PartialEq)]
pub struct Logistic {
    features: usize,
    classes: usize,
}

impl Logistic {
    pub fn new(features: usize, classes: usize) -> Result<Self> {
        if features == 0 || classes < 2 {
            return Err(invalid(format!(
                "logistic model needs features >= 1 and classes >= 2, got {features}, {classes}"
            )));
        }
        Ok(Self { features, classes })
    }

    /// Checks that every label is below `classes`.
    pub fn for_dataset(data: &Dataset, classes: usize) -> Result<Self> {
        check_labels(data, classes)?;
        Self::new(data.dim(), classes)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn logits(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let (w, b) = theta.split_at(self.classes * self.features);
        (0..self.classes)
            .map(|c| {
                let row = &w[c * self.features..(c + 1) * self.features];
                row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b[c]
            })
            .collect()
    }

    /// Per-example gradient norm bound `sqrt(2) sqrt(||x||^2 + 1)`: the
    /// residual `p - e_y` has squared norm at most 2, and the gradient is
    /// its outer product with `(x, 1)`.
    pub fn gradient_norm_bound(input_norm: f64) -> f64 {
        std::f64::consts::SQRT_2 * (input_norm * input_norm + 1.0).sqrt()
    }

    pub fn predict(&self, theta: &[f64], x: &[f64]) -> usize {
        argmax(&self.logits(theta, x))
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn accuracy(data: &Dataset, mut predict: impl FnMut(&[f64]) -> usize) -> f64 {
    let labels = data.labels().expect("classifier metric needs labels");
    let hits = (0..data.len()).filter(|&i| predict(data.row(i)) == labels[i]).count();
    hits as f64 / data.len() as f64
}

impl GradientOracle for Logistic {
    fn dim(&self) -> usize {
        self.classes * (self.features + 1)
    }

    fn kind(&self) -> &'static str {
        "logistic"
    }

    fn loss(&self, theta: &[f64], example: Example<'_>) -> f64 {
        let y = label_of(example, self.classes);
        cross_entropy(&self.logits(theta, example.features), y)
    }

    fn grad_into(&self, theta: &[f64], example: Example<'_>, out: &mut [f64]) {
        let y = label_of(example, self.classes);
        let mut p = self.logits(theta, example.features);
        softmax_in_place(&mut p);
        p[y] -= 1.0;
        let (gw, gb) = out.split_at_mut(self.classes * self.features);
        for c in 0..self.classes {
            let row = &mut gw[c * self.features..(c + 1) * self.features];
            for (g, x) in row.iter_mut().zip(example.features) {
                *g = p[c] * x;
            }
            gb[c] = p[c];
        }
    }

    fn metric(&self, theta: &[f64], data: &Dataset) -> f64 {
        accuracy(data, |x| self.predict(theta, x))
    }

    fn metric_is_accuracy(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// `tanh(z)`.
    Tanh,
    /// `1 / (1 + e^{-z})`.
    Sigmoid,
    /// `z`.
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Self::Tanh => z.tanh(),
            Self::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Self::Linear => z,
        }
    }

    /// Derivative expressed through the activation value `h`.
    fn slope(self, h: f64) -> f64 {
        match self {
            Self::Tanh => 1.0 - h * h,
            Self::Sigmoid => h * (1.0 - h),
            Self::Linear => 1.0,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "tanh" => Ok(Self::Tanh),
            "sigmoid" => Ok(Self::Sigmoid),
            "linear" => Ok(Self::Linear),
            other => Err(invalid(format!("unknown activation {other:?}"))),
        }
    }
}

/// One hidden layer with softmax output, optionally after a fixed seeded
/// random projection of the inputs (not trained, not part of `theta`).
///
/// Layout: `W1` (`hidden x p`), `b1`, `W2` (`classes x hidden`), `b2`, where
/// `p` is the projected input width.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    inputs: usize,
    projected: usize,
    hidden: usize,
    classes: usize,
    activation: Activation,
    /// Row-major `projected x inputs`, entries `N(0, 1/projected)`.
    projection: Option<Vec<f64>>,
}

impl Mlp {
    pub fn new(
        inputs: usize,
        hidden: usize,
        classes: usize,
        activation: Activation,
        projection: Option<(usize, u64)>,
    ) -> Result<Self> {
        if inputs == 0 || hidden == 0 || classes < 2 {
            return Err(invalid(format!(
                "mlp needs inputs >= 1, hidden >= 1, classes >= 2; got {inputs}, {hidden}, {classes}"
            )));
        }
        let (projected, projection) = match projection {
            None => (inputs, None),
            Some((0, _)) => return Err(invalid("projection width must be positive")),
            Some((p, seed)) => {
                let mut rng = RngStream::new(seed, 0x9e0);
                let mut m = vec![0.0; p * inputs];
                rng.fill_gaussian(&mut m, 1.0 / (p as f64).sqrt());
                (p, Some(m))
            }
        };
        Ok(Self { inputs, projected, hidden, classes, activation, projection })
    }

    pub fn for_dataset(
        data: &Dataset,
        hidden: usize,
        classes: usize,
        activation: Activation,
        projection: Option<(usize, u64)>,
    ) -> Result<Self> {
        check_labels(data, classes)?;
        Self::new(data.dim(), hidden, classes, activation, projection)
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = self.hidden * self.projected;
        let b1 = w1 + self.hidden;
        let w2 = b1 + self.classes * self.hidden;
        [w1, b1, w2, w2 + self.classes]
    }

    fn project(&self, x: &[f64]) -> Vec<f64> {
        match &self.projection {
            None => x.to_vec(),
            Some(m) => (0..self.projected)
                .map(|r| m[r * self.inputs..(r + 1) * self.inputs].iter().zip(x).map(|(a, b)| a * b).sum())
                .collect(),
        }
    }

    /// Returns `(projected input, hidden activations, logits)`.
    fn forward(&self, theta: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let [o1, o2, o3, _] = self.offsets();
        let (w1, b1, w2, b2) = (&theta[..o1], &theta[o1..o2], &theta[o2..o3], &theta[o3..]);
        let z = self.project(x);
        let h: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &w1[j * self.projected..(j + 1) * self.projected];
                let pre = row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() + b1[j];
                self.activation.apply(pre)
            })
            .collect();
        let logits: Vec<f64> = (0..self.classes)
            .map(|c| {
                let row = &w2[c * self.hidden..(c + 1) * self.hidden];
                row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>() + b2[c]
            })
            .collect();
        (z, h, logits)
    }

    pub fn predict(&self, theta: &[f64], x: &[f64]) -> usize {
        argmax(&self.forward(theta, x).2)
    }
}

impl GradientOracle for Mlp {
    fn dim(&self) -> usize {
        self.offsets()[3]
    }

    fn kind(&self) -> &'static str {
        "mlp"
    }

    fn loss(&self, theta: &[f64], example: Example<'_>) -> f64 {
        let y = label_of(example, self.classes);
        cross_entropy(&self.forward(theta, example.features).2, y)
    }

    fn grad_into(&self, theta: &[f64], example: Example<'_>, out: &mut [f64]) {
        let y = label_of(example, self.classes);
        let [o1, o2, o3, _] = self.offsets();
        let (z, h, mut delta) = self.forward(theta, example.features);
        softmax_in_place(&mut delta);
        delta[y] -= 1.0;

        let w2 = &theta[o2..o3];
        let (g1, rest) = out.split_at_mut(o1);
        let (gb1, rest) = rest.split_at_mut(o2 - o1);
        let (g2, gb2) = rest.split_at_mut(o3 - o2);
        for c in 0..self.classes {
            for j in 0..self.hidden {
                g2[c * self.hidden + j] = delta[c] * h[j];
            }
            gb2[c] = delta[c];
        }
        for j in 0..self.hidden {
            let back: f64 = (0..self.classes).map(|c| delta[c] * w2[c * self.hidden + j]).sum();
            let dj = back * self.activation.slope(h[j]);
            for (g, zi) in g1[j * self.projected..(j + 1) * self.projected].iter_mut().zip(&z) {
                *g = dj * zi;
            }
            gb1[j] = dj;
        }
    }

    fn metric(&self, theta: &[f64], data: &Dataset) -> f64 {
        accuracy(data, |x| self.predict(theta, x))
    }

    fn metric_is_accuracy(&self) -> bool {
        true
    }

    /// Weights `N(0, 1/fan_in)`, zero biases.
    fn init_params(&self, rng: &mut RngStream) -> Vec<f64> {
        let [o1, o2, o3, end] = self.offsets();
        let mut theta = vec![0.0; end];
        rng.fill_gaussian(&mut theta[..o1], 1.0 / (self.projected as f64).sqrt());
        rng.fill_gaussian(&mut theta[o2..o3], 1.0 / (self.hidden as f64).sqrt());
        theta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_classification_dataset, make_signflip_dataset, Normalization};

    fn random_theta(dim: usize, seed: u64, std: f64) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        RngStream::new(seed, 0).fill_gaussian(&mut v, std);
        v
    }

    #[test]
    fn regression_optimum_has_zero_gradient() {
        let ds = make_classification_dataset(50, 4, 2, 1.0, 3).unwrap();
        let model = L2Regression::for_dataset(&ds).unwrap();
        let theta = L2Regression::optimum(&ds);
        let mut total = vec![0.0; 4];
        for i in 0..ds.len() {
            for (t, g) in total.iter_mut().zip(model.grad(&theta, ds.example(i))) {
                *t += g;
            }
        }
        assert!(l2_norm(&total) < 1e-12);
    }

    #[test]
    fn regression_gradient_at_zero() {
        let ds = make_signflip_dataset(10, 3, 2.0, 0).unwrap();
        let model = L2Regression::for_dataset(&ds).unwrap();
        for i in 0..ds.len() {
            let g = model.grad(&[0.0; 3], ds.example(i));
            assert_eq!(g, ds.row(i).iter().map(|x| -x).collect::<Vec<_>>());
            assert_eq!(l2_norm(&g), 2.0);
        }
    }

    #[test]
    fn regression_gradient_check() {
        let ds = make_classification_dataset(10, 6, 2, 1.0, 4).unwrap();
        let model = L2Regression::for_dataset(&ds).unwrap();
        for k in 0..10 {
            let theta = random_theta(6, k, 1.0);
            assert!(gradient_check_error(&model, &theta, ds.example(k as usize), 1e-4).unwrap() < 1e-8);
        }
    }

    #[test]
    fn logistic_zero_init_loss() {
        let ds = make_classification_dataset(100, 5, 10, 2.0, 1).unwrap();
        let model = Logistic::for_dataset(&ds, 10).unwrap();
        let theta = vec![0.0; model.dim()];
        assert!((model.mean_loss(&theta, &ds) - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn logistic_rejects_out_of_range_labels() {
        let ds = make_classification_dataset(30, 2, 3, 1.0, 1).unwrap();
        assert!(Logistic::for_dataset(&ds, 2).is_err());
        let unlabeled = Dataset::new("u", 2, vec![0.0; 4], None, Normalization::Identity).unwrap();
        assert!(Logistic::for_dataset(&unlabeled, 2).is_err());
    }

    #[test]
    fn logistic_gradient_check() {
        let ds = make_classification_dataset(20, 7, 4, 2.0, 9).unwrap();
        let model = Logistic::for_dataset(&ds, 4).unwrap();
        for k in 0..10 {
            let theta = random_theta(model.dim(), 100 + k, 0.5);
            let err = gradient_check_error(&model, &theta, ds.example(k as usize), 1e-5).unwrap();
            assert!(err < 1e-5, "point {k}: {err}");
        }
    }

    #[test]
    fn logistic_binary_gradient_bound() {
        let model = Logistic::new(3, 2).unwrap();
        let mut rng = RngStream::new(5, 5);
        for _ in 0..10_000 {
            let theta: Vec<f64> = (0..model.dim()).map(|_| 3.0 * rng.standard_normal()).collect();
            let x: Vec<f64> = (0..3).map(|_| 2.0 * rng.standard_normal()).collect();
            let label = rng.below(2);
            let g = model.grad(&theta, Example { features: &x, label: Some(label) });
            let weight_norm = l2_norm(&g[..6]);
            assert!(weight_norm <= l2_norm(&x) * std::f64::consts::SQRT_2 + 1e-12);
            assert!(l2_norm(&g) <= Logistic::gradient_norm_bound(l2_norm(&x)) + 1e-12);
        }
    }

    #[test]
    fn mlp_gradient_check() {
        let ds = make_classification_dataset(20, 6, 3, 2.0, 2).unwrap();
        for (act, proj) in
            [(Activation::Tanh, None), (Activation::Sigmoid, Some((4, 8))), (Activation::Linear, Some((3, 1)))]
        {
            let model = Mlp::for_dataset(&ds, 5, 3, act, proj).unwrap();
            for k in 0..10 {
                let theta = random_theta(model.dim(), 300 + k, 0.7);
                let err = gradient_check_error(&model, &theta, ds.example(k as usize), 1e-5).unwrap();
                assert!(err < 1e-5, "{act:?} point {k}: {err}");
            }
        }
    }

    #[test]
    fn mlp_zero_input_zero_first_layer_grad() {
        let model = Mlp::new(4, 3, 2, Activation::Tanh, None).unwrap();
        let theta = random_theta(model.dim(), 1, 1.0);
        let g = model.grad(&theta, Example { features: &[0.0; 4], label: Some(1) });
        assert!(g[..12].iter().all(|&x| x == 0.0));
        assert!(g[12..].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn linear_single_unit_mlp_is_logistic() {
        let ds = make_classification_dataset(30, 4, 3, 2.0, 6).unwrap();
        let mlp = Mlp::for_dataset(&ds, 1, 3, Activation::Linear, None).unwrap();
        let theta = random_theta(mlp.dim(), 2, 1.0);
        let (w1, b1, w2, b2) = (&theta[..4], theta[4], &theta[5..8], &theta[8..]);
        let logistic = Logistic::for_dataset(&ds, 3).unwrap();
        let mut matched = Vec::new();
        for v in w2 {
            matched.extend(w1.iter().map(|w| v * w));
        }
        for (w, b) in w2.iter().zip(b2) {
            matched.push(w * b1 + b);
        }
        for i in 0..ds.len() {
            let a = mlp.loss(&theta, ds.example(i));
            let b = logistic.loss(&matched, ds.example(i));
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn metric_is_permutation_invariant() {
        let ds = make_classification_dataset(40, 3, 2, 1.5, 8).unwrap();
        let model = Logistic::for_dataset(&ds, 2).unwrap();
        let theta = random_theta(model.dim(), 3, 1.0);
        let mut order: Vec<usize> = (0..40).collect();
        RngStream::new(1, 1).shuffle(&mut order);
        let shuffled = ds.subset(&order).unwrap();
        assert_eq!(model.metric(&theta, &ds), model.metric(&theta, &shuffled));
        assert!((model.mean_loss(&theta, &ds) - model.mean_loss(&theta, &shuffled)).abs() < 1e-12);
    }
}

//! The private training loop and its diagnostics.
//!
//! One step: take the next minibatch of a shuffled epoch, compute
//! per-example gradients, privatize and average them, move the parameters
//! (optionally through a `(1 - beta)`-scaled momentum buffer), update the
//! moment estimates from the same noisy gradient, and record the step with
//! the accountant.

use rayon::prelude::*;

use crate::accountant::{AccountantKind, PrivacyEvent, PrivacyLedger, PrivacySpec, ResolvedPrivacy};
use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::estimator::{optimal_transform, whitening_transform, MomentConfig, MomentState};
use crate::mechanism::{privatize_batch, NoiseMode, PrivatizationStrategy, Privatizer};
use crate::models::GradientOracle;
use crate::numerics::{squared_norm, RealVector, RngStream};

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_NOISE: u64 = 3;

/// Batches at or above this many gradient entries are computed in parallel.
const PARALLEL_WORK: usize = 1 << 14;

/// Target privacy of a run. Sampling ratio and step count come from the
/// dataset and schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyTarget {
    pub epsilon: Option<f64>,
    /// Per-draw noise multiplier in transformed units.
    pub sigma: Option<f64>,
    pub delta: f64,
    pub accountant: AccountantKind,
}

impl PrivacyTarget {
    pub fn epsilon(epsilon: f64, delta: f64) -> Self {
        Self { epsilon: Some(epsilon), sigma: None, delta, accountant: AccountantKind::Rdp }
    }

    pub fn sigma(sigma: f64, delta: f64) -> Self {
        Self { epsilon: None, sigma: Some(sigma), delta, accountant: AccountantKind::Rdp }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub strategy: PrivatizationStrategy,
    pub privacy: PrivacyTarget,
    /// 0 is plain SGD.
    pub momentum: f64,
    pub noise_mode: NoiseMode,
    pub seed: u64,
    pub moments: MomentConfig,
    /// Evaluate the model metric every this many steps (0 disables).
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn new(strategy: PrivatizationStrategy, privacy: PrivacyTarget) -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 1,
            epochs: 1,
            strategy,
            privacy,
            momentum: 0.0,
            noise_mode: NoiseMode::default(),
            seed: 0,
            moments: MomentConfig::default(),
            eval_every: 0,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.batch_size > n {
            return Err(invalid(format!("batch size {} must lie in [1, {n}]", self.batch_size)));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        self.strategy.validate()?;
        self.moments.validate()
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n / self.batch_size
    }

    pub fn total_steps(&self, n: usize) -> usize {
        self.epochs * self.steps_per_epoch(n)
    }

    /// Accountant view of this run: the noise multiplier is expressed
    /// relative to the clipped sum's unit sensitivity.
    pub fn privacy_spec(&self, n: usize) -> PrivacySpec {
        PrivacySpec {
            epsilon: self.privacy.epsilon,
            delta: self.privacy.delta,
            sigma: self.privacy.sigma.map(|s| self.noise_mode.accounted_sigma(s, self.batch_size)),
            sampling_ratio: self.batch_size as f64 / n as f64,
            max_steps: self.total_steps(n),
            accountant: self.privacy.accountant,
        }
    }

    /// Resolved accountant parameters and the per-draw sigma.
    pub fn resolve_privacy(&self, n: usize) -> Result<(ResolvedPrivacy, f64)> {
        let resolved = self.privacy_spec(n).resolve()?;
        let per_unit = self.noise_mode.accounted_sigma(1.0, self.batch_size);
        let sigma = match self.privacy.sigma {
            Some(s) => s,
            None => resolved.sigma / per_unit,
        };
        Ok((resolved, sigma))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: usize,
    /// `||mean g - g~||`.
    pub total_change_norm: f64,
    /// `||mean g - mean clip(g)||`.
    pub pre_noise_norm: f64,
    pub clip_fraction: f64,
    pub snr: f64,
    /// Mean batch loss at the parameters before the update.
    pub loss: f64,
    /// Composed epsilon after this step.
    pub epsilon: f64,
    /// `||noise||` on the averaged gradient.
    pub noise_norm: f64,
    /// Norm of the noise carried by the parameter step direction.
    pub update_noise_norm: f64,
    /// `sum b_i^2`.
    pub scale_sq_norm: f64,
    /// `||s / b||^2` when moment estimates are in use.
    pub std_ratio_sq: Option<f64>,
}

pub const STEP_CSV_HEADER: &str =
    "step,total_change_norm,pre_noise_norm,clip_fraction,snr,loss,epsilon,noise_norm,update_noise_norm,scale_sq_norm";

impl StepReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.total_change_norm,
            self.pre_noise_norm,
            self.clip_fraction,
            self.snr,
            self.loss,
            self.epsilon,
            self.noise_norm,
            self.update_noise_norm,
            self.scale_sq_norm
        )
    }
}

pub fn reports_to_csv(reports: &[StepReport]) -> String {
    let mut out = String::from(STEP_CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Vec<f64>,
    pub reports: Vec<StepReport>,
    /// `(step, metric)` pairs, including step 0 and the final step when
    /// evaluation is enabled.
    pub metric_curve: Vec<(usize, f64)>,
    pub ledger: Option<PrivacyLedger>,
    pub moments: Option<MomentState>,
    /// Per-draw noise multiplier.
    pub sigma: f64,
    pub privacy: ResolvedPrivacy,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn epsilon_spent(&self) -> f64 {
        self.reports.last().map_or(0.0, |r| r.epsilon)
    }

    pub fn mean_total_change_norm(&self) -> f64 {
        mean(self.reports.iter().map(|r| r.total_change_norm))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Shuffles `0..n` and cuts it into `n / batch_size` full batches; the
/// remainder is dropped.
pub fn epoch_order(n: usize, batch_size: usize, rng: &mut RngStream) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    idx.chunks_exact(batch_size).map(<[usize]>::to_vec).collect()
}

/// `nu <- beta nu + (1 - beta) g`.
pub fn momentum_update(nu: &mut [f64], g: &[f64], beta: f64) -> Result<()> {
    if nu.len() != g.len() {
        return Err(invalid(format!("momentum has dim {} but gradient {}", nu.len(), g.len())));
    }
    for (v, x) in nu.iter_mut().zip(g) {
        *v = beta * *v + (1.0 - beta) * x;
    }
    Ok(())
}

/// Privatizer for the current step. Moment-based strategies read `state`.
pub fn privatizer_for(strategy: &PrivatizationStrategy, state: Option<&MomentState>) -> Result<Privatizer> {
    match *strategy {
        PrivatizationStrategy::NormBound { bound } => Ok(Privatizer::NormClip { threshold: bound }),
        PrivatizationStrategy::L2Clip { threshold } => Ok(Privatizer::NormClip { threshold }),
        PrivatizationStrategy::CoordClip { threshold } => Ok(Privatizer::CoordClip { threshold }),
        PrivatizationStrategy::Whitening { gamma } => {
            let state = state.ok_or_else(|| Error::InvalidState("whitening needs moments".into()))?;
            Ok(Privatizer::Affine(whitening_transform(state, gamma)?))
        }
        PrivatizationStrategy::AdaClip { gamma } => {
            let state = state.ok_or_else(|| Error::InvalidState("adaclip needs moments".into()))?;
            Ok(Privatizer::Affine(optimal_transform(state, gamma)?))
        }
    }
}

/// Step-level training driver.
pub struct Trainer<'a> {
    model: &'a dyn GradientOracle,
    data: &'a Dataset,
    config: TrainConfig,
    params: Vec<f64>,
    velocity: Vec<f64>,
    noise_velocity: Vec<f64>,
    moments: Option<MomentState>,
    ledger: Option<PrivacyLedger>,
    privacy: ResolvedPrivacy,
    sigma: f64,
    root: RngStream,
    step: usize,
    last_noisy_gradient: Option<Vec<f64>>,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &'a dyn GradientOracle, data: &'a Dataset, config: TrainConfig) -> Result<Self> {
        config.validate(data.len())?;
        let (privacy, sigma) = config.resolve_privacy(data.len())?;
        let root = RngStream::new(config.seed, 0);
        let params = model.init_params(&mut root.derive(STREAM_INIT));
        if params.len() != model.dim() {
            return Err(Error::Consistency(format!(
                "model initializer produced {} parameters, expected {}",
                params.len(),
                model.dim()
            )));
        }
        let moments =
            if config.strategy.uses_moments() { Some(MomentState::new(model.dim(), config.moments)?) } else { None };
        let ledger = if sigma > 0.0 { Some(PrivacyLedger::new(privacy.delta)?) } else { None };
        Ok(Self {
            model,
            data,
            params,
            velocity: vec![0.0; model.dim()],
            noise_velocity: vec![0.0; model.dim()],
            moments,
            ledger,
            privacy,
            sigma,
            root,
            step: 0,
            last_noisy_gradient: None,
            config,
        })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Replaces the parameters, e.g. to start from a chosen point.
    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.model.dim() {
            return Err(invalid(format!("expected {} parameters, got {}", self.model.dim(), params.len())));
        }
        self.params = params;
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn privacy(&self) -> &ResolvedPrivacy {
        &self.privacy
    }

    pub fn moments(&self) -> Option<&MomentState> {
        self.moments.as_ref()
    }

    pub fn ledger(&self) -> Option<&PrivacyLedger> {
        self.ledger.as_ref()
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// The averaged noisy gradient of the latest step.
    pub fn last_noisy_gradient(&self) -> Option<&[f64]> {
        self.last_noisy_gradient.as_deref()
    }

    /// The event the next step would append to the ledger.
    fn next_event(&self) -> Result<Option<PrivacyEvent>> {
        if self.ledger.is_none() {
            return Ok(None);
        }
        let acc = self.config.noise_mode.accounted_sigma(self.sigma, self.config.batch_size);
        PrivacyEvent::new(acc, self.privacy.sampling_ratio).map(Some)
    }

    /// Whether taking another step would push the composed epsilon above
    /// the budget.
    pub fn budget_allows_step(&self) -> Result<bool> {
        if !self.privacy.enforce_budget {
            return Ok(true);
        }
        let (Some(ledger), Some(event)) = (&self.ledger, self.next_event()?) else {
            return Ok(true);
        };
        Ok(match ledger.epsilon_after(event, self.privacy.accountant) {
            Ok(eps) => eps <= self.privacy.epsilon,
            Err(_) => false,
        })
    }

    fn per_example_grads(&self, batch: &[usize]) -> Result<(Vec<RealVector>, f64)> {
        let one = |&i: &usize| -> Result<(RealVector, f64)> {
            let ex = self.data.example(i);
            let loss = self.model.loss(&self.params, ex);
            let g = RealVector::new(self.model.grad(&self.params, ex)).map_err(|_| Error::Divergence {
                step: self.step,
                reason: format!("non-finite gradient for example {i}"),
            })?;
            Ok((g, loss))
        };
        let pairs: Vec<(RealVector, f64)> = if batch.len() * self.model.dim() >= PARALLEL_WORK {
            batch.par_iter().map(one).collect::<Result<_>>()?
        } else {
            batch.iter().map(one).collect::<Result<_>>()?
        };
        let loss = mean(pairs.iter().map(|p| p.1));
        Ok((pairs.into_iter().map(|p| p.0).collect(), loss))
    }

    /// Runs one step on the given example indices.
    pub fn step_on(&mut self, batch: &[usize]) -> Result<StepReport> {
        if batch.len() != self.config.batch_size {
            return Err(invalid(format!("batch has {} examples, configured {}", batch.len(), self.config.batch_size)));
        }
        let (grads, loss) = self.per_example_grads(batch)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step: self.step, reason: format!("loss is {loss}") });
        }
        let privatizer = privatizer_for(&self.config.strategy, self.moments.as_ref())?;
        let noise_rng = self.root.derive_path(&[STREAM_NOISE, self.step as u64]);
        let batch_out = privatize_batch(&grads, &privatizer, self.sigma, self.config.noise_mode, &noise_rng)?;
        let g_tilde = batch_out.noisy_mean.as_slice();

        let lr = self.config.learning_rate;
        let beta = self.config.momentum;
        let update_noise_norm = if beta == 0.0 {
            for (p, g) in self.params.iter_mut().zip(g_tilde) {
                *p -= lr * g;
            }
            squared_norm(&batch_out.noise).sqrt()
        } else {
            momentum_update(&mut self.velocity, g_tilde, beta)?;
            momentum_update(&mut self.noise_velocity, &batch_out.noise, beta)?;
            for (p, v) in self.params.iter_mut().zip(&self.velocity) {
                *p -= lr * v;
            }
            squared_norm(&self.noise_velocity).sqrt()
        };
        if let Some(i) = self.params.iter().position(|p| !p.is_finite()) {
            return Err(Error::Divergence { step: self.step, reason: format!("parameter {i} is not finite") });
        }

        let scales = privatizer.noise_scales(g_tilde.len());
        let mut std_ratio_sq = None;
        if let Some(state) = &mut self.moments {
            std_ratio_sq = Some(state.std().iter().zip(&scales).map(|(s, b)| (s / b).powi(2)).sum());
            let eff = self.config.noise_mode.effective_sigma(self.sigma, self.config.batch_size);
            state.observe(g_tilde, &scales, eff, self.config.batch_size)?;
        }

        let epsilon = match self.next_event()? {
            Some(event) => {
                let ledger = self.ledger.as_mut().expect("event implies ledger");
                ledger.record(event)?;
                ledger.consumed_epsilon(self.privacy.accountant)?
            }
            None if self.sigma == 0.0 => f64::INFINITY,
            None => 0.0,
        };

        self.step += 1;
        let report = StepReport {
            step: self.step,
            total_change_norm: batch_out.total_change_norm(),
            pre_noise_norm: batch_out.pre_noise_norm(),
            clip_fraction: batch_out.clip_fraction(),
            snr: batch_out.snr(),
            loss,
            epsilon,
            noise_norm: squared_norm(&batch_out.noise).sqrt(),
            update_noise_norm,
            scale_sq_norm: squared_norm(&scales),
            std_ratio_sq,
        };
        self.last_noisy_gradient = Some(batch_out.noisy_mean.into_inner());
        Ok(report)
    }

    /// Runs the configured schedule, stopping early when the budget would
    /// be exceeded. `eval` defaults to the training set.
    pub fn run(mut self, eval: Option<&Dataset>) -> Result<TrainOutcome> {
        let n = self.data.len();
        let total = self.config.total_steps(n);
        let eval_data = eval.unwrap_or(self.data);
        let every = self.config.eval_every;
        let mut curve = Vec::new();
        if every > 0 {
            curve.push((0, self.model.metric(&self.params, eval_data)));
        }
        let mut reports = Vec::with_capacity(total);
        let mut stopped_early = false;
        'epochs: for epoch in 0..self.config.epochs {
            let mut shuffle = self.root.derive_path(&[STREAM_SHUFFLE, epoch as u64]);
            for batch in epoch_order(n, self.config.batch_size, &mut shuffle) {
                if !self.budget_allows_step()? {
                    if self.step == 0 {
                        return Err(Error::Configuration("privacy budget does not allow a single step".into()));
                    }
                    stopped_early = true;
                    break 'epochs;
                }
                reports.push(self.step_on(&batch)?);
                if every > 0 && self.step.is_multiple_of(every) {
                    curve.push((self.step, self.model.metric(&self.params, eval_data)));
                }
            }
        }
        if every > 0 && curve.last().map(|c| c.0) != Some(self.step) {
            curve.push((self.step, self.model.metric(&self.params, eval_data)));
        }
        Ok(TrainOutcome {
            params: self.params,
            reports,
            metric_curve: curve,
            ledger: self.ledger,
            moments: self.moments,
            sigma: self.sigma,
            privacy: self.privacy,
            stopped_early,
        })
    }
}

pub fn train(model: &dyn GradientOracle, data: &Dataset, config: TrainConfig) -> Result<TrainOutcome> {
    Trainer::new(model, data, config)?.run(None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceBoundInputs {
    /// Smoothness constant `L`.
    pub lipschitz: f64,
    /// Per-example gradient norm bound `G`.
    pub grad_bound: f64,
    /// Stochastic gradient deviation bound.
    pub sg_std: f64,
    pub learning_rate: f64,
    pub sigma: f64,
    /// `||s^t / b^t||^2` per step.
    pub std_ratio_sq: Vec<f64>,
    /// `||b^t||^2` per step.
    pub scale_sq: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceTerms {
    pub init: f64,
    pub sg_variance: f64,
    pub clip_bias: f64,
    pub noise_variance: f64,
    /// False when `eta >= 1 / (3L)`; the terms are still computed.
    pub in_range: bool,
}

impl ConvergenceTerms {
    pub fn total(&self) -> f64 {
        self.init + self.sg_variance + self.clip_bias + self.noise_variance
    }
}

/// `2(f0 - f*)/(eta T)`, `3 L eta sg^2`, `(6 G^2 / T) sum ||s/b||^2`,
/// `(L eta sigma^2 / T) sum ||b||^2`.
pub fn convergence_bound_terms(inputs: &ConvergenceBoundInputs, f0_minus_fstar: f64) -> Result<ConvergenceTerms> {
    let ConvergenceBoundInputs { lipschitz, grad_bound, sg_std, learning_rate, sigma, .. } = *inputs;
    let scalars = [lipschitz, grad_bound, sg_std, learning_rate, sigma, f0_minus_fstar];
    if scalars.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(invalid("convergence inputs must be finite and nonnegative"));
    }
    if !(learning_rate > 0.0) {
        return Err(invalid("learning rate must be positive"));
    }
    let t = inputs.std_ratio_sq.len();
    if t == 0 || inputs.scale_sq.len() != t {
        return Err(invalid("per-step traces must be nonempty and of equal length"));
    }
    let tf = t as f64;
    let ratio: f64 = inputs.std_ratio_sq.iter().sum();
    let scale: f64 = inputs.scale_sq.iter().sum();
    let noise_variance = if sigma == 0.0 { 0.0 } else { lipschitz * learning_rate * sigma * sigma / tf * scale };
    Ok(ConvergenceTerms {
        init: 2.0 * f0_minus_fstar / (learning_rate * tf),
        sg_variance: 3.0 * lipschitz * learning_rate * sg_std * sg_std,
        clip_bias: 6.0 * grad_bound * grad_bound / tf * ratio,
        noise_variance,
        in_range: learning_rate < 1.0 / (3.0 * lipschitz),
    })
}

/// Monte-Carlo frequency of `||(g - m) / b|| > 1` for `g ~ N(m, diag(s^2))`.
pub fn empirical_clip_probability(state: &MomentState, b: &[f64], trials: usize, rng: &mut RngStream) -> Result<f64> {
    if trials == 0 {
        return Err(invalid("need at least one trial"));
    }
    if b.len() != state.dim() {
        return Err(invalid(format!("scale has dim {}, state has dim {}", b.len(), state.dim())));
    }
    let s = state.std();
    let hits = (0..trials)
        .filter(|_| {
            let sq: f64 = s.iter().zip(b).map(|(si, bi)| (si * rng.standard_normal() / bi).powi(2)).sum();
            sq > 1.0
        })
        .count();
    Ok(hits as f64 / trials as f64)
}

/// One header line `dim,kind`, then one value per line.
pub fn serialize_params(params: &[f64], kind: &str) -> String {
    let mut out = format!("{},{kind}\n", params.len());
    for p in params {
        out.push_str(&format!("{p}\n"));
    }
    out
}

pub fn parse_params(text: &str) -> Result<(Vec<f64>, String)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty parameter file".into()))?;
    let (dim, kind) =
        header.split_once(',').ok_or_else(|| Error::Format(format!("bad parameter header {header:?}")))?;
    let dim: usize = dim.trim().parse().map_err(|_| Error::Format(format!("bad dimension in header {header:?}")))?;
    let params = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse::<f64>().map_err(|_| Error::Format(format!("bad value {l:?}"))))
        .collect::<Result<Vec<_>>>()?;
    if params.len() != dim {
        return Err(Error::Consistency(format!("header says {dim} values, found {}", params.len())));
    }
    Ok((params, kind.trim().to_string()))
}

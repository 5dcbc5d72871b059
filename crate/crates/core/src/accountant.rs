//! Gaussian-mechanism calibration and privacy composition.
//!
//! Three composition rules are available. `Basic` sums per-step epsilons
//! with `delta` split evenly across steps; `Advanced` applies the
//! heterogeneous advanced-composition bound (never worse than `Basic`);
//! `Rdp` tracks Renyi divergences of the sampled Gaussian mechanism at
//! integer orders 2..=256 and converts once at the end. Per-step epsilons
//! for the first two rules come from a single-step Renyi conversion.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

/// Integer Renyi orders tracked by the accountant.
pub const MIN_ORDER: u32 = 2;
pub const MAX_ORDER: u32 = 256;

/// Largest epsilon accepted by the closed-form Gaussian calibration.
pub const CALIBRATION_EPSILON_LIMIT: f64 = 1.0 - 1e-9;

/// Smallest `sigma` with `(4/5) exp(-(sigma epsilon)^2 / 2) <= delta`,
/// i.e. `sqrt(2 ln(4 / (5 delta))) / epsilon`. Requires `epsilon < 1`.
pub fn gaussian_sigma_for(epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(epsilon < CALIBRATION_EPSILON_LIMIT) {
        return Err(Error::OutOfCalibrationRange { epsilon });
    }
    check_delta(delta)?;
    if delta >= 0.8 {
        return Err(invalid(format!("delta {delta} >= 4/5 makes the calibration vacuous")));
    }
    Ok((2.0 * (0.8 / delta).ln()).sqrt() / epsilon)
}

/// `(4/5) exp(-(sigma epsilon)^2 / 2)`.
pub fn gaussian_delta_for(sigma: f64, epsilon: f64) -> f64 {
    0.8 * (-(sigma * epsilon).powi(2) / 2.0).exp()
}

/// Closed-form epsilon for noise scale `sigma` at `delta`. Only a valid
/// guarantee when the result is below one.
pub fn gaussian_epsilon_for(sigma: f64, delta: f64) -> f64 {
    (2.0 * (0.8 / delta).ln()).max(0.0).sqrt() / sigma
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("delta must lie in (0, 1), got {delta}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AccountantKind {
    Basic,
    Advanced,
    #[default]
    Rdp,
}

impl AccountantKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Basic => "basic",
            Self::Advanced => "advanced",
            Self::Rdp => "rdp",
        }
    }
}

impl fmt::Display for AccountantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AccountantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "basic" => Ok(Self::Basic),
            "advanced" => Ok(Self::Advanced),
            "rdp" => Ok(Self::Rdp),
            other => Err(invalid(format!("unknown accountant {other:?}"))),
        }
    }
}

/// One application of the sampled Gaussian mechanism.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyEvent {
    /// Noise multiplier relative to the sensitivity.
    pub sigma: f64,
    /// Sampling ratio `B / N`.
    pub q: f64,
}

impl PrivacyEvent {
    pub fn new(sigma: f64, q: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(invalid(format!("event sigma must be positive, got {sigma}")));
        }
        if !(q > 0.0 && q <= 1.0) {
            return Err(invalid(format!("sampling ratio must lie in (0, 1], got {q}")));
        }
        Ok(Self { sigma, q })
    }

    fn key(&self) -> (u64, u64) {
        (self.sigma.to_bits(), self.q.to_bits())
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Renyi divergence bound of order `order` for one step of the sampled
/// Gaussian mechanism with noise multiplier `sigma` and ratio `q`.
pub fn rdp_sampled_gaussian(sigma: f64, q: f64, order: u32) -> Result<f64> {
    if order < 2 {
        return Err(invalid(format!("order must be >= 2, got {order}")));
    }
    let alpha = order as f64;
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    if !inv_two_var.is_finite() {
        return Err(Error::AccountantFailure { order, reason: format!("noise multiplier {sigma} is too small") });
    }
    if q >= 1.0 {
        let r = alpha * inv_two_var;
        return finite_or_fail(r, order);
    }
    // log A_alpha = logsumexp_k [ln C(alpha, k) + (alpha - k) ln(1 - q)
    //                            + k ln q + (k^2 - k) / (2 sigma^2)]
    let (ln_q, ln_1mq) = (q.ln(), (-q).ln_1p());
    let mut log_binom = 0.0;
    let mut log_a = f64::NEG_INFINITY;
    for k in 0..=order {
        let kf = k as f64;
        if k > 0 {
            log_binom += (alpha - kf + 1.0).ln() - kf.ln();
        }
        let term = log_binom + (alpha - kf) * ln_1mq + kf * ln_q + (kf * kf - kf) * inv_two_var;
        if !term.is_finite() {
            return Err(Error::AccountantFailure { order, reason: format!("log-moment term {k} overflowed") });
        }
        log_a = log_add(log_a, term);
    }
    finite_or_fail(log_a / (alpha - 1.0), order)
}

fn finite_or_fail(r: f64, order: u32) -> Result<f64> {
    if r.is_finite() {
        Ok(r.max(0.0))
    } else {
        Err(Error::AccountantFailure { order, reason: "Renyi divergence is not finite".into() })
    }
}

fn rdp_curve(event: &PrivacyEvent) -> Result<Vec<f64>> {
    (MIN_ORDER..=MAX_ORDER).map(|order| rdp_sampled_gaussian(event.sigma, event.q, order)).collect()
}

/// Converts cumulative Renyi bounds to epsilon at `delta`, returning the
/// epsilon and the minimizing order. Uses
/// `eps = r + ln((a-1)/a) - (ln delta + ln a) / (a-1)`, which is never
/// larger than the simpler `r + ln(1/delta) / (a-1)`.
pub fn rdp_to_epsilon(rdp: &[f64], delta: f64) -> (f64, u32) {
    let ln_delta = delta.ln();
    let mut best = (f64::INFINITY, MIN_ORDER);
    for (i, &r) in rdp.iter().enumerate() {
        let order = MIN_ORDER + i as u32;
        let a = order as f64;
        let eps = r + ((a - 1.0) / a).ln() - (ln_delta + a.ln()) / (a - 1.0);
        if eps < best.0 {
            best = (eps, order);
        }
    }
    (best.0.max(0.0), best.1)
}

/// Epsilon of a single event on its own at `delta`.
pub fn single_event_epsilon(event: &PrivacyEvent, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    Ok(rdp_to_epsilon(&rdp_curve(event)?, delta).0)
}

#[derive(Debug, Clone)]
struct EventGroup {
    event: PrivacyEvent,
    count: usize,
    rdp: Vec<f64>,
}

/// One row of the ledger's CSV export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerRow {
    pub step: usize,
    pub sigma: f64,
    pub q: f64,
    pub eps_basic: f64,
    pub eps_rdp: f64,
}

/// Append-only record of privacy events with cumulative epsilon at a fixed
/// delta.
#[derive(Debug, Clone)]
pub struct PrivacyLedger {
    delta: f64,
    events: Vec<PrivacyEvent>,
    groups: Vec<EventGroup>,
    rdp: Vec<f64>,
    history: Vec<LedgerRow>,
}

impl PrivacyLedger {
    pub fn new(delta: f64) -> Result<Self> {
        check_delta(delta)?;
        Ok(Self {
            delta,
            events: Vec::new(),
            groups: Vec::new(),
            rdp: vec![0.0; (MAX_ORDER - MIN_ORDER + 1) as usize],
            history: Vec::new(),
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn events(&self) -> &[PrivacyEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn history(&self) -> &[LedgerRow] {
        &self.history
    }

    fn accumulate(&mut self, event: PrivacyEvent) -> Result<PrivacyEvent> {
        let event = PrivacyEvent::new(event.sigma, event.q)?;
        let idx = match self.groups.iter().position(|g| g.event.key() == event.key()) {
            Some(i) => i,
            None => {
                self.groups.push(EventGroup { event, count: 0, rdp: rdp_curve(&event)? });
                self.groups.len() - 1
            }
        };
        let group = &mut self.groups[idx];
        group.count += 1;
        for (acc, r) in self.rdp.iter_mut().zip(&group.rdp) {
            *acc += r;
        }
        self.events.push(event);
        Ok(event)
    }

    pub fn record(&mut self, event: PrivacyEvent) -> Result<()> {
        let event = self.accumulate(event)?;
        let row = LedgerRow {
            step: self.events.len(),
            sigma: event.sigma,
            q: event.q,
            eps_basic: compose_basic(self, self.delta)?,
            eps_rdp: compose_rdp(self, self.delta)?,
        };
        self.history.push(row);
        Ok(())
    }

    pub fn consumed_epsilon(&self, kind: AccountantKind) -> Result<f64> {
        compose(self, kind, self.delta)
    }

    /// Epsilon the ledger would report after appending `event`.
    pub fn epsilon_after(&self, event: PrivacyEvent, kind: AccountantKind) -> Result<f64> {
        let mut next = PrivacyLedger {
            delta: self.delta,
            events: self.events.clone(),
            groups: self.groups.clone(),
            rdp: self.rdp.clone(),
            history: Vec::new(),
        };
        next.accumulate(event)?;
        compose(&next, kind, next.delta)
    }

    /// CSV with header `step,sigma,q,eps_basic,eps_rdp`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,sigma,q,eps_basic,eps_rdp\n");
        for r in &self.history {
            out.push_str(&format!("{},{},{},{},{}\n", r.step, r.sigma, r.q, r.eps_basic, r.eps_rdp));
        }
        out
    }
}

pub fn compose(ledger: &PrivacyLedger, kind: AccountantKind, delta: f64) -> Result<f64> {
    match kind {
        AccountantKind::Basic => compose_basic(ledger, delta),
        AccountantKind::Advanced => compose_advanced(ledger, delta),
        AccountantKind::Rdp => compose_rdp(ledger, delta),
    }
}

/// Linear composition: `sum_i eps_i` with each step at `delta / T`.
pub fn compose_basic(ledger: &PrivacyLedger, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if ledger.is_empty() {
        return Ok(0.0);
    }
    let per_step = delta / ledger.len() as f64;
    Ok(ledger.groups.iter().map(|g| g.count as f64 * rdp_to_epsilon(&g.rdp, per_step).0).sum())
}

/// Heterogeneous advanced composition with `delta / 2` reserved for the
/// slack term and `delta / (2T)` per step; capped by [`compose_basic`].
pub fn compose_advanced(ledger: &PrivacyLedger, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if ledger.is_empty() {
        return Ok(0.0);
    }
    let per_step = delta / (2.0 * ledger.len() as f64);
    let (mut sum_sq, mut drift) = (0.0, 0.0);
    for g in &ledger.groups {
        let e = rdp_to_epsilon(&g.rdp, per_step).0;
        let n = g.count as f64;
        sum_sq += n * e * e;
        drift += n * e * e.exp_m1();
    }
    let advanced = (2.0 * (2.0 / delta).ln() * sum_sq).sqrt() + drift;
    Ok(advanced.min(compose_basic(ledger, delta)?))
}

/// Renyi composition over integer orders, converted at `delta`.
pub fn compose_rdp(ledger: &PrivacyLedger, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if ledger.is_empty() {
        return Ok(0.0);
    }
    Ok(rdp_to_epsilon(&ledger.rdp, delta).0)
}

/// Epsilon after `steps` identical events, without building a ledger.
pub fn schedule_epsilon(sigma: f64, q: f64, steps: usize, delta: f64, kind: AccountantKind) -> Result<f64> {
    check_delta(delta)?;
    if steps == 0 {
        return Ok(0.0);
    }
    let event = PrivacyEvent::new(sigma, q)?;
    let curve = rdp_curve(&event)?;
    let t = steps as f64;
    let basic = || t * rdp_to_epsilon(&curve, delta / t).0;
    Ok(match kind {
        AccountantKind::Rdp => {
            let total: Vec<f64> = curve.iter().map(|r| r * t).collect();
            rdp_to_epsilon(&total, delta).0
        }
        AccountantKind::Basic => basic(),
        AccountantKind::Advanced => {
            let e = rdp_to_epsilon(&curve, delta / (2.0 * t)).0;
            let adv = (2.0 * (2.0 / delta).ln() * t * e * e).sqrt() + t * e * e.exp_m1();
            adv.min(basic())
        }
    })
}

/// Smallest noise multiplier (to within 1e-9 relative) whose schedule stays
/// within `epsilon`.
pub fn solve_sigma(epsilon: f64, delta: f64, q: f64, steps: usize, kind: AccountantKind) -> Result<f64> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(invalid(format!("target epsilon must be positive, got {epsilon}")));
    }
    if steps == 0 {
        return Err(invalid("step count must be positive"));
    }
    let eps_at = |s: f64| schedule_epsilon(s, q, steps, delta, kind);
    let mut hi = 1.0;
    while eps_at(hi)? > epsilon {
        hi *= 2.0;
        if hi > 1e9 {
            return Err(Error::Configuration(format!("no noise multiplier below 1e9 reaches epsilon {epsilon}")));
        }
    }
    let mut lo = hi / 2.0;
    while lo > 1e-3 && eps_at(lo)? <= epsilon {
        hi = lo;
        lo /= 2.0;
    }
    while (hi - lo) / hi > 1e-10 {
        let mid = 0.5 * (lo + hi);
        let feasible = match eps_at(mid) {
            Ok(e) => e <= epsilon,
            Err(Error::AccountantFailure { .. }) => false,
            Err(e) => return Err(e),
        };
        if feasible {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Privacy requirements of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacySpec {
    pub epsilon: Option<f64>,
    pub delta: f64,
    pub sigma: Option<f64>,
    pub sampling_ratio: f64,
    pub max_steps: usize,
    pub accountant: AccountantKind,
}

/// A [`PrivacySpec`] with both epsilon and sigma known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedPrivacy {
    pub epsilon: f64,
    pub delta: f64,
    pub sigma: f64,
    pub sampling_ratio: f64,
    pub max_steps: usize,
    pub accountant: AccountantKind,
    /// False when epsilon was derived from sigma, in which case the budget
    /// never stops training.
    pub enforce_budget: bool,
}

impl PrivacySpec {
    pub fn validate(&self) -> Result<()> {
        check_delta(self.delta)?;
        if !(self.sampling_ratio > 0.0 && self.sampling_ratio <= 1.0) {
            return Err(invalid(format!("sampling ratio must lie in (0, 1], got {}", self.sampling_ratio)));
        }
        if self.max_steps == 0 {
            return Err(invalid("max_steps must be positive"));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0) {
                return Err(invalid(format!("epsilon must be positive, got {e}")));
            }
        }
        if let Some(s) = self.sigma {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(invalid(format!("sigma must be finite and >= 0, got {s}")));
            }
        }
        if self.epsilon.is_none() && self.sigma.is_none() {
            return Err(invalid("privacy spec needs epsilon or sigma"));
        }
        Ok(())
    }

    /// Fills in whichever of epsilon and sigma is missing. A zero sigma is
    /// accepted as "no privacy" and resolves to an infinite epsilon.
    pub fn resolve(&self) -> Result<ResolvedPrivacy> {
        self.validate()?;
        let (epsilon, sigma, enforce_budget) = match (self.epsilon, self.sigma) {
            (Some(e), Some(s)) => (e, s, true),
            // Solved slightly inside the budget so that a ledger summing the
            // same events one by one never lands above it through rounding.
            (Some(e), None) => (
                e,
                solve_sigma(e * (1.0 - 1e-9), self.delta, self.sampling_ratio, self.max_steps, self.accountant)?,
                true,
            ),
            (None, Some(0.0)) => (f64::INFINITY, 0.0, false),
            (None, Some(s)) => {
                (schedule_epsilon(s, self.sampling_ratio, self.max_steps, self.delta, self.accountant)?, s, false)
            }
            (None, None) => unreachable!("validated above"),
        };
        Ok(ResolvedPrivacy {
            epsilon,
            delta: self.delta,
            sigma,
            sampling_ratio: self.sampling_ratio,
            max_steps: self.max_steps,
            accountant: self.accountant,
            enforce_budget,
        })
    }
}

/// True iff the composed epsilon strictly exceeds the budget. Accounting
/// failures count as exhausted.
pub fn budget_exhausted(ledger: &PrivacyLedger, spec: &PrivacySpec) -> bool {
    if ledger.is_empty() {
        return false;
    }
    let budget = spec.epsilon.unwrap_or(f64::INFINITY);
    match compose(ledger, spec.accountant, spec.delta) {
        Ok(eps) => eps > budget,
        Err(_) => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger_with(events: &[(f64, f64)], delta: f64) -> PrivacyLedger {
        let mut l = PrivacyLedger::new(delta).unwrap();
        for &(s, q) in events {
            l.record(PrivacyEvent::new(s, q).unwrap()).unwrap();
        }
        l
    }

    #[test]
    fn calibration_range() {
        assert!(matches!(gaussian_sigma_for(1.0 - 1e-9, 1e-5), Err(Error::OutOfCalibrationRange { .. })));
        assert!(matches!(gaussian_sigma_for(1.5, 1e-5), Err(Error::OutOfCalibrationRange { .. })));
        assert!(gaussian_sigma_for(0.999, 1e-5).is_ok());
        assert!(gaussian_sigma_for(0.5, 0.0).is_err());
        assert!(gaussian_sigma_for(0.5, 0.9).is_err());
    }

    #[test]
    fn calibration_inverts() {
        let sigma = gaussian_sigma_for(0.5, 1e-5).unwrap();
        let delta = gaussian_delta_for(sigma, 0.5);
        assert!((delta / 1e-5 - 1.0).abs() < 1e-9);
        assert!((gaussian_epsilon_for(sigma, 1e-5) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn full_batch_rdp_is_closed_form() {
        for order in [2, 7, 64] {
            let r = rdp_sampled_gaussian(3.0, 1.0, order).unwrap();
            assert!((r - order as f64 / 18.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sampled_rdp_order_two_closed_form() {
        // A_2 = (1-q)^2 + 2q(1-q) + q^2 e^{1/sigma^2} = 1 + q^2 (e^{1/sigma^2} - 1)
        let (s, q) = (1.3_f64, 0.05_f64);
        let expected = (q * q * (1.0 / (s * s)).exp_m1()).ln_1p();
        let r = rdp_sampled_gaussian(s, q, 2).unwrap();
        assert!((r - expected).abs() < 1e-14, "{r} vs {expected}");
    }

    #[test]
    fn rdp_beats_closed_form_calibration() {
        let l = ledger_with(&[(4.0, 1.0)], 1e-5);
        let rdp = compose_rdp(&l, 1e-5).unwrap();
        let closed_form = gaussian_epsilon_for(4.0, 1e-5);
        assert!(rdp <= closed_form, "{rdp} > {closed_form}");
    }

    #[test]
    fn basic_composition_is_additive() {
        let e = PrivacyEvent::new(1.1, 0.02).unwrap();
        let one = ledger_with(&[(1.1, 0.02)], 1e-5);
        assert_eq!(compose_basic(&one, 1e-5).unwrap(), single_event_epsilon(&e, 1e-5).unwrap());
        let two = ledger_with(&[(1.1, 0.02), (1.1, 0.02)], 1e-5);
        let single_half = single_event_epsilon(&e, 0.5e-5).unwrap();
        assert!((compose_basic(&two, 1e-5).unwrap() - 2.0 * single_half).abs() < 1e-12);
        let hundred = ledger_with(&vec![(1.1, 0.02); 100], 1e-5);
        let basic = compose_basic(&hundred, 1e-5).unwrap();
        let per = single_event_epsilon(&e, 1e-7).unwrap();
        assert!((basic - 100.0 * per).abs() < 1e-9 * basic);
        assert!(basic > compose_rdp(&hundred, 1e-5).unwrap());
        assert!(compose_advanced(&hundred, 1e-5).unwrap() <= basic);
    }

    #[test]
    fn schedule_epsilon_matches_ledger() {
        let l = ledger_with(&vec![(0.9, 0.01); 50], 1e-5);
        for kind in [AccountantKind::Basic, AccountantKind::Advanced, AccountantKind::Rdp] {
            let a = compose(&l, kind, 1e-5).unwrap();
            let b = schedule_epsilon(0.9, 0.01, 50, 1e-5, kind).unwrap();
            assert!((a - b).abs() <= 1e-9 * a, "{kind}: {a} vs {b}");
        }
    }

    #[test]
    fn ledger_history_is_monotone() {
        let l = ledger_with(&[(2.0, 0.1), (0.8, 0.01), (5.0, 1.0), (1.0, 0.5)], 1e-5);
        let h = l.history();
        assert_eq!(h.len(), 4);
        for w in h.windows(2) {
            assert!(w[1].eps_rdp >= w[0].eps_rdp);
            assert!(w[1].eps_basic >= w[0].eps_basic);
        }
        let csv = l.to_csv();
        assert!(csv.starts_with("step,sigma,q,eps_basic,eps_rdp\n"));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn epsilon_after_matches_record() {
        let mut l = ledger_with(&[(1.0, 0.1)], 1e-5);
        let e = PrivacyEvent::new(2.0, 0.05).unwrap();
        let predicted = l.epsilon_after(e, AccountantKind::Rdp).unwrap();
        l.record(e).unwrap();
        assert_eq!(predicted, l.consumed_epsilon(AccountantKind::Rdp).unwrap());
    }

    #[test]
    fn solve_sigma_hits_target() {
        let sigma = solve_sigma(2.0, 1e-5, 0.01, 500, AccountantKind::Rdp).unwrap();
        let eps = schedule_epsilon(sigma, 0.01, 500, 1e-5, AccountantKind::Rdp).unwrap();
        assert!(eps <= 2.0 && eps > 2.0 * (1.0 - 1e-6), "sigma {sigma} eps {eps}");
    }

    #[test]
    fn budget_checks() {
        let spec = PrivacySpec {
            epsilon: Some(1.0),
            delta: 1e-5,
            sigma: None,
            sampling_ratio: 0.01,
            max_steps: 10,
            accountant: AccountantKind::Rdp,
        };
        let empty = PrivacyLedger::new(1e-5).unwrap();
        assert!(!budget_exhausted(&empty, &spec));

        let l = ledger_with(&[(3.0, 0.2), (3.0, 0.2)], 1e-5);
        let exact = PrivacySpec { epsilon: Some(compose_rdp(&l, 1e-5).unwrap()), ..spec.clone() };
        assert!(!budget_exhausted(&l, &exact));

        let tiny = ledger_with(&[(1e-3, 1.0)], 1e-5);
        let huge_budget = PrivacySpec { epsilon: Some(1e6), ..spec };
        assert!(budget_exhausted(&tiny, &huge_budget));
    }

    #[test]
    fn tiny_sigma_reports_failure() {
        assert!(matches!(rdp_sampled_gaussian(1e-200, 0.5, 8), Err(Error::AccountantFailure { .. })));
    }

    #[test]
    fn resolve_spec() {
        let base = PrivacySpec {
            epsilon: None,
            delta: 1e-5,
            sigma: Some(1.0),
            sampling_ratio: 0.01,
            max_steps: 100,
            accountant: AccountantKind::Rdp,
        };
        let r = base.resolve().unwrap();
        assert!(!r.enforce_budget && r.epsilon > 0.0);
        let r2 = PrivacySpec { epsilon: Some(r.epsilon), sigma: None, ..base.clone() }.resolve().unwrap();
        assert!((r2.sigma - 1.0).abs() < 1e-6);
        let none = PrivacySpec { sigma: None, ..base.clone() };
        assert!(none.resolve().is_err());
        let zero = PrivacySpec { sigma: Some(0.0), ..base };
        assert_eq!(zero.resolve().unwrap().epsilon, f64::INFINITY);
    }
}

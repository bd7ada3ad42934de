//! Privacy accounting for the Poisson-subsampled Gaussian mechanism.
//!
//! Per-step Rényi-DP at integer orders is computed from the exact binomial
//! expansion, evaluated in log space:
//!
//! ```text
//! RDP(alpha) = log( sum_{k=0}^{alpha} C(alpha,k) (1-q)^(alpha-k) q^k
//!                   exp(k(k-1) / (2 sigma^2)) ) / (alpha - 1)
//! ```
//!
//! Steps compose additively per order; the conversion to `(epsilon, delta)`
//! takes the minimum of `rdp_total(alpha) + log(1/delta)/(alpha-1)` over the
//! order grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Target privacy budget plus the sampling regime it must hold under.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpec {
    pub epsilon: f64,
    pub delta: f64,
    /// Poisson sampling probability.
    pub q: f64,
    /// Number of training iterations the budget covers.
    pub iterations: u64,
}

impl PrivacySpec {
    pub fn new(epsilon: f64, delta: f64, q: f64, iterations: u64) -> Result<Self> {
        let spec = Self {
            epsilon,
            delta,
            q,
            iterations,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "delta must be in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "sampling probability must be in (0, 1], got {}",
                self.q
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be >= 1".into()));
        }
        Ok(())
    }

    /// Whether delta is below the customary `1/N` guideline for a dataset of
    /// `n` examples. Callers should warn when this returns false.
    pub fn delta_is_recommended(&self, n: usize) -> bool {
        n == 0 || self.delta < 1.0 / n as f64
    }
}

/// Rényi-DP of a single Poisson-subsampled Gaussian step at integer order
/// `alpha >= 2`.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, alpha: u32) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidNoise(sigma));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "sampling probability must be in (0, 1], got {}",
            q
        )));
    }
    if alpha < 2 {
        return Err(Error::InvalidConfig(format!(
            "integer RDP order must be >= 2, got {}",
            alpha
        )));
    }
    let a = alpha as f64;
    let c = 1.0 / (2.0 * sigma * sigma);
    if q >= 1.0 {
        // no subsampling: only the k = alpha term survives and the value
        // collapses to the pure Gaussian RDP
        return Ok(a * c);
    }
    let ln_q = q.ln();
    let ln_1mq = (1.0 - q).ln();

    // log-binomials by recurrence, then log-sum-exp over the expansion
    let mut ln_terms = Vec::with_capacity(alpha as usize + 1);
    let mut ln_binom = 0.0;
    for k in 0..=alpha {
        let kf = k as f64;
        ln_terms.push(ln_binom + kf * ln_q + (a - kf) * ln_1mq + kf * (kf - 1.0) * c);
        if k < alpha {
            ln_binom += ((a - kf) / (kf + 1.0)).ln();
        }
    }
    let max = ln_terms
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = ln_terms.iter().map(|t| (t - max).exp()).sum();
    let log_moment = max + sum.ln();
    // every exp factor is >= 1 and the binomial weights sum to 1, so the
    // moment is >= 1 and the RDP non-negative up to rounding
    Ok((log_moment / (a - 1.0)).max(0.0))
}

/// Accumulated RDP ledger over an integer order grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountantState {
    orders: Vec<u32>,
    rdp: Vec<f64>,
    steps_taken: u64,
}

/// Default order grid: dense small integers plus two large outposts.
pub fn default_orders() -> Vec<u32> {
    let mut orders: Vec<u32> = (2..=64).collect();
    orders.push(128);
    orders.push(256);
    orders
}

impl AccountantState {
    pub fn new() -> Self {
        Self::with_orders(default_orders())
    }

    pub fn with_orders(orders: Vec<u32>) -> Self {
        let rdp = vec![0.0; orders.len()];
        Self {
            orders,
            rdp,
            steps_taken: 0,
        }
    }

    pub fn orders(&self) -> &[u32] {
        &self.orders
    }

    pub fn rdp(&self) -> &[f64] {
        &self.rdp
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    /// Adds `steps` homogeneous subsampled-Gaussian steps to the ledger.
    pub fn record_steps(&mut self, q: f64, sigma: f64, steps: u64) -> Result<()> {
        if steps == 0 {
            return Ok(());
        }
        for (order, acc) in self.orders.iter().zip(self.rdp.iter_mut()) {
            *acc += steps as f64 * rdp_subsampled_gaussian(q, sigma, *order)?;
        }
        self.steps_taken += steps;
        Ok(())
    }
}

impl Default for AccountantState {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of the RDP-to-DP conversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonReport {
    pub epsilon: f64,
    /// Optimizing order; absent when no step has been taken.
    pub order: Option<u32>,
}

/// Converts the accumulated ledger to epsilon at the given delta, reporting
/// the optimizing order. A ledger with no steps reports epsilon 0.
pub fn compose_and_convert(state: &AccountantState, delta: f64) -> Result<EpsilonReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "delta must be in (0, 1), got {}",
            delta
        )));
    }
    if state.orders.is_empty() {
        return Err(Error::InvalidConfig("empty RDP order grid".into()));
    }
    if state.steps_taken == 0 {
        return Ok(EpsilonReport {
            epsilon: 0.0,
            order: None,
        });
    }
    let log_inv_delta = (1.0 / delta).ln();
    let mut best = f64::INFINITY;
    let mut best_order = state.orders[0];
    for (order, rdp) in state.orders.iter().zip(&state.rdp) {
        let eps = rdp + log_inv_delta / (*order as f64 - 1.0);
        if eps < best {
            best = eps;
            best_order = *order;
        }
    }
    Ok(EpsilonReport {
        epsilon: best,
        order: Some(best_order),
    })
}

/// Epsilon after `iterations` homogeneous steps at the given noise level.
pub fn epsilon_for(q: f64, sigma: f64, iterations: u64, delta: f64) -> Result<f64> {
    let mut state = AccountantState::new();
    state.record_steps(q, sigma, iterations)?;
    Ok(compose_and_convert(&state, delta)?.epsilon)
}

const SIGMA_LO: f64 = 0.3;
const SIGMA_HI: f64 = 100.0;
const SIGMA_TOL: f64 = 1e-3;

/// Smallest noise multiplier (to within an absolute grid tolerance of 1e-3,
/// searched over `[0.3, 100]`) whose accounted epsilon stays within the
/// spec. The returned value always satisfies the constraint.
pub fn calibrate_sigma(spec: &PrivacySpec) -> Result<f64> {
    spec.validate()?;
    let satisfied = |sigma: f64| -> Result<bool> {
        Ok(epsilon_for(spec.q, sigma, spec.iterations, spec.delta)? <= spec.epsilon)
    };
    if satisfied(SIGMA_LO)? {
        return Ok(SIGMA_LO);
    }
    if !satisfied(SIGMA_HI)? {
        return Err(Error::CalibrationRange(format!(
            "epsilon {} at delta {} unreachable with sigma <= {}",
            spec.epsilon, spec.delta, SIGMA_HI
        )));
    }
    let mut lo = SIGMA_LO; // fails the constraint
    let mut hi = SIGMA_HI; // satisfies it
    while hi - lo > SIGMA_TOL {
        let mid = 0.5 * (lo + hi);
        if satisfied(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_batch_reduces_to_pure_gaussian() {
        for sigma in [0.5, 1.0, 2.0, 5.0] {
            for alpha in [2u32, 3, 8, 16, 64, 256] {
                let got = rdp_subsampled_gaussian(1.0, sigma, alpha).unwrap();
                let expect = alpha as f64 / (2.0 * sigma * sigma);
                assert!(
                    (got - expect).abs() <= 1e-12 * expect.max(1.0),
                    "alpha {} sigma {}: {} vs {}",
                    alpha,
                    sigma,
                    got,
                    expect
                );
            }
        }
    }

    #[test]
    fn huge_noise_drives_rdp_to_zero() {
        for alpha in [2u32, 16, 256] {
            let v = rdp_subsampled_gaussian(0.1, 1e6, alpha).unwrap();
            assert!(v >= 0.0 && v <= 1e-9, "alpha {}: {}", alpha, v);
        }
    }

    #[test]
    fn rdp_is_finite_and_non_negative_on_the_grid() {
        for &alpha in &default_orders() {
            for q in [0.001, 0.01, 0.5, 1.0] {
                for sigma in [0.3, 1.0, 10.0] {
                    let v = rdp_subsampled_gaussian(q, sigma, alpha).unwrap();
                    assert!(v.is_finite() && v >= 0.0);
                }
            }
        }
    }

    #[test]
    fn invalid_noise_is_rejected() {
        assert!(matches!(
            rdp_subsampled_gaussian(0.01, 0.0, 4),
            Err(Error::InvalidNoise(_))
        ));
        assert!(matches!(
            rdp_subsampled_gaussian(0.01, -1.0, 4),
            Err(Error::InvalidNoise(_))
        ));
    }

    #[test]
    fn zero_steps_reports_zero_epsilon() {
        let state = AccountantState::new();
        let report = compose_and_convert(&state, 1e-5).unwrap();
        assert_eq!(report.epsilon, 0.0);
        assert_eq!(report.order, None);
    }

    #[test]
    fn doubling_iterations_strictly_increases_epsilon() {
        let e1 = epsilon_for(0.02, 1.0, 500, 1e-5).unwrap();
        let e2 = epsilon_for(0.02, 1.0, 1000, 1e-5).unwrap();
        assert!(e2 > e1);
    }

    #[test]
    fn ledger_is_monotone_in_steps() {
        let mut state = AccountantState::new();
        let mut prev = 0.0;
        for _ in 0..5 {
            state.record_steps(0.05, 1.2, 100).unwrap();
            let eps = compose_and_convert(&state, 1e-5).unwrap().epsilon;
            assert!(eps >= prev);
            prev = eps;
        }
        assert_eq!(state.steps_taken(), 500);
        assert!(state.rdp().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn empty_grid_is_a_configuration_error() {
        let mut state = AccountantState::with_orders(vec![]);
        state.steps_taken = 1;
        assert!(matches!(
            compose_and_convert(&state, 1e-5),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn calibrated_sigma_is_monotone_in_epsilon() {
        let mut prev = f64::INFINITY;
        for eps in [1.0, 2.0, 4.0, 8.0] {
            let spec = PrivacySpec::new(eps, 1e-5, 0.01, 1000).unwrap();
            let sigma = calibrate_sigma(&spec).unwrap();
            assert!(sigma <= prev + 1e-12);
            prev = sigma;
        }
    }

    #[test]
    fn calibration_round_trip_never_exceeds_requested_epsilon() {
        for (eps, q, t) in [(8.0, 0.01, 2000u64), (5.0, 0.01, 500), (2.0, 0.05, 300)] {
            let spec = PrivacySpec::new(eps, 1e-5, q, t).unwrap();
            let sigma = calibrate_sigma(&spec).unwrap();
            let achieved = epsilon_for(q, sigma, t, 1e-5).unwrap();
            assert!(achieved <= eps, "achieved {} > requested {}", achieved, eps);
        }
    }

    #[test]
    fn single_step_full_batch_matches_closed_form_gaussian() {
        // with q = 1 and T = 1 the accounted epsilon is
        //   min_alpha alpha/(2 sigma^2) + log(1/delta)/(alpha - 1),
        // whose continuous-alpha optimum gives the closed form
        //   sigma(eps) = (sqrt(2 L) + sqrt(2 L + 2 eps)) / (2 eps),  L = log(1/delta)
        for eps in [0.5, 1.0, 2.0, 4.0] {
            let delta = 1e-5f64;
            let l = (1.0 / delta).ln();
            let closed_form = ((2.0 * l).sqrt() + (2.0 * l + 2.0 * eps).sqrt()) / (2.0 * eps);
            let spec = PrivacySpec::new(eps, delta, 1.0, 1).unwrap();
            let sigma = calibrate_sigma(&spec).unwrap();
            assert!(
                (sigma - closed_form).abs() <= 0.01 * closed_form,
                "eps {}: calibrated {} vs closed form {}",
                eps,
                sigma,
                closed_form
            );
        }
    }

    #[test]
    fn unreachable_budget_is_a_range_error() {
        let spec = PrivacySpec::new(1e-4, 1e-7, 1.0, 100_000).unwrap();
        assert!(matches!(
            calibrate_sigma(&spec),
            Err(Error::CalibrationRange(_))
        ));
    }

    #[test]
    fn privacy_spec_validation_and_delta_guideline() {
        assert!(PrivacySpec::new(0.0, 1e-5, 0.01, 10).is_err());
        assert!(PrivacySpec::new(1.0, 0.0, 0.01, 10).is_err());
        assert!(PrivacySpec::new(1.0, 1e-5, 0.0, 10).is_err());
        assert!(PrivacySpec::new(1.0, 1e-5, 1.5, 10).is_err());
        assert!(PrivacySpec::new(1.0, 1e-5, 0.01, 0).is_err());
        let spec = PrivacySpec::new(1.0, 1e-5, 0.01, 10).unwrap();
        assert!(spec.delta_is_recommended(1000));
        assert!(!spec.delta_is_recommended(200_000));
    }
}

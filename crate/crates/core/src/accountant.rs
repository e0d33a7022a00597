//! Privacy accounting for the Poisson-subsampled Gaussian mechanism.
//!
//! One step at noise multiplier `σ` and sampling rate `q` has Rényi-DP
//!
//! ```text
//! ρ(α) = 1/(α−1) · log Σ_{k=0..α} C(α,k) (1−q)^{α−k} q^k exp(k(k−1)/(2σ²))
//! ```
//!
//! for integer `α` (add/remove adjacency). Orders compose additively over
//! steps and the total converts to `(ε, δ)` via
//! `ε = min_α S·ρ(α) + log(1/δ)/(α−1)`. Inverting that map gives the noise
//! multiplier for a prescribed budget.
//!
//! The Gaussian-DP central limit estimate is provided alongside; it is an
//! approximation, not a bound, and typically reports a smaller `ε`.

use libm::erfc;

use crate::error::{param, Error, Result};

/// Sampling rate and number of noisy steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingPlan {
    pub q: f64,
    pub steps: u64,
}

impl SamplingPlan {
    pub fn new(q: f64, steps: u64) -> Result<Self> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(param(format!("sampling rate must lie in (0, 1], got {q}")));
        }
        if steps == 0 {
            return Err(param("step count must be positive"));
        }
        Ok(Self { q, steps })
    }

    /// `q = B/N`, `S = E·⌈N/B⌉`.
    pub fn from_dataset(n: usize, batch: usize, epochs: u64) -> Result<Self> {
        if batch == 0 || batch > n {
            return Err(param(format!("batch size {batch} must lie in [1, {n}]")));
        }
        Self::new(batch as f64 / n as f64, epochs * n.div_ceil(batch) as u64)
    }

    /// `q` given directly: `S = E·⌈1/q⌉`.
    pub fn from_rate(q: f64, epochs: u64) -> Result<Self> {
        Self::new(q, 1)?;
        Self::new(q, epochs * steps_per_epoch(q))
    }
}

/// `⌈1/q⌉`, tolerant of `1/q` landing a hair above an integer.
pub fn steps_per_epoch(q: f64) -> u64 {
    let inv = 1.0 / q;
    let r = inv.round();
    if (inv - r).abs() <= 1e-9 * r {
        r as u64
    } else {
        inv.ceil() as u64
    }
}

/// Target `(ε, δ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(param(format!("epsilon must be positive, got {epsilon}")));
        }
        check_delta(delta)?;
        Ok(Self { epsilon, delta })
    }

    /// `δ = 1/(2N)`.
    pub fn with_auto_delta(epsilon: f64, n: usize) -> Result<Self> {
        Self::new(epsilon, 1.0 / (2.0 * n as f64))
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(param(format!("delta must lie in (0, 1), got {delta}")))
    }
}

/// Integers 2..=256 plus 1.25, 1.5, 1.75, ascending.
pub fn default_orders() -> Vec<f64> {
    [1.25, 1.5, 1.75].into_iter().chain((2..=256).map(f64::from)).collect()
}

/// `log(e^x − 1)` for `x > 0`.
fn ln_expm1(x: f64) -> f64 {
    if x > 40.0 {
        x + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().ln()
    }
}

/// `log(1 + e^x)`.
fn ln1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn rdp_integer(sigma: f64, q: f64, alpha: u64) -> f64 {
    if q == 1.0 {
        return alpha as f64 / (2.0 * sigma * sigma);
    }
    // The binomial weights sum to one, so the sum is 1 + Σ_{k≥2} w_k (e^{k(k−1)/2σ²} − 1)
    // with every excess term positive.
    let a = alpha as f64;
    let (ln_q, ln_1mq) = (q.ln(), (-q).ln_1p());
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    let mut ln_binom = 0.0;
    let mut terms = Vec::with_capacity(alpha as usize);
    for k in 1..=alpha {
        let kf = k as f64;
        ln_binom += (a - kf + 1.0).ln() - kf.ln();
        if k < 2 {
            continue;
        }
        terms.push(ln_binom + (a - kf) * ln_1mq + kf * ln_q + ln_expm1(kf * (kf - 1.0) * inv_two_var));
    }
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return 0.0;
    }
    let lse = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
    ln1p_exp(lse) / (a - 1.0)
}

/// Rényi-DP of one step of the subsampled Gaussian mechanism at order `alpha`.
///
/// `q = 1` is the plain Gaussian, `α/(2σ²)`. Otherwise non-integer orders
/// take the larger of the neighbouring integer orders (only the ceiling when
/// the floor is below 2).
pub fn rdp_step(sigma: f64, q: f64, alpha: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(param(format!("noise multiplier must be positive, got {sigma}")));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(param(format!("sampling rate must lie in (0, 1], got {q}")));
    }
    if !(alpha > 1.0) || !alpha.is_finite() {
        return Err(param(format!("Rényi order must exceed 1, got {alpha}")));
    }
    if q == 1.0 {
        return Ok(alpha / (2.0 * sigma * sigma));
    }
    if alpha.fract() == 0.0 {
        return Ok(rdp_integer(sigma, q, alpha as u64));
    }
    let (lo, hi) = (alpha.floor() as u64, alpha.ceil() as u64);
    let upper = rdp_integer(sigma, q, hi);
    Ok(if lo >= 2 {
        upper.max(rdp_integer(sigma, q, lo))
    } else {
        upper
    })
}

/// Per-step Rényi-DP values over a grid of orders.
#[derive(Debug, Clone, PartialEq)]
pub struct RdpCurve {
    pub orders: Vec<f64>,
    pub values: Vec<f64>,
}

impl RdpCurve {
    pub fn compute(sigma: f64, q: f64, orders: &[f64]) -> Result<Self> {
        let values = orders.iter().map(|&a| rdp_step(sigma, q, a)).collect::<Result<_>>()?;
        Ok(Self {
            orders: orders.to_vec(),
            values,
        })
    }

    /// Curve of `steps` compositions.
    pub fn compose(&self, steps: u64) -> Self {
        Self {
            orders: self.orders.clone(),
            values: self.values.iter().map(|v| v * steps as f64).collect(),
        }
    }
}

/// `(ε, δ)` obtained from a Rényi curve, with the minimizing order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpConversion {
    pub epsilon: f64,
    pub order: f64,
}

/// `ε = min_α ρ(α) + log(1/δ)/(α−1)` over an already composed curve.
/// Rényi-to-approximate-DP conversion rule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Conversion {
    /// `ε = ρ(α) + ln(1/δ)/(α−1)`.
    #[default]
    Classic,
    /// `ε = ρ(α) + ln((α−1)/α) − (ln δ + ln α)/(α−1)`, never larger than
    /// [`Conversion::Classic`].
    Improved,
}

impl Conversion {
    pub fn name(self) -> &'static str {
        match self {
            Conversion::Classic => "classic",
            Conversion::Improved => "improved",
        }
    }

    fn epsilon(self, rho: f64, alpha: f64, delta: f64) -> f64 {
        match self {
            Conversion::Classic => rho - delta.ln() / (alpha - 1.0),
            Conversion::Improved => {
                let e = rho + ((alpha - 1.0) / alpha).ln() - (delta.ln() + alpha.ln()) / (alpha - 1.0);
                e.max(0.0)
            }
        }
    }
}

impl std::fmt::Display for Conversion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Conversion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classic" => Ok(Conversion::Classic),
            "improved" => Ok(Conversion::Improved),
            other => Err(param(format!("unknown conversion '{other}' (classic|improved)"))),
        }
    }
}

/// Smallest ε over the curve's orders, classic conversion.
pub fn rdp_to_dp(curve: &RdpCurve, delta: f64) -> Result<DpConversion> {
    rdp_to_dp_with(curve, delta, Conversion::Classic)
}

pub fn rdp_to_dp_with(curve: &RdpCurve, delta: f64, conversion: Conversion) -> Result<DpConversion> {
    check_delta(delta)?;
    if curve.orders.is_empty() || curve.orders.len() != curve.values.len() {
        return Err(param("Rényi curve needs a non-empty order grid"));
    }
    curve
        .orders
        .iter()
        .zip(&curve.values)
        .map(|(&a, &r)| DpConversion {
            epsilon: conversion.epsilon(r, a, delta),
            order: a,
        })
        .min_by(|x, y| x.epsilon.total_cmp(&y.epsilon))
        .ok_or_else(|| param("empty order grid"))
}

pub fn epsilon(sigma: f64, plan: SamplingPlan, delta: f64) -> Result<DpConversion> {
    epsilon_with_orders(sigma, plan, delta, &default_orders())
}

pub fn epsilon_with_orders(sigma: f64, plan: SamplingPlan, delta: f64, orders: &[f64]) -> Result<DpConversion> {
    epsilon_with(sigma, plan, delta, orders, Conversion::Classic)
}

pub fn epsilon_with(
    sigma: f64,
    plan: SamplingPlan,
    delta: f64,
    orders: &[f64],
    conversion: Conversion,
) -> Result<DpConversion> {
    let curve = RdpCurve::compute(sigma, plan.q, orders)?.compose(plan.steps);
    rdp_to_dp_with(&curve, delta, conversion)
}

pub fn gdp_mu(sigma: f64, q: f64, steps: u64) -> f64 {
    q * (steps as f64).sqrt() * (1.0 / (sigma * sigma)).exp_m1().sqrt()
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `δ(ε)` of a `μ`-GDP mechanism.
pub fn gdp_delta(mu: f64, eps: f64) -> f64 {
    let a = std_normal_cdf(-eps / mu + mu / 2.0);
    let b = std_normal_cdf(-eps / mu - mu / 2.0);
    let tail = if b > 0.0 { (eps + b.ln()).exp() } else { 0.0 };
    a - tail
}

/// CLT estimate of `ε` for `steps` subsampled Gaussian steps. An estimate,
/// not an upper bound.
pub fn gdp_clt_epsilon(sigma: f64, q: f64, steps: u64, delta: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(param(format!("noise multiplier must be positive, got {sigma}")));
    }
    check_delta(delta)?;
    let mu = gdp_mu(sigma, q, steps);
    if mu == 0.0 {
        return Ok(0.0);
    }
    if !mu.is_finite() {
        return Err(Error::Range {
            lo: 0.0,
            hi: f64::INFINITY,
            reason: format!("mu overflows at sigma = {sigma}"),
        });
    }
    let (mut lo, mut hi) = (0.0, 100.0);
    if gdp_delta(mu, lo) <= delta {
        return Ok(0.0);
    }
    while gdp_delta(mu, hi) > delta {
        if hi >= 1e6 {
            return Err(Error::Range {
                lo,
                hi,
                reason: format!("delta({hi}) still exceeds {delta} at mu = {mu}"),
            });
        }
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-10 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if gdp_delta(mu, mid) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Result of [`solve_sigma`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaSolveResult {
    pub sigma: f64,
    pub achieved_epsilon: f64,
    pub bracket_width: f64,
    /// The lower bracket end already met the budget.
    pub hit_lower_bound: bool,
}

pub const SIGMA_BRACKET: (f64, f64) = (0.3, 50.0);
pub const SIGMA_TOL: f64 = 1e-4;
/// Bisection keeps going past [`SIGMA_TOL`] until the spent `ε` is this close
/// to the target.
pub const EPSILON_TOL: f64 = 1e-3;

/// Smallest noise multiplier in [`SIGMA_BRACKET`] whose `ε` does not exceed
/// the budget.
pub fn solve_sigma(budget: PrivacyBudget, plan: SamplingPlan) -> Result<SigmaSolveResult> {
    solve_sigma_with(budget, plan, Conversion::Classic)
}

pub fn solve_sigma_with(budget: PrivacyBudget, plan: SamplingPlan, conversion: Conversion) -> Result<SigmaSolveResult> {
    let orders = default_orders();
    let eps = |s: f64| epsilon_with(s, plan, budget.delta, &orders, conversion).map(|c| c.epsilon);
    let (mut lo, mut hi) = SIGMA_BRACKET;
    let mut eps_hi = eps(hi)?;
    if eps_hi > budget.epsilon {
        return Err(Error::Infeasible(format!(
            "epsilon {} unreachable with sigma <= {hi} (q = {}, steps = {}, delta = {}): spends {eps_hi}",
            budget.epsilon, plan.q, plan.steps, budget.delta
        )));
    }
    let mut eps_lo = eps(lo)?;
    if eps_lo <= budget.epsilon {
        return Ok(SigmaSolveResult {
            sigma: lo,
            achieved_epsilon: eps_lo,
            bracket_width: 0.0,
            hit_lower_bound: true,
        });
    }
    while hi - lo > SIGMA_TOL || (budget.epsilon - eps_hi > EPSILON_TOL && hi - lo > 1e-12) {
        let mid = 0.5 * (lo + hi);
        let e = eps(mid)?;
        if e > eps_lo * (1.0 + 1e-12) || e < eps_hi * (1.0 - 1e-12) {
            return Err(Error::Range {
                lo,
                hi,
                reason: format!("epsilon not monotone in sigma at {mid}"),
            });
        }
        if e <= budget.epsilon {
            hi = mid;
            eps_hi = e;
        } else {
            lo = mid;
            eps_lo = e;
        }
    }
    Ok(SigmaSolveResult {
        sigma: hi,
        achieved_epsilon: eps_hi,
        bracket_width: hi - lo,
        hit_lower_bound: false,
    })
}

/// `σ_eff = σ/q`.
pub fn effective_noise_multiplier(sigma: f64, q: f64) -> Result<f64> {
    if !(q > 0.0) {
        return Err(param(format!("sampling rate must be positive, got {q}")));
    }
    Ok(sigma / q)
}

/// Lower end of the sampling-rate range over which `σ ≈ c·√q` is fitted.
pub const SQRT_FIT_MIN_Q: f64 = 1.0 / 128.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqrtRuleRow {
    pub q: f64,
    pub steps: u64,
    pub sigma: f64,
    pub predicted: f64,
    /// `σ / (c·√q) − 1`: positive when the rule underestimates.
    pub residual: f64,
    pub in_fit_range: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqrtRuleTable {
    pub c: f64,
    pub rows: Vec<SqrtRuleRow>,
}

/// Calibrates `σ` per sampling rate (with `S = E·⌈1/q⌉`), fits `σ ≈ c·√q` on
/// `q ∈ [2⁻⁷, 1]` by least squares on `σ/√q`, and reports residuals.
pub fn sqrt_rule_check(budget: PrivacyBudget, epochs: u64, q_grid: &[f64]) -> Result<SqrtRuleTable> {
    let solved = q_grid
        .iter()
        .map(|&q| {
            let plan = SamplingPlan::from_rate(q, epochs)?;
            Ok((q, plan.steps, solve_sigma(budget, plan)?.sigma))
        })
        .collect::<Result<Vec<_>>>()?;
    let in_range = |q: f64| q >= SQRT_FIT_MIN_Q * (1.0 - 1e-12);
    let ratios: Vec<f64> = solved
        .iter()
        .filter(|(q, ..)| in_range(*q))
        .map(|(q, _, s)| s / q.sqrt())
        .collect();
    if ratios.is_empty() {
        return Err(param("q grid has no point in [2^-7, 1] to fit against"));
    }
    let c = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let rows = solved
        .into_iter()
        .map(|(q, steps, sigma)| {
            let predicted = c * q.sqrt();
            SqrtRuleRow {
                q,
                steps,
                sigma,
                predicted,
                residual: sigma / predicted - 1.0,
                in_fit_range: in_range(q),
            }
        })
        .collect();
    Ok(SqrtRuleTable { c, rows })
}

/// `2^-k` for `k = max_exp..=0`, ascending.
pub fn dyadic_grid(max_exp: i32) -> Vec<f64> {
    (0..=max_exp).rev().map(|k| 2f64.powi(-k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct summation in linear space; independent of the log-space excess form.
    fn direct_sum_rdp(sigma: f64, q: f64, alpha: u64) -> f64 {
        let mut log_binom = 0.0f64;
        let mut terms = Vec::new();
        for k in 0..=alpha {
            if k > 0 {
                log_binom += ((alpha - k + 1) as f64 / k as f64).ln();
            }
            let kf = k as f64;
            terms.push(
                log_binom + (alpha - k) as f64 * (1.0 - q).ln() + kf * q.ln() + kf * (kf - 1.0) / (2.0 * sigma * sigma),
            );
        }
        let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = terms.iter().map(|t| (t - top).exp()).sum();
        (top + total.ln()) / (alpha as f64 - 1.0)
    }

    #[test]
    fn full_batch_is_gaussian_closed_form() {
        assert_eq!(rdp_step(1.0, 1.0, 2.0).unwrap(), 1.0);
        for a in default_orders() {
            assert_eq!(rdp_step(0.7, 1.0, a).unwrap(), a / (2.0 * 0.7 * 0.7));
        }
    }

    #[test]
    fn vanishing_rate_leaks_nothing() {
        for a in [2.0, 8.0, 32.0] {
            assert!(rdp_step(1.0, 1e-8, a).unwrap() < 1e-6);
        }
    }

    #[test]
    fn matches_extended_precision_values() {
        // 50-digit summations of the binomial series.
        let cases = [(1.0, 0.01, 16, 3.087_850_783_696_244_6)];
        for (sigma, q, alpha, want) in cases {
            let got = rdp_step(sigma, q, alpha as f64).unwrap();
            assert!(((got - want) / want).abs() <= 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn matches_direct_summation() {
        for &(sigma, q) in &[(1.0, 0.01), (0.8, 0.05), (2.0, 0.3), (1.5, 0.001)] {
            for alpha in [2u64, 3, 5, 8, 16, 32] {
                let got = rdp_step(sigma, q, alpha as f64).unwrap();
                let want = direct_sum_rdp(sigma, q, alpha);
                assert!(
                    ((got - want) / want).abs() <= 1e-8,
                    "σ={sigma} q={q} α={alpha}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn fractional_orders_are_conservative() {
        let r = rdp_step(1.1, 0.02, 3.5).unwrap();
        assert_eq!(
            r,
            rdp_step(1.1, 0.02, 4.0).unwrap().max(rdp_step(1.1, 0.02, 3.0).unwrap())
        );
        assert_eq!(rdp_step(1.1, 0.02, 1.5).unwrap(), rdp_step(1.1, 0.02, 2.0).unwrap());
    }

    #[test]
    fn invalid_arguments() {
        assert!(rdp_step(0.0, 0.5, 2.0).is_err());
        assert!(rdp_step(1.0, 0.0, 2.0).is_err());
        assert!(rdp_step(1.0, 1.5, 2.0).is_err());
        assert!(rdp_step(1.0, 0.5, 1.0).is_err());
        let empty = RdpCurve {
            orders: vec![],
            values: vec![],
        };
        assert!(rdp_to_dp(&empty, 1e-5).is_err());
        assert!(effective_noise_multiplier(1.0, 0.0).is_err());
        assert!(PrivacyBudget::new(0.0, 1e-5).is_err());
        assert!(PrivacyBudget::new(1.0, 1.0).is_err());
        assert!(SamplingPlan::new(0.5, 0).is_err());
    }

    #[test]
    fn single_gaussian_step_conversion() {
        let plan = SamplingPlan::new(1.0, 1).unwrap();
        let integer: Vec<f64> = (2..=256).map(f64::from).collect();
        let c = epsilon_with_orders(1.0, plan, 1e-5, &integer).unwrap();
        assert!((c.epsilon - 5.3026).abs() < 1e-3);
        assert_eq!(c.order, 6.0);
        assert_eq!(epsilon(1.0, plan, 1e-5).unwrap(), c);
    }

    #[test]
    fn delta_limits_and_monotonicity() {
        let plan = SamplingPlan::new(0.05, 100).unwrap();
        let curve = RdpCurve::compute(1.2, 0.05, &default_orders()).unwrap().compose(100);
        let floor = curve.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let near_one = rdp_to_dp(&curve, 1.0 - 1e-12).unwrap().epsilon;
        assert!((near_one - floor).abs() < 1e-9);
        let e6 = epsilon(1.2, plan, 1e-6).unwrap().epsilon;
        let e5 = epsilon(1.2, plan, 1e-5).unwrap().epsilon;
        assert!(e6 > e5);
    }

    #[test]
    fn gdp_mu_and_limits() {
        assert!((gdp_mu(1.0, 1.0, 1) - 1.310_832_4).abs() < 1e-6);
        assert!(gdp_clt_epsilon(1e6, 0.1, 100, 1e-5).unwrap() < 1e-3);
        let e = gdp_clt_epsilon(1.0, 0.05, 200, 1e-5).unwrap();
        assert!((gdp_delta(gdp_mu(1.0, 0.05, 200), e) - 1e-5).abs() < 1e-9);
        assert!(matches!(
            gdp_clt_epsilon(0.05, 1.0, 10_000, 1e-10),
            Err(Error::Range { .. })
        ));
        // Past the initial bracket.
        let big = gdp_clt_epsilon(0.5, 0.064, 10_000, 1e-5).unwrap();
        let mu = gdp_mu(0.5, 0.064, 10_000);
        assert!(big > 100.0 && (gdp_delta(mu, big) - 1e-5).abs() < 1e-7, "{big}");
    }

    #[test]
    fn clt_underestimates_rdp() {
        for &(sigma, q, steps) in &[
            (0.8, 0.02, 400u64),
            (1.2, 0.05, 200),
            (2.0, 0.1, 1000),
            (0.75, 0.0243, 420),
        ] {
            let plan = SamplingPlan::new(q, steps).unwrap();
            let rdp = epsilon(sigma, plan, 1e-5).unwrap().epsilon;
            assert!(gdp_clt_epsilon(sigma, q, steps, 1e-5).unwrap() < rdp);
        }
    }

    #[test]
    fn solve_sigma_reference_value() {
        // Reference accountant: 50-digit binomial sums, same order grid and conversion.
        let plan = SamplingPlan::new(1024.0 / 42061.0, 410).unwrap();
        let budget = PrivacyBudget::new(8.0, 1.0 / (2.0 * 42061.0)).unwrap();
        let r = solve_sigma(budget, plan).unwrap();
        assert!((r.sigma - 0.750_809_3).abs() < 1e-3, "{}", r.sigma);
        assert!(r.achieved_epsilon <= 8.0 && r.achieved_epsilon >= 8.0 - 0.01);
    }

    #[test]
    fn improved_conversion_reference_value() {
        // Same reference accountant with the improved conversion.
        let plan = SamplingPlan::from_dataset(42061, 1024, 10).unwrap();
        let budget = PrivacyBudget::with_auto_delta(8.0, 42061).unwrap();
        let r = solve_sigma_with(budget, plan, Conversion::Improved).unwrap();
        assert!((r.sigma - 0.714_060).abs() < 1e-3, "{}", r.sigma);
        let gdp = gdp_clt_epsilon(r.sigma, plan.q, plan.steps, budget.delta).unwrap();
        assert!((gdp - 5.5397).abs() < 0.01, "{gdp}");
    }

    #[test]
    fn improved_conversion_never_exceeds_classic() {
        for &(sigma, q, steps) in &[(0.7, 0.02, 400u64), (1.0, 1.0, 1), (3.0, 0.001, 10_000)] {
            let plan = SamplingPlan::new(q, steps).unwrap();
            let orders = default_orders();
            let c = epsilon_with(sigma, plan, 1e-5, &orders, Conversion::Classic).unwrap();
            let i = epsilon_with(sigma, plan, 1e-5, &orders, Conversion::Improved).unwrap();
            assert!(i.epsilon <= c.epsilon);
        }
        assert_eq!("improved".parse::<Conversion>().unwrap(), Conversion::Improved);
        assert!("tight".parse::<Conversion>().is_err());
    }

    #[test]
    fn solve_sigma_monotone_in_budget() {
        let plan = SamplingPlan::from_dataset(42061, 1024, 10).unwrap();
        assert_eq!(plan.steps, 420);
        let s3 = solve_sigma(PrivacyBudget::with_auto_delta(3.0, 42061).unwrap(), plan).unwrap();
        let s8 = solve_sigma(PrivacyBudget::with_auto_delta(8.0, 42061).unwrap(), plan).unwrap();
        assert!(s3.sigma > s8.sigma);
    }

    #[test]
    fn solve_sigma_bracket_edges() {
        let plan = SamplingPlan::new(0.001, 10).unwrap();
        let easy = solve_sigma(PrivacyBudget::new(50.0, 1e-5).unwrap(), plan).unwrap();
        assert!(easy.hit_lower_bound);
        assert_eq!(easy.sigma, SIGMA_BRACKET.0);
        let plan = SamplingPlan::new(1.0, 100_000).unwrap();
        assert!(matches!(
            solve_sigma(PrivacyBudget::new(0.01, 1e-10).unwrap(), plan),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn effective_noise_cases() {
        assert_eq!(effective_noise_multiplier(1.0, 0.01).unwrap(), 100.0);
        assert_eq!(effective_noise_multiplier(1.7, 1.0).unwrap(), 1.7);
    }

    #[test]
    fn effective_noise_decreases_with_rate_at_fixed_steps() {
        let budget = PrivacyBudget::new(3.0, 1e-5).unwrap();
        let mut last = f64::INFINITY;
        for q in [0.005, 0.01, 0.02, 0.04] {
            let s = solve_sigma(budget, SamplingPlan::new(q, 200).unwrap()).unwrap().sigma;
            let eff = effective_noise_multiplier(s, q).unwrap();
            assert!(eff < last);
            last = eff;
        }
    }

    #[test]
    fn plan_derivations() {
        let p = SamplingPlan::from_dataset(100, 30, 3).unwrap();
        assert_eq!(p.steps, 12);
        assert!((p.q - 0.3).abs() < 1e-15);
        assert_eq!(SamplingPlan::from_rate(1.0 / 128.0, 50).unwrap().steps, 6400);
        assert_eq!(steps_per_epoch(0.3), 4);
        assert!(SamplingPlan::from_dataset(10, 11, 1).is_err());
    }

    #[test]
    fn more_epochs_need_more_noise() {
        let budget = PrivacyBudget::new(3.0, 1e-5).unwrap();
        let a = solve_sigma(budget, SamplingPlan::from_rate(0.01, 5).unwrap())
            .unwrap()
            .sigma;
        let b = solve_sigma(budget, SamplingPlan::from_rate(0.01, 10).unwrap())
            .unwrap()
            .sigma;
        assert!(b > a);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]
            #[test]
            fn rdp_monotone(sigma in 0.4f64..5.0, q in 0.001f64..0.9, i in 0usize..200) {
                let orders = default_orders();
                let a = orders[i];
                let b = orders[i + 1];
                let r = rdp_step(sigma, q, a).unwrap();
                prop_assert!(r >= 0.0);
                prop_assert!(rdp_step(sigma, q, b).unwrap() >= r * (1.0 - 1e-12));
                prop_assert!(rdp_step(sigma, (q * 1.1).min(1.0), a).unwrap() >= r * (1.0 - 1e-12));
                prop_assert!(rdp_step(sigma * 1.1, q, a).unwrap() <= r * (1.0 + 1e-12));
            }

            #[test]
            fn epsilon_monotone_in_sigma_and_steps(sigma in 0.5f64..4.0, q in 0.001f64..0.5, steps in 1u64..2000) {
                let p = SamplingPlan::new(q, steps).unwrap();
                let e = epsilon(sigma, p, 1e-5).unwrap().epsilon;
                prop_assert!(epsilon(sigma * 1.05, p, 1e-5).unwrap().epsilon <= e + 1e-12);
                let longer = SamplingPlan::new(q, steps + 10).unwrap();
                prop_assert!(epsilon(sigma, longer, 1e-5).unwrap().epsilon >= e - 1e-12);
            }
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(20))]
            #[test]
            fn solve_round_trip(q in 0.002f64..0.5, steps in 10u64..3000, eps in 0.5f64..10.0) {
                let plan = SamplingPlan::new(q, steps).unwrap();
                let budget = PrivacyBudget::new(eps, 1e-5).unwrap();
                if let Ok(r) = solve_sigma(budget, plan) {
                    let back = epsilon(r.sigma, plan, 1e-5).unwrap().epsilon;
                    prop_assert!(back <= eps);
                    if !r.hit_lower_bound {
                        prop_assert!(back >= eps - 0.01);
                    }
                }
            }
        }
    }
}

//! Black–Scholes pricing in log-moneyness, implied volatility inversion and
//! Monte Carlo estimators of the implied smile and its skew.
//!
//! Conventions: `S0 = 1`, zero rates, `k = log(K/S0)`, and total volatility
//! `v = √t·σ`. Out-of-the-money options are priced from the batch: puts for
//! `k < 0`, calls for `k ≥ 0`.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};
use crate::rbergomi::PathBatch;
use crate::stats::{mean, Linearized};

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `d2(k, v) = -k/v - v/2`.
pub fn d2(k: f64, v: f64) -> f64 {
    -k / v - 0.5 * v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptionKind {
    Call,
    Put,
}

impl OptionKind {
    /// Out-of-the-money side for log-moneyness `k`.
    pub fn out_of_the_money(k: f64) -> Self {
        if k < 0.0 {
            OptionKind::Put
        } else {
            OptionKind::Call
        }
    }

    pub fn payoff(self, x: f64, k: f64) -> f64 {
        match self {
            OptionKind::Call => (x.exp() - k.exp()).max(0.0),
            OptionKind::Put => (k.exp() - x.exp()).max(0.0),
        }
    }

    fn bounds(self, k: f64) -> (f64, f64) {
        match self {
            OptionKind::Call => ((1.0 - k.exp()).max(0.0), 1.0),
            OptionKind::Put => ((k.exp() - 1.0).max(0.0), k.exp()),
        }
    }
}

/// Call price `N(d1) - e^k N(d2)`; intrinsic value at `v = 0`.
pub fn bs_call(k: f64, v: f64) -> f64 {
    if v <= 0.0 {
        return (1.0 - k.exp()).max(0.0);
    }
    let d2 = d2(k, v);
    norm_cdf(d2 + v) - k.exp() * norm_cdf(d2)
}

/// Put price `e^k N(-d2) - N(-d1)`.
pub fn bs_put(k: f64, v: f64) -> f64 {
    if v <= 0.0 {
        return (k.exp() - 1.0).max(0.0);
    }
    let d2 = d2(k, v);
    k.exp() * norm_cdf(-d2) - norm_cdf(-d2 - v)
}

pub fn bs_price(kind: OptionKind, k: f64, v: f64) -> f64 {
    match kind {
        OptionKind::Call => bs_call(k, v),
        OptionKind::Put => bs_put(k, v),
    }
}

/// `∂C/∂v = φ(d1) = e^k φ(d2)`, identical for puts.
pub fn bs_vega_total(k: f64, v: f64) -> f64 {
    norm_pdf(d2(k, v) + v)
}

const SIGMA_LO: f64 = 1e-6;
const SIGMA_HI: f64 = 5.0;
const PRICE_TOL: f64 = 1e-12;
const MAX_ITER: usize = 200;

/// Implied volatility from a call price.
pub fn implied_vol(price: f64, k: f64, t: f64) -> Result<f64> {
    implied_vol_for(OptionKind::Call, price, k, t)
}

/// Newton search on `σ` safeguarded by bisection on `[1e-6, 5]`.
pub fn implied_vol_for(kind: OptionKind, price: f64, k: f64, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("maturity must be positive, got {t}")));
    }
    let (lower, upper) = kind.bounds(k);
    if !(price > lower && price < upper) {
        return Err(Error::PriceOutOfBand { price, k, lower, upper });
    }
    let st = t.sqrt();
    // Newton on the log of the time value: far from the money the price is
    // tiny and nearly exponential in 1/σ, where plain Newton crawls.
    let target = price - lower;
    let log_target = target.ln();
    let time_value = |s: f64| bs_price(kind, k, st * s) - lower;
    let mut sigma = if k.abs() < 1e-6 {
        price * (2.0 * PI / t).sqrt()
    } else {
        0.3
    };
    if !(sigma > SIGMA_LO && sigma < SIGMA_HI) {
        sigma = 0.3;
    }
    let (mut lo, mut hi) = (SIGMA_LO, SIGMA_HI);
    for _ in 0..MAX_ITER {
        let tv = time_value(sigma);
        if tv == target {
            return Ok(sigma);
        }
        if tv > target {
            hi = sigma;
        } else {
            lo = sigma;
        }
        let vega = st * bs_vega_total(k, st * sigma);
        let newton = if tv > 0.0 { sigma - (tv.ln() - log_target) * tv / vega } else { f64::NAN };
        let next = if vega > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let step = (next - sigma).abs();
        sigma = next;
        if step <= 1e-15 * sigma.max(1e-3) || hi - lo <= 1e-15 * sigma {
            break;
        }
    }
    let miss = (time_value(sigma) - target).abs();
    if miss <= PRICE_TOL.min(1e-10 * target) || miss <= 8.0 * f64::EPSILON * price.max(target) {
        Ok(sigma)
    } else {
        Err(Error::ImpliedVolNoConvergence(MAX_ITER))
    }
}

/// Implied volatility at one `(t, k)` with the half-width of its 95% interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpliedPoint {
    pub t: f64,
    pub k: f64,
    pub sigma_bs: f64,
    pub ci: f64,
}

/// A skew estimate at maturity `t`, either at log-moneyness `k` or for the
/// rescaled finite difference at `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewEstimate {
    pub t: f64,
    pub at: f64,
    pub value: f64,
    pub ci: f64,
}

impl SkewEstimate {
    pub(crate) fn from_linearized(t: f64, at: f64, l: &Linearized) -> Self {
        Self { t, at, value: l.value, ci: l.ci95() }
    }
}

/// Implied volatility estimated from the out-of-the-money option on `kind`'s side.
pub fn implied_vol_linearized(batch: &PathBatch, k: f64, kind: OptionKind) -> Result<Linearized> {
    let t = batch.maturity();
    let payoffs: Vec<f64> = batch.samples.iter().map(|s| kind.payoff(s.x_t, k)).collect();
    let price = mean(&payoffs);
    let sigma = implied_vol_for(kind, price, k, t)?;
    let dsigma_dprice = 1.0 / (t.sqrt() * bs_vega_total(k, t.sqrt() * sigma));
    let infl = payoffs.iter().map(|p| (p - price) * dsigma_dprice).collect();
    Ok(Linearized::new(sigma, infl))
}

pub fn implied_point(batch: &PathBatch, k: f64) -> Result<ImpliedPoint> {
    implied_point_with(batch, k, OptionKind::out_of_the_money(k))
}

pub fn implied_point_with(batch: &PathBatch, k: f64, kind: OptionKind) -> Result<ImpliedPoint> {
    let l = implied_vol_linearized(batch, k, kind)?;
    Ok(ImpliedPoint { t: batch.maturity(), k, sigma_bs: l.value, ci: l.ci95() })
}

pub fn implied_smile(batch: &PathBatch, strikes: &[f64]) -> Result<Vec<ImpliedPoint>> {
    strikes.iter().map(|&k| implied_point(batch, k)).collect()
}

const VEGA_FLOOR: f64 = 1e-12;

/// Skew `(N(d2) - P(X ≥ k)) / (√t φ(d2))` evaluated at `v = √t σ`.
///
/// Returns the value and its partial derivatives with respect to `σ` and to
/// the exercise probability.
pub fn skew_from_probability(k: f64, t: f64, sigma: f64, prob: f64) -> Result<(f64, f64, f64)> {
    let st = t.sqrt();
    let v = st * sigma;
    let d = d2(k, v);
    let phi = norm_pdf(d);
    if st * phi < VEGA_FLOOR {
        return Err(Error::VegaFloor(k));
    }
    let gap = norm_cdf(d) - prob;
    let skew = gap / (st * phi);
    let dg = 1.0 + d * gap / phi;
    let d_sigma = dg * (k / (v * v) - 0.5);
    let d_prob = -1.0 / (st * phi);
    Ok((skew, d_sigma, d_prob))
}

pub fn implied_skew_linearized(batch: &PathBatch, k: f64) -> Result<Linearized> {
    let t = batch.maturity();
    let sigma = implied_vol_linearized(batch, k, OptionKind::out_of_the_money(k))?;
    let exercise: Vec<f64> = batch
        .samples
        .iter()
        .map(|s| if s.x_t >= k { 1.0 } else { 0.0 })
        .collect();
    let prob = Linearized::from_mean(&exercise);
    let (skew, ds, dp) = skew_from_probability(k, t, sigma.value, prob.value)?;
    Ok(Linearized::combine(&[(ds, &sigma), (dp, &prob)], skew))
}

/// `∂_k σ_BS(t, k)` without finite differences.
pub fn implied_skew(batch: &PathBatch, k: f64) -> Result<SkewEstimate> {
    let l = implied_skew_linearized(batch, k)?;
    Ok(SkewEstimate::from_linearized(batch.maturity(), k, &l))
}

pub fn fd_skew_bs_linearized(batch: &PathBatch, y: f64) -> Result<Linearized> {
    if y == 0.0 {
        return Err(Error::InvalidParameter("finite-difference skew needs y != 0".into()));
    }
    let k = y * batch.strike_scale();
    let up = implied_vol_linearized(batch, k, OptionKind::out_of_the_money(k))?;
    let down = implied_vol_linearized(batch, -k, OptionKind::out_of_the_money(-k))?;
    let c = 1.0 / (2.0 * k);
    Ok(Linearized::combine(&[(c, &up), (-c, &down)], c * (up.value - down.value)))
}

/// `[σ_BS(t, y t^{1/2-H}) - σ_BS(t, -y t^{1/2-H})] / (2 y t^{1/2-H})`.
pub fn fd_skew_bs(batch: &PathBatch, y: f64) -> Result<SkewEstimate> {
    let l = fd_skew_bs_linearized(batch, y)?;
    Ok(SkewEstimate::from_linearized(batch.maturity(), y, &l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn call_prices() {
        // 2N(0.1) - 1, high-precision value
        assert_abs_diff_eq!(bs_call(0.0, 0.2), 0.079_655_674_554_057_96, epsilon = 1e-15);
        assert_eq!(bs_call(0.0, 0.0), 0.0);
        assert_eq!(bs_call(-0.1, 0.0), 1.0 - (-0.1f64).exp());
        assert!((bs_call(0.1, 60.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn put_call_parity() {
        for &k in &[-0.3f64, 0.0, 0.2] {
            for &v in &[0.05, 0.3, 1.0] {
                assert_abs_diff_eq!(bs_call(k, v) - bs_put(k, v), 1.0 - k.exp(), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn option_value_increasing_in_total_vol() {
        // In-the-money calls are compared through their put (time value) to
        // stay above the resolution of the intrinsic value.
        for i in 0..11 {
            let k = -0.5 + 0.1 * i as f64;
            let kind = OptionKind::out_of_the_money(k);
            let mut prev = bs_price(kind, k, 0.05);
            assert!(prev > 0.0);
            for j in 1..100 {
                let v = 0.05 + 0.01 * j as f64;
                let p = bs_price(kind, k, v);
                assert!(p > prev, "k={k} v={v}");
                prev = p;
            }
        }
    }

    #[test]
    fn implied_vol_round_trip_on_grid() {
        for i in 0..11 {
            let k = -0.5 + 0.1 * i as f64;
            let kind = OptionKind::out_of_the_money(k);
            for j in 0..=20 {
                let v = 0.05 + 0.0475 * j as f64;
                let t: f64 = 0.25;
                let sigma = v / t.sqrt();
                let p = bs_price(kind, k, v);
                let got = implied_vol_for(kind, p, k, t).unwrap();
                assert!((got - sigma).abs() < 1e-10, "k={k} v={v} got={got}");
            }
        }
    }

    #[test]
    fn implied_vol_round_trip() {
        let t: f64 = 0.7;
        let st = t.sqrt();
        let sigma = 0.2;
        for &k in &[-0.3, -0.05, 0.0, 0.1, 0.25] {
            let p = bs_call(k, sigma * st);
            assert_abs_diff_eq!(implied_vol(p, k, t).unwrap(), sigma, epsilon = 1e-10);
        }
    }

    #[test]
    fn boundary_prices_are_rejected() {
        let k: f64 = -0.1;
        let intrinsic = 1.0 - k.exp();
        assert!(matches!(implied_vol(intrinsic, k, 1.0), Err(Error::PriceOutOfBand { .. })));
        assert!(matches!(implied_vol(1.0, k, 1.0), Err(Error::PriceOutOfBand { .. })));
        assert!(matches!(implied_vol_for(OptionKind::Put, 0.0, 0.1, 1.0), Err(Error::PriceOutOfBand { .. })));
    }

    #[test]
    fn skew_vanishes_on_exact_black_scholes_inputs() {
        for &k in &[-0.2, 0.0, 0.15] {
            for &t in &[0.05f64, 0.5] {
                let sigma = 0.235;
                let prob = norm_cdf(d2(k, t.sqrt() * sigma));
                let (s, _, _) = skew_from_probability(k, t, sigma, prob).unwrap();
                assert!(s.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn skew_partials_match_finite_differences() {
        let (k, t, sigma, prob) = (0.05, 0.2, 0.25, 0.4);
        let (_, ds, dp) = skew_from_probability(k, t, sigma, prob).unwrap();
        let h = 1e-6;
        let f = |s: f64, p: f64| skew_from_probability(k, t, s, p).unwrap().0;
        assert_abs_diff_eq!(ds, (f(sigma + h, prob) - f(sigma - h, prob)) / (2.0 * h), epsilon = 1e-6);
        assert_abs_diff_eq!(dp, (f(sigma, prob + h) - f(sigma, prob - h)) / (2.0 * h), epsilon = 1e-6);
    }

    #[test]
    fn deep_wing_hits_vega_floor() {
        assert!(matches!(skew_from_probability(3.0, 0.01, 0.2, 0.0), Err(Error::VegaFloor(_))));
    }
}

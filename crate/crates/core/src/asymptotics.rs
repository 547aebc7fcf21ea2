//! Short-maturity comparisons between implied and local volatility: the
//! `1/(H+3/2)` skew ratio, the harmonic-mean formula and its failure, a Dupire
//! cross-check, the large-deviations diagnostic and the local-vol extrapolation.

use crate::black_scholes::{
    fd_skew_bs, implied_skew, implied_vol_linearized, OptionKind, SkewEstimate,
};
use crate::error::{Error, Result};
use crate::fbm::Hurst;
use crate::markov_projection::{fd_skew_loc, local_skew, local_vol_ratio, local_vol_ratio_linearized};
use crate::rate_function::RateSolution;
use crate::rbergomi::PathBatch;
use crate::stats::{Linearized, Z95};

/// Short-maturity limit of the implied-to-local skew ratio.
pub fn skew_ratio_target(hurst: Hurst) -> f64 {
    1.0 / (hurst.value() + 1.5)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SkewMethod {
    /// Analytic derivatives at `k = 0`.
    AtTheMoney,
    /// Rescaled symmetric differences at `±y t^{1/2-H}`.
    FiniteDifference(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewRatioPoint {
    pub t: f64,
    pub skew_bs: SkewEstimate,
    pub skew_loc: SkewEstimate,
    pub ratio: f64,
    /// Approximate: the two skews are treated as independent.
    pub ci: f64,
    pub target: f64,
    /// False when the local-skew confidence interval, widened to the
    /// round-off floor, contains zero.
    pub defined: bool,
}

/// Skews smaller than this are indistinguishable from cancellation error.
const SKEW_ROUNDOFF: f64 = 1e-12;

pub fn skew_ratio_point(batch: &PathBatch, method: SkewMethod) -> Result<SkewRatioPoint> {
    let (bs, loc) = match method {
        SkewMethod::AtTheMoney => (implied_skew(batch, 0.0)?, local_skew(batch, 0.0)?),
        SkewMethod::FiniteDifference(y) => (fd_skew_bs(batch, y)?, fd_skew_loc(batch, y)?),
    };
    let ratio = bs.value / loc.value;
    let se_bs = bs.ci / Z95;
    let se_loc = loc.ci / Z95;
    let se = ((se_bs / loc.value).powi(2) + (ratio * se_loc / loc.value).powi(2)).sqrt();
    Ok(SkewRatioPoint {
        t: batch.maturity(),
        skew_bs: bs,
        skew_loc: loc,
        ratio,
        ci: Z95 * se,
        target: skew_ratio_target(batch.params.hurst()),
        defined: loc.value.abs() > loc.ci.max(SKEW_ROUNDOFF),
    })
}

pub fn skew_ratio_curve(batches: &[PathBatch], method: SkewMethod) -> Result<Vec<SkewRatioPoint>> {
    batches.iter().map(|b| skew_ratio_point(b, method)).collect()
}

/// Default strike spacing of the harmonic-mean quadrature.
pub const HARMONIC_STEP: f64 = 0.01;

/// Equispaced grid from 0 to `k` with spacing at most `step`.
pub fn harmonic_grid(k: f64, step: f64) -> Vec<f64> {
    let n = ((k.abs() / step).ceil() as usize).max(1);
    (0..=n).map(|i| k * i as f64 / n as f64).collect()
}

/// `k / ∫₀ᵏ dy/σ_loc(y)` with `1/σ_loc` linear between the grid points.
/// `ks` runs from 0 to `k`; a single point gives `σ_loc(0)`.
pub fn harmonic_mean_on_grid(ks: &[f64], sigmas: &[f64]) -> Result<f64> {
    if ks.len() != sigmas.len() {
        return Err(Error::DimensionMismatch { expected: ks.len(), found: sigmas.len() });
    }
    if let Some(&s) = sigmas.iter().find(|&&s| !(s > 0.0)) {
        return Err(Error::Domain(format!("local volatility must be positive, got {s}")));
    }
    if ks.len() == 1 || ks[ks.len() - 1] == ks[0] {
        return Ok(sigmas[0]);
    }
    let mut integral = 0.0;
    for i in 1..ks.len() {
        integral += 0.5 * (ks[i] - ks[i - 1]) * (1.0 / sigmas[i] + 1.0 / sigmas[i - 1]);
    }
    Ok((ks[ks.len() - 1] - ks[0]) / integral)
}

/// Harmonic mean of `sigma_loc` on `[0, k]` with `steps` trapezoid panels.
pub fn harmonic_mean<F: Fn(f64) -> Result<f64>>(sigma_loc: F, k: f64, steps: usize) -> Result<f64> {
    if k == 0.0 {
        return sigma_loc(0.0);
    }
    let steps = steps.max(1);
    let ks: Vec<f64> = (0..=steps).map(|i| k * i as f64 / steps as f64).collect();
    let sigmas = ks.iter().map(|&y| sigma_loc(y)).collect::<Result<Vec<_>>>()?;
    harmonic_mean_on_grid(&ks, &sigmas)
}

/// Harmonic mean of the ratio-estimated local volatility, with its influence.
pub fn harmonic_mean_linearized(batch: &PathBatch, k: f64, step: f64) -> Result<Linearized> {
    let ks = harmonic_grid(k, step);
    let locs = ks
        .iter()
        .map(|&y| local_vol_ratio_linearized(batch, y))
        .collect::<Result<Vec<_>>>()?;
    let sigmas: Vec<f64> = locs.iter().map(|l| l.value).collect();
    let h = harmonic_mean_on_grid(&ks, &sigmas)?;
    if ks.len() == 1 || k == 0.0 {
        return Ok(locs[0].clone());
    }
    // H = 1 / Σ cᵢ/σᵢ with trapezoid weights cᵢ normalized to sum to one.
    let n = ks.len() - 1;
    let coeffs: Vec<f64> = (0..=n)
        .map(|i| {
            let c = if i == 0 || i == n { 0.5 / n as f64 } else { 1.0 / n as f64 };
            h * h * c / (sigmas[i] * sigmas[i])
        })
        .collect();
    let terms: Vec<(f64, &Linearized)> = coeffs.iter().copied().zip(locs.iter()).collect();
    Ok(Linearized::combine(&terms, h))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicPoint {
    pub t: f64,
    pub k: f64,
    pub sigma_bs: f64,
    pub harmonic: f64,
    /// `σ_BS / H`.
    pub ratio: f64,
    /// Joint delta-method interval of the ratio.
    pub ci: f64,
}

pub fn harmonic_point(batch: &PathBatch, k: f64) -> Result<HarmonicPoint> {
    let bs = implied_vol_linearized(batch, k, OptionKind::out_of_the_money(k))?;
    let hm = harmonic_mean_linearized(batch, k, HARMONIC_STEP)?;
    let ratio = bs.value / hm.value;
    let joint = Linearized::combine(
        &[(1.0 / hm.value, &bs), (-ratio / hm.value, &hm)],
        ratio,
    );
    Ok(HarmonicPoint {
        t: batch.maturity(),
        k,
        sigma_bs: bs.value,
        harmonic: hm.value,
        ratio,
        ci: joint.ci95(),
    })
}

/// `σ_BS / H` at every strike for every batch, maturity-major.
pub fn harmonic_failure_report(batches: &[PathBatch], strikes: &[f64]) -> Result<Vec<HarmonicPoint>> {
    let mut out = Vec::with_capacity(batches.len() * strikes.len());
    for b in batches {
        for &k in strikes {
            out.push(harmonic_point(b, k)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DupireOptions {
    /// Time step as a fraction of `t`.
    pub dt_fraction: f64,
    pub dk: f64,
}

impl Default for DupireOptions {
    fn default() -> Self {
        Self { dt_fraction: 0.1, dk: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DupirePoint {
    pub t: f64,
    pub k: f64,
    /// `None` when the right-hand side of Dupire's formula is not positive.
    pub sigma_loc: Option<f64>,
}

/// Local volatility from an implied surface by Dupire's formula,
///
/// ```text
/// σ²_loc = (σ + 2tσ_t) / (tσ_kk - ¼t²σσ_k² + (1 - kσ_k/σ)²/σ),
/// ```
///
/// with central differences in `t` and `k`.
pub fn dupire_local_vol<F>(sigma_bs: F, t: f64, k: f64, opts: &DupireOptions) -> Result<DupirePoint>
where
    F: Fn(f64, f64) -> Result<f64>,
{
    let dt = opts.dt_fraction * t;
    let dk = opts.dk;
    if !(dt > 0.0 && dt < t && dk > 0.0) {
        return Err(Error::InvalidParameter(format!("invalid Dupire steps dt={dt}, dk={dk}")));
    }
    let s = sigma_bs(t, k)?;
    let s_t = (sigma_bs(t + dt, k)? - sigma_bs(t - dt, k)?) / (2.0 * dt);
    let up = sigma_bs(t, k + dk)?;
    let down = sigma_bs(t, k - dk)?;
    let s_k = (up - down) / (2.0 * dk);
    let s_kk = (up - 2.0 * s + down) / (dk * dk);
    let num = s + 2.0 * t * s_t;
    let den = t * s_kk - 0.25 * t * t * s * s_k * s_k + (1.0 - k * s_k / s).powi(2) / s;
    let v = num / den;
    let sigma_loc = (v.is_finite() && v > 0.0).then(|| v.sqrt());
    Ok(DupirePoint { t, k, sigma_loc })
}

/// Implied volatility surface read from batches simulated at the exact
/// maturities queried, always inverted from options of one `kind`: Monte Carlo
/// prices satisfy put-call parity only up to the sampling error of `E[e^X]`,
/// which would otherwise show up as a kink where the side switches.
pub fn batch_surface(batches: &[PathBatch], kind: OptionKind) -> impl Fn(f64, f64) -> Result<f64> + '_ {
    move |t, k| {
        let b = batches
            .iter()
            .find(|b| (b.maturity() - t).abs() <= 1e-12 * t.max(1.0))
            .ok_or_else(|| Error::InvalidParameter(format!("no batch at maturity {t}")))?;
        Ok(implied_vol_linearized(b, k, kind)?.value)
    }
}

/// Dupire estimate and ratio estimate at the same point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DupireComparison {
    pub dupire: DupirePoint,
    pub ratio: f64,
    pub ratio_ci: f64,
}

/// Compares Dupire on the batch surface with the ratio estimator on the batch at `t`.
pub fn dupire_check(batches: &[PathBatch], t: f64, k: f64, opts: &DupireOptions) -> Result<DupireComparison> {
    let kind = OptionKind::out_of_the_money(k);
    let dupire = dupire_local_vol(batch_surface(batches, kind), t, k, opts)?;
    let at = batches
        .iter()
        .find(|b| (b.maturity() - t).abs() <= 1e-12 * t.max(1.0))
        .ok_or_else(|| Error::InvalidParameter(format!("no batch at maturity {t}")))?;
    let r = local_vol_ratio(at, k)?;
    Ok(DupireComparison { dupire, ratio: r.sigma_loc, ratio_ci: r.ci })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdpPoint {
    pub t: f64,
    pub y: f64,
    /// `-t^{2H} log P̂(X_t ≥ y t^{1/2-H})`.
    pub value: f64,
    pub tail_count: usize,
}

/// `None` when no sample reaches the threshold.
pub fn ldp_point(batch: &PathBatch, y: f64) -> Option<LdpPoint> {
    let t = batch.maturity();
    let h = batch.params.hurst().value();
    let threshold = y * batch.strike_scale();
    let count = batch.samples.iter().filter(|s| s.x_t >= threshold).count();
    if count == 0 {
        return None;
    }
    let p = count as f64 / batch.len() as f64;
    Some(LdpPoint { t, y, value: -t.powf(2.0 * h) * p.ln(), tail_count: count })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdpReport {
    pub points: Vec<LdpPoint>,
    /// Maturities dropped for an empty tail.
    pub dropped: Vec<f64>,
    /// Reference `Λ(y)` when supplied.
    pub lambda: Option<f64>,
}

pub fn ldp_diagnostic(batches: &[PathBatch], y: f64, lambda: Option<f64>) -> LdpReport {
    let mut points = Vec::new();
    let mut dropped = Vec::new();
    for b in batches {
        match ldp_point(b, y) {
            Some(p) => points.push(p),
            None => dropped.push(b.maturity()),
        }
    }
    LdpReport { points, dropped, lambda }
}

/// `Σ(k / T^{1/2-H})`, linearly interpolated on the computed grid.
pub fn extrapolate_local_vol(solutions: &[RateSolution], hurst: Hurst, t: f64, k: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("maturity must be positive, got {t}")));
    }
    if solutions.is_empty() {
        return Err(Error::InvalidParameter("empty limiting smile".into()));
    }
    let y = k / t.powf(0.5 - hurst.value());
    let mut pts: Vec<(f64, f64)> = solutions.iter().map(|s| (s.y, s.sigma_limit)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (lower, upper) = (pts[0].0, pts[pts.len() - 1].0);
    if !(y >= lower && y <= upper) {
        return Err(Error::OutOfRange { y, lower, upper });
    }
    let i = pts.partition_point(|p| p.0 < y);
    if pts[i].0 == y {
        return Ok(pts[i].1);
    }
    let (y0, s0) = pts[i - 1];
    let (y1, s1) = pts[i];
    Ok(s0 + (s1 - s0) * (y - y0) / (y1 - y0))
}

/// One point of the rescaled local-vol smile against its limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescaledPoint {
    pub t: f64,
    pub y: f64,
    pub sigma_loc: f64,
    pub ci: f64,
    pub sigma_limit: f64,
}

/// `σ̂_loc(t, y t^{1/2-H})` next to `Σ(y)` for every solved `y`.
pub fn rescaled_smile(batch: &PathBatch, solutions: &[RateSolution]) -> Result<Vec<RescaledPoint>> {
    let scale = batch.strike_scale();
    solutions
        .iter()
        .map(|s| {
            let p = local_vol_ratio(batch, s.y * scale)?;
            Ok(RescaledPoint { t: batch.maturity(), y: s.y, sigma_loc: p.sigma_loc, ci: p.ci, sigma_limit: s.sigma_limit })
        })
        .collect()
}

/// `max_y |σ̂_loc(t, y t^{1/2-H}) - Σ(y)|` over the solved grid.
pub fn rescaled_smile_error(batch: &PathBatch, solutions: &[RateSolution]) -> Result<f64> {
    Ok(rescaled_smile(batch, solutions)?
        .iter()
        .map(|p| (p.sigma_loc - p.sigma_limit).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn targets_are_exact() {
        for (h, want) in [(0.1, 0.625), (0.3, 5.0 / 9.0), (0.5, 0.5)] {
            assert!((skew_ratio_target(Hurst::new(h).unwrap()) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn harmonic_mean_of_constant() {
        let h = harmonic_mean(|_| Ok(0.237), -0.2, 20).unwrap();
        assert!((h - 0.237).abs() < 1e-14);
        assert_eq!(harmonic_mean(|y| Ok(0.2 + y), 0.0, 10).unwrap(), 0.2);
    }

    #[test]
    fn harmonic_mean_of_linear_function() {
        // 0.1 / ∫₀^0.1 dy / (0.2 + 0.1 y) = 0.01 / ln(0.21 / 0.2)
        let want = 0.01 / (0.21f64 / 0.2).ln();
        let got = harmonic_mean(|y| Ok(0.2 + 0.1 * y), 0.1, 2000).unwrap();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        assert!((want - 0.2049593).abs() < 1e-7);
    }

    #[test]
    fn harmonic_mean_rejects_non_positive_values() {
        assert!(matches!(harmonic_mean(|y| Ok(y), 0.1, 4), Err(Error::Domain(_))));
    }

    #[test]
    fn dupire_of_flat_surface() {
        let p = dupire_local_vol(|_, _| Ok(0.2), 0.1, -0.05, &DupireOptions::default()).unwrap();
        assert!((p.sigma_loc.unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn dupire_of_linear_smile_matches_short_time_ode() {
        // σ_BS(t, k) = a + b k: as t → 0 the formula reduces to σ/(1 - kσ_k/σ).
        let (a, b) = (0.2, -0.3);
        let k = 0.05;
        let s = a + b * k;
        let want = s / (1.0 - k * b / s);
        let p = dupire_local_vol(|_, k| Ok(a + b * k), 1e-8, k, &DupireOptions::default()).unwrap();
        assert!((p.sigma_loc.unwrap() - want).abs() < 1e-6);
    }

    #[test]
    fn dupire_flags_negative_density() {
        let p = dupire_local_vol(|_, k| Ok(0.2 - 40.0 * k * k), 1.0, 0.0, &DupireOptions::default()).unwrap();
        assert!(p.sigma_loc.is_none());
    }

    fn flat_solutions(ys: &[f64], level: impl Fn(f64) -> f64) -> Vec<RateSolution> {
        ys.iter()
            .map(|&y| RateSolution { y, coeffs: vec![], lambda: 0.0, h_hat_1: 0.0, sigma_limit: level(y), chi: 0.0 })
            .collect()
    }

    #[test]
    fn extrapolation_reads_the_limit_curve() {
        let ys: Vec<f64> = (-6..=6).map(|i| 0.05 * i as f64).collect();
        let sol = flat_solutions(&ys, |y| 0.235 - 0.4 * y);
        let h = Hurst::new(0.1).unwrap();
        for &t in &[0.001, 0.01, 0.3] {
            assert!((extrapolate_local_vol(&sol, h, t, 0.0).unwrap() - 0.235).abs() < 1e-15);
        }
        let y = -0.02 / 0.01f64.powf(0.4);
        let got = extrapolate_local_vol(&sol, h, 0.01, -0.02).unwrap();
        assert!((got - (0.235 - 0.4 * y)).abs() < 1e-12);
        let b = Hurst::new(0.5).unwrap();
        let a = extrapolate_local_vol(&sol, b, 0.01, 0.1).unwrap();
        let c = extrapolate_local_vol(&sol, b, 0.2, 0.1).unwrap();
        assert_eq!(a, c);
        assert!(matches!(extrapolate_local_vol(&sol, h, 0.01, -0.2), Err(Error::OutOfRange { .. })));
    }
}

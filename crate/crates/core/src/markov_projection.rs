//! Estimators of the Markovian projection `σ²_loc(t, k) = E[V_t | X_t = k]`
//! and of its log-moneyness derivative.
//!
//! Two independent routes are provided. The Nadaraya–Watson regressor smooths
//! the terminal pairs `(X_T, V_T)` with a Gaussian kernel. The ratio estimator
//! uses that, given the `W` path, `X_T` is Gaussian with mean
//! `-∫V/2 + ρ∫√V dW` and variance `(1-ρ²)∫V`, which turns the conditional
//! expectation into `E[V_T Π(k)] / E[Π(k)]` with a closed-form weight `Π`.

use crate::black_scholes::SkewEstimate;
use crate::error::{Error, Result};
use crate::rbergomi::{PathBatch, PathSample};
use crate::stats::{mean, pairwise_sum, variance, Linearized};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalVolMethod {
    Kernel,
    Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalVolPoint {
    pub t: f64,
    pub k: f64,
    pub sigma_loc: f64,
    pub method: LocalVolMethod,
    pub ci: f64,
    /// False when fewer than 50 samples carry 99% of the kernel mass.
    pub reliable: bool,
}

/// Conditional-Gaussian weight of one sample at log-moneyness `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiWeight {
    pub value: f64,
    /// `U(k) = k + ∫V/2 - ρ ∫√V dW`.
    pub u: f64,
}

/// `Π(k) = (∫V)^{-1/2} exp(-U(k)² / (2(1-ρ²)∫V))`.
pub fn pi_weight(sample: &PathSample, k: f64, rho: f64) -> PiWeight {
    let u = k + 0.5 * sample.int_v - rho * sample.int_sqrtv_dw;
    let value = (log_pi(sample.int_v, u, 1.0 - rho * rho)).exp();
    PiWeight { value, u }
}

fn log_pi(int_v: f64, u: f64, rho_bar_sq: f64) -> f64 {
    -0.5 * int_v.ln() - u * u / (2.0 * rho_bar_sq * int_v)
}

/// Kernel precision `δ = 1/(2b²)` with Silverman's `b = 1.06 · sd(X_T) · M^{-1/5}`.
pub fn silverman_delta(batch: &PathBatch) -> f64 {
    let x: Vec<f64> = batch.samples.iter().map(|s| s.x_t).collect();
    let sd = variance(&x).sqrt();
    let b = 1.06 * sd * (batch.len() as f64).powf(-0.2);
    1.0 / (2.0 * b * b)
}

const KERNEL_WEIGHT_FLOOR: f64 = 1e-300;
const MIN_EFFECTIVE_SAMPLES: usize = 50;

fn carries_mass(weights: &[f64]) -> bool {
    let mut sorted: Vec<f64> = weights.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let total = pairwise_sum(&sorted);
    let mut acc = 0.0;
    for (i, w) in sorted.iter().enumerate() {
        acc += w;
        if acc >= 0.99 * total {
            return i + 1 >= MIN_EFFECTIVE_SAMPLES;
        }
    }
    true
}

fn sqrt_of(l: &Linearized) -> Linearized {
    let s = l.value.sqrt();
    l.map(f64::sqrt, 0.5 / s)
}

/// Nadaraya–Watson estimate of `σ_loc` with kernel `exp(-δ (x - k)²)`.
/// Returns the linearized `σ_loc` and the reliability flag.
pub fn local_vol_kernel_linearized(batch: &PathBatch, k: f64, delta: f64) -> Result<(Linearized, bool)> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("bandwidth precision must be positive, got {delta}")));
    }
    let w: Vec<f64> = batch
        .samples
        .iter()
        .map(|s| (-delta * (s.x_t - k) * (s.x_t - k)).exp())
        .collect();
    if w.iter().all(|&x| x < KERNEL_WEIGHT_FLOOR) {
        return Err(Error::DegenerateSupport(k));
    }
    let wv: Vec<f64> = w.iter().zip(&batch.samples).map(|(w, s)| w * s.v_t).collect();
    let var = Linearized::ratio_of_means(&wv, &w);
    Ok((sqrt_of(&var), carries_mass(&w)))
}

pub fn local_vol_kernel(batch: &PathBatch, k: f64, delta: f64) -> Result<LocalVolPoint> {
    let (l, reliable) = local_vol_kernel_linearized(batch, k, delta)?;
    Ok(LocalVolPoint {
        t: batch.maturity(),
        k,
        sigma_loc: l.value,
        method: LocalVolMethod::Kernel,
        ci: l.ci95(),
        reliable,
    })
}

/// `Π` weights rescaled by a common factor so that the largest equals one, and `U`.
fn scaled_weights(batch: &PathBatch, k: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let rho = batch.params.rho();
    let rho_bar_sq = 1.0 - rho * rho;
    if !(rho_bar_sq > 0.0) {
        return Err(Error::InvalidParameter("ratio estimator needs |rho| < 1".into()));
    }
    let mut u = Vec::with_capacity(batch.len());
    let mut lw = Vec::with_capacity(batch.len());
    for s in &batch.samples {
        let ui = k + 0.5 * s.int_v - rho * s.int_sqrtv_dw;
        lw.push(log_pi(s.int_v, ui, rho_bar_sq));
        u.push(ui);
    }
    let top = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::UnstableEstimate { k, reason: "non-finite conditional weights".into() });
    }
    let w = lw.iter().map(|l| (l - top).exp()).collect();
    Ok((w, u))
}

/// Bandwidth-free estimate `σ²_loc = E[V_T Π(k)] / E[Π(k)]`.
pub fn local_vol_ratio_linearized(batch: &PathBatch, k: f64) -> Result<Linearized> {
    let (w, _) = scaled_weights(batch, k)?;
    let wv: Vec<f64> = w.iter().zip(&batch.samples).map(|(w, s)| w * s.v_t).collect();
    let var = Linearized::ratio_of_means(&wv, &w);
    Ok(sqrt_of(&var))
}

pub fn local_vol_ratio(batch: &PathBatch, k: f64) -> Result<LocalVolPoint> {
    let l = local_vol_ratio_linearized(batch, k)?;
    Ok(LocalVolPoint {
        t: batch.maturity(),
        k,
        sigma_loc: l.value,
        method: LocalVolMethod::Ratio,
        ci: l.ci95(),
        reliable: true,
    })
}

/// `∂_k σ_loc(t, k)` from the four means
/// `A = E[VΠ]`, `B = E[UΠ/∫V]`, `C = E[UΠV/∫V]`, `D = E[Π]`:
/// `(AB - CD) / (2(1-ρ²) A^{1/2} D^{3/2})`.
pub fn local_skew_linearized(batch: &PathBatch, k: f64) -> Result<Linearized> {
    let rho = batch.params.rho();
    let c = 1.0 - rho * rho;
    let (w, u) = scaled_weights(batch, k)?;
    let m = batch.len();
    let mut ya = Vec::with_capacity(m);
    let mut yb = Vec::with_capacity(m);
    let mut yc = Vec::with_capacity(m);
    for ((s, wi), ui) in batch.samples.iter().zip(&w).zip(&u) {
        let q = ui * wi / s.int_v;
        ya.push(wi * s.v_t);
        yb.push(q);
        yc.push(q * s.v_t);
    }
    let la = Linearized::from_mean(&ya);
    let lb = Linearized::from_mean(&yb);
    let lc = Linearized::from_mean(&yc);
    let ld = Linearized::from_mean(&w);
    if ld.value < 10.0 * ld.std_error() {
        return Err(Error::UnstableEstimate {
            k,
            reason: format!("E[Π] = {:e} below ten standard errors", ld.value),
        });
    }
    let (a, b, cc, d) = (la.value, lb.value, lc.value, ld.value);
    let den = 2.0 * c * a.sqrt() * d.powf(1.5);
    let f = (a * b - cc * d) / den;
    let grad_a = b / den - f / (2.0 * a);
    let grad_b = a / den;
    let grad_c = -d / den;
    let grad_d = -cc / den - 1.5 * f / d;
    Ok(Linearized::combine(
        &[(grad_a, &la), (grad_b, &lb), (grad_c, &lc), (grad_d, &ld)],
        f,
    ))
}

pub fn local_skew(batch: &PathBatch, k: f64) -> Result<SkewEstimate> {
    let l = local_skew_linearized(batch, k)?;
    Ok(SkewEstimate::from_linearized(batch.maturity(), k, &l))
}

pub fn fd_skew_loc_linearized(batch: &PathBatch, y: f64) -> Result<Linearized> {
    if y == 0.0 {
        return Err(Error::InvalidParameter("finite-difference skew needs y != 0".into()));
    }
    let k = y * batch.strike_scale();
    let up = local_vol_ratio_linearized(batch, k)?;
    let down = local_vol_ratio_linearized(batch, -k)?;
    let c = 1.0 / (2.0 * k);
    Ok(Linearized::combine(&[(c, &up), (-c, &down)], c * (up.value - down.value)))
}

/// `[σ_loc(t, y t^{1/2-H}) - σ_loc(t, -y t^{1/2-H})] / (2 y t^{1/2-H})` with the ratio estimator.
pub fn fd_skew_loc(batch: &PathBatch, y: f64) -> Result<SkewEstimate> {
    let l = fd_skew_loc_linearized(batch, y)?;
    Ok(SkewEstimate::from_linearized(batch.maturity(), y, &l))
}

/// Mean of `V_T` over the batch; the unconditional level around which both
/// estimators fluctuate.
pub fn mean_terminal_variance(batch: &PathBatch) -> f64 {
    let v: Vec<f64> = batch.samples.iter().map(|s| s.v_t).collect();
    mean(&v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::SimulationGrid;
    use crate::rbergomi::ModelParams;
    use approx::assert_abs_diff_eq;

    fn batch_of(samples: Vec<PathSample>, rho: f64) -> PathBatch {
        PathBatch {
            samples,
            params: ModelParams::new(0.04, 1.0, rho, 0.3).unwrap(),
            grid: SimulationGrid::new(0.1, 4).unwrap(),
            seed: 0,
        }
    }

    fn sample(x_t: f64, v_t: f64, int_v: f64, int_sqrtv_dw: f64) -> PathSample {
        PathSample { x_t, v_t, int_v, int_sqrtv_dw }
    }

    #[test]
    fn kernel_single_sample_returns_its_variance() {
        let b = batch_of(vec![sample(0.03, 0.05, 0.004, 0.01)], -0.5);
        for &k in &[-0.02, 0.0, 0.04] {
            let p = local_vol_kernel(&b, k, 100.0).unwrap();
            assert_abs_diff_eq!(p.sigma_loc, 0.05f64.sqrt(), epsilon = 1e-15);
            assert_eq!(p.method, LocalVolMethod::Kernel);
        }
    }

    #[test]
    fn kernel_equal_distances_average() {
        let b = batch_of(
            vec![sample(-0.1, 0.02, 0.004, 0.0), sample(0.1, 0.06, 0.004, 0.0)],
            0.0,
        );
        let p = local_vol_kernel(&b, 0.0, 50.0).unwrap();
        assert_abs_diff_eq!(p.sigma_loc, 0.04f64.sqrt(), epsilon = 1e-15);
        assert!(!p.reliable);
    }

    #[test]
    fn kernel_without_support_is_an_error() {
        let b = batch_of(vec![sample(0.0, 0.04, 0.004, 0.0)], 0.0);
        assert!(matches!(local_vol_kernel(&b, 10.0, 1e4), Err(Error::DegenerateSupport(_))));
    }

    #[test]
    fn ratio_matches_hand_computation() {
        let rho: f64 = -0.6;
        let rb2 = 1.0 - rho * rho;
        let raw = [
            (0.01, 0.050, 0.0040, 0.020),
            (-0.02, 0.030, 0.0050, -0.030),
            (0.005, 0.045, 0.0035, 0.001),
        ];
        let samples: Vec<PathSample> = raw.iter().map(|&(x, v, i, m)| sample(x, v, i, m)).collect();
        let b = batch_of(samples, rho);
        let k = 0.015;
        let mut num = 0.0;
        let mut den = 0.0;
        for &(_, v, i, m) in &raw {
            let u: f64 = k + 0.5 * i - rho * m;
            let pi = (1.0 / f64::sqrt(i)) * (-(u * u) / (2.0 * rb2 * i)).exp();
            num += v * pi;
            den += pi;
        }
        let want = (num / den).sqrt();
        let got = local_vol_ratio(&b, k).unwrap().sigma_loc;
        assert!((got - want).abs() < 1e-14, "{got} vs {want}");
    }

    #[test]
    fn pi_weight_positive_and_finite() {
        let s = sample(0.0, 0.04, 0.004, 0.05);
        for &k in &[-0.3, 0.0, 0.3] {
            let p = pi_weight(&s, k, -0.7);
            assert!(p.value > 0.0 && p.value.is_finite());
            assert_abs_diff_eq!(p.u, k + 0.002 + 0.7 * 0.05, epsilon = 1e-15);
        }
    }

    #[test]
    fn local_skew_matches_finite_difference_of_ratio() {
        let rho = -0.4;
        let samples: Vec<PathSample> = (0..40)
            .map(|i| {
                let f = i as f64 / 40.0;
                sample(0.0, 0.03 + 0.02 * f, 0.003 + 0.002 * (1.0 - f), 0.06 * (f - 0.5))
            })
            .collect();
        let b = batch_of(samples, rho);
        let k = 0.01;
        let h = 1e-5;
        let fd = (local_vol_ratio(&b, k + h).unwrap().sigma_loc - local_vol_ratio(&b, k - h).unwrap().sigma_loc)
            / (2.0 * h);
        let got = local_skew(&b, k).unwrap().value;
        assert!((got - fd).abs() < 1e-7 * (1.0 + fd.abs()), "{got} vs {fd}");
    }

    #[test]
    fn ratio_is_permutation_invariant() {
        let samples: Vec<PathSample> = (0..500)
            .map(|i| {
                let f = ((i * 7919) % 500) as f64 / 500.0;
                sample(0.1 * (f - 0.5), 0.03 + 0.02 * f, 0.004 + 0.001 * f, 0.05 * (0.5 - f))
            })
            .collect();
        let mut rev = samples.clone();
        rev.reverse();
        let a = local_vol_ratio(&batch_of(samples, -0.7), 0.02).unwrap().sigma_loc;
        let b = local_vol_ratio(&batch_of(rev, -0.7), 0.02).unwrap().sigma_loc;
        assert!((a - b).abs() < 1e-14);
    }
}

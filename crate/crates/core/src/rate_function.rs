//! Ritz minimization of the large-deviations rate function
//!
//! ```text
//! Λ(y) = inf_h  (y - ρ G(h))² / (2 ρ̄² F(h)) + ½ ⟨ḣ, ḣ⟩,
//! F(h) = ∫₀¹ σ²(ĥ_t) dt,   G(h) = ∫₀¹ σ(ĥ_t) ḣ_t dt,
//! ```
//!
//! over controls `ḣ = Σ aₙ ėₙ` in a truncated Fourier basis, together with the
//! limiting local volatility `Σ(y) = σ(ĥ^y₁)` and implied volatility
//! `χ(y) = |y| / √(2Λ(y))`.

use crate::error::{Error, Result};
use crate::fbm::{kernel_integral, Hurst};
use crate::optimize::{bfgs, BfgsOptions};
use crate::quadrature::{CompositeRule, GaussLegendre};
use crate::rbergomi::ModelParams;
use rayon::prelude::*;
use std::f64::consts::{PI, SQRT_2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RitzConfig {
    pub n_basis: usize,
    /// Number of composite Gauss–Legendre nodes on [0, 1]; a multiple of 16.
    pub quad_nodes: usize,
    /// Gradient sup-norm tolerance of the optimizer.
    pub tol: f64,
}

impl Default for RitzConfig {
    fn default() -> Self {
        Self { n_basis: 8, quad_nodes: 256, tol: 1e-8 }
    }
}

impl RitzConfig {
    pub fn with_basis(self, n_basis: usize) -> Self {
        Self { n_basis, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_basis == 0 {
            return Err(Error::InvalidParameter("n_basis must be at least 1".into()));
        }
        if self.quad_nodes == 0 || self.quad_nodes % PANEL_ORDER != 0 {
            return Err(Error::InvalidParameter(format!(
                "quad_nodes must be a positive multiple of {PANEL_ORDER}, got {}",
                self.quad_nodes
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

const PANEL_ORDER: usize = 16;
const HAT_TOL: f64 = 1e-13;

/// `ė₁ = 1`, `ė₂ₙ = √2 cos(2πnt)`, `ė₂ₙ₊₁ = √2 sin(2πnt)`, with `n ≥ 1` the 1-based index.
pub fn fourier_basis(n: usize, t: f64) -> f64 {
    assert!(n >= 1, "basis index starts at 1");
    if n == 1 {
        return 1.0;
    }
    let freq = 2.0 * PI * (n / 2) as f64;
    if n % 2 == 0 {
        SQRT_2 * (freq * t).cos()
    } else {
        SQRT_2 * (freq * t).sin()
    }
}

/// `∫₀ᵗ K(t,s) f(s) ds` for a smooth `f`, after the substitution
/// `v = (t-s)^{H+1/2}` which removes the kernel singularity.
fn volterra<F: Fn(f64) -> f64>(f: F, t: f64, hurst: Hurst, rule: &GaussLegendre) -> Result<f64> {
    if t <= 0.0 {
        return Ok(0.0);
    }
    let a = hurst.alpha();
    let c = (2.0 * hurst.value()).sqrt() / a;
    let g = |v: f64| f(t - v.powf(1.0 / a));
    Ok(c * rule.integrate_adaptive(&g, 0.0, t.powf(a), HAT_TOL)?)
}

/// `ĥ_t = ∫₀ᵗ K(t,s) ḣ_s ds` with `ḣ = Σ aₙ ėₙ`.
pub fn hat_transform(coeffs: &[f64], t: f64, hurst: Hurst) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("hat_transform needs t in [0, 1], got {t}")));
    }
    let rule = GaussLegendre::new(10);
    let hdot = |s: f64| coeffs.iter().enumerate().map(|(i, a)| a * fourier_basis(i + 1, s)).sum();
    volterra(hdot, t, hurst, &rule)
}

/// Basis functions and their Volterra transforms tabulated at the quadrature nodes,
/// so that the objective is a cheap function of the coefficients.
#[derive(Debug, Clone)]
pub struct RateProblem {
    params: ModelParams,
    config: RitzConfig,
    weights: Vec<f64>,
    basis: Vec<Vec<f64>>,
    hat: Vec<Vec<f64>>,
    hat_end: Vec<f64>,
}

impl RateProblem {
    pub fn new(params: ModelParams, config: RitzConfig) -> Result<Self> {
        config.validate()?;
        if !(params.rho_bar() > 0.0) {
            return Err(Error::InvalidParameter("rate function needs |rho| < 1".into()));
        }
        let quad = CompositeRule::new(0.0, 1.0, config.quad_nodes / PANEL_ORDER, PANEL_ORDER);
        let rule = GaussLegendre::new(10);
        let hurst = params.hurst();
        let basis = (1..=config.n_basis)
            .map(|n| quad.nodes.iter().map(|&t| fourier_basis(n, t)).collect())
            .collect();
        let hat = (1..=config.n_basis)
            .map(|n| {
                quad.nodes
                    .iter()
                    .map(|&t| volterra(|s| fourier_basis(n, s), t, hurst, &rule))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let hat_end = (1..=config.n_basis)
            .map(|n| volterra(|s| fourier_basis(n, s), 1.0, hurst, &rule))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { params, config, weights: quad.weights, basis, hat, hat_end })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn config(&self) -> &RitzConfig {
        &self.config
    }

    /// `(F(h), G(h))`.
    pub fn functionals(&self, coeffs: &[f64]) -> (f64, f64) {
        let mut f = 0.0;
        let mut g = 0.0;
        for (q, w) in self.weights.iter().enumerate() {
            let mut hhat = 0.0;
            let mut hdot = 0.0;
            for (n, a) in coeffs.iter().enumerate() {
                hhat += a * self.hat[n][q];
                hdot += a * self.basis[n][q];
            }
            let s = self.params.sigma(hhat);
            f += w * s * s;
            g += w * s * hdot;
        }
        (f, g)
    }

    pub fn objective(&self, coeffs: &[f64], y: f64) -> f64 {
        let (f, g) = self.functionals(coeffs);
        if !(f > 0.0) {
            return f64::INFINITY;
        }
        let rho = self.params.rho();
        let rb = self.params.rho_bar();
        let energy: f64 = 0.5 * coeffs.iter().map(|a| a * a).sum::<f64>();
        (y - rho * g).powi(2) / (2.0 * rb * rb * f) + energy
    }

    pub fn h_hat_end(&self, coeffs: &[f64]) -> f64 {
        coeffs.iter().zip(&self.hat_end).map(|(a, e)| a * e).sum()
    }

    /// Minimizes from the zero start, from `a₁ = ρy/σ₀` (the exact minimizer
    /// for constant σ) and from `warm` when given; keeps the lowest value.
    pub fn solve(&self, y: f64, warm: Option<&[f64]>) -> Result<RateSolution> {
        let n = self.config.n_basis;
        let mut starts = vec![vec![0.0; n]];
        let mut tilted = vec![0.0; n];
        tilted[0] = self.params.rho() * y / self.params.sigma0();
        starts.push(tilted);
        if let Some(w) = warm {
            if w.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: w.len() });
            }
            starts.push(w.to_vec());
        }
        let opts = BfgsOptions { g_tol: self.config.tol, ..Default::default() };
        let mut best: Option<crate::optimize::Minimum> = None;
        let mut first_err = None;
        for s in &starts {
            match bfgs(|a: &[f64]| self.objective(a, y), s, &opts) {
                Ok(m) => {
                    if best.as_ref().map_or(true, |b| m.value < b.value) {
                        best = Some(m);
                    }
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        let Some(m) = best else {
            return Err(first_err.expect("at least one start was tried"));
        };
        Ok(self.solution(y, m.x, m.value))
    }

    fn solution(&self, y: f64, coeffs: Vec<f64>, lambda: f64) -> RateSolution {
        let lambda = lambda.max(0.0);
        let h_hat_1 = self.h_hat_end(&coeffs);
        let sigma_limit = self.params.sigma(h_hat_1);
        let chi = if y == 0.0 || lambda == 0.0 {
            self.params.sigma0()
        } else {
            y.abs() / (2.0 * lambda).sqrt()
        };
        RateSolution { y, coeffs, lambda, h_hat_1, sigma_limit, chi }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateSolution {
    pub y: f64,
    pub coeffs: Vec<f64>,
    pub lambda: f64,
    pub h_hat_1: f64,
    /// `Σ(y) = σ(ĥ^y₁)`.
    pub sigma_limit: f64,
    /// `χ(y) = |y| / √(2Λ(y))`, extended by `σ₀` at `y = 0`.
    pub chi: f64,
}

/// Builds the tabulated problem and solves it at a single `y`.
pub fn minimize_rate(y: f64, params: &ModelParams, config: &RitzConfig) -> Result<RateSolution> {
    RateProblem::new(*params, *config)?.solve(y, None)
}

/// Objective at fixed coefficients.
pub fn objective(coeffs: &[f64], y: f64, params: &ModelParams, config: &RitzConfig) -> Result<f64> {
    let config = config.with_basis(coeffs.len());
    Ok(RateProblem::new(*params, config)?.objective(coeffs, y))
}

/// Solutions along `y_grid`, returned in grid order. The sequential scan moves
/// outward from the point nearest zero and warm-starts each solve from its
/// neighbour; `parallel` solves every point independently.
pub fn limiting_smile(
    y_grid: &[f64],
    params: &ModelParams,
    config: &RitzConfig,
    parallel: bool,
) -> Result<Vec<RateSolution>> {
    let problem = RateProblem::new(*params, *config)?;
    if parallel {
        return y_grid.par_iter().map(|&y| problem.solve(y, None)).collect();
    }
    let mut order: Vec<usize> = (0..y_grid.len()).collect();
    order.sort_by(|&a, &b| y_grid[a].total_cmp(&y_grid[b]));
    let pivot = order
        .iter()
        .position(|&i| y_grid[i] >= 0.0)
        .unwrap_or(order.len());
    let mut out: Vec<Option<RateSolution>> = vec![None; y_grid.len()];
    let mut warm: Option<Vec<f64>> = None;
    for &i in &order[pivot..] {
        let s = problem.solve(y_grid[i], warm.as_deref())?;
        warm = Some(s.coeffs.clone());
        out[i] = Some(s);
    }
    let mut warm: Option<Vec<f64>> = None;
    for &i in order[..pivot].iter().rev() {
        let s = problem.solve(y_grid[i], warm.as_deref())?;
        warm = Some(s.coeffs.clone());
        out[i] = Some(s);
    }
    Ok(out.into_iter().map(|s| s.expect("every grid point solved")).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewConstants {
    /// `K1(1) = ∫₀¹ K(1,s) ds`.
    pub k1: f64,
    /// `⟨K1, 1⟩ = ∫₀¹ K1(t) dt`.
    pub k1_mean: f64,
    /// `K1(1) / ⟨K1, 1⟩`, equal to `H + 3/2`.
    pub ratio: f64,
    /// First-order slope of `Σ` at zero, `(η/2) ρ K1(1)`.
    pub sigma_slope: f64,
}

pub fn skew_constants(params: &ModelParams) -> Result<SkewConstants> {
    let hurst = params.hurst();
    let rule = GaussLegendre::new(10);
    let k1_at = |t: f64| volterra(|_| 1.0, t, hurst, &rule);
    let k1 = k1_at(1.0)?;
    // K1(t) behaves like t^{H+1/2} at the origin, smooth in u = t^{H+1/2}.
    let a = hurst.alpha();
    let failure = std::cell::RefCell::new(None);
    let integrand = |u: f64| {
        if u <= 0.0 {
            return 0.0;
        }
        let t = u.powf(1.0 / a);
        match k1_at(t) {
            Ok(v) => v * t / (a * u),
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                0.0
            }
        }
    };
    let k1_mean = rule.integrate_adaptive(&integrand, 0.0, 1.0, 1e-13)?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(SkewConstants {
        k1,
        k1_mean,
        ratio: k1 / k1_mean,
        sigma_slope: 0.5 * params.eta() * params.rho() * k1,
    })
}

/// Closed form of `K1(1)`, used to cross-check [`skew_constants`].
pub fn k1_closed_form(hurst: Hurst) -> f64 {
    kernel_integral(1.0, hurst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rough(h: f64) -> ModelParams {
        ModelParams::reference(h).unwrap()
    }

    #[test]
    fn basis_values() {
        assert_eq!(fourier_basis(1, 0.37), 1.0);
        assert!((fourier_basis(2, 0.0) - SQRT_2).abs() < 1e-15);
        assert!(fourier_basis(3, 0.0).abs() < 1e-15);
        assert!((fourier_basis(3, 0.25) - SQRT_2).abs() < 1e-14);
    }

    #[test]
    fn basis_is_orthonormal_under_quadrature() {
        let q = CompositeRule::new(0.0, 1.0, 16, 16);
        for i in 1..=9 {
            for j in 1..=9 {
                let got = q.integrate(|t| fourier_basis(i, t) * fourier_basis(j, t));
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((got - want).abs() < 1e-10, "({i},{j}) -> {got}");
            }
        }
    }

    #[test]
    fn hat_of_constant_control_is_k1() {
        for &h in &[0.1, 0.3, 0.5] {
            let hurst = Hurst::new(h).unwrap();
            for &t in &[0.0, 0.01, 0.3, 1.0] {
                let got = hat_transform(&[1.0], t, hurst).unwrap();
                let want = kernel_integral(t, hurst);
                assert!((got - want).abs() < 1e-12, "H={h} t={t}: {got} vs {want}");
            }
        }
        let b = Hurst::new(0.5).unwrap();
        assert!((hat_transform(&[1.0], 0.7, b).unwrap() - 0.7).abs() < 1e-14);
        assert_eq!(hat_transform(&[0.0, 0.0, 0.0], 0.7, b).unwrap(), 0.0);
    }

    #[test]
    fn hat_of_cosine_matches_reference() {
        // ∫₀¹ √0.2 (1-s)^{-0.4} √2 cos(2πs) ds
        let got = hat_transform(&[0.0, 1.0], 1.0, Hurst::new(0.1).unwrap()).unwrap();
        assert!((got - 0.17779027511238477).abs() < 1e-12, "{got}");
    }

    #[test]
    fn objective_reductions() {
        let p = ModelParams::new(0.04, 0.0, -0.5, 0.1).unwrap();
        let cfg = RitzConfig::default();
        let zero = vec![0.0; 8];
        assert_eq!(objective(&zero, 0.0, &p, &cfg).unwrap(), 0.0);
        let y: f64 = 0.15;
        let want = y * y / (2.0 * 0.75 * 0.04);
        assert!((objective(&zero, y, &p, &cfg).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn objective_matches_reference_at_two_coefficients() {
        let p = rough(0.1);
        let got = objective(&[0.3, -0.2], 0.15, &p, &RitzConfig::default()).unwrap();
        assert!((got - 0.69959795974649199).abs() < 1e-8, "{got}");
    }

    #[test]
    fn flat_volatility_has_quadratic_rate() {
        let p = ModelParams::new(0.04, 0.0, -0.7, 0.1).unwrap();
        let problem = RateProblem::new(p, RitzConfig::default()).unwrap();
        for &y in &[-0.2, -0.1, 0.1, 0.2] {
            let s = problem.solve(y, None).unwrap();
            assert!((s.lambda - y * y / 0.08).abs() < 1e-10, "y={y} {}", s.lambda);
            assert!((s.sigma_limit - 0.2).abs() < 1e-12);
            assert!((s.chi - 0.2).abs() < 1e-8);
            assert!((s.coeffs[0] + 0.7 * y / 0.2).abs() < 1e-6);
        }
    }

    #[test]
    fn origin_is_the_trivial_minimizer() {
        let p = rough(0.1);
        let s = minimize_rate(0.0, &p, &RitzConfig::default()).unwrap();
        assert!(s.coeffs.iter().all(|&a| a == 0.0));
        assert_eq!(s.lambda, 0.0);
        assert_eq!(s.sigma_limit, p.sigma0());
        assert_eq!(s.chi, p.sigma0());
    }

    #[test]
    fn ritz_values_decrease_with_basis_size() {
        let p = rough(0.1);
        for &y in &[-0.2, 0.2] {
            let l: Vec<f64> = [2, 4, 8]
                .iter()
                .map(|&n| minimize_rate(y, &p, &RitzConfig::default().with_basis(n)).unwrap().lambda)
                .collect();
            assert!(l[2] <= l[1] && l[1] <= l[0], "y={y}: {l:?}");
        }
    }

    #[test]
    fn two_term_minimum_beats_exhaustive_grid() {
        let p = rough(0.1);
        let problem = RateProblem::new(p, RitzConfig::default().with_basis(2)).unwrap();
        let y = 0.2;
        let mut grid_best = f64::INFINITY;
        for i in 0..=200 {
            for j in 0..=200 {
                let a = [-2.0 + 0.02 * i as f64, -1.0 + 0.01 * j as f64];
                grid_best = grid_best.min(problem.objective(&a, y));
            }
        }
        let s = problem.solve(y, None).unwrap();
        assert!(s.lambda <= grid_best + 1e-12);
        assert!(grid_best - s.lambda < 1e-3);
        let full = minimize_rate(y, &p, &RitzConfig::default()).unwrap();
        assert!(full.lambda <= s.lambda);
    }

    #[test]
    fn smile_is_symmetric_without_correlation() {
        let p = ModelParams::new(0.235 * 0.235, 1.0, 0.0, 0.1).unwrap();
        let sol = limiting_smile(&[-0.2, -0.1, 0.1, 0.2], &p, &RitzConfig::default(), false).unwrap();
        assert!((sol[0].sigma_limit - sol[3].sigma_limit).abs() < 1e-6);
        assert!((sol[1].sigma_limit - sol[2].sigma_limit).abs() < 1e-6);
        assert!((sol[0].lambda - sol[3].lambda).abs() < 1e-9);
    }

    #[test]
    fn smile_scan_is_monotone_and_continuous() {
        let p = rough(0.1);
        let grid: Vec<f64> = (-6..=6).map(|i| 0.05 * i as f64).collect();
        let sol = limiting_smile(&grid, &p, &RitzConfig::default(), false).unwrap();
        for w in sol.windows(2) {
            let jump = w[0].coeffs.iter().zip(&w[1].coeffs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(jump < 10.0 * 0.05 * 10.0, "jump {jump}");
        }
        for i in 0..6 {
            assert!(sol[i].lambda >= sol[i + 1].lambda);
            assert!(sol[12 - i].lambda >= sol[11 - i].lambda);
        }
        assert!(sol[6].lambda == 0.0);
        let parallel = limiting_smile(&grid, &p, &RitzConfig::default(), true).unwrap();
        for (a, b) in sol.iter().zip(&parallel) {
            assert!((a.lambda - b.lambda).abs() < 1e-9);
        }
    }

    #[test]
    fn chi_tends_to_spot_vol_at_the_money() {
        let p = rough(0.1);
        let problem = RateProblem::new(p, RitzConfig::default()).unwrap();
        for &y in &[-1e-3, 1e-3] {
            let s = problem.solve(y, None).unwrap();
            assert!((s.chi - p.sigma0()).abs() < 2e-3, "{}", s.chi);
        }
    }

    #[test]
    fn skew_constant_values() {
        let c = skew_constants(&rough(0.5)).unwrap();
        assert!((c.k1 - 1.0).abs() < 1e-12 && (c.k1_mean - 0.5).abs() < 1e-10);
        let c = skew_constants(&rough(0.1)).unwrap();
        assert!((c.k1 - 0.7453559924999299).abs() < 1e-12);
        assert!((c.k1_mean - 0.46584749531245616).abs() < 1e-10);
        for &h in &[0.1, 0.3, 0.5] {
            let c = skew_constants(&rough(h)).unwrap();
            assert!((c.ratio - (h + 1.5)).abs() < 1e-8);
            assert!((c.k1 - k1_closed_form(Hurst::new(h).unwrap())).abs() < 1e-12);
        }
    }

    #[test]
    fn sigma_slope_matches_first_order_expansion() {
        let p = rough(0.1);
        let c = skew_constants(&p).unwrap();
        let problem = RateProblem::new(p, RitzConfig::default()).unwrap();
        let y = 1e-2;
        let up = problem.solve(y, None).unwrap().sigma_limit;
        let down = problem.solve(-y, None).unwrap().sigma_limit;
        let fd = (up - down) / (2.0 * y);
        assert!((fd / c.sigma_slope - 1.0).abs() < 0.02, "{fd} vs {}", c.sigma_slope);
    }

    #[test]
    fn flat_rate_scales_with_volatility_level() {
        let cfg = RitzConfig::default().with_basis(4);
        let y = 0.1;
        let base = minimize_rate(y, &ModelParams::new(0.04, 0.0, -0.7, 0.3).unwrap(), &cfg).unwrap();
        let c: f64 = 1.5;
        let scaled = minimize_rate(y, &ModelParams::new(0.04 * c * c, 0.0, -0.7, 0.3).unwrap(), &cfg).unwrap();
        assert!((scaled.lambda - base.lambda / (c * c)).abs() < 1e-10);
        for (a, b) in base.coeffs.iter().zip(&scaled.coeffs) {
            assert!((b - a / c).abs() < 1e-6);
        }
    }
}

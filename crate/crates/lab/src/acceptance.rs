//! The acceptance suite. Each criterion is a list of checks; a criterion passes
//! when all of its checks pass.

use crate::config::{ExperimentConfig, DESK_MATURITIES, PAPER_HURST};
use crate::experiments::{loglog_slope, Lab};
use anyhow::Result;
use roughlv::asymptotics::{harmonic_point, rescaled_smile_error, skew_ratio_point, SkewMethod};
use roughlv::black_scholes::{bs_price, implied_skew, implied_vol_for, OptionKind};
use roughlv::fbm::{build_covariance, factorize, Sampler};
use roughlv::markov_projection::{local_skew, local_vol_kernel, local_vol_ratio, silverman_delta};
use roughlv::quadrature::CompositeRule;
use roughlv::rate_function::{fourier_basis, limiting_smile, minimize_rate, skew_constants, RitzConfig};
use roughlv::stats::{mean, variance};
use roughlv::{simulate_batch, Hurst, ModelParams, PathBatch, SimulationGrid};
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub label: String,
    pub measured: f64,
    pub target: f64,
    /// Allowed deviation or bound; its meaning is spelled out in `label`.
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn within(label: impl Into<String>, measured: f64, target: f64, tolerance: f64) -> Self {
        let passed = (measured - target).abs() <= tolerance;
        Self { label: label.into(), measured, target, tolerance, passed }
    }

    fn holds(label: impl Into<String>, measured: f64, target: f64, tolerance: f64, passed: bool) -> Self {
        Self { label: label.into(), measured, target, tolerance, passed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Criterion {
    pub id: u8,
    pub title: &'static str,
    pub checks: Vec<Check>,
}

impl Criterion {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ok = self.checks.iter().filter(|c| c.passed).count();
        write!(
            f,
            "{} criterion {}: {} ({ok}/{} checks)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.checks.len()
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub criteria: Vec<Criterion>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(Criterion::passed)
    }

    pub fn lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.criteria {
            out.push(c.to_string());
            for k in &c.checks {
                out.push(format!(
                    "    [{}] {}: measured {:.6}, target {:.6}, tolerance {:.3e}",
                    if k.passed { "ok" } else { "FAIL" },
                    k.label,
                    k.measured,
                    k.target,
                    k.tolerance
                ));
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("criterion,check,measured,target,tolerance,passed\n");
        for c in &self.criteria {
            for k in &c.checks {
                s.push_str(&format!(
                    "{},\"{}\",{},{},{},{}\n",
                    c.id, k.label, k.measured, k.target, k.tolerance, k.passed
                ));
            }
        }
        s
    }
}

/// Numerical thresholds of the criteria.
#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds {
    pub ratio_tol: f64,
    /// Replaces `1/(H+3/2)` as the skew-ratio target for the given `H`.
    pub ratio_target_override: Vec<(f64, f64)>,
    pub slope_tol: f64,
    pub agreement_fraction: f64,
    pub flat_rate_tol: f64,
    pub k1_identity_tol: f64,
    pub harmonic_diffusive_tol: f64,
    pub harmonic_rough_gap: f64,
    pub implied_round_trip_tol: f64,
    pub cholesky_tol: f64,
    pub variance_se: f64,
    pub basis_tol: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            ratio_tol: 0.06,
            ratio_target_override: Vec::new(),
            slope_tol: 0.07,
            agreement_fraction: 0.95,
            flat_rate_tol: 1e-6,
            k1_identity_tol: 1e-8,
            harmonic_diffusive_tol: 0.03,
            harmonic_rough_gap: 0.05,
            implied_round_trip_tol: 1e-10,
            cholesky_tol: 1e-10,
            variance_se: 5.0,
            basis_tol: 1e-10,
        }
    }
}

/// Batches at the paper's Hurst indices and the desk maturities, with the
/// sample size, step count, seed and model levels of `config`.
pub struct DeskData {
    pub config: ExperimentConfig,
    pub hurst: Vec<f64>,
    pub maturities: Vec<f64>,
    /// `batches[i][j]` at `hurst[i]`, `maturities[j]`.
    pub batches: Vec<Vec<PathBatch>>,
}

impl DeskData {
    pub fn simulate(config: &ExperimentConfig) -> Result<Self> {
        let mut cfg = config.clone();
        cfg.model.hurst = PAPER_HURST.to_vec();
        cfg.grid.maturities = DESK_MATURITIES.to_vec();
        let mut lab = Lab::new(cfg.clone());
        let batches = PAPER_HURST
            .iter()
            .map(|&h| lab.term_structure(h))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config: cfg, hurst: PAPER_HURST.to_vec(), maturities: DESK_MATURITIES.to_vec(), batches })
    }

    pub fn at(&self, h: f64, t: f64) -> &PathBatch {
        let i = self.hurst.iter().position(|&x| x == h).expect("known Hurst index");
        let j = self.maturities.iter().position(|&x| x == t).expect("known maturity");
        &self.batches[i][j]
    }
}

fn failed(label: impl Into<String>) -> Check {
    Check::holds(label, f64::NAN, f64::NAN, f64::NAN, false)
}

pub fn skew_ratio_rule(data: &DeskData, th: &Thresholds) -> Criterion {
    let mut checks = Vec::new();
    for &h in &data.hurst {
        let target = th
            .ratio_target_override
            .iter()
            .find(|(x, _)| *x == h)
            .map_or(1.0 / (h + 1.5), |(_, t)| *t);
        for &t in &[0.05, 0.1] {
            let label = format!("H={h} T={t} S_BS/S_loc");
            match skew_ratio_point(data.at(h, t), SkewMethod::AtTheMoney) {
                Ok(p) => checks.push(Check::within(label, p.ratio, target, th.ratio_tol)),
                Err(_) => checks.push(failed(label)),
            }
        }
    }
    Criterion { id: 1, title: "skew ratio approaches 1/(H+3/2)", checks }
}

pub fn skew_power_law(data: &DeskData, th: &Thresholds) -> Criterion {
    let mut checks = Vec::new();
    for (i, &h) in data.hurst.iter().enumerate() {
        let batches = &data.batches[i];
        let bs: Result<Vec<f64>, _> = batches.iter().map(|b| implied_skew(b, 0.0).map(|s| s.value)).collect();
        let loc: Result<Vec<f64>, _> = batches.iter().map(|b| local_skew(b, 0.0).map(|s| s.value)).collect();
        for (name, vals) in [("implied", bs), ("local", loc)] {
            let label = format!("H={h} {name} ATM skew log-log slope");
            match vals {
                Ok(v) => checks.push(Check::within(label, loglog_slope(&data.maturities, &v), h - 0.5, th.slope_tol)),
                Err(_) => checks.push(failed(label)),
            }
        }
    }
    Criterion { id: 2, title: "ATM skews scale like t^(H-1/2)", checks }
}

pub fn estimator_agreement(data: &DeskData, th: &Thresholds) -> Criterion {
    let strikes: Vec<f64> = (0..11).map(|i| -0.1 + 0.02 * i as f64).collect();
    let mut agree = 0usize;
    let mut total = 0usize;
    for &h in &data.hurst {
        for &t in &[0.1, 0.3] {
            let b = data.at(h, t);
            let delta = data.config.estimators.bandwidth_delta.unwrap_or_else(|| silverman_delta(b));
            for &k in &strikes {
                total += 1;
                if let (Ok(ker), Ok(rat)) = (local_vol_kernel(b, k, delta), local_vol_ratio(b, k)) {
                    if (ker.sigma_loc - rat.sigma_loc).abs() <= (ker.ci * ker.ci + rat.ci * rat.ci).sqrt() {
                        agree += 1;
                    }
                }
            }
        }
    }
    let fraction = agree as f64 / total as f64;
    let check = Check::holds(
        format!("fraction of {total} points where kernel and ratio agree within combined 95% CI (minimum)"),
        fraction,
        th.agreement_fraction,
        0.0,
        fraction >= th.agreement_fraction,
    );
    Criterion { id: 3, title: "kernel and ratio local-vol estimators agree", checks: vec![check] }
}

pub fn rate_function_analytics(config: &ExperimentConfig, th: &Thresholds) -> Criterion {
    let mut checks = Vec::new();
    let m = &config.model;
    let ys = [-0.2, -0.1, 0.1, 0.2];
    match ModelParams::new(m.xi0, 0.0, m.rho, 0.1) {
        Ok(flat) => {
            for &y in &ys {
                let label = format!("eta=0 y={y} Lambda vs y^2/(2 xi0)");
                match minimize_rate(y, &flat, &RitzConfig::default()) {
                    Ok(s) => checks.push(Check::within(label, s.lambda, y * y / (2.0 * m.xi0), th.flat_rate_tol)),
                    Err(_) => checks.push(failed(label)),
                }
            }
        }
        Err(_) => checks.push(failed("eta=0 parameters")),
    }
    for &h in &PAPER_HURST {
        let label = format!("H={h} K1(1) - (H+3/2)<K1,1>");
        match ModelParams::new(m.xi0, m.eta, m.rho, h).and_then(|p| skew_constants(&p)) {
            Ok(c) => checks.push(Check::within(label, c.k1 - (h + 1.5) * c.k1_mean, 0.0, th.k1_identity_tol)),
            Err(_) => checks.push(failed(label)),
        }
    }
    for &h in &PAPER_HURST {
        for &y in &[-0.3, -0.2, -0.1, 0.1, 0.2, 0.3] {
            let label = format!("H={h} y={y} Lambda_8 <= Lambda_4 <= Lambda_2 (measured: Lambda_4 - Lambda_8)");
            let lambdas: Result<Vec<f64>, _> = ModelParams::new(m.xi0, m.eta, m.rho, h).and_then(|p| {
                [2, 4, 8]
                    .iter()
                    .map(|&n| minimize_rate(y, &p, &RitzConfig::default().with_basis(n)).map(|s| s.lambda))
                    .collect()
            });
            match lambdas {
                Ok(l) => checks.push(Check::holds(label, l[1] - l[2], 0.0, 0.0, l[2] <= l[1] && l[1] <= l[0])),
                Err(_) => checks.push(failed(label)),
            }
        }
    }
    Criterion { id: 4, title: "rate-function analytics", checks }
}

pub fn limit_convergence(data: &DeskData) -> Criterion {
    let ys: Vec<f64> = (-4..=4).map(|i| 0.05 * i as f64).collect();
    let m = &data.config.model;
    let cfg = data.config.ritz_config();
    let errors = |h: f64, ts: &[f64]| -> Result<Vec<f64>> {
        let p = ModelParams::new(m.xi0, m.eta, m.rho, h)?;
        let sol = limiting_smile(&ys, &p, &cfg, false)?;
        Ok(ts
            .iter()
            .map(|&t| rescaled_smile_error(data.at(h, t), &sol))
            .collect::<Result<Vec<_>, _>>()?)
    };
    let mut checks = Vec::new();
    let ts = [0.4, 0.2, 0.1, 0.05];
    match errors(0.3, &ts) {
        Ok(e) => {
            for i in 1..e.len() {
                checks.push(Check::holds(
                    format!("H=0.3 sup error at T={} below T={} (target: previous error)", ts[i], ts[i - 1]),
                    e[i],
                    e[i - 1],
                    0.0,
                    e[i] < e[i - 1],
                ));
            }
        }
        Err(_) => checks.push(failed("H=0.3 rescaled smile errors")),
    }
    match (errors(0.1, &[0.05]), errors(0.5, &[0.05])) {
        (Ok(a), Ok(b)) => checks.push(Check::holds(
            "T=0.05 sup error H=0.1 exceeds H=0.5 (target: H=0.5 error)",
            a[0],
            b[0],
            0.0,
            a[0] > b[0],
        )),
        _ => checks.push(failed("T=0.05 rescaled smile errors")),
    }
    Criterion { id: 5, title: "rescaled local vol converges to its limit", checks }
}

pub fn harmonic_dichotomy(data: &DeskData, th: &Thresholds) -> Criterion {
    let k = -0.15;
    let mut checks = Vec::new();
    match harmonic_point(data.at(0.5, 0.05), k) {
        Ok(p) => checks.push(Check::holds(
            "H=0.5 T=0.05 k=-0.15 |sigma_BS/H - 1|",
            (p.ratio - 1.0).abs(),
            0.0,
            th.harmonic_diffusive_tol,
            (p.ratio - 1.0).abs() < th.harmonic_diffusive_tol,
        )),
        Err(_) => checks.push(failed("H=0.5 harmonic point")),
    }
    match harmonic_point(data.at(0.1, 0.05), k) {
        Ok(p) => {
            let gap = p.ratio - 1.0;
            checks.push(Check::holds(
                "H=0.1 T=0.05 k=-0.15 sigma_BS/H - 1 (minimum) with CI excluding 0",
                gap,
                th.harmonic_rough_gap,
                p.ci,
                gap > th.harmonic_rough_gap && gap - p.ci > 0.0,
            ))
        }
        Err(_) => checks.push(failed("H=0.1 harmonic point")),
    }
    Criterion { id: 6, title: "harmonic-mean formula holds only for H=1/2", checks }
}

pub fn deterministic_numerics(th: &Thresholds) -> Criterion {
    let mut checks = Vec::new();

    let t: f64 = 0.25;
    let mut worst: f64 = 0.0;
    let mut iv_ok = true;
    for i in 0..=20 {
        let k = -0.5 + 0.05 * i as f64;
        for j in 0..=19 {
            let sigma = 0.05 + 0.05 * j as f64;
            let kind = OptionKind::out_of_the_money(k);
            let price = bs_price(kind, k, sigma * t.sqrt());
            match implied_vol_for(kind, price, k, t) {
                Ok(s) => worst = worst.max((s - sigma).abs()),
                Err(_) => iv_ok = false,
            }
        }
    }
    checks.push(Check::holds(
        "implied-vol round trip max error",
        worst,
        0.0,
        th.implied_round_trip_tol,
        iv_ok && worst <= th.implied_round_trip_tol,
    ));

    for &h in &PAPER_HURST {
        let label = format!("H={h} N=256 Cholesky round trip max error / max diagonal");
        let result = Hurst::new(h)
            .and_then(|hu| SimulationGrid::new(1.0, 256).map(|g| (hu, g)))
            .and_then(|(hu, g)| build_covariance(&g, hu))
            .and_then(|cov| factorize(&cov).map(|l| (cov, l)));
        match result {
            Ok((cov, l)) => {
                let rec = l.reconstruct();
                let err = rec.iter().zip(cov.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                let rel = err / cov.max_diagonal();
                checks.push(Check::holds(label, rel, 0.0, th.cholesky_tol, rel <= th.cholesky_tol));
            }
            Err(_) => checks.push(failed(label)),
        }
    }

    for &h in &[0.1, 0.3] {
        let label = format!("H={h} Var(W_hat_1) at M=1e5, deviation in standard errors");
        let run = || -> roughlv::Result<f64> {
            let grid = SimulationGrid::new(1.0, 64)?;
            let sampler = Sampler::new(grid, Hurst::new(h)?)?;
            let sq: Vec<f64> = sampler
                .sample_batch(11, 100_000)
                .map(|d| d.w_hat[63] * d.w_hat[63])
                .collect();
            let se = (variance(&sq) / sq.len() as f64).sqrt();
            Ok((mean(&sq) - 1.0) / se)
        };
        match run() {
            Ok(z) => checks.push(Check::holds(label, z, 0.0, th.variance_se, z.abs() <= th.variance_se)),
            Err(_) => checks.push(failed(label)),
        }
    }

    let q = CompositeRule::new(0.0, 1.0, 16, 16);
    let mut worst: f64 = 0.0;
    for i in 1..=9 {
        for j in 1..=9 {
            let g = q.integrate(|t| fourier_basis(i, t) * fourier_basis(j, t));
            worst = worst.max((g - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    checks.push(Check::within("Fourier basis Gram matrix max deviation", worst, 0.0, th.basis_tol));

    let label = "batch CSV bytes identical across reruns and thread counts (measured: 1 if identical)";
    let render = |threads: usize| -> Option<Vec<u8>> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().ok()?;
        pool.install(|| {
            let p = ModelParams::reference(0.1).ok()?;
            let g = SimulationGrid::new(0.1, 32).ok()?;
            let b = simulate_batch(&p, &g, 2024, 5000).ok()?;
            let mut out = Vec::new();
            b.write_csv(&mut out).ok()?;
            Some(out)
        })
    };
    let same = match (render(1), render(1), render(3)) {
        (Some(a), Some(b), Some(c)) => a == b && a == c,
        _ => false,
    };
    checks.push(Check::holds(label, if same { 1.0 } else { 0.0 }, 1.0, 0.0, same));

    Criterion { id: 7, title: "deterministic numerics", checks }
}

/// Runs every criterion; Monte Carlo criteria use batches built from `config`.
pub fn run(config: &ExperimentConfig, th: &Thresholds) -> Result<Report> {
    let data = DeskData::simulate(config)?;
    Ok(run_on(&data, th))
}

pub fn run_on(data: &DeskData, th: &Thresholds) -> Report {
    Report {
        criteria: vec![
            skew_ratio_rule(data, th),
            skew_power_law(data, th),
            estimator_agreement(data, th),
            rate_function_analytics(&data.config, th),
            limit_convergence(data),
            harmonic_dichotomy(data, th),
            deterministic_numerics(th),
        ],
    }
}

//! Rough Bergomi variance paths and forward-Euler log-price samples.

use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fbm::{GaussianDraw, Hurst, Sampler, SimulationGrid};

/// Rough Bergomi parameters. The spot is fixed to `S0 = 1`, rates to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    xi0: f64,
    eta: f64,
    rho: f64,
    hurst: Hurst,
}

impl ModelParams {
    pub const SPOT: f64 = 1.0;

    pub fn new(xi0: f64, eta: f64, rho: f64, hurst: f64) -> Result<Self> {
        if !(xi0.is_finite() && xi0 > 0.0) {
            return Err(Error::InvalidParameter(format!("xi0 must be positive, got {xi0}")));
        }
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(Error::InvalidParameter(format!("eta must be non-negative, got {eta}")));
        }
        if !(rho.is_finite() && rho > -1.0 && rho < 1.0) {
            return Err(Error::InvalidParameter(format!("rho must lie in (-1, 1), got {rho}")));
        }
        let hurst = Hurst::new(hurst)?;
        Ok(Self { xi0, eta, rho, hurst })
    }

    /// The experiment setup `ξ0 = 0.235², η = 1, ρ = -0.7`.
    pub fn reference(hurst: f64) -> Result<Self> {
        Self::new(0.235 * 0.235, 1.0, -0.7, hurst)
    }

    pub fn xi0(&self) -> f64 {
        self.xi0
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `√(1 - ρ²)`.
    pub fn rho_bar(&self) -> f64 {
        (1.0 - self.rho * self.rho).sqrt()
    }

    pub fn hurst(&self) -> Hurst {
        self.hurst
    }

    /// `σ0 = √ξ0`.
    pub fn sigma0(&self) -> f64 {
        self.xi0.sqrt()
    }

    /// Time-homogeneous volatility function `σ(x) = √ξ0 · e^{ηx/2}`.
    pub fn sigma(&self, x: f64) -> f64 {
        self.sigma0() * (0.5 * self.eta * x).exp()
    }

    pub fn with_rho(self, rho: f64) -> Result<Self> {
        Self::new(self.xi0, self.eta, rho, self.hurst.value())
    }

    pub fn with_eta(self, eta: f64) -> Result<Self> {
        Self::new(self.xi0, eta, self.rho, self.hurst.value())
    }
}

/// Terminal statistics of one simulated path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    pub x_t: f64,
    pub v_t: f64,
    /// Left-point `∫_0^T V_s ds`.
    pub int_v: f64,
    /// Left-point `∫_0^T √V_s dW_s`.
    pub int_sqrtv_dw: f64,
}

/// `V_{t_k} = ξ0 exp(η Ŵ_{t_k} - η² t_k^{2H} / 2)` for `k = 0..=N`, with `Ŵ_0 = 0`.
pub fn variance_path(draw: &GaussianDraw, params: &ModelParams, grid: &SimulationGrid) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(grid.steps() + 1);
    fill_variance_path(draw, params, grid, &mut out)?;
    Ok(out)
}

fn fill_variance_path(
    draw: &GaussianDraw,
    params: &ModelParams,
    grid: &SimulationGrid,
    out: &mut Vec<f64>,
) -> Result<()> {
    let n = grid.steps();
    if draw.w_hat.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: draw.w_hat.len() });
    }
    let eta = params.eta();
    let two_h = 2.0 * params.hurst().value();
    out.clear();
    out.push(params.xi0());
    for k in 1..=n {
        let t = grid.time(k);
        out.push(params.xi0() * (eta * draw.w_hat[k - 1] - 0.5 * eta * eta * t.powf(two_h)).exp());
    }
    Ok(())
}

/// Forward Euler log-price with `V_{t_k}` frozen on `[t_k, t_{k+1}]`.
pub fn euler_logprice(
    draw: &GaussianDraw,
    variance: &[f64],
    params: &ModelParams,
    grid: &SimulationGrid,
) -> Result<PathSample> {
    let n = grid.steps();
    if variance.len() != n + 1 {
        return Err(Error::DimensionMismatch { expected: n + 1, found: variance.len() });
    }
    if draw.w.len() != n || draw.w_bar_incr.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: draw.w.len().min(draw.w_bar_incr.len()) });
    }
    let dt = grid.dt();
    let (rho, rho_bar) = (params.rho(), params.rho_bar());
    let mut sum_v = 0.0;
    let mut mart_w = 0.0;
    let mut mart_bar = 0.0;
    let mut w_prev = 0.0;
    for k in 0..n {
        let v = variance[k];
        let sv = v.sqrt();
        let dw = draw.w[k] - w_prev;
        w_prev = draw.w[k];
        sum_v += v;
        mart_w += sv * dw;
        mart_bar += sv * draw.w_bar_incr[k];
    }
    let int_v = dt * sum_v;
    Ok(PathSample {
        x_t: -0.5 * int_v + rho * mart_w + rho_bar * mart_bar,
        v_t: variance[n],
        int_v,
        int_sqrtv_dw: mart_w,
    })
}

/// `M` samples generated from one `(params, grid, seed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    pub samples: Vec<PathSample>,
    pub params: ModelParams,
    pub grid: SimulationGrid,
    pub seed: u64,
}

impl PathBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn maturity(&self) -> f64 {
        self.grid.maturity()
    }

    /// Strike rescaling factor `T^{1/2 - H}`.
    pub fn strike_scale(&self) -> f64 {
        self.maturity().powf(0.5 - self.params.hurst().value())
    }

    /// Writes the batch as CSV with a `#`-prefixed header recording its provenance.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let p = &self.params;
        writeln!(out, "# xi0={}", p.xi0())?;
        writeln!(out, "# eta={}", p.eta())?;
        writeln!(out, "# rho={}", p.rho())?;
        writeln!(out, "# hurst={}", p.hurst().value())?;
        writeln!(out, "# maturity={}", self.grid.maturity())?;
        writeln!(out, "# steps={}", self.grid.steps())?;
        writeln!(out, "# seed={}", self.seed)?;
        writeln!(out, "index,x_T,v_T,int_v,int_sqrtv_dW")?;
        for (i, s) in self.samples.iter().enumerate() {
            writeln!(out, "{},{},{},{},{}", i, s.x_t, s.v_t, s.int_v, s.int_sqrtv_dw)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut header = std::collections::BTreeMap::new();
        let mut samples = Vec::new();
        let mut seen_columns = false;
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest
                    .trim()
                    .split_once('=')
                    .ok_or_else(|| Error::Parse(format!("line {}: bad header", lineno + 1)))?;
                header.insert(k.trim().to_string(), v.trim().to_string());
                continue;
            }
            if !seen_columns {
                if line != "index,x_T,v_T,int_v,int_sqrtv_dW" {
                    return Err(Error::Parse(format!("line {}: unexpected columns", lineno + 1)));
                }
                seen_columns = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(Error::Parse(format!("line {}: expected 5 fields", lineno + 1)));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
            };
            let idx: usize = fields[0]
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            if idx != samples.len() {
                return Err(Error::Parse(format!("line {}: index out of order", lineno + 1)));
            }
            samples.push(PathSample {
                x_t: num(fields[1])?,
                v_t: num(fields[2])?,
                int_v: num(fields[3])?,
                int_sqrtv_dw: num(fields[4])?,
            });
        }
        let get = |k: &str| -> Result<&String> {
            header
                .get(k)
                .ok_or_else(|| Error::Parse(format!("missing header field {k}")))
        };
        let f = |k: &str| -> Result<f64> {
            get(k)?
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("header {k}: {e}")))
        };
        let params = ModelParams::new(f("xi0")?, f("eta")?, f("rho")?, f("hurst")?)?;
        let steps: usize = get("steps")?
            .parse()
            .map_err(|e| Error::Parse(format!("header steps: {e}")))?;
        let seed: u64 = get("seed")?
            .parse()
            .map_err(|e| Error::Parse(format!("header seed: {e}")))?;
        let grid = SimulationGrid::new(f("maturity")?, steps)?;
        if samples.is_empty() {
            return Err(Error::Parse("batch contains no samples".into()));
        }
        Ok(Self { samples, params, grid, seed })
    }
}

const CHUNK: usize = 1024;

/// Simulates `m` paths; output is a pure function of `(params, grid, seed, m)`.
pub fn simulate_batch(params: &ModelParams, grid: &SimulationGrid, seed: u64, m: usize) -> Result<PathBatch> {
    let sampler = Sampler::new(*grid, params.hurst())?;
    simulate_with_sampler(&sampler, params, seed, m)
}

/// Same as [`simulate_batch`] with a prebuilt sampler.
pub fn simulate_with_sampler(sampler: &Sampler, params: &ModelParams, seed: u64, m: usize) -> Result<PathBatch> {
    if m == 0 {
        return Err(Error::InvalidParameter("batch size must be at least 1".into()));
    }
    let grid = *sampler.grid();
    let n_chunks = m.div_ceil(CHUNK);
    let chunks: Vec<Vec<PathSample>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| -> Result<Vec<PathSample>> {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(m);
            let mut draw = GaussianDraw::zeros(grid.steps());
            let mut scratch = Vec::new();
            let mut v = Vec::with_capacity(grid.steps() + 1);
            let mut out = Vec::with_capacity(hi - lo);
            for i in lo..hi {
                sampler.fill(seed, i as u64, &mut scratch, &mut draw);
                fill_variance_path(&draw, params, &grid, &mut v)?;
                out.push(euler_logprice(&draw, &v, params, &grid)?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let samples = chunks.into_iter().flatten().collect();
    Ok(PathBatch { samples, params: *params, grid, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{mean, variance};

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(0.0, 1.0, 0.0, 0.1).is_err());
        assert!(ModelParams::new(0.04, -1.0, 0.0, 0.1).is_err());
        assert!(ModelParams::new(0.04, 1.0, 1.0, 0.1).is_err());
        assert!(ModelParams::new(0.04, 1.0, -1.0, 0.1).is_err());
        assert!(ModelParams::new(0.04, 1.0, 0.0, 0.6).is_err());
        let p = ModelParams::reference(0.1).unwrap();
        assert!((p.rho().powi(2) + p.rho_bar().powi(2) - 1.0).abs() < 1e-15);
        assert!((p.sigma(0.0) - 0.235).abs() < 1e-15);
    }

    #[test]
    fn zero_eta_gives_flat_variance() {
        let grid = SimulationGrid::new(0.5, 8).unwrap();
        let p = ModelParams::new(0.04, 0.0, -0.5, 0.2).unwrap();
        let sampler = Sampler::new(grid, p.hurst()).unwrap();
        let d = sampler.draw(1, 0);
        let v = variance_path(&d, &p, &grid).unwrap();
        assert_eq!(v.len(), 9);
        assert!(v.iter().all(|&x| x == 0.04));
    }

    #[test]
    fn zero_path_gives_drift_only_variance() {
        let grid = SimulationGrid::new(1.0, 4).unwrap();
        let p = ModelParams::new(0.04, 1.5, -0.5, 0.2).unwrap();
        let d = GaussianDraw::zeros(4);
        let v = variance_path(&d, &p, &grid).unwrap();
        assert_eq!(v[0], 0.04);
        for k in 1..=4 {
            let t = grid.time(k);
            let want = 0.04 * (-0.5 * 1.5 * 1.5 * t.powf(0.4)).exp();
            assert!((v[k] - want).abs() < 1e-16);
        }
    }

    #[test]
    fn single_step_formula() {
        let grid = SimulationGrid::new(0.25, 1).unwrap();
        let p = ModelParams::new(0.09, 0.0, -0.6, 0.3).unwrap();
        let d = GaussianDraw { w: vec![0.3], w_hat: vec![0.1], w_bar_incr: vec![-0.2] };
        let v = variance_path(&d, &p, &grid).unwrap();
        let s = euler_logprice(&d, &v, &p, &grid).unwrap();
        let want = -0.25 * 0.09 / 2.0 + 0.3 * (-0.6 * 0.3 + 0.8 * -0.2);
        assert!((s.x_t - want).abs() < 1e-15);
        assert!((s.int_v - 0.25 * 0.09).abs() < 1e-16);
        assert!((s.int_sqrtv_dw - 0.3 * 0.3).abs() < 1e-16);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let grid = SimulationGrid::new(1.0, 4).unwrap();
        let p = ModelParams::reference(0.1).unwrap();
        let d = GaussianDraw::zeros(3);
        assert!(matches!(variance_path(&d, &p, &grid), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn batch_is_deterministic_and_sized() {
        let grid = SimulationGrid::new(0.1, 16).unwrap();
        let p = ModelParams::reference(0.1).unwrap();
        let a = simulate_batch(&p, &grid, 5, 1).unwrap();
        assert_eq!(a.len(), 1);
        let b = simulate_batch(&p, &grid, 5, 3000).unwrap();
        let c = simulate_batch(&p, &grid, 5, 3000).unwrap();
        assert_eq!(b, c);
        assert_eq!(a.samples[0], b.samples[0]);
        assert!(b.samples.iter().all(|s| s.v_t > 0.0 && s.int_v > 0.0));
        assert!(simulate_batch(&p, &grid, 5, 0).is_err());
    }

    #[test]
    fn martingale_and_lognormal_moments() {
        let grid = SimulationGrid::new(0.2, 32).unwrap();
        let p = ModelParams::reference(0.1).unwrap();
        let m = 40_000;
        let b = simulate_batch(&p, &grid, 99, m).unwrap();
        let v: Vec<f64> = b.samples.iter().map(|s| s.v_t).collect();
        let se = (variance(&v) / m as f64).sqrt();
        assert!((mean(&v) - p.xi0()).abs() < 5.0 * se);
        let c: Vec<f64> = b.samples.iter().map(|s| s.x_t + 0.5 * s.int_v).collect();
        let se = (variance(&c) / m as f64).sqrt();
        assert!(mean(&c).abs() < 5.0 * se);
        let e: Vec<f64> = b.samples.iter().map(|s| s.x_t.exp()).collect();
        let se = (variance(&e) / m as f64).sqrt();
        assert!((mean(&e) - 1.0).abs() < 5.0 * se);
    }

    #[test]
    fn csv_round_trip() {
        let grid = SimulationGrid::new(0.1, 8).unwrap();
        let p = ModelParams::reference(0.3).unwrap();
        let b = simulate_batch(&p, &grid, 17, 50).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let back = PathBatch::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, b);
        assert!(PathBatch::read_csv("index,x_T\n".as_bytes()).is_err());
    }
}

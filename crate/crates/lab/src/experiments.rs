//! One function per subcommand. Batches are simulated lazily and cached per
//! `(H, T)`; every batch uses the configured seed, so maturities and Hurst
//! indices share their Gaussian innovations.

use crate::config::ExperimentConfig;
use crate::output::Stage;
use crate::row;
use anyhow::{Context, Result};
use roughlv::asymptotics::{
    dupire_check, harmonic_failure_report, ldp_diagnostic, rescaled_smile, skew_ratio_curve, extrapolate_local_vol,
};
use roughlv::black_scholes::{fd_skew_bs, implied_point, implied_skew};
use roughlv::markov_projection::{fd_skew_loc, local_skew, local_vol_kernel, local_vol_ratio, silverman_delta};
use roughlv::rate_function::{limiting_smile, skew_constants, RateSolution};
use roughlv::{simulate_batch, PathBatch, SimulationGrid};
use std::collections::BTreeMap;
use std::io::Write;

pub struct Lab {
    pub config: ExperimentConfig,
    batches: BTreeMap<(u64, u64), PathBatch>,
}

impl Lab {
    pub fn new(config: ExperimentConfig) -> Self {
        Self { config, batches: BTreeMap::new() }
    }

    fn key(h: f64, t: f64) -> (u64, u64) {
        (h.to_bits(), t.to_bits())
    }

    pub fn ensure(&mut self, h: f64, t: f64) -> Result<()> {
        let key = Self::key(h, t);
        if !self.batches.contains_key(&key) {
            let params = self.config.params(h)?;
            let grid = SimulationGrid::new(t, self.config.grid.steps)?;
            let b = simulate_batch(&params, &grid, self.config.seed, self.config.grid.samples)
                .with_context(|| format!("simulating H={h}, T={t}"))?;
            self.batches.insert(key, b);
        }
        Ok(())
    }

    pub fn batch(&mut self, h: f64, t: f64) -> Result<&PathBatch> {
        self.ensure(h, t)?;
        Ok(&self.batches[&Self::key(h, t)])
    }

    /// Batches at every configured maturity for `h`, in maturity order.
    pub fn term_structure(&mut self, h: f64) -> Result<Vec<PathBatch>> {
        let ts = self.config.grid.maturities.clone();
        self.term_structure_at(h, &ts)
    }

    pub fn term_structure_at(&mut self, h: f64, ts: &[f64]) -> Result<Vec<PathBatch>> {
        for &t in ts {
            self.ensure(h, t)?;
        }
        Ok(ts.iter().map(|&t| self.batches[&Self::key(h, t)].clone()).collect())
    }

    pub fn limiting_smile(&self, h: f64) -> Result<Vec<RateSolution>> {
        let params = self.config.params(h)?;
        Ok(limiting_smile(&self.config.smile.y_grid, &params, &self.config.ritz_config(), self.config.ritz.parallel)?)
    }

    fn hursts(&self) -> Vec<f64> {
        self.config.model.hurst.clone()
    }
}

/// Least-squares slope of `log|v|` against `log t`.
pub fn loglog_slope(ts: &[f64], values: &[f64]) -> f64 {
    let xs: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.abs().ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

pub fn simulate(lab: &mut Lab, stage: &mut Stage) -> Result<()> {
    for h in lab.hursts() {
        for t in lab.config.grid.maturities.clone() {
            let b = lab.batch(h, t)?;
            let mut w = stage.create(&format!("batch_H{h}_T{t}.csv"))?;
            b.write_csv(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

pub fn smile(lab: &mut Lab, stage: &mut Stage) -> Result<()> {
    let mut w = stage.create("smile.csv")?;
    writeln!(w, "hurst,t,k,sigma_bs,ci_bs,sigma_loc_kernel,ci_kernel,kernel_reliable,sigma_loc_ratio,ci_ratio")?;
    let strikes = lab.config.smile.strikes.clone();
    let delta_override = lab.config.estimators.bandwidth_delta;
    for h in lab.hursts() {
        for b in lab.term_structure(h)? {
            let delta = delta_override.unwrap_or_else(|| silverman_delta(&b));
            for &k in &strikes {
                let bs = implied_point(&b, k)?;
                let ker = local_vol_kernel(&b, k, delta)?;
                let rat = local_vol_ratio(&b, k)?;
                row!(w, h, b.maturity(), k, bs.sigma_bs, bs.ci, ker.sigma_loc, ker.ci, ker.reliable, rat.sigma_loc, rat.ci)?;
            }
        }
    }
    w.flush()?;

    let mut w = stage.create("dupire.csv")?;
    writeln!(w, "hurst,t,k,sigma_dupire,sigma_loc_ratio,ci_ratio")?;
    let t = lab.config.dupire.maturity;
    let opts = lab.config.dupire_options();
    let ts = [t * (1.0 - opts.dt_fraction), t, t * (1.0 + opts.dt_fraction)];
    for h in lab.hursts() {
        let batches = lab.term_structure_at(h, &ts)?;
        for &k in &lab.config.dupire.strikes {
            let c = dupire_check(&batches, t, k, &opts)?;
            let d = c.dupire.sigma_loc.map_or("nan".to_string(), |v| v.to_string());
            row!(w, h, t, k, d, c.ratio, c.ratio_ci)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn skew_term(lab: &mut Lab, stage: &mut Stage) -> Result<()> {
    let fd_y = lab.config.smile.fd_y;
    let mut w = stage.create("skew_term.csv")?;
    writeln!(w, "hurst,t,skew_bs,ci_bs,skew_loc,ci_loc,fd_skew_bs,fd_ci_bs,fd_skew_loc,fd_ci_loc")?;
    let mut slopes = String::from("hurst,slope_bs,slope_loc,target\n");
    for h in lab.hursts() {
        let batches = lab.term_structure(h)?;
        let mut bs_vals = Vec::new();
        let mut loc_vals = Vec::new();
        for b in &batches {
            let bs = implied_skew(b, 0.0)?;
            let loc = local_skew(b, 0.0)?;
            let fbs = fd_skew_bs(b, fd_y)?;
            let floc = fd_skew_loc(b, fd_y)?;
            row!(w, h, b.maturity(), bs.value, bs.ci, loc.value, loc.ci, fbs.value, fbs.ci, floc.value, floc.ci)?;
            bs_vals.push(bs.value);
            loc_vals.push(loc.value);
        }
        let ts: Vec<f64> = batches.iter().map(|b| b.maturity()).collect();
        slopes.push_str(&format!(
            "{h},{},{},{}\n",
            loglog_slope(&ts, &bs_vals),
            loglog_slope(&ts, &loc_vals),
            h - 0.5
        ));
    }
    w.flush()?;
    stage.write("skew_slopes.csv", &slopes)
}

pub fn skew_ratio(lab: &mut Lab, stage: &mut Stage) -> Result<()> {
    let method = lab.config.skew_method();
    let mut w = stage.create("skew_ratio.csv")?;
    writeln!(w, "hurst,t,ratio,ci,target,defined")?;
    for h in lab.hursts() {
        let batches = lab.term_structure(h)?;
        for p in skew_ratio_curve(&batches, method)? {
            row!(w, h, p.t, p.ratio, p.ci, p.target, p.defined)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn rescaled(lab: &mut Lab, stage: &mut Stage) -> Result<()> {
    let mut w = stage.create("rescaled_smile.csv")?;
    writeln!(w, "hurst,t,y,sigma_loc,ci,sigma_limit")?;
    for h in lab.hursts() {
        let sol = lab.limiting_smile(h)?;
        for b in lab.term_structure(h)? {
            for p in rescaled_smile(&b, &sol)? {
                row!(w, h, p.t, p.y, p.sigma_loc, p.ci, p.sigma_limit)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn rate_function(lab: &mut Lab, stage: &mut Stage) -> Result<()> {
    let n = lab.config.ritz.n_basis;
    let mut w = stage.create("rate_function.csv")?;
    let coeff_names: Vec<String> = (1..=n).map(|i| format!("a{i}")).collect();
    writeln!(w, "hurst,y,lambda,sigma_limit,chi,h_hat_1,{}", coeff_names.join(","))?;
    let mut constants = String::new();
    for h in lab.hursts() {
        for s in lab.limiting_smile(h)? {
            let coeffs: Vec<String> = s.coeffs.iter().map(|a| a.to_string()).collect();
            writeln!(w, "{h},{},{},{},{},{},{}", s.y, s.lambda, s.sigma_limit, s.chi, s.h_hat_1, coeffs.join(","))?;
        }
        let c = skew_constants(&lab.config.params(h)?)?;
        constants.push_str(&format!(
            "[H={h}]\nk1 = {}\nk1_mean = {}\nratio = {}\nsigma_slope = {}\n",
            c.k1, c.k1_mean, c.ratio, c.sigma_slope
        ));
    }
    w.flush()?;
    stage.write("skew_constants.txt", &constants)
}

pub fn harmonic(lab: &mut Lab, stage: &mut Stage) -> Result<()> {
    let strikes = lab.config.smile.harmonic_strikes.clone();
    let mut w = stage.create("harmonic.csv")?;
    writeln!(w, "hurst,t,k,sigma_bs,harmonic,ratio,ci")?;
    for h in lab.hursts() {
        let batches = lab.term_structure(h)?;
        for p in harmonic_failure_report(&batches, &strikes)? {
            row!(w, h, p.t, p.k, p.sigma_bs, p.harmonic, p.ratio, p.ci)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn ldp(lab: &mut Lab, stage: &mut Stage) -> Result<()> {
    let ys = lab.config.smile.ldp_y.clone();
    let mut w = stage.create("ldp.csv")?;
    writeln!(w, "hurst,t,y,value,lambda,tail_count")?;
    for h in lab.hursts() {
        let batches = lab.term_structure(h)?;
        let problem = roughlv::rate_function::RateProblem::new(lab.config.params(h)?, lab.config.ritz_config())?;
        for &y in &ys {
            let lambda = problem.solve(y, None)?.lambda;
            let report = ldp_diagnostic(&batches, y, Some(lambda));
            for t in &report.dropped {
                eprintln!("warning: no sample beyond y={y} at H={h}, T={t}; point dropped");
            }
            for p in report.points {
                row!(w, h, p.t, p.y, p.value, lambda, p.tail_count)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn extrapolate(lab: &mut Lab, stage: &mut Stage) -> Result<()> {
    let mut w = stage.create("extrapolate.csv")?;
    writeln!(w, "hurst,t,k,y,sigma_loc")?;
    for h in lab.hursts() {
        let sol = lab.limiting_smile(h)?;
        let hurst = lab.config.params(h)?.hurst();
        for &t in &lab.config.extrapolate.maturities {
            for &k in &lab.config.extrapolate.strikes {
                let s = extrapolate_local_vol(&sol, hurst, t, k)?;
                row!(w, h, t, k, k / t.powf(0.5 - h), s)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

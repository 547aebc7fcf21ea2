//! Experiment configuration: built-in profiles, TOML overlays and validation.

use anyhow::{bail, ensure, Context, Result};
use clap::ValueEnum;
use roughlv::asymptotics::{DupireOptions, SkewMethod};
use roughlv::rate_function::RitzConfig;
use roughlv::ModelParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Desk,
    Paper,
    Smoke,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub grid: GridSection,
    pub smile: SmileSection,
    pub estimators: EstimatorSection,
    pub ritz: RitzSection,
    pub extrapolate: ExtrapolateSection,
    pub dupire: DupireSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub xi0: f64,
    pub eta: f64,
    pub rho: f64,
    pub hurst: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub samples: usize,
    pub steps: usize,
    pub maturities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmileSection {
    /// Log-moneyness points of the implied and local smiles.
    pub strikes: Vec<f64>,
    /// Rescaled log-moneyness `y = k / t^{1/2-H}` for limiting-smile work.
    pub y_grid: Vec<f64>,
    /// Rescaled offset of the finite-difference skews.
    pub fd_y: f64,
    pub harmonic_strikes: Vec<f64>,
    pub ldp_y: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkewChoice {
    Atm,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    /// Kernel precision `δ`; Silverman's rule when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_delta: Option<f64>,
    pub skew: SkewChoice,
    pub harmonic_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RitzSection {
    pub n_basis: usize,
    pub quad_nodes: usize,
    pub tol: f64,
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtrapolateSection {
    pub maturities: Vec<f64>,
    pub strikes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DupireSection {
    pub maturity: f64,
    pub strikes: Vec<f64>,
    pub dt_fraction: f64,
    pub dk: f64,
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn round(xs: Vec<f64>) -> Vec<f64> {
    xs.into_iter().map(|x| (x * 1e10).round() / 1e10).collect()
}

pub const DESK_MATURITIES: [f64; 6] = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5];
pub const PAPER_HURST: [f64; 3] = [0.1, 0.3, 0.5];

impl ExperimentConfig {
    pub fn profile(p: Profile) -> Self {
        let desk = Self {
            seed: 42,
            model: ModelSection { xi0: 0.235 * 0.235, eta: 1.0, rho: -0.7, hurst: PAPER_HURST.to_vec() },
            grid: GridSection { samples: 200_000, steps: 256, maturities: DESK_MATURITIES.to_vec() },
            smile: SmileSection {
                strikes: round(linspace(-0.1, 0.1, 11)),
                y_grid: round(linspace(-0.3, 0.3, 13)),
                fd_y: 0.05,
                harmonic_strikes: round(linspace(-0.2, 0.2, 9)),
                ldp_y: vec![0.1, 0.2, 0.3],
            },
            estimators: EstimatorSection { bandwidth_delta: None, skew: SkewChoice::Atm, harmonic_step: 0.01 },
            ritz: RitzSection { n_basis: 8, quad_nodes: 256, tol: 1e-8, parallel: false },
            extrapolate: ExtrapolateSection {
                maturities: vec![0.01, 0.02, 0.04],
                strikes: round(linspace(-0.04, 0.04, 9)),
            },
            dupire: DupireSection { maturity: 0.2, strikes: vec![-0.05, 0.0, 0.05], dt_fraction: 0.1, dk: 0.01 },
        };
        match p {
            Profile::Desk => desk,
            Profile::Paper => Self {
                grid: GridSection { samples: 1_500_000, steps: 500, ..desk.grid },
                ..desk
            },
            Profile::Smoke => Self {
                model: ModelSection { eta: 0.0, hurst: vec![0.1, 0.5], ..desk.model },
                grid: GridSection { samples: 20_000, steps: 32, maturities: vec![0.05, 0.1] },
                smile: SmileSection {
                    strikes: round(linspace(-0.05, 0.05, 5)),
                    y_grid: round(linspace(-0.2, 0.2, 5)),
                    harmonic_strikes: vec![-0.05, 0.0, 0.05],
                    ldp_y: vec![0.1],
                    ..desk.smile
                },
                ritz: RitzSection { n_basis: 4, ..desk.ritz },
                extrapolate: ExtrapolateSection {
                    maturities: vec![0.01, 0.02, 0.04],
                    strikes: round(linspace(-0.02, 0.02, 5)),
                },
                dupire: DupireSection { maturity: 0.1, strikes: vec![0.0], ..desk.dupire },
                ..desk
            },
        }
    }

    /// The profile overlaid with the keys present in `text`. Unknown keys are rejected.
    pub fn from_toml_over(profile: Profile, text: &str) -> Result<Self> {
        let mut base = toml::Value::try_from(Self::profile(profile)).context("serializing profile")?;
        let overlay: toml::Value = toml::from_str(text).context("parsing configuration")?;
        merge(&mut base, overlay);
        let cfg: Self = base.try_into().context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(profile: Profile, path: Option<&Path>) -> Result<Self> {
        match path {
            None => {
                let cfg = Self::profile(profile);
                cfg.validate()?;
                Ok(cfg)
            }
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::from_toml_over(profile, &text).with_context(|| format!("in config {}", p.display()))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.model.hurst.is_empty(), "model.hurst must list at least one value");
        for &h in &self.model.hurst {
            self.params(h)?;
        }
        ensure!(self.grid.samples >= 2, "grid.samples must be at least 2");
        ensure!(self.grid.steps >= 1, "grid.steps must be at least 1");
        ensure!(!self.grid.maturities.is_empty(), "grid.maturities must not be empty");
        ensure_sorted_positive("grid.maturities", &self.grid.maturities)?;
        ensure_sorted_positive("extrapolate.maturities", &self.extrapolate.maturities)?;
        for (name, xs) in [
            ("smile.strikes", &self.smile.strikes),
            ("smile.y_grid", &self.smile.y_grid),
            ("smile.harmonic_strikes", &self.smile.harmonic_strikes),
            ("smile.ldp_y", &self.smile.ldp_y),
            ("extrapolate.strikes", &self.extrapolate.strikes),
            ("dupire.strikes", &self.dupire.strikes),
        ] {
            ensure!(xs.iter().all(|x| x.is_finite()), "{name} must be finite");
        }
        ensure!(
            self.smile.y_grid.iter().all(|y| y.abs() <= 0.5),
            "smile.y_grid must stay within |y| <= 0.5"
        );
        ensure!(self.smile.fd_y > 0.0, "smile.fd_y must be positive");
        if let Some(d) = self.estimators.bandwidth_delta {
            ensure!(d > 0.0, "estimators.bandwidth_delta must be positive");
        }
        ensure!(self.estimators.harmonic_step > 0.0, "estimators.harmonic_step must be positive");
        self.ritz_config().validate()?;
        ensure!(self.dupire.maturity > 0.0, "dupire.maturity must be positive");
        ensure!(
            self.dupire.dt_fraction > 0.0 && self.dupire.dt_fraction < 1.0 && self.dupire.dk > 0.0,
            "dupire steps must satisfy 0 < dt_fraction < 1 and dk > 0"
        );
        Ok(())
    }

    pub fn params(&self, hurst: f64) -> Result<ModelParams> {
        Ok(ModelParams::new(self.model.xi0, self.model.eta, self.model.rho, hurst)?)
    }

    pub fn ritz_config(&self) -> RitzConfig {
        RitzConfig { n_basis: self.ritz.n_basis, quad_nodes: self.ritz.quad_nodes, tol: self.ritz.tol }
    }

    pub fn skew_method(&self) -> SkewMethod {
        match self.estimators.skew {
            SkewChoice::Atm => SkewMethod::AtTheMoney,
            SkewChoice::FiniteDifference => SkewMethod::FiniteDifference(self.smile.fd_y),
        }
    }

    pub fn dupire_options(&self) -> DupireOptions {
        DupireOptions { dt_fraction: self.dupire.dt_fraction, dk: self.dupire.dk }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

fn ensure_sorted_positive(name: &str, xs: &[f64]) -> Result<()> {
    if xs.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        bail!("{name} must be strictly positive");
    }
    if xs.windows(2).any(|w| w[0] >= w[1]) {
        bail!("{name} must be strictly increasing");
    }
    Ok(())
}

fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_are_valid() {
        for p in [Profile::Desk, Profile::Paper, Profile::Smoke] {
            ExperimentConfig::profile(p).validate().unwrap();
        }
    }

    #[test]
    fn overlay_replaces_only_given_keys() {
        let cfg = ExperimentConfig::from_toml_over(Profile::Desk, "seed = 7\n[grid]\nsamples = 1000\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.grid.samples, 1000);
        assert_eq!(cfg.grid.steps, 256);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_over(Profile::Desk, "[model]\nhurts = [0.1]\n").is_err());
        assert!(ExperimentConfig::from_toml_over(Profile::Desk, "sede = 1\n").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(ExperimentConfig::from_toml_over(Profile::Desk, "[grid]\nmaturities = [0.2, 0.1]\n").is_err());
        assert!(ExperimentConfig::from_toml_over(Profile::Desk, "[model]\nrho = 1.0\n").is_err());
        assert!(ExperimentConfig::from_toml_over(Profile::Desk, "[model]\nhurst = [0.7]\n").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::profile(Profile::Desk);
        let back = ExperimentConfig::from_toml_over(Profile::Smoke, &cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }
}

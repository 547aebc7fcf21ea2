//! Experiment harness around the `roughlv` crate: configuration, the
//! subcommands that regenerate every figure as CSV, and the acceptance suite.

pub mod acceptance;
pub mod config;
pub mod experiments;
pub mod output;

use anyhow::{bail, Result};
use clap::ValueEnum;
use config::ExperimentConfig;
use experiments::Lab;
use output::Stage;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Simulate,
    Smile,
    SkewTerm,
    SkewRatio,
    RescaledSmile,
    RateFunction,
    Harmonic,
    Ldp,
    Extrapolate,
    Acceptance,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Smile => "smile",
            Command::SkewTerm => "skew-term",
            Command::SkewRatio => "skew-ratio",
            Command::RescaledSmile => "rescaled-smile",
            Command::RateFunction => "rate-function",
            Command::Harmonic => "harmonic",
            Command::Ldp => "ldp",
            Command::Extrapolate => "extrapolate",
            Command::Acceptance => "acceptance",
        }
    }
}

/// Runs `command`, leaving its artifacts and manifest in `out`. Nothing is
/// left behind when the command fails; a failed acceptance run keeps its
/// report and returns an error afterwards.
pub fn run(config: ExperimentConfig, command: Command, out: &Path) -> Result<Vec<PathBuf>> {
    let hash = config.hash();
    let seed = config.seed;
    let mut stage = Stage::new(out, command.name())?;
    stage.write(&format!("config-{}.toml", command.name()), &config.to_toml())?;
    let mut lab = Lab::new(config);
    let mut verdict = Ok(());
    match command {
        Command::Simulate => experiments::simulate(&mut lab, &mut stage)?,
        Command::Smile => experiments::smile(&mut lab, &mut stage)?,
        Command::SkewTerm => experiments::skew_term(&mut lab, &mut stage)?,
        Command::SkewRatio => experiments::skew_ratio(&mut lab, &mut stage)?,
        Command::RescaledSmile => experiments::rescaled(&mut lab, &mut stage)?,
        Command::RateFunction => experiments::rate_function(&mut lab, &mut stage)?,
        Command::Harmonic => experiments::harmonic(&mut lab, &mut stage)?,
        Command::Ldp => experiments::ldp(&mut lab, &mut stage)?,
        Command::Extrapolate => experiments::extrapolate(&mut lab, &mut stage)?,
        Command::Acceptance => {
            let report = acceptance::run(&lab.config, &acceptance::Thresholds::default())?;
            let lines = report.lines();
            for l in &lines {
                println!("{l}");
            }
            stage.write("acceptance.csv", &report.to_csv())?;
            stage.write("acceptance.txt", &(lines.join("\n") + "\n"))?;
            if !report.passed() {
                let failed: Vec<String> =
                    report.criteria.iter().filter(|c| !c.passed()).map(|c| c.id.to_string()).collect();
                verdict = Err(failed.join(", "));
            }
        }
    }
    let files = stage.commit(command.name(), &hash, seed)?;
    if let Err(ids) = verdict {
        bail!("acceptance failed for criteria {ids}");
    }
    Ok(files)
}

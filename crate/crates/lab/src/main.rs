use anyhow::Result;
use clap::Parser;
use roughlv_lab::config::{ExperimentConfig, Profile};
use roughlv_lab::Command;
use std::path::PathBuf;

/// Rough Bergomi local and implied volatility experiments.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML file overlaid on the selected profile.
    #[arg(long, env = "ROUGHLV_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk", env = "ROUGHLV_PROFILE")]
    profile: Profile,
    #[arg(long, env = "ROUGHLV_SEED")]
    seed: Option<u64>,
    /// Worker threads; 1 runs everything on the calling thread's pool.
    #[arg(long, env = "ROUGHLV_THREADS")]
    threads: Option<usize>,
    #[arg(long, default_value = "out", env = "ROUGHLV_OUT")]
    out: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut config = ExperimentConfig::load(cli.profile, cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    for f in roughlv_lab::run(config, cli.command, &cli.out)? {
        println!("wrote {}", f.display());
    }
    Ok(())
}

use roughlv_lab::config::{ExperimentConfig, Profile};
use roughlv_lab::{run, Command};
use std::fs;
use std::path::Path;
use std::process::Command as Process;
use std::time::Instant;

fn smoke() -> ExperimentConfig {
    ExperimentConfig::profile(Profile::Smoke)
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for cmd in [Command::Smile, Command::SkewRatio, Command::RateFunction] {
        run(smoke(), cmd, a.path()).unwrap();
        run(smoke(), cmd, b.path()).unwrap();
    }
    let (fa, fb) = (read_all(a.path()), read_all(b.path()));
    assert!(fa.iter().any(|(n, _)| n == "manifest-smile.txt"));
    assert_eq!(fa, fb);
}

#[test]
fn manifest_records_hash_seed_and_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke();
    let hash = cfg.hash();
    run(cfg, Command::Harmonic, dir.path()).unwrap();
    let m = fs::read_to_string(dir.path().join("manifest-harmonic.txt")).unwrap();
    assert!(m.contains(&hash));
    assert!(m.contains("seed = 42"));
    assert!(m.contains("file.harmonic.csv"));
    assert!(!dir.path().join(".staging-harmonic").exists());
}

#[test]
fn missing_config_fails_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let status = Process::new(env!("CARGO_BIN_EXE_roughlv"))
        .args(["smile", "--profile", "smoke", "--config"])
        .arg(dir.path().join("absent.toml"))
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(!status.success());
    assert!(!out.exists() || fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(ExperimentConfig::from_toml_over(Profile::Smoke, "[model]\nvol_of_vol = 1.0\n").is_err());
    assert!(ExperimentConfig::from_toml_over(Profile::Smoke, "bogus = 3\n").is_err());
    let ok = ExperimentConfig::from_toml_over(Profile::Smoke, "seed = 7\n").unwrap();
    assert_eq!(ok.seed, 7);
}

#[test]
fn flat_variance_rate_function_is_quadratic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke();
    let xi0 = cfg.model.xi0;
    run(cfg, Command::RateFunction, dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("rate_function.csv")).unwrap();
    let mut rows = 0;
    for line in text.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let (y, lambda) = (f[1], f[2]);
        assert!((lambda - y * y / (2.0 * xi0)).abs() < 1e-6, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 10);
}

#[test]
fn persisted_batches_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke();
    let expected = roughlv::simulate_batch(
        &cfg.params(0.1).unwrap(),
        &roughlv::SimulationGrid::new(0.05, cfg.grid.steps).unwrap(),
        cfg.seed,
        cfg.grid.samples,
    )
    .unwrap();
    let files = run(cfg, Command::Simulate, dir.path()).unwrap();
    assert!(files.iter().any(|p| p.ends_with("batch_H0.1_T0.05.csv")));
    let f = fs::File::open(dir.path().join("batch_H0.1_T0.05.csv")).unwrap();
    let back = roughlv::PathBatch::read_csv(std::io::BufReader::new(f)).unwrap();
    assert_eq!(back, expected);
}

#[test]
fn smoke_acceptance_finishes_within_a_minute() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    // η = 0 makes the Monte Carlo criteria fail; only the runtime and the report matter here
    let result = run(smoke(), Command::Acceptance, dir.path());
    assert!(start.elapsed().as_secs() < 60, "{:?}", start.elapsed());
    assert!(result.is_err());
    let csv = fs::read_to_string(dir.path().join("acceptance.csv")).unwrap();
    assert!(csv.lines().count() > 7);
}

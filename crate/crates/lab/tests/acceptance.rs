//! The acceptance suite at desk scale. Simulating the 18 desk batches is the
//! slow part, so one set of batches feeds every test in this file.

use roughlv_lab::acceptance::{run_on, skew_ratio_rule, DeskData, Thresholds};
use roughlv_lab::config::{ExperimentConfig, Profile};
use std::sync::OnceLock;

fn desk() -> &'static DeskData {
    static DATA: OnceLock<DeskData> = OnceLock::new();
    DATA.get_or_init(|| DeskData::simulate(&ExperimentConfig::profile(Profile::Desk)).unwrap())
}

#[test]
fn every_criterion_passes_at_desk_scale() {
    let report = run_on(desk(), &Thresholds::default());
    for line in report.lines() {
        println!("{line}");
    }
    let failed: Vec<u8> = report.criteria.iter().filter(|c| !c.passed()).map(|c| c.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

#[test]
fn a_wrong_skew_target_is_caught() {
    let th = Thresholds { ratio_target_override: vec![(0.1, 0.9)], ..Thresholds::default() };
    let c = skew_ratio_rule(desk(), &th);
    println!("{c}");
    assert!(!c.passed());
    let h01: Vec<_> = c.checks.iter().filter(|k| k.target == 0.9).collect();
    assert!(!h01.is_empty() && h01.iter().all(|k| !k.passed));
}

//! Runs every oracle case and invariant.

use std::collections::BTreeSet;
use std::path::PathBuf;

use augmax_oracles::cases::{all, invariants, oracles};
use augmax_oracles::{run_suite, Context};

#[test]
fn registry_has_one_case_per_reference_check() {
    let ids: BTreeSet<&str> = oracles().iter().map(|c| c.id).collect();
    assert_eq!(ids.len(), 33);
    assert_eq!(all().len(), 33 + invariants().len());
}

#[test]
fn filter_selects_by_substring() {
    let mut ctx = Context::new(1, None);
    let report = run_suite("mixer.mix.per-pixel,trainer.js-divergence", &mut ctx);
    let ids: Vec<&str> = report.records.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["mixer.mix.per-pixel", "trainer.js-divergence.high-precision"]);
}

#[test]
fn suite_is_deterministic_given_seed() {
    let filter = "diffcore,augops,mixer.mix";
    let first = run_suite(filter, &mut Context::new(5, None));
    let second = run_suite(filter, &mut Context::new(5, None));
    let strip = |r: &augmax_oracles::SuiteReport| r.records.iter().map(|c| (c.id.clone(), c.actual.clone())).collect::<Vec<_>>();
    assert_eq!(strip(&first), strip(&second));
}

#[test]
fn full_suite_passes() {
    let cache = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("oracle-fixtures");
    let mut ctx = Context::new(0, Some(cache));
    let report = run_suite("", &mut ctx);
    print!("{}", report.text());
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("oracle-report.json");
    report.write_json(&out).unwrap();
    assert_eq!(report.exit_code(), 0, "failures: {:#?}", report.failures());
}

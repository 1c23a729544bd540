use std::path::PathBuf;

use ctlrisk::config::{ExperimentConfig, OracleConfig};
use ctlrisk::estimator::{run_subset_simulation, Provenance};
use ctlrisk::report::ReliabilityReport;

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

const BALL: &str = r#"
schema_version = 1
name = "ball"
seed = 5
workers = 1

[space]
blocks = [{ kind = "interval", bounds = [[-1.0, 1.0], [-1.0, 1.0]] }]

[oracle]
kind = "ball"
center = [0.0, 0.0]
radius = 0.3

[model]
kind = "latency-budget"
length = 2
r_p = [0.05]
r_rwm = [0.3]

[sampling]
level1_samples = 20000
batches = 6
steps_per_batch = 500
alpha = 0.99
"#;

fn report_json(text: &str, workers: usize) -> String {
    let config = ExperimentConfig::from_toml_str(text).unwrap();
    let e = config.build().unwrap();
    let out = run_subset_simulation(&e.problem, &e.sampling, e.diagnostics.as_ref(), e.seed, workers).unwrap();
    ReliabilityReport::from_outcome(&config, e.problem.oracle.name(), &out, "test").unwrap().to_json().unwrap()
}

#[test]
fn shipped_configs_parse_and_validate() {
    let mut seen = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        let config = ExperimentConfig::from_path(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        if !matches!(config.oracle, OracleConfig::Process { .. }) {
            config.build().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        }
        seen += 1;
    }
    assert!(seen >= 5);
}

#[test]
fn single_level_chain_is_crude_monte_carlo() {
    let text = BALL.replace("length = 2", "length = 1");
    let config = ExperimentConfig::from_toml_str(&text).unwrap();
    let e = config.build().unwrap();
    let out = run_subset_simulation(&e.problem, &e.sampling, None, e.seed, 1).unwrap();
    assert_eq!(out.levels.len(), 1);
    let l1 = &out.levels[0];
    assert_eq!(out.product.point, l1.estimate);
    assert_eq!(out.product.upper, l1.hi);
    assert_eq!(out.product.lower, l1.lo);
    assert_eq!(out.oracle_calls, 20000);
}

#[test]
fn reports_do_not_depend_on_worker_count() {
    let one = report_json(BALL, 1);
    assert_eq!(one, report_json(BALL, 3));
    assert_eq!(one, report_json(&BALL.replace("workers = 1", "workers = 7"), 2));
}

#[test]
fn seed_changes_the_report() {
    assert_ne!(report_json(BALL, 1), report_json(&BALL.replace("seed = 5", "seed = 6"), 1));
}

#[test]
fn carryover_seeds_are_labelled() {
    let text = BALL.replace("alpha = 0.99", "alpha = 0.99\nseed_mode = \"carryover\"");
    let config = ExperimentConfig::from_toml_str(&text).unwrap();
    let e = config.build().unwrap();
    let out = run_subset_simulation(&e.problem, &e.sampling, None, e.seed, 2).unwrap();
    let seeds = out.levels[1].seeds.as_ref().unwrap();
    assert_eq!(seeds.provenance, Provenance::Carryover);
    // Carryover reuses level-1 failures, so no extra oracle calls are spent on seeds
    assert_eq!(out.oracle_calls, 20000 + 6 * 500 * 2);
}

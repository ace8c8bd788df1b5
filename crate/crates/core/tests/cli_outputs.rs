use std::fs;
use std::path::Path;

use liversim::cli::{main_with_args, EXIT_CONFIG, EXIT_OUTPUT};
use liversim::config::RunConfig;
use liversim::metrics::{run_scenarios, Stratum};
use liversim::output::{emit_results, rates_csv, read_results};
use liversim::model::Indication;

const SHORT: &str = "\
[engine]
initiation_years = 2.0
study_years = 2.0
incident_window_years = 1.0

[scenarios]
shortage_levels = [0.0, 0.5]
replications = 2
";

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn run(args: &[&str]) -> i32 {
    let mut v = vec!["liversim"];
    v.extend_from_slice(args);
    main_with_args(v)
}

#[test]
fn missing_config_is_a_config_error() {
    assert_eq!(run(&[]), EXIT_CONFIG);
    assert_eq!(run(&["--config", "/nonexistent/run.toml"]), EXIT_CONFIG);
    assert_eq!(run(&["--config", "x.toml", "--policies", "FIFO"]), EXIT_CONFIG);
}

#[test]
fn invalid_values_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[arrivals.probability]\nDONOR = 0.9\n");
    assert_eq!(run(&["--config", &cfg, "--quiet"]), EXIT_CONFIG);
    let cfg = write_config(dir.path(), SHORT);
    assert_eq!(run(&["--config", &cfg, "--shortage", "1.5", "--quiet"]), EXIT_CONFIG);
}

#[test]
fn unwritable_output_is_an_output_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHORT);
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = blocker.join("out");
    let code = run(&[
        "--config", &cfg, "--out", out.to_str().unwrap(), "--replications", "1",
        "--shortage", "0", "--quiet",
    ]);
    assert_eq!(code, EXIT_OUTPUT);
}

#[test]
fn cli_runs_edf_alone_and_writes_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHORT);
    let out = dir.path().join("out");
    let code = run(&[
        "--config", &cfg, "--out", out.to_str().unwrap(), "--policies", "EDF",
        "--replications", "1", "--emit-events", "--quiet",
    ]);
    assert_eq!(code, 0);
    for name in [
        "cohort.csv", "rates.csv", "prevalent_rates.csv", "variance.csv", "results.json",
        "shortage_rates.svg", "ddts_variance.svg", "config.toml",
    ] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
    let results = read_results(&out.join("results.json")).unwrap();
    assert_eq!(results.results.len(), 2);
    assert!(results.results.iter().all(|r| r.spec.policy.as_str() == "EDF"));
    // every study step of every run has one event line
    let events = out.join("events");
    let files: Vec<_> = fs::read_dir(&events).unwrap().collect();
    assert_eq!(files.len(), 2);
    let log = fs::read_to_string(events.join("EDF_s0.50_rep00.ndjson")).unwrap();
    assert_eq!(log.lines().count(), 2 * 3108);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert!(first.get("step").is_some() && first.get("arrival").is_some());
    // the effective config reproduces the run
    let again = RunConfig::from_toml_str(&fs::read_to_string(out.join("config.toml")).unwrap()).unwrap();
    assert_eq!(again.hash(), results.config_hash);
}

#[test]
fn results_round_trip_and_tables_have_expected_shape() {
    let cfg = RunConfig::from_toml_str(SHORT).unwrap();
    let p = cfg.prepare().unwrap();
    let specs = cfg.scenarios();
    let results = run_scenarios(&specs, &p.engine, &p.models).unwrap();
    assert_eq!(results, run_scenarios(&specs, &p.engine, &p.models).unwrap());

    let dir = tempfile::tempdir().unwrap();
    emit_results(&results, dir.path(), &cfg.hash(), cfg.seed).unwrap();
    let back = read_results(&dir.path().join("results.json")).unwrap();
    assert_eq!(back.results, results);
    assert_eq!(back.seed, cfg.seed);

    let rates = rates_csv(&results);
    assert_eq!(rates.lines().count(), 1 + results.len() * 5);
    let cohort = fs::read_to_string(dir.path().join("cohort.csv")).unwrap();
    let header = cohort.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 2 + results.len());
    assert!(!cohort.contains(';'));

    for r in &results {
        for s in &r.rates {
            if let Some(x) = s.rates {
                assert!((x.ddts + x.ltx + x.alive - 1.0).abs() < 1e-12);
            }
        }
        // cohort partition: cells add up to the overall cohort
        let cells: f64 = r.cohort.iter().map(|c| c.mean_count).sum();
        let overall = r.stratum(Stratum::Overall).unwrap().mean_cohort_size;
        assert!((cells - overall).abs() < 1e-9);
        let by_ind: f64 = Indication::ALL.iter().map(|&i| r.mean_indication_cohort(i)).sum();
        assert!((by_ind - overall).abs() < 1e-9);
        for rep in &r.replications {
            rep.initiation.check_conservation().unwrap();
            rep.study.check_conservation().unwrap();
        }
    }
}

#[test]
fn single_replication_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHORT);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let code = run(&[
            "--config", &cfg, "--seed", "42", "--out", out.to_str().unwrap(),
            "--replications", "1", "--quiet",
        ]);
        assert_eq!(code, 0);
    }
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        if name == "config.toml" {
            // records the output directory, which differs by construction
            continue;
        }
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
}

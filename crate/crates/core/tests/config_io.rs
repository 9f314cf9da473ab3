//! Configuration files and record files on disk.

use std::io::Write;

use filament_core::gibbs::{energy_spectrum, partition_function, run_ensemble};
use filament_core::io::{read_records, write_jsonl};
use filament_core::{Error, RunConfig};

const SMALL: &str = r#"
schema_version = 1
horizon = 0.5
steps = 64
samples = 9
seed = 77
betas = [-1.0, 0.0, 2.5]

[process]
kind = "sde"
drift = { type = "constant", c = [0.2, 0.0, -0.1] }

[cross_section]
type = "uniform_ball"
radius = 0.4
mass = 1.5

[kgrid]
radial = 12
n_theta = 4
n_phi = 8
"#;

fn write_file(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.path().join(name);
    std::fs::File::create(&p).unwrap().write_all(text.as_bytes()).unwrap();
    p
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(&write_file(&dir, "a.toml", SMALL)).unwrap();
    assert_eq!(cfg.steps, 64);
    assert_eq!(cfg.cross_section.variant_name(), "uniform_ball");
    let again = RunConfig::load(&write_file(&dir, "b.toml", &cfg.to_toml().unwrap())).unwrap();
    assert_eq!(again, cfg);
}

#[test]
fn reingested_records_reproduce_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_toml(SMALL).unwrap();
    let kg = cfg.kgrid().unwrap();
    let recs = run_ensemble(&cfg.ensemble().unwrap(), &kg, 0).unwrap();
    let path = dir.path().join("records.jsonl");
    let mut shuffled = recs.clone();
    shuffled.reverse();
    write_jsonl(std::fs::File::create(&path).unwrap(), &shuffled).unwrap();
    let back = read_records(&path).unwrap();
    assert_eq!(back, recs);
    for &b in &cfg.betas {
        assert_eq!(partition_function(&back, b).unwrap(), partition_function(&recs, b).unwrap());
        assert_eq!(
            energy_spectrum(&back, b, &kg, 50.0).unwrap(),
            energy_spectrum(&recs, b, &kg, 50.0).unwrap()
        );
    }
}

#[test]
fn config_errors_point_at_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_file(&dir, "bad.toml", "steps = 64\n[kgrid]\nradial = 0\n");
    let e = RunConfig::load(&bad).unwrap_err();
    assert!(matches!(e, Error::Config(_)));
    let msg = e.to_string();
    assert!(msg.contains("bad.toml") && msg.contains("kgrid"), "{msg}");

    let typo = write_file(&dir, "typo.toml", "steps = 64\nsamplez = 3\n");
    let msg = RunConfig::load(&typo).unwrap_err().to_string();
    assert!(msg.contains("samplez") && msg.contains("line 2"), "{msg}");

    let missing = dir.path().join("absent.toml");
    assert!(matches!(RunConfig::load(&missing), Err(Error::Io(_))));
}

#[test]
fn truncated_record_file_is_rejected_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_toml(SMALL).unwrap();
    let recs = run_ensemble(&cfg.ensemble().unwrap(), &cfg.kgrid().unwrap(), 0).unwrap();
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &recs[..3]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let cut = &text[..text.len() - 20];
    let p = write_file(&dir, "cut.jsonl", cut);
    match read_records(&p) {
        Err(Error::Record { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}

use std::process::{Command, Output};

fn karakasa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_karakasa"))
        .args(args)
        .env_remove("KARAKASA_SEED")
        .output()
        .unwrap()
}

#[test]
fn csv_goes_to_stdout_with_the_fixed_header() {
    let out = karakasa(&[
        "replication",
        "--nodes",
        "20",
        "--block-count",
        "200",
        "--replicas",
        "0:2",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some(
            "experiment,n_nodes,block_count,replicas,suc,seed,trial,metric,measured,estimated,unit"
        )
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[2].starts_with("replication,20,200,2,8,42,0,mean_blocks_per_node,30.0,30.0,"));
    // the summary table goes to stderr when the CSV is on stdout
    assert!(String::from_utf8(out.stderr).unwrap().contains("rel.err"));
}

#[test]
fn seed_comes_from_the_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_karakasa"))
        .args(["storage", "--nodes", "10", "--block-count", "50"])
        .env("KARAKASA_SEED", "7")
        .output()
        .unwrap();
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .contains("storage,10,50,0,8,7,0,"));
}

#[test]
fn configuration_errors_exit_with_2() {
    for args in [
        &["storage", "--nodes", "0"][..],
        &["storage", "--nodes", "9:3:1"],
        &["replication", "--nodes", "3", "--replicas", "5"],
        &["utxo-build", "--trials", "0"],
        &["attack", "--fractions", "1.5"],
        &["storage", "--mode", "sideways"],
        &["frobnicate"],
    ] {
        assert_eq!(karakasa(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn attack_reports_are_written_per_campaign() {
    let dir = tempfile::tempdir().unwrap();
    let reports = dir.path().join("campaigns.csv");
    let csv = dir.path().join("rows.csv");
    let out = karakasa(&[
        "attack",
        "--nodes",
        "20",
        "--trials",
        "3",
        "--fractions",
        "0,1",
        "--out",
        csv.to_str().unwrap(),
        "--reports",
        reports.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&reports).unwrap();
    assert_eq!(text.lines().count(), 1 + 6);
    assert!(text.starts_with("target_height,target_position,stack_depth,"));
    let rows = std::fs::read_to_string(&csv).unwrap();
    assert!(rows.contains("detection_rate:f=1.000,1.0,1.0,ratio"));
}

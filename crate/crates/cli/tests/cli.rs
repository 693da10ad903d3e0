use std::path::Path;
use std::process::{Command, Output};

fn lnmfa(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lnmfa")).args(args).current_dir(dir).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn simulate(dir: &Path, builtin: &str, n: usize, seed: u64) {
    let o = lnmfa(
        &["simulate", "--builtin", builtin, "--n", &n.to_string(), "--seed", &seed.to_string(), "--out-dir", "."],
        dir,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_writes_counts_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "study2", 50, 3);
    let counts = std::fs::read_to_string(dir.path().join("counts.csv")).unwrap();
    let labels = std::fs::read_to_string(dir.path().join("labels.csv")).unwrap();
    assert_eq!(counts.lines().count(), 51);
    assert_eq!(counts.lines().next().unwrap().split(',').count(), 12);
    assert_eq!(labels.lines().filter(|l| !l.trim().is_empty()).count(), 51);
}

#[test]
fn fit_writes_result_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "study1", 150, 4);
    let o = lnmfa(
        &[
            "fit",
            "--input",
            "counts.csv",
            "--G",
            "3",
            "--q",
            "2",
            "--model",
            "CCC",
            "--output",
            "fit.json",
            "--labels-out",
            "fit_labels.csv",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("CCC G=3 q=2"));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("fit.json")).unwrap()).unwrap();
    assert_eq!(doc["model"], "CCC");
    assert_eq!(doc["trace"].as_array().unwrap().len() as u64, doc["sweeps"].as_u64().unwrap());
    assert_eq!(doc["config"]["fit"]["eps"], 0.01);
    let labels = std::fs::read_to_string(dir.path().join("fit_labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 151);
}

#[test]
fn fit_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "study2", 120, 5);
    let mut docs = Vec::new();
    for out in ["a.json", "b.json"] {
        let o = lnmfa(
            &["fit", "--input", "counts.csv", "--G", "2", "--q", "2", "--model", "UCU", "--seed", "3", "--output", out],
            dir.path(),
        );
        assert!(o.status.success());
        let mut doc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(out)).unwrap()).unwrap();
        doc["config"]["output"] = serde_json::Value::Null;
        docs.push(doc);
    }
    assert_eq!(docs[0], docs[1]);
}

#[test]
fn select_runs_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "study1", 90, 6);
    let o = lnmfa(
        &[
            "select",
            "--input",
            "counts.csv",
            "--G",
            "1..3",
            "--q",
            "1..3",
            "--models",
            "all",
            "--seeds",
            "1",
            "--output",
            "select.json",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("cells: 72"), "{out}");
    assert!(out.contains("winner: "));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("select.json")).unwrap()).unwrap();
    assert_eq!(doc["cells"], 72);
    assert_eq!(doc["runs"].as_array().unwrap().len(), 72);
}

#[test]
fn select_recovers_the_simulated_structure() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "study1", 1000, 7);
    let o = lnmfa(
        &[
            "select",
            "--input",
            "counts.csv",
            "--G",
            "2..3",
            "--q",
            "2..3",
            "--models",
            "all",
            "--labels-out",
            "found.csv",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("winner: CCC G=3 q=3"), "{}", stdout(&o));
    let o = lnmfa(&["ari", "found.csv", "labels.csv"], dir.path());
    let index: f64 = stdout(&o).trim().parse().unwrap();
    assert!(index > 0.95, "{index}");
}

#[test]
fn ari_of_identical_files_is_one() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "study1", 40, 8);
    let o = lnmfa(&["ari", "labels.csv", "labels.csv"], dir.path());
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "1.0");
}

#[test]
fn info_prints_builtin_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let o = lnmfa(&["info", "study1"], dir.path());
    assert!(o.status.success());
    let out = stdout(&o);
    let json = &out[out.find('[').unwrap()..];
    let doc: serde_json::Value = serde_json::from_str(json).unwrap();
    assert_eq!(doc[0]["pi"], serde_json::json!([0.5, 0.3, 0.2]));
    assert_eq!(doc[0]["n"], 1000);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "study1", 30, 9);
    let cases: [&[&str]; 5] = [
        &["fit", "--input", "counts.csv", "--G", "2", "--q", "1", "--bogus"],
        &["fit", "--input", "counts.csv", "--G", "2", "--q", "1", "--model", "XYZ"],
        &["select", "--input", "counts.csv", "--G", "3..1"],
        &["fit", "--input", "counts.csv", "--G", "0", "--q", "1"],
        &["info", "study9"],
    ];
    for args in cases {
        let o = lnmfa(args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn fitting_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.csv"), "id,a,b,c\ns1,5,3,2\ns2,4,4,2\ns3,9,1,0\ns4,2,2,6\n").unwrap();
    let o = lnmfa(&["fit", "--input", "tiny.csv", "--G", "3", "--q", "1", "--model", "UUU"], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let o = lnmfa(&["fit", "--input", "missing.csv", "--G", "2", "--q", "1"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

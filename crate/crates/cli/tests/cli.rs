use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn picopat(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_picopat"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = picopat(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn staged(files: &[&str]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for f in files {
        std::fs::copy(fixture(f), dir.path().join(f)).unwrap();
    }
    dir
}

#[test]
fn mine_matches_golden_file() {
    let dir = staged(&["planted_rel.jsonl", "planted_irrel.jsonl"]);
    let args = [
        "mine",
        "--relevant",
        "planted_rel.jsonl",
        "--irrelevant",
        "planted_irrel.jsonl",
        "--category",
        "P",
    ];
    ok(dir.path(), &[&args[..], &["--out", "p.tsv"]].concat());
    let got = std::fs::read_to_string(dir.path().join("p.tsv")).unwrap();
    assert_eq!(
        got,
        std::fs::read_to_string(fixture("planted_P.golden.tsv")).unwrap()
    );
}

#[test]
fn stdout_is_the_default_output() {
    let dir = staged(&["planted_rel.jsonl", "planted_irrel.jsonl"]);
    let out = picopat(
        dir.path(),
        &[
            "mine",
            "--relevant",
            "planted_rel.jsonl",
            "--irrelevant",
            "planted_irrel.jsonl",
            "--category",
            "P",
        ],
    );
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .contains("treated_with"));
}

#[test]
fn bad_inputs_exit_with_status_two() {
    let dir = staged(&["planted_rel.jsonl", "separable.jsonl"]);
    let cases: [&[&str]; 4] = [
        &[
            "mine",
            "--relevant",
            "missing.jsonl",
            "--irrelevant",
            "planted_rel.jsonl",
            "--category",
            "P",
        ],
        &[
            "mine",
            "--relevant",
            "planted_rel.jsonl",
            "--irrelevant",
            "planted_rel.jsonl",
            "--category",
            "P",
            "--min-prob",
            "1.1",
        ],
        &[
            "train-neural",
            "--train",
            "separable.jsonl",
            "--category",
            "P",
            "--strategy",
            "sideways",
            "--out",
            "m.json",
        ],
        &[
            "tag",
            "--model",
            "m.json",
            "--input",
            "separable.jsonl",
            "--strategy",
            "sideways",
        ],
    ];
    for args in cases {
        let out = picopat(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn mine_train_tag_eval_round_trip() {
    let dir = staged(&[
        "planted_rel.jsonl",
        "planted_irrel.jsonl",
        "separable.jsonl",
    ]);
    let d = dir.path();
    ok(
        d,
        &[
            "mine",
            "--relevant",
            "planted_rel.jsonl",
            "--irrelevant",
            "planted_irrel.jsonl",
            "--category",
            "P",
            "--out",
            "lex.tsv",
        ],
    );
    ok(
        d,
        &[
            "train-crf",
            "--train",
            "separable.jsonl",
            "--category",
            "P",
            "--patterns",
            "lex.tsv",
            "--out",
            "crf.json",
        ],
    );
    ok(
        d,
        &[
            "tag",
            "--model",
            "crf.json",
            "--input",
            "separable.jsonl",
            "--out",
            "pred.jsonl",
        ],
    );
    ok(
        d,
        &[
            "eval",
            "--gold",
            "separable.jsonl",
            "--pred",
            "pred.jsonl",
            "--category",
            "P",
            "--out",
            "eval.tsv",
        ],
    );
    let report = std::fs::read_to_string(d.join("eval.tsv")).unwrap();
    let row = report.lines().find(|l| l.starts_with("P\t")).unwrap();
    let f1: f64 = row.split('\t').nth(3).unwrap().parse().unwrap();
    assert!(f1 >= 99.0, "{report}");
}

#[test]
fn tag_rejects_a_strategy_the_model_was_not_trained_with() {
    let dir = staged(&["separable.jsonl"]);
    let d = dir.path();
    ok(
        d,
        &[
            "train-neural",
            "--train",
            "separable.jsonl",
            "--category",
            "I",
            "--word-dim",
            "6",
            "--char-emb-dim",
            "3",
            "--char-dim",
            "3",
            "--hidden",
            "6",
            "--epochs",
            "1",
            "--out",
            "nn.json",
        ],
    );
    assert!(d.join("nn.bin").exists());
    ok(
        d,
        &[
            "tag",
            "--model",
            "nn.json",
            "--input",
            "separable.jsonl",
            "--strategy",
            "none",
            "--out",
            "a.jsonl",
        ],
    );
    let out = picopat(
        d,
        &[
            "tag",
            "--model",
            "nn.json",
            "--input",
            "separable.jsonl",
            "--strategy",
            "before-crf",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn project_writes_csv_with_header() {
    let dir = staged(&["separable.jsonl"]);
    let d = dir.path();
    ok(
        d,
        &[
            "embed",
            "--corpus",
            "separable.jsonl",
            "--dim",
            "8",
            "--min-count",
            "1",
            "--out",
            "v.txt",
        ],
    );
    ok(
        d,
        &["project", "--vectors", "v.txt", "-k", "3", "--out", "p.csv"],
    );
    let csv = std::fs::read_to_string(d.join("p.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("token,x,y,cluster"));
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.split(',').count() == 4));
}

#[test]
fn neighbors_report_unknown_tokens() {
    let dir = staged(&["separable.jsonl"]);
    let d = dir.path();
    ok(
        d,
        &[
            "embed",
            "--corpus",
            "separable.jsonl",
            "--dim",
            "8",
            "--min-count",
            "1",
            "--out",
            "v.txt",
        ],
    );
    let out = picopat(d, &["neighbors", "--vectors", "v.txt", "--token", "asprin"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("aspirin"));
}

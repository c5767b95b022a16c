use std::path::Path;
use std::process::{Command, Output};

fn ccache(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccache"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(dir: &Path, scheme: &str) -> String {
    std::fs::read_to_string(dir.join(format!("{scheme}.csv"))).unwrap()
}

#[test]
fn run_all_writes_three_identical_csvs_twice() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );
    let first = ccache(&["run", "--scheme", "all", "--seed", "7", "--out", path(&a)]);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let table = stdout(&first);
    for scheme in ["ccache", "pcache", "centralized"] {
        assert!(table.contains(scheme), "{table}");
    }
    let second = ccache(&["run", "--scheme", "all", "--seed", "7", "--out", path(&b)]);
    assert_eq!(second.status.code(), Some(0));
    let seq = ccache(&[
        "run",
        "--scheme",
        "all",
        "--seed",
        "7",
        "--sequential",
        "--out",
        path(&c),
    ]);
    assert_eq!(seq.status.code(), Some(0));
    for scheme in ["ccache", "pcache", "centralized"] {
        let x = read(&a, scheme);
        assert!(x.starts_with("t,node,"));
        assert_eq!(x, read(&b, scheme), "{scheme}");
        assert_eq!(x, read(&c, scheme), "{scheme}");
    }
}

#[test]
fn config_file_is_read_and_errors_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"ccbf": {"m": 64, "k": 65}}"#).unwrap();
    let o = ccache(&["run", path(&cfg), "--out", path(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("ccbf.k"), "{}", stderr(&o));

    std::fs::write(&cfg, r#"{"workload": {"device_rate_hz": "fast"}}"#).unwrap();
    let o = ccache(&["run", path(&cfg), "--out", path(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("workload.device_rate_hz"),
        "{}",
        stderr(&o)
    );

    let o = ccache(&["run", path(&tmp.path().join("missing.json"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn default_config_roundtrips_through_a_file() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ccache(&["config"]);
    assert_eq!(o.status.code(), Some(0));
    let cfg = tmp.path().join("default.json");
    std::fs::write(&cfg, &o.stdout).unwrap();
    let o = ccache(&[
        "run",
        path(&cfg),
        "--scheme",
        "pcache",
        "--out",
        path(tmp.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(tmp.path().join("pcache.csv").exists());
}

#[test]
fn short_horizon_exits_two_and_still_writes_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ccache(&[
        "run",
        "--scheme",
        "ccache",
        "--horizon",
        "60",
        "--out",
        path(tmp.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ccache"));
    assert!(read(tmp.path(), "ccache").contains("# terminal,ccache,60.000000"));
}

#[test]
fn insert_then_query_across_invocations() {
    let tmp = tempfile::tempdir().unwrap();
    let f = tmp.path().join("f.ccbf");
    assert!(ccache(&[
        "ccbf",
        "new",
        path(&f),
        "--m",
        "1024",
        "--k",
        "3",
        "--n",
        "100"
    ])
    .status
    .success());
    assert!(ccache(&["ccbf", "insert", path(&f), "alpha", "beta"])
        .status
        .success());
    let o = ccache(&["ccbf", "query", path(&f), "alpha", "beta"]);
    assert_eq!(stdout(&o), "alpha true\nbeta true\n");
    assert!(ccache(&["ccbf", "delete", path(&f), "alpha"])
        .status
        .success());
    let o = ccache(&["ccbf", "query", path(&f), "alpha", "beta"]);
    assert_eq!(stdout(&o), "alpha false\nbeta true\n");
}

#[test]
fn combine_of_mismatched_seeds_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, out) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("out"),
    );
    assert!(ccache(&["ccbf", "new", path(&a), "--hash-seed", "1"])
        .status
        .success());
    assert!(ccache(&["ccbf", "new", path(&b), "--hash-seed", "2"])
        .status
        .success());
    let o = ccache(&["ccbf", "combine", path(&a), path(&b), path(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("hash_seed"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn combine_then_query_sees_both_sides() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, out) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("out"),
    );
    for (f, key) in [(&a, "1"), (&b, "2")] {
        assert!(ccache(&["ccbf", "new", path(f)]).status.success());
        assert!(ccache(&["ccbf", "insert", "--u64", path(f), key])
            .status
            .success());
    }
    assert!(ccache(&["ccbf", "combine", path(&a), path(&b), path(&out)])
        .status
        .success());
    let o = ccache(&["ccbf", "query", "--u64", path(&out), "1", "2"]);
    assert_eq!(stdout(&o), "1 true\n2 true\n");
}

#[test]
fn inspect_reports_hundred_inserts() {
    let tmp = tempfile::tempdir().unwrap();
    let f = tmp.path().join("f.ccbf");
    assert!(ccache(&["ccbf", "new", path(&f)]).status.success());
    let keys: Vec<String> = (0..100).map(|i| format!("key-{i}")).collect();
    let mut args = vec!["ccbf", "insert", path(&f)];
    args.extend(keys.iter().map(String::as_str));
    assert!(ccache(&args).status.success());
    let o = ccache(&["ccbf", "inspect", path(&f)]);
    let text = stdout(&o);
    assert!(text.contains("item_count 100\n"), "{text}");
    assert!(text.contains("fill_ratio "));
    assert!(text.contains("columns_with_count_0 "));
}

#[test]
fn malformed_filter_file_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let f = tmp.path().join("junk");
    std::fs::write(&f, b"not a filter").unwrap();
    let o = ccache(&["ccbf", "inspect", path(&f)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("not a valid filter"));
}

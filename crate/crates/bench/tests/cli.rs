use std::process::{Command, Output, Stdio};

use lbsort_bench::CSV_COLUMNS;

fn lbsort(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lbsort"))
        .args(args)
        .env_remove("LBSORT_BACKEND")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn gen_writes_binary_and_text() {
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("keys.bin");
    let txt = dir.path().join("keys.txt");
    let common = ["--dist", "normal", "--n", "1000", "--seed", "3"];
    let a = lbsort(&[&["gen", "--out", bin.to_str().unwrap()], &common[..]].concat());
    assert!(a.status.success(), "{a:?}");
    let b = lbsort(
        &[
            &["gen", "--text", "--out", txt.to_str().unwrap()],
            &common[..],
        ]
        .concat(),
    );
    assert!(b.status.success(), "{b:?}");

    let raw = std::fs::read(&bin).unwrap();
    assert_eq!(raw.len(), 8000);
    let from_bin: Vec<i64> = raw
        .chunks_exact(8)
        .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let from_txt: Vec<i64> = std::fs::read_to_string(&txt)
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    assert_eq!(from_bin, from_txt);
}

#[test]
fn sort_emits_csv_and_passes_checks() {
    let out = lbsort(&[
        "sort",
        "--dist",
        "exponential",
        "--n",
        "20000",
        "--p",
        "4",
        "--reps",
        "2",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
    let rows: Vec<&str> = lines.collect();
    assert!(rows.iter().any(|r| r.contains(",total,")));
    assert!(rows.iter().any(|r| r.contains(",exchange,")));
    assert_eq!(rows.iter().filter(|r| r.contains(",balance,")).count(), 4);
}

#[test]
fn sort_json_and_tcp_backend() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    let out = lbsort(&[
        "sort",
        "--n",
        "5000",
        "--p",
        "3",
        "--backend",
        "tcp",
        "--format",
        "json",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!(json.is_array() || json.is_object());
}

#[test]
fn sort_of_nothing_succeeds() {
    let out = lbsort(&["sort", "--n", "0", "--p", "3"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn mem_reports_within_bound() {
    let out = lbsort(&["mem", "--n", "50000", "--p", "4"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).lines().count() >= 5);
}

#[test]
fn sweep_lists_each_multiplier() {
    let out = lbsort(&[
        "sweep",
        "--dist",
        "right_skewed",
        "--n",
        "20000",
        "--p",
        "4",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).contains("0.004"));
}

#[test]
fn bad_arguments_fail() {
    assert_eq!(lbsort(&["sort", "--p", "0"]).status.code(), Some(2));
    assert!(!lbsort(&["sort", "--dist", "uniform", "--rate", "2"])
        .status
        .success());
    assert!(!lbsort(&["sort", "--format", "xml"]).status.success());
}

#[test]
fn multi_process_tcp_cluster() {
    let listeners: Vec<_> = (0..3)
        .map(|_| std::net::TcpListener::bind("127.0.0.1:0").unwrap())
        .collect();
    let addrs: Vec<String> = listeners
        .iter()
        .map(|l| l.local_addr().unwrap().to_string())
        .collect();
    drop(listeners);
    let peers = addrs.join(",");
    let children: Vec<_> = addrs
        .iter()
        .enumerate()
        .map(|(id, addr)| {
            Command::new(env!("CARGO_BIN_EXE_lbsort"))
                .args(["sort", "--n", "30000", "--p", "3", "--dist", "normal"])
                .args(["--listen", addr, "--peers", &peers, "--id", &id.to_string()])
                .stdout(Stdio::piped())
                .stderr(Stdio::piped())
                .spawn()
                .unwrap()
        })
        .collect();
    let outputs: Vec<Output> = children
        .into_iter()
        .map(|c| c.wait_with_output().unwrap())
        .collect();
    for out in &outputs {
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let master = stdout(&outputs[0]);
    assert!(master.starts_with(&CSV_COLUMNS.join(",")));
    assert_eq!(
        master.lines().filter(|r| r.contains(",balance,")).count(),
        3
    );
}

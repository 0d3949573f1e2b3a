use std::path::Path;
use std::process::{Command, Output};

fn capest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capest"))
        .args(args)
        .env_remove("CAPEST_WORKERS")
        .output()
        .expect("capest runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn identical_runs_write_identical_csvs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = dir.path().to_str().unwrap();
        let o = capest(&[
            "run",
            "fim",
            "--mode",
            "capest_maxmin",
            "--iters",
            "5",
            "--seed",
            "9",
            "--out",
            out,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["flows.csv", "links.csv"] {
        let x = read(&a.path().join("fim/seed-9").join(f));
        let y = read(&b.path().join("fim/seed-9").join(f));
        assert_eq!(x, y, "{f} differs between identical runs");
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, workers) in [(&a, "1"), (&b, "4")] {
        let o = Command::new(env!("CARGO_BIN_EXE_capest"))
            .args([
                "run",
                "fim",
                "chain_cross",
                "--mode",
                "capest_maxmin",
                "--iters",
                "3",
            ])
            .args([
                "--seed",
                "1",
                "--seed",
                "2",
                "--out",
                dir.path().to_str().unwrap(),
            ])
            .env("CAPEST_WORKERS", workers)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for run in [
        "fim/seed-1",
        "fim/seed-2",
        "chain_cross/seed-1",
        "chain_cross/seed-2",
    ] {
        let rel = Path::new(run).join("links.csv");
        assert_eq!(
            read(&a.path().join(&rel)),
            read(&b.path().join(&rel)),
            "{run}"
        );
    }
}

#[test]
fn bad_worker_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_capest"))
        .args([
            "run",
            "fim",
            "--mode",
            "capest_maxmin",
            "--iters",
            "1",
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .env("CAPEST_WORKERS", "lots")
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(stderr(&o).contains("CAPEST_WORKERS"), "{}", stderr(&o));
}

#[test]
fn run_writes_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let o = capest(&[
        "run",
        "chain_cross",
        "--mode",
        "capest_maxmin",
        "--iters",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = dir.path().join("chain_cross/seed-1");
    let flows = String::from_utf8(read(&run.join("flows.csv"))).unwrap();
    let links = String::from_utf8(read(&run.join("links.csv"))).unwrap();
    assert_eq!(
        flows.lines().next(),
        Some("iteration,flow,offered_pps,rate_pps,oracle_pps,gap")
    );
    assert_eq!(
        links.lines().next(),
        Some("iteration,link,lambda_pps,successes,drops,s_bar_us,service_rate_pps,residual_pps,t_bar_us,r_allocate_pps,r_max_pps,delta_pps,slack_pps,truncated")
    );
    assert_eq!(flows.lines().count(), 1 + 2 * 5);
    let summary = String::from_utf8(read(&run.join("summary.json"))).unwrap();
    assert!(summary.contains("\"schema_version\": 1"), "{summary}");
}

#[test]
fn scenario_files_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("pair.toml");
    std::fs::write(
        &scenario,
        "nodes = [{ id = 1 }, { id = 2 }, { id = 3 }]\n\
         [relations]\nsenses = [[1, 2], [2, 3], [1, 3]]\n\
         [[flows]]\nid = \"a\"\npath = [1, 2, 3]\n\
         [run]\niterations = 3\nquota = 50\nseeds = [4]\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = capest(&[
        "run",
        scenario.to_str().unwrap(),
        "--mode",
        "capest_maxmin",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let flows = String::from_utf8(read(&out.join("pair/seed-4/flows.csv"))).unwrap();
    assert_eq!(flows.lines().count(), 1 + 3);
}

#[test]
fn malformed_scenarios_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("bad.toml");
    std::fs::write(
        &scenario,
        "nodes = [{ id = 1 }]\n[[flows]]\nid = \"a\"\npath = [1, 7]\n",
    )
    .unwrap();
    let o = capest(&[
        "run",
        scenario.to_str().unwrap(),
        "--mode",
        "capest_maxmin",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains('7'), "{}", stderr(&o));
}

#[test]
fn fixedpoint_rejects_a_single_node() {
    let o = capest(&[
        "fixedpoint",
        "--n",
        "1",
        "--sigma",
        "20",
        "--ts",
        "800",
        "--b0",
        "16",
        "--stages",
        "7",
        "--alpha",
        "0.5",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("n=1"), "{err}");
}

#[test]
fn fixedpoint_writes_trace_and_check_sets_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let base = [
        "fixedpoint",
        "--n",
        "5",
        "--sigma",
        "20",
        "--ts",
        "800",
        "--b0",
        "16",
        "--stages",
        "7",
    ];
    let o = capest(
        &[
            &base[..],
            &["--alpha", "0.8", "--alpha", "0.95", "--out", out],
        ]
        .concat(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let sweep = String::from_utf8(read(&dir.path().join("alpha_sweep.csv"))).unwrap();
    assert_eq!(sweep.lines().count(), 3);
    let trace = String::from_utf8(read(&dir.path().join("trace.csv"))).unwrap();
    assert!(trace.starts_with("alpha,k,lambda_pps,psi_pps\n"));
    assert!(dir.path().join("shape.json").exists());

    let checked = capest(&[&base[..], &["--check"]].concat());
    let failed = stdout(&checked).contains("check FAIL");
    assert_eq!(
        checked.status.code(),
        Some(if failed { 3 } else { 0 }),
        "{}",
        stdout(&checked)
    );
}

#[test]
fn check_mode_exit_code_follows_the_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = capest(&[
        "run",
        "fim",
        "--mode",
        "capest_maxmin",
        "--iters",
        "3",
        "--out",
        out,
        "--check",
    ]);
    let text = stdout(&o);
    assert!(
        text.contains("check PASS") || text.contains("check FAIL"),
        "{text}"
    );
    let failed = text.contains("check FAIL");
    assert_eq!(o.status.code(), Some(if failed { 3 } else { 0 }), "{text}");
    assert!(dir.path().join("oracle_cache.json").exists());
}

#[test]
fn oracle_subcommand_reports_rates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = capest(&[
        "oracle",
        "fim",
        "--tol",
        "8",
        "--horizon-ms",
        "3000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 3);
    let csv = String::from_utf8(read(&out.join("oracle.csv"))).unwrap();
    assert!(csv.starts_with("flow,rate_pps,round,bottleneck\n"));
    assert!(out.join("oracle_trace.csv").exists());
}

#[test]
fn unknown_mode_is_a_usage_error() {
    let o = capest(&["run", "fim", "--mode", "nonsense", "--out", "unused"]);
    assert_eq!(o.status.code(), Some(2));
}

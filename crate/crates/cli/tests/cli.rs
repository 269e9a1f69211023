use std::path::Path;
use std::process::{Command, Output};

use taskweave::tir::bench::running_example;
use taskweave::tracer::{save_trace, Trace};

fn taskweave(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taskweave"))
        .args(args)
        .output()
        .expect("spawn taskweave")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn pipeline_on_running_example_reports_two_way_region() {
    let dir = tempfile::tempdir().unwrap();
    let o = taskweave(&[
        "pipeline",
        "--bench",
        "running_example",
        "--platform",
        "3cpu1fft.plat.json",
        "--sched",
        "eft",
        "--engine",
        "sim",
        "--out",
        p(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("type-2 regions: 1 with widths [2]"), "{text}");
    for f in [
        "running_example.tir.json",
        "running_example.trace.jsonl",
        "running_example.profile.json",
        "running_example.flat.tir.json",
        "running_example.flat.trace.jsonl",
        "control_dag.json",
        "data_dag.dot",
        "running_example.ppar.json",
        "gantt.csv",
        "stats.json",
        "gantt.svg",
        "report.txt",
    ] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let stats = std::fs::read_to_string(dir.path().join("stats.json")).unwrap();
    assert!(stats.contains("\"mode\": \"virtual\""));
}

#[test]
fn stages_rerun_from_artifacts_reproduce_them() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = |d: &Path| {
        vec![
            "pipeline".to_string(),
            "--bench".into(),
            "pulse_doppler".into(),
            "--platform".into(),
            "8fft".into(),
            "--out".into(),
            p(d).to_string(),
        ]
    };
    for d in [a.path(), b.path()] {
        let o = Command::new(env!("CARGO_BIN_EXE_taskweave"))
            .args(args(d))
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in [
        "pulse_doppler_4.ppar.json",
        "gantt.csv",
        "stats.json",
        "report.txt",
        "gantt.svg",
        "data_dag.json",
    ] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f} differs between runs"
        );
    }

    // Re-run schedule alone from the saved flat program and trace.
    let again = b.path().join("again.ppar.json");
    let o = taskweave(&[
        "schedule",
        "--flat",
        p(&a.path().join("pulse_doppler_4.flat.tir.json")),
        "--trace",
        p(&a.path().join("pulse_doppler_4.flat.trace.jsonl")),
        "--out",
        p(&again),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("[8, 4, 4]"));
    assert_eq!(
        std::fs::read(&again).unwrap(),
        std::fs::read(a.path().join("pulse_doppler_4.ppar.json")).unwrap()
    );
}

#[test]
fn analyze_empty_trace_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("empty.trace.jsonl");
    save_trace(&Trace::new("0", Default::default()), &trace).unwrap();
    let o = taskweave(&["analyze", "--trace", p(&trace), "--out", p(dir.path())]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(stdout(&o).contains("control dag: 0 nodes, 0 edges"));
    let doc = std::fs::read_to_string(dir.path().join("data_dag.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&doc).unwrap();
    assert_eq!(v["nodes"].as_array().unwrap().len(), 0);
}

#[test]
fn exit_codes_separate_io_from_validation() {
    let dir = tempfile::tempdir().unwrap();
    let missing = taskweave(&["trace", "--program", p(&dir.path().join("nope.tir.json"))]);
    assert_eq!(missing.status.code(), Some(2));

    let garbled = dir.path().join("garbled.tir.json");
    std::fs::write(&garbled, "{ not json").unwrap();
    let o = taskweave(&["trace", "--program", p(&garbled)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("garbled.tir.json"));

    let mut bad = running_example(2);
    bad.buffers[0].size_bytes = 64;
    let bad_path = dir.path().join("bad.tir.json");
    bad.save(&bad_path).unwrap();
    let o = taskweave(&["trace", "--program", p(&bad_path)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("invalid program"));

    assert_eq!(
        taskweave(&["bench", "gen", "--bench", "nope"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(taskweave(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn compare_policies_on_radar_workload_puts_met_last() {
    let dir = tempfile::tempdir().unwrap();
    let o = taskweave(&[
        "pipeline",
        "--bench",
        "radar_correlator",
        "--platform",
        "3cpu1fft",
        "--out",
        p(dir.path()),
    ]);
    assert!(o.status.success());
    let report_dir = dir.path().join("cmp");
    let o = taskweave(&[
        "report",
        "--compare",
        "met,rr,eft",
        "--program",
        p(&dir.path().join("radar_correlator.ppar.json")),
        "--count",
        "100",
        "--platform",
        "3cpu1fft",
        "--engine",
        "run",
        "--model-time",
        "--out",
        p(&report_dir),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report_dir.join("report.json")).unwrap())
            .unwrap();
    let rows = report["makespans"].as_array().unwrap();
    let makespan = |policy: &str| {
        rows.iter().find(|r| r["policy"] == policy).unwrap()["makespan_ns"]
            .as_u64()
            .unwrap()
    };
    assert!(makespan("met") > makespan("rr"));
    assert!(makespan("met") > makespan("eft"));
    assert!(report_dir.join("gantt.svg").exists());
}

#[test]
fn wall_clock_run_checks_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = taskweave(&[
        "pipeline",
        "--bench",
        "wifi_tx",
        "--platform",
        "4fft",
        "--out",
        p(dir.path()),
    ]);
    assert!(o.status.success());
    let o = taskweave(&[
        "--seed",
        "3",
        "run",
        "--program",
        p(&dir.path().join("wifi_tx.ppar.json")),
        "--count",
        "3",
        "--platform",
        "4fft",
        "--sched",
        "rr",
        "--jitter-ns",
        "20000",
        "--out",
        p(&dir.path().join("run")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("outputs match serial reference"));
    let csv = std::fs::read_to_string(dir.path().join("run/gantt.csv")).unwrap();
    assert!(csv.starts_with("instance,node,kernel,pe,start_ns,end_ns\n"));
    assert_eq!(csv.lines().count(), 1 + 3 * 10);
}

#[test]
fn platform_gen_writes_a_loadable_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.plat.json");
    let o = taskweave(&["platform", "gen", "--preset", "8fft", "--out", p(&out)]);
    assert!(o.status.success());
    let plat = taskweave::platform::Platform::load(&out).unwrap();
    assert_eq!(plat.pes.len(), 9);
}

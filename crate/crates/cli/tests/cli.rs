use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tempovox"))
        .args(args)
        .env("RAYON_NUM_THREADS", "2")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap())
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn eval_of_a_grid_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    ok(&["synth", "--frames", "2", "--out-dir", s(&scene)]);
    let world = scene.join("world.vxg");
    let metrics = dir.path().join("metrics.csv");
    let printed = ok(&["eval", "--pred", s(&world), "--gt", s(&world), "--output", s(&metrics)]);
    assert_eq!(printed.as_bytes(), std::fs::read(&metrics).unwrap());
    let table = rows(&metrics);
    for metric in ["iou", "miou"] {
        let row = table.iter().find(|r| &r[0] == metric).unwrap();
        assert_eq!(row[1].parse::<f64>().unwrap(), 1.0);
        assert_eq!(&row[2], "false");
    }
}

#[test]
fn failures_print_one_error_line_and_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.vxg");
    let out = run(&["eval", "--pred", s(&missing), "--gt", s(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(
        err.starts_with("error kind=io msg=") && err.contains("missing.vxg"),
        "{err}"
    );

    let out = run(&["synth", "--interval", "0", "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error kind=config"));

    let out = run(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error kind=usage"));
}

#[test]
fn flags_override_config_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    ok(&["synth", "--frames", "16", "--out-dir", s(&scene)]);
    let poses = scene.join("poses.txt");
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# sampling\ninterval = 2\npast = 2\n").unwrap();

    let from_file = ok(&[
        "forecast",
        "--config",
        s(&cfg),
        "--poses",
        s(&poses),
        "--out-dir",
        s(&dir.path().join("a")),
    ]);
    let from_flag = ok(&[
        "forecast",
        "--config",
        s(&cfg),
        "--interval",
        "5",
        "--poses",
        s(&poses),
        "--out-dir",
        s(&dir.path().join("b")),
    ]);
    let index = |out: &str| {
        out.lines()
            .nth(1)
            .unwrap()
            .split(',')
            .next()
            .unwrap()
            .parse::<i64>()
            .unwrap()
    };
    assert_eq!(index(&from_file) % 2, 0);
    assert_eq!(index(&from_flag) % 5, 0);
    assert_ne!(index(&from_file), index(&from_flag));

    std::fs::write(&cfg, "interval = 2\nunknown_key = 1\n").unwrap();
    let out = run(&["synth", "--config", s(&cfg), "--out-dir", s(&dir.path().join("c"))]);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error kind=config") && err.contains("line 2"), "{err}");
}

#[test]
fn synthetic_sequence_feeds_forecast_warp_and_fuse() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    let common = ["--past", "2", "--seed", "9"];
    let with = |extra: &[&str]| -> Vec<String> { extra.iter().chain(common.iter()).map(|a| a.to_string()).collect() };
    let call = |extra: &[&str]| {
        let args = with(extra);
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>())
    };
    call(&["synth", "--frames", "16", "--out-dir", s(&scene)]);
    assert!(scene.join("intrinsics.txt").exists() && scene.join("000015.dpt").exists());

    let f = dir.path().join("forecast");
    call(&["forecast", "--poses", s(&scene.join("poses.txt")), "--out-dir", s(&f)]);
    assert_eq!(rows(&f.join("forecast.csv")).len(), 1);

    let w = dir.path().join("warp");
    call(&["warp", "--input", s(&scene), "--out-dir", s(&w)]);
    let cov = &rows(&w.join("warp_coverage.csv"))[0];
    let (pixels, hits, holes): (u64, u64, u64) = (
        cov[1].parse().unwrap(),
        cov[2].parse().unwrap(),
        cov[3].parse().unwrap(),
    );
    assert_eq!(pixels, hits + holes);
    assert!(hits > 0);
    assert!(w.join("pseudo_future.dpt").exists());

    let u = dir.path().join("fuse");
    call(&["fuse", "--input", s(&scene), "--out-dir", s(&u)]);
    let blocks: Vec<u64> = rows(&u.join("coverage.csv"))
        .iter()
        .map(|r| r[2].parse().unwrap())
        .collect();
    assert_eq!(blocks.len(), 3);
    assert!(blocks.windows(2).all(|p| p[0] <= p[1]), "{blocks:?}");
    assert!(u.join("fused.fvl").exists() && u.join("blocks.bvs").exists());
}

#[test]
fn demo_fusion_sees_more_with_history_and_future() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["demo", "--out-dir", s(dir.path())]);
    let table = rows(&dir.path().join("coverage.csv"));
    let get = |name: &str| table.iter().find(|r| &r[0] == name).unwrap()[2].parse::<u64>().unwrap();
    assert!(get("current+past+future") > get("current"));
    assert!(get("current+past") > get("current"));
}

#[test]
fn grad_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("grad_check.csv");
    ok(&["grad-check", "--volumes", "8", "--output", s(&report)]);
    let table = rows(&report);
    assert_eq!(table.len(), 3);
    assert!(table.iter().all(|r| &r[4] == "true"));
}

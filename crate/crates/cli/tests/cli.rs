use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use retailopt_core::geometry::{point_in_valid_space, segment_collides, Segment};
use retailopt_core::io::{read_json, read_session, write_session, EstimateFile};

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_retailopt"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small, drift-free stores keep these tests quick.
const QUICK_SCENARIO: &str = r#"{"shelf_cols": 3, "route_samples": 60, "pause_s": [2, 4],
    "drift": {"heading_drift_rate": 0, "scale_bias": 0, "white_noise_sigma": 0}}"#;
const QUICK_RUN: &str = r#"{"optimizer": {"iterations": 150}, "viterbi": {"n_samples": 300}}"#;

fn setup(count: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("scenario.json"), QUICK_SCENARIO).unwrap();
    fs::write(dir.path().join("run.json"), QUICK_RUN).unwrap();
    let out = run(
        &["generate", "--config", "scenario.json", "--out", "s", "--count", count, "--seed", "3"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    dir
}

#[test]
fn generate_writes_sessions_and_manifest() {
    let dir = setup("3");
    let mut names: Vec<String> = fs::read_dir(dir.path().join("s"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(
        names,
        ["manifest.json", "session_000003.json", "session_000004.json", "session_000005.json"]
    );
    for n in &names[1..] {
        let path = dir.path().join("s").join(n);
        let session = read_session(&path).unwrap();
        assert!(session.ground_truth.is_some());
        // write(parse(file)) reproduces the file
        let copy = dir.path().join("copy.json");
        write_session(&copy, &session).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&copy).unwrap());
    }
    let manifest = fs::read_to_string(dir.path().join("s/manifest.json")).unwrap();
    assert!(manifest.contains("\"first_seed\": 3"));
}

#[test]
fn infeasible_grid_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"shelf_cols": 20}"#).unwrap();
    let out = run(&["generate", "--config", "bad.json", "--out", "s"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("infeasible scenario"), "{}", stderr(&out));
    assert!(!dir.path().join("s/session_000000.json").exists());
}

#[test]
fn raw_on_drift_free_session_reproduces_ground_truth() {
    let dir = setup("1");
    let out = run(
        &["estimate", "--session", "s/session_000003.json", "--method", "raw", "--out", "raw.json"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let est: EstimateFile = read_json(&dir.path().join("raw.json")).unwrap();
    let session = read_session(&dir.path().join("s/session_000003.json")).unwrap();
    let gt = session.ground_truth.unwrap().plane_points();
    assert_eq!(est.trajectory.len(), gt.len());
    for (a, b) in est.points().iter().zip(&gt) {
        assert!(a.dist(b) < 1e-12);
    }
    assert!(est.loss_trace.is_none() && est.runtime_ms.is_none());
}

#[test]
fn retailopt_estimate_is_collision_free() {
    let dir = setup("1");
    let out = run(
        &[
            "estimate",
            "--session",
            "s/session_000003.json",
            "--config",
            "run.json",
            "--out",
            "est.json",
            "--timing",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let est: EstimateFile = read_json(&dir.path().join("est.json")).unwrap();
    let session = read_session(&dir.path().join("s/session_000003.json")).unwrap();
    let env = &session.environment;
    let pts = est.points();
    assert_eq!(pts.len(), session.len());
    assert!(pts.iter().all(|&p| point_in_valid_space(p, env)));
    assert!(pts.windows(2).all(|w| !segment_collides(&Segment::new(w[0], w[1]), env)));
    assert_eq!(est.loss_trace.as_ref().map(Vec::len), Some(150));
    assert!(est.runtime_ms.is_some());
}

#[test]
fn eval_reports_skipped_sessions_in_footer() {
    let dir = setup("2");
    let mut session = read_session(&dir.path().join("s/session_000004.json")).unwrap();
    session.ground_truth = None;
    write_session(&dir.path().join("s/session_000004.json"), &session).unwrap();
    let out = run(
        &["eval", "--sessions", "s", "--methods", "raw,tsp", "--config", "run.json", "--out", "r.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("session_000004 has no ground truth"));
    let csv = fs::read_to_string(dir.path().join("r.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "scenario_id,method,seed,carry_mode,T,ape_m");
    assert!(lines[1].starts_with("session_000003,raw,0,,"));
    let raw_ape: f64 = lines[1].rsplit(',').next().unwrap().parse().unwrap();
    assert!(raw_ape < 1e-12, "drift-free raw APE is zero: {}", lines[1]);
    assert!(lines[2].starts_with("session_000003,tsp,0,,"));
    assert!(lines[3].starts_with("mean,raw,"));
    assert!(lines[4].starts_with("mean,tsp,"));
    assert_eq!(lines[5], "# skipped session_000004: no ground truth");
    assert_eq!(lines.len(), 6);
}

fn count(doc: &roxmltree::Document, tag: &str, class_prefix: &str) -> usize {
    doc.descendants()
        .filter(|n| n.has_tag_name(tag))
        .filter(|n| n.attribute("class").unwrap_or("").starts_with(class_prefix))
        .count()
}

#[test]
fn plot_is_well_formed_with_matching_counts() {
    let dir = setup("1");
    let session = read_session(&dir.path().join("s/session_000003.json")).unwrap();
    for m in ["raw", "tsp"] {
        let out = run(
            &[
                "estimate",
                "--session",
                "s/session_000003.json",
                "--config",
                "run.json",
                "--method",
                m,
                "--out",
                &format!("{m}.json"),
            ],
            dir.path(),
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let cases: [(&[&str], usize); 2] = [
        (&["plot", "--session", "s/session_000003.json", "--out", "empty.svg"], 0),
        (
            &["plot", "--session", "s/session_000003.json", "--estimates", "raw.json,tsp.json", "--out", "two.svg"],
            2,
        ),
    ];
    for (args, n_est) in cases {
        let out = run(args, dir.path());
        assert!(out.status.success(), "{}", stderr(&out));
        let text = fs::read_to_string(dir.path().join(args[args.len() - 1])).unwrap();
        let doc = roxmltree::Document::parse(&text).expect("well-formed XML");
        assert!(doc.root_element().has_tag_name("svg"));
        assert_eq!(count(&doc, "path", ""), 1 + n_est);
        assert_eq!(count(&doc, "path", "truth"), 1);
        assert_eq!(count(&doc, "path", "estimate"), n_est);
        assert_eq!(count(&doc, "circle", ""), session.anchors_tu.len() + session.anchors_tk.len());
        assert_eq!(count(&doc, "rect", "obstacle"), session.environment.obstacles.len());
    }
}

#[test]
fn exit_codes() {
    let dir = setup("1");
    let d = dir.path();
    assert_eq!(run(&["--help"], d).status.code(), Some(0));
    assert_eq!(run(&["estimate", "--help"], d).status.code(), Some(0));
    assert_eq!(run(&[], d).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"], d).status.code(), Some(1));
    assert_eq!(
        run(&["estimate", "--session", "s/session_000003.json", "--method", "ronin", "--out", "x.json"], d)
            .status
            .code(),
        Some(1)
    );

    let missing = run(&["estimate", "--session", "nope.json", "--out", "x.json"], d);
    assert_eq!(missing.status.code(), Some(2));
    assert!(stderr(&missing).contains("nope.json"));

    fs::write(d.join("typo.json"), r#"{"optimizer": {"iteratons": 3}}"#).unwrap();
    let typo = run(
        &["estimate", "--session", "s/session_000003.json", "--config", "typo.json", "--out", "x.json"],
        d,
    );
    assert_eq!(typo.status.code(), Some(2));
    assert!(stderr(&typo).contains("iteratons"));

    fs::write(d.join("broken.json"), r#"{"environment": {"name": "x", "scale_m": 1}, "dt": 1, "relative": [[0, 0], [1, 0]], "anchors_tu": [[2, 0.5]]}"#).unwrap();
    let bad = run(&["estimate", "--session", "broken.json", "--out", "x.json"], d);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("anchors_tu[0]: anchor outside domain"), "{}", stderr(&bad));

    // the free strip is too thin for rejection sampling to fill the graph
    fs::write(
        d.join("sliver.json"),
        r#"{"environment": {"name": "w", "scale_m": 10, "obstacles": [{"min": [0, 0], "max": [1, 0.99999]}]},
            "dt": 1, "relative": [[0, 0], [0.1, 0], [0.2, 0]],
            "anchors_tk": [{"loc": [0.1, 0.999995], "t": 1}, {"loc": [0.9, 0.999995], "t": 3}]}"#,
    )
    .unwrap();
    let infeasible = run(&["estimate", "--session", "sliver.json", "--method", "tsp", "--out", "x.json"], d);
    assert_eq!(infeasible.status.code(), Some(3), "{}", stderr(&infeasible));
    assert!(!d.join("x.json").exists(), "no partial output on failure");
}

mod common;

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use common::{course_path, fixture_path, fixture_text, Client};
use forge_core::results::{ExamRecord, RecordFilter};
use forge_core::session::{Mode, ReplayReport, ReplayScript};
use serde_json::Value;

fn forge(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_forge"));
    cmd.args(args);
    for var in [
        "FORGE_CONFIG",
        "FORGE_RESULTS_DIR",
        "FORGE_SCRIPT",
        "FORGE_SCENE",
        "FORGE_BIND",
    ] {
        cmd.env_remove(var);
    }
    cmd.env("RUST_LOG", "warn");
    cmd
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let Output { status, stdout, stderr } = cmd.output().unwrap();
    (
        status.code().expect("exited by signal"),
        String::from_utf8(stdout).unwrap(),
        String::from_utf8(stderr).unwrap(),
    )
}

fn course() -> String {
    course_path().display().to_string()
}

fn write_json(dir: &Path, name: &str, v: &impl serde::Serialize) -> String {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    p.display().to_string()
}

fn script_path(name: &str) -> String {
    fixture_path(&format!("scripts/{name}")).display().to_string()
}

fn result_lines(dir: &Path) -> Vec<ExamRecord> {
    match std::fs::read_to_string(dir.join("verano_demo.jsonl")) {
        Ok(text) => text.lines().map(|l| serde_json::from_str(l).unwrap()).collect(),
        Err(_) => Vec::new(),
    }
}

#[test]
fn validate_exit_codes() {
    let (code, out, _) = run(&mut forge(&["validate", "--config", &course()]));
    assert_eq!(code, 0);
    assert!(out.contains("0 error(s)"), "{out}");

    let (code, out, err) = run(&mut forge(&["validate", "--quiet", "--config", &course()]));
    assert_eq!((code, out.as_str(), err.as_str()), (0, "", ""));

    let (code, out, _) = run(forge(&["validate", "--json"]).env("FORGE_CONFIG", course()));
    assert_eq!(code, 0);
    assert!(serde_json::from_str::<Vec<Value>>(&out).is_ok());

    let dir = tempfile::tempdir().unwrap();
    let mut raw: Value = serde_json::from_str(&fixture_text("verano_demo.course.json")).unwrap();
    raw["chapters"][0]["tasks"][0]["steps"][0]["actions"][0]["target_part"] = "ghost_part".into();
    let bad = write_json(dir.path(), "bad.json", &raw);
    let (code, out, _) = run(&mut forge(&["validate", "--config", &bad]));
    assert_eq!(code, 1);
    assert!(out.contains("DANGLING_PART"), "{out}");
    assert!(
        out.contains("/chapters/0/tasks/0/steps/0/actions/0/target_part"),
        "{out}"
    );
    let (code, out, _) = run(&mut forge(&["validate", "-q", "--config", &bad]));
    assert_eq!(code, 1);
    assert_eq!(out.lines().count(), 1);

    let (code, _, err) = run(&mut forge(&["validate", "--config", "/nonexistent/course.json"]));
    assert_eq!(code, 2);
    assert!(err.contains("cannot read"), "{err}");
    let (code, _, _) = run(&mut forge(&["validate"]));
    assert_eq!(code, 2);
}

#[test]
fn replay_perfect_exam_scores_100_and_persists() {
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().display().to_string();
    let args = [
        "replay",
        "--json",
        "--config",
        &course(),
        "--results-dir",
        &results,
        "--session-id",
        "cli-1",
        "--script",
    ];
    let mut cmd = forge(&args);
    cmd.arg(script_path("exam_valve_cover_off_perfect.json"));
    let (code, out, _) = run(&mut cmd);
    assert_eq!(code, 0);
    let report: ReplayReport = serde_json::from_str(&out).unwrap();
    assert_eq!(report.score.as_ref().unwrap().score_percent, 100.0);
    assert!(report.prompts.is_empty());

    let records = result_lines(dir.path());
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].session_id, "cli-1");
    assert_eq!(records[0].score_percent, 100.0);
    assert_eq!(records[0].started_at, 10_000);

    let (code, out, _) = run(forge(&[
        "replay",
        "--config",
        &course(),
        "--results-dir",
        &results,
        "--no-persist",
    ])
    .env("FORGE_SCRIPT", script_path("exam_valve_cover_off_perfect.json")));
    assert_eq!(code, 0);
    assert!(out.contains("score: 100.0% (0 error(s))"), "{out}");
    assert_eq!(result_lines(dir.path()).len(), 1);
}

#[test]
fn replay_refuses_corrupt_results_file() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("verano_demo.jsonl");
    std::fs::write(&file, "{garbage\n").unwrap();
    let results = dir.path().display().to_string();
    let script = script_path("exam_valve_cover_off_perfect.json");
    let args = [
        "replay",
        "--config",
        &course(),
        "--results-dir",
        &results,
        "--script",
        &script,
    ];
    let (code, _, err) = run(&mut forge(&args));
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("line 1"), "{err}");
    assert_eq!(std::fs::read_to_string(&file).unwrap(), "{garbage\n");
}

#[test]
fn documented_config_example_is_valid() {
    let doc =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/config-format.md")).unwrap();
    let example = doc
        .split("```json\n")
        .nth(1)
        .and_then(|rest| rest.split("```").next())
        .expect("json block in config-format.md");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("example.course.json");
    std::fs::write(&path, example).unwrap();
    let (code, out, err) = run(&mut forge(&["validate", "--config", &path.display().to_string()]));
    assert_eq!(code, 0, "{out}{err}");
    assert!(out.contains("0 error(s), 0 warning(s)"), "{out}");
}

#[test]
fn replay_teaching_lists_prompts_and_records_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, _) = run(&mut forge(&[
        "replay",
        "--config",
        &course(),
        "--results-dir",
        &dir.path().display().to_string(),
        "--script",
        &script_path("teaching_engine_cover_off_mistake.json"),
    ]));
    assert_eq!(code, 0);
    assert!(out.contains("prompts:"), "{out}");
    assert!(out.contains("Not quite."), "{out}");
    assert!(out.contains("status: Completed"), "{out}");
    assert!(!out.contains("score:"));
    assert!(result_lines(dir.path()).is_empty());
}

#[test]
fn replay_perturbed_angle_loses_one_step_weight() {
    let dir = tempfile::tempdir().unwrap();
    let mut s: ReplayScript = common::script("exam_valve_cover_off_perfect.json");
    let i = s.events.iter().position(|e| e.target_part == "vc_bolt_1").unwrap();
    let mut wrong = s.events[i].clone();
    let forge_core::session::Measured::Rotate { angle_deg, .. } = &mut wrong.measured else {
        panic!("first vc_bolt_1 event is not a rotation")
    };
    *angle_deg -= 60.0;
    s.events.insert(i, wrong);
    let path = write_json(dir.path(), "perturbed.json", &s);
    let (code, out, _) = run(&mut forge(&[
        "replay",
        "--json",
        "--no-persist",
        "--config",
        &course(),
        "--script",
        &path,
    ]));
    assert_eq!(code, 0);
    let report: ReplayReport = serde_json::from_str(&out).unwrap();
    let score = report.score.unwrap();
    // s2 (weight 1 of 9) holds vc_bolt_1.
    assert!((score.score_percent - (100.0 - 100.0 / 9.0)).abs() < 1e-9);
    assert_eq!(score.error_total, 1);
    let missed: Vec<&str> = score
        .per_step
        .iter()
        .filter(|p| !p.earned)
        .map(|p| p.step_id.as_str())
        .collect();
    assert_eq!(missed, ["s2"]);
}

#[test]
fn replay_mismatch_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let mut s: ReplayScript = common::script("practice_coil_pack_off.json");
    s.task_id = "t_missing".into();
    let unknown_task = write_json(dir.path(), "task.json", &s);
    let (code, _, err) = run(&mut forge(&[
        "replay",
        "--no-persist",
        "--config",
        &course(),
        "--script",
        &unknown_task,
    ]));
    assert_eq!(code, 1);
    assert!(err.contains("unknown task"), "{err}");

    let mut s: ReplayScript = common::script("practice_coil_pack_off.json");
    s.events[2].target_part = "ghost_part".into();
    let unknown_part = write_json(dir.path(), "part.json", &s);
    let (code, _, err) = run(&mut forge(&[
        "replay",
        "--no-persist",
        "--config",
        &course(),
        "--script",
        &unknown_part,
    ]));
    assert_eq!(code, 1);
    assert!(err.contains("unknown part `ghost_part`"), "{err}");

    let (code, _, _) = run(&mut forge(&[
        "replay",
        "--config",
        &course(),
        "--script",
        "/nonexistent.json",
    ]));
    assert_eq!(code, 2);
}

#[test]
fn framebudget_tables() {
    let scene = fixture_path("workshop_scene.json").display().to_string();
    let (code, out, _) = run(&mut forge(&["framebudget", "--scene", &scene]));
    assert_eq!(code, 0);
    let row = |label: &str| {
        out.lines()
            .find(|l| l.starts_with(label))
            .unwrap_or_else(|| panic!("no {label} row in\n{out}"))
            .split_whitespace()
            .map(str::to_string)
            .collect::<Vec<_>>()
    };
    assert!(out.contains("DrawCall/frame"));
    assert_eq!(row("all dynamic load").last().unwrap(), "212");
    assert_eq!(row("with static load").last().unwrap(), "115");
    assert!(out.contains("Max f_t(ms)") && out.contains("Avg f_r(fps)"));
    assert_eq!(row("V-Sync_on")[1..], ["16.667", "16.667", "60.00", "60.00"]);
    assert_eq!(row("V-Sync_off")[1..], ["3.940", "3.940", "253.81", "253.81"]);

    let (code, out, _) =
        run(forge(&["framebudget", "--csv", "--mode", "static-batching", "--vsync", "off"]).env("FORGE_SCENE", &scene));
    assert_eq!(code, 0);
    let lines: Vec<&str> = out.lines().filter(|l| !l.is_empty()).collect();
    assert_eq!(lines[0], "mode,draw_calls,objects,materials,static_fraction");
    assert!(lines[1].starts_with("with static load,115,399,"), "{}", lines[1]);
    assert!(lines[3].starts_with("V-Sync_off,3.940000,3.940000,"), "{}", lines[3]);
    assert_eq!(lines.len(), 4);
}

#[test]
fn framebudget_workload_file_and_refresh() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("work.txt");
    std::fs::write(&path, "5\n10\n\n25\n").unwrap();
    let (code, out, _) = run(&mut forge(&[
        "framebudget",
        "--csv",
        "--vsync",
        "on",
        "--refresh",
        "100",
        "--workload-file",
        &path.display().to_string(),
    ]));
    assert_eq!(code, 0, "{out}");
    // Presented times 10, 10, 30 at a 10 ms period.
    let fields: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(fields[..3], ["V-Sync_on", "30.000000", "16.666667"]);
    assert_eq!(fields[5], "3");
}

#[test]
fn framebudget_empty_and_invalid_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write_json(dir.path(), "empty.json", &Vec::<Value>::new());
    let (code, out, err) = run(&mut forge(&["framebudget", "--scene", &empty, "--vsync", "off"]));
    assert_eq!(code, 0);
    assert!(err.contains("no objects"), "{err}");
    assert!(
        out.lines()
            .any(|l| l.starts_with("all dynamic load") && l.ends_with(" 0")),
        "{out}"
    );
    assert!(
        out.lines()
            .any(|l| l.starts_with("with static load") && l.ends_with(" 0")),
        "{out}"
    );

    let zero = serde_json::json!([{"object_id": "a", "material_id": "m", "vertex_count": 0, "is_static": true}]);
    let zero = write_json(dir.path(), "zero.json", &zero);
    assert_eq!(run(&mut forge(&["framebudget", "--scene", &zero])).0, 1);
    let junk = dir.path().join("junk.json");
    std::fs::write(&junk, "{").unwrap();
    assert_eq!(
        run(&mut forge(&["framebudget", "--scene", &junk.display().to_string()])).0,
        1
    );
    assert_eq!(run(&mut forge(&["framebudget", "--workload=-1"])).0, 1);
}

struct Server {
    child: Child,
    url: String,
}

impl Server {
    fn start(results: &Path, config: &str) -> Server {
        let mut child = forge(&["serve", "--bind", "127.0.0.1:0", "--config", config])
            .env("FORGE_RESULTS_DIR", results)
            .stdout(Stdio::piped())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .unwrap();
        let url = line
            .trim()
            .strip_prefix("listening on ")
            .expect("no listening line")
            .to_string();
        Server { child, url }
    }

    fn kill(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }
}

async fn exam_over_wire(url: &str, user: &str) {
    let s = common::script("exam_valve_cover_off_perfect.json");
    let mut c = Client::connect(url).await;
    let (id, _) = common::create(&mut c, &s.task_id, Mode::Examination, user).await;
    for e in &s.events {
        c.call(forge_service::protocol::Command::SubmitAction {
            session_id: id.clone(),
            event: e.clone(),
        })
        .await;
    }
}

async fn records_over_wire(url: &str) -> Vec<ExamRecord> {
    let mut c = Client::connect(url).await;
    let a = c
        .call(forge_service::protocol::Command::Records {
            filter: RecordFilter::default(),
        })
        .await;
    serde_json::from_value(a.body()["records"].clone()).unwrap()
}

#[tokio::test]
async fn serve_kill_and_restart_keeps_records() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path(), &course());
    exam_over_wire(&server.url, "a").await;
    exam_over_wire(&server.url, "b").await;
    // An examination left open is lost with the process; finished ones are not.
    let mut c = Client::connect(&server.url).await;
    common::create(&mut c, "t_engine_cover_off", Mode::Examination, "open").await;
    server.kill();

    let server = Server::start(dir.path(), &course());
    let records = records_over_wire(&server.url).await;
    let users: Vec<&str> = records.iter().map(|r| r.user_id.as_str()).collect();
    assert_eq!(users, ["a", "b"]);
    assert!(records.iter().all(|r| r.score_percent == 100.0));
    exam_over_wire(&server.url, "c").await;
    assert_eq!(records_over_wire(&server.url).await.len(), 3);
    server.kill();
    assert_eq!(result_lines(dir.path()).len(), 3);
}

#[test]
fn serve_refuses_bad_config_or_address() {
    let dir = tempfile::tempdir().unwrap();
    let mut raw: Value = serde_json::from_str(&fixture_text("verano_demo.course.json")).unwrap();
    raw["parts"][0]["part_id"] = raw["parts"][1]["part_id"].clone();
    let bad = write_json(dir.path(), "bad.json", &raw);
    let (code, _, err) = run(&mut forge(&["serve", "--bind", "127.0.0.1:0", "--config", &bad]));
    assert_eq!(code, 1);
    assert!(err.contains("validation error"), "{err}");

    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let results: PathBuf = dir.path().join("r");
    let (code, _, err) =
        run(forge(&["serve", "--bind", &addr, "--config", &course()]).env("FORGE_RESULTS_DIR", &results));
    assert_eq!(code, 1);
    assert!(err.contains("cannot bind"), "{err}");
}

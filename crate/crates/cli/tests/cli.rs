use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{header, Method, Request, StatusCode};
use serde_json::{json, Value};
use tower::ServiceExt;

use llmconf_core::model::ModelSpec;
use llmconf_core::perfdb::load_db;
use llmconf_core::search::{frontier_csv, SearchReport};
use llmconf_service::{router, Catalog};

fn data(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

fn llmconf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_llmconf"))
        .args(args)
        .env_remove("LLMCONF_DB")
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn search_args<'a>(db: &'a str, model: &'a str, workload: &'a str) -> Vec<&'a str> {
    vec!["search", "--db", db, "--model", model, "--workload", workload]
}

struct Fixture {
    db: PathBuf,
    model: PathBuf,
    workload: PathBuf,
}

fn fixture() -> Fixture {
    Fixture {
        db: data("db/h100-trtllm-synth.jsonl"),
        model: data("models/qwen-small.json"),
        workload: data("workloads/chat.yaml"),
    }
}

#[test]
fn search_writes_report_and_csv() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let csv = dir.path().join("frontier.csv");
    let mut args = search_args(p(&f.db), p(&f.model), p(&f.workload));
    args.extend(["--out", p(&out), "--csv", p(&csv)]);
    let o = llmconf(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let stderr = String::from_utf8(o.stderr).unwrap();
    assert!(stderr.contains("median"), "{stderr}");
    let report = SearchReport::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(!report.frontier.is_empty());
    let t = report.timing.expect("timing present by default");
    assert!(t.per_candidate_median_ms > 0.0);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text, frontier_csv(&report.frontier));
}

#[test]
fn stdout_carries_only_the_report() {
    let f = fixture();
    let mut args = vec!["--log", "debug"];
    args.extend(search_args(p(&f.db), p(&f.model), p(&f.workload)));
    args.push("--omit-timing");
    let o = llmconf(&args);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v.get("frontier").is_some());
}

#[test]
fn db_from_environment() {
    let f = fixture();
    let o = Command::new(env!("CARGO_BIN_EXE_llmconf"))
        .args([
            "search",
            "--model",
            p(&f.model),
            "--workload",
            p(&f.workload),
            "--omit-timing",
        ])
        .env("LLMCONF_DB", &f.db)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn set_overrides_workload_and_space() {
    let f = fixture();
    let mut args = search_args(p(&f.db), p(&f.model), p(&f.workload));
    args.extend([
        "--omit-timing",
        "--set",
        "isl=1024",
        "--set",
        "space.tp_values=[1]",
        "--set",
        "modes=[static]",
    ]);
    let o = llmconf(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = SearchReport::from_json(std::str::from_utf8(&o.stdout).unwrap()).unwrap();
    assert_eq!(r.workload.isl, 1024);
    assert_eq!(r.space.tp_values, [1]);
    assert!(r
        .frontier
        .iter()
        .all(|p| p.label.starts_with("TP1") && p.estimate.mode.as_str() == "static"));
}

#[test]
fn usage_errors_exit_2() {
    let o = llmconf(&["search", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));

    let f = fixture();
    let mut args = search_args(p(&f.db), p(&f.model), p(&f.workload));
    args.extend(["--set", "isl"]);
    assert_eq!(llmconf(&args).status.code(), Some(2));

    let mut args = search_args(p(&f.db), p(&f.model), p(&f.workload));
    args.extend(["--jobs", "0"]);
    assert_eq!(llmconf(&args).status.code(), Some(2));

    let o = llmconf(&[
        "estimate",
        "--db",
        p(&f.db),
        "--model",
        p(&f.model),
        "--workload",
        p(&f.workload),
        "--mode",
        "aggregated",
        "--config",
        "tp=2",
        "--prefill",
        "tp=1",
        "--decode",
        "tp=1",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn domain_errors_exit_1_with_one_line() {
    let f = fixture();
    let o = llmconf(&search_args(p(&f.db), "/nonexistent/model.json", p(&f.workload)));
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let mut args = search_args(p(&f.db), p(&f.model), p(&f.workload));
    args.extend(["--set", "ttft_limit=0.5", "--out", p(&out)]);
    let o = llmconf(&args);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nearest miss"));
    let r = SearchReport::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(r.best.is_empty() && r.nearest_miss.is_some());
}

#[test]
fn estimate_single_token_output_has_zero_tpot() {
    let f = fixture();
    for (mode, layout) in [("static", "tp=2,batch=8"), ("aggregated", "tp=2,batch=8")] {
        let o = llmconf(&[
            "estimate",
            "--db",
            p(&f.db),
            "--model",
            p(&f.model),
            "--workload",
            p(&f.workload),
            "--set",
            "osl=1",
            "--mode",
            mode,
            "--config",
            layout,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let e: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(e["tpot"], json!(0.0));
        assert_eq!(e["speed"], Value::Null);
    }
}

#[test]
fn estimate_disaggregated_pair() {
    let f = fixture();
    let o = llmconf(&[
        "estimate",
        "--db",
        p(&f.db),
        "--model",
        p(&f.model),
        "--workload",
        p(&f.workload),
        "--mode",
        "disaggregated",
        "--prefill",
        "tp=1",
        "--decode",
        "tp=2,batch=32",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let e: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(e["mode"], "disaggregated");
    assert!(e["gpus"].as_u64().unwrap() <= 8);
}

#[test]
fn estimate_step_table_sums() {
    let f = fixture();
    let o = llmconf(&[
        "estimate",
        "step",
        "--db",
        p(&f.db),
        "--model",
        p(&f.model),
        "--config",
        "tp=2",
        "--phase",
        "decode",
        "--batch",
        "16",
        "--seq",
        "2048",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut sum = 0.0;
    let mut total = 0.0;
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split_whitespace().collect();
        let ms: f64 = cols[1].parse().unwrap();
        if cols[0] == "total" {
            total = ms;
        } else {
            sum += ms;
        }
    }
    assert!(
        total > 0.0 && (sum - total).abs() < 1e-3 * text.lines().count() as f64,
        "{text}"
    );
}

#[test]
fn dbgen_then_dbcheck() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("db.jsonl");
    let space = dir.path().join("space.yaml");
    std::fs::write(&space, "tp_values: [1, 2]\npp_values: [1]\ndp_values: [1]\n").unwrap();
    let model = data("models/qwen-small.json");
    let o = llmconf(&[
        "dbgen",
        "--hardware",
        p(&data("hardware/h200-sxm.json")),
        "--model",
        p(&model),
        "--space",
        p(&space),
        "--seed",
        "3",
        "--out",
        p(&db),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = llmconf(&["dbcheck", "--db", p(&db)]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("ok:"));

    // tp 4 and 8 grids were not generated
    let o = llmconf(&["dbcheck", "--db", p(&db), "--model", p(&model)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("missing grid"));

    let text = std::fs::read_to_string(&db).unwrap();
    let broken: String = text
        .lines()
        .enumerate()
        .map(|(i, l)| if i == 3 { l.replace("\"latency_us\":", "\"latency_us\":-") } else { l.to_string() } + "\n")
        .collect();
    std::fs::write(&db, broken).unwrap();
    let o = llmconf(&["dbcheck", "--db", p(&db)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        String::from_utf8_lossy(&o.stdout).contains("line 4"),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );
}

#[test]
fn moe_load_histogram() {
    let o = llmconf(&[
        "moe-load",
        "--model",
        p(&data("models/qwen3-30b-a3b.json")),
        "--workload",
        p(&data("workloads/moe-chat.yaml")),
        "--tokens",
        "1000",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<u64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(rows.len(), 128);
    assert_eq!(rows.iter().sum::<u64>(), 8000);

    let o = llmconf(&[
        "moe-load",
        "--model",
        p(&data("models/qwen-small.json")),
        "--tokens",
        "10",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

async fn api(method: Method, uri: &str, body: Value) -> (StatusCode, Vec<u8>) {
    let mut c = Catalog::default();
    c.add_db("h100", load_db(&data("db/h100-trtllm-synth.jsonl")).unwrap())
        .unwrap();
    c.add_model(ModelSpec::load(&data("models/qwen-small.json")).unwrap())
        .unwrap();
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = router(Arc::new(c)).oneshot(req).await.unwrap();
    let status = resp.status();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
}

#[tokio::test]
async fn cli_and_api_agree_byte_for_byte() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let report_path = dir.path().join("report.json");
    let mut args = search_args(p(&f.db), p(&f.model), p(&f.workload));
    args.extend(["--omit-timing", "--out", p(&report_path)]);
    assert!(llmconf(&args).status.success());
    let cli_report = std::fs::read(&report_path).unwrap();

    let workload: serde_yaml::Value = serde_yaml::from_str(&std::fs::read_to_string(&f.workload).unwrap()).unwrap();
    let body = json!({ "db": "h100", "model": "qwen-small", "workload": workload, "omit_timing": true });
    let (status, api_report) = api(Method::POST, "/api/v1/search", body).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(api_report, cli_report);

    let r: Value = serde_json::from_slice(&cli_report).unwrap();
    for (pick, idx, entry) in [
        ("best", "0", r["best"][0].clone()),
        ("frontier", "2", r["frontier"][2].clone()),
    ] {
        let launch = dir.path().join("launch.yaml");
        let o = llmconf(&[
            "generate",
            "--report",
            p(&report_path),
            "--pick",
            pick,
            "--index",
            idx,
            "--backend",
            "vllm",
            "--out",
            p(&launch),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let body = json!({ "entry": entry, "model": r["model"], "backend": "vllm" });
        let (status, api_yaml) = api(Method::POST, "/api/v1/generate", body).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(api_yaml, std::fs::read(&launch).unwrap());
    }
}

#[test]
fn export_series_csv() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let mut args = search_args(p(&f.db), p(&f.model), p(&f.workload));
    args.extend(["--omit-timing", "--out", p(&report)]);
    assert!(llmconf(&args).status.success());
    let r = SearchReport::from_json(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let o = llmconf(&["export", "--report", p(&report), "--series", "disaggregated"]);
    assert!(o.status.success());
    let series = &r.series[&llmconf_core::serving_modes::Mode::Disaggregated];
    assert_eq!(String::from_utf8(o.stdout).unwrap(), frontier_csv(series));
    let o = llmconf(&["export", "--report", p(&report), "--series", "static"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn generate_rejects_bad_index_and_backend() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let mut args = search_args(p(&f.db), p(&f.model), p(&f.workload));
    args.extend(["--omit-timing", "--out", p(&report)]);
    assert!(llmconf(&args).status.success());
    assert_eq!(
        llmconf(&["generate", "--report", p(&report), "--index", "999"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        llmconf(&["generate", "--report", p(&report), "--backend", "tgi"])
            .status
            .code(),
        Some(1)
    );
    let o = llmconf(&["generate", "--report", p(&report), "--backend", "sglang"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("# sglang launch plan"));
}

//! Launch files pinned byte for byte. Regenerate with `UPDATE_GOLDEN=1`.

use std::path::PathBuf;

use llmconf_core::generator::{emit_launch, BackendRegistry, LaunchPlan};

#[path = "common/launch_points.rs"]
mod launch_points;

use launch_points::{aggregated, disaggregated};

fn golden(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap();
    assert_eq!(actual, expected, "{name} drifted");
}

#[test]
fn aggregated_trtllm_launch_file() {
    let r = BackendRegistry::builtin();
    let text = emit_launch(&aggregated(), "qwen-small", r.get("trtllm", Some("1.0.0")).unwrap())
        .unwrap()
        .to_yaml();
    golden("aggregated-trtllm.yaml", &text);
}

#[test]
fn disaggregated_dynamo_launch_file() {
    let p = disaggregated();
    assert_eq!(p.label, "P: 4 × TP1 B1, D: 2 × TP2 B64");
    let r = BackendRegistry::builtin();
    let plan = emit_launch(&p, "qwen-small", r.get("dynamo", Some("0.5.0")).unwrap()).unwrap();
    assert_eq!(plan.gpus(), 8);
    let text = plan.to_yaml();
    golden("disaggregated-dynamo.yaml", &text);
    assert_eq!(LaunchPlan::from_yaml(&text).unwrap().to_yaml(), text);
}

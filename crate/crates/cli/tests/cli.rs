use std::path::Path;
use std::process::{Command, Output};

use fwa_cli::args::{BenchArgs, GlobalArgs, ScenarioArg};
use fwa_cli::commands::bench_plan;
use fwa_cli::heatmap::{self, Method, GRID};

fn fwa_kit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fwa-kit"))
        .args(args)
        .env_remove("FWA_KIT_THREADS")
        .output()
        .expect("spawn fwa-kit")
}

fn entries(dir: &Path) -> usize {
    std::fs::read_dir(dir).map(|d| d.count()).unwrap_or(0)
}

#[test]
fn bench_writes_both_files_and_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = fwa_kit(&["--out", out, "bench", "fawa-vs-pool", "--base", "160", "--iters", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("FAWA_op") && stdout.contains("total"));
    let mut reader = csv::Reader::from_path(dir.path().join("fawa-vs-pool.csv")).unwrap();
    assert_eq!(reader.records().count(), 6);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("fawa-vs-pool.json")).unwrap()).unwrap();
    assert_eq!(json[0]["scenario"], "fawa_vs_pool");
}

#[test]
fn unknown_scenario_exits_two_without_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = fwa_kit(&["--out", dir.path().to_str().unwrap(), "bench", "everything"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(entries(dir.path()), 0);
}

#[test]
fn bad_plan_exits_two_without_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = fwa_kit(&["--out", out.to_str().unwrap(), "bench", "fawa-vs-pool", "--base", "100"]);
    assert_eq!(o.status.code(), Some(2));
    let o = fwa_kit(&["--out", out.to_str().unwrap(), "bench", "complexity", "--iters", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn threaded_environment_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fwa-kit"))
        .args(["--out", dir.path().to_str().unwrap(), "bench", "fawa-vs-pool", "--base", "160"])
        .env("FWA_KIT_THREADS", "8")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(entries(dir.path()), 0);
}

#[test]
fn full_scale_flag_uses_batch_128() {
    let global = GlobalArgs { seed: 42, out: "out".into(), json: false };
    let args = BenchArgs {
        scenario: ScenarioArg::AttentionRepeat,
        base: 640,
        full_scale: true,
        iters: None,
        warmup: None,
        repeats: None,
    };
    assert_eq!(bench_plan(&args, &global).unwrap().shapes, vec![vec![128, 96, 32, 32]]);
    let desk = BenchArgs { full_scale: false, ..args };
    assert_eq!(bench_plan(&desk, &global).unwrap().shapes, vec![vec![8, 96, 32, 32]]);
}

#[test]
fn model_summary_is_json_with_deviation() {
    let o = fwa_kit(&["model", "--variant", "S", "summary"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["reference_total"], 1_056_669);
    assert!(v["deviation_pct"].as_f64().unwrap().abs() <= 15.0);
    assert_eq!(v["stages"].as_array().unwrap().len(), 10);
}

#[test]
fn model_infer_reports_output_shape() {
    let o = fwa_kit(&["--json", "model", "--variant", "X", "infer", "--size", "224"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["output"], serde_json::json!([1, 192, 7, 7]));
}

#[test]
fn model_size_must_divide_by_32() {
    let o = fwa_kit(&["model", "--variant", "S", "infer", "--size", "200"]);
    assert_eq!(o.status.code(), Some(2));
    let o = fwa_kit(&["model", "--variant", "Q", "summary"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn heatmap_demo_writes_eight_images_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let o = fwa_kit(&["--out", dir.path().to_str().unwrap(), "heatmap-demo"]);
    assert!(o.status.success());
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("heatmap.json")).unwrap()).unwrap();
    let images = sidecar["images"].as_array().unwrap();
    assert_eq!(images.len(), 8);
    for img in images {
        let text = std::fs::read_to_string(dir.path().join(img["file"].as_str().unwrap())).unwrap();
        assert!(text.starts_with("P2\n20 20\n255\n"));
        assert!(img["scale"]["hi"].as_f64().unwrap() > 0.0);
    }
    assert_eq!(sidecar["query"], serde_json::json!([10, 10]));
}

#[test]
fn heatmap_io_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = fwa_kit(&["--out", blocker.to_str().unwrap(), "heatmap-demo"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn heatmap_query_outside_grid_exits_two() {
    let o = fwa_kit(&["heatmap-demo", "--query", "20,0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn noiseless_drelu_is_constant_inside_the_heart() {
    let maps = heatmap::attention_heatmaps(&heatmap::heart_map(0.0, 1), (GRID / 2, GRID / 2)).unwrap();
    for m in maps.iter().filter(|m| m.method == Method::Drelu) {
        let inside: Vec<f32> = (0..GRID * GRID).filter(|&i| heatmap::in_heart(i / GRID, i % GRID)).map(|i| m.weights[i]).collect();
        assert!(inside[0] > 0.0);
        assert!(inside.iter().all(|&w| w == inside[0]), "channel {}", m.channel);
        let outside = (0..GRID * GRID).filter(|&i| !heatmap::in_heart(i / GRID, i % GRID));
        assert!(outside.map(|i| m.weights[i]).all(|w| w == 0.0));
    }
}

#[test]
fn heatmaps_depend_on_the_seed_only() {
    let q = (5, 7);
    let a = heatmap::attention_heatmaps(&heatmap::heart_map(0.05, 3), q).unwrap();
    let b = heatmap::attention_heatmaps(&heatmap::heart_map(0.05, 3), q).unwrap();
    let c = heatmap::attention_heatmaps(&heatmap::heart_map(0.05, 4), q).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

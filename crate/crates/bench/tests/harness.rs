use fwa_bench::record::to_json;
use fwa_bench::scenarios::{find, run_attention_repeat, run_complexity_sweep, run_fawa_vs_pool, total_median_ms};
use fwa_bench::{write_outputs, BenchPlan, Mechanism, Scenario, CSV_HEADER};
use fwa_core::counters;
use fwa_core::Tensor;

fn small_repeat_plan() -> BenchPlan {
    let mut plan = BenchPlan::attention_repeat(1);
    plan.shapes = vec![vec![1, 16, 8, 8]];
    plan.repeats = vec![1, 8];
    plan
}

#[test]
fn records_are_well_formed() {
    let plan = small_repeat_plan();
    let records = run_attention_repeat(&plan).unwrap();
    assert_eq!(records.len(), 8);
    for r in &records {
        assert!(r.wall_ms > 0.0);
        assert!(r.wall_ms_p10 <= r.wall_ms && r.wall_ms <= r.wall_ms_p90, "{r:?}");
        assert_eq!(r.iters, plan.iters);
        assert!(r.peak_bytes > 0);
    }
}

#[test]
fn cached_stack_aggregates_once_at_repeat_eight() {
    let map = Tensor::randn(&[1, 16, 8, 8], 1.0, 3);
    let stack = fwa_bench::AttentionStack::new(Mechanism::FwaCached, 16, 4, 1, 8, 0).unwrap();
    counters::reset();
    stack.forward(&map).unwrap();
    assert_eq!(counters::snapshot().fawa_calls, 1);
}

#[test]
fn outputs_share_columns_and_schema() {
    let plan = small_repeat_plan();
    let records = run_attention_repeat(&plan).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (csv_path, json_path) = write_outputs(dir.path(), Scenario::AttentionRepeat, &records).unwrap();
    assert_eq!(csv_path.file_name().unwrap(), "attention-repeat.csv");

    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>(), CSV_HEADER);
    assert_eq!(reader.records().count(), records.len());

    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json_path).unwrap()).unwrap();
    let rows = json.as_array().unwrap();
    assert_eq!(rows.len(), records.len());
    for row in rows {
        assert_eq!(row["schema_version"], 1);
        for col in CSV_HEADER {
            assert!(row.get(col).is_some(), "missing {col}");
        }
    }
    let mechanisms: Vec<&str> = rows.iter().map(|r| r["mechanism"].as_str().unwrap()).collect();
    assert_eq!(&mechanisms[..4], ["FWA", "FWA_cached", "MHSA", "PooledKey"]);
}

#[test]
fn non_timing_fields_repeat_across_runs() {
    let plan = small_repeat_plan();
    let a = run_attention_repeat(&plan).unwrap();
    let b = run_attention_repeat(&plan).unwrap();
    let strip = |rs: &[fwa_bench::BenchRecord]| rs.iter().map(|r| format!("{:?}", r.deterministic_fields())).collect::<Vec<_>>();
    assert_eq!(strip(&a), strip(&b));
    assert!(to_json(&a).is_ok());
}

#[test]
fn aggregation_scenario_covers_each_layer() {
    let plan = BenchPlan::fawa_vs_pool(160).unwrap();
    let records = run_fawa_vs_pool(&plan).unwrap();
    assert_eq!(records.len(), 6);
    assert!(total_median_ms(&records, Mechanism::FawaOp) > 0.0);
    assert!(find(&records, Mechanism::PoolOp, 1).is_some());
}

#[test]
fn complexity_rejects_non_square_sizes() {
    let mut plan = BenchPlan::complexity();
    plan.shapes = vec![vec![1, 64, 16], vec![1, 200, 16]];
    assert!(run_complexity_sweep(&plan).is_err());
}

#[test]
fn identical_plans_give_stable_medians() {
    let mut plan = BenchPlan::fawa_vs_pool(320).unwrap();
    plan.iters = 31;
    let totals: Vec<f64> = (0..2)
        .map(|_| {
            let r = run_fawa_vs_pool(&plan).unwrap();
            total_median_ms(&r, Mechanism::FawaOp) + total_median_ms(&r, Mechanism::PoolOp)
        })
        .collect();
    let spread = (totals[0] - totals[1]).abs() / totals[0].min(totals[1]);
    assert!(spread <= 0.25, "totals {totals:?}");
}
